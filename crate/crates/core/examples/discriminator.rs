//! Train a trajectory discriminator on k=4 candidate sets and measure its
//! held-out top-1 accuracy against the composition-score argmax.
//!
//! cargo run --release --example discriminator

use std::sync::Arc;

use trajforge::curation::{Curator, DiscLabels};
use trajforge::env::instruction::{generate_instructions, SEEN_ROOMS};
use trajforge::env::Environment;
use trajforge::policy::{DiscScorer, ModelConfig, PolicyModel, Vocabulary};
use trajforge::rollout::{collect_rollouts, HeuristicConfig};
use trajforge::training::{run_stage, Stage, StageData, TrainConfig, TrainParams, Trainable};

fn main() -> trajforge::Result<()> {
    let env = Environment::default();
    let vocab = Arc::new(Vocabulary::new(env.tools()));
    let h = HeuristicConfig::default();
    let train = generate_instructions("train", SEEN_ROOMS, 100, (4, 16), 1)?;
    let test = generate_instructions("test", SEEN_ROOMS, 50, (4, 16), 2)?;
    let (rs_train, rs_test) = (collect_rollouts(&env, &train, 5, &h, 1), collect_rollouts(&env, &test, 5, &h, 2));

    for labels in [DiscLabels::Recorded, DiscLabels::ReviewFree] {
        let (train_sets, _) = Curator::new(&vocab, &train, env.params).with_disc_labels(labels, &env).build_disc_data(&rs_train, 4, 4, 3)?;
        let (test_sets, _) = Curator::new(&vocab, &test, env.params).with_disc_labels(labels, &env).build_disc_data(&rs_test, 4, 4, 4)?;
        let d = DiscScorer::new(PolicyModel::random(vocab.clone(), ModelConfig::default(), 5))?;
        let cfg = TrainConfig::with_params(Stage::DiscSft, TrainParams::sft());
        let (d, report) = run_stage(&cfg, &StageData::Disc(train_sets), Trainable::Discriminator(d), None)?;
        let d = d.into_discriminator()?;
        let mut hits = 0;
        for ex in &test_sets {
            hits += usize::from(d.select(&ex.context_tokens, &ex.candidates)? == ex.label);
        }
        println!(
            "{labels:?} labels: loss {:.3} -> {:.3}, held-out top-1 {:.3} over {} sets (chance 0.25)",
            report.loss_curve.first().copied().unwrap_or(f64::NAN),
            report.loss_curve.last().copied().unwrap_or(f64::NAN),
            hits as f64 / test_sets.len() as f64,
            test_sets.len()
        );
    }
    Ok(())
}
