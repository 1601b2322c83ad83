//! Build every curated dataset from heuristic rollouts: stepwise and
//! trajectory SFT, stepwise and trajectory DPO, and discriminator sets.
//!
//! cargo run --release --example curate_datasets

use std::sync::Arc;

use trajforge::curation::{Curator, Thresholds};
use trajforge::env::instruction::{generate_instructions, SEEN_ROOMS};
use trajforge::env::Environment;
use trajforge::policy::{ModelConfig, PolicyModel, Vocabulary};
use trajforge::rollout::{collect_rollouts, HeuristicConfig};

fn main() -> trajforge::Result<()> {
    let env = Environment::default();
    let vocab = Arc::new(Vocabulary::new(env.tools()));
    let instrs = generate_instructions("demo", SEEN_ROOMS, 30, (4, 16), 5)?;
    let rs = collect_rollouts(&env, &instrs, 5, &HeuristicConfig::default(), 5);
    let cur = Curator::new(&vocab, &instrs, env.params);

    for (name, th) in [("default", Thresholds::default()), ("published", Thresholds::published())] {
        let (s_sft, a) = cur.build_stepwise_sft(&rs, th.tau1)?;
        let (t_sft, b) = cur.build_trajectory_sft(&rs, th.tau2, 1, 1)?;
        let (t_dpo, c) = cur.build_trajectory_dpo(&rs, th.tau4, 6, 1)?;
        println!(
            "{name:<9} thresholds: s-sft {:>5} of {:>5} sites | t-sft {:>4} of {:>4} | t-dpo {:>4} of {:>4} pairs",
            s_sft.len(),
            a.sites,
            t_sft.len(),
            b.sites,
            t_dpo.len(),
            c.sites
        );
    }

    // Stepwise DPO samples alternatives from a policy; an untrained one
    // mostly produces malformed calls, which become rejected examples.
    let policy = PolicyModel::random(vocab.clone(), ModelConfig::default(), 1);
    let th = Thresholds::default();
    let (s_dpo, st) = cur.build_stepwise_dpo(&env, &rs, &policy, th.tau1, th.tau3, 1.0, 2)?;
    let invalid = s_dpo.iter().filter(|t| t.score_gap.is_infinite()).count();
    println!("s-dpo: {} triplets from {} sites, {} with an invalid alternative", s_dpo.len(), st.sites, invalid);

    let (disc, _) = cur.build_disc_data(&rs, 4, 2, 3)?;
    let ex = &disc[0];
    println!("disc: {} sets; first set scores {:?} -> label {}", disc.len(), ex.candidate_scores.iter().map(|c| (c * 100.0).round() / 100.0).collect::<Vec<_>>(), ex.label);
    Ok(())
}
