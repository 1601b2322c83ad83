//! Train an orchestrator through stepwise SFT, trajectory SFT and both DPO
//! stages, printing each stage's loss curve and a greedy one-shot plan.
//!
//! cargo run --release --example train_orchestrator

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use trajforge::curation::{Curator, Thresholds};
use trajforge::env::instruction::{generate_instructions, SEEN_ROOMS};
use trajforge::env::Environment;
use trajforge::policy::{sample_plan, Decoding, ModelConfig, PolicyModel, Vocabulary};
use trajforge::rollout::{collect_rollouts, HeuristicConfig};
use trajforge::training::{run_stage, Stage, StageData, TrainConfig, TrainParams, Trainable};

fn main() -> trajforge::Result<()> {
    let env = Environment::default();
    let vocab = Arc::new(Vocabulary::new(env.tools()));
    let instrs = generate_instructions("demo", SEEN_ROOMS, 60, (4, 16), 21)?;
    let rs = collect_rollouts(&env, &instrs, 5, &HeuristicConfig::default(), 21);
    let cur = Curator::new(&vocab, &instrs, env.params);
    let th = Thresholds::default();

    let (s_sft, _) = cur.build_stepwise_sft(&rs, th.tau1)?;
    let (t_sft, _) = cur.build_trajectory_sft(&rs, th.tau2, 1, 1)?;
    let (t_dpo, _) = cur.build_trajectory_dpo(&rs, th.tau4, 6, 1)?;

    let mut model = Trainable::Orchestrator(PolicyModel::random(vocab.clone(), ModelConfig::default(), 7));
    let run = |stage: Stage, data: StageData, params: TrainParams, m: Trainable| -> trajforge::Result<Trainable> {
        let (m, r) = run_stage(&TrainConfig::with_params(stage, params), &data, m, None)?;
        let curve: Vec<String> = r.loss_curve.iter().step_by(5).map(|l| format!("{l:.3}")).collect();
        println!("{:<6} {:>5} examples, {:>2} epochs, loss {}", stage, r.examples, r.epochs_run, curve.join(" -> "));
        Ok(m)
    };
    model = run(Stage::SSft, StageData::Sft(s_sft), TrainParams::sft(), model)?;
    model = run(Stage::TSft, StageData::Sft(t_sft), TrainParams::sft(), model)?;
    let policy = model.clone().into_orchestrator()?;
    let (s_dpo, _) = cur.build_stepwise_dpo(&env, &rs, &policy, th.tau1, th.tau3, 1.0, 3)?;
    model = run(Stage::SDpo, StageData::Dpo(s_dpo), TrainParams::dpo(), model)?;
    model = run(Stage::TDpo, StageData::Dpo(t_dpo), TrainParams::dpo(), model)?;
    let m = model.into_orchestrator()?;
    println!("version {} provenance {:?}", m.version, m.provenance);

    let test = generate_instructions("held-out", SEEN_ROOMS, 3, (4, 16), 99)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for i in &test {
        let plan = sample_plan(&m, i, Decoding::Greedy, 128, &mut rng)?;
        match plan.calls {
            Some(calls) => {
                let r = env.execute_trajectory(i, &calls)?;
                let s = r.final_step().expect("non-empty");
                let text: Vec<String> = calls.iter().map(|c| c.to_string()).collect();
                println!("target {:>2}: C {:.3} T {:>5.1} | {}", i.target_object_count, s.c, s.t_cum, text.join(" "));
            }
            None => println!("target {:>2}: generation did not decode", i.target_object_count),
        }
    }
    Ok(())
}
