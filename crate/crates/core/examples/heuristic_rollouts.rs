//! Collect epsilon-greedy heuristic rollouts (execute, review, decide) and
//! summarise the spread of final composition scores.
//!
//! cargo run --release --example heuristic_rollouts

use trajforge::env::instruction::{generate_instructions, SEEN_ROOMS};
use trajforge::env::Environment;
use trajforge::rollout::{collect_rollouts, HeuristicConfig};

fn main() -> trajforge::Result<()> {
    let env = Environment::default();
    let instrs = generate_instructions("demo", SEEN_ROOMS, 20, (4, 16), 11)?;
    for (label, eps) in [("greedy (eps=0)", 0.0), ("default (eps=0.25)", 0.25), ("noisy (eps=0.6)", 0.6)] {
        let cfg = HeuristicConfig { epsilon: eps, ..HeuristicConfig::default() };
        let rs = collect_rollouts(&env, &instrs, 5, &cfg, 3);
        let finals: Vec<f64> = rs.iter().filter_map(|r| r.final_step()).map(|s| s.c).collect();
        let mean = finals.iter().sum::<f64>() / finals.len() as f64;
        let (lo, hi) = finals.iter().fold((f64::MAX, f64::MIN), |(a, b), &c| (a.min(c), b.max(c)));
        let steps = rs.iter().map(|r| r.steps.len()).sum::<usize>() as f64 / rs.len() as f64;
        let reviews = rs.iter().map(|r| r.review_count()).sum::<usize>() as f64 / rs.len() as f64;
        println!("{label:<20} C mean {mean:.3} range [{lo:.2}, {hi:.2}]  steps {steps:.1}  reviews {reviews:.1}");
    }
    let r = &collect_rollouts(&env, &instrs[..1], 1, &HeuristicConfig::default(), 3)[0];
    let calls: Vec<String> = r.calls().map(|c| c.to_string()).collect();
    println!("\nexample rollout for {}: {}", r.instr_id, calls.join(" "));
    Ok(())
}
