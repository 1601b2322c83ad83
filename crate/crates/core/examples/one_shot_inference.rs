//! Train the full pipeline, then compare one-shot inference (with the
//! retry-then-greedy fallback) and discriminator best-of-m against the
//! review-heavy heuristic on a few held-out instructions.
//!
//! cargo run --release --example one_shot_inference

use trajforge::eval::{infer_and_execute, run_pipeline, RunConfig};
use trajforge::rollout::run_heuristic;

fn main() -> trajforge::Result<()> {
    let cfg = RunConfig::default();
    let art = run_pipeline(&cfg, None)?;
    let infer = &cfg.eval.infer;
    for instr in art.splits.test.iter().step_by(10) {
        println!("{} ({}, target {})", instr.id, instr.room_type, instr.target_object_count);
        let base = run_heuristic(&art.env, instr, &cfg.rollout.heuristic, 1);
        let one = infer_and_execute(&art.env, &art.models.full, None, instr, infer, 1)?;
        let best = infer_and_execute(&art.env, &art.models.wo_disc, Some(&art.models.disc), instr, infer, 1)?;
        for (name, r, attempts) in [("heuristic", &base, 1), ("one-shot", &one.rollout, one.attempts), ("best-of-m", &best.rollout, best.attempts)] {
            let s = r.final_step().expect("non-empty rollout");
            println!(
                "  {name:<10} C {:>6.3}  T {:>6.1}  steps {:>2}  reviews {:>2}  attempts {attempts}",
                s.c,
                s.t_cum,
                r.steps.len(),
                r.review_count()
            );
        }
    }
    Ok(())
}
