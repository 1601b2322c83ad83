//! Interleaved training: the discriminator adapts on executed samples from
//! the orchestrator, then the orchestrator learns from discriminator-ranked
//! pairs without touching the environment.
//!
//! cargo run --release --example interleaved_training

use trajforge::eval::{run_pipeline, RunConfig};

fn main() -> trajforge::Result<()> {
    let mut cfg = RunConfig::default();
    cfg.interleave.cycles = 2;
    let art = run_pipeline(&cfg, None)?;
    for r in &art.interleave_reports {
        println!(
            "cycle {}: stage A {} examples from {} instructions ({} env calls), stage B {} pairs ({} env calls)",
            r.cycle, r.stage_a.examples, r.stage_a.instructions, r.stage_a.env_calls, r.stage_b.examples, r.stage_b.env_calls
        );
        println!(
            "         disc loss {:.3}, dpo loss {:.3}",
            r.disc_training.loss_curve.last().copied().unwrap_or(f64::NAN),
            r.dpo_training.loss_curve.last().copied().unwrap_or(f64::NAN)
        );
    }
    println!("final orchestrator {} ({:?})", art.models.full.version, art.models.full.provenance);
    Ok(())
}
