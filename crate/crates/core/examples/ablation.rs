//! Full pipeline plus the five-row ablation, written to a run directory.
//!
//! cargo run --release --example ablation -- [config.toml] [out_dir]

use std::path::PathBuf;
use std::time::Instant;

use trajforge::eval::{run_ablation, run_pipeline, RunConfig};

fn main() -> trajforge::Result<()> {
    let mut args = std::env::args().skip(1);
    let cfg = match args.next() {
        Some(p) => RunConfig::load(&PathBuf::from(p))?,
        None => RunConfig::default(),
    };
    let out = args.next().map(PathBuf::from).unwrap_or_else(|| cfg.paths.out_dir.clone());
    let t = Instant::now();
    let art = run_pipeline(&cfg, Some(&out))?;
    for (name, s) in &art.data.stats {
        println!("{name:<6} {:>6} examples", s.examples);
    }
    let ab = run_ablation(&cfg, &art, Some(&out))?;
    println!("\n{}\n{}", ab.table, ab.summary);
    println!("artifacts in {} ({:.1}s)", out.display(), t.elapsed().as_secs_f64());
    Ok(())
}
