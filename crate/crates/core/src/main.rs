//! Command-line front end. Every verb reads one TOML config (defaults when
//! omitted) and works inside a run directory.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;

use trajforge::curation::{unversioned, versioned, Curator, Versioned};
use trajforge::env::{Environment, Instruction};
use trajforge::eval::pipeline::build_splits;
use trajforge::eval::{evaluate, infer_and_execute, run_ablation, run_pipeline, summary_table, Method, RunConfig};
use trajforge::io::{read_jsonl, write_jsonl};
use trajforge::policy::{Checkpoint, DiscScorer, ModelKind, PolicyModel, Vocabulary};
use trajforge::rollout::{collect_rollouts, Rollout};
use trajforge::training::{gradient_check, interleave_cycle, run_stage, LossKind, Stage, StageData, TrainConfig, Trainable};
use trajforge::{Error, Result};

#[derive(Parser)]
#[command(name = "trajforge", version, about = "Train and evaluate one-shot tool-call orchestrators")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// TOML run config; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory; overrides `paths.out_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate instruction splits and heuristic rollouts.
    Rollout(Common),
    /// Build the curated datasets from collected rollouts.
    Curate {
        #[command(flatten)]
        common: Common,
        /// Policy used to sample stepwise DPO alternatives.
        #[arg(long)]
        policy: Option<PathBuf>,
    },
    /// Run one training stage.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        stage: String,
        #[arg(long)]
        data: PathBuf,
        /// Starting checkpoint; a fresh random model when omitted.
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// Run interleaved discriminator / orchestrator cycles.
    Interleave {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        orchestrator: PathBuf,
        #[arg(long)]
        disc: PathBuf,
    },
    /// Generate and execute one-shot trajectories, printing rollouts as JSONL.
    Infer {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        disc: Option<PathBuf>,
        /// Instruction text, whitespace-separated.
        #[arg(long, conflicts_with = "instructions")]
        text: Option<String>,
        /// JSONL file of instructions.
        #[arg(long)]
        instructions: Option<PathBuf>,
    },
    /// Evaluate a checkpoint against the heuristic baseline on the test split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        disc: Option<PathBuf>,
    },
    /// Full pipeline plus the five-row ablation.
    Ablate(Common),
    /// Compare analytic gradients with central differences.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        trials: usize,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

struct Ctx {
    cfg: RunConfig,
    out: PathBuf,
    env: Environment,
    vocab: Arc<Vocabulary>,
}

impl Ctx {
    fn new(c: &Common) -> Result<Self> {
        let mut cfg = match &c.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = c.seed {
            cfg.seed = s;
        }
        cfg.validate()?;
        let out = c.out.clone().unwrap_or_else(|| cfg.paths.out_dir.clone());
        let env = cfg.environment()?;
        let vocab = Arc::new(Vocabulary::new(env.tools()));
        Ok(Self { cfg, out, env, vocab })
    }

    fn orchestrator(&self, p: &Path) -> Result<PolicyModel> {
        PolicyModel::from_checkpoint(&Checkpoint::load(p)?, self.vocab.clone())
    }

    fn discriminator(&self, p: &Path) -> Result<DiscScorer> {
        DiscScorer::from_checkpoint(&Checkpoint::load(p)?, self.vocab.clone())
    }

    fn instructions(&self, split: &str) -> Result<Vec<Instruction>> {
        read_jsonl(&self.out.join(format!("instructions/{split}.jsonl")))
    }
}

fn load_versioned<T: DeserializeOwned>(p: &Path) -> Result<Vec<T>> {
    unversioned(read_jsonl::<Versioned<T>>(p)?)
}

fn cmd_rollout(c: &Common) -> Result<()> {
    let ctx = Ctx::new(c)?;
    let s = build_splits(&ctx.cfg)?;
    for (name, split) in [("s1", &s.s1), ("s2", &s.s2), ("s3", &s.s3), ("test", &s.test)] {
        write_jsonl(&ctx.out.join(format!("instructions/{name}.jsonl")), split)?;
    }
    let seed = trajforge::io::derive_seed(ctx.cfg.seed, &[b"rollouts"]);
    let rs = collect_rollouts(&ctx.env, &s.s1, ctx.cfg.rollout.per_instr, &ctx.cfg.rollout.heuristic, seed);
    write_jsonl(&ctx.out.join("rollouts/s1.jsonl"), &rs)?;
    println!("{} instructions, {} rollouts -> {}", s.s1.len(), rs.len(), ctx.out.display());
    Ok(())
}

fn cmd_curate(c: &Common, policy: Option<&Path>) -> Result<()> {
    let ctx = Ctx::new(c)?;
    let instrs = ctx.instructions("s1")?;
    let rs: Vec<Rollout> = read_jsonl(&ctx.out.join("rollouts/s1.jsonl"))?;
    let cc = &ctx.cfg.curation;
    let th = cc.thresholds;
    let seed = |l: &str| trajforge::io::derive_seed(ctx.cfg.seed, &[l.as_bytes()]);
    let cur = Curator::new(&ctx.vocab, &instrs, ctx.cfg.score).with_disc_labels(cc.disc_labels, &ctx.env);
    let data = ctx.out.join("data");
    let (a, st) = cur.build_stepwise_sft(&rs, th.tau1)?;
    write_jsonl(&data.join("s-sft.jsonl"), &versioned(&a))?;
    println!("s-sft: {st:?}");
    let (a, st) = cur.build_trajectory_sft(&rs, th.tau2, cc.tsft_draws, seed("t-sft"))?;
    write_jsonl(&data.join("t-sft.jsonl"), &versioned(&a))?;
    println!("t-sft: {st:?}");
    let (a, st) = cur.build_trajectory_dpo(&rs, th.tau4, cc.tdpo_max_pairs, seed("t-dpo"))?;
    write_jsonl(&data.join("t-dpo.jsonl"), &versioned(&a))?;
    println!("t-dpo: {st:?}");
    let (a, st) = cur.build_disc_data(&rs, cc.disc_k, cc.disc_sets, seed("disc"))?;
    write_jsonl(&data.join("disc.jsonl"), &versioned(&a))?;
    println!("disc: {st:?}");
    if let Some(p) = policy {
        let m = ctx.orchestrator(p)?;
        let (a, st) = cur.build_stepwise_dpo(&ctx.env, &rs, &m, th.tau1, th.tau3, cc.sdpo_temperature, seed("s-dpo"))?;
        write_jsonl(&data.join("s-dpo.jsonl"), &versioned(&a))?;
        println!("s-dpo: {st:?}");
    }
    Ok(())
}

fn cmd_train(c: &Common, stage: &str, data: &Path, init: Option<&Path>) -> Result<()> {
    let ctx = Ctx::new(c)?;
    let stage = Stage::parse(stage).ok_or_else(|| Error::Config(format!("unknown stage `{stage}`")))?;
    let examples = match stage {
        Stage::SSft | Stage::TSft => StageData::Sft(load_versioned(data)?),
        Stage::SDpo | Stage::TDpo => StageData::Dpo(load_versioned(data)?),
        Stage::DiscSft => StageData::Disc(load_versioned(data)?),
        Stage::Interleave => return Err(Error::Config("use the interleave verb".into())),
    };
    let model = match init {
        Some(p) => {
            let ck = Checkpoint::load(p)?;
            match ck.kind {
                ModelKind::Orchestrator => Trainable::Orchestrator(PolicyModel::from_checkpoint(&ck, ctx.vocab.clone())?),
                ModelKind::Discriminator => Trainable::Discriminator(DiscScorer::from_checkpoint(&ck, ctx.vocab.clone())?),
            }
        }
        None => Trainable::Orchestrator(PolicyModel::random(ctx.vocab.clone(), ctx.cfg.model.clone(), ctx.cfg.seed)),
    };
    let cfg: TrainConfig = ctx.cfg.train.config(stage)?;
    let (_, report) = run_stage(&cfg, &examples, model, Some(&ctx.out.join("checkpoints")))?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn cmd_interleave(c: &Common, orch: &Path, disc: &Path) -> Result<()> {
    let ctx = Ctx::new(c)?;
    let (s2, s3) = (ctx.instructions("s2")?, ctx.instructions("s3")?);
    let mut icfg = ctx.cfg.interleave.clone();
    icfg.seed = ctx.cfg.seed;
    let (m, d, reports) = interleave_cycle(&ctx.env, ctx.orchestrator(orch)?, ctx.discriminator(disc)?, &s2, &s3, &icfg)?;
    let dir = ctx.out.join("checkpoints/interleave");
    m.to_checkpoint().save(&dir.join("orchestrator.json"))?;
    d.to_checkpoint().save(&dir.join("discriminator.json"))?;
    println!("{}", serde_json::to_string_pretty(&reports)?);
    Ok(())
}

fn cmd_infer(c: &Common, model: &Path, disc: Option<&Path>, text: Option<&str>, file: Option<&Path>) -> Result<()> {
    let ctx = Ctx::new(c)?;
    let m = ctx.orchestrator(model)?;
    let d = disc.map(|p| ctx.discriminator(p)).transpose()?;
    let instrs = match (text, file) {
        (Some(t), _) => vec![Instruction::from_text("cli-0", t.split_whitespace().map(str::to_string).collect())?],
        (None, Some(p)) => read_jsonl(p)?,
        (None, None) => return Err(Error::Config("pass --text or --instructions".into())),
    };
    for i in &instrs {
        let o = infer_and_execute(&ctx.env, &m, d.as_ref(), i, &ctx.cfg.eval.infer, ctx.cfg.seed)?;
        println!("{}", serde_json::to_string(&o.rollout)?);
        if o.failed {
            eprintln!("{}: no valid trajectory after {} attempts", i.id, o.attempts);
        }
    }
    Ok(())
}

fn cmd_eval(c: &Common, model: &Path, disc: Option<&Path>) -> Result<()> {
    let ctx = Ctx::new(c)?;
    let m = ctx.orchestrator(model)?;
    let d = disc.map(|p| ctx.discriminator(p)).transpose()?;
    let test = ctx.instructions("test")?;
    let ev = &ctx.cfg.eval;
    let seed = trajforge::io::derive_seed(ctx.cfg.seed, &[b"eval"]);
    let base = evaluate(&ctx.env, "baseline", Method::Baseline(ctx.cfg.rollout.heuristic), &test, ev.repeats, &ev.infer, seed)?;
    let method = match &d {
        Some(d) => Method::BestOfM(&m, d),
        None => Method::OneShot(&m),
    };
    let r = evaluate(&ctx.env, "model", method, &test, ev.repeats, &ev.infer, seed)?;
    write_jsonl(&ctx.out.join("eval/model.jsonl"), &r.rows)?;
    print!("{}", summary_table(&[("Baseline".into(), &base), ("Model".into(), &r)], &base));
    Ok(())
}

fn cmd_ablate(c: &Common) -> Result<()> {
    let ctx = Ctx::new(c)?;
    let art = run_pipeline(&ctx.cfg, Some(&ctx.out))?;
    let ab = run_ablation(&ctx.cfg, &art, Some(&ctx.out))?;
    print!("{}\n{}", ab.table, ab.summary);
    Ok(())
}

fn cmd_gradcheck(trials: usize, tolerance: f64, seed: u64) -> Result<bool> {
    let mut ok = true;
    for kind in [LossKind::Sft, LossKind::Dpo, LossKind::Disc] {
        let r = gradient_check(kind, trials, tolerance, seed)?;
        println!(
            "{:<5} trials {:>3} params {:>6} max rel err {:.3e} (tol {:.0e}) {}",
            format!("{kind:?}").to_lowercase(),
            r.trials,
            r.params_checked,
            r.max_rel_error,
            r.tolerance,
            if r.passed { "ok" } else { "FAIL" }
        );
        ok &= r.passed;
    }
    Ok(ok)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match &cli.cmd {
        Cmd::Rollout(c) => cmd_rollout(c).map(|_| true),
        Cmd::Curate { common, policy } => cmd_curate(common, policy.as_deref()).map(|_| true),
        Cmd::Train { common, stage, data, init } => cmd_train(common, stage, data, init.as_deref()).map(|_| true),
        Cmd::Interleave { common, orchestrator, disc } => cmd_interleave(common, orchestrator, disc).map(|_| true),
        Cmd::Infer { common, model, disc, text, instructions } => {
            cmd_infer(common, model, disc.as_deref(), text.as_deref(), instructions.as_deref()).map(|_| true)
        }
        Cmd::Eval { common, model, disc } => cmd_eval(common, model, disc.as_deref()).map(|_| true),
        Cmd::Ablate(c) => cmd_ablate(c).map(|_| true),
        Cmd::Gradcheck { trials, tolerance, seed } => cmd_gradcheck(*trials, *tolerance, *seed),
    };
    match res {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
