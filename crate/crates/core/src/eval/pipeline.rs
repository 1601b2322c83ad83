//! End-to-end pipeline: instructions, rollouts, curation, the training
//! chains behind every ablation variant, and evaluation.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::{evaluate, metric_table, summary_table, EvalReport, Method};
use crate::curation::{augment_instructions, versioned, Curator, CurationStats, DiscExample, DpoTriplet, SftExample};
use crate::env::instruction::{generate_instructions, SEEN_ROOMS, UNSEEN_ROOMS};
use crate::env::{Environment, Instruction};
use crate::error::Result;
use crate::io::{derive_seed, write_jsonl};
use crate::policy::{DiscScorer, PolicyModel, Vocabulary};
use crate::rollout::{collect_rollouts, Rollout};
use crate::training::{interleave_cycle, run_stage, InterleaveReport, Stage, StageData, TrainConfig, TrainReport, Trainable};

/// Training configurations of the ablation, in table order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    WoDpo,
    WoStepwise,
    WoDisc,
    IndepOnly,
    Full,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::WoDpo,
        Variant::WoStepwise,
        Variant::WoDisc,
        Variant::IndepOnly,
        Variant::Full,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Variant::WoDpo => "w/o DPO",
            Variant::WoStepwise => "w/o Stepwise",
            Variant::WoDisc => "w/o Discriminator",
            Variant::IndepOnly => "Indep. only",
            Variant::Full => "Full",
        }
    }

    pub fn slug(self) -> &'static str {
        match self {
            Variant::WoDpo => "wo-dpo",
            Variant::WoStepwise => "wo-stepwise",
            Variant::WoDisc => "wo-disc",
            Variant::IndepOnly => "indep-only",
            Variant::Full => "full",
        }
    }

    /// Stage flags: s-sft, t-sft, s-dpo, t-dpo, discriminator, interleave.
    pub fn stages(self) -> [bool; 6] {
        match self {
            Variant::WoDpo => [true, true, false, false, false, false],
            Variant::WoStepwise => [false, true, false, true, false, false],
            Variant::WoDisc => [true, true, true, true, false, false],
            Variant::IndepOnly => [true, true, true, true, true, false],
            Variant::Full => [true, true, true, true, true, true],
        }
    }
}

#[derive(Debug, Clone)]
pub struct Splits {
    /// Training instructions including rephrased variants.
    pub s1: Vec<Instruction>,
    pub s2: Vec<Instruction>,
    pub s3: Vec<Instruction>,
    pub test: Vec<Instruction>,
}

#[derive(Debug, Clone)]
pub struct Datasets {
    pub s_sft: Vec<SftExample>,
    pub t_sft: Vec<SftExample>,
    pub s_dpo: Vec<DpoTriplet>,
    pub t_dpo: Vec<DpoTriplet>,
    pub disc: Vec<DiscExample>,
    pub stats: Vec<(String, CurationStats)>,
}

#[derive(Debug, Clone)]
pub struct Models {
    pub wo_dpo: PolicyModel,
    pub wo_stepwise: PolicyModel,
    pub wo_disc: PolicyModel,
    pub disc: DiscScorer,
    pub full: PolicyModel,
    pub full_disc: DiscScorer,
}

impl Models {
    pub fn method(&self, v: Variant) -> Method<'_> {
        match v {
            Variant::WoDpo => Method::OneShot(&self.wo_dpo),
            Variant::WoStepwise => Method::OneShot(&self.wo_stepwise),
            Variant::WoDisc => Method::OneShot(&self.wo_disc),
            Variant::IndepOnly => Method::BestOfM(&self.wo_disc, &self.disc),
            Variant::Full => Method::OneShot(&self.full),
        }
    }
}

#[derive(Debug)]
pub struct Artifacts {
    pub env: Environment,
    pub vocab: Arc<Vocabulary>,
    pub splits: Splits,
    pub rollouts: Vec<Rollout>,
    pub data: Datasets,
    pub models: Models,
    pub train_reports: Vec<TrainReport>,
    pub interleave_reports: Vec<InterleaveReport>,
}

fn sub_seed(seed: u64, label: &str) -> u64 {
    derive_seed(seed, &[label.as_bytes()])
}

pub fn build_splits(cfg: &RunConfig) -> Result<Splits> {
    let d = &cfg.data;
    let range = (d.target_min, d.target_max);
    let gen = |prefix: &str, rooms: &[&str], n: usize| generate_instructions(prefix, rooms, n, range, sub_seed(cfg.seed, prefix));
    let s1 = augment_instructions(&gen("s1", SEEN_ROOMS, d.s1)?, d.augment_variants, sub_seed(cfg.seed, "augment"))?;
    let mut test = gen("test", SEEN_ROOMS, d.test_seen)?;
    test.extend(gen("unseen", UNSEEN_ROOMS, d.test_unseen)?);
    Ok(Splits {
        s1,
        s2: gen("s2", SEEN_ROOMS, d.s2)?,
        s3: gen("s3", SEEN_ROOMS, d.s3)?,
        test,
    })
}

/// Stage config with its seed tied to the run seed.
fn stage_config(cfg: &RunConfig, stage: Stage, chain: &str) -> Result<TrainConfig> {
    let mut c = cfg.train.config(stage)?;
    c.params.seed = derive_seed(cfg.seed, &[b"train", chain.as_bytes(), stage.as_str().as_bytes(), &c.params.seed.to_le_bytes()]);
    Ok(c)
}

struct Writer<'a> {
    root: Option<&'a Path>,
}

impl Writer<'_> {
    fn path(&self, rel: &str) -> Option<PathBuf> {
        self.root.map(|r| r.join(rel))
    }

    fn jsonl<T: Serialize>(&self, rel: &str, items: &[T]) -> Result<()> {
        match self.path(rel) {
            Some(p) => write_jsonl(&p, items),
            None => Ok(()),
        }
    }

    fn text(&self, rel: &str, body: &str) -> Result<()> {
        if let Some(p) = self.path(rel) {
            if let Some(parent) = p.parent() {
                std::fs::create_dir_all(parent).map_err(|e| crate::Error::io(parent, e))?;
            }
            std::fs::write(&p, body).map_err(|e| crate::Error::io(&p, e))?;
        }
        Ok(())
    }
}

/// Runs rollout collection, curation and both training chains. With
/// `out_dir` set, every dataset, checkpoint and report is written under it.
pub fn run_pipeline(cfg: &RunConfig, out_dir: Option<&Path>) -> Result<Artifacts> {
    cfg.validate()?;
    let w = Writer { root: out_dir };
    let env = cfg.environment()?;
    let vocab = Arc::new(Vocabulary::new(env.tools()));
    let splits = build_splits(cfg)?;
    w.jsonl("instructions/s1.jsonl", &splits.s1)?;
    w.jsonl("instructions/s2.jsonl", &splits.s2)?;
    w.jsonl("instructions/s3.jsonl", &splits.s3)?;
    w.jsonl("instructions/test.jsonl", &splits.test)?;

    let rollouts = collect_rollouts(
        &env,
        &splits.s1,
        cfg.rollout.per_instr,
        &cfg.rollout.heuristic,
        sub_seed(cfg.seed, "rollouts"),
    );
    w.jsonl("rollouts/s1.jsonl", &rollouts)?;

    let cur = Curator::new(&vocab, &splits.s1, cfg.score).with_disc_labels(cfg.curation.disc_labels, &env);
    let th = cfg.curation.thresholds;
    let c = &cfg.curation;
    let (s_sft, st1) = cur.build_stepwise_sft(&rollouts, th.tau1)?;
    let (t_sft, st2) = cur.build_trajectory_sft(&rollouts, th.tau2, c.tsft_draws, sub_seed(cfg.seed, "t-sft"))?;
    let (t_dpo, st4) = cur.build_trajectory_dpo(&rollouts, th.tau4, c.tdpo_max_pairs, sub_seed(cfg.seed, "t-dpo"))?;
    let (disc_data, st5) = cur.build_disc_data(&rollouts, c.disc_k, c.disc_sets, sub_seed(cfg.seed, "disc"))?;
    w.jsonl("data/s-sft.jsonl", &versioned(&s_sft))?;
    w.jsonl("data/t-sft.jsonl", &versioned(&t_sft))?;
    w.jsonl("data/t-dpo.jsonl", &versioned(&t_dpo))?;
    w.jsonl("data/disc.jsonl", &versioned(&disc_data))?;

    let mut reports = Vec::new();
    let init = PolicyModel::random(vocab.clone(), cfg.model.clone(), sub_seed(cfg.seed, "orchestrator-init"));
    let main_dir = w.path("checkpoints/main");
    let mut stage = |chain: &str, st: Stage, data: StageData, m: Trainable, dir: Option<&Path>| -> Result<Trainable> {
        let (m, r) = run_stage(&stage_config(cfg, st, chain)?, &data, m, dir)?;
        reports.push(r);
        Ok(m)
    };

    // Chain A: s-sft, t-sft, s-dpo, t-dpo.
    let m = stage("main", Stage::SSft, StageData::Sft(s_sft.clone()), Trainable::Orchestrator(init.clone()), main_dir.as_deref())?;
    let m = stage("main", Stage::TSft, StageData::Sft(t_sft.clone()), m, main_dir.as_deref())?;
    let wo_dpo = m.clone().into_orchestrator()?;
    let (s_dpo, st3) = cur.build_stepwise_dpo(
        &env,
        &rollouts,
        &wo_dpo,
        th.tau1,
        th.tau3,
        c.sdpo_temperature,
        sub_seed(cfg.seed, "s-dpo"),
    )?;
    w.jsonl("data/s-dpo.jsonl", &versioned(&s_dpo))?;
    let m = stage("main", Stage::SDpo, StageData::Dpo(s_dpo.clone()), m, main_dir.as_deref())?;
    let m = stage("main", Stage::TDpo, StageData::Dpo(t_dpo.clone()), m, main_dir.as_deref())?;
    let wo_disc = m.into_orchestrator()?;

    // Chain B: t-sft, t-dpo.
    let b_dir = w.path("checkpoints/no-stepwise");
    let m = stage("no-stepwise", Stage::TSft, StageData::Sft(t_sft.clone()), Trainable::Orchestrator(init), b_dir.as_deref())?;
    let m = stage("no-stepwise", Stage::TDpo, StageData::Dpo(t_dpo.clone()), m, b_dir.as_deref())?;
    let wo_stepwise = m.into_orchestrator()?;

    // Phase-one discriminator on a fresh backbone.
    let backbone = PolicyModel::random(vocab.clone(), cfg.model.clone(), sub_seed(cfg.seed, "discriminator-init"));
    let d = stage("main", Stage::DiscSft, StageData::Disc(disc_data.clone()), Trainable::Discriminator(DiscScorer::new(backbone)?), main_dir.as_deref())?;
    let disc = d.into_discriminator()?;

    let mut icfg = cfg.interleave.clone();
    icfg.seed = derive_seed(cfg.seed, &[b"interleave", &icfg.seed.to_le_bytes()]);
    let (full, full_disc, interleave_reports) = interleave_cycle(&env, wo_disc.clone(), disc.clone(), &splits.s2, &splits.s3, &icfg)?;
    if let Some(dir) = w.path("checkpoints/interleave") {
        full.to_checkpoint().save(&dir.join("orchestrator.json"))?;
        full_disc.to_checkpoint().save(&dir.join("discriminator.json"))?;
    }
    if let Some(root) = out_dir {
        // Checkpoint paths relative to the run directory keep the report
        // identical across output locations.
        let written: Vec<TrainReport> = reports
            .iter()
            .map(|r| {
                let mut r = r.clone();
                r.checkpoint = r.checkpoint.map(|c| c.strip_prefix(root).map(Path::to_path_buf).unwrap_or(c));
                r
            })
            .collect();
        let mut body = serde_json::to_string_pretty(&(&written, &interleave_reports))?;
        body.push('\n');
        w.text("reports/training.json", &body)?;
    }

    let stats = vec![
        ("s-sft".to_string(), st1),
        ("t-sft".to_string(), st2),
        ("s-dpo".to_string(), st3),
        ("t-dpo".to_string(), st4),
        ("disc".to_string(), st5),
    ];
    Ok(Artifacts {
        env,
        vocab,
        splits,
        rollouts,
        data: Datasets {
            s_sft,
            t_sft,
            s_dpo,
            t_dpo,
            disc: disc_data,
            stats,
        },
        models: Models {
            wo_dpo,
            wo_stepwise,
            wo_disc,
            disc,
            full,
            full_disc,
        },
        train_reports: reports,
        interleave_reports,
    })
}

#[derive(Debug, Clone)]
pub struct AblationResult {
    pub baseline: EvalReport,
    pub rows: Vec<(Variant, EvalReport)>,
    /// Seven metric columns, table row order.
    pub table: String,
    /// Composition and runtime against the baseline.
    pub summary: String,
}

impl AblationResult {
    pub fn report(&self, v: Variant) -> &EvalReport {
        &self.rows.iter().find(|(x, _)| *x == v).expect("all variants evaluated").1
    }
}

/// Evaluates the baseline and all five variants on the test split.
pub fn run_ablation(cfg: &RunConfig, art: &Artifacts, out_dir: Option<&Path>) -> Result<AblationResult> {
    let w = Writer { root: out_dir };
    let seed = sub_seed(cfg.seed, "eval");
    let ev = &cfg.eval;
    let baseline = evaluate(
        &art.env,
        "baseline",
        Method::Baseline(cfg.rollout.heuristic),
        &art.splits.test,
        ev.repeats,
        &ev.infer,
        seed,
    )?;
    w.jsonl("eval/baseline.jsonl", &baseline.rows)?;
    let mut rows = Vec::new();
    for v in Variant::ALL {
        let r = evaluate(&art.env, v.slug(), art.models.method(v), &art.splits.test, ev.repeats, &ev.infer, seed)?;
        w.jsonl(&format!("eval/{}.jsonl", v.slug()), &r.rows)?;
        rows.push((v, r));
    }
    let table = metric_table(&rows.iter().map(|(v, r)| (v.label().to_string(), r.mean.clone())).collect::<Vec<_>>());
    let mut labelled: Vec<(String, &EvalReport)> = vec![("Baseline".to_string(), &baseline)];
    labelled.extend(rows.iter().map(|(v, r)| (v.label().to_string(), r)));
    let summary = summary_table(&labelled, &baseline);
    w.text("eval/ablation.txt", &table)?;
    w.text("eval/summary.txt", &summary)?;
    Ok(AblationResult {
        baseline,
        rows,
        table,
        summary,
    })
}
