//! Optimisation: losses, Adam, the stage runner and the interleaved cycle.

pub mod gradcheck;
pub mod interleave;
pub mod loss;

use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::curation::{DiscExample, DpoTriplet, ExampleKind, SftExample};
use crate::error::{Error, Result};
use crate::io::derive_seed;
use crate::policy::{snapshot_reference, DiscScorer, PolicyModel};

pub use gradcheck::{gradient_check, GradCheckReport, LossKind};
pub use interleave::{interleave_cycle, InterleaveConfig, InterleaveReport};
pub use loss::{disc_loss_and_grad, dpo_loss_and_grad, sft_loss_and_grad};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    SSft,
    TSft,
    SDpo,
    TDpo,
    DiscSft,
    Interleave,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::SSft => "s-sft",
            Stage::TSft => "t-sft",
            Stage::SDpo => "s-dpo",
            Stage::TDpo => "t-dpo",
            Stage::DiscSft => "disc-sft",
            Stage::Interleave => "interleave",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            Stage::SSft,
            Stage::TSft,
            Stage::SDpo,
            Stage::TDpo,
            Stage::DiscSft,
            Stage::Interleave,
        ]
        .into_iter()
        .find(|st| st.as_str() == s)
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Hyperparameters of one stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainParams {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub dpo_beta: f64,
    pub seed: u64,
    /// Epochs without an improvement of at least `min_delta` before stopping.
    pub patience: usize,
    pub min_delta: f64,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 20,
            batch_size: 16,
            dpo_beta: 0.1,
            seed: 0,
            patience: 10,
            min_delta: 1e-4,
        }
    }
}

impl TrainParams {
    /// Preset for supervised stages: larger steps, more epochs.
    pub fn sft() -> Self {
        Self {
            learning_rate: 5e-3,
            epochs: 30,
            ..Self::default()
        }
    }

    /// Preset for preference stages. Small, short updates; longer runs
    /// drift far from the reference and undo the supervised stages.
    pub fn dpo() -> Self {
        Self {
            learning_rate: 2e-4,
            epochs: 3,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!("learning_rate {} must be > 0", self.learning_rate)));
        }
        if !(self.dpo_beta > 0.0) {
            return Err(Error::Config(format!("dpo_beta {} must be > 0", self.dpo_beta)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub stage: Stage,
    #[serde(flatten)]
    pub params: TrainParams,
}

impl TrainConfig {
    pub fn new(stage: Stage) -> Self {
        Self::with_params(stage, TrainParams::default())
    }

    pub fn with_params(stage: Stage, params: TrainParams) -> Self {
        Self { stage, params }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()
    }
}

/// Adam with beta1 0.9, beta2 0.999, eps 1e-8 and no weight decay.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub const BETA1: f64 = 0.9;
    pub const BETA2: f64 = 0.999;
    pub const EPS: f64 = 1e-8;

    pub fn new(n: usize, lr: f64) -> Self {
        Self {
            lr,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * g;
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * g * g;
            params[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StageData {
    Sft(Vec<SftExample>),
    Dpo(Vec<DpoTriplet>),
    Disc(Vec<DiscExample>),
}

impl StageData {
    pub fn len(&self) -> usize {
        match self {
            StageData::Sft(v) => v.len(),
            StageData::Dpo(v) => v.len(),
            StageData::Disc(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn describe(&self) -> String {
        let kinds = |ks: &mut dyn Iterator<Item = ExampleKind>| match ks.next() {
            Some(ExampleKind::Stepwise) => "stepwise",
            Some(ExampleKind::Trajectory) => "trajectory",
            None => "empty",
        };
        match self {
            StageData::Sft(v) => format!("{} sft", kinds(&mut v.iter().map(|e| e.kind))),
            StageData::Dpo(v) => format!("{} dpo", kinds(&mut v.iter().map(|e| e.kind))),
            StageData::Disc(_) => "discriminator".into(),
        }
    }

    fn check_stage(&self, stage: Stage) -> Result<()> {
        let ok = match (stage, self) {
            (Stage::SSft, StageData::Sft(v)) => v.iter().all(|e| e.kind == ExampleKind::Stepwise),
            (Stage::TSft, StageData::Sft(v)) => v.iter().all(|e| e.kind == ExampleKind::Trajectory),
            (Stage::SDpo, StageData::Dpo(v)) => v.iter().all(|e| e.kind == ExampleKind::Stepwise),
            (Stage::TDpo, StageData::Dpo(v)) => v.iter().all(|e| e.kind == ExampleKind::Trajectory),
            (Stage::DiscSft, StageData::Disc(_)) => true,
            _ => false,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::StageMismatch {
                stage: stage.to_string(),
                kind: self.describe(),
            })
        }
    }
}

/// A model a stage can update.
#[derive(Debug, Clone, PartialEq)]
pub enum Trainable {
    Orchestrator(PolicyModel),
    Discriminator(DiscScorer),
}

impl Trainable {
    pub fn into_orchestrator(self) -> Result<PolicyModel> {
        match self {
            Trainable::Orchestrator(m) => Ok(m),
            Trainable::Discriminator(_) => Err(Error::Validation("expected an orchestrator".into())),
        }
    }

    pub fn into_discriminator(self) -> Result<DiscScorer> {
        match self {
            Trainable::Discriminator(d) => Ok(d),
            Trainable::Orchestrator(_) => Err(Error::Validation("expected a discriminator".into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub stage: Stage,
    pub version: String,
    pub examples: usize,
    pub epochs_run: usize,
    pub loss_curve: Vec<f64>,
    pub early_stopped: bool,
    pub checkpoint: Option<PathBuf>,
    pub wall_time_secs: f64,
}

/// Tags `version`/`provenance` after a stage.
fn tag(version: &mut String, provenance: &mut Vec<String>, stage: Stage) {
    provenance.push(stage.to_string());
    *version = format!("{stage}@{}", provenance.len());
}

/// Trains `model` on one curriculum stage.
///
/// DPO stages snapshot the incoming model as the reference before the first
/// update. A discriminator stage given an orchestrator wraps it as the
/// backbone of a fresh scorer. When `out_dir` is set the checkpoint is
/// written to `{out_dir}/{stage}.json`.
pub fn run_stage(config: &TrainConfig, data: &StageData, model: Trainable, out_dir: Option<&Path>) -> Result<(Trainable, TrainReport)> {
    config.validate()?;
    if config.stage == Stage::Interleave {
        return Err(Error::StageMismatch {
            stage: config.stage.to_string(),
            kind: "use interleave_cycle for this stage".into(),
        });
    }
    data.check_stage(config.stage)?;
    let started = Instant::now();
    let model = match (config.stage, model) {
        (Stage::DiscSft, Trainable::Orchestrator(m)) => Trainable::Discriminator(DiscScorer::new(m)?),
        (Stage::DiscSft, d @ Trainable::Discriminator(_)) => d,
        (_, Trainable::Discriminator(_)) => {
            return Err(Error::StageMismatch {
                stage: config.stage.to_string(),
                kind: "discriminator model".into(),
            })
        }
        (_, m) => m,
    };

    let ref_lps = match (&model, data) {
        (Trainable::Orchestrator(m), StageData::Dpo(xs)) => loss::reference_logprobs(&snapshot_reference(m), xs)?,
        _ => Vec::new(),
    };
    let mut model = model;
    let n = data.len();
    let mut adam = Adam::new(model.num_params(), config.params.learning_rate);
    let mut order: Vec<usize> = (0..n).collect();
    let mut curve = Vec::new();
    let mut best = f64::INFINITY;
    let mut stale = 0;
    let mut early_stopped = false;
    for epoch in 0..if n == 0 { 0 } else { config.params.epochs } {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
            config.params.seed,
            &[b"shuffle", config.stage.as_str().as_bytes(), &(epoch as u64).to_le_bytes()],
        ));
        order.sort_unstable();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (b, idx) in order.chunks(config.params.batch_size).enumerate() {
            let (loss, grad) = batch_loss(&model, data, &ref_lps, idx, config.params.dpo_beta)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss { epoch, batch: b, loss });
            }
            total += loss * idx.len() as f64;
            model.step(&mut adam, &grad)?;
        }
        let epoch_loss = total / n as f64;
        curve.push(epoch_loss);
        if epoch_loss < best - config.params.min_delta {
            best = epoch_loss;
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.params.patience {
                early_stopped = true;
                break;
            }
        }
    }

    let version = match &mut model {
        Trainable::Orchestrator(m) => {
            tag(&mut m.version, &mut m.provenance, config.stage);
            m.version.clone()
        }
        Trainable::Discriminator(d) => {
            tag(&mut d.backbone.version, &mut d.backbone.provenance, config.stage);
            d.backbone.version.clone()
        }
    };
    let checkpoint = match out_dir {
        Some(dir) => {
            let path = dir.join(format!("{}.json", config.stage));
            model.to_checkpoint().save(&path)?;
            Some(path)
        }
        None => None,
    };
    let report = TrainReport {
        stage: config.stage,
        version,
        examples: n,
        epochs_run: curve.len(),
        loss_curve: curve,
        early_stopped,
        checkpoint,
        wall_time_secs: started.elapsed().as_secs_f64(),
    };
    Ok((model, report))
}

fn batch_loss(model: &Trainable, data: &StageData, ref_lps: &[(f64, f64)], idx: &[usize], beta: f64) -> Result<(f64, Vec<f64>)> {
    match (model, data) {
        (Trainable::Orchestrator(m), StageData::Sft(xs)) => {
            let batch: Vec<&SftExample> = idx.iter().map(|&i| &xs[i]).collect();
            sft_loss_and_grad(m, &batch)
        }
        (Trainable::Orchestrator(m), StageData::Dpo(xs)) => {
            let batch: Vec<&DpoTriplet> = idx.iter().map(|&i| &xs[i]).collect();
            let refs: Vec<(f64, f64)> = idx.iter().map(|&i| ref_lps[i]).collect();
            loss::dpo_loss_and_grad_cached(m, &batch, &refs, beta)
        }
        (Trainable::Discriminator(d), StageData::Disc(xs)) => {
            let batch: Vec<&DiscExample> = idx.iter().map(|&i| &xs[i]).collect();
            disc_loss_and_grad(d, &batch)
        }
        _ => Err(Error::Validation("model does not match dataset".into())),
    }
}

impl Trainable {
    pub fn num_params(&self) -> usize {
        match self {
            Trainable::Orchestrator(m) => m.num_params(),
            Trainable::Discriminator(d) => d.num_params(),
        }
    }

    fn step(&mut self, adam: &mut Adam, grad: &[f64]) -> Result<()> {
        match self {
            Trainable::Orchestrator(m) => {
                adam.step(m.params_mut(), grad);
                Ok(())
            }
            Trainable::Discriminator(d) => {
                let mut p = d.flat_params();
                adam.step(&mut p, grad);
                d.set_flat_params(&p)
            }
        }
    }

    pub fn to_checkpoint(&self) -> crate::policy::Checkpoint {
        match self {
            Trainable::Orchestrator(m) => m.to_checkpoint(),
            Trainable::Discriminator(d) => d.to_checkpoint(),
        }
    }
}
