//! The structured run configuration (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::InferConfig;
use crate::curation::{DiscLabels, Thresholds};
use crate::env::{default_registry, load_registry, Environment, ToolSpec};
use crate::error::{Error, Result};
use crate::policy::ModelConfig;
use crate::rollout::HeuristicConfig;
use crate::scoring::ScoreParams;
use crate::training::{InterleaveConfig, Stage, TrainConfig, TrainParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub out_dir: PathBuf,
    /// Optional tool registry (TOML); the built-in registry otherwise.
    pub registry: Option<PathBuf>,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("runs/default"),
            registry: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub s1: usize,
    pub s2: usize,
    pub s3: usize,
    pub test_seen: usize,
    pub test_unseen: usize,
    pub target_min: u32,
    pub target_max: u32,
    /// Rephrased variants added per training instruction.
    pub augment_variants: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            s1: 100,
            s2: 50,
            s3: 50,
            test_seen: 25,
            test_unseen: 25,
            target_min: 4,
            target_max: 16,
            augment_variants: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RolloutSection {
    pub per_instr: usize,
    pub max_steps: usize,
    pub heuristic: HeuristicConfig,
}

impl Default for RolloutSection {
    fn default() -> Self {
        Self {
            per_instr: 5,
            max_steps: 40,
            heuristic: HeuristicConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CurationConfig {
    pub thresholds: Thresholds,
    pub tsft_draws: usize,
    pub sdpo_temperature: f64,
    pub tdpo_max_pairs: usize,
    pub disc_k: usize,
    pub disc_sets: usize,
    pub disc_labels: DiscLabels,
}

impl Default for CurationConfig {
    fn default() -> Self {
        Self {
            thresholds: Thresholds::default(),
            tsft_draws: 1,
            sdpo_temperature: 1.0,
            tdpo_max_pairs: 6,
            disc_k: 4,
            disc_sets: 4,
            disc_labels: DiscLabels::ReviewFree,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub s_sft: TrainParams,
    pub t_sft: TrainParams,
    pub s_dpo: TrainParams,
    pub t_dpo: TrainParams,
    pub disc: TrainParams,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            s_sft: TrainParams::sft(),
            t_sft: TrainParams::sft(),
            s_dpo: TrainParams::dpo(),
            t_dpo: TrainParams::dpo(),
            disc: TrainParams::sft(),
        }
    }
}

impl TrainSection {
    pub fn config(&self, stage: Stage) -> Result<TrainConfig> {
        let p = match stage {
            Stage::SSft => &self.s_sft,
            Stage::TSft => &self.t_sft,
            Stage::SDpo => &self.s_dpo,
            Stage::TDpo => &self.t_dpo,
            Stage::DiscSft => &self.disc,
            Stage::Interleave => return Err(Error::Config("interleave has its own section".into())),
        };
        Ok(TrainConfig::with_params(stage, p.clone()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub repeats: usize,
    pub infer: InferConfig,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            repeats: 2,
            infer: InferConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: PathsConfig,
    pub score: ScoreParams,
    pub data: DataConfig,
    pub rollout: RolloutSection,
    pub curation: CurationConfig,
    pub model: ModelConfig,
    pub train: TrainSection,
    pub interleave: InterleaveConfig,
    pub eval: EvalSection,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: RunConfig = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.score.validate()?;
        if let Some(r) = &self.paths.registry {
            if !r.is_file() {
                return Err(Error::Config(format!("registry {} does not exist", r.display())));
            }
        }
        for p in [
            &self.train.s_sft,
            &self.train.t_sft,
            &self.train.s_dpo,
            &self.train.t_dpo,
            &self.train.disc,
            &self.interleave.disc,
            &self.interleave.dpo,
        ] {
            p.validate()?;
        }
        let d = &self.data;
        if d.target_min == 0 || d.target_min > d.target_max || d.target_max > crate::env::instruction::MAX_TARGET {
            return Err(Error::Config(format!(
                "target range {}..={} invalid",
                d.target_min, d.target_max
            )));
        }
        if self.curation.disc_k < 2 || self.interleave.m < 2 {
            return Err(Error::Config("candidate set sizes must be >= 2".into()));
        }
        Ok(())
    }

    pub fn registry(&self) -> Result<Vec<ToolSpec>> {
        match &self.paths.registry {
            Some(p) => load_registry(p),
            None => Ok(default_registry()),
        }
    }

    pub fn environment(&self) -> Result<Environment> {
        Environment::new(self.registry()?, self.score, self.rollout.max_steps)
    }
}
