//! JSON checkpoints for orchestrators and discriminators.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::disc::DiscScorer;
use super::model::{ModelConfig, PolicyModel};
use super::vocab::Vocabulary;
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Orchestrator,
    Discriminator,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub kind: ModelKind,
    pub version: String,
    pub arch: ModelConfig,
    pub vocab_hash: String,
    pub vocab_size: usize,
    /// Stages this model was trained through, oldest first.
    pub provenance: Vec<String>,
    pub params: BTreeMap<String, Vec<f64>>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let mut body = serde_json::to_string_pretty(self)?;
        body.push('\n');
        std::fs::write(path, body).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_str(&text)?;
        if ck.format_version != CHECKPOINT_VERSION {
            return Err(Error::Validation(format!(
                "unsupported checkpoint format {}",
                ck.format_version
            )));
        }
        Ok(ck)
    }

    fn check_vocab(&self, vocab: &Vocabulary) -> Result<()> {
        let found = vocab.hash();
        if found != self.vocab_hash {
            return Err(Error::VocabMismatch {
                expected: self.vocab_hash.clone(),
                found,
            });
        }
        Ok(())
    }

    fn take_block(&self, name: &str, len: usize) -> Result<&[f64]> {
        let block = self
            .params
            .get(name)
            .ok_or_else(|| Error::Validation(format!("checkpoint lacks parameter block `{name}`")))?;
        if block.len() != len {
            return Err(Error::Validation(format!(
                "block `{name}` has {} values, expected {len}",
                block.len()
            )));
        }
        Ok(block)
    }
}

fn model_blocks(m: &PolicyModel) -> BTreeMap<String, Vec<f64>> {
    m.layout()
        .blocks(m.config())
        .into_iter()
        .map(|(name, r)| (name.to_string(), m.params()[r].to_vec()))
        .collect()
}

fn model_from_blocks(ck: &Checkpoint, vocab: Arc<Vocabulary>) -> Result<PolicyModel> {
    ck.check_vocab(&vocab)?;
    let mut m = PolicyModel::uniform(vocab, ck.arch.clone());
    let mut flat = vec![0.0; m.num_params()];
    for (name, r) in m.layout().blocks(m.config()) {
        flat[r.clone()].copy_from_slice(ck.take_block(name, r.len())?);
    }
    m.set_params(flat)?;
    m.version = ck.version.clone();
    m.provenance = ck.provenance.clone();
    Ok(m)
}

impl PolicyModel {
    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format_version: CHECKPOINT_VERSION,
            kind: ModelKind::Orchestrator,
            version: self.version.clone(),
            arch: self.config().clone(),
            vocab_hash: self.vocab().hash(),
            vocab_size: self.vocab().len(),
            provenance: self.provenance.clone(),
            params: model_blocks(self),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint, vocab: Arc<Vocabulary>) -> Result<Self> {
        if ck.kind != ModelKind::Orchestrator {
            return Err(Error::Validation("checkpoint is not an orchestrator".into()));
        }
        model_from_blocks(ck, vocab)
    }
}

impl DiscScorer {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = self.backbone.to_checkpoint();
        ck.kind = ModelKind::Discriminator;
        ck.params.insert("head".into(), self.head().to_vec());
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint, vocab: Arc<Vocabulary>) -> Result<Self> {
        if ck.kind != ModelKind::Discriminator {
            return Err(Error::Validation("checkpoint is not a discriminator".into()));
        }
        let backbone = model_from_blocks(ck, vocab)?;
        let mut d = DiscScorer::new(backbone)?;
        let mut flat = d.backbone.params().to_vec();
        flat.extend_from_slice(ck.take_block("head", d.head().len())?);
        d.set_flat_params(&flat)?;
        Ok(d)
    }
}
