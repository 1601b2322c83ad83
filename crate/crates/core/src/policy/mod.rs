//! Token interface, trainable orchestrator model and discriminator.

pub mod checkpoint;
pub mod disc;
pub mod model;
pub mod sample;
pub mod vocab;

pub use checkpoint::{Checkpoint, ModelKind};
pub use disc::DiscScorer;
pub use model::{ArchKind, ModelConfig, PolicyModel};
pub use sample::{sample_next_call, sample_plan, sample_trajectory, Decoding, Plan, Sampled};
pub use vocab::{TokenId, Vocabulary};

/// A frozen copy of a policy. Exposes read-only inference only.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceModel(PolicyModel);

impl ReferenceModel {
    pub fn model(&self) -> &PolicyModel {
        &self.0
    }

    pub fn sequence_logprob(&self, context: &[TokenId], target: &[TokenId]) -> crate::Result<f64> {
        self.0.sequence_logprob(context, target)
    }

    pub fn snapshot(&self) -> ReferenceModel {
        self.clone()
    }
}

/// Deep copy of `model` that later updates to `model` cannot reach.
pub fn snapshot_reference(model: &PolicyModel) -> ReferenceModel {
    ReferenceModel(model.clone())
}
