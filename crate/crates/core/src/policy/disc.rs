//! Trajectory discriminator: a policy backbone plus a linear scoring head.
//!
//! Each candidate is encoded on its own (`context <bot> body <eos>`) and
//! scored from the backbone's final hidden state, so permuting the candidate
//! list permutes the scores the same way.

use super::model::{softmax, PolicyModel};
use super::sample::argmax;
use super::vocab::TokenId;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DiscScorer {
    pub backbone: PolicyModel,
    head: Vec<f64>,
}

impl DiscScorer {
    /// Wraps a backbone with a zero head (all candidates start tied).
    pub fn new(backbone: PolicyModel) -> Result<Self> {
        let h = backbone.hidden_dim();
        if h == 0 {
            return Err(Error::Validation(
                "discriminator backbone needs a hidden layer".into(),
            ));
        }
        Ok(Self {
            backbone,
            head: vec![0.0; h],
        })
    }

    pub fn head(&self) -> &[f64] {
        &self.head
    }

    pub fn num_params(&self) -> usize {
        self.backbone.num_params() + self.head.len()
    }

    /// Backbone parameters followed by the head.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut v = self.backbone.params().to_vec();
        v.extend_from_slice(&self.head);
        v
    }

    pub fn set_flat_params(&mut self, params: &[f64]) -> Result<()> {
        let n = self.backbone.num_params();
        if params.len() != n + self.head.len() {
            return Err(Error::Validation(format!(
                "expected {} parameters, got {}",
                n + self.head.len(),
                params.len()
            )));
        }
        self.backbone.set_params(params[..n].to_vec())?;
        self.head.copy_from_slice(&params[n..]);
        Ok(())
    }

    pub fn candidate_sequence(&self, context: &[TokenId], body: &[TokenId]) -> Vec<TokenId> {
        self.backbone.vocab().encode_candidate(context, body)
    }

    pub fn score_sequence(&self, seq: &[TokenId]) -> Result<f64> {
        let h = self.backbone.hidden_at_end(seq)?;
        Ok(h.iter().zip(&self.head).map(|(a, b)| a * b).sum())
    }

    pub fn scores(&self, context: &[TokenId], bodies: &[Vec<TokenId>]) -> Result<Vec<f64>> {
        bodies
            .iter()
            .map(|b| self.score_sequence(&self.candidate_sequence(context, b)))
            .collect()
    }

    /// Softmax over candidate scores.
    pub fn probabilities(&self, context: &[TokenId], bodies: &[Vec<TokenId>]) -> Result<Vec<f64>> {
        Ok(softmax(&self.scores(context, bodies)?, 1.0))
    }

    /// Index of the highest-scoring candidate, lowest index on ties.
    pub fn select(&self, context: &[TokenId], bodies: &[Vec<TokenId>]) -> Result<usize> {
        if bodies.is_empty() {
            return Err(Error::Validation("no candidates to select from".into()));
        }
        Ok(argmax(&self.probabilities(context, bodies)?))
    }

    /// Adds `coeff * d score(seq) / d params` into `grad` (flat layout).
    pub fn accumulate_score_grad(&self, seq: &[TokenId], coeff: f64, grad: &mut [f64]) -> Result<()> {
        let n = self.backbone.num_params();
        let h = self.backbone.hidden_at_end(seq)?;
        for (g, hv) in grad[n..].iter_mut().zip(&h) {
            *g += coeff * hv;
        }
        let dh: Vec<f64> = self.head.iter().map(|w| coeff * w).collect();
        self.backbone.accumulate_hidden_grad(seq, &dh, &mut grad[..n])
    }
}
