//! Finite-difference verification of the analytic gradients.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{disc_loss_and_grad, dpo_loss_and_grad_cached, sft_loss_and_grad};
use crate::curation::{DiscExample, DpoTriplet, ExampleKind, SftExample};
use crate::error::Result;
use crate::policy::{DiscScorer, ModelConfig, PolicyModel, TokenId, Vocabulary};

pub const STEP: f64 = 1e-5;
/// Denominator floor for the relative error, so that near-zero components
/// are compared in absolute terms.
pub const REL_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Sft,
    Dpo,
    Disc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub kind: LossKind,
    pub trials: usize,
    pub params_checked: usize,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

fn small_config(trial: usize, kind: LossKind) -> ModelConfig {
    if kind != LossKind::Disc && trial % 4 == 3 {
        return ModelConfig {
            max_context: 64,
            ..ModelConfig::bigram()
        };
    }
    ModelConfig {
        window: 2,
        embed_dim: 3,
        bag_dim: 2,
        hidden: 4,
        bag_scale: 0.5,
        max_context: 64,
        ..ModelConfig::default()
    }
}

fn random_model<R: Rng>(vocab: &Arc<Vocabulary>, cfg: ModelConfig, rng: &mut R) -> PolicyModel {
    let mut m = PolicyModel::uniform(vocab.clone(), cfg);
    for p in m.params_mut() {
        *p = rng.gen_range(-1.0..1.0);
    }
    m
}

fn tokens<R: Rng>(v: usize, lo: usize, hi: usize, rng: &mut R) -> Vec<TokenId> {
    let n = rng.gen_range(lo..=hi);
    (0..n).map(|_| rng.gen_range(0..v) as TokenId).collect()
}

/// Central-difference gradient of `f` at `x`.
fn numeric_grad(x: &[f64], f: &mut dyn FnMut(&[f64]) -> Result<f64>) -> Result<Vec<f64>> {
    let mut p = x.to_vec();
    let mut g = vec![0.0; x.len()];
    for i in 0..x.len() {
        p[i] = x[i] + STEP;
        let up = f(&p)?;
        p[i] = x[i] - STEP;
        let down = f(&p)?;
        p[i] = x[i];
        g[i] = (up - down) / (2.0 * STEP);
    }
    Ok(g)
}

/// Compares analytic and numeric gradients over `trials` random small models
/// and batches drawn from `seed`.
pub fn gradient_check(kind: LossKind, trials: usize, tolerance: f64, seed: u64) -> Result<GradCheckReport> {
    let vocab = Arc::new(Vocabulary::synthetic(5));
    let v = vocab.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_err: f64 = 0.0;
    let mut checked = 0;
    for trial in 0..trials {
        let cfg = small_config(trial, kind);
        let (analytic, numeric) = match kind {
            LossKind::Sft => {
                let model = random_model(&vocab, cfg, &mut rng);
                let batch: Vec<SftExample> = (0..3)
                    .map(|_| SftExample {
                        instr_id: String::new(),
                        context_tokens: tokens(v, 1, 6, &mut rng),
                        target_tokens: tokens(v, 1, 4, &mut rng),
                        kind: ExampleKind::Stepwise,
                    })
                    .collect();
                let (_, g) = sft_loss_and_grad(&model, &batch)?;
                let mut work = model.clone();
                let n = numeric_grad(model.params(), &mut |p| {
                    work.params_mut().copy_from_slice(p);
                    Ok(sft_loss_and_grad(&work, &batch)?.0)
                })?;
                (g, n)
            }
            LossKind::Dpo => {
                let model = random_model(&vocab, cfg.clone(), &mut rng);
                let reference = random_model(&vocab, cfg, &mut rng);
                let batch: Vec<DpoTriplet> = (0..3)
                    .map(|_| DpoTriplet {
                        instr_id: String::new(),
                        context_tokens: tokens(v, 1, 6, &mut rng),
                        chosen_tokens: tokens(v, 1, 4, &mut rng),
                        rejected_tokens: tokens(v, 1, 4, &mut rng),
                        kind: ExampleKind::Trajectory,
                        score_gap: 1.0,
                    })
                    .collect();
                let refs: Vec<(f64, f64)> = batch
                    .iter()
                    .map(|t| {
                        Ok((
                            reference.sequence_logprob(&t.context_tokens, &t.chosen_tokens)?,
                            reference.sequence_logprob(&t.context_tokens, &t.rejected_tokens)?,
                        ))
                    })
                    .collect::<Result<_>>()?;
                // A large beta keeps the sigmoid away from saturation.
                let beta = rng.gen_range(0.5..2.0);
                let (_, g) = dpo_loss_and_grad_cached(&model, &batch, &refs, beta)?;
                let mut work = model.clone();
                let n = numeric_grad(model.params(), &mut |p| {
                    work.params_mut().copy_from_slice(p);
                    Ok(dpo_loss_and_grad_cached(&work, &batch, &refs, beta)?.0)
                })?;
                (g, n)
            }
            LossKind::Disc => {
                let mut scorer = DiscScorer::new(random_model(&vocab, cfg, &mut rng))?;
                let mut flat = scorer.flat_params();
                let nb = scorer.backbone.num_params();
                for x in &mut flat[nb..] {
                    *x = rng.gen_range(-1.0..1.0);
                }
                scorer.set_flat_params(&flat)?;
                let batch: Vec<DiscExample> = (0..3)
                    .map(|_| {
                        let k = rng.gen_range(2..=4);
                        DiscExample {
                            instr_id: String::new(),
                            context_tokens: tokens(v, 1, 6, &mut rng),
                            candidates: (0..k).map(|_| tokens(v, 0, 4, &mut rng)).collect(),
                            candidate_scores: vec![0.0; k],
                            candidate_times: vec![0.0; k],
                            label: rng.gen_range(0..k),
                        }
                    })
                    .collect();
                let (_, g) = disc_loss_and_grad(&scorer, &batch)?;
                let mut work = scorer.clone();
                let n = numeric_grad(&flat, &mut |p| {
                    work.set_flat_params(p)?;
                    Ok(disc_loss_and_grad(&work, &batch)?.0)
                })?;
                (g, n)
            }
        };
        for (a, n) in analytic.iter().zip(&numeric) {
            max_err = max_err.max(relative_error(*a, *n));
        }
        checked += analytic.len();
    }
    Ok(GradCheckReport {
        kind,
        trials,
        params_checked: checked,
        max_rel_error: max_err,
        tolerance,
        passed: max_err <= tolerance,
    })
}
