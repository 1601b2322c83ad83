//! Losses with exact gradients over the flat parameter vector.

use std::borrow::Borrow;

use crate::curation::{DiscExample, DpoTriplet, SftExample};
use crate::error::{Error, Result};
use crate::policy::{DiscScorer, PolicyModel, ReferenceModel};

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn non_empty<T>(batch: &[T]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::Validation("loss over an empty batch".into()));
    }
    Ok(())
}

/// Negative mean target log-likelihood.
pub fn sft_loss_and_grad<B: Borrow<SftExample>>(model: &PolicyModel, batch: &[B]) -> Result<(f64, Vec<f64>)> {
    non_empty(batch)?;
    let n = batch.len() as f64;
    let mut grad = vec![0.0; model.num_params()];
    let mut loss = 0.0;
    for ex in batch {
        let ex = ex.borrow();
        loss -= model.accumulate_logprob_grad(&ex.context_tokens, &ex.target_tokens, -1.0 / n, &mut grad)?;
    }
    Ok((loss / n, grad))
}

/// Reference log-probabilities `(chosen, rejected)` for each triplet.
pub fn reference_logprobs<B: Borrow<DpoTriplet>>(reference: &ReferenceModel, batch: &[B]) -> Result<Vec<(f64, f64)>> {
    batch
        .iter()
        .map(|t| {
            let t = t.borrow();
            Ok((
                reference.sequence_logprob(&t.context_tokens, &t.chosen_tokens)?,
                reference.sequence_logprob(&t.context_tokens, &t.rejected_tokens)?,
            ))
        })
        .collect()
}

pub fn dpo_loss_and_grad<B: Borrow<DpoTriplet>>(
    model: &PolicyModel,
    reference: &ReferenceModel,
    batch: &[B],
    beta: f64,
) -> Result<(f64, Vec<f64>)> {
    let refs = reference_logprobs(reference, batch)?;
    dpo_loss_and_grad_cached(model, batch, &refs, beta)
}

/// DPO loss given precomputed reference log-probabilities.
pub fn dpo_loss_and_grad_cached<B: Borrow<DpoTriplet>>(
    model: &PolicyModel,
    batch: &[B],
    ref_logprobs: &[(f64, f64)],
    beta: f64,
) -> Result<(f64, Vec<f64>)> {
    non_empty(batch)?;
    if ref_logprobs.len() != batch.len() {
        return Err(Error::Validation("one reference pair per triplet required".into()));
    }
    let n = batch.len() as f64;
    let mut grad = vec![0.0; model.num_params()];
    let mut loss = 0.0;
    for (t, &(rw, rl)) in batch.iter().zip(ref_logprobs) {
        let t = t.borrow();
        let lw = model.sequence_logprob(&t.context_tokens, &t.chosen_tokens)?;
        let ll = model.sequence_logprob(&t.context_tokens, &t.rejected_tokens)?;
        let margin = beta * ((lw - rw) - (ll - rl));
        loss += softplus(-margin);
        let coeff = -sigmoid(-margin) * beta / n;
        model.accumulate_logprob_grad(&t.context_tokens, &t.chosen_tokens, coeff, &mut grad)?;
        model.accumulate_logprob_grad(&t.context_tokens, &t.rejected_tokens, -coeff, &mut grad)?;
    }
    Ok((loss / n, grad))
}

/// Cross-entropy of the labelled candidate under a softmax over scores.
/// The gradient covers backbone and head, in [`DiscScorer::flat_params`] order.
pub fn disc_loss_and_grad<B: Borrow<DiscExample>>(scorer: &DiscScorer, batch: &[B]) -> Result<(f64, Vec<f64>)> {
    non_empty(batch)?;
    let n = batch.len() as f64;
    let mut grad = vec![0.0; scorer.num_params()];
    let mut loss = 0.0;
    for ex in batch {
        let ex = ex.borrow();
        if ex.candidates.len() < 2 {
            return Err(Error::Validation(format!("{}: fewer than 2 candidates", ex.instr_id)));
        }
        if ex.label >= ex.candidates.len() {
            return Err(Error::Validation(format!(
                "{}: label {} out of range for {} candidates",
                ex.instr_id,
                ex.label,
                ex.candidates.len()
            )));
        }
        let seqs: Vec<_> = ex
            .candidates
            .iter()
            .map(|b| scorer.candidate_sequence(&ex.context_tokens, b))
            .collect();
        let scores = seqs.iter().map(|s| scorer.score_sequence(s)).collect::<Result<Vec<_>>>()?;
        let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = scores.iter().map(|s| (s - m).exp()).sum();
        loss += m + z.ln() - scores[ex.label];
        for (k, seq) in seqs.iter().enumerate() {
            let p = (scores[k] - m).exp() / z;
            let coeff = (p - if k == ex.label { 1.0 } else { 0.0 }) / n;
            scorer.accumulate_score_grad(seq, coeff, &mut grad)?;
        }
    }
    Ok((loss / n, grad))
}
