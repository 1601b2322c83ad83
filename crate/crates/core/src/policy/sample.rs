//! Ancestral and greedy decoding.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::model::{softmax, PolicyModel};
use super::vocab::TokenId;
use crate::env::{Instruction, ToolCall, REVIEW, STOP};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode")]
pub enum Decoding {
    /// Argmax at every step, lowest index on ties.
    Greedy,
    Sample { temperature: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sampled {
    /// Generated tokens, without the terminating `<eos>`.
    pub body: Vec<TokenId>,
    /// Whether generation ended with `<eos>` rather than hitting `max_len`.
    pub terminated: bool,
}

pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Inverse-CDF draw from a categorical distribution.
pub fn draw<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Rounding left u above the running sum; take the last non-zero entry.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

fn next_token<R: Rng>(model: &PolicyModel, prefix: &[TokenId], decoding: Decoding, rng: &mut R) -> Result<TokenId> {
    let logits = model.logits(prefix)?;
    let idx = match decoding {
        Decoding::Greedy => argmax(&logits),
        Decoding::Sample { temperature } => {
            if !(temperature > 0.0) {
                return Err(Error::Validation(format!("temperature {temperature} must be > 0")));
            }
            draw(&softmax(&logits, temperature), rng)
        }
    };
    Ok(idx as TokenId)
}

/// Generates tokens after `context` until `<eos>` or `max_len` tokens.
pub fn sample_trajectory<R: Rng>(
    model: &PolicyModel,
    context: &[TokenId],
    decoding: Decoding,
    max_len: usize,
    rng: &mut R,
) -> Result<Sampled> {
    let eos = model.vocab().eos;
    let mut seq = context.to_vec();
    let room = model.config().max_context.saturating_sub(context.len());
    for _ in 0..max_len.min(room) {
        let t = next_token(model, &seq, decoding, rng)?;
        if t == eos {
            return Ok(Sampled {
                body: seq.split_off(context.len()),
                terminated: true,
            });
        }
        seq.push(t);
    }
    Ok(Sampled {
        body: seq.split_off(context.len()),
        terminated: false,
    })
}

/// Samples the next single call after `context`: a tool token, plus a
/// parameter token when the tool takes one. The raw tokens are returned even
/// when they do not form a valid call.
pub fn sample_next_call<R: Rng>(
    model: &PolicyModel,
    context: &[TokenId],
    decoding: Decoding,
    rng: &mut R,
) -> Result<(Vec<TokenId>, Option<ToolCall>)> {
    let vocab = model.vocab().clone();
    let mut seq = context.to_vec();
    let first = next_token(model, &seq, decoding, rng)?;
    seq.push(first);
    let mut toks = vec![first];
    if !vocab.is_tool(first) {
        return Ok((toks, None));
    }
    match vocab.decode_calls(&toks, 0) {
        Ok((calls, _)) => return Ok((toks, calls.into_iter().next())),
        Err(_) => {
            // Needs a parameter token.
            let second = next_token(model, &seq, decoding, rng)?;
            toks.push(second);
        }
    }
    let call = vocab.decode_calls(&toks, 0).ok().and_then(|(c, _)| c.into_iter().next());
    Ok((toks, call))
}

/// A one-shot trajectory generated from the instruction-only context.
#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub body: Vec<TokenId>,
    pub terminated: bool,
    /// Decoded calls, or `None` when the body is unterminated, malformed, or
    /// contains `review`/`stop`.
    pub calls: Option<Vec<ToolCall>>,
}

pub fn sample_plan<R: Rng>(
    model: &PolicyModel,
    instr: &Instruction,
    decoding: Decoding,
    max_len: usize,
    rng: &mut R,
) -> Result<Plan> {
    let vocab = model.vocab().clone();
    let ctx = vocab.encode_context(instr, &[])?;
    let s = sample_trajectory(model, &ctx, decoding, max_len, rng)?;
    let calls = if s.terminated {
        vocab
            .decode_calls(&s.body, 0)
            .ok()
            .map(|(c, _)| c)
            .filter(|c| !c.is_empty() && c.iter().all(|c| !c.is(REVIEW) && !c.is(STOP)))
    } else {
        None
    };
    Ok(Plan {
        body: s.body,
        terminated: s.terminated,
        calls,
    })
}
