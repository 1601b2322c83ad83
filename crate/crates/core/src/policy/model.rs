//! Autoregressive categorical sequence models with exact gradients.
//!
//! Two architectures share one contract:
//!
//! * `tabular-bigram`: logits are a row of a `V x V` table indexed by the
//!   previous token. Small and oracle-checkable.
//! * `mlp-context-window`: the input at position `p` concatenates the
//!   embeddings of the previous `window` tokens with a scaled sum of bag
//!   embeddings over the whole prefix, followed by one tanh layer and a
//!   linear read-out to the vocabulary.
//!
//! Parameters live in one flat vector so optimizers and finite-difference
//! checks can treat every model the same way.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::vocab::{TokenId, Vocabulary};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArchKind {
    TabularBigram,
    MlpContextWindow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub arch: ArchKind,
    pub window: usize,
    pub embed_dim: usize,
    pub bag_dim: usize,
    pub hidden: usize,
    pub bag_scale: f64,
    /// Longest context + target sequence the model accepts.
    pub max_context: usize,
    pub init_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            arch: ArchKind::MlpContextWindow,
            window: 4,
            embed_dim: 12,
            bag_dim: 12,
            hidden: 48,
            bag_scale: 0.1,
            max_context: 256,
            init_scale: 1.0,
        }
    }
}

impl ModelConfig {
    pub fn bigram() -> Self {
        Self {
            arch: ArchKind::TabularBigram,
            ..Default::default()
        }
    }

    fn input_dim(&self) -> usize {
        self.window * self.embed_dim + self.bag_dim
    }
}

/// Offsets of each parameter block inside the flat vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Layout {
    vocab: usize,
    pub(crate) emb: usize,
    pub(crate) bag: usize,
    pub(crate) w1: usize,
    pub(crate) b1: usize,
    pub(crate) w2: usize,
    pub(crate) b2: usize,
    pub(crate) total: usize,
}

impl Layout {
    fn new(v: usize, cfg: &ModelConfig) -> Self {
        match cfg.arch {
            ArchKind::TabularBigram => Layout {
                vocab: v,
                emb: 0,
                bag: 0,
                w1: 0,
                b1: 0,
                w2: 0,
                b2: 0,
                total: v * v,
            },
            ArchKind::MlpContextWindow => {
                let (e, b, h, d) = (cfg.embed_dim, cfg.bag_dim, cfg.hidden, cfg.input_dim());
                let emb = 0;
                let bag = emb + v * e;
                let w1 = bag + v * b;
                let b1 = w1 + h * d;
                let w2 = b1 + h;
                let b2 = w2 + v * h;
                Layout {
                    vocab: v,
                    emb,
                    bag,
                    w1,
                    b1,
                    w2,
                    b2,
                    total: b2 + v,
                }
            }
        }
    }

    pub(crate) fn blocks(&self, cfg: &ModelConfig) -> Vec<(&'static str, std::ops::Range<usize>)> {
        match cfg.arch {
            ArchKind::TabularBigram => vec![("table", 0..self.total)],
            ArchKind::MlpContextWindow => vec![
                ("emb", self.emb..self.bag),
                ("bag", self.bag..self.w1),
                ("w1", self.w1..self.b1),
                ("b1", self.b1..self.w2),
                ("w2", self.w2..self.b2),
                ("b2", self.b2..self.total),
            ],
        }
    }
}

/// Forward values kept for the backward pass at one position.
struct PosCache {
    x: Vec<f64>,
    h: Vec<f64>,
    probs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyModel {
    vocab: Arc<Vocabulary>,
    config: ModelConfig,
    layout: Layout,
    params: Vec<f64>,
    /// Free-form version tag, e.g. `t-sft@2`.
    pub version: String,
    /// Names of the training stages this model went through, in order.
    pub provenance: Vec<String>,
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    let scaled: Vec<f64> = logits.iter().map(|l| l / temperature).collect();
    let lse = log_sum_exp(&scaled);
    scaled.iter().map(|l| (l - lse).exp()).collect()
}

impl PolicyModel {
    /// All parameters zero: every next-token distribution is uniform.
    pub fn uniform(vocab: Arc<Vocabulary>, config: ModelConfig) -> Self {
        let layout = Layout::new(vocab.len(), &config);
        Self {
            params: vec![0.0; layout.total],
            vocab,
            config,
            layout,
            version: "init".into(),
            provenance: Vec::new(),
        }
    }

    /// Weights drawn uniformly in `±init_scale / sqrt(fan_in)`, biases zero.
    pub fn random(vocab: Arc<Vocabulary>, config: ModelConfig, seed: u64) -> Self {
        let mut m = Self::uniform(vocab, config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = m.config.init_scale;
        let l = m.layout;
        let mut fill = |range: std::ops::Range<usize>, bound: f64, p: &mut [f64]| {
            for x in &mut p[range] {
                *x = rng.gen_range(-bound..=bound);
            }
        };
        match m.config.arch {
            ArchKind::TabularBigram => fill(0..l.total, s, &mut m.params),
            ArchKind::MlpContextWindow => {
                let d = m.config.input_dim() as f64;
                let h = m.config.hidden as f64;
                fill(l.emb..l.w1, s, &mut m.params);
                fill(l.w1..l.b1, s / d.sqrt(), &mut m.params);
                fill(l.w2..l.b2, s / h.sqrt(), &mut m.params);
            }
        }
        m
    }

    pub fn vocab(&self) -> &Arc<Vocabulary> {
        &self.vocab
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub(crate) fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: Vec<f64>) -> Result<()> {
        if params.len() != self.layout.total {
            return Err(Error::Validation(format!(
                "expected {} parameters, got {}",
                self.layout.total,
                params.len()
            )));
        }
        self.params = params;
        Ok(())
    }

    pub fn hidden_dim(&self) -> usize {
        match self.config.arch {
            ArchKind::TabularBigram => 0,
            ArchKind::MlpContextWindow => self.config.hidden,
        }
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len > self.config.max_context {
            return Err(Error::WindowOverflow {
                len,
                window: self.config.max_context,
            });
        }
        Ok(())
    }

    fn check_tokens(&self, seq: &[TokenId]) -> Result<()> {
        let v = self.layout.vocab as TokenId;
        match seq.iter().position(|&t| t >= v) {
            Some(position) => Err(Error::Decode {
                position,
                reason: format!("token id {} outside vocabulary of {v}", seq[position]),
            }),
            None => Ok(()),
        }
    }

    fn add_bag_row(&self, bag: &mut [f64], tok: TokenId) {
        let b = self.config.bag_dim;
        let row = &self.params[self.layout.bag + tok as usize * b..][..b];
        for (acc, v) in bag.iter_mut().zip(row) {
            *acc += v;
        }
    }

    /// MLP input at position `p` (predicting `seq[p]`) given the running bag sum
    /// over `seq[..p]`.
    fn input_at(&self, seq: &[TokenId], p: usize, bag: &[f64]) -> Vec<f64> {
        let (e, w) = (self.config.embed_dim, self.config.window);
        let mut x = vec![0.0; self.config.input_dim()];
        for j in 1..=w {
            if p >= j {
                let tok = seq[p - j] as usize;
                x[(j - 1) * e..j * e].copy_from_slice(&self.params[self.layout.emb + tok * e..][..e]);
            }
        }
        let s = self.config.bag_scale;
        for (xi, bi) in x[w * e..].iter_mut().zip(bag) {
            *xi = s * bi;
        }
        x
    }

    fn hidden_from_input(&self, x: &[f64]) -> Vec<f64> {
        let (h, d) = (self.config.hidden, x.len());
        let w1 = &self.params[self.layout.w1..self.layout.b1];
        let b1 = &self.params[self.layout.b1..self.layout.w2];
        (0..h)
            .map(|i| {
                let row = &w1[i * d..(i + 1) * d];
                let a = b1[i] + row.iter().zip(x).map(|(w, xv)| w * xv).sum::<f64>();
                a.tanh()
            })
            .collect()
    }

    fn logits_from_hidden(&self, hid: &[f64]) -> Vec<f64> {
        let (v, h) = (self.layout.vocab, self.config.hidden);
        let w2 = &self.params[self.layout.w2..self.layout.b2];
        let b2 = &self.params[self.layout.b2..self.layout.total];
        (0..v)
            .map(|k| b2[k] + w2[k * h..(k + 1) * h].iter().zip(hid).map(|(w, x)| w * x).sum::<f64>())
            .collect()
    }

    fn bigram_logits(&self, prev: TokenId) -> Vec<f64> {
        let v = self.layout.vocab;
        self.params[prev as usize * v..][..v].to_vec()
    }

    /// Next-token logits after `prefix` (which must be non-empty).
    pub fn logits(&self, prefix: &[TokenId]) -> Result<Vec<f64>> {
        let p = prefix.len();
        if p == 0 {
            return Err(Error::Validation("empty prefix".into()));
        }
        self.check_tokens(prefix)?;
        self.check_len(p)?;
        Ok(match self.config.arch {
            ArchKind::TabularBigram => self.bigram_logits(prefix[p - 1]),
            ArchKind::MlpContextWindow => {
                let mut bag = vec![0.0; self.config.bag_dim];
                for &t in prefix {
                    self.add_bag_row(&mut bag, t);
                }
                let x = self.input_at(prefix, p, &bag);
                self.logits_from_hidden(&self.hidden_from_input(&x))
            }
        })
    }

    pub fn next_distribution(&self, prefix: &[TokenId], temperature: f64) -> Result<Vec<f64>> {
        Ok(softmax(&self.logits(prefix)?, temperature))
    }

    /// `log p(target | context)`, summed over target positions.
    pub fn sequence_logprob(&self, context: &[TokenId], target: &[TokenId]) -> Result<f64> {
        let (lp, _) = self.forward(context, target, false)?;
        Ok(lp)
    }

    fn forward(&self, context: &[TokenId], target: &[TokenId], keep: bool) -> Result<(f64, Vec<PosCache>)> {
        if context.is_empty() {
            return Err(Error::Validation("empty context".into()));
        }
        let seq: Vec<TokenId> = context.iter().chain(target).copied().collect();
        self.check_tokens(&seq)?;
        self.check_len(seq.len())?;
        let mut caches = Vec::new();
        let mut total = 0.0;
        match self.config.arch {
            ArchKind::TabularBigram => {
                for p in context.len()..seq.len() {
                    let logits = self.bigram_logits(seq[p - 1]);
                    let lse = log_sum_exp(&logits);
                    total += logits[seq[p] as usize] - lse;
                    if keep {
                        caches.push(PosCache {
                            x: Vec::new(),
                            h: Vec::new(),
                            probs: logits.iter().map(|l| (l - lse).exp()).collect(),
                        });
                    }
                }
            }
            ArchKind::MlpContextWindow => {
                let mut bag = vec![0.0; self.config.bag_dim];
                for &t in context {
                    self.add_bag_row(&mut bag, t);
                }
                for p in context.len()..seq.len() {
                    let x = self.input_at(&seq, p, &bag);
                    let h = self.hidden_from_input(&x);
                    let logits = self.logits_from_hidden(&h);
                    let lse = log_sum_exp(&logits);
                    total += logits[seq[p] as usize] - lse;
                    if keep {
                        caches.push(PosCache {
                            x,
                            h,
                            probs: logits.iter().map(|l| (l - lse).exp()).collect(),
                        });
                    }
                    self.add_bag_row(&mut bag, seq[p]);
                }
            }
        }
        Ok((total, caches))
    }

    /// Adds `coeff * d log p(target | context) / d params` into `grad` and
    /// returns the log-probability.
    pub fn accumulate_logprob_grad(
        &self,
        context: &[TokenId],
        target: &[TokenId],
        coeff: f64,
        grad: &mut [f64],
    ) -> Result<f64> {
        debug_assert_eq!(grad.len(), self.layout.total);
        let (lp, caches) = self.forward(context, target, true)?;
        let seq: Vec<TokenId> = context.iter().chain(target).copied().collect();
        let start = context.len();
        let v = self.layout.vocab;
        match self.config.arch {
            ArchKind::TabularBigram => {
                for (k, c) in caches.iter().enumerate() {
                    let p = start + k;
                    let row = &mut grad[seq[p - 1] as usize * v..][..v];
                    for (j, g) in row.iter_mut().enumerate() {
                        let onehot = if j == seq[p] as usize { 1.0 } else { 0.0 };
                        *g += coeff * (onehot - c.probs[j]);
                    }
                }
            }
            ArchKind::MlpContextWindow => {
                let mut dbag_at = Vec::with_capacity(caches.len());
                for (k, c) in caches.iter().enumerate() {
                    let p = start + k;
                    let dlogits: Vec<f64> = (0..v)
                        .map(|j| {
                            let onehot = if j == seq[p] as usize { 1.0 } else { 0.0 };
                            coeff * (onehot - c.probs[j])
                        })
                        .collect();
                    let dh = self.backprop_readout(&dlogits, &c.h, grad);
                    dbag_at.push(self.backprop_hidden(&seq, p, &c.x, &c.h, &dh, grad));
                }
                self.scatter_bag_grad(&seq, start, &dbag_at, grad);
            }
        }
        Ok(lp)
    }

    /// Read-out layer backward: accumulates `w2`/`b2` gradients, returns dL/dh.
    fn backprop_readout(&self, dlogits: &[f64], h: &[f64], grad: &mut [f64]) -> Vec<f64> {
        let hd = self.config.hidden;
        let l = self.layout;
        let mut dh = vec![0.0; hd];
        for (k, &dl) in dlogits.iter().enumerate() {
            if dl == 0.0 {
                continue;
            }
            grad[l.b2 + k] += dl;
            let w_row = &self.params[l.w2 + k * hd..][..hd];
            let g_row = &mut grad[l.w2 + k * hd..][..hd];
            for i in 0..hd {
                g_row[i] += dl * h[i];
                dh[i] += dl * w_row[i];
            }
        }
        dh
    }

    /// Hidden layer backward at position `p`: accumulates `w1`, `b1` and window
    /// embedding gradients; returns dL/d(bag sum) for this position.
    fn backprop_hidden(
        &self,
        seq: &[TokenId],
        p: usize,
        x: &[f64],
        h: &[f64],
        dh: &[f64],
        grad: &mut [f64],
    ) -> Vec<f64> {
        let l = self.layout;
        let d = x.len();
        let (e, w) = (self.config.embed_dim, self.config.window);
        let mut dx = vec![0.0; d];
        for i in 0..self.config.hidden {
            let da = dh[i] * (1.0 - h[i] * h[i]);
            if da == 0.0 {
                continue;
            }
            grad[l.b1 + i] += da;
            let w_row = &self.params[l.w1 + i * d..][..d];
            let g_row = &mut grad[l.w1 + i * d..][..d];
            for j in 0..d {
                g_row[j] += da * x[j];
                dx[j] += da * w_row[j];
            }
        }
        for j in 1..=w {
            if p >= j {
                let tok = seq[p - j] as usize;
                let g = &mut grad[l.emb + tok * e..][..e];
                for (gi, dv) in g.iter_mut().zip(&dx[(j - 1) * e..j * e]) {
                    *gi += dv;
                }
            }
        }
        let s = self.config.bag_scale;
        dx[w * e..].iter().map(|v| v * s).collect()
    }

    /// Distributes per-position bag gradients to the bag rows of every earlier
    /// token. `dbag_at[k]` belongs to position `start + k`.
    fn scatter_bag_grad(&self, seq: &[TokenId], start: usize, dbag_at: &[Vec<f64>], grad: &mut [f64]) {
        let b = self.config.bag_dim;
        let l = self.layout;
        let end = start + dbag_at.len();
        // Token q feeds the bag of every later position p, so its gradient is
        // the suffix sum of dbag over p in (q, end).
        let mut acc = vec![0.0; b];
        for q in (0..end.saturating_sub(1)).rev() {
            if q + 1 >= start {
                for (a, v) in acc.iter_mut().zip(&dbag_at[q + 1 - start]) {
                    *a += v;
                }
            }
            let g = &mut grad[l.bag + seq[q] as usize * b..][..b];
            for (gi, a) in g.iter_mut().zip(&acc) {
                *gi += a;
            }
        }
    }

    /// Hidden activation after reading the whole sequence (the state that
    /// would predict the next token).
    pub fn hidden_at_end(&self, seq: &[TokenId]) -> Result<Vec<f64>> {
        self.require_hidden()?;
        self.check_tokens(seq)?;
        self.check_len(seq.len())?;
        let mut bag = vec![0.0; self.config.bag_dim];
        for &t in seq {
            self.add_bag_row(&mut bag, t);
        }
        let x = self.input_at(seq, seq.len(), &bag);
        Ok(self.hidden_from_input(&x))
    }

    /// Backpropagates `dh` (gradient w.r.t. [`Self::hidden_at_end`]) into `grad`.
    pub fn accumulate_hidden_grad(&self, seq: &[TokenId], dh: &[f64], grad: &mut [f64]) -> Result<()> {
        self.require_hidden()?;
        let mut bag = vec![0.0; self.config.bag_dim];
        for &t in seq {
            self.add_bag_row(&mut bag, t);
        }
        let p = seq.len();
        let x = self.input_at(seq, p, &bag);
        let h = self.hidden_from_input(&x);
        let dbag = self.backprop_hidden(seq, p, &x, &h, dh, grad);
        let b = self.config.bag_dim;
        for &t in seq {
            let g = &mut grad[self.layout.bag + t as usize * b..][..b];
            for (gi, v) in g.iter_mut().zip(&dbag) {
                *gi += v;
            }
        }
        Ok(())
    }

    fn require_hidden(&self) -> Result<()> {
        match self.config.arch {
            ArchKind::MlpContextWindow => Ok(()),
            ArchKind::TabularBigram => Err(Error::Validation(
                "tabular-bigram has no hidden state to score with".into(),
            )),
        }
    }
}
