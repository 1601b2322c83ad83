//! Training-set construction from scored rollouts.
//!
//! | stage  | site selection                         | keep rule                    |
//! |--------|----------------------------------------|------------------------------|
//! | s-sft  | steps with `C_t - C_{t-1} > tau1`      | always                       |
//! | t-sft  | one uniform truncation per rollout     | `C_t > tau2`                 |
//! | s-dpo  | steps with `abs(C_t - C_{t-1}) > tau1` | `abs(C_pred - C_orig) > tau3`|
//! | t-dpo  | rollout pairs, independent truncations | `abs(C_i - C_j) > tau4`      |
//! | disc   | k truncated candidates per instruction | label = best composition     |
//!
//! Every comparison is strict. Review steps are never targets and never
//! appear in token sequences; `stop` is represented by `<eos>`.

pub mod augment;

use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{Environment, Instruction, ToolCall, REVIEW, STOP};
use crate::error::{Error, Result};
use crate::io::derive_seed;
use crate::policy::{sample_next_call, Decoding, PolicyModel, TokenId, Vocabulary};
use crate::rollout::Rollout;
use crate::scoring::{composition, quality, ScoreParams};

pub use augment::augment_instructions;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExampleKind {
    Stepwise,
    Trajectory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftExample {
    pub instr_id: String,
    pub context_tokens: Vec<TokenId>,
    pub target_tokens: Vec<TokenId>,
    pub kind: ExampleKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpoTriplet {
    pub instr_id: String,
    pub context_tokens: Vec<TokenId>,
    pub chosen_tokens: Vec<TokenId>,
    pub rejected_tokens: Vec<TokenId>,
    pub kind: ExampleKind,
    /// Composition gap between chosen and rejected; infinite when the
    /// rejected side was an invalid call.
    #[serde(with = "inf_float")]
    pub score_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscExample {
    pub instr_id: String,
    pub context_tokens: Vec<TokenId>,
    /// Candidate trajectory bodies (calls only, no `<bot>`/`<eos>`).
    pub candidates: Vec<Vec<TokenId>>,
    pub candidate_scores: Vec<f64>,
    pub candidate_times: Vec<f64>,
    pub label: usize,
}

/// JSONL record wrapper carrying the schema version.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Versioned<T> {
    pub schema_version: u32,
    #[serde(flatten)]
    pub record: T,
}

pub fn versioned<T: Clone>(items: &[T]) -> Vec<Versioned<T>> {
    items
        .iter()
        .map(|r| Versioned {
            schema_version: SCHEMA_VERSION,
            record: r.clone(),
        })
        .collect()
}

pub fn unversioned<T>(items: Vec<Versioned<T>>) -> Result<Vec<T>> {
    items
        .into_iter()
        .map(|v| {
            if v.schema_version == SCHEMA_VERSION {
                Ok(v.record)
            } else {
                Err(Error::Validation(format!(
                    "unsupported example schema version {}",
                    v.schema_version
                )))
            }
        })
        .collect()
}

mod inf_float {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) if t == "inf" => Ok(f64::INFINITY),
            Repr::Text(t) if t == "-inf" => Ok(f64::NEG_INFINITY),
            Repr::Text(t) => Err(serde::de::Error::custom(format!("bad float `{t}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Thresholds {
    pub tau1: f64,
    pub tau2: f64,
    pub tau3: f64,
    pub tau4: f64,
}

/// Calibrated to the spread of composition scores this environment
/// produces; see [`Thresholds::published`] for the original values.
impl Default for Thresholds {
    fn default() -> Self {
        Self {
            tau1: 0.5,
            tau2: 6.0,
            tau3: 0.5,
            tau4: 1.0,
        }
    }
}

impl Thresholds {
    /// The original 3 / 7.5 / 3 / 3 setting. Single steps here rarely move
    /// the composition score by 3, so the stepwise builders come out empty.
    pub fn published() -> Self {
        Self {
            tau1: 3.0,
            tau2: 7.5,
            tau3: 3.0,
            tau4: 3.0,
        }
    }
}

/// Which composition score labels a discriminator candidate.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiscLabels {
    /// The score recorded in the rollout, review time included.
    #[default]
    Recorded,
    /// The score the review-free candidate plan would get when executed.
    ReviewFree,
}

/// Counts reported by a builder alongside its examples.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CurationStats {
    pub rollouts: usize,
    pub sites: usize,
    pub examples: usize,
    pub skipped_instructions: usize,
}

/// Shared inputs for every builder.
pub struct Curator<'a> {
    pub vocab: &'a Vocabulary,
    pub params: ScoreParams,
    /// Set for review-free discriminator labels, which re-execute plans.
    label_env: Option<&'a Environment>,
    instrs: HashMap<&'a str, &'a Instruction>,
}

fn is_plan_call(c: &ToolCall) -> bool {
    !c.is(REVIEW) && !c.is(STOP)
}

/// Truncation step drawn uniformly from `1..=len`.
fn draw_step<R: Rng>(len: usize, rng: &mut R) -> usize {
    rng.gen_range(1..=len)
}

impl<'a> Curator<'a> {
    pub fn new(vocab: &'a Vocabulary, instrs: &'a [Instruction], params: ScoreParams) -> Self {
        Self {
            vocab,
            params,
            label_env: None,
            instrs: instrs.iter().map(|i| (i.id.as_str(), i)).collect(),
        }
    }

    /// Chooses how discriminator candidates are scored. Review-free labels
    /// execute each candidate plan in `env`.
    pub fn with_disc_labels(mut self, labels: DiscLabels, env: &'a Environment) -> Self {
        self.label_env = match labels {
            DiscLabels::Recorded => None,
            DiscLabels::ReviewFree => Some(env),
        };
        self
    }

    pub fn disc_labels(&self) -> DiscLabels {
        match self.label_env {
            None => DiscLabels::Recorded,
            Some(_) => DiscLabels::ReviewFree,
        }
    }

    pub fn instruction(&self, id: &str) -> Result<&'a Instruction> {
        self.instrs
            .get(id)
            .copied()
            .ok_or_else(|| Error::Validation(format!("rollout refers to unknown instruction `{id}`")))
    }

    /// Checks that every step carries a composition score consistent with
    /// its quality and cumulative time.
    pub fn check_scored(&self, r: &Rollout) -> Result<()> {
        for (k, s) in r.steps.iter().enumerate() {
            let expect = composition(s.q.q_total, s.t_cum, &self.params);
            if !s.c.is_finite() || (s.c - expect).abs() > 1e-9 * (1.0 + expect.abs()) {
                return Err(Error::Validation(format!(
                    "rollout {} step {} is not scored (C = {}, expected {expect})",
                    r.instr_id,
                    k + 1,
                    s.c
                )));
            }
        }
        Ok(())
    }

    fn context(&self, r: &Rollout, through: usize) -> Result<Vec<TokenId>> {
        let instr = self.instruction(&r.instr_id)?;
        self.vocab.encode_context(instr, &r.plan_through(through))
    }

    fn trajectory_context(&self, instr_id: &str) -> Result<Vec<TokenId>> {
        self.vocab.encode_context(self.instruction(instr_id)?, &[])
    }

    pub fn build_stepwise_sft(&self, rollouts: &[Rollout], tau1: f64) -> Result<(Vec<SftExample>, CurationStats)> {
        let mut out = Vec::new();
        let mut stats = CurationStats {
            rollouts: rollouts.len(),
            ..Default::default()
        };
        for r in rollouts {
            self.check_scored(r)?;
            for t in 2..=r.steps.len() {
                let step = &r.steps[t - 1];
                if !is_plan_call(&step.call) {
                    continue;
                }
                stats.sites += 1;
                if step.c - r.c_at(t - 1) > tau1 {
                    out.push(SftExample {
                        instr_id: r.instr_id.clone(),
                        context_tokens: self.context(r, t - 1)?,
                        target_tokens: self.vocab.encode_calls(std::slice::from_ref(&step.call))?,
                        kind: ExampleKind::Stepwise,
                    });
                }
            }
        }
        stats.examples = out.len();
        Ok((out, stats))
    }

    pub fn build_trajectory_sft(
        &self,
        rollouts: &[Rollout],
        tau2: f64,
        draws_per_rollout: usize,
        seed: u64,
    ) -> Result<(Vec<SftExample>, CurationStats)> {
        let mut out = Vec::new();
        let mut stats = CurationStats {
            rollouts: rollouts.len(),
            ..Default::default()
        };
        for r in rollouts {
            self.check_scored(r)?;
            if r.steps.is_empty() {
                continue;
            }
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                seed,
                &[b"t-sft", r.instr_id.as_bytes(), &r.seed.to_le_bytes()],
            ));
            for _ in 0..draws_per_rollout {
                let t = draw_step(r.steps.len(), &mut rng);
                stats.sites += 1;
                if r.c_at(t) > tau2 {
                    out.push(SftExample {
                        instr_id: r.instr_id.clone(),
                        context_tokens: self.trajectory_context(&r.instr_id)?,
                        target_tokens: self.vocab.encode_trajectory(&r.plan_through(t))?,
                        kind: ExampleKind::Trajectory,
                    });
                }
            }
        }
        stats.examples = out.len();
        Ok((out, stats))
    }

    /// Composition after replacing step `t` by `alt`, executed from the
    /// recorded pre-step state. Invalid calls score negative infinity.
    pub fn counterfactual_c(&self, env: &Environment, r: &Rollout, t: usize, alt: Option<&ToolCall>) -> f64 {
        let Some(call) = alt else {
            return f64::NEG_INFINITY;
        };
        let Ok(instr) = self.instruction(&r.instr_id) else {
            return f64::NEG_INFINITY;
        };
        let pre = &r.steps[t - 2];
        match env.apply_tool(Some(&pre.post_state), call) {
            Ok((post, dt)) => {
                let q = quality(&post, instr.target_object_count, &self.params);
                composition(q.q_total, pre.t_cum + dt, &self.params)
            }
            Err(_) => f64::NEG_INFINITY,
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn build_stepwise_dpo(
        &self,
        env: &Environment,
        rollouts: &[Rollout],
        policy: &PolicyModel,
        tau1: f64,
        tau3: f64,
        temperature: f64,
        seed: u64,
    ) -> Result<(Vec<DpoTriplet>, CurationStats)> {
        let mut out = Vec::new();
        let mut stats = CurationStats {
            rollouts: rollouts.len(),
            ..Default::default()
        };
        for r in rollouts {
            self.check_scored(r)?;
            for t in 2..=r.steps.len() {
                let step = &r.steps[t - 1];
                if !is_plan_call(&step.call) || (step.c - r.c_at(t - 1)).abs() <= tau1 {
                    continue;
                }
                stats.sites += 1;
                let ctx = self.context(r, t - 1)?;
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                    seed,
                    &[
                        b"s-dpo",
                        r.instr_id.as_bytes(),
                        &r.seed.to_le_bytes(),
                        &(t as u64).to_le_bytes(),
                    ],
                ));
                let (alt_tokens, alt_call) =
                    sample_next_call(policy, &ctx, Decoding::Sample { temperature }, &mut rng)?;
                let c_orig = step.c;
                let c_pred = self.counterfactual_c(env, r, t, alt_call.as_ref());
                let gap = (c_pred - c_orig).abs();
                if gap > tau3 {
                    let orig_tokens = self.vocab.encode_calls(std::slice::from_ref(&step.call))?;
                    let (chosen, rejected) = if c_pred > c_orig {
                        (alt_tokens, orig_tokens)
                    } else {
                        (orig_tokens, alt_tokens)
                    };
                    out.push(DpoTriplet {
                        instr_id: r.instr_id.clone(),
                        context_tokens: ctx,
                        chosen_tokens: chosen,
                        rejected_tokens: rejected,
                        kind: ExampleKind::Stepwise,
                        score_gap: gap,
                    });
                }
            }
        }
        stats.examples = out.len();
        Ok((out, stats))
    }

    pub fn build_trajectory_dpo(
        &self,
        rollouts: &[Rollout],
        tau4: f64,
        max_pairs: usize,
        seed: u64,
    ) -> Result<(Vec<DpoTriplet>, CurationStats)> {
        let mut out = Vec::new();
        let mut stats = CurationStats {
            rollouts: rollouts.len(),
            ..Default::default()
        };
        for (instr_id, group) in group_by_instruction(rollouts) {
            for r in &group {
                self.check_scored(r)?;
            }
            let group: Vec<&Rollout> = group.into_iter().filter(|r| !r.steps.is_empty()).collect();
            if group.len() < 2 {
                stats.skipped_instructions += 1;
                continue;
            }
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[b"t-dpo", instr_id.as_bytes()]));
            let mut pairs: Vec<(usize, usize)> = (0..group.len())
                .flat_map(|i| (i + 1..group.len()).map(move |j| (i, j)))
                .collect();
            if pairs.len() > max_pairs {
                pairs.shuffle(&mut rng);
                pairs.truncate(max_pairs);
            }
            let ctx = self.trajectory_context(instr_id)?;
            for (i, j) in pairs {
                let (ri, rj) = (group[i], group[j]);
                let ti = draw_step(ri.steps.len(), &mut rng);
                let tj = draw_step(rj.steps.len(), &mut rng);
                stats.sites += 1;
                let (ci, cj) = (ri.c_at(ti), rj.c_at(tj));
                let gap = (ci - cj).abs();
                if gap > tau4 {
                    let ((w, tw), (l, tl)) = if ci > cj { ((ri, ti), (rj, tj)) } else { ((rj, tj), (ri, ti)) };
                    out.push(DpoTriplet {
                        instr_id: instr_id.to_string(),
                        context_tokens: ctx.clone(),
                        chosen_tokens: self.vocab.encode_trajectory(&w.plan_through(tw))?,
                        rejected_tokens: self.vocab.encode_trajectory(&l.plan_through(tl))?,
                        kind: ExampleKind::Trajectory,
                        score_gap: gap,
                    });
                }
            }
        }
        stats.examples = out.len();
        Ok((out, stats))
    }

    pub fn build_disc_data(
        &self,
        rollouts: &[Rollout],
        k: usize,
        sets_per_instr: usize,
        seed: u64,
    ) -> Result<(Vec<DiscExample>, CurationStats)> {
        if k < 2 {
            return Err(Error::Validation("discriminator sets need k >= 2".into()));
        }
        let mut out = Vec::new();
        let mut stats = CurationStats {
            rollouts: rollouts.len(),
            ..Default::default()
        };
        for (instr_id, group) in group_by_instruction(rollouts) {
            for r in &group {
                self.check_scored(r)?;
            }
            let group: Vec<&Rollout> = group.into_iter().filter(|r| !r.steps.is_empty()).collect();
            if group.len() < k {
                stats.skipped_instructions += 1;
                continue;
            }
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[b"disc", instr_id.as_bytes()]));
            let ctx = self.trajectory_context(instr_id)?;
            for _ in 0..sets_per_instr {
                stats.sites += 1;
                let picks: Vec<&Rollout> = group.choose_multiple(&mut rng, k).copied().collect();
                let mut candidates = Vec::with_capacity(k);
                let mut scores = Vec::with_capacity(k);
                let mut times = Vec::with_capacity(k);
                for r in picks {
                    let t = draw_step(r.steps.len(), &mut rng);
                    let plan = r.plan_through(t);
                    candidates.push(self.vocab.encode_calls(&plan)?);
                    let (c, time) = match self.label_env {
                        None => (r.c_at(t), r.steps[t - 1].t_cum),
                        Some(env) => {
                            let x = env.execute_trajectory(self.instruction(instr_id)?, &plan)?;
                            match (x.flags.valid, x.final_step()) {
                                (true, Some(s)) => (s.c, s.t_cum),
                                _ => {
                                    return Err(Error::Validation(format!(
                                        "plan of rollout {} through step {t} does not replay",
                                        r.instr_id
                                    )))
                                }
                            }
                        }
                    };
                    scores.push(c);
                    times.push(time);
                }
                out.push(DiscExample {
                    instr_id: instr_id.to_string(),
                    context_tokens: ctx.clone(),
                    label: best_candidate(&scores, &times),
                    candidates,
                    candidate_scores: scores,
                    candidate_times: times,
                });
            }
        }
        stats.examples = out.len();
        Ok((out, stats))
    }
}

/// Highest composition; ties go to lower time, then lower index.
pub fn best_candidate(scores: &[f64], times: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..scores.len() {
        let better = scores[i] > scores[best] || (scores[i] == scores[best] && times[i] < times[best]);
        if better {
            best = i;
        }
    }
    best
}

/// Rollouts grouped by instruction id, ids sorted, input order kept within
/// each group.
pub fn group_by_instruction(rollouts: &[Rollout]) -> BTreeMap<&str, Vec<&Rollout>> {
    let mut groups: BTreeMap<&str, Vec<&Rollout>> = BTreeMap::new();
    for r in rollouts {
        groups.entry(r.instr_id.as_str()).or_default().push(r);
    }
    groups
}
