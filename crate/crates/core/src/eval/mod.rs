//! One-shot inference, evaluation reports, and the ablation pipeline.

pub mod config;
pub mod pipeline;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{Environment, Instruction, ToolCall};
use crate::error::Result;
use crate::io::derive_seed;
use crate::policy::{sample_plan, Decoding, DiscScorer, PolicyModel, TokenId};
use crate::rollout::{run_heuristic, HeuristicConfig, Rollout, RolloutFlags};

pub use config::RunConfig;
pub use pipeline::{run_ablation, run_pipeline, AblationResult, Variant};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferConfig {
    pub decoding: Decoding,
    /// Regenerations after an invalid attempt; the last one is greedy.
    pub retries: usize,
    pub max_len: usize,
    /// Candidates sampled when a discriminator picks the trajectory.
    pub best_of: usize,
    /// Sampling temperature for those candidates.
    pub best_of_temperature: f64,
    /// Put the greedy plan in every candidate set ahead of the samples.
    pub best_of_greedy_anchor: bool,
}

impl Default for InferConfig {
    fn default() -> Self {
        Self {
            decoding: Decoding::Greedy,
            retries: 3,
            max_len: 128,
            best_of: 4,
            best_of_temperature: 1.0,
            best_of_greedy_anchor: true,
        }
    }
}

/// How a method produces a trajectory for an instruction.
#[derive(Debug, Clone, Copy)]
pub enum Method<'a> {
    Baseline(HeuristicConfig),
    OneShot(&'a PolicyModel),
    BestOfM(&'a PolicyModel, &'a DiscScorer),
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferOutcome {
    pub rollout: Rollout,
    /// Generation attempts used, 1 when the first generation was valid.
    pub attempts: usize,
    pub failed: bool,
}

fn distinct_candidates<R: rand::Rng>(
    model: &PolicyModel,
    instr: &Instruction,
    decoding: Decoding,
    cfg: &InferConfig,
    rng: &mut R,
) -> Result<Vec<(Vec<TokenId>, Vec<ToolCall>)>> {
    let n = if decoding == Decoding::Greedy { 1 } else { cfg.best_of.max(1) };
    let anchor = cfg.best_of_greedy_anchor && decoding != Decoding::Greedy;
    let mut out: Vec<(Vec<TokenId>, Vec<ToolCall>)> = Vec::new();
    for i in 0..n {
        let d = if anchor && i == 0 { Decoding::Greedy } else { decoding };
        let p = sample_plan(model, instr, d, cfg.max_len, rng)?;
        if let Some(calls) = p.calls {
            if out.iter().all(|(b, _)| *b != p.body) {
                out.push((p.body, calls));
            }
        }
    }
    Ok(out)
}

fn invalid(instr: &Instruction, reason: &str) -> Rollout {
    Rollout {
        instr_id: instr.id.clone(),
        seed: 0,
        steps: Vec::new(),
        flags: RolloutFlags {
            valid: false,
            failure_step: None,
            failure: Some(reason.to_string()),
        },
    }
}

/// Generates a full trajectory without history and executes it.
///
/// An invalid generation is regenerated up to `cfg.retries` times, the last
/// regeneration greedy. Review calls are never inserted.
pub fn infer_and_execute(
    env: &Environment,
    model: &PolicyModel,
    disc: Option<&DiscScorer>,
    instr: &Instruction,
    cfg: &InferConfig,
    seed: u64,
) -> Result<InferOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut last = invalid(instr, "no attempt");
    for attempt in 0..=cfg.retries {
        let fallback = attempt == cfg.retries && attempt > 0;
        let decoding = match (fallback, disc) {
            (true, _) => Decoding::Greedy,
            (false, None) => cfg.decoding,
            (false, Some(_)) => Decoding::Sample {
                temperature: cfg.best_of_temperature,
            },
        };
        let chosen = match disc {
            None => sample_plan(model, instr, decoding, cfg.max_len, &mut rng)?.calls,
            Some(d) => {
                let cands = distinct_candidates(model, instr, decoding, cfg, &mut rng)?;
                if cands.is_empty() {
                    None
                } else {
                    let ctx = model.vocab().encode_context(instr, &[])?;
                    let bodies: Vec<Vec<TokenId>> = cands.iter().map(|(b, _)| b.clone()).collect();
                    let k = d.select(&ctx, &bodies)?;
                    Some(cands[k].1.clone())
                }
            }
        };
        let Some(calls) = chosen else {
            last = invalid(instr, "generation did not decode to a trajectory");
            continue;
        };
        match env.execute_trajectory(instr, &calls) {
            Ok(mut r) => {
                r.seed = seed;
                if r.flags.valid {
                    return Ok(InferOutcome {
                        rollout: r,
                        attempts: attempt + 1,
                        failed: false,
                    });
                }
                last = r;
            }
            Err(e) => last = invalid(instr, &e.to_string()),
        }
    }
    Ok(InferOutcome {
        rollout: last,
        attempts: cfg.retries + 1,
        failed: true,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub n_obj: f64,
    pub n_oob: f64,
    pub n_col: f64,
    pub real: f64,
    pub func: f64,
    pub lay: f64,
    pub comp: f64,
    pub runtime_units: f64,
    pub composition: f64,
}

impl Metrics {
    pub fn of(rollout: &Rollout) -> Self {
        match rollout.final_step() {
            None => Metrics::default(),
            Some(s) => Metrics {
                n_obj: f64::from(s.post_state.n_obj),
                n_oob: f64::from(s.post_state.n_oob),
                n_col: f64::from(s.post_state.n_col),
                real: s.post_state.vis_real,
                func: s.post_state.vis_func,
                lay: s.post_state.vis_lay,
                comp: s.q.s_comp,
                runtime_units: s.t_cum,
                composition: s.c,
            },
        }
    }

    pub fn mean<'a>(items: impl IntoIterator<Item = &'a Metrics>) -> Metrics {
        let mut acc = Metrics::default();
        let mut n = 0usize;
        for m in items {
            acc.n_obj += m.n_obj;
            acc.n_oob += m.n_oob;
            acc.n_col += m.n_col;
            acc.real += m.real;
            acc.func += m.func;
            acc.lay += m.lay;
            acc.comp += m.comp;
            acc.runtime_units += m.runtime_units;
            acc.composition += m.composition;
            n += 1;
        }
        if n == 0 {
            return acc;
        }
        let d = n as f64;
        Metrics {
            n_obj: acc.n_obj / d,
            n_oob: acc.n_oob / d,
            n_col: acc.n_col / d,
            real: acc.real / d,
            func: acc.func / d,
            lay: acc.lay / d,
            comp: acc.comp / d,
            runtime_units: acc.runtime_units / d,
            composition: acc.composition / d,
        }
    }

    /// The seven table columns: #Obj, #OB, #CN, Real., Func., Lay., Comp.
    pub fn table_columns(&self) -> [f64; 7] {
        [self.n_obj, self.n_oob, self.n_col, self.real, self.func, self.lay, self.comp]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub instr_id: String,
    pub room_type: String,
    pub repeat: usize,
    #[serde(flatten)]
    pub metrics: Metrics,
    pub reviews: usize,
    pub attempts: usize,
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub rows: Vec<EvalRow>,
    pub mean: Metrics,
    pub failures: usize,
    /// Share of rows whose first generation was valid.
    pub first_try_rate: f64,
}

impl EvalReport {
    pub fn from_rows(method: &str, rows: Vec<EvalRow>) -> Self {
        let mean = Metrics::mean(rows.iter().map(|r| &r.metrics));
        let failures = rows.iter().filter(|r| r.failed).count();
        let first = rows.iter().filter(|r| r.attempts == 1 && !r.failed).count();
        let first_try_rate = if rows.is_empty() { 0.0 } else { first as f64 / rows.len() as f64 };
        Self {
            method: method.to_string(),
            rows,
            mean,
            failures,
            first_try_rate,
        }
    }

    /// Mean runtime relative to `baseline`.
    pub fn runtime_ratio(&self, baseline: &EvalReport) -> f64 {
        self.mean.runtime_units / baseline.mean.runtime_units
    }

    pub fn by_room(&self) -> BTreeMap<String, Metrics> {
        let mut groups: BTreeMap<String, Vec<&Metrics>> = BTreeMap::new();
        for r in &self.rows {
            groups.entry(r.room_type.clone()).or_default().push(&r.metrics);
        }
        groups.into_iter().map(|(k, v)| (k, Metrics::mean(v))).collect()
    }
}

pub fn eval_seed(base: u64, instr_id: &str, repeat: usize) -> u64 {
    derive_seed(base, &[b"eval", instr_id.as_bytes(), &(repeat as u64).to_le_bytes()])
}

/// Runs `repeats` episodes per instruction. Seeds depend only on
/// `(seed, instruction, repeat)`, so methods are compared on paired seeds.
pub fn evaluate(
    env: &Environment,
    tag: &str,
    method: Method<'_>,
    instrs: &[Instruction],
    repeats: usize,
    infer: &InferConfig,
    seed: u64,
) -> Result<EvalReport> {
    let mut rows = Vec::with_capacity(instrs.len() * repeats);
    for instr in instrs {
        for repeat in 0..repeats {
            let s = eval_seed(seed, &instr.id, repeat);
            let (rollout, attempts, failed) = match method {
                Method::Baseline(cfg) => {
                    let r = run_heuristic(env, instr, &cfg, s);
                    let failed = !r.flags.valid;
                    (r, 1, failed)
                }
                Method::OneShot(m) => {
                    let o = infer_and_execute(env, m, None, instr, infer, s)?;
                    (o.rollout, o.attempts, o.failed)
                }
                Method::BestOfM(m, d) => {
                    let o = infer_and_execute(env, m, Some(d), instr, infer, s)?;
                    (o.rollout, o.attempts, o.failed)
                }
            };
            rows.push(EvalRow {
                instr_id: instr.id.clone(),
                room_type: instr.room_type.clone(),
                repeat,
                metrics: Metrics::of(&rollout),
                reviews: rollout.review_count(),
                attempts,
                failed,
            });
        }
    }
    Ok(EvalReport::from_rows(tag, rows))
}

pub const TABLE_COLUMNS: [&str; 7] = ["#Obj", "#OB", "#CN", "Real.", "Func.", "Lay.", "Comp."];

/// Aligned text table of the seven metric columns, one row per label.
pub fn metric_table(rows: &[(String, Metrics)]) -> String {
    let width = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(0).max(7);
    let mut s = format!("{:<width$}", "Setting");
    for c in TABLE_COLUMNS {
        let _ = write!(s, " {c:>7}");
    }
    s.push('\n');
    for (label, m) in rows {
        let _ = write!(s, "{label:<width$}");
        for v in m.table_columns() {
            let _ = write!(s, " {v:>7.2}");
        }
        s.push('\n');
    }
    s
}

/// Composition and runtime summary, with ratios against `baseline`.
pub fn summary_table(rows: &[(String, &EvalReport)], baseline: &EvalReport) -> String {
    let width = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(0).max(7);
    let mut s = format!(
        "{:<width$} {:>9} {:>8} {:>9} {:>8} {:>8} {:>8}\n",
        "Method", "C", "C/base", "runtime", "rt/base", "fail", "1st-try"
    );
    for (label, r) in rows {
        let _ = writeln!(
            s,
            "{label:<width$} {:>9.4} {:>8.3} {:>9.2} {:>8.3} {:>8} {:>8.3}",
            r.mean.composition,
            r.mean.composition / baseline.mean.composition,
            r.mean.runtime_units,
            r.runtime_ratio(baseline),
            r.failures,
            r.first_try_rate
        );
    }
    s
}

#[cfg(test)]
mod tests;
