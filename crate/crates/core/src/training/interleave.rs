//! Alternating discriminator adaptation and execution-free orchestrator DPO.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{run_stage, tag, Stage, StageData, TrainConfig, TrainParams, TrainReport, Trainable};
use crate::curation::{best_candidate, DiscExample, DpoTriplet, ExampleKind};
use crate::env::{Environment, Instruction};
use crate::error::{Error, Result};
use crate::io::derive_seed;
use crate::policy::{sample_plan, Decoding, DiscScorer, Plan, PolicyModel, TokenId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InterleaveConfig {
    /// Trajectories sampled per instruction.
    pub m: usize,
    pub temperature: f64,
    pub cycles: usize,
    pub max_len: usize,
    pub seed: u64,
    pub disc: TrainParams,
    pub dpo: TrainParams,
}

impl Default for InterleaveConfig {
    fn default() -> Self {
        Self {
            m: 4,
            temperature: 1.0,
            cycles: 1,
            max_len: 128,
            seed: 0,
            disc: TrainParams {
                learning_rate: 2e-3,
                epochs: 10,
                ..TrainParams::default()
            },
            dpo: TrainParams::dpo(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseStats {
    pub instructions: usize,
    pub examples: usize,
    pub skipped: usize,
    pub env_calls: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterleaveReport {
    pub cycle: usize,
    pub stage_a: PhaseStats,
    pub disc_training: TrainReport,
    pub stage_b: PhaseStats,
    pub dpo_training: TrainReport,
}

/// Up to `m` sampled plans that decode to calls, duplicates removed.
fn distinct_plans(model: &PolicyModel, instr: &Instruction, cfg: &InterleaveConfig, rng: &mut ChaCha8Rng) -> Result<Vec<Plan>> {
    let mut plans: Vec<Plan> = Vec::new();
    for _ in 0..cfg.m {
        let p = sample_plan(
            model,
            instr,
            Decoding::Sample {
                temperature: cfg.temperature,
            },
            cfg.max_len,
            rng,
        )?;
        if p.calls.is_some() && plans.iter().all(|q| q.body != p.body) {
            plans.push(p);
        }
    }
    Ok(plans)
}

fn rng_for(cfg: &InterleaveConfig, phase: &[u8], cycle: usize, id: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[phase, &(cycle as u64).to_le_bytes(), id.as_bytes()]))
}

/// Stage A data: sampled plans executed and labelled by composition score.
pub fn stage_a_examples(
    env: &Environment,
    orchestrator: &PolicyModel,
    instrs: &[Instruction],
    cfg: &InterleaveConfig,
    cycle: usize,
) -> Result<(Vec<DiscExample>, usize)> {
    let vocab = orchestrator.vocab().clone();
    let mut out = Vec::new();
    let mut skipped = 0;
    for instr in instrs {
        let mut rng = rng_for(cfg, b"stage-a", cycle, &instr.id);
        let mut bodies = Vec::new();
        let mut scores = Vec::new();
        let mut times = Vec::new();
        for p in distinct_plans(orchestrator, instr, cfg, &mut rng)? {
            // Plans the environment refuses (e.g. over max_steps) are not candidates.
            let Ok(r) = env.execute_trajectory(instr, p.calls.as_deref().unwrap_or_default()) else {
                continue;
            };
            if let (true, Some(last)) = (r.flags.valid, r.final_step()) {
                scores.push(last.c);
                times.push(last.t_cum);
                bodies.push(p.body);
            }
        }
        if bodies.len() < 2 {
            skipped += 1;
            continue;
        }
        out.push(DiscExample {
            instr_id: instr.id.clone(),
            context_tokens: vocab.encode_context(instr, &[])?,
            label: best_candidate(&scores, &times),
            candidates: bodies,
            candidate_scores: scores,
            candidate_times: times,
        });
    }
    Ok((out, skipped))
}

/// Stage B data: sampled plans ranked by the discriminator alone.
pub fn stage_b_triplets(
    orchestrator: &PolicyModel,
    disc: &DiscScorer,
    instrs: &[Instruction],
    cfg: &InterleaveConfig,
    cycle: usize,
) -> Result<(Vec<DpoTriplet>, usize)> {
    let vocab = orchestrator.vocab().clone();
    let mut out = Vec::new();
    let mut skipped = 0;
    for instr in instrs {
        let mut rng = rng_for(cfg, b"stage-b", cycle, &instr.id);
        let plans = distinct_plans(orchestrator, instr, cfg, &mut rng)?;
        let ctx = vocab.encode_context(instr, &[])?;
        let bodies: Vec<Vec<TokenId>> = plans.into_iter().map(|p| p.body).collect();
        if bodies.len() < 2 {
            skipped += 1;
            continue;
        }
        let scores = disc.scores(&ctx, &bodies)?;
        let best = crate::policy::sample::argmax(&scores);
        let worst = (0..scores.len()).fold(0, |w, i| if scores[i] < scores[w] { i } else { w });
        if scores[best] == scores[worst] {
            skipped += 1;
            continue;
        }
        let with_eos = |b: &Vec<TokenId>| {
            let mut t = b.clone();
            t.push(vocab.eos);
            t
        };
        out.push(DpoTriplet {
            instr_id: instr.id.clone(),
            context_tokens: ctx,
            chosen_tokens: with_eos(&bodies[best]),
            rejected_tokens: with_eos(&bodies[worst]),
            kind: ExampleKind::Trajectory,
            score_gap: scores[best] - scores[worst],
        });
    }
    Ok((out, skipped))
}

fn retag_last(version: &mut String, provenance: &mut Vec<String>) {
    provenance.pop();
    tag(version, provenance, Stage::Interleave);
}

/// Runs `cfg.cycles` rounds of Stage A (on `s2`, with execution) followed by
/// Stage B (on `s3`, without execution).
pub fn interleave_cycle(
    env: &Environment,
    orchestrator: PolicyModel,
    discriminator: DiscScorer,
    s2: &[Instruction],
    s3: &[Instruction],
    cfg: &InterleaveConfig,
) -> Result<(PolicyModel, DiscScorer, Vec<InterleaveReport>)> {
    if s2.is_empty() || s3.is_empty() {
        return Err(Error::Validation("interleaving needs non-empty instruction sets".into()));
    }
    let mut orch = orchestrator;
    let mut disc = discriminator;
    let mut reports = Vec::new();
    for cycle in 0..cfg.cycles {
        let calls_before = env.call_count();
        let (disc_data, skipped_a) = stage_a_examples(env, &orch, s2, cfg, cycle)?;
        let stage_a = PhaseStats {
            instructions: s2.len(),
            examples: disc_data.len(),
            skipped: skipped_a,
            env_calls: env.call_count() - calls_before,
        };
        let mut dcfg = TrainConfig::with_params(Stage::DiscSft, cfg.disc.clone());
        dcfg.params.seed = derive_seed(cfg.disc.seed, &[b"cycle", &(cycle as u64).to_le_bytes()]);
        let (d, disc_training) = run_stage(&dcfg, &StageData::Disc(disc_data), Trainable::Discriminator(disc), None)?;
        disc = d.into_discriminator()?;
        retag_last(&mut disc.backbone.version, &mut disc.backbone.provenance);

        let calls_before = env.call_count();
        let (triplets, skipped_b) = stage_b_triplets(&orch, &disc, s3, cfg, cycle)?;
        let stage_b = PhaseStats {
            instructions: s3.len(),
            examples: triplets.len(),
            skipped: skipped_b,
            env_calls: env.call_count() - calls_before,
        };
        let mut pcfg = TrainConfig::with_params(Stage::TDpo, cfg.dpo.clone());
        pcfg.params.seed = derive_seed(cfg.dpo.seed, &[b"cycle", &(cycle as u64).to_le_bytes()]);
        let (o, dpo_training) = run_stage(&pcfg, &StageData::Dpo(triplets), Trainable::Orchestrator(orch), None)?;
        orch = o.into_orchestrator()?;
        retag_last(&mut orch.version, &mut orch.provenance);
        reports.push(InterleaveReport {
            cycle,
            stage_a,
            disc_training,
            stage_b,
            dpo_training,
        });
    }
    Ok((orch, disc, reports))
}
