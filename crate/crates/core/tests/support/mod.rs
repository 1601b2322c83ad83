//! Shared fixtures and brute-force reference builders for the curated
//! datasets. The references walk rollouts step by step and re-execute
//! trajectories through the environment instead of reusing the library's
//! helpers; only the documented seed-derivation protocol is shared.

#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trajforge::curation::{DiscExample, DiscLabels, DpoTriplet, ExampleKind, SftExample};
use trajforge::env::instruction::{generate_instructions, SEEN_ROOMS};
use trajforge::env::{Environment, Instruction, ToolCall};
use trajforge::io::derive_seed;
use trajforge::policy::{sample_next_call, Decoding, PolicyModel, Vocabulary};
use trajforge::rollout::Rollout;

const TOOLS: [&str; 9] = [
    "init_room",
    "add_objects",
    "resolve_collisions",
    "fit_to_boundary",
    "refine_real",
    "refine_func",
    "refine_lay",
    "review",
    "stop",
];

/// One random call. `init_room` and `stop` are rare so most rollouts run
/// to their drawn length.
pub fn random_call<R: Rng>(rng: &mut R) -> ToolCall {
    let k = if rng.gen_bool(0.05) {
        0
    } else if rng.gen_bool(0.04) {
        8
    } else {
        rng.gen_range(1..8)
    };
    match TOOLS[k] {
        "add_objects" => ToolCall::with_param("add_objects", rng.gen_range(1..=8)),
        t => ToolCall::new(t),
    }
}

/// `n_instr` instructions with `per` random rollouts of 1..=12 steps each.
pub fn random_batch(env: &Environment, seed: u64, n_instr: usize, per: usize) -> (Vec<Instruction>, Vec<Rollout>) {
    let instrs = generate_instructions("r", SEEN_ROOMS, n_instr, (2, 20), seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut out = Vec::new();
    for (i, instr) in instrs.iter().enumerate() {
        for k in 0..per {
            let len = rng.gen_range(1..=12);
            let mut calls = vec![ToolCall::new("init_room")];
            while calls.len() < len {
                calls.push(random_call(&mut rng));
            }
            let mut r = env.execute_trajectory(instr, &calls).unwrap();
            r.seed = (i * per + k) as u64;
            out.push(r);
        }
    }
    (instrs, out)
}

fn is_plan(c: &ToolCall) -> bool {
    c.tool != "review" && c.tool != "stop"
}

fn plan(r: &Rollout, through: usize) -> Vec<ToolCall> {
    let mut v = Vec::new();
    for s in &r.steps[..through] {
        if is_plan(&s.call) {
            v.push(s.call.clone());
        }
    }
    v
}

fn find<'a>(instrs: &'a [Instruction], id: &str) -> &'a Instruction {
    instrs.iter().find(|i| i.id == id).expect("known instruction")
}

fn groups(rollouts: &[Rollout]) -> BTreeMap<String, Vec<&Rollout>> {
    let mut g: BTreeMap<String, Vec<&Rollout>> = BTreeMap::new();
    for r in rollouts {
        g.entry(r.instr_id.clone()).or_default().push(r);
    }
    g
}

/// Every candidate site, with the signed score change it brings.
pub fn stepwise_sites(rollouts: &[Rollout]) -> Vec<f64> {
    let mut d = Vec::new();
    for r in rollouts {
        for i in 1..r.steps.len() {
            if is_plan(&r.steps[i].call) {
                d.push(r.steps[i].c - r.steps[i - 1].c);
            }
        }
    }
    d
}

pub fn stepwise_sft(v: &Vocabulary, instrs: &[Instruction], rollouts: &[Rollout], tau1: f64) -> Vec<SftExample> {
    let mut out = Vec::new();
    for r in rollouts {
        let instr = find(instrs, &r.instr_id);
        for i in 1..r.steps.len() {
            let (prev, cur) = (&r.steps[i - 1], &r.steps[i]);
            if !is_plan(&cur.call) {
                continue;
            }
            if cur.c - prev.c > tau1 {
                out.push(SftExample {
                    instr_id: r.instr_id.clone(),
                    context_tokens: v.encode_context(instr, &plan(r, i)).unwrap(),
                    target_tokens: v.encode_calls(&[cur.call.clone()]).unwrap(),
                    kind: ExampleKind::Stepwise,
                });
            }
        }
    }
    out
}

pub fn trajectory_sft(v: &Vocabulary, instrs: &[Instruction], rollouts: &[Rollout], tau2: f64, draws: usize, seed: u64) -> Vec<SftExample> {
    let mut out = Vec::new();
    for r in rollouts.iter().filter(|r| !r.steps.is_empty()) {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[b"t-sft", r.instr_id.as_bytes(), &r.seed.to_le_bytes()]));
        for _ in 0..draws {
            let t = rng.gen_range(1..=r.steps.len());
            if r.steps[t - 1].c > tau2 {
                out.push(SftExample {
                    instr_id: r.instr_id.clone(),
                    context_tokens: v.encode_context(find(instrs, &r.instr_id), &[]).unwrap(),
                    target_tokens: v.encode_trajectory(&plan(r, t)).unwrap(),
                    kind: ExampleKind::Trajectory,
                });
            }
        }
    }
    out
}

/// Score of the rollout prefix before step `t` (1-based) with `alt` in its
/// place, by executing the whole prefix again.
fn replaced_score(env: &Environment, instr: &Instruction, r: &Rollout, t: usize, alt: &Option<ToolCall>) -> f64 {
    let Some(alt) = alt else { return f64::NEG_INFINITY };
    let mut calls: Vec<ToolCall> = r.steps[..t - 1].iter().map(|s| s.call.clone()).collect();
    calls.push(alt.clone());
    let x = env.execute_trajectory(instr, &calls).unwrap();
    if x.steps.len() == t {
        x.steps[t - 1].c
    } else {
        f64::NEG_INFINITY
    }
}

/// Returns the triplets plus every (site, gap) pair seen, for boundary tests.
#[allow(clippy::too_many_arguments)]
pub fn stepwise_dpo(
    env: &Environment,
    v: &Vocabulary,
    instrs: &[Instruction],
    rollouts: &[Rollout],
    policy: &PolicyModel,
    tau1: f64,
    tau3: f64,
    temperature: f64,
    seed: u64,
) -> (Vec<DpoTriplet>, Vec<f64>) {
    let mut out = Vec::new();
    let mut gaps = Vec::new();
    for r in rollouts {
        let instr = find(instrs, &r.instr_id);
        for t in 2..=r.steps.len() {
            let cur = &r.steps[t - 1];
            let change = cur.c - r.steps[t - 2].c;
            if !is_plan(&cur.call) || !(change > tau1 || change < -tau1) {
                continue;
            }
            let ctx = v.encode_context(instr, &plan(r, t - 1)).unwrap();
            let label_seed = derive_seed(seed, &[b"s-dpo", r.instr_id.as_bytes(), &r.seed.to_le_bytes(), &(t as u64).to_le_bytes()]);
            let mut rng = ChaCha8Rng::seed_from_u64(label_seed);
            let (alt_tokens, alt) = sample_next_call(policy, &ctx, Decoding::Sample { temperature }, &mut rng).unwrap();
            let c_alt = replaced_score(env, instr, r, t, &alt);
            let gap = (c_alt - cur.c).abs();
            gaps.push(gap);
            if gap > tau3 {
                let orig = v.encode_calls(&[cur.call.clone()]).unwrap();
                let (chosen, rejected) = if c_alt > cur.c { (alt_tokens, orig) } else { (orig, alt_tokens) };
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
    (out, gaps)
}

/// Returns the triplets plus every sampled gap.
pub fn trajectory_dpo(v: &Vocabulary, instrs: &[Instruction], rollouts: &[Rollout], tau4: f64, max_pairs: usize, seed: u64) -> (Vec<DpoTriplet>, Vec<f64>) {
    let mut out = Vec::new();
    let mut gaps = Vec::new();
    for (id, g) in groups(rollouts) {
        let g: Vec<&Rollout> = g.into_iter().filter(|r| !r.steps.is_empty()).collect();
        if g.len() < 2 {
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[b"t-dpo", id.as_bytes()]));
        let mut pairs = Vec::new();
        for i in 0..g.len() {
            for j in i + 1..g.len() {
                pairs.push((i, j));
            }
        }
        if pairs.len() > max_pairs {
            pairs.shuffle(&mut rng);
            pairs.truncate(max_pairs);
        }
        let ctx = v.encode_context(find(instrs, &id), &[]).unwrap();
        for (i, j) in pairs {
            let ti = rng.gen_range(1..=g[i].steps.len());
            let tj = rng.gen_range(1..=g[j].steps.len());
            let (ci, cj) = (g[i].steps[ti - 1].c, g[j].steps[tj - 1].c);
            let gap = (ci - cj).abs();
            gaps.push(gap);
            if gap > tau4 {
                let (w, l) = if ci > cj { (plan(g[i], ti), plan(g[j], tj)) } else { (plan(g[j], tj), plan(g[i], ti)) };
                out.push(DpoTriplet {
                    instr_id: id.clone(),
                    context_tokens: ctx.clone(),
                    chosen_tokens: v.encode_trajectory(&w).unwrap(),
                    rejected_tokens: v.encode_trajectory(&l).unwrap(),
                    kind: ExampleKind::Trajectory,
                    score_gap: gap,
                });
            }
        }
    }
    (out, gaps)
}

/// Best index by brute force: sort by score descending, then time, then index.
pub fn best_index(scores: &[f64], times: &[f64]) -> usize {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap()
            .then(times[a].partial_cmp(&times[b]).unwrap())
            .then(a.cmp(&b))
    });
    idx[0]
}

#[allow(clippy::too_many_arguments)]
pub fn disc_data(
    env: &Environment,
    v: &Vocabulary,
    instrs: &[Instruction],
    rollouts: &[Rollout],
    k: usize,
    sets: usize,
    seed: u64,
    labels: DiscLabels,
) -> Vec<DiscExample> {
    let mut out = Vec::new();
    for (id, g) in groups(rollouts) {
        let g: Vec<&Rollout> = g.into_iter().filter(|r| !r.steps.is_empty()).collect();
        if g.len() < k {
            continue;
        }
        let instr = find(instrs, &id);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[b"disc", id.as_bytes()]));
        for _ in 0..sets {
            let picks: Vec<&Rollout> = g.choose_multiple(&mut rng, k).copied().collect();
            let (mut cands, mut scores, mut times) = (Vec::new(), Vec::new(), Vec::new());
            for r in picks {
                let t = rng.gen_range(1..=r.steps.len());
                let p = plan(r, t);
                cands.push(v.encode_calls(&p).unwrap());
                match labels {
                    DiscLabels::Recorded => {
                        scores.push(r.steps[t - 1].c);
                        times.push(r.steps[t - 1].t_cum);
                    }
                    DiscLabels::ReviewFree => {
                        let x = env.execute_trajectory(instr, &p).unwrap();
                        let last = x.final_step().unwrap();
                        scores.push(last.c);
                        times.push(last.t_cum);
                    }
                }
            }
            out.push(DiscExample {
                instr_id: id.clone(),
                context_tokens: v.encode_context(instr, &[]).unwrap(),
                label: best_index(&scores, &times),
                candidates: cands,
                candidate_scores: scores,
                candidate_times: times,
            });
        }
    }
    out
}

/// Canonical form for order-insensitive comparison.
pub fn canonical<T: serde::Serialize>(items: &[T]) -> Vec<String> {
    let mut v: Vec<String> = items.iter().map(|x| serde_json::to_string(x).unwrap()).collect();
    v.sort();
    v
}

/// A threshold equal to an observed difference, to probe strictness.
pub fn boundary_tau(diffs: &[f64]) -> Option<f64> {
    let mut d: Vec<f64> = diffs.iter().copied().filter(|x| x.is_finite() && *x > 0.0).collect();
    d.sort_by(|a, b| a.partial_cmp(b).unwrap());
    d.get(d.len() / 2).copied()
}
