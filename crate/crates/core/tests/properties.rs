mod support;

use std::sync::Arc;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use trajforge::curation::{best_candidate, Curator, DiscExample, DiscLabels, DpoTriplet, SftExample};
use trajforge::env::instruction::Emphasis;
use trajforge::env::{Environment, Instruction, SceneState, ToolCall, VIS_MAX};
use trajforge::policy::{DiscScorer, ModelConfig, PolicyModel, TokenId, Vocabulary};
use trajforge::rollout::Rollout;
use trajforge::scoring::quality;

fn calls(seed: u64, len: usize) -> Vec<ToolCall> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = vec![ToolCall::new("init_room")];
    v.extend((1..len).map(|_| support::random_call(&mut rng)));
    v
}

fn instr(target: u32) -> Instruction {
    Instruction::new("p", "office", target, Emphasis::default()).unwrap()
}

fn batch(seed: u64) -> (Environment, Vec<Instruction>, Vec<Rollout>) {
    let env = Environment::default();
    let (i, r) = support::random_batch(&env, seed, 4, 4);
    (env, i, r)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn states_stay_valid_and_costs_nonnegative(seed in any::<u64>(), len in 1usize..30) {
        let env = Environment::default();
        let mut state: Option<SceneState> = None;
        for c in calls(seed, len) {
            let (post, dt) = env.apply_tool(state.as_ref(), &c).unwrap();
            prop_assert!(dt >= 0.0);
            prop_assert!(post.is_valid());
            prop_assert!(post.vis_real <= VIS_MAX && post.vis_func <= VIS_MAX && post.vis_lay <= VIS_MAX);
            if c.is("review") {
                prop_assert_eq!(Some(post), state);
                prop_assert_eq!(dt, 2.5);
            }
            state = Some(post);
        }
    }

    #[test]
    fn trajectory_time_and_score_are_consistent(seed in any::<u64>(), len in 1usize..30, target in 1u32..40) {
        let env = Environment::default();
        let r = env.execute_trajectory(&instr(target), &calls(seed, len)).unwrap();
        let mut prev = 0.0;
        for s in &r.steps {
            prop_assert!(s.t_cum >= prev);
            prev = s.t_cum;
            let q = quality(&s.post_state, target, &env.params);
            prop_assert_eq!(q, s.q);
            prop_assert!((0.0..=10.0).contains(&q.s_comp));
            prop_assert!((0.0..=10.0).contains(&q.q_vis));
            prop_assert!((s.c - (q.q_total - env.params.gamma * s.t_cum)).abs() < 1e-12);
        }
    }

    #[test]
    fn rollouts_round_trip_through_json(seed in any::<u64>(), len in 1usize..20) {
        let env = Environment::default();
        let r = env.execute_trajectory(&instr(9), &calls(seed, len)).unwrap();
        let text = serde_json::to_string(&r).unwrap();
        let back: Rollout = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(back, r);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn examples_round_trip_through_json(seed in 0u64..1000) {
        let (env, instrs, rs) = batch(seed);
        let vocab = Vocabulary::new(env.tools());
        let cur = Curator::new(&vocab, &instrs, env.params);
        let (sft, _) = cur.build_stepwise_sft(&rs, 0.0).unwrap();
        let (dpo, _) = cur.build_trajectory_dpo(&rs, 0.0, 4, seed).unwrap();
        let (disc, _) = cur.build_disc_data(&rs, 3, 2, seed).unwrap();
        let s = trajforge::io::to_jsonl_string(&sft).unwrap();
        let back: Vec<SftExample> = s.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        prop_assert_eq!(back, sft);
        let s = trajforge::io::to_jsonl_string(&dpo).unwrap();
        let back: Vec<DpoTriplet> = s.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        prop_assert_eq!(back, dpo);
        let s = trajforge::io::to_jsonl_string(&disc).unwrap();
        let back: Vec<DiscExample> = s.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        prop_assert_eq!(back, disc);
    }

    #[test]
    fn raising_thresholds_only_removes_examples(seed in 0u64..1000, lo in 0.0f64..2.0, step in 0.0f64..2.0) {
        let (env, instrs, rs) = batch(seed);
        let vocab = Vocabulary::new(env.tools());
        let cur = Curator::new(&vocab, &instrs, env.params);
        let hi = lo + step;
        let (a, _) = cur.build_stepwise_sft(&rs, lo).unwrap();
        let (b, _) = cur.build_stepwise_sft(&rs, hi).unwrap();
        prop_assert!(b.iter().all(|x| a.contains(x)));
        let (a, _) = cur.build_trajectory_sft(&rs, 2.0 + lo, 1, seed).unwrap();
        let (b, _) = cur.build_trajectory_sft(&rs, 2.0 + hi, 1, seed).unwrap();
        prop_assert!(b.len() <= a.len());
        let (a, _) = cur.build_trajectory_dpo(&rs, lo, 1000, seed).unwrap();
        let (b, _) = cur.build_trajectory_dpo(&rs, hi, 1000, seed).unwrap();
        prop_assert!(b.iter().all(|x| a.contains(x)));
        prop_assert!(b.iter().all(|x| x.score_gap > hi));
    }

    #[test]
    fn stepwise_triplet_gaps_exceed_threshold(seed in 0u64..1000, tau in 0.0f64..1.0) {
        let (env, instrs, rs) = batch(seed);
        let vocab = Arc::new(Vocabulary::new(env.tools()));
        let policy = PolicyModel::random(vocab.clone(), ModelConfig::default(), seed);
        let cur = Curator::new(&vocab, &instrs, env.params);
        let (t, _) = cur.build_stepwise_dpo(&env, &rs, &policy, 0.3, tau, 1.0, seed).unwrap();
        prop_assert!(t.iter().all(|x| x.score_gap > tau));
        prop_assert!(t.iter().all(|x| x.chosen_tokens != x.rejected_tokens));
    }

    #[test]
    fn disc_label_is_the_best_candidate(seed in 0u64..1000, k in 2usize..5) {
        let (env, instrs, rs) = batch(seed);
        let vocab = Vocabulary::new(env.tools());
        for labels in [DiscLabels::Recorded, DiscLabels::ReviewFree] {
            let cur = Curator::new(&vocab, &instrs, env.params).with_disc_labels(labels, &env);
            let (sets, _) = cur.build_disc_data(&rs, k, 2, seed).unwrap();
            for e in &sets {
                prop_assert_eq!(e.candidates.len(), k);
                prop_assert_eq!(e.label, support::best_index(&e.candidate_scores, &e.candidate_times));
                prop_assert_eq!(e.label, best_candidate(&e.candidate_scores, &e.candidate_times));
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn best_candidate_breaks_ties_by_time_then_index(scores in prop::collection::vec(0i32..4, 1..8), times in prop::collection::vec(0i32..4, 8)) {
        let s: Vec<f64> = scores.iter().map(|&x| f64::from(x)).collect();
        let t: Vec<f64> = times[..s.len()].iter().map(|&x| f64::from(x)).collect();
        let b = best_candidate(&s, &t);
        for i in 0..s.len() {
            prop_assert!(s[i] < s[b] || (s[i] == s[b] && (t[i] > t[b] || (t[i] == t[b] && i >= b))));
        }
    }

    #[test]
    fn disc_scores_follow_candidate_permutations(seed in any::<u64>(), n in 2usize..6) {
        let vocab = Arc::new(Vocabulary::new(&trajforge::env::default_registry()));
        let v = vocab.len() as TokenId;
        let disc = DiscScorer::new(PolicyModel::random(vocab, ModelConfig::default(), seed)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        use rand::{seq::SliceRandom, Rng};
        let ctx: Vec<TokenId> = (0..6).map(|_| rng.gen_range(0..v)).collect();
        let bodies: Vec<Vec<TokenId>> = (0..n).map(|k| (0..=k).map(|_| rng.gen_range(0..v)).collect()).collect();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let shuffled: Vec<Vec<TokenId>> = perm.iter().map(|&i| bodies[i].clone()).collect();
        let a = disc.scores(&ctx, &bodies).unwrap();
        let b = disc.scores(&ctx, &shuffled).unwrap();
        for (j, &i) in perm.iter().enumerate() {
            prop_assert_eq!(a[i], b[j]);
        }
        let p = disc.probabilities(&ctx, &bodies).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
