use std::sync::Arc;

use super::*;
use crate::env::{default_registry, Emphasis, ADD_OBJECTS, INIT_ROOM, REVIEW};
use crate::eval::config::RunConfig;
use crate::eval::pipeline::Variant;
use crate::policy::{ModelConfig, Vocabulary};

fn instr(id: &str, target: u32) -> Instruction {
    Instruction::new(id, "office", target, Emphasis::default()).unwrap()
}

/// Bigram model that deterministically emits the given token chain.
fn scripted(chain: &[&str]) -> PolicyModel {
    let vocab = Arc::new(Vocabulary::new(&default_registry()));
    let v = vocab.len();
    let mut m = PolicyModel::uniform(vocab.clone(), ModelConfig::bigram());
    for w in chain.windows(2) {
        let (a, b) = (vocab.id(w[0]).unwrap() as usize, vocab.id(w[1]).unwrap() as usize);
        m.params_mut()[a * v + b] = 50.0;
    }
    m
}

fn plan_model() -> PolicyModel {
    scripted(&["<hist>", INIT_ROOM, ADD_OBJECTS, "p:4", "<eos>"])
}

#[test]
fn removing_reviews_saves_exactly_their_cost() {
    let env = Environment::default();
    let cfg = HeuristicConfig::default();
    for k in 0..20u64 {
        let i = instr(&format!("i{k}"), 4 + (k as u32 % 12));
        let r = run_heuristic(&env, &i, &cfg, k);
        let plan: Vec<ToolCall> = r.calls().filter(|c| !c.is(REVIEW)).cloned().collect();
        let stripped = env.execute_trajectory(&i, &plan).unwrap();
        let (a, b) = (Metrics::of(&r), Metrics::of(&stripped));
        let reviews = r.review_count() as f64;
        assert!((a.runtime_units - b.runtime_units - 2.5 * reviews).abs() < 1e-9);
        assert_eq!(a.n_obj, b.n_obj);
        assert_eq!(a.real, b.real);
        assert_eq!(r.final_step().unwrap().q, stripped.final_step().unwrap().q);
        let dc = b.composition - a.composition;
        assert!((dc - env.params.gamma * 2.5 * reviews).abs() < 1e-9);
        assert!((r.review_time_through(r.steps.len()) - 2.5 * reviews).abs() < 1e-9);
    }
}

#[test]
fn baseline_against_itself_has_unit_ratio() {
    let env = Environment::default();
    let is: Vec<_> = (0..4).map(|k| instr(&format!("i{k}"), 6 + k)).collect();
    let m = Method::Baseline(HeuristicConfig::default());
    let r = evaluate(&env, "b", m, &is, 2, &InferConfig::default(), 3).unwrap();
    assert_eq!(r.runtime_ratio(&r), 1.0);
    assert_eq!(r.rows.len(), 8);
}

#[test]
fn aggregate_is_the_mean_of_rows() {
    let env = Environment::default();
    let is: Vec<_> = (0..5).map(|k| instr(&format!("i{k}"), 5 + 2 * k)).collect();
    let r = evaluate(&env, "b", Method::Baseline(HeuristicConfig::default()), &is, 3, &InferConfig::default(), 9).unwrap();
    let n = r.rows.len() as f64;
    let c: f64 = r.rows.iter().map(|x| x.metrics.composition).sum::<f64>() / n;
    let t: f64 = r.rows.iter().map(|x| x.metrics.runtime_units).sum::<f64>() / n;
    assert!((r.mean.composition - c).abs() < 1e-12);
    assert!((r.mean.runtime_units - t).abs() < 1e-12);
}

#[test]
fn greedy_one_shot_is_deterministic_and_review_free() {
    let env = Environment::default();
    let m = plan_model();
    let i = instr("a", 4);
    let cfg = InferConfig::default();
    let a = infer_and_execute(&env, &m, None, &i, &cfg, 1).unwrap();
    let b = infer_and_execute(&env, &m, None, &i, &cfg, 2).unwrap();
    assert_eq!(a.rollout.steps, b.rollout.steps);
    assert_eq!(a.attempts, 1);
    assert!(!a.failed);
    assert_eq!(a.rollout.review_count(), 0);
    let calls: Vec<String> = a.rollout.calls().map(|c| c.to_string()).collect();
    assert_eq!(calls, ["init_room", "add_objects(4)"]);
    let is = vec![i.clone(), instr("b", 9)];
    let r1 = evaluate(&env, "x", Method::OneShot(&m), &is, 2, &cfg, 5).unwrap();
    let r2 = evaluate(&env, "x", Method::OneShot(&m), &is, 2, &cfg, 5).unwrap();
    assert_eq!(r1, r2);
    assert!(r1.rows.iter().all(|r| r.reviews == 0));
}

#[test]
fn invalid_generations_exhaust_retries() {
    let env = Environment::default();
    // Emits <eos> straight away: never a usable trajectory.
    let m = scripted(&["<hist>", "<eos>"]);
    let cfg = InferConfig::default();
    let o = infer_and_execute(&env, &m, None, &instr("a", 4), &cfg, 0).unwrap();
    assert!(o.failed);
    assert_eq!(o.attempts, cfg.retries + 1);
    assert!(!o.rollout.flags.valid);
}

#[test]
fn tool_before_init_is_retried_then_reported() {
    let env = Environment::default();
    let m = scripted(&["<hist>", ADD_OBJECTS, "p:3", "<eos>"]);
    let o = infer_and_execute(&env, &m, None, &instr("a", 4), &InferConfig::default(), 0).unwrap();
    assert!(o.failed);
    assert_eq!(o.rollout.flags.failure_step, Some(1));
}

#[test]
fn variant_stage_matrix() {
    use Variant::*;
    assert_eq!(WoDpo.stages(), [true, true, false, false, false, false]);
    assert_eq!(WoStepwise.stages(), [false, true, false, true, false, false]);
    assert_eq!(WoDisc.stages(), [true, true, true, true, false, false]);
    // Full and Indep. only differ in interleaving alone.
    let (a, b) = (IndepOnly.stages(), Full.stages());
    let diff: Vec<usize> = (0..6).filter(|&k| a[k] != b[k]).collect();
    assert_eq!(diff, [5]);
}

#[test]
fn ablation_table_is_five_by_seven() {
    let rows: Vec<(String, Metrics)> = Variant::ALL.iter().map(|v| (v.label().to_string(), Metrics::default())).collect();
    let t = metric_table(&rows);
    let lines: Vec<&str> = t.lines().collect();
    assert_eq!(lines.len(), 6);
    for (line, v) in lines[1..].iter().zip(Variant::ALL) {
        assert!(line.starts_with(v.label()));
        let numbers = line[v.label().len()..].split_whitespace().count();
        assert_eq!(numbers, 7);
    }
}

#[test]
fn run_config_rejects_unknown_keys_and_round_trips() {
    let cfg = RunConfig::default();
    let text = cfg.to_toml().unwrap();
    let back: RunConfig = toml::from_str(&text).unwrap();
    assert_eq!(back, cfg);
    assert!(toml::from_str::<RunConfig>("bogus = 1").is_err());
    assert!(toml::from_str::<RunConfig>("[train.s_sft]\nlearnig_rate = 0.1").is_err());
    let partial: RunConfig = toml::from_str("seed = 7\n[data]\ns1 = 3").unwrap();
    assert_eq!(partial.seed, 7);
    assert_eq!(partial.data.s1, 3);
    assert_eq!(partial.data.s2, cfg.data.s2);
}
