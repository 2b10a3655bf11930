use mirror_nas::arch::{BlockArch, OpKind};
use mirror_nas::eval::{EvalError, Evaluator, SurrogateEvaluator, SurrogateParams};
use mirror_nas::irl::{expert_library, train_mirror, IrlConfig};
use mirror_nas::qagent::{run_search, samples_to_threshold, SearchConfig, SearchError, LOG_HEADER};

fn config(seed: u64) -> SearchConfig {
    SearchConfig {
        op_pool: vec![OpKind::DWCONV3, OpKind::IDENTITY, OpKind::ADD],
        max_len: 3,
        iterations: 12,
        samples_per_iteration: 10,
        batch: 16,
        seed,
        ..SearchConfig::default()
    }
}

fn surrogate() -> SurrogateEvaluator {
    let expert = expert_library("resnet_block").unwrap().arch.with_max_len(3).unwrap();
    SurrogateEvaluator::new(SurrogateParams::for_reference(&expert, 0.9))
}

#[test]
fn same_seed_same_csv_different_seed_different_csv() {
    let (w, _) = train_mirror(&expert_library("resnet_block").unwrap(), &IrlConfig::default()).unwrap();
    let ev = surrogate();
    let a = run_search(&config(4), &ev, Some(&w)).unwrap();
    let b = run_search(&config(4), &ev, Some(&w)).unwrap();
    let c = run_search(&config(5), &ev, Some(&w)).unwrap();
    assert_eq!(a.convergence_csv(), b.convergence_csv());
    assert_ne!(a.convergence_csv(), c.convergence_csv());
    assert!(a.convergence_csv().starts_with(LOG_HEADER));
    assert_eq!(a.convergence_csv().lines().count(), 13);
}

#[test]
fn history_and_log_bookkeeping() {
    let res = run_search(&config(1), &surrogate(), None).unwrap();
    assert_eq!(res.history.len(), 120);
    assert_eq!(res.log.last().unwrap().samples_total, 120);
    for (i, s) in res.history.iter().enumerate() {
        assert_eq!(s.index, i + 1);
        // Without mirror weights the topology term vanishes.
        assert_eq!((s.topology, s.reward), (0.0, s.accuracy));
    }
    let best = res.history.iter().map(|s| s.reward).fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(res.best_reward(), Some(best));
    assert_eq!(res.top_by_reward[0].reward, best);
    for pair in res.log.windows(2) {
        assert!(pair[1].best_r >= pair[0].best_r);
        assert!(pair[1].epsilon <= pair[0].epsilon);
    }
    let thr = res.history[7].accuracy;
    let first = samples_to_threshold(&res.history, thr).unwrap();
    assert!(first <= 8);
    assert!(res.history[..first - 1].iter().all(|s| s.accuracy < thr));
    assert_eq!(samples_to_threshold(&res.history, 101.0), None);
}

struct Flaky;

impl Evaluator for Flaky {
    fn evaluate(&self, arch: &BlockArch) -> Result<f64, EvalError> {
        if arch.len() == 2 {
            Err(EvalError::Rejected("no".into()))
        } else {
            Ok(50.0)
        }
    }
}

struct Gone;

impl Evaluator for Gone {
    fn evaluate(&self, _: &BlockArch) -> Result<f64, EvalError> {
        Err(EvalError::Unreachable("plugin missing".into()))
    }
}

#[test]
fn failed_evaluations_are_skipped_and_unreachable_aborts() {
    let res = run_search(&config(2), &Flaky, None).unwrap();
    assert!(res.failures > 0);
    assert_eq!(res.history.len() + res.failures, 120);
    assert!(res.history.iter().all(|s| s.arch.len() != 2));
    assert!(matches!(run_search(&config(2), &Gone, None), Err(SearchError::EvaluatorUnreachable(_))));
}

#[test]
fn invalid_configs_rejected() {
    let bad = [
        SearchConfig { eta: 0.0, ..config(0) },
        SearchConfig { lambda: -1.0, ..config(0) },
        SearchConfig { batch: 0, ..config(0) },
        SearchConfig { window: 0, ..config(0) },
        SearchConfig { replay_capacity: Some(0), ..config(0) },
        SearchConfig { op_pool: vec![OpKind::ADD], ..config(0) },
    ];
    for cfg in bad {
        assert!(matches!(run_search(&cfg, &surrogate(), None), Err(SearchError::InvalidConfig(_))));
    }
}
