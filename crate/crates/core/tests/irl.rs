use mirror_nas::arch::{enumerate_blocks, OpKind};
use mirror_nas::features::{arch_feature_count, norm, FeatureCount, FEATURE_DIM};
use mirror_nas::irl::{
    expert_gap, expert_library, inner_optimal_policy, max_margin_step, mirror_stimuli, mirror_stimuli_per_term,
    q_learning_policy, train_mirror, InnerSolver, IrlConfig, MirrorWeights,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const POOL3: [OpKind; 3] = [OpKind::DWCONV3, OpKind::IDENTITY, OpKind::ADD];

fn random_w(rng: &mut ChaCha8Rng) -> [f64; FEATURE_DIM] {
    let mut w = [0.0; FEATURE_DIM];
    w.iter_mut().for_each(|x| *x = rng.gen_range(-1.0..1.0));
    w
}

#[test]
fn exact_inner_solver_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..200 {
        let w = random_w(&mut rng);
        let weights = MirrorWeights::explicit(w, 0.9);
        let brute = enumerate_blocks(3, &POOL3)
            .map(|b| mirror_stimuli(&weights, &b).unwrap())
            .fold(f64::NEG_INFINITY, f64::max);
        let sol = inner_optimal_policy(&w, 3, &POOL3, 0.9).unwrap();
        assert!((sol.value - brute).abs() < 1e-12, "{} vs {brute}", sol.value);
        assert!((mirror_stimuli(&weights, &sol.arch).unwrap() - sol.value).abs() < 1e-12);
    }
}

#[test]
fn q_learning_inner_solver_finds_a_good_block() {
    let w = [0.8, 0.0, 0.0, -0.5, 0.2, 0.0, 0.1, 0.1, 0.0];
    let exact = inner_optimal_policy(&w, 3, &POOL3, 0.9).unwrap();
    let approx = q_learning_policy(&w, 3, &POOL3, 0.9, 5000, 0.2, 0.1, 7).unwrap();
    assert!(approx.value <= exact.value + 1e-12);
    assert!(approx.value >= 0.9 * exact.value, "{} vs {}", approx.value, exact.value);
}

#[test]
fn margin_step_on_orthogonal_gaps() {
    let star = FeatureCount { values: [1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0], gamma: 0.9 };
    let a = FeatureCount { values: [0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0], gamma: 0.9 };
    let b = FeatureCount { values: [1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0], gamma: 0.9 };
    // Gaps e1 and e2: the optimum is w = (e1 + e2)/sqrt(2), margin 1/sqrt(2).
    let sol = max_margin_step(&star, &[a, b]);
    assert!(norm(&sol.w) <= 1.0 + 1e-12);
    assert!((sol.delta - 0.5f64.sqrt()).abs() < 1e-3, "{}", sol.delta);
}

#[test]
fn residual_training_converges_with_expert_on_top() {
    let expert = expert_library("resnet_block").unwrap();
    let config = IrlConfig::default();
    let (weights, trace) = train_mirror(&expert, &config).unwrap();
    assert!(trace.converged);
    assert!(trace.records.len() <= config.max_iterations);
    assert!(weights.final_margin <= config.epsilon);
    assert!(norm(&weights.w) <= 1.0 + 1e-12);
    for pair in trace.records.windows(2) {
        assert!(pair[1].delta <= pair[0].delta + 1e-12);
    }
    let arch = expert.arch.with_max_len(3).unwrap();
    let f_expert = mirror_stimuli(&weights, &arch).unwrap();
    for b in enumerate_blocks(3, &POOL3) {
        assert!(f_expert >= mirror_stimuli(&weights, &b).unwrap() - weights.final_margin);
    }
    assert!(expert_gap(&weights, &arch, &POOL3).unwrap() >= -weights.final_margin);
    assert_eq!(MirrorWeights::from_json(&weights.to_json()).unwrap(), weights);
}

#[test]
fn plain_chain_and_sampled_inner_solver_also_terminate() {
    let expert = expert_library("plain_chain").unwrap();
    let (w, trace) = train_mirror(&expert, &IrlConfig::default()).unwrap();
    assert!(trace.converged, "final margin {}", w.final_margin);

    let config = IrlConfig {
        inner: InnerSolver::QLearning { episodes: 3000, epsilon: 0.2, eta: 0.1, seed: 1 },
        ..IrlConfig::default()
    };
    let (w, trace) = train_mirror(&expert_library("resnet_block").unwrap(), &config).unwrap();
    assert!(!trace.records.is_empty());
    assert!(norm(&w.w) <= 1.0 + 1e-12);
}

#[test]
fn score_equals_per_term_expansion() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let weights = MirrorWeights::explicit(random_w(&mut rng), 0.9);
    for b in enumerate_blocks(3, &POOL3) {
        let a = mirror_stimuli(&weights, &b).unwrap();
        assert!((a - mirror_stimuli_per_term(&weights, &b)).abs() < 1e-12);
        assert!((a - arch_feature_count(&b, 0.9).dot(&weights.w)).abs() < 1e-12);
    }
}
