use std::collections::HashMap;

use mirror_nas::arch::{canonical_serialize, enumerate_blocks, LayerCode, OpKind};
use mirror_nas::eval::{surrogate_accuracy, SurrogateParams};
use mirror_nas::irl::{expert_library, mirror_stimuli, MirrorWeights};
use mirror_nas::qagent::{
    combined_reward, sample_block, shaped_rewards, td_update, ActionKey, ActionSpace, QTable, StateKey,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const POOL3: [OpKind; 3] = [OpKind::DWCONV3, OpKind::IDENTITY, OpKind::ADD];

fn dw(p: usize) -> LayerCode {
    LayerCode::unary(OpKind::DWCONV3, p)
}

#[test]
fn td_update_hand_cases() {
    let s = StateKey::Start;
    let a = ActionKey::Layer(dw(1));
    let s2 = StateKey::Layer(dw(1));
    let (b, c) = (ActionKey::Layer(dw(2)), ActionKey::Terminate);

    // 0.9 * 2 + 0.1 * (1 + 0.9 * max(3, -1)) = 2.17
    let mut q = QTable::new();
    q.set(s, a, 2.0);
    q.set(s2, b, 3.0);
    q.set(s2, c, -1.0);
    let v = td_update(&mut q, s, a, 1.0, Some((s2, &[b, c])), 0.1, 0.9);
    assert!((v - 2.17).abs() < 1e-12);
    assert_eq!(q.get(s, a), v);

    // All next values negative: the max is the largest of them, not 0.
    let mut q = QTable::new();
    q.set(s2, b, -4.0);
    q.set(s2, c, -2.0);
    let v = td_update(&mut q, s, a, 0.5, Some((s2, &[b, c])), 0.25, 0.5);
    assert!((v - 0.25 * (0.5 + 0.5 * -2.0)).abs() < 1e-12);

    // Unvisited next pairs count as 0.
    let mut q = QTable::new();
    let v = td_update(&mut q, s, a, 3.0, Some((s2, &[b, c])), 1.0, 0.9);
    assert!((v - 3.0).abs() < 1e-12);

    // Terminal transition: no bootstrap term.
    let mut q = QTable::new();
    q.set(s, c, 10.0);
    let v = td_update(&mut q, s, c, 4.0, None, 0.5, 0.9);
    assert!((v - 7.0).abs() < 1e-12);
}

#[test]
fn deterministic_chain_converges_to_discounted_return() {
    let (r1, r2, r3, gamma) = (1.5, -0.25, 2.0, 0.9);
    let (c1, c2) = (dw(1), dw(2));
    let s0 = StateKey::Start;
    let s1 = StateKey::Layer(c1);
    let s2 = StateKey::Layer(c2);
    let (a0, a1, a2) = (ActionKey::Layer(c1), ActionKey::Layer(c2), ActionKey::Terminate);
    let mut q = QTable::new();
    for _ in 0..2000 {
        td_update(&mut q, s0, a0, r1, Some((s1, &[a1])), 0.1, gamma);
        td_update(&mut q, s1, a1, r2, Some((s2, &[a2])), 0.1, gamma);
        td_update(&mut q, s2, a2, r3, None, 0.1, gamma);
    }
    let expected = r1 + gamma * r2 + gamma * gamma * r3;
    assert!((q.get(s0, a0) - expected).abs() < 1e-6, "{} vs {expected}", q.get(s0, a0));
    assert!((q.get(s2, a2) - r3).abs() < 1e-6);
}

#[test]
fn shaped_rewards_sum_to_total() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..1000 {
        let total: f64 = rng.gen_range(-200.0..200.0);
        let steps = rng.gen_range(1..=24);
        let parts = shaped_rewards(total, steps).unwrap();
        assert_eq!(parts.len(), steps);
        let sum: f64 = parts.iter().sum();
        assert!((sum - total).abs() <= 1e-12 * total.abs().max(1.0), "{sum} vs {total}");
    }
    assert!(shaped_rewards(1.0, 0).is_err());
}

#[test]
fn combined_reward_is_exact_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..1000 {
        let (acc, topo, lambda) = (rng.gen_range(0.0..100.0), rng.gen_range(-3.0..3.0), rng.gen_range(0.0..60.0));
        assert_eq!(combined_reward(acc, topo, lambda), acc + lambda * topo);
    }
}

#[test]
fn argmax_is_invariant_to_accuracy_shift() {
    let expert = expert_library("resnet_block").unwrap().arch.with_max_len(3).unwrap();
    let params = SurrogateParams::for_reference(&expert, 0.9);
    let w = MirrorWeights::explicit([0.4, -0.1, 0.0, 0.2, 0.3, 0.0, 0.1, -0.5, 0.6], 0.9);
    let blocks: Vec<_> = enumerate_blocks(3, &POOL3).collect();
    let argmax = |shift: f64| {
        blocks
            .iter()
            .map(|b| combined_reward(surrogate_accuracy(b, &params) + shift, mirror_stimuli(&w, b).unwrap(), 30.0))
            .enumerate()
            .max_by(|x, y| x.1.total_cmp(&y.1))
            .unwrap()
            .0
    };
    let base = argmax(0.0);
    for shift in [-40.0, -1.0, 0.5, 25.0] {
        assert_eq!(argmax(shift), base);
    }
}

#[test]
fn full_exploration_is_uniform_over_two_layer_blocks() {
    // With max_len 2 every block has probability 1/2 * 1/7 = 1/14 under
    // uniform choice among legal actions, so all 14 blocks are equally likely.
    let space = ActionSpace::new(&POOL3, 2);
    let q = QTable::new();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 70_000;
    let mut counts: HashMap<String, usize> = HashMap::new();
    for _ in 0..n {
        *counts.entry(canonical_serialize(&sample_block(&q, 1.0, &space, &mut rng))).or_default() += 1;
    }
    assert_eq!(counts.len(), 14);
    let expected = n as f64 / 14.0;
    let chi2: f64 = counts.values().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // Chi-square with 13 degrees of freedom: 0.999 quantile is 34.53.
    assert!(chi2 < 34.53, "chi2 = {chi2}");
}
