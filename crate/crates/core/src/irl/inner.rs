//! Forward RL step of the IRL loop: the best block under a linear reward.
//!
//! The per-step reward `w . phi(layer_t)` depends only on the layer chosen at
//! step t, and the legal choices at step t depend only on t. So the best block
//! of length T takes the per-step maximizer at every position, and the best
//! length is the prefix with the largest discounted sum.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::arch::{layer_choices, to_trajectory, BlockArch, LayerCode, OpKind, Trajectory};
use crate::features::{arch_feature_count, state_feature, FeatureCount, FeatureVec};
use crate::qagent::{greedy_rollout, sample_block, td_update, ActionKey, ActionSpace, Decision, QTable};

use super::IrlError;

#[derive(Debug, Clone)]
pub struct InnerSolution {
    pub arch: BlockArch,
    pub trajectory: Trajectory,
    pub mu: FeatureCount,
    /// `sum_t gamma^t w . phi(s_t)` of the returned block.
    pub value: f64,
}

/// Which forward solver the IRL loop uses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InnerSolver {
    /// Exact per-step maximization with optimal stopping.
    Exact,
    /// Sampled tabular Q-learning with per-step rewards, then a greedy rollout.
    QLearning { episodes: usize, epsilon: f64, eta: f64, seed: u64 },
}

fn best_layer_at(position: usize, w: &FeatureVec, pool: &[OpKind], max_len: usize) -> Option<(LayerCode, f64)> {
    layer_choices(position, pool)
        .into_iter()
        .map(|code| (code, state_feature(&code.at(position), max_len).dot(w)))
        .fold(None, |best, (code, v)| match best {
            Some((_, bv)) if bv >= v => best,
            _ => Some((code, v)),
        })
}

pub fn inner_optimal_policy(
    w: &FeatureVec,
    max_len: usize,
    pool: &[OpKind],
    gamma: f64,
) -> Result<InnerSolution, IrlError> {
    if max_len == 0 {
        return Err(IrlError::NoValidBlock);
    }
    let mut codes = Vec::with_capacity(max_len);
    let mut best_len = 0;
    let mut best_value = f64::NEG_INFINITY;
    let mut running = 0.0;
    let mut discount = 1.0;
    for t in 1..=max_len {
        let (code, v) = best_layer_at(t, w, pool, max_len).ok_or(IrlError::NoValidBlock)?;
        discount *= gamma;
        running += discount * v;
        codes.push(code);
        if running > best_value {
            best_value = running;
            best_len = t;
        }
    }
    codes.truncate(best_len);
    let arch = BlockArch::from_codes(codes, max_len).expect("per-step choices are legal");
    finish(arch, w, gamma)
}

fn finish(arch: BlockArch, w: &FeatureVec, gamma: f64) -> Result<InnerSolution, IrlError> {
    let trajectory = to_trajectory(&arch).expect("solver blocks are valid");
    let mu = arch_feature_count(&arch, gamma);
    let value = mu.dot(w);
    Ok(InnerSolution { arch, trajectory, mu, value })
}

/// Tabular Q-learning on the layer MDP with reward `w . phi(s_t)` for the step
/// producing layer t. Approximate: the state key does not include the step
/// index, so it can miss the exact optimum.
#[allow(clippy::too_many_arguments)]
pub fn q_learning_policy(
    w: &FeatureVec,
    max_len: usize,
    pool: &[OpKind],
    gamma: f64,
    episodes: usize,
    epsilon: f64,
    eta: f64,
    seed: u64,
) -> Result<InnerSolution, IrlError> {
    if !pool.iter().any(|op| !op.is_binary()) || max_len == 0 {
        return Err(IrlError::NoValidBlock);
    }
    let space = ActionSpace::new(pool, max_len);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut q = QTable::new();
    for _ in 0..episodes {
        let arch = sample_block(&q, epsilon, &space, &mut rng);
        let path = Decision::path(&arch);
        for (i, d) in path.iter().enumerate().rev() {
            let reward = match d.action {
                ActionKey::Layer(code) => state_feature(&code.at(d.step), max_len).dot(w),
                ActionKey::Terminate => 0.0,
            };
            let next = path.get(i + 1).map(|n| (n.state, space.legal(n.step)));
            td_update(&mut q, d.state, d.action, reward, next, eta, gamma);
        }
    }
    let arch = greedy_rollout(&q, &space);
    finish(arch, w, gamma)
}

pub(super) fn solve(
    solver: InnerSolver,
    w: &FeatureVec,
    max_len: usize,
    pool: &[OpKind],
    gamma: f64,
) -> Result<InnerSolution, IrlError> {
    match solver {
        InnerSolver::Exact => inner_optimal_policy(w, max_len, pool, gamma),
        InnerSolver::QLearning { episodes, epsilon, eta, seed } => {
            q_learning_policy(w, max_len, pool, gamma, episodes, epsilon, eta, seed)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::enumerate_blocks;

    #[test]
    fn zero_weights_pick_first_single_layer() {
        let pool = [OpKind::DWCONV3, OpKind::IDENTITY, OpKind::ADD];
        let sol = inner_optimal_policy(&[0.0; 9], 3, &pool, 0.9).unwrap();
        assert_eq!(sol.value, 0.0);
        assert_eq!(sol.arch.len(), 1);
        assert_eq!(sol.arch.layers()[0].code(), LayerCode::unary(OpKind::DWCONV3, 1));
    }

    #[test]
    fn identity_reward_fills_the_block() {
        let mut w = [0.0; 9];
        w[3] = 1.0;
        let pool = [OpKind::DWCONV3, OpKind::IDENTITY, OpKind::ADD];
        let max_len = 6;
        let sol = inner_optimal_policy(&w, max_len, &pool, 0.9).unwrap();
        assert_eq!(sol.arch.len(), max_len);
        assert!(sol.arch.layers().iter().all(|l| l.op == OpKind::IDENTITY));
        let geometric = 0.9 * (1.0 - 0.9f64.powi(max_len as i32)) / (1.0 - 0.9);
        assert!((sol.value - geometric).abs() < 1e-12);
    }

    #[test]
    fn negative_rewards_still_give_one_layer() {
        let w = [-1.0; 9];
        let sol = inner_optimal_policy(&w, 4, &[OpKind::IDENTITY, OpKind::ADD], 0.9).unwrap();
        assert_eq!(sol.arch.len(), 1);
        let brute = enumerate_blocks(4, &[OpKind::IDENTITY, OpKind::ADD])
            .map(|b| arch_feature_count(&b, 0.9).dot(&w))
            .fold(f64::NEG_INFINITY, f64::max);
        assert!((sol.value - brute).abs() < 1e-12);
    }

    #[test]
    fn binary_only_pool_has_no_block() {
        assert!(matches!(inner_optimal_policy(&[1.0; 9], 3, &[OpKind::ADD], 0.9), Err(IrlError::NoValidBlock)));
    }

    #[test]
    fn q_learning_solver_finds_a_valid_block() {
        let mut w = [0.0; 9];
        w[0] = 1.0;
        let pool = [OpKind::DWCONV3, OpKind::IDENTITY];
        let sol = q_learning_policy(&w, 3, &pool, 0.9, 3000, 0.3, 0.2, 1).unwrap();
        let exact = inner_optimal_policy(&w, 3, &pool, 0.9).unwrap();
        assert!(sol.value <= exact.value + 1e-12);
        assert!(sol.arch.layers().iter().all(|l| l.op == OpKind::DWCONV3));
    }
}
