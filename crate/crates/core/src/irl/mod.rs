//! Mirror stimuli function: a linear topology score `F(m) = w . mu(m)` whose
//! weights are learned from one expert block by max-margin inverse RL.
//!
//! Training alternates two steps until the margin drops to `epsilon`:
//!
//! 1. fit `w` (`||w|| <= 1`) maximizing the smallest gap
//!    `w . (mu* - mu_j)` over every feature count discovered so far;
//! 2. find the block that is optimal under the reward `w . phi(s)` and add
//!    its feature count to the set.

mod inner;
mod margin;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::arch::{canonical_serialize, validate, BlockArch, InvalidArch, LayerCode, OpKind, DEFAULT_MAX_LEN};
use crate::features::{arch_feature_count, dot, norm, state_feature, FeatureCount, FeatureVec, FEATURE_DIM};
use crate::qagent::{sample_block, ActionSpace, QTable};

pub use inner::{inner_optimal_policy, q_learning_policy, InnerSolution, InnerSolver};
pub use margin::{max_margin_step, max_margin_step_with, MarginSolution, DEFAULT_MARGIN_ITERATIONS};

#[derive(Debug, Error)]
pub enum IrlError {
    #[error("unknown expert {0:?} (known: resnet_block, plain_chain)")]
    UnknownExpert(String),
    #[error("op pool admits no valid block (it needs at least one unary op)")]
    NoValidBlock,
    #[error(transparent)]
    InvalidArch(#[from] InvalidArch),
    #[error("malformed mirror weights file: {0}")]
    Format(#[from] serde_json::Error),
    #[error("mirror weights must have {FEATURE_DIM} components, got {0}")]
    Dimension(usize),
}

/// A named reference block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExpertBlock {
    pub name: String,
    pub arch: BlockArch,
}

impl ExpertBlock {
    pub fn with_max_len(&self, max_len: usize) -> Result<Self, InvalidArch> {
        Ok(ExpertBlock { name: self.name.clone(), arch: self.arch.with_max_len(max_len)? })
    }
}

pub const EXPERT_NAMES: [&str; 2] = ["resnet_block", "plain_chain"];

/// Built-in experts, under the default length cap.
///
/// `resnet_block` is the residual unit with depthwise convs: two stacked
/// dwconv3 layers and an add that sums the block input (code 1) with the
/// second conv (code 3). `plain_chain` drops the shortcut.
pub fn expert_library(name: &str) -> Result<ExpertBlock, IrlError> {
    let codes = match name {
        "resnet_block" => vec![
            LayerCode::unary(OpKind::DWCONV3, 1),
            LayerCode::unary(OpKind::DWCONV3, 2),
            LayerCode::binary(OpKind::ADD, 1, 3),
        ],
        "plain_chain" => vec![LayerCode::unary(OpKind::DWCONV3, 1), LayerCode::unary(OpKind::DWCONV3, 2)],
        other => return Err(IrlError::UnknownExpert(other.to_string())),
    };
    let arch = BlockArch::from_codes(codes, DEFAULT_MAX_LEN)?;
    Ok(ExpertBlock { name: name.to_string(), arch })
}

/// Learned weights of the mirror stimuli function.
#[derive(Debug, Clone, PartialEq)]
pub struct MirrorWeights {
    pub w: FeatureVec,
    pub gamma: f64,
    /// Canonical serialization of the expert the weights were fitted to.
    pub trained_against: String,
    /// Margin at termination.
    pub final_margin: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WeightsFile {
    w: Vec<f64>,
    gamma: f64,
    expert: String,
    delta: f64,
}

impl MirrorWeights {
    /// Hand-specified weights, e.g. for diagnostics.
    pub fn explicit(w: FeatureVec, gamma: f64) -> Self {
        MirrorWeights { w, gamma, trained_against: String::new(), final_margin: 0.0 }
    }

    pub fn to_json(&self) -> String {
        let file = WeightsFile {
            w: self.w.to_vec(),
            gamma: self.gamma,
            expert: self.trained_against.clone(),
            delta: self.final_margin,
        };
        serde_json::to_string(&file).expect("weights serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, IrlError> {
        let file: WeightsFile = serde_json::from_str(text)?;
        let w: FeatureVec = file.w.as_slice().try_into().map_err(|_| IrlError::Dimension(file.w.len()))?;
        Ok(MirrorWeights { w, gamma: file.gamma, trained_against: file.expert, final_margin: file.delta })
    }
}

/// `F(arch) = w . mu(arch)`.
pub fn mirror_stimuli(weights: &MirrorWeights, arch: &BlockArch) -> Result<f64, InvalidArch> {
    let violations = validate(arch);
    if !violations.is_empty() {
        return Err(InvalidArch(violations));
    }
    Ok(arch_feature_count(arch, weights.gamma).dot(&weights.w))
}

/// The same score expanded per layer: `sum_t gamma^t w . phi(s_t)`.
pub fn mirror_stimuli_per_term(weights: &MirrorWeights, arch: &BlockArch) -> f64 {
    arch.layers()
        .iter()
        .enumerate()
        .map(|(i, layer)| weights.gamma.powi(i as i32 + 1) * state_feature(layer, arch.max_len()).dot(&weights.w))
        .sum()
}

pub fn expert_feature_expectation(expert: &ExpertBlock, gamma: f64) -> FeatureCount {
    arch_feature_count(&expert.arch, gamma)
}

/// The arbitrary first policy of the IRL loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitialPolicy {
    /// A single layer: the first unary op of the pool applied to the input
    /// (dwconv3 for the default pools).
    SingleLayer,
    /// A uniformly sampled block.
    Random { seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct IrlConfig {
    pub epsilon: f64,
    pub max_iterations: usize,
    pub gamma: f64,
    pub op_pool: Vec<OpKind>,
    pub max_len: usize,
    pub margin_iterations: usize,
    pub inner: InnerSolver,
    pub initial: InitialPolicy,
}

impl Default for IrlConfig {
    fn default() -> Self {
        IrlConfig {
            epsilon: 0.01,
            max_iterations: 50,
            gamma: 0.9,
            op_pool: vec![OpKind::DWCONV3, OpKind::IDENTITY, OpKind::ADD],
            max_len: 3,
            margin_iterations: DEFAULT_MARGIN_ITERATIONS,
            inner: InnerSolver::Exact,
            initial: InitialPolicy::SingleLayer,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IrlRecord {
    pub iteration: usize,
    pub w: FeatureVec,
    pub delta: f64,
    /// Block returned by the forward step under `w`.
    pub policy: BlockArch,
    pub mu_hat: FeatureCount,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IrlTrace {
    pub initial: BlockArch,
    pub records: Vec<IrlRecord>,
    pub converged: bool,
}

impl IrlTrace {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,delta\n");
        for r in &self.records {
            out.push_str(&format!("{},{}\n", r.iteration, r.delta));
        }
        out
    }
}

fn initial_block(config: &IrlConfig) -> Result<BlockArch, IrlError> {
    match config.initial {
        InitialPolicy::SingleLayer => {
            let op = config.op_pool.iter().copied().find(|op| !op.is_binary()).ok_or(IrlError::NoValidBlock)?;
            Ok(BlockArch::from_codes([LayerCode::unary(op, 1)], config.max_len)?)
        }
        InitialPolicy::Random { seed } => {
            if !config.op_pool.iter().any(|op| !op.is_binary()) {
                return Err(IrlError::NoValidBlock);
            }
            let space = ActionSpace::new(&config.op_pool, config.max_len);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Ok(sample_block(&QTable::new(), 1.0, &space, &mut rng))
        }
    }
}

/// Runs the max-margin IRL loop against `expert`. Hitting the iteration cap is
/// reported through `IrlTrace::converged`, not as an error.
pub fn train_mirror(expert: &ExpertBlock, config: &IrlConfig) -> Result<(MirrorWeights, IrlTrace), IrlError> {
    if config.max_len == 0 || !config.op_pool.iter().any(|op| !op.is_binary()) {
        return Err(IrlError::NoValidBlock);
    }
    let expert_arch = expert.arch.with_max_len(config.max_len)?;
    let mu_star = arch_feature_count(&expert_arch, config.gamma);
    let initial = initial_block(config)?;
    let mut discovered = vec![arch_feature_count(&initial, config.gamma)];

    let mut records = Vec::new();
    let mut converged = false;
    let mut current = MarginSolution { w: [0.0; FEATURE_DIM], delta: f64::INFINITY };
    for iteration in 1..=config.max_iterations {
        current = max_margin_step_with(&mu_star, &discovered, config.margin_iterations);
        let policy = inner::solve(config.inner, &current.w, config.max_len, &config.op_pool, config.gamma)?;
        discovered.push(policy.mu);
        records.push(IrlRecord {
            iteration,
            w: current.w,
            delta: current.delta,
            policy: policy.arch,
            mu_hat: policy.mu,
        });
        if current.delta <= config.epsilon {
            converged = true;
            break;
        }
    }
    let weights = MirrorWeights {
        w: current.w,
        gamma: config.gamma,
        trained_against: canonical_serialize(&expert_arch),
        final_margin: current.delta,
    };
    debug_assert!(norm(&weights.w) <= 1.0 + 1e-9);
    Ok((weights, IrlTrace { initial, records, converged }))
}

/// Gap between the expert's score and the best score any block reaches under
/// `w`: `w . mu* - max_b w . mu_b` (never positive).
pub fn expert_gap(weights: &MirrorWeights, expert: &BlockArch, pool: &[OpKind]) -> Result<f64, IrlError> {
    let best = inner_optimal_policy(&weights.w, expert.max_len(), pool, weights.gamma)?;
    Ok(dot(&arch_feature_count(expert, weights.gamma).values, &weights.w) - best.value)
}
