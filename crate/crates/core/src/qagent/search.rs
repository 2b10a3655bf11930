//! The search loop: sample blocks epsilon-greedily, score them, store
//! `(block, R)` in a replay buffer, and replay stored blocks through TD
//! updates with shaped rewards.

use std::collections::{HashSet, VecDeque};
use std::fmt::Write;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::arch::{BlockArch, OpKind, DEFAULT_MAX_LEN};
use crate::eval::{parallel_window_with, EvalError, Evaluator};
use crate::irl::{mirror_stimuli, MirrorWeights};

use super::reward::{combined_reward, shaped_rewards};
use super::table::{sample_block, td_update, ActionSpace, Decision, QTable};

/// Linear decay from `start` to `end` over the first `decay_fraction` of the
/// iterations, flat afterwards.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub decay_fraction: f64,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        EpsilonSchedule { start: 1.0, end: 0.1, decay_fraction: 0.9 }
    }
}

impl EpsilonSchedule {
    /// Epsilon for 0-based `iteration` out of `total`.
    pub fn at(&self, iteration: usize, total: usize) -> f64 {
        let span = self.decay_fraction * total as f64;
        if span <= 0.0 {
            return self.end;
        }
        let progress = (iteration as f64 / span).min(1.0);
        self.start + (self.end - self.start) * progress
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchConfig {
    pub eta: f64,
    pub gamma_q: f64,
    pub lambda: f64,
    /// Replayed blocks per iteration.
    pub batch: usize,
    pub max_len: usize,
    pub iterations: usize,
    pub samples_per_iteration: usize,
    pub epsilon: EpsilonSchedule,
    pub seed: u64,
    /// `None` keeps every sample.
    pub replay_capacity: Option<usize>,
    pub op_pool: Vec<OpKind>,
    /// Maximum evaluations in flight.
    pub window: usize,
    pub top_k: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            eta: 0.01,
            gamma_q: 0.9,
            lambda: 30.0,
            batch: 64,
            max_len: DEFAULT_MAX_LEN,
            iterations: 180,
            samples_per_iteration: 64,
            epsilon: EpsilonSchedule::default(),
            seed: 0,
            replay_capacity: Some(2000),
            op_pool: OpKind::POOL.to_vec(),
            window: 1,
            top_k: 4,
        }
    }
}

impl SearchConfig {
    pub fn check(&self) -> Result<(), SearchError> {
        let bad = |msg: &str| Err(SearchError::InvalidConfig(msg.to_string()));
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return bad("eta must lie in (0, 1]");
        }
        if !(self.gamma_q > 0.0 && self.gamma_q <= 1.0) {
            return bad("gamma_q must lie in (0, 1]");
        }
        if self.lambda.is_nan() || self.lambda < 0.0 {
            return bad("lambda must be non-negative");
        }
        if self.batch == 0 {
            return bad("batch must be at least 1");
        }
        if self.window == 0 {
            return bad("window must be at least 1");
        }
        if self.max_len == 0 {
            return bad("max_len must be at least 1");
        }
        if self.replay_capacity == Some(0) {
            return bad("replay capacity must be at least 1");
        }
        if !self.op_pool.iter().any(|op| !op.is_binary()) {
            return bad("op pool needs at least one unary op");
        }
        if !(0.0..=1.0).contains(&self.epsilon.start) || !(0.0..=1.0).contains(&self.epsilon.end) {
            return bad("epsilon must lie in [0, 1]");
        }
        if self.epsilon.end > self.epsilon.start {
            return bad("epsilon must not increase");
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("invalid search config: {0}")]
    InvalidConfig(String),
    #[error("evaluator unreachable: {0}")]
    EvaluatorUnreachable(EvalError),
}

/// Per-iteration log. `best_*` are running maxima over the whole run; `mean_*`
/// cover the iteration's successful evaluations.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub iteration: usize,
    pub samples_total: usize,
    pub epsilon: f64,
    pub best_r: f64,
    pub mean_r: f64,
    pub best_acc: f64,
    pub mean_topo: f64,
}

pub const LOG_HEADER: &str = "iteration,samples_total,epsilon,best_R,mean_R,best_acc,mean_topo";

#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    /// 1-based position in evaluation arrival order.
    pub index: usize,
    pub iteration: usize,
    pub arch: BlockArch,
    pub accuracy: f64,
    pub topology: f64,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scored {
    pub arch: BlockArch,
    pub accuracy: f64,
    pub topology: f64,
    pub reward: f64,
}

#[derive(Debug, Clone)]
pub struct SearchResult {
    pub top_by_reward: Vec<Scored>,
    pub top_by_accuracy: Vec<Scored>,
    pub q: QTable,
    pub log: Vec<LogRow>,
    pub history: Vec<SampleRecord>,
    pub failures: usize,
}

impl SearchResult {
    pub fn convergence_csv(&self) -> String {
        let mut out = format!("{LOG_HEADER}\n");
        for r in &self.log {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.iteration, r.samples_total, r.epsilon, r.best_r, r.mean_r, r.best_acc, r.mean_topo
            );
        }
        out
    }

    pub fn best_reward(&self) -> Option<f64> {
        self.top_by_reward.first().map(|s| s.reward)
    }
}

/// 1-based index of the first sample whose accuracy reaches `threshold`.
pub fn samples_to_threshold(history: &[SampleRecord], threshold: f64) -> Option<usize> {
    history.iter().find(|s| s.accuracy >= threshold).map(|s| s.index)
}

fn top_k(history: &[SampleRecord], k: usize, key: impl Fn(&SampleRecord) -> f64) -> Vec<Scored> {
    let mut seen = HashSet::new();
    let mut unique: Vec<&SampleRecord> = history.iter().filter(|s| seen.insert(&s.arch)).collect();
    unique.sort_by(|a, b| key(b).total_cmp(&key(a)));
    unique
        .into_iter()
        .take(k)
        .map(|s| Scored { arch: s.arch.clone(), accuracy: s.accuracy, topology: s.topology, reward: s.reward })
        .collect()
}

fn replay(q: &mut QTable, space: &ActionSpace, arch: &BlockArch, total: f64, eta: f64, gamma: f64) {
    let path = Decision::path(arch);
    let shaped = shaped_rewards(total, arch.len()).expect("stored blocks are non-empty");
    // Decision 0 picks the first layer from START and carries no reward;
    // decision t (1..=T) leaves layer t and carries the shaped reward r_t.
    for (i, d) in path.iter().enumerate().rev() {
        let reward = if i == 0 { 0.0 } else { shaped[i - 1] };
        let next = path.get(i + 1).map(|n| (n.state, space.legal(n.step)));
        td_update(q, d.state, d.action, reward, next, eta, gamma);
    }
}

/// Runs the Q-learning search. Without mirror weights the topology term is 0.
pub fn run_search<E: Evaluator + ?Sized>(
    config: &SearchConfig,
    evaluator: &E,
    mirror: Option<&MirrorWeights>,
) -> Result<SearchResult, SearchError> {
    config.check()?;
    let space = ActionSpace::new(&config.op_pool, config.max_len);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut q = QTable::new();
    let mut buffer: VecDeque<(BlockArch, f64)> = VecDeque::new();
    let mut history = Vec::new();
    let mut log = Vec::with_capacity(config.iterations);
    let mut failures = 0;
    let mut samples_total = 0;
    let (mut best_r, mut best_acc) = (f64::NEG_INFINITY, f64::NEG_INFINITY);

    for it in 0..config.iterations {
        let epsilon = config.epsilon.at(it, config.iterations);
        let archs: Vec<BlockArch> =
            (0..config.samples_per_iteration).map(|_| sample_block(&q, epsilon, &space, &mut rng)).collect();
        samples_total += archs.len();

        let mut unreachable = None;
        let (mut sum_r, mut sum_topo, mut ok) = (0.0, 0.0, 0usize);
        parallel_window_with(evaluator, &archs, config.window, |i, result| match result {
            Ok(acc) => {
                let arch = &archs[i];
                let topo = mirror.map_or(0.0, |w| mirror_stimuli(w, arch).expect("sampled blocks are valid"));
                let reward = combined_reward(acc, topo, config.lambda);
                if let Some(cap) = config.replay_capacity {
                    while buffer.len() >= cap {
                        buffer.pop_front();
                    }
                }
                buffer.push_back((arch.clone(), reward));
                history.push(SampleRecord {
                    index: history.len() + 1,
                    iteration: it + 1,
                    arch: arch.clone(),
                    accuracy: acc,
                    topology: topo,
                    reward,
                });
                best_r = best_r.max(reward);
                best_acc = best_acc.max(acc);
                sum_r += reward;
                sum_topo += topo;
                ok += 1;
            }
            Err(EvalError::Unreachable(msg)) => {
                unreachable.get_or_insert(EvalError::Unreachable(msg));
            }
            Err(err) => {
                failures += 1;
                warn!("evaluation failed, skipping block: {err}");
            }
        });
        if let Some(err) = unreachable {
            return Err(SearchError::EvaluatorUnreachable(err));
        }

        if !buffer.is_empty() {
            for _ in 0..config.batch {
                let (arch, total) = &buffer[rng.gen_range(0..buffer.len())];
                replay(&mut q, &space, arch, *total, config.eta, config.gamma_q);
            }
        }

        let mean = |s: f64| if ok == 0 { f64::NAN } else { s / ok as f64 };
        log.push(LogRow {
            iteration: it + 1,
            samples_total,
            epsilon,
            best_r,
            mean_r: mean(sum_r),
            best_acc,
            mean_topo: mean(sum_topo),
        });
    }

    Ok(SearchResult {
        top_by_reward: top_k(&history, config.top_k, |s| s.reward),
        top_by_accuracy: top_k(&history, config.top_k, |s| s.accuracy),
        q,
        log,
        history,
        failures,
    })
}
