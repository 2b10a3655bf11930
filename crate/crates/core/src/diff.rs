//! Differentiable search over a cell with continuous op logits, using the
//! mirror stimuli score as an extra objective.
//!
//! A cell has `nodes` nodes; node 0 is the block input and every pair
//! `(i, j)` with `i < j` is an edge carrying one logit per candidate op.
//! Sampling draws one op per edge independently from its softmax.
//!
//! Cell to block embedding (fixed, so that `phi` is defined for sampled
//! cells): nodes are visited in order `j = 1..nodes`. For each incoming edge
//! `(i, j)`, `i` ascending, one unary layer with the edge's op is emitted
//! whose predecessor is the code of node `i` (node 0 is the block input,
//! code 1). When a node has several incoming edges their layers are merged by
//! a left-to-right chain of `add` layers; the last layer emitted for node `j`
//! represents it. The block's `max_len` is `max(DEFAULT_MAX_LEN, layers)`.
//!
//! Sign convention: the expected topology score `L = sum_k p_k F(m_k)` is a
//! reward, so its gradient is ascended while the task loss is descended.

use std::fmt::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arch::{BlockArch, LayerCode, OpKind, DEFAULT_MAX_LEN};
use crate::irl::{mirror_stimuli, MirrorWeights};

/// Logits indexed `[edge][op]`, edges in [`AlphaCell::edges`] order.
pub type Logits = Vec<Vec<f64>>;

/// Largest joint space the exact routines will enumerate.
pub const MAX_EXACT_CONFIGS: usize = 1 << 20;

#[derive(Debug, Error)]
pub enum DiffError {
    #[error("a cell needs at least 2 nodes, got {0}")]
    TooFewNodes(usize),
    #[error("cell ops must be a nonempty list of unary ops")]
    BadOps,
    #[error("logit shape does not match {edges} edges x {ops} ops")]
    Shape { edges: usize, ops: usize },
    #[error("non-finite logit on edge ({i},{j})")]
    NonFinite { i: usize, j: usize },
    #[error("K must be at least 1")]
    ZeroSamples,
    #[error("cell has {0} joint configurations, too many to enumerate")]
    TooLarge(u128),
    #[error("logits diverged at step {step}")]
    Diverged { step: usize, trace: Vec<TraceRow> },
    #[error("malformed cell file: {0}")]
    Format(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlphaCell {
    nodes: usize,
    ops: Vec<OpKind>,
    logits: Logits,
}

fn edge_list(nodes: usize) -> Vec<(usize, usize)> {
    (1..nodes).flat_map(|j| (0..j).map(move |i| (i, j))).collect()
}

impl AlphaCell {
    /// All logits zero (uniform distribution).
    pub fn uniform(nodes: usize, ops: Vec<OpKind>) -> Result<Self, DiffError> {
        let edges = nodes.saturating_sub(1) * nodes / 2;
        let width = ops.len();
        AlphaCell::new(nodes, ops, vec![vec![0.0; width]; edges])
    }

    pub fn new(nodes: usize, ops: Vec<OpKind>, logits: Logits) -> Result<Self, DiffError> {
        if nodes < 2 {
            return Err(DiffError::TooFewNodes(nodes));
        }
        if ops.is_empty() || ops.iter().any(|op| op.is_binary()) {
            return Err(DiffError::BadOps);
        }
        let edges = edge_list(nodes);
        if logits.len() != edges.len() || logits.iter().any(|row| row.len() != ops.len()) {
            return Err(DiffError::Shape { edges: edges.len(), ops: ops.len() });
        }
        for (&(i, j), row) in edges.iter().zip(&logits) {
            if row.iter().any(|v| !v.is_finite()) {
                return Err(DiffError::NonFinite { i, j });
            }
        }
        Ok(AlphaCell { nodes, ops, logits })
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn ops(&self) -> &[OpKind] {
        &self.ops
    }

    pub fn logits(&self) -> &Logits {
        &self.logits
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        edge_list(self.nodes)
    }

    /// Number of layers in the embedded block.
    pub fn block_len(&self) -> usize {
        let edges = self.logits.len();
        let adds: usize = (1..self.nodes).map(|j| j - 1).sum();
        edges + adds
    }

    /// Cell file: `{"nodes":n,"logits":[{"i":0,"j":1,"op":"dwconv3","value":0.0},...]}`.
    pub fn to_json(&self) -> String {
        let entries = self
            .edges()
            .into_iter()
            .zip(&self.logits)
            .flat_map(|((i, j), row)| {
                self.ops.iter().zip(row).map(move |(op, &value)| LogitEntry { i, j, op: op.pool_name(), value })
            })
            .collect();
        serde_json::to_string_pretty(&CellFile { nodes: self.nodes, logits: entries }).expect("cell serializes")
    }

    /// Inverse of [`AlphaCell::to_json`]. The op list is taken from the
    /// first edge's entries, in file order.
    pub fn from_json(text: &str) -> Result<Self, DiffError> {
        let file: CellFile = serde_json::from_str(text).map_err(|e| DiffError::Format(e.to_string()))?;
        let mut ops: Vec<OpKind> = Vec::new();
        for entry in file.logits.iter().filter(|e| (e.i, e.j) == (0, 1)) {
            let op = OpKind::from_pool_name(&entry.op)
                .ok_or_else(|| DiffError::Format(format!("unknown op {:?}", entry.op)))?;
            ops.push(op);
        }
        let edges = edge_list(file.nodes);
        let mut logits = vec![vec![f64::NAN; ops.len()]; edges.len()];
        let mut seen = vec![vec![false; ops.len()]; edges.len()];
        for entry in &file.logits {
            let e = edges
                .iter()
                .position(|&p| p == (entry.i, entry.j))
                .ok_or_else(|| DiffError::Format(format!("no edge ({},{})", entry.i, entry.j)))?;
            let o = ops
                .iter()
                .position(|op| op.pool_name() == entry.op)
                .ok_or_else(|| DiffError::Format(format!("op {:?} not on edge (0,1)", entry.op)))?;
            if std::mem::replace(&mut seen[e][o], true) {
                return Err(DiffError::Format(format!("duplicate logit ({},{},{})", entry.i, entry.j, entry.op)));
            }
            logits[e][o] = entry.value;
        }
        if seen.iter().flatten().any(|s| !s) {
            return Err(DiffError::Format("missing logits".into()));
        }
        AlphaCell::new(file.nodes, ops, logits)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CellFile {
    nodes: usize,
    logits: Vec<LogitEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LogitEntry {
    i: usize,
    j: usize,
    op: String,
    value: f64,
}

/// Per-edge op probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchDistribution {
    pub nodes: usize,
    pub ops: Vec<OpKind>,
    pub probs: Vec<Vec<f64>>,
}

pub fn softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn softmax_probs(cell: &AlphaCell) -> ArchDistribution {
    ArchDistribution {
        nodes: cell.nodes,
        ops: cell.ops.clone(),
        probs: cell.logits.iter().map(|row| softmax(row)).collect(),
    }
}

/// Embeds one op choice per edge (indices into `ops`) as a block.
pub fn embed_cell(nodes: usize, ops: &[OpKind], choices: &[usize]) -> BlockArch {
    let edges = edge_list(nodes);
    assert_eq!(edges.len(), choices.len(), "one choice per edge");
    let mut codes: Vec<LayerCode> = Vec::new();
    // node_code[i] is the predecessor code that stands for node i.
    let mut node_code = vec![1usize];
    let mut e = 0;
    for j in 1..nodes {
        let mut merged: Option<usize> = None;
        for (i, &pred) in node_code.iter().enumerate() {
            debug_assert_eq!(edges[e], (i, j));
            codes.push(LayerCode::unary(ops[choices[e]], pred));
            let code = codes.len() + 1;
            merged = Some(match merged {
                None => code,
                Some(prev) => {
                    codes.push(LayerCode::binary(OpKind::ADD, prev, code));
                    codes.len() + 1
                }
            });
            e += 1;
        }
        node_code.push(merged.expect("node j has an edge from node 0"));
    }
    let max_len = DEFAULT_MAX_LEN.max(codes.len());
    BlockArch::from_codes(codes, max_len).expect("embedding yields a valid block")
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellSample {
    pub choices: Vec<usize>,
    pub arch: BlockArch,
    /// Joint probability: product of the chosen ops' edge probabilities.
    pub prob: f64,
}

fn draw<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (k, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    // Rounding left u above the cumulative sum: take the last positive entry.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

pub fn sample_discrete<R: Rng + ?Sized>(dist: &ArchDistribution, rng: &mut R) -> CellSample {
    let choices: Vec<usize> = dist.probs.iter().map(|row| draw(row, rng)).collect();
    let prob = choices.iter().zip(&dist.probs).map(|(&c, row)| row[c]).product();
    CellSample { arch: embed_cell(dist.nodes, &dist.ops, &choices), choices, prob }
}

fn score(w: &MirrorWeights, arch: &BlockArch) -> f64 {
    mirror_stimuli(w, arch).expect("embedded blocks are valid")
}

fn add_score_gradient(grad: &mut Logits, probs: &[Vec<f64>], choices: &[usize], weight: f64) {
    for ((g, p), &c) in grad.iter_mut().zip(probs).zip(choices) {
        for (o, (gv, pv)) in g.iter_mut().zip(p).enumerate() {
            let onehot = if o == c { 1.0 } else { 0.0 };
            *gv += weight * (onehot - pv);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopologyEstimate {
    /// Estimate of `sum_k p_k F(m_k)`.
    pub value: f64,
    pub grad: Logits,
}

/// REINFORCE: `L ~ mean F(m_k)`, `grad ~ (1/K) sum_k F(m_k) grad log p_k`,
/// where `grad log p_k` is one-hot minus probabilities on every edge.
pub fn topology_loss_and_grad<R: Rng + ?Sized>(
    cell: &AlphaCell,
    w: &MirrorWeights,
    k: usize,
    rng: &mut R,
) -> Result<TopologyEstimate, DiffError> {
    if k == 0 {
        return Err(DiffError::ZeroSamples);
    }
    let dist = softmax_probs(cell);
    let mut grad = zeros_like(&cell.logits);
    let mut value = 0.0;
    for _ in 0..k {
        let sample = sample_discrete(&dist, rng);
        let f = score(w, &sample.arch);
        value += f;
        add_score_gradient(&mut grad, &dist.probs, &sample.choices, f);
    }
    let scale = 1.0 / k as f64;
    grad.iter_mut().flatten().for_each(|g| *g *= scale);
    Ok(TopologyEstimate { value: value * scale, grad })
}

fn joint_configs(cell: &AlphaCell) -> Result<usize, DiffError> {
    let total = (cell.ops.len() as u128).pow(cell.logits.len() as u32);
    if total > MAX_EXACT_CONFIGS as u128 {
        return Err(DiffError::TooLarge(total));
    }
    Ok(total as usize)
}

/// `L = sum_k p_k F(m_k)` and its gradient by full enumeration.
pub fn exact_topology(cell: &AlphaCell, w: &MirrorWeights) -> Result<TopologyEstimate, DiffError> {
    let total = joint_configs(cell)?;
    let dist = softmax_probs(cell);
    let width = cell.ops.len();
    let mut grad = zeros_like(&cell.logits);
    let mut value = 0.0;
    let mut choices = vec![0usize; cell.logits.len()];
    for _ in 0..total {
        let p: f64 = choices.iter().zip(&dist.probs).map(|(&c, row)| row[c]).product();
        let f = score(w, &embed_cell(cell.nodes, &cell.ops, &choices));
        value += p * f;
        add_score_gradient(&mut grad, &dist.probs, &choices, p * f);
        for c in choices.iter_mut() {
            *c += 1;
            if *c < width {
                break;
            }
            *c = 0;
        }
    }
    Ok(TopologyEstimate { value, grad })
}

fn zeros_like(logits: &Logits) -> Logits {
    logits.iter().map(|row| vec![0.0; row.len()]).collect()
}

/// A differentiable scalar objective on the logits.
pub trait TaskLoss {
    fn loss_and_grad(&self, logits: &Logits) -> (f64, Logits);
}

pub struct ZeroLoss;

impl TaskLoss for ZeroLoss {
    fn loss_and_grad(&self, logits: &Logits) -> (f64, Logits) {
        (0.0, zeros_like(logits))
    }
}

/// `0.5 * sum (theta - target)^2`, minimized at `target`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticLoss {
    pub target: Logits,
}

impl QuadraticLoss {
    /// Target logits descending by op index on every edge: `target[e][o] = -o`.
    pub fn default_for(cell: &AlphaCell) -> Self {
        QuadraticLoss { target: cell.logits.iter().map(|row| (0..row.len()).map(|o| -(o as f64)).collect()).collect() }
    }
}

impl TaskLoss for QuadraticLoss {
    fn loss_and_grad(&self, logits: &Logits) -> (f64, Logits) {
        let mut loss = 0.0;
        let grad = logits
            .iter()
            .zip(&self.target)
            .map(|(row, t)| {
                row.iter()
                    .zip(t)
                    .map(|(v, t)| {
                        loss += 0.5 * (v - t) * (v - t);
                        v - t
                    })
                    .collect()
            })
            .collect();
        (loss, grad)
    }
}

/// How the topology gradient is obtained at each step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TopologyGradient {
    Reinforce { k: usize },
    Exact,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiffConfig {
    pub scale: f64,
    pub steps: usize,
    pub lr: f64,
    pub gradient: TopologyGradient,
}

impl Default for DiffConfig {
    fn default() -> Self {
        DiffConfig { scale: 0.5, steps: 500, lr: 0.1, gradient: TopologyGradient::Reinforce { k: 5 } }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub task_loss: f64,
    pub topo_estimate: f64,
    /// Norm of the combined update direction.
    pub grad_norm: f64,
}

pub const TRACE_HEADER: &str = "step,task_loss,topo_estimate,grad_norm";

pub fn trace_csv(trace: &[TraceRow]) -> String {
    let mut out = format!("{TRACE_HEADER}\n");
    for r in trace {
        let _ = writeln!(out, "{},{},{},{}", r.step, r.task_loss, r.topo_estimate, r.grad_norm);
    }
    out
}

/// Descends `task_loss - scale * L` for `steps` steps:
/// `theta <- theta - lr * (grad task - scale * grad L)`.
/// With `scale == 0` the topology term is not computed at all.
pub fn run_diff_search<R: Rng + ?Sized>(
    cell: &AlphaCell,
    w: &MirrorWeights,
    task: &dyn TaskLoss,
    config: &DiffConfig,
    rng: &mut R,
) -> Result<(AlphaCell, Vec<TraceRow>), DiffError> {
    let mut cell = cell.clone();
    let mut trace = Vec::with_capacity(config.steps);
    for step in 1..=config.steps {
        let (task_loss, mut direction) = task.loss_and_grad(&cell.logits);
        let mut topo_estimate = 0.0;
        if config.scale != 0.0 {
            let topo = match config.gradient {
                TopologyGradient::Reinforce { k } => topology_loss_and_grad(&cell, w, k, rng)?,
                TopologyGradient::Exact => exact_topology(&cell, w)?,
            };
            topo_estimate = topo.value;
            for (d, g) in direction.iter_mut().flatten().zip(topo.grad.iter().flatten()) {
                *d -= config.scale * g;
            }
        }
        let grad_norm = direction.iter().flatten().map(|d| d * d).sum::<f64>().sqrt();
        for (v, d) in cell.logits.iter_mut().flatten().zip(direction.iter().flatten()) {
            *v -= config.lr * d;
        }
        trace.push(TraceRow { step, task_loss, topo_estimate, grad_norm });
        if cell.logits.iter().flatten().any(|v| !v.is_finite()) {
            return Err(DiffError::Diverged { step, trace });
        }
    }
    Ok((cell, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::to_dot;

    #[test]
    fn embedding_of_three_nodes() {
        let ops = [OpKind::DWCONV3, OpKind::MAXPOOL3];
        let arch = embed_cell(3, &ops, &[0, 1, 0]);
        let codes: Vec<LayerCode> = arch.layers().iter().map(|l| l.code()).collect();
        assert_eq!(
            codes,
            vec![
                LayerCode::unary(OpKind::DWCONV3, 1),
                LayerCode::unary(OpKind::MAXPOOL3, 1),
                LayerCode::unary(OpKind::DWCONV3, 2),
                LayerCode::binary(OpKind::ADD, 3, 4),
            ]
        );
        assert!(to_dot(&arch).starts_with("digraph"));
    }

    #[test]
    fn block_len_matches_embedding() {
        for nodes in 2..6 {
            let cell = AlphaCell::uniform(nodes, vec![OpKind::IDENTITY]).unwrap();
            let arch = embed_cell(nodes, cell.ops(), &vec![0; cell.edges().len()]);
            assert_eq!(arch.len(), cell.block_len());
        }
    }

    #[test]
    fn rejects_bad_cells() {
        assert!(matches!(AlphaCell::uniform(1, vec![OpKind::DWCONV3]), Err(DiffError::TooFewNodes(1))));
        assert!(matches!(AlphaCell::uniform(2, vec![OpKind::ADD]), Err(DiffError::BadOps)));
        assert!(matches!(AlphaCell::uniform(2, vec![]), Err(DiffError::BadOps)));
        assert!(matches!(
            AlphaCell::new(2, vec![OpKind::DWCONV3], vec![vec![f64::INFINITY]]),
            Err(DiffError::NonFinite { i: 0, j: 1 })
        ));
        assert!(matches!(
            AlphaCell::new(3, vec![OpKind::DWCONV3], vec![vec![0.0]]),
            Err(DiffError::Shape { edges: 3, ops: 1 })
        ));
    }

    #[test]
    fn cell_file_round_trip() {
        let cell = AlphaCell::new(
            3,
            vec![OpKind::DWCONV5, OpKind::AVGPOOL3],
            vec![vec![0.25, -1.0], vec![3.0, 0.0], vec![-0.5, 1e-9]],
        )
        .unwrap();
        assert_eq!(AlphaCell::from_json(&cell.to_json()).unwrap(), cell);
        assert!(AlphaCell::from_json("{\"nodes\":2,\"logits\":[]}").is_err());
    }

    #[test]
    fn quadratic_gradient() {
        let q = QuadraticLoss { target: vec![vec![1.0, -1.0]] };
        let (loss, grad) = q.loss_and_grad(&vec![vec![2.0, 1.0]]);
        assert_eq!(loss, 0.5 * (1.0 + 4.0));
        assert_eq!(grad, vec![vec![1.0, 2.0]]);
    }
}
