//! Block architecture representation.
//!
//! A block is a small DAG of layers. Each layer applies one operation from the
//! candidate pool to one or two earlier tensors, addressed by predecessor codes:
//!
//! ```text
//! 0      absent (second slot of a unary layer)
//! 1      the block input
//! i + 1  the output of the layer at position i
//! ```
//!
//! All layers without a successor are concatenated into the block output. That
//! concat is implicit and never stored as a layer.

mod codec;
mod dot;
mod enumerate;
mod trajectory;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use codec::{canonical_serialize, parse_arch, parse_arch_with_max_len, CodecError};
pub use dot::to_dot;
pub use enumerate::{count_blocks, enumerate_blocks, layer_choices, BlockEnumerator};
pub use trajectory::{from_trajectory, to_trajectory, Action, Step, Trajectory, TrajectoryError};

/// Default cap on the number of layers in a block.
pub const DEFAULT_MAX_LEN: usize = 24;

/// Predecessor code meaning "no predecessor".
pub const PRED_ABSENT: usize = 0;
/// Predecessor code addressing the block input.
pub const PRED_INPUT: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OpCategory {
    DwConv,
    MaxPool,
    AvgPool,
    Identity,
    Add,
    Concat,
}

impl OpCategory {
    pub const ALL: [OpCategory; 6] = [
        OpCategory::DwConv,
        OpCategory::MaxPool,
        OpCategory::AvgPool,
        OpCategory::Identity,
        OpCategory::Add,
        OpCategory::Concat,
    ];

    /// Position of this category in the one-hot block of the state feature.
    pub fn index(self) -> usize {
        match self {
            OpCategory::DwConv => 0,
            OpCategory::MaxPool => 1,
            OpCategory::AvgPool => 2,
            OpCategory::Identity => 3,
            OpCategory::Add => 4,
            OpCategory::Concat => 5,
        }
    }

    /// Name used by the architecture file format.
    pub fn name(self) -> &'static str {
        match self {
            OpCategory::DwConv => "dwconv",
            OpCategory::MaxPool => "maxpool",
            OpCategory::AvgPool => "avgpool",
            OpCategory::Identity => "identity",
            OpCategory::Add => "add",
            OpCategory::Concat => "concat",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        OpCategory::ALL.into_iter().find(|c| c.name() == name)
    }

    pub fn is_binary(self) -> bool {
        matches!(self, OpCategory::Add | OpCategory::Concat)
    }

    /// Kernel sizes accepted for this category. Kernel-less ops only accept 0.
    pub fn legal_kernels(self) -> &'static [u8] {
        match self {
            OpCategory::DwConv => &[1, 3, 5],
            OpCategory::MaxPool | OpCategory::AvgPool => &[3, 5],
            OpCategory::Identity | OpCategory::Add | OpCategory::Concat => &[0],
        }
    }
}

/// One candidate operation: a category plus its kernel size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct OpKind {
    category: OpCategory,
    kernel: u8,
}

impl OpKind {
    pub const DWCONV1: OpKind = OpKind { category: OpCategory::DwConv, kernel: 1 };
    pub const DWCONV3: OpKind = OpKind { category: OpCategory::DwConv, kernel: 3 };
    pub const DWCONV5: OpKind = OpKind { category: OpCategory::DwConv, kernel: 5 };
    pub const MAXPOOL3: OpKind = OpKind { category: OpCategory::MaxPool, kernel: 3 };
    pub const MAXPOOL5: OpKind = OpKind { category: OpCategory::MaxPool, kernel: 5 };
    pub const AVGPOOL3: OpKind = OpKind { category: OpCategory::AvgPool, kernel: 3 };
    pub const AVGPOOL5: OpKind = OpKind { category: OpCategory::AvgPool, kernel: 5 };
    pub const IDENTITY: OpKind = OpKind { category: OpCategory::Identity, kernel: 0 };
    pub const ADD: OpKind = OpKind { category: OpCategory::Add, kernel: 0 };
    pub const CONCAT: OpKind = OpKind { category: OpCategory::Concat, kernel: 0 };

    /// The full candidate pool.
    pub const POOL: [OpKind; 10] = [
        OpKind::DWCONV1,
        OpKind::DWCONV3,
        OpKind::DWCONV5,
        OpKind::MAXPOOL3,
        OpKind::MAXPOOL5,
        OpKind::AVGPOOL3,
        OpKind::AVGPOOL5,
        OpKind::IDENTITY,
        OpKind::ADD,
        OpKind::CONCAT,
    ];

    /// Builds an op, rejecting kernels that are illegal for the category.
    pub fn new(category: OpCategory, kernel: u8) -> Option<Self> {
        category.legal_kernels().contains(&kernel).then_some(OpKind { category, kernel })
    }

    pub fn category(self) -> OpCategory {
        self.category
    }

    pub fn kernel(self) -> u8 {
        self.kernel
    }

    pub fn is_binary(self) -> bool {
        self.category.is_binary()
    }

    /// Compact pool name, e.g. `dwconv3`, `identity`.
    pub fn pool_name(self) -> String {
        match self.kernel {
            0 => self.category.name().to_string(),
            k => format!("{}{}", self.category.name(), k),
        }
    }

    /// Parses a compact pool name as produced by [`OpKind::pool_name`].
    pub fn from_pool_name(name: &str) -> Option<Self> {
        let split = name.find(|c: char| c.is_ascii_digit()).unwrap_or(name.len());
        let category = OpCategory::from_name(&name[..split])?;
        let kernel = if split == name.len() { 0 } else { name[split..].parse().ok()? };
        OpKind::new(category, kernel)
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.pool_name())
    }
}

/// Parses a comma-separated op pool such as `dwconv3,identity,add`, or `all`
/// for the full ten-op pool.
pub fn parse_pool(text: &str) -> Option<Vec<OpKind>> {
    if text.trim() == "all" {
        return Some(OpKind::POOL.to_vec());
    }
    let pool: Option<Vec<OpKind>> =
        text.split(',').map(str::trim).filter(|s| !s.is_empty()).map(OpKind::from_pool_name).collect();
    pool.filter(|p| !p.is_empty())
}

/// A layer decision without its position: what the agent actually picks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LayerCode {
    pub op: OpKind,
    pub pred1: usize,
    pub pred2: usize,
}

impl LayerCode {
    pub fn unary(op: OpKind, pred: usize) -> Self {
        LayerCode { op, pred1: pred, pred2: PRED_ABSENT }
    }

    pub fn binary(op: OpKind, pred1: usize, pred2: usize) -> Self {
        LayerCode { op, pred1, pred2 }
    }

    pub fn at(self, position: usize) -> Layer {
        Layer { position, op: self.op, pred1: self.pred1, pred2: self.pred2 }
    }

    /// Whether this decision is legal as the layer at `position` (1-based).
    pub fn is_legal_at(&self, position: usize) -> bool {
        self.at(position).violations().is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Layer {
    /// 1-based position in the block.
    pub position: usize,
    pub op: OpKind,
    pub pred1: usize,
    pub pred2: usize,
}

impl Layer {
    pub fn code(&self) -> LayerCode {
        LayerCode { op: self.op, pred1: self.pred1, pred2: self.pred2 }
    }

    /// Predecessor codes that are actually present.
    pub fn preds(&self) -> impl Iterator<Item = usize> {
        [self.pred1, self.pred2].into_iter().filter(|&p| p != PRED_ABSENT)
    }

    fn violations(&self) -> Vec<ViolationKind> {
        let mut out = Vec::new();
        if !self.op.category.legal_kernels().contains(&self.op.kernel) {
            out.push(ViolationKind::IllegalKernel);
        }
        if self.pred1 == PRED_ABSENT {
            out.push(ViolationKind::MissingFirstPredecessor);
        }
        if self.op.is_binary() {
            if self.pred2 == PRED_ABSENT {
                out.push(ViolationKind::BinaryMissingSecondPredecessor);
            } else if self.pred1 == self.pred2 {
                out.push(ViolationKind::DuplicatePredecessors);
            }
        } else if self.pred2 != PRED_ABSENT {
            out.push(ViolationKind::UnaryWithSecondPredecessor);
        }
        // Layer t may reference codes 1..=t (input or layers 1..t-1).
        if self.preds().any(|p| p > self.position) {
            out.push(ViolationKind::ForwardReference);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ViolationKind {
    EmptyBlock,
    LengthExceedsMaxLen,
    PositionMismatch,
    IllegalKernel,
    MissingFirstPredecessor,
    UnaryWithSecondPredecessor,
    BinaryMissingSecondPredecessor,
    DuplicatePredecessors,
    ForwardReference,
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let msg = match self {
            ViolationKind::EmptyBlock => "block has no layers",
            ViolationKind::LengthExceedsMaxLen => "length exceeds max_len",
            ViolationKind::PositionMismatch => "layer position out of order",
            ViolationKind::IllegalKernel => "kernel size illegal for operation",
            ViolationKind::MissingFirstPredecessor => "first predecessor absent",
            ViolationKind::UnaryWithSecondPredecessor => "unary op with second predecessor",
            ViolationKind::BinaryMissingSecondPredecessor => "binary op missing second predecessor",
            ViolationKind::DuplicatePredecessors => "binary op with identical predecessors",
            ViolationKind::ForwardReference => "predecessor references a later layer",
        };
        f.write_str(msg)
    }
}

/// One invariant violation; `position` is 0 for block-level violations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub position: usize,
    pub kind: ViolationKind,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.position == 0 {
            write!(f, "block: {}", self.kind)
        } else {
            write!(f, "layer {}: {}", self.position, self.kind)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid block architecture: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
pub struct InvalidArch(pub Vec<Violation>);

/// A block architecture. Construct through [`BlockArch::new`] or
/// [`BlockArch::from_codes`] to get a validated value; [`BlockArch::unchecked`]
/// exists for inspecting malformed input with [`validate`].
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BlockArch {
    layers: Vec<Layer>,
    max_len: usize,
}

impl BlockArch {
    pub fn new(layers: Vec<Layer>, max_len: usize) -> Result<Self, InvalidArch> {
        let arch = BlockArch { layers, max_len };
        let violations = validate(&arch);
        if violations.is_empty() {
            Ok(arch)
        } else {
            Err(InvalidArch(violations))
        }
    }

    /// Builds a block from position-free layer codes, numbering them 1..n.
    pub fn from_codes(codes: impl IntoIterator<Item = LayerCode>, max_len: usize) -> Result<Self, InvalidArch> {
        let layers = codes.into_iter().enumerate().map(|(i, c)| c.at(i + 1)).collect();
        BlockArch::new(layers, max_len)
    }

    pub fn unchecked(layers: Vec<Layer>, max_len: usize) -> Self {
        BlockArch { layers, max_len }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    /// Same layers under a different length cap (revalidated).
    pub fn with_max_len(&self, max_len: usize) -> Result<Self, InvalidArch> {
        BlockArch::new(self.layers.clone(), max_len)
    }

    /// Positions of layers that no other layer consumes; these feed the
    /// implicit output concat.
    pub fn output_layers(&self) -> Vec<usize> {
        let mut consumed = vec![false; self.layers.len() + 1];
        for layer in &self.layers {
            for p in layer.preds() {
                if p >= 2 && p - 1 <= self.layers.len() {
                    consumed[p - 1] = true;
                }
            }
        }
        (1..=self.layers.len()).filter(|&i| !consumed[i]).collect()
    }
}

/// Checks every block invariant and returns all violations found.
pub fn validate(arch: &BlockArch) -> Vec<Violation> {
    let mut out = Vec::new();
    if arch.layers.is_empty() {
        out.push(Violation { position: 0, kind: ViolationKind::EmptyBlock });
    }
    if arch.layers.len() > arch.max_len {
        out.push(Violation { position: 0, kind: ViolationKind::LengthExceedsMaxLen });
    }
    for (i, layer) in arch.layers.iter().enumerate() {
        if layer.position != i + 1 {
            out.push(Violation { position: i + 1, kind: ViolationKind::PositionMismatch });
        }
        out.extend(layer.violations().into_iter().map(|kind| Violation { position: i + 1, kind }));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kinds(arch: &BlockArch) -> Vec<ViolationKind> {
        validate(arch).into_iter().map(|v| v.kind).collect()
    }

    #[test]
    fn minimal_block_is_valid() {
        let arch = BlockArch::from_codes([LayerCode::unary(OpKind::DWCONV3, PRED_INPUT)], 24);
        assert!(arch.is_ok());
    }

    #[test]
    fn binary_op_with_identical_preds() {
        let arch = BlockArch::unchecked(vec![LayerCode::binary(OpKind::ADD, 1, 1).at(1)], 24);
        let v = validate(&arch);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].position, 1);
        assert_eq!(v[0].kind, ViolationKind::DuplicatePredecessors);
        assert_eq!(v[0].to_string(), "layer 1: binary op with identical predecessors");
    }

    #[test]
    fn chain_longer_than_cap() {
        let layers = (1..=25).map(|t| LayerCode::unary(OpKind::DWCONV3, t).at(t)).collect();
        let arch = BlockArch::unchecked(layers, 24);
        assert_eq!(kinds(&arch), vec![ViolationKind::LengthExceedsMaxLen]);
        assert!(validate(&arch)[0].to_string().contains("length exceeds max_len"));
    }

    #[test]
    fn reports_every_violation() {
        let layers = vec![
            Layer { position: 1, op: OpKind::IDENTITY, pred1: 0, pred2: 1 },
            Layer { position: 3, op: OpKind::CONCAT, pred1: 5, pred2: 0 },
        ];
        let got = kinds(&BlockArch::unchecked(layers, 24));
        assert!(got.contains(&ViolationKind::MissingFirstPredecessor));
        assert!(got.contains(&ViolationKind::UnaryWithSecondPredecessor));
        assert!(got.contains(&ViolationKind::PositionMismatch));
        assert!(got.contains(&ViolationKind::BinaryMissingSecondPredecessor));
        assert!(got.contains(&ViolationKind::ForwardReference));
        assert!(kinds(&BlockArch::unchecked(vec![], 24)).contains(&ViolationKind::EmptyBlock));
    }

    #[test]
    fn kernel_legality() {
        assert!(OpKind::new(OpCategory::DwConv, 3).is_some());
        assert!(OpKind::new(OpCategory::MaxPool, 1).is_none());
        assert!(OpKind::new(OpCategory::Identity, 3).is_none());
        assert!(OpKind::new(OpCategory::Add, 0).is_some());
        assert!(OpKind::POOL.iter().all(|op| OpKind::new(op.category(), op.kernel()) == Some(*op)));
    }

    #[test]
    fn pool_names_round_trip() {
        for op in OpKind::POOL {
            assert_eq!(OpKind::from_pool_name(&op.pool_name()), Some(op));
        }
        assert_eq!(parse_pool("dwconv3, identity,add"), Some(vec![OpKind::DWCONV3, OpKind::IDENTITY, OpKind::ADD]));
        assert_eq!(parse_pool("dwconv4"), None);
        assert_eq!(parse_pool("conv3"), None);
        assert_eq!(parse_pool(""), None);
    }

    #[test]
    fn identity_chains_allowed() {
        let arch = BlockArch::from_codes((1..=4).map(|t| LayerCode::unary(OpKind::IDENTITY, t)), 24);
        assert!(arch.is_ok());
    }

    #[test]
    fn output_layers_are_successorless() {
        let arch = BlockArch::from_codes(
            [
                LayerCode::unary(OpKind::DWCONV3, 1),
                LayerCode::unary(OpKind::DWCONV3, 2),
                LayerCode::binary(OpKind::ADD, 1, 3),
            ],
            24,
        )
        .unwrap();
        assert_eq!(arch.output_layers(), vec![3]);
        let fan =
            BlockArch::from_codes([LayerCode::unary(OpKind::DWCONV3, 1), LayerCode::unary(OpKind::MAXPOOL3, 1)], 24)
                .unwrap();
        assert_eq!(fan.output_layers(), vec![1, 2]);
    }
}
