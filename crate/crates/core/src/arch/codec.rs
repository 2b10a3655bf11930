//! Canonical text form of a block, also used as the evaluation cache key.
//!
//! `{"layers":[{"op":"dwconv","k":3,"p":[1,0]}]}` with no whitespace.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{BlockArch, InvalidArch, Layer, OpCategory, OpKind, DEFAULT_MAX_LEN};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct ArchDoc {
    pub layers: Vec<LayerDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct LayerDoc {
    pub op: String,
    pub k: u8,
    pub p: [usize; 2],
}

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("malformed architecture text: {0}")]
    Syntax(#[from] serde_json::Error),
    #[error("layer {position}: unknown op {name:?}")]
    UnknownOp { position: usize, name: String },
    #[error("layer {position}: kernel {kernel} is not legal for {name}")]
    IllegalKernel { position: usize, name: String, kernel: u8 },
    #[error(transparent)]
    Invalid(#[from] InvalidArch),
}

impl ArchDoc {
    pub(crate) fn from_arch(arch: &BlockArch) -> Self {
        ArchDoc {
            layers: arch
                .layers()
                .iter()
                .map(|l| LayerDoc { op: l.op.category().name().to_string(), k: l.op.kernel(), p: [l.pred1, l.pred2] })
                .collect(),
        }
    }

    pub(crate) fn into_arch(self, max_len: usize) -> Result<BlockArch, CodecError> {
        let mut layers = Vec::with_capacity(self.layers.len());
        for (i, doc) in self.layers.into_iter().enumerate() {
            let position = i + 1;
            let category = OpCategory::from_name(&doc.op)
                .ok_or_else(|| CodecError::UnknownOp { position, name: doc.op.clone() })?;
            let op = OpKind::new(category, doc.k).ok_or(CodecError::IllegalKernel {
                position,
                name: doc.op,
                kernel: doc.k,
            })?;
            layers.push(Layer { position, op, pred1: doc.p[0], pred2: doc.p[1] });
        }
        Ok(BlockArch::new(layers, max_len)?)
    }
}

pub fn canonical_serialize(arch: &BlockArch) -> String {
    serde_json::to_string(&ArchDoc::from_arch(arch)).expect("architecture document serializes")
}

/// Parses the canonical form (any JSON whitespace accepted) under the default
/// length cap.
pub fn parse_arch(text: &str) -> Result<BlockArch, CodecError> {
    parse_arch_with_max_len(text, DEFAULT_MAX_LEN)
}

pub fn parse_arch_with_max_len(text: &str, max_len: usize) -> Result<BlockArch, CodecError> {
    let doc: ArchDoc = serde_json::from_str(text)?;
    doc.into_arch(max_len)
}
