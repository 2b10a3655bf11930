//! Sensitivity of the mirror score to three edits of the residual expert:
//! an extra conv before the shortcut add, an extra conv after it, and the
//! shortcut removed.

use mirror_nas::arch::{BlockArch, InvalidArch, LayerCode, OpKind};
use mirror_nas::features::arch_feature_count;
use mirror_nas::irl::{mirror_stimuli, MirrorWeights};

const DW: OpKind = OpKind::DWCONV3;

/// Smallest length cap that holds every variant.
pub const MIN_DIAG_MAX_LEN: usize = 4;

/// `(name, block)` for the expert and its three modifications.
pub fn modify_variants(max_len: usize) -> Result<Vec<(&'static str, BlockArch)>, InvalidArch> {
    let u = LayerCode::unary;
    let add = |a, b| LayerCode::binary(OpKind::ADD, a, b);
    Ok(vec![
        ("expert", BlockArch::from_codes([u(DW, 1), u(DW, 2), add(1, 3)], max_len)?),
        // Third conv inside the residual branch; the add now sums layer 3 and the input.
        ("modify1", BlockArch::from_codes([u(DW, 1), u(DW, 2), u(DW, 3), add(1, 4)], max_len)?),
        // Conv appended after the residual add.
        ("modify2", BlockArch::from_codes([u(DW, 1), u(DW, 2), add(1, 3), u(DW, 4)], max_len)?),
        // Shortcut removed: the add disappears and the block is a plain chain.
        ("modify3", BlockArch::from_codes([u(DW, 1), u(DW, 2)], max_len)?),
    ])
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagRow {
    pub variant: &'static str,
    /// `||mu(variant) - mu(expert)||_2`
    pub mu_delta: f64,
    /// `|F(variant) - F(expert)|`
    pub f_delta: f64,
}

pub const DIAG_HEADER: [&str; 3] = ["variant", "mu_delta_norm", "topology_delta_abs"];

pub fn modify_rows(weights: &MirrorWeights, max_len: usize) -> Result<Vec<DiagRow>, InvalidArch> {
    let variants = modify_variants(max_len)?;
    let expert = &variants[0].1;
    let mu_e = arch_feature_count(expert, weights.gamma);
    let f_e = mirror_stimuli(weights, expert)?;
    variants
        .iter()
        .map(|(name, arch)| {
            let mu = arch_feature_count(arch, weights.gamma);
            Ok(DiagRow {
                variant: name,
                mu_delta: (mu - mu_e).norm(),
                f_delta: (mirror_stimuli(weights, arch)? - f_e).abs(),
            })
        })
        .collect()
}
