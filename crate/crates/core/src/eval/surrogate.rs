use sha2::{Digest, Sha256};

use crate::arch::{canonical_serialize, BlockArch};
use crate::features::{arch_feature_count, cosine_similarity, FeatureCount};

use super::{EvalError, Evaluator};

/// Synthetic accuracy landscape:
///
/// ```text
/// acc = clamp(base + sim_weight * cos(mu(arch), reference)
///             - len_penalty * |layers| + noise(arch, seed), 0, 100)
/// ```
///
/// `mu(arch)` uses the discount stored in `reference`. The noise term is a
/// pure function of the canonical serialization and the seed.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateParams {
    pub base: f64,
    pub sim_weight: f64,
    pub len_penalty: f64,
    pub noise_amp: f64,
    pub reference: FeatureCount,
    pub seed: u64,
}

impl SurrogateParams {
    /// Default constants with `reference = mu(expert)`.
    pub fn for_reference(expert: &BlockArch, gamma: f64) -> Self {
        SurrogateParams {
            base: 50.0,
            sim_weight: 40.0,
            len_penalty: 0.8,
            noise_amp: 1.0,
            reference: arch_feature_count(expert, gamma),
            seed: 0,
        }
    }
}

/// Deterministic noise in `[-amp, amp]`: the first 8 bytes (little endian)
/// of `sha256(seed_le || canonical)`, top 53 bits mapped to `[0, 1)`.
pub fn surrogate_noise(arch: &BlockArch, seed: u64, amp: f64) -> f64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(canonical_serialize(arch).as_bytes());
    let digest = hasher.finalize();
    let mut head = [0u8; 8];
    head.copy_from_slice(&digest[..8]);
    let unit = (u64::from_le_bytes(head) >> 11) as f64 / (1u64 << 53) as f64;
    amp * (2.0 * unit - 1.0)
}

pub fn surrogate_accuracy(arch: &BlockArch, params: &SurrogateParams) -> f64 {
    let mu = arch_feature_count(arch, params.reference.gamma);
    let sim = cosine_similarity(&mu.values, &params.reference.values);
    let noise = if params.noise_amp == 0.0 { 0.0 } else { surrogate_noise(arch, params.seed, params.noise_amp) };
    let raw = params.base + params.sim_weight * sim - params.len_penalty * arch.len() as f64 + noise;
    raw.clamp(0.0, 100.0)
}

#[derive(Debug, Clone)]
pub struct SurrogateEvaluator {
    pub params: SurrogateParams,
}

impl SurrogateEvaluator {
    pub fn new(params: SurrogateParams) -> Self {
        SurrogateEvaluator { params }
    }
}

impl Evaluator for SurrogateEvaluator {
    fn evaluate(&self, arch: &BlockArch) -> Result<f64, EvalError> {
        Ok(surrogate_accuracy(arch, &self.params))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{LayerCode, OpKind};
    use crate::irl::expert_library;

    #[test]
    fn expert_scores_full_similarity() {
        let expert = expert_library("resnet_block").unwrap().arch;
        let params = SurrogateParams { noise_amp: 0.0, ..SurrogateParams::for_reference(&expert, 0.9) };
        let acc = surrogate_accuracy(&expert, &params);
        assert!((acc - (50.0 + 40.0 - 0.8 * 3.0)).abs() < 1e-12);
    }

    #[test]
    fn length_only_when_similarity_off() {
        let expert = expert_library("resnet_block").unwrap().arch;
        let params = SurrogateParams {
            noise_amp: 0.0,
            sim_weight: 0.0,
            len_penalty: 30.0,
            ..SurrogateParams::for_reference(&expert, 0.9)
        };
        let one = BlockArch::from_codes([LayerCode::unary(OpKind::IDENTITY, 1)], 24).unwrap();
        assert_eq!(surrogate_accuracy(&one, &params), 20.0);
        // 50 - 90 clamps to 0.
        assert_eq!(surrogate_accuracy(&expert, &params), 0.0);
    }

    #[test]
    fn noise_is_bounded_and_stable() {
        let arch = expert_library("plain_chain").unwrap().arch;
        let a = surrogate_noise(&arch, 7, 1.0);
        assert_eq!(a, surrogate_noise(&arch, 7, 1.0));
        assert_ne!(a, surrogate_noise(&arch, 8, 1.0));
        assert!((-1.0..=1.0).contains(&a));
        assert_eq!(surrogate_noise(&arch, 7, 2.5), 2.5 * a);
    }

    #[test]
    fn zero_reference_gives_zero_similarity() {
        let arch = expert_library("plain_chain").unwrap().arch;
        let mut params = SurrogateParams::for_reference(&arch, 0.9);
        params.reference = FeatureCount::zero(0.9);
        params.noise_amp = 0.0;
        assert!((surrogate_accuracy(&arch, &params) - (50.0 - 1.6)).abs() < 1e-12);
    }
}
