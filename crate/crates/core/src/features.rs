//! Per-layer state features and the discounted feature count of a block.
//!
//! A layer is encoded as a 9-vector:
//!
//! ```text
//! [ onehot(category) (6) | kernel / 5 | pred1 / (max_len+1) | pred2 / (max_len+1) ]
//! ```
//!
//! and a block as `mu = sum_{t=1..T} gamma^t * phi(layer_t)`. The first layer
//! carries weight `gamma^1`.

use std::fmt::Write;
use std::ops::{Add, Index, Mul, Sub};

use crate::arch::{BlockArch, Layer, Trajectory};

pub const FEATURE_DIM: usize = 9;

/// Largest kernel in the pool; used to scale the kernel component into [0, 1].
const KERNEL_SCALE: f64 = 5.0;

pub type FeatureVec = [f64; FEATURE_DIM];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateFeature(pub FeatureVec);

impl StateFeature {
    pub fn dot(&self, w: &FeatureVec) -> f64 {
        dot(&self.0, w)
    }
}

pub fn state_feature(layer: &Layer, max_len: usize) -> StateFeature {
    let mut v = [0.0; FEATURE_DIM];
    v[layer.op.category().index()] = 1.0;
    v[6] = f64::from(layer.op.kernel()) / KERNEL_SCALE;
    let scale = (max_len + 1) as f64;
    v[7] = layer.pred1 as f64 / scale;
    v[8] = layer.pred2 as f64 / scale;
    StateFeature(v)
}

/// Discounted feature count of a whole block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureCount {
    pub values: FeatureVec,
    pub gamma: f64,
}

impl FeatureCount {
    pub fn zero(gamma: f64) -> Self {
        FeatureCount { values: [0.0; FEATURE_DIM], gamma }
    }

    pub fn norm(&self) -> f64 {
        norm(&self.values)
    }

    pub fn dot(&self, w: &FeatureVec) -> f64 {
        dot(&self.values, w)
    }

    /// Plain-text export: a `# gamma=` header then one value per line.
    pub fn to_text(&self) -> String {
        let mut out = format!("# gamma={}\n", self.gamma);
        for v in self.values {
            let _ = writeln!(out, "{v}");
        }
        out
    }

    pub fn from_text(text: &str) -> Option<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let gamma = lines.next()?.strip_prefix("# gamma=")?.parse().ok()?;
        let mut values = [0.0; FEATURE_DIM];
        for slot in values.iter_mut() {
            *slot = lines.next()?.parse().ok()?;
        }
        lines.next().is_none().then_some(FeatureCount { values, gamma })
    }
}

impl Index<usize> for FeatureCount {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.values[i]
    }
}

fn check_gamma(gamma: f64) {
    assert!(gamma > 0.0 && gamma <= 1.0, "discount must lie in (0, 1], got {gamma}");
}

/// `mu = sum_t gamma^t phi(s_t)` over the trajectory's states.
pub fn feature_count(traj: &Trajectory, gamma: f64) -> FeatureCount {
    discounted_sum(traj.states(), traj.max_len, gamma)
}

/// Feature count straight from a block's layers; equal to
/// `feature_count(to_trajectory(arch), gamma)` for valid blocks.
pub fn arch_feature_count(arch: &BlockArch, gamma: f64) -> FeatureCount {
    discounted_sum(arch.layers().iter(), arch.max_len(), gamma)
}

fn discounted_sum<'a>(layers: impl Iterator<Item = &'a Layer>, max_len: usize, gamma: f64) -> FeatureCount {
    check_gamma(gamma);
    let mut mu = FeatureCount::zero(gamma);
    let mut weight = 1.0;
    for layer in layers {
        weight *= gamma;
        let phi = state_feature(layer, max_len);
        for (m, p) in mu.values.iter_mut().zip(phi.0) {
            *m += weight * p;
        }
    }
    mu
}

pub fn dot(a: &FeatureVec, b: &FeatureVec) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &FeatureVec) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity, defined as 0 when either vector is zero.
pub fn cosine_similarity(a: &FeatureVec, b: &FeatureVec) -> f64 {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot(a, b) / (na * nb)
    }
}

impl Add for FeatureCount {
    type Output = FeatureCount;
    fn add(mut self, rhs: FeatureCount) -> FeatureCount {
        for (a, b) in self.values.iter_mut().zip(rhs.values) {
            *a += b;
        }
        self
    }
}

impl Sub for FeatureCount {
    type Output = FeatureCount;
    fn sub(mut self, rhs: FeatureCount) -> FeatureCount {
        for (a, b) in self.values.iter_mut().zip(rhs.values) {
            *a -= b;
        }
        self
    }
}

impl Mul<f64> for FeatureCount {
    type Output = FeatureCount;
    fn mul(mut self, rhs: f64) -> FeatureCount {
        for a in self.values.iter_mut() {
            *a *= rhs;
        }
        self
    }
}
