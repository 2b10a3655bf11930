//! Max-margin weight fitting on the unit ball.
//!
//! Maximizes `min_j w . (mu* - mu_j)` subject to `||w||_2 <= 1` by projected
//! subgradient ascent: step `1/sqrt(k)`, fixed iteration count, best iterate
//! kept. The objective is concave (a min of linear functions) and the feasible
//! set is convex, so this converges to the optimum.
//!
//! Subgradient iterates only approach a face of the optimum set. A final
//! polish projects `w` onto the null space of the near-active gaps and keeps
//! the result when it does not lower the margin; when the optimum sits where
//! those gaps vanish (the expert is tied with discovered blocks) this lands on
//! it exactly instead of within the step size.

use crate::features::{dot, norm, FeatureCount, FeatureVec, FEATURE_DIM};

pub const DEFAULT_MARGIN_ITERATIONS: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginSolution {
    pub w: FeatureVec,
    pub delta: f64,
}

fn project_unit_ball(w: &mut FeatureVec) {
    let n = norm(w);
    if n > 1.0 {
        for x in w.iter_mut() {
            *x /= n;
        }
    }
}

fn min_margin(w: &FeatureVec, diffs: &[FeatureVec]) -> (usize, f64) {
    diffs
        .iter()
        .enumerate()
        .map(|(j, d)| (j, dot(w, d)))
        .fold((0, f64::INFINITY), |acc, (j, v)| if v < acc.1 { (j, v) } else { acc })
}

/// Fits `w` against the expert feature count and the discovered set, using
/// the default iteration budget.
pub fn max_margin_step(mu_star: &FeatureCount, mu_set: &[FeatureCount]) -> MarginSolution {
    max_margin_step_with(mu_star, mu_set, DEFAULT_MARGIN_ITERATIONS)
}

pub fn max_margin_step_with(mu_star: &FeatureCount, mu_set: &[FeatureCount], iterations: usize) -> MarginSolution {
    assert!(!mu_set.is_empty(), "max-margin step needs at least one policy feature count");
    let diffs: Vec<FeatureVec> = mu_set.iter().map(|mu| (*mu_star - *mu).values).collect();

    // Start from the direction of the mean gap; fall back to e_1 when it vanishes.
    let mut w = [0.0; FEATURE_DIM];
    for d in &diffs {
        for (wi, di) in w.iter_mut().zip(d) {
            *wi += di / diffs.len() as f64;
        }
    }
    let n = norm(&w);
    if n > 0.0 {
        w.iter_mut().for_each(|x| *x /= n);
    } else {
        w = [0.0; FEATURE_DIM];
        w[0] = 1.0;
    }

    let mut best = MarginSolution { w, delta: min_margin(&w, &diffs).1 };
    for k in 1..=iterations {
        let (j, value) = min_margin(&w, &diffs);
        if value > best.delta {
            best = MarginSolution { w, delta: value };
        }
        let step = 1.0 / (k as f64).sqrt();
        for (wi, di) in w.iter_mut().zip(&diffs[j]) {
            *wi += step * di;
        }
        project_unit_ball(&mut w);
    }
    let last = min_margin(&w, &diffs).1;
    if last > best.delta {
        best = MarginSolution { w, delta: last };
    }
    if let Some(polished) = polish(&best, &diffs) {
        best = polished;
    }
    best
}

/// Slack under which a gap counts as active for [`polish`].
const ACTIVE_SLACK: f64 = 1e-4;

fn polish(sol: &MarginSolution, diffs: &[FeatureVec]) -> Option<MarginSolution> {
    // Orthonormal basis of the active gaps (modified Gram-Schmidt).
    let mut basis: Vec<FeatureVec> = Vec::new();
    for d in diffs.iter().filter(|d| dot(&sol.w, d) <= sol.delta + ACTIVE_SLACK) {
        let mut r = *d;
        for q in &basis {
            let c = dot(&r, q);
            r.iter_mut().zip(q).for_each(|(x, qi)| *x -= c * qi);
        }
        let n = norm(&r);
        if n > 1e-9 * norm(d).max(1e-300) && n > 0.0 {
            r.iter_mut().for_each(|x| *x /= n);
            basis.push(r);
        }
    }
    if basis.is_empty() {
        return None;
    }
    let mut w = sol.w;
    for q in &basis {
        let c = dot(&w, q);
        w.iter_mut().zip(q).for_each(|(x, qi)| *x -= c * qi);
    }
    let n = norm(&w);
    if n < 1e-9 {
        return None;
    }
    w.iter_mut().for_each(|x| *x /= n);
    let delta = min_margin(&w, diffs).1;
    (delta >= sol.delta).then_some(MarginSolution { w, delta })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fc(values: FeatureVec) -> FeatureCount {
        FeatureCount { values, gamma: 0.9 }
    }

    #[test]
    fn expert_in_set_gives_zero_margin() {
        let mu = fc([0.3, 0.1, 0.0, 0.5, 0.2, 0.0, 0.4, 0.1, 0.05]);
        let sol = max_margin_step(&mu, &[mu]);
        assert_eq!(sol.delta, 0.0);
        assert!(norm(&sol.w) <= 1.0 + 1e-12);
    }

    #[test]
    fn single_constraint_closed_form() {
        let mu_star = fc([0.9, 0.0, 0.2, 0.0, 0.3, 0.0, 0.5, 0.1, 0.0]);
        let d = [0.2, -0.1, 0.0, 0.3, 0.0, 0.05, -0.2, 0.0, 0.1];
        let mut other = mu_star.values;
        for (o, di) in other.iter_mut().zip(d) {
            *o -= di;
        }
        let sol = max_margin_step(&mu_star, &[fc(other)]);
        let nd = norm(&d);
        assert!((sol.delta - nd).abs() < 1e-12, "{} vs {}", sol.delta, nd);
        for (wi, di) in sol.w.iter().zip(d) {
            assert!((wi - di / nd).abs() < 1e-12);
        }
    }

    #[test]
    fn never_leaves_the_ball() {
        let mu_star = fc([5.0; 9]);
        let set = [fc([0.0; 9]), fc([1.0, 9.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, -3.0])];
        let sol = max_margin_step(&mu_star, &set);
        assert!(norm(&sol.w) <= 1.0 + 1e-9);
    }
}
