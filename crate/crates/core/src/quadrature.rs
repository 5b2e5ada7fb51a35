//! Gauss quadrature for symmetric probability weights.
//!
//! Rules are built with Golub–Welsch from the monic three-term recurrence
//! `p_{n+1}(t) = t·p_n(t) - β_n·p_{n-1}(t)`, then the nodes are polished by
//! Newton iteration on the orthonormal recurrence and the weights are recomputed
//! with the Christoffel formula `w_i = 1 / Σ_{j<n} p̃_j(t_i)²`.
//! All rules integrate against a probability measure, so `Σ w_i = 1`.

use nalgebra::DMatrix;

use crate::error::{invalid, Error, Result};

/// Nodes and weights of an `n`-point Gauss rule.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussRule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `Σ w_i f(t_i)`.
    pub fn integrate(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&t, &w)| w * f(t)).sum()
    }
}

/// Gauss–Hermite rule for the standard normal density `e^{-x²/2}/√(2π)`.
/// Exact for polynomials of degree `≤ 2n - 1`.
pub fn gauss_hermite(n: usize) -> Result<GaussRule> {
    if n == 0 {
        return invalid("quadrature needs at least one node");
    }
    build_rule(&(1..=n).map(|k| k as f64).collect::<Vec<_>>())
}

/// Gauss rule on `[-1, 1]` for the weight `∝ (1 - t²)^a`, `a > -1`.
///
/// With `a = (m - 3)/2` this is the law of the first coordinate of a uniform
/// point on `S^{m-1}`.
pub fn gauss_gegenbauer(n: usize, a: f64) -> Result<GaussRule> {
    if n == 0 {
        return invalid("quadrature needs at least one node");
    }
    if !(a > -1.0) || !a.is_finite() {
        return invalid(format!("Gegenbauer exponent must be finite and > -1, got {a}"));
    }
    let betas: Vec<f64> = (1..=n)
        .map(|k| {
            if k == 1 {
                1.0 / (2.0 * a + 3.0)
            } else {
                let k = k as f64;
                k * (k + 2.0 * a) / ((2.0 * k + 2.0 * a + 1.0) * (2.0 * k + 2.0 * a - 1.0))
            }
        })
        .collect();
    build_rule(&betas)
}

/// Rule for the first coordinate of a uniform point on `S^{m-1}` (`m ≥ 2`).
pub fn sphere_marginal_rule(n: usize, m: usize) -> Result<GaussRule> {
    if m < 2 {
        return invalid(format!("sphere marginal needs ambient dimension >= 2, got {m}"));
    }
    gauss_gegenbauer(n, (m as f64 - 3.0) / 2.0)
}

/// `betas` holds `β_1..β_n`; the Jacobi matrix uses the first `n - 1` and the
/// Newton polish needs `β_n` to evaluate `p̃_n`.
fn build_rule(betas: &[f64]) -> Result<GaussRule> {
    let n = betas.len();
    if n == 1 {
        return Ok(GaussRule {
            nodes: vec![0.0],
            weights: vec![1.0],
        });
    }
    let mut jacobi = DMatrix::<f64>::zeros(n, n);
    for (i, b) in betas[..n - 1].iter().enumerate() {
        let s = b.sqrt();
        jacobi[(i, i + 1)] = s;
        jacobi[(i + 1, i)] = s;
    }
    let eig = jacobi.symmetric_eigen();
    let mut nodes: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    nodes.sort_by(|a, b| a.total_cmp(b));

    let sqrt_b: Vec<f64> = betas.iter().map(|b| b.sqrt()).collect();
    let mut weights = Vec::with_capacity(n);
    for t in nodes.iter_mut() {
        for _ in 0..3 {
            let (p, dp, _) = orthonormal_eval(&sqrt_b, *t);
            if dp == 0.0 || !dp.is_finite() {
                break;
            }
            let step = p / dp;
            *t -= step;
            if step.abs() <= 1e-16 * t.abs().max(1.0) {
                break;
            }
        }
        let (_, _, sum_sq) = orthonormal_eval(&sqrt_b, *t);
        weights.push(1.0 / sum_sq);
    }
    // symmetric weight: enforce exact node symmetry
    for i in 0..n / 2 {
        let j = n - 1 - i;
        let t = 0.5 * (nodes[j] - nodes[i]);
        let w = 0.5 * (weights[i] + weights[j]);
        nodes[i] = -t;
        nodes[j] = t;
        weights[i] = w;
        weights[j] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    let total: f64 = weights.iter().sum();
    if !total.is_finite() || total <= 0.0 {
        return Err(Error::Numeric("quadrature weights degenerate".into()));
    }
    Ok(GaussRule { nodes, weights })
}

/// Returns `(p̃_n(t), p̃_n'(t), Σ_{j<n} p̃_j(t)²)` for the orthonormal family.
fn orthonormal_eval(sqrt_b: &[f64], t: f64) -> (f64, f64, f64) {
    let mut p_prev = 0.0;
    let mut p = 1.0;
    let mut dp_prev = 0.0;
    let mut dp = 0.0;
    let mut sum_sq = 1.0;
    let mut sb_prev = 0.0;
    for (j, &sb) in sqrt_b.iter().enumerate() {
        let p_next = (t * p - sb_prev * p_prev) / sb;
        let dp_next = (p + t * dp - sb_prev * dp_prev) / sb;
        p_prev = p;
        p = p_next;
        dp_prev = dp;
        dp = dp_next;
        sb_prev = sb;
        if j + 1 < sqrt_b.len() {
            sum_sq += p * p;
        }
    }
    (p, dp, sum_sq)
}
