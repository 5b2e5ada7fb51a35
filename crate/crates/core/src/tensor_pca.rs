//! Spiked tensor PCA and the partial-trace estimator.
//!
//! Two generators produce an order-`k` tensor whose mean is `(w*)^{⊗k}`: the
//! spiked model `(w*)^{⊗k} + Z/√n`, and the empirical Hermite tensor
//! `(1/n) Σ y_i He_k(x_i)/√k!` of the single-index model with
//! `σ = He_k/√k!`. Their noise structures differ, so results from one are not
//! claimed to transfer to the other.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::hermite::{factorial, he_eval_unchecked, HermiteTable, MultiplicityPattern, DENSE_HERMITE_LIMIT};
use crate::sphere::{dot, fill_gaussian, norm, sample_sphere, UnitVector};
use crate::tensor::{checked_len, DenseTensor};

/// Size guard for the spiked model.
pub const SPIKED_LIMIT: u128 = 100_000_000;

/// Iteration cap for the even-order power method.
pub const POWER_MAX_ITERS: usize = 10_000;

/// Convergence tolerance of the power method on the iterate.
pub const POWER_TOL: f64 = 1e-10;

/// Default number of projected ascent steps after the warm start.
pub const DEFAULT_ASCENT_STEPS: usize = 200;

/// Ascent step as a multiple of `1/‖T‖_F`.
pub const ASCENT_STEP: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseMode {
    /// `Z` with i.i.d. entries, as in the model.
    #[default]
    Raw,
    /// `Z` replaced by `sym(Z)`.
    Symmetrized,
}

impl FromStr for NoiseMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "raw" => Ok(NoiseMode::Raw),
            "symmetrized" | "sym" => Ok(NoiseMode::Symmetrized),
            other => Err(Error::InvalidArgument(format!(
                "unknown noise mode {other:?} (raw|symmetrized)"
            ))),
        }
    }
}

impl fmt::Display for NoiseMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NoiseMode::Raw => "raw",
            NoiseMode::Symmetrized => "symmetrized",
        })
    }
}

/// `(w*)^{⊗k} + Z/√n`. `n = ∞` gives the bare spike.
pub fn make_spiked_tensor<R: Rng + ?Sized>(
    w_star: &UnitVector,
    n: f64,
    k: usize,
    mode: NoiseMode,
    rng: &mut R,
) -> Result<DenseTensor> {
    if !(n > 0.0) {
        return invalid(format!("effective sample count must be positive, got {n}"));
    }
    let mut t = DenseTensor::outer_power(w_star.as_slice(), k, SPIKED_LIMIT)?;
    if n.is_infinite() {
        return Ok(t);
    }
    let d = w_star.dim();
    let mut z = DenseTensor::zeros(d, k, SPIKED_LIMIT)?;
    fill_gaussian(rng, z.data_mut());
    if mode == NoiseMode::Symmetrized {
        z = z.symmetrize();
    }
    t.add_scaled(1.0 / n.sqrt(), &z)?;
    Ok(t)
}

/// `n` samples `x ~ N(0, I_d)`, `y = He_k(w*·x)/√k! + ς ξ`.
pub fn sample_single_index<R: Rng + ?Sized>(
    w_star: &UnitVector,
    n: usize,
    k: usize,
    noise_sd: f64,
    rng: &mut R,
) -> (Vec<Vec<f64>>, Vec<f64>) {
    let d = w_star.dim();
    let scale = factorial(k).sqrt();
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let mut x = vec![0.0; d];
        fill_gaussian(rng, &mut x);
        let mut y = he_eval_unchecked(k, w_star.dot(&x)) / scale;
        if noise_sd > 0.0 {
            y += noise_sd * rng.sample::<f64, _>(StandardNormal);
        }
        xs.push(x);
        ys.push(y);
    }
    (xs, ys)
}

/// `(1/n) Σ y_i He_k(x_i)/√k!`.
pub fn empirical_hermite_tensor(xs: &[Vec<f64>], ys: &[f64], k: usize) -> Result<DenseTensor> {
    if xs.is_empty() {
        return invalid("empirical Hermite tensor needs at least one sample");
    }
    if xs.len() != ys.len() {
        return invalid(format!("{} covariates but {} labels", xs.len(), ys.len()));
    }
    let d = xs[0].len();
    if let Some(bad) = xs.iter().find(|x| x.len() != d) {
        return invalid(format!("mixed covariate lengths {d} and {}", bad.len()));
    }
    let mut out = DenseTensor::zeros(d, k, DENSE_HERMITE_LIMIT)?;
    let pattern = MultiplicityPattern::new(d, k);
    let w = 1.0 / (xs.len() as f64 * factorial(k).sqrt());
    for (x, &y) in xs.iter().zip(ys) {
        if y == 0.0 {
            continue;
        }
        pattern.accumulate(&HermiteTable::new(x, k), w * y, out.data_mut());
    }
    Ok(out)
}

/// Result of [`partial_trace`].
#[derive(Debug, Clone, PartialEq)]
pub enum PartialTrace {
    /// Odd order.
    Vector(Vec<f64>),
    /// Even order, `d×d` row-major.
    Matrix { dim: usize, data: Vec<f64> },
}

/// Contract the trailing index pairs of `T` with `⌈(k-2)/2⌉` identities.
pub fn partial_trace(t: &DenseTensor) -> Result<PartialTrace> {
    let k = t.order();
    if k < 3 {
        return invalid(format!("partial trace needs order >= 3, got {k}"));
    }
    let mut cur = t.trace_last_pair()?;
    for _ in 1..(k - 1) / 2 {
        cur = cur.trace_last_pair()?;
    }
    let d = t.dim();
    Ok(if k % 2 == 1 {
        PartialTrace::Vector(cur.into_data())
    } else {
        PartialTrace::Matrix {
            dim: d,
            data: cur.into_data(),
        }
    })
}

/// Output of [`recover_spike`].
#[derive(Debug, Clone, PartialEq)]
pub struct Recovery {
    pub estimate: UnitVector,
    /// The partial-trace (odd) or spectral (even) estimate before ascent.
    pub warm_start: UnitVector,
    /// Power iterations used; zero for odd orders.
    pub power_iterations: usize,
    pub ascent_steps: usize,
}

impl Recovery {
    /// `|⟨ŵ, w*⟩|`.
    pub fn overlap(&self, w_star: &UnitVector) -> f64 {
        self.estimate.dot(w_star.as_slice()).abs()
    }
}

/// Partial-trace warm start followed by `warm_start_steps` projected ascent
/// steps on `⟨w^{⊗k}, T⟩` with step `0.1/‖T‖_F`.
pub fn recover_spike<R: Rng + ?Sized>(t: &DenseTensor, warm_start_steps: usize, rng: &mut R) -> Result<Recovery> {
    let k = t.order();
    let (warm_start, power_iterations) = match partial_trace(t)? {
        PartialTrace::Vector(v) => (
            UnitVector::normalize(v).map_err(|_| Error::Numeric("partial-trace vector is zero".into()))?,
            0,
        ),
        PartialTrace::Matrix { dim, data } => top_eigenvector(dim, &data, rng)?,
    };
    let sym = t.symmetrize();
    let step = ASCENT_STEP / t.frobenius().max(f64::MIN_POSITIVE);
    let mut w = warm_start.as_slice().to_vec();
    for _ in 0..warm_start_steps {
        let mut g = sym.contract_vector(&w, k - 1)?.into_data();
        let radial = dot(&g, &w);
        for (gi, &wi) in g.iter_mut().zip(&w) {
            *gi = k as f64 * (*gi - radial * wi);
        }
        for (wi, gi) in w.iter_mut().zip(&g) {
            *wi += step * gi;
        }
        let n = norm(&w);
        w.iter_mut().for_each(|v| *v /= n);
    }
    Ok(Recovery {
        estimate: UnitVector::normalize(w)?,
        warm_start,
        power_iterations,
        ascent_steps: warm_start_steps,
    })
}

/// Shifted power iteration on `(M + Mᵀ)/2 + ‖M‖_F I`.
fn top_eigenvector<R: Rng + ?Sized>(d: usize, m: &[f64], rng: &mut R) -> Result<(UnitVector, usize)> {
    let mut sym = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            sym[i * d + j] = 0.5 * (m[i * d + j] + m[j * d + i]);
        }
    }
    let shift = norm(m);
    for i in 0..d {
        sym[i * d + i] += shift;
    }
    let mut v = sample_sphere(d, rng)?.into_vec();
    let mut next = vec![0.0; d];
    for iter in 1..=POWER_MAX_ITERS {
        for (i, out) in next.iter_mut().enumerate() {
            *out = dot(&sym[i * d..(i + 1) * d], &v);
        }
        let n = norm(&next);
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::Numeric(format!(
                "power iteration hit norm {n} at iteration {iter}"
            )));
        }
        next.iter_mut().for_each(|x| *x /= n);
        let diff: f64 = next.iter().zip(&v).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        std::mem::swap(&mut v, &mut next);
        if diff < POWER_TOL {
            return Ok((UnitVector::normalize(v)?, iter));
        }
    }
    Err(Error::Numeric(format!(
        "power iteration did not converge within {POWER_MAX_ITERS} iterations (d = {d}, shift = {shift})"
    )))
}

/// Guard used by callers that build order-`k` tensors of dimension `d`.
pub fn check_tensor_size(d: usize, k: usize) -> Result<usize> {
    checked_len(d, k, SPIKED_LIMIT)
}
