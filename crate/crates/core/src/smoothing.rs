//! The smoothing operator `𝓛_λ g(w) = E_{z∼μ_w} g((w + λz)/‖w + λz‖)`, where
//! `μ_w` is uniform on the unit sphere of `w^⊥`.
//!
//! For a single-index function `g(w·u)` the smoothed value only depends on
//! `α = w·u`, through the law of one coordinate `z_1` of `S^{d-2}`. For a sample
//! `x` the same reduction applies with `a = w·x` and `b = ‖P_w^⊥ x‖`:
//!
//! ```text
//! E_z σ((a + λ z_1 b)/√(1+λ²))
//! ```
//!
//! which is evaluated exactly for polynomial links (odd moments of `z_1`
//! vanish and `E[z_1^{2j}] = ν_j^{(d-1)}`) and by Gauss quadrature otherwise.

use crate::error::{invalid, Result};
use crate::hermite::{factorial, LinkFunction, LinkKind, MAX_DEGREE};
use crate::quadrature::{sphere_marginal_rule, GaussRule};
use crate::sphere::{dot, nu_moment, TangentVector, UnitVector};
use crate::tensor::DenseTensor;

/// Quadrature size for non-polynomial links and for [`smooth_univariate`].
pub const SMOOTHING_NODES: usize = 64;

/// Below this `b = ‖P_w^⊥ x‖` the `b`-channel of a quadrature gradient is dropped.
pub const B_CHANNEL_FLOOR: f64 = 1e-12;

/// Size limit for the dense `T_k(w)` oracle.
pub const TENSOR_ORACLE_LIMIT: u128 = 10_000_000;

fn binom(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// A link, dimension, smoothing level and label-noise variance.
#[derive(Debug, Clone)]
pub struct SmoothedModel {
    link: LinkFunction,
    dim: usize,
    lambda: f64,
    noise_var: f64,
    kernel: Kernel,
}

#[derive(Debug, Clone)]
enum Kernel {
    /// `E_z σ(...) = Σ_j q^j Σ_r table[j][r] a^r` with `q = b²`.
    Exact {
        table: Vec<Vec<f64>>,
    },
    Quadrature {
        rule: GaussRule,
    },
}

impl SmoothedModel {
    pub fn new(link: LinkFunction, dim: usize, lambda: f64) -> Result<Self> {
        if dim < 3 {
            return invalid(format!("smoothing needs d >= 3, got {dim}"));
        }
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return invalid(format!("smoothing level must be finite and >= 0, got {lambda}"));
        }
        let bound = (dim as f64).powf(0.25);
        if lambda > bound * (1.0 + 1e-9) {
            log::warn!("lambda = {lambda} exceeds d^(1/4) = {bound:.4}; outside the analyzed range");
        }
        let kernel = match link.kind() {
            LinkKind::Polynomial => Kernel::Exact {
                table: moment_table(&link, dim, lambda),
            },
            LinkKind::General => Kernel::Quadrature {
                rule: sphere_marginal_rule(SMOOTHING_NODES, dim - 1)?,
            },
        };
        Ok(SmoothedModel {
            link,
            dim,
            lambda,
            noise_var: 0.0,
            kernel,
        })
    }

    pub fn with_noise_var(mut self, noise_var: f64) -> Result<Self> {
        if !(noise_var >= 0.0) || !noise_var.is_finite() {
            return invalid(format!("noise variance must be finite and >= 0, got {noise_var}"));
        }
        self.noise_var = noise_var;
        Ok(self)
    }

    /// Same link and noise at a different smoothing level.
    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        SmoothedModel::new(self.link.clone(), self.dim, lambda)?.with_noise_var(self.noise_var)
    }

    pub fn link(&self) -> &LinkFunction {
        &self.link
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }

    /// `E_z σ((a + λ z_1 b)/√(1+λ²))` with `q = b²`.
    pub fn smoothed_link(&self, a: f64, q: f64) -> f64 {
        self.link_terms(a, q).0
    }

    /// The smoothed link value and its derivative along the sphere, i.e. the
    /// scalar `c` with `∇_w E_z σ(...) = c · P_w^⊥ x`. Since `q = ‖x‖² - a²`,
    /// `c = ∂_a f - 2a ∂_q f`.
    #[inline]
    pub fn link_terms(&self, a: f64, q: f64) -> (f64, f64) {
        if self.lambda == 0.0 {
            return (self.link.eval(a), self.link.derivative(a));
        }
        match &self.kernel {
            Kernel::Exact { table } => {
                let mut val = 0.0;
                let mut da = 0.0;
                let mut dq = 0.0;
                let mut qpow = 1.0; // q^j
                let mut qpow_prev = 0.0; // q^{j-1}
                for (j, row) in table.iter().enumerate() {
                    let mut p = 0.0;
                    let mut dp = 0.0;
                    for &c in row.iter().rev() {
                        dp = dp * a + p;
                        p = p * a + c;
                    }
                    val += qpow * p;
                    da += qpow * dp;
                    dq += j as f64 * qpow_prev * p;
                    qpow_prev = qpow;
                    qpow *= q;
                }
                (val, da - 2.0 * a * dq)
            }
            Kernel::Quadrature { rule } => {
                let s = (1.0 + self.lambda * self.lambda).sqrt();
                let b = q.max(0.0).sqrt();
                let mut val = 0.0;
                let mut da = 0.0;
                let mut db = 0.0;
                for (&t, &w) in rule.nodes.iter().zip(&rule.weights) {
                    let u = (a + self.lambda * t * b) / s;
                    let dsig = self.link.derivative(u);
                    val += w * self.link.eval(u);
                    da += w * dsig / s;
                    db += w * dsig * self.lambda * t / s;
                }
                let total = if b < B_CHANNEL_FLOOR { da } else { da - a / b * db };
                (val, total)
            }
        }
    }

    fn check_sample(&self, w: &UnitVector, x: &[f64]) -> Result<()> {
        if w.dim() != self.dim || x.len() != self.dim {
            return invalid(format!(
                "dimension mismatch: model d = {}, w has {}, x has {}",
                self.dim,
                w.dim(),
                x.len()
            ));
        }
        Ok(())
    }

    /// Smoothed correlation loss `L_λ(w; x; y)`.
    pub fn sample_value(&self, w: &UnitVector, x: &[f64], y: f64) -> Result<f64> {
        self.check_sample(w, x)?;
        let a = w.dot(x);
        let q = perp_norm_sq(w.as_slice(), x, a);
        Ok(1.0 - y * self.smoothed_link(a, q))
    }

    /// Spherical gradient `∇_w L_λ(w; x; y)`.
    pub fn sample_gradient(&self, w: &UnitVector, x: &[f64], y: f64) -> Result<SampleGradient> {
        self.check_sample(w, x)?;
        let a = w.dot(x);
        let mut px: Vec<f64> = x.iter().zip(w.iter()).map(|(xi, wi)| xi - a * wi).collect();
        let q = dot(&px, &px);
        let (_, c) = self.link_terms(a, q);
        let scale = -y * c;
        px.iter_mut().for_each(|v| *v *= scale);
        Ok(SampleGradient {
            direction: TangentVector::from_parts_unchecked(w.clone(), px),
            a,
            b: q.sqrt(),
        })
    }
}

fn perp_norm_sq(w: &[f64], x: &[f64], a: f64) -> f64 {
    x.iter().zip(w).map(|(xi, wi)| (xi - a * wi).powi(2)).sum()
}

fn moment_table(link: &LinkFunction, dim: usize, lambda: f64) -> Vec<Vec<f64>> {
    let mono = link.monomial_coeffs();
    let deg = mono.len().saturating_sub(1);
    let s = (1.0 + lambda * lambda).sqrt();
    let l2 = lambda * lambda;
    let mut table = vec![vec![0.0; deg + 1]; deg / 2 + 1];
    for (m, &p) in mono.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        let base = p / s.powi(m as i32);
        for j in 0..=m / 2 {
            table[j][m - 2 * j] += base * binom(m, 2 * j) * l2.powi(j as i32) * nu_moment(j, dim - 1);
        }
    }
    table
}

/// Per-sample gradient with the scalars that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleGradient {
    pub direction: TangentVector,
    /// `w·x`
    pub a: f64,
    /// `‖P_w^⊥ x‖`
    pub b: f64,
}

/// See [`SmoothedModel::sample_value`].
pub fn smoothed_sample_value(model: &SmoothedModel, w: &UnitVector, x: &[f64], y: f64) -> Result<f64> {
    model.sample_value(w, x, y)
}

/// See [`SmoothedModel::sample_gradient`].
pub fn smoothed_sample_gradient(model: &SmoothedModel, w: &UnitVector, x: &[f64], y: f64) -> Result<SampleGradient> {
    model.sample_gradient(w, x, y)
}

fn check_alpha_power(k: usize, d: usize) -> Result<()> {
    if d < 3 {
        return invalid(format!("smoothing needs d >= 3, got {d}"));
    }
    if k > MAX_DEGREE {
        return invalid(format!("power {k} exceeds {MAX_DEGREE}"));
    }
    Ok(())
}

/// Exact `𝓛_λ(α^k) = (1+λ²)^{-k/2} Σ_j C(k,2j) α^{k-2j} λ^{2j} (1-α²)^j ν_j^{(d-1)}`.
pub fn smooth_alpha_power(k: usize, alpha: f64, lambda: f64, d: usize) -> Result<f64> {
    check_alpha_power(k, d)?;
    if lambda == 0.0 {
        return Ok(alpha.powi(k as i32));
    }
    let l2 = lambda * lambda;
    let rest = 1.0 - alpha * alpha;
    let sum: f64 = (0..=k / 2)
        .map(|j| {
            binom(k, 2 * j)
                * alpha.powi((k - 2 * j) as i32)
                * l2.powi(j as i32)
                * rest.powi(j as i32)
                * nu_moment(j, d - 1)
        })
        .sum();
    Ok(sum / (1.0 + l2).powf(k as f64 / 2.0))
}

/// `d/dα 𝓛_λ(α^k)`, differentiating the closed form term by term.
pub fn smooth_alpha_power_deriv(k: usize, alpha: f64, lambda: f64, d: usize) -> Result<f64> {
    check_alpha_power(k, d)?;
    if k == 0 {
        return Ok(0.0);
    }
    if lambda == 0.0 {
        return Ok(k as f64 * alpha.powi(k as i32 - 1));
    }
    let l2 = lambda * lambda;
    let rest = 1.0 - alpha * alpha;
    let mut sum = 0.0;
    for j in 0..=k / 2 {
        let coef = binom(k, 2 * j) * l2.powi(j as i32) * nu_moment(j, d - 1);
        let p = k - 2 * j;
        let mut term = 0.0;
        if p > 0 {
            term += p as f64 * alpha.powi(p as i32 - 1) * rest.powi(j as i32);
        }
        if j > 0 {
            term -= 2.0 * j as f64 * alpha.powi(p as i32 + 1) * rest.powi(j as i32 - 1);
        }
        sum += coef * term;
    }
    Ok(sum / (1.0 + l2).powf(k as f64 / 2.0))
}

/// The piecewise scale `s_k(α; λ)` that brackets `𝓛_λ(α^k)` up to constants.
pub fn s_k_value(k: usize, alpha: f64, lambda: f64, d: usize) -> Result<f64> {
    if !(alpha >= 0.0) {
        return invalid(format!("s_k needs alpha >= 0, got {alpha}"));
    }
    if d == 0 {
        return invalid("dimension must be positive");
    }
    let ratio = lambda * lambda / d as f64;
    let pre = (1.0 + lambda * lambda).powf(-(k as f64) / 2.0);
    let core = if alpha * alpha >= ratio {
        alpha.powi(k as i32)
    } else if k.is_multiple_of(2) {
        ratio.powf(k as f64 / 2.0)
    } else {
        alpha * ratio.powf((k as f64 - 1.0) / 2.0)
    };
    Ok(pre * core)
}

/// Unsmoothed population loss `Σ_k c_k²/k! (1 - α^k)`.
pub fn population_loss(link: &LinkFunction, alpha: f64) -> f64 {
    link.coeffs()
        .iter()
        .enumerate()
        .map(|(k, c)| c * c / factorial(k) * (1.0 - alpha.powi(k as i32)))
        .sum()
}

/// Smoothed population loss `Σ_k c_k²/k! (1 - 𝓛_λ(α^k))`.
pub fn smoothed_population_loss(model: &SmoothedModel, alpha: f64) -> Result<f64> {
    let mut acc = 0.0;
    for (k, c) in model.link.coeffs().iter().enumerate() {
        acc += c * c / factorial(k) * (1.0 - smooth_alpha_power(k, alpha, model.lambda, model.dim)?);
    }
    Ok(acc)
}

/// `c_λ(α)` in `∇_w L_λ(w) = -(w* - αw) c_λ(α)`.
pub fn population_grad_coeff(model: &SmoothedModel, alpha: f64) -> Result<f64> {
    let mut acc = 0.0;
    for (k, c) in model.link.coeffs().iter().enumerate().skip(1) {
        if *c == 0.0 {
            continue;
        }
        acc += c * c / factorial(k) * smooth_alpha_power_deriv(k, alpha, model.lambda, model.dim)?;
    }
    Ok(acc)
}

/// Dense `T_k(w) = 𝓛_λ(w^{⊗k})`, so that `𝓛_λ He_k(w·x) = ⟨He_k(x), T_k(w)⟩`.
pub fn smoothed_hermite_tensor_oracle(w: &UnitVector, k: usize, lambda: f64) -> Result<DenseTensor> {
    let d = w.dim();
    check_alpha_power(k, d)?;
    let mut out = DenseTensor::zeros(d, k, TENSOR_ORACLE_LIMIT)?;
    let mut perp = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            perp[i * d + j] = if i == j { 1.0 } else { 0.0 } - w.as_slice()[i] * w.as_slice()[j];
        }
    }
    let l2 = lambda * lambda;
    let pre = (1.0 + l2).powf(-(k as f64) / 2.0);
    for j in 0..=k / 2 {
        let coef = pre * binom(k, 2 * j) * l2.powi(j as i32) * nu_moment(j, d - 1);
        if coef == 0.0 {
            continue;
        }
        let mut term = vec![1.0];
        for _ in 0..k - 2 * j {
            term = kron(&term, w.as_slice());
        }
        for _ in 0..j {
            term = kron(&term, &perp);
        }
        let sym = DenseTensor::from_data(d, k, term)?.symmetrize();
        out.add_scaled(coef, &sym)?;
    }
    Ok(out)
}

fn kron(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().flat_map(|&x| b.iter().map(move |&y| x * y)).collect()
}

/// `𝓛_λ^{(m)} g(α) = E_{z∼S^{m-2}} g((α + λ z_1 √(1-α²))/√(1+λ²))` with
/// `m = d + dim_shift`, by Gauss quadrature on the marginal of `z_1`.
pub fn smooth_univariate<G: Fn(f64) -> f64>(g: G, alpha: f64, lambda: f64, d: usize, dim_shift: i64) -> Result<f64> {
    let m = d as i64 + dim_shift;
    if m < 3 {
        return invalid(format!("univariate smoothing needs d + shift >= 3, got {m}"));
    }
    if !(-1.0..=1.0).contains(&alpha) {
        return invalid(format!("alpha {alpha} outside [-1, 1]"));
    }
    let rule = sphere_marginal_rule(SMOOTHING_NODES, (m - 1) as usize)?;
    let s = (1.0 + lambda * lambda).sqrt();
    let r = (1.0 - alpha * alpha).sqrt();
    let v = rule.integrate(|t| g((alpha + lambda * t * r) / s));
    if !v.is_finite() {
        return Err(crate::Error::Numeric(format!("univariate smoothing produced {v}")));
    }
    Ok(v)
}
