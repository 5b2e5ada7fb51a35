//! Probabilists' Hermite polynomials and Hermite expansions of link functions.
//!
//! `He_k` is monic and orthogonal for the standard Gaussian:
//! `E[He_j(x) He_k(x)] = δ_{jk} k!`. A link is stored through its coefficients
//! `c_k = E[σ(x) He_k(x)]`, so that `σ = Σ_k c_k/k! · He_k`.

use std::fmt;
use std::sync::Arc;

use crate::error::{invalid, Error, Result};
use crate::quadrature::gauss_hermite;
use crate::tensor::DenseTensor;

/// Largest supported polynomial degree.
pub const MAX_DEGREE: usize = 64;

/// Relative tolerance used when detecting the information exponent.
pub const DEFAULT_COEFF_TOL: f64 = 1e-8;

/// Size limit for dense Hermite tensors.
pub const DENSE_HERMITE_LIMIT: u128 = 10_000_000;

fn check_degree(k: usize) -> Result<()> {
    if k > MAX_DEGREE {
        return invalid(format!("Hermite degree {k} exceeds the supported maximum {MAX_DEGREE}"));
    }
    Ok(())
}

/// `He_k(x)` by the three-term recurrence.
pub fn he_eval(k: usize, x: f64) -> Result<f64> {
    check_degree(k)?;
    Ok(he_eval_unchecked(k, x))
}

pub(crate) fn he_eval_unchecked(k: usize, x: f64) -> f64 {
    let mut prev = 1.0;
    if k == 0 {
        return prev;
    }
    let mut cur = x;
    for j in 1..k {
        let next = x * cur - j as f64 * prev;
        prev = cur;
        cur = next;
    }
    cur
}

/// Fills `out[m] = He_m(x)` for `m = 0..out.len()`.
pub fn he_table(x: f64, out: &mut [f64]) {
    if out.is_empty() {
        return;
    }
    out[0] = 1.0;
    if out.len() > 1 {
        out[1] = x;
    }
    for m in 2..out.len() {
        out[m] = x * out[m - 1] - (m - 1) as f64 * out[m - 2];
    }
}

/// Monomial coefficients `h_{k,m}` with `He_k(x) = Σ_m h_{k,m} x^m`.
pub fn he_monomial_coeffs(k: usize) -> Result<Vec<f64>> {
    check_degree(k)?;
    let mut prev = vec![1.0];
    if k == 0 {
        return Ok(prev);
    }
    let mut cur = vec![0.0, 1.0];
    for j in 1..k {
        let mut next = vec![0.0; j + 2];
        for (m, &c) in cur.iter().enumerate() {
            next[m + 1] += c;
        }
        for (m, &c) in prev.iter().enumerate() {
            next[m] -= j as f64 * c;
        }
        prev = cur;
        cur = next;
    }
    Ok(cur)
}

pub(crate) fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

/// Least `k ≥ 1` with `|c_k| > tol`.
pub fn information_exponent(coeffs: &[f64], tol: f64) -> Result<usize> {
    coeffs
        .iter()
        .enumerate()
        .skip(1)
        .find(|(_, c)| c.abs() > tol)
        .map(|(k, _)| k)
        .ok_or_else(|| Error::DegenerateLink(format!("no Hermite coefficient with k >= 1 exceeds {tol:e}")))
}

/// What backs the evaluation of a link.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkKind {
    /// Finite Hermite series; smoothing is computed exactly.
    Polynomial,
    /// Arbitrary evaluator; smoothing uses fixed quadrature.
    General,
}

type Evaluator = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A link function `σ` normalized so that `E[σ(x)²] = Σ_k c_k²/k! = 1`.
#[derive(Clone)]
pub struct LinkFunction {
    coeffs: Vec<f64>,
    info_exponent: usize,
    kind: LinkKind,
    /// `σ(t) = Σ_m monomial[m] t^m` (exact for polynomial links, truncated otherwise).
    monomial: Vec<f64>,
    evaluator: Option<Evaluator>,
    /// Multiplier applied to `evaluator` so the stored coefficients are normalized.
    scale: f64,
}

impl fmt::Debug for LinkFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LinkFunction")
            .field("coeffs", &self.coeffs)
            .field("info_exponent", &self.info_exponent)
            .field("kind", &self.kind)
            .finish()
    }
}

impl LinkFunction {
    /// The normalized Hermite link `He_k/√k!` (so `c_k = √k!`).
    pub fn hermite(k: usize) -> Result<Self> {
        check_degree(k)?;
        if k == 0 {
            return Err(Error::DegenerateLink("He_0 is constant".into()));
        }
        let mut coeffs = vec![0.0; k + 1];
        coeffs[k] = factorial(k).sqrt();
        Self::from_hermite_coeffs(coeffs)
    }

    /// Polynomial link from raw Hermite coefficients; normalizes them.
    pub fn from_hermite_coeffs(coeffs: Vec<f64>) -> Result<Self> {
        let (coeffs, _) = normalize(coeffs)?;
        let info_exponent = detect_exponent(&coeffs)?;
        let monomial = monomial_from_hermite(&coeffs)?;
        Ok(LinkFunction {
            coeffs,
            info_exponent,
            kind: LinkKind::Polynomial,
            monomial,
            evaluator: None,
            scale: 1.0,
        })
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn info_exponent(&self) -> usize {
        self.info_exponent
    }

    pub fn max_degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn kind(&self) -> LinkKind {
        self.kind
    }

    /// Monomial coefficients of the (truncated) Hermite series.
    pub fn monomial_coeffs(&self) -> &[f64] {
        &self.monomial
    }

    /// Converts a general link into the polynomial given by its truncated expansion.
    pub fn into_polynomial(self) -> Self {
        LinkFunction {
            kind: LinkKind::Polynomial,
            evaluator: None,
            scale: 1.0,
            ..self
        }
    }

    /// `Σ_k c_k²/k!`, equal to one after normalization.
    pub fn second_moment(&self) -> f64 {
        parseval(&self.coeffs)
    }

    pub fn eval(&self, t: f64) -> f64 {
        match (&self.kind, &self.evaluator) {
            (LinkKind::General, Some(f)) => self.scale * f(t),
            _ => horner(&self.monomial, t),
        }
    }

    pub fn derivative(&self, t: f64) -> f64 {
        match (&self.kind, &self.evaluator) {
            (LinkKind::General, Some(f)) => {
                let h = 1e-6 * t.abs().max(1.0);
                self.scale * (f(t + h) - f(t - h)) / (2.0 * h)
            }
            _ => {
                let mut acc = 0.0;
                for (m, &c) in self.monomial.iter().enumerate().skip(1).rev() {
                    acc = acc * t + m as f64 * c;
                }
                acc
            }
        }
    }
}

fn horner(coeffs: &[f64], t: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * t + c)
}

fn parseval(coeffs: &[f64]) -> f64 {
    coeffs.iter().enumerate().map(|(k, c)| c * c / factorial(k)).sum()
}

fn normalize(mut coeffs: Vec<f64>) -> Result<(Vec<f64>, f64)> {
    if coeffs.is_empty() {
        return Err(Error::DegenerateLink("empty coefficient list".into()));
    }
    if coeffs.len() > MAX_DEGREE + 1 {
        return invalid(format!("at most {} Hermite coefficients are supported", MAX_DEGREE + 1));
    }
    let norm2 = parseval(&coeffs);
    if !(norm2 > 1e-300) || !norm2.is_finite() {
        return Err(Error::DegenerateLink(format!("E[σ²] = {norm2:e} cannot be normalized")));
    }
    let scale = norm2.sqrt().recip();
    coeffs.iter_mut().for_each(|c| *c *= scale);
    Ok((coeffs, scale))
}

fn detect_exponent(coeffs: &[f64]) -> Result<usize> {
    let max = coeffs.iter().skip(1).fold(0.0f64, |m, c| m.max(c.abs()));
    information_exponent(coeffs, DEFAULT_COEFF_TOL * max.max(f64::MIN_POSITIVE))
}

fn monomial_from_hermite(coeffs: &[f64]) -> Result<Vec<f64>> {
    let mut out = vec![0.0; coeffs.len()];
    for (k, &c) in coeffs.iter().enumerate() {
        if c == 0.0 {
            continue;
        }
        let w = c / factorial(k);
        for (m, h) in he_monomial_coeffs(k)?.into_iter().enumerate() {
            out[m] += w * h;
        }
    }
    Ok(out)
}

/// Hermite expansion of `evaluator` up to degree `max_degree`, using a
/// `nodes`-point Gauss–Hermite rule, normalized to unit second moment.
pub fn hermite_expand<F>(evaluator: F, max_degree: usize, nodes: usize) -> Result<LinkFunction>
where
    F: Fn(f64) -> f64 + Send + Sync + 'static,
{
    check_degree(max_degree)?;
    let rule = gauss_hermite(nodes)?;
    let mut table = vec![0.0; max_degree + 1];
    let mut raw = vec![0.0; max_degree + 1];
    for (&x, &w) in rule.nodes.iter().zip(&rule.weights) {
        let fx = evaluator(x);
        he_table(x, &mut table);
        for (c, h) in raw.iter_mut().zip(&table) {
            *c += w * fx * h;
        }
    }
    let (coeffs, scale) = normalize(raw)?;
    let info_exponent = detect_exponent(&coeffs)?;
    let monomial = monomial_from_hermite(&coeffs)?;
    Ok(LinkFunction {
        coeffs,
        info_exponent,
        kind: LinkKind::General,
        monomial,
        evaluator: Some(Arc::new(evaluator)),
        scale,
    })
}

/// Default quadrature size for an expansion of degree `max_degree`.
pub fn default_nodes(max_degree: usize) -> usize {
    4 * (max_degree + 1)
}

/// Dense order-`k` Hermite tensor of `x`: entry `(i_1..i_k)` is
/// `Π_j He_{m_j}(x_j)` with `m_j` the multiplicity of coordinate `j`.
pub fn hermite_tensor_dense(x: &[f64], k: usize) -> Result<DenseTensor> {
    let mut out = DenseTensor::zeros(x.len(), k, DENSE_HERMITE_LIMIT)?;
    let pattern = MultiplicityPattern::new(x.len(), k);
    let table = HermiteTable::new(x, k);
    pattern.accumulate(&table, 1.0, out.data_mut());
    Ok(out)
}

/// `He_m(x_j)` for all coordinates `j` and degrees `m ≤ k`.
pub(crate) struct HermiteTable {
    stride: usize,
    values: Vec<f64>,
}

impl HermiteTable {
    pub(crate) fn new(x: &[f64], k: usize) -> Self {
        let stride = k + 1;
        let mut values = vec![0.0; x.len() * stride];
        for (j, &xj) in x.iter().enumerate() {
            he_table(xj, &mut values[j * stride..(j + 1) * stride]);
        }
        HermiteTable { stride, values }
    }

    #[inline]
    fn get(&self, coord: usize, degree: usize) -> f64 {
        self.values[coord * self.stride + degree]
    }
}

/// For every flat index of a `d^k` tensor, the `(coordinate, multiplicity)` pairs.
pub(crate) struct MultiplicityPattern {
    offsets: Vec<usize>,
    pairs: Vec<(u32, u8)>,
}

impl MultiplicityPattern {
    pub(crate) fn new(d: usize, k: usize) -> Self {
        let total = d.pow(k as u32);
        let mut offsets = Vec::with_capacity(total + 1);
        let mut pairs = Vec::new();
        let mut idx = vec![0usize; k];
        let mut counts: Vec<(u32, u8)> = Vec::with_capacity(k);
        offsets.push(0);
        for flat in 0..total {
            let mut rem = flat;
            for slot in idx.iter_mut().rev() {
                *slot = rem % d;
                rem /= d;
            }
            counts.clear();
            for &i in &idx {
                match counts.iter_mut().find(|(c, _)| *c as usize == i) {
                    Some(entry) => entry.1 += 1,
                    None => counts.push((i as u32, 1)),
                }
            }
            pairs.extend_from_slice(&counts);
            offsets.push(pairs.len());
        }
        MultiplicityPattern { offsets, pairs }
    }

    /// `out[flat] += weight · Π He_{m_j}(x_j)`.
    pub(crate) fn accumulate(&self, table: &HermiteTable, weight: f64, out: &mut [f64]) {
        for (flat, o) in out.iter_mut().enumerate() {
            let mut prod = weight;
            for &(c, m) in &self.pairs[self.offsets[flat]..self.offsets[flat + 1]] {
                prod *= table.get(c as usize, m as usize);
            }
            *o += prod;
        }
    }
}
