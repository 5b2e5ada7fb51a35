//! Points, tangent vectors and sampling on the unit sphere `S^{d-1}`.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Error, Result};
use crate::stats::{McEstimate, RunningStats};

/// Tolerance on `‖w‖ = 1`.
pub const UNIT_TOL: f64 = 1e-12;

/// A point on `S^{d-1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitVector(Vec<f64>);

impl UnitVector {
    /// Normalizes `v`; fails on a (near) zero vector.
    pub fn normalize(mut v: Vec<f64>) -> Result<Self> {
        let n = norm(&v);
        if !(n > 1e-300) || !n.is_finite() {
            return invalid("cannot normalize a zero or non-finite vector");
        }
        v.iter_mut().for_each(|x| *x /= n);
        Ok(UnitVector(v))
    }

    /// Wraps `v` after checking `|‖v‖ - 1| ≤ 1e-12`.
    pub fn new(v: Vec<f64>) -> Result<Self> {
        let n = norm(&v);
        if (n - 1.0).abs() > UNIT_TOL {
            return invalid(format!("vector has norm {n}, expected 1"));
        }
        Ok(UnitVector(v))
    }

    /// The standard basis vector `e_i` in `ℝ^d`.
    pub fn basis(d: usize, i: usize) -> Result<Self> {
        if i >= d {
            return invalid(format!("basis index {i} out of range for dimension {d}"));
        }
        let mut v = vec![0.0; d];
        v[i] = 1.0;
        Ok(UnitVector(v))
    }

    /// `α·w* + √(1-α²)·u` for a unit `u ⊥ w*`; the result has alignment exactly `α`.
    pub fn at_alignment(w_star: &UnitVector, perp: &UnitVector, alpha: f64) -> Result<Self> {
        if !(-1.0..=1.0).contains(&alpha) {
            return invalid(format!("alignment {alpha} outside [-1, 1]"));
        }
        let s = (1.0 - alpha * alpha).sqrt();
        let v = w_star.iter().zip(perp.iter()).map(|(a, b)| alpha * a + s * b).collect();
        UnitVector::normalize(v)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn dot(&self, x: &[f64]) -> f64 {
        dot(&self.0, x)
    }

    /// `-w`.
    pub fn negated(&self) -> UnitVector {
        UnitVector(self.0.iter().map(|x| -x).collect())
    }
}

impl AsRef<[f64]> for UnitVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// A vector in the tangent space `T_w S^{d-1} = w^⊥`.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector {
    base: UnitVector,
    components: Vec<f64>,
}

impl TangentVector {
    /// Checks `|v·w| ≤ 1e-10·max(1, ‖v‖)`.
    pub fn new(base: UnitVector, components: Vec<f64>) -> Result<Self> {
        if components.len() != base.dim() {
            return invalid("tangent vector dimension mismatch");
        }
        let off = base.dot(&components).abs();
        if off > 1e-10 * norm(&components).max(1.0) {
            return invalid(format!("vector is not tangent: |v·w| = {off:e}"));
        }
        Ok(TangentVector { base, components })
    }

    pub fn zero(base: UnitVector) -> Self {
        let components = vec![0.0; base.dim()];
        TangentVector { base, components }
    }

    pub(crate) fn from_parts_unchecked(base: UnitVector, components: Vec<f64>) -> Self {
        TangentVector { base, components }
    }

    pub fn base(&self) -> &UnitVector {
        &self.base
    }

    pub fn components(&self) -> &[f64] {
        &self.components
    }

    pub fn norm(&self) -> f64 {
        norm(&self.components)
    }

    pub fn dot(&self, x: &[f64]) -> f64 {
        dot(&self.components, x)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Fills `buf` with i.i.d. standard normals.
pub fn fill_gaussian<R: Rng + ?Sized>(rng: &mut R, buf: &mut [f64]) {
    for x in buf.iter_mut() {
        *x = rng.sample(StandardNormal);
    }
}

/// Uniform point on `S^{d-1}` (normalized Gaussian).
pub fn sample_sphere<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Result<UnitVector> {
    if d < 2 {
        return invalid(format!("sphere sampling needs d >= 2, got {d}"));
    }
    let mut v = vec![0.0; d];
    loop {
        fill_gaussian(rng, &mut v);
        if norm(&v) > 1e-150 {
            return UnitVector::normalize(v);
        }
    }
}

/// Uniform point on the unit sphere of `w^⊥`.
pub fn sample_perp<R: Rng + ?Sized>(w: &UnitVector, rng: &mut R) -> Result<UnitVector> {
    let d = w.dim();
    if d < 3 {
        return invalid(format!("perpendicular sampling needs d >= 3, got {d}"));
    }
    let mut v = vec![0.0; d];
    loop {
        fill_gaussian(rng, &mut v);
        project_out(w.as_slice(), &mut v);
        let n = norm(&v);
        if n > 1e-150 {
            v.iter_mut().for_each(|x| *x /= n);
            // one more projection pass removes the O(eps) residual along w
            project_out(w.as_slice(), &mut v);
            return UnitVector::normalize(v);
        }
    }
}

/// `v ← v - (w·v) w`.
pub(crate) fn project_out(w: &[f64], v: &mut [f64]) {
    let c = dot(w, v);
    for (vi, wi) in v.iter_mut().zip(w) {
        *vi -= c * wi;
    }
}

/// `ν_k^{(d)} = (2k-1)!! / Π_{j<k} (d + 2j) = E_{z∼S^{d-1}}[z_1^{2k}]`.
pub fn nu_moment(k: usize, d: usize) -> f64 {
    (0..k).fold(1.0, |acc, j| acc * (2 * j + 1) as f64 / (d + 2 * j) as f64)
}

/// `(2k-1)!!` for `k ≤ 32`.
pub fn double_factorial_odd(k: usize) -> Result<f64> {
    if k > 32 {
        return invalid(format!("double factorial index {k} exceeds 32"));
    }
    Ok((0..k).map(|j| (2 * j + 1) as f64).product())
}

/// `P_w^⊥ x = x - (w·x) w`.
pub fn project_perp(w: &UnitVector, x: &[f64]) -> Result<TangentVector> {
    if x.len() != w.dim() {
        return invalid(format!("dimension mismatch: {} vs {}", x.len(), w.dim()));
    }
    let mut v = x.to_vec();
    project_out(w.as_slice(), &mut v);
    Ok(TangentVector::from_parts_unchecked(w.clone(), v))
}

/// `(w + η v) / ‖w + η v‖`.
pub fn retract(w: &UnitVector, v: &TangentVector, eta: f64) -> Result<UnitVector> {
    if v.components.len() != w.dim() {
        return invalid("retraction dimension mismatch");
    }
    let stepped: Vec<f64> = w.iter().zip(&v.components).map(|(a, b)| a + eta * b).collect();
    let n = norm(&stepped);
    if !(n >= 1e-14) || !n.is_finite() {
        return Err(Error::DegenerateStep(n));
    }
    Ok(UnitVector(stepped.into_iter().map(|x| x / n).collect()))
}

/// Central-difference step of the Stein check.
pub const STEIN_FD_STEP: f64 = 1e-5;

/// Monte-Carlo estimates of both sides of the spherical Stein identity
/// `E_{z∼S^{d-1}}[z_1 g(z_1)] = E_{z∼S^{d+1}}[g'(z_1)] / d`.
pub fn stein_check<G, R>(g: G, d: usize, samples: usize, rng: &mut R) -> Result<(McEstimate, McEstimate)>
where
    G: Fn(f64) -> f64,
    R: Rng + ?Sized,
{
    if d < 3 {
        return invalid(format!("Stein check needs d >= 3, got {d}"));
    }
    if samples < 2 {
        return invalid("Stein check needs at least two samples");
    }
    let h = STEIN_FD_STEP;
    let mut lhs = RunningStats::new();
    let mut rhs = RunningStats::new();
    let mut z = vec![0.0; d + 2];
    for _ in 0..samples {
        let z1 = first_coordinate(rng, &mut z[..d]);
        lhs.push(z1 * g(z1));
        let u1 = first_coordinate(rng, &mut z);
        rhs.push((g(u1 + h) - g(u1 - h)) / (2.0 * h) / d as f64);
    }
    Ok((lhs.estimate(), rhs.estimate()))
}

/// First coordinate of a uniform point on the sphere of `ℝ^{buf.len()}`.
fn first_coordinate<R: Rng + ?Sized>(rng: &mut R, buf: &mut [f64]) -> f64 {
    loop {
        fill_gaussian(rng, buf);
        let n = norm(buf);
        if n > 0.0 {
            return buf[0] / n;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sphere_sampling_deterministic() {
        let a = sample_sphere(8, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let b = sample_sphere(8, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        assert_eq!(a, b);
        assert!((norm(a.as_slice()) - 1.0).abs() < 1e-15);
        assert!(sample_sphere(1, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn large_dimension_unit_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..5 {
            let w = sample_sphere(10_000, &mut rng).unwrap();
            assert!((norm(w.as_slice()) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn perp_is_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for d in [3, 5, 50] {
            let w = sample_sphere(d, &mut rng).unwrap();
            for _ in 0..100 {
                let z = sample_perp(&w, &mut rng).unwrap();
                assert!(w.dot(z.as_slice()).abs() <= 1e-12);
                assert!((norm(z.as_slice()) - 1.0).abs() <= 1e-12);
            }
        }
        let w2 = UnitVector::basis(2, 0).unwrap();
        assert!(sample_perp(&w2, &mut rng).is_err());
    }

    #[test]
    fn nu_examples() {
        assert_eq!(nu_moment(0, 7), 1.0);
        assert!((nu_moment(1, 9) - 1.0 / 9.0).abs() < 1e-16);
        assert!((nu_moment(2, 10) - 3.0 / 120.0).abs() < 1e-16);
        assert_eq!(double_factorial_odd(4).unwrap(), 105.0);
        assert!(double_factorial_odd(33).is_err());
    }

    #[test]
    fn projection_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = sample_sphere(6, &mut rng).unwrap();
        let p = project_perp(&w, w.as_slice()).unwrap();
        assert!(p.norm() < 1e-15);
        let z = sample_perp(&w, &mut rng).unwrap();
        let p = project_perp(&w, z.as_slice()).unwrap();
        for (a, b) in p.components().iter().zip(z.iter()) {
            assert!((a - b).abs() < 1e-15);
        }
        let x: Vec<f64> = (0..6).map(|i| i as f64 - 2.5).collect();
        let p = project_perp(&w, &x).unwrap();
        let proj = w.dot(&x);
        assert!((p.norm().powi(2) + proj * proj - dot(&x, &x)).abs() < 1e-10);
        assert!(project_perp(&w, &x[..5]).is_err());
    }

    #[test]
    fn retraction_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let w = sample_sphere(5, &mut rng).unwrap();
        let same = retract(&w, &TangentVector::zero(w.clone()), 0.3).unwrap();
        assert_eq!(same, w);

        let u = sample_perp(&w, &mut rng).unwrap();
        let v = TangentVector::new(w.clone(), u.iter().map(|x| 2.0 * x).collect()).unwrap();
        let r = retract(&w, &v, 0.5).unwrap();
        let s2 = std::f64::consts::FRAC_1_SQRT_2;
        for ((ri, wi), ui) in r.iter().zip(w.iter()).zip(u.iter()) {
            assert!((ri - s2 * (wi + ui)).abs() < 1e-15);
        }
    }

    #[test]
    fn retraction_alignment_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let d = 9;
        let w = sample_sphere(d, &mut rng).unwrap();
        let ws = sample_sphere(d, &mut rng).unwrap();
        let mut x = vec![0.0; d];
        fill_gaussian(&mut rng, &mut x);
        let v = project_perp(&w, &x).unwrap();
        let eta = 0.37;
        let r = retract(&w, &v, eta).unwrap();
        let alpha = w.dot(ws.as_slice());
        let predicted = (alpha + eta * v.dot(ws.as_slice())) / (1.0 + eta * eta * v.norm().powi(2)).sqrt();
        assert!((r.dot(ws.as_slice()) - predicted).abs() < 1e-14);
    }

    #[test]
    fn at_alignment_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ws = sample_sphere(20, &mut rng).unwrap();
        let u = sample_perp(&ws, &mut rng).unwrap();
        let w = UnitVector::at_alignment(&ws, &u, 0.3).unwrap();
        assert!((w.dot(ws.as_slice()) - 0.3).abs() < 1e-15);
        assert!(UnitVector::at_alignment(&ws, &u, 1.5).is_err());
    }

    #[test]
    fn unit_vector_rejects_wrong_norm() {
        assert!(UnitVector::new(vec![1.0, 1.0]).is_err());
        assert!(UnitVector::normalize(vec![0.0, 0.0]).is_err());
        assert!(TangentVector::new(UnitVector::basis(2, 0).unwrap(), vec![1.0, 0.0]).is_err());
    }
}
