//! Self-checks of the closed forms against quadrature, Monte Carlo and finite
//! differences. Each suite returns one [`Check`] per comparison.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::hermite::{factorial, he_eval_unchecked, hermite_expand, LinkFunction};
use crate::quadrature::gauss_hermite;
use crate::smoothing::{smooth_alpha_power, smooth_alpha_power_deriv, smooth_univariate, SmoothedModel};
use crate::sphere::{fill_gaussian, nu_moment, sample_perp, sample_sphere, stein_check, UnitVector};
use crate::stats::RunningStats;

/// Standard errors allowed in Monte-Carlo comparisons.
pub const MC_SIGMAS: f64 = 4.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub suite: &'static str,
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} [{}] {}: {}", self.suite, self.name, self.detail)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Grid {
    /// `d = 8` only, fewer configurations.
    Quick,
    Full,
}

impl FromStr for Grid {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "quick" => Ok(Grid::Quick),
            "full" => Ok(Grid::Full),
            other => Err(Error::InvalidArgument(format!("unknown grid {other:?} (quick|full)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationOptions {
    pub mc_samples: usize,
    pub seed: u64,
    pub grid: Grid,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        ValidationOptions {
            mc_samples: 1_000_000,
            seed: 0,
            grid: Grid::Full,
        }
    }
}

fn check(suite: &'static str, name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Check {
    Check {
        suite,
        name: name.into(),
        passed,
        detail: detail.into(),
    }
}

/// Hermite orthogonality, the correlated-Gaussian identity and the
/// smoothing/derivative commutation identity.
pub fn validate_hermite(opts: &ValidationOptions) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    let rule = gauss_hermite(32)?;
    let mut worst: f64 = 0.0;
    for j in 0..=10 {
        for k in 0..=10 {
            let ip = rule.integrate(|x| he_eval_unchecked(j, x) * he_eval_unchecked(k, x));
            let want = if j == k { 1.0 } else { 0.0 };
            worst = worst.max((ip / (factorial(j) * factorial(k)).sqrt() - want).abs());
        }
    }
    out.push(check(
        "hermite",
        "orthogonality j,k <= 10",
        worst <= 1e-8,
        format!("max error {worst:.3e}"),
    ));

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let n = opts.mc_samples;
    let rho = 0.6;
    let pairs: &[(usize, usize)] = &[(1, 1), (2, 2), (3, 3), (4, 4), (2, 3), (1, 3)];
    let mut stats: Vec<RunningStats> = pairs.iter().map(|_| RunningStats::new()).collect();
    for _ in 0..n {
        let u: f64 = rng.sample(StandardNormal);
        let e: f64 = rng.sample(StandardNormal);
        let v = rho * u + (1.0 - rho * rho).sqrt() * e;
        for (s, &(j, k)) in stats.iter_mut().zip(pairs) {
            s.push(he_eval_unchecked(j, u) * he_eval_unchecked(k, v));
        }
    }
    for (s, &(j, k)) in stats.iter().zip(pairs) {
        let want = if j == k { factorial(k) * rho.powi(k as i32) } else { 0.0 };
        let est = s.estimate();
        out.push(check(
            "hermite",
            format!("E[He_{j}(u) He_{k}(v)], corr {rho}"),
            est.agrees_with(want, MC_SIGMAS),
            format!("{est} vs {want:.6}"),
        ));
    }

    let (d, lambda, alpha) = (20, 2.0, 0.3);
    let lhs = smooth_alpha_power_deriv(5, alpha, lambda, d)?;
    let s = (1.0f64 + lambda * lambda).sqrt();
    let first = smooth_univariate(|t| 5.0 * t.powi(4), alpha, lambda, d, 0)? / s;
    let second = smooth_univariate(|t| 20.0 * t.powi(3), alpha, lambda, d, 2)?;
    let rhs = first - lambda * lambda * alpha / ((1.0 + lambda * lambda) * (d as f64 - 1.0)) * second;
    let rel = (lhs - rhs).abs() / lhs.abs().max(f64::MIN_POSITIVE);
    out.push(check(
        "hermite",
        "derivative of smoothing commutes with dimension shift (g = t^5)",
        rel <= 1e-5,
        format!("lhs {lhs:.12} rhs {rhs:.12} rel {rel:.2e}"),
    ));
    Ok(out)
}

type NamedFn = (&'static str, fn(f64) -> f64);

/// Sphere moments and the spherical Stein identity.
pub fn validate_sphere(opts: &ValidationOptions) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(1));
    let dims: &[usize] = match opts.grid {
        Grid::Quick => &[4, 16],
        Grid::Full => &[4, 16, 64],
    };
    for &d in dims {
        let mut stats: Vec<RunningStats> = (0..=4).map(|_| RunningStats::new()).collect();
        for _ in 0..opts.mc_samples {
            let z = sample_sphere(d, &mut rng)?;
            let z1 = z.as_slice()[0];
            let z2 = z1 * z1;
            let mut p = 1.0;
            for s in stats.iter_mut() {
                s.push(p);
                p *= z2;
            }
        }
        for (k, s) in stats.iter().enumerate() {
            let want = nu_moment(k, d);
            let est = s.estimate();
            out.push(check(
                "sphere",
                format!("nu_{k}^({d})"),
                est.agrees_with(want, MC_SIGMAS),
                format!("{est} vs {want:.8}"),
            ));
        }
    }
    let funcs: [NamedFn; 3] = [
        ("t^3", |t| t.powi(3)),
        ("sin(3t)", |t| (3.0 * t).sin()),
        ("exp(t)", f64::exp),
    ];
    for (name, g) in funcs {
        let d = 12;
        let (lhs, rhs) = stein_check(g, d, opts.mc_samples, &mut rng)?;
        out.push(check(
            "sphere",
            format!("Stein identity, g = {name}, d = {d}"),
            lhs.agrees_with_estimate(&rhs, MC_SIGMAS),
            format!("{lhs} vs {rhs}"),
        ));
    }
    Ok(out)
}

/// `E_z[((w + λz)/‖w + λz‖)·v]^k`-type moments by direct sampling of `z ⊥ w`.
fn direct_smoothing<R, F>(w: &UnitVector, lambda: f64, samples: usize, rng: &mut R, mut each: F) -> Result<()>
where
    R: Rng + ?Sized,
    F: FnMut(&[f64]),
{
    let mut p = vec![0.0; w.dim()];
    for _ in 0..samples {
        let z = sample_perp(w, rng)?;
        for ((pi, &wi), &zi) in p.iter_mut().zip(w.iter()).zip(z.iter()) {
            *pi = wi + lambda * zi;
        }
        let n = crate::sphere::norm(&p);
        p.iter_mut().for_each(|v| *v /= n);
        each(&p);
    }
    Ok(())
}

/// Closed-form smoothing against direct sampling, and the per-sample
/// gradient against finite differences.
pub fn validate_smoothing(opts: &ValidationOptions) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(2));
    let dims: &[usize] = match opts.grid {
        Grid::Quick => &[8],
        Grid::Full => &[8, 64],
    };
    let alphas = [0.0, 0.1, 0.5, 0.9];
    for &d in dims {
        let lambdas = [0.0, 1.0, (d as f64).powf(0.25)];
        for &lambda in &lambdas {
            let w_star = sample_sphere(d, &mut rng)?;
            let perp = sample_perp(&w_star, &mut rng)?;
            for &alpha in &alphas {
                let w = UnitVector::at_alignment(&w_star, &perp, alpha)?;
                let mut stats: Vec<RunningStats> = (0..=6).map(|_| RunningStats::new()).collect();
                direct_smoothing(&w, lambda, opts.mc_samples, &mut rng, |p| {
                    let u = w_star.dot(p);
                    let mut acc = 1.0;
                    for s in stats.iter_mut() {
                        s.push(acc);
                        acc *= u;
                    }
                })?;
                for (k, s) in stats.iter().enumerate().skip(1) {
                    let want = smooth_alpha_power(k, alpha, lambda, d)?;
                    let est = s.estimate();
                    out.push(check(
                        "smoothing",
                        format!("L(alpha^{k}), d={d} lambda={lambda:.3} alpha={alpha}"),
                        est.agrees_with(want, MC_SIGMAS),
                        format!("{est} vs {want:.8}"),
                    ));
                }
            }
        }
    }

    let tanh_link = hermite_expand(|t: f64| t.tanh() + 0.3 * (t * t - 1.0), 12, 64)?;
    for &d in dims {
        for &lambda in &[1.0, (d as f64).powf(0.25)] {
            let w = sample_sphere(d, &mut rng)?;
            let mut x = vec![0.0; d];
            fill_gaussian(&mut rng, &mut x);
            let y = 0.8;
            let mut links: Vec<(String, LinkFunction)> = (1..=6)
                .map(|k| (format!("He_{k}/sqrt({k}!)"), LinkFunction::hermite(k).unwrap()))
                .collect();
            links.push(("tanh-like expansion".into(), tanh_link.clone()));
            let models: Vec<SmoothedModel> = links
                .iter()
                .map(|(_, l)| SmoothedModel::new(l.clone(), d, lambda))
                .collect::<Result<_>>()?;
            let mut stats: Vec<RunningStats> = models.iter().map(|_| RunningStats::new()).collect();
            direct_smoothing(&w, lambda, opts.mc_samples, &mut rng, |p| {
                let t: f64 = p.iter().zip(&x).map(|(a, b)| a * b).sum();
                for (s, (_, l)) in stats.iter_mut().zip(&links) {
                    s.push(1.0 - y * l.eval(t));
                }
            })?;
            for ((s, (name, _)), m) in stats.iter().zip(&links).zip(&models) {
                let want = m.sample_value(&w, &x, y)?;
                let est = s.estimate();
                out.push(check(
                    "smoothing",
                    format!("sample loss, {name}, d={d} lambda={lambda:.3}"),
                    est.agrees_with(want, MC_SIGMAS),
                    format!("{est} vs {want:.8}"),
                ));
            }
        }
    }

    let configs = match opts.grid {
        Grid::Quick => 10,
        Grid::Full => 100,
    };
    for k in 1..=5 {
        for &lambda in &[0.0, 1.0, 2.0] {
            let worst = gradient_fd_worst(k, lambda, configs, &mut rng)?;
            out.push(check(
                "smoothing",
                format!("gradient vs finite differences, k={k} lambda={lambda}"),
                worst <= 1e-5,
                format!("max relative error {worst:.2e} over {configs} configurations"),
            ));
        }
    }
    Ok(out)
}

/// Worst relative error between the analytic spherical gradient and a
/// geodesic central difference along an orthonormal tangent basis.
pub fn gradient_fd_worst<R: Rng + ?Sized>(k: usize, lambda: f64, configs: usize, rng: &mut R) -> Result<f64> {
    let link = LinkFunction::hermite(k)?;
    let mut worst: f64 = 0.0;
    for c in 0..configs {
        let d = 4 + c % 9;
        let model = SmoothedModel::new(link.clone(), d, lambda)?;
        let w = sample_sphere(d, rng)?;
        let mut x = vec![0.0; d];
        fill_gaussian(rng, &mut x);
        let y: f64 = rng.sample(StandardNormal);
        let g = model.sample_gradient(&w, &x, y)?;
        let basis = tangent_basis(&w);
        let h = 1e-4;
        let mut err2 = 0.0;
        let mut norm2 = 0.0;
        for u in &basis {
            let at = |t: f64| -> Result<f64> {
                let p: Vec<f64> = w.iter().zip(u).map(|(wi, ui)| t.cos() * wi + t.sin() * ui).collect();
                model.sample_value(&UnitVector::normalize(p)?, &x, y)
            };
            // Fourth-order central difference.
            let fd = (-at(2.0 * h)? + 8.0 * at(h)? - 8.0 * at(-h)? + at(-2.0 * h)?) / (12.0 * h);
            let an = g.direction.dot(u);
            err2 += (fd - an).powi(2);
            norm2 += an * an;
        }
        let scale = norm2.sqrt().max(1e-8);
        worst = worst.max(err2.sqrt() / scale);
    }
    Ok(worst)
}

/// Orthonormal basis of `w^⊥` by Gram–Schmidt on the standard basis.
fn tangent_basis(w: &UnitVector) -> Vec<Vec<f64>> {
    let d = w.dim();
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(d - 1);
    let mut cands: Vec<usize> = (0..d).collect();
    cands.sort_by(|&a, &b| w.as_slice()[a].abs().total_cmp(&w.as_slice()[b].abs()));
    for &i in cands.iter().take(d - 1) {
        let mut v = vec![0.0; d];
        v[i] = 1.0;
        for b in std::iter::once(w.as_slice()).chain(basis.iter().map(|b| b.as_slice())) {
            let p: f64 = v.iter().zip(b).map(|(a, c)| a * c).sum();
            v.iter_mut().zip(b).for_each(|(a, c)| *a -= p * c);
        }
        let n = crate::sphere::norm(&v);
        v.iter_mut().for_each(|a| *a /= n);
        basis.push(v);
    }
    basis
}

/// Every suite in order.
pub fn validate_all(opts: &ValidationOptions) -> Result<Vec<Check>> {
    let mut out = validate_hermite(opts)?;
    out.extend(validate_sphere(opts)?);
    out.extend(validate_smoothing(opts)?);
    Ok(out)
}
