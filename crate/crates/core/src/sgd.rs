//! Smoothed online SGD on the sphere.
//!
//! Stage 1 runs minibatch SGD on the smoothed correlation loss with a fixed
//! `λ`, stepping along `-∇_w L_λ` and retracting onto the sphere, until the
//! alignment `α = w·w*` satisfies `α² ≥ threshold`. Stage 2 switches to `λ = 0`,
//! batch 1 and the decaying rate `η_t = c/(c⁴d + t)`.
//!
//! Two stage-1 engines are provided. [`Engine::Ambient`] simulates the full
//! `d`-dimensional iterate. [`Engine::Reduced`] simulates the same Markov chain
//! on `α` directly: by rotational invariance the law of `α_{t+1}` given the
//! past depends only on `α_t`, and one step needs only the coordinates of each
//! sample along `w`, along the `w*` direction orthogonal to `w`, and the norm
//! of the rest. That makes a step `O(B)` instead of `O(Bd)`.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::hermite::{factorial, LinkFunction};
use crate::smoothing::SmoothedModel;
use crate::sphere::{dot, fill_gaussian, sample_perp, sample_sphere, UnitVector};
use crate::stats::{McEstimate, RunningStats};

/// Default per-trial budget in samples.
pub const DEFAULT_MAX_SAMPLES: u64 = 1_000_000_000;

/// Default stage-2 decay constant.
pub const DEFAULT_STAGE2_C: f64 = 8.0;

/// Largest batch the default schedule will use.
pub const MAX_BATCH: f64 = 8192.0;

/// Smallest batch accepted by [`snr_probe`].
pub const MIN_PROBE_BATCH: usize = 100;

/// Stage 2 aborts when the alignment falls below this.
pub const STAGE2_COLLAPSE: f64 = 0.2;

/// Stage 2 requires a warm start at least this aligned.
pub const STAGE2_WARM_START: f64 = 0.7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LambdaPolicy {
    /// `λ = d^{1/4}`
    Scaled,
    /// `λ = 0`, the unsmoothed baseline.
    None,
}

impl FromStr for LambdaPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "scaled" => Ok(LambdaPolicy::Scaled),
            "none" => Ok(LambdaPolicy::None),
            other => Err(Error::InvalidArgument(format!(
                "unknown lambda policy {other:?} (scaled|none)"
            ))),
        }
    }
}

impl fmt::Display for LambdaPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LambdaPolicy::Scaled => "scaled",
            LambdaPolicy::None => "none",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    Ambient,
    Reduced,
}

impl FromStr for Engine {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ambient" => Ok(Engine::Ambient),
            "reduced" => Ok(Engine::Reduced),
            other => Err(Error::InvalidArgument(format!(
                "unknown engine {other:?} (ambient|reduced)"
            ))),
        }
    }
}

impl fmt::Display for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Engine::Ambient => "ambient",
            Engine::Reduced => "reduced",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgdSchedule {
    pub dim: usize,
    pub stage1_eta: f64,
    pub stage1_lambda: f64,
    /// Step cap for stage 1.
    pub stage1_steps: u64,
    /// `c` in `η_t = c/(c⁴d + t)`.
    pub stage2_c: f64,
    pub batch_size: usize,
}

impl SgdSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return invalid("batch size must be >= 1");
        }
        if !(self.stage1_eta > 0.0) || !self.stage1_eta.is_finite() {
            return invalid(format!(
                "stage-1 learning rate must be positive, got {}",
                self.stage1_eta
            ));
        }
        if !(self.stage1_lambda >= 0.0) || !self.stage1_lambda.is_finite() {
            return invalid(format!("stage-1 lambda must be >= 0, got {}", self.stage1_lambda));
        }
        if !(self.stage2_c > 0.0) {
            return invalid(format!(
                "stage-2 decay constant must be positive, got {}",
                self.stage2_c
            ));
        }
        let bound = (self.dim as f64).powf(0.25);
        if self.stage1_lambda > bound * (1.0 + 1e-9) {
            log::warn!("stage-1 lambda {} exceeds d^(1/4) = {bound:.4}", self.stage1_lambda);
        }
        Ok(())
    }

    /// Learning rate at stage-2 step `t` (counted from the start of stage 2).
    pub fn stage2_eta(&self, t: u64) -> f64 {
        let c = self.stage2_c;
        c / (c.powi(4) * self.dim as f64 + t as f64)
    }
}

/// The experimental schedule with `λ = d^{1/4}` (or 0), integer batch
/// `B = max(1, ⌊min(0.1 d^{k/2}(1+λ²)^{4-2k}, 8192)⌋)` and
/// `η = B d^{-k/2}(1+λ²)^{k-1}/(1000 k!)`.
pub fn default_schedule(k: usize, d: usize, policy: LambdaPolicy) -> Result<SgdSchedule> {
    if k == 0 {
        return invalid("information exponent must be >= 1");
    }
    if d < 8 {
        return invalid(format!("default schedule needs d >= 8, got {d}"));
    }
    let df = d as f64;
    let kf = k as f64;
    let lambda = match policy {
        LambdaPolicy::Scaled => df.powf(0.25),
        LambdaPolicy::None => 0.0,
    };
    let s2 = 1.0 + lambda * lambda;
    let raw_b = 0.1 * df.powf(kf / 2.0) * s2.powf(4.0 - 2.0 * kf);
    let batch = raw_b.min(MAX_BATCH).floor().max(1.0);
    let eta = batch * df.powf(-kf / 2.0) * s2.powf(kf - 1.0) / (1000.0 * factorial(k));
    let batch = batch as usize;
    Ok(SgdSchedule {
        dim: d,
        stage1_eta: eta,
        stage1_lambda: lambda,
        stage1_steps: DEFAULT_MAX_SAMPLES.div_ceil(batch as u64),
        stage2_c: DEFAULT_STAGE2_C,
        batch_size: batch,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StopRule {
    /// Stop at the first step with `α² ≥ threshold`.
    pub threshold: f64,
    pub max_steps: u64,
    /// Trajectory stride; `None` means `max(1, max_steps/1000)`.
    pub stride: Option<u64>,
}

impl StopRule {
    pub fn new(threshold: f64, max_steps: u64) -> Self {
        StopRule {
            threshold,
            max_steps,
            stride: None,
        }
    }

    fn stride(&self) -> u64 {
        self.stride.unwrap_or((self.max_steps / 1000).max(1)).max(1)
    }
}

/// Recorded `(step, α)` pairs.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Trajectory {
    pub stride: u64,
    pub points: Vec<(u64, f64)>,
}

impl Trajectory {
    fn new(stride: u64) -> Self {
        Trajectory {
            stride,
            points: Vec::new(),
        }
    }

    fn record(&mut self, step: u64, alpha: f64) {
        if step.is_multiple_of(self.stride) {
            self.points.push((step, alpha));
        }
    }

    fn finish(&mut self, step: u64, alpha: f64) {
        if self.points.last().map(|p| p.0) != Some(step) {
            self.points.push((step, alpha));
        }
    }

    pub fn alphas(&self) -> impl Iterator<Item = f64> + '_ {
        self.points.iter().map(|p| p.1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub k: usize,
    pub d: usize,
    pub seed: u64,
    pub engine: Engine,
    pub lambda: f64,
    pub eta: f64,
    pub batch_size: usize,
    pub steps: u64,
    pub samples_used: u64,
    pub hit_threshold: bool,
    pub final_alpha: f64,
    /// Set when the trial stopped on a numerical failure.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aborted: Option<String>,
    /// Seconds; left out of files that must be reproducible.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time: Option<f64>,
}

/// A stream of covariates and label noise. Every call hands out a fresh draw.
pub trait SampleSource {
    fn fill_covariate(&mut self, x: &mut [f64]);
    /// A standard normal used for label noise.
    fn label_noise(&mut self) -> f64;
    /// Number of covariates drawn so far.
    fn drawn(&self) -> u64;
}

/// `x ~ N(0, I_d)` from an RNG.
pub struct GaussianSource<'a, R: Rng + ?Sized> {
    rng: &'a mut R,
    drawn: u64,
}

impl<'a, R: Rng + ?Sized> GaussianSource<'a, R> {
    pub fn new(rng: &'a mut R) -> Self {
        GaussianSource { rng, drawn: 0 }
    }
}

impl<R: Rng + ?Sized> SampleSource for GaussianSource<'_, R> {
    fn fill_covariate(&mut self, x: &mut [f64]) {
        fill_gaussian(self.rng, x);
        self.drawn += 1;
    }

    fn label_noise(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    fn drawn(&self) -> u64 {
        self.drawn
    }
}

fn check_pair(w0: &UnitVector, w_star: &UnitVector, d: usize) -> Result<()> {
    if w0.dim() != d || w_star.dim() != d {
        return invalid(format!(
            "dimension mismatch: model d = {d}, w0 has {}, w* has {}",
            w0.dim(),
            w_star.dim()
        ));
    }
    Ok(())
}

fn check_stop(stop: &StopRule) -> Result<()> {
    if !(stop.threshold > 0.0 && stop.threshold < 1.0) {
        return invalid(format!("threshold must lie in (0, 1), got {}", stop.threshold));
    }
    Ok(())
}

fn base_record(model: &SmoothedModel, schedule: &SgdSchedule, engine: Engine, alpha: f64) -> TrialRecord {
    TrialRecord {
        k: model.link().info_exponent(),
        d: model.dim(),
        seed: 0,
        engine,
        lambda: model.lambda(),
        eta: schedule.stage1_eta,
        batch_size: schedule.batch_size,
        steps: 0,
        samples_used: 0,
        hit_threshold: false,
        final_alpha: alpha,
        aborted: None,
        wall_time: None,
    }
}

/// Stage 1 in the ambient space with Gaussian covariates from `rng`.
///
/// The model carries the link, `λ` and the label noise; the schedule's
/// `stage1_lambda` is not consulted.
pub fn run_stage1<R: Rng + ?Sized>(
    model: &SmoothedModel,
    schedule: &SgdSchedule,
    w0: &UnitVector,
    w_star: &UnitVector,
    stop: &StopRule,
    rng: &mut R,
) -> Result<(Trajectory, TrialRecord)> {
    let mut source = GaussianSource::new(rng);
    run_stage1_with_source(model, schedule, w0, w_star, stop, &mut source)
}

/// Stage 1 in the ambient space with an arbitrary sample source.
pub fn run_stage1_with_source<S: SampleSource + ?Sized>(
    model: &SmoothedModel,
    schedule: &SgdSchedule,
    w0: &UnitVector,
    w_star: &UnitVector,
    stop: &StopRule,
    source: &mut S,
) -> Result<(Trajectory, TrialRecord)> {
    let d = model.dim();
    check_pair(w0, w_star, d)?;
    check_stop(stop)?;
    schedule.validate()?;
    let start = Instant::now();
    let noise_sd = model.noise_var().sqrt();
    let batch = schedule.batch_size;
    let eta = schedule.stage1_eta;
    let link = model.link();
    let ws = w_star.as_slice();

    let mut w = w0.as_slice().to_vec();
    let mut x = vec![0.0; d];
    let mut acc = vec![0.0; d];
    let mut alpha = dot(&w, ws);
    let mut traj = Trajectory::new(stop.stride());
    traj.record(0, alpha);
    let mut record = base_record(model, schedule, Engine::Ambient, alpha);
    let drawn_before = source.drawn();

    let mut step = 0;
    while step < stop.max_steps && alpha * alpha < stop.threshold {
        acc.iter_mut().for_each(|v| *v = 0.0);
        let mut acc_a = 0.0;
        for _ in 0..batch {
            source.fill_covariate(&mut x);
            let (mut a, mut t, mut n2) = (0.0, 0.0, 0.0);
            for ((&xi, &wi), &si) in x.iter().zip(&w).zip(ws) {
                a += xi * wi;
                t += xi * si;
                n2 += xi * xi;
            }
            let mut y = link.eval(t);
            if noise_sd > 0.0 {
                y += noise_sd * source.label_noise();
            }
            let (_, c) = model.link_terms(a, (n2 - a * a).max(0.0));
            let g = y * c;
            if !g.is_finite() {
                record.aborted = Some(format!("non-finite gradient at step {step} (a = {a}, y = {y})"));
                break;
            }
            for (ai, &xi) in acc.iter_mut().zip(&x) {
                *ai += g * xi;
            }
            acc_a += g * a;
        }
        if record.aborted.is_some() {
            break;
        }
        // w ← normalize(w + η·v̄), v̄ = (Σ g_i P_w^⊥ x_i)/B = -∇.
        let scale = eta / batch as f64;
        let mut nrm = 0.0;
        for (wi, &ai) in w.iter_mut().zip(&acc) {
            *wi += scale * (ai - acc_a * *wi);
            nrm += *wi * *wi;
        }
        let nrm = nrm.sqrt();
        if !(nrm > 0.0) || !nrm.is_finite() {
            record.aborted = Some(format!("degenerate retraction at step {step} (norm {nrm})"));
            break;
        }
        w.iter_mut().for_each(|v| *v /= nrm);
        step += 1;
        alpha = dot(&w, ws).clamp(-1.0, 1.0);
        traj.record(step, alpha);
    }
    traj.finish(step, alpha);
    record.steps = step;
    record.samples_used = source.drawn() - drawn_before;
    debug_assert!(record.aborted.is_some() || record.samples_used == step * batch as u64);
    record.hit_threshold = record.aborted.is_none() && alpha * alpha >= stop.threshold;
    record.final_alpha = alpha;
    record.wall_time = Some(start.elapsed().as_secs_f64());
    Ok((traj, record))
}

/// Stage 1 simulated on the alignment alone.
///
/// Write `w* = αw + βe` with `e ⊥ w`, `β = √(1-α²)`, and split a covariate as
/// `x = x₁w + x₂e + r`. The ascent direction of one sample is `γ(x₂e + r)` with
/// `γ = y·c(x₁, x₂² + ‖r‖²)`, so after a batch of size `B`
///
/// ```text
/// α' = (α + ηβ P/B) / √(1 + η²((P/B)² + ‖R‖²/B²)),  P = Σγx₂,  R = Σγr.
/// ```
///
/// `‖R‖` is tracked exactly in law: each new `r` splits into a standard normal
/// component along the running sum and an independent `χ²_{d-3}` remainder.
/// For `λ = 0`, `γ` does not depend on `r` and `‖R‖² = (Σγ²)·χ²_{d-2}`.
pub fn run_stage1_reduced<R: Rng + ?Sized>(
    model: &SmoothedModel,
    schedule: &SgdSchedule,
    alpha0: f64,
    stop: &StopRule,
    rng: &mut R,
) -> Result<(Trajectory, TrialRecord)> {
    let d = model.dim();
    if d < 4 {
        return invalid(format!("reduced engine needs d >= 4, got {d}"));
    }
    if !(-1.0..=1.0).contains(&alpha0) {
        return invalid(format!("initial alignment {alpha0} outside [-1, 1]"));
    }
    check_stop(stop)?;
    schedule.validate()?;
    let start = Instant::now();
    let noise_sd = model.noise_var().sqrt();
    let batch = schedule.batch_size;
    let bf = batch as f64;
    let eta = schedule.stage1_eta;
    let link = model.link();
    let smoothed = model.lambda() > 0.0;
    let chi_rest = ChiSquared::new((d - 3) as f64).map_err(|e| Error::Numeric(e.to_string()))?;
    let chi_perp = ChiSquared::new((d - 2) as f64).map_err(|e| Error::Numeric(e.to_string()))?;

    let mut alpha = alpha0;
    let mut traj = Trajectory::new(stop.stride());
    traj.record(0, alpha);
    let mut record = base_record(model, schedule, Engine::Reduced, alpha);
    let mut step = 0;
    while step < stop.max_steps && alpha * alpha < stop.threshold {
        let beta = (1.0 - alpha * alpha).max(0.0).sqrt();
        let mut p = 0.0;
        let mut rest_sq: f64 = 0.0;
        let mut gamma_sq = 0.0;
        for _ in 0..batch {
            let x1: f64 = rng.sample(StandardNormal);
            let x2: f64 = rng.sample(StandardNormal);
            let mut y = link.eval(alpha * x1 + beta * x2);
            if noise_sd > 0.0 {
                y += noise_sd * rng.sample::<f64, _>(StandardNormal);
            }
            if smoothed {
                let g: f64 = rng.sample(StandardNormal);
                let rho = chi_rest.sample(rng);
                let (_, c) = model.link_terms(x1, x2 * x2 + g * g + rho);
                let gamma = y * c;
                p += gamma * x2;
                let along = rest_sq.sqrt() + gamma * g;
                rest_sq = along * along + gamma * gamma * rho;
            } else {
                let gamma = y * link.derivative(x1);
                p += gamma * x2;
                gamma_sq += gamma * gamma;
            }
        }
        if !smoothed {
            rest_sq = gamma_sq * chi_perp.sample(rng);
        }
        let pm = p / bf;
        let v_sq = pm * pm + rest_sq / (bf * bf);
        let next = (alpha + eta * beta * pm) / (1.0 + eta * eta * v_sq).sqrt();
        if !next.is_finite() {
            record.aborted = Some(format!("non-finite update at step {step} (alpha = {alpha})"));
            break;
        }
        alpha = next.clamp(-1.0, 1.0);
        step += 1;
        traj.record(step, alpha);
    }
    traj.finish(step, alpha);
    record.steps = step;
    record.samples_used = step * batch as u64;
    record.hit_threshold = record.aborted.is_none() && alpha * alpha >= stop.threshold;
    record.final_alpha = alpha;
    record.wall_time = Some(start.elapsed().as_secs_f64());
    Ok((traj, record))
}

/// Overrides applied on top of [`default_schedule`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ScheduleOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
}

/// Everything needed to run one seeded stage-1 trial of `σ = He_k/√k!`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSpec {
    pub k: usize,
    pub d: usize,
    pub seed: u64,
    pub policy: LambdaPolicy,
    pub engine: Engine,
    pub threshold: f64,
    pub max_samples: u64,
    pub noise_var: f64,
    #[serde(default)]
    pub overrides: ScheduleOverrides,
}

impl TrialSpec {
    pub fn new(k: usize, d: usize, seed: u64, policy: LambdaPolicy) -> Self {
        TrialSpec {
            k,
            d,
            seed,
            policy,
            engine: Engine::Ambient,
            threshold: 0.5,
            max_samples: DEFAULT_MAX_SAMPLES,
            noise_var: 0.0,
            overrides: ScheduleOverrides::default(),
        }
    }

    pub fn schedule(&self) -> Result<SgdSchedule> {
        let mut s = default_schedule(self.k, self.d, self.policy)?;
        if let Some(eta) = self.overrides.eta {
            s.stage1_eta = eta;
        }
        if let Some(l) = self.overrides.lambda {
            s.stage1_lambda = l;
        }
        if let Some(b) = self.overrides.batch_size {
            s.batch_size = b;
        }
        s.stage1_steps = self.max_samples.div_ceil(s.batch_size.max(1) as u64);
        s.validate()?;
        Ok(s)
    }
}

/// Run one trial from `α₀ = d^{-1/2}` with a ChaCha8 stream seeded by `spec.seed`.
pub fn run_trial(spec: &TrialSpec) -> Result<(Trajectory, TrialRecord)> {
    let schedule = spec.schedule()?;
    let link = LinkFunction::hermite(spec.k)?;
    let model = SmoothedModel::new(link, spec.d, schedule.stage1_lambda)?.with_noise_var(spec.noise_var)?;
    let stop = StopRule::new(spec.threshold, schedule.stage1_steps);
    let alpha0 = (spec.d as f64).powf(-0.5);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (traj, mut record) = match spec.engine {
        Engine::Ambient => {
            let w_star = sample_sphere(spec.d, &mut rng)?;
            let perp = sample_perp(&w_star, &mut rng)?;
            let w0 = UnitVector::at_alignment(&w_star, &perp, alpha0)?;
            run_stage1(&model, &schedule, &w0, &w_star, &stop, &mut rng)?
        }
        Engine::Reduced => run_stage1_reduced(&model, &schedule, alpha0, &stop, &mut rng)?,
    };
    record.seed = spec.seed;
    Ok((traj, record))
}

/// Stage 2: `λ = 0`, batch 1, `η_t = c/(c⁴d + t)` for `steps` fresh samples.
pub fn run_stage2<R: Rng + ?Sized>(
    model: &SmoothedModel,
    w_start: &UnitVector,
    w_star: &UnitVector,
    steps: u64,
    c: f64,
    rng: &mut R,
) -> Result<UnitVector> {
    let d = model.dim();
    check_pair(w_start, w_star, d)?;
    if model.lambda() != 0.0 {
        return invalid(format!("stage 2 runs unsmoothed, got lambda = {}", model.lambda()));
    }
    if !(c > 0.0) {
        return invalid(format!("decay constant must be positive, got {c}"));
    }
    let alpha0 = w_start.dot(w_star.as_slice());
    if alpha0 < STAGE2_WARM_START {
        return invalid(format!("stage 2 needs w_start·w* >= {STAGE2_WARM_START}, got {alpha0}"));
    }
    if steps == 0 {
        return Ok(w_start.clone());
    }
    let schedule = SgdSchedule {
        dim: d,
        stage1_eta: 1.0,
        stage1_lambda: 0.0,
        stage1_steps: 0,
        stage2_c: c,
        batch_size: 1,
    };
    let noise_sd = model.noise_var().sqrt();
    let link = model.link();
    let ws = w_star.as_slice();
    let mut w = w_start.as_slice().to_vec();
    let mut x = vec![0.0; d];
    for t in 0..steps {
        fill_gaussian(rng, &mut x);
        let (mut a, mut s) = (0.0, 0.0);
        for ((&xi, &wi), &si) in x.iter().zip(&w).zip(ws) {
            a += xi * wi;
            s += xi * si;
        }
        let mut y = link.eval(s);
        if noise_sd > 0.0 {
            y += noise_sd * rng.sample::<f64, _>(StandardNormal);
        }
        let g = schedule.stage2_eta(t) * y * link.derivative(a);
        if !g.is_finite() {
            return Err(Error::Numeric(format!("non-finite stage-2 gradient at step {t}")));
        }
        let mut nrm = 0.0;
        for (wi, &xi) in w.iter_mut().zip(&x) {
            *wi += g * (xi - a * *wi);
            nrm += *wi * *wi;
        }
        let nrm = nrm.sqrt();
        w.iter_mut().for_each(|v| *v /= nrm);
        let alpha = dot(&w, ws);
        if alpha < STAGE2_COLLAPSE {
            return Err(Error::AlignmentCollapse { step: t + 1, alpha });
        }
    }
    UnitVector::normalize(w)
}

/// Monte-Carlo signal and noise of the per-sample ascent direction
/// `v = -∇_w L_λ(w; x; y)` at alignment `α`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SnrProbe {
    pub alpha: f64,
    /// `E[v·w*]`
    pub signal: McEstimate,
    /// `E[‖v‖²]`
    pub noise: McEstimate,
    pub snr: f64,
}

/// Estimate signal and noise from `batch` fresh samples at exact alignment
/// `alpha_target`. Uses the same coordinate split as [`run_stage1_reduced`]:
/// `v·w* = γβx₂` and `‖v‖² = γ²q`.
pub fn snr_probe<R: Rng + ?Sized>(
    model: &SmoothedModel,
    alpha_target: f64,
    batch: usize,
    rng: &mut R,
) -> Result<SnrProbe> {
    if batch < MIN_PROBE_BATCH {
        return invalid(format!("SNR probe needs batch >= {MIN_PROBE_BATCH}, got {batch}"));
    }
    if !(alpha_target > 0.0 && alpha_target < 1.0) {
        return invalid(format!("alpha must lie in (0, 1), got {alpha_target}"));
    }
    let d = model.dim();
    let chi = ChiSquared::new((d - 2) as f64).map_err(|e| Error::Numeric(e.to_string()))?;
    let noise_sd = model.noise_var().sqrt();
    let link = model.link();
    let alpha = alpha_target;
    let beta = (1.0 - alpha * alpha).sqrt();
    let mut signal = RunningStats::new();
    let mut noise = RunningStats::new();
    for _ in 0..batch {
        let x1: f64 = rng.sample(StandardNormal);
        let x2: f64 = rng.sample(StandardNormal);
        let q = x2 * x2 + chi.sample(rng);
        let mut y = link.eval(alpha * x1 + beta * x2);
        if noise_sd > 0.0 {
            y += noise_sd * rng.sample::<f64, _>(StandardNormal);
        }
        let (_, c) = model.link_terms(x1, q);
        let gamma = y * c;
        signal.push(gamma * beta * x2);
        noise.push(gamma * gamma * q);
    }
    let signal = signal.estimate();
    let noise = noise.estimate();
    if !(noise.mean > 0.0) {
        return Err(Error::Numeric(format!(
            "SNR probe noise estimate {} is not positive",
            noise.mean
        )));
    }
    Ok(SnrProbe {
        alpha,
        snr: signal.mean * signal.mean / noise.mean,
        signal,
        noise,
    })
}
