//! Sample-complexity sweeps over `(k, d, seed)`, power-law fits and plot data.
//!
//! Output directory layout:
//!
//! - `records.jsonl`: one trial per line in canonical `(k, d, seed index)`
//!   order, without wall-clock times so reruns are byte-identical.
//! - `records.partial.jsonl`: trials appended as they finish; merged into
//!   `records.jsonl` and removed at the end of a sweep.
//! - `summary.csv` and `summary.json`: per-cell aggregates and fits.
//!
//! Per-trial seeds come from a SplitMix64 chain:
//! `h = mix(root); h = mix(h ^ k); h = mix(h ^ d); seed = mix(h ^ index)`,
//! where `mix` is the SplitMix64 finalizer applied after adding the golden
//! gamma `0x9E3779B97F4A7C15`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::sgd::{run_trial, Engine, LambdaPolicy, ScheduleOverrides, TrialRecord, TrialSpec, DEFAULT_MAX_SAMPLES};

/// Environment variable that overrides the sweep output directory.
pub const OUTPUT_ENV: &str = "SMOOTHED_SGD_OUT";

/// Header of the plot-data CSV.
pub const CSV_HEADER: &str = "k,d,n_min,n_mean,n_max,fit_c1,fit_c2,fit_r2";

const RECORDS_FILE: &str = "records.jsonl";
const PARTIAL_FILE: &str = "records.partial.jsonl";
const SUMMARY_CSV: &str = "summary.csv";

/// SplitMix64 finalizer.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stable per-trial seed.
pub fn trial_seed(root: u64, k: usize, d: usize, index: usize) -> u64 {
    let h = splitmix64(root);
    let h = splitmix64(h ^ k as u64);
    let h = splitmix64(h ^ d as u64);
    splitmix64(h ^ index as u64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub k_list: Vec<usize>,
    pub d_list: Vec<usize>,
    pub seeds: usize,
    pub threshold: f64,
    pub lambda_policy: LambdaPolicy,
    pub engine: Engine,
    pub max_samples: u64,
    pub noise_var: f64,
    pub root_seed: u64,
    pub output: Option<PathBuf>,
    pub parallelism: usize,
    pub overrides: ScheduleOverrides,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            k_list: vec![3],
            d_list: vec![64, 128, 256, 512],
            seeds: 5,
            threshold: 0.5,
            lambda_policy: LambdaPolicy::Scaled,
            engine: Engine::Reduced,
            max_samples: DEFAULT_MAX_SAMPLES,
            noise_var: 0.0,
            root_seed: 0,
            output: None,
            parallelism: 1,
            overrides: ScheduleOverrides::default(),
        }
    }
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value
        .split(',')
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<usize>()
                .map_err(|e| Error::Config(format!("{key}: {s:?}: {e}")))
        })
        .collect()
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse::<T>()
        .map_err(|e| Error::Config(format!("{key}: {value:?}: {e}")))
}

impl SweepConfig {
    /// Parse `key = value` lines. `#` starts a comment. Keys:
    /// `k_list`, `d_list` (comma-separated), `seeds`, `threshold`,
    /// `lambda_policy` (scaled|none), `engine` (ambient|reduced), `max_samples`,
    /// `noise_var`, `root_seed`, `output`, `parallelism`, `eta`, `lambda`,
    /// `batch_size`. Unknown or repeated keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = SweepConfig::default();
        let mut seen = HashSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", lineno + 1)))?;
            let key = key.trim();
            let value = value.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {}: duplicate key {key:?}", lineno + 1)));
            }
            match key {
                "k_list" => cfg.k_list = parse_list(key, value)?,
                "d_list" => cfg.d_list = parse_list(key, value)?,
                "seeds" => cfg.seeds = parse_num(key, value)?,
                "threshold" => cfg.threshold = parse_num(key, value)?,
                "lambda_policy" => cfg.lambda_policy = value.parse()?,
                "engine" => cfg.engine = value.parse()?,
                "max_samples" => cfg.max_samples = parse_num::<f64>(key, value)? as u64,
                "noise_var" => cfg.noise_var = parse_num(key, value)?,
                "root_seed" => cfg.root_seed = parse_num(key, value)?,
                "output" => cfg.output = Some(PathBuf::from(value)),
                "parallelism" => cfg.parallelism = parse_num(key, value)?,
                "eta" => cfg.overrides.eta = Some(parse_num(key, value)?),
                "lambda" => cfg.overrides.lambda = Some(parse_num(key, value)?),
                "batch_size" => cfg.overrides.batch_size = Some(parse_num(key, value)?),
                other => return Err(Error::Config(format!("line {}: unknown key {other:?}", lineno + 1))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        SweepConfig::parse(&fs::read_to_string(path)?)
    }

    /// Replace the output directory with `$SMOOTHED_SGD_OUT` when set.
    pub fn apply_env_override(&mut self) {
        if let Some(dir) = std::env::var_os(OUTPUT_ENV).filter(|v| !v.is_empty()) {
            self.output = Some(PathBuf::from(dir));
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_list.is_empty() || self.d_list.is_empty() {
            return Err(Error::Config("k_list and d_list must be nonempty".into()));
        }
        if self.k_list.contains(&0) {
            return Err(Error::Config("information exponents must be >= 1".into()));
        }
        if self.d_list.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "d_list must be strictly increasing, got {:?}",
                self.d_list
            )));
        }
        if self.d_list[0] < 8 {
            return Err(Error::Config("dimensions must be >= 8".into()));
        }
        if self.seeds == 0 {
            return Err(Error::Config("seeds must be >= 1".into()));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(format!(
                "threshold must lie in (0, 1), got {}",
                self.threshold
            )));
        }
        if self.max_samples == 0 {
            return Err(Error::Config("max_samples must be >= 1".into()));
        }
        if !(self.noise_var >= 0.0) {
            return Err(Error::Config(format!("noise_var must be >= 0, got {}", self.noise_var)));
        }
        if self.parallelism == 0 {
            return Err(Error::Config("parallelism must be >= 1".into()));
        }
        Ok(())
    }

    /// Trial specs in canonical order.
    pub fn trials(&self) -> Vec<TrialSpec> {
        let mut out = Vec::new();
        for &k in &self.k_list {
            for &d in &self.d_list {
                for idx in 0..self.seeds {
                    out.push(TrialSpec {
                        k,
                        d,
                        seed: trial_seed(self.root_seed, k, d, idx),
                        policy: self.lambda_policy,
                        engine: self.engine,
                        threshold: self.threshold,
                        max_samples: self.max_samples,
                        noise_var: self.noise_var,
                        overrides: self.overrides,
                    });
                }
            }
        }
        out
    }
}

/// Identity of a trial for resuming: a hash of every parameter that affects it.
pub fn trial_key(spec: &TrialSpec) -> String {
    let mut h = splitmix64(spec.seed);
    let mut feed = |v: u64| h = splitmix64(h ^ v);
    feed(spec.k as u64);
    feed(spec.d as u64);
    feed(spec.policy as u64);
    feed(spec.engine as u64);
    feed(spec.threshold.to_bits());
    feed(spec.max_samples);
    feed(spec.noise_var.to_bits());
    feed(spec.overrides.eta.map_or(u64::MAX, f64::to_bits));
    feed(spec.overrides.lambda.map_or(u64::MAX, f64::to_bits));
    feed(spec.overrides.batch_size.map_or(u64::MAX, |b| b as u64));
    format!("{h:016x}")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StoredTrial {
    key: String,
    #[serde(flatten)]
    record: TrialRecord,
}

/// Aggregates over one `(k, d)` cell. Sample counts cover trials that hit
/// the threshold; capped or aborted trials are counted but excluded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub k: usize,
    pub d: usize,
    pub trials: usize,
    pub hits: usize,
    pub aborted: usize,
    pub n_min: Option<f64>,
    pub n_mean: Option<f64>,
    pub n_max: Option<f64>,
    /// No trial in the cell reached the threshold.
    pub flagged: bool,
}

pub fn summarize_cells(records: &[TrialRecord]) -> Vec<CellSummary> {
    let mut cells: BTreeMap<(usize, usize), Vec<&TrialRecord>> = BTreeMap::new();
    for r in records {
        cells.entry((r.k, r.d)).or_default().push(r);
    }
    cells
        .into_iter()
        .map(|((k, d), rs)| {
            let hits: Vec<f64> = rs
                .iter()
                .filter(|r| r.hit_threshold)
                .map(|r| r.samples_used as f64)
                .collect();
            let capped = rs.len() - hits.len();
            if capped > 0 {
                log::warn!(
                    "k = {k}, d = {d}: {capped} of {} trials did not reach the threshold",
                    rs.len()
                );
            }
            let (n_min, n_mean, n_max) = if hits.is_empty() {
                (None, None, None)
            } else {
                (
                    Some(hits.iter().copied().fold(f64::INFINITY, f64::min)),
                    Some(hits.iter().sum::<f64>() / hits.len() as f64),
                    Some(hits.iter().copied().fold(f64::NEG_INFINITY, f64::max)),
                )
            };
            CellSummary {
                k,
                d,
                trials: rs.len(),
                hits: hits.len(),
                aborted: rs.iter().filter(|r| r.aborted.is_some()).count(),
                n_min,
                n_mean,
                n_max,
                flagged: hits.is_empty(),
            }
        })
        .collect()
}

/// `n = c1 · d^{c2}` fitted by least squares on `(log d, log n)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub c1: f64,
    pub c2: f64,
    pub r_squared: f64,
    pub points: usize,
}

pub fn fit_power_law(points: &[(f64, f64)]) -> Result<PowerLawFit> {
    if points.len() < 3 {
        return invalid(format!("power-law fit needs >= 3 points, got {}", points.len()));
    }
    if let Some(p) = points
        .iter()
        .find(|(d, n)| !(*d > 0.0 && *n > 0.0 && d.is_finite() && n.is_finite()))
    {
        return invalid(format!("power-law fit needs positive finite points, got {p:?}"));
    }
    let m = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / m;
    let my = ys.iter().sum::<f64>() / m;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return invalid("power-law fit needs at least two distinct d");
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let r_squared = if ss_tot <= f64::EPSILON * my.abs().max(1.0) * m {
        1.0
    } else {
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    };
    Ok(PowerLawFit {
        c1: intercept.exp(),
        c2: slope,
        r_squared,
        points: points.len(),
    })
}

/// Fit per `k` over cells with a mean; `k`s with fewer than three such cells get no fit.
pub fn fit_cells(cells: &[CellSummary]) -> BTreeMap<usize, PowerLawFit> {
    let mut by_k: BTreeMap<usize, Vec<(f64, f64)>> = BTreeMap::new();
    for c in cells {
        if let Some(n) = c.n_mean {
            by_k.entry(c.k).or_default().push((c.d as f64, n));
        }
    }
    by_k.into_iter()
        .filter_map(|(k, pts)| match fit_power_law(&pts) {
            Ok(f) => Some((k, f)),
            Err(e) => {
                log::warn!("no fit for k = {k}: {e}");
                None
            }
        })
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Write the plot CSV to `path` and a JSON sidecar next to it.
pub fn emit_plot_data(
    cells: &[CellSummary],
    fits: &BTreeMap<usize, PowerLawFit>,
    config: Option<&SweepConfig>,
    path: &Path,
) -> Result<()> {
    if cells.is_empty() {
        return invalid("no cells to write");
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(CSV_HEADER.split(','))?;
    for c in cells {
        let fit = fits.get(&c.k);
        w.write_record([
            c.k.to_string(),
            c.d.to_string(),
            opt(c.n_min),
            opt(c.n_mean),
            opt(c.n_max),
            opt(fit.map(|f| f.c1)),
            opt(fit.map(|f| f.c2)),
            opt(fit.map(|f| f.r_squared)),
        ])?;
    }
    w.flush()?;
    // The output location is left out so that the sidecar only depends on the inputs.
    let config = config.map(|c| SweepConfig {
        output: None,
        ..c.clone()
    });
    let sidecar = serde_json::json!({ "config": config, "fits": fits, "cells": cells });
    let file = File::create(path.with_extension("json"))?;
    let mut out = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut out, &sidecar)?;
    writeln!(out)?;
    Ok(())
}

/// One row of the plot CSV.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct PlotRow {
    pub k: usize,
    pub d: usize,
    pub n_min: Option<f64>,
    pub n_mean: Option<f64>,
    pub n_max: Option<f64>,
    pub fit_c1: Option<f64>,
    pub fit_c2: Option<f64>,
    pub fit_r2: Option<f64>,
}

pub fn read_plot_data(path: &Path) -> Result<Vec<PlotRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(String::from).collect();
    if header.join(",") != CSV_HEADER {
        return Err(Error::Config(format!("unexpected CSV header {:?}", header.join(","))));
    }
    Ok(r.deserialize().collect::<std::result::Result<Vec<PlotRow>, _>>()?)
}

/// Refit `n_mean` against `d` for every `k` in a plot CSV.
pub fn refit_rows(rows: &[PlotRow]) -> Result<BTreeMap<usize, PowerLawFit>> {
    let mut by_k: BTreeMap<usize, Vec<(f64, f64)>> = BTreeMap::new();
    for row in rows {
        if let Some(n) = row.n_mean {
            by_k.entry(row.k).or_default().push((row.d as f64, n));
        }
    }
    by_k.into_iter().map(|(k, pts)| Ok((k, fit_power_law(&pts)?))).collect()
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub records: Vec<TrialRecord>,
    pub cells: Vec<CellSummary>,
    pub fits: BTreeMap<usize, PowerLawFit>,
    /// Trials loaded from a previous run instead of executed.
    pub resumed: usize,
}

fn load_stored(path: &Path, into: &mut HashMap<String, TrialRecord>) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<StoredTrial>(&line) {
            Ok(s) => {
                into.insert(s.key, s.record);
            }
            // A torn final line from an interrupted run.
            Err(e) => log::warn!("skipping unreadable record in {}: {e}", path.display()),
        }
    }
    Ok(())
}

fn failed_record(spec: &TrialSpec, err: &Error) -> TrialRecord {
    TrialRecord {
        k: spec.k,
        d: spec.d,
        seed: spec.seed,
        engine: spec.engine,
        lambda: 0.0,
        eta: 0.0,
        batch_size: 0,
        steps: 0,
        samples_used: 0,
        hit_threshold: false,
        final_alpha: 0.0,
        aborted: Some(err.to_string()),
        wall_time: None,
    }
}

/// Run every trial of `config`, reusing finished trials found in the output
/// directory. Trial failures are recorded, not propagated.
pub fn run_sweep(config: &SweepConfig) -> Result<SweepResult> {
    config.validate()?;
    let specs = config.trials();
    let keys: Vec<String> = specs.iter().map(trial_key).collect();
    let mut done = HashMap::new();
    if let Some(dir) = &config.output {
        fs::create_dir_all(dir)?;
        load_stored(&dir.join(RECORDS_FILE), &mut done)?;
        load_stored(&dir.join(PARTIAL_FILE), &mut done)?;
    }
    let todo: Vec<usize> = (0..specs.len()).filter(|&i| !done.contains_key(&keys[i])).collect();
    let resumed = specs.len() - todo.len();
    if resumed > 0 {
        log::info!("resuming: {resumed} of {} trials already done", specs.len());
    }

    let partial = match &config.output {
        Some(dir) => Some(Mutex::new(BufWriter::new(
            OpenOptions::new()
                .create(true)
                .append(true)
                .open(dir.join(PARTIAL_FILE))?,
        ))),
        None => None,
    };
    let started = Instant::now();
    let run_one = |&i: &usize| -> Result<(usize, TrialRecord)> {
        let spec = &specs[i];
        let record = match run_trial(spec) {
            Ok((_, r)) => r,
            Err(e) => failed_record(spec, &e),
        };
        log::debug!(
            "k = {} d = {} seed = {:016x}: samples {} hit {}",
            spec.k,
            spec.d,
            spec.seed,
            record.samples_used,
            record.hit_threshold
        );
        if let Some(out) = &partial {
            let stored = StoredTrial {
                key: keys[i].clone(),
                record: TrialRecord {
                    wall_time: None,
                    ..record.clone()
                },
            };
            let mut out = out
                .lock()
                .map_err(|_| Error::Numeric("record writer poisoned".into()))?;
            serde_json::to_writer(&mut *out, &stored)?;
            writeln!(out)?;
            out.flush()?;
        }
        Ok((i, record))
    };
    let fresh: Vec<(usize, TrialRecord)> = if config.parallelism > 1 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(config.parallelism)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?
            .install(|| todo.par_iter().map(run_one).collect::<Result<Vec<_>>>())?
    } else {
        todo.iter().map(run_one).collect::<Result<Vec<_>>>()?
    };
    log::info!("ran {} trials in {:.1}s", fresh.len(), started.elapsed().as_secs_f64());
    drop(partial);

    let mut by_index: HashMap<usize, TrialRecord> = fresh.into_iter().collect();
    let records: Vec<TrialRecord> = (0..specs.len())
        .map(|i| by_index.remove(&i).unwrap_or_else(|| done[&keys[i]].clone()))
        .collect();
    let cells = summarize_cells(&records);
    let fits = fit_cells(&cells);

    if let Some(dir) = &config.output {
        let mut out = BufWriter::new(File::create(dir.join(RECORDS_FILE))?);
        for (key, record) in keys.iter().zip(&records) {
            let stored = StoredTrial {
                key: key.clone(),
                record: TrialRecord {
                    wall_time: None,
                    ..record.clone()
                },
            };
            serde_json::to_writer(&mut out, &stored)?;
            writeln!(out)?;
        }
        out.flush()?;
        let partial_path = dir.join(PARTIAL_FILE);
        if partial_path.exists() {
            fs::remove_file(partial_path)?;
        }
        emit_plot_data(&cells, &fits, Some(config), &dir.join(SUMMARY_CSV))?;
    }
    Ok(SweepResult {
        records,
        cells,
        fits,
        resumed,
    })
}
