use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use smoothed_sgd::experiment::{read_plot_data, refit_rows, OUTPUT_ENV};
use smoothed_sgd::sgd::{run_trial, snr_probe, ScheduleOverrides, TrialSpec, DEFAULT_MAX_SAMPLES};
use smoothed_sgd::sphere::sample_sphere;
use smoothed_sgd::tensor_pca::{
    empirical_hermite_tensor, make_spiked_tensor, recover_spike, sample_single_index, NoiseMode, DEFAULT_ASCENT_STEPS,
};
use smoothed_sgd::validation::{
    validate_all, validate_hermite, validate_smoothing, validate_sphere, Grid, ValidationOptions,
};
use smoothed_sgd::{run_sweep, Engine, LambdaPolicy, LinkFunction, SmoothedModel, SweepConfig};

#[derive(Parser)]
#[command(
    name = "smoothed-sgd",
    version,
    about = "Smoothed online SGD for Gaussian single-index models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Suite {
    Hermite,
    Sphere,
    Smoothing,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum TpcaMode {
    Spiked,
    Hermite,
}

#[derive(Subcommand)]
enum Command {
    /// Check closed forms against quadrature, Monte Carlo and finite differences.
    Validate {
        #[arg(value_enum)]
        suite: Suite,
        #[arg(long, default_value_t = 1_000_000)]
        mc_samples: usize,
        #[arg(long, default_value = "full")]
        grid: Grid,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run one stage-1 trial and print its record as JSON.
    Run {
        #[arg(long)]
        k: usize,
        #[arg(long)]
        d: usize,
        #[arg(long, default_value = "scaled")]
        lambda: LambdaPolicy,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        #[arg(long, default_value = "ambient")]
        engine: Engine,
        #[arg(long, default_value_t = DEFAULT_MAX_SAMPLES as f64)]
        max_samples: f64,
        #[arg(long, default_value_t = 0.0)]
        noise_var: f64,
        /// Override the learning rate.
        #[arg(long)]
        eta: Option<f64>,
        /// Override the batch size.
        #[arg(long)]
        batch: Option<usize>,
        /// Override the smoothing level with an explicit value.
        #[arg(long)]
        lambda_value: Option<f64>,
        /// Write the recorded trajectory as CSV (step,alpha).
        #[arg(long)]
        trajectory: Option<PathBuf>,
    },
    /// Run a sweep described by a key = value config file.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; `SMOOTHED_SGD_OUT` takes precedence over the file.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Refit the power law from a summary CSV.
    Fit {
        #[arg(long)]
        input: PathBuf,
    },
    /// Estimate gradient signal and noise over a grid of alignments; CSV on stdout.
    ProbeSnr {
        #[arg(long, default_value_t = 3)]
        k: usize,
        #[arg(long, default_value_t = 1024)]
        d: usize,
        #[arg(long, default_value = "scaled")]
        lambda: LambdaPolicy,
        #[arg(long, value_delimiter = ',', default_value = "0.01,0.02,0.05,0.1,0.2,0.5")]
        alpha_grid: Vec<f64>,
        #[arg(long, default_value_t = 100_000)]
        batch: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Recover a planted spike from an order-k tensor.
    Tpca {
        #[arg(long)]
        k: usize,
        #[arg(long)]
        d: usize,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "spiked")]
        mode: TpcaMode,
        #[arg(long, default_value = "raw")]
        noise: NoiseMode,
        #[arg(long, default_value_t = DEFAULT_ASCENT_STEPS)]
        steps: usize,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match dispatch(Cli::parse().command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cmd: Command) -> Result<ExitCode> {
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match cmd {
        Command::Validate {
            suite,
            mc_samples,
            grid,
            seed,
        } => {
            let opts = ValidationOptions { mc_samples, seed, grid };
            let checks = match suite {
                Suite::Hermite => validate_hermite(&opts)?,
                Suite::Sphere => validate_sphere(&opts)?,
                Suite::Smoothing => validate_smoothing(&opts)?,
                Suite::All => validate_all(&opts)?,
            };
            for c in &checks {
                writeln!(out, "{c}")?;
            }
            let failed = checks.iter().filter(|c| !c.passed).count();
            writeln!(out, "{} checks, {} failed", checks.len(), failed)?;
            Ok(if failed == 0 {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
        Command::Run {
            k,
            d,
            lambda,
            seed,
            threshold,
            engine,
            max_samples,
            noise_var,
            eta,
            batch,
            lambda_value,
            trajectory,
        } => {
            if max_samples.is_nan() || max_samples < 1.0 {
                bail!("--max-samples must be >= 1");
            }
            let spec = TrialSpec {
                k,
                d,
                seed,
                policy: lambda,
                engine,
                threshold,
                max_samples: max_samples as u64,
                noise_var,
                overrides: ScheduleOverrides {
                    eta,
                    lambda: lambda_value,
                    batch_size: batch,
                },
            };
            let (traj, record) = run_trial(&spec)?;
            if let Some(path) = trajectory {
                let mut f = std::io::BufWriter::new(
                    std::fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?,
                );
                writeln!(f, "step,alpha")?;
                for (s, a) in &traj.points {
                    writeln!(f, "{s},{a}")?;
                }
            }
            writeln!(out, "{}", serde_json::to_string(&record)?)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Sweep { config, output } => {
            let mut cfg = SweepConfig::from_file(&config).with_context(|| format!("reading {}", config.display()))?;
            if output.is_some() {
                cfg.output = output;
            }
            cfg.apply_env_override();
            if cfg.output.is_none() {
                bail!("no output directory: set `output` in the config, pass --output or set {OUTPUT_ENV}");
            }
            let result = run_sweep(&cfg)?;
            for c in &result.cells {
                writeln!(out, "{}", serde_json::to_string(c)?)?;
            }
            for (k, f) in &result.fits {
                writeln!(out, "{}", json!({ "k": k, "fit": f }))?;
            }
            if let Some(dir) = &cfg.output {
                eprintln!(
                    "{} trials ({} resumed) written to {}",
                    result.records.len(),
                    result.resumed,
                    dir.display()
                );
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Fit { input } => {
            let rows = read_plot_data(&input).with_context(|| format!("reading {}", input.display()))?;
            for (k, f) in refit_rows(&rows)? {
                writeln!(
                    out,
                    "{}",
                    json!({ "k": k, "c1": f.c1, "c2": f.c2, "r_squared": f.r_squared, "points": f.points })
                )?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::ProbeSnr {
            k,
            d,
            lambda,
            alpha_grid,
            batch,
            seed,
        } => {
            let lam = match lambda {
                LambdaPolicy::Scaled => (d as f64).powf(0.25),
                LambdaPolicy::None => 0.0,
            };
            let model = SmoothedModel::new(LinkFunction::hermite(k)?, d, lam)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            writeln!(out, "alpha,signal,signal_se,noise,noise_se,snr")?;
            for alpha in alpha_grid {
                let p = snr_probe(&model, alpha, batch, &mut rng)?;
                writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    p.alpha, p.signal.mean, p.signal.se, p.noise.mean, p.noise.se, p.snr
                )?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Tpca {
            k,
            d,
            n,
            seed,
            mode,
            noise,
            steps,
        } => {
            if n == 0 {
                bail!("--n must be >= 1");
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w_star = sample_sphere(d, &mut rng)?;
            let (tensor, method) = match mode {
                TpcaMode::Spiked => (make_spiked_tensor(&w_star, n as f64, k, noise, &mut rng)?, "spiked"),
                TpcaMode::Hermite => {
                    let (xs, ys) = sample_single_index(&w_star, n, k, 0.0, &mut rng);
                    (empirical_hermite_tensor(&xs, &ys, k)?, "hermite")
                }
            };
            let rec = recover_spike(&tensor, steps, &mut rng)?;
            let report = json!({
                "k": k,
                "d": d,
                "n": n,
                "seed": seed,
                "method": method,
                "noise": if matches!(mode, TpcaMode::Spiked) { Some(noise.to_string()) } else { None },
                "warm_start_overlap": rec.warm_start.dot(w_star.as_slice()).abs(),
                "overlap": rec.overlap(&w_star),
                "power_iterations": rec.power_iterations,
                "steps": rec.ascent_steps,
            });
            writeln!(out, "{report}")?;
            Ok(ExitCode::SUCCESS)
        }
    }
}
