//! Monte-Carlo level checks of the SGD engines, the SNR probe, stage 2,
//! tensor PCA generators and the sweep harness.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use smoothed_sgd::experiment::{emit_plot_data, read_plot_data, refit_rows};
use smoothed_sgd::sgd::{run_stage2, run_trial, snr_probe, TrialSpec};
use smoothed_sgd::sphere::{sample_perp, sample_sphere};
use smoothed_sgd::stats::{median, RunningStats};
use smoothed_sgd::tensor::DenseTensor;
use smoothed_sgd::tensor_pca::{empirical_hermite_tensor, sample_single_index};
use smoothed_sgd::{run_sweep, Engine, LambdaPolicy, LinkFunction, SmoothedModel, SweepConfig, UnitVector};

fn hitting_samples(k: usize, d: usize, policy: LambdaPolicy, engine: Engine, seeds: u64) -> RunningStats {
    let mut stats = RunningStats::new();
    for seed in 0..seeds {
        let mut spec = TrialSpec::new(k, d, 1000 + seed, policy);
        spec.engine = engine;
        let (_, rec) = run_trial(&spec).unwrap();
        assert!(rec.hit_threshold, "{rec:?}");
        stats.push(rec.samples_used as f64);
    }
    stats
}

#[test]
fn reduced_engine_matches_ambient_hitting_times() {
    for (k, d, policy) in [
        (3, 16, LambdaPolicy::Scaled),
        (3, 16, LambdaPolicy::None),
        (4, 12, LambdaPolicy::Scaled),
    ] {
        let a = hitting_samples(k, d, policy, Engine::Ambient, 24).estimate();
        let r = hitting_samples(k, d, policy, Engine::Reduced, 24).estimate();
        assert!(
            a.agrees_with_estimate(&r, 4.0),
            "k={k} d={d} {policy}: ambient {a} reduced {r}"
        );
    }
}

#[test]
fn unsmoothed_signal_scales_as_alpha_squared() {
    let m = SmoothedModel::new(LinkFunction::hermite(3).unwrap(), 64, 0.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut ratios = Vec::new();
    for alpha in [0.05, 0.1] {
        let p = snr_probe(&m, alpha, 4_000_000, &mut rng).unwrap();
        let scale = 1.0 / (alpha * alpha * (1.0 - alpha * alpha).sqrt());
        ratios.push((p.signal.mean * scale, p.signal.se * scale));
    }
    let diff = (ratios[0].0 - ratios[1].0).abs();
    let se = (ratios[0].1.powi(2) + ratios[1].1.powi(2)).sqrt();
    assert!(diff <= 4.0 * se, "{ratios:?}");
}

#[test]
fn unsmoothed_noise_grows_linearly_in_d() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut noise = Vec::new();
    for d in [64, 256] {
        let m = SmoothedModel::new(LinkFunction::hermite(3).unwrap(), d, 0.0).unwrap();
        noise.push(snr_probe(&m, 0.1, 400_000, &mut rng).unwrap().noise.mean);
    }
    let ratio = noise[1] / noise[0];
    let want = 255.0 / 63.0;
    assert!((ratio / want - 1.0).abs() <= 0.2, "ratio {ratio} want {want}");
}

fn stage2_gaps(steps: u64) -> Vec<f64> {
    let d = 64;
    let m = SmoothedModel::new(LinkFunction::hermite(3).unwrap(), d, 0.0).unwrap();
    (0..9)
        .map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w_star = sample_sphere(d, &mut rng).unwrap();
            let w0 = UnitVector::at_alignment(&w_star, &sample_perp(&w_star, &mut rng).unwrap(), 0.9).unwrap();
            let w = run_stage2(&m, &w0, &w_star, steps, 8.0, &mut rng).unwrap();
            1.0 - w.dot(w_star.as_slice())
        })
        .collect()
}

#[test]
fn longer_stage2_does_not_hurt() {
    let short = median(&stage2_gaps(3200)).unwrap();
    let long = median(&stage2_gaps(6400)).unwrap();
    assert!(long <= short, "median gap {long} after 2x steps vs {short}");
    assert!(short < 0.1);
}

#[test]
fn empirical_hermite_tensor_converges_to_spike() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let d = 8;
    let w = sample_sphere(d, &mut rng).unwrap();
    // Per-sample contractions y_i He_3(w·x_i)/√6 have mean 1; compare with their spread.
    let n = 100_000;
    let (xs, ys) = sample_single_index(&w, n, 3, 0.0, &mut rng);
    let t = empirical_hermite_tensor(&xs, &ys, 3).unwrap();
    let mut per = RunningStats::new();
    for (x, y) in xs.iter().zip(&ys) {
        let a = w.dot(x);
        per.push(y * (a.powi(3) - 3.0 * a) / 6f64.sqrt());
    }
    let got = t.eval_power(w.as_slice()).unwrap();
    assert!((got - per.mean()).abs() < 1e-9);
    assert!(per.estimate().agrees_with(1.0, 4.0), "{}", per.estimate());
}

#[test]
fn empirical_hermite_tensor_is_unbiased() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let d = 4;
    let w = sample_sphere(d, &mut rng).unwrap();
    let target = DenseTensor::outer_power(w.as_slice(), 3, 1 << 20).unwrap();
    let mut entries: Vec<RunningStats> = (0..d * d * d).map(|_| RunningStats::new()).collect();
    for _ in 0..50 {
        let (xs, ys) = sample_single_index(&w, 1000, 3, 0.0, &mut rng);
        let t = empirical_hermite_tensor(&xs, &ys, 3).unwrap();
        for (s, v) in entries.iter_mut().zip(t.data()) {
            s.push(*v);
        }
    }
    let bad = entries
        .iter()
        .zip(target.data())
        .filter(|(s, t)| !s.estimate().agrees_with(**t, 4.0))
        .count();
    assert!(bad <= 1, "{bad} of {} entries off", entries.len());
}

#[test]
fn sweep_basics() {
    let one = SweepConfig {
        d_list: vec![16],
        seeds: 1,
        ..Default::default()
    };
    assert_eq!(run_sweep(&one).unwrap().records.len(), 1);

    let cfg = SweepConfig {
        d_list: vec![16, 32, 64],
        seeds: 3,
        root_seed: 5,
        ..Default::default()
    };
    let a = run_sweep(&cfg).unwrap();
    let b = run_sweep(&cfg).unwrap();
    let strip = |r: &smoothed_sgd::SweepResult| {
        r.records
            .iter()
            .cloned()
            .map(|mut x| {
                x.wall_time = None;
                x
            })
            .collect::<Vec<_>>()
    };
    assert_eq!(strip(&a), strip(&b));
    let means: Vec<f64> = a.cells.iter().map(|c| c.n_mean.unwrap()).collect();
    assert!(means.windows(2).all(|w| w[0] < w[1]), "{means:?}");
    for c in &a.cells {
        assert!(c.n_min.unwrap() <= c.n_mean.unwrap() && c.n_mean.unwrap() <= c.n_max.unwrap());
    }

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("plot.csv");
    emit_plot_data(&a.cells, &a.fits, Some(&cfg), &path).unwrap();
    let rows = read_plot_data(&path).unwrap();
    assert_eq!(rows.len(), 3);
    let refit = refit_rows(&rows).unwrap();
    assert!((refit[&3].c2 - a.fits[&3].c2).abs() < 1e-12);
    assert!(dir.path().join("plot.json").exists());

    let single = SweepConfig {
        d_list: vec![16],
        seeds: 1,
        ..Default::default()
    };
    let r = run_sweep(&single).unwrap();
    emit_plot_data(&r.cells, &r.fits, None, &path).unwrap();
    assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), 2);
}

#[test]
fn sweep_resumes_from_directory() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SweepConfig {
        d_list: vec![8, 16],
        seeds: 2,
        output: Some(dir.path().to_path_buf()),
        ..Default::default()
    };
    let first = run_sweep(&cfg).unwrap();
    assert_eq!(first.resumed, 0);
    let bytes = std::fs::read(dir.path().join("records.jsonl")).unwrap();
    let bigger = SweepConfig {
        seeds: 3,
        ..cfg.clone()
    };
    let second = run_sweep(&bigger).unwrap();
    assert_eq!(second.resumed, 4);
    assert_eq!(second.records.len(), 6);
    let again = run_sweep(&cfg).unwrap();
    assert_eq!(again.resumed, 4);
    assert_eq!(std::fs::read(dir.path().join("records.jsonl")).unwrap(), bytes);
}
