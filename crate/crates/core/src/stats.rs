//! Monte-Carlo summaries with standard errors.

use serde::{Deserialize, Serialize};

/// A Monte-Carlo mean together with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub se: f64,
    pub samples: u64,
}

impl McEstimate {
    /// Exact value with zero standard error.
    pub fn exact(value: f64) -> Self {
        McEstimate {
            mean: value,
            se: 0.0,
            samples: 0,
        }
    }

    /// `|mean - target| <= n_se * se`, with an absolute floor for zero-variance estimates.
    pub fn agrees_with(&self, target: f64, n_se: f64) -> bool {
        (self.mean - target).abs() <= n_se * self.se + 1e-12 * (1.0 + target.abs())
    }

    /// Agreement between two independent estimates, using the combined standard error.
    pub fn agrees_with_estimate(&self, other: &McEstimate, n_se: f64) -> bool {
        let se = self.se.hypot(other.se);
        (self.mean - other.mean).abs() <= n_se * se + 1e-12 * (1.0 + other.mean.abs())
    }

    /// Distance to `target` in units of standard error.
    pub fn z_score(&self, target: f64) -> f64 {
        if self.se == 0.0 {
            if self.mean == target {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            (self.mean - target) / self.se
        }
    }
}

impl std::fmt::Display for McEstimate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.6e} ± {:.2e}", self.mean, self.se)
    }
}

/// Welford accumulator.
#[derive(Debug, Clone, Default)]
pub struct RunningStats {
    n: u64,
    mean: f64,
    m2: f64,
}

impl RunningStats {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn estimate(&self) -> McEstimate {
        let se = if self.n < 2 {
            0.0
        } else {
            (self.variance() / self.n as f64).sqrt()
        };
        McEstimate {
            mean: self.mean,
            se,
            samples: self.n,
        }
    }
}

impl Extend<f64> for RunningStats {
    fn extend<I: IntoIterator<Item = f64>>(&mut self, iter: I) {
        for x in iter {
            self.push(x);
        }
    }
}

/// Median of a slice (average of the two middle values for even length).
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}
