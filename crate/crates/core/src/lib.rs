//! Smoothed online SGD for Gaussian single-index models.
//!
//! The target is `y = σ(w*·x) + noise` with `x ~ N(0, I_d)` and `w*` on the
//! unit sphere. Training minimizes the correlation loss `1 - y·σ(w·x)` after
//! averaging it over perturbations `(w + λz)/‖w + λz‖`, where `z` is uniform on
//! the unit sphere orthogonal to `w`. The crate is organized as:
//!
//! - [`hermite`]: univariate Hermite polynomials, Hermite expansions of link
//!   functions and the information exponent.
//! - [`quadrature`]: Gauss rules for the Gaussian and ultraspherical weights.
//! - [`sphere`]: sampling and geometry on `S^{d-1}`.
//! - [`smoothing`]: closed forms of the smoothing operator and the per-sample
//!   smoothed loss and gradient.
//! - [`sgd`]: the two-stage online SGD schedule, trial runners and SNR probes.
//! - [`tensor`] and [`tensor_pca`]: dense tensors, the spiked tensor model and
//!   the partial-trace estimator.
//! - [`experiment`]: sample-complexity sweeps, power-law fits and CSV output.
//! - [`validation`]: Monte-Carlo and quadrature checks of every closed form.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod experiment;
pub mod hermite;
pub mod quadrature;
pub mod sgd;
pub mod smoothing;
pub mod sphere;
pub mod stats;
pub mod tensor;
pub mod tensor_pca;
pub mod validation;

pub use error::{Error, Result};

pub use experiment::{fit_power_law, run_sweep, PowerLawFit, SweepConfig, SweepResult};
pub use hermite::{he_eval, he_monomial_coeffs, hermite_expand, information_exponent, LinkFunction};

pub use sgd::{default_schedule, Engine, LambdaPolicy, SgdSchedule, SnrProbe, TrialRecord};
pub use smoothing::{SampleGradient, SmoothedModel};
pub use sphere::{TangentVector, UnitVector};
pub use stats::McEstimate;
pub use tensor::DenseTensor;
