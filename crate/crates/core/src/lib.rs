//! Blind separation of instantaneous, time-varying mixtures of time-warped
//! stationary Gaussian signals.
//!
//! The separation works in the continuous-wavelet domain: each source is a
//! stationary process seen through a smooth time warp, so its wavelet
//! coefficients at a fixed time are Gaussian with a covariance that only
//! shifts along the scale axis. The unmixing matrix is estimated by maximum
//! likelihood on a coarse knot grid, alternating with per-source estimation
//! of the warp and the underlying spectrum.
//!
//! Module map:
//!
//! * [`wavelet`]: analytic log-Gaussian wavelet, scale grids, FFT-based CWT.
//! * [`synthgen`]: spectral synthesis, time warping, time-varying mixing and
//!   the synthetic benchmark dataset.
//! * [`likelihood`]: source covariance model, negative log-likelihood and its
//!   gradient, the mixing-approximation error bound.
//! * [`warpest`]: per-source alternation between warp exponents and spectrum.
//! * [`sobi`]: SOBI and piecewise SOBI baselines.
//! * [`separator`]: the outer alternating estimation loop.
//! * [`metrics`]: SIR, the normalized interference index and source alignment.
//! * [`benchmark`]: seeded multi-trial comparison of the three algorithms.
//! * [`io`]: CSV/JSON bundles for signals, datasets and results.

// `!(x > 0.0)` is used on purpose so that NaN fails the check too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod benchmark;
pub mod dsp;
pub mod error;
pub mod exec;
pub mod io;
pub mod likelihood;
pub mod metrics;
pub mod separator;
pub mod signal;
pub mod sobi;
pub mod synthgen;
pub mod warpest;
pub mod wavelet;

pub use error::{Error, Result};
pub use exec::Exec;
pub use signal::Signal;
