//! Synthetic sources: spectral synthesis of stationary Gaussian signals, the
//! time-warping operator `y(t) = √γ'(t) · x(γ(t))`, time-varying
//! instantaneous mixing, and the three-source benchmark generator.
//!
//! Randomness comes from ChaCha20 seeded with a `u64`; independent streams
//! of one seed are selected with `set_stream`, so each stochastic component
//! of a dataset is reproducible on its own.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dsp;
use crate::error::{ensure, Error, Result};
use crate::signal::Signal;

/// Seeded generator for stream `stream` of `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Two-sided power spectral density sampled on a uniform grid from 0 Hz.
///
/// The process variance is `2 ∫₀^{f_max} S(f) df`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    freqs: Vec<f64>,
    values: Vec<f64>,
}

impl Spectrum {
    pub fn new(freqs: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        ensure!(
            freqs.len() >= 2,
            InvalidParameter,
            "spectrum needs at least 2 frequencies"
        );
        ensure!(
            freqs.len() == values.len(),
            InvalidParameter,
            "spectrum has {} frequencies but {} values",
            freqs.len(),
            values.len()
        );
        ensure!(
            freqs[0] >= 0.0,
            InvalidParameter,
            "spectrum grid must start at f ≥ 0"
        );
        let df = freqs[1] - freqs[0];
        ensure!(
            df > 0.0,
            InvalidParameter,
            "spectrum grid must be ascending"
        );
        for w in freqs.windows(2) {
            ensure!(
                ((w[1] - w[0]) - df).abs() <= 1e-9 * df.max(w[1].abs()),
                InvalidParameter,
                "spectrum grid is not uniform"
            );
        }
        ensure!(
            values.iter().all(|v| v.is_finite() && *v >= 0.0),
            InvalidParameter,
            "spectrum values must be finite and non-negative"
        );
        Ok(Spectrum { freqs, values })
    }

    /// Uniform grid of `n_points` from 0 to `f_max` with values `f(freq)`.
    pub fn from_fn(f_max: f64, n_points: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        ensure!(
            n_points >= 2 && f_max > 0.0,
            InvalidParameter,
            "bad spectrum grid"
        );
        let step = f_max / (n_points - 1) as f64;
        let freqs: Vec<f64> = (0..n_points).map(|i| i as f64 * step).collect();
        let values = freqs.iter().map(|&v| f(v)).collect();
        Spectrum::new(freqs, values)
    }

    /// Constant density `level` on `[0, f_max]`.
    pub fn flat(f_max: f64, n_points: usize, level: f64) -> Result<Self> {
        Spectrum::from_fn(f_max, n_points, |_| level)
    }

    /// Hann-shaped band on `[lo, hi]`, scaled to unit process variance.
    pub fn hann_band(lo: f64, hi: f64, f_max: f64, n_points: usize) -> Result<Self> {
        ensure!(
            0.0 <= lo && lo < hi && hi <= f_max,
            InvalidParameter,
            "bad Hann band [{lo}, {hi}]"
        );
        let s = Spectrum::from_fn(f_max, n_points, |f| {
            if f > lo && f < hi {
                let v = (PI * (f - lo) / (hi - lo)).sin();
                v * v
            } else {
                0.0
            }
        })?;
        s.normalized(1.0)
    }

    pub fn freqs(&self) -> &[f64] {
        &self.freqs
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn f_max(&self) -> f64 {
        *self.freqs.last().unwrap()
    }

    pub fn df(&self) -> f64 {
        self.freqs[1] - self.freqs[0]
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Linear interpolation, zero outside the grid.
    pub fn eval(&self, f: f64) -> f64 {
        let f0 = self.freqs[0];
        let df = self.df();
        let pos = (f - f0) / df;
        let last = (self.freqs.len() - 1) as f64;
        if !(0.0..=last).contains(&pos) {
            return 0.0;
        }
        let i = pos.floor() as usize;
        if i + 1 >= self.values.len() {
            return self.values[i];
        }
        let w = pos - i as f64;
        self.values[i] * (1.0 - w) + self.values[i + 1] * w
    }

    /// Process variance: twice the trapezoid integral over the half line.
    pub fn variance(&self) -> f64 {
        let df = self.df();
        let inner: f64 = self.values.windows(2).map(|w| 0.5 * (w[0] + w[1])).sum();
        2.0 * inner * df
    }

    pub fn normalized(&self, variance: f64) -> Result<Spectrum> {
        let v = self.variance();
        if v <= 0.0 {
            return Err(Error::InvalidParameter(
                "cannot normalise a zero spectrum".into(),
            ));
        }
        let s = variance / v;
        Ok(Spectrum {
            freqs: self.freqs.clone(),
            values: self.values.iter().map(|x| x * s).collect(),
        })
    }

    /// Power-weighted mean frequency.
    pub fn centroid(&self) -> f64 {
        let num: f64 = self
            .freqs
            .iter()
            .zip(&self.values)
            .map(|(f, v)| f * v)
            .sum();
        let den: f64 = self.values.iter().sum();
        num / den
    }

    /// Fraction of the variance inside `[lo, hi]`.
    pub fn mass_fraction(&self, lo: f64, hi: f64) -> f64 {
        let total: f64 = self.values.iter().sum();
        let inside: f64 = self
            .freqs
            .iter()
            .zip(&self.values)
            .filter(|(f, _)| **f >= lo && **f <= hi)
            .map(|(_, v)| v)
            .sum();
        inside / total
    }
}

/// Gaussian circularly-stationary realisation with spectral density `spectrum`.
pub fn synth_stationary(spectrum: &Spectrum, t: usize, fs: f64, seed: u64) -> Result<Signal> {
    let x = synth_stationary_with(spectrum, t, fs, &mut stream_rng(seed, 0))?;
    Signal::mono(fs, x)
}

pub(crate) fn synth_stationary_with(
    spectrum: &Spectrum,
    t: usize,
    fs: f64,
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    ensure!(t >= 8, InvalidParameter, "need at least 8 samples, got {t}");
    ensure!(fs > 0.0, InvalidParameter, "sample rate must be positive");
    ensure!(
        spectrum.max_value() > 0.0,
        InvalidParameter,
        "zero spectrum gives a degenerate process"
    );
    let n = t;
    let mut bins = vec![Complex64::new(0.0, 0.0); n];
    let amp = |m: usize| (n as f64 * fs * spectrum.eval(m as f64 * fs / n as f64)).sqrt();
    let mut gauss = || -> f64 { rng.sample(StandardNormal) };
    bins[0] = Complex64::new(amp(0) * gauss(), 0.0);
    let half = n / 2;
    for m in 1..n.div_ceil(2) {
        let a = amp(m) / 2f64.sqrt();
        let c = Complex64::new(a * gauss(), a * gauss());
        bins[m] = c;
        bins[n - m] = c.conj();
    }
    if n % 2 == 0 {
        bins[half] = Complex64::new(amp(half) * gauss(), 0.0);
    }
    dsp::ifft_in_place(&mut bins);
    Ok(bins.into_iter().map(|c| c.re).collect())
}

/// Monotone time warp sampled on the output grid: `gamma` in seconds,
/// `gamma_prime` dimensionless.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarpFunction {
    fs: f64,
    gamma: Vec<f64>,
    gamma_prime: Vec<f64>,
}

impl WarpFunction {
    pub fn new(fs: f64, gamma: Vec<f64>, gamma_prime: Vec<f64>) -> Result<Self> {
        ensure!(fs > 0.0, InvalidParameter, "sample rate must be positive");
        ensure!(
            gamma.len() == gamma_prime.len() && gamma.len() >= 2,
            InvalidParameter,
            "gamma and gamma_prime must have the same length ≥ 2"
        );
        ensure!(
            gamma_prime.iter().all(|g| g.is_finite() && *g > 0.0),
            InvalidParameter,
            "gamma_prime must be finite and positive"
        );
        ensure!(
            gamma.iter().all(|g| g.is_finite()),
            InvalidParameter,
            "gamma must be finite"
        );
        for n in 0..gamma.len() - 1 {
            ensure!(
                gamma[n + 1] > gamma[n],
                InvalidParameter,
                "gamma is not strictly increasing at {n}"
            );
            let slope = (gamma[n + 1] - gamma[n]) * fs;
            let mid = 0.5 * (gamma_prime[n] + gamma_prime[n + 1]);
            ensure!(
                (slope - mid).abs() <= 1e-3 * mid,
                InvalidParameter,
                "gamma and gamma_prime disagree at sample {n}: {slope} vs {mid}"
            );
        }
        Ok(WarpFunction {
            fs,
            gamma,
            gamma_prime,
        })
    }

    /// Integrates `gamma_prime` (cumulative trapezoid from 0).
    pub fn from_gamma_prime(fs: f64, gamma_prime: Vec<f64>) -> Result<Self> {
        let gamma = dsp::cumtrapz(&gamma_prime, 1.0 / fs);
        WarpFunction::new(fs, gamma, gamma_prime)
    }

    pub fn identity(fs: f64, t: usize) -> Self {
        WarpFunction::from_gamma_prime(fs, vec![1.0; t]).expect("identity warp")
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    pub fn len(&self) -> usize {
        self.gamma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gamma.is_empty()
    }

    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    pub fn gamma_prime(&self) -> &[f64] {
        &self.gamma_prime
    }

    /// `sup |γ'|`.
    pub fn gamma_prime_max(&self) -> f64 {
        self.gamma_prime.iter().copied().fold(0.0, f64::max)
    }

    /// Warp exponents `θ = log_q γ'`.
    pub fn theta(&self, q: f64) -> Vec<f64> {
        self.gamma_prime.iter().map(|g| g.ln() / q.ln()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum WarpSpec {
    /// `θ(t) = a · sin(2π f_w t + phase)`.
    Sine { a: f64, f_w: f64, phase: f64 },
    /// `θ` linear from `-a` to `a` over the signal.
    LinearChirp { a: f64 },
    /// `θ ≡ a` (identity after normalisation).
    Constant { a: f64 },
}

/// Builds a warp whose exponent `θ = log_q γ'` follows `spec`, re-centred to
/// zero mean over the grid.
pub fn build_warp(spec: &WarpSpec, q: f64, t: usize, fs: f64) -> Result<WarpFunction> {
    ensure!(q > 1.0, InvalidParameter, "scale base q must be > 1");
    ensure!(t >= 2, InvalidParameter, "warp needs at least 2 samples");
    let mut theta: Vec<f64> = match *spec {
        WarpSpec::Sine { a, f_w, phase } => (0..t)
            .map(|n| a * (2.0 * PI * f_w * n as f64 / fs + phase).sin())
            .collect(),
        WarpSpec::LinearChirp { a } => (0..t)
            .map(|n| a * (2.0 * n as f64 / (t - 1) as f64 - 1.0))
            .collect(),
        WarpSpec::Constant { a } => vec![a; t],
    };
    let m = dsp::mean(&theta);
    theta.iter_mut().for_each(|v| *v -= m);
    let gamma_prime: Vec<f64> = theta.iter().map(|th| q.powf(*th)).collect();
    let (lo, hi) = gamma_prime
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), g| {
            (lo.min(*g), hi.max(*g))
        });
    ensure!(
        lo >= 0.25 && hi <= 4.0,
        InvalidParameter,
        "warp leaves γ' ∈ [0.25, 4]: range [{lo}, {hi}]"
    );
    WarpFunction::from_gamma_prime(fs, gamma_prime)
}

/// `y[n] = √γ'[n] · x(γ[n])` with Catmull-Rom interpolation of `x`.
///
/// `x` may be sampled faster than the warp grid; its own rate is used to map
/// `γ` (seconds) to sample positions.
pub fn warp_signal(x: &Signal, warp: &WarpFunction) -> Result<Signal> {
    ensure!(
        x.n_channels() == 1,
        DimensionMismatch,
        "warp_signal expects a single channel"
    );
    let xs = x.channel(0);
    let last = (xs.len() - 1) as f64;
    let mut y = Vec::with_capacity(warp.len());
    for (g, gp) in warp.gamma.iter().zip(&warp.gamma_prime) {
        let pos = g * x.fs();
        if pos < -1e-9 || pos > last + 1e-9 {
            return Err(Error::OutOfRange(format!(
                "γ reaches sample {pos:.3} outside [0, {last}]"
            )));
        }
        y.push(gp.sqrt() * dsp::catmull_rom(xs, pos.clamp(0.0, last)));
    }
    Signal::mono(warp.fs, y)
}

/// Time-indexed mixing matrices `A(t)` with linear interpolation between knots.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingPath {
    times: Vec<usize>,
    matrices: Vec<DMatrix<f64>>,
}

impl MixingPath {
    pub fn new(times: Vec<usize>, matrices: Vec<DMatrix<f64>>) -> Result<Self> {
        ensure!(
            !times.is_empty(),
            InvalidParameter,
            "mixing path has no knots"
        );
        ensure!(
            times.len() == matrices.len(),
            InvalidParameter,
            "{} knot times but {} matrices",
            times.len(),
            matrices.len()
        );
        ensure!(
            times.windows(2).all(|w| w[1] > w[0]),
            InvalidParameter,
            "knot times must increase"
        );
        let n = matrices[0].nrows();
        for (k, m) in matrices.iter().enumerate() {
            if m.nrows() != n || m.ncols() != n {
                return Err(Error::DimensionMismatch(format!(
                    "mixing matrix {k} is {}x{}, expected {n}x{n}",
                    m.nrows(),
                    m.ncols()
                )));
            }
            let scale = m.amax();
            let det = m.determinant();
            ensure!(
                m.iter().all(|v| v.is_finite()) && det.abs() > 1e-10 * scale.powi(n as i32),
                InvalidParameter,
                "mixing matrix at knot {k} is singular (det {det:e})"
            );
        }
        Ok(MixingPath { times, matrices })
    }

    pub fn constant(a: DMatrix<f64>, t: usize) -> Result<Self> {
        MixingPath::new(vec![0, t.max(2) - 1], vec![a.clone(), a])
    }

    /// `A_ij(t) = c_ij + d_ij sin(2π f_ij t + φ_ij)` sampled every `step` samples.
    pub fn sinusoidal(
        c: &DMatrix<f64>,
        d: &DMatrix<f64>,
        freq: &DMatrix<f64>,
        phase: &DMatrix<f64>,
        fs: f64,
        t: usize,
        step: usize,
    ) -> Result<Self> {
        let mut times: Vec<usize> = (0..t).step_by(step.max(1)).collect();
        if *times.last().unwrap() != t - 1 {
            times.push(t - 1);
        }
        let matrices = times
            .iter()
            .map(|&n| sinusoidal_at(c, d, freq, phase, n as f64 / fs))
            .collect();
        MixingPath::new(times, matrices)
    }

    pub fn n(&self) -> usize {
        self.matrices[0].nrows()
    }

    pub fn times(&self) -> &[usize] {
        &self.times
    }

    pub fn matrices(&self) -> &[DMatrix<f64>] {
        &self.matrices
    }

    /// `A(n)` by linear interpolation of entries (constant beyond the ends).
    pub fn at(&self, n: f64) -> DMatrix<f64> {
        let first = self.times[0] as f64;
        let last = *self.times.last().unwrap() as f64;
        if n <= first || self.times.len() == 1 {
            return self.matrices[0].clone();
        }
        if n >= last {
            return self.matrices.last().unwrap().clone();
        }
        let j = self.times.partition_point(|&t| (t as f64) <= n);
        let (t0, t1) = (self.times[j - 1] as f64, self.times[j] as f64);
        let w = (n - t0) / (t1 - t0);
        &self.matrices[j - 1] * (1.0 - w) + &self.matrices[j] * w
    }

    pub fn covers(&self, t: usize) -> bool {
        self.times[0] == 0 && *self.times.last().unwrap() + 1 >= t
    }

    /// `sup_t |A'_ij(t)|` per sample, by finite differences between knots.
    pub fn derivative_sup(&self) -> DMatrix<f64> {
        let n = self.n();
        let mut out = DMatrix::zeros(n, n);
        for k in 1..self.times.len() {
            let dt = (self.times[k] - self.times[k - 1]) as f64;
            let slope = (&self.matrices[k] - &self.matrices[k - 1]) / dt;
            out.zip_apply(&slope, |o: &mut f64, s: f64| *o = o.max(s.abs()));
        }
        out
    }

    /// `min_t |det A(t)|` over the knots.
    pub fn min_abs_det(&self) -> f64 {
        self.matrices
            .iter()
            .map(|m| m.determinant().abs())
            .fold(f64::INFINITY, f64::min)
    }
}

fn sinusoidal_at(
    c: &DMatrix<f64>,
    d: &DMatrix<f64>,
    freq: &DMatrix<f64>,
    phase: &DMatrix<f64>,
    t: f64,
) -> DMatrix<f64> {
    DMatrix::from_fn(c.nrows(), c.ncols(), |i, j| {
        c[(i, j)] + d[(i, j)] * (2.0 * PI * freq[(i, j)] * t + phase[(i, j)]).sin()
    })
}

/// `z[n] = A(n) · y[n]`.
pub fn mix_time_varying(sources: &Signal, mixing: &MixingPath) -> Result<Signal> {
    let n = sources.n_channels();
    if n != mixing.n() {
        return Err(Error::DimensionMismatch(format!(
            "{n} sources but {}x{} mixing",
            mixing.n(),
            mixing.n()
        )));
    }
    let t = sources.len();
    ensure!(
        mixing.covers(t),
        OutOfRange,
        "mixing path does not cover {t} samples"
    );
    let mut out = vec![vec![0.0; t]; n];
    // walk segments between knots, interpolating entries per sample
    let times = mixing.times();
    let mut seg = 0;
    for s in 0..t {
        while seg + 1 < times.len() && times[seg + 1] <= s {
            seg += 1;
        }
        let a = if seg + 1 < times.len() {
            let (t0, t1) = (times[seg] as f64, times[seg + 1] as f64);
            let w = (s as f64 - t0) / (t1 - t0);
            &mixing.matrices()[seg] * (1.0 - w) + &mixing.matrices()[seg + 1] * w
        } else {
            mixing.matrices()[seg].clone()
        };
        for i in 0..n {
            let mut acc = 0.0;
            for j in 0..n {
                acc += a[(i, j)] * sources.channel(j)[s];
            }
            out[i][s] = acc;
        }
    }
    Signal::new(sources.fs(), out)
}

/// Generated sources, observations and the ground truth behind them.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub sources: Signal,
    pub observations: Signal,
    pub warps: Vec<WarpFunction>,
    pub spectra: Vec<Spectrum>,
    pub mixing: MixingPath,
    pub seed: u64,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.sources.n_channels()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        self.sources
            .check_same_shape(&self.observations, "sources vs observations")?;
        ensure!(
            self.warps.len() == n && self.spectra.len() == n && self.mixing.n() == n,
            DimensionMismatch,
            "dataset components disagree on the source count {n}"
        );
        ensure!(
            self.sources.fs() == self.observations.fs(),
            InvalidParameter,
            "sources and observations have different sample rates"
        );
        for w in &self.warps {
            ensure!(
                w.len() == self.sources.len(),
                DimensionMismatch,
                "warp length differs from signal length"
            );
        }
        ensure!(
            self.mixing.covers(self.sources.len()),
            OutOfRange,
            "mixing does not cover the signal"
        );
        Ok(())
    }
}

/// Knobs of the synthetic benchmark generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExampleConfig {
    /// Warp amplitude `a` (in units of `log_q`) drawn uniformly from this range.
    pub warp_amplitude: (f64, f64),
    /// Warp frequency (Hz) drawn uniformly from this range.
    pub warp_frequency: (f64, f64),
    /// Off-diagonal spread of the mean mixing matrix `I + U(-c, c)`.
    pub mixing_offdiag: f64,
    /// Modulation depths `d_ij ~ U(-d, d)`.
    pub mixing_depth: f64,
    /// Modulation frequencies: `N²` distinct values evenly spread on this range (Hz).
    pub mixing_frequency: (f64, f64),
    /// Required `min_t |det A(t)|`.
    pub min_det: f64,
    /// Oversampling factor of the stationary signals before warping.
    pub oversample: usize,
    /// Scale base used for the warp exponents.
    pub q: f64,
    /// Mixing knot spacing, samples.
    pub mixing_step: usize,
    /// Points of the stored spectra on `[0, fs/2]`.
    pub spectrum_points: usize,
}

impl Default for ExampleConfig {
    fn default() -> Self {
        ExampleConfig {
            warp_amplitude: (0.5, 1.0),
            warp_frequency: (1.5, 4.0),
            mixing_offdiag: 0.5,
            mixing_depth: 1.0,
            mixing_frequency: (1.0, 2.0),
            min_det: 0.1,
            oversample: 4,
            q: 2f64.powf(0.125),
            mixing_step: 8,
            spectrum_points: 4097,
        }
    }
}

impl ExampleConfig {
    /// Stationary sources (identity warps) and a constant mixing matrix.
    pub fn stationary() -> Self {
        ExampleConfig {
            warp_amplitude: (0.0, 0.0),
            mixing_depth: 0.0,
            ..ExampleConfig::default()
        }
    }

    pub fn generate(&self, n: usize, t: usize, fs: f64, seed: u64) -> Result<Dataset> {
        self.generate_realization(n, t, fs, seed, seed)
    }

    /// Warps and mixing drawn from `seed`, source noise from `realization`.
    ///
    /// Holding `seed` fixed gives independent realizations of one instance;
    /// `generate(.., seed)` is `generate_realization(.., seed, seed)`.
    pub fn generate_realization(
        &self,
        n: usize,
        t: usize,
        fs: f64,
        seed: u64,
        realization: u64,
    ) -> Result<Dataset> {
        ensure!(n >= 2, InvalidParameter, "need at least 2 sources, got {n}");
        ensure!(
            t >= 1024,
            InvalidParameter,
            "need at least 1024 samples, got {t}"
        );
        ensure!(fs > 0.0, InvalidParameter, "sample rate must be positive");
        ensure!(
            self.oversample >= 1,
            InvalidParameter,
            "oversample must be ≥ 1"
        );
        let nyq = fs / 2.0;
        let width = fs / (2.0 * (n as f64 + 1.0));
        let spectra: Vec<Spectrum> = (0..n)
            .map(|i| {
                let centre = (i as f64 + 0.5) / (n as f64 + 1.0) * nyq;
                Spectrum::hann_band(
                    centre - width / 2.0,
                    centre + width / 2.0,
                    nyq,
                    self.spectrum_points,
                )
            })
            .collect::<Result<_>>()?;

        let mut params = stream_rng(seed, 0);
        let uniform = |rng: &mut ChaCha20Rng, (lo, hi): (f64, f64)| {
            if hi > lo {
                rng.gen_range(lo..hi)
            } else {
                lo
            }
        };
        let specs: Vec<WarpSpec> = (0..n)
            .map(|_| WarpSpec::Sine {
                a: uniform(&mut params, self.warp_amplitude),
                f_w: uniform(&mut params, self.warp_frequency),
                phase: params.gen_range(0.0..2.0 * PI),
            })
            .collect();
        let warps: Vec<WarpFunction> = specs
            .iter()
            .map(|s| build_warp(s, self.q, t, fs))
            .collect::<Result<_>>()?;

        let os = self.oversample;
        let sources: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let w = &warps[i];
                let span = (w.gamma()[t - 1] * fs).ceil() as usize + 8;
                let mut rng = stream_rng(realization, 1 + i as u64);
                let fine = synth_stationary_with(&spectra[i], span * os, fs * os as f64, &mut rng)?;
                let x = Signal::mono(fs * os as f64, fine)?;
                Ok(warp_signal(&x, w)?.into_channels().remove(0))
            })
            .collect::<Result<_>>()?;
        let sources = Signal::new(fs, sources)?;

        let mixing = self.draw_mixing(n, t, fs, &mut params)?;
        let observations = mix_time_varying(&sources, &mixing)?;
        let ds = Dataset {
            sources,
            observations,
            warps,
            spectra,
            mixing,
            seed,
        };
        ds.validate()?;
        Ok(ds)
    }

    fn draw_mixing(
        &self,
        n: usize,
        t: usize,
        fs: f64,
        rng: &mut ChaCha20Rng,
    ) -> Result<MixingPath> {
        let draw_mean = |rng: &mut ChaCha20Rng| {
            DMatrix::from_fn(n, n, |i, j| {
                if i == j {
                    1.0
                } else if self.mixing_offdiag > 0.0 {
                    rng.gen_range(-self.mixing_offdiag..self.mixing_offdiag)
                } else {
                    0.0
                }
            })
        };
        let mut c = draw_mean(rng);
        let (flo, fhi) = self.mixing_frequency;
        let count = n * n;
        let mut freqs: Vec<f64> = (0..count)
            .map(|k| {
                if count == 1 {
                    flo
                } else {
                    flo + (fhi - flo) * k as f64 / (count - 1) as f64
                }
            })
            .collect();
        freqs.shuffle(rng);
        let freq = DMatrix::from_row_slice(n, n, &freqs);
        for attempt in 0..100 {
            // a badly conditioned mean matrix is redrawn along with the modulation
            if attempt > 0 {
                c = draw_mean(rng);
            }
            let d = DMatrix::from_fn(n, n, |_, _| {
                if self.mixing_depth > 0.0 {
                    rng.gen_range(-self.mixing_depth..self.mixing_depth)
                } else {
                    0.0
                }
            });
            let phase = DMatrix::from_fn(n, n, |_, _| rng.gen_range(0.0..2.0 * PI));
            let path = if self.mixing_depth > 0.0 {
                MixingPath::sinusoidal(&c, &d, &freq, &phase, fs, t, self.mixing_step)
            } else {
                MixingPath::constant(c.clone(), t)
            };
            match path {
                Ok(p) if p.min_abs_det() > self.min_det => return Ok(p),
                _ => continue,
            }
        }
        Err(Error::NoConvergence(
            "mixing matrix stayed near-singular after 100 perturbations".into(),
        ))
    }
}

/// Benchmark dataset with the default generator settings.
pub fn make_benchmark_example(n: usize, t: usize, fs: f64, seed: u64) -> Result<Dataset> {
    ensure!(
        t >= 1 << 13,
        InvalidParameter,
        "need T ≥ 8192 samples, got {t}"
    );
    ExampleConfig::default().generate(n, t, fs, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_spectrum_variance() {
        let s = Spectrum::flat(4096.0, 4097, 0.5).unwrap();
        assert!((s.variance() - 4096.0).abs() < 1e-9);
        assert_eq!(s.eval(5000.0), 0.0);
        assert_eq!(s.eval(100.3), 0.5);
    }

    #[test]
    fn hann_band_unit_variance() {
        let s = Spectrum::hann_band(100.0, 600.0, 4096.0, 4097).unwrap();
        assert!((s.variance() - 1.0).abs() < 1e-12);
        assert!((s.centroid() - 350.0).abs() < 1.0);
        assert_eq!(s.eval(50.0), 0.0);
    }

    #[test]
    fn zero_spectrum_rejected() {
        let s = Spectrum::flat(100.0, 11, 0.0).unwrap();
        assert!(matches!(
            synth_stationary(&s, 64, 200.0, 1),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn synth_is_deterministic() {
        let s = Spectrum::flat(50.0, 11, 1.0).unwrap();
        let a = synth_stationary(&s, 256, 100.0, 9).unwrap();
        let b = synth_stationary(&s, 256, 100.0, 9).unwrap();
        let c = synth_stationary(&s, 256, 100.0, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn identity_warp_is_exact() {
        let x: Vec<f64> = (0..100).map(|i| (i as f64 * 0.37).sin()).collect();
        let xs = Signal::mono(10.0, x.clone()).unwrap();
        let w = build_warp(&WarpSpec::Constant { a: 0.0 }, 2f64.powf(0.125), 100, 10.0).unwrap();
        let y = warp_signal(&xs, &w).unwrap();
        for (a, b) in y.channel(0).iter().zip(&x) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn doubling_warp_of_constant() {
        let xs = Signal::mono(1.0, vec![1.0; 64]).unwrap();
        let gamma: Vec<f64> = (0..30).map(|n| 2.0 * n as f64).collect();
        let w = WarpFunction::new(1.0, gamma, vec![2.0; 30]).unwrap();
        let y = warp_signal(&xs, &w).unwrap();
        assert!(y.channel(0).iter().all(|v| (v - 2f64.sqrt()).abs() < 1e-14));
    }

    #[test]
    fn warp_out_of_range() {
        let xs = Signal::mono(1.0, vec![1.0; 10]).unwrap();
        let gamma: Vec<f64> = (0..10).map(|n| 2.0 * n as f64).collect();
        let w = WarpFunction::new(1.0, gamma, vec![2.0; 10]).unwrap();
        assert!(matches!(warp_signal(&xs, &w), Err(Error::OutOfRange(_))));
    }

    #[test]
    fn sine_warp_peak_and_mean() {
        let q = 2f64.powf(0.125);
        // 2 Hz over exactly 1 s: the sine already has zero mean on the grid
        let w = build_warp(
            &WarpSpec::Sine {
                a: 0.5,
                f_w: 2.0,
                phase: 0.0,
            },
            q,
            8192,
            8192.0,
        )
        .unwrap();
        let expect = 2f64.powf(0.5 / 8.0);
        assert!(
            (w.gamma_prime_max() - expect).abs() < 1e-6,
            "{}",
            w.gamma_prime_max()
        );
        assert!((expect - 1.0443).abs() < 1e-4);
        let th = w.theta(q);
        assert!(dsp::mean(&th).abs() < 1e-6);
        let w = build_warp(
            &WarpSpec::Sine {
                a: 1.3,
                f_w: 1.7,
                phase: 0.4,
            },
            q,
            5000,
            8192.0,
        )
        .unwrap();
        assert!(dsp::mean(&w.theta(q)).abs() < 1e-6);
    }

    #[test]
    fn warp_bound_violation() {
        let q = 2f64.powf(0.125);
        let e = build_warp(&WarpSpec::LinearChirp { a: 40.0 }, q, 100, 10.0).unwrap_err();
        assert!(matches!(e, Error::InvalidParameter(_)));
    }

    #[test]
    fn mixing_identity_swap_and_diagonal() {
        let y = Signal::new(1.0, vec![vec![1.0, 2.0, 3.0], vec![-1.0, 0.5, 4.0]]).unwrap();
        let z = mix_time_varying(
            &y,
            &MixingPath::constant(DMatrix::identity(2, 2), 3).unwrap(),
        )
        .unwrap();
        assert_eq!(z, y);
        let swap = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let z = mix_time_varying(&y, &MixingPath::constant(swap, 3).unwrap()).unwrap();
        assert_eq!(z.channel(0), y.channel(1));
        assert_eq!(z.channel(1), y.channel(0));
        let diag = MixingPath::new(
            vec![0, 2],
            vec![
                DMatrix::from_diagonal_element(2, 2, 1.0),
                DMatrix::from_diagonal_element(2, 2, 3.0),
            ],
        )
        .unwrap();
        let z = mix_time_varying(&y, &diag).unwrap();
        for s in 0..3 {
            let g = 1.0 + s as f64;
            assert!((z.channel(0)[s] - g * y.channel(0)[s]).abs() < 1e-14);
            assert!((z.channel(1)[s] - g * y.channel(1)[s]).abs() < 1e-14);
        }
    }

    #[test]
    fn mixing_dimension_mismatch() {
        let y = Signal::new(1.0, vec![vec![1.0; 4]; 3]).unwrap();
        let m = MixingPath::constant(DMatrix::identity(2, 2), 4).unwrap();
        assert!(matches!(
            mix_time_varying(&y, &m),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn singular_mixing_rejected() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert!(MixingPath::constant(m, 10).is_err());
    }
}
