//! Single-source alternation between warp exponents and spectrum.
//!
//! Given one (approximately separated) source, [`jefas`] starts from the
//! Welch spectrum of the signal as observed, estimates `θ(τ) = log_q γ'(τ)`
//! on a coarse time grid by maximising the wavelet-domain likelihood, undoes
//! the warp, and re-estimates the spectrum from the unwarped signal.
//!
//! The global dilation ambiguity (a uniformly faster warp and a dilated
//! spectrum explain the data equally well) is fixed by forcing `θ` to have
//! zero mean over the grid.

use serde::{Deserialize, Serialize};

use crate::dsp;
use crate::error::{ensure, Result};
use crate::exec::Exec;
use crate::likelihood::{
    CovarianceModel, SigmaFactor, DEFAULT_QUAD_POINTS, DEFAULT_SPECTRAL_FLOOR,
};
use crate::signal::Signal;
use crate::synthgen::Spectrum;
use crate::wavelet::{cwt_samples, ScaleGrid, WaveletFrame, WaveletParams};

/// Oversampling applied before cubic interpolation in [`unwarp`].
pub const UNWARP_OVERSAMPLE: usize = 4;

/// Warp exponents on an ascending grid of sample indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaPath {
    tau_grid: Vec<usize>,
    values: Vec<f64>,
    q: f64,
}

impl ThetaPath {
    pub fn new(tau_grid: Vec<usize>, values: Vec<f64>, q: f64) -> Result<Self> {
        ensure!(!tau_grid.is_empty(), InvalidParameter, "empty θ grid");
        ensure!(
            tau_grid.len() == values.len(),
            InvalidParameter,
            "θ grid has {} points but {} values",
            tau_grid.len(),
            values.len()
        );
        ensure!(
            tau_grid.windows(2).all(|w| w[1] > w[0]),
            InvalidParameter,
            "θ grid must increase"
        );
        ensure!(
            values.iter().all(|v| v.is_finite()),
            InvalidParameter,
            "θ values must be finite"
        );
        ensure!(q > 1.0, InvalidParameter, "q must be > 1");
        Ok(ThetaPath {
            tau_grid,
            values,
            q,
        })
    }

    /// `θ ≡ 0` on `tau_grid`.
    pub fn zero(tau_grid: Vec<usize>, q: f64) -> Result<Self> {
        let n = tau_grid.len();
        ThetaPath::new(tau_grid, vec![0.0; n], q)
    }

    pub fn tau_grid(&self) -> &[usize] {
        &self.tau_grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Linear interpolation, constant beyond the grid ends.
    pub fn at(&self, n: f64) -> f64 {
        let xs: Vec<f64> = self.tau_grid.iter().map(|&t| t as f64).collect();
        dsp::interp_linear(&xs, &self.values, n)
    }

    /// `θ(n)` for `n = 0..t`.
    pub fn dense(&self, t: usize) -> Vec<f64> {
        let xs: Vec<f64> = self.tau_grid.iter().map(|&v| v as f64).collect();
        (0..t)
            .map(|n| dsp::interp_linear(&xs, &self.values, n as f64))
            .collect()
    }

    pub fn max_abs_diff(&self, other: &ThetaPath) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Grid `D`: every `step` samples inside `[margin, t - margin)`.
pub fn tau_grid(t: usize, margin: usize, step: usize) -> Result<Vec<usize>> {
    ensure!(step > 0, InvalidParameter, "grid step must be positive");
    ensure!(
        2 * margin < t,
        InvalidParameter,
        "signal of {t} samples has no interior beyond a {margin}-sample margin"
    );
    Ok((margin..t - margin).step_by(step).collect())
}

/// How the per-τ likelihood is searched over `θ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ThetaSearch {
    pub coarse_step: f64,
    pub refine_tol: f64,
    /// Columns pooled around each τ (1 = single column).
    pub pool_columns: usize,
    pub pool_stride: usize,
    pub exec: Exec,
}

impl Default for ThetaSearch {
    fn default() -> Self {
        ThetaSearch {
            coarse_step: 0.1,
            refine_tol: 1e-3,
            pool_columns: 9,
            pool_stride: 16,
            exec: Exec::default(),
        }
    }
}

/// Per-τ maximum-likelihood warp exponents, mean-centred.
pub fn estimate_theta_path(
    frame: &WaveletFrame,
    model: &CovarianceModel,
    tau_grid: &[usize],
) -> Result<ThetaPath> {
    estimate_theta_path_with(frame, model, tau_grid, &ThetaSearch::default())
}

pub fn estimate_theta_path_with(
    frame: &WaveletFrame,
    model: &CovarianceModel,
    tau_grid: &[usize],
    search: &ThetaSearch,
) -> Result<ThetaPath> {
    ensure!(
        frame.n_scales() == model.m_s(),
        DimensionMismatch,
        "frame has {} scales, model has {}",
        frame.n_scales(),
        model.m_s()
    );
    ensure!(
        search.coarse_step > 0.0 && search.refine_tol > 0.0,
        InvalidParameter,
        "bad θ search steps"
    );
    ensure!(
        search.pool_columns >= 1,
        InvalidParameter,
        "pool_columns must be ≥ 1"
    );
    let t = frame.n_times();
    ensure!(
        tau_grid.iter().all(|&v| v < t),
        OutOfRange,
        "θ grid exceeds the frame length {t}"
    );
    let theta_max = model.theta_max();
    let n_coarse = (2.0 * theta_max / search.coarse_step).round() as usize + 1;
    let coarse: Vec<f64> = (0..n_coarse)
        .map(|k| (-theta_max + k as f64 * search.coarse_step).clamp(-theta_max, theta_max))
        .collect();
    let factors = search
        .exec
        .map(coarse.len(), |k| model.factor(coarse[k]))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;

    let half = (search.pool_columns as isize - 1) / 2;
    let stride = search.pool_stride as isize;
    let columns_at = |tau: usize| -> Vec<usize> {
        (0..search.pool_columns as isize)
            .map(|p| (tau as isize + (p - half) * stride).clamp(0, t as isize - 1) as usize)
            .collect()
    };
    let pooled = |f: &SigmaFactor, cols: &[usize]| -> f64 {
        cols.iter()
            .map(|&c| 0.5 * f.logdet() + 0.5 * f.quad_form(frame.column(c)))
            .sum()
    };

    let estimates = search.exec.map(tau_grid.len(), |g| -> Result<f64> {
        let cols = columns_at(tau_grid[g]);
        let (best, _) = factors
            .iter()
            .enumerate()
            .map(|(k, f)| (k, pooled(f, &cols)))
            .fold(
                (0, f64::INFINITY),
                |acc, (k, v)| if v < acc.1 { (k, v) } else { acc },
            );
        let lo = (coarse[best] - search.coarse_step).max(-theta_max);
        let hi = (coarse[best] + search.coarse_step).min(theta_max);
        golden_section(lo, hi, search.refine_tol, |th| {
            Ok(pooled(&model.factor(th)?, &cols))
        })
    });
    let mut values = estimates.into_iter().collect::<Result<Vec<_>>>()?;
    let m = dsp::mean(&values);
    for v in values.iter_mut() {
        *v = (*v - m).clamp(-theta_max, theta_max);
    }
    ThetaPath::new(tau_grid.to_vec(), values, model.grid().q())
}

/// Minimiser of a unimodal `f` on `[lo, hi]` to within `tol`.
fn golden_section(
    mut lo: f64,
    mut hi: f64,
    tol: f64,
    mut f: impl FnMut(f64) -> Result<f64>,
) -> Result<f64> {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - r * (hi - lo);
    let mut x2 = lo + r * (hi - lo);
    let mut f1 = f(x1)?;
    let mut f2 = f(x2)?;
    while hi - lo > tol {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - r * (hi - lo);
            f1 = f(x1)?;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + r * (hi - lo);
            f2 = f(x2)?;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Undoes the warp described by `theta`: `x̂(t) = √((γ⁻¹)'(t)) · y(γ⁻¹(t))`.
///
/// The output covers `[0, γ(T-1)]`, so its length differs from the input
/// when `θ` does not average to zero in `γ'`.
pub fn unwarp(y: &Signal, theta: &ThetaPath) -> Result<Signal> {
    ensure!(
        y.n_channels() == 1,
        DimensionMismatch,
        "unwarp expects a single channel"
    );
    let t = y.len();
    ensure!(t >= 4, InvalidParameter, "signal too short to unwarp");
    let q = theta.q();
    let gp: Vec<f64> = theta.dense(t).into_iter().map(|th| q.powf(th)).collect();
    // γ in samples
    let g = dsp::cumtrapz(&gp, 1.0);
    let n_out = g[t - 1].floor() as usize + 1;
    let up = dsp::upsample_fft(y.channel(0), UNWARP_OVERSAMPLE);
    let last = (up.len() - 1) as f64;
    let mut out = Vec::with_capacity(n_out);
    let mut j = 0;
    for u in 0..n_out {
        let uf = u as f64;
        while j + 2 < t && g[j + 1] <= uf {
            j += 1;
        }
        let w = ((uf - g[j]) / (g[j + 1] - g[j])).clamp(0.0, 1.0);
        let tinv = j as f64 + w;
        let gpinv = gp[j] * (1.0 - w) + gp[j + 1] * w;
        let pos = (tinv * UNWARP_OVERSAMPLE as f64).min(last);
        out.push(dsp::catmull_rom(&up, pos) / gpinv.sqrt());
    }
    Signal::mono(y.fs(), out)
}

/// Welch estimate (Hann, 50 % overlap) as a two-sided density on `[0, fs/2]`.
pub fn estimate_spectrum(x_hat: &Signal, n_segments: usize) -> Result<Spectrum> {
    ensure!(
        x_hat.n_channels() == 1,
        DimensionMismatch,
        "estimate_spectrum expects a single channel"
    );
    ensure!(
        n_segments >= 4,
        InvalidParameter,
        "need at least 4 Welch segments, got {n_segments}"
    );
    let x = x_hat.channel(0);
    let mut l = 2 * x.len() / (n_segments + 1);
    l -= l % 2;
    ensure!(l >= 64, InvalidParameter, "Welch segment length {l} < 64");
    let fs = x_hat.fs();
    let win = dsp::hann(l);
    let wpow: f64 = win.iter().map(|w| w * w).sum();
    let step = l / 2;
    let mut acc = vec![0.0; l / 2 + 1];
    let mut count = 0;
    let mut start = 0;
    while start + l <= x.len() {
        let seg = &x[start..start + l];
        let m = dsp::mean(seg);
        let windowed: Vec<f64> = seg.iter().zip(&win).map(|(v, w)| (v - m) * w).collect();
        let spec = dsp::fft_real(&windowed);
        for (a, c) in acc.iter_mut().zip(&spec) {
            *a += c.norm_sqr();
        }
        count += 1;
        start += step;
    }
    let norm = 1.0 / (count as f64 * fs * wpow);
    let freqs = (0..=l / 2).map(|m| m as f64 * fs / l as f64).collect();
    Spectrum::new(freqs, acc.into_iter().map(|v| v * norm).collect())
}

/// Settings of the single-source alternation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JefasConfig {
    pub grid: ScaleGrid,
    pub params: WaveletParams,
    /// Spacing of the θ grid, samples.
    pub tau_step: usize,
    pub welch_segments: usize,
    pub theta_tol: f64,
    pub max_iter: usize,
    pub theta_max: f64,
    pub quad_points: usize,
    pub spectral_floor: f64,
    pub search: ThetaSearch,
}

impl Default for JefasConfig {
    fn default() -> Self {
        JefasConfig {
            grid: ScaleGrid::default_grid(),
            params: WaveletParams::default(),
            tau_step: 256,
            welch_segments: 16,
            theta_tol: 0.02,
            max_iter: 10,
            theta_max: 3.0,
            quad_points: DEFAULT_QUAD_POINTS,
            spectral_floor: DEFAULT_SPECTRAL_FLOOR,
            search: ThetaSearch::default(),
        }
    }
}

impl JefasConfig {
    pub fn margin(&self) -> usize {
        self.grid.boundary_margin(&self.params)
    }

    pub fn tau_grid(&self, t: usize) -> Result<Vec<usize>> {
        tau_grid(t, self.margin(), self.tau_step)
    }

    pub fn model(&self, spectrum: Spectrum, fs: f64) -> Result<CovarianceModel> {
        CovarianceModel::with_options(
            &self.grid,
            &self.params,
            spectrum,
            fs,
            self.quad_points,
            self.theta_max,
            self.spectral_floor,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarpEstimate {
    pub theta: ThetaPath,
    pub spectrum: Spectrum,
    pub iterations: usize,
    pub converged: bool,
}

/// Alternates θ estimation, unwarping and Welch re-estimation on one source.
pub fn jefas(y: &Signal, cfg: &JefasConfig) -> Result<WarpEstimate> {
    ensure!(
        y.n_channels() == 1,
        DimensionMismatch,
        "jefas expects a single channel"
    );
    ensure!(cfg.max_iter >= 1, InvalidParameter, "max_iter must be ≥ 1");
    let taus = cfg.tau_grid(y.len())?;
    let frame = cwt_samples(
        y.channel(0),
        y.fs(),
        &cfg.grid,
        &cfg.params,
        cfg.search.exec,
    )?;
    let mut spectrum = estimate_spectrum(y, cfg.welch_segments)?;
    let mut theta = ThetaPath::zero(taus.clone(), cfg.grid.q())?;
    for it in 1..=cfg.max_iter {
        let model = cfg.model(spectrum, y.fs())?;
        let next = estimate_theta_path_with(&frame, &model, &taus, &cfg.search)?;
        let change = next.max_abs_diff(&theta);
        theta = next;
        spectrum = estimate_spectrum(&unwarp(y, &theta)?, cfg.welch_segments)?;
        log::debug!("jefas iteration {it}: max |Δθ| = {change:.4}");
        if change < cfg.theta_tol {
            return Ok(WarpEstimate {
                theta,
                spectrum,
                iterations: it,
                converged: true,
            });
        }
    }
    Ok(WarpEstimate {
        theta,
        spectrum,
        iterations: cfg.max_iter,
        converged: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::synthgen::synth_stationary;

    #[test]
    fn golden_finds_parabola_minimum() {
        let x = golden_section(-1.0, 2.0, 1e-6, |t| Ok((t - 0.3) * (t - 0.3))).unwrap();
        assert!((x - 0.3).abs() < 1e-6);
    }

    #[test]
    fn zero_theta_unwarp_is_identity() {
        let x: Vec<f64> = (0..256)
            .map(|i| (i as f64 * 0.3).sin() + 0.2 * (i as f64 * 1.1).cos())
            .collect();
        let y = Signal::mono(100.0, x.clone()).unwrap();
        let th = ThetaPath::zero(vec![10, 100, 200], 2f64.powf(0.125)).unwrap();
        let out = unwarp(&y, &th).unwrap();
        assert_eq!(out.len(), 256);
        for (a, b) in out.channel(0).iter().zip(&x) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn theta_path_interpolation() {
        let th = ThetaPath::new(vec![10, 20], vec![1.0, -1.0], 2.0).unwrap();
        assert_eq!(th.at(0.0), 1.0);
        assert_eq!(th.at(15.0), 0.0);
        assert_eq!(th.at(30.0), -1.0);
        assert!(ThetaPath::new(vec![20, 10], vec![0.0, 0.0], 2.0).is_err());
    }

    #[test]
    fn welch_parseval_and_white() {
        let flat = Spectrum::flat(4096.0, 2049, 1.0 / 8192.0).unwrap();
        let x = synth_stationary(&flat, 1 << 16, 8192.0, 3).unwrap();
        let s = estimate_spectrum(&x, 32).unwrap();
        let power = x.energy(0) / x.len() as f64;
        assert!((s.variance() / power - 1.0).abs() < 0.05);
        // single bins fluctuate by ~15 %, so flatness is judged on 32 sub-bands
        let v = s.values();
        let m = dsp::mean(v);
        for band in v.chunks(v.len() / 32) {
            assert!((dsp::mean(band) / m - 1.0).abs() < 0.25);
        }
    }

    #[test]
    fn welch_short_segment_rejected() {
        let x = Signal::mono(1.0, vec![0.0; 200]).unwrap();
        assert!(matches!(
            estimate_spectrum(&x, 8),
            Err(Error::InvalidParameter(_))
        ));
    }
}
