//! Continuous wavelet analysis with an analytic log-Gaussian wavelet.
//!
//! Frequencies passed to [`psi_hat`] are angular frequencies in radians per
//! sample. A row at scale exponent `s` analyses the band around
//! `xi0 · q^{-s}` rad/sample. All transforms are computed in the Fourier
//! domain with a circular boundary.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::dsp;
use crate::error::{ensure, Error, Result};
use crate::exec::Exec;
use crate::signal::Signal;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaveletParams {
    /// Peak of `ψ̂`, rad/sample.
    pub xi0: f64,
    /// Standard deviation of `ψ̂` in log-frequency.
    pub sigma: f64,
}

impl Default for WaveletParams {
    fn default() -> Self {
        WaveletParams {
            xi0: PI / 2.0,
            sigma: 0.1,
        }
    }
}

impl WaveletParams {
    pub fn new(xi0: f64, sigma: f64) -> Result<Self> {
        let p = WaveletParams { xi0, sigma };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.xi0 > 0.0 && self.xi0.is_finite(),
            InvalidParameter,
            "xi0 must be > 0, got {}",
            self.xi0
        );
        ensure!(
            self.sigma > 0.0 && self.sigma.is_finite(),
            InvalidParameter,
            "sigma must be > 0, got {}",
            self.sigma
        );
        Ok(())
    }

    /// Envelope standard deviation of the mother wavelet, in samples.
    pub fn time_spread(&self) -> f64 {
        1.0 / (self.sigma * self.xi0)
    }

    /// Frequency above which `ψ̂` drops below `rel` (rad/sample).
    fn support_upper(&self, rel: f64) -> f64 {
        self.xi0 * (self.sigma * (-2.0 * rel.ln()).sqrt()).exp()
    }
}

/// Fourier transform of the mother wavelet.
///
/// `exp(-ln²(ξ/xi0) / (2σ²))` for `ξ > 0`, zero otherwise.
pub fn psi_hat(xi: f64, params: &WaveletParams) -> f64 {
    if xi <= 0.0 {
        return 0.0;
    }
    let l = (xi / params.xi0).ln();
    (-l * l / (2.0 * params.sigma * params.sigma)).exp()
}

/// Logarithmic scale grid: row `k` has physical scale `q^{s_k}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleGrid {
    q: f64,
    s_values: Vec<f64>,
}

impl ScaleGrid {
    pub fn new(q: f64, s_values: Vec<f64>) -> Result<Self> {
        ensure!(
            q > 1.0 && q.is_finite(),
            InvalidParameter,
            "scale base q must be > 1, got {q}"
        );
        ensure!(
            s_values.len() >= 2,
            InvalidParameter,
            "need at least 2 scales, got {}",
            s_values.len()
        );
        ensure!(
            s_values.iter().all(|s| s.is_finite()) && s_values.windows(2).all(|w| w[1] > w[0]),
            InvalidParameter,
            "scale exponents must be finite and strictly increasing"
        );
        Ok(ScaleGrid { q, s_values })
    }

    /// 48 scales, 1/8-octave base, spanning 0.84π … 0.083 rad/sample for the
    /// default wavelet.
    pub fn default_grid() -> Self {
        make_scale_grid(2f64.powf(0.125), -6.0, 34.0, 48).expect("valid default grid")
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn s_values(&self) -> &[f64] {
        &self.s_values
    }

    pub fn len(&self) -> usize {
        self.s_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s_values.is_empty()
    }

    pub fn s_max(&self) -> f64 {
        *self.s_values.last().unwrap()
    }

    pub fn scale(&self, k: usize) -> f64 {
        self.q.powf(self.s_values[k])
    }

    /// Centre frequency of row `k`, rad/sample.
    pub fn peak_omega(&self, k: usize, params: &WaveletParams) -> f64 {
        params.xi0 / self.scale(k)
    }

    /// Samples at each end of a frame that feel the circular boundary:
    /// four envelope widths of the largest-scale wavelet.
    pub fn boundary_margin(&self, params: &WaveletParams) -> usize {
        (4.0 * self.q.powf(self.s_max()) * params.time_spread()).ceil() as usize
    }
}

pub fn make_scale_grid(q: f64, s_min: f64, s_max: f64, m_s: usize) -> Result<ScaleGrid> {
    ensure!(
        q > 1.0,
        InvalidParameter,
        "scale base q must be > 1, got {q}"
    );
    ensure!(
        s_min < s_max,
        InvalidParameter,
        "s_min ({s_min}) must be < s_max ({s_max})"
    );
    ensure!(m_s >= 2, InvalidParameter, "M_s must be ≥ 2, got {m_s}");
    let step = (s_max - s_min) / (m_s - 1) as f64;
    let mut s: Vec<f64> = (0..m_s).map(|k| s_min + step * k as f64).collect();
    s[m_s - 1] = s_max;
    ScaleGrid::new(q, s)
}

/// Wavelet coefficients of one channel: `M_s` rows (scales) × `T` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletFrame {
    coeffs: DMatrix<Complex64>,
    grid: ScaleGrid,
    fs: f64,
}

impl WaveletFrame {
    pub fn coeffs(&self) -> &DMatrix<Complex64> {
        &self.coeffs
    }

    pub fn grid(&self) -> &ScaleGrid {
        &self.grid
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    pub fn n_scales(&self) -> usize {
        self.coeffs.nrows()
    }

    pub fn n_times(&self) -> usize {
        self.coeffs.ncols()
    }

    /// Coefficients of all scales at time index `tau`.
    pub fn column(&self, tau: usize) -> &[Complex64] {
        let m = self.coeffs.nrows();
        &self.coeffs.as_slice()[tau * m..(tau + 1) * m]
    }

    pub fn get(&self, k: usize, tau: usize) -> Complex64 {
        self.coeffs[(k, tau)]
    }
}

/// Continuous wavelet transform of a single-channel signal.
pub fn cwt(signal: &Signal, grid: &ScaleGrid, params: &WaveletParams) -> Result<WaveletFrame> {
    if signal.n_channels() != 1 {
        return Err(Error::DimensionMismatch(format!(
            "cwt expects a single channel, got {}",
            signal.n_channels()
        )));
    }
    cwt_samples(
        signal.channel(0),
        signal.fs(),
        grid,
        params,
        Exec::default(),
    )
}

/// [`cwt`] on raw samples, with an explicit execution mode.
pub fn cwt_samples(
    x: &[f64],
    fs: f64,
    grid: &ScaleGrid,
    params: &WaveletParams,
    exec: Exec,
) -> Result<WaveletFrame> {
    ensure!(!x.is_empty(), InvalidParameter, "cwt of an empty signal");
    ensure!(
        x.len() >= 4,
        InvalidParameter,
        "cwt needs at least 4 samples, got {}",
        x.len()
    );
    ensure!(
        x.iter().all(|v| v.is_finite()),
        InvalidParameter,
        "signal contains non-finite samples"
    );
    params.validate()?;
    let n = x.len();
    let spectrum = dsp::fft_real(x);
    let inverse: Arc<dyn rustfft::Fft<f64>> = FftPlanner::new().plan_fft_inverse(n);
    // positive-frequency bins only: ψ̂ vanishes on ξ ≤ 0
    let positive: Vec<(usize, f64)> = (1..n)
        .map(|m| (m, dsp::bin_omega(m, n)))
        .filter(|&(_, w)| w > 0.0)
        .collect();
    let inv_n = 1.0 / n as f64;
    let rows = exec.map(grid.len(), |k| {
        let a = grid.scale(k);
        let norm = a.sqrt();
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for &(m, w) in &positive {
            let h = psi_hat(a * w, params);
            if h > 0.0 {
                buf[m] = spectrum[m] * (norm * h);
            }
        }
        inverse.process(&mut buf);
        for v in buf.iter_mut() {
            *v *= inv_n;
        }
        buf
    });
    let coeffs = DMatrix::from_fn(grid.len(), n, |k, t| rows[k][t]);
    Ok(WaveletFrame {
        coeffs,
        grid: grid.clone(),
        fs,
    })
}

/// Elementwise squared modulus of the coefficients.
pub fn scalogram(frame: &WaveletFrame) -> DMatrix<f64> {
    frame.coeffs.map(|c| c.norm_sqr())
}

/// Wavelet transform evaluated at arbitrary (scale exponent, time) points.
///
/// Uses the same Fourier-domain definition as [`cwt`], summed directly, so it
/// agrees with `cwt` on grid points and interpolates exactly in between.
#[derive(Debug, Clone)]
pub struct PointTransform {
    spectrum: Vec<Complex64>,
    q: f64,
    params: WaveletParams,
}

impl PointTransform {
    pub fn new(x: &[f64], q: f64, params: &WaveletParams) -> Self {
        PointTransform {
            spectrum: dsp::fft_real(x),
            q,
            params: *params,
        }
    }

    /// `W(s, t)` with `t` in (possibly fractional) samples.
    pub fn eval(&self, s: f64, t: f64) -> Complex64 {
        let n = self.spectrum.len();
        let a = self.q.powf(s);
        let norm = a.sqrt();
        let cutoff = self.params.support_upper(1e-16) / a;
        let mut acc = Complex64::new(0.0, 0.0);
        for m in 1..n.div_ceil(2) {
            let w = 2.0 * PI * m as f64 / n as f64;
            if w > cutoff {
                break;
            }
            let h = psi_hat(a * w, &self.params);
            if h > 0.0 {
                acc += self.spectrum[m] * Complex64::from_polar(norm * h, w * t);
            }
        }
        acc / n as f64
    }
}

/// `k_ψ = ∫ |t ψ(t)| dt`, in samples, for the mother wavelet.
///
/// `ψ` is obtained by a dense inverse FFT of `ψ̂`; the result at
/// `quad_points` is accepted once doubling the resolution moves it by less
/// than 0.1 %.
pub fn k_psi(params: &WaveletParams, quad_points: usize) -> Result<f64> {
    const MAX_POINTS: usize = 1 << 22;
    params.validate()?;
    ensure!(
        quad_points >= 1024,
        InvalidParameter,
        "quad_points must be ≥ 1024, got {quad_points}"
    );
    let mut n = quad_points;
    let mut current = k_psi_at(params, n);
    while n <= MAX_POINTS {
        let finer = k_psi_at(params, 2 * n);
        if ((finer - current) / finer).abs() < 1e-3 {
            return Ok(current);
        }
        n *= 2;
        current = finer;
    }
    Err(Error::NoConvergence(format!(
        "k_psi did not settle to 0.1% by {MAX_POINTS} points"
    )))
}

fn k_psi_at(params: &WaveletParams, n: usize) -> f64 {
    // band [0, Ω) with Ω twice the effective support of ψ̂
    let omega_span = 2.0 * params.support_upper(1e-16);
    let d_omega = omega_span / n as f64;
    let dt = 2.0 * PI / omega_span;
    let mut buf: Vec<Complex64> = (0..n)
        .map(|m| Complex64::new(psi_hat(m as f64 * d_omega, params), 0.0))
        .collect();
    // ψ(t_j) = (dω/2π) Σ_m ψ̂(ω_m) e^{iω_m t_j}, t_j = j·dt
    FftPlanner::new().plan_fft_inverse(n).process(&mut buf);
    let scale = d_omega / (2.0 * PI);
    let mags: Vec<(f64, f64)> = buf
        .iter()
        .enumerate()
        .map(|(j, c)| {
            let jj = if j >= n / 2 {
                j as f64 - n as f64
            } else {
                j as f64
            };
            (jj * dt, c.norm() * scale)
        })
        .collect();
    let peak = mags.iter().map(|m| m.1).fold(0.0, f64::max);
    mags.iter()
        .filter(|m| m.1 >= 1e-12 * peak)
        .map(|(t, v)| t.abs() * v * dt)
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scale_grid_examples() {
        let g = make_scale_grid(2.0, 0.0, 1.0, 2).unwrap();
        assert_eq!(g.s_values(), &[0.0, 1.0]);
        let g = make_scale_grid(2.0, 0.0, 2.0, 5).unwrap();
        assert_eq!(g.s_values(), &[0.0, 0.5, 1.0, 1.5, 2.0]);
        assert!(matches!(
            make_scale_grid(1.0, 0.0, 1.0, 4),
            Err(Error::InvalidParameter(_))
        ));
        assert!(make_scale_grid(2.0, 1.0, 1.0, 4).is_err());
        assert!(make_scale_grid(2.0, 0.0, 1.0, 1).is_err());
    }

    #[test]
    fn psi_hat_values() {
        let p = WaveletParams::default();
        assert_eq!(psi_hat(p.xi0, &p), 1.0);
        assert_eq!(psi_hat(-1.0, &p), 0.0);
        assert_eq!(psi_hat(0.0, &p), 0.0);
        let v = psi_hat(p.xi0 * p.sigma.exp(), &p);
        assert!((v - (-0.5f64).exp()).abs() < 1e-14);
        assert!((v - 0.6065).abs() < 1e-4);
    }

    #[test]
    fn zero_signal_gives_zero_frame() {
        let g = ScaleGrid::default_grid();
        let f = cwt(
            &Signal::mono(1.0, vec![0.0; 256]).unwrap(),
            &g,
            &WaveletParams::default(),
        )
        .unwrap();
        assert!(f.coeffs().iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn empty_and_tiny_signals_rejected() {
        let g = ScaleGrid::default_grid();
        let p = WaveletParams::default();
        assert!(cwt_samples(&[], 1.0, &g, &p, Exec::Sequential).is_err());
        assert!(cwt_samples(&[1.0, 2.0, 3.0], 1.0, &g, &p, Exec::Sequential).is_err());
    }

    #[test]
    fn scalogram_is_modulus_squared() {
        let g = make_scale_grid(2.0, 0.0, 1.0, 2).unwrap();
        let mut f = cwt_samples(
            &[0.0; 8],
            1.0,
            &g,
            &WaveletParams::default(),
            Exec::Sequential,
        )
        .unwrap();
        f.coeffs[(1, 3)] = Complex64::new(3.0, 4.0);
        let s = scalogram(&f);
        assert_eq!(s[(1, 3)], 25.0);
        assert_eq!(s[(0, 0)], 0.0);
    }

    #[test]
    fn point_transform_matches_grid() {
        let g = make_scale_grid(2f64.powf(0.125), 0.0, 10.0, 6).unwrap();
        let p = WaveletParams::default();
        let x: Vec<f64> = (0..200)
            .map(|i| ((i * 37 % 17) as f64 - 8.0) / 5.0)
            .collect();
        let f = cwt_samples(&x, 1.0, &g, &p, Exec::Sequential).unwrap();
        let pt = PointTransform::new(&x, g.q(), &p);
        for k in 0..g.len() {
            for t in [0usize, 37, 150] {
                let d = (pt.eval(g.s_values()[k], t as f64) - f.get(k, t)).norm();
                assert!(d < 1e-10, "k={k} t={t} d={d}");
            }
        }
    }

    #[test]
    fn boundary_margin_default() {
        let g = ScaleGrid::default_grid();
        let m = g.boundary_margin(&WaveletParams::default());
        // 4 · 2^(34/8) · 1/(0.1·π/2)
        let expect = (4.0 * 2f64.powf(34.0 / 8.0) / (0.1 * PI / 2.0)).ceil() as usize;
        assert_eq!(m, expect);
    }
}
