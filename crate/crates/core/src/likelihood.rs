//! Wavelet-domain Gaussian model of a warped stationary source.
//!
//! At a fixed time the wavelet column of source `i` is circular complex
//! Gaussian with covariance `Σ_i(θ)`, where `θ = log_q γ'_i(τ)` shifts the
//! spectrum along the scale axis. For a real mixture the negative
//! log-likelihood of an unmixing matrix `B` reduces to row-wise quadratic
//! forms `b_iᵀ C_i b_i`, which [`RowQuadratic`] evaluates together with the
//! gradient.
//!
//! The spectrum integrals are taken over `[0, fs/2]` in Hz with `ξ = 2πf/fs`,
//! so `Σ` is real symmetric.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use num_complex::Complex64;

use crate::error::{ensure, Error, Result};
use crate::exec::Exec;
use crate::synthgen::{Dataset, Spectrum};
use crate::wavelet::{cwt_samples, psi_hat, ScaleGrid, WaveletParams};

pub const DEFAULT_QUAD_POINTS: usize = 2048;
pub const DEFAULT_THETA_MAX: f64 = 3.0;
const RIDGE: f64 = 1e-8;
/// White floor added to the spectrum, relative to its maximum.
pub const DEFAULT_SPECTRAL_FLOOR: f64 = 1e-6;

/// Covariance `Σ(θ)` of the wavelet column of one source.
#[derive(Debug, Clone)]
pub struct CovarianceModel {
    grid: ScaleGrid,
    params: WaveletParams,
    spectrum: Spectrum,
    fs: f64,
    quad_points: usize,
    theta_max: f64,
    floor: f64,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    /// `√a_k ψ̂(a_k ξ_j)` per scale, restricted to the nodes `support[k]`.
    psi: Vec<Vec<f64>>,
    support: Vec<(usize, usize)>,
}

/// Quadrature nodes where `ψ̂` is below this fraction of its peak are skipped.
const PSI_CUTOFF: f64 = 1e-10;

impl CovarianceModel {
    pub fn new(
        grid: &ScaleGrid,
        params: &WaveletParams,
        spectrum: Spectrum,
        fs: f64,
    ) -> Result<Self> {
        CovarianceModel::with_options(
            grid,
            params,
            spectrum,
            fs,
            DEFAULT_QUAD_POINTS,
            DEFAULT_THETA_MAX,
            DEFAULT_SPECTRAL_FLOOR,
        )
    }

    pub fn with_options(
        grid: &ScaleGrid,
        params: &WaveletParams,
        spectrum: Spectrum,
        fs: f64,
        quad_points: usize,
        theta_max: f64,
        floor: f64,
    ) -> Result<Self> {
        params.validate()?;
        ensure!(
            quad_points >= 512,
            InvalidParameter,
            "quad_points must be ≥ 512, got {quad_points}"
        );
        ensure!(
            fs > 0.0 && fs.is_finite(),
            InvalidParameter,
            "sample rate must be positive"
        );
        ensure!(
            theta_max > 0.0,
            InvalidParameter,
            "theta_max must be positive"
        );
        ensure!(
            (0.0..1.0).contains(&floor),
            InvalidParameter,
            "spectral floor must be in [0, 1)"
        );
        ensure!(
            spectrum.max_value() > 0.0,
            InvalidParameter,
            "spectrum is identically zero"
        );
        let nyq = fs / 2.0;
        let h = nyq / (quad_points - 1) as f64;
        let nodes: Vec<f64> = (0..quad_points).map(|j| j as f64 * h).collect();
        let mut weights = vec![h; quad_points];
        weights[0] *= 0.5;
        weights[quad_points - 1] *= 0.5;
        let mut psi = Vec::with_capacity(grid.len());
        let mut support = Vec::with_capacity(grid.len());
        for k in 0..grid.len() {
            let a = grid.scale(k);
            let row: Vec<f64> = nodes
                .iter()
                .map(|f| psi_hat(a * 2.0 * std::f64::consts::PI * f / fs, params))
                .collect();
            let lo = row.iter().position(|v| *v > PSI_CUTOFF).unwrap_or(0);
            let hi = row
                .iter()
                .rposition(|v| *v > PSI_CUTOFF)
                .map_or(0, |i| i + 1);
            let (lo, hi) = if lo < hi { (lo, hi) } else { (0, 0) };
            psi.push(row[lo..hi].iter().map(|v| a.sqrt() * v).collect());
            support.push((lo, hi));
        }
        Ok(CovarianceModel {
            grid: grid.clone(),
            params: *params,
            spectrum,
            fs,
            quad_points,
            theta_max,
            floor,
            nodes,
            weights,
            psi,
            support,
        })
    }

    pub fn grid(&self) -> &ScaleGrid {
        &self.grid
    }

    pub fn params(&self) -> &WaveletParams {
        &self.params
    }

    pub fn spectrum(&self) -> &Spectrum {
        &self.spectrum
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    pub fn quad_points(&self) -> usize {
        self.quad_points
    }

    pub fn theta_max(&self) -> f64 {
        self.theta_max
    }

    pub fn m_s(&self) -> usize {
        self.grid.len()
    }

    /// `Σ(θ)`, symmetrised and ridged.
    pub fn sigma_matrix(&self, theta: f64) -> Result<DMatrix<f64>> {
        ensure!(
            theta.is_finite() && theta.abs() <= self.theta_max + 1e-12,
            OutOfRange,
            "|θ| = {} exceeds theta_max = {}",
            theta.abs(),
            self.theta_max
        );
        let dil = self.grid.q().powf(-theta);
        let floor = self.floor * self.spectrum.max_value();
        let v: Vec<f64> = self
            .nodes
            .iter()
            .zip(&self.weights)
            .map(|(f, w)| (self.spectrum.eval(dil * f) + floor) * w)
            .collect();
        ensure!(
            v.iter().all(|x| x.is_finite()),
            NumericFailure,
            "non-finite spectrum values in Σ"
        );
        let m = self.m_s();
        let mut sigma = DMatrix::zeros(m, m);
        for k in 0..m {
            let (lk, hk) = self.support[k];
            let weighted: Vec<f64> = self.psi[k]
                .iter()
                .zip(&v[lk..hk])
                .map(|(p, w)| p * w)
                .collect();
            for k2 in k..m {
                let (l2, h2) = self.support[k2];
                let (lo, hi) = (lk.max(l2), hk.min(h2));
                let mut acc = 0.0;
                if lo < hi {
                    let a = &weighted[lo - lk..hi - lk];
                    let b = &self.psi[k2][lo - l2..hi - l2];
                    acc = a.iter().zip(b).map(|(x, y)| x * y).sum();
                }
                sigma[(k, k2)] = acc;
                sigma[(k2, k)] = acc;
            }
        }
        let ridge = RIDGE * sigma.trace() / self.m_s() as f64;
        for k in 0..self.m_s() {
            sigma[(k, k)] += ridge;
        }
        ensure!(
            sigma.iter().all(|x| x.is_finite()),
            NumericFailure,
            "non-finite Σ entries"
        );
        Ok(sigma)
    }

    pub fn factor(&self, theta: f64) -> Result<SigmaFactor> {
        SigmaFactor::new(self.sigma_matrix(theta)?)
    }
}

/// Cholesky factor of `Σ` with its log-determinant.
#[derive(Debug, Clone)]
pub struct SigmaFactor {
    chol: Cholesky<f64, Dyn>,
    logdet: f64,
}

impl SigmaFactor {
    pub fn new(sigma: DMatrix<f64>) -> Result<Self> {
        let chol = Cholesky::new(sigma)
            .ok_or_else(|| Error::SingularSigma("Cholesky factorisation failed".into()))?;
        let logdet = 2.0
            * chol
                .l_dirty()
                .diagonal()
                .iter()
                .map(|d| d.ln())
                .sum::<f64>();
        ensure!(logdet.is_finite(), SingularSigma, "log det Σ is not finite");
        Ok(SigmaFactor { chol, logdet })
    }

    pub fn logdet(&self) -> f64 {
        self.logdet
    }

    pub fn dim(&self) -> usize {
        self.chol.l_dirty().nrows()
    }

    /// `Re(w Σ⁻¹ w^H)`; `Σ` is real, so the real and imaginary parts separate.
    pub fn quad_form(&self, w: &[Complex64]) -> f64 {
        let re = DVector::from_iterator(w.len(), w.iter().map(|c| c.re));
        let im = DVector::from_iterator(w.len(), w.iter().map(|c| c.im));
        self.whitened_norm2(re) + self.whitened_norm2(im)
    }

    fn whitened_norm2(&self, mut v: DVector<f64>) -> f64 {
        let l = self.chol.l_dirty();
        // forward substitution on the lower triangle only
        let n = v.len();
        for i in 0..n {
            let mut acc = v[i];
            for j in 0..i {
                acc -= l[(i, j)] * v[j];
            }
            v[i] = acc / l[(i, i)];
        }
        v.norm_squared()
    }

    /// `Re(W Σ⁻¹ W^H)` for the rows of `W` (N × M_s).
    pub fn row_gram(&self, w: &DMatrix<Complex64>) -> DMatrix<f64> {
        let l = self.chol.l();
        let re = w.map(|c| c.re).transpose();
        let im = w.map(|c| c.im).transpose();
        let vr = l
            .solve_lower_triangular(&re)
            .expect("Cholesky diagonal is positive");
        let vi = l
            .solve_lower_triangular(&im)
            .expect("Cholesky diagonal is positive");
        vr.transpose() * &vr + vi.transpose() * &vi
    }
}

/// Stacked wavelet columns of the observations at one time, with the
/// unmixing matrix and warp exponents being evaluated.
#[derive(Debug, Clone)]
pub struct LikelihoodPoint {
    /// N × M_s.
    pub w_z_tau: DMatrix<Complex64>,
    pub b: DMatrix<f64>,
    pub theta: Vec<f64>,
}

impl LikelihoodPoint {
    fn validate(&self, models: &[CovarianceModel]) -> Result<()> {
        let n = self.b.nrows();
        ensure!(self.b.ncols() == n, DimensionMismatch, "B must be square");
        ensure!(
            self.w_z_tau.nrows() == n,
            DimensionMismatch,
            "w has {} rows, B is {n}x{n}",
            self.w_z_tau.nrows()
        );
        ensure!(
            self.theta.len() == n && models.len() == n,
            DimensionMismatch,
            "need {n} warp exponents and models, got {} and {}",
            self.theta.len(),
            models.len()
        );
        for m in models {
            ensure!(
                m.m_s() == self.w_z_tau.ncols(),
                DimensionMismatch,
                "model has {} scales, w has {}",
                m.m_s(),
                self.w_z_tau.ncols()
            );
        }
        ensure!(
            self.b.iter().all(|v| v.is_finite()),
            InvalidParameter,
            "B has non-finite entries"
        );
        Ok(())
    }

    fn quadratic(&self, models: &[CovarianceModel]) -> Result<RowQuadratic> {
        self.validate(models)?;
        let factors = models
            .iter()
            .zip(&self.theta)
            .map(|(m, th)| m.factor(*th))
            .collect::<Result<Vec<_>>>()?;
        Ok(RowQuadratic::from_factors(&self.w_z_tau, &factors))
    }
}

/// `ℓ(B) = −M_s log|det B| + ½ Σ log det Σ_i + ½ Σ b_iᵀ C_i b_i`.
#[derive(Debug, Clone)]
pub struct RowQuadratic {
    c: Vec<DMatrix<f64>>,
    logdet_sum: f64,
    m_s: f64,
}

impl RowQuadratic {
    pub fn new(c: Vec<DMatrix<f64>>, logdet_sum: f64, m_s: f64) -> Self {
        RowQuadratic { c, logdet_sum, m_s }
    }

    /// `C_i = Re(W Σ_i⁻¹ W^H)` from one factor per source.
    pub fn from_factors(w: &DMatrix<Complex64>, factors: &[SigmaFactor]) -> Self {
        let c = factors.iter().map(|f| f.row_gram(w)).collect();
        let logdet_sum = factors.iter().map(|f| f.logdet()).sum();
        RowQuadratic::new(c, logdet_sum, w.ncols() as f64)
    }

    /// Accumulates another column's quadratic forms (pooled likelihood).
    pub fn add(&mut self, other: &RowQuadratic) {
        for (a, b) in self.c.iter_mut().zip(&other.c) {
            *a += b;
        }
        self.logdet_sum += other.logdet_sum;
        self.m_s += other.m_s;
    }

    pub fn n(&self) -> usize {
        self.c.len()
    }

    pub fn m_s(&self) -> f64 {
        self.m_s
    }

    pub fn c(&self) -> &[DMatrix<f64>] {
        &self.c
    }

    fn log_abs_det(&self, b: &DMatrix<f64>) -> Result<f64> {
        let det = b.determinant();
        let scale: f64 = b.row_iter().map(|r| r.norm()).product();
        if !(det.abs() >= 1e-12 * scale) || scale == 0.0 {
            return Err(Error::SingularB(det.abs()));
        }
        Ok(det.abs().ln())
    }

    pub fn value(&self, b: &DMatrix<f64>) -> Result<f64> {
        let ld = self.log_abs_det(b)?;
        let quad: f64 = (0..self.n())
            .map(|i| {
                let r = b.row(i).transpose();
                (r.transpose() * &self.c[i] * &r)[(0, 0)]
            })
            .sum();
        Ok(-self.m_s * ld + 0.5 * self.logdet_sum + 0.5 * quad)
    }

    pub fn gradient(&self, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.log_abs_det(b)?;
        let inv = b
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::SingularB(b.determinant().abs()))?;
        let mut g = inv.transpose() * (-self.m_s);
        for i in 0..self.n() {
            let r = b.row(i).transpose();
            let ci = &self.c[i] * r;
            for j in 0..self.n() {
                g[(i, j)] += ci[j];
            }
        }
        Ok(g)
    }
}

pub fn neg_log_likelihood(point: &LikelihoodPoint, models: &[CovarianceModel]) -> Result<f64> {
    point.quadratic(models)?.value(&point.b)
}

pub fn nll_gradient_b(point: &LikelihoodPoint, models: &[CovarianceModel]) -> Result<DMatrix<f64>> {
    point.quadratic(models)?.gradient(&point.b)
}

/// `½ log det Σ(θ) + ½ Re(w Σ(θ)⁻¹ w^H)`.
pub fn single_source_nll(theta: f64, w_tau: &[Complex64], model: &CovarianceModel) -> Result<f64> {
    ensure!(
        w_tau.len() == model.m_s(),
        DimensionMismatch,
        "column has {} entries, model has {} scales",
        w_tau.len(),
        model.m_s()
    );
    let f = model.factor(theta)?;
    Ok(0.5 * f.logdet() + 0.5 * f.quad_form(w_tau))
}

/// Ingredients of the variance bound on the wavelet-domain mixing error.
///
/// Units are samples throughout: `a_prime_inf` is the per-sample derivative
/// bound of `A`, `k_psi` the first absolute moment of `ψ` in samples.
#[derive(Debug, Clone)]
pub struct ErrorBound {
    pub sigma_x2: f64,
    pub k_psi: f64,
    pub a_prime_inf: DMatrix<f64>,
    pub gamma_prime_inf: Vec<f64>,
    pub scales: ScaleGrid,
}

impl ErrorBound {
    pub fn validate(&self) -> Result<()> {
        let n = self.a_prime_inf.nrows();
        ensure!(
            self.a_prime_inf.ncols() == n,
            DimensionMismatch,
            "A' bound must be square"
        );
        ensure!(
            self.gamma_prime_inf.len() == n,
            DimensionMismatch,
            "need {n} γ' bounds"
        );
        let all = [self.sigma_x2, self.k_psi]
            .into_iter()
            .chain(self.a_prime_inf.iter().copied())
            .chain(self.gamma_prime_inf.iter().copied());
        for v in all {
            ensure!(
                v.is_finite() && v >= 0.0,
                InvalidParameter,
                "bound ingredients must be finite and ≥ 0"
            );
        }
        Ok(())
    }
}

/// `σ² k_ψ² (A'^{∘2} γ') (q^{3s})ᵀ`, an N × M_s matrix.
pub fn mixing_error_bound(bound: &ErrorBound) -> Result<DMatrix<f64>> {
    bound.validate()?;
    let n = bound.a_prime_inf.nrows();
    let row: Vec<f64> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| bound.a_prime_inf[(i, j)].powi(2) * bound.gamma_prime_inf[j])
                .sum()
        })
        .collect();
    let c = bound.sigma_x2 * bound.k_psi * bound.k_psi;
    let q = bound.scales.q();
    Ok(DMatrix::from_fn(n, bound.scales.len(), |i, k| {
        c * row[i] * q.powf(3.0 * bound.scales.s_values()[k])
    }))
}

/// `ε_τ = w_{z,τ} − A(τ) w_{y,τ}` for each requested τ (N × M_s each).
pub fn empirical_epsilon(
    dataset: &Dataset,
    grid: &ScaleGrid,
    params: &WaveletParams,
    tau_indices: &[usize],
    exec: Exec,
) -> Result<Vec<DMatrix<Complex64>>> {
    dataset.validate()?;
    let n = dataset.n();
    let t = dataset.sources.len();
    ensure!(
        tau_indices.iter().all(|&k| k < t),
        DimensionMismatch,
        "τ index beyond signal length {t}"
    );
    let fs = dataset.sources.fs();
    let frames = |s: &crate::Signal| -> Result<Vec<_>> {
        (0..n)
            .map(|i| cwt_samples(s.channel(i), fs, grid, params, exec))
            .collect()
    };
    let wz = frames(&dataset.observations)?;
    let wy = frames(&dataset.sources)?;
    let m = grid.len();
    Ok(tau_indices
        .iter()
        .map(|&tau| {
            let a = dataset.mixing.at(tau as f64);
            DMatrix::from_fn(n, m, |i, k| {
                let mut e = wz[i].get(k, tau);
                for j in 0..n {
                    e -= wy[j].get(k, tau) * a[(i, j)];
                }
                e
            })
        })
        .collect())
}
