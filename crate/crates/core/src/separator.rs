//! The outer alternating estimation loop.
//!
//! Starting from piecewise SOBI, each iteration
//!
//! 1. estimates the warp exponents and spectrum of every current source
//!    estimate ([`jefas`]),
//! 2. re-estimates the unmixing matrix at every knot by maximum likelihood,
//!    warm-started from the previous knot,
//! 3. re-extracts the sources with the piecewise-constant unmixing path,
//!
//! until successive source estimates agree to within `lambda` dB.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dsp;
use crate::error::{ensure, Error, Result};
use crate::exec::Exec;
use crate::likelihood::{CovarianceModel, RowQuadratic, SigmaFactor};
use crate::metrics;
use crate::signal::Signal;
use crate::sobi::{self, UnmixingPath};
use crate::synthgen::Spectrum;
use crate::warpest::{jefas, JefasConfig, ThetaPath, WarpEstimate};
use crate::wavelet::{cwt_samples, WaveletFrame};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BfgsOptions {
    pub max_iter: usize,
    /// Stop once `max |∇ℓ| ≤ grad_tol · M_s`.
    pub grad_tol: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        BfgsOptions {
            max_iter: 200,
            grad_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SeparatorConfig {
    /// Knot spacing of the unmixing path, samples.
    pub delta_tau: usize,
    /// Stopping threshold on the iterate-to-iterate SIR, dB.
    pub lambda: f64,
    pub k_max: usize,
    pub jefas: JefasConfig,
    pub psobi_window: usize,
    pub lags: Vec<usize>,
    /// Wavelet columns pooled per knot for the B likelihood (1 = the knot's own column).
    pub b_pool_columns: usize,
    pub b_pool_stride: usize,
    pub bfgs: BfgsOptions,
    pub exec: Exec,
}

impl Default for SeparatorConfig {
    fn default() -> Self {
        SeparatorConfig {
            delta_tau: 512,
            lambda: 25.0,
            k_max: 10,
            jefas: JefasConfig::default(),
            psobi_window: sobi::DEFAULT_WINDOW,
            lags: sobi::DEFAULT_LAGS.to_vec(),
            b_pool_columns: 1,
            b_pool_stride: 16,
            bfgs: BfgsOptions::default(),
            exec: Exec::default(),
        }
    }
}

impl SeparatorConfig {
    /// Sets every nested execution mode (CWT, θ search, p-SOBI, per-knot loop).
    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.exec = exec;
        self.jefas.search.exec = exec;
        self
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.delta_tau >= 64,
            InvalidParameter,
            "delta_tau must be ≥ 64, got {}",
            self.delta_tau
        );
        ensure!(self.k_max >= 1, InvalidParameter, "k_max must be ≥ 1");
        ensure!(
            self.lambda.is_finite(),
            InvalidParameter,
            "lambda must be finite"
        );
        ensure!(
            self.b_pool_columns >= 1,
            InvalidParameter,
            "b_pool_columns must be ≥ 1"
        );
        ensure!(
            !self.lags.is_empty(),
            InvalidParameter,
            "at least one SOBI lag is required"
        );
        self.jefas.params.validate()
    }
}

#[derive(Debug, Clone)]
pub struct BssResult {
    pub sources_hat: Signal,
    pub b_path: UnmixingPath,
    pub theta_paths: Vec<ThetaPath>,
    pub spectra: Vec<Spectrum>,
    pub outer_iterations: usize,
    pub sir_updates: Vec<f64>,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct BEstimate {
    /// Unit-norm rows, signs matched to the initial guess.
    pub b: DMatrix<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after each accepted step, starting at the initial value.
    pub trace: Vec<f64>,
}

/// Maximum-likelihood unmixing matrix at one knot.
pub fn estimate_b_tau(
    w_z_tau: &DMatrix<Complex64>,
    theta: &[f64],
    models: &[CovarianceModel],
    b_init: &DMatrix<f64>,
) -> Result<BEstimate> {
    let n = b_init.nrows();
    ensure!(
        theta.len() == n && models.len() == n && w_z_tau.nrows() == n,
        DimensionMismatch,
        "inconsistent source count for B estimation"
    );
    let factors = models
        .iter()
        .zip(theta)
        .map(|(m, th)| m.factor(*th))
        .collect::<Result<Vec<SigmaFactor>>>()?;
    minimize_rows(
        &RowQuadratic::from_factors(w_z_tau, &factors),
        b_init,
        &BfgsOptions::default(),
    )
}

/// BFGS on `ℓ(B)` with backtracking, from `b_init`.
pub fn minimize_rows(
    rq: &RowQuadratic,
    b_init: &DMatrix<f64>,
    opts: &BfgsOptions,
) -> Result<BEstimate> {
    let n = b_init.nrows();
    ensure!(
        b_init.ncols() == n && rq.n() == n,
        DimensionMismatch,
        "B must be {n}x{n}"
    );
    let dim = n * n;
    let to_mat = |x: &DVector<f64>| DMatrix::from_row_slice(n, n, x.as_slice());
    let to_vec = |m: &DMatrix<f64>| DVector::from_iterator(dim, m.transpose().iter().copied());

    // inverse of the block-diagonal quadratic part, one block per row of B
    let mut h0 = DMatrix::<f64>::zeros(dim, dim);
    for (i, c) in rq.c().iter().enumerate() {
        let reg = c + DMatrix::identity(n, n) * (1e-12 * c.trace().abs() + f64::MIN_POSITIVE);
        let inv = reg
            .try_inverse()
            .unwrap_or_else(|| DMatrix::identity(n, n) / rq.m_s().max(1.0));
        h0.view_mut((i * n, i * n), (n, n)).copy_from(&inv);
    }

    let mut x = to_vec(b_init);
    let mut f = rq.value(b_init)?;
    let mut g = to_vec(&rq.gradient(b_init)?);
    let mut h = h0.clone();
    let tol = opts.grad_tol * rq.m_s();
    let mut trace = vec![f];
    let mut converged = g.amax() <= tol;
    let mut iterations = 0;
    while !converged && iterations < opts.max_iter {
        iterations += 1;
        let mut p = -(&h * &g);
        let mut slope = g.dot(&p);
        if !(slope < 0.0) {
            h = h0.clone();
            p = -(&h * &g);
            slope = g.dot(&p);
        }
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let xn = &x + &p * alpha;
            let bn = to_mat(&xn);
            match rq.value(&bn) {
                Ok(fn_) if fn_ <= f + 1e-4 * alpha * slope => {
                    accepted = Some((xn, bn, fn_));
                    break;
                }
                Ok(_) | Err(Error::SingularB(_)) => alpha *= 0.5,
                Err(e) => return Err(e),
            }
        }
        let Some((xn, bn, fn_)) = accepted else {
            log::debug!("B line search stalled at |g| = {:e}", g.amax());
            break;
        };
        let gn = to_vec(&rq.gradient(&bn)?);
        let s = &xn - &x;
        let y = &gn - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            let rho = 1.0 / sy;
            let hy = &h * &y;
            let yhy = y.dot(&hy);
            // H ← (I − ρ s yᵀ) H (I − ρ y sᵀ) + ρ s sᵀ
            h += (&s * s.transpose()) * (rho * rho * yhy + rho)
                - (&hy * s.transpose() + &s * hy.transpose()) * rho;
        }
        x = xn;
        f = fn_;
        g = gn;
        trace.push(f);
        converged = g.amax() <= tol;
    }
    let mut b = to_mat(&x);
    for i in 0..n {
        let norm = b.row(i).norm();
        let sign = if b.row(i).dot(&b_init.row(i)) < 0.0 {
            -1.0
        } else {
            1.0
        };
        let row = b.row(i) * (sign / norm);
        b.set_row(i, &row);
    }
    Ok(BEstimate {
        b,
        iterations,
        converged,
        trace,
    })
}

/// `ŷ[n] = B_{knot(n)} z[n]`.
pub fn apply_unmixing(z: &Signal, path: &UnmixingPath) -> Result<Signal> {
    let n = z.n_channels();
    if path.n() != n {
        return Err(Error::DimensionMismatch(format!(
            "{n} channels but {0}x{0} unmixing",
            path.n()
        )));
    }
    let t = z.len();
    let mut out = vec![vec![0.0; t]; n];
    for s in 0..t {
        let b = path.at(s);
        for i in 0..n {
            out[i][s] = (0..n).map(|j| b[(i, j)] * z.channel(j)[s]).sum();
        }
    }
    Signal::new(z.fs(), out)
}

/// Mean over sources of the SIR of the previous iterate, taking the current
/// iterate as reference family.
pub fn stopping_sir(y_prev: &Signal, y_curr: &Signal) -> Result<f64> {
    Ok(dsp::mean(&metrics::sir_all(y_prev, y_curr)?))
}

fn normalize_rows(b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = b.clone();
    for i in 0..b.nrows() {
        let r = b.row(i) / b.row(i).norm();
        out.set_row(i, &r);
    }
    out
}

/// Wavelet columns of all observation channels at `tau`, N × M_s.
fn stacked_column(frames: &[WaveletFrame], tau: usize) -> DMatrix<Complex64> {
    let m = frames[0].n_scales();
    DMatrix::from_fn(frames.len(), m, |i, k| frames[i].get(k, tau))
}

pub fn jefas_bss(z: &Signal, cfg: &SeparatorConfig) -> Result<BssResult> {
    cfg.validate()?;
    let n = z.n_channels();
    let t = z.len();
    ensure!(
        n >= 2,
        InvalidParameter,
        "need at least 2 observation channels"
    );
    let fs = z.fs();
    let margin = cfg.jefas.margin();
    let knots: Vec<usize> = (cfg.delta_tau / 2..t).step_by(cfg.delta_tau).collect();
    let inner: Vec<usize> = (0..knots.len())
        .filter(|&j| knots[j] >= margin && knots[j] + margin < t)
        .collect();
    ensure!(
        !inner.is_empty(),
        InvalidParameter,
        "no knot lies outside the {margin}-sample boundary margin"
    );

    let init = sobi::p_sobi(z, cfg.psobi_window.min(t), &cfg.lags, cfg.exec)?;
    let mut bs: Vec<DMatrix<f64>> = knots.iter().map(|&c| normalize_rows(init.at(c))).collect();
    let mut path = UnmixingPath::new(cfg.delta_tau, knots.clone(), bs.clone())?;
    let mut y_hat = apply_unmixing(z, &path)?;

    let frames = (0..n)
        .map(|i| {
            cwt_samples(
                z.channel(i),
                fs,
                &cfg.jefas.grid,
                &cfg.jefas.params,
                cfg.exec,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let half = (cfg.b_pool_columns as isize - 1) / 2;

    let mut sir_updates = Vec::new();
    let mut estimates: Vec<WarpEstimate> = Vec::new();
    let mut converged = false;
    for k in 1..=cfg.k_max {
        estimates = cfg
            .exec
            .map(n, |i| jefas(&y_hat.extract(i), &cfg.jefas))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        let models = estimates
            .iter()
            .map(|e| cfg.jefas.model(e.spectrum.clone(), fs))
            .collect::<Result<Vec<_>>>()?;

        let mut next: Vec<Option<DMatrix<f64>>> = vec![None; knots.len()];
        let mut warm = bs[inner[0]].clone();
        for &j in &inner {
            let c = knots[j];
            let factors = models
                .iter()
                .zip(&estimates)
                .map(|(m, e)| m.factor(e.theta.at(c as f64)))
                .collect::<Result<Vec<_>>>()?;
            let mut rq: Option<RowQuadratic> = None;
            for p in 0..cfg.b_pool_columns as isize {
                let col =
                    (c as isize + (p - half) * cfg.b_pool_stride as isize).clamp(0, t as isize - 1);
                let part =
                    RowQuadratic::from_factors(&stacked_column(&frames, col as usize), &factors);
                match rq.as_mut() {
                    Some(acc) => acc.add(&part),
                    None => rq = Some(part),
                }
            }
            let est = minimize_rows(rq.as_ref().unwrap(), &warm, &cfg.bfgs)?;
            if !est.converged {
                log::debug!(
                    "knot {c}: B estimation stopped after {} iterations",
                    est.iterations
                );
            }
            warm = est.b.clone();
            next[j] = Some(est.b);
        }
        let (first, last) = (inner[0], *inner.last().unwrap());
        bs = (0..knots.len())
            .map(|j| {
                next[j.clamp(first, last)]
                    .clone()
                    .expect("inner knots are filled")
            })
            .collect();
        path = UnmixingPath::new(cfg.delta_tau, knots.clone(), bs.clone())?;
        let y_new = apply_unmixing(z, &path)?;
        let update = stopping_sir(&y_hat, &y_new)?;
        log::info!("outer iteration {k}: stopping SIR {update:.2} dB");
        sir_updates.push(update);
        y_hat = y_new;
        if update > cfg.lambda {
            converged = true;
            break;
        }
    }
    Ok(BssResult {
        sources_hat: y_hat,
        b_path: path,
        theta_paths: estimates.iter().map(|e| e.theta.clone()).collect(),
        spectra: estimates.into_iter().map(|e| e.spectrum).collect(),
        outer_iterations: sir_updates.len(),
        sir_updates,
        converged,
    })
}
