//! Second-order blind identification (SOBI) and its piecewise variant.
//!
//! SOBI whitens the observations with the zero-lag covariance, then finds
//! the rotation that jointly diagonalises a set of lagged covariances. The
//! piecewise variant runs SOBI on consecutive windows and resolves the
//! permutation and sign ambiguity between neighbours.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{ensure, Error, Result};
use crate::exec::Exec;
use crate::metrics::best_permutation;
use crate::signal::Signal;

pub const DEFAULT_LAGS: [usize; 10] = [1, 2, 3, 4, 5, 6, 7, 8, 9, 10];
pub const DEFAULT_WINDOW: usize = 4096;

/// Unmixing matrices held constant on `[τ − Δ/2, τ + Δ/2)` around each knot.
#[derive(Debug, Clone, PartialEq)]
pub struct UnmixingPath {
    delta_tau: usize,
    knots: Vec<usize>,
    matrices: Vec<DMatrix<f64>>,
}

impl UnmixingPath {
    pub fn new(delta_tau: usize, knots: Vec<usize>, matrices: Vec<DMatrix<f64>>) -> Result<Self> {
        ensure!(
            delta_tau > 0,
            InvalidParameter,
            "delta_tau must be positive"
        );
        ensure!(
            !knots.is_empty(),
            InvalidParameter,
            "unmixing path has no knots"
        );
        ensure!(
            knots.len() == matrices.len(),
            InvalidParameter,
            "{} knots but {} matrices",
            knots.len(),
            matrices.len()
        );
        for w in knots.windows(2) {
            ensure!(
                w[1] == w[0] + delta_tau,
                InvalidParameter,
                "knots must be spaced by delta_tau = {delta_tau}"
            );
        }
        let n = matrices[0].nrows();
        for (k, m) in matrices.iter().enumerate() {
            if m.nrows() != n || m.ncols() != n {
                return Err(Error::DimensionMismatch(format!(
                    "matrix at knot {k} is not {n}x{n}"
                )));
            }
            ensure!(
                m.iter().all(|v| v.is_finite()),
                InvalidParameter,
                "matrix at knot {k} is not finite"
            );
            let scale: f64 = m.row_iter().map(|r| r.norm()).product();
            ensure!(
                m.determinant().abs() > 1e-12 * scale,
                InvalidParameter,
                "matrix at knot {k} is singular"
            );
        }
        Ok(UnmixingPath {
            delta_tau,
            knots,
            matrices,
        })
    }

    /// A single matrix covering a signal of `t` samples.
    pub fn constant(b: DMatrix<f64>, t: usize) -> Result<Self> {
        UnmixingPath::new(t.max(1), vec![t / 2], vec![b])
    }

    pub fn delta_tau(&self) -> usize {
        self.delta_tau
    }

    pub fn knots(&self) -> &[usize] {
        &self.knots
    }

    pub fn matrices(&self) -> &[DMatrix<f64>] {
        &self.matrices
    }

    pub fn n(&self) -> usize {
        self.matrices[0].nrows()
    }

    /// Knot whose interval contains sample `n` (clamped at the ends).
    pub fn index_at(&self, n: usize) -> usize {
        let first = self.knots[0] as f64 - self.delta_tau as f64 / 2.0;
        let k = ((n as f64 - first) / self.delta_tau as f64).floor();
        (k.max(0.0) as usize).min(self.knots.len() - 1)
    }

    pub fn at(&self, n: usize) -> &DMatrix<f64> {
        &self.matrices[self.index_at(n)]
    }
}

/// `R(ℓ)_{ij} = (1/(T−ℓ)) Σ_n z_i[n+ℓ] z_j[n]`, symmetrised.
pub fn lagged_covariances(z: &Signal, lags: &[usize]) -> Result<Vec<DMatrix<f64>>> {
    let t = z.len();
    ensure!(!lags.is_empty(), InvalidParameter, "no lags given");
    let max_lag = *lags.iter().max().unwrap();
    ensure!(
        4 * max_lag < t,
        InvalidParameter,
        "lag {max_lag} is not below T/4 = {}",
        t / 4
    );
    let n = z.n_channels();
    Ok(lags
        .iter()
        .map(|&l| {
            let mut r = DMatrix::zeros(n, n);
            for i in 0..n {
                let zi = &z.channel(i)[l..];
                for j in 0..n {
                    let zj = &z.channel(j)[..t - l];
                    r[(i, j)] = zi.iter().zip(zj).map(|(a, b)| a * b).sum::<f64>() / (t - l) as f64;
                }
            }
            (&r + r.transpose()) * 0.5
        })
        .collect())
}

#[derive(Debug, Clone)]
pub struct JointDiagonalization {
    /// Orthogonal; `Vᵀ M V` is approximately diagonal for every input.
    pub v: DMatrix<f64>,
    pub sweeps: usize,
    pub converged: bool,
    /// Sum of squared off-diagonal entries after the last sweep.
    pub off: f64,
}

fn off_criterion(ms: &[DMatrix<f64>]) -> f64 {
    ms.iter()
        .map(|m| {
            let mut s = 0.0;
            for i in 0..m.nrows() {
                for j in 0..m.ncols() {
                    if i != j {
                        s += m[(i, j)] * m[(i, j)];
                    }
                }
            }
            s
        })
        .sum()
}

/// Jacobi-rotation joint diagonalisation of symmetric matrices.
pub fn joint_diagonalize(matrices: &[DMatrix<f64>]) -> Result<JointDiagonalization> {
    ensure!(
        !matrices.is_empty(),
        InvalidParameter,
        "joint_diagonalize needs at least one matrix"
    );
    let n = matrices[0].nrows();
    for m in matrices {
        ensure!(
            m.nrows() == n && m.ncols() == n,
            DimensionMismatch,
            "matrices must all be {n}x{n}"
        );
    }
    let mut ms: Vec<DMatrix<f64>> = matrices.to_vec();
    let mut v = DMatrix::<f64>::identity(n, n);
    let total: f64 = ms.iter().map(|m| m.norm_squared()).sum();
    let mut off = off_criterion(&ms);
    for sweep in 1..=100 {
        let mut rotated = false;
        for p in 0..n.saturating_sub(1) {
            for q in p + 1..n {
                // 2x2 Gram of (M_pp − M_qq, M_pq + M_qp) over the set
                let (mut g00, mut g01, mut g11) = (0.0, 0.0, 0.0);
                for m in &ms {
                    let a = m[(p, p)] - m[(q, q)];
                    let b = m[(p, q)] + m[(q, p)];
                    g00 += a * a;
                    g01 += a * b;
                    g11 += b * b;
                }
                let ton = g00 - g11;
                let toff = 2.0 * g01;
                let angle = 0.5 * toff.atan2(ton + ton.hypot(toff));
                let (s, c) = angle.sin_cos();
                if s.abs() <= 1e-12 {
                    continue;
                }
                rotated = true;
                for m in ms.iter_mut() {
                    rotate(m, p, q, c, s);
                }
                for r in 0..n {
                    let (vp, vq) = (v[(r, p)], v[(r, q)]);
                    v[(r, p)] = c * vp + s * vq;
                    v[(r, q)] = -s * vp + c * vq;
                }
            }
        }
        let next = off_criterion(&ms);
        let improvement = off - next;
        off = next;
        if !rotated || improvement < 1e-12 * total.max(f64::MIN_POSITIVE) {
            return Ok(JointDiagonalization {
                v,
                sweeps: sweep,
                converged: true,
                off,
            });
        }
    }
    Ok(JointDiagonalization {
        v,
        sweeps: 100,
        converged: false,
        off,
    })
}

/// `M ← Rᵀ M R` with `R` the Givens rotation in the (p, q) plane.
fn rotate(m: &mut DMatrix<f64>, p: usize, q: usize, c: f64, s: f64) {
    let n = m.nrows();
    for k in 0..n {
        let (a, b) = (m[(k, p)], m[(k, q)]);
        m[(k, p)] = c * a + s * b;
        m[(k, q)] = -s * a + c * b;
    }
    for k in 0..n {
        let (a, b) = (m[(p, k)], m[(q, k)]);
        m[(p, k)] = c * a + s * b;
        m[(q, k)] = -s * a + c * b;
    }
}

/// SOBI unmixing matrix `B = Vᵀ W` for the whole signal.
pub fn sobi_matrix(z: &Signal, lags: &[usize]) -> Result<DMatrix<f64>> {
    let n = z.n_channels();
    let t = z.len();
    ensure!(
        t >= 64,
        InvalidParameter,
        "SOBI needs at least 64 samples, got {t}"
    );
    let centred: Vec<Vec<f64>> = z
        .channels()
        .iter()
        .map(|c| {
            let m = crate::dsp::mean(c);
            c.iter().map(|v| v - m).collect()
        })
        .collect();
    let zc = Signal::new(z.fs(), centred)?;
    let r0 = lagged_covariances(&zc, &[0])?.remove(0);
    let eig = SymmetricEigen::new(r0);
    let lmax = eig.eigenvalues.max();
    let lmin = eig.eigenvalues.min();
    if !(lmax > 0.0) || lmin < 1e-12 * lmax {
        return Err(Error::SingularCovariance(format!(
            "zero-lag covariance eigenvalues span [{lmin:e}, {lmax:e}]"
        )));
    }
    let inv_sqrt = eig.eigenvalues.map(|l| 1.0 / l.max(1e-10).sqrt());
    let w = &eig.eigenvectors * DMatrix::from_diagonal(&inv_sqrt) * eig.eigenvectors.transpose();
    let white: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..t)
                .map(|s| (0..n).map(|j| w[(i, j)] * zc.channel(j)[s]).sum())
                .collect()
        })
        .collect();
    let x = Signal::new(z.fs(), white)?;
    let rs = lagged_covariances(&x, lags)?;
    let jd = joint_diagonalize(&rs)?;
    if !jd.converged {
        log::warn!("SOBI joint diagonalisation stopped at the sweep cap");
    }
    Ok(jd.v.transpose() * w)
}

/// SOBI as a single-knot path.
pub fn sobi(z: &Signal, lags: &[usize]) -> Result<UnmixingPath> {
    ensure!(
        z.len() >= 1024,
        InvalidParameter,
        "SOBI needs T ≥ 1024, got {}",
        z.len()
    );
    UnmixingPath::constant(sobi_matrix(z, lags)?, z.len())
}

/// SOBI on consecutive windows, aligned to the previous window by permutation
/// and sign.
pub fn p_sobi(z: &Signal, window: usize, lags: &[usize], exec: Exec) -> Result<UnmixingPath> {
    ensure!(
        window >= 1024,
        InvalidParameter,
        "p-SOBI window must be ≥ 1024, got {window}"
    );
    let t = z.len();
    ensure!(
        t >= window,
        InvalidParameter,
        "signal shorter than one window"
    );
    // a trailing remainder shorter than half a window joins the last window
    let mut n_win = t / window;
    if t - n_win * window >= window / 2 {
        n_win += 1;
    }
    let bounds: Vec<(usize, usize)> = (0..n_win)
        .map(|k| {
            let end = if k + 1 == n_win { t } else { (k + 1) * window };
            (k * window, end)
        })
        .collect();
    let raw = exec
        .map(n_win, |k| {
            let (a, b) = bounds[k];
            let piece: Vec<Vec<f64>> = z.channels().iter().map(|c| c[a..b].to_vec()).collect();
            sobi_matrix(&Signal::new(z.fs(), piece)?, lags)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let mut aligned: Vec<DMatrix<f64>> = Vec::with_capacity(n_win);
    for b in raw {
        let next = match aligned.last() {
            None => b,
            Some(prev) => align_rows(&b, prev),
        };
        aligned.push(next);
    }
    let knots = (0..n_win).map(|k| k * window + window / 2).collect();
    UnmixingPath::new(window, knots, aligned)
}

/// Reorders and re-signs the rows of `b` to best match `reference`
/// (largest total |cosine| between corresponding rows).
pub fn align_rows(b: &DMatrix<f64>, reference: &DMatrix<f64>) -> DMatrix<f64> {
    let n = b.nrows();
    let cos = DMatrix::from_fn(n, n, |r, i| {
        let (x, y) = (b.row(r), reference.row(i));
        x.dot(&y) / (x.norm() * y.norm())
    });
    let perm = best_permutation(&cos.map(f64::abs));
    let mut out = b.clone();
    for (i, &r) in perm.iter().enumerate() {
        let sign = if cos[(r, i)] < 0.0 { -1.0 } else { 1.0 };
        out.set_row(i, &(b.row(r) * sign));
    }
    out
}
