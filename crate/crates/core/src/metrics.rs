//! Separation quality: projection SIR, the normalised interference index ρ
//! and permutation/sign alignment of estimated sources.

use itertools::Itertools;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::dsp;
use crate::error::{ensure, Error, Result};
use crate::signal::Signal;
use crate::sobi::UnmixingPath;
use crate::synthgen::MixingPath;

/// dB values saturate here instead of reaching ±∞.
pub const DB_CAP: f64 = 300.0;

/// Assignment maximising `Σ_i score[(perm[i], i)]`.
///
/// Exhaustive for up to 6 columns, greedy beyond.
pub fn best_permutation(score: &DMatrix<f64>) -> Vec<usize> {
    let n = score.ncols();
    if n <= 6 {
        (0..n)
            .permutations(n)
            .map(|p| {
                let v: f64 = p.iter().enumerate().map(|(i, &r)| score[(r, i)]).sum();
                (p, v)
            })
            .fold((Vec::new(), f64::NEG_INFINITY), |best, (p, v)| {
                if v > best.1 {
                    (p, v)
                } else {
                    best
                }
            })
            .0
    } else {
        let mut perm = vec![usize::MAX; n];
        let mut used = vec![false; n];
        let mut cells: Vec<(usize, usize)> = (0..n).cartesian_product(0..n).collect();
        cells.sort_by(|a, b| score[*b].total_cmp(&score[*a]));
        for (r, i) in cells {
            if !used[r] && perm[i] == usize::MAX {
                perm[i] = r;
                used[r] = true;
            }
        }
        perm
    }
}

/// `perm[i]` is the estimated channel matched to true source `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alignment {
    pub perm: Vec<usize>,
    pub signs: Vec<f64>,
}

impl Alignment {
    pub fn apply(&self, y_hat: &Signal) -> Result<Signal> {
        let channels = self
            .perm
            .iter()
            .zip(&self.signs)
            .map(|(&r, s)| y_hat.channel(r).iter().map(|v| v * s).collect())
            .collect();
        Signal::new(y_hat.fs(), channels)
    }
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (dsp::mean(a), dsp::mean(b));
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        let (x, y) = (x - ma, y - mb);
        sab += x * y;
        saa += x * x;
        sbb += y * y;
    }
    if saa == 0.0 || sbb == 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}

pub fn align_sources(y_hat: &Signal, y_true: &Signal) -> Result<Alignment> {
    y_hat.check_same_shape(y_true, "estimated vs true sources")?;
    let n = y_true.n_channels();
    let corr = DMatrix::from_fn(n, n, |r, i| {
        correlation(y_hat.channel(r), y_true.channel(i))
    });
    let perm = best_permutation(&corr.map(f64::abs));
    let signs = perm
        .iter()
        .enumerate()
        .map(|(i, &r)| if corr[(r, i)] < 0.0 { -1.0 } else { 1.0 })
        .collect();
    Ok(Alignment { perm, signs })
}

/// Projection-based SIR of one estimate against the true source family.
pub fn sir(y_hat_i: &[f64], y_true: &Signal, i: usize) -> Result<f64> {
    Ok(SirProjector::new(y_true)?.sir(y_hat_i, i))
}

/// Per-source SIR of already aligned estimates.
pub fn sir_all(y_hat: &Signal, y_true: &Signal) -> Result<Vec<f64>> {
    y_hat.check_same_shape(y_true, "estimated vs true sources")?;
    let p = SirProjector::new(y_true)?;
    Ok((0..y_hat.n_channels())
        .map(|i| p.sir(y_hat.channel(i), i))
        .collect())
}

/// Reference family with its Gram matrix factored once.
struct SirProjector<'a> {
    y: &'a Signal,
    gram_inv: DMatrix<f64>,
}

impl<'a> SirProjector<'a> {
    fn new(y: &'a Signal) -> Result<Self> {
        let n = y.n_channels();
        let gram = DMatrix::from_fn(n, n, |a, b| dot(y.channel(a), y.channel(b)));
        let eig = SymmetricEigen::new(gram.clone()).eigenvalues;
        let (lo, hi) = (eig.min(), eig.max());
        if !(hi > 0.0) || lo <= hi * 1e-12 {
            return Err(Error::Degenerate(format!(
                "reference sources are linearly dependent (Gram eigenvalues {lo:e}..{hi:e})"
            )));
        }
        let gram_inv = gram
            .try_inverse()
            .ok_or_else(|| Error::Degenerate("Gram matrix is not invertible".into()))?;
        Ok(SirProjector { y, gram_inv })
    }

    fn sir(&self, est: &[f64], i: usize) -> f64 {
        let n = self.y.n_channels();
        let c = DVector::from_fn(n, |a, _| dot(self.y.channel(a), est));
        let coef = &self.gram_inv * &c;
        let yi = self.y.channel(i);
        let alpha = c[i] / dot(yi, yi);
        let mut target = 0.0;
        let mut interf = 0.0;
        for s in 0..est.len() {
            let t = alpha * yi[s];
            let p: f64 = (0..n).map(|a| coef[a] * self.y.channel(a)[s]).sum();
            target += t * t;
            interf += (p - t) * (p - t);
        }
        dsp::db_capped(target / interf, DB_CAP)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Normalised interference index of the global matrix `G = B A`.
pub fn amari_rho(g: &DMatrix<f64>) -> Result<f64> {
    let n = g.nrows();
    ensure!(g.ncols() == n, DimensionMismatch, "ρ needs a square matrix");
    ensure!(n >= 2, InvalidParameter, "ρ needs N ≥ 2");
    ensure!(
        g.iter().all(|v| v.is_finite()),
        InvalidParameter,
        "ρ of a non-finite matrix"
    );
    let g2 = g.map(|v| v * v);
    let mut total = 0.0;
    for i in 0..n {
        let row = g2.row(i);
        let m = row.max();
        ensure!(m > 0.0, Degenerate, "row {i} of the global matrix is zero");
        total += row.sum() / m - 1.0;
    }
    for j in 0..n {
        let col = g2.column(j);
        let m = col.max();
        ensure!(
            m > 0.0,
            Degenerate,
            "column {j} of the global matrix is zero"
        );
        total += col.sum() / m - 1.0;
    }
    Ok(total / (2.0 * n as f64 * (n as f64 - 1.0)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RhoTrajectory {
    pub points: Vec<(usize, f64)>,
    pub mean_db: f64,
    pub std_db: f64,
}

/// `ρ(B(t) A(t))` on `grid`, with dB summaries.
pub fn rho_trajectory(
    b_path: &UnmixingPath,
    mixing: &MixingPath,
    grid: &[usize],
) -> Result<RhoTrajectory> {
    ensure!(!grid.is_empty(), InvalidParameter, "empty evaluation grid");
    ensure!(
        b_path.n() == mixing.n(),
        DimensionMismatch,
        "unmixing is {0}x{0}, mixing is {1}x{1}",
        b_path.n(),
        mixing.n()
    );
    let points = grid
        .iter()
        .map(|&t| Ok((t, amari_rho(&(b_path.at(t) * mixing.at(t as f64)))?)))
        .collect::<Result<Vec<_>>>()?;
    let rhos: Vec<f64> = points.iter().map(|p| p.1).collect();
    let mean_db = dsp::db_capped(dsp::mean(&rhos), DB_CAP);
    let dbs: Vec<f64> = rhos.iter().map(|r| dsp::db_capped(*r, DB_CAP)).collect();
    let m = dsp::mean(&dbs);
    let std_db = (dbs.iter().map(|d| (d - m) * (d - m)).sum::<f64>() / dbs.len() as f64).sqrt();
    Ok(RhoTrajectory {
        points,
        mean_db,
        std_db,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub per_source_sir: Vec<f64>,
    pub mean_sir: f64,
    pub rho_mean_db: f64,
    pub rho_std_db: f64,
    pub rho_trajectory: Vec<(usize, f64)>,
}

/// Default ρ evaluation spacing, samples.
pub const RHO_STEP: usize = 64;

/// Aligns `y_hat` to `y_true`, then reports SIR and (when both paths are
/// given) the ρ trajectory.
pub fn evaluate(
    y_hat: &Signal,
    y_true: &Signal,
    paths: Option<(&UnmixingPath, &MixingPath)>,
) -> Result<MetricReport> {
    let aligned = align_sources(y_hat, y_true)?.apply(y_hat)?;
    let per_source_sir = sir_all(&aligned, y_true)?;
    let mean_sir = dsp::mean(&per_source_sir);
    let (rho_mean_db, rho_std_db, rho_trajectory) = match paths {
        Some((b, a)) => {
            let grid: Vec<usize> = (0..y_true.len()).step_by(RHO_STEP).collect();
            let r = rho_trajectory(b, a, &grid)?;
            (r.mean_db, r.std_db, r.points)
        }
        None => (f64::NAN, f64::NAN, Vec::new()),
    };
    Ok(MetricReport {
        per_source_sir,
        mean_sir,
        rho_mean_db,
        rho_std_db,
        rho_trajectory,
    })
}
