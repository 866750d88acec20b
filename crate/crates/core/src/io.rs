//! File formats: signals as CSV with a JSON sidecar, dataset and result
//! bundles as directories of CSV/JSON files.
//!
//! Signal CSV files have a header `ch0,ch1,…` and one row per sample, written
//! with 17 significant digits so values survive a round trip exactly. The
//! sidecar `<stem>.json` holds `{fs, n_channels, n_samples, seed}`.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::benchmark::BenchmarkReport;
use crate::error::{Error, Result};
use crate::metrics::{MetricReport, DB_CAP};
use crate::separator::BssResult;
use crate::signal::Signal;
use crate::sobi::UnmixingPath;
use crate::synthgen::{Dataset, MixingPath, Spectrum, WarpFunction};
use crate::warpest::ThetaPath;
use crate::wavelet::{scalogram, WaveletFrame};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalMeta {
    pub fs: f64,
    pub n_channels: usize,
    pub n_samples: usize,
    pub seed: Option<u64>,
}

fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::format(path, e))?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::format(path, e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    csv::Writer::from_path(path).map_err(|e| csv_error(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::format(path, format!("{other:?}")),
    }
}

/// Writes `<path>` (CSV) and its JSON sidecar.
pub fn write_signal(path: &Path, signal: &Signal, seed: Option<u64>) -> Result<()> {
    let mut w = csv_writer(path)?;
    let header: Vec<String> = (0..signal.n_channels()).map(|i| format!("ch{i}")).collect();
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    for n in 0..signal.len() {
        let row: Vec<String> = signal.channels().iter().map(|c| fmt17(c[n])).collect();
        w.write_record(&row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    let meta = SignalMeta {
        fs: signal.fs(),
        n_channels: signal.n_channels(),
        n_samples: signal.len(),
        seed,
    };
    write_json(&sidecar_path(path), &meta)
}

pub fn read_signal(path: &Path) -> Result<(Signal, SignalMeta)> {
    let meta: SignalMeta = read_json(&sidecar_path(path))?;
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let header = r.headers().map_err(|e| csv_error(path, e))?.clone();
    let expected: Vec<String> = (0..meta.n_channels).map(|i| format!("ch{i}")).collect();
    if header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(Error::format(
            path,
            format!("expected header {}", expected.join(",")),
        ));
    }
    let mut channels = vec![Vec::with_capacity(meta.n_samples); meta.n_channels];
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        for (i, field) in rec.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::format(path, format!("line {}: bad number {field:?}", line + 2))
            })?;
            channels[i].push(v);
        }
    }
    if channels.iter().any(|c| c.len() != meta.n_samples) {
        return Err(Error::format(
            path,
            format!(
                "expected {} samples per channel as declared in the sidecar",
                meta.n_samples
            ),
        ));
    }
    let signal = Signal::new(meta.fs, channels).map_err(|e| Error::format(path, e))?;
    Ok((signal, meta))
}

/// Row-major matrices as nested arrays.
fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_rows(path: &Path, rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != rows[0].len()) {
        return Err(Error::format(path, "ragged or empty matrix"));
    }
    Ok(DMatrix::from_fn(n, rows[0].len(), |i, j| rows[i][j]))
}

#[derive(Serialize, Deserialize)]
struct MixingFile {
    times: Vec<usize>,
    matrices: Vec<Vec<Vec<f64>>>,
}

#[derive(Serialize, Deserialize)]
struct UnmixingFile {
    delta_tau: usize,
    knots: Vec<usize>,
    matrices: Vec<Vec<Vec<f64>>>,
}

#[derive(Serialize, Deserialize)]
struct WarpFile {
    fs: f64,
    gamma_prime: Vec<f64>,
}

pub fn write_mixing(path: &Path, mixing: &MixingPath) -> Result<()> {
    write_json(
        path,
        &MixingFile {
            times: mixing.times().to_vec(),
            matrices: mixing.matrices().iter().map(rows_of).collect(),
        },
    )
}

pub fn read_mixing(path: &Path) -> Result<MixingPath> {
    let f: MixingFile = read_json(path)?;
    let mats = f
        .matrices
        .iter()
        .map(|m| from_rows(path, m))
        .collect::<Result<Vec<_>>>()?;
    MixingPath::new(f.times, mats).map_err(|e| Error::format(path, e))
}

pub fn write_unmixing(path: &Path, b: &UnmixingPath) -> Result<()> {
    write_json(
        path,
        &UnmixingFile {
            delta_tau: b.delta_tau(),
            knots: b.knots().to_vec(),
            matrices: b.matrices().iter().map(rows_of).collect(),
        },
    )
}

pub fn read_unmixing(path: &Path) -> Result<UnmixingPath> {
    let f: UnmixingFile = read_json(path)?;
    let mats = f
        .matrices
        .iter()
        .map(|m| from_rows(path, m))
        .collect::<Result<Vec<_>>>()?;
    UnmixingPath::new(f.delta_tau, f.knots, mats).map_err(|e| Error::format(path, e))
}

pub const SOURCES: &str = "sources.csv";
pub const OBSERVATIONS: &str = "observations.csv";
pub const MIXING: &str = "mixing.json";
pub const WARPS: &str = "warps.json";
pub const SPECTRA: &str = "spectra.json";

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn write_dataset(dir: &Path, ds: &Dataset) -> Result<()> {
    ensure_dir(dir)?;
    write_signal(&dir.join(SOURCES), &ds.sources, Some(ds.seed))?;
    write_signal(&dir.join(OBSERVATIONS), &ds.observations, Some(ds.seed))?;
    write_mixing(&dir.join(MIXING), &ds.mixing)?;
    let warps: Vec<WarpFile> = ds
        .warps
        .iter()
        .map(|w| WarpFile {
            fs: w.fs(),
            gamma_prime: w.gamma_prime().to_vec(),
        })
        .collect();
    write_json(&dir.join(WARPS), &warps)?;
    write_json(&dir.join(SPECTRA), &ds.spectra)
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let (sources, meta) = read_signal(&dir.join(SOURCES))?;
    let (observations, _) = read_signal(&dir.join(OBSERVATIONS))?;
    let mixing = read_mixing(&dir.join(MIXING))?;
    let warps_path = dir.join(WARPS);
    let warp_files: Vec<WarpFile> = read_json(&warps_path)?;
    let warps = warp_files
        .into_iter()
        .map(|w| {
            WarpFunction::from_gamma_prime(w.fs, w.gamma_prime)
                .map_err(|e| Error::format(&warps_path, e))
        })
        .collect::<Result<Vec<_>>>()?;
    let spectra: Vec<Spectrum> = read_json(&dir.join(SPECTRA))?;
    let ds = Dataset {
        sources,
        observations,
        warps,
        spectra,
        mixing,
        seed: meta.seed.unwrap_or(0),
    };
    ds.validate().map_err(|e| Error::format(dir, e))?;
    Ok(ds)
}

/// Summary written as `report.json` of a separation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationReport {
    pub algorithm: String,
    pub iterations: usize,
    pub sir_updates: Vec<f64>,
    pub converged: bool,
}

pub const SOURCES_HAT: &str = "sources_hat.csv";
pub const B_PATH: &str = "b_path.json";
pub const REPORT: &str = "report.json";

pub fn theta_file(i: usize) -> String {
    format!("theta_{i}.csv")
}

pub fn write_theta(path: &Path, theta: &ThetaPath) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["tau", "theta"])
        .map_err(|e| csv_error(path, e))?;
    for (t, v) in theta.tau_grid().iter().zip(theta.values()) {
        w.write_record([t.to_string(), fmt17(*v)])
            .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_theta(path: &Path, q: f64) -> Result<ThetaPath> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut taus = Vec::new();
    let mut vals = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let bad = || Error::format(path, format!("line {}: expected tau,theta", line + 2));
        taus.push(
            rec.get(0)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(bad)?,
        );
        vals.push(
            rec.get(1)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(bad)?,
        );
    }
    ThetaPath::new(taus, vals, q).map_err(|e| Error::format(path, e))
}

/// Writes a separation result; the warp and spectrum files are present only
/// for the alternating estimator.
pub fn write_result(
    dir: &Path,
    algorithm: &str,
    sources_hat: &Signal,
    b_path: &UnmixingPath,
    bss: Option<&BssResult>,
) -> Result<()> {
    ensure_dir(dir)?;
    write_signal(&dir.join(SOURCES_HAT), sources_hat, None)?;
    write_unmixing(&dir.join(B_PATH), b_path)?;
    let report = match bss {
        Some(r) => {
            for (i, th) in r.theta_paths.iter().enumerate() {
                write_theta(&dir.join(theta_file(i)), th)?;
            }
            write_json(&dir.join(SPECTRA), &r.spectra)?;
            SeparationReport {
                algorithm: algorithm.to_string(),
                iterations: r.outer_iterations,
                sir_updates: r.sir_updates.clone(),
                converged: r.converged,
            }
        }
        None => SeparationReport {
            algorithm: algorithm.to_string(),
            iterations: 0,
            sir_updates: Vec::new(),
            converged: true,
        },
    };
    write_json(&dir.join(REPORT), &report)
}

/// `sources_hat`, `b_path` and the report of a result bundle.
pub fn read_result(dir: &Path) -> Result<(Signal, UnmixingPath, SeparationReport)> {
    let (y, _) = read_signal(&dir.join(SOURCES_HAT))?;
    let b = read_unmixing(&dir.join(B_PATH))?;
    let report = read_json(&dir.join(REPORT))?;
    Ok((y, b, report))
}

pub const RHO_TRAJECTORY: &str = "rho_trajectory.csv";

/// `report.json` (non-finite dB values are written as the cap) and
/// `rho_trajectory.csv` with columns `t,rho,rho_db`.
pub fn write_metrics(dir: &Path, report: &MetricReport) -> Result<()> {
    ensure_dir(dir)?;
    let mut r = report.clone();
    for v in [&mut r.rho_mean_db, &mut r.rho_std_db] {
        if !v.is_finite() {
            *v = -DB_CAP;
        }
    }
    write_json(&dir.join(REPORT), &r)?;
    let path = dir.join(RHO_TRAJECTORY);
    let mut w = csv_writer(&path)?;
    w.write_record(["t", "rho", "rho_db"])
        .map_err(|e| csv_error(&path, e))?;
    for (t, rho) in &report.rho_trajectory {
        let db = crate::dsp::db_capped(*rho, DB_CAP);
        w.write_record([t.to_string(), fmt17(*rho), fmt17(db)])
            .map_err(|e| csv_error(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))
}

#[derive(Serialize)]
struct ScalogramMeta<'a> {
    q: f64,
    s_values: &'a [f64],
    fs: f64,
}

/// One row per scale, highest frequency first, plus a `{q, s_values, fs}` sidecar.
pub fn write_scalogram(path: &Path, frame: &WaveletFrame) -> Result<()> {
    let sc = scalogram(frame);
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    for k in 0..sc.nrows() {
        let row: Vec<String> = sc.row(k).iter().map(|v| fmt17(*v)).collect();
        w.write_record(&row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    let grid = frame.grid();
    write_json(
        &sidecar_path(path),
        &ScalogramMeta {
            q: grid.q(),
            s_values: grid.s_values(),
            fs: frame.fs(),
        },
    )
}

pub const BENCHMARK_CSV: &str = "benchmark.csv";
pub const BENCHMARK_JSON: &str = "benchmark.json";

pub fn write_benchmark(dir: &Path, report: &BenchmarkReport) -> Result<()> {
    ensure_dir(dir)?;
    let path = dir.join(BENCHMARK_CSV);
    let mut w = csv_writer(&path)?;
    w.write_record([
        "algorithm",
        "sir_mean_db",
        "sir_std_db",
        "rho_mean_db",
        "rho_std_db",
        "trials",
    ])
    .map_err(|e| csv_error(&path, e))?;
    for row in &report.table {
        w.write_record([
            row.algorithm.name().to_string(),
            format!("{:.4}", row.sir_mean),
            format!("{:.4}", row.sir_std),
            format!("{:.4}", row.rho_mean_db),
            format!("{:.4}", row.rho_std_db),
            row.trials.to_string(),
        ])
        .map_err(|e| csv_error(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    write_json(&dir.join(BENCHMARK_JSON), report)
}
