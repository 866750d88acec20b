//! Seeded multi-trial comparison of SOBI, piecewise SOBI and the alternating
//! wavelet-domain estimator on the synthetic benchmark.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dsp;
use crate::error::{ensure, Error, Result};
use crate::exec::Exec;
use crate::metrics::{self, MetricReport};
use crate::separator::{apply_unmixing, jefas_bss, BssResult, SeparatorConfig};
use crate::signal::Signal;
use crate::sobi::{self, UnmixingPath};
use crate::synthgen::{Dataset, ExampleConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Algorithm {
    #[serde(rename = "sobi")]
    Sobi,
    #[serde(rename = "p-sobi")]
    PSobi,
    #[serde(rename = "jefas-bss")]
    JefasBss,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::Sobi, Algorithm::PSobi, Algorithm::JefasBss];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Sobi => "sobi",
            Algorithm::PSobi => "p-sobi",
            Algorithm::JefasBss => "jefas-bss",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| {
                Error::InvalidParameter(format!(
                    "unknown algorithm {s:?} (expected sobi, p-sobi or jefas-bss)"
                ))
            })
    }
}

/// Output of one algorithm on one observation set.
#[derive(Debug, Clone)]
pub struct Separation {
    pub sources_hat: Signal,
    pub b_path: UnmixingPath,
    /// Present for the alternating estimator only.
    pub bss: Option<BssResult>,
}

pub fn separate(algo: Algorithm, z: &Signal, cfg: &SeparatorConfig) -> Result<Separation> {
    let b_path = match algo {
        Algorithm::Sobi => sobi::sobi(z, &cfg.lags)?,
        Algorithm::PSobi => sobi::p_sobi(z, cfg.psobi_window.min(z.len()), &cfg.lags, cfg.exec)?,
        Algorithm::JefasBss => {
            let r = jefas_bss(z, cfg)?;
            return Ok(Separation {
                sources_hat: r.sources_hat.clone(),
                b_path: r.b_path.clone(),
                bss: Some(r),
            });
        }
    };
    Ok(Separation {
        sources_hat: apply_unmixing(z, &b_path)?,
        b_path,
        bss: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkConfig {
    pub n: usize,
    pub t: usize,
    pub fs: f64,
    pub seeds: Vec<u64>,
    pub generator: ExampleConfig,
    pub separator: SeparatorConfig,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            n: 3,
            t: 16384,
            fs: 8192.0,
            seeds: (0..20).collect(),
            generator: ExampleConfig::default(),
            separator: SeparatorConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmOutcome {
    pub algorithm: Algorithm,
    pub per_source_sir: Vec<f64>,
    pub mean_sir: f64,
    pub rho_mean_db: f64,
    pub rho_std_db: f64,
    pub iterations: Option<usize>,
    pub converged: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub seed: u64,
    pub outcomes: Vec<AlgorithmOutcome>,
    /// Set when the trial failed; such trials are left out of the table.
    pub error: Option<String>,
}

/// One line of the comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub algorithm: Algorithm,
    /// Mean and standard deviation over trials of the per-trial mean SIR (dB).
    pub sir_mean: f64,
    pub sir_std: f64,
    /// Mean over trials of the temporal ρ mean (dB) and of its temporal std (dB).
    pub rho_mean_db: f64,
    pub rho_std_db: f64,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub table: Vec<TableRow>,
    pub trials: Vec<TrialResult>,
    pub converged_trials: usize,
    pub notes: Vec<String>,
}

fn outcome(algo: Algorithm, ds: &Dataset, sep: &Separation) -> Result<AlgorithmOutcome> {
    let report: MetricReport = metrics::evaluate(
        &sep.sources_hat,
        &ds.sources,
        Some((&sep.b_path, &ds.mixing)),
    )?;
    Ok(AlgorithmOutcome {
        algorithm: algo,
        per_source_sir: report.per_source_sir,
        mean_sir: report.mean_sir,
        rho_mean_db: report.rho_mean_db,
        rho_std_db: report.rho_std_db,
        iterations: sep.bss.as_ref().map(|b| b.outer_iterations),
        converged: sep.bss.as_ref().map(|b| b.converged),
    })
}

pub fn run_trial(cfg: &BenchmarkConfig, seed: u64) -> TrialResult {
    let run = || -> Result<Vec<AlgorithmOutcome>> {
        let ds = cfg.generator.generate(cfg.n, cfg.t, cfg.fs, seed)?;
        Algorithm::ALL
            .iter()
            .map(|&a| {
                let sep = separate(a, &ds.observations, &cfg.separator)?;
                outcome(a, &ds, &sep)
            })
            .collect()
    };
    match run() {
        Ok(outcomes) => TrialResult {
            seed,
            outcomes,
            error: None,
        },
        Err(e) => {
            log::error!("trial with seed {seed} failed: {e}");
            TrialResult {
                seed,
                outcomes: Vec::new(),
                error: Some(e.to_string()),
            }
        }
    }
}

/// Runs every seed and aggregates the table. Trials fan out under `exec`;
/// when they do, each trial runs sequentially inside.
pub fn run_benchmark(cfg: &BenchmarkConfig, exec: Exec) -> Result<BenchmarkReport> {
    ensure!(
        cfg.seeds.len() >= 2,
        InvalidParameter,
        "a benchmark needs at least 2 trials"
    );
    let mut inner = cfg.clone();
    if exec.is_parallel() {
        inner.separator = inner.separator.with_exec(Exec::Sequential);
    }
    let cfg = &inner;
    let trials = exec.map(cfg.seeds.len(), |k| {
        let r = run_trial(cfg, cfg.seeds[k]);
        log::info!("trial {} (seed {}) done", k + 1, cfg.seeds[k]);
        r
    });
    Ok(aggregate(trials))
}

pub fn aggregate(trials: Vec<TrialResult>) -> BenchmarkReport {
    let table = Algorithm::ALL
        .iter()
        .map(|&a| {
            let rows: Vec<&AlgorithmOutcome> = trials
                .iter()
                .filter(|t| t.error.is_none())
                .flat_map(|t| t.outcomes.iter().filter(|o| o.algorithm == a))
                .collect();
            let sirs: Vec<f64> = rows.iter().map(|o| o.mean_sir).collect();
            let rho: Vec<f64> = rows.iter().map(|o| o.rho_mean_db).collect();
            let rho_std: Vec<f64> = rows.iter().map(|o| o.rho_std_db).collect();
            TableRow {
                algorithm: a,
                sir_mean: dsp::mean(&sirs),
                sir_std: std_dev(&sirs),
                rho_mean_db: dsp::mean(&rho),
                rho_std_db: dsp::mean(&rho_std),
                trials: rows.len(),
            }
        })
        .collect();
    let converged_trials = trials
        .iter()
        .filter(|t| {
            t.outcomes
                .iter()
                .any(|o| o.algorithm == Algorithm::JefasBss && o.converged == Some(true))
        })
        .count();
    let failed = trials.iter().filter(|t| t.error.is_some()).count();
    let mut notes = vec!["QTF-BSS column omitted: not implemented".to_string()];
    if failed > 0 {
        notes.push(format!(
            "{failed} trial(s) failed and are excluded from the table"
        ));
    }
    BenchmarkReport {
        table,
        trials,
        converged_trials,
        notes,
    }
}

fn std_dev(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let m = dsp::mean(x);
    (x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() - 1) as f64).sqrt()
}
