//! Run configuration read from a JSON file.
//!
//! Every section and field is optional and falls back to the benchmark
//! defaults. Errors name the offending field path (`wavelet.q`) and, when the
//! field is present in the file, its line.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use warpsep::benchmark::BenchmarkConfig;
use warpsep::separator::SeparatorConfig;
use warpsep::sobi;
use warpsep::synthgen::ExampleConfig;
use warpsep::wavelet::{make_scale_grid, WaveletParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub fs: f64,
    pub seed: u64,
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection {
            n: 3,
            t: 16384,
            fs: 8192.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WaveletSection {
    pub q: f64,
    #[serde(rename = "M_s")]
    pub m_s: usize,
    /// Scale exponent range, in units of `log_q`.
    pub s_min: f64,
    pub s_max: f64,
    pub xi0: f64,
    pub sigma: f64,
}

impl Default for WaveletSection {
    fn default() -> Self {
        let p = WaveletParams::default();
        WaveletSection {
            q: 2f64.powf(0.125),
            m_s: 48,
            s_min: -6.0,
            s_max: 34.0,
            xi0: p.xi0,
            sigma: p.sigma,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeparatorSection {
    pub delta_tau: usize,
    #[serde(rename = "Lambda")]
    pub lambda: f64,
    pub k_max: usize,
}

impl Default for SeparatorSection {
    fn default() -> Self {
        let d = SeparatorConfig::default();
        SeparatorSection {
            delta_tau: d.delta_tau,
            lambda: d.lambda,
            k_max: d.k_max,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineSection {
    pub lags: Vec<usize>,
    pub window: usize,
}

impl Default for BaselineSection {
    fn default() -> Self {
        BaselineSection {
            lags: sobi::DEFAULT_LAGS.to_vec(),
            window: sobi::DEFAULT_WINDOW,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkSection {
    pub n_trials: usize,
    /// Explicit trial seeds; defaults to `dataset.seed + 0..n_trials`.
    pub seeds: Option<Vec<u64>>,
}

impl Default for BenchmarkSection {
    fn default() -> Self {
        BenchmarkSection {
            n_trials: 20,
            seeds: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetSection,
    pub wavelet: WaveletSection,
    pub separator: SeparatorSection,
    pub baselines: BaselineSection,
    pub benchmark: BenchmarkSection,
    /// Generator knobs (warp and mixing ranges); `q` follows `wavelet.q`.
    pub generator: ExampleConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub field: String,
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.field.is_empty(), self.line) {
            (true, Some(l)) => write!(f, "config error (line {l}): {}", self.message),
            (true, None) => write!(f, "config error: {}", self.message),
            (false, Some(l)) => write!(
                f,
                "config error at {} (line {l}): {}",
                self.field, self.message
            ),
            (false, None) => write!(f, "config error at {}: {}", self.field, self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
            field: String::new(),
            line: None,
            message: format!("{}: {e}", path.display()),
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let field = e.path().to_string();
            let inner = e.into_inner();
            ConfigError {
                field: if field == "." { String::new() } else { field },
                line: Some(inner.line()),
                message: inner.to_string(),
            }
        })?;
        let lines = key_lines(text);
        cfg.validate().map_err(|(field, message)| ConfigError {
            line: lines.get(field).copied(),
            field: field.to_string(),
            message,
        })?;
        Ok(cfg)
    }

    /// Module preconditions, checked up front.
    fn validate(&self) -> Result<(), (&'static str, String)> {
        fn check(ok: bool, field: &'static str, msg: String) -> Result<(), (&'static str, String)> {
            if ok {
                Ok(())
            } else {
                Err((field, msg))
            }
        }
        let d = &self.dataset;
        check(
            d.n >= 2,
            "dataset.N",
            format!("need at least 2 sources, got {}", d.n),
        )?;
        check(
            d.t >= 1024,
            "dataset.T",
            format!("need at least 1024 samples, got {}", d.t),
        )?;
        check(
            d.fs > 0.0 && d.fs.is_finite(),
            "dataset.fs",
            format!("must be > 0, got {}", d.fs),
        )?;
        let w = &self.wavelet;
        check(
            w.q > 1.0 && w.q.is_finite(),
            "wavelet.q",
            format!("must be > 1, got {}", w.q),
        )?;
        check(
            w.m_s >= 2,
            "wavelet.M_s",
            format!("must be ≥ 2, got {}", w.m_s),
        )?;
        check(
            w.s_min.is_finite(),
            "wavelet.s_min",
            format!("must be finite, got {}", w.s_min),
        )?;
        check(
            w.s_max > w.s_min && w.s_max.is_finite(),
            "wavelet.s_max",
            format!("must exceed s_min ({}), got {}", w.s_min, w.s_max),
        )?;
        check(
            w.xi0 > 0.0 && w.xi0 <= std::f64::consts::PI,
            "wavelet.xi0",
            format!("must lie in (0, π] rad/sample, got {}", w.xi0),
        )?;
        check(
            w.sigma > 0.0 && w.sigma.is_finite(),
            "wavelet.sigma",
            format!("must be > 0, got {}", w.sigma),
        )?;
        let margin = self.separator_config().jefas.margin();
        check(
            d.t > 2 * margin,
            "dataset.T",
            format!(
                "must exceed twice the wavelet boundary margin ({margin} samples), got {}",
                d.t
            ),
        )?;
        let s = &self.separator;
        check(
            s.delta_tau >= 64,
            "separator.delta_tau",
            format!("must be ≥ 64, got {}", s.delta_tau),
        )?;
        check(
            s.delta_tau <= d.t,
            "separator.delta_tau",
            format!("must not exceed T ({}), got {}", d.t, s.delta_tau),
        )?;
        check(
            s.lambda.is_finite(),
            "separator.Lambda",
            format!("must be finite, got {}", s.lambda),
        )?;
        check(s.k_max >= 1, "separator.k_max", "must be ≥ 1".to_string())?;
        let b = &self.baselines;
        check(
            !b.lags.is_empty(),
            "baselines.lags",
            "at least one lag is required".to_string(),
        )?;
        check(
            b.lags.iter().all(|&l| l >= 1),
            "baselines.lags",
            "lags must be ≥ 1".to_string(),
        )?;
        let max_lag = b.lags.iter().copied().max().unwrap_or(0);
        check(
            b.window > 2 * max_lag,
            "baselines.window",
            format!(
                "must exceed twice the largest lag ({max_lag}), got {}",
                b.window
            ),
        )?;
        let bm = &self.benchmark;
        check(
            bm.n_trials >= 2,
            "benchmark.n_trials",
            format!("must be ≥ 2, got {}", bm.n_trials),
        )?;
        if let Some(seeds) = &bm.seeds {
            check(
                seeds.len() == bm.n_trials,
                "benchmark.seeds",
                format!(
                    "expected {} seeds (n_trials), got {}",
                    bm.n_trials,
                    seeds.len()
                ),
            )?;
        }
        let g = &self.generator;
        check(
            g.oversample >= 1 && g.mixing_step >= 1 && g.spectrum_points >= 2,
            "generator",
            "oversample and mixing_step must be ≥ 1 and spectrum_points ≥ 2".to_string(),
        )?;
        Ok(())
    }

    pub fn wavelet_params(&self) -> WaveletParams {
        WaveletParams {
            xi0: self.wavelet.xi0,
            sigma: self.wavelet.sigma,
        }
    }

    pub fn separator_config(&self) -> SeparatorConfig {
        let w = &self.wavelet;
        let mut cfg = SeparatorConfig {
            delta_tau: self.separator.delta_tau,
            lambda: self.separator.lambda,
            k_max: self.separator.k_max,
            psobi_window: self.baselines.window,
            lags: self.baselines.lags.clone(),
            ..SeparatorConfig::default()
        };
        // validated before use; a bad grid here falls back to the default and is
        // reported by validate()
        if let Ok(grid) = make_scale_grid(w.q, w.s_min, w.s_max, w.m_s) {
            cfg.jefas.grid = grid;
        }
        cfg.jefas.params = self.wavelet_params();
        cfg
    }

    pub fn generator(&self) -> ExampleConfig {
        ExampleConfig {
            q: self.wavelet.q,
            ..self.generator.clone()
        }
    }

    pub fn seeds(&self) -> Vec<u64> {
        match &self.benchmark.seeds {
            Some(s) => s.clone(),
            None => (0..self.benchmark.n_trials as u64)
                .map(|k| self.dataset.seed + k)
                .collect(),
        }
    }

    pub fn benchmark_config(&self) -> BenchmarkConfig {
        BenchmarkConfig {
            n: self.dataset.n,
            t: self.dataset.t,
            fs: self.dataset.fs,
            seeds: self.seeds(),
            generator: self.generator(),
            separator: self.separator_config(),
        }
    }
}

/// Line of every object key in a (syntactically valid) JSON text, keyed by
/// dotted path.
fn key_lines(text: &str) -> HashMap<&'static str, usize> {
    let mut scan = Scanner {
        bytes: text.as_bytes(),
        pos: 0,
        line: 1,
        out: HashMap::new(),
    };
    scan.value(&mut Vec::new());
    scan.out
        .into_iter()
        .filter_map(|(k, v)| KNOWN_FIELDS.iter().find(|f| **f == k).map(|f| (*f, v)))
        .collect()
}

const KNOWN_FIELDS: &[&str] = &[
    "dataset.N",
    "dataset.T",
    "dataset.fs",
    "wavelet.q",
    "wavelet.M_s",
    "wavelet.s_min",
    "wavelet.s_max",
    "wavelet.xi0",
    "wavelet.sigma",
    "separator.delta_tau",
    "separator.Lambda",
    "separator.k_max",
    "baselines.lags",
    "baselines.window",
    "benchmark.n_trials",
    "benchmark.seeds",
    "generator",
];

struct Scanner<'a> {
    bytes: &'a [u8],
    pos: usize,
    line: usize,
    out: HashMap<String, usize>,
}

impl Scanner<'_> {
    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    fn bump(&mut self) -> Option<u8> {
        let c = self.peek()?;
        self.pos += 1;
        if c == b'\n' {
            self.line += 1;
        }
        Some(c)
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(b' ' | b'\t' | b'\n' | b'\r')) {
            self.bump();
        }
    }

    fn string(&mut self) -> String {
        let start = self.pos + 1;
        self.bump();
        while let Some(c) = self.bump() {
            match c {
                b'\\' => {
                    self.bump();
                }
                b'"' => break,
                _ => {}
            }
        }
        String::from_utf8_lossy(&self.bytes[start..self.pos.saturating_sub(1).max(start)])
            .into_owned()
    }

    fn value(&mut self, path: &mut Vec<String>) {
        self.skip_ws();
        match self.peek() {
            Some(b'{') => {
                self.bump();
                loop {
                    self.skip_ws();
                    match self.peek() {
                        Some(b'"') => {
                            let line = self.line;
                            let key = self.string();
                            path.push(key);
                            self.out.entry(path.join(".")).or_insert(line);
                            self.skip_ws();
                            self.bump(); // ':'
                            self.value(path);
                            path.pop();
                        }
                        Some(b',') => {
                            self.bump();
                        }
                        Some(b'}') => {
                            self.bump();
                            return;
                        }
                        _ => return,
                    }
                }
            }
            Some(b'[') => {
                self.bump();
                loop {
                    self.skip_ws();
                    match self.peek() {
                        Some(b']') => {
                            self.bump();
                            return;
                        }
                        Some(b',') => {
                            self.bump();
                        }
                        None => return,
                        _ => self.value(path),
                    }
                }
            }
            Some(b'"') => {
                self.string();
            }
            Some(_) => {
                while matches!(self.peek(), Some(c) if !matches!(c, b',' | b'}' | b']' | b' ' | b'\t' | b'\n' | b'\r'))
                {
                    self.bump();
                }
            }
            None => {}
        }
    }
}
