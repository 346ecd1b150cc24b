//! Monte Carlo level and power studies.
//!
//! Repetition `r` of varying parameter `k` draws both samples and all test
//! randomness from substream `(k, r)` of the master seed, so the output does
//! not depend on the number of worker threads.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use copeq::copula::EstimatorMode;
use copeq::rng::{purpose, RngStream};
use copeq::runner::{two_sample_test_with_stream, Method, TestConfig};
use copeq::samplers::{clayton_theta_from_tau, gaussian_rho_from_tau, CopulaFamily, CopulaModel};
use copeq::statistics::Statistic;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamKind {
    Tau,
    Theta,
    Rho,
}

fn default_repetitions() -> usize {
    500
}

fn default_level() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub family: CopulaFamily,
    pub dim: usize,
    pub n1: usize,
    pub n2: usize,
    /// Parameter of the X sample.
    pub baseline_param: f64,
    /// Parameters of the Y sample, one study row block each.
    pub varying_params: Vec<f64>,
    pub param_kind: ParamKind,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub test: TestConfig,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

impl StudyConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(format!("invalid study configuration: {e}")))
    }

    pub fn validate(&self) -> CliResult<()> {
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(CliError::Config(format!("level must lie in (0, 1), got {}", self.level)));
        }
        if self.repetitions == 0 {
            return Err(CliError::Config("repetitions must be at least 1".into()));
        }
        if self.varying_params.is_empty() {
            return Err(CliError::Config("varying_params is empty".into()));
        }
        self.model(self.baseline_param)?;
        for &p in &self.varying_params {
            self.model(p)?;
        }
        copeq::runner::resolve_orders(self.n1, self.n2, &self.test)?;
        Ok(())
    }

    /// The copula with parameter `param`, read according to `param_kind`.
    /// For the Gaussian family `theta` and `rho` both denote the common
    /// pairwise correlation.
    pub fn model(&self, param: f64) -> CliResult<CopulaModel> {
        let config = |e: copeq::error::Error| CliError::Config(e.to_string());
        let parameter = match (self.family, self.param_kind) {
            (CopulaFamily::Clayton, ParamKind::Tau) => clayton_theta_from_tau(param).map_err(config)?,
            (CopulaFamily::Clayton, ParamKind::Theta) => param,
            (CopulaFamily::Gaussian, ParamKind::Tau) => gaussian_rho_from_tau(param).map_err(config)?,
            (CopulaFamily::Gaussian, ParamKind::Theta | ParamKind::Rho) => param,
            (CopulaFamily::Independence, _) => 0.0,
            (family, kind) => {
                return Err(CliError::Config(format!(
                    "parameter kind {kind:?} does not apply to the {family} family"
                )))
            }
        };
        CopulaModel::new(self.family, self.dim, parameter).map_err(config)
    }

    pub fn apply_fast(&mut self) {
        self.repetitions = 100;
        self.test.replicates = 100;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub family: CopulaFamily,
    pub dim: usize,
    pub n1: usize,
    pub n2: usize,
    pub param: f64,
    pub mode: EstimatorMode,
    pub method: Method,
    pub statistic: Statistic,
    pub rejection_rate: f64,
    pub reps: usize,
    #[serde(skip)]
    pub mean_wall_seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct StudyManifest {
    pub version: String,
    pub seed: u64,
    pub threads: usize,
    pub tests_executed: usize,
    pub wall_seconds: f64,
    pub config: StudyConfig,
}

#[derive(Debug, Clone)]
pub struct StudyOutcome {
    pub rows: Vec<StudyRow>,
    pub manifest: StudyManifest,
}

pub fn version_string() -> String {
    format!("v{}", env!("CARGO_PKG_VERSION"))
}

/// Runs the study on the current rayon pool.
pub fn run_study(cfg: &StudyConfig) -> CliResult<StudyOutcome> {
    cfg.validate()?;
    let start = Instant::now();
    let root = RngStream::new(cfg.seed);
    let x_model = cfg.model(cfg.baseline_param)?;
    let mut test = cfg.test.clone();
    test.seed = cfg.seed;
    let mut rows = Vec::new();
    for (k, &param) in cfg.varying_params.iter().enumerate() {
        let y_model = cfg.model(param)?;
        let block = root.substream(k as u64);
        let outcomes: Vec<(Vec<(EstimatorMode, Method, Statistic, f64)>, f64)> = (0..cfg.repetitions)
            .into_par_iter()
            .map(|r| {
                let rep = block.substream(r as u64);
                let x = x_model.sample(cfg.n1, &rep.substream(purpose::SAMPLE_X))?;
                let y = y_model.sample(cfg.n2, &rep.substream(purpose::SAMPLE_Y))?;
                let report = two_sample_test_with_stream(&x, &y, &test, &rep.substream(purpose::TEST))?;
                let ps = report.entries.iter().map(|e| (e.mode, e.method, e.statistic, e.p_value)).collect();
                Ok((ps, report.wall_time.as_secs_f64()))
            })
            .collect::<CliResult<_>>()?;
        let mean_wall = outcomes.iter().map(|o| o.1).sum::<f64>() / cfg.repetitions as f64;
        for (j, &(mode, method, statistic, _)) in outcomes[0].0.iter().enumerate() {
            let rejections = outcomes.iter().filter(|o| o.0[j].3 <= cfg.level).count();
            rows.push(StudyRow {
                family: cfg.family,
                dim: cfg.dim,
                n1: cfg.n1,
                n2: cfg.n2,
                param,
                mode,
                method,
                statistic,
                rejection_rate: rejections as f64 / cfg.repetitions as f64,
                reps: cfg.repetitions,
                mean_wall_seconds: mean_wall,
            });
        }
    }
    let tests_executed = rows.len() / Statistic::ALL.len() * cfg.repetitions;
    Ok(StudyOutcome {
        rows,
        manifest: StudyManifest {
            version: version_string(),
            seed: cfg.seed,
            threads: rayon::current_num_threads(),
            tests_executed,
            wall_seconds: start.elapsed().as_secs_f64(),
            config: cfg.clone(),
        },
    })
}

pub fn emit_csv(rows: &[StudyRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row).expect("study rows serialize");
    }
    if rows.is_empty() {
        w.write_record(["family", "dim", "n1", "n2", "param", "mode", "method", "statistic", "rejection_rate", "reps"])
            .expect("header writes");
    }
    String::from_utf8(w.into_inner().expect("in-memory writer")).expect("csv output is utf-8")
}

pub fn parse_csv(text: &str) -> CliResult<Vec<StudyRow>> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::Input(format!("study csv: {e}")))
}

fn column_label(mode: EstimatorMode, method: Method, stat: Statistic) -> String {
    let m = match mode {
        EstimatorMode::Bernstein => "bern",
        EstimatorMode::Empirical => "emp",
    };
    let r = match method {
        Method::Multiplier => "mul",
        Method::Subsample => "sub",
    };
    format!("{stat}.{m}.{r}")
}

/// Percentage with one decimal.
pub fn format_rate(rate: f64) -> String {
    format!("{:.1}", rate * 100.0)
}

/// Aligned table with one line per parameter and one column per test variant,
/// grouped by statistic: empirical then Bernstein multiplier, then subsample.
pub fn emit_text(rows: &[StudyRow]) -> String {
    let mut columns: Vec<(Statistic, Method, bool, EstimatorMode)> = rows
        .iter()
        .map(|r| (r.statistic, r.method, r.mode == EstimatorMode::Bernstein, r.mode))
        .collect();
    columns.sort_by_key(|c| (c.0, c.1, c.2));
    columns.dedup();
    let mut params: Vec<f64> = Vec::new();
    for r in rows {
        if !params.contains(&r.param) {
            params.push(r.param);
        }
    }
    let labels: Vec<String> = columns.iter().map(|c| column_label(c.3, c.1, c.0)).collect();
    let width = labels.iter().map(String::len).max().unwrap_or(0).max(5);
    let mut out = String::new();
    if let Some(first) = rows.first() {
        let _ = writeln!(
            out,
            "{} d={} (n1, n2)=({}, {}) reps={}",
            first.family, first.dim, first.n1, first.n2, first.reps
        );
    }
    let _ = write!(out, "{:>8}", "param");
    for l in &labels {
        let _ = write!(out, " {l:>width$}");
    }
    out.push('\n');
    for p in params {
        let _ = write!(out, "{p:>8.2}");
        for c in &columns {
            let cell = rows
                .iter()
                .find(|r| r.param == p && r.statistic == c.0 && r.method == c.1 && r.mode == c.3)
                .map_or_else(|| "-".to_string(), |r| format_rate(r.rejection_rate));
            let _ = write!(out, " {cell:>width$}");
        }
        out.push('\n');
    }
    out
}
