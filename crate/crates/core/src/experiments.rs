//! Batch experiments driven by a TOML config: risk curves, iteration and
//! gradient complexity, decomposition verification and bound sweeps.
//!
//! Everything random is derived from `problem.seed`, so an identical config
//! yields byte-identical outputs.

use std::fmt::Write as _;
use std::fs;
use std::path::{Component, Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{self, fluctuation_bound, fluctuation_cap, gd_risk_bound, sgd_risk_bound, BoundReport};
use crate::error::{Error, Result};
use crate::exact_engine::{
    brute_force_expected_error, exact_risk_curve, expected_error_recursion, fluctuation_error_summation,
    PATH_BUDGET, SUMMATION_MAX_DIM,
};
use crate::linalg::frob;
use crate::problem::{sample_dataset, sample_instance, Dataset, ProblemInstance};
use crate::seed::replicate_seed;
use crate::spectra::Spectrum;
use crate::trajectories::{gd_iterate, gd_risk_curve, ridge_solution, sgd_mc_risk, stepsize_flags, AlgoTag, Moments};

pub const RISK_CURVE_HEADER: [&str; 9] = [
    "algo",
    "eta",
    "t",
    "risk_mean",
    "risk_stderr",
    "gradient_evals",
    "exact_risk",
    "bound_value",
    "flag",
];
pub const COMPLEXITY_HEADER: [&str; 6] = ["algo", "target_risk", "best_eta", "iterations", "gradient_evals", "achieved"];
pub const BOUNDS_SWEEP_HEADER: [&str; 15] = [
    "eta",
    "t",
    "k_star",
    "lambda_tilde",
    "gd_bias_bound",
    "gd_variance_bound",
    "fluctuation_bound",
    "bound_total",
    "gd_risk_mean",
    "gd_risk_stderr",
    "sgd_risk_mean",
    "sgd_risk_stderr",
    "data_fluctuation_bound",
    "data_fluctuation_bound_stderr",
    "replicates",
];

/// A curve is cut at the first checkpoint whose risk exceeds this multiple
/// of the initial risk.
pub const DIVERGENCE_FACTOR: f64 = 1e6;
pub const DEFAULT_PER_DECADE: usize = 40;
pub const DEFAULT_TARGET_COUNT: usize = 12;

// Tolerances for verify-decomposition.
pub const TOL_BRUTE_FORCE: f64 = 1e-10;
pub const TOL_RESIDUAL: f64 = 1e-10;
pub const TOL_NEGATIVE_FLUCTUATION: f64 = 1e-12;
pub const TOL_MC_STDERRS: f64 = 4.0;
pub const VERIFY_MAX_D: usize = 32;
pub const VERIFY_MAX_N: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    RiskCurve,
    Complexity,
    VerifyDecomposition,
    BoundsSweep,
}

impl ExperimentKind {
    fn default_output(self) -> &'static str {
        match self {
            ExperimentKind::RiskCurve => "risk_curve.csv",
            ExperimentKind::Complexity => "complexity.csv",
            ExperimentKind::VerifyDecomposition => "verify_decomposition.txt",
            ExperimentKind::BoundsSweep => "bounds_sweep.csv",
        }
    }
}

fn default_exact_cap() -> usize {
    64
}
fn default_one() -> f64 {
    1.0
}
fn default_repeats() -> usize {
    100
}
fn default_per_decade() -> usize {
    DEFAULT_PER_DECADE
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub kind: ExperimentKind,
    /// File name under the output directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    /// Complexity targets, strictly decreasing.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub targets: Option<Vec<f64>>,
    /// Complexity stepsize grid; defaults to `2^-8..2^-1` over `λ₁`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta_grid: Option<Vec<f64>>,
    /// Exact SGD risk column is filled when `d <= exact_cap`.
    #[serde(default = "default_exact_cap")]
    pub exact_cap: usize,
    /// Number of outer (w*, X, ε) draws for verify and bounds sweeps.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replicates: Option<usize>,
    /// Add ridge rows at `λ = n/(ηt)` to risk curves.
    #[serde(default)]
    pub include_ridge: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyName {
    Poly,
    Logpoly,
    Custom,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumSection {
    pub family: FamilyName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    #[serde(default = "default_one")]
    pub omega2: f64,
    #[serde(default = "default_one")]
    pub sigma2: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w_star: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointRule {
    Geometric,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Checkpoints {
    Rule(CheckpointRule),
    List(Vec<u64>),
}

impl Default for Checkpoints {
    fn default() -> Self {
        Checkpoints::Rule(CheckpointRule::Geometric)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgoSection {
    #[serde(default)]
    pub eta: Vec<f64>,
    pub t_max: u64,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default)]
    pub checkpoints: Checkpoints,
    #[serde(default = "default_per_decade")]
    pub per_decade: usize,
}

/// Explicit design matrix (rows are examples) and labels.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub spectrum: SpectrumSection,
    pub problem: ProblemSection,
    pub algo: AlgoSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<DatasetSection>,
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

/// Parse `value` as a TOML value, falling back to a bare string.
fn parse_override_value(raw: &str) -> toml::Value {
    let wrapped = format!("v = {raw}");
    match wrapped.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Apply `key.path=value` overrides to a parsed table in place.
pub fn apply_overrides(table: &mut toml::Table, overrides: &[String]) -> Result<()> {
    for item in overrides {
        let (key, raw) = item
            .split_once('=')
            .ok_or_else(|| config_err(format!("override `{item}` is not key=value")))?;
        let parts: Vec<&str> = key.trim().split('.').collect();
        if parts.iter().any(|p| p.is_empty()) {
            return Err(config_err(format!("override key `{key}` is malformed")));
        }
        let mut cursor = &mut *table;
        for part in &parts[..parts.len() - 1] {
            let entry = cursor
                .entry(part.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            cursor = entry
                .as_table_mut()
                .ok_or_else(|| config_err(format!("override `{key}`: `{part}` is not a section")))?;
        }
        cursor.insert(parts[parts.len() - 1].to_string(), parse_override_value(raw.trim()));
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e| config_err(format!("parse error: {e}")))?;
        apply_overrides(&mut table, overrides)?;
        let cfg: ExperimentConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| config_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text, overrides)
    }

    /// The effective config as TOML.
    pub fn resolved(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Numeric(format!("config serialization: {e}")))
    }

    pub fn spectrum(&self) -> Result<Spectrum> {
        let s = &self.spectrum;
        let need_d = || s.d.ok_or_else(|| config_err("spectrum.d is required"));
        let spec = match s.family {
            FamilyName::Poly => {
                let r = s.r.ok_or_else(|| config_err("spectrum.r is required for poly"))?;
                Spectrum::poly(need_d()?, r)?
            }
            FamilyName::Logpoly => Spectrum::logpoly(need_d()?)?,
            FamilyName::Custom => {
                let v = s
                    .values
                    .clone()
                    .ok_or_else(|| config_err("spectrum.values is required for custom"))?;
                let spec = Spectrum::custom(v)?;
                if let Some(d) = s.d {
                    if d != spec.dim() {
                        return Err(config_err(format!(
                            "spectrum.d = {d} but {} values were given",
                            spec.dim()
                        )));
                    }
                }
                spec
            }
        };
        Ok(spec)
    }

    /// Number of examples, from the explicit dataset if one is given.
    pub fn n(&self) -> Result<usize> {
        match (&self.dataset, self.problem.n) {
            (Some(ds), Some(n)) if ds.x.len() != n => Err(config_err(format!(
                "problem.n = {n} but the dataset has {} rows",
                ds.x.len()
            ))),
            (Some(ds), _) => Ok(ds.x.len()),
            (None, Some(n)) => Ok(n),
            (None, None) => Err(config_err("problem.n is required")),
        }
    }

    pub fn output_path(&self, out_dir: &Path) -> Result<PathBuf> {
        let name = self
            .experiment
            .output
            .clone()
            .unwrap_or_else(|| self.experiment.kind.default_output().to_string());
        let rel = Path::new(&name);
        if rel.components().any(|c| !matches!(c, Component::Normal(_))) {
            return Err(config_err(format!(
                "experiment.output must be a relative path inside the output directory, got `{name}`"
            )));
        }
        Ok(out_dir.join(rel))
    }

    pub fn validate(&self) -> Result<()> {
        let spec = self.spectrum()?;
        let d = spec.dim();
        if let Some(pd) = self.problem.d {
            if pd != d {
                return Err(config_err(format!("problem.d = {pd} does not match spectrum dimension {d}")));
            }
        }
        let n = self.n()?;
        if self.dataset.is_none() && n >= d {
            return Err(config_err(format!("need d > n, got n={n}, d={d}")));
        }
        if n == 0 {
            return Err(config_err("problem.n must be >= 1"));
        }
        if !(self.problem.omega2 > 0.0) || !self.problem.omega2.is_finite() {
            return Err(config_err("problem.omega2 must be positive"));
        }
        if !(self.problem.sigma2 >= 0.0) || !self.problem.sigma2.is_finite() {
            return Err(config_err("problem.sigma2 must be non-negative"));
        }
        if let Some(w) = &self.problem.w_star {
            if w.len() != d {
                return Err(config_err(format!("problem.w_star has length {}, expected {d}", w.len())));
            }
        }
        if let Some(ds) = &self.dataset {
            if ds.x.iter().any(|row| row.len() != d) {
                return Err(config_err(format!("every dataset.x row must have length {d}")));
            }
            if ds.y.len() != n {
                return Err(config_err(format!("dataset.y has length {}, expected {n}", ds.y.len())));
            }
        }
        let positive = |v: &[f64]| v.iter().all(|e| *e > 0.0 && e.is_finite());
        if !positive(&self.algo.eta) {
            return Err(config_err("every algo.eta must be positive"));
        }
        if let Some(g) = &self.experiment.eta_grid {
            if g.is_empty() || !positive(g) {
                return Err(config_err("experiment.eta_grid must be non-empty and positive"));
            }
        }
        if let Some(ts) = &self.experiment.targets {
            if ts.is_empty() || !positive(ts) || ts.windows(2).any(|w| w[1] >= w[0]) {
                return Err(config_err("experiment.targets must be positive and strictly decreasing"));
            }
        }
        if self.algo.t_max == 0 {
            return Err(config_err("algo.t_max must be >= 1"));
        }
        if self.algo.per_decade == 0 {
            return Err(config_err("algo.per_decade must be >= 1"));
        }
        if let Checkpoints::List(ts) = &self.algo.checkpoints {
            if ts.is_empty() || ts.windows(2).any(|w| w[1] <= w[0]) || ts.last() > Some(&self.algo.t_max) {
                return Err(config_err(
                    "algo.checkpoints must be strictly increasing and at most algo.t_max",
                ));
            }
        }
        self.output_path(Path::new("."))?;
        if self.experiment.replicates == Some(0) {
            return Err(config_err("experiment.replicates must be >= 1"));
        }
        let needs_eta = !matches!(self.experiment.kind, ExperimentKind::Complexity);
        if needs_eta && self.algo.eta.is_empty() {
            return Err(config_err("algo.eta must list at least one stepsize"));
        }
        if self.experiment.kind == ExperimentKind::VerifyDecomposition && (d > VERIFY_MAX_D || n > VERIFY_MAX_N) {
            return Err(config_err(format!(
                "verify_decomposition needs d <= {VERIFY_MAX_D} and n <= {VERIFY_MAX_N}, got d={d}, n={n}"
            )));
        }
        Ok(())
    }

    pub fn checkpoints(&self) -> Vec<u64> {
        match &self.algo.checkpoints {
            Checkpoints::Rule(CheckpointRule::Geometric) => geometric_checkpoints(self.algo.t_max, self.algo.per_decade),
            Checkpoints::List(ts) => ts.clone(),
        }
    }

    fn replicates(&self, default: usize) -> usize {
        self.experiment.replicates.unwrap_or(default)
    }

    /// Problem and dataset for outer replicate `index`; replicate 0 uses
    /// `problem.seed` itself.
    pub fn build_instance(&self, index: u64) -> Result<(ProblemInstance, Dataset)> {
        let spec = self.spectrum()?;
        let seed = if index == 0 {
            self.problem.seed
        } else {
            replicate_seed(self.problem.seed, index)
        };
        let p = &self.problem;
        let problem = match &p.w_star {
            Some(w) => ProblemInstance::new(spec, DVector::from_column_slice(w), p.omega2, p.sigma2)?,
            None => sample_instance(&spec, p.omega2, p.sigma2, seed)?,
        };
        let data = match &self.dataset {
            Some(ds) => {
                let n = ds.x.len();
                let x = DMatrix::from_fn(n, problem.d(), |i, j| ds.x[i][j]);
                Dataset::from_data(x, DVector::from_column_slice(&ds.y))?
            }
            None => sample_dataset(&problem, self.n()?, seed)?,
        };
        Ok((problem, data))
    }
}

/// `0`, then `round(10^{k/per_decade})` deduplicated, then `t_max`.
pub fn geometric_checkpoints(t_max: u64, per_decade: usize) -> Vec<u64> {
    let mut out = vec![0u64];
    let mut k = 0u32;
    loop {
        let t = 10f64.powf(k as f64 / per_decade as f64).round() as u64;
        if t >= t_max {
            break;
        }
        if t > *out.last().unwrap() {
            out.push(t);
        }
        k += 1;
    }
    out.push(t_max);
    out
}

/// Shortest round-trip decimal; exponent form outside `[1e-4, 1e15)`.
pub fn fmt_f64(x: f64) -> String {
    if x == 0.0 || !x.is_finite() || (1e-4..1e15).contains(&x.abs()) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

fn opt_f64(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Stepsize warnings for one instance.
fn stepsize_warnings(problem: &ProblemInstance, data: &Dataset, etas: &[f64]) -> Vec<String> {
    let mut out = vec![];
    for &eta in etas {
        let f = stepsize_flags(data, problem.spectrum(), eta);
        if f.beyond_stability {
            out.push(format!("eta={} exceeds 1/lambda_max(Sigma)={}", fmt_f64(eta), fmt_f64(1.0 / data.sigma_max())));
        }
        if f.beyond_theory {
            out.push(format!(
                "eta={} exceeds {}/tr(H)={}",
                fmt_f64(eta),
                crate::trajectories::THEORY_STEPSIZE_CONSTANT,
                fmt_f64(crate::trajectories::THEORY_STEPSIZE_CONSTANT / problem.spectrum().trace())
            ));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct RiskRecord {
    pub algo: AlgoTag,
    pub eta: f64,
    pub t: u64,
    pub risk_mean: f64,
    pub risk_stderr: f64,
    pub gradient_evals: u64,
    pub exact_risk: Option<f64>,
    pub bound_value: Option<f64>,
    pub flag: Option<&'static str>,
}

impl RiskRecord {
    fn to_row(&self) -> Vec<String> {
        vec![
            self.algo.as_str().to_string(),
            fmt_f64(self.eta),
            self.t.to_string(),
            fmt_f64(self.risk_mean),
            fmt_f64(self.risk_stderr),
            self.gradient_evals.to_string(),
            opt_f64(self.exact_risk),
            opt_f64(self.bound_value),
            self.flag.unwrap_or("").to_string(),
        ]
    }
}

#[derive(Debug, Clone)]
pub struct RiskCurveOutput {
    pub records: Vec<RiskRecord>,
    pub initial_risk: f64,
    pub warnings: Vec<String>,
    pub path: PathBuf,
}

impl RiskCurveOutput {
    /// Records of one algorithm at one stepsize, in checkpoint order.
    pub fn series(&self, algo: AlgoTag, eta: f64) -> Vec<&RiskRecord> {
        self.records.iter().filter(|r| r.algo == algo && r.eta == eta).collect()
    }

    pub fn summary(&self) -> String {
        let mut s = format!("risk_curve: {} rows -> {}", self.records.len(), self.path.display());
        let etas: Vec<f64> = {
            let mut v: Vec<f64> = self.records.iter().map(|r| r.eta).collect();
            v.dedup();
            v
        };
        for eta in etas {
            for algo in [AlgoTag::Gd, AlgoTag::SgdMc] {
                if let Some(last) = self.series(algo, eta).last() {
                    let _ = write!(s, "; {} eta={} final={}", algo.as_str(), fmt_f64(eta), fmt_f64(last.risk_mean));
                }
            }
        }
        s
    }
}

/// Cut a series at the first diverged point, flagging it.
fn truncate_diverged(records: &mut Vec<RiskRecord>, initial: f64) {
    if let Some(pos) = records
        .iter()
        .position(|r| !(r.risk_mean <= DIVERGENCE_FACTOR * initial))
    {
        records.truncate(pos + 1);
        records[pos].flag = Some("diverged");
    }
}

/// GD, Monte Carlo SGD (and exact SGD when `d <= exact_cap`) at every
/// checkpoint for each configured stepsize.
pub fn run_risk_curve(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RiskCurveOutput> {
    let (problem, data) = cfg.build_instance(0)?;
    let records = risk_curve_records(cfg, &problem, &data)?;
    let path = cfg.output_path(out_dir)?;
    write_csv(&path, &RISK_CURVE_HEADER, records.iter().map(RiskRecord::to_row))?;
    Ok(RiskCurveOutput {
        records,
        initial_risk: problem.risk_of(&DVector::zeros(problem.d())),
        warnings: stepsize_warnings(&problem, &data, &cfg.algo.eta),
        path,
    })
}

/// The rows of [`run_risk_curve`] without touching the filesystem.
pub fn risk_curve_records(cfg: &ExperimentConfig, problem: &ProblemInstance, data: &Dataset) -> Result<Vec<RiskRecord>> {
    let ts = cfg.checkpoints();
    let n = data.n();
    let initial = problem.risk_of(&DVector::zeros(problem.d()));
    let exact = problem.d() <= cfg.experiment.exact_cap;
    let (omega2, sigma2) = (problem.omega2(), problem.sigma2());

    let per_eta: Vec<Result<Vec<RiskRecord>>> = cfg
        .algo
        .eta
        .par_iter()
        .map(|&eta| {
            let bound = |algo: AlgoTag, t: u64| -> Result<Option<f64>> {
                if t == 0 {
                    return Ok(None);
                }
                Ok(Some(match algo {
                    AlgoTag::Gd => gd_risk_bound(problem.spectrum(), n, eta, t, omega2, sigma2)?.total(),
                    _ => sgd_risk_bound(problem.spectrum(), n, eta, t, omega2, sigma2)?.total,
                }))
            };
            let gd = gd_risk_curve(problem, data, eta, &ts)?;
            let mut gd_rows = gd
                .points
                .iter()
                .map(|p| {
                    Ok(RiskRecord {
                        algo: AlgoTag::Gd,
                        eta,
                        t: p.t,
                        risk_mean: p.risk_mean,
                        risk_stderr: 0.0,
                        gradient_evals: p.gradient_evals,
                        exact_risk: None,
                        bound_value: bound(AlgoTag::Gd, p.t)?,
                        flag: None,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            truncate_diverged(&mut gd_rows, initial);

            let mc = sgd_mc_risk(problem, data, eta, &ts, cfg.algo.repeats, cfg.problem.seed)?;
            let exact_vals: Option<Vec<f64>> = if exact {
                Some(exact_risk_curve(problem, data, eta, &ts)?.iter().map(|r| r.sgd_risk).collect())
            } else {
                None
            };
            let mut sgd_rows = mc
                .points
                .iter()
                .enumerate()
                .map(|(j, p)| {
                    Ok(RiskRecord {
                        algo: AlgoTag::SgdMc,
                        eta,
                        t: p.t,
                        risk_mean: p.risk_mean,
                        risk_stderr: p.risk_stderr,
                        gradient_evals: p.gradient_evals,
                        exact_risk: exact_vals.as_ref().map(|v| v[j]),
                        bound_value: bound(AlgoTag::SgdMc, p.t)?,
                        flag: None,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            truncate_diverged(&mut sgd_rows, initial);

            let mut rows = gd_rows;
            rows.extend(sgd_rows);
            if cfg.experiment.include_ridge {
                for &t in ts.iter().filter(|&&t| t > 0) {
                    let lambda = n as f64 / (eta * t as f64);
                    let w = ridge_solution(data, lambda)?;
                    rows.push(RiskRecord {
                        algo: AlgoTag::Ridge,
                        eta,
                        t,
                        risk_mean: problem.risk_of(&w),
                        risk_stderr: 0.0,
                        gradient_evals: AlgoTag::Ridge.gradient_evals(n, t),
                        exact_risk: None,
                        bound_value: None,
                        flag: None,
                    });
                }
            }
            Ok(rows)
        })
        .collect();
    let mut records = vec![];
    for r in per_eta {
        records.extend(r?);
    }
    Ok(records)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexityRow {
    pub algo: AlgoTag,
    pub target_risk: f64,
    pub best_eta: Option<f64>,
    pub iterations: Option<u64>,
    pub gradient_evals: Option<u64>,
}

impl ComplexityRow {
    pub fn achieved(&self) -> bool {
        self.iterations.is_some()
    }

    fn to_row(&self) -> Vec<String> {
        vec![
            self.algo.as_str().to_string(),
            fmt_f64(self.target_risk),
            opt_f64(self.best_eta),
            self.iterations.map(|v| v.to_string()).unwrap_or_default(),
            self.gradient_evals.map(|v| v.to_string()).unwrap_or_default(),
            self.achieved().to_string(),
        ]
    }
}

/// Risk curve of one algorithm at one stepsize on the shared checkpoint grid.
#[derive(Debug, Clone)]
pub struct SampledCurve {
    pub algo: AlgoTag,
    pub eta: f64,
    pub risks: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ComplexityOutput {
    pub rows: Vec<ComplexityRow>,
    pub checkpoints: Vec<u64>,
    pub curves: Vec<SampledCurve>,
    pub initial_risk: f64,
    pub warnings: Vec<String>,
    pub path: PathBuf,
}

impl ComplexityOutput {
    pub fn summary(&self) -> String {
        let achieved = self.rows.iter().filter(|r| r.achieved()).count();
        format!(
            "complexity: {} targets, {}/{} (algo, target) pairs achieved -> {}",
            self.rows.len() / 2,
            achieved,
            self.rows.len(),
            self.path.display()
        )
    }

    /// `(gd, sgd)` rows for each target.
    pub fn pairs(&self) -> Vec<(&ComplexityRow, &ComplexityRow)> {
        self.rows.chunks(2).map(|c| (&c[0], &c[1])).collect()
    }
}

/// Default grid `{2^-8, …, 2^-1}/λ₁`.
pub fn default_eta_grid(spectrum: &Spectrum) -> Vec<f64> {
    (1..=8).rev().map(|e| 2f64.powi(-e) / spectrum.largest()).collect()
}

/// Geometric targets from `0.8·R₀` down to `1.05·max(min GD, min SGD)`.
pub fn default_targets(initial: f64, curves: &[SampledCurve], count: usize) -> Vec<f64> {
    let best = |algo: AlgoTag| {
        curves
            .iter()
            .filter(|c| c.algo == algo)
            .flat_map(|c| c.risks.iter().cloned())
            .fold(f64::INFINITY, f64::min)
    };
    let lo = 1.05 * best(AlgoTag::Gd).max(best(AlgoTag::SgdMc));
    let hi = 0.8 * initial;
    if !(lo < hi) || count < 2 {
        return vec![hi];
    }
    let ratio = (lo / hi).powf(1.0 / (count - 1) as f64);
    (0..count).map(|i| hi * ratio.powi(i as i32)).collect()
}

/// Smallest checkpoint at which any stepsize reaches the target.
fn hitting(curves: &[SampledCurve], algo: AlgoTag, ts: &[u64], target: f64, n: usize) -> ComplexityRow {
    let mut best: Option<(u64, f64)> = None;
    for c in curves.iter().filter(|c| c.algo == algo) {
        if let Some(j) = c.risks.iter().position(|&r| r <= target) {
            if best.is_none_or(|(t, _)| ts[j] < t) {
                best = Some((ts[j], c.eta));
            }
        }
    }
    ComplexityRow {
        algo,
        target_risk: target,
        best_eta: best.map(|b| b.1),
        iterations: best.map(|b| b.0),
        gradient_evals: best.map(|b| algo.gradient_evals(n, b.0)),
    }
}

/// Minimal iterations and gradient evaluations to reach each target risk,
/// each algorithm with its best stepsize from the grid.
pub fn run_complexity(cfg: &ExperimentConfig, out_dir: &Path) -> Result<ComplexityOutput> {
    let (problem, data) = cfg.build_instance(0)?;
    let ts = cfg.checkpoints();
    let grid = cfg
        .experiment
        .eta_grid
        .clone()
        .unwrap_or_else(|| default_eta_grid(problem.spectrum()));
    let initial = problem.risk_of(&DVector::zeros(problem.d()));

    let per_eta: Vec<Result<[SampledCurve; 2]>> = grid
        .par_iter()
        .map(|&eta| {
            let gd = gd_risk_curve(&problem, &data, eta, &ts)?;
            let sgd = sgd_mc_risk(&problem, &data, eta, &ts, cfg.algo.repeats, cfg.problem.seed)?;
            let risks = |c: &crate::trajectories::RiskCurve| c.points.iter().map(|p| p.risk_mean).collect();
            Ok([
                SampledCurve {
                    algo: AlgoTag::Gd,
                    eta,
                    risks: risks(&gd),
                },
                SampledCurve {
                    algo: AlgoTag::SgdMc,
                    eta,
                    risks: risks(&sgd),
                },
            ])
        })
        .collect();
    let mut curves = vec![];
    for c in per_eta {
        curves.extend(c?);
    }
    let targets = cfg
        .experiment
        .targets
        .clone()
        .unwrap_or_else(|| default_targets(initial, &curves, DEFAULT_TARGET_COUNT));
    let n = data.n();
    let rows = targets
        .iter()
        .flat_map(|&target| {
            [
                hitting(&curves, AlgoTag::Gd, &ts, target, n),
                hitting(&curves, AlgoTag::SgdMc, &ts, target, n),
            ]
        })
        .collect::<Vec<_>>();
    let path = cfg.output_path(out_dir)?;
    write_csv(&path, &COMPLEXITY_HEADER, rows.iter().map(ComplexityRow::to_row))?;
    Ok(ComplexityOutput {
        rows,
        checkpoints: ts,
        curves,
        initial_risk: initial,
        warnings: stepsize_warnings(&problem, &data, &grid),
        path,
    })
}

/// Worst-case deviations found by [`verify_decomposition`].
#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    pub instances: usize,
    pub brute_force_checks: usize,
    pub max_brute_force_dev: f64,
    pub max_residual: f64,
    pub max_relative_residual: f64,
    pub max_form_dev: f64,
    pub min_fluctuation: f64,
    /// Fluctuation at `t_max` for the first instance and stepsize.
    pub fluctuation: f64,
    pub mc_checks: usize,
    pub max_mc_zscore: f64,
}

impl VerifyReport {
    pub fn failures(&self) -> Vec<String> {
        let mut f = vec![];
        if !(self.max_brute_force_dev <= TOL_BRUTE_FORCE) {
            f.push(format!("brute-force deviation {} > {TOL_BRUTE_FORCE}", fmt_f64(self.max_brute_force_dev)));
        }
        if !(self.max_relative_residual <= TOL_RESIDUAL) {
            f.push(format!("decomposition residual {} > {TOL_RESIDUAL}", fmt_f64(self.max_relative_residual)));
        }
        if !(self.max_form_dev <= TOL_RESIDUAL) {
            f.push(format!("fluctuation forms differ by {}", fmt_f64(self.max_form_dev)));
        }
        if !(self.min_fluctuation >= -TOL_NEGATIVE_FLUCTUATION) {
            f.push(format!("negative fluctuation {}", fmt_f64(self.min_fluctuation)));
        }
        if !(self.max_mc_zscore <= TOL_MC_STDERRS) {
            f.push(format!("Monte Carlo off by {} stderr", fmt_f64(self.max_mc_zscore)));
        }
        f
    }

    pub fn passed(&self) -> bool {
        self.failures().is_empty()
    }

    pub fn to_key_value(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "instances={}", self.instances);
        let _ = writeln!(s, "brute_force_checks={}", self.brute_force_checks);
        let _ = writeln!(s, "max_brute_force_dev={}", fmt_f64(self.max_brute_force_dev));
        let _ = writeln!(s, "max_residual={}", fmt_f64(self.max_residual));
        let _ = writeln!(s, "max_relative_residual={}", fmt_f64(self.max_relative_residual));
        let _ = writeln!(s, "max_form_dev={}", fmt_f64(self.max_form_dev));
        let _ = writeln!(s, "min_fluctuation={}", fmt_f64(self.min_fluctuation));
        let _ = writeln!(s, "fluctuation={}", fmt_f64(self.fluctuation));
        let _ = writeln!(s, "mc_checks={}", self.mc_checks);
        let _ = writeln!(s, "max_mc_zscore={}", fmt_f64(self.max_mc_zscore));
        let _ = writeln!(s, "pass={}", self.passed());
        s
    }
}

/// Checks on one `(instance, η)` pair up to horizon `t_max`.
pub fn verify_instance(
    problem: &ProblemInstance,
    data: &Dataset,
    eta: f64,
    t_max: u64,
    repeats: usize,
    seed: u64,
) -> Result<VerifyReport> {
    let seq = expected_error_recursion(data, eta, t_max);
    let mut bf_checks = 0;
    let mut bf_dev: f64 = 0.0;
    for t in 0..=t_max {
        let paths = (data.n() as u128).checked_pow(t as u32).unwrap_or(u128::MAX);
        if t > u32::MAX as u64 || paths > PATH_BUDGET {
            break;
        }
        let bf = brute_force_expected_error(data, eta, t as u32)?;
        let e = seq.e_at(t).expect("every step kept");
        let scale = e.amax().max(1.0);
        bf_dev = bf_dev.max((&bf.e - e).amax() / scale);
        bf_checks += 1;
    }

    let ts: Vec<u64> = (0..=t_max).collect();
    let dec = exact_risk_curve(problem, data, eta, &ts)?;
    let h = problem.h_matrix();
    let mut max_res: f64 = 0.0;
    let mut max_rel: f64 = 0.0;
    let mut form_dev: f64 = 0.0;
    let mut min_fluct = f64::INFINITY;
    for r in &dec {
        let res = r.residual();
        max_res = max_res.max(res);
        if res > 0.0 {
            max_rel = max_rel.max(res / r.sgd_risk.abs());
        }
        min_fluct = min_fluct.min(r.fluctuation);
        // fluctuation from the full d×d recursion
        let full = 0.5 * frob(&seq.fluctuation_matrix(r.t).expect("every step kept"), &h);
        form_dev = form_dev.max((full - r.fluctuation).abs() / r.sgd_risk.abs().max(1e-300));
        // the direct risk of the GD iterate
        let gd = problem.risk_of(&gd_iterate(data, eta, r.t));
        form_dev = form_dev.max((gd - r.gd_risk).abs() / r.sgd_risk.abs().max(1e-300));
    }
    let last = dec.last().expect("t_max >= 0");
    if data.d() <= SUMMATION_MAX_DIM {
        let summed = fluctuation_error_summation(problem, data, eta, t_max)?;
        form_dev = form_dev.max((summed - last.fluctuation).abs() / last.sgd_risk.abs().max(1e-300));
    }

    let (mut mc_checks, mut z) = (0, 0.0f64);
    if repeats >= 2 {
        let mc = sgd_mc_risk(problem, data, eta, &[t_max], repeats, seed)?;
        let p = mc.points[0];
        let dev = (p.risk_mean - last.sgd_risk).abs();
        z = if p.risk_stderr > 0.0 {
            dev / p.risk_stderr
        } else if dev <= 1e-12 * (1.0 + last.sgd_risk.abs()) {
            0.0
        } else {
            f64::INFINITY
        };
        mc_checks = 1;
    }
    Ok(VerifyReport {
        instances: 1,
        brute_force_checks: bf_checks,
        max_brute_force_dev: bf_dev,
        max_residual: max_res,
        max_relative_residual: max_rel,
        max_form_dev: form_dev,
        min_fluctuation: min_fluct,
        fluctuation: last.fluctuation,
        mc_checks,
        max_mc_zscore: z,
    })
}

impl VerifyReport {
    fn merge(self, other: VerifyReport) -> VerifyReport {
        VerifyReport {
            instances: self.instances + other.instances,
            brute_force_checks: self.brute_force_checks + other.brute_force_checks,
            max_brute_force_dev: self.max_brute_force_dev.max(other.max_brute_force_dev),
            max_residual: self.max_residual.max(other.max_residual),
            max_relative_residual: self.max_relative_residual.max(other.max_relative_residual),
            max_form_dev: self.max_form_dev.max(other.max_form_dev),
            min_fluctuation: self.min_fluctuation.min(other.min_fluctuation),
            fluctuation: self.fluctuation,
            mc_checks: self.mc_checks + other.mc_checks,
            max_mc_zscore: self.max_mc_zscore.max(other.max_mc_zscore),
        }
    }
}

/// Recursion vs brute force vs Monte Carlo on every replicate and stepsize.
pub fn verify_decomposition(cfg: &ExperimentConfig, out_dir: &Path) -> Result<(VerifyReport, PathBuf)> {
    let replicates = cfg.replicates(1);
    let jobs: Vec<(u64, f64)> = (0..replicates as u64)
        .flat_map(|r| cfg.algo.eta.iter().map(move |&e| (r, e)))
        .collect();
    let reports: Vec<Result<VerifyReport>> = jobs
        .par_iter()
        .map(|&(r, eta)| {
            let (problem, data) = cfg.build_instance(r)?;
            verify_instance(&problem, &data, eta, cfg.algo.t_max, cfg.algo.repeats, cfg.problem.seed)
        })
        .collect();
    let mut merged: Option<VerifyReport> = None;
    for r in reports {
        let r = r?;
        merged = Some(match merged {
            None => r,
            Some(m) => m.merge(r),
        });
    }
    let report = merged.expect("at least one job");
    let path = cfg.output_path(out_dir)?;
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(&path, report.to_key_value())?;
    Ok((report, path))
}

/// One row of a bound sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundSweepRow {
    pub report: BoundReport,
    pub gd_risk: Moments,
    pub sgd_risk: Moments,
    pub data_fluctuation_bound: Moments,
}

impl BoundSweepRow {
    fn to_row(&self) -> Vec<String> {
        let r = &self.report;
        let se = |m: &Moments| if m.count >= 2.0 { fmt_f64(m.stderr()) } else { String::new() };
        vec![
            fmt_f64(r.eta),
            r.t.to_string(),
            r.k_star.to_string(),
            fmt_f64(r.lambda_tilde),
            fmt_f64(r.gd_bias),
            fmt_f64(r.gd_variance),
            fmt_f64(r.fluctuation_bound),
            fmt_f64(r.total),
            fmt_f64(self.gd_risk.mean),
            se(&self.gd_risk),
            fmt_f64(self.sgd_risk.mean),
            se(&self.sgd_risk),
            fmt_f64(self.data_fluctuation_bound.mean),
            se(&self.data_fluctuation_bound),
            (self.gd_risk.count as u64).to_string(),
        ]
    }
}

/// Bound evaluators along the checkpoint grid next to measured risks averaged
/// over outer replicates (default 20). SGD risk is exact when
/// `d <= exact_cap`, otherwise a Monte Carlo mean.
pub fn bounds_sweep(cfg: &ExperimentConfig, out_dir: &Path) -> Result<(Vec<BoundSweepRow>, PathBuf)> {
    let replicates = cfg.replicates(20);
    let ts: Vec<u64> = cfg.checkpoints().into_iter().filter(|&t| t > 0).collect();
    let n = cfg.n()?;
    let spec = cfg.spectrum()?;
    let exact = spec.dim() <= cfg.experiment.exact_cap;

    // per replicate: for each η, (gd, sgd, data bound) at each t
    type Triple = (Vec<f64>, Vec<f64>, Vec<f64>);
    let per_rep: Vec<Result<Vec<Triple>>> = (0..replicates as u64)
        .into_par_iter()
        .map(|r| {
            let (problem, data) = cfg.build_instance(r)?;
            cfg.algo
                .eta
                .iter()
                .map(|&eta| {
                    let (gd, sgd): (Vec<f64>, Vec<f64>) = if exact {
                        exact_risk_curve(&problem, &data, eta, &ts)?
                            .iter()
                            .map(|d| (d.gd_risk, d.sgd_risk))
                            .unzip()
                    } else {
                        let gd = gd_risk_curve(&problem, &data, eta, &ts)?;
                        let repeats = cfg.algo.repeats.max(2);
                        let mc = sgd_mc_risk(&problem, &data, eta, &ts, repeats, cfg.problem.seed)?;
                        (
                            gd.points.iter().map(|p| p.risk_mean).collect(),
                            mc.points.iter().map(|p| p.risk_mean).collect(),
                        )
                    };
                    let fb = ts
                        .iter()
                        .map(|&t| Ok(fluctuation_bound(&spec, n, eta, t, fluctuation_cap(&data, eta, t))?.value))
                        .collect::<Result<Vec<f64>>>()?;
                    Ok((gd, sgd, fb))
                })
                .collect()
        })
        .collect();
    let per_rep: Vec<Vec<Triple>> = per_rep.into_iter().collect::<Result<_>>()?;

    let mut rows = vec![];
    for (e, &eta) in cfg.algo.eta.iter().enumerate() {
        for (j, &t) in ts.iter().enumerate() {
            let column = |pick: fn(&Triple) -> &Vec<f64>| -> Moments {
                let xs: Vec<f64> = per_rep.iter().map(|rep| pick(&rep[e])[j]).collect();
                Moments::tree_reduce(&xs)
            };
            rows.push(BoundSweepRow {
                report: sgd_risk_bound(&spec, n, eta, t, cfg.problem.omega2, cfg.problem.sigma2)?,
                gd_risk: column(|x| &x.0),
                sgd_risk: column(|x| &x.1),
                data_fluctuation_bound: column(|x| &x.2),
            });
        }
    }
    let path = cfg.output_path(out_dir)?;
    write_csv(&path, &BOUNDS_SWEEP_HEADER, rows.iter().map(BoundSweepRow::to_row))?;
    Ok((rows, path))
}

/// Bound reports at `t = t_max` for each configured stepsize, plus the
/// data-dependent fluctuation bound on replicate 0.
pub fn compute_bounds(cfg: &ExperimentConfig) -> Result<Vec<(BoundReport, bounds::FluctuationBound)>> {
    let spec = cfg.spectrum()?;
    let n = cfg.n()?;
    let (_, data) = cfg.build_instance(0)?;
    let t = cfg.algo.t_max;
    cfg.algo
        .eta
        .iter()
        .map(|&eta| {
            let rep = sgd_risk_bound(&spec, n, eta, t, cfg.problem.omega2, cfg.problem.sigma2)?;
            let fb = fluctuation_bound(&spec, n, eta, t, fluctuation_cap(&data, eta, t))?;
            Ok((rep, fb))
        })
        .collect()
}
