//! Run configuration files (TOML, one per invocation) and the parameter
//! bundle (JSON) shared by the model-side subcommands.
//!
//! Unknown keys are rejected so a typo cannot silently fall back to a
//! default; every run echoes its resolved configuration next to the
//! outputs, and re-running from the echo reproduces them.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use labornet::roy::{DemandSide, LaborSupplyParameters, SolverConfig, Technology};

fn default_one() -> usize {
    1
}

fn default_period() -> u32 {
    1
}

fn default_true() -> bool {
    true
}

fn default_top_n() -> usize {
    5
}

fn default_restarts() -> usize {
    8
}

fn default_sweeps() -> usize {
    120
}

fn default_rho() -> f64 {
    0.1
}

fn default_tol() -> f64 {
    1e-8
}

fn default_max_iter() -> usize {
    50_000
}

/// Loads and strictly parses a TOML config file.
pub fn load_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read config {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))
}

/// Writes the resolved configuration echo next to the run outputs.
pub fn echo_config<T: Serialize>(config: &T, out_dir: &Path) -> Result<()> {
    let text = toml::to_string_pretty(config).context("cannot serialize resolved config")?;
    let path = out_dir.join("resolved_config.toml");
    fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

/// The supply/technology/demand parameter bundle, stored as JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bundle {
    /// Efficiency units `ψ_ιγ` (I×Γ).
    pub psi: Vec<Vec<f64>>,
    /// Market amenities `ξ_γ`.
    pub xi: Vec<f64>,
    /// Taste-shock scale `ν`.
    pub nu: f64,
    /// Worker-type masses `m_ι`.
    pub masses: Vec<f64>,
    /// Cobb-Douglas labor elasticities `β_γs` (Γ×S); required to solve.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<Vec<Vec<f64>>>,
    /// CES demand shifters `a_s`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<Vec<f64>>,
    /// CES elasticity `η`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    /// Normalization constant `k` when the bundle came from an estimate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<f64>,
}

impl Bundle {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("cannot read bundle {}", path.display()))?;
        let bundle: Bundle = serde_json::from_str(&text)
            .with_context(|| format!("invalid bundle {}", path.display()))?;
        bundle.supply()?.validate()?;
        Ok(bundle)
    }

    pub fn supply(&self) -> Result<LaborSupplyParameters> {
        Ok(LaborSupplyParameters {
            psi: self.psi.clone(),
            xi: self.xi.clone(),
            nu: self.nu,
            masses: self.masses.clone(),
        })
    }

    pub fn technology(&self) -> Result<Technology> {
        let beta = match &self.beta {
            Some(beta) => beta.clone(),
            None => bail!("bundle has no `beta` (technology) block"),
        };
        let tech = Technology { beta };
        tech.validate()?;
        Ok(tech)
    }

    pub fn demand(&self) -> Result<DemandSide> {
        let (a, eta) = match (&self.a, self.eta) {
            (Some(a), Some(eta)) => (a.clone(), eta),
            _ => bail!("bundle has no demand side (`a` and `eta`)"),
        };
        let demand = DemandSide { a, eta };
        demand.validate()?;
        Ok(demand)
    }
}

/// Earnings-noise scale: a single value broadcast to every `(ι, γ)` cell,
/// or a full I×Γ matrix.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SigmaSpec {
    Scalar(f64),
    Matrix(Vec<Vec<f64>>),
}

impl SigmaSpec {
    pub fn expand(&self, types: usize, markets: usize) -> Result<Vec<Vec<f64>>> {
        match self {
            SigmaSpec::Scalar(s) => Ok(vec![vec![*s; markets]; types]),
            SigmaSpec::Matrix(m) => {
                if m.len() != types || m.iter().any(|row| row.len() != markets) {
                    bail!("sigma matrix must be {types}x{markets}");
                }
                Ok(m.clone())
            }
        }
    }
}

/// `cluster` subcommand configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterConfig {
    /// Edge-list CSV with header `worker_id,job_id[,count]`.
    pub edges: PathBuf,
    #[serde(default = "default_one")]
    pub min_job_workers: usize,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    #[serde(default = "default_sweeps")]
    pub sweeps_per_restart: usize,
    #[serde(default)]
    pub seed: u64,
    /// `(I_min, I_max, Γ_min, Γ_max)`; automatic ladder when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group_bounds: Option<(u32, u32, u32, u32)>,
    /// Optional ground-truth partition CSV for agreement scoring.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<PathBuf>,
}

/// `solve` subcommand configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveConfig {
    pub bundle: PathBuf,
    #[serde(default = "default_rho")]
    pub rho: f64,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
}

impl SolveConfig {
    pub fn solver(&self) -> SolverConfig {
        SolverConfig {
            rho: self.rho,
            tol: self.tol,
            max_iter: self.max_iter,
            ..SolverConfig::default()
        }
    }
}

/// `estimate` subcommand configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateConfig {
    /// Worker panel CSV.
    pub panel: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zero_cell_epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gradient_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_outer: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub restarts: Option<usize>,
    #[serde(default)]
    pub epsilon_sensitivity: bool,
    /// Technology/demand bundle enabling the `k` grid search.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bundle: Option<PathBuf>,
    /// Candidate normalization constants; needs `bundle`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_grid: Option<Vec<f64>>,
}

/// `simulate` subcommand configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub bundle: PathBuf,
    pub n_workers: usize,
    #[serde(default = "default_period")]
    pub periods: u32,
    pub lambda: f64,
    pub sigma: SigmaSpec,
    #[serde(default)]
    pub seed: u64,
    /// Explicit wages; when absent the bundle's economy is solved.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wages: Option<Vec<f64>>,
    /// `P(s | γ)` rows (Γ×S); attaches a `sector` label column.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sector_given_market: Option<Vec<Vec<f64>>>,
}

/// One shock entry for the `shock` and `sweep` subcommands.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShockEntry {
    pub sector: usize,
    pub factor: f64,
    pub label: String,
}

/// `shock` subcommand configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShockConfig {
    pub bundle: PathBuf,
    pub shocks: Vec<ShockEntry>,
    pub n_workers: usize,
    #[serde(default = "default_period")]
    pub periods: u32,
    pub lambda: f64,
    pub sigma: SigmaSpec,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_true")]
    pub paired: bool,
}

/// `sweep` subcommand configuration (misclassification surfaces).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub bundle: PathBuf,
    pub shock: ShockEntry,
    pub n_workers: usize,
    #[serde(default = "default_period")]
    pub periods: u32,
    pub lambda: f64,
    pub sigma: SigmaSpec,
    #[serde(default)]
    pub seed: u64,
    /// Misclassification fractions applied on both axes.
    pub fracs: Vec<f64>,
    /// Replication seeds per grid cell.
    pub seeds: Vec<u64>,
}

/// `analyze` subcommand configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyzeConfig {
    pub pre_panel: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub post_panel: Option<PathBuf>,
    /// Experiment manifest (from `shock`) supplying the wage changes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<PathBuf>,
    /// Explicit per-market log wage changes (alternative to `experiment`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wage_log_change: Option<Vec<f64>>,
    /// Label column for the classification cross-tabulation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crosstab_label: Option<String>,
    #[serde(default = "default_top_n")]
    pub top_n: usize,
    #[serde(default)]
    pub seed: u64,
}
