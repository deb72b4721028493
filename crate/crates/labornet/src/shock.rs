//! Synthetic panels and sectoral demand-shock experiments.
//!
//! [`simulate_panel`] draws worker histories from the model's data-generating
//! process at a solved equilibrium. [`run_shock_experiment`] solves the
//! economy before and after a demand-shifter change and simulates paired
//! pre/post panels over a shared worker population, producing the inputs for
//! the reduced-form battery in [`crate::metrics`].

use std::collections::BTreeMap;

use rand::prelude::*;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::WorkerPanel;
use crate::rng::stream_rng;
use crate::roy::{
    choice_probabilities, solve_equilibrium, DemandSide, EquilibriumState,
    LaborSupplyParameters, SolverConfig, Technology,
};

/// How a shock transforms the targeted demand shifters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ShockKind {
    /// Multiply the shifter by the target value.
    Multiply,
    /// Replace the shifter with the target value.
    Set,
}

/// A sectoral demand shock.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShockSpec {
    pub kind: ShockKind,
    /// Sector index -> factor (for `Multiply`) or level (for `Set`).
    pub targets: BTreeMap<usize, f64>,
    pub label: String,
}

impl ShockSpec {
    pub fn multiply(sector: usize, factor: f64, label: impl Into<String>) -> Self {
        Self {
            kind: ShockKind::Multiply,
            targets: BTreeMap::from([(sector, factor)]),
            label: label.into(),
        }
    }
}

/// Applies a shock to the demand shifters; untouched sectors are unchanged
/// and no renormalization is performed (pre/post levels are meaningful).
pub fn apply_shock(demand: &DemandSide, shock: &ShockSpec) -> Result<DemandSide> {
    if shock.targets.is_empty() {
        return Err(Error::InvalidParameter("shock has no targets".into()));
    }
    let mut a = demand.a.clone();
    for (&sector, &value) in &shock.targets {
        if sector >= a.len() {
            return Err(Error::UnknownSector(format!("sector index {sector}")));
        }
        if !(value.is_finite() && value > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "shock value {value} for sector {sector} must be positive"
            )));
        }
        match shock.kind {
            ShockKind::Multiply => a[sector] *= value,
            ShockKind::Set => a[sector] = value,
        }
    }
    Ok(DemandSide { a, eta: demand.eta })
}

/// Settings for [`simulate_panel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_workers: usize,
    pub periods: u32,
    /// Per-period separation probability for `t > 1`.
    pub lambda: f64,
    /// Earnings log-noise scale `σ_ιγ` (I×Γ).
    pub sigma: Vec<Vec<f64>>,
    pub seed: u64,
    /// Fixed worker types; when `None`, types are drawn from the masses.
    pub types: Option<Vec<u32>>,
}

impl SimConfig {
    fn validate(&self, params: &LaborSupplyParameters) -> Result<()> {
        if self.n_workers == 0 || self.periods == 0 {
            return Err(Error::InvalidParameter("need at least one worker and period".into()));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::InvalidParameter("lambda must be in [0, 1]".into()));
        }
        if self.sigma.len() != params.n_types()
            || self.sigma.iter().any(|r| r.len() != params.n_markets())
        {
            return Err(Error::DimensionMismatch("sigma must be I x Gamma".into()));
        }
        if self.sigma.iter().flatten().any(|&s| !(s.is_finite() && s >= 0.0)) {
            return Err(Error::InvalidParameter("sigma must be nonnegative".into()));
        }
        if let Some(types) = &self.types {
            if types.len() != self.n_workers {
                return Err(Error::DimensionMismatch("types length".into()));
            }
            if types.iter().any(|&i| i as usize >= params.n_types()) {
                return Err(Error::DimensionMismatch("type index out of range".into()));
            }
        }
        Ok(())
    }
}

/// Draws worker types in proportion to the masses, deterministically.
pub fn draw_types(params: &LaborSupplyParameters, n_workers: usize, seed: u64) -> Vec<u32> {
    let total: f64 = params.masses.iter().sum();
    let mut rng = stream_rng(seed, "shock", "types", 0);
    (0..n_workers)
        .map(|_| {
            let mut pick = rng.gen::<f64>() * total;
            for (i, &m) in params.masses.iter().enumerate() {
                if pick < m {
                    return i as u32;
                }
                pick -= m;
            }
            params.n_types() as u32 - 1
        })
        .collect()
}

fn sample_choice(cumulative: &[f64], rng: &mut impl Rng) -> u32 {
    let u = rng.gen::<f64>();
    match cumulative.iter().position(|&c| u < c) {
        Some(g) => g as u32,
        None => cumulative.len() as u32 - 1,
    }
}

/// Simulates a worker panel from the model at wages `w`.
///
/// Every worker chooses a market (or the outside option) at `t = 1` from the
/// logit probabilities; for `t > 1` a separation shock `c ~ Bernoulli(λ)`
/// triggers a fresh choice, otherwise the previous state persists. Employed
/// earnings are `φ_ιγ e` with `φ_ιγ = ψ_ιγ w_γ` and `ln e ~ Normal(0,
/// σ_ιγ)`. Fully deterministic given the seed: each worker owns a derived
/// random stream.
pub fn simulate_panel(
    params: &LaborSupplyParameters,
    w: &[f64],
    config: &SimConfig,
) -> Result<WorkerPanel> {
    params.validate()?;
    config.validate(params)?;
    let probs = choice_probabilities(params, w)?;
    let markets = params.n_markets();
    // Cumulative choice distribution per type, over 0..=Gamma.
    let cumulative: Vec<Vec<f64>> = probs
        .iter()
        .map(|row| {
            row.iter()
                .scan(0.0, |acc, &p| {
                    *acc += p;
                    Some(*acc)
                })
                .collect()
        })
        .collect();
    let types = match &config.types {
        Some(t) => t.clone(),
        None => draw_types(params, config.n_workers, config.seed),
    };

    let mut panel = WorkerPanel::default();
    for i in 0..config.n_workers {
        let iota = types[i] as usize;
        let mut rng = stream_rng(config.seed, "shock", "worker", i as u64);
        let mut gamma = sample_choice(&cumulative[iota], &mut rng);
        for t in 1..=config.periods {
            let separated = if t == 1 {
                true
            } else {
                rng.gen::<f64>() < config.lambda
            };
            if t > 1 && separated {
                gamma = sample_choice(&cumulative[iota], &mut rng);
            }
            let omega = if gamma > 0 {
                let g = gamma as usize - 1;
                let phi = params.psi[iota][g] * w[g];
                let z: f64 = rng.sample(StandardNormal);
                phi * (config.sigma[iota][g] * z).exp()
            } else {
                f64::NAN
            };
            panel.worker.push(i as u32);
            panel.period.push(t);
            panel.iota.push(types[i]);
            panel.gamma.push(gamma);
            panel.omega.push(omega);
            panel.c.push(separated);
        }
    }
    let _ = markets;
    panel.validate()?;
    Ok(panel)
}

/// Attaches a `sector` label column by sampling `P(s | γ)` per employed
/// observation; non-employed rows get the empty string. Sector labels are
/// the decimal indices `0..S`.
pub fn attach_sectors(
    panel: &mut WorkerPanel,
    sector_given_market: &[Vec<f64>],
    seed: u64,
) -> Result<()> {
    let markets = panel.n_markets() as usize;
    if sector_given_market.len() < markets {
        return Err(Error::DimensionMismatch(
            "sector distribution must cover every market".into(),
        ));
    }
    for row in sector_given_market {
        let total: f64 = row.iter().sum();
        if row.iter().any(|&p| !(p.is_finite() && p >= 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(
                "sector distribution rows must be probabilities summing to 1".into(),
            ));
        }
    }
    let mut rng = stream_rng(seed, "shock", "sectors", 0);
    let mut column = Vec::with_capacity(panel.len());
    for idx in 0..panel.len() {
        if panel.gamma[idx] == 0 {
            column.push(String::new());
            continue;
        }
        let row = &sector_given_market[panel.gamma[idx] as usize - 1];
        let mut pick = rng.gen::<f64>();
        let mut sector = row.len() - 1;
        for (s, &p) in row.iter().enumerate() {
            if pick < p {
                sector = s;
                break;
            }
            pick -= p;
        }
        column.push(sector.to_string());
    }
    panel.labels.insert("sector".to_string(), column);
    Ok(())
}

/// Settings for [`run_shock_experiment`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub n_workers: usize,
    /// Periods per panel (pre and post each).
    pub periods: u32,
    pub lambda: f64,
    pub sigma: Vec<Vec<f64>>,
    pub seed: u64,
    /// Share worker types (and population) across pre and post panels.
    pub paired: bool,
    /// `P(s | γ)` used to attach sector labels; uniform when `None`.
    pub sector_given_market: Option<Vec<Vec<f64>>>,
    pub solver: SolverConfig,
}

impl ExperimentConfig {
    pub fn new(n_workers: usize, lambda: f64, sigma: Vec<Vec<f64>>, seed: u64) -> Self {
        Self {
            n_workers,
            periods: 1,
            lambda,
            sigma,
            seed,
            paired: true,
            sector_given_market: None,
            solver: SolverConfig::default(),
        }
    }
}

/// A complete pre/post shock experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShockExperiment {
    pub params: LaborSupplyParameters,
    pub tech: Technology,
    pub demand_pre: DemandSide,
    pub demand_post: DemandSide,
    pub shock: ShockSpec,
    pub pre_equilibrium: EquilibriumState,
    pub post_equilibrium: EquilibriumState,
    #[serde(skip)]
    pub pre_panel: WorkerPanel,
    #[serde(skip)]
    pub post_panel: WorkerPanel,
    pub seed: u64,
}

/// Solves the economy before and after the shock and simulates both panels.
///
/// The supply parameters are held fixed across the shock; only the demand
/// shifters change. With `paired = true` (default) the pre and post panels
/// share the same worker population and type draws, so cross-panel earnings
/// differences reflect the shock and measurement noise only.
pub fn run_shock_experiment(
    params: &LaborSupplyParameters,
    tech: &Technology,
    demand: &DemandSide,
    shock: &ShockSpec,
    config: &ExperimentConfig,
) -> Result<ShockExperiment> {
    let demand_post = apply_shock(demand, shock)?;
    let pre_eq = solve_equilibrium(params, tech, demand, &config.solver)?;
    let post_eq = solve_equilibrium(params, tech, &demand_post, &config.solver)?;

    let types = draw_types(params, config.n_workers, config.seed);
    let base = SimConfig {
        n_workers: config.n_workers,
        periods: config.periods,
        lambda: config.lambda,
        sigma: config.sigma.clone(),
        seed: 0,
        types: None,
    };
    let pre_seed = crate::rng::derive_seed(config.seed, "shock", "pre-panel", 0);
    let post_seed = crate::rng::derive_seed(config.seed, "shock", "post-panel", 0);
    let mut pre_cfg = base.clone();
    pre_cfg.seed = pre_seed;
    pre_cfg.types = Some(types.clone());
    let mut post_cfg = base;
    post_cfg.seed = post_seed;
    post_cfg.types = if config.paired {
        Some(types)
    } else {
        Some(draw_types(params, config.n_workers, post_seed))
    };
    let mut pre_panel = simulate_panel(params, &pre_eq.w, &pre_cfg)?;
    let mut post_panel = simulate_panel(params, &post_eq.w, &post_cfg)?;

    let sectors = tech.n_sectors();
    let uniform = vec![vec![1.0 / sectors as f64; sectors]; params.n_markets()];
    let dist = config.sector_given_market.as_deref().unwrap_or(&uniform);
    attach_sectors(&mut pre_panel, dist, pre_seed)?;
    attach_sectors(&mut post_panel, dist, post_seed)?;

    Ok(ShockExperiment {
        params: params.clone(),
        tech: tech.clone(),
        demand_pre: demand.clone(),
        demand_post,
        shock: shock.clone(),
        pre_equilibrium: pre_eq,
        post_equilibrium: post_eq,
        pre_panel,
        post_panel,
        seed: config.seed,
    })
}

/// Runs one experiment per shock in parallel with per-shock derived seeds.
/// Failures are isolated per shock.
pub fn shock_sweep(
    params: &LaborSupplyParameters,
    tech: &Technology,
    demand: &DemandSide,
    shocks: &[ShockSpec],
    config: &ExperimentConfig,
) -> Vec<(String, Result<ShockExperiment>)> {
    shocks
        .par_iter()
        .enumerate()
        .map(|(k, shock)| {
            let mut cfg = config.clone();
            cfg.seed = crate::rng::derive_seed(config.seed, "shock", "sweep", k as u64);
            (shock.label.clone(), run_shock_experiment(params, tech, demand, shock, &cfg))
        })
        .collect()
}
