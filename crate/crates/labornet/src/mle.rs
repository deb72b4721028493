//! Maximum-likelihood estimation of labor-supply parameters from a worker
//! panel.
//!
//! The estimator works in `φ`-space: only `φ_ιγ = ψ_ιγ w_γ` enters utilities
//! and earnings, so `ψ` and `w` are not separately identified inside the
//! likelihood. [`fit_supply_parameters`] maximizes [`panel_log_likelihood`]
//! over `(ln φ, ξ, ln ν)` by quasi-Newton ascent with `σ_ιγ` and `λ`
//! profiled in closed form each outer step; [`normalize_psi`] then splits
//! `φ̂` into productivities and wages using the mean-productivity
//! normalization, and [`choose_k`] pins the normalization constant by
//! matching the observed employment rate through a full equilibrium
//! re-solve.

use argmin::core::{CostFunction, Executor, Gradient, State};
use argmin::solver::linesearch::MoreThuenteLineSearch;
use argmin::solver::quasinewton::LBFGS;
use rand::prelude::*;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::WorkerPanel;
use crate::rng::stream_rng;
use crate::roy::{
    choice_probabilities, solve_equilibrium, DemandSide, LaborSupplyParameters, SolverConfig,
    Technology,
};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_74;
/// Quadratic barrier weight keeping `ln ν` inside its box.
const BARRIER: f64 = 1e3;
/// Guard range for decoded log-parameters; far outside any sane economy.
const LOG_GUARD: f64 = 50.0;

/// A full supply-side parameter point `Θ` in `φ`-space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupplyTheta {
    /// Earnings levels `φ_ιγ = ψ_ιγ w_γ` (I×Γ), strictly positive.
    pub phi: Vec<Vec<f64>>,
    /// Market amenities `ξ_γ` (length Γ); the outside option is normalized
    /// to utility 0.
    pub xi: Vec<f64>,
    /// Preference-shock scale `ν > 0`.
    pub nu: f64,
    /// Earnings log-noise `σ_ιγ` (I×Γ).
    pub sigma: Vec<Vec<f64>>,
    /// Per-period separation probability.
    pub lambda: f64,
}

/// Analytic score of the panel log-likelihood in the optimizer's
/// coordinates `(ln φ, ξ, ln ν)`, holding `σ` and `λ` fixed.
#[derive(Debug, Clone, PartialEq)]
pub struct SupplyScore {
    pub d_ln_phi: Vec<Vec<f64>>,
    pub d_xi: Vec<f64>,
    pub d_ln_nu: f64,
}

/// Sufficient statistics of a panel for the supply likelihood.
#[derive(Debug, Clone)]
struct PanelStats {
    types: usize,
    markets: usize,
    /// Observation (row) count, used to scale the optimizer's objective.
    n_obs: f64,
    /// Separation-period choice counts, I×(Γ+1); column 0 = outside option.
    sep: Vec<Vec<f64>>,
    /// Employed observation count per (ι,γ).
    n_emp: Vec<Vec<f64>>,
    /// `Σ ln ω` per (ι,γ).
    s1: Vec<Vec<f64>>,
    /// `Σ (ln ω)²` per (ι,γ).
    s2: Vec<Vec<f64>>,
    /// Separation / stay event counts over `t ≥ 2`.
    sep_events: f64,
    stay_events: f64,
}

impl PanelStats {
    fn build(panel: &WorkerPanel) -> Result<Self> {
        panel.validate()?;
        if panel.is_empty() {
            return Err(Error::InvalidParameter("empty panel".into()));
        }
        let types = panel.n_worker_types() as usize;
        let markets = panel.n_markets() as usize;
        let mut stats = Self {
            types,
            markets,
            n_obs: panel.len() as f64,
            sep: vec![vec![0.0; markets + 1]; types],
            n_emp: vec![vec![0.0; markets]; types],
            s1: vec![vec![0.0; markets]; types],
            s2: vec![vec![0.0; markets]; types],
            sep_events: 0.0,
            stay_events: 0.0,
        };
        for idx in 0..panel.len() {
            let i = panel.iota[idx] as usize;
            let gamma = panel.gamma[idx] as usize;
            if panel.c[idx] {
                stats.sep[i][gamma] += 1.0;
            }
            if panel.period[idx] > 1 {
                if panel.c[idx] {
                    stats.sep_events += 1.0;
                } else {
                    stats.stay_events += 1.0;
                }
            }
            if gamma > 0 {
                let omega = panel.omega[idx];
                if !(omega.is_finite() && omega > 0.0) {
                    return Err(Error::InvalidParameter(format!(
                        "employed observation {idx} has non-positive earnings"
                    )));
                }
                let lw = omega.ln();
                stats.n_emp[i][gamma - 1] += 1.0;
                stats.s1[i][gamma - 1] += lw;
                stats.s2[i][gamma - 1] += lw * lw;
            }
        }
        Ok(stats)
    }
}

/// Log choice probabilities and utilities over `(outside, γ=1..Γ)` for one
/// type, computed with max-subtraction.
fn log_probs_and_utils(phi_row: &[f64], xi: &[f64], nu: f64) -> (Vec<f64>, Vec<f64>) {
    let mut u = Vec::with_capacity(phi_row.len() + 1);
    u.push(0.0);
    for (p, x) in phi_row.iter().zip(xi) {
        u.push(((p + x) / nu).clamp(-1e15, 1e15));
    }
    let max = u.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + u.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
    let logp = u.iter().map(|&v| v - lse).collect();
    (logp, u)
}

fn check_theta(stats: &PanelStats, theta: &SupplyTheta) -> Result<()> {
    if theta.phi.len() != stats.types
        || theta.sigma.len() != stats.types
        || theta.xi.len() != stats.markets
        || theta.phi.iter().any(|r| r.len() != stats.markets)
        || theta.sigma.iter().any(|r| r.len() != stats.markets)
    {
        return Err(Error::DimensionMismatch("theta shape does not match panel".into()));
    }
    if theta.phi.iter().flatten().any(|&p| !(p.is_finite() && p > 0.0)) {
        return Err(Error::InvalidParameter("phi must be strictly positive".into()));
    }
    if !(theta.nu.is_finite() && theta.nu > 0.0) {
        return Err(Error::InvalidParameter("nu must be positive".into()));
    }
    if !(0.0..=1.0).contains(&theta.lambda) {
        return Err(Error::InvalidParameter("lambda must be in [0, 1]".into()));
    }
    for i in 0..stats.types {
        for g in 0..stats.markets {
            if stats.n_emp[i][g] > 0.0 && !(theta.sigma[i][g] > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "sigma must be positive on observed cell ({i}, {})",
                    g + 1
                )));
            }
        }
    }
    Ok(())
}

fn lambda_term(lambda: f64, sep_events: f64, stay_events: f64) -> f64 {
    let mut term = 0.0;
    if sep_events > 0.0 {
        if lambda <= 0.0 {
            return f64::NEG_INFINITY;
        }
        term += sep_events * lambda.ln();
    }
    if stay_events > 0.0 {
        if lambda >= 1.0 {
            return f64::NEG_INFINITY;
        }
        term += stay_events * (1.0 - lambda).ln();
    }
    term
}

fn likelihood_from_stats(stats: &PanelStats, theta: &SupplyTheta) -> f64 {
    let mut ll = 0.0;
    for i in 0..stats.types {
        let (logp, _) = log_probs_and_utils(&theta.phi[i], &theta.xi, theta.nu);
        for g in 0..=stats.markets {
            if stats.sep[i][g] > 0.0 {
                ll += stats.sep[i][g] * logp[g];
            }
        }
        for g in 0..stats.markets {
            let n = stats.n_emp[i][g];
            if n > 0.0 {
                let mu = theta.phi[i][g].ln();
                let sigma = theta.sigma[i][g];
                let quad = stats.s2[i][g] - 2.0 * stats.s1[i][g] * mu + n * mu * mu;
                ll += -stats.s1[i][g] - n * (sigma.ln() + HALF_LN_2PI)
                    - quad / (2.0 * sigma * sigma);
            }
        }
    }
    ll + lambda_term(theta.lambda, stats.sep_events, stats.stay_events)
}

/// The panel log-likelihood at `Θ`.
///
/// Sum of (a) the logit choice term `Σ c_it ln P_ι(γ_it)` over separation
/// periods (first periods always separate), (b) the log-normal earnings
/// density `ln f_ω(ω_it)` over all employed periods, and (c) the separation
/// Bernoulli term `Σ_{t≥2} [c ln λ + (1−c) ln(1−λ)]`, so the closed-form
/// `λ̂` and `σ̂` are stationary points of this same function.
pub fn panel_log_likelihood(panel: &WorkerPanel, theta: &SupplyTheta) -> Result<f64> {
    let stats = PanelStats::build(panel)?;
    check_theta(&stats, theta)?;
    Ok(likelihood_from_stats(&stats, theta))
}

/// The log-likelihood together with its analytic score in
/// `(ln φ, ξ, ln ν)`, holding `σ` and `λ` fixed at their values in `Θ`.
pub fn panel_log_likelihood_and_score(
    panel: &WorkerPanel,
    theta: &SupplyTheta,
) -> Result<(f64, SupplyScore)> {
    let stats = PanelStats::build(panel)?;
    check_theta(&stats, theta)?;
    let ll = likelihood_from_stats(&stats, theta);
    let mut score = SupplyScore {
        d_ln_phi: vec![vec![0.0; stats.markets]; stats.types],
        d_xi: vec![0.0; stats.markets],
        d_ln_nu: 0.0,
    };
    for i in 0..stats.types {
        let (logp, u) = log_probs_and_utils(&theta.phi[i], &theta.xi, theta.nu);
        let total: f64 = stats.sep[i].iter().sum();
        for g in 0..stats.markets {
            let p = logp[g + 1].exp();
            let a = stats.sep[i][g + 1] - total * p;
            score.d_ln_phi[i][g] += theta.phi[i][g] * a / theta.nu;
            score.d_xi[g] += a / theta.nu;
            score.d_ln_nu -= a * u[g + 1];
        }
        for g in 0..stats.markets {
            let n = stats.n_emp[i][g];
            if n > 0.0 {
                let mu = theta.phi[i][g].ln();
                let sigma = theta.sigma[i][g];
                score.d_ln_phi[i][g] += (stats.s1[i][g] - n * mu) / (sigma * sigma);
            }
        }
    }
    Ok((ll, score))
}

/// Closed-form separation rate `λ̂ = Σ_i Σ_{t≥2} c_it / ((T−1) N)`.
pub fn estimate_lambda(panel: &WorkerPanel) -> Result<f64> {
    panel.validate()?;
    let periods = panel.n_periods();
    if periods < 2 {
        return Err(Error::InvalidParameter(
            "lambda needs at least two periods".into(),
        ));
    }
    let n = panel.n_workers() as f64;
    let seps: f64 = (0..panel.len())
        .filter(|&idx| panel.period[idx] > 1 && panel.c[idx])
        .count() as f64;
    Ok(seps / ((periods as f64 - 1.0) * n))
}

/// Per-cell earnings noise with sparsity pooling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaEstimate {
    /// `σ̂_ιγ` (I×Γ).
    pub sigma: Vec<Vec<f64>>,
    /// Cells with fewer than 2 observations, pooled to the global `σ̂`.
    pub pooled: Vec<Vec<bool>>,
}

/// `σ̂²_ιγ` = mean squared log-earnings residual per cell; cells with fewer
/// than 2 observations are flagged and pooled to the global estimate.
pub fn estimate_sigma(panel: &WorkerPanel, phi: &[Vec<f64>]) -> Result<SigmaEstimate> {
    let stats = PanelStats::build(panel)?;
    if phi.len() != stats.types || phi.iter().any(|r| r.len() != stats.markets) {
        return Err(Error::DimensionMismatch("phi shape".into()));
    }
    for i in 0..stats.types {
        for g in 0..stats.markets {
            if stats.n_emp[i][g] > 0.0 && !(phi[i][g].is_finite() && phi[i][g] > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "phi must be positive on observed cell ({i}, {})",
                    g + 1
                )));
            }
        }
    }
    Ok(sigma_from_stats(&stats, phi))
}

fn sigma_from_stats(stats: &PanelStats, phi: &[Vec<f64>]) -> SigmaEstimate {
    let cell_ssr = |i: usize, g: usize| -> f64 {
        let mu = phi[i][g].ln();
        stats.s2[i][g] - 2.0 * stats.s1[i][g] * mu + stats.n_emp[i][g] * mu * mu
    };
    let mut total_ssr = 0.0;
    let mut total_n = 0.0;
    for i in 0..stats.types {
        for g in 0..stats.markets {
            if stats.n_emp[i][g] > 0.0 {
                total_ssr += cell_ssr(i, g);
                total_n += stats.n_emp[i][g];
            }
        }
    }
    let global = if total_n > 0.0 {
        (total_ssr / total_n).max(0.0).sqrt()
    } else {
        0.0
    };
    let mut sigma = vec![vec![0.0; stats.markets]; stats.types];
    let mut pooled = vec![vec![false; stats.markets]; stats.types];
    for i in 0..stats.types {
        for g in 0..stats.markets {
            if stats.n_emp[i][g] >= 2.0 {
                sigma[i][g] = (cell_ssr(i, g) / stats.n_emp[i][g]).max(0.0).sqrt();
            } else {
                sigma[i][g] = global;
                pooled[i][g] = true;
            }
        }
    }
    SigmaEstimate { sigma, pooled }
}

/// Settings for [`fit_supply_parameters`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    /// Pseudo-count `ε₀` added to the choice bracket of zero-match cells so
    /// their `φ̂` stays finite.
    pub zero_cell_epsilon: f64,
    /// Convergence threshold on the score ∞-norm.
    pub gradient_tol: f64,
    /// Outer profile iterations (`σ` re-profiled each step).
    pub max_outer: usize,
    /// Quasi-Newton iterations per outer step.
    pub inner_iters: u64,
    /// Jittered re-initializations (the first start is un-jittered).
    pub restarts: usize,
    pub seed: u64,
    /// Box for `ln ν`.
    pub ln_nu_bounds: (f64, f64),
    /// Re-fit with `ε₀/2` and flag cells whose `φ̂` moves by more than 1%.
    pub epsilon_sensitivity: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            zero_cell_epsilon: 1e-6,
            gradient_tol: 1e-6,
            max_outer: 40,
            inner_iters: 150,
            restarts: 3,
            seed: 0,
            ln_nu_bounds: (-9.21, 9.21), // nu in about [1e-4, 1e4]
            epsilon_sensitivity: false,
        }
    }
}

/// The fitted supply-side parameters with diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatedParameters {
    pub phi: Vec<Vec<f64>>,
    pub xi: Vec<f64>,
    pub nu: f64,
    pub sigma: Vec<Vec<f64>>,
    /// Cells whose `σ̂` was pooled for sparsity.
    pub sigma_pooled: Vec<Vec<bool>>,
    pub lambda: f64,
    /// Normalization constant; filled in by the pipeline after
    /// [`choose_k`], absent straight out of the fit.
    pub k: Option<f64>,
    /// Pure panel log-likelihood at the estimate (no zero-cell penalty).
    pub log_likelihood: f64,
    /// ∞-norm of the per-observation penalized score at the returned point.
    pub gradient_norm: f64,
    /// Structurally unidentified `(ι,γ)` cells (no matches in the panel).
    pub zero_cell_mask: Vec<Vec<bool>>,
    /// Cells whose `φ̂` moved by more than 1% when `ε₀` was halved; `None`
    /// unless the sensitivity re-fit was requested.
    pub epsilon_sensitive: Option<Vec<Vec<bool>>>,
    pub converged: bool,
    pub nu_at_boundary: bool,
    /// Penalized objective after each outer step of the winning restart.
    pub outer_objectives: Vec<f64>,
}

/// The penalized inner objective at fixed `σ`, in optimizer coordinates
/// `x = (ln φ rows, ξ, ln ν)`. `argmin` minimizes, so cost and gradient are
/// negated.
#[derive(Clone)]
struct InnerProblem {
    types: usize,
    markets: usize,
    /// Choice-bracket counts including the zero-cell pseudo-counts.
    counts: Vec<Vec<f64>>,
    count_totals: Vec<f64>,
    n_emp: Vec<Vec<f64>>,
    s1: Vec<Vec<f64>>,
    sigma2: Vec<Vec<f64>>,
    ln_nu_bounds: (f64, f64),
    /// Observation count; the objective and gradient are per-observation so
    /// tolerances are scale-free.
    weight: f64,
}

impl InnerProblem {
    fn n_params(&self) -> usize {
        self.types * self.markets + self.markets + 1
    }

    fn eval(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let (types, markets) = (self.types, self.markets);
        let xi = &x[types * markets..types * markets + markets];
        let ln_nu = x[types * markets + markets].clamp(-LOG_GUARD, LOG_GUARD);
        let nu = ln_nu.exp();
        let mut obj = 0.0;
        let mut grad = vec![0.0; self.n_params()];
        let mut phi_row = vec![0.0; markets];
        for i in 0..types {
            for g in 0..markets {
                phi_row[g] = x[i * markets + g].clamp(-LOG_GUARD, LOG_GUARD).exp();
            }
            let (logp, u) = log_probs_and_utils(&phi_row, xi, nu);
            let total = self.count_totals[i];
            obj += self.counts[i][0] * logp[0];
            for g in 0..markets {
                obj += self.counts[i][g + 1] * logp[g + 1];
                let a = self.counts[i][g + 1] - total * logp[g + 1].exp();
                grad[i * markets + g] += phi_row[g] * a / nu;
                grad[types * markets + g] += a / nu;
                grad[types * markets + markets] -= a * u[g + 1];
            }
            for g in 0..markets {
                let n = self.n_emp[i][g];
                if n > 0.0 {
                    let mu = x[i * markets + g].clamp(-LOG_GUARD, LOG_GUARD);
                    let s2cell = self.sigma2[i][g];
                    // Constants in x (s2, ln sigma, ln omega) are dropped:
                    // the inner objective is used only for ascent.
                    obj -= (n * mu * mu - 2.0 * self.s1[i][g] * mu) / (2.0 * s2cell);
                    grad[i * markets + g] += (self.s1[i][g] - n * mu) / s2cell;
                }
            }
        }
        let (lo, hi) = self.ln_nu_bounds;
        let raw_ln_nu = x[types * markets + markets];
        if raw_ln_nu > hi {
            let d = raw_ln_nu - hi;
            obj -= BARRIER * d * d;
            grad[types * markets + markets] -= 2.0 * BARRIER * d;
        } else if raw_ln_nu < lo {
            let d = lo - raw_ln_nu;
            obj -= BARRIER * d * d;
            grad[types * markets + markets] += 2.0 * BARRIER * d;
        }
        if !obj.is_finite() {
            return (1e300, vec![0.0; self.n_params()]);
        }
        let w = self.weight;
        (-obj / w, grad.into_iter().map(|g| -g / w).collect())
    }

    /// The unscaled penalized objective with all σ-dependent constants, the
    /// `s2` quadratic, and the λ term included, so values are comparable
    /// across outer steps that re-profile σ.
    fn full_objective(&self, x: &[f64], s2: &[Vec<f64>], lambda_part: f64) -> f64 {
        let (types, markets) = (self.types, self.markets);
        let xi = &x[types * markets..types * markets + markets];
        let nu = x[types * markets + markets].clamp(-LOG_GUARD, LOG_GUARD).exp();
        let mut obj = lambda_part;
        let mut phi_row = vec![0.0; markets];
        for i in 0..types {
            for g in 0..markets {
                phi_row[g] = x[i * markets + g].clamp(-LOG_GUARD, LOG_GUARD).exp();
            }
            let (logp, _) = log_probs_and_utils(&phi_row, xi, nu);
            for g in 0..=markets {
                obj += self.counts[i][g] * logp[g];
            }
            for g in 0..markets {
                let n = self.n_emp[i][g];
                if n > 0.0 {
                    let mu = x[i * markets + g].clamp(-LOG_GUARD, LOG_GUARD);
                    let quad = s2[i][g] - 2.0 * self.s1[i][g] * mu + n * mu * mu;
                    obj += -self.s1[i][g]
                        - n * (0.5 * self.sigma2[i][g].ln() + HALF_LN_2PI)
                        - quad / (2.0 * self.sigma2[i][g]);
                }
            }
        }
        obj
    }
}

impl CostFunction for InnerProblem {
    type Param = Vec<f64>;
    type Output = f64;
    fn cost(&self, x: &Self::Param) -> std::result::Result<f64, argmin::core::Error> {
        Ok(self.eval(x).0)
    }
}

impl Gradient for InnerProblem {
    type Param = Vec<f64>;
    type Gradient = Vec<f64>;
    fn gradient(&self, x: &Self::Param) -> std::result::Result<Vec<f64>, argmin::core::Error> {
        Ok(self.eval(x).1)
    }
}

struct RestartOutcome {
    x: Vec<f64>,
    objective: f64,
    gradient_norm: f64,
    converged: bool,
    trace: Vec<f64>,
}

fn decode_phi(x: &[f64], types: usize, markets: usize) -> Vec<Vec<f64>> {
    (0..types)
        .map(|i| {
            (0..markets)
                .map(|g| x[i * markets + g].clamp(-LOG_GUARD, LOG_GUARD).exp())
                .collect()
        })
        .collect()
}

fn run_restart(
    stats: &PanelStats,
    counts: &[Vec<f64>],
    config: &FitConfig,
    lambda_part: f64,
    mut x: Vec<f64>,
) -> Result<RestartOutcome> {
    let (types, markets) = (stats.types, stats.markets);
    let count_totals: Vec<f64> = counts.iter().map(|row| row.iter().sum()).collect();
    let ln_nu_idx = types * markets + markets;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut best = (f64::NEG_INFINITY, 0.0);
    for outer in 0..config.max_outer {
        // Profile sigma at the current phi, flooring for conditioning.
        let phi = decode_phi(&x, types, markets);
        let est = sigma_from_stats(stats, &phi);
        let sigma2: Vec<Vec<f64>> = est
            .sigma
            .iter()
            .map(|row| row.iter().map(|&s| (s * s).max(1e-8)).collect())
            .collect();
        let problem = InnerProblem {
            types,
            markets,
            counts: counts.to_vec(),
            count_totals: count_totals.clone(),
            n_emp: stats.n_emp.clone(),
            s1: stats.s1.clone(),
            sigma2,
            ln_nu_bounds: config.ln_nu_bounds,
            weight: stats.n_obs.max(1.0),
        };
        let solver = LBFGS::new(MoreThuenteLineSearch::new(), 7);
        let run = Executor::new(problem.clone(), solver)
            .configure(|state| state.param(x.clone()).max_iters(config.inner_iters))
            .run();
        if let Ok(res) = run {
            if let Some(param) = res.state().get_best_param() {
                let candidate = param.clone();
                if problem.eval(&candidate).0 <= problem.eval(&x).0 {
                    x = candidate;
                }
            }
        }
        // 1-D polish of ln nu: near-deterministic choices make the profile
        // in ln nu exponentially flat, which stalls quasi-Newton steps in
        // the middle of the plateau; a grid scan walks through it (and
        // reaches the box bound when the likelihood is monotone in nu).
        {
            let mut best_cost = problem.eval(&x).0;
            let mut best_v = x[ln_nu_idx];
            let (lo, hi) = config.ln_nu_bounds;
            let steps = 200;
            for j in 0..=steps {
                let v = lo + (hi - lo) * j as f64 / steps as f64;
                x[ln_nu_idx] = v;
                let cost = problem.eval(&x).0;
                if cost < best_cost - 1e-15 {
                    best_cost = cost;
                    best_v = v;
                }
            }
            x[ln_nu_idx] = best_v;
        }
        let (_, grad) = problem.eval(&x);
        let objective = problem.full_objective(&x, &stats.s2, lambda_part);
        let gnorm = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        trace.push(objective);
        best = (objective, gnorm);
        if gnorm < config.gradient_tol {
            converged = true;
            break;
        }
        if outer > 0 {
            let prev = trace[trace.len() - 2];
            if objective - prev < 1e-10 * (1.0 + objective.abs()) {
                break;
            }
        }
    }
    Ok(RestartOutcome {
        x,
        objective: best.0,
        gradient_norm: best.1,
        converged,
        trace,
    })
}

fn initial_point(stats: &PanelStats) -> Vec<f64> {
    let (types, markets) = (stats.types, stats.markets);
    let mut total_s1 = 0.0;
    let mut total_n = 0.0;
    for i in 0..types {
        for g in 0..markets {
            total_s1 += stats.s1[i][g];
            total_n += stats.n_emp[i][g];
        }
    }
    let global_mu = if total_n > 0.0 { total_s1 / total_n } else { 0.0 };
    let mut x = vec![0.0; types * markets + markets + 1];
    for i in 0..types {
        for g in 0..markets {
            x[i * markets + g] = if stats.n_emp[i][g] > 0.0 {
                stats.s1[i][g] / stats.n_emp[i][g]
            } else {
                global_mu
            };
        }
    }
    x
}

fn fit_phi_space(
    panel: &WorkerPanel,
    config: &FitConfig,
    epsilon: f64,
) -> Result<(PanelStats, RestartOutcome)> {
    let stats = PanelStats::build(panel)?;
    for g in 0..stats.markets {
        let visited: f64 = (0..stats.types).map(|i| stats.n_emp[i][g]).sum();
        if visited == 0.0 {
            return Err(Error::InvalidParameter(format!(
                "market {} has no workers in the panel",
                g + 1
            )));
        }
    }
    if !(epsilon > 0.0) {
        return Err(Error::InvalidParameter("zero-cell epsilon must be positive".into()));
    }
    // Choice-bracket counts with the zero-cell pseudo-count.
    let mut counts = stats.sep.clone();
    for i in 0..stats.types {
        for g in 0..stats.markets {
            if stats.n_emp[i][g] == 0.0 {
                counts[i][g + 1] += epsilon;
            }
        }
    }
    let lambda = if stats.sep_events + stats.stay_events > 0.0 {
        stats.sep_events / (stats.sep_events + stats.stay_events)
    } else {
        0.0
    };
    let lambda_part = lambda_term(lambda, stats.sep_events, stats.stay_events);
    let base = initial_point(&stats);
    let mut best: Option<RestartOutcome> = None;
    for r in 0..config.restarts.max(1) {
        let mut x0 = base.clone();
        if r > 0 {
            let mut rng = stream_rng(config.seed, "mle", "restart", r as u64);
            let last = x0.len() - 1;
            for (j, v) in x0.iter_mut().enumerate() {
                let scale = if j == last { 0.3 } else { 0.2 };
                *v += scale * rng.sample::<f64, _>(StandardNormal);
            }
        }
        let outcome = run_restart(&stats, &counts, config, lambda_part, x0)?;
        if best.as_ref().map_or(true, |b| outcome.objective > b.objective) {
            best = Some(outcome);
        }
    }
    Ok((stats, best.expect("at least one restart")))
}

/// Maximum-likelihood fit of `(φ, Ξ, ν)` with `σ` and `λ` profiled.
///
/// Quasi-Newton ascent in `(ln φ, ξ, ln ν)`; each outer step re-profiles
/// `σ̂` at the current `φ` in closed form. Zero-match cells receive a
/// pseudo-count `ε₀` in the choice bracket so their `φ̂` stays finite; they
/// are reported in the zero-cell mask, and the returned `log_likelihood` is
/// the unpenalized value. On non-convergence the best point found is
/// returned with `converged = false`.
pub fn fit_supply_parameters(
    panel: &WorkerPanel,
    config: &FitConfig,
) -> Result<EstimatedParameters> {
    let (stats, outcome) = fit_phi_space(panel, config, config.zero_cell_epsilon)?;
    let (types, markets) = (stats.types, stats.markets);
    let phi = decode_phi(&outcome.x, types, markets);
    let xi = outcome.x[types * markets..types * markets + markets].to_vec();
    let raw_ln_nu = outcome.x[types * markets + markets];
    let (lo, hi) = config.ln_nu_bounds;
    let nu_at_boundary = raw_ln_nu <= lo + 1e-3 || raw_ln_nu >= hi - 1e-3;
    let nu = raw_ln_nu.clamp(lo, hi).exp();
    let sigma_est = sigma_from_stats(&stats, &phi);
    let lambda = if panel.n_periods() >= 2 {
        estimate_lambda(panel)?
    } else {
        0.0
    };
    let theta = SupplyTheta {
        phi: phi.clone(),
        xi: xi.clone(),
        nu,
        sigma: sigma_est
            .sigma
            .iter()
            .map(|row| row.iter().map(|&s| s.max(1e-8)).collect())
            .collect(),
        lambda,
    };
    let log_likelihood = likelihood_from_stats(&stats, &theta);
    let zero_cell_mask: Vec<Vec<bool>> = stats
        .n_emp
        .iter()
        .map(|row| row.iter().map(|&n| n == 0.0).collect())
        .collect();
    let epsilon_sensitive = if config.epsilon_sensitivity {
        let (_, halved) = fit_phi_space(panel, config, config.zero_cell_epsilon / 2.0)?;
        let phi_halved = decode_phi(&halved.x, types, markets);
        Some(
            (0..types)
                .map(|i| {
                    (0..markets)
                        .map(|g| {
                            let rel = (phi_halved[i][g] - phi[i][g]).abs() / phi[i][g];
                            rel > 0.01
                        })
                        .collect()
                })
                .collect(),
        )
    } else {
        None
    };
    Ok(EstimatedParameters {
        phi,
        xi,
        nu,
        sigma: sigma_est.sigma,
        sigma_pooled: sigma_est.pooled,
        lambda,
        k: None,
        log_likelihood,
        gradient_norm: outcome.gradient_norm,
        zero_cell_mask,
        epsilon_sensitive,
        converged: outcome.converged,
        nu_at_boundary,
        outer_objectives: outcome.trace,
    })
}

/// Splits `φ̂` into productivities and wages under the mean-productivity
/// normalization: `ŵ_γ = Σ_ι m_ι φ̂_ιγ / k` and `ψ̂_ιγ = φ̂_ιγ / ŵ_γ`, so
/// `Σ_ι m_ι ψ̂_ιγ = k` in every market.
pub fn normalize_psi(
    phi: &[Vec<f64>],
    masses: &[f64],
    k: f64,
) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    if phi.is_empty() || phi.len() != masses.len() {
        return Err(Error::DimensionMismatch("phi rows must match masses".into()));
    }
    let markets = phi[0].len();
    if phi.iter().any(|r| r.len() != markets) {
        return Err(Error::DimensionMismatch("ragged phi".into()));
    }
    if !(k.is_finite() && k > 0.0) {
        return Err(Error::InvalidParameter("k must be positive".into()));
    }
    let mut w = vec![0.0; markets];
    for g in 0..markets {
        let mean: f64 = phi.iter().zip(masses).map(|(row, &m)| m * row[g]).sum();
        if mean <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "market {} has zero mass-weighted phi",
                g + 1
            )));
        }
        w[g] = mean / k;
    }
    let psi = phi
        .iter()
        .map(|row| row.iter().zip(&w).map(|(&p, &wg)| p / wg).collect())
        .collect();
    Ok((psi, w))
}

/// One candidate from the normalization-constant grid search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KCandidate {
    pub k: f64,
    /// Model employment rate at the re-solved equilibrium; `None` when the
    /// solver failed for this candidate.
    pub employment_rate: Option<f64>,
}

/// Outcome of [`choose_k`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSelection {
    pub k: f64,
    pub candidates: Vec<KCandidate>,
}

/// Picks the normalization constant `k` whose implied equilibrium matches
/// the observed employment rate.
///
/// For each grid point: normalize `φ̂` at that `k`, re-solve the
/// equilibrium, and compute the model employment rate
/// `Σ_ι m_ι (1 − P_ι[0]) / Σ_ι m_ι`. Returns the grid argmin of the
/// absolute distance to the observed rate; ties go to the smaller `k`, and
/// solver failures are skipped.
#[allow(clippy::too_many_arguments)]
pub fn choose_k(
    phi: &[Vec<f64>],
    xi: &[f64],
    nu: f64,
    masses: &[f64],
    tech: &Technology,
    demand: &DemandSide,
    solver: &SolverConfig,
    grid: &[f64],
    observed_employment: f64,
) -> Result<KSelection> {
    if grid.is_empty() {
        return Err(Error::InvalidParameter("empty k grid".into()));
    }
    if grid.iter().any(|&k| !(k.is_finite() && k > 0.0)) {
        return Err(Error::InvalidParameter("k grid must be positive".into()));
    }
    if !(0.0..=1.0).contains(&observed_employment) {
        return Err(Error::InvalidParameter("employment rate must be in [0, 1]".into()));
    }
    let mut sorted: Vec<f64> = grid.to_vec();
    sorted.sort_by(f64::total_cmp);
    let total_mass: f64 = masses.iter().sum();
    let mut candidates = Vec::with_capacity(sorted.len());
    let mut best: Option<(f64, f64)> = None; // (distance, k)
    for &k in &sorted {
        let rate = (|| -> Result<f64> {
            let (psi, w_ref) = normalize_psi(phi, masses, k)?;
            let params = LaborSupplyParameters {
                psi,
                xi: xi.to_vec(),
                nu,
                masses: masses.to_vec(),
            };
            let mut cfg = solver.clone();
            cfg.w0 = Some(w_ref);
            let eq = solve_equilibrium(&params, tech, demand, &cfg)?;
            if !eq.converged {
                return Err(Error::InvalidParameter(format!(
                    "solver did not converge at k = {k}"
                )));
            }
            let probs = choice_probabilities(&params, &eq.w)?;
            let employed: f64 = probs
                .iter()
                .zip(masses)
                .map(|(row, &m)| m * (1.0 - row[0]))
                .sum();
            Ok(employed / total_mass)
        })();
        match rate {
            Ok(rate) => {
                candidates.push(KCandidate { k, employment_rate: Some(rate) });
                let dist = (rate - observed_employment).abs();
                // Strict improvement only: ascending grid order makes ties
                // resolve toward the smaller k.
                if best.map_or(true, |(d, _)| dist < d) {
                    best = Some((dist, k));
                }
            }
            Err(_) => candidates.push(KCandidate { k, employment_rate: None }),
        }
    }
    let (_, k) = best.ok_or_else(|| {
        Error::InvalidParameter("equilibrium solver failed at every k".into())
    })?;
    Ok(KSelection { k, candidates })
}

/// Observed employment rate of a panel: share of observations with
/// `γ > 0`.
pub fn employment_rate(panel: &WorkerPanel) -> f64 {
    if panel.is_empty() {
        return 0.0;
    }
    let employed = (0..panel.len()).filter(|&i| panel.is_employed(i)).count();
    employed as f64 / panel.len() as f64
}

/// Worker-type masses measured as worker counts per type over the total.
pub fn type_masses(panel: &WorkerPanel) -> Result<Vec<f64>> {
    panel.validate()?;
    if panel.is_empty() {
        return Err(Error::InvalidParameter("empty panel".into()));
    }
    let types = panel.n_worker_types() as usize;
    let mut seen: std::collections::BTreeMap<u32, u32> = std::collections::BTreeMap::new();
    for idx in 0..panel.len() {
        seen.insert(panel.worker[idx], panel.iota[idx]);
    }
    let mut counts = vec![0.0; types];
    for &iota in seen.values() {
        counts[iota as usize] += 1.0;
    }
    let total = seen.len() as f64;
    Ok(counts.into_iter().map(|c| c / total).collect())
}

/// Pairwise Pearson correlations of productivity rows, with the
/// distribution summary of the off-diagonal entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillCorrelation {
    /// I×I; `None` where a row has zero variance.
    pub corr: Vec<Vec<Option<f64>>>,
    /// Histogram of defined off-diagonal entries over 20 bins on [-1, 1].
    pub histogram: Vec<usize>,
    pub off_diagonal_mean: Option<f64>,
    pub off_diagonal_sd: Option<f64>,
}

/// Pearson correlation matrix of the rows `ψ_ι·`.
pub fn skill_correlation_matrix(psi: &[Vec<f64>]) -> Result<SkillCorrelation> {
    let types = psi.len();
    if types < 2 {
        return Err(Error::InvalidParameter("need at least two worker types".into()));
    }
    let markets = psi[0].len();
    if markets < 2 {
        return Err(Error::InvalidParameter("need at least two markets".into()));
    }
    if psi.iter().any(|r| r.len() != markets) {
        return Err(Error::DimensionMismatch("ragged psi".into()));
    }
    let centered: Vec<Vec<f64>> = psi
        .iter()
        .map(|row| {
            let mean = row.iter().sum::<f64>() / markets as f64;
            row.iter().map(|&v| v - mean).collect()
        })
        .collect();
    let norms: Vec<f64> = centered
        .iter()
        .map(|row| row.iter().map(|&v| v * v).sum::<f64>().sqrt())
        .collect();
    let mut corr = vec![vec![None; types]; types];
    let mut off = Vec::new();
    for i in 0..types {
        for j in 0..types {
            if i == j {
                corr[i][j] = Some(1.0);
                continue;
            }
            if norms[i] > 0.0 && norms[j] > 0.0 {
                let dot: f64 = centered[i].iter().zip(&centered[j]).map(|(a, b)| a * b).sum();
                let r = (dot / (norms[i] * norms[j])).clamp(-1.0, 1.0);
                corr[i][j] = Some(r);
                if i < j {
                    off.push(r);
                }
            }
        }
    }
    let mut histogram = vec![0usize; 20];
    for &r in &off {
        let bin = (((r + 1.0) / 2.0 * 20.0) as usize).min(19);
        histogram[bin] += 1;
    }
    let (mean, sd) = if off.is_empty() {
        (None, None)
    } else {
        let m = off.iter().sum::<f64>() / off.len() as f64;
        let var = off.iter().map(|&r| (r - m) * (r - m)).sum::<f64>() / off.len() as f64;
        (Some(m), Some(var.sqrt()))
    };
    Ok(SkillCorrelation {
        corr,
        histogram,
        off_diagonal_mean: mean,
        off_diagonal_sd: sd,
    })
}
