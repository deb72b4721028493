//! Equilibrium model of worker sorting across markets.
//!
//! Workers of type `ι` draw logit preference shocks and choose among the `Γ`
//! markets and a non-employment outside option (`γ = 0`, utility 0).
//! Sector-`s` firms combine market-specific labor with Cobb-Douglas
//! technology and decreasing returns; households allocate income across
//! sector goods with CES preferences. [`solve_equilibrium`] finds wages per
//! efficiency unit and goods prices that clear every labor and product
//! market by damped tatonnement.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Preferences and productivity of the worker side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaborSupplyParameters {
    /// Efficiency units `ψ_ιγ` of a type-`ι` worker in market `γ` (I×Γ).
    pub psi: Vec<Vec<f64>>,
    /// Market amenities `ξ_γ` (length Γ). The outside option's amenity is 0.
    pub xi: Vec<f64>,
    /// Preference-shock scale `ν > 0`.
    pub nu: f64,
    /// Worker-type masses `m_ι > 0` (length I).
    pub masses: Vec<f64>,
}

impl LaborSupplyParameters {
    pub fn validate(&self) -> Result<()> {
        let markets = self.xi.len();
        if self.psi.len() != self.masses.len() {
            return Err(Error::DimensionMismatch(
                "psi rows must match masses length".into(),
            ));
        }
        for row in &self.psi {
            if row.len() != markets {
                return Err(Error::DimensionMismatch(
                    "psi columns must match xi length".into(),
                ));
            }
            if row.iter().any(|&v| !(v.is_finite() && v >= 0.0)) {
                return Err(Error::InvalidParameter(
                    "psi must be finite and nonnegative".into(),
                ));
            }
        }
        if !(self.nu.is_finite() && self.nu > 0.0) {
            return Err(Error::InvalidParameter("nu must be positive".into()));
        }
        if self.masses.iter().any(|&m| !(m.is_finite() && m > 0.0)) {
            return Err(Error::InvalidParameter("masses must be positive".into()));
        }
        if self.xi.iter().any(|&x| !x.is_finite()) {
            return Err(Error::NonFinite("xi".into()));
        }
        Ok(())
    }

    pub fn n_types(&self) -> usize {
        self.masses.len()
    }

    pub fn n_markets(&self) -> usize {
        self.xi.len()
    }
}

/// Sector production technology.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Technology {
    /// Output elasticities `β_γs` (Γ×S); the labor share of sector `s` is
    /// `α_s = Σ_γ β_γs` and must lie strictly inside (0, 1).
    pub beta: Vec<Vec<f64>>,
}

impl Technology {
    pub fn validate(&self) -> Result<()> {
        let sectors = self.n_sectors();
        for row in &self.beta {
            if row.len() != sectors {
                return Err(Error::DimensionMismatch("ragged beta matrix".into()));
            }
            if row.iter().any(|&b| !(b.is_finite() && b >= 0.0)) {
                return Err(Error::InvalidParameter(
                    "beta must be finite and nonnegative".into(),
                ));
            }
        }
        for s in 0..sectors {
            let alpha = self.labor_share(s);
            if !(alpha > 0.0 && alpha < 1.0) {
                return Err(Error::InvalidParameter(format!(
                    "sector {s} labor share {alpha} outside (0, 1)"
                )));
            }
        }
        Ok(())
    }

    pub fn n_markets(&self) -> usize {
        self.beta.len()
    }

    pub fn n_sectors(&self) -> usize {
        self.beta.first().map_or(0, Vec::len)
    }

    /// `α_s = Σ_γ β_γs`.
    pub fn labor_share(&self, s: usize) -> f64 {
        self.beta.iter().map(|row| row[s]).sum()
    }
}

/// Household demand side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandSide {
    /// Sector demand shifters `a_s > 0`.
    pub a: Vec<f64>,
    /// CES substitution elasticity `η > 0`, `η ≠ 1`.
    pub eta: f64,
}

impl DemandSide {
    pub fn validate(&self) -> Result<()> {
        if self.a.iter().any(|&a| !(a.is_finite() && a > 0.0)) {
            return Err(Error::InvalidParameter("demand shifters must be positive".into()));
        }
        if !(self.eta.is_finite() && self.eta > 0.0) || (self.eta - 1.0).abs() < 1e-12 {
            return Err(Error::InvalidParameter(
                "eta must be positive and different from 1".into(),
            ));
        }
        Ok(())
    }
}

/// Tatonnement settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Dampening exponent `ρ` for the multiplicative updates.
    pub rho: f64,
    /// Convergence tolerance on the max relative labor and goods gaps.
    pub tol: f64,
    pub max_iter: usize,
    /// Initial wages; defaults to all ones.
    pub w0: Option<Vec<f64>>,
    /// Initial prices; defaults to all ones.
    pub p0: Option<Vec<f64>>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            rho: 0.1,
            tol: 1e-8,
            max_iter: 50_000,
            w0: None,
            p0: None,
        }
    }
}

/// A solved (or best-effort) market equilibrium.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumState {
    /// Wage per efficiency unit, per market.
    pub w: Vec<f64>,
    /// Goods prices, per sector.
    pub p: Vec<f64>,
    /// Labor allocation `ℓ_γs` (Γ×S).
    pub ell: Vec<Vec<f64>>,
    pub y_supply: Vec<f64>,
    pub y_demand: Vec<f64>,
    /// Aggregate income `Y = Σ_s p_s y_s`.
    pub income: f64,
    pub profits: f64,
    pub wage_bill: f64,
    /// `max_γ |LD − LS| / max(LS, ε)` at the returned point.
    pub labor_gap: f64,
    /// `max_s |y^D − y^S| / max(y^S, ε)` at the returned point.
    pub goods_gap: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Choice probabilities `P_ι[γ]` over the outside option and the Γ markets.
///
/// Returns an I×(Γ+1) matrix whose column 0 is non-employment; row `ι` is
/// `softmax(0, (ψ_ι1 w_1 + ξ_1)/ν, …)` computed with max-subtraction. Rows
/// sum to 1 within 1e-12.
pub fn choice_probabilities(params: &LaborSupplyParameters, w: &[f64]) -> Result<Vec<Vec<f64>>> {
    params.validate()?;
    if w.len() != params.n_markets() {
        return Err(Error::DimensionMismatch("wage vector length".into()));
    }
    if w.iter().any(|&x| !(x.is_finite() && x > 0.0)) {
        return Err(Error::InvalidParameter("wages must be positive".into()));
    }
    let markets = params.n_markets();
    let mut probs = Vec::with_capacity(params.n_types());
    for psi_row in &params.psi {
        let mut utils = Vec::with_capacity(markets + 1);
        utils.push(0.0); // outside option
        for g in 0..markets {
            let u = (psi_row[g] * w[g] + params.xi[g]) / params.nu;
            if !u.is_finite() {
                return Err(Error::NonFinite(format!("utility in market {}", g + 1)));
            }
            utils.push(u);
        }
        let max = utils.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = utils.iter().map(|&u| (u - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        probs.push(exps.into_iter().map(|e| e / total).collect());
    }
    Ok(probs)
}

/// Labor supplied to each market in efficiency units:
/// `LS_γ = Σ_ι m_ι P_ι[γ] ψ_ιγ`.
pub fn labor_supply(params: &LaborSupplyParameters, w: &[f64]) -> Result<Vec<f64>> {
    let probs = choice_probabilities(params, w)?;
    let markets = params.n_markets();
    let mut ls = vec![0.0; markets];
    for (i, psi_row) in params.psi.iter().enumerate() {
        for g in 0..markets {
            ls[g] += params.masses[i] * probs[i][g + 1] * psi_row[g];
        }
    }
    Ok(ls)
}

/// Cobb-Douglas labor demand `ℓ_γs` per sector, evaluated in log space:
///
/// `ℓ_γs = [p_s (β_γs/w_γ)^{1−α_s} Π_{γ'} (β_γ's/w_γ')^{β_γ's}]^{1/(1−α_s)}`
///
/// Cells with `β_γs = 0` demand no labor and are skipped in the product.
pub fn labor_demand(p: &[f64], w: &[f64], tech: &Technology) -> Result<Vec<Vec<f64>>> {
    tech.validate()?;
    if p.len() != tech.n_sectors() || w.len() != tech.n_markets() {
        return Err(Error::DimensionMismatch("price or wage vector length".into()));
    }
    if p.iter().chain(w).any(|&x| !(x.is_finite() && x > 0.0)) {
        return Err(Error::InvalidParameter("prices and wages must be positive".into()));
    }
    let markets = tech.n_markets();
    let sectors = tech.n_sectors();
    let mut ell = vec![vec![0.0; sectors]; markets];
    for s in 0..sectors {
        let alpha = tech.labor_share(s);
        // Shared log factor Σ_γ' β_γ's (ln β_γ's − ln w_γ').
        let mut shared = 0.0;
        for g in 0..markets {
            let b = tech.beta[g][s];
            if b > 0.0 {
                shared += b * (b.ln() - w[g].ln());
            }
        }
        for g in 0..markets {
            let b = tech.beta[g][s];
            if b > 0.0 {
                let log_ell =
                    (p[s].ln() + (1.0 - alpha) * (b.ln() - w[g].ln()) + shared) / (1.0 - alpha);
                ell[g][s] = log_ell.exp();
                if !ell[g][s].is_finite() {
                    return Err(Error::NonFinite(format!(
                        "labor demand in market {g}, sector {s}"
                    )));
                }
            }
        }
    }
    Ok(ell)
}

/// Sector output `y_s = Π_γ ℓ_γs^{β_γs}` with the convention `0^0 = 1`.
pub fn product_supply(ell: &[Vec<f64>], tech: &Technology) -> Result<Vec<f64>> {
    if ell.len() != tech.n_markets() || ell.iter().any(|r| r.len() != tech.n_sectors()) {
        return Err(Error::DimensionMismatch("labor allocation shape".into()));
    }
    let sectors = tech.n_sectors();
    let mut y = vec![0.0; sectors];
    for s in 0..sectors {
        let mut log_y = 0.0;
        let mut zero = false;
        for g in 0..tech.n_markets() {
            let b = tech.beta[g][s];
            if b > 0.0 {
                if ell[g][s] > 0.0 {
                    log_y += b * ell[g][s].ln();
                } else {
                    zero = true;
                }
            }
        }
        y[s] = if zero { 0.0 } else { log_y.exp() };
    }
    Ok(y)
}

/// CES product demand `y_s^D = a_s Y / (p_s^η Σ_{s'} a_{s'} p_{s'}^{1−η})`.
///
/// Satisfies the budget identity `Σ_s p_s y_s^D = Y` exactly.
pub fn product_demand(p: &[f64], demand: &DemandSide, income: f64) -> Result<Vec<f64>> {
    demand.validate()?;
    if p.len() != demand.a.len() {
        return Err(Error::DimensionMismatch("price vector length".into()));
    }
    if !(income.is_finite() && income > 0.0) {
        return Err(Error::InvalidParameter("income must be positive".into()));
    }
    let denom: f64 = demand
        .a
        .iter()
        .zip(p)
        .map(|(&a, &p)| a * p.powf(1.0 - demand.eta))
        .sum();
    Ok(demand
        .a
        .iter()
        .zip(p)
        .map(|(&a, &p)| a * income / (p.powf(demand.eta) * denom))
        .collect())
}

const GAP_EPS: f64 = 1e-12;

fn max_rel_gap(demanded: &[f64], supplied: &[f64]) -> f64 {
    demanded
        .iter()
        .zip(supplied)
        .map(|(&d, &s)| (d - s).abs() / s.max(GAP_EPS))
        .fold(0.0, f64::max)
}

/// Solves for market-clearing wages and prices by damped tatonnement.
///
/// Each iteration computes labor demand and supply, sector output, income
/// `Y = Σ_s p_s y_s`, and product demand, then updates
/// `w_γ ← w_γ (LD_γ/LS_γ)^ρ` and `p_s ← p_s (y^D_s/y^S_s)^ρ`. The
/// dampening `ρ` halves whenever the gap direction flips (oscillation).
/// On hitting `max_iter` the best state found is returned with
/// `converged = false`.
pub fn solve_equilibrium(
    params: &LaborSupplyParameters,
    tech: &Technology,
    demand: &DemandSide,
    config: &SolverConfig,
) -> Result<EquilibriumState> {
    params.validate()?;
    tech.validate()?;
    demand.validate()?;
    let markets = params.n_markets();
    let sectors = demand.a.len();
    if tech.n_markets() != markets || tech.n_sectors() != sectors {
        return Err(Error::DimensionMismatch(format!(
            "technology is {}x{}, economy has {} markets and {} sectors",
            tech.n_markets(),
            tech.n_sectors(),
            markets,
            sectors
        )));
    }
    let mut w = match &config.w0 {
        Some(w0) if w0.len() == markets => w0.clone(),
        Some(_) => return Err(Error::DimensionMismatch("w0 length".into())),
        None => vec![1.0; markets],
    };
    let mut p = match &config.p0 {
        Some(p0) if p0.len() == sectors => p0.clone(),
        Some(_) => return Err(Error::DimensionMismatch("p0 length".into())),
        None => vec![1.0; sectors],
    };
    if !(config.rho > 0.0 && config.rho <= 1.0) {
        return Err(Error::InvalidParameter("rho must be in (0, 1]".into()));
    }

    let mut rho = config.rho;
    let mut prev_dir: Option<Vec<f64>> = None;
    let mut best: Option<(f64, EquilibriumState)> = None;
    let mut iterations = 0;
    let mut converged = false;

    for iter in 0..config.max_iter {
        iterations = iter + 1;
        let ell = labor_demand(&p, &w, tech)?;
        let ld: Vec<f64> = (0..markets).map(|g| ell[g].iter().sum()).collect();
        let ls = labor_supply(params, &w)?;
        let y_s = product_supply(&ell, tech)?;
        let income: f64 = p.iter().zip(&y_s).map(|(&p, &y)| p * y).sum();
        if !(income.is_finite() && income > 0.0) {
            return Err(Error::NonFinite("aggregate income".into()));
        }
        let y_d = product_demand(&p, demand, income)?;

        let labor_gap = max_rel_gap(&ld, &ls);
        let goods_gap = max_rel_gap(&y_d, &y_s);
        let gap = labor_gap.max(goods_gap);

        if best.as_ref().map_or(true, |(g, _)| gap < *g) {
            let wage_bill: f64 = w.iter().zip(&ld).map(|(&w, &l)| w * l).sum();
            best = Some((
                gap,
                EquilibriumState {
                    w: w.clone(),
                    p: p.clone(),
                    ell: ell.clone(),
                    y_supply: y_s.clone(),
                    y_demand: y_d.clone(),
                    income,
                    profits: income - wage_bill,
                    wage_bill,
                    labor_gap,
                    goods_gap,
                    iterations,
                    converged: false,
                },
            ));
        }
        if gap < config.tol {
            converged = true;
            break;
        }

        // Direction vector of log-gaps; a sign flip (negative inner product
        // with the previous direction) signals oscillation -> halve rho.
        let dir: Vec<f64> = ld
            .iter()
            .zip(&ls)
            .map(|(&d, &s)| (d.max(GAP_EPS) / s.max(GAP_EPS)).ln())
            .chain(
                y_d.iter()
                    .zip(&y_s)
                    .map(|(&d, &s)| (d.max(GAP_EPS) / s.max(GAP_EPS)).ln()),
            )
            .collect();
        if let Some(prev) = &prev_dir {
            let dot: f64 = prev.iter().zip(&dir).map(|(a, b)| a * b).sum();
            if dot < 0.0 {
                rho = (rho * 0.5).max(1e-4);
            }
        }
        prev_dir = Some(dir);

        for g in 0..markets {
            w[g] *= (ld[g].max(GAP_EPS) / ls[g].max(GAP_EPS)).powf(rho);
            if !(w[g].is_finite() && w[g] > 0.0) {
                return Err(Error::NonFinite(format!("wage in market {g}")));
            }
        }
        for s in 0..sectors {
            p[s] *= (y_d[s].max(GAP_EPS) / y_s[s].max(GAP_EPS)).powf(rho);
            if !(p[s].is_finite() && p[s] > 0.0) {
                return Err(Error::NonFinite(format!("price in sector {s}")));
            }
        }
    }

    let (_, mut state) = best.ok_or_else(|| Error::InvalidParameter("max_iter is 0".into()))?;
    state.converged = converged;
    state.iterations = iterations;
    Ok(state)
}

/// Calibrates `β_γs` from a panel's wage bills by market and sector.
///
/// `β_γs` is proportional to total earnings of market-`γ` observations
/// carrying sector label `s`, rescaled so each sector's labor share equals
/// `labor_share`. Returns the technology together with the sector names in
/// column order (sorted).
pub fn calibrate_betas(
    panel: &crate::panel::WorkerPanel,
    sector_label: &str,
    n_markets: usize,
    labor_share: f64,
) -> Result<(Technology, Vec<String>)> {
    if !(labor_share > 0.0 && labor_share < 1.0) {
        return Err(Error::InvalidParameter("labor share must be in (0, 1)".into()));
    }
    let sectors_col = panel
        .labels
        .get(sector_label)
        .ok_or_else(|| Error::MissingLabel {
            label: sector_label.to_string(),
            index: 0,
        })?;
    let mut names: Vec<String> = Vec::new();
    for (idx, s) in sectors_col.iter().enumerate() {
        if panel.gamma[idx] > 0 && s.is_empty() {
            return Err(Error::MissingLabel {
                label: sector_label.to_string(),
                index: idx,
            });
        }
        if panel.gamma[idx] > 0 && !names.contains(s) {
            names.push(s.clone());
        }
    }
    names.sort();
    if names.is_empty() {
        return Err(Error::InvalidParameter("no employed observations with sector labels".into()));
    }
    let mut bill = vec![vec![0.0f64; names.len()]; n_markets];
    for idx in 0..panel.len() {
        let gamma = panel.gamma[idx];
        if gamma == 0 {
            continue;
        }
        let g = gamma as usize - 1;
        if g >= n_markets {
            return Err(Error::DimensionMismatch(format!(
                "market {gamma} exceeds n_markets {n_markets}"
            )));
        }
        let s = names.binary_search(&sectors_col[idx]).map_err(|_| Error::UnknownSector(
            sectors_col[idx].clone(),
        ))?;
        bill[g][s] += panel.omega[idx];
    }
    let mut beta = vec![vec![0.0; names.len()]; n_markets];
    for s in 0..names.len() {
        let total: f64 = bill.iter().map(|row| row[s]).sum();
        if total <= 0.0 {
            return Err(Error::UnknownSector(format!(
                "sector {} has an empty wage bill",
                names[s]
            )));
        }
        for g in 0..n_markets {
            beta[g][s] = labor_share * bill[g][s] / total;
        }
    }
    let tech = Technology { beta };
    tech.validate()?;
    Ok((tech, names))
}

/// Inverts the CES demand system for the shifters that reproduce the target
/// sector outputs at prices `p`, normalized so `Σ_s a_s = 1`.
pub fn calibrate_demand_shifters(targets: &[f64], p: &[f64], eta: f64) -> Result<Vec<f64>> {
    if targets.len() != p.len() {
        return Err(Error::DimensionMismatch("targets and prices disagree".into()));
    }
    if targets.iter().any(|&y| !(y.is_finite() && y > 0.0))
        || p.iter().any(|&x| !(x.is_finite() && x > 0.0))
    {
        return Err(Error::InvalidParameter("targets and prices must be positive".into()));
    }
    // From y_s = a_s Y / (p_s^η Σ a p^{1−η}): a_s ∝ y_s p_s^η.
    let raw: Vec<f64> = targets
        .iter()
        .zip(p)
        .map(|(&y, &p)| y * p.powf(eta))
        .collect();
    let total: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|a| a / total).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn two_by_two() -> LaborSupplyParameters {
        LaborSupplyParameters {
            psi: vec![vec![1.0, 0.5], vec![0.3, 1.2]],
            xi: vec![0.1, -0.2],
            nu: 0.8,
            masses: vec![0.6, 0.4],
        }
    }

    #[test]
    fn zero_utilities_are_uniform() {
        let params = LaborSupplyParameters {
            psi: vec![vec![0.0, 0.0, 0.0]],
            xi: vec![0.0, 0.0, 0.0],
            nu: 1.0,
            masses: vec![1.0],
        };
        let probs = choice_probabilities(&params, &[1.0, 1.0, 1.0]).unwrap();
        for &p in &probs[0] {
            assert_relative_eq!(p, 0.25, max_relative = 1e-12);
        }
    }

    #[test]
    fn logit_limits() {
        let base = two_by_two();
        let w = [1.0, 1.0];
        // Huge nu -> near-uniform.
        let mut wide = base.clone();
        wide.nu = 1e9;
        let probs = choice_probabilities(&wide, &w).unwrap();
        for row in &probs {
            for &p in row {
                assert_relative_eq!(p, 1.0 / 3.0, epsilon = 1e-6);
            }
        }
        // Tiny nu -> argmax indicator. Type 0's best option is market 1
        // (utility 1.1 vs 0.3 and 0).
        let mut sharp = base;
        sharp.nu = 1e-6;
        let probs = choice_probabilities(&sharp, &w).unwrap();
        assert_relative_eq!(probs[0][1], 1.0, epsilon = 1e-9);
        assert_relative_eq!(probs[1][2], 1.0, epsilon = 1e-9);
    }

    #[test]
    fn hand_softmax_case() {
        // Utilities (0, 1, 2) at nu = 1: an independent direct evaluation
        // without max-subtraction.
        let params = LaborSupplyParameters {
            psi: vec![vec![1.0, 2.0]],
            xi: vec![0.0, 0.0],
            nu: 1.0,
            masses: vec![1.0],
        };
        let probs = choice_probabilities(&params, &[1.0, 1.0]).unwrap();
        let z = 1.0 + 1.0f64.exp() + 2.0f64.exp();
        assert_relative_eq!(probs[0][0], 1.0 / z, max_relative = 1e-12);
        assert_relative_eq!(probs[0][1], 1.0f64.exp() / z, max_relative = 1e-12);
        assert_relative_eq!(probs[0][2], 2.0f64.exp() / z, max_relative = 1e-12);
    }

    #[test]
    fn rows_sum_to_one_and_wage_monotonicity() {
        let params = two_by_two();
        let probs = choice_probabilities(&params, &[1.0, 1.0]).unwrap();
        for row in &probs {
            assert_relative_eq!(row.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        }
        // Raising w_1 raises P[market 1] and lowers every other entry.
        let higher = choice_probabilities(&params, &[1.5, 1.0]).unwrap();
        for i in 0..2 {
            assert!(higher[i][1] >= probs[i][1]);
            assert!(higher[i][0] <= probs[i][0]);
            assert!(higher[i][2] <= probs[i][2]);
        }
    }

    #[test]
    fn labor_supply_matches_dense_oracle() {
        let params = LaborSupplyParameters {
            psi: vec![vec![1.0, 0.2], vec![0.5, 0.9], vec![0.0, 2.0]],
            xi: vec![0.3, 0.1],
            nu: 1.3,
            masses: vec![1.0, 2.0, 0.5],
        };
        let w = [1.2, 0.7];
        let ls = labor_supply(&params, &w).unwrap();
        let probs = choice_probabilities(&params, &w).unwrap();
        for g in 0..2 {
            let oracle: f64 = (0..3)
                .map(|i| params.masses[i] * probs[i][g + 1] * params.psi[i][g])
                .sum();
            assert_relative_eq!(ls[g], oracle, max_relative = 1e-12);
        }
        // Linearity in masses.
        let mut doubled = params.clone();
        for m in &mut doubled.masses {
            *m *= 2.0;
        }
        let ls2 = labor_supply(&doubled, &w).unwrap();
        for g in 0..2 {
            assert_relative_eq!(ls2[g], 2.0 * ls[g], max_relative = 1e-12);
        }
    }

    #[test]
    fn labor_demand_one_by_one_closed_form() {
        // ell = (beta * p / w)^{1/(1-beta)} with beta = 0.5, p = w = 1.
        let tech = Technology { beta: vec![vec![0.5]] };
        let ell = labor_demand(&[1.0], &[1.0], &tech).unwrap();
        assert_relative_eq!(ell[0][0], 0.25, max_relative = 1e-12);
        // General closed form at other values.
        let ell = labor_demand(&[2.0], &[0.5], &tech).unwrap();
        assert_relative_eq!(ell[0][0], (0.5 * 2.0 / 0.5f64).powf(2.0), max_relative = 1e-12);
    }

    #[test]
    fn labor_demand_homogeneity_and_zero_beta() {
        let tech = Technology {
            beta: vec![vec![0.3, 0.0], vec![0.2, 0.6]],
        };
        let p = [1.0, 1.5];
        let w = [0.9, 1.1];
        let ell = labor_demand(&p, &w, &tech).unwrap();
        assert_eq!(ell[0][1], 0.0);
        // Doubling p_s scales column s by 2^{1/(1-alpha_s)}.
        let p2 = [2.0, 1.5];
        let ell2 = labor_demand(&p2, &w, &tech).unwrap();
        let alpha0 = tech.labor_share(0);
        for g in 0..2 {
            if ell[g][0] > 0.0 {
                assert_relative_eq!(
                    ell2[g][0] / ell[g][0],
                    2.0f64.powf(1.0 / (1.0 - alpha0)),
                    max_relative = 1e-10
                );
            }
        }
    }

    #[test]
    fn labor_demand_foc_ratio() {
        let tech = Technology {
            beta: vec![vec![0.25, 0.1], vec![0.35, 0.5]],
        };
        let p = [1.3, 0.8];
        let w = [1.1, 0.6];
        let ell = labor_demand(&p, &w, &tech).unwrap();
        for s in 0..2 {
            let ratio = ell[0][s] / ell[1][s];
            let oracle = (tech.beta[0][s] / tech.beta[1][s]) * (w[1] / w[0]);
            assert_relative_eq!(ratio, oracle, max_relative = 1e-10);
        }
    }

    #[test]
    fn product_supply_cases() {
        let tech = Technology { beta: vec![vec![0.5]] };
        let y = product_supply(&[vec![4.0]], &tech).unwrap();
        assert_relative_eq!(y[0], 2.0, max_relative = 1e-12);
        let tech2 = Technology {
            beta: vec![vec![0.3, 0.2], vec![0.4, 0.3]],
        };
        let ones = vec![vec![1.0, 1.0], vec![1.0, 1.0]];
        let y = product_supply(&ones, &tech2).unwrap();
        assert_relative_eq!(y[0], 1.0, max_relative = 1e-12);
        assert_relative_eq!(y[1], 1.0, max_relative = 1e-12);
        // Random case vs direct powf product.
        let ell = vec![vec![0.7, 2.3], vec![1.9, 0.4]];
        let y = product_supply(&ell, &tech2).unwrap();
        for s in 0..2 {
            let oracle = ell[0][s].powf(tech2.beta[0][s]) * ell[1][s].powf(tech2.beta[1][s]);
            assert_relative_eq!(y[s], oracle, max_relative = 1e-12);
        }
    }

    #[test]
    fn product_demand_cases() {
        let one = DemandSide { a: vec![1.0], eta: 2.0 };
        let y = product_demand(&[0.8], &one, 5.0).unwrap();
        assert_relative_eq!(y[0], 5.0 / 0.8, max_relative = 1e-12);
        // Symmetric split.
        let sym = DemandSide { a: vec![0.5, 0.5], eta: 2.0 };
        let y = product_demand(&[1.3, 1.3], &sym, 10.0).unwrap();
        assert_relative_eq!(y[0], y[1], max_relative = 1e-12);
        assert_relative_eq!(y[0], 10.0 / (2.0 * 1.3), max_relative = 1e-12);
        // Budget identity on a random case.
        let d = DemandSide { a: vec![0.2, 0.5, 0.3], eta: 1.7 };
        let p = [0.9, 1.4, 0.6];
        let y = product_demand(&p, &d, 7.0).unwrap();
        let spend: f64 = p.iter().zip(&y).map(|(&p, &y)| p * y).sum();
        assert_relative_eq!(spend, 7.0, max_relative = 1e-12);
    }

    #[test]
    fn eta_one_rejected() {
        let d = DemandSide { a: vec![1.0], eta: 1.0 };
        assert!(d.validate().is_err());
    }

    fn one_by_one_economy() -> (LaborSupplyParameters, Technology, DemandSide) {
        (
            LaborSupplyParameters {
                psi: vec![vec![1.0]],
                xi: vec![0.0],
                nu: 0.5,
                masses: vec![1.0],
            },
            Technology { beta: vec![vec![0.5]] },
            DemandSide { a: vec![1.0], eta: 2.0 },
        )
    }

    #[test]
    fn one_by_one_matches_bisection_oracle() {
        let (params, tech, demand) = one_by_one_economy();
        // With one sector, goods clear identically (y_d = Y/p = y_s), so the
        // equilibrium wage solves LD(w; p=1) = LS(w) -- a 1-D root found by
        // bisection on the excess demand.
        let excess = |w: f64| -> f64 {
            let ell = labor_demand(&[1.0], &[w], &tech).unwrap();
            let ls = labor_supply(&params, &[w]).unwrap();
            ell[0][0] - ls[0]
        };
        let (mut lo, mut hi) = (1e-3, 1e3);
        assert!(excess(lo) > 0.0 && excess(hi) < 0.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if excess(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let oracle_w = 0.5 * (lo + hi);

        let eq = solve_equilibrium(&params, &tech, &demand, &SolverConfig::default()).unwrap();
        assert!(eq.converged, "solver failed to converge");
        assert_relative_eq!(eq.w[0], oracle_w, max_relative = 1e-6);
        assert!(eq.labor_gap < 1e-8 && eq.goods_gap < 1e-8);
    }

    fn random_economy() -> (LaborSupplyParameters, Technology, DemandSide) {
        (
            LaborSupplyParameters {
                psi: vec![
                    vec![1.0, 0.4, 0.2, 0.7, 0.3],
                    vec![0.3, 1.1, 0.5, 0.2, 0.6],
                    vec![0.2, 0.3, 0.9, 0.8, 0.4],
                ],
                xi: vec![0.1, -0.1, 0.0, 0.2, -0.2],
                nu: 0.6,
                masses: vec![0.5, 0.3, 0.2],
            },
            Technology {
                beta: vec![
                    vec![0.20, 0.05, 0.02],
                    vec![0.10, 0.25, 0.03],
                    vec![0.05, 0.10, 0.30],
                    vec![0.15, 0.05, 0.10],
                    vec![0.05, 0.15, 0.20],
                ],
            },
            DemandSide { a: vec![0.4, 0.35, 0.25], eta: 2.0 },
        )
    }

    #[test]
    fn five_market_three_sector_converges_with_walras() {
        let (params, tech, demand) = random_economy();
        let eq = solve_equilibrium(&params, &tech, &demand, &SolverConfig::default()).unwrap();
        assert!(eq.converged, "gaps {} {}", eq.labor_gap, eq.goods_gap);
        assert!(eq.labor_gap < 1e-8 && eq.goods_gap < 1e-8);
        // Walras: Y = wage bill + profits by construction; check the spend
        // identity against demand too.
        let spend: f64 = eq.p.iter().zip(&eq.y_demand).map(|(&p, &y)| p * y).sum();
        assert_relative_eq!(spend, eq.income, max_relative = 1e-8);
        assert!(((eq.income - eq.wage_bill - eq.profits) / eq.income).abs() < 1e-10);
    }

    #[test]
    fn scaling_all_shifters_is_neutral() {
        let (params, tech, mut demand) = random_economy();
        let eq = solve_equilibrium(&params, &tech, &demand, &SolverConfig::default()).unwrap();
        for a in &mut demand.a {
            *a *= 2.0;
        }
        let eq2 = solve_equilibrium(&params, &tech, &demand, &SolverConfig::default()).unwrap();
        for g in 0..eq.w.len() {
            assert_relative_eq!(eq.w[g], eq2.w[g], max_relative = 1e-6);
        }
        for s in 0..eq.p.len() {
            assert_relative_eq!(eq.p[s], eq2.p[s], max_relative = 1e-6);
        }
    }

    #[test]
    fn solver_is_deterministic() {
        let (params, tech, demand) = random_economy();
        let a = solve_equilibrium(&params, &tech, &demand, &SolverConfig::default()).unwrap();
        let b = solve_equilibrium(&params, &tech, &demand, &SolverConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn calibrate_demand_round_trip() {
        let p = [1.2, 0.7, 1.6, 0.9];
        let eta = 2.0;
        let targets = [3.0, 1.0, 0.5, 2.0];
        let a = calibrate_demand_shifters(&targets, &p, eta).unwrap();
        assert_relative_eq!(a.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        let demand = DemandSide { a, eta };
        let income: f64 = p.iter().zip(&targets).map(|(&p, &y)| p * y).sum();
        let y = product_demand(&p, &demand, income).unwrap();
        for s in 0..4 {
            assert_relative_eq!(y[s], targets[s], max_relative = 1e-10);
        }
        // Equal targets and prices -> equal shifters.
        let eq = calibrate_demand_shifters(&[2.0, 2.0], &[1.0, 1.0], eta).unwrap();
        assert_relative_eq!(eq[0], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn calibrate_betas_hand_tally() {
        use crate::panel::WorkerPanel;
        use std::collections::BTreeMap;
        // 3 employed observations: market 1 sector A earns 10, market 1
        // sector B earns 5, market 2 sector B earns 15.
        let mut labels = BTreeMap::new();
        labels.insert(
            "sector".to_string(),
            vec!["A".into(), "B".into(), "B".into(), String::new()],
        );
        let panel = WorkerPanel {
            worker: vec![0, 1, 2, 3],
            period: vec![1, 1, 1, 1],
            iota: vec![0, 0, 0, 0],
            gamma: vec![1, 1, 2, 0],
            omega: vec![10.0, 5.0, 15.0, f64::NAN],
            c: vec![true; 4],
            labels,
        };
        let (tech, names) = calibrate_betas(&panel, "sector", 2, 0.66).unwrap();
        assert_eq!(names, vec!["A".to_string(), "B".to_string()]);
        // Sector A: all wage bill in market 1 -> beta = (0.66, 0).
        assert_relative_eq!(tech.beta[0][0], 0.66, max_relative = 1e-12);
        assert_eq!(tech.beta[1][0], 0.0);
        // Sector B: bills 5 and 15 -> 0.66 * (0.25, 0.75).
        assert_relative_eq!(tech.beta[0][1], 0.66 * 0.25, max_relative = 1e-12);
        assert_relative_eq!(tech.beta[1][1], 0.66 * 0.75, max_relative = 1e-12);
        // Single market per sector -> beta equals the labor share.
        assert_relative_eq!(tech.labor_share(0), 0.66, max_relative = 1e-12);
    }
}
