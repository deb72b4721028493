//! Validation and reduced-form battery: Bartik instruments, weighted
//! regressions, concentration profiles, flow prediction, cross-tabulations,
//! and misclassification sweeps over shock experiments.

use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Partition;
use crate::panel::WorkerPanel;
use crate::rng::stream_rng;
use crate::shock::ShockExperiment;

/// Row-stochastic exposure of worker groups to job classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExposureTable {
    /// Surviving worker-group ids, ascending.
    pub groups: Vec<u32>,
    /// `π_gs`, rows parallel to `groups`; each row sums to 1.
    pub pi: Vec<Vec<f64>>,
    /// Employment counts per surviving group.
    pub sizes: Vec<f64>,
    /// Groups with no employment, dropped from the table.
    pub dropped: Vec<u32>,
    pub n_classes: usize,
}

/// Builds the exposure table `π_gs` from parallel per-observation group and
/// class assignments (employed observations only). Groups with no
/// observations are dropped and reported.
pub fn exposure_table(groups: &[u32], classes: &[u32]) -> Result<ExposureTable> {
    if groups.len() != classes.len() {
        return Err(Error::DimensionMismatch("groups and classes lengths".into()));
    }
    if groups.is_empty() {
        return Err(Error::InvalidParameter("no observations for exposure".into()));
    }
    let n_groups = groups.iter().map(|&g| g as usize + 1).max().unwrap_or(0);
    let n_classes = classes.iter().map(|&s| s as usize + 1).max().unwrap_or(0);
    let mut counts = vec![vec![0.0f64; n_classes]; n_groups];
    for (&g, &s) in groups.iter().zip(classes) {
        counts[g as usize][s as usize] += 1.0;
    }
    let mut table = ExposureTable {
        groups: Vec::new(),
        pi: Vec::new(),
        sizes: Vec::new(),
        dropped: Vec::new(),
        n_classes,
    };
    for (g, row) in counts.into_iter().enumerate() {
        let total: f64 = row.iter().sum();
        if total > 0.0 {
            table.groups.push(g as u32);
            table.pi.push(row.into_iter().map(|c| c / total).collect());
            table.sizes.push(total);
        } else {
            table.dropped.push(g as u32);
        }
    }
    Ok(table)
}

/// Exposure of worker types to the classes in a panel label column.
/// Returns the table together with the class names in column order
/// (sorted). Only employed observations with a non-empty label count.
pub fn exposure_from_panel(
    panel: &WorkerPanel,
    class_label: &str,
) -> Result<(ExposureTable, Vec<String>)> {
    let column = panel
        .labels
        .get(class_label)
        .ok_or_else(|| Error::MissingLabel { label: class_label.to_string(), index: 0 })?;
    let mut names: Vec<String> = Vec::new();
    for (idx, name) in column.iter().enumerate() {
        if panel.gamma[idx] > 0 && !name.is_empty() && !names.contains(name) {
            names.push(name.clone());
        }
    }
    names.sort();
    let mut groups = Vec::new();
    let mut classes = Vec::new();
    for idx in 0..panel.len() {
        if panel.gamma[idx] > 0 && !column[idx].is_empty() {
            let class = names
                .binary_search(&column[idx])
                .expect("name collected above");
            groups.push(panel.iota[idx]);
            classes.push(class as u32);
        }
    }
    Ok((exposure_table(&groups, &classes)?, names))
}

/// `Bartik_g = Σ_s π_gs Shock_s`, one entry per surviving group.
pub fn bartik_instrument(table: &ExposureTable, shock: &[f64]) -> Result<Vec<f64>> {
    if shock.len() != table.n_classes {
        return Err(Error::DimensionMismatch("shock vector length".into()));
    }
    Ok(table
        .pi
        .iter()
        .map(|row| row.iter().zip(shock).map(|(&p, &s)| p * s).sum())
        .collect())
}

/// Standardizes to mean 0 and population standard deviation 1.
pub fn zscore(x: &[f64]) -> Result<Vec<f64>> {
    if x.len() < 2 {
        return Err(Error::InvalidParameter("zscore needs at least 2 values".into()));
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n;
    if var <= 0.0 {
        return Err(Error::InvalidParameter("zscore input has zero variance".into()));
    }
    let sd = var.sqrt();
    Ok(x.iter().map(|&v| (v - mean) / sd).collect())
}

/// Weighted simple regression output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionResult {
    pub intercept: f64,
    pub slope: f64,
    /// Classical (homoskedastic) standard errors.
    pub se_intercept: f64,
    pub se_slope: f64,
    /// Heteroskedasticity-robust (HC0) standard errors.
    pub robust_se_intercept: f64,
    pub robust_se_slope: f64,
    /// Weighted R².
    pub r_squared: f64,
    pub n: usize,
    pub weights: String,
}

/// Weighted least squares of `y` on `x` with an intercept.
///
/// Emits both classical and HC0 robust standard errors; R² is weighted.
pub fn weighted_ols(y: &[f64], x: &[f64], weights: &[f64]) -> Result<RegressionResult> {
    let n = y.len();
    if x.len() != n || weights.len() != n {
        return Err(Error::DimensionMismatch("regression input lengths".into()));
    }
    if n < 3 {
        return Err(Error::InvalidParameter("regression needs at least 3 points".into()));
    }
    if weights.iter().any(|&w| !(w.is_finite() && w > 0.0)) {
        return Err(Error::InvalidParameter("weights must be positive".into()));
    }
    let sw: f64 = weights.iter().sum();
    let swx: f64 = weights.iter().zip(x).map(|(&w, &x)| w * x).sum();
    let swy: f64 = weights.iter().zip(y).map(|(&w, &y)| w * y).sum();
    let swxx: f64 = weights.iter().zip(x).map(|(&w, &x)| w * x * x).sum();
    let swxy: f64 = weights
        .iter()
        .zip(x)
        .zip(y)
        .map(|((&w, &x), &y)| w * x * y)
        .sum();
    let det = sw * swxx - swx * swx;
    let x_mean = swx / sw;
    let x_var = swxx / sw - x_mean * x_mean;
    if !(x_var > 1e-14 * (1.0 + x_mean * x_mean)) {
        return Err(Error::InvalidParameter("regressor is constant/collinear".into()));
    }
    let slope = (sw * swxy - swx * swy) / det;
    let intercept = (swy - slope * swx) / sw;

    let residuals: Vec<f64> = y
        .iter()
        .zip(x)
        .map(|(&y, &x)| y - intercept - slope * x)
        .collect();
    let ssr: f64 = weights
        .iter()
        .zip(&residuals)
        .map(|(&w, &e)| w * e * e)
        .sum();
    let y_mean = swy / sw;
    let tss: f64 = weights
        .iter()
        .zip(y)
        .map(|(&w, &y)| w * (y - y_mean) * (y - y_mean))
        .sum();
    let r_squared = if tss > 0.0 { (1.0 - ssr / tss).clamp(0.0, 1.0) } else { 1.0 };

    // (X'WX)^{-1} for X = [1, x]: inverse of [[sw, swx], [swx, swxx]] / det.
    let inv00 = swxx / det;
    let inv01 = -swx / det;
    let inv11 = sw / det;
    let dof = (n - 2) as f64;
    let sigma2 = ssr / dof;
    let se_intercept = (sigma2 * inv00).sqrt();
    let se_slope = (sigma2 * inv11).sqrt();

    // HC0 meat: X'W diag(e²) W X.
    let mut m00 = 0.0;
    let mut m01 = 0.0;
    let mut m11 = 0.0;
    for i in 0..n {
        let we2 = weights[i] * weights[i] * residuals[i] * residuals[i];
        m00 += we2;
        m01 += we2 * x[i];
        m11 += we2 * x[i] * x[i];
    }
    let v00 = inv00 * (m00 * inv00 + m01 * inv01) + inv01 * (m01 * inv00 + m11 * inv01);
    let v11 = inv01 * (m00 * inv01 + m01 * inv11) + inv11 * (m01 * inv01 + m11 * inv11);
    Ok(RegressionResult {
        intercept,
        slope,
        se_intercept,
        se_slope,
        robust_se_intercept: v00.max(0.0).sqrt(),
        robust_se_slope: v11.max(0.0).sqrt(),
        r_squared,
        n,
        weights: "user".to_string(),
    })
}

/// Per-group change in mean outcome between two panels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaOutcome {
    /// Groups present in both panels, ascending.
    pub groups: Vec<u32>,
    /// Group mean post-outcome minus group mean pre-outcome.
    pub delta: Vec<f64>,
    /// Pre-panel observation counts per surviving group.
    pub sizes: Vec<f64>,
    /// Groups absent from either panel.
    pub dropped: Vec<u32>,
}

fn group_outcome_means(panel: &WorkerPanel, groups_override: Option<&[u32]>) -> Vec<(f64, f64)> {
    let iota = |idx: usize| -> u32 {
        match groups_override {
            Some(map) => map[panel.worker[idx] as usize],
            None => panel.iota[idx],
        }
    };
    let n_groups = (0..panel.len()).map(|i| iota(i) as usize + 1).max().unwrap_or(0);
    let mut sums = vec![(0.0f64, 0.0f64); n_groups];
    for idx in 0..panel.len() {
        // Nonemployment is treated as 0 log earnings.
        let outcome = if panel.gamma[idx] > 0 { panel.omega[idx].ln() } else { 0.0 };
        let g = iota(idx) as usize;
        sums[g].0 += outcome;
        sums[g].1 += 1.0;
    }
    sums
}

/// Group mean change in log earnings (nonemployment counted as 0 log
/// earnings) from `pre` to `post`. Groups missing from either panel are
/// dropped and reported. `groups_override` optionally replaces each
/// worker's type with a supplied per-worker label (used by the
/// misclassification sweep).
pub fn delta_outcome(
    pre: &WorkerPanel,
    post: &WorkerPanel,
    groups_override: Option<&[u32]>,
) -> Result<DeltaOutcome> {
    pre.validate()?;
    post.validate()?;
    let pre_means = group_outcome_means(pre, groups_override);
    let post_means = group_outcome_means(post, groups_override);
    let n_groups = pre_means.len().max(post_means.len());
    let mut out = DeltaOutcome {
        groups: Vec::new(),
        delta: Vec::new(),
        sizes: Vec::new(),
        dropped: Vec::new(),
    };
    for g in 0..n_groups {
        let pre_cell = pre_means.get(g).copied().unwrap_or((0.0, 0.0));
        let post_cell = post_means.get(g).copied().unwrap_or((0.0, 0.0));
        if pre_cell.1 > 0.0 && post_cell.1 > 0.0 {
            out.groups.push(g as u32);
            out.delta.push(post_cell.0 / post_cell.1 - pre_cell.0 / pre_cell.1);
            out.sizes.push(pre_cell.1);
        } else {
            out.dropped.push(g as u32);
        }
    }
    Ok(out)
}

/// Per-group concentration profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HhiProfile {
    pub groups: Vec<u32>,
    /// `HHI_g = Σ_s π_gs²` per surviving group.
    pub hhi: Vec<f64>,
    pub sizes: Vec<f64>,
}

/// Herfindahl–Hirschman concentration of each worker group across job
/// classes. The symmetric job-side profile comes from building the
/// exposure table with the arguments swapped.
pub fn hhi_profile(table: &ExposureTable) -> HhiProfile {
    HhiProfile {
        groups: table.groups.clone(),
        hhi: table
            .pi
            .iter()
            .map(|row| row.iter().map(|&p| p * p).sum())
            .collect(),
        sizes: table.sizes.clone(),
    }
}

/// Norm for [`flow_prediction_error`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FlowNorm {
    L1,
    L2,
}

/// Out-of-sample flow prediction error `Ω_M` of a market definition.
///
/// In-sample transitions build market-level probabilities `P_M[m'|m]`;
/// the predicted job-level row is `P̂[j'|j] = P_M[M(j')|M(j)] ·
/// d_{j'}/Σ_{k∈M(j')} d_k`, compared to the empirical out-of-sample row
/// under the chosen norm. Rows aggregate as an unweighted mean over origin
/// jobs with at least one out-of-sample transition (or weighted by their
/// out-transition counts with `employment_weighted`). Origins whose market
/// has no in-sample transitions are excluded.
pub fn flow_prediction_error(
    markets: &[u32],
    in_sample: &[(u32, u32, f64)],
    out_sample: &[(u32, u32, f64)],
    d: &[f64],
    norm: FlowNorm,
    employment_weighted: bool,
) -> Result<f64> {
    let jobs = markets.len();
    if d.len() != jobs {
        return Err(Error::DimensionMismatch("employment vector length".into()));
    }
    let check = |flows: &[(u32, u32, f64)]| -> Result<()> {
        for &(a, b, c) in flows {
            if a as usize >= jobs || b as usize >= jobs {
                return Err(Error::DimensionMismatch("transition references unknown job".into()));
            }
            if !(c.is_finite() && c >= 0.0) {
                return Err(Error::InvalidParameter("negative transition count".into()));
            }
        }
        Ok(())
    };
    check(in_sample)?;
    check(out_sample)?;
    let n_markets = markets.iter().map(|&m| m as usize + 1).max().unwrap_or(0);
    // Market employment totals.
    let mut d_market = vec![0.0; n_markets];
    for (j, &m) in markets.iter().enumerate() {
        d_market[m as usize] += d[j];
    }
    // In-sample market-level transition matrix.
    let mut p_market = vec![vec![0.0f64; n_markets]; n_markets];
    for &(a, b, c) in in_sample {
        p_market[markets[a as usize] as usize][markets[b as usize] as usize] += c;
    }
    let mut row_defined = vec![false; n_markets];
    for (m, row) in p_market.iter_mut().enumerate() {
        let total: f64 = row.iter().sum();
        if total > 0.0 {
            row_defined[m] = true;
            for v in row.iter_mut() {
                *v /= total;
            }
        }
    }
    // Empirical out-of-sample rows per origin job.
    let mut oos_rows: std::collections::BTreeMap<u32, Vec<(u32, f64)>> = Default::default();
    for &(a, b, c) in out_sample {
        if c > 0.0 {
            oos_rows.entry(a).or_default().push((b, c));
        }
    }
    if oos_rows.is_empty() {
        return Err(Error::InvalidParameter("no out-of-sample transitions".into()));
    }
    let mut total_err = 0.0;
    let mut total_weight = 0.0;
    for (&j, row) in &oos_rows {
        let m = markets[j as usize] as usize;
        if !row_defined[m] {
            continue;
        }
        let out_total: f64 = row.iter().map(|&(_, c)| c).sum();
        let mut empirical = vec![0.0; jobs];
        for &(b, c) in row {
            empirical[b as usize] += c / out_total;
        }
        let mut err = 0.0;
        for jp in 0..jobs {
            let mp = markets[jp] as usize;
            let predicted = if d_market[mp] > 0.0 {
                p_market[m][mp] * d[jp] / d_market[mp]
            } else {
                0.0
            };
            let diff = (predicted - empirical[jp]).abs();
            match norm {
                FlowNorm::L1 => err += diff,
                FlowNorm::L2 => err += diff * diff,
            }
        }
        if norm == FlowNorm::L2 {
            err = err.sqrt();
        }
        let weight = if employment_weighted { out_total } else { 1.0 };
        total_err += weight * err;
        total_weight += weight;
    }
    if total_weight == 0.0 {
        return Err(Error::InvalidParameter(
            "no origin job with defined in-sample market row".into(),
        ));
    }
    Ok(total_err / total_weight)
}

/// One row of a ranked within-group label share table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrosstabRow {
    pub group: u32,
    pub label: String,
    pub share: f64,
    pub count: u64,
}

/// Within-group shares of a label column, descending, top `top_n` per
/// group. Rows with an empty label are ignored; ties break
/// lexicographically for determinism.
pub fn classification_crosstab(
    panel: &WorkerPanel,
    label: &str,
    top_n: usize,
) -> Result<Vec<CrosstabRow>> {
    let column = panel
        .labels
        .get(label)
        .ok_or_else(|| Error::MissingLabel { label: label.to_string(), index: 0 })?;
    let mut counts: std::collections::BTreeMap<(u32, &str), u64> = Default::default();
    let mut totals: std::collections::BTreeMap<u32, u64> = Default::default();
    for idx in 0..panel.len() {
        if column[idx].is_empty() {
            continue;
        }
        *counts.entry((panel.iota[idx], column[idx].as_str())).or_default() += 1;
        *totals.entry(panel.iota[idx]).or_default() += 1;
    }
    let mut rows = Vec::new();
    for (&group, &total) in &totals {
        let mut group_rows: Vec<CrosstabRow> = counts
            .iter()
            .filter(|((g, _), _)| *g == group)
            .map(|((_, label), &count)| CrosstabRow {
                group,
                label: label.to_string(),
                share: count as f64 / total as f64,
                count,
            })
            .collect();
        group_rows.sort_by(|a, b| {
            b.count.cmp(&a.count).then_with(|| a.label.cmp(&b.label))
        });
        group_rows.truncate(top_n);
        rows.extend(group_rows);
    }
    Ok(rows)
}

/// Result of corrupting a partition with classification noise.
#[derive(Debug, Clone, PartialEq)]
pub struct MisclassifyOutcome {
    pub partition: Partition,
    pub workers_changed: usize,
    pub jobs_changed: usize,
    /// A side with a single group cannot be misclassified; flagged no-op.
    pub worker_side_noop: bool,
    pub job_side_noop: bool,
}

fn corrupt_labels(
    labels: &mut [u32],
    n_groups: u32,
    frac: f64,
    rng: &mut ChaCha8Rng,
) -> usize {
    let n = labels.len();
    let count = (frac * n as f64).round() as usize;
    if count == 0 {
        return 0;
    }
    let picked = sample(rng, n, count.min(n));
    let mut changed = 0;
    for idx in picked {
        // Uniform over all groups, so full corruption is pure noise: a
        // uniform draw over only the *other* groups makes the corrupted
        // exposure an affine transform of the clean one whose coefficient
        // crosses zero at frac = (n−1)/n, and R² recovers past that point
        // instead of degrading monotonically.
        let new = rng.gen_range(0..n_groups);
        if new != labels[idx] {
            changed += 1;
        }
        labels[idx] = new;
    }
    changed
}

/// Resamples the group label of a fraction of workers and jobs (chosen
/// without replacement) uniformly over the existing groups. Deterministic
/// given the RNG state; a single-group side is returned untouched with a
/// no-op flag.
pub fn misclassify(
    partition: &Partition,
    frac_workers: f64,
    frac_jobs: f64,
    rng: &mut ChaCha8Rng,
) -> Result<MisclassifyOutcome> {
    if !(0.0..=1.0).contains(&frac_workers) || !(0.0..=1.0).contains(&frac_jobs) {
        return Err(Error::InvalidParameter("fractions must be in [0, 1]".into()));
    }
    let mut out = MisclassifyOutcome {
        partition: partition.clone(),
        workers_changed: 0,
        jobs_changed: 0,
        worker_side_noop: false,
        job_side_noop: false,
    };
    if partition.n_worker_types > 1 {
        out.workers_changed = corrupt_labels(
            &mut out.partition.worker_type,
            partition.n_worker_types,
            frac_workers,
            rng,
        );
    } else if frac_workers > 0.0 {
        out.worker_side_noop = true;
    }
    if partition.n_markets > 1 {
        out.jobs_changed =
            corrupt_labels(&mut out.partition.market, partition.n_markets, frac_jobs, rng);
    } else if frac_jobs > 0.0 {
        out.job_side_noop = true;
    }
    Ok(out)
}

/// One cell of the misclassification sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub frac_workers: f64,
    pub frac_jobs: f64,
    pub seed: u64,
    pub slope: f64,
    pub r_squared: f64,
}

/// Runs the Bartik regression of a shock experiment once with the true
/// classifications corrupted by the given noise levels.
///
/// Worker corruption resamples a fraction of workers' type labels; job
/// corruption resamples the market labels of a fraction of employed
/// matches. The market-level shock measure is the equilibrium log wage
/// change; the outcome is the corrupted-group change in mean log earnings
/// (nonemployment → 0), regressed on the standardized Bartik instrument
/// weighted by group size.
pub fn shock_regression(
    experiment: &ShockExperiment,
    frac_workers: f64,
    frac_jobs: f64,
    seed: u64,
) -> Result<RegressionResult> {
    let n_types = experiment.params.n_types() as u32;
    let n_markets = experiment.params.n_markets() as u32;
    let pre = &experiment.pre_panel;
    let post = &experiment.post_panel;
    let n_workers = pre.n_workers().max(post.n_workers());
    // Per-worker corrupted type labels, shared across pre and post.
    let mut worker_map: Vec<u32> = vec![0; n_workers];
    for idx in 0..pre.len() {
        worker_map[pre.worker[idx] as usize] = pre.iota[idx];
    }
    for idx in 0..post.len() {
        worker_map[post.worker[idx] as usize] = post.iota[idx];
    }
    let mut rng = stream_rng(seed, "metrics", "sweep-cell", 0);
    if n_types > 1 {
        corrupt_labels(&mut worker_map, n_types, frac_workers, &mut rng);
    }
    // Corrupted market labels of the pre-panel's employed matches (the
    // exposure table is a pre-shock object).
    let mut pre_groups = Vec::new();
    let mut pre_classes = Vec::new();
    for idx in 0..pre.len() {
        if pre.gamma[idx] > 0 {
            pre_groups.push(worker_map[pre.worker[idx] as usize]);
            pre_classes.push(pre.gamma[idx] - 1);
        }
    }
    if n_markets > 1 {
        corrupt_labels(&mut pre_classes, n_markets, frac_jobs, &mut rng);
    }
    let mut table = exposure_table(&pre_groups, &pre_classes)?;
    // Pad columns in case the highest market never appears.
    if table.n_classes < n_markets as usize {
        for row in &mut table.pi {
            row.resize(n_markets as usize, 0.0);
        }
        table.n_classes = n_markets as usize;
    }
    let shock: Vec<f64> = experiment
        .post_equilibrium
        .w
        .iter()
        .zip(&experiment.pre_equilibrium.w)
        .map(|(&post_w, &pre_w)| (post_w / pre_w).ln())
        .collect();
    let bartik = bartik_instrument(&table, &shock)?;
    let delta = delta_outcome(pre, post, Some(&worker_map))?;
    // Align groups present in both the exposure table and the outcome.
    let mut y = Vec::new();
    let mut x = Vec::new();
    let mut weights = Vec::new();
    for (pos, &g) in table.groups.iter().enumerate() {
        if let Ok(at) = delta.groups.binary_search(&g) {
            y.push(delta.delta[at]);
            x.push(bartik[pos]);
            weights.push(table.sizes[pos]);
        }
    }
    let x_std = zscore(&x)?;
    weighted_ols(&y, &x_std, &weights)
}

/// The measurement-error sweep: for every `(frac_workers, frac_jobs)` pair
/// in `fracs × fracs` and every seed, corrupt the classifications and
/// re-run the Bartik regression. Cells run in parallel with per-cell
/// derived seeds; failed cells are skipped.
pub fn misclassification_sweep(
    experiment: &ShockExperiment,
    fracs: &[f64],
    seeds: &[u64],
) -> Vec<SweepCell> {
    let mut cells = Vec::new();
    for (i, &fw) in fracs.iter().enumerate() {
        for (j, &fj) in fracs.iter().enumerate() {
            for (s, &seed) in seeds.iter().enumerate() {
                let cell_seed = crate::rng::derive_seed(
                    seed,
                    "metrics",
                    "sweep",
                    ((i * fracs.len() + j) * seeds.len() + s) as u64,
                );
                cells.push((fw, fj, seed, cell_seed));
            }
        }
    }
    cells
        .into_par_iter()
        .filter_map(|(fw, fj, seed, cell_seed)| {
            shock_regression(experiment, fw, fj, cell_seed)
                .ok()
                .map(|reg| SweepCell {
                    frac_workers: fw,
                    frac_jobs: fj,
                    seed,
                    slope: reg.slope,
                    r_squared: reg.r_squared,
                })
        })
        .collect()
}

/// Spearman rank correlation between two samples (average ranks on ties).
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::DimensionMismatch("spearman inputs".into()));
    }
    let rank = |v: &[f64]| -> Vec<f64> {
        let mut order: Vec<usize> = (0..v.len()).collect();
        order.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
        let mut ranks = vec![0.0; v.len()];
        let mut i = 0;
        while i < order.len() {
            let mut j = i;
            while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &idx in &order[i..=j] {
                ranks[idx] = avg;
            }
            i = j + 1;
        }
        ranks
    };
    let ra = rank(a);
    let rb = rank(b);
    let n = ra.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let cov: f64 = ra.iter().zip(&rb).map(|(&x, &y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|&x| (x - ma) * (x - ma)).sum();
    let vb: f64 = rb.iter().map(|&y| (y - mb) * (y - mb)).sum();
    if va <= 0.0 || vb <= 0.0 {
        return Err(Error::InvalidParameter("constant ranks in spearman".into()));
    }
    Ok(cov / (va.sqrt() * vb.sqrt()))
}
