//! Implementations of the pipeline subcommands.
//!
//! Every command takes a parsed config plus the output directory, writes
//! its primary artifacts and a resolved-config echo there, and returns the
//! process exit code: 0 on success, 2 when a numerical routine failed to
//! converge (outputs are still written with the flag set). Input errors
//! bubble up as `Err` and map to exit code 1.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Serialize;

use labornet::blockmodel::{
    compare_partitions, infer_partition, InferenceConfig, InferenceResult, PartitionAgreement,
};
use labornet::graph::{self, BipartiteGraph, LoadOptions, Partition};
use labornet::metrics;
use labornet::mle;
use labornet::panel::WorkerPanel;
use labornet::roy::{self, EquilibriumState};
use labornet::shock::{self, ExperimentConfig, ShockExperiment, ShockSpec};

use crate::config::*;
use crate::{log_debug, log_info};

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).context("cannot serialize output")?;
    text.push('\n');
    write_text(path, &text)
}

fn create_out(out: &Path) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))
}

fn read_panel(path: &Path) -> Result<WorkerPanel> {
    let file = File::open(path).with_context(|| format!("cannot read {}", path.display()))?;
    WorkerPanel::read_csv(file).with_context(|| format!("invalid panel {}", path.display()))
}

fn write_panel(path: &Path, panel: &WorkerPanel) -> Result<()> {
    let file = File::create(path).with_context(|| format!("cannot write {}", path.display()))?;
    panel.write_csv(BufWriter::new(file))?;
    Ok(())
}

// ---------------------------------------------------------------- cluster

/// Degree histogram rows `degree,count`, ascending.
fn degree_histogram(degrees: &[u64]) -> String {
    let mut counts: std::collections::BTreeMap<u64, u64> = Default::default();
    for &d in degrees {
        *counts.entry(d).or_default() += 1;
    }
    let mut out = String::from("degree,count\n");
    for (d, c) in counts {
        out.push_str(&format!("{d},{c}\n"));
    }
    out
}

/// Reads a `node_kind,node_id,group` partition CSV aligned to a graph.
fn read_partition_csv(path: &Path, graph: &BipartiteGraph) -> Result<Partition> {
    let mut reader = csv::Reader::from_path(path)
        .with_context(|| format!("cannot read {}", path.display()))?;
    let mut worker_index: HashMap<String, u32> = HashMap::new();
    for i in 0..graph.n_workers() {
        worker_index.insert(graph.worker_id(i as u32).to_string(), i as u32);
    }
    let mut job_index: HashMap<String, u32> = HashMap::new();
    for j in 0..graph.n_jobs() {
        job_index.insert(graph.job_id(j as u32).to_string(), j as u32);
    }
    let mut worker_type = vec![u32::MAX; graph.n_workers()];
    let mut market = vec![u32::MAX; graph.n_jobs()];
    for record in reader.records() {
        let record = record.context("bad partition row")?;
        let kind = record.get(0).unwrap_or("");
        let id = record.get(1).unwrap_or("");
        let group: u32 = record
            .get(2)
            .unwrap_or("")
            .trim()
            .parse()
            .with_context(|| format!("bad group for node `{id}`"))?;
        match kind {
            "worker" => {
                if let Some(&i) = worker_index.get(id) {
                    worker_type[i as usize] = group;
                }
            }
            "job" => {
                if let Some(&j) = job_index.get(id) {
                    market[j as usize] = group;
                }
            }
            other => bail!("unknown node_kind `{other}` in {}", path.display()),
        }
    }
    if worker_type.contains(&u32::MAX) || market.contains(&u32::MAX) {
        bail!("partition {} does not cover every graph node", path.display());
    }
    Ok(Partition::new(worker_type, market)?)
}

#[derive(Serialize)]
struct ClusterReport<'a> {
    description_length: f64,
    log_likelihood: f64,
    n_worker_types: u32,
    n_markets: u32,
    n_workers: usize,
    n_jobs: usize,
    total_edges: u64,
    seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    agreement: Option<PartitionAgreement>,
    result: &'a InferenceResult,
}

pub fn cmd_cluster(config: &ClusterConfig, out: &Path) -> Result<i32> {
    create_out(out)?;
    echo_config(config, out)?;
    let graph = graph::load_edge_list(
        &config.edges,
        &LoadOptions { min_job_workers: config.min_job_workers },
    )?;
    log_info(&format!(
        "loaded graph: {} workers, {} jobs, {} edges",
        graph.n_workers(),
        graph.n_jobs(),
        graph.total_edges()
    ));
    let inference = InferenceConfig {
        restarts: config.restarts,
        sweeps_per_restart: config.sweeps_per_restart,
        seed: config.seed,
        group_bounds: config.group_bounds,
        ..InferenceConfig::default()
    };
    let result = infer_partition(&graph, &inference)?;
    log_info(&format!(
        "best partition: {} types x {} markets, description length {:.3} bits",
        result.partition.n_worker_types, result.partition.n_markets, result.description_length
    ));
    let agreement = match &config.truth {
        Some(path) => {
            let truth = read_partition_csv(path, &graph)?;
            Some(compare_partitions(&result.partition, &truth)?)
        }
        None => None,
    };

    let mut partition_csv = Vec::new();
    graph::write_partition_csv(&graph, &result.partition, &mut partition_csv)?;
    fs::write(out.join("partition.csv"), partition_csv)?;
    write_text(out.join("degrees_workers.csv").as_path(), &degree_histogram(graph.worker_degrees()))?;
    write_text(out.join("degrees_jobs.csv").as_path(), &degree_histogram(graph.job_degrees()))?;
    write_json(
        out.join("inference.json").as_path(),
        &ClusterReport {
            description_length: result.description_length,
            log_likelihood: result.log_likelihood,
            n_worker_types: result.partition.n_worker_types,
            n_markets: result.partition.n_markets,
            n_workers: graph.n_workers(),
            n_jobs: graph.n_jobs(),
            total_edges: graph.total_edges(),
            seed: result.seed,
            agreement,
            result: &result,
        },
    )?;
    Ok(0)
}

// ------------------------------------------------------------------ solve

#[derive(Serialize)]
struct SolveReport {
    /// `|Y − wage bill − profits| / Y`.
    walras_residual: f64,
    equilibrium: EquilibriumState,
}

pub fn cmd_solve(config: &SolveConfig, out: &Path) -> Result<i32> {
    create_out(out)?;
    echo_config(config, out)?;
    let bundle = Bundle::load(&config.bundle)?;
    let params = bundle.supply()?;
    let tech = bundle.technology()?;
    let demand = bundle.demand()?;
    let eq = roy::solve_equilibrium(&params, &tech, &demand, &config.solver())?;
    let walras = (eq.income - eq.wage_bill - eq.profits).abs() / eq.income.max(1e-300);
    log_info(&format!(
        "solver {} in {} iterations: labor gap {:.3e}, goods gap {:.3e}",
        if eq.converged { "converged" } else { "did NOT converge" },
        eq.iterations,
        eq.labor_gap,
        eq.goods_gap
    ));
    let converged = eq.converged;
    write_json(
        out.join("equilibrium.json").as_path(),
        &SolveReport { walras_residual: walras, equilibrium: eq },
    )?;
    Ok(if converged { 0 } else { 2 })
}

// --------------------------------------------------------------- estimate

#[derive(Serialize)]
struct EstimateReport {
    estimate: mle::EstimatedParameters,
    masses: Vec<f64>,
    employment_rate: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    k_selection: Option<mle::KSelection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    psi: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    wages: Option<Vec<f64>>,
}

pub fn cmd_estimate(config: &EstimateConfig, out: &Path) -> Result<i32> {
    create_out(out)?;
    echo_config(config, out)?;
    let panel = read_panel(&config.panel)?;
    let mut fit = mle::FitConfig {
        seed: config.seed,
        epsilon_sensitivity: config.epsilon_sensitivity,
        ..mle::FitConfig::default()
    };
    if let Some(eps) = config.zero_cell_epsilon {
        fit.zero_cell_epsilon = eps;
    }
    if let Some(tol) = config.gradient_tol {
        fit.gradient_tol = tol;
    }
    if let Some(n) = config.max_outer {
        fit.max_outer = n;
    }
    if let Some(n) = config.restarts {
        fit.restarts = n;
    }
    let mut estimate = mle::fit_supply_parameters(&panel, &fit)?;
    let masses = mle::type_masses(&panel)?;
    let observed = mle::employment_rate(&panel);
    log_info(&format!(
        "fit {}: log-likelihood {:.4}, gradient norm {:.3e}, nu {:.4}",
        if estimate.converged { "converged" } else { "did NOT converge" },
        estimate.log_likelihood,
        estimate.gradient_norm,
        estimate.nu
    ));

    let mut k_selection = None;
    let mut psi_out = None;
    let mut wages_out = None;
    if let (Some(bundle_path), Some(grid)) = (&config.bundle, &config.k_grid) {
        let bundle = Bundle::load(bundle_path)?;
        let tech = bundle.technology()?;
        let demand = bundle.demand()?;
        let selection = mle::choose_k(
            &estimate.phi,
            &estimate.xi,
            estimate.nu,
            &masses,
            &tech,
            &demand,
            &roy::SolverConfig::default(),
            grid,
            observed,
        )?;
        let (psi, w) = mle::normalize_psi(&estimate.phi, &masses, selection.k)?;
        estimate.k = Some(selection.k);
        log_info(&format!("selected k = {}", selection.k));
        // Re-emit a solvable parameter bundle for the downstream stages.
        write_json(
            out.join("bundle.json").as_path(),
            &Bundle {
                psi: psi.clone(),
                xi: estimate.xi.clone(),
                nu: estimate.nu,
                masses: masses.clone(),
                beta: bundle.beta.clone(),
                a: bundle.a.clone(),
                eta: bundle.eta,
                k: Some(selection.k),
            },
        )?;
        k_selection = Some(selection);
        psi_out = Some(psi);
        wages_out = Some(w);
    }
    let converged = estimate.converged;
    write_json(
        out.join("parameters.json").as_path(),
        &EstimateReport {
            estimate,
            masses,
            employment_rate: observed,
            k_selection,
            psi: psi_out,
            wages: wages_out,
        },
    )?;
    Ok(if converged { 0 } else { 2 })
}

// --------------------------------------------------------------- simulate

pub fn cmd_simulate(config: &SimulateConfig, out: &Path) -> Result<i32> {
    create_out(out)?;
    echo_config(config, out)?;
    let bundle = Bundle::load(&config.bundle)?;
    let params = bundle.supply()?;
    let mut nonconverged = false;
    let wages = match &config.wages {
        Some(w) => {
            if w.len() != params.n_markets() {
                bail!("`wages` must have one entry per market");
            }
            w.clone()
        }
        None => {
            let eq = roy::solve_equilibrium(
                &params,
                &bundle.technology()?,
                &bundle.demand()?,
                &roy::SolverConfig::default(),
            )?;
            if !eq.converged {
                nonconverged = true;
            }
            eq.w
        }
    };
    log_debug(&format!("simulating at wages {wages:?}"));
    let sim = shock::SimConfig {
        n_workers: config.n_workers,
        periods: config.periods,
        lambda: config.lambda,
        sigma: config.sigma.expand(params.n_types(), params.n_markets())?,
        seed: config.seed,
        types: None,
    };
    let mut panel = shock::simulate_panel(&params, &wages, &sim)?;
    if let Some(dist) = &config.sector_given_market {
        shock::attach_sectors(&mut panel, dist, config.seed)?;
    }
    write_panel(out.join("panel.csv").as_path(), &panel)?;
    Ok(if nonconverged { 2 } else { 0 })
}

// ------------------------------------------------------------------ shock

fn regression_csv(reg: &metrics::RegressionResult) -> String {
    let mut text = String::from(
        "intercept,slope,se_intercept,se_slope,robust_se_intercept,robust_se_slope,r_squared,n\n",
    );
    text.push_str(&format!(
        "{},{},{},{},{},{},{},{}\n",
        reg.intercept,
        reg.slope,
        reg.se_intercept,
        reg.se_slope,
        reg.robust_se_intercept,
        reg.robust_se_slope,
        reg.r_squared,
        reg.n
    ));
    text
}

fn sanitize_label(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '-' })
        .collect()
}

#[derive(Serialize)]
struct ShockSummaryEntry {
    label: String,
    ok: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    converged: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    wage_log_change: Option<Vec<f64>>,
}

fn write_experiment_dir(dir: &Path, experiment: &ShockExperiment) -> Result<ShockSummaryEntry> {
    fs::create_dir_all(dir)?;
    write_json(dir.join("manifest.json").as_path(), experiment)?;
    write_panel(dir.join("pre_panel.csv").as_path(), &experiment.pre_panel)?;
    write_panel(dir.join("post_panel.csv").as_path(), &experiment.post_panel)?;
    let wage_change: Vec<f64> = experiment
        .post_equilibrium
        .w
        .iter()
        .zip(&experiment.pre_equilibrium.w)
        .map(|(&post, &pre)| (post / pre).ln())
        .collect();
    // The uncorrupted Bartik regression (corruption fractions 0, so the
    // seed is never consumed and the table is deterministic).
    match metrics::shock_regression(experiment, 0.0, 0.0, experiment.seed) {
        Ok(reg) => write_text(dir.join("regression.csv").as_path(), &regression_csv(&reg))?,
        Err(err) => log_info(&format!("regression skipped: {err}")),
    }
    Ok(ShockSummaryEntry {
        label: experiment.shock.label.clone(),
        ok: true,
        error: None,
        converged: Some(
            experiment.pre_equilibrium.converged && experiment.post_equilibrium.converged,
        ),
        wage_log_change: Some(wage_change),
    })
}

fn experiment_config(
    bundle: &Bundle,
    n_workers: usize,
    periods: u32,
    lambda: f64,
    sigma: &SigmaSpec,
    seed: u64,
    paired: bool,
) -> Result<ExperimentConfig> {
    let params = bundle.supply()?;
    let mut cfg = ExperimentConfig::new(
        n_workers,
        lambda,
        sigma.expand(params.n_types(), params.n_markets())?,
        seed,
    );
    cfg.periods = periods;
    cfg.paired = paired;
    Ok(cfg)
}

pub fn cmd_shock(config: &ShockConfig, out: &Path) -> Result<i32> {
    create_out(out)?;
    echo_config(config, out)?;
    if config.shocks.is_empty() {
        bail!("no shocks configured");
    }
    let bundle = Bundle::load(&config.bundle)?;
    let params = bundle.supply()?;
    let tech = bundle.technology()?;
    let demand = bundle.demand()?;
    let cfg = experiment_config(
        &bundle,
        config.n_workers,
        config.periods,
        config.lambda,
        &config.sigma,
        config.seed,
        config.paired,
    )?;
    let shocks: Vec<ShockSpec> = config
        .shocks
        .iter()
        .map(|s| ShockSpec::multiply(s.sector, s.factor, s.label.clone()))
        .collect();
    let results = shock::shock_sweep(&params, &tech, &demand, &shocks, &cfg);

    let mut summary = Vec::new();
    let mut worst = 0;
    for (label, result) in results {
        match result {
            Ok(experiment) => {
                let entry =
                    write_experiment_dir(&out.join(sanitize_label(&label)), &experiment)?;
                if entry.converged == Some(false) {
                    worst = worst.max(2);
                }
                log_info(&format!("shock `{label}` done"));
                summary.push(entry);
            }
            Err(err) => {
                log_info(&format!("shock `{label}` failed: {err}"));
                worst = worst.max(2);
                summary.push(ShockSummaryEntry {
                    label,
                    ok: false,
                    error: Some(err.to_string()),
                    converged: None,
                    wage_log_change: None,
                });
            }
        }
    }
    write_json(out.join("summary.json").as_path(), &summary)?;
    Ok(worst)
}

// ------------------------------------------------------------------ sweep

pub fn cmd_sweep(config: &SweepConfig, out: &Path) -> Result<i32> {
    create_out(out)?;
    echo_config(config, out)?;
    if config.fracs.is_empty() || config.seeds.is_empty() {
        bail!("`fracs` and `seeds` must be non-empty");
    }
    let bundle = Bundle::load(&config.bundle)?;
    let params = bundle.supply()?;
    let tech = bundle.technology()?;
    let demand = bundle.demand()?;
    let cfg = experiment_config(
        &bundle,
        config.n_workers,
        config.periods,
        config.lambda,
        &config.sigma,
        config.seed,
        true,
    )?;
    let spec = ShockSpec::multiply(
        config.shock.sector,
        config.shock.factor,
        config.shock.label.clone(),
    );
    let experiment = shock::run_shock_experiment(&params, &tech, &demand, &spec, &cfg)?;
    if !(experiment.pre_equilibrium.converged && experiment.post_equilibrium.converged) {
        write_json(out.join("manifest.json").as_path(), &experiment)?;
        return Ok(2);
    }
    write_json(out.join("manifest.json").as_path(), &experiment)?;
    let cells = metrics::misclassification_sweep(&experiment, &config.fracs, &config.seeds);
    log_info(&format!("{} sweep cells computed", cells.len()));

    // Long format, one row per cell.
    let mut text = String::from("frac_workers,frac_jobs,seed,slope,r2\n");
    for cell in &cells {
        text.push_str(&format!(
            "{},{},{},{},{}\n",
            cell.frac_workers, cell.frac_jobs, cell.seed, cell.slope, cell.r_squared
        ));
    }
    write_text(out.join("sweep.csv").as_path(), &text)?;

    // Seed-averaged surface for plotting.
    let mut surface = String::from("frac_workers,frac_jobs,mean_slope,mean_r2,cells\n");
    for &fw in &config.fracs {
        for &fj in &config.fracs {
            let sel: Vec<&metrics::SweepCell> = cells
                .iter()
                .filter(|c| c.frac_workers == fw && c.frac_jobs == fj)
                .collect();
            if sel.is_empty() {
                continue;
            }
            let n = sel.len() as f64;
            let mean_slope = sel.iter().map(|c| c.slope).sum::<f64>() / n;
            let mean_r2 = sel.iter().map(|c| c.r_squared).sum::<f64>() / n;
            surface.push_str(&format!("{fw},{fj},{mean_slope},{mean_r2},{}\n", sel.len()));
        }
    }
    write_text(out.join("surface.csv").as_path(), &surface)?;
    Ok(0)
}

// ---------------------------------------------------------------- analyze

fn wage_change_from_manifest(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .with_context(|| format!("invalid manifest {}", path.display()))?;
    let pull = |key: &str| -> Result<Vec<f64>> {
        value[key]["w"]
            .as_array()
            .map(|arr| arr.iter().filter_map(|v| v.as_f64()).collect())
            .with_context(|| format!("manifest lacks {key}.w"))
    };
    let pre = pull("pre_equilibrium")?;
    let post = pull("post_equilibrium")?;
    if pre.len() != post.len() || pre.is_empty() {
        bail!("manifest wage vectors are inconsistent");
    }
    Ok(post.iter().zip(&pre).map(|(&a, &b)| (a / b).ln()).collect())
}

fn hhi_csv(profile: &metrics::HhiProfile) -> String {
    // Rows ascending by HHI so dispersed groups lead the table.
    let mut order: Vec<usize> = (0..profile.groups.len()).collect();
    order.sort_by(|&a, &b| {
        profile.hhi[a]
            .total_cmp(&profile.hhi[b])
            .then_with(|| profile.groups[a].cmp(&profile.groups[b]))
    });
    let mut text = String::from("group,hhi,size\n");
    for idx in order {
        text.push_str(&format!(
            "{},{},{}\n",
            profile.groups[idx], profile.hhi[idx], profile.sizes[idx]
        ));
    }
    text
}

pub fn cmd_analyze(config: &AnalyzeConfig, out: &Path) -> Result<i32> {
    create_out(out)?;
    echo_config(config, out)?;
    let pre = read_panel(&config.pre_panel)?;

    // Worker-side and job-side exposure/concentration from the pre panel.
    let mut groups = Vec::new();
    let mut classes = Vec::new();
    for idx in 0..pre.len() {
        if pre.gamma[idx] > 0 {
            groups.push(pre.iota[idx]);
            classes.push(pre.gamma[idx] - 1);
        }
    }
    if groups.is_empty() {
        bail!("pre panel has no employed observations");
    }
    let table = metrics::exposure_table(&groups, &classes)?;
    let mut exposure = String::from("group,class,pi\n");
    for (pos, &g) in table.groups.iter().enumerate() {
        for (s, &p) in table.pi[pos].iter().enumerate() {
            exposure.push_str(&format!("{g},{s},{p}\n"));
        }
    }
    write_text(out.join("exposure.csv").as_path(), &exposure)?;
    write_text(
        out.join("hhi_workers.csv").as_path(),
        &hhi_csv(&metrics::hhi_profile(&table)),
    )?;
    let job_table = metrics::exposure_table(&classes, &groups)?;
    write_text(
        out.join("hhi_jobs.csv").as_path(),
        &hhi_csv(&metrics::hhi_profile(&job_table)),
    )?;

    if let Some(label) = &config.crosstab_label {
        let rows = metrics::classification_crosstab(&pre, label, config.top_n)?;
        let mut text = String::from("group,label,share,count\n");
        for row in rows {
            text.push_str(&format!(
                "{},{},{},{}\n",
                row.group, row.label, row.share, row.count
            ));
        }
        write_text(out.join("crosstab.csv").as_path(), &text)?;
    }

    let shock_vec = match (&config.experiment, &config.wage_log_change) {
        (Some(path), None) => Some(wage_change_from_manifest(path)?),
        (None, Some(v)) => Some(v.clone()),
        (None, None) => None,
        (Some(_), Some(_)) => bail!("give either `experiment` or `wage_log_change`, not both"),
    };

    if let Some(post_path) = &config.post_panel {
        let post = read_panel(post_path)?;
        let delta = metrics::delta_outcome(&pre, &post, None)?;
        let mut text = String::from("group,delta,size\n");
        for (pos, &g) in delta.groups.iter().enumerate() {
            text.push_str(&format!("{g},{},{}\n", delta.delta[pos], delta.sizes[pos]));
        }
        write_text(out.join("delta.csv").as_path(), &text)?;

        if let Some(shock_vec) = &shock_vec {
            let mut padded = table.clone();
            if padded.n_classes < shock_vec.len() {
                for row in &mut padded.pi {
                    row.resize(shock_vec.len(), 0.0);
                }
                padded.n_classes = shock_vec.len();
            }
            let bartik = metrics::bartik_instrument(&padded, shock_vec)?;
            let mut y = Vec::new();
            let mut x = Vec::new();
            let mut weights = Vec::new();
            for (pos, &g) in padded.groups.iter().enumerate() {
                if let Ok(at) = delta.groups.binary_search(&g) {
                    y.push(delta.delta[at]);
                    x.push(bartik[pos]);
                    weights.push(padded.sizes[pos]);
                }
            }
            let reg = metrics::weighted_ols(&y, &metrics::zscore(&x)?, &weights)?;
            log_info(&format!(
                "Bartik regression: slope {:.4}, R2 {:.4}, n {}",
                reg.slope, reg.r_squared, reg.n
            ));
            write_text(out.join("regression.csv").as_path(), &regression_csv(&reg))?;
        }
    } else if shock_vec.is_some() {
        bail!("a regression needs `post_panel`");
    }
    Ok(0)
}
