//! Metropolis–Hastings partition search over the description length.
//!
//! Single-node moves: each sweep proposes a new group for every worker and
//! every job. Proposals mix a uniform draw with a draw biased toward groups
//! adjacent to the node's neighbors; the acceptance probability carries the
//! Hastings correction for that asymmetry, so the chain at constant
//! temperature 1 is stationary on `2^(-Σ)`.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    description_length_from_aggregates, estimate_block_probabilities, log2_choose,
    log2_compositions, log2_factorial, log_likelihood, BlockProbabilityMatrix, LN_2,
};
use crate::error::{Error, Result};
use crate::graph::{BipartiteGraph, Partition};
use crate::rng::stream_rng;

/// Probability of a uniform (unbiased) group proposal.
const UNIFORM_MIX: f64 = 0.1;

/// Annealing schedule for the move-acceptance temperature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TemperatureSchedule {
    Constant { temperature: f64 },
    /// `T_k = max(floor, initial * decay^k)` at sweep `k`.
    Geometric { initial: f64, decay: f64, floor: f64 },
}

impl TemperatureSchedule {
    pub fn at(&self, sweep: usize) -> f64 {
        match *self {
            TemperatureSchedule::Constant { temperature } => temperature,
            TemperatureSchedule::Geometric { initial, decay, floor } => {
                (initial * decay.powi(sweep as i32)).max(floor)
            }
        }
    }
}

impl Default for TemperatureSchedule {
    fn default() -> Self {
        TemperatureSchedule::Geometric { initial: 2.0, decay: 0.9, floor: 1e-4 }
    }
}

/// Settings for [`infer_partition`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceConfig {
    pub restarts: usize,
    pub sweeps_per_restart: usize,
    pub seed: u64,
    /// `(I_min, I_max, Γ_min, Γ_max)`; defaults to a geometric ladder
    /// `1, 2, 4, …` capped at the square root of each side's node count.
    pub group_bounds: Option<(u32, u32, u32, u32)>,
    pub temperature: TemperatureSchedule,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            restarts: 8,
            sweeps_per_restart: 120,
            seed: 0,
            group_bounds: None,
            temperature: TemperatureSchedule::default(),
        }
    }
}

/// Per-restart summary of the search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartTrace {
    pub restart: usize,
    pub initial_types: u32,
    pub initial_markets: u32,
    pub best_sigma: f64,
}

/// Outcome of [`infer_partition`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceResult {
    pub partition: Partition,
    /// Description length Σ in bits.
    pub description_length: f64,
    /// Poisson log-likelihood at the profile MLE propensities, in nats.
    pub log_likelihood: f64,
    pub block_probabilities: BlockProbabilityMatrix,
    pub trace: Vec<RestartTrace>,
    pub seed: u64,
}

/// Mutable block-level aggregates for a partition under construction.
///
/// Holds block edge counts, block degree sums, and group sizes so that a
/// single-node move's ΔΣ is evaluated from the handful of affected terms
/// (O(degree) per move while the effective market count is unchanged).
#[derive(Debug, Clone)]
pub struct ScratchState {
    pub worker_type: Vec<u32>,
    pub market: Vec<u32>,
    /// Allocated group slots; trailing slots may be empty.
    pub types_cap: u32,
    pub markets_cap: u32,
    /// Block edge counts, `types_cap * markets_cap`, row-major.
    e: Vec<u64>,
    /// Block degree sums per worker type / market.
    dw: Vec<u64>,
    dj: Vec<u64>,
    /// Group sizes (nodes, not degree).
    nw: Vec<u64>,
    nj: Vec<u64>,
    i_eff: u32,
    g_eff: u32,
    /// Running Σ in bits; refreshed from scratch at sweep boundaries.
    sigma: f64,
}

impl ScratchState {
    pub fn new(graph: &BipartiteGraph, partition: &Partition) -> Result<Self> {
        if partition.worker_type.len() != graph.n_workers()
            || partition.market.len() != graph.n_jobs()
        {
            return Err(Error::DimensionMismatch(
                "partition does not cover the graph".into(),
            ));
        }
        let types_cap = partition.n_worker_types;
        let markets_cap = partition.n_markets;
        let mut state = Self {
            worker_type: partition.worker_type.clone(),
            market: partition.market.clone(),
            types_cap,
            markets_cap,
            e: vec![0; (types_cap * markets_cap) as usize],
            dw: vec![0; types_cap as usize],
            dj: vec![0; markets_cap as usize],
            nw: vec![0; types_cap as usize],
            nj: vec![0; markets_cap as usize],
            i_eff: 0,
            g_eff: 0,
            sigma: 0.0,
        };
        for &(w, j, m) in graph.edges() {
            let r = state.worker_type[w as usize];
            let g = state.market[j as usize];
            state.e[(r * markets_cap + g) as usize] += u64::from(m);
        }
        for (i, &r) in state.worker_type.iter().enumerate() {
            state.dw[r as usize] += graph.worker_degrees()[i];
            state.nw[r as usize] += 1;
        }
        for (j, &g) in state.market.iter().enumerate() {
            state.dj[g as usize] += graph.job_degrees()[j];
            state.nj[g as usize] += 1;
        }
        state.i_eff = state.nw.iter().filter(|&&n| n > 0).count() as u32;
        state.g_eff = state.nj.iter().filter(|&&n| n > 0).count() as u32;
        state.sigma = state.sigma_full(graph);
        Ok(state)
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn partition(&self) -> Partition {
        let mut p = Partition::with_counts(
            self.worker_type.clone(),
            self.market.clone(),
            self.types_cap,
            self.markets_cap,
        )
        .expect("scratch labels are in range");
        p.compact();
        p
    }

    /// Σ recomputed from the aggregates (same formula as
    /// [`super::description_length`]).
    pub fn sigma_full(&self, graph: &BipartiteGraph) -> f64 {
        let counts: Vec<Vec<u64>> = (0..self.types_cap)
            .map(|r| {
                (0..self.markets_cap)
                    .map(|g| self.e[(r * self.markets_cap + g) as usize])
                    .collect()
            })
            .collect();
        let dw: Vec<f64> = self.dw.iter().map(|&d| d as f64).collect();
        let dj: Vec<f64> = self.dj.iter().map(|&d| d as f64).collect();
        description_length_from_aggregates(graph, &counts, &dw, &dj, &self.nw, &self.nj)
    }

    /// Σ contribution of worker group `r`: the degree-entropy part of S plus
    /// this group's share of the label prior.
    fn worker_group_term(&self, r: u32) -> f64 {
        let d = self.dw[r as usize] as f64;
        let n = self.nw[r as usize] as f64;
        let mut t = 0.0;
        if d > 0.0 {
            t += d * d.ln() / LN_2;
        }
        if n > 0.0 {
            t += -log2_factorial(n);
        }
        t
    }

    fn job_group_term(&self, g: u32) -> f64 {
        let d = self.dj[g as usize] as f64;
        let n = self.nj[g as usize] as f64;
        let mut t = 0.0;
        if d > 0.0 {
            t += d * d.ln() / LN_2;
        }
        if n > 0.0 {
            t += -log2_factorial(n);
        }
        t
    }

    fn cell_term(&self, r: u32, g: u32) -> f64 {
        let e = self.e[(r * self.markets_cap + g) as usize] as f64;
        if e > 0.0 {
            -e * e.ln() / LN_2
        } else {
            0.0
        }
    }

    /// Terms depending only on the effective group counts: the group-size
    /// prior and the count-matrix multiset prior.
    fn global_term(&self, graph: &BipartiteGraph) -> f64 {
        let n = graph.n_workers() as f64;
        let j = graph.n_jobs() as f64;
        let e = graph.total_edges() as f64;
        log2_choose(n - 1.0, f64::from(self.i_eff) - 1.0)
            + log2_choose(j - 1.0, f64::from(self.g_eff) - 1.0)
            + log2_compositions(e, f64::from(self.i_eff) * f64::from(self.g_eff))
    }

    fn apply_worker_move(&mut self, graph: &BipartiteGraph, i: u32, to: u32) {
        let from = self.worker_type[i as usize];
        for &(_, j, m) in graph.worker_edges(i) {
            let g = self.market[j as usize];
            self.e[(from * self.markets_cap + g) as usize] -= u64::from(m);
            self.e[(to * self.markets_cap + g) as usize] += u64::from(m);
        }
        let d = graph.worker_degrees()[i as usize];
        self.dw[from as usize] -= d;
        self.dw[to as usize] += d;
        self.nw[from as usize] -= 1;
        self.nw[to as usize] += 1;
        if self.nw[from as usize] == 0 {
            self.i_eff -= 1;
        }
        if self.nw[to as usize] == 1 {
            self.i_eff += 1;
        }
        self.worker_type[i as usize] = to;
    }

    fn apply_job_move(&mut self, graph: &BipartiteGraph, j: u32, to: u32) {
        let from = self.market[j as usize];
        let pairs: Vec<(u32, u32)> = graph.job_edges(j).collect();
        for (w, m) in pairs {
            let r = self.worker_type[w as usize];
            self.e[(r * self.markets_cap + from) as usize] -= u64::from(m);
            self.e[(r * self.markets_cap + to) as usize] += u64::from(m);
        }
        let d = graph.job_degrees()[j as usize];
        self.dj[from as usize] -= d;
        self.dj[to as usize] += d;
        self.nj[from as usize] -= 1;
        self.nj[to as usize] += 1;
        if self.nj[from as usize] == 0 {
            self.g_eff -= 1;
        }
        if self.nj[to as usize] == 1 {
            self.g_eff += 1;
        }
        self.market[j as usize] = to;
    }

    /// ΔΣ for moving worker `i` to group `to`, evaluated by applying the
    /// move, reading the affected terms, and reverting.
    fn worker_move_delta(&mut self, graph: &BipartiteGraph, i: u32, to: u32) -> f64 {
        let from = self.worker_type[i as usize];
        debug_assert_ne!(from, to);
        let mut before = self.worker_group_term(from)
            + self.worker_group_term(to)
            + self.global_term(graph);
        for g in self.touched_markets(graph, i) {
            before += self.cell_term(from, g) + self.cell_term(to, g);
        }
        self.apply_worker_move(graph, i, to);
        let mut after = self.worker_group_term(from)
            + self.worker_group_term(to)
            + self.global_term(graph);
        for g in self.touched_markets(graph, i) {
            after += self.cell_term(from, g) + self.cell_term(to, g);
        }
        self.apply_worker_move(graph, i, from);
        after - before
    }

    fn job_move_delta(&mut self, graph: &BipartiteGraph, j: u32, to: u32) -> f64 {
        let from = self.market[j as usize];
        debug_assert_ne!(from, to);
        let mut before =
            self.job_group_term(from) + self.job_group_term(to) + self.global_term(graph);
        for r in self.touched_types(graph, j) {
            before += self.cell_term(r, from) + self.cell_term(r, to);
        }
        self.apply_job_move(graph, j, to);
        let mut after =
            self.job_group_term(from) + self.job_group_term(to) + self.global_term(graph);
        for r in self.touched_types(graph, j) {
            after += self.cell_term(r, from) + self.cell_term(r, to);
        }
        self.apply_job_move(graph, j, from);
        after - before
    }

    fn touched_markets(&self, graph: &BipartiteGraph, i: u32) -> Vec<u32> {
        let mut v: Vec<u32> = graph
            .worker_edges(i)
            .iter()
            .map(|&(_, j, _)| self.market[j as usize])
            .collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    fn touched_types(&self, graph: &BipartiteGraph, j: u32) -> Vec<u32> {
        let mut v: Vec<u32> = graph
            .job_edges(j)
            .map(|(w, _)| self.worker_type[w as usize])
            .collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    /// Proposal mass on worker group `s` for worker `i` (mixture of uniform
    /// and neighbor-block frequency).
    fn worker_proposal_mass(&self, graph: &BipartiteGraph, i: u32, s: u32) -> f64 {
        let cap = f64::from(self.types_cap);
        let d = graph.worker_degrees()[i as usize] as f64;
        let mut biased = 0.0;
        for &(_, j, m) in graph.worker_edges(i) {
            let g = self.market[j as usize];
            let e_sg = self.e[(s * self.markets_cap + g) as usize] as f64;
            let dg = self.dj[g as usize] as f64;
            biased += (f64::from(m) / d) * (e_sg + 1.0) / (dg + cap);
        }
        UNIFORM_MIX / cap + (1.0 - UNIFORM_MIX) * biased
    }

    fn job_proposal_mass(&self, graph: &BipartiteGraph, j: u32, s: u32) -> f64 {
        let cap = f64::from(self.markets_cap);
        let d = graph.job_degrees()[j as usize] as f64;
        let mut biased = 0.0;
        for (w, m) in graph.job_edges(j) {
            let r = self.worker_type[w as usize];
            let e_rs = self.e[(r * self.markets_cap + s) as usize] as f64;
            let dr = self.dw[r as usize] as f64;
            biased += (f64::from(m) / d) * (e_rs + 1.0) / (dr + cap);
        }
        UNIFORM_MIX / cap + (1.0 - UNIFORM_MIX) * biased
    }

    fn sample_worker_proposal(&self, graph: &BipartiteGraph, i: u32, rng: &mut ChaCha8Rng) -> u32 {
        if rng.gen::<f64>() < UNIFORM_MIX {
            return rng.gen_range(0..self.types_cap);
        }
        // Pick an incident edge weighted by multiplicity, then a group
        // weighted by (e[s, γ] + 1).
        let d = graph.worker_degrees()[i as usize];
        let mut pick = rng.gen_range(0..d);
        let mut market = 0;
        for &(_, j, m) in graph.worker_edges(i) {
            if pick < u64::from(m) {
                market = self.market[j as usize];
                break;
            }
            pick -= u64::from(m);
        }
        let total = self.dj[market as usize] + u64::from(self.types_cap);
        let mut pick = rng.gen_range(0..total);
        for s in 0..self.types_cap {
            let mass = self.e[(s * self.markets_cap + market) as usize] + 1;
            if pick < mass {
                return s;
            }
            pick -= mass;
        }
        self.types_cap - 1
    }

    fn sample_job_proposal(&self, graph: &BipartiteGraph, j: u32, rng: &mut ChaCha8Rng) -> u32 {
        if rng.gen::<f64>() < UNIFORM_MIX {
            return rng.gen_range(0..self.markets_cap);
        }
        let d = graph.job_degrees()[j as usize];
        let mut pick = rng.gen_range(0..d);
        let mut wtype = 0;
        for (w, m) in graph.job_edges(j) {
            if pick < u64::from(m) {
                wtype = self.worker_type[w as usize];
                break;
            }
            pick -= u64::from(m);
        }
        let total = self.dw[wtype as usize] + u64::from(self.markets_cap);
        let mut pick = rng.gen_range(0..total);
        for s in 0..self.markets_cap {
            let mass = self.e[(wtype * self.markets_cap + s) as usize] + 1;
            if pick < mass {
                return s;
            }
            pick -= mass;
        }
        self.markets_cap - 1
    }

    /// Grows or trims empty group slots between sweeps so the chain can
    /// change its group counts.
    fn adjust_capacity(&mut self, graph: &BipartiteGraph, max_types: u32, max_markets: u32) {
        let empty_w = self.types_cap - self.i_eff;
        if empty_w == 0 && self.types_cap < max_types {
            self.grow_types();
        } else if empty_w > 1 {
            self.compact_types();
        }
        let empty_j = self.markets_cap - self.g_eff;
        if empty_j == 0 && self.markets_cap < max_markets {
            self.grow_markets();
        } else if empty_j > 1 {
            self.compact_markets();
        }
        self.sigma = self.sigma_full(graph);
    }

    fn grow_types(&mut self) {
        self.types_cap += 1;
        self.dw.push(0);
        self.nw.push(0);
        let mut e = vec![0u64; (self.types_cap * self.markets_cap) as usize];
        for r in 0..self.types_cap - 1 {
            for g in 0..self.markets_cap {
                e[(r * self.markets_cap + g) as usize] =
                    self.e[(r * self.markets_cap + g) as usize];
            }
        }
        self.e = e;
    }

    fn grow_markets(&mut self) {
        let old = self.markets_cap;
        self.markets_cap += 1;
        self.dj.push(0);
        self.nj.push(0);
        let mut e = vec![0u64; (self.types_cap * self.markets_cap) as usize];
        for r in 0..self.types_cap {
            for g in 0..old {
                e[(r * self.markets_cap + g) as usize] = self.e[(r * old + g) as usize];
            }
        }
        self.e = e;
    }

    /// Renumbers groups to drop all but one empty slot.
    fn compact_types(&mut self) {
        let mut remap = vec![u32::MAX; self.types_cap as usize];
        let mut next = 0u32;
        for r in 0..self.types_cap {
            if self.nw[r as usize] > 0 {
                remap[r as usize] = next;
                next += 1;
            }
        }
        let new_cap = next + 1; // keep one empty slot
        let mut e = vec![0u64; (new_cap * self.markets_cap) as usize];
        let mut dw = vec![0u64; new_cap as usize];
        let mut nw = vec![0u64; new_cap as usize];
        for r in 0..self.types_cap {
            let nr = remap[r as usize];
            if nr == u32::MAX {
                continue;
            }
            dw[nr as usize] = self.dw[r as usize];
            nw[nr as usize] = self.nw[r as usize];
            for g in 0..self.markets_cap {
                e[(nr * self.markets_cap + g) as usize] =
                    self.e[(r * self.markets_cap + g) as usize];
            }
        }
        for label in &mut self.worker_type {
            *label = remap[*label as usize];
        }
        self.types_cap = new_cap;
        self.e = e;
        self.dw = dw;
        self.nw = nw;
    }

    fn compact_markets(&mut self) {
        let mut remap = vec![u32::MAX; self.markets_cap as usize];
        let mut next = 0u32;
        for g in 0..self.markets_cap {
            if self.nj[g as usize] > 0 {
                remap[g as usize] = next;
                next += 1;
            }
        }
        let new_cap = next + 1;
        let mut e = vec![0u64; (self.types_cap * new_cap) as usize];
        let mut dj = vec![0u64; new_cap as usize];
        let mut nj = vec![0u64; new_cap as usize];
        for g in 0..self.markets_cap {
            let ng = remap[g as usize];
            if ng == u32::MAX {
                continue;
            }
            dj[ng as usize] = self.dj[g as usize];
            nj[ng as usize] = self.nj[g as usize];
            for r in 0..self.types_cap {
                e[(r * new_cap + ng) as usize] = self.e[(r * self.markets_cap + g) as usize];
            }
        }
        for label in &mut self.market {
            *label = remap[*label as usize];
        }
        self.markets_cap = new_cap;
        self.e = e;
        self.dj = dj;
        self.nj = nj;
    }

    #[cfg(test)]
    pub(crate) fn worker_move_delta_for_test(
        &mut self,
        graph: &BipartiteGraph,
        i: u32,
        to: u32,
    ) -> f64 {
        self.worker_move_delta(graph, i, to)
    }

    #[cfg(test)]
    pub(crate) fn job_move_delta_for_test(&mut self, graph: &BipartiteGraph, j: u32, to: u32) -> f64 {
        self.job_move_delta(graph, j, to)
    }
}

/// One pass proposing a move for every worker and every job.
///
/// Returns the number of accepted moves. Zero-degree nodes are skipped:
/// they carry no likelihood signal and stay in their assigned group.
pub fn mcmc_sweep(
    graph: &BipartiteGraph,
    state: &mut ScratchState,
    temperature: f64,
    rng: &mut ChaCha8Rng,
) -> usize {
    let mut accepted = 0;
    for i in 0..graph.n_workers() as u32 {
        if graph.worker_degrees()[i as usize] == 0 {
            continue;
        }
        let from = state.worker_type[i as usize];
        let to = state.sample_worker_proposal(graph, i, rng);
        if to == from {
            continue;
        }
        let q_fwd = state.worker_proposal_mass(graph, i, to);
        let delta = state.worker_move_delta(graph, i, to);
        state.apply_worker_move(graph, i, to);
        let q_rev = state.worker_proposal_mass(graph, i, from);
        let accept = (q_rev / q_fwd) * (-delta * LN_2 / temperature).exp();
        if accept >= 1.0 || rng.gen::<f64>() < accept {
            state.sigma += delta;
            accepted += 1;
        } else {
            state.apply_worker_move(graph, i, from);
        }
    }
    for j in 0..graph.n_jobs() as u32 {
        if graph.job_degrees()[j as usize] == 0 {
            continue;
        }
        let from = state.market[j as usize];
        let to = state.sample_job_proposal(graph, j, rng);
        if to == from {
            continue;
        }
        let q_fwd = state.job_proposal_mass(graph, j, to);
        let delta = state.job_move_delta(graph, j, to);
        state.apply_job_move(graph, j, to);
        let q_rev = state.job_proposal_mass(graph, j, from);
        let accept = (q_rev / q_fwd) * (-delta * LN_2 / temperature).exp();
        if accept >= 1.0 || rng.gen::<f64>() < accept {
            state.sigma += delta;
            accepted += 1;
        } else {
            state.apply_job_move(graph, j, from);
        }
    }
    // Refresh the running Σ so float drift cannot accumulate across sweeps.
    state.sigma = state.sigma_full(graph);
    debug_assert!(block_counts_consistent(graph, state));
    accepted
}

/// One deterministic pass moving every node to its Σ-minimizing group.
///
/// Considers every occupied (and one empty) group for each node and applies
/// the strictly improving argmin move; returns the number of moves made.
pub fn greedy_sweep(graph: &BipartiteGraph, state: &mut ScratchState) -> usize {
    let mut moved = 0;
    for i in 0..graph.n_workers() as u32 {
        if graph.worker_degrees()[i as usize] == 0 {
            continue;
        }
        let from = state.worker_type[i as usize];
        let mut best: Option<(f64, u32)> = None;
        for to in 0..state.types_cap {
            if to == from {
                continue;
            }
            let delta = state.worker_move_delta(graph, i, to);
            if delta < -1e-12 && best.map_or(true, |(d, _)| delta < d) {
                best = Some((delta, to));
            }
        }
        if let Some((delta, to)) = best {
            state.apply_worker_move(graph, i, to);
            state.sigma += delta;
            moved += 1;
        }
    }
    for j in 0..graph.n_jobs() as u32 {
        if graph.job_degrees()[j as usize] == 0 {
            continue;
        }
        let from = state.market[j as usize];
        let mut best: Option<(f64, u32)> = None;
        for to in 0..state.markets_cap {
            if to == from {
                continue;
            }
            let delta = state.job_move_delta(graph, j, to);
            if delta < -1e-12 && best.map_or(true, |(d, _)| delta < d) {
                best = Some((delta, to));
            }
        }
        if let Some((delta, to)) = best {
            state.apply_job_move(graph, j, to);
            state.sigma += delta;
            moved += 1;
        }
    }
    state.sigma = state.sigma_full(graph);
    debug_assert!(block_counts_consistent(graph, state));
    moved
}

/// Applies the Σ-minimizing merge of two occupied groups on either side,
/// repeating while a merge strictly improves; returns whether any applied.
///
/// Single-node moves cannot undo an over-split partition in one step, so
/// the polish phase alternates this with [`greedy_sweep`].
pub fn merge_sweep(graph: &BipartiteGraph, state: &mut ScratchState) -> bool {
    let mut improved = false;
    loop {
        let current = state.sigma_full(graph);
        let tc = state.types_cap as usize;
        let mc = state.markets_cap as usize;
        let counts: Vec<Vec<u64>> = (0..tc)
            .map(|r| (0..mc).map(|g| state.e[r * mc + g]).collect())
            .collect();
        let dw: Vec<f64> = state.dw.iter().map(|&d| d as f64).collect();
        let dj: Vec<f64> = state.dj.iter().map(|&d| d as f64).collect();
        // (Σ after merge, worker side, group absorbed, group absorbing)
        let mut best: Option<(f64, bool, u32, u32)> = None;
        for r1 in 0..tc {
            if state.nw[r1] == 0 {
                continue;
            }
            for r2 in r1 + 1..tc {
                if state.nw[r2] == 0 {
                    continue;
                }
                let mut c = counts.clone();
                for g in 0..mc {
                    c[r1][g] += c[r2][g];
                    c[r2][g] = 0;
                }
                let mut dwm = dw.clone();
                dwm[r1] += dwm[r2];
                dwm[r2] = 0.0;
                let mut nwm = state.nw.clone();
                nwm[r1] += nwm[r2];
                nwm[r2] = 0;
                let s = description_length_from_aggregates(graph, &c, &dwm, &dj, &nwm, &state.nj);
                if s < current - 1e-9 && best.map_or(true, |(b, _, _, _)| s < b) {
                    best = Some((s, true, r2 as u32, r1 as u32));
                }
            }
        }
        for g1 in 0..mc {
            if state.nj[g1] == 0 {
                continue;
            }
            for g2 in g1 + 1..mc {
                if state.nj[g2] == 0 {
                    continue;
                }
                let mut c = counts.clone();
                for row in &mut c {
                    row[g1] += row[g2];
                    row[g2] = 0;
                }
                let mut djm = dj.clone();
                djm[g1] += djm[g2];
                djm[g2] = 0.0;
                let mut njm = state.nj.clone();
                njm[g1] += njm[g2];
                njm[g2] = 0;
                let s = description_length_from_aggregates(graph, &c, &dw, &djm, &state.nw, &njm);
                if s < current - 1e-9 && best.map_or(true, |(b, _, _, _)| s < b) {
                    best = Some((s, false, g2 as u32, g1 as u32));
                }
            }
        }
        match best {
            Some((_, true, from, into)) => {
                let nodes: Vec<u32> = (0..graph.n_workers() as u32)
                    .filter(|&i| state.worker_type[i as usize] == from)
                    .collect();
                for i in nodes {
                    state.apply_worker_move(graph, i, into);
                }
            }
            Some((_, false, from, into)) => {
                let nodes: Vec<u32> = (0..graph.n_jobs() as u32)
                    .filter(|&j| state.market[j as usize] == from)
                    .collect();
                for j in nodes {
                    state.apply_job_move(graph, j, into);
                }
            }
            None => break,
        }
        state.sigma = state.sigma_full(graph);
        debug_assert!(block_counts_consistent(graph, state));
        improved = true;
    }
    improved
}

fn block_counts_consistent(graph: &BipartiteGraph, state: &ScratchState) -> bool {
    let mut e = vec![0u64; (state.types_cap * state.markets_cap) as usize];
    for &(w, j, m) in graph.edges() {
        let r = state.worker_type[w as usize];
        let g = state.market[j as usize];
        e[(r * state.markets_cap + g) as usize] += u64::from(m);
    }
    e == state.e
}

/// Geometric ladder `1, 2, 4, …` capped at `max`.
fn ladder(max: u32) -> Vec<u32> {
    let mut sizes = Vec::new();
    let mut s = 1u32;
    while s <= max {
        sizes.push(s);
        s *= 2;
    }
    if *sizes.last().unwrap() != max {
        sizes.push(max);
    }
    sizes
}

/// Searches for the minimum-description-length partition.
///
/// Runs independent annealed chains from random initial partitions whose
/// sizes span the group bounds, lets each chain change its group counts via
/// empty-slot insertion and compaction between sweeps, and returns the best
/// Σ across chains. Deterministic given the seed, in both single- and
/// multi-threaded runs.
pub fn infer_partition(graph: &BipartiteGraph, config: &InferenceConfig) -> Result<InferenceResult> {
    if graph.total_edges() == 0 {
        return Err(Error::EmptyGraph);
    }
    if config.restarts == 0 {
        return Err(Error::InvalidParameter("restarts must be >= 1".into()));
    }
    let n = graph.n_workers() as u32;
    let j = graph.n_jobs() as u32;
    let default_max_i = (n as f64).sqrt().ceil() as u32;
    let default_max_g = (j as f64).sqrt().ceil() as u32;
    let (i_min, i_max, g_min, g_max) = config
        .group_bounds
        .unwrap_or((1, default_max_i.max(1), 1, default_max_g.max(1)));
    if i_min > i_max || g_min > g_max || i_min == 0 || g_min == 0 {
        return Err(Error::InvalidParameter("inconsistent group bounds".into()));
    }
    let i_max = i_max.min(n);
    let g_max = g_max.min(j);
    let ladder_i: Vec<u32> = ladder(i_max).into_iter().filter(|&s| s >= i_min).collect();
    let ladder_g: Vec<u32> = ladder(g_max).into_iter().filter(|&s| s >= g_min).collect();
    let ladder_i = if ladder_i.is_empty() { vec![i_min] } else { ladder_i };
    let ladder_g = if ladder_g.is_empty() { vec![g_min] } else { ladder_g };

    // Pair the ladders diagonally so both sides start coarse together and
    // fine together; merges are cheap for the chain but splits are not, so
    // restarts must cover initializations at or above the target counts.
    let runs: Vec<(usize, u32, u32)> = (0..config.restarts)
        .map(|k| {
            (
                k,
                ladder_i[k % ladder_i.len()],
                ladder_g[k % ladder_g.len()],
            )
        })
        .collect();

    let results: Vec<(RestartTrace, Partition)> = runs
        .into_par_iter()
        .map(|(k, init_i, init_g)| {
            let mut rng = stream_rng(config.seed, "blockmodel", "restart", k as u64);
            let worker_type = (0..n).map(|_| rng.gen_range(0..init_i)).collect();
            let market = (0..j).map(|_| rng.gen_range(0..init_g)).collect();
            let init = Partition::with_counts(worker_type, market, init_i, init_g)
                .expect("labels in range");
            let mut state = ScratchState::new(graph, &init).expect("dimensions match");
            let mut best_sigma = state.sigma();
            let mut best = state.partition();
            for sweep in 0..config.sweeps_per_restart {
                let t = config.temperature.at(sweep);
                mcmc_sweep(graph, &mut state, t, &mut rng);
                if state.sigma() < best_sigma {
                    best_sigma = state.sigma();
                    best = state.partition();
                }
                state.adjust_capacity(graph, i_max, g_max);
            }
            // Zero-temperature polish: exhaustive best-move descent from the
            // chain's best state until no single-node move lowers Σ.
            let mut state = ScratchState::new(graph, &best).expect("dimensions match");
            loop {
                for _ in 0..200 {
                    if greedy_sweep(graph, &mut state) == 0 {
                        break;
                    }
                }
                if !merge_sweep(graph, &mut state) {
                    break;
                }
            }
            if state.sigma() < best_sigma {
                best_sigma = state.sigma();
                best = state.partition();
            }
            (
                RestartTrace {
                    restart: k,
                    initial_types: init_i,
                    initial_markets: init_g,
                    best_sigma,
                },
                best,
            )
        })
        .collect();

    let mut trace: Vec<RestartTrace> = results.iter().map(|(t, _)| t.clone()).collect();
    trace.sort_by_key(|t| t.restart);
    let (_, best_partition) = results
        .into_iter()
        .min_by(|(a, _), (b, _)| {
            a.best_sigma
                .total_cmp(&b.best_sigma)
                .then(a.restart.cmp(&b.restart))
        })
        .expect("at least one restart");

    let mut partition = best_partition;
    partition.compact();
    let sigma = super::description_length(graph, &partition)?;
    let probabilities = estimate_block_probabilities(graph, &partition)?;
    let ll = log_likelihood(graph, &partition, &probabilities)?;
    Ok(InferenceResult {
        partition,
        description_length: sigma,
        log_likelihood: ll,
        block_probabilities: probabilities,
        trace,
        seed: config.seed,
    })
}
