//! Degree-corrected bipartite stochastic block model.
//!
//! Edges between worker `i` and job `j` are Poisson with mean
//! `d_i * d_j * P[ι(i)][γ(j)]`, where `P` is the matrix of block-level match
//! propensities. The partition of workers into types and jobs into markets is
//! inferred by minimizing a two-part description length `Σ = S + L`:
//!
//! * `S` is the number of bits to encode the network given the partition,
//!   degrees, and the profile maximum-likelihood propensities;
//! * `L` is the number of bits to encode the partition itself.
//!
//! The exact prior family behind `L` is a pinned convention of this crate
//! (see [`description_length`]); description lengths are comparable across
//! runs of this implementation but not across third-party tools.

mod compare;
mod mcmc;
mod sample;

pub use compare::{compare_partitions, PartitionAgreement, SideAgreement};
pub use mcmc::{
    infer_partition, mcmc_sweep, InferenceConfig, InferenceResult, RestartTrace, ScratchState,
    TemperatureSchedule,
};
pub use sample::sample_network;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::graph::{block_edge_counts, BipartiteGraph, Partition};

pub(crate) const LN_2: f64 = std::f64::consts::LN_2;

/// Block-level match propensities `P[ι][γ]`, per unit of `d_i * d_j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockProbabilityMatrix {
    pub p: Vec<Vec<f64>>,
}

impl BlockProbabilityMatrix {
    pub fn new(p: Vec<Vec<f64>>) -> Result<Self> {
        let cols = p.first().map_or(0, Vec::len);
        for row in &p {
            if row.len() != cols {
                return Err(Error::DimensionMismatch("ragged propensity matrix".into()));
            }
            for &v in row {
                if !(v.is_finite() && v >= 0.0) {
                    return Err(Error::InvalidParameter(
                        "propensities must be finite and nonnegative".into(),
                    ));
                }
            }
        }
        Ok(Self { p })
    }

    pub fn n_worker_types(&self) -> usize {
        self.p.len()
    }

    pub fn n_markets(&self) -> usize {
        self.p.first().map_or(0, Vec::len)
    }

    /// Expected block edge counts `P[ι][γ] * D_ι * D_γ` under the
    /// degree-corrected parameterization.
    pub fn expected_block_edges(&self, worker_deg_sums: &[f64], job_deg_sums: &[f64]) -> Vec<Vec<f64>> {
        self.p
            .iter()
            .enumerate()
            .map(|(i, row)| {
                row.iter()
                    .enumerate()
                    .map(|(g, &p)| p * worker_deg_sums[i] * job_deg_sums[g])
                    .collect()
            })
            .collect()
    }
}

/// Sums of degrees within each worker type and each market.
pub fn block_degree_sums(graph: &BipartiteGraph, partition: &Partition) -> (Vec<f64>, Vec<f64>) {
    let mut dw = vec![0.0; partition.n_worker_types as usize];
    for (i, &g) in partition.worker_type.iter().enumerate() {
        dw[g as usize] += graph.worker_degrees()[i] as f64;
    }
    let mut dj = vec![0.0; partition.n_markets as usize];
    for (j, &g) in partition.market.iter().enumerate() {
        dj[g as usize] += graph.job_degrees()[j] as f64;
    }
    (dw, dj)
}

/// Poisson log-likelihood of the network in nats.
///
/// Evaluates `Σ_{i,j} [A_ij ln(d_i d_j P_ιγ) − ln(A_ij!) − d_i d_j P_ιγ]`
/// using the stored edges plus the closed-form zero-edge mass
/// `Σ_ιγ P_ιγ D_ι D_γ`; the dense worker-by-job product is never built.
///
/// Returns `-inf` when some observed edge sits in a zero-propensity block.
pub fn log_likelihood(
    graph: &BipartiteGraph,
    partition: &Partition,
    p: &BlockProbabilityMatrix,
) -> Result<f64> {
    if p.n_worker_types() != partition.n_worker_types as usize
        || p.n_markets() != partition.n_markets as usize
    {
        return Err(Error::DimensionMismatch(format!(
            "propensity matrix is {}x{}, partition has {}x{} groups",
            p.n_worker_types(),
            p.n_markets(),
            partition.n_worker_types,
            partition.n_markets
        )));
    }
    if partition.worker_type.len() != graph.n_workers()
        || partition.market.len() != graph.n_jobs()
    {
        return Err(Error::DimensionMismatch(
            "partition does not cover the graph".into(),
        ));
    }
    let (dw_sums, dj_sums) = block_degree_sums(graph, partition);
    let mut ll = 0.0;
    for &(w, j, m) in graph.edges() {
        let prop = p.p[partition.worker_type[w as usize] as usize]
            [partition.market[j as usize] as usize];
        if prop <= 0.0 {
            // Impossible configuration: an observed match in a zero block.
            return Ok(f64::NEG_INFINITY);
        }
        let a = f64::from(m);
        let di = graph.worker_degrees()[w as usize] as f64;
        let dj = graph.job_degrees()[j as usize] as f64;
        ll += a * (di * dj * prop).ln() - ln_gamma(a + 1.0);
    }
    for (i, row) in p.p.iter().enumerate() {
        for (g, &prop) in row.iter().enumerate() {
            ll -= prop * dw_sums[i] * dj_sums[g];
        }
    }
    Ok(ll)
}

/// Profile maximum-likelihood propensities `ê_ιγ / (D_ι D_γ)`.
///
/// Cells whose block degree product is zero get propensity 0.
pub fn estimate_block_probabilities(
    graph: &BipartiteGraph,
    partition: &Partition,
) -> Result<BlockProbabilityMatrix> {
    let counts = block_edge_counts(graph, partition)?;
    let (dw_sums, dj_sums) = block_degree_sums(graph, partition);
    let p = counts
        .iter()
        .enumerate()
        .map(|(i, row)| {
            row.iter()
                .enumerate()
                .map(|(g, &e)| {
                    let denom = dw_sums[i] * dj_sums[g];
                    if denom > 0.0 {
                        e as f64 / denom
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    BlockProbabilityMatrix::new(p)
}

pub(crate) fn log2_factorial(n: f64) -> f64 {
    ln_gamma(n + 1.0) / LN_2
}

/// `log2 C(n, k)` via log-gamma.
pub(crate) fn log2_choose(n: f64, k: f64) -> f64 {
    if k < 0.0 || k > n {
        return f64::NEG_INFINITY;
    }
    (ln_gamma(n + 1.0) - ln_gamma(k + 1.0) - ln_gamma(n - k + 1.0)) / LN_2
}

/// `log2` of the number of ways to write `total` as an ordered sum of
/// `parts` nonnegative integers.
pub(crate) fn log2_compositions(total: f64, parts: f64) -> f64 {
    if parts <= 0.0 {
        return 0.0;
    }
    log2_choose(total + parts - 1.0, parts - 1.0)
}

/// Two-part description length `Σ = S + L` in bits.
///
/// `S = −log2 P(A | ι, γ, d, P̂)` is the network cost at the profile MLE
/// propensities. `L` is the parameter cost under this crate's pinned prior
/// family, evaluated on the *effective* (non-empty) group counts `I`, `Γ`:
///
/// 1. group counts: `log2 N + log2 J` (uniform over `1..=N`, `1..=J`);
/// 2. group sizes: `log2 C(N−1, I−1) + log2 C(J−1, Γ−1)`;
/// 3. labels given sizes: `log2 N!/Π n_ι! + log2 J!/Π n_γ!`;
/// 4. degree sequences: the full sequences encoded globally as multisets
///    of `E` edge endpoints over nodes, `log2 C(E + N − 1, N − 1) +
///    log2 C(E + J − 1, J − 1)`, independent of the partition (a
///    per-block encoding is concave in the block degree total and would
///    reward degree-sorted groupings over the generative blocks);
/// 5. block count matrix: a multiset of `E` edge units over the `I × Γ`
///    cells, `log2 C(E + IΓ − 1, IΓ − 1)`.
///
/// Empty groups carry no cost, so Σ is invariant under label permutation
/// and under inserting unused groups.
pub fn description_length(graph: &BipartiteGraph, partition: &Partition) -> Result<f64> {
    let counts = block_edge_counts(graph, partition)?;
    let (dw_sums, dj_sums) = block_degree_sums(graph, partition);
    let worker_sizes = partition.worker_group_sizes();
    let job_sizes = partition.job_group_sizes();
    Ok(description_length_from_aggregates(
        graph,
        &counts,
        &dw_sums,
        &dj_sums,
        &worker_sizes,
        &job_sizes,
    ))
}

/// Σ computed from block-level aggregates; shared with the MCMC scratch
/// state so sweeps and from-scratch evaluation agree exactly.
pub(crate) fn description_length_from_aggregates(
    graph: &BipartiteGraph,
    counts: &[Vec<u64>],
    dw_sums: &[f64],
    dj_sums: &[f64],
    worker_sizes: &[u64],
    job_sizes: &[u64],
) -> f64 {
    let n = graph.n_workers() as f64;
    let j = graph.n_jobs() as f64;
    let e_total = graph.total_edges() as f64;
    let i_eff = worker_sizes.iter().filter(|&&s| s > 0).count() as f64;
    let g_eff = job_sizes.iter().filter(|&&s| s > 0).count() as f64;

    // S in nats: constant edge term + block profile term.
    let mut ll = edge_constant_nats(graph);
    for (i, row) in counts.iter().enumerate() {
        for (g, &e) in row.iter().enumerate() {
            if e > 0 {
                let e = e as f64;
                ll += e * (e / (dw_sums[i] * dj_sums[g])).ln();
            }
        }
    }
    ll -= e_total;
    let s_bits = -ll / LN_2;

    // L: pinned prior family, effective groups only.
    let mut l_bits = n.log2() + j.log2();
    l_bits += log2_choose(n - 1.0, i_eff - 1.0) + log2_choose(j - 1.0, g_eff - 1.0);
    l_bits += log2_factorial(n) + log2_factorial(j);
    l_bits += log2_compositions(e_total, i_eff * g_eff);
    l_bits += log2_compositions(e_total, n) + log2_compositions(e_total, j);
    for &size in worker_sizes {
        if size > 0 {
            l_bits -= log2_factorial(size as f64);
        }
    }
    for &size in job_sizes {
        if size > 0 {
            l_bits -= log2_factorial(size as f64);
        }
    }
    s_bits + l_bits
}

/// Partition-independent part of the Poisson log-likelihood in nats:
/// `Σ_edges [A ln(d_i d_j) − ln A!]`.
pub(crate) fn edge_constant_nats(graph: &BipartiteGraph) -> f64 {
    let mut acc = 0.0;
    for &(w, jj, m) in graph.edges() {
        let a = f64::from(m);
        let di = graph.worker_degrees()[w as usize] as f64;
        let dj = graph.job_degrees()[jj as usize] as f64;
        acc += a * (di * dj).ln() - ln_gamma(a + 1.0);
    }
    acc
}

/// Enumerates every partition of the graph with at most `max_types` worker
/// groups and `max_markets` markets and returns the Σ-minimizing one.
///
/// Exponential in the node counts; intended for desk-scale verification.
pub fn exhaustive_search(
    graph: &BipartiteGraph,
    max_types: u32,
    max_markets: u32,
) -> Result<(Partition, f64)> {
    let n = graph.n_workers();
    let j = graph.n_jobs();
    let mut best: Option<(Partition, f64)> = None;
    let mut worker_labels = vec![0u32; n];
    let mut job_labels = vec![0u32; j];
    enumerate_labelings(&mut worker_labels, 0, max_types, &mut |wl| {
        let wl = wl.to_vec();
        enumerate_labelings(&mut job_labels, 0, max_markets, &mut |jl| {
            let mut p = Partition::new(wl.clone(), jl.to_vec()).unwrap();
            p.compact();
            let sigma = description_length(graph, &p).unwrap();
            match &best {
                Some((_, b)) if *b <= sigma => {}
                _ => best = Some((p, sigma)),
            }
        });
    });
    best.ok_or(Error::EmptyGraph)
}

/// Visits each labeling in restricted-growth form (first occurrence of each
/// label is in increasing order), which enumerates set partitions without
/// label-permutation duplicates.
fn enumerate_labelings(
    labels: &mut Vec<u32>,
    pos: usize,
    max_groups: u32,
    visit: &mut impl FnMut(&[u32]),
) {
    if pos == labels.len() {
        visit(labels);
        return;
    }
    let used = labels[..pos].iter().copied().max().map_or(0, |m| m + 1);
    for g in 0..=used.min(max_groups - 1) {
        labels[pos] = g;
        enumerate_labelings(labels, pos + 1, max_groups, visit);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_graph, BipartiteGraph, LoadOptions};
    use approx::assert_relative_eq;

    fn small_graph() -> BipartiteGraph {
        BipartiteGraph::from_indexed_edges(
            vec!["w0".into(), "w1".into()],
            vec!["j0".into(), "j1".into()],
            [(0, 0, 2), (0, 1, 1), (1, 0, 1), (1, 1, 3)],
        )
        .unwrap()
    }

    /// Dense oracle: evaluates the Poisson log-pmf over every worker-job
    /// pair, including zero cells.
    fn dense_log_likelihood(
        graph: &BipartiteGraph,
        partition: &Partition,
        p: &BlockProbabilityMatrix,
    ) -> f64 {
        let mut a = vec![vec![0.0; graph.n_jobs()]; graph.n_workers()];
        for &(w, j, m) in graph.edges() {
            a[w as usize][j as usize] = f64::from(m);
        }
        let mut ll = 0.0;
        for i in 0..graph.n_workers() {
            for j in 0..graph.n_jobs() {
                let mean = graph.worker_degrees()[i] as f64
                    * graph.job_degrees()[j] as f64
                    * p.p[partition.worker_type[i] as usize][partition.market[j] as usize];
                let aij = a[i][j];
                if aij > 0.0 {
                    ll += aij * mean.ln() - ln_gamma(aij + 1.0);
                }
                ll -= mean;
            }
        }
        ll
    }

    #[test]
    fn sparse_matches_dense_oracle() {
        let g = small_graph();
        let p1 = Partition::trivial(2, 2);
        let prob = estimate_block_probabilities(&g, &p1).unwrap();
        let sparse = log_likelihood(&g, &p1, &prob).unwrap();
        assert_relative_eq!(sparse, dense_log_likelihood(&g, &p1, &prob), max_relative = 1e-12);

        let p2 = Partition::new(vec![0, 1], vec![0, 1]).unwrap();
        let prob2 = estimate_block_probabilities(&g, &p2).unwrap();
        let sparse2 = log_likelihood(&g, &p2, &prob2).unwrap();
        assert_relative_eq!(sparse2, dense_log_likelihood(&g, &p2, &prob2), max_relative = 1e-12);
    }

    #[test]
    fn sparse_matches_dense_on_sample_table() {
        let g = build_graph(crate::graph::tests_sample_rows(), &LoadOptions::default()).unwrap();
        let p = Partition::new(
            (0..g.n_workers() as u32).map(|i| i % 3).collect(),
            (0..g.n_jobs() as u32).map(|j| j % 2).collect(),
        )
        .unwrap();
        let prob = estimate_block_probabilities(&g, &p).unwrap();
        let sparse = log_likelihood(&g, &p, &prob).unwrap();
        assert_relative_eq!(sparse, dense_log_likelihood(&g, &p, &prob), max_relative = 1e-9);
    }

    #[test]
    fn reparameterization_invariance() {
        // Scaling P by 1/c while scaling worker degrees by c keeps the
        // Poisson means fixed; here we check the pure P-rescale identity on
        // means via the dense oracle instead, holding the graph fixed.
        let g = small_graph();
        let p = Partition::trivial(2, 2);
        let prob = estimate_block_probabilities(&g, &p).unwrap();
        let ll = log_likelihood(&g, &p, &prob).unwrap();
        // Rebuild a graph with degrees doubled via doubled multiplicities is
        // a different network; instead verify the invariance algebraically:
        // means d_i d_j P are what enter, so evaluating the dense oracle with
        // (2 d_i, P/2) must match.
        let mut ll2 = 0.0;
        for i in 0..g.n_workers() {
            for j in 0..g.n_jobs() {
                let a = g
                    .edges()
                    .iter()
                    .find(|&&(w, jj, _)| w as usize == i && jj as usize == j)
                    .map_or(0.0, |&(_, _, m)| f64::from(m));
                let mean = (2.0 * g.worker_degrees()[i] as f64)
                    * g.job_degrees()[j] as f64
                    * (prob.p[0][0] / 2.0);
                if a > 0.0 {
                    ll2 += a * mean.ln() - ln_gamma(a + 1.0);
                }
                ll2 -= mean;
            }
        }
        assert_relative_eq!(ll, ll2, max_relative = 1e-12);
    }

    #[test]
    fn one_block_propensity_is_inverse_edges() {
        let g = small_graph();
        let p = Partition::trivial(2, 2);
        let prob = estimate_block_probabilities(&g, &p).unwrap();
        assert_relative_eq!(prob.p[0][0], 1.0 / g.total_edges() as f64, max_relative = 1e-12);
    }

    #[test]
    fn zero_edge_block_propensity_is_zero() {
        // Worker 1 never matches job 0's market under this split.
        let g = BipartiteGraph::from_indexed_edges(
            vec!["a".into(), "b".into()],
            vec!["x".into(), "y".into()],
            [(0, 0, 3), (1, 1, 2)],
        )
        .unwrap();
        let p = Partition::new(vec![0, 1], vec![0, 1]).unwrap();
        let prob = estimate_block_probabilities(&g, &p).unwrap();
        assert_eq!(prob.p[0][1], 0.0);
        assert_eq!(prob.p[1][0], 0.0);
    }

    #[test]
    fn impossible_configuration_reports_neg_infinity() {
        let g = small_graph();
        let p = Partition::trivial(2, 2);
        let prob = BlockProbabilityMatrix::new(vec![vec![0.0]]).unwrap();
        assert_eq!(log_likelihood(&g, &p, &prob).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn profile_mle_dominates_perturbations() {
        let g = build_graph(crate::graph::tests_sample_rows(), &LoadOptions::default()).unwrap();
        let p = Partition::new(
            (0..g.n_workers() as u32).map(|i| u32::from(i >= 5)).collect(),
            (0..g.n_jobs() as u32).map(|j| j % 2).collect(),
        )
        .unwrap();
        let mle = estimate_block_probabilities(&g, &p).unwrap();
        let base = log_likelihood(&g, &p, &mle).unwrap();
        use rand::prelude::*;
        let mut rng = crate::rng::stream_rng(7, "test", "perturb", 0);
        for _ in 0..50 {
            let perturbed: Vec<Vec<f64>> = mle
                .p
                .iter()
                .map(|row| {
                    row.iter()
                        .map(|&v| {
                            if v > 0.0 {
                                v * (1.0 + rng.gen_range(-0.5..0.5))
                            } else {
                                v
                            }
                        })
                        .collect()
                })
                .collect();
            let other = BlockProbabilityMatrix::new(perturbed).unwrap();
            let ll = log_likelihood(&g, &p, &other).unwrap();
            assert!(ll <= base + 1e-9, "perturbed P beat the profile MLE");
        }
    }

    #[test]
    fn description_length_invariant_under_relabeling() {
        let g = build_graph(crate::graph::tests_sample_rows(), &LoadOptions::default()).unwrap();
        let p = Partition::new(
            (0..g.n_workers() as u32).map(|i| i % 2).collect(),
            (0..g.n_jobs() as u32).map(|j| j % 2).collect(),
        )
        .unwrap();
        let swapped = Partition::new(
            p.worker_type.iter().map(|&g| 1 - g).collect(),
            p.market.iter().map(|&g| 1 - g).collect(),
        )
        .unwrap();
        let a = description_length(&g, &p).unwrap();
        let b = description_length(&g, &swapped).unwrap();
        assert_relative_eq!(a, b, max_relative = 1e-12);
    }

    #[test]
    fn planted_two_by_two_minimizes_sigma() {
        // Two worker pairs matching their own job pair with heavy
        // multiplicity; the planted 2x2 split must beat every partition
        // with at most 3 groups per side (exhaustive oracle).
        let g = BipartiteGraph::from_indexed_edges(
            vec!["w0".into(), "w1".into(), "w2".into(), "w3".into()],
            vec!["j0".into(), "j1".into(), "j2".into(), "j3".into()],
            [
                (0, 0, 6),
                (0, 1, 6),
                (1, 0, 6),
                (1, 1, 6),
                (2, 2, 6),
                (2, 3, 6),
                (3, 2, 6),
                (3, 3, 6),
            ],
        )
        .unwrap();
        let (best, sigma) = exhaustive_search(&g, 3, 3).unwrap();
        assert_eq!(best.n_worker_types, 2);
        assert_eq!(best.n_markets, 2);
        assert_eq!(best.worker_type[0], best.worker_type[1]);
        assert_eq!(best.worker_type[2], best.worker_type[3]);
        assert_ne!(best.worker_type[0], best.worker_type[2]);
        let planted = Partition::new(vec![0, 0, 1, 1], vec![0, 0, 1, 1]).unwrap();
        assert_relative_eq!(
            sigma,
            description_length(&g, &planted).unwrap(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn merging_identical_profiles_costs_at_most_labels() {
        // Two worker groups with identical propensity profiles: merging them
        // leaves S unchanged up to degree-encoding terms and can only move Σ
        // by the label-cost difference (here it should strictly help).
        let g = BipartiteGraph::from_indexed_edges(
            vec!["a".into(), "b".into(), "c".into(), "d".into()],
            vec!["x".into(), "y".into()],
            [(0, 0, 2), (1, 0, 2), (2, 0, 2), (3, 0, 2)],
        )
        .unwrap();
        let split = Partition::new(vec![0, 0, 1, 1], vec![0, 0]).unwrap();
        let merged = Partition::new(vec![0, 0, 0, 0], vec![0, 0]).unwrap();
        let s_split = description_length(&g, &split).unwrap();
        let s_merged = description_length(&g, &merged).unwrap();
        assert!(
            s_merged <= s_split + 1e-9,
            "merging identical-profile groups increased Σ: {s_merged} > {s_split}"
        );
    }
}
