//! Forward sampler for the degree-corrected bipartite block model.

use std::collections::HashMap;

use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::Poisson;

use super::BlockProbabilityMatrix;
use crate::error::{Error, Result};
use crate::graph::{BipartiteGraph, Partition};

/// Samples a match network with `A_ij ~ Poisson(d_i d_j P[ι(i)][γ(j)])`.
///
/// Uses exact Poisson splitting: each block's total multiplicity is drawn
/// from `Poisson(P D_ι D_γ)` and its edge units are assigned to worker-job
/// pairs independently with probability proportional to `d_i d_j`, which
/// reproduces the independent per-pair Poisson law exactly.
///
/// Node identifiers are `w{index}` and `j{index}`, so the planted partition
/// stays aligned with the returned graph by index. Nodes that end up with no
/// matches are kept.
pub fn sample_network(
    worker_degrees: &[f64],
    job_degrees: &[f64],
    partition: &Partition,
    p: &BlockProbabilityMatrix,
    rng: &mut ChaCha8Rng,
) -> Result<BipartiteGraph> {
    if partition.worker_type.len() != worker_degrees.len()
        || partition.market.len() != job_degrees.len()
    {
        return Err(Error::DimensionMismatch(
            "degree sequences do not match the partition".into(),
        ));
    }
    if p.n_worker_types() != partition.n_worker_types as usize
        || p.n_markets() != partition.n_markets as usize
    {
        return Err(Error::DimensionMismatch(
            "propensity matrix does not match the partition".into(),
        ));
    }
    if worker_degrees.iter().chain(job_degrees).any(|&d| !(d.is_finite() && d >= 0.0)) {
        return Err(Error::InvalidParameter(
            "degrees must be finite and nonnegative".into(),
        ));
    }

    // Group membership lists and degree-weighted samplers per group.
    let mut workers_of = vec![Vec::new(); partition.n_worker_types as usize];
    for (i, &g) in partition.worker_type.iter().enumerate() {
        workers_of[g as usize].push(i as u32);
    }
    let mut jobs_of = vec![Vec::new(); partition.n_markets as usize];
    for (j, &g) in partition.market.iter().enumerate() {
        jobs_of[g as usize].push(j as u32);
    }
    let worker_sampler: Vec<Option<WeightedIndex<f64>>> = workers_of
        .iter()
        .map(|members| {
            let weights: Vec<f64> = members.iter().map(|&i| worker_degrees[i as usize]).collect();
            if weights.iter().sum::<f64>() > 0.0 {
                Some(WeightedIndex::new(weights).expect("positive total weight"))
            } else {
                None
            }
        })
        .collect();
    let job_sampler: Vec<Option<WeightedIndex<f64>>> = jobs_of
        .iter()
        .map(|members| {
            let weights: Vec<f64> = members.iter().map(|&j| job_degrees[j as usize]).collect();
            if weights.iter().sum::<f64>() > 0.0 {
                Some(WeightedIndex::new(weights).expect("positive total weight"))
            } else {
                None
            }
        })
        .collect();
    let dw_sums: Vec<f64> = workers_of
        .iter()
        .map(|m| m.iter().map(|&i| worker_degrees[i as usize]).sum())
        .collect();
    let dj_sums: Vec<f64> = jobs_of
        .iter()
        .map(|m| m.iter().map(|&j| job_degrees[j as usize]).sum())
        .collect();

    let mut counts: HashMap<(u32, u32), u64> = HashMap::new();
    for (r, row) in p.p.iter().enumerate() {
        for (g, &prop) in row.iter().enumerate() {
            let mean = prop * dw_sums[r] * dj_sums[g];
            if mean <= 0.0 {
                continue;
            }
            let total = rng.sample(Poisson::new(mean).expect("positive mean")) as u64;
            let (Some(ws), Some(js)) = (&worker_sampler[r], &job_sampler[g]) else {
                continue;
            };
            for _ in 0..total {
                let i = workers_of[r][ws.sample(rng)];
                let j = jobs_of[g][js.sample(rng)];
                *counts.entry((i, j)).or_insert(0) += 1;
            }
        }
    }

    let worker_ids = (0..worker_degrees.len()).map(|i| format!("w{i}")).collect();
    let job_ids = (0..job_degrees.len()).map(|j| format!("j{j}")).collect();
    let mut edges: Vec<(u32, u32, u32)> = counts
        .into_iter()
        .map(|((i, j), m)| {
            u32::try_from(m)
                .map(|m| (i, j, m))
                .map_err(|_| Error::InvalidParameter("sampled multiplicity overflow".into()))
        })
        .collect::<Result<_>>()?;
    edges.sort_unstable();
    BipartiteGraph::from_indexed_edges(worker_ids, job_ids, edges)
}
