//! Bipartite worker–job match network.
//!
//! The network is a multigraph: an edge `(i, j, m)` records that worker `i`
//! matched with job `j` a total of `m` times. Degrees are
//! multiplicity-weighted, so the worker and job degree sums both equal the
//! total edge count `E`.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Immutable worker–job multigraph with dense indices and degree sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct BipartiteGraph {
    worker_ids: Vec<String>,
    job_ids: Vec<String>,
    /// `(worker, job, multiplicity)`, sorted by `(worker, job)`.
    edges: Vec<(u32, u32, u32)>,
    worker_degrees: Vec<u64>,
    job_degrees: Vec<u64>,
    total_edges: u64,
    /// Edge index ranges per worker (CSR over the sorted edge list).
    worker_offsets: Vec<usize>,
    /// For each job, indices into `edges` of its incident edges.
    job_incidence: Vec<Vec<u32>>,
}

impl BipartiteGraph {
    /// Builds a graph from interned indices, merging duplicate pairs.
    pub fn from_indexed_edges(
        worker_ids: Vec<String>,
        job_ids: Vec<String>,
        edges: impl IntoIterator<Item = (u32, u32, u32)>,
    ) -> Result<Self> {
        let mut merged: HashMap<(u32, u32), u64> = HashMap::new();
        for (w, j, m) in edges {
            if (w as usize) >= worker_ids.len() || (j as usize) >= job_ids.len() {
                return Err(Error::DimensionMismatch(format!(
                    "edge ({w}, {j}) out of range"
                )));
            }
            if m == 0 {
                return Err(Error::InvalidParameter(
                    "edge multiplicity must be positive".into(),
                ));
            }
            *merged.entry((w, j)).or_insert(0) += u64::from(m);
        }
        let mut edges: Vec<(u32, u32, u32)> = merged
            .into_iter()
            .map(|((w, j), m)| {
                u32::try_from(m)
                    .map(|m| (w, j, m))
                    .map_err(|_| Error::InvalidParameter("edge multiplicity overflow".into()))
            })
            .collect::<Result<_>>()?;
        edges.sort_unstable();

        let n = worker_ids.len();
        let k = job_ids.len();
        let mut worker_degrees = vec![0u64; n];
        let mut job_degrees = vec![0u64; k];
        let mut total_edges = 0u64;
        let mut job_incidence = vec![Vec::new(); k];
        for (idx, &(w, j, m)) in edges.iter().enumerate() {
            worker_degrees[w as usize] += u64::from(m);
            job_degrees[j as usize] += u64::from(m);
            total_edges += u64::from(m);
            job_incidence[j as usize].push(idx as u32);
        }
        let mut worker_offsets = vec![0usize; n + 1];
        for &(w, _, _) in &edges {
            worker_offsets[w as usize + 1] += 1;
        }
        for i in 0..n {
            worker_offsets[i + 1] += worker_offsets[i];
        }
        Ok(Self {
            worker_ids,
            job_ids,
            edges,
            worker_degrees,
            job_degrees,
            total_edges,
            worker_offsets,
            job_incidence,
        })
    }

    pub fn n_workers(&self) -> usize {
        self.worker_ids.len()
    }

    pub fn n_jobs(&self) -> usize {
        self.job_ids.len()
    }

    /// Total multiplicity-weighted edge count `E`.
    pub fn total_edges(&self) -> u64 {
        self.total_edges
    }

    /// Distinct `(worker, job, multiplicity)` triples, sorted.
    pub fn edges(&self) -> &[(u32, u32, u32)] {
        &self.edges
    }

    pub fn worker_degrees(&self) -> &[u64] {
        &self.worker_degrees
    }

    pub fn job_degrees(&self) -> &[u64] {
        &self.job_degrees
    }

    /// Multiplicity-weighted degree sequences `(d_i, d_j)`.
    pub fn degrees(&self) -> (&[u64], &[u64]) {
        (&self.worker_degrees, &self.job_degrees)
    }

    pub fn worker_id(&self, i: u32) -> &str {
        &self.worker_ids[i as usize]
    }

    pub fn job_id(&self, j: u32) -> &str {
        &self.job_ids[j as usize]
    }

    /// Edges incident to worker `i`.
    pub fn worker_edges(&self, i: u32) -> &[(u32, u32, u32)] {
        let i = i as usize;
        &self.edges[self.worker_offsets[i]..self.worker_offsets[i + 1]]
    }

    /// Edges incident to job `j`, as `(worker, multiplicity)` pairs.
    pub fn job_edges(&self, j: u32) -> impl Iterator<Item = (u32, u32)> + '_ {
        self.job_incidence[j as usize]
            .iter()
            .map(move |&e| (self.edges[e as usize].0, self.edges[e as usize].2))
    }

    /// Deterministic CSV re-emission sorted by `(worker index, job index)`.
    pub fn write_snapshot<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "worker_id,job_id,count")?;
        for &(w, j, m) in &self.edges {
            writeln!(out, "{},{},{}", self.worker_ids[w as usize], self.job_ids[j as usize], m)?;
        }
        Ok(())
    }
}

/// Assignment of every worker to a worker type and every job to a market.
///
/// Group indices are contiguous `0..n_worker_types` and `0..n_markets`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub worker_type: Vec<u32>,
    pub market: Vec<u32>,
    pub n_worker_types: u32,
    pub n_markets: u32,
}

impl Partition {
    pub fn new(worker_type: Vec<u32>, market: Vec<u32>) -> Result<Self> {
        let n_worker_types = worker_type.iter().max().map_or(0, |&m| m + 1);
        let n_markets = market.iter().max().map_or(0, |&m| m + 1);
        Ok(Self {
            worker_type,
            market,
            n_worker_types,
            n_markets,
        })
    }

    /// Builds a partition with explicit group counts (possibly larger than
    /// the largest used label; trailing groups may be empty until compaction).
    pub fn with_counts(
        worker_type: Vec<u32>,
        market: Vec<u32>,
        n_worker_types: u32,
        n_markets: u32,
    ) -> Result<Self> {
        if worker_type.iter().any(|&g| g >= n_worker_types)
            || market.iter().any(|&g| g >= n_markets)
        {
            return Err(Error::DimensionMismatch("group label out of range".into()));
        }
        Ok(Self {
            worker_type,
            market,
            n_worker_types,
            n_markets,
        })
    }

    /// Single-block partition.
    pub fn trivial(n_workers: usize, n_jobs: usize) -> Self {
        Self {
            worker_type: vec![0; n_workers],
            market: vec![0; n_jobs],
            n_worker_types: 1,
            n_markets: 1,
        }
    }

    /// Removes empty groups and renumbers labels contiguously.
    pub fn compact(&mut self) {
        fn side(labels: &mut [u32], n: &mut u32) {
            let mut used = vec![false; *n as usize];
            for &g in labels.iter() {
                used[g as usize] = true;
            }
            let mut remap = vec![0u32; *n as usize];
            let mut next = 0u32;
            for (g, &u) in used.iter().enumerate() {
                if u {
                    remap[g] = next;
                    next += 1;
                }
            }
            for g in labels.iter_mut() {
                *g = remap[*g as usize];
            }
            *n = next.max(1);
        }
        side(&mut self.worker_type, &mut self.n_worker_types);
        side(&mut self.market, &mut self.n_markets);
    }

    /// Per-group worker counts.
    pub fn worker_group_sizes(&self) -> Vec<u64> {
        let mut sizes = vec![0u64; self.n_worker_types as usize];
        for &g in &self.worker_type {
            sizes[g as usize] += 1;
        }
        sizes
    }

    /// Per-group job counts.
    pub fn job_group_sizes(&self) -> Vec<u64> {
        let mut sizes = vec![0u64; self.n_markets as usize];
        for &g in &self.market {
            sizes[g as usize] += 1;
        }
        sizes
    }
}

/// Options controlling edge-list loading.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LoadOptions {
    /// Jobs with fewer distinct workers than this are dropped.
    pub min_job_workers: usize,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self { min_job_workers: 1 }
    }
}

/// Loads an edge-list CSV with header `worker_id,job_id[,count]`.
///
/// Duplicate `(worker, job)` rows are merged by summing counts. Jobs with
/// fewer than `min_job_workers` distinct workers are dropped, then workers
/// left with no edges are dropped.
pub fn load_edge_list(path: &Path, options: &LoadOptions) -> Result<BipartiteGraph> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_path(path)?;
    let mut rows: Vec<(String, String, u32)> = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let worker = record
            .get(0)
            .filter(|s| !s.is_empty())
            .ok_or_else(|| Error::MalformedRow {
                line,
                msg: "missing worker_id".into(),
            })?;
        let job = record
            .get(1)
            .filter(|s| !s.is_empty())
            .ok_or_else(|| Error::MalformedRow {
                line,
                msg: "missing job_id".into(),
            })?;
        let count = match record.get(2) {
            None | Some("") => 1,
            Some(c) => c.trim().parse::<u32>().map_err(|e| Error::MalformedRow {
                line,
                msg: format!("bad count `{c}`: {e}"),
            })?,
        };
        if count == 0 {
            return Err(Error::MalformedRow {
                line,
                msg: "count must be positive".into(),
            });
        }
        rows.push((worker.to_string(), job.to_string(), count));
    }
    build_graph(rows, options)
}

/// Builds a filtered graph from raw `(worker_id, job_id, count)` rows.
pub fn build_graph(
    rows: Vec<(String, String, u32)>,
    options: &LoadOptions,
) -> Result<BipartiteGraph> {
    // Merge duplicates on string ids first, so the distinct-worker filter
    // sees each (worker, job) pair once.
    let mut merged: HashMap<(String, String), u64> = HashMap::new();
    for (w, j, c) in rows {
        *merged.entry((w, j)).or_insert(0) += u64::from(c);
    }
    let mut workers_per_job: HashMap<&str, usize> = HashMap::new();
    for (_, j) in merged.keys().map(|(w, j)| (w, j)) {
        *workers_per_job.entry(j.as_str()).or_insert(0) += 1;
    }
    let keep: Vec<(&(String, String), u64)> = {
        let mut v: Vec<_> = merged
            .iter()
            .filter(|((_, j), _)| workers_per_job[j.as_str()] >= options.min_job_workers)
            .map(|(k, &m)| (k, m))
            .collect();
        v.sort_unstable();
        v
    };
    if keep.is_empty() {
        return Err(Error::EmptyGraph);
    }

    let mut worker_index: HashMap<&str, u32> = HashMap::new();
    let mut job_index: HashMap<&str, u32> = HashMap::new();
    let mut worker_ids = Vec::new();
    let mut job_ids = Vec::new();
    let mut edges = Vec::with_capacity(keep.len());
    for ((w, j), m) in keep {
        let wi = *worker_index.entry(w.as_str()).or_insert_with(|| {
            worker_ids.push(w.clone());
            (worker_ids.len() - 1) as u32
        });
        let ji = *job_index.entry(j.as_str()).or_insert_with(|| {
            job_ids.push(j.clone());
            (job_ids.len() - 1) as u32
        });
        let m = u32::try_from(m)
            .map_err(|_| Error::InvalidParameter("edge multiplicity overflow".into()))?;
        edges.push((wi, ji, m));
    }
    BipartiteGraph::from_indexed_edges(worker_ids, job_ids, edges)
}

/// Total multiplicity between each worker type and market.
///
/// Entry `(ι, γ)` is the multiplicity of edges between type-`ι` workers and
/// market-`γ` jobs; the matrix sums to `E`.
pub fn block_edge_counts(graph: &BipartiteGraph, partition: &Partition) -> Result<Vec<Vec<u64>>> {
    if partition.worker_type.len() != graph.n_workers()
        || partition.market.len() != graph.n_jobs()
    {
        return Err(Error::DimensionMismatch(format!(
            "partition covers {}x{} nodes, graph has {}x{}",
            partition.worker_type.len(),
            partition.market.len(),
            graph.n_workers(),
            graph.n_jobs()
        )));
    }
    let mut counts =
        vec![vec![0u64; partition.n_markets as usize]; partition.n_worker_types as usize];
    for &(w, j, m) in graph.edges() {
        counts[partition.worker_type[w as usize] as usize]
            [partition.market[j as usize] as usize] += u64::from(m);
    }
    Ok(counts)
}

/// Writes a partition as `node_kind,node_id,group` rows.
pub fn write_partition_csv<W: Write>(
    graph: &BipartiteGraph,
    partition: &Partition,
    mut out: W,
) -> Result<()> {
    writeln!(out, "node_kind,node_id,group")?;
    for (i, &g) in partition.worker_type.iter().enumerate() {
        writeln!(out, "worker,{},{}", graph.worker_id(i as u32), g)?;
    }
    for (j, &g) in partition.market.iter().enumerate() {
        writeln!(out, "job,{},{}", graph.job_id(j as u32), g)?;
    }
    Ok(())
}

/// The 20-row sample table used across unit tests: 10 workers, 7 jobs.
#[cfg(test)]
pub(crate) fn tests_sample_rows() -> Vec<(String, String, u32)> {
    let rows = [
        ("1", "1_1"),
        ("2", "1_1"),
        ("2", "2_1"),
        ("3", "1_1"),
        ("3", "1_2"),
        ("4", "1_2"),
        ("5", "1_1"),
        ("5", "2_1"),
        ("6", "1_2"),
        ("6", "3_3"),
        ("6", "4_3"),
        ("7", "4_3"),
        ("8", "3_3"),
        ("8", "4_3"),
        ("9", "4_3"),
        ("9", "2_5"),
        ("10", "3_3"),
        ("10", "4_3"),
        ("10", "5_4"),
        ("10", "2_5"),
    ];
    rows.iter()
        .map(|(w, j)| (w.to_string(), j.to_string(), 1))
        .collect()
}
