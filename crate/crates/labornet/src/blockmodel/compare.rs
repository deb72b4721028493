//! Agreement measures between two partitions of the same node sets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Partition;

/// Adjusted Rand index and normalized mutual information for one node side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SideAgreement {
    pub adjusted_rand_index: f64,
    pub normalized_mutual_information: f64,
}

/// Agreement between two partitions, reported per side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartitionAgreement {
    pub workers: SideAgreement,
    pub jobs: SideAgreement,
}

/// Compares two partitions of the same graph, side by side.
///
/// Both measures are label-permutation invariant. The adjusted Rand index is
/// 1 for identical groupings and has expectation 0 under independent random
/// labelings; NMI uses the arithmetic-mean normalization and is defined as 1
/// when both labelings are the same single group.
pub fn compare_partitions(a: &Partition, b: &Partition) -> Result<PartitionAgreement> {
    if a.worker_type.len() != b.worker_type.len() || a.market.len() != b.market.len() {
        return Err(Error::DimensionMismatch(
            "partitions cover different node sets".into(),
        ));
    }
    Ok(PartitionAgreement {
        workers: side_agreement(&a.worker_type, &b.worker_type),
        jobs: side_agreement(&a.market, &b.market),
    })
}

fn side_agreement(a: &[u32], b: &[u32]) -> SideAgreement {
    SideAgreement {
        adjusted_rand_index: adjusted_rand_index(a, b),
        normalized_mutual_information: normalized_mutual_information(a, b),
    }
}

fn contingency(a: &[u32], b: &[u32]) -> (Vec<Vec<u64>>, Vec<u64>, Vec<u64>) {
    let ka = a.iter().max().map_or(0, |&m| m as usize + 1);
    let kb = b.iter().max().map_or(0, |&m| m as usize + 1);
    let mut table = vec![vec![0u64; kb]; ka];
    for (&x, &y) in a.iter().zip(b) {
        table[x as usize][y as usize] += 1;
    }
    let row: Vec<u64> = table.iter().map(|r| r.iter().sum()).collect();
    let col: Vec<u64> = (0..kb).map(|j| table.iter().map(|r| r[j]).sum()).collect();
    (table, row, col)
}

fn choose2(n: u64) -> f64 {
    let n = n as f64;
    n * (n - 1.0) / 2.0
}

/// Adjusted Rand index (Hubert–Arabie).
pub fn adjusted_rand_index(a: &[u32], b: &[u32]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len() as u64;
    if n < 2 {
        return 1.0;
    }
    let (table, row, col) = contingency(a, b);
    let sum_ij: f64 = table.iter().flatten().map(|&c| choose2(c)).sum();
    let sum_a: f64 = row.iter().map(|&c| choose2(c)).sum();
    let sum_b: f64 = col.iter().map(|&c| choose2(c)).sum();
    let total = choose2(n);
    let expected = sum_a * sum_b / total;
    let max = 0.5 * (sum_a + sum_b);
    if (max - expected).abs() < f64::EPSILON {
        // Both labelings are trivial (all-one-group or all-singletons):
        // identical by construction.
        return 1.0;
    }
    (sum_ij - expected) / (max - expected)
}

/// Normalized mutual information with arithmetic-mean normalization.
pub fn normalized_mutual_information(a: &[u32], b: &[u32]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    if a.is_empty() {
        return 1.0;
    }
    let (table, row, col) = contingency(a, b);
    let mut mi = 0.0;
    for (i, r) in table.iter().enumerate() {
        for (j, &c) in r.iter().enumerate() {
            if c > 0 {
                let p = c as f64 / n;
                mi += p * ((c as f64 * n) / (row[i] as f64 * col[j] as f64)).ln();
            }
        }
    }
    let h = |margin: &[u64]| -> f64 {
        margin
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / n;
                -p * p.ln()
            })
            .sum()
    };
    let ha = h(&row);
    let hb = h(&col);
    if ha == 0.0 && hb == 0.0 {
        return 1.0;
    }
    (2.0 * mi / (ha + hb)).clamp(0.0, 1.0)
}
