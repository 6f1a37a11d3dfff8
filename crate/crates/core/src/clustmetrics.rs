//! Clustering quality against reference labels (purity, ARI, NMI, accuracy)
//! and against geometry (silhouette).
//!
//! Labels are arbitrary `usize` ids; only equality matters, except for
//! [`label_accuracy`], which compares raw ids on purpose.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::numcore::{squared_distance, Matrix};
use crate::{Error, Result};

/// Maps labels to dense ids `0..k` in order of first appearance.
fn densify(labels: &[usize]) -> (Vec<usize>, usize) {
    let mut ids = BTreeMap::new();
    let dense = labels
        .iter()
        .map(|l| {
            let next = ids.len();
            *ids.entry(*l).or_insert(next)
        })
        .collect();
    (dense, ids.len())
}

/// Contingency counts `table[cluster][class]`.
fn contingency(pred: &[usize], truth: &[usize]) -> Vec<Vec<usize>> {
    let (p, kp) = densify(pred);
    let (t, kt) = densify(truth);
    let mut table = vec![vec![0usize; kt]; kp];
    for (a, b) in p.into_iter().zip(t) {
        table[a][b] += 1;
    }
    table
}

fn check(op: &'static str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::lengths(op, a, b));
    }
    Ok(())
}

/// Mean silhouette width with Euclidean distance. Members of singleton
/// clusters score 0.
pub fn silhouette(x: &Matrix, labels: &[usize]) -> Result<f64> {
    check("silhouette", x.rows(), labels.len())?;
    let (dense, k) = densify(labels);
    if k < 2 {
        return Err(Error::InvalidArgument(
            "silhouette needs at least two clusters".into(),
        ));
    }
    let n = x.rows();
    let mut sizes = vec![0usize; k];
    for &c in &dense {
        sizes[c] += 1;
    }
    let mut total = 0.0;
    let mut sums = vec![0.0; k];
    for i in 0..n {
        sums.iter_mut().for_each(|s| *s = 0.0);
        for j in 0..n {
            if i != j {
                sums[dense[j]] += libm::sqrt(squared_distance(x.row(i), x.row(j)));
            }
        }
        let own = dense[i];
        if sizes[own] == 1 {
            continue;
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own && sizes[c] > 0)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    Ok(total / n as f64)
}

/// Fraction of samples that belong to their cluster's majority class.
/// `None` truth entries ("Unknown") are dropped first.
pub fn purity(pred: &[usize], truth: &[Option<usize>]) -> Result<f64> {
    check("purity", pred.len(), truth.len())?;
    let (p, t): (Vec<usize>, Vec<usize>) = pred
        .iter()
        .zip(truth)
        .filter_map(|(&p, t)| t.map(|t| (p, t)))
        .unzip();
    if p.is_empty() {
        return Err(Error::InvalidArgument(
            "purity needs at least one sample with a known label".into(),
        ));
    }
    let majority: usize = contingency(&p, &t)
        .iter()
        .map(|row| row.iter().copied().max().unwrap_or(0))
        .sum();
    Ok(majority as f64 / p.len() as f64)
}

fn choose2(n: usize) -> f64 {
    n as f64 * (n as f64 - 1.0) / 2.0
}

/// Adjusted Rand index.
pub fn ari(pred: &[usize], truth: &[usize]) -> Result<f64> {
    check("ari", pred.len(), truth.len())?;
    let n = pred.len();
    if n < 2 {
        return Err(Error::InvalidArgument("ARI needs at least two samples".into()));
    }
    let table = contingency(pred, truth);
    let index: f64 = table.iter().flatten().map(|&c| choose2(c)).sum();
    let rows: f64 = table.iter().map(|r| choose2(r.iter().sum())).sum();
    let cols: f64 = (0..table[0].len())
        .map(|j| choose2(table.iter().map(|r| r[j]).sum()))
        .sum();
    let expected = rows * cols / choose2(n);
    let max = (rows + cols) / 2.0;
    if max == expected {
        // both partitions are all-in-one or all-singletons, hence identical
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

fn entropy(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * libm::log(p)
        })
        .sum()
}

/// Mutual information normalized by the arithmetic mean of the two
/// entropies; `0/0` is reported as 0.
pub fn nmi(pred: &[usize], truth: &[usize]) -> Result<f64> {
    check("nmi", pred.len(), truth.len())?;
    let n = pred.len() as f64;
    if pred.is_empty() {
        return Ok(0.0);
    }
    let table = contingency(pred, truth);
    let row_sums: Vec<usize> = table.iter().map(|r| r.iter().sum()).collect();
    let col_sums: Vec<usize> = (0..table[0].len())
        .map(|j| table.iter().map(|r| r[j]).sum())
        .collect();
    let mut mi = 0.0;
    for (i, row) in table.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            if c > 0 {
                let c = c as f64;
                mi += c / n * libm::log(c * n / (row_sums[i] as f64 * col_sums[j] as f64));
            }
        }
    }
    let h_pred = entropy(row_sums.into_iter(), n);
    let h_truth = entropy(col_sums.into_iter(), n);
    let denom = (h_pred + h_truth) / 2.0;
    if denom <= 0.0 {
        return Ok(0.0);
    }
    Ok((mi / denom).clamp(0.0, 1.0))
}

/// Fraction of samples whose raw cluster index equals the integer encoding
/// of their class. No cluster-to-class matching is attempted, so a perfect
/// partition with a different numbering can score 0.
pub fn label_accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    check("label_accuracy", pred.len(), truth.len())?;
    if pred.is_empty() {
        return Ok(0.0);
    }
    let hits = pred.iter().zip(truth).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / pred.len() as f64)
}

/// Accuracy under the one-to-one cluster/class matching that maximizes
/// agreement (Hungarian assignment).
pub fn matched_accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    check("matched_accuracy", pred.len(), truth.len())?;
    if pred.is_empty() {
        return Ok(0.0);
    }
    let table = contingency(pred, truth);
    let size = table.len().max(table[0].len());
    let max = pred.len() as f64;
    let mut cost = Matrix::filled(size, size, max);
    for (i, row) in table.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            cost[(i, j)] = max - c as f64;
        }
    }
    let assignment = hungarian(&cost);
    let hits: usize = assignment
        .iter()
        .enumerate()
        .filter(|&(i, &j)| i < table.len() && j < table[0].len())
        .map(|(i, &j)| table[i][j])
        .sum();
    Ok(hits as f64 / pred.len() as f64)
}

/// Minimum-cost perfect assignment on a square cost matrix; returns the
/// column assigned to each row.
pub fn hungarian(cost: &Matrix) -> Vec<usize> {
    let n = cost.rows();
    // potentials and matching, 1-based with a sentinel column 0
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut matched_row = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        matched_row[0] = i;
        let mut j0 = 0;
        let mut min_to = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = matched_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let reduced = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                if reduced < min_to[j] {
                    min_to[j] = reduced;
                    way[j] = j0;
                }
                if min_to[j] < delta {
                    delta = min_to[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[matched_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_to[j] -= delta;
                }
            }
            j0 = j1;
            if matched_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            matched_row[j0] = matched_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        if matched_row[j] > 0 {
            assignment[matched_row[j] - 1] = j - 1;
        }
    }
    assignment
}
