//! Fusion of modality embeddings, k-means, and cluster-level risk scores.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::losses::BatchSurvival;
use crate::numcore::{squared_distance, Matrix, Rng, NORM_EPS};
use crate::survmetrics::km_fit;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Fusion {
    /// Side-by-side concatenation of all modality embeddings.
    #[default]
    Concat,
    /// Elementwise mean, then row ℓ2 normalization.
    Mean,
}

pub fn fuse(embeds: &[Matrix], strategy: Fusion) -> Result<Matrix> {
    let first = embeds
        .first()
        .ok_or_else(|| Error::InvalidArgument("fuse needs at least one modality".into()))?;
    match strategy {
        Fusion::Concat => Matrix::hconcat(&embeds.iter().collect::<Vec<_>>()),
        Fusion::Mean => {
            let mut acc = first.clone();
            for m in &embeds[1..] {
                acc.add_assign(m)?;
            }
            Ok(acc.scale(1.0 / embeds.len() as f64).row_l2_normalize(NORM_EPS))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansModel {
    pub k: usize,
    pub centroids: Matrix,
    pub inertia: f64,
    pub labels: Vec<usize>,
    /// Clusters left without members at convergence.
    pub empty_clusters: Vec<usize>,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub n_init: usize,
    pub max_iter: usize,
    /// Stop once no centroid moves farther than this.
    pub tol: f64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            n_init: 10,
            max_iter: 300,
            tol: 1e-6,
        }
    }
}

/// Nearest centroid and its squared distance; ties go to the lowest index.
fn nearest(centroids: &Matrix, row: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for c in 0..centroids.rows() {
        let d = squared_distance(centroids.row(c), row);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus_seeds(x: &Matrix, k: usize, rng: &mut Rng) -> Matrix {
    let n = x.rows();
    let mut centroids = Matrix::zeros(k, x.cols());
    let first = rng.below(n);
    centroids.row_mut(0).copy_from_slice(x.row(first));
    let mut closest: Vec<f64> = x
        .row_iter()
        .map(|r| squared_distance(r, centroids.row(0)))
        .collect();
    for c in 1..k {
        let total: f64 = closest.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.uniform() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, d) in closest.iter().enumerate() {
                acc += d;
                if acc > target {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            // every point already coincides with a centroid
            rng.below(n)
        };
        centroids.row_mut(c).copy_from_slice(x.row(pick));
        for (i, d) in closest.iter_mut().enumerate() {
            *d = d.min(squared_distance(x.row(i), centroids.row(c)));
        }
    }
    centroids
}

/// One Lloyd run from `centroids`. Returns the model and the inertia after
/// each assignment step.
pub(crate) fn lloyd(x: &Matrix, mut centroids: Matrix, cfg: &KMeansConfig) -> (KMeansModel, Vec<f64>) {
    let (n, d) = x.shape();
    let k = centroids.rows();
    let mut labels = vec![0usize; n];
    let mut history = Vec::new();
    let mut iterations = 0;
    loop {
        let mut inertia = 0.0;
        for (i, label) in labels.iter_mut().enumerate() {
            let (c, dist) = nearest(&centroids, x.row(i));
            *label = c;
            inertia += dist;
        }
        history.push(inertia);
        if iterations == cfg.max_iter {
            break;
        }
        iterations += 1;

        let mut sums = Matrix::zeros(k, d);
        let mut counts = vec![0usize; k];
        for (i, &c) in labels.iter().enumerate() {
            counts[c] += 1;
            for (s, v) in sums.row_mut(c).iter_mut().zip(x.row(i)) {
                *s += v;
            }
        }
        let mut shift: f64 = 0.0;
        for (c, &count) in counts.iter().enumerate() {
            // an empty cluster keeps its centroid
            if count == 0 {
                continue;
            }
            let inv = 1.0 / count as f64;
            let mut moved = 0.0;
            for (old, s) in centroids.row_mut(c).iter_mut().zip(sums.row(c)) {
                let new = s * inv;
                moved += (new - *old) * (new - *old);
                *old = new;
            }
            shift = shift.max(libm::sqrt(moved));
        }
        if shift < cfg.tol {
            // centroids are (numerically) fixed; one more assignment settles labels
            let mut inertia = 0.0;
            for (i, label) in labels.iter_mut().enumerate() {
                let (c, dist) = nearest(&centroids, x.row(i));
                *label = c;
                inertia += dist;
            }
            history.push(inertia);
            break;
        }
    }
    let mut counts = vec![0usize; k];
    labels.iter().for_each(|&c| counts[c] += 1);
    let model = KMeansModel {
        k,
        inertia: *history.last().expect("at least one assignment"),
        empty_clusters: (0..k).filter(|&c| counts[c] == 0).collect(),
        centroids,
        labels,
        iterations,
    };
    (model, history)
}

/// k-means++ seeding followed by Lloyd iterations, best of `n_init` restarts
/// by inertia (earliest restart wins ties).
pub fn kmeans_fit(x: &Matrix, k: usize, rng: &Rng, cfg: &KMeansConfig) -> Result<KMeansModel> {
    let n = x.rows();
    if k == 0 {
        return Err(Error::InvalidArgument("k must be >= 1".into()));
    }
    if k > n {
        return Err(Error::InvalidArgument(alloc::format!(
            "k = {k} exceeds the number of samples ({n})"
        )));
    }
    let mut best: Option<KMeansModel> = None;
    for restart in 0..cfg.n_init.max(1) {
        let mut stream = rng.derive_indexed("kmeans-restart", restart as u64);
        let seeds = plus_plus_seeds(x, k, &mut stream);
        let (model, _) = lloyd(x, seeds, cfg);
        if best.as_ref().map_or(true, |b| model.inertia < b.inertia) {
            best = Some(model);
        }
    }
    Ok(best.expect("n_init >= 1"))
}

/// Nearest-centroid labels for new rows.
pub fn assign(model: &KMeansModel, x: &Matrix) -> Result<Vec<usize>> {
    if x.cols() != model.centroids.cols() {
        return Err(Error::dims("assign", model.centroids.shape(), x.shape()));
    }
    Ok(x.row_iter().map(|r| nearest(&model.centroids, r).0).collect())
}

/// How a cluster's risk score was derived.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskStatistic {
    /// Kaplan–Meier median survival.
    Median,
    /// Area under the KM curve up to the cohort's last observed time.
    RestrictedMean,
    /// No members; the whole cohort's statistic is used.
    CohortFallback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterRiskMap {
    /// Risk per cluster index (higher = worse prognosis).
    pub risk: Vec<f64>,
    pub derivation: Vec<RiskStatistic>,
}

fn survival_statistic(t: &[f64], e: &[bool], horizon: f64) -> Result<(f64, RiskStatistic)> {
    let curve = km_fit(t, e)?;
    Ok(match curve.median() {
        Some(m) => (m, RiskStatistic::Median),
        None => (curve.restricted_mean(horizon), RiskStatistic::RestrictedMean),
    })
}

/// Risk of each cluster as the negated KM median survival of its members
/// (restricted mean when the median is not reached). Returns the map and
/// the per-patient risk vector.
pub fn cluster_risk(labels: &[usize], k: usize, surv: &BatchSurvival) -> Result<(ClusterRiskMap, Vec<f64>)> {
    if labels.len() != surv.len() {
        return Err(Error::lengths("cluster_risk", labels.len(), surv.len()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::InvalidArgument(alloc::format!(
            "label {bad} out of range for k = {k}"
        )));
    }
    let horizon = surv.t.iter().copied().fold(0.0, f64::max);
    let cohort = survival_statistic(&surv.t, &surv.e, horizon)?.0;
    let mut risk = Vec::with_capacity(k);
    let mut derivation = Vec::with_capacity(k);
    for c in 0..k {
        let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        if members.is_empty() {
            risk.push(-cohort);
            derivation.push(RiskStatistic::CohortFallback);
            continue;
        }
        let sub = surv.select(&members);
        let (stat, how) = survival_statistic(&sub.t, &sub.e, horizon)?;
        risk.push(-stat);
        derivation.push(how);
    }
    let per_patient = labels.iter().map(|&l| risk[l]).collect();
    Ok((ClusterRiskMap { risk, derivation }, per_patient))
}
