//! Full metric suite for one clustering of fused embeddings, plus the Cox
//! baseline fitted on embeddings or on cluster indicators.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::cluster::{assign, cluster_risk, kmeans_fit, ClusterRiskMap, KMeansConfig, KMeansModel};
use crate::clustmetrics::{ari, label_accuracy, matched_accuracy, nmi, purity, silhouette};
use crate::coxph::{apply_standardization, cox_fit, cox_risk, standardize_columns, CoxConfig};
use crate::dataio::Cohort;
use crate::losses::BatchSurvival;
use crate::numcore::{Matrix, Rng};
use crate::survmetrics::{c_index, km_fit, logrank_k, KMCurve};
use crate::{Error, Result};

/// Metrics for one k. Label metrics are `None` when every subtype is
/// unknown; silhouette and log-rank are `None` when fewer than two clusters
/// are populated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub k: usize,
    pub n: usize,
    pub c_index: f64,
    pub logrank_statistic: Option<f64>,
    pub logrank_df: Option<usize>,
    pub logrank_p_value: Option<f64>,
    pub silhouette: Option<f64>,
    pub purity: Option<f64>,
    pub ari: Option<f64>,
    pub nmi: Option<f64>,
    /// Raw cluster index vs. subtype code, no matching.
    pub accuracy: Option<f64>,
    /// Accuracy after optimal cluster-to-subtype matching.
    pub accuracy_matched: Option<f64>,
    pub cluster_sizes: Vec<usize>,
    pub cluster_risk: ClusterRiskMap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: EvalReport,
    pub model: KMeansModel,
    pub labels: Vec<usize>,
}

/// Clusters `fused` (rows aligned with `cohort`) into `k` groups and scores
/// the result against survival and subtype labels.
pub fn evaluate_clustering(fused: &Matrix, cohort: &Cohort, k: usize, rng: &Rng) -> Result<Evaluation> {
    if fused.rows() != cohort.len() {
        return Err(Error::lengths("evaluate", fused.rows(), cohort.len()));
    }
    if k == 0 || k > fused.rows() {
        return Err(Error::InvalidArgument(alloc::format!(
            "k = {k} must be in [1, {}]",
            fused.rows()
        )));
    }
    let model = kmeans_fit(fused, k, rng, &KMeansConfig::default())?;
    let labels = model.labels.clone();
    let surv = cohort.survival();
    let (risk_map, risk) = cluster_risk(&labels, k, &surv)?;
    let c = c_index(&risk, &surv.t, &surv.e)?;

    let mut sizes = vec![0usize; k];
    labels.iter().for_each(|&l| sizes[l] += 1);
    let populated = sizes.iter().filter(|&&s| s > 0).count();
    let logrank = if populated >= 2 {
        Some(logrank_k(&surv.t, &surv.e, &labels)?)
    } else {
        None
    };
    let sil = if populated >= 2 {
        Some(silhouette(fused, &labels)?)
    } else {
        None
    };

    let (_, codes) = cohort.subtype_codes();
    let known: Vec<usize> = (0..codes.len()).filter(|&i| codes[i].is_some()).collect();
    let label_metrics = if known.is_empty() {
        None
    } else {
        let pred: Vec<usize> = known.iter().map(|&i| labels[i]).collect();
        let truth: Vec<usize> = known.iter().map(|&i| codes[i].expect("filtered")).collect();
        let pairwise = |f: fn(&[usize], &[usize]) -> Result<f64>| {
            if pred.len() >= 2 {
                f(&pred, &truth).map(Some)
            } else {
                Ok(None)
            }
        };
        Some((
            purity(&labels, &codes)?,
            pairwise(ari)?,
            nmi(&pred, &truth)?,
            label_accuracy(&pred, &truth)?,
            matched_accuracy(&pred, &truth)?,
        ))
    };

    let report = EvalReport {
        k,
        n: fused.rows(),
        c_index: c,
        logrank_statistic: logrank.as_ref().map(|l| l.statistic),
        logrank_df: logrank.as_ref().map(|l| l.df),
        logrank_p_value: logrank.as_ref().map(|l| l.p_value),
        silhouette: sil,
        purity: label_metrics.map(|m| m.0),
        ari: label_metrics.and_then(|m| m.1),
        nmi: label_metrics.map(|m| m.2),
        accuracy: label_metrics.map(|m| m.3),
        accuracy_matched: label_metrics.map(|m| m.4),
        cluster_sizes: sizes,
        cluster_risk: risk_map,
    };
    Ok(Evaluation { report, model, labels })
}

/// Kaplan–Meier curve of each non-empty cluster.
pub fn km_by_cluster(labels: &[usize], k: usize, surv: &BatchSurvival) -> Result<Vec<(usize, KMCurve)>> {
    if labels.len() != surv.len() {
        return Err(Error::lengths("km_by_cluster", labels.len(), surv.len()));
    }
    let mut out = Vec::new();
    for c in 0..k {
        let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        if !members.is_empty() {
            let sub = surv.select(&members);
            out.push((c, km_fit(&sub.t, &sub.e)?));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoxFeatures {
    Embeddings,
    ClusterOnehot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoxBaseline {
    pub features: CoxFeatures,
    /// C-index of the linear predictor on the held-out rows.
    pub c_index: f64,
    pub converged: bool,
    pub n_features: usize,
}

/// Indicator columns for clusters `1..k`; cluster 0 is the reference.
pub fn cluster_onehot(labels: &[usize], k: usize) -> Matrix {
    let cols = k.saturating_sub(1).max(1);
    let mut x = Matrix::zeros(labels.len(), cols);
    for (i, &l) in labels.iter().enumerate() {
        if l >= 1 && k > 1 {
            x.row_mut(i)[l - 1] = 1.0;
        }
    }
    x
}

/// Fits Cox on the training rows and scores the held-out rows. For
/// cluster indicators, KMeans with `k` clusters is fitted on the training
/// embeddings and held-out rows are assigned to the nearest centroid.
pub fn cox_baseline(
    train_fused: &Matrix,
    train_surv: &BatchSurvival,
    test_fused: &Matrix,
    test_surv: &BatchSurvival,
    features: CoxFeatures,
    k: usize,
    rng: &Rng,
) -> Result<CoxBaseline> {
    let (train_x, test_x) = match features {
        CoxFeatures::Embeddings => (train_fused.clone(), test_fused.clone()),
        CoxFeatures::ClusterOnehot => {
            if k == 0 || k > train_fused.rows() {
                return Err(Error::InvalidArgument(alloc::format!("invalid k = {k} for Cox baseline")));
            }
            let model = kmeans_fit(train_fused, k, rng, &KMeansConfig::default())?;
            let test_labels = assign(&model, test_fused)?;
            (cluster_onehot(&model.labels, k), cluster_onehot(&test_labels, k))
        }
    };
    let (train_std, means, sds) = standardize_columns(&train_x);
    let test_std = apply_standardization(&test_x, &means, &sds);
    let model = cox_fit(&train_std, &train_surv.t, &train_surv.e, &CoxConfig::default())?;
    let risk = cox_risk(&model, &test_std)?;
    Ok(CoxBaseline {
        features,
        c_index: c_index(&risk, &test_surv.t, &test_surv.e)?,
        converged: model.converged,
        n_features: train_x.cols(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::{fuse, Fusion};
    use crate::dataio::{generate_synthetic, SyntheticSpec};
    use alloc::string::ToString;

    fn spec(seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            n_patients: 120,
            n_subtypes: 3,
            latent_dim: 4,
            modality_dims: vec![6, 5, 4],
            center_scale: 4.0,
            noise: 0.3,
            feature_noise: 0.05,
            hazard_rates: vec![1.0, 2.0, 4.0],
            censoring_fraction: 0.3,
            seed,
        }
    }

    fn cohort(seed: u64) -> Cohort {
        generate_synthetic(&spec(seed)).unwrap()
    }

    fn raw_fused(c: &Cohort) -> Matrix {
        fuse(&c.views, Fusion::Concat).unwrap()
    }

    #[test]
    fn planted_cohort_scores_well() {
        let c = cohort(1);
        let ev = evaluate_clustering(&raw_fused(&c), &c, 3, &Rng::new(0)).unwrap();
        let r = &ev.report;
        assert_eq!(r.cluster_sizes.iter().sum::<usize>(), 120);
        assert!(r.purity.unwrap() > 0.95);
        assert!(r.ari.unwrap() > 0.9);
        assert!(r.nmi.unwrap() > 0.9);
        assert_eq!(r.accuracy_matched, r.purity);
        assert!(r.c_index > 0.6);
        assert!(r.logrank_p_value.unwrap() < 0.01);
        assert_eq!(r.logrank_df, Some(2));
        assert!(r.silhouette.unwrap() > 0.5);
    }

    #[test]
    fn unknown_subtypes_give_null_label_metrics() {
        let mut c = cohort(2);
        c.subtypes.iter_mut().for_each(|s| *s = None);
        let r = evaluate_clustering(&raw_fused(&c), &c, 4, &Rng::new(0)).unwrap().report;
        assert!(r.purity.is_none() && r.ari.is_none() && r.nmi.is_none());
        assert!(r.accuracy.is_none() && r.accuracy_matched.is_none());
        assert!(r.silhouette.is_some() && r.logrank_p_value.is_some());
    }

    #[test]
    fn partially_unknown_subtypes_are_excluded() {
        let mut c = cohort(3);
        for i in (0..c.len()).step_by(5) {
            c.subtypes[i] = None;
        }
        let fused = raw_fused(&c);
        let r = evaluate_clustering(&fused, &c, 3, &Rng::new(0)).unwrap().report;
        let mut c2 = c.clone();
        for i in (0..c.len()).step_by(5) {
            c2.subtypes[i] = Some("S0".to_string());
        }
        let r2 = evaluate_clustering(&fused, &c2, 3, &Rng::new(0)).unwrap().report;
        assert_eq!(r.c_index, r2.c_index);
        assert!(r.purity.unwrap() >= r2.purity.unwrap());
    }

    #[test]
    fn k_out_of_range() {
        let c = cohort(4);
        assert!(evaluate_clustering(&raw_fused(&c), &c, 121, &Rng::new(0)).is_err());
        assert!(evaluate_clustering(&raw_fused(&c), &c, 0, &Rng::new(0)).is_err());
    }

    #[test]
    fn single_cluster_has_no_logrank() {
        let c = cohort(5);
        let r = evaluate_clustering(&raw_fused(&c), &c, 1, &Rng::new(0)).unwrap().report;
        assert_eq!(r.c_index, 0.5);
        assert!(r.logrank_statistic.is_none() && r.silhouette.is_none());
    }

    #[test]
    fn km_curves_per_cluster() {
        let surv = BatchSurvival::new(vec![1.0, 2.0, 3.0, 4.0], vec![true; 4]).unwrap();
        let curves = km_by_cluster(&[0, 2, 0, 2], 3, &surv).unwrap();
        assert_eq!(curves.iter().map(|c| c.0).collect::<Vec<_>>(), vec![0, 2]);
        assert_eq!(curves[0].1.times, vec![1.0, 3.0]);
    }

    #[test]
    fn onehot_encoding() {
        let x = cluster_onehot(&[0, 1, 2, 1], 3);
        assert_eq!(x.shape(), (4, 2));
        assert_eq!(x.row(0), &[0.0, 0.0]);
        assert_eq!(x.row(3), &[1.0, 0.0]);
        assert_eq!(x.row(2), &[0.0, 1.0]);
    }

    #[test]
    fn cox_baselines_are_informative_on_planted_data() {
        // two subtypes, so a linear predictor can order the hazards
        let c = generate_synthetic(&SyntheticSpec {
            n_patients: 200,
            n_subtypes: 2,
            hazard_rates: vec![1.0, 4.0],
            ..spec(6)
        })
        .unwrap();
        let fused = raw_fused(&c);
        let train: Vec<usize> = (0..120).collect();
        let test: Vec<usize> = (120..200).collect();
        let surv = c.survival();
        for features in [CoxFeatures::Embeddings, CoxFeatures::ClusterOnehot] {
            let b = cox_baseline(
                &fused.select_rows(&train),
                &surv.select(&train),
                &fused.select_rows(&test),
                &surv.select(&test),
                features,
                2,
                &Rng::new(1),
            )
            .unwrap();
            assert!(b.c_index > 0.55, "{b:?}");
        }
    }
}
