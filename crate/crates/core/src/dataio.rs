//! Cohort representation, train-only normalization, seeded splitting and a
//! synthetic multi-omics cohort generator. File formats live in the std
//! companion crate; everything here works on in-memory values.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::losses::BatchSurvival;
use crate::numcore::{Matrix, Rng};
use crate::{Error, Result};

pub const DEFAULT_MODALITIES: [&str; 3] = ["expression", "methylation", "mirna"];

/// Row-aligned multi-omics views with survival outcome and optional subtype.
#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    pub patient_ids: Vec<String>,
    pub modalities: Vec<String>,
    pub views: Vec<Matrix>,
    pub times: Vec<f64>,
    pub events: Vec<bool>,
    /// `None` stands for "Unknown".
    pub subtypes: Vec<Option<String>>,
}

impl Cohort {
    pub fn new(
        patient_ids: Vec<String>,
        modalities: Vec<String>,
        views: Vec<Matrix>,
        times: Vec<f64>,
        events: Vec<bool>,
        subtypes: Vec<Option<String>>,
    ) -> Result<Self> {
        let n = patient_ids.len();
        if modalities.len() != views.len() {
            return Err(Error::lengths("cohort modalities", modalities.len(), views.len()));
        }
        for v in &views {
            if v.rows() != n {
                return Err(Error::lengths("cohort view rows", n, v.rows()));
            }
        }
        if times.len() != n {
            return Err(Error::lengths("cohort times", n, times.len()));
        }
        if events.len() != n {
            return Err(Error::lengths("cohort events", n, events.len()));
        }
        if subtypes.len() != n {
            return Err(Error::lengths("cohort subtypes", n, subtypes.len()));
        }
        if let Some(i) = times.iter().position(|t| !t.is_finite() || *t < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "patient {} has invalid survival time {}",
                patient_ids[i], times[i]
            )));
        }
        Ok(Self {
            patient_ids,
            modalities,
            views,
            times,
            events,
            subtypes,
        })
    }

    pub fn len(&self) -> usize {
        self.patient_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patient_ids.is_empty()
    }

    pub fn subset(&self, indices: &[usize]) -> Cohort {
        Cohort {
            patient_ids: indices.iter().map(|&i| self.patient_ids[i].clone()).collect(),
            modalities: self.modalities.clone(),
            views: self.views.iter().map(|v| v.select_rows(indices)).collect(),
            times: indices.iter().map(|&i| self.times[i]).collect(),
            events: indices.iter().map(|&i| self.events[i]).collect(),
            subtypes: indices.iter().map(|&i| self.subtypes[i].clone()).collect(),
        }
    }

    pub fn survival(&self) -> BatchSurvival {
        BatchSurvival {
            t: self.times.clone(),
            e: self.events.clone(),
        }
    }

    /// Subtype labels as dense integer codes in sorted-name order; unknown
    /// entries stay `None`. The same name always receives the same code
    /// within one call.
    pub fn subtype_codes(&self) -> (Vec<String>, Vec<Option<usize>>) {
        let mut names: Vec<String> = self.subtypes.iter().flatten().cloned().collect();
        names.sort();
        names.dedup();
        let codes = self
            .subtypes
            .iter()
            .map(|s| s.as_ref().map(|s| names.binary_search(s).expect("collected above")))
            .collect();
        (names, codes)
    }
}

/// Parses a clinical status field (case-insensitive, surrounding whitespace
/// ignored): `alive`/`censored`/`0` map to censored, `dead`/`deceased`/`1`
/// to an observed event.
pub fn parse_status(raw: &str) -> Option<bool> {
    let s = raw.trim();
    if s.eq_ignore_ascii_case("alive") || s.eq_ignore_ascii_case("censored") || s == "0" {
        Some(false)
    } else if s.eq_ignore_ascii_case("dead") || s.eq_ignore_ascii_case("deceased") || s == "1" {
        Some(true)
    } else {
        None
    }
}

/// Per-feature standardization fitted on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZScore {
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
}

const MIN_STD: f64 = 1e-12;

impl ZScore {
    pub fn fit(train: &Matrix) -> Result<Self> {
        if train.rows() == 0 {
            return Err(Error::InvalidArgument("z-score fit on empty matrix".into()));
        }
        let means = train.column_means();
        let n = train.rows() as f64;
        let mut var = vec![0.0; train.cols()];
        for row in train.row_iter() {
            for ((acc, x), m) in var.iter_mut().zip(row).zip(&means) {
                *acc += (x - m) * (x - m);
            }
        }
        let scales = var
            .into_iter()
            .map(|v| {
                let sd = libm::sqrt(v / n);
                if sd < MIN_STD {
                    1.0
                } else {
                    sd
                }
            })
            .collect();
        Ok(Self { means, scales })
    }

    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.means.len() {
            return Err(Error::lengths("z-score apply", self.means.len(), x.cols()));
        }
        let mut out = x.clone();
        for i in 0..out.rows() {
            for ((v, m), s) in out.row_mut(i).iter_mut().zip(&self.means).zip(&self.scales) {
                *v = (*v - m) / s;
            }
        }
        Ok(out)
    }
}

/// Linear-interpolation quantile of sorted data (`q` in [0, 1]).
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = libm::floor(pos) as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Divides survival times by the interquartile range of the training times.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeScale {
    pub scale: f64,
}

impl TimeScale {
    pub fn fit(train_times: &[f64]) -> Result<Self> {
        if train_times.is_empty() {
            return Err(Error::InvalidArgument("time scale fit on no times".into()));
        }
        if train_times.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return Err(Error::InvalidArgument("survival times must be finite and >= 0".into()));
        }
        let mut sorted = train_times.to_vec();
        sorted.sort_by(f64::total_cmp);
        let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
        let scale = if iqr > 0.0 { iqr } else { 1.0 };
        Ok(Self { scale })
    }

    pub fn apply(&self, t: &[f64]) -> Vec<f64> {
        t.iter().map(|v| v / self.scale).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(seed: u64) -> Self {
        Self {
            train: 0.6,
            val: 0.2,
            test: 0.2,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded shuffle followed by contiguous slicing. Validation and test sizes
/// are floored; the remainder goes to training.
pub fn split(n: usize, spec: &SplitSpec) -> Result<Split> {
    if n < 5 {
        return Err(Error::InvalidArgument(format!("cannot split {n} patients (need >= 5)")));
    }
    let fracs = [spec.train, spec.val, spec.test];
    if fracs.iter().any(|f| !(0.0..=1.0).contains(f)) || (fracs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument("split fractions must be in [0, 1] and sum to 1".into()));
    }
    let size = |f: f64| libm::floor(f * n as f64 + 1e-9) as usize;
    let (n_val, n_test) = (size(spec.val), size(spec.test));
    let n_train = n - n_val - n_test;
    let mut order: Vec<usize> = (0..n).collect();
    Rng::new(spec.seed).derive("split").shuffle(&mut order);
    Ok(Split {
        train: order[..n_train].to_vec(),
        val: order[n_train..n_train + n_val].to_vec(),
        test: order[n_train + n_val..].to_vec(),
    })
}

/// Normalization parameters, all fitted on the training rows alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessor {
    pub zscores: Vec<ZScore>,
    pub time_scale: TimeScale,
}

impl Preprocessor {
    /// Fits on `train`, which must already be restricted to training rows.
    pub fn fit(train: &Cohort) -> Result<Self> {
        let zscores = train.views.iter().map(ZScore::fit).collect::<Result<Vec<_>>>()?;
        Ok(Self {
            zscores,
            time_scale: TimeScale::fit(&train.times)?,
        })
    }

    pub fn apply(&self, cohort: &Cohort) -> Result<Cohort> {
        if cohort.views.len() != self.zscores.len() {
            return Err(Error::lengths("preprocess modalities", self.zscores.len(), cohort.views.len()));
        }
        let views = self
            .zscores
            .iter()
            .zip(&cohort.views)
            .map(|(z, v)| z.apply(v))
            .collect::<Result<Vec<_>>>()?;
        Ok(Cohort {
            views,
            times: self.time_scale.apply(&cohort.times),
            ..cohort.clone()
        })
    }
}

/// A split cohort after train-fitted normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub split: Split,
    pub preprocessor: Preprocessor,
    pub train: Cohort,
    pub val: Cohort,
    pub test: Cohort,
}

pub fn prepare(cohort: &Cohort, spec: &SplitSpec) -> Result<Prepared> {
    let split = split(cohort.len(), spec)?;
    let train_raw = cohort.subset(&split.train);
    let preprocessor = Preprocessor::fit(&train_raw)?;
    Ok(Prepared {
        train: preprocessor.apply(&train_raw)?,
        val: preprocessor.apply(&cohort.subset(&split.val))?,
        test: preprocessor.apply(&cohort.subset(&split.test))?,
        split,
        preprocessor,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_patients: usize,
    pub n_subtypes: usize,
    pub latent_dim: usize,
    pub modality_dims: Vec<usize>,
    /// Standard deviation of the subtype centers.
    pub center_scale: f64,
    /// Within-subtype latent noise.
    pub noise: f64,
    /// Per-feature noise added after the linear map.
    pub feature_noise: f64,
    /// One exponential rate per subtype.
    pub hazard_rates: Vec<f64>,
    pub censoring_fraction: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(msg.to_string()));
        if self.n_subtypes < 2 {
            return bad("synthetic cohort needs at least 2 subtypes");
        }
        if self.n_patients < self.n_subtypes {
            return bad("synthetic cohort needs at least one patient per subtype");
        }
        if self.hazard_rates.len() != self.n_subtypes {
            return Err(Error::lengths("hazard rates", self.n_subtypes, self.hazard_rates.len()));
        }
        if self.hazard_rates.iter().any(|r| !(*r > 0.0) || !r.is_finite()) {
            return bad("hazard rates must be positive");
        }
        if !(0.0..1.0).contains(&self.censoring_fraction) {
            return bad("censoring fraction must be in [0, 1)");
        }
        if self.latent_dim == 0 || self.modality_dims.is_empty() || self.modality_dims.contains(&0) {
            return bad("latent and modality dimensions must be >= 1");
        }
        if !(self.center_scale >= 0.0 && self.noise >= 0.0 && self.feature_noise >= 0.0) {
            return bad("scales must be non-negative");
        }
        Ok(())
    }
}

fn gaussian_matrix(rows: usize, cols: usize, scale: f64, rng: &mut Rng) -> Matrix {
    let data = (0..rows * cols).map(|_| scale * rng.normal()).collect();
    Matrix::from_vec(rows, cols, data).expect("length matches shape")
}

/// Draws a synthetic cohort. Patient `i` belongs to subtype `i mod K`; latent
/// `h = c_k + noise`, each view `x = A_v h + ε`, survival time exponential at
/// the subtype rate, and a censored patient's time is drawn uniformly below
/// its event time.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Cohort> {
    spec.validate()?;
    let root = Rng::new(spec.seed);
    let (n, k, d) = (spec.n_patients, spec.n_subtypes, spec.latent_dim);
    let centers = gaussian_matrix(k, d, spec.center_scale, &mut root.derive("synthetic-centers"));
    let subtype: Vec<usize> = (0..n).map(|i| i % k).collect();

    let mut latent_rng = root.derive("synthetic-latent");
    let mut latent = Matrix::zeros(n, d);
    for (i, &s) in subtype.iter().enumerate() {
        for (j, h) in latent.row_mut(i).iter_mut().enumerate() {
            *h = centers[(s, j)] + spec.noise * latent_rng.normal();
        }
    }

    let mut views = Vec::with_capacity(spec.modality_dims.len());
    for (v, &p) in spec.modality_dims.iter().enumerate() {
        let mut rng = root.derive_indexed("synthetic-view", v as u64);
        let map = gaussian_matrix(d, p, 1.0 / libm::sqrt(d as f64), &mut rng);
        let noise = gaussian_matrix(n, p, spec.feature_noise, &mut rng);
        views.push(latent.matmul(&map)?.add(&noise)?);
    }

    let mut surv_rng = root.derive("synthetic-survival");
    let mut times = Vec::with_capacity(n);
    let mut events = Vec::with_capacity(n);
    for &s in &subtype {
        let t = surv_rng.exponential(spec.hazard_rates[s]);
        if surv_rng.uniform() < spec.censoring_fraction {
            times.push(t * surv_rng.uniform());
            events.push(false);
        } else {
            times.push(t);
            events.push(true);
        }
    }

    let width = format!("{}", n.saturating_sub(1)).len();
    let modalities = (0..spec.modality_dims.len())
        .map(|v| match DEFAULT_MODALITIES.get(v) {
            Some(name) => name.to_string(),
            None => format!("view{v}"),
        })
        .collect();
    Cohort::new(
        (0..n).map(|i| format!("P{i:0width$}")).collect(),
        modalities,
        views,
        times,
        events,
        subtype.iter().map(|s| Some(format!("S{s}"))).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::{kmeans_fit, KMeansConfig};
    use crate::clustmetrics::ari;
    use crate::survmetrics::km_fit;

    fn spec(seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            n_patients: 90,
            n_subtypes: 3,
            latent_dim: 6,
            modality_dims: vec![12, 10, 8],
            center_scale: 3.0,
            noise: 1.0,
            feature_noise: 0.1,
            hazard_rates: vec![1.0, 2.0, 4.0],
            censoring_fraction: 0.3,
            seed,
        }
    }

    #[test]
    fn status_encoding() {
        for s in ["alive", "ALIVE", " Censored ", "0"] {
            assert_eq!(parse_status(s), Some(false), "{s}");
        }
        for s in ["dead", "Deceased", "1"] {
            assert_eq!(parse_status(s), Some(true), "{s}");
        }
        assert_eq!(parse_status("maybe"), None);
        assert_eq!(parse_status(""), None);
    }

    #[test]
    fn zscore_standardizes_train_and_handles_constants() {
        let x = Matrix::from_rows(&[[1.0, 7.0], [2.0, 7.0], [6.0, 7.0], [3.0, 7.0]]).unwrap();
        let z = ZScore::fit(&x).unwrap();
        let out = z.apply(&x).unwrap();
        let col = out.column(0);
        let mean = col.iter().sum::<f64>() / 4.0;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-10 && (var - 1.0).abs() < 1e-10);
        assert!(out.column(1).iter().all(|&v| v == 0.0));
        let val = Matrix::from_rows(&[[10.0, 8.0]]).unwrap();
        assert!(z.apply(&val).unwrap()[(0, 0)] > 1.0);
        assert!(ZScore::fit(&Matrix::zeros(0, 2)).is_err());
    }

    #[test]
    fn time_scale_is_iqr_and_scale_invariant() {
        let t = [0.0, 1.0, 2.0, 3.0, 4.0];
        // quartiles 1 and 3
        assert_eq!(TimeScale::fit(&t).unwrap().scale, 2.0);
        let unit = [0.0, 0.5, 1.0, 1.5, 2.0];
        let ts = TimeScale::fit(&[0.0, 0.25, 0.5, 0.75, 1.0, 1.25, 1.5]).unwrap();
        assert_eq!(ts.scale, 0.75);
        let scaled: Vec<f64> = t.iter().map(|v| v * 10.0).collect();
        let a = TimeScale::fit(&t).unwrap().apply(&t);
        let b = TimeScale::fit(&scaled).unwrap().apply(&scaled);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
        assert_eq!(TimeScale::fit(&[2.0; 4]).unwrap().scale, 1.0);
        let unit_scale = TimeScale::fit(&unit).unwrap();
        assert_eq!(unit_scale.apply(&unit), unit.to_vec());
    }

    #[test]
    fn split_sizes_and_partition() {
        let s = split(612, &SplitSpec::new(0)).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (368, 122, 122));
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..612).collect::<Vec<_>>());
        assert_eq!(s, split(612, &SplitSpec::new(0)).unwrap());
        assert_ne!(s, split(612, &SplitSpec::new(1)).unwrap());
        assert_eq!(split(5, &SplitSpec::new(0)).unwrap().val.len(), 1);
        assert!(split(4, &SplitSpec::new(0)).is_err());
        let bad = SplitSpec { train: 0.5, ..SplitSpec::new(0) };
        assert!(split(10, &bad).is_err());
    }

    #[test]
    fn synthetic_shapes_and_determinism() {
        let c = generate_synthetic(&spec(4)).unwrap();
        assert_eq!(c.len(), 90);
        assert_eq!(c.views.iter().map(|v| v.cols()).collect::<Vec<_>>(), vec![12, 10, 8]);
        assert_eq!(c.modalities, vec!["expression", "methylation", "mirna"]);
        assert_eq!(c, generate_synthetic(&spec(4)).unwrap());
        assert_ne!(c.views[0], generate_synthetic(&spec(5)).unwrap().views[0]);
        let censored = c.events.iter().filter(|e| !**e).count();
        assert!((10..=45).contains(&censored), "{censored}");
    }

    #[test]
    fn no_censoring_means_all_events() {
        let c = generate_synthetic(&SyntheticSpec { censoring_fraction: 0.0, ..spec(1) }).unwrap();
        assert!(c.events.iter().all(|&e| e));
    }

    #[test]
    fn higher_hazard_subtype_dies_earlier() {
        let s = SyntheticSpec {
            n_patients: 400,
            n_subtypes: 2,
            hazard_rates: vec![1.0, 4.0],
            ..spec(2)
        };
        let c = generate_synthetic(&s).unwrap();
        let (_, codes) = c.subtype_codes();
        let median = |g: usize| {
            let idx: Vec<usize> = (0..c.len()).filter(|&i| codes[i] == Some(g)).collect();
            let sub = c.subset(&idx);
            km_fit(&sub.times, &sub.events).unwrap().median().unwrap()
        };
        assert!(median(1) < median(0));
    }

    fn raw_ari(noise: f64, seed: u64) -> f64 {
        let s = SyntheticSpec { n_patients: 300, noise, ..spec(seed) };
        let c = generate_synthetic(&s).unwrap();
        let x = Matrix::hconcat(&c.views.iter().collect::<Vec<_>>()).unwrap();
        let model = kmeans_fit(&x, 3, &Rng::new(seed), &KMeansConfig::default()).unwrap();
        let truth: Vec<usize> = c.subtype_codes().1.into_iter().map(Option::unwrap).collect();
        ari(&model.labels, &truth).unwrap()
    }

    #[test]
    fn low_noise_is_recoverable_from_raw_features() {
        assert!(raw_ari(0.01, 3) > 0.95);
    }

    #[test]
    fn more_noise_degrades_raw_recovery() {
        let levels = [0.5, 2.0, 6.0];
        let mean_ari: Vec<f64> = levels
            .iter()
            .map(|&s| (0..3).map(|seed| raw_ari(s, seed)).sum::<f64>() / 3.0)
            .collect();
        assert!(mean_ari[0] > mean_ari[1] && mean_ari[1] > mean_ari[2], "{mean_ari:?}");
    }

    #[test]
    fn preprocessing_uses_training_rows_only() {
        let cohort = generate_synthetic(&spec(6)).unwrap();
        let spec_split = SplitSpec::new(9);
        let prepared = prepare(&cohort, &spec_split).unwrap();
        let direct = Preprocessor::fit(&cohort.subset(&prepared.split.train)).unwrap();
        assert_eq!(prepared.preprocessor, direct);

        // corrupt every non-training row; the fitted parameters must not move
        let mut tampered = cohort.clone();
        for &i in prepared.split.val.iter().chain(&prepared.split.test) {
            for view in &mut tampered.views {
                view.row_mut(i).iter_mut().for_each(|v| *v = 1e6);
            }
            tampered.times[i] = 1e6;
        }
        let again = prepare(&tampered, &spec_split).unwrap();
        assert_eq!(again.preprocessor, prepared.preprocessor);
        assert_eq!(again.train, prepared.train);
    }

    #[test]
    fn subset_and_codes() {
        let mut c = generate_synthetic(&spec(7)).unwrap();
        c.subtypes[0] = None;
        let sub = c.subset(&[2, 0]);
        assert_eq!(sub.patient_ids, vec![c.patient_ids[2].clone(), c.patient_ids[0].clone()]);
        let (names, codes) = sub.subtype_codes();
        assert_eq!(names, vec!["S2".to_string()]);
        assert_eq!(codes, vec![Some(0), None]);
    }

    #[test]
    fn cohort_rejects_misaligned_or_negative() {
        let ids = vec!["a".to_string(), "b".to_string()];
        let ok = Cohort::new(ids.clone(), vec!["x".into()], vec![Matrix::zeros(2, 1)], vec![1.0, 2.0], vec![true, false], vec![None, None]);
        assert!(ok.is_ok());
        assert!(Cohort::new(ids.clone(), vec!["x".into()], vec![Matrix::zeros(3, 1)], vec![1.0, 2.0], vec![true, false], vec![None, None]).is_err());
        assert!(Cohort::new(ids, vec!["x".into()], vec![Matrix::zeros(2, 1)], vec![-1.0, 2.0], vec![true, false], vec![None, None]).is_err());
    }
}
