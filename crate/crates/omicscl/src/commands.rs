//! The five subcommands. Each takes a validated [`Config`] and an output
//! directory and writes its artifacts there; every JSON artifact embeds the
//! config it was produced from.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use omicscl_core::cluster::fuse;
use omicscl_core::dataio::{generate_synthetic, prepare, Cohort, Prepared};
use omicscl_core::encoder::EncoderParams;
use omicscl_core::evaluate::{cox_baseline, evaluate_clustering, km_by_cluster, CoxFeatures, EvalReport};
use omicscl_core::trainer::{embed_views, init_encoders, train, EpochRecord, TrainOutcome};
use omicscl_core::{Matrix, Rng};

use crate::checkpoint::Checkpoint;
use crate::csvio;
use crate::{CliError, Config};

pub const CONFIG_FILE: &str = "config.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const TRAIN_LOG_FILE: &str = "train_report.jsonl";
pub const TRAIN_SUMMARY_FILE: &str = "train_report.json";
pub const EMBEDDINGS_FILE: &str = "embeddings.csv";
pub const EVALUATION_FILE: &str = "evaluation.json";
pub const KM_FILE: &str = "km_curves.csv";
pub const CLUSTERS_FILE: &str = "clusters.csv";
pub const ABLATION_FILE: &str = "ablation.json";
pub const SWEEP_JSON_FILE: &str = "sweep.json";
pub const SWEEP_CSV_FILE: &str = "sweep.csv";

fn eval_rng(cfg: &Config) -> Rng {
    Rng::new(cfg.seed).derive("eval-kmeans")
}

fn cox_rng(cfg: &Config) -> Rng {
    Rng::new(cfg.seed).derive("cox-kmeans")
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Data(e.to_string()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

fn prepare_out(out: &Path, cfg: &Config) -> Result<(), CliError> {
    fs::create_dir_all(out)?;
    fs::write(out.join(CONFIG_FILE), cfg.to_json() + "\n")?;
    Ok(())
}

/// Raw cohort from `data_dir`, or the configured synthetic generator.
pub fn load_data(cfg: &Config) -> Result<Cohort, CliError> {
    match &cfg.data_dir {
        Some(dir) => csvio::load_cohort_dir(dir),
        None => Ok(generate_synthetic(&cfg.synthetic())?),
    }
}

/// Fused eval-mode embeddings of a (normalized) cohort.
pub fn fused_embeddings(cfg: &Config, encoders: &[EncoderParams], cohort: &Cohort) -> Result<Matrix, CliError> {
    Ok(fuse(&embed_views(encoders, &cohort.views)?, cfg.fusion)?)
}

pub struct Fitted {
    pub data: Prepared,
    pub outcome: TrainOutcome,
}

/// Splits, normalizes and trains according to `cfg`.
pub fn fit(cfg: &Config) -> Result<Fitted, CliError> {
    let cohort = load_data(cfg)?;
    fit_cohort(cfg, &cohort)
}

pub fn fit_cohort(cfg: &Config, cohort: &Cohort) -> Result<Fitted, CliError> {
    let data = prepare(cohort, &cfg.split())?;
    let dims: Vec<usize> = data.train.views.iter().map(Matrix::cols).collect();
    let encoders = init_encoders(&dims, cfg.hidden_dim, cfg.proj_dim, cfg.seed)?;
    let encoders = encoders
        .into_iter()
        .map(|mut e| {
            e.config.bn_eps = cfg.bn_eps;
            e.config.bn_momentum = cfg.bn_momentum;
            e
        })
        .collect();
    let outcome = train(&data.train, &data.val, encoders, &cfg.loss(), &cfg.train())?;
    Ok(Fitted { data, outcome })
}

pub fn cmd_generate(cfg: &Config, out: &Path) -> Result<(), CliError> {
    prepare_out(out, cfg)?;
    let cohort = load_data(cfg)?;
    csvio::write_cohort_dir(out, &cohort)
}

#[derive(Debug, Serialize)]
struct TrainSummary<'a> {
    config: &'a Config,
    best_epoch: usize,
    best_val_c_index: f64,
    stopped_early: bool,
    epochs_run: usize,
}

pub fn cmd_train(cfg: &Config, out: &Path) -> Result<Fitted, CliError> {
    prepare_out(out, cfg)?;
    let fitted = fit(cfg)?;
    let report = &fitted.outcome.report;

    let mut log = String::new();
    for rec in &report.epochs {
        log.push_str(&serde_json::to_string(rec).map_err(|e| CliError::Data(e.to_string()))?);
        log.push('\n');
    }
    fs::write(out.join(TRAIN_LOG_FILE), log)?;
    write_json(
        &out.join(TRAIN_SUMMARY_FILE),
        &TrainSummary {
            config: cfg,
            best_epoch: report.best_epoch,
            best_val_c_index: report.best_val_c_index,
            stopped_early: report.stopped_early,
            epochs_run: report.epochs.len(),
        },
    )?;

    let data = &fitted.data;
    Checkpoint::new(
        cfg,
        &data.train.modalities,
        &fitted.outcome.encoders,
        &data.preprocessor,
        &data.split,
        report.best_epoch,
    )
    .save(&out.join(CHECKPOINT_FILE))?;

    let mut rows: Vec<(String, &str, Vec<f64>)> = Vec::new();
    for (name, split) in [("train", &data.train), ("val", &data.val), ("test", &data.test)] {
        let fused = fused_embeddings(cfg, &fitted.outcome.encoders, split)?;
        for (id, row) in split.patient_ids.iter().zip(fused.row_iter()) {
            rows.push((id.clone(), name, row.to_vec()));
        }
    }
    let borrowed: Vec<(&str, &str, &[f64])> =
        rows.iter().map(|(id, s, v)| (id.as_str(), *s, v.as_slice())).collect();
    csvio::write_embeddings(&out.join(EMBEDDINGS_FILE), &borrowed)?;
    Ok(fitted)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Val,
    Test,
}

impl SplitName {
    fn pick<'a>(&self, data: &'a Prepared) -> &'a Cohort {
        match self {
            SplitName::Train => &data.train,
            SplitName::Val => &data.val,
            SplitName::Test => &data.test,
        }
    }
}

#[derive(Debug, Serialize)]
struct EvaluationOutput<'a> {
    config: &'a Config,
    checkpoint: String,
    split: SplitName,
    report: &'a EvalReport,
}

/// Rebuilds the normalized splits recorded in a checkpoint.
pub fn restore(ckpt: &Checkpoint, cohort: &Cohort) -> Result<Prepared, CliError> {
    let n_split = ckpt.split.train.len() + ckpt.split.val.len() + ckpt.split.test.len();
    if n_split != cohort.len() {
        return Err(CliError::Data(format!(
            "checkpoint was trained on {n_split} patients but the data has {}",
            cohort.len()
        )));
    }
    let dims: Vec<usize> = cohort.views.iter().map(Matrix::cols).collect();
    let expected: Vec<usize> = ckpt.encoders.iter().map(|e| e.config.input_dim).collect();
    if dims != expected {
        return Err(CliError::Data(format!(
            "feature dimensions {dims:?} do not match the checkpoint's {expected:?}"
        )));
    }
    let pre = &ckpt.preprocessor;
    Ok(Prepared {
        train: pre.apply(&cohort.subset(&ckpt.split.train))?,
        val: pre.apply(&cohort.subset(&ckpt.split.val))?,
        test: pre.apply(&cohort.subset(&ckpt.split.test))?,
        split: ckpt.split.clone(),
        preprocessor: pre.clone(),
    })
}

/// Clusters one split of a trained model at `k` and writes the report, KM
/// curves per cluster and the cluster assignments.
pub fn cmd_evaluate(
    cfg: &Config,
    checkpoint: &Path,
    split: SplitName,
    k: usize,
    out: &Path,
) -> Result<EvalReport, CliError> {
    prepare_out(out, cfg)?;
    let ckpt = Checkpoint::load(checkpoint)?;
    let encoders = ckpt.encoder_params()?;
    let data = restore(&ckpt, &load_data(cfg)?)?;
    let cohort = split.pick(&data);
    if k > cohort.len() {
        return Err(CliError::Usage(format!("k = {k} exceeds the {} patients in the split", cohort.len())));
    }
    let fused = fused_embeddings(cfg, &encoders, cohort)?;
    let ev = evaluate_clustering(&fused, cohort, k, &eval_rng(cfg))?;

    write_json(
        &out.join(EVALUATION_FILE),
        &EvaluationOutput {
            config: cfg,
            checkpoint: checkpoint.display().to_string(),
            split,
            report: &ev.report,
        },
    )?;
    let curves: Vec<(String, _)> = km_by_cluster(&ev.labels, k, &cohort.survival())?
        .into_iter()
        .map(|(c, curve)| (format!("cluster{c}"), curve))
        .collect();
    csvio::write_km_curves(&out.join(KM_FILE), &curves)?;
    csvio::write_clusters(&out.join(CLUSTERS_FILE), &cohort.patient_ids, &ev.labels)?;
    Ok(ev.report)
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationRun {
    pub alpha: f64,
    pub seed: u64,
    pub config: Config,
    pub test_c_index: f64,
    pub test_purity: Option<f64>,
    pub best_epoch: usize,
    pub best_val_c_index: f64,
    pub epochs: Vec<EpochRecord>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationReport {
    pub config: Config,
    pub eval_k: usize,
    pub with_survival: AblationRun,
    pub without_survival: AblationRun,
    /// `with_survival.test_c_index - without_survival.test_c_index`
    pub delta: f64,
}

fn test_report(cfg: &Config, fitted: &Fitted) -> Result<EvalReport, CliError> {
    let test = &fitted.data.test;
    let fused = fused_embeddings(cfg, &fitted.outcome.encoders, test)?;
    Ok(evaluate_clustering(&fused, test, cfg.eval_k, &eval_rng(cfg))?.report)
}

fn ablation_run(cfg: &Config, cohort: &Cohort) -> Result<(AblationRun, Fitted), CliError> {
    let fitted = fit_cohort(cfg, cohort)?;
    let report = test_report(cfg, &fitted)?;
    let r = &fitted.outcome.report;
    let run = AblationRun {
        alpha: cfg.alpha,
        seed: cfg.seed,
        config: cfg.clone(),
        test_c_index: report.c_index,
        test_purity: report.purity,
        best_epoch: r.best_epoch,
        best_val_c_index: r.best_val_c_index,
        epochs: r.epochs.clone(),
    };
    Ok((run, fitted))
}

/// Trains with the configured α and with α = 0 on the same data and seed.
pub fn ablate(cfg: &Config) -> Result<AblationReport, CliError> {
    ablate_fitted(cfg).map(|(report, _)| report)
}

/// Like [`ablate`], also returning the model trained with the configured α.
pub fn ablate_fitted(cfg: &Config) -> Result<(AblationReport, Fitted), CliError> {
    let cohort = load_data(cfg)?;
    let (with_survival, fitted) = ablation_run(cfg, &cohort)?;
    let without_cfg = Config { alpha: 0.0, ..cfg.clone() };
    let without_survival = if cfg.alpha == 0.0 {
        with_survival.clone()
    } else {
        ablation_run(&without_cfg, &cohort)?.0
    };
    let report = AblationReport {
        config: cfg.clone(),
        eval_k: cfg.eval_k,
        delta: with_survival.test_c_index - without_survival.test_c_index,
        with_survival,
        without_survival,
    };
    Ok((report, fitted))
}

pub fn cmd_ablate(cfg: &Config, out: &Path) -> Result<AblationReport, CliError> {
    prepare_out(out, cfg)?;
    let report = ablate(cfg)?;
    write_json(&out.join(ABLATION_FILE), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub k: usize,
    pub c_index: f64,
    pub cox_c_index_embeddings: f64,
    pub cox_c_index_cluster_onehot: f64,
    pub purity: Option<f64>,
    pub silhouette: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub config: Config,
    pub split: SplitName,
    pub rows: Vec<SweepRow>,
}

/// Per-k metrics on the test split of an already trained model.
pub fn sweep_fitted(cfg: &Config, fitted: &Fitted, k_min: usize, k_max: usize) -> Result<SweepReport, CliError> {
    let data = &fitted.data;
    let n = data.test.len();
    if k_min < 2 || k_min > k_max || k_max >= n {
        return Err(CliError::Usage(format!(
            "k range {k_min}..={k_max} must lie within [2, {n})"
        )));
    }
    let encoders = &fitted.outcome.encoders;
    let train_fused = fused_embeddings(cfg, encoders, &data.train)?;
    let test_fused = fused_embeddings(cfg, encoders, &data.test)?;
    let (train_surv, test_surv) = (data.train.survival(), data.test.survival());
    let cox = |features, k| {
        cox_baseline(&train_fused, &train_surv, &test_fused, &test_surv, features, k, &cox_rng(cfg))
    };
    let embeddings_c = cox(CoxFeatures::Embeddings, k_min)?.c_index;
    let rows = (k_min..=k_max)
        .map(|k| {
            let report = evaluate_clustering(&test_fused, &data.test, k, &eval_rng(cfg))?.report;
            Ok(SweepRow {
                k,
                c_index: report.c_index,
                cox_c_index_embeddings: embeddings_c,
                cox_c_index_cluster_onehot: cox(CoxFeatures::ClusterOnehot, k)?.c_index,
                purity: report.purity,
                silhouette: report.silhouette,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    Ok(SweepReport {
        config: cfg.clone(),
        split: SplitName::Test,
        rows,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn cmd_sweep(cfg: &Config, k_min: usize, k_max: usize, out: &Path) -> Result<SweepReport, CliError> {
    prepare_out(out, cfg)?;
    let fitted = fit(cfg)?;
    let report = sweep_fitted(cfg, &fitted, k_min, k_max)?;
    write_json(&out.join(SWEEP_JSON_FILE), &report)?;

    let path = out.join(SWEEP_CSV_FILE);
    let mut w = csv::Writer::from_path(&path).map_err(|e| CliError::Data(e.to_string()))?;
    w.write_record(["k", "c_index", "cox_c_index_embeddings", "cox_c_index_cluster_onehot", "purity", "silhouette"])
        .map_err(|e| CliError::Data(e.to_string()))?;
    for r in &report.rows {
        w.write_record([
            r.k.to_string(),
            r.c_index.to_string(),
            r.cox_c_index_embeddings.to_string(),
            r.cox_c_index_cluster_onehot.to_string(),
            opt(r.purity),
            opt(r.silhouette),
        ])
        .map_err(|e| CliError::Data(e.to_string()))?;
    }
    w.flush()?;
    Ok(report)
}

/// `<out>/checkpoint.json` unless given explicitly.
pub fn default_checkpoint(out: &Path, explicit: Option<PathBuf>) -> PathBuf {
    explicit.unwrap_or_else(|| out.join(CHECKPOINT_FILE))
}
