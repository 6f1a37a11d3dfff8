//! Joint training loop: Adam with decoupled weight decay, a triangular
//! cyclical learning rate, and early stopping on the validation C-index.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::cluster::{cluster_risk, fuse, kmeans_fit, Fusion, KMeansConfig};
use crate::dataio::Cohort;
use crate::encoder::{EncoderConfig, EncoderParams, Mode};
use crate::losses::{joint_objective_on_tape, BatchSurvival, LossConfig};
use crate::numcore::{Matrix, Rng, Tape, Var};
use crate::survmetrics::c_index;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub lr_min: f64,
    pub lr_max: f64,
    pub cycle_epochs: usize,
    pub weight_decay: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub k_for_validation: usize,
    pub fusion: Fusion,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 1000,
            patience: 20,
            batch_size: 64,
            lr_min: 1e-5,
            lr_max: 1e-3,
            cycle_epochs: 20,
            weight_decay: 1e-6,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            k_for_validation: 4,
            fusion: Fusion::Concat,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::InvalidArgument(msg.into()));
        if !(self.lr_min > 0.0 && self.lr_min < self.lr_max) {
            return fail("need 0 < lr_min < lr_max");
        }
        if self.max_epochs == 0 || self.patience >= self.max_epochs {
            return fail("need max_epochs >= 1 and patience < max_epochs");
        }
        if self.batch_size < 2 {
            return fail("batch_size must be >= 2");
        }
        if self.cycle_epochs < 2 {
            return fail("cycle_epochs must be >= 2");
        }
        if self.k_for_validation == 0 {
            return fail("k_for_validation must be >= 1");
        }
        if !(self.weight_decay >= 0.0)
            || !(0.0..1.0).contains(&self.adam_beta1)
            || !(0.0..1.0).contains(&self.adam_beta2)
            || !(self.adam_eps > 0.0)
        {
            return fail("invalid Adam hyperparameters");
        }
        Ok(())
    }
}

/// Triangular wave between `lr_min` and `lr_max` with period `cycle_epochs`,
/// starting at the minimum.
pub fn cyclical_lr(epoch: usize, cfg: &TrainConfig) -> f64 {
    let period = cfg.cycle_epochs as f64;
    let half = period / 2.0;
    let pos = (epoch % cfg.cycle_epochs) as f64;
    let frac = if pos <= half { pos / half } else { (period - pos) / half };
    cfg.lr_min + (cfg.lr_max - cfg.lr_min) * frac
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<Matrix>,
    pub v: Vec<Matrix>,
    pub step: u64,
}

impl AdamState {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Matrix>) -> Self {
        let m: Vec<Matrix> = params
            .into_iter()
            .map(|p| Matrix::zeros(p.rows(), p.cols()))
            .collect();
        Self {
            v: m.clone(),
            m,
            step: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// One Adam update with bias correction. Weight decay is decoupled and
/// applied before the Adam delta.
pub fn adam_step(
    params: &mut [&mut Matrix],
    grads: &[Matrix],
    state: &mut AdamState,
    hp: &AdamHyper,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::lengths("adam_step", params.len(), grads.len()));
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.m) {
        if p.shape() != g.shape() || p.shape() != m.shape() {
            return Err(Error::dims("adam_step", p.shape(), g.shape()));
        }
    }
    state.step += 1;
    let t = state.step as f64;
    let c1 = 1.0 - libm::pow(hp.beta1, t);
    let c2 = 1.0 - libm::pow(hp.beta2, t);
    for (k, p) in params.iter_mut().enumerate() {
        let g = grads[k].as_slice();
        let m = state.m[k].as_mut_slice();
        let v = state.v[k].as_mut_slice();
        for (i, x) in p.as_mut_slice().iter_mut().enumerate() {
            m[i] = hp.beta1 * m[i] + (1.0 - hp.beta1) * g[i];
            v[i] = hp.beta2 * v[i] + (1.0 - hp.beta2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            *x -= hp.lr * hp.weight_decay * *x;
            *x -= hp.lr * m_hat / (libm::sqrt(v_hat) + hp.eps);
        }
    }
    Ok(())
}

/// One encoder per modality, each with its own init stream.
pub fn init_encoders(
    input_dims: &[usize],
    hidden_dim: usize,
    proj_dim: usize,
    seed: u64,
) -> Result<Vec<EncoderParams>> {
    let root = Rng::new(seed);
    input_dims
        .iter()
        .enumerate()
        .map(|(v, &d)| {
            let mut rng = root.derive_indexed("init", v as u64);
            EncoderParams::init(EncoderConfig::new(d, hidden_dim, proj_dim), &mut rng)
        })
        .collect()
}

/// Eval-mode embeddings of every view.
pub fn embed_views(encoders: &[EncoderParams], views: &[Matrix]) -> Result<Vec<Matrix>> {
    if encoders.len() != views.len() {
        return Err(Error::lengths("embed_views", encoders.len(), views.len()));
    }
    encoders.iter().zip(views).map(|(enc, x)| enc.embed(x)).collect()
}

/// Cluster-derived risk C-index: KMeans on the fused embeddings, KM median
/// per cluster, then Harrell's C.
pub fn cluster_c_index(fused: &Matrix, surv: &BatchSurvival, k: usize, rng: &Rng) -> Result<f64> {
    let k = k.min(fused.rows());
    let model = kmeans_fit(fused, k, rng, &KMeansConfig::default())?;
    let (_, risk) = cluster_risk(&model.labels, k, surv)?;
    c_index(&risk, &surv.t, &surv.e)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub ntxent: f64,
    pub survival: f64,
    pub val_c_index: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_c_index: f64,
    pub stopped_early: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub report: TrainReport,
    /// Parameters from the best validation epoch.
    pub encoders: Vec<EncoderParams>,
}

struct BatchLosses {
    total: f64,
    ntxent: f64,
    survival: f64,
}

fn check_finite(name: &str, value: f64, epoch: usize) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("{name} loss is {value} at epoch {epoch}")))
    }
}

fn train_batch(
    encoders: &mut [EncoderParams],
    views: &[Matrix],
    surv: &BatchSurvival,
    loss_cfg: &LossConfig,
    adam: &mut AdamState,
    hp: &AdamHyper,
    epoch: usize,
) -> Result<BatchLosses> {
    let mut tape = Tape::new();
    let vars: Vec<_> = encoders.iter().map(|e| e.register(&mut tape)).collect();
    let mut embeds: Vec<Var> = Vec::with_capacity(encoders.len());
    for ((enc, v), x) in encoders.iter_mut().zip(&vars).zip(views) {
        let input = tape.leaf(x.clone());
        embeds.push(enc.forward_on_tape(&mut tape, v, input, Mode::Train)?);
    }
    let nodes = joint_objective_on_tape(&mut tape, &embeds, surv, loss_cfg)?;
    let losses = BatchLosses {
        total: tape.value(nodes.total).to_scalar()?,
        ntxent: tape.value(nodes.ntxent).to_scalar()?,
        survival: tape.value(nodes.survival).to_scalar()?,
    };
    check_finite("NT-Xent", losses.ntxent, epoch)?;
    check_finite("survival contrastive", losses.survival, epoch)?;
    check_finite("total", losses.total, epoch)?;

    let grads = tape.backward(nodes.total)?;
    let grad_list: Vec<Matrix> = vars
        .iter()
        .flat_map(|v| v.as_array())
        .map(|var| grads.wrt(var))
        .collect();
    if grad_list.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!("gradient at epoch {epoch}")));
    }
    let mut params: Vec<&mut Matrix> = encoders.iter_mut().flat_map(|e| e.trainable_mut()).collect();
    adam_step(&mut params, &grad_list, adam, hp)?;
    Ok(losses)
}

/// Trains the encoders on `train` with early stopping on `val`. Both
/// cohorts must already be normalized. Returns the best-epoch parameters.
pub fn train(
    train: &Cohort,
    val: &Cohort,
    mut encoders: Vec<EncoderParams>,
    loss_cfg: &LossConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    loss_cfg.validate()?;
    if train.len() < 2 || val.is_empty() {
        return Err(Error::InvalidArgument(
            "training needs >= 2 training and >= 1 validation patients".into(),
        ));
    }
    if encoders.len() != train.views.len() || encoders.len() != val.views.len() {
        return Err(Error::lengths("train encoders", encoders.len(), train.views.len()));
    }

    let root = Rng::new(cfg.seed);
    let val_rng = root.derive("val-kmeans");
    let val_surv = val.survival();
    let train_surv = train.survival();
    let mut adam = AdamState::new(encoders.iter().flat_map(|e| e.trainable()));

    let mut records = Vec::new();
    let mut best = (0usize, f64::NEG_INFINITY, encoders.clone());
    let mut since_best = 0;
    let mut stopped_early = false;

    for epoch in 0..cfg.max_epochs {
        let hp = AdamHyper {
            lr: cyclical_lr(epoch, cfg),
            weight_decay: cfg.weight_decay,
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            eps: cfg.adam_eps,
        };
        let mut order: Vec<usize> = (0..train.len()).collect();
        root.derive_indexed("shuffle", epoch as u64).shuffle(&mut order);

        let (mut total, mut ntxent, mut survival, mut batches) = (0.0, 0.0, 0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let views: Vec<Matrix> = train.views.iter().map(|v| v.select_rows(chunk)).collect();
            let l = train_batch(
                &mut encoders,
                &views,
                &train_surv.select(chunk),
                loss_cfg,
                &mut adam,
                &hp,
                epoch,
            )?;
            total += l.total;
            ntxent += l.ntxent;
            survival += l.survival;
            batches += 1;
        }
        let nb = batches.max(1) as f64;

        let fused = fuse(&embed_views(&encoders, &val.views)?, cfg.fusion)?;
        let val_c = cluster_c_index(&fused, &val_surv, cfg.k_for_validation, &val_rng)?;
        records.push(EpochRecord {
            epoch,
            lr: hp.lr,
            train_loss: total / nb,
            ntxent: ntxent / nb,
            survival: survival / nb,
            val_c_index: val_c,
        });

        if val_c > best.1 {
            best = (epoch, val_c, encoders.clone());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                stopped_early = true;
                break;
            }
        }
    }

    let (best_epoch, best_val_c_index, best_encoders) = best;
    Ok(TrainOutcome {
        report: TrainReport {
            epochs: records,
            best_epoch,
            best_val_c_index,
            stopped_early,
        },
        encoders: best_encoders,
    })
}
