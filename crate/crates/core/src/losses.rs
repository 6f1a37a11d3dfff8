//! Training objectives: cross-modality NT-Xent, the survival contrastive
//! regularizer, and their weighted sum.
//!
//! Each loss has a tape form (used for training) and a plain form that
//! returns the scalar value.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::numcore::{Matrix, PairKind, PairTerm, Tape, Var, NORM_EPS};
use crate::{Error, Result};

/// Which embedding the survival regularizer sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SurvTarget {
    /// Mean of the modality embeddings, re-normalized.
    #[default]
    Fused,
    /// Mean of the per-modality survival losses.
    PerModalityMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub tau: f64,
    /// Survival-time threshold separating "similar" from "dissimilar" pairs.
    pub delta_time: f64,
    /// Hinge margin on embedding distance for dissimilar pairs.
    pub delta_dist: f64,
    pub lambda_pull: f64,
    pub lambda_push: f64,
    pub alpha: f64,
    pub tanh_weighting: bool,
    /// Standard NT-Xent keeps the positive in the softmax denominator;
    /// the default excludes it (`j ≠ i`).
    pub include_positive_in_denominator: bool,
    pub surv_target: SurvTarget,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            tau: 0.1,
            delta_time: 1.0,
            delta_dist: 1.0,
            lambda_pull: 1.0,
            lambda_push: 1.0,
            alpha: 10.0,
            tanh_weighting: false,
            include_positive_in_denominator: false,
            surv_target: SurvTarget::Fused,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(alloc::format!("loss config: {what}")));
        if !(self.tau > 0.0) {
            return bad("tau must be > 0");
        }
        if !(self.delta_time > 0.0) || !(self.delta_dist > 0.0) {
            return bad("delta_time and delta_dist must be > 0");
        }
        if !(self.alpha >= 0.0) {
            return bad("alpha must be >= 0");
        }
        if !(self.lambda_pull >= 0.0) || !(self.lambda_push >= 0.0) {
            return bad("lambda_pull and lambda_push must be >= 0");
        }
        Ok(())
    }
}

/// Survival times and event indicators of a batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSurvival {
    pub t: Vec<f64>,
    /// `true` = event (death) observed, `false` = censored.
    pub e: Vec<bool>,
}

impl BatchSurvival {
    pub fn new(t: Vec<f64>, e: Vec<bool>) -> Result<Self> {
        if t.len() != e.len() {
            return Err(Error::lengths("BatchSurvival", t.len(), e.len()));
        }
        if let Some(bad) = t.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidArgument(alloc::format!(
                "survival times must be finite and >= 0, got {bad}"
            )));
        }
        Ok(Self { t, e })
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            t: indices.iter().map(|&i| self.t[i]).collect(),
            e: indices.iter().map(|&i| self.e[i]).collect(),
        }
    }
}

/// NT-Xent between two views on the tape (mean over anchors).
pub fn ntxent_pair_on_tape(
    tape: &mut Tape,
    zv: Var,
    zw: Var,
    tau: f64,
    include_positive: bool,
) -> Result<Var> {
    let (a, b) = (tape.value(zv).shape(), tape.value(zw).shape());
    if a != b {
        return Err(Error::dims("ntxent_pair", a, b));
    }
    if a.0 < 2 {
        return Err(Error::BatchTooSmall(a.0));
    }
    // cosine similarity
    let nv = tape.row_l2_normalize(zv, NORM_EPS);
    let nw = tape.row_l2_normalize(zw, NORM_EPS);
    let nw_t = tape.transpose(nw);
    let sim = tape.matmul(nv, nw_t)?;
    let logits = tape.scale(sim, 1.0 / tau);
    tape.contrastive_cross_entropy(logits, include_positive)
}

/// Mean of [`ntxent_pair_on_tape`] over all ordered modality pairs `v ≠ w`.
pub fn ntxent_multimodal_on_tape(tape: &mut Tape, embeds: &[Var], cfg: &LossConfig) -> Result<Var> {
    if embeds.len() < 2 {
        return Err(Error::InvalidArgument(
            "NT-Xent needs at least two modalities".into(),
        ));
    }
    let mut pair_losses = Vec::with_capacity(embeds.len() * (embeds.len() - 1));
    for (v, &zv) in embeds.iter().enumerate() {
        for (w, &zw) in embeds.iter().enumerate() {
            if v != w {
                pair_losses.push(ntxent_pair_on_tape(
                    tape,
                    zv,
                    zw,
                    cfg.tau,
                    cfg.include_positive_in_denominator,
                )?);
            }
        }
    }
    tape.mean_of(&pair_losses)
}

/// Weighted pair list for the survival regularizer. Each pull (push) weight
/// already carries `λ / |pull set|` (`λ / |push set|`) so that the sum over
/// terms is the mean over qualifying pairs.
pub fn survival_pair_terms(surv: &BatchSurvival, cfg: &LossConfig) -> Vec<PairTerm> {
    let n = surv.len();
    let mut pull = Vec::new();
    let mut push = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let diff = surv.t[i] - surv.t[j];
            let gap = diff.abs();
            let similarity = libm::tanh(diff).abs();
            if gap >= cfg.delta_time {
                let w = if cfg.tanh_weighting { similarity } else { 1.0 };
                push.push(PairTerm {
                    i,
                    j,
                    weight: w,
                    kind: PairKind::Push,
                });
            } else if surv.e[i] && surv.e[j] {
                let w = if cfg.tanh_weighting { 1.0 - similarity } else { 1.0 };
                pull.push(PairTerm {
                    i,
                    j,
                    weight: w,
                    kind: PairKind::Pull,
                });
            }
        }
    }
    let pull_scale = cfg.lambda_pull / pull.len().max(1) as f64;
    let push_scale = cfg.lambda_push / push.len().max(1) as f64;
    pull.iter_mut().for_each(|t| t.weight *= pull_scale);
    push.iter_mut().for_each(|t| t.weight *= push_scale);
    pull.extend(push);
    pull
}

pub fn survival_contrastive_on_tape(
    tape: &mut Tape,
    z: Var,
    surv: &BatchSurvival,
    cfg: &LossConfig,
) -> Result<Var> {
    let rows = tape.value(z).rows();
    if rows != surv.len() {
        return Err(Error::lengths("survival_contrastive", rows, surv.len()));
    }
    tape.pairwise_survival(z, survival_pair_terms(surv, cfg), cfg.delta_dist)
}

/// Nodes of the joint objective.
#[derive(Debug, Clone, Copy)]
pub struct LossNodes {
    pub total: Var,
    pub ntxent: Var,
    pub survival: Var,
}

/// `NT-Xent(embeds) + α · survival(fused)`.
pub fn total_loss_on_tape(
    tape: &mut Tape,
    embeds: &[Var],
    fused: Var,
    surv: &BatchSurvival,
    cfg: &LossConfig,
) -> Result<LossNodes> {
    let ntxent = ntxent_multimodal_on_tape(tape, embeds, cfg)?;
    let survival = survival_contrastive_on_tape(tape, fused, surv, cfg)?;
    combine(tape, ntxent, survival, cfg.alpha)
}

/// Fused representation for the survival term: mean of the modality
/// embeddings, re-normalized to unit rows.
pub fn fuse_mean_on_tape(tape: &mut Tape, embeds: &[Var]) -> Result<Var> {
    let (first, rest) = embeds
        .split_first()
        .ok_or_else(|| Error::InvalidArgument("no modality embeddings".into()))?;
    let mut acc = *first;
    for &z in rest {
        acc = tape.add(acc, z)?;
    }
    let mean = tape.scale(acc, 1.0 / embeds.len() as f64);
    Ok(tape.row_l2_normalize(mean, NORM_EPS))
}

/// Joint objective from per-modality embeddings, applying the survival term
/// according to `cfg.surv_target`.
pub fn joint_objective_on_tape(
    tape: &mut Tape,
    embeds: &[Var],
    surv: &BatchSurvival,
    cfg: &LossConfig,
) -> Result<LossNodes> {
    match cfg.surv_target {
        SurvTarget::Fused => {
            let fused = fuse_mean_on_tape(tape, embeds)?;
            total_loss_on_tape(tape, embeds, fused, surv, cfg)
        }
        SurvTarget::PerModalityMean => {
            let ntxent = ntxent_multimodal_on_tape(tape, embeds, cfg)?;
            let per_view = embeds
                .iter()
                .map(|&z| survival_contrastive_on_tape(tape, z, surv, cfg))
                .collect::<Result<Vec<_>>>()?;
            let survival = tape.mean_of(&per_view)?;
            combine(tape, ntxent, survival, cfg.alpha)
        }
    }
}

pub(crate) fn combine(tape: &mut Tape, ntxent: Var, survival: Var, alpha: f64) -> Result<LossNodes> {
    let weighted = tape.scale(survival, alpha);
    let total = tape.add(ntxent, weighted)?;
    Ok(LossNodes {
        total,
        ntxent,
        survival,
    })
}

fn evaluate(build: impl FnOnce(&mut Tape) -> Result<Var>) -> Result<f64> {
    let mut tape = Tape::new();
    let out = build(&mut tape)?;
    tape.value(out).to_scalar()
}

/// NT-Xent between two views with the positive excluded from the
/// denominator.
pub fn ntxent_pair(zv: &Matrix, zw: &Matrix, tau: f64) -> Result<f64> {
    ntxent_pair_with(zv, zw, tau, false)
}

pub fn ntxent_pair_with(zv: &Matrix, zw: &Matrix, tau: f64, include_positive: bool) -> Result<f64> {
    evaluate(|tape| {
        let a = tape.leaf(zv.clone());
        let b = tape.leaf(zw.clone());
        ntxent_pair_on_tape(tape, a, b, tau, include_positive)
    })
}

pub fn ntxent_multimodal(embeds: &[Matrix], cfg: &LossConfig) -> Result<f64> {
    evaluate(|tape| {
        let vars: Vec<Var> = embeds.iter().map(|m| tape.leaf(m.clone())).collect();
        ntxent_multimodal_on_tape(tape, &vars, cfg)
    })
}

pub fn survival_contrastive(z: &Matrix, surv: &BatchSurvival, cfg: &LossConfig) -> Result<f64> {
    evaluate(|tape| {
        let v = tape.leaf(z.clone());
        survival_contrastive_on_tape(tape, v, surv, cfg)
    })
}

pub fn total_loss(
    embeds: &[Matrix],
    fused: &Matrix,
    surv: &BatchSurvival,
    cfg: &LossConfig,
) -> Result<f64> {
    evaluate(|tape| {
        let vars: Vec<Var> = embeds.iter().map(|m| tape.leaf(m.clone())).collect();
        let f = tape.leaf(fused.clone());
        Ok(total_loss_on_tape(tape, &vars, f, surv, cfg)?.total)
    })
}
