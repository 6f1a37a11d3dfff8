//! Flat JSON run configuration. Every key is optional; absent keys take the
//! defaults below and unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use omicscl_core::cluster::Fusion;
use omicscl_core::dataio::{SplitSpec, SyntheticSpec};
use omicscl_core::losses::{LossConfig, SurvTarget};
use omicscl_core::trainer::TrainConfig;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    /// Directory with expression/methylation/mirna/clinical(/subtype) CSVs.
    /// When absent a synthetic cohort is generated.
    pub data_dir: Option<PathBuf>,

    pub synth_n_patients: usize,
    pub synth_n_subtypes: usize,
    pub synth_latent_dim: usize,
    pub synth_modality_dims: Vec<usize>,
    pub synth_center_scale: f64,
    pub synth_noise: f64,
    pub synth_feature_noise: f64,
    pub synth_hazard_rates: Vec<f64>,
    pub synth_censoring: f64,
    /// Defaults to `seed`.
    pub synth_seed: Option<u64>,

    pub split_train: f64,
    pub split_val: f64,
    pub split_test: f64,

    pub hidden_dim: usize,
    pub proj_dim: usize,
    pub bn_eps: f64,
    pub bn_momentum: f64,

    pub tau: f64,
    pub alpha: f64,
    pub delta_time: f64,
    pub delta_dist: f64,
    pub lambda_pull: f64,
    pub lambda_push: f64,
    pub tanh_weighting: bool,
    pub include_positive_in_denominator: bool,
    pub surv_target: SurvTarget,

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
    pub k_for_validation: usize,
    pub fusion: Fusion,

    pub eval_k: usize,
    pub sweep_k_min: usize,
    pub sweep_k_max: usize,
}

impl Default for Config {
    fn default() -> Self {
        let loss = LossConfig::default();
        let train = TrainConfig::default();
        Self {
            seed: 0,
            data_dir: None,
            synth_n_patients: 600,
            synth_n_subtypes: 3,
            synth_latent_dim: 32,
            synth_modality_dims: vec![100, 80, 60],
            synth_center_scale: 0.45,
            synth_noise: 1.0,
            synth_feature_noise: 0.5,
            synth_hazard_rates: vec![1.0, 2.0, 4.0],
            synth_censoring: 0.3,
            synth_seed: None,
            split_train: 0.6,
            split_val: 0.2,
            split_test: 0.2,
            hidden_dim: 128,
            proj_dim: 64,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
            tau: loss.tau,
            alpha: loss.alpha,
            delta_time: loss.delta_time,
            delta_dist: loss.delta_dist,
            lambda_pull: loss.lambda_pull,
            lambda_push: loss.lambda_push,
            tanh_weighting: loss.tanh_weighting,
            include_positive_in_denominator: loss.include_positive_in_denominator,
            surv_target: loss.surv_target,
            max_epochs: train.max_epochs,
            patience: train.patience,
            batch_size: train.batch_size,
            lr_min: train.lr_min,
            lr_max: train.lr_max,
            cycle_epochs: train.cycle_epochs,
            weight_decay: train.weight_decay,
            adam_beta1: train.adam_beta1,
            adam_beta2: train.adam_beta2,
            adam_eps: train.adam_eps,
            k_for_validation: train.k_for_validation,
            fusion: train.fusion,
            eval_k: 4,
            sweep_k_min: 2,
            sweep_k_max: 9,
        }
    }
}

fn known_keys() -> Vec<String> {
    match serde_json::to_value(Config::default()) {
        Ok(serde_json::Value::Object(map)) => map.keys().cloned().collect(),
        _ => unreachable!("Config serializes to an object"),
    }
}

impl Config {
    /// Parses a JSON object, reporting every unknown key at once.
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| CliError::Config(format!("invalid JSON: {e}")))?;
        let map = value
            .as_object()
            .ok_or_else(|| CliError::Config("config must be a JSON object".into()))?;
        let known = known_keys();
        let mut unknown: Vec<&str> = map
            .keys()
            .filter(|k| !known.iter().any(|n| n == *k))
            .map(String::as_str)
            .collect();
        if !unknown.is_empty() {
            unknown.sort_unstable();
            return Err(CliError::Config(format!("unknown config keys: {}", unknown.join(", "))));
        }
        let cfg: Config =
            serde_json::from_value(value).map_err(|e| CliError::Config(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let core = |r: omicscl_core::Result<()>| r.map_err(|e| CliError::Config(e.to_string()));
        core(self.loss().validate())?;
        core(self.train().validate())?;
        if self.data_dir.is_none() {
            core(self.synthetic().validate())?;
        }
        if self.hidden_dim == 0 || self.proj_dim == 0 {
            return Err(CliError::Config("hidden_dim and proj_dim must be >= 1".into()));
        }
        if self.eval_k == 0 || self.sweep_k_min == 0 || self.sweep_k_min > self.sweep_k_max {
            return Err(CliError::Config("need eval_k >= 1 and 1 <= sweep_k_min <= sweep_k_max".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config is serializable")
    }

    pub fn loss(&self) -> LossConfig {
        LossConfig {
            tau: self.tau,
            delta_time: self.delta_time,
            delta_dist: self.delta_dist,
            lambda_pull: self.lambda_pull,
            lambda_push: self.lambda_push,
            alpha: self.alpha,
            tanh_weighting: self.tanh_weighting,
            include_positive_in_denominator: self.include_positive_in_denominator,
            surv_target: self.surv_target,
        }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            max_epochs: self.max_epochs,
            patience: self.patience,
            batch_size: self.batch_size,
            lr_min: self.lr_min,
            lr_max: self.lr_max,
            cycle_epochs: self.cycle_epochs,
            weight_decay: self.weight_decay,
            adam_beta1: self.adam_beta1,
            adam_beta2: self.adam_beta2,
            adam_eps: self.adam_eps,
            seed: self.seed,
            k_for_validation: self.k_for_validation,
            fusion: self.fusion,
        }
    }

    pub fn synthetic(&self) -> SyntheticSpec {
        SyntheticSpec {
            n_patients: self.synth_n_patients,
            n_subtypes: self.synth_n_subtypes,
            latent_dim: self.synth_latent_dim,
            modality_dims: self.synth_modality_dims.clone(),
            center_scale: self.synth_center_scale,
            noise: self.synth_noise,
            feature_noise: self.synth_feature_noise,
            hazard_rates: self.synth_hazard_rates.clone(),
            censoring_fraction: self.synth_censoring,
            seed: self.synth_seed.unwrap_or(self.seed),
        }
    }

    pub fn split(&self) -> SplitSpec {
        SplitSpec {
            train: self.split_train,
            val: self.split_val,
            test: self.split_test,
            seed: self.seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_gives_defaults() {
        assert_eq!(Config::from_json("{}").unwrap(), Config::default());
    }

    #[test]
    fn unknown_keys_are_all_listed() {
        let err = Config::from_json(r#"{"alpah": 1, "tau": 0.2, "zeta": 0}"#).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("alpah") && msg.contains("zeta") && !msg.contains("tau"), "{msg}");
    }

    #[test]
    fn values_round_trip() {
        let cfg = Config {
            alpha: 0.0,
            surv_target: SurvTarget::PerModalityMean,
            fusion: Fusion::Mean,
            data_dir: Some("data".into()),
            ..Config::default()
        };
        assert_eq!(Config::from_json(&cfg.to_json()).unwrap(), cfg);
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(Config::from_json(r#"{"tau": 0}"#).is_err());
        assert!(Config::from_json(r#"{"lr_min": 1.0}"#).is_err());
        assert!(Config::from_json(r#"{"sweep_k_min": 5, "sweep_k_max": 3}"#).is_err());
        assert!(Config::from_json("[1]").is_err());
        assert!(Config::from_json(r#"{"alpha": "ten"}"#).is_err());
    }
}
