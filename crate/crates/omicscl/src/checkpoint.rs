//! JSON checkpoint: named tensors with shapes, the train-fitted
//! preprocessing parameters and the split, so a run can be re-evaluated
//! without retraining.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use omicscl_core::dataio::{Preprocessor, Split};
use omicscl_core::encoder::{EncoderConfig, EncoderParams};
use omicscl_core::Matrix;

use crate::{CliError, Config};

const FORMAT: &str = "omicscl-checkpoint-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderEntry {
    pub modality: String,
    pub config: EncoderConfig,
    pub tensors: BTreeMap<String, Tensor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub config: Config,
    pub encoders: Vec<EncoderEntry>,
    pub preprocessor: Preprocessor,
    pub split: Split,
    pub best_epoch: usize,
}

impl Checkpoint {
    pub fn new(
        config: &Config,
        modalities: &[String],
        encoders: &[EncoderParams],
        preprocessor: &Preprocessor,
        split: &Split,
        best_epoch: usize,
    ) -> Self {
        let encoders = modalities
            .iter()
            .zip(encoders)
            .map(|(name, enc)| EncoderEntry {
                modality: name.clone(),
                config: enc.config,
                tensors: enc
                    .named_tensors()
                    .into_iter()
                    .map(|(n, m)| {
                        let shape = [m.rows(), m.cols()];
                        (n, Tensor { shape, data: m.into_vec() })
                    })
                    .collect(),
            })
            .collect();
        Self {
            format: FORMAT.into(),
            config: config.clone(),
            encoders,
            preprocessor: preprocessor.clone(),
            split: split.clone(),
            best_epoch,
        }
    }

    pub fn encoder_params(&self) -> Result<Vec<EncoderParams>, CliError> {
        self.encoders
            .iter()
            .map(|entry| {
                EncoderParams::from_named_tensors(entry.config, |name| {
                    let t = entry.tensors.get(name)?;
                    Matrix::from_vec(t.shape[0], t.shape[1], t.data.clone()).ok()
                })
                .map_err(CliError::from)
            })
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        let text = serde_json::to_string(self).map_err(|e| CliError::Data(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let ckpt: Checkpoint = serde_json::from_str(&text)
            .map_err(|e| CliError::Data(format!("{}: invalid checkpoint: {e}", path.display())))?;
        if ckpt.format != FORMAT {
            return Err(CliError::Data(format!("unsupported checkpoint format `{}`", ckpt.format)));
        }
        Ok(ckpt)
    }
}
