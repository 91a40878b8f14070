//! Model checkpoints: a versioned JSON container holding the dimensions, the
//! parameter arrays, the feature configuration, and the training config that
//! produced the model. Loading validates the version and every array length.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{FeatureConfig, SupervisorModel, TrainConfig};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub features: FeatureConfig,
    pub model: SupervisorModel,
    pub train_config: TrainConfig,
}

impl Checkpoint {
    pub fn validate(&self) -> Result<()> {
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::validation(format!(
                "checkpoint version {} unsupported (expected {CHECKPOINT_VERSION})",
                self.version
            )));
        }
        let (d, h) = (self.model.feature_dim, self.model.hidden_dim);
        if self.features.dim() != d {
            return Err(Error::validation(format!(
                "feature config dimension {} != model dimension {d}",
                self.features.dim()
            )));
        }
        if self.model.w1.len() != d * h
            || self.model.b1.len() != h
            || self.model.w_r.len() != h
            || self.model.w_v.len() != h
        {
            return Err(Error::validation("checkpoint parameter arrays malformed"));
        }
        Ok(())
    }
}

pub fn save_checkpoint(
    path: impl AsRef<Path>,
    model: &SupervisorModel,
    features: &FeatureConfig,
    train_config: &TrainConfig,
) -> Result<()> {
    let path = path.as_ref();
    let checkpoint = Checkpoint {
        version: CHECKPOINT_VERSION,
        features: features.clone(),
        model: model.clone(),
        train_config: train_config.clone(),
    };
    checkpoint.validate()?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    serde_json::to_writer(BufWriter::new(file), &checkpoint)
        .map_err(|e| Error::validation(format!("checkpoint encode: {e}")))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let checkpoint: Checkpoint = serde_json::from_reader(BufReader::new(file))
        .map_err(|e| Error::validation(format!("checkpoint decode: {e}")))?;
    checkpoint.validate()?;
    Ok(checkpoint)
}
