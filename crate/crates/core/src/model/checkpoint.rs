//! Versioned JSON checkpoints: shapes and row-major values of every weight,
//! normalization statistics, and optimizer state for exact resumption.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::ModelParams;
use crate::data::csvio::write_atomic;
use crate::data::NormStats;
use crate::error::{Error, Result};
use crate::grad::AdamState;

pub const CHECKPOINT_FORMAT: &str = "thermocline-lstm";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub hidden_size: usize,
    pub input_size: usize,
    /// Input feature names in model order.
    pub features: Vec<String>,
    pub norm: Option<NormStats>,
    pub params: ModelParams,
    pub optimizer: Option<AdamState>,
    /// Completed epochs.
    pub epoch: usize,
}

impl Checkpoint {
    pub fn new(params: ModelParams, norm: Option<NormStats>) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            hidden_size: params.hidden_size,
            input_size: params.input_size,
            features: norm.as_ref().map(|n| n.names.clone()).unwrap_or_default(),
            norm,
            params,
            optimizer: None,
            epoch: 0,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::InvalidInput(format!("not a model checkpoint (format '{}')", self.format)));
        }
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::InvalidInput(format!(
                "checkpoint version {} is not supported (expected {CHECKPOINT_VERSION})",
                self.version
            )));
        }
        if self.hidden_size != self.params.hidden_size || self.input_size != self.params.input_size {
            return Err(Error::Shape("checkpoint header disagrees with its weights".into()));
        }
        if let Some(norm) = &self.norm {
            if norm.input_size() != self.input_size {
                return Err(Error::Shape(format!(
                    "checkpoint has {} normalized features but input size {}",
                    norm.input_size(),
                    self.input_size
                )));
            }
        }
        self.params.validate()
    }
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let text = serde_json::to_string(checkpoint)?;
    write_atomic(path.as_ref(), text.as_bytes())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let checkpoint: Checkpoint = serde_json::from_str(&text)?;
    checkpoint.validate()?;
    Ok(checkpoint)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut params = ModelParams::init(5, 7, 99).unwrap();
        params.w_y.data_mut()[0] = 1.0 / 3.0;
        params.b_y.data_mut()[0] = -1e-310;
        params.output.mean = 11.123456789012345;
        let mut ck = Checkpoint::new(params.clone(), None);
        let mut adam = AdamState::new(params.tensors());
        let grads: Vec<_> = params.tensors().iter().map(|t| t.map(|v| v.sin())).collect();
        let mut named: Vec<(String, _)> = ModelParams::names().into_iter().zip(params.tensors_mut()).collect();
        let mut refs: Vec<(&str, &mut _)> = named.iter_mut().map(|(n, t)| (n.as_str(), &mut **t)).collect();
        adam.step(&mut refs, &grads, 0.01).unwrap();
        ck.params = params.clone();
        ck.optimizer = Some(adam);
        ck.epoch = 3;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save_checkpoint(&ck, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back, ck);
        let bits = |p: &ModelParams| -> Vec<u64> { p.tensors().iter().flat_map(|t| t.data().iter().map(|v| v.to_bits())).collect() };
        assert_eq!(bits(&back.params), bits(&ck.params));
    }

    #[test]
    fn rejects_foreign_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.json");
        let mut ck = Checkpoint::new(ModelParams::zeros(1, 1), None);
        ck.version = 9;
        save_checkpoint(&ck, &path).unwrap();
        assert!(load_checkpoint(&path).is_err());
        assert!(load_checkpoint(dir.path().join("missing.json")).is_err());
    }
}
