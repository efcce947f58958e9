use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::csvio::{write_atomic, CsvTable};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Observation-weighted RMSE over the epoch's chunks, °C.
    pub rmse: f64,
    /// Mean energy penalty over chunks where it was evaluated, W/m².
    pub ec_loss: f64,
    /// Mean per-chunk combined loss.
    pub combined: f64,
    /// Wall-clock time of the epoch.
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainingHistory {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }

    /// First epoch whose training RMSE is at or below `threshold`.
    pub fn epochs_to(&self, threshold: f64) -> Option<usize> {
        self.epochs.iter().find(|r| r.rmse <= threshold).map(|r| r.epoch)
    }

    /// Same records with timing zeroed, for determinism comparisons.
    pub fn without_timing(&self) -> Self {
        Self {
            epochs: self
                .epochs
                .iter()
                .map(|r| EpochRecord { seconds: 0.0, ..*r })
                .collect(),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,rmse,ec_loss,combined,seconds\n");
        for r in &self.epochs {
            out.push_str(&format!("{},{},{},{},{}\n", r.epoch, r.rmse, r.ec_loss, r.combined, r.seconds));
        }
        out
    }
}

pub fn save_history(history: &TrainingHistory, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), history.to_csv().as_bytes())
}

pub fn load_history(path: impl AsRef<Path>) -> Result<TrainingHistory> {
    let table = CsvTable::read(path.as_ref())?;
    let mut epochs = Vec::with_capacity(table.len());
    for row in 0..table.len() {
        epochs.push(EpochRecord {
            epoch: table.f64(row, "epoch")? as usize,
            rmse: table.f64(row, "rmse")?,
            ec_loss: table.f64(row, "ec_loss")?,
            combined: table.f64(row, "combined")?,
            seconds: table.f64(row, "seconds")?,
        });
    }
    Ok(TrainingHistory { epochs })
}
