use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::DEFAULT_HIDDEN;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Scratch,
    Pretrain,
    Finetune,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Scratch => "scratch",
            Mode::Pretrain => "pretrain",
            Mode::Finetune => "finetune",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scratch" => Ok(Mode::Scratch),
            "pretrain" => Ok(Mode::Pretrain),
            "finetune" => Ok(Mode::Finetune),
            other => Err(Error::Config(format!("unknown training mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    /// Weight of the energy-conservation term.
    pub lambda_ec: f64,
    /// Residual magnitude tolerated before the penalty starts, W/m².
    pub tau_ec: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Days per training window.
    pub chunk_len: usize,
    /// Days between consecutive window starts.
    pub chunk_stride: usize,
    pub seed: u64,
    pub mode: Mode,
    pub hidden_size: usize,
    /// Write a checkpoint every this many epochs; 0 disables.
    pub checkpoint_every: usize,
    pub checkpoint_dir: Option<PathBuf>,
    /// Epochs without validation improvement before stopping; `None` disables.
    pub patience: Option<usize>,
    /// Share of training observations held out for early stopping.
    pub validation_fraction: f64,
    /// Train on the energy term alone when no observations are available.
    pub ec_only: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            lambda_ec: 0.01,
            tau_ec: 24.0,
            learning_rate: 0.005,
            epochs: 100,
            chunk_len: 400,
            chunk_stride: 200,
            seed: 0,
            mode: Mode::Scratch,
            hidden_size: DEFAULT_HIDDEN,
            checkpoint_every: 0,
            checkpoint_dir: None,
            patience: Some(20),
            validation_fraction: 0.1,
            ec_only: false,
        }
    }
}

pub const CONFIG_KEYS: [&str; 14] = [
    "lambda_ec",
    "tau_ec",
    "learning_rate",
    "epochs",
    "chunk_len",
    "chunk_stride",
    "seed",
    "mode",
    "hidden_size",
    "checkpoint_every",
    "checkpoint_dir",
    "patience",
    "validation_fraction",
    "ec_only",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value '{value}' for {key}")))
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_ec >= 0.0) {
            return Err(Error::Config(format!("lambda_ec = {} must be >= 0", self.lambda_ec)));
        }
        if !(self.tau_ec >= 0.0) {
            return Err(Error::Config(format!("tau_ec = {} must be >= 0", self.tau_ec)));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!("learning_rate = {} must be > 0", self.learning_rate)));
        }
        if self.chunk_len < 2 || self.chunk_stride == 0 || self.chunk_stride > self.chunk_len {
            return Err(Error::Config(format!(
                "need chunk_len >= 2 and 0 < chunk_stride <= chunk_len (got {} / {})",
                self.chunk_len, self.chunk_stride
            )));
        }
        if self.hidden_size == 0 {
            return Err(Error::Config("hidden_size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Config("validation_fraction must lie in [0, 1)".into()));
        }
        if self.checkpoint_every > 0 && self.checkpoint_dir.is_none() {
            return Err(Error::Config("checkpoint_every needs checkpoint_dir".into()));
        }
        Ok(())
    }

    /// Sets one field from its textual form; `patience = off` disables early stopping.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "lambda_ec" => self.lambda_ec = parse(key, value)?,
            "tau_ec" => self.tau_ec = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "chunk_len" => self.chunk_len = parse(key, value)?,
            "chunk_stride" => self.chunk_stride = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "mode" => self.mode = value.parse()?,
            "hidden_size" => self.hidden_size = parse(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, value)?,
            "checkpoint_dir" => self.checkpoint_dir = (!value.is_empty()).then(|| PathBuf::from(value)),
            "patience" => {
                self.patience = match value {
                    "off" | "none" | "" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "validation_fraction" => self.validation_fraction = parse(key, value)?,
            "ec_only" => self.ec_only = parse(key, value)?,
            other => {
                return Err(Error::Config(format!(
                    "unknown training key '{other}' (known: {})",
                    CONFIG_KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    /// `key = value` lines in [`CONFIG_KEYS`] order.
    pub fn to_key_values(&self) -> String {
        let patience = self.patience.map_or("off".to_string(), |p| p.to_string());
        let dir = self
            .checkpoint_dir
            .as_ref()
            .map(|p| p.display().to_string())
            .unwrap_or_default();
        let values = [
            self.lambda_ec.to_string(),
            self.tau_ec.to_string(),
            self.learning_rate.to_string(),
            self.epochs.to_string(),
            self.chunk_len.to_string(),
            self.chunk_stride.to_string(),
            self.seed.to_string(),
            self.mode.to_string(),
            self.hidden_size.to_string(),
            self.checkpoint_every.to_string(),
            dir,
            patience,
            self.validation_fraction.to_string(),
            self.ec_only.to_string(),
        ];
        CONFIG_KEYS
            .iter()
            .zip(values)
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}

/// Parses `key = value` lines; `#` starts a comment. Returns pairs in file order.
pub fn parse_key_values(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got '{raw}'", i + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub fn read_key_values(path: &Path) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_key_values(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        let c = TrainingConfig::default();
        assert_eq!((c.lambda_ec, c.tau_ec, c.learning_rate), (0.01, 24.0, 0.005));
        assert_eq!((c.chunk_len, c.chunk_stride, c.hidden_size), (400, 200, 21));
        c.validate().unwrap();
    }

    #[test]
    fn key_value_round_trip() {
        let mut c = TrainingConfig {
            epochs: 7,
            patience: None,
            mode: Mode::Finetune,
            checkpoint_dir: Some("ck".into()),
            checkpoint_every: 2,
            ..TrainingConfig::default()
        };
        c.lambda_ec = 0.125;
        let text = c.to_key_values();
        let mut back = TrainingConfig::default();
        for (k, v) in parse_key_values(&text).unwrap() {
            back.set(&k, &v).unwrap();
        }
        assert_eq!(back, c);
    }

    #[test]
    fn rejects_bad_values() {
        let mut c = TrainingConfig::default();
        assert!(c.set("lambda", "1").is_err());
        assert!(c.set("epochs", "many").is_err());
        c.set("lambda_ec", "-1").unwrap();
        assert!(c.validate().is_err());
        assert!(parse_key_values("no equals sign").is_err());
        assert_eq!(parse_key_values("# c\n a = 1 # x\n").unwrap(), vec![("a".into(), "1".into())]);
    }
}
