//! Combined RMSE + energy-conservation training, pretraining on simulator
//! output and fine-tuning on sparse observations.
//!
//! Each training window is cut into chunks; a chunk is one full batch over
//! every depth, since the heat content needs whole profiles. Parameters are
//! updated once per chunk, and chunk order is reshuffled every epoch from
//! `(seed, epoch)` alone, so resumed runs replay exactly.

mod config;
mod history;

use std::ops::Range;
use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use config::{parse_key_values, read_key_values, Mode, TrainingConfig, CONFIG_KEYS};
pub use history::{load_history, save_history, EpochRecord, TrainingHistory};

use crate::data::{FeatureMatrix, ObservationSet};
use crate::error::{Error, Result};
use crate::grad::{AdamState, Tape, Var};
use crate::model::{self, forward_tape, rmse_tape, Checkpoint, ModelParams, OutputScale, TapeParams};
use crate::physics::{ec_loss_tape, energy_residuals_tape, PhysicsConstants, SurfaceForcing};
use crate::sim::LakeGeometry;

/// Everything a training run reads. Observation times index the full series.
#[derive(Debug, Clone, Copy)]
pub struct TrainData<'a> {
    pub features: &'a FeatureMatrix,
    /// Per-day surface forcing aligned with the features.
    pub forcing: &'a [SurfaceForcing],
    pub ice_free: &'a [bool],
    pub geometry: &'a LakeGeometry,
    pub physics: &'a PhysicsConstants,
    pub obs: &'a ObservationSet,
    /// Day ranges the run may learn from.
    pub windows: &'a [Range<usize>],
}

impl TrainData<'_> {
    fn check(&self) -> Result<()> {
        let n = self.features.n_days;
        if self.forcing.len() != n || self.ice_free.len() != n {
            return Err(Error::Shape(format!(
                "features span {n} days but forcing {} and ice mask {}",
                self.forcing.len(),
                self.ice_free.len()
            )));
        }
        if self.features.n_depths != self.geometry.n_layers() {
            return Err(Error::Shape(format!(
                "features cover {} depths, geometry {}",
                self.features.n_depths,
                self.geometry.n_layers()
            )));
        }
        if let Some(w) = self.windows.iter().find(|w| w.end > n || w.start >= w.end) {
            return Err(Error::Shape(format!("training window {w:?} outside {n} days")));
        }
        self.obs.check_bounds(self.features.n_depths, n)
    }
}

/// Chunk ranges covering each window: starts every `stride` days, with a
/// final chunk ending on the window's last day when needed.
pub fn chunk_ranges(windows: &[Range<usize>], len: usize, stride: usize) -> Vec<Range<usize>> {
    let mut out = Vec::new();
    for w in windows {
        if w.len() <= len {
            out.push(w.clone());
            continue;
        }
        let mut start = w.start;
        while start + len <= w.end {
            out.push(start..start + len);
            start += stride;
        }
        let last_end = out.last().map(|r| r.end).unwrap_or(w.start);
        if last_end < w.end {
            out.push(w.end - len..w.end);
        }
    }
    out
}

/// Loss components of one chunk.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub rmse: Option<f64>,
    pub ec: Option<f64>,
    pub n_obs: usize,
    pub total: f64,
}

/// `rmse + lambda * ec`, with an absent term contributing nothing.
pub fn combine(rmse: Option<f64>, ec: Option<f64>, lambda: f64) -> Option<f64> {
    match (rmse, ec) {
        (None, None) => None,
        (r, e) => Some(r.unwrap_or(0.0) + lambda * e.unwrap_or(0.0)),
    }
}

struct Chunk {
    range: Range<usize>,
    obs: ObservationSet,
    /// Ice-free flags of the chunk's residual days.
    residual_mask: Vec<bool>,
}

fn prepare_chunks(data: &TrainData, obs: &ObservationSet, cfg: &TrainingConfig) -> Vec<Chunk> {
    chunk_ranges(data.windows, cfg.chunk_len, cfg.chunk_stride)
        .into_iter()
        .map(|r| Chunk {
            obs: obs.window(r.start, r.end),
            residual_mask: data.ice_free[r.start..r.end - 1].to_vec(),
            range: r,
        })
        .collect()
}

/// Records the chunk loss on `tape`. `None` when neither term applies.
fn record_chunk<'t>(
    tape: &'t Tape,
    params: &TapeParams<'t>,
    data: &TrainData,
    chunk: &Chunk,
    cfg: &TrainingConfig,
) -> Result<Option<(Var<'t>, LossParts)>> {
    let use_ec = cfg.lambda_ec > 0.0 && chunk.range.len() >= 2 && chunk.residual_mask.iter().any(|&f| f);
    if chunk.obs.is_empty() && !use_ec {
        return Ok(None);
    }
    let block = data.features.days(chunk.range.start, chunk.range.end);
    let pred = forward_tape(tape, params, block, data.features.n_depths)?;
    let rmse = if chunk.obs.is_empty() {
        None
    } else {
        Some(rmse_tape(tape, pred, &chunk.obs)?)
    };
    let ec = if use_ec {
        let forcing = &data.forcing[chunk.range.start..chunk.range.end];
        let residuals = energy_residuals_tape(tape, pred, forcing, data.geometry, data.physics)?;
        ec_loss_tape(residuals, &chunk.residual_mask, cfg.tau_ec)?
    } else {
        None
    };
    let total = match (rmse, ec) {
        (Some(r), Some(e)) => r + e * cfg.lambda_ec,
        (Some(r), None) => r,
        (None, Some(e)) => e * cfg.lambda_ec,
        (None, None) => return Ok(None),
    };
    let parts = LossParts {
        rmse: rmse.map(|v| v.item()),
        ec: ec.map(|v| v.item()),
        n_obs: chunk.obs.len(),
        total: total.item(),
    };
    Ok(Some((total, parts)))
}

/// Combined loss of the current parameters over `range`. Observations are
/// taken from the full-series set in `data`.
pub fn combined_loss(params: &ModelParams, data: &TrainData, range: Range<usize>, cfg: &TrainingConfig) -> Result<Option<LossParts>> {
    data.check()?;
    if range.is_empty() || range.end > data.features.n_days {
        return Err(Error::Shape(format!("loss range {range:?} outside {} days", data.features.n_days)));
    }
    let chunk = Chunk {
        obs: data.obs.window(range.start, range.end),
        residual_mask: data.ice_free[range.start..range.end - 1].to_vec(),
        range,
    };
    let tape = Tape::new();
    let tp = TapeParams::new(&tape, params)?;
    Ok(record_chunk(&tape, &tp, data, &chunk, cfg)?.map(|(_, p)| p))
}

/// Fresh parameters whose output head is scaled to the training targets.
pub fn init_params(input_size: usize, obs: &ObservationSet, windows: &[Range<usize>], cfg: &TrainingConfig) -> Result<ModelParams> {
    let mut params = ModelParams::init(input_size, cfg.hidden_size, cfg.seed)?;
    let temps: Vec<f64> = obs
        .iter()
        .filter(|o| windows.iter().any(|w| w.contains(&o.time)))
        .map(|o| o.temp)
        .collect();
    if temps.len() >= 2 {
        let n = temps.len() as f64;
        let mean = temps.iter().sum::<f64>() / n;
        let std = (temps.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n).sqrt();
        if std > 1e-9 {
            params.output = OutputScale { mean, std };
        }
    }
    Ok(params)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub history: TrainingHistory,
    pub optimizer: AdamState,
    /// Epoch whose parameters were returned (0 = initial).
    pub best_epoch: usize,
    pub stopped_early: bool,
}

/// Resumable state.
#[derive(Debug, Clone)]
pub struct Resume {
    pub params: ModelParams,
    pub optimizer: AdamState,
    pub epoch: usize,
    pub history: TrainingHistory,
}

fn split_validation(obs: &ObservationSet, cfg: &TrainingConfig) -> (ObservationSet, Option<ObservationSet>) {
    let Some(_) = cfg.patience else { return (obs.clone(), None) };
    if cfg.validation_fraction <= 0.0 || obs.len() < 20 {
        return (obs.clone(), None);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x76a1_1d47);
    let (held, kept): (Vec<_>, Vec<_>) = obs
        .iter()
        .copied()
        .partition(|_| rng.gen::<f64>() < cfg.validation_fraction);
    let train = ObservationSet::new(kept, obs.source).expect("subset of a valid set");
    let val = ObservationSet::new(held, obs.source).expect("subset of a valid set");
    if val.is_empty() || train.is_empty() {
        return (obs.clone(), None);
    }
    (train, Some(val))
}

fn validation_rmse(params: &ModelParams, data: &TrainData, val: &ObservationSet, cfg: &TrainingConfig) -> Result<f64> {
    let mut sse = 0.0;
    for w in data.windows {
        let part = val.window(w.start, w.end);
        if part.is_empty() {
            continue;
        }
        let block = data.features.days(w.start, w.end);
        let pred = model::predict(block, data.features.n_depths, w.len(), params, cfg.chunk_len, cfg.chunk_stride)?;
        sse += part
            .iter()
            .map(|o| (pred[o.depth * w.len() + o.time] - o.temp).powi(2))
            .sum::<f64>();
    }
    Ok((sse / val.len() as f64).sqrt())
}

fn checkpoint_path(dir: &std::path::Path, epoch: usize) -> PathBuf {
    dir.join(format!("epoch-{epoch:05}.json"))
}

/// Runs `cfg.epochs` epochs of chunked ADAM training from `init`, or from
/// `resume` when given.
pub fn train(init: &ModelParams, data: &TrainData, cfg: &TrainingConfig, resume: Option<Resume>) -> Result<TrainOutcome> {
    cfg.validate()?;
    data.check()?;
    if init.input_size != data.features.n_features() {
        return Err(Error::Shape(format!(
            "model expects {} inputs, features provide {}",
            init.input_size,
            data.features.n_features()
        )));
    }
    let (mut params, mut optimizer, start_epoch, mut history) = match resume {
        Some(r) => (r.params, r.optimizer, r.epoch, r.history),
        None => (init.clone(), AdamState::new(init.tensors()), 0, TrainingHistory::default()),
    };
    let untrained = TrainOutcome {
        params: params.clone(),
        history: history.clone(),
        optimizer: optimizer.clone(),
        best_epoch: start_epoch,
        stopped_early: false,
    };
    if data.obs.is_empty() && !cfg.ec_only {
        log::info!("no observations and energy-only training disabled; parameters unchanged");
        return Ok(untrained);
    }

    let (train_obs, val_obs) = split_validation(data.obs, cfg);
    let chunks = prepare_chunks(data, &train_obs, cfg);
    let names = ModelParams::names();
    let mut best: Option<(f64, usize, ModelParams)> = None;
    let mut since_best = 0;
    let mut stopped_early = false;

    for epoch in start_epoch..cfg.epochs {
        let clock = Instant::now();
        let mut order: Vec<usize> = (0..chunks.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(epoch as u64));
        order.shuffle(&mut rng);

        let (mut sse, mut n_obs, mut ec_sum, mut n_ec, mut total_sum, mut n_updates) = (0.0, 0usize, 0.0, 0usize, 0.0, 0usize);
        for &ci in &order {
            let tape = Tape::new();
            let tp = TapeParams::new(&tape, &params)?;
            let Some((loss, parts)) = record_chunk(&tape, &tp, data, &chunks[ci], cfg)? else { continue };
            if !parts.total.is_finite() {
                return Err(Error::NonFinite(format!(
                    "loss on epoch {} chunk {:?} is {}",
                    epoch + 1,
                    chunks[ci].range,
                    parts.total
                )));
            }
            tape.backward(loss)?;
            let grads = tp.grads(&tape);
            let mut named: Vec<(&str, &mut crate::grad::Tensor)> =
                names.iter().map(String::as_str).zip(params.tensors_mut()).collect();
            optimizer.step(&mut named, &grads, cfg.learning_rate)?;
            if let Some(r) = parts.rmse {
                sse += r * r * parts.n_obs as f64;
                n_obs += parts.n_obs;
            }
            if let Some(e) = parts.ec {
                ec_sum += e;
                n_ec += 1;
            }
            total_sum += parts.total;
            n_updates += 1;
        }
        let record = EpochRecord {
            epoch: epoch + 1,
            rmse: if n_obs > 0 { (sse / n_obs as f64).sqrt() } else { 0.0 },
            ec_loss: if n_ec > 0 { ec_sum / n_ec as f64 } else { 0.0 },
            combined: if n_updates > 0 { total_sum / n_updates as f64 } else { 0.0 },
            seconds: clock.elapsed().as_secs_f64(),
        };
        log::debug!("epoch {} rmse {:.4} ec {:.4}", record.epoch, record.rmse, record.ec_loss);
        history.epochs.push(record);

        if let (Some(dir), true) = (&cfg.checkpoint_dir, cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let mut ck = Checkpoint::new(params.clone(), Some(data.features.stats.clone()));
            ck.optimizer = Some(optimizer.clone());
            ck.epoch = epoch + 1;
            model::save_checkpoint(&ck, checkpoint_path(dir, epoch + 1))?;
        }

        if let (Some(val), Some(patience)) = (&val_obs, cfg.patience) {
            let score = validation_rmse(&params, data, val, cfg)?;
            if best.as_ref().is_none_or(|(b, _, _)| score < *b) {
                best = Some((score, epoch + 1, params.clone()));
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= patience {
                    stopped_early = true;
                    break;
                }
            }
        }
    }

    let (params, best_epoch) = match best {
        Some((_, epoch, p)) => (p, epoch),
        None => {
            let e = history.last().map_or(start_epoch, |r| r.epoch);
            (params, e)
        }
    };
    Ok(TrainOutcome {
        params,
        history,
        optimizer,
        best_epoch,
        stopped_early,
    })
}

pub fn resume_from(checkpoint: Checkpoint, history: TrainingHistory) -> Result<Resume> {
    let optimizer = checkpoint
        .optimizer
        .ok_or_else(|| Error::InvalidInput("checkpoint has no optimizer state to resume from".into()))?;
    Ok(Resume {
        params: checkpoint.params,
        optimizer,
        epoch: checkpoint.epoch,
        history,
    })
}

#[derive(Debug, Clone)]
pub struct StagedOutcome {
    pub pretrained: TrainOutcome,
    pub finetuned: TrainOutcome,
}

/// Stage 1 trains from scratch on every cell of the simulated field in the
/// training windows; stage 2 warm-starts from it on the sparse set. Both
/// stages checkpoint into `pretrain/` and `finetune/` under their configured
/// directories.
pub fn pretrain_then_finetune(
    pretrain_data: &TrainData,
    finetune_data: &TrainData,
    pretrain_cfg: &TrainingConfig,
    finetune_cfg: &TrainingConfig,
) -> Result<StagedOutcome> {
    let stage = |cfg: &TrainingConfig, name: &str, mode: Mode| TrainingConfig {
        checkpoint_dir: cfg.checkpoint_dir.as_ref().map(|d| d.join(name)),
        mode,
        ..cfg.clone()
    };
    let pre_cfg = stage(pretrain_cfg, "pretrain", Mode::Pretrain);
    let init = init_params(
        pretrain_data.features.n_features(),
        pretrain_data.obs,
        pretrain_data.windows,
        &pre_cfg,
    )?;
    let pretrained = train(&init, pretrain_data, &pre_cfg, None)?;
    let fine_cfg = stage(finetune_cfg, "finetune", Mode::Finetune);
    let finetuned = train(&pretrained.params, finetune_data, &fine_cfg, None)?;
    Ok(StagedOutcome { pretrained, finetuned })
}
