use std::ops::Range;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use serde_json::json;
use thermocline::data::csvio::write_atomic;
use thermocline::data::{
    build_features, load_drivers, load_field, load_hypsography, load_observations, sample_observations, save_drivers,
    save_field, save_hypsography, save_observations, DateRange, FeatureSpec, MeteoSeries, Observation, ObservationSet,
    Source, TemperatureField,
};
use thermocline::eval::{
    evaluate, prepare_bundle, run_experiment_grid, save_report, BenchmarkSpec, ExperimentConfig, Grid, Variant,
};
use thermocline::model::{load_checkpoint, predict, save_checkpoint, Checkpoint};
use thermocline::physics::{ec_loss, energy_budget, save_budget, PhysicsConstants, SurfaceForcing};
use thermocline::sim::{freeze_up, make_geometry, simulate, synth_drivers_from, Climate, LakeGeometry, Shape, SimConfig};
use thermocline::train::{init_params, save_history, train, Mode, TrainData, TrainingConfig};

use crate::settings::{collect, parse_window, sibling, usage, Sidecar};
use crate::{Cli, Command, Common};

pub fn run(cli: &Cli) -> Result<()> {
    let common = &cli.common;
    let name = cli.command.name();
    match &cli.command {
        Command::SynthDrivers(a) => synth_drivers_cmd(common, name, a),
        Command::MakeGeometry(a) => make_geometry_cmd(common, name, a),
        Command::Simulate(a) => simulate_cmd(common, name, a),
        Command::SampleObs(a) => sample_obs_cmd(common, name, a),
        Command::Train(a) => train_cmd(common, name, a),
        Command::Pretrain(a) => pretrain_cmd(common, name, a),
        Command::Finetune(a) => finetune_cmd(common, name, a),
        Command::Evaluate(a) => evaluate_cmd(common, name, a),
        Command::EnergyAudit(a) => energy_audit_cmd(common, name, a),
        Command::Experiment(a) => experiment_cmd(common, name, a),
    }
}

/// Applies config-file and `--set` pairs, then pulls `seed` out of them so
/// `--seed` can win over both.
fn resolve_seed(common: &Common, pairs: &[(String, String)], default: u64) -> Result<u64> {
    if let Some(s) = common.seed {
        return Ok(s);
    }
    match pairs.iter().rev().find(|(k, _)| k == "seed") {
        Some((_, v)) => v.parse().map_err(|_| usage(format!("invalid seed '{v}'"))),
        None => Ok(default),
    }
}

fn reject_unknown(pairs: &[(String, String)], known: &[&str], command: &str) -> Result<()> {
    if let Some((k, _)) = pairs.iter().find(|(k, _)| !known.contains(&k.as_str())) {
        return Err(usage(format!("unknown setting '{k}' for {command} (known: {})", known.join(", "))));
    }
    Ok(())
}

fn setting<'a>(pairs: &'a [(String, String)], key: &str) -> Option<&'a str> {
    pairs.iter().rev().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
}

fn parse_setting<T: std::str::FromStr>(pairs: &[(String, String)], key: &str) -> Result<Option<T>> {
    setting(pairs, key)
        .map(|v| v.parse().map_err(|_| usage(format!("invalid value '{v}' for {key}"))))
        .transpose()
}

fn window_indices(drivers: &MeteoSeries, w: &DateRange) -> Result<Range<usize>> {
    let first = drivers.start_date().context("empty driver series")?;
    let start = (w.start - first).num_days();
    let end = (w.end - first).num_days();
    if start < 0 || end as usize > drivers.len() {
        bail!(thermocline::Error::Config(format!(
            "window {}:{} is outside the drivers ({} + {} days)",
            w.start,
            w.end,
            first,
            drivers.len()
        )));
    }
    Ok(start as usize..end as usize)
}

fn windows(drivers: &MeteoSeries, specs: &[String]) -> Result<Vec<Range<usize>>> {
    if specs.is_empty() {
        return Ok(vec![0..drivers.len()]);
    }
    specs.iter().map(|s| window_indices(drivers, &parse_window(s)?)).collect()
}

/// Drivers cut to the days a field covers, matched by date.
fn drivers_for(field: &TemperatureField, drivers: &MeteoSeries) -> Result<MeteoSeries> {
    let first = *field.dates().first().context("empty field")?;
    let start = drivers
        .index_of(first)
        .ok_or_else(|| thermocline::Error::InvalidInput(format!("drivers do not cover the field start {first}")))?;
    let end = start + field.n_days();
    if end > drivers.len() {
        bail!(thermocline::Error::InvalidInput(format!(
            "field runs {} days past the end of the drivers",
            end - drivers.len()
        )));
    }
    Ok(drivers.window(start, end))
}

#[derive(Debug, Args)]
pub struct SynthDriversArgs {
    /// temperate or warm.
    #[arg(long, default_value = "temperate")]
    climate: Climate,
    /// Length of the series in whole years.
    #[arg(long, default_value_t = 10)]
    years: u32,
    /// First day of the series.
    #[arg(long, default_value = "1990-01-01")]
    start: chrono::NaiveDate,
    /// Drivers CSV output.
    #[arg(long)]
    out: PathBuf,
}

fn synth_drivers_cmd(common: &Common, name: &str, a: &SynthDriversArgs) -> Result<()> {
    let (pairs, cfg_path) = collect(common.config.as_deref(), name, &common.overrides)?;
    reject_unknown(&pairs, &["seed"], name)?;
    let seed = resolve_seed(common, &pairs, 0)?;
    let drivers = synth_drivers_from(a.climate, a.start, a.years, seed)?;
    save_drivers(&drivers, &a.out)?;
    let mut side = Sidecar::new(name, seed, cfg_path.as_deref());
    side.add("climate", a.climate).add("years", a.years).add("start", a.start).add("out", a.out.display());
    side.write(&a.out)
}

#[derive(Debug, Args)]
pub struct MakeGeometryArgs {
    /// cone, barrel or martini.
    #[arg(long, default_value = "cone")]
    shape: Shape,
    /// Surface area, m².
    #[arg(long, default_value_t = 4e7)]
    area: f64,
    /// Maximum depth, m.
    #[arg(long, default_value_t = 25.0)]
    depth: f64,
    /// Hypsography CSV output (`depth_m,area_m2`).
    #[arg(long)]
    out: PathBuf,
}

fn make_geometry_cmd(common: &Common, name: &str, a: &MakeGeometryArgs) -> Result<()> {
    let (pairs, cfg_path) = collect(common.config.as_deref(), name, &common.overrides)?;
    reject_unknown(&pairs, &["seed"], name)?;
    let seed = resolve_seed(common, &pairs, 0)?;
    let geometry = make_geometry(a.shape, a.area, a.depth)?;
    save_hypsography(&geometry, &a.out)?;
    let mut side = Sidecar::new(name, seed, cfg_path.as_deref());
    side.add("shape", a.shape).add("area", a.area).add("depth", a.depth).add("out", a.out.display());
    side.write(&a.out)
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Daily meteorology CSV.
    #[arg(long)]
    drivers: PathBuf,
    /// `depth_m,area_m2` hypsography.
    #[arg(long)]
    hypso: PathBuf,
    /// Temperature field output.
    #[arg(long)]
    out: PathBuf,
    /// Budget output; defaults to `<out stem>.budget.csv`.
    #[arg(long)]
    budget: Option<PathBuf>,
    /// Simulate the perturbed "true" twin instead of the generic lake.
    #[arg(long)]
    truth: bool,
    /// Light extinction coefficient, m⁻¹.
    #[arg(long)]
    kw: Option<f64>,
    /// Hold each ice-on until this lake's surface cools to `freeze_temp` and
    /// write the resulting drivers to FILE.
    #[arg(long, value_name = "FILE")]
    freeze_up: Option<PathBuf>,
}

const SIM_KEYS: [&str; 12] = [
    "seed",
    "kw",
    "background_diffusivity",
    "wind_coefficient",
    "mixing_depth",
    "mixing_decay",
    "substeps",
    "exchange_steps",
    "initial_temp",
    "closure_tolerance",
    "freeze_temp",
    "truth",
];

fn simulate_cmd(common: &Common, name: &str, a: &SimulateArgs) -> Result<()> {
    let (pairs, cfg_path) = collect(common.config.as_deref(), name, &common.overrides)?;
    reject_unknown(&pairs, &SIM_KEYS, name)?;
    let seed = resolve_seed(common, &pairs, 0)?;
    let mut cfg = SimConfig::default();
    for (k, v) in pairs.iter().filter(|(k, _)| k != "seed") {
        cfg.set(k, v)?;
    }
    if let Some(kw) = a.kw {
        cfg.kw = kw;
    }
    if a.truth {
        cfg = cfg.truth();
    }
    cfg.validate()?;
    let mut drivers = load_drivers(&a.drivers)?;
    let geometry = load_hypsography(&a.hypso)?;
    if let Some(path) = &a.freeze_up {
        drivers = freeze_up(&drivers, &geometry, &cfg)?;
        save_drivers(&drivers, path)?;
    }
    let out = simulate(&drivers, &geometry, &cfg)?;
    save_field(&out.field, &a.out)?;
    let budget_path = a.budget.clone().unwrap_or_else(|| sibling(&a.out, "budget.csv"));
    save_budget(&out.budget, out.field.dates(), &budget_path)?;
    println!(
        "simulated {} days x {} layers; max ice-free |residual| {:.3e} W/m2",
        out.field.n_days(),
        out.field.n_depths(),
        out.budget.max_abs_ice_free_residual()
    );
    let mut side = Sidecar::new(name, seed, cfg_path.as_deref());
    side.add("drivers", a.drivers.display())
        .add("hypso", a.hypso.display())
        .add("out", a.out.display())
        .add("budget", budget_path.display());
    if let Some(path) = &a.freeze_up {
        side.add("freeze_up", path.display());
    }
    side.add_block(&cfg.to_key_values());
    side.write(&a.out)
}

#[derive(Debug, Args)]
pub struct SampleObsArgs {
    /// Temperature field to sample from.
    #[arg(long)]
    field: PathBuf,
    /// Share of candidate cells kept, in [0, 1].
    #[arg(long, default_value_t = 1.0)]
    fraction: f64,
    /// Candidate profiles every this many days.
    #[arg(long, default_value_t = 7)]
    every_days: usize,
    /// Candidate cells at every this-many-th layer.
    #[arg(long, default_value_t = 2)]
    layer_step: usize,
    /// Restrict candidates to `START:END` (repeatable).
    #[arg(long = "window")]
    windows: Vec<String>,
    /// Observations CSV output (`date,depth_m,temp_c`).
    #[arg(long)]
    out: PathBuf,
}

fn sample_obs_cmd(common: &Common, name: &str, a: &SampleObsArgs) -> Result<()> {
    let (pairs, cfg_path) = collect(common.config.as_deref(), name, &common.overrides)?;
    reject_unknown(&pairs, &["seed"], name)?;
    let seed = resolve_seed(common, &pairs, 0)?;
    if a.every_days == 0 || a.layer_step == 0 {
        return Err(usage("--every-days and --layer-step must be positive"));
    }
    let field = load_field(&a.field)?;
    let start = field.dates()[0];
    let ranges: Vec<Range<usize>> = if a.windows.is_empty() {
        vec![0..field.n_days()]
    } else {
        a.windows
            .iter()
            .map(|w| {
                let w = parse_window(w)?;
                let s = (w.start - start).num_days().max(0) as usize;
                let e = ((w.end - start).num_days().max(0) as usize).min(field.n_days());
                Ok(s..e)
            })
            .collect::<Result<_>>()?
    };
    let pool: Vec<Observation> = (0..field.n_days())
        .filter(|t| t % a.every_days == 0 && ranges.iter().any(|r| r.contains(t)))
        .flat_map(|t| {
            let field = &field;
            (0..field.n_depths())
                .step_by(a.layer_step)
                .map(move |d| Observation { depth: d, time: t, temp: field.get(d, t) })
        })
        .collect();
    let pool = ObservationSet::new(pool, Source::Synthetic)?;
    let kept = sample_observations(&pool, a.fraction, seed, |_| true)?;
    save_observations(&kept, start, &a.out)?;
    println!("kept {} of {} candidate observations", kept.len(), pool.len());
    let mut side = Sidecar::new(name, seed, cfg_path.as_deref());
    side.add("field", a.field.display())
        .add("fraction", a.fraction)
        .add("every_days", a.every_days)
        .add("layer_step", a.layer_step)
        .add("windows", a.windows.join(" "))
        .add("out", a.out.display());
    side.write(&a.out)
}

#[derive(Debug, Args)]
pub struct TrainingFlags {
    /// Daily meteorology CSV.
    #[arg(long)]
    drivers: PathBuf,
    /// `depth_m,area_m2` hypsography.
    #[arg(long)]
    hypso: PathBuf,
    /// Training period `START:END` (repeatable); defaults to the whole series.
    #[arg(long = "train-window")]
    train_windows: Vec<String>,
    /// Checkpoint output (JSON).
    #[arg(long)]
    out: PathBuf,
    /// Epoch history; defaults to `<out stem>.history.csv`.
    #[arg(long)]
    history: Option<PathBuf>,
    /// Number of training epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// Weight of the energy-conservation term.
    #[arg(long)]
    lambda_ec: Option<f64>,
    /// ADAM step size.
    #[arg(long)]
    learning_rate: Option<f64>,
}

fn training_config(common: &Common, name: &str, flags: &TrainingFlags, mode: Mode) -> Result<(TrainingConfig, Option<PathBuf>)> {
    let (pairs, cfg_path) = collect(common.config.as_deref(), name, &common.overrides)?;
    let mut cfg = TrainingConfig { mode, ..TrainingConfig::default() };
    for (k, v) in &pairs {
        cfg.set(k, v)?;
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(e) = flags.epochs {
        cfg.epochs = e;
    }
    if let Some(l) = flags.lambda_ec {
        cfg.lambda_ec = l;
    }
    if let Some(l) = flags.learning_rate {
        cfg.learning_rate = l;
    }
    cfg.mode = mode;
    cfg.validate()?;
    Ok((cfg, cfg_path))
}

struct Inputs {
    drivers: MeteoSeries,
    geometry: LakeGeometry,
    forcing: Vec<SurfaceForcing>,
    ice_free: Vec<bool>,
    windows: Vec<Range<usize>>,
    physics: PhysicsConstants,
}

fn load_inputs(flags: &TrainingFlags) -> Result<Inputs> {
    let drivers = load_drivers(&flags.drivers)?;
    let geometry = load_hypsography(&flags.hypso)?;
    let physics = PhysicsConstants::default();
    Ok(Inputs {
        forcing: SurfaceForcing::series(&drivers, &physics)?,
        ice_free: drivers.ice_free_mask(),
        windows: windows(&drivers, &flags.train_windows)?,
        drivers,
        geometry,
        physics,
    })
}

fn finish_training(
    name: &str,
    cfg: &TrainingConfig,
    cfg_path: Option<&Path>,
    flags: &TrainingFlags,
    checkpoint: Checkpoint,
    history: &thermocline::train::TrainingHistory,
    n_obs: usize,
) -> Result<()> {
    save_checkpoint(&checkpoint, &flags.out)?;
    let history_path = flags.history.clone().unwrap_or_else(|| sibling(&flags.out, "history.csv"));
    save_history(history, &history_path)?;
    if let Some(last) = history.last() {
        println!(
            "{name}: {} epochs on {n_obs} observations, final rmse {:.4} ec {:.4}",
            last.epoch, last.rmse, last.ec_loss
        );
    } else {
        println!("{name}: no training performed ({n_obs} observations)");
    }
    let mut side = Sidecar::new(name, cfg.seed, cfg_path);
    side.add("drivers", flags.drivers.display())
        .add("hypso", flags.hypso.display())
        .add("train_windows", flags.train_windows.join(" "))
        .add("out", flags.out.display())
        .add("history", history_path.display())
        .add_block(&cfg.to_key_values());
    side.write(&flags.out)
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    flags: TrainingFlags,
    /// `date,depth_m,temp_c` observations.
    #[arg(long)]
    obs: PathBuf,
}

fn observations_for(path: &Path, inputs: &Inputs) -> Result<ObservationSet> {
    let start = inputs.drivers.start_date().context("empty drivers")?;
    let all = load_observations(path, start, inputs.drivers.len(), inputs.geometry.n_layers())?;
    Ok(all.filter(|o| inputs.windows.iter().any(|w| w.contains(&o.time))))
}

fn train_cmd(common: &Common, name: &str, a: &TrainArgs) -> Result<()> {
    let (cfg, cfg_path) = training_config(common, name, &a.flags, Mode::Scratch)?;
    let inputs = load_inputs(&a.flags)?;
    let obs = observations_for(&a.obs, &inputs)?;
    let features = build_features(&inputs.drivers, &inputs.geometry, &FeatureSpec::default(), None, &inputs.windows)?;
    let data = TrainData {
        features: &features,
        forcing: &inputs.forcing,
        ice_free: &inputs.ice_free,
        geometry: &inputs.geometry,
        physics: &inputs.physics,
        obs: &obs,
        windows: &inputs.windows,
    };
    let init = init_params(features.n_features(), &obs, &inputs.windows, &cfg)?;
    let out = train(&init, &data, &cfg, None)?;
    let mut ck = Checkpoint::new(out.params, Some(features.stats.clone()));
    ck.optimizer = Some(out.optimizer);
    ck.epoch = out.history.len();
    finish_training(name, &cfg, cfg_path.as_deref(), &a.flags, ck, &out.history, obs.len())
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    #[command(flatten)]
    flags: TrainingFlags,
    /// Simulated temperature field; every cell inside the training windows is used.
    #[arg(long)]
    field: PathBuf,
}

fn pretrain_cmd(common: &Common, name: &str, a: &PretrainArgs) -> Result<()> {
    let (cfg, cfg_path) = training_config(common, name, &a.flags, Mode::Pretrain)?;
    let inputs = load_inputs(&a.flags)?;
    let field = load_field(&a.field)?;
    if field.dates().first() != inputs.drivers.start_date().as_ref() || field.n_days() != inputs.drivers.len() {
        bail!(thermocline::Error::InvalidInput(
            "the simulated field must cover exactly the driver days".into()
        ));
    }
    if field.n_depths() != inputs.geometry.n_layers() {
        bail!(thermocline::Error::Shape(format!(
            "field has {} depths, hypsography {} layers",
            field.n_depths(),
            inputs.geometry.n_layers()
        )));
    }
    let obs = ObservationSet::from_field(&field, Source::Synthetic)
        .filter(|o| inputs.windows.iter().any(|w| w.contains(&o.time)));
    let features = build_features(&inputs.drivers, &inputs.geometry, &FeatureSpec::default(), None, &inputs.windows)?;
    let data = TrainData {
        features: &features,
        forcing: &inputs.forcing,
        ice_free: &inputs.ice_free,
        geometry: &inputs.geometry,
        physics: &inputs.physics,
        obs: &obs,
        windows: &inputs.windows,
    };
    let init = init_params(features.n_features(), &obs, &inputs.windows, &cfg)?;
    let out = train(&init, &data, &cfg, None)?;
    let mut ck = Checkpoint::new(out.params, Some(features.stats.clone()));
    ck.optimizer = Some(out.optimizer);
    ck.epoch = out.history.len();
    finish_training(name, &cfg, cfg_path.as_deref(), &a.flags, ck, &out.history, obs.len())
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    #[command(flatten)]
    flags: TrainingFlags,
    /// Starting checkpoint, usually from `pretrain`.
    #[arg(long)]
    init: PathBuf,
    /// `date,depth_m,temp_c` observations.
    #[arg(long)]
    obs: PathBuf,
}

fn finetune_cmd(common: &Common, name: &str, a: &FinetuneArgs) -> Result<()> {
    let (cfg, cfg_path) = training_config(common, name, &a.flags, Mode::Finetune)?;
    let inputs = load_inputs(&a.flags)?;
    let start = load_checkpoint(&a.init)?;
    let norm = start
        .norm
        .clone()
        .ok_or_else(|| thermocline::Error::InvalidInput("checkpoint lacks normalization statistics".into()))?;
    let obs = observations_for(&a.obs, &inputs)?;
    let features = build_features(&inputs.drivers, &inputs.geometry, &norm.spec, Some(&norm), &[])?;
    let data = TrainData {
        features: &features,
        forcing: &inputs.forcing,
        ice_free: &inputs.ice_free,
        geometry: &inputs.geometry,
        physics: &inputs.physics,
        obs: &obs,
        windows: &inputs.windows,
    };
    let out = train(&start.params, &data, &cfg, None)?;
    let mut ck = Checkpoint::new(out.params, Some(norm));
    ck.optimizer = Some(out.optimizer);
    ck.epoch = out.history.len();
    finish_training(name, &cfg, cfg_path.as_deref(), &a.flags, ck, &out.history, obs.len())
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Checkpoint to score.
    #[arg(long)]
    model: PathBuf,
    /// Daily meteorology CSV.
    #[arg(long)]
    drivers: PathBuf,
    /// `depth_m,area_m2` hypsography.
    #[arg(long)]
    hypso: PathBuf,
    /// `date,depth_m,temp_c` observations to score against.
    #[arg(long)]
    obs: PathBuf,
    /// Scored period `START:END`; defaults to the whole series.
    #[arg(long)]
    window: Option<String>,
    /// Long-format report `stratum,metric,value,count`.
    #[arg(long)]
    out: PathBuf,
    /// Also write the report as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
    /// Also write the predicted field.
    #[arg(long)]
    predictions: Option<PathBuf>,
    /// Days per prediction window.
    #[arg(long, default_value_t = 400)]
    chunk_len: usize,
    /// Days between prediction window starts.
    #[arg(long, default_value_t = 200)]
    chunk_stride: usize,
}

fn evaluate_cmd(common: &Common, name: &str, a: &EvaluateArgs) -> Result<()> {
    let (pairs, cfg_path) = collect(common.config.as_deref(), name, &common.overrides)?;
    reject_unknown(&pairs, &["seed", "chunk_len", "chunk_stride"], name)?;
    let seed = resolve_seed(common, &pairs, 0)?;
    let chunk_len = parse_setting(&pairs, "chunk_len")?.unwrap_or(a.chunk_len);
    let chunk_stride = parse_setting(&pairs, "chunk_stride")?.unwrap_or(a.chunk_stride);
    let ck = load_checkpoint(&a.model)?;
    let norm = ck
        .norm
        .clone()
        .ok_or_else(|| thermocline::Error::InvalidInput("checkpoint lacks normalization statistics".into()))?;
    let drivers = load_drivers(&a.drivers)?;
    let geometry = load_hypsography(&a.hypso)?;
    let features = build_features(&drivers, &geometry, &norm.spec, Some(&norm), &[])?;
    let values = predict(features.data(), geometry.n_layers(), drivers.len(), &ck.params, chunk_len, chunk_stride)?;
    let field = TemperatureField::new(geometry.depths(), drivers.dates(), values)?;
    let range = match &a.window {
        Some(w) => window_indices(&drivers, &parse_window(w)?)?,
        None => 0..drivers.len(),
    };
    let start = drivers.start_date().context("empty drivers")?;
    let obs = load_observations(&a.obs, start, drivers.len(), geometry.n_layers())?.window(range.start, range.end);
    let pred = field.window(range.start, range.end);
    let window_drivers = drivers.window(range.start, range.end);
    let physics = PhysicsConstants::default();
    let energy = (pred.n_days() >= 2).then_some((&window_drivers, &geometry, &physics));
    let report = evaluate(&pred, &obs, energy)?;
    save_report(&report, &a.out, a.json.as_deref())?;
    if let Some(p) = &a.predictions {
        save_field(&pred, p)?;
    }
    match report.overall.rmse {
        Some(r) => println!("rmse {r:.4} C on {} observations", report.overall.count),
        None => println!("no observations in the scored window"),
    }
    if let Some(e) = report.energy_inconsistency {
        println!("energy inconsistency {e:.4} W/m2");
    }
    let mut side = Sidecar::new(name, seed, cfg_path.as_deref());
    side.add("model", a.model.display())
        .add("drivers", a.drivers.display())
        .add("hypso", a.hypso.display())
        .add("obs", a.obs.display())
        .add("window", a.window.as_deref().unwrap_or(""))
        .add("chunk_len", chunk_len)
        .add("chunk_stride", chunk_stride)
        .add("out", a.out.display());
    side.write(&a.out)
}

#[derive(Debug, Args)]
pub struct EnergyAuditArgs {
    /// Temperature field to audit.
    #[arg(long)]
    field: PathBuf,
    /// Daily meteorology CSV.
    #[arg(long)]
    drivers: PathBuf,
    /// `depth_m,area_m2` hypsography.
    #[arg(long)]
    hypso: PathBuf,
    /// Per-day budget and residual CSV; defaults to `<field stem>.audit.csv`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Summary JSON; defaults to `<out stem>.summary.json`.
    #[arg(long)]
    summary: Option<PathBuf>,
    /// Residual tolerance for the penalty summary, W/m².
    #[arg(long, default_value_t = 24.0)]
    tau: f64,
}

fn energy_audit_cmd(common: &Common, name: &str, a: &EnergyAuditArgs) -> Result<()> {
    let (pairs, cfg_path) = collect(common.config.as_deref(), name, &common.overrides)?;
    reject_unknown(&pairs, &["seed", "tau"], name)?;
    let seed = resolve_seed(common, &pairs, 0)?;
    let tau = parse_setting(&pairs, "tau")?.unwrap_or(a.tau);
    let field = load_field(&a.field)?;
    let drivers = drivers_for(&field, &load_drivers(&a.drivers)?)?;
    let geometry = load_hypsography(&a.hypso)?;
    let physics = PhysicsConstants::default();
    let budget = energy_budget(&field, &drivers, &geometry, &physics)?;
    let out = a.out.clone().unwrap_or_else(|| sibling(&a.field, "audit.csv"));
    save_budget(&budget, field.dates(), &out)?;

    let residuals = budget.residuals();
    let mask = budget.residual_mask();
    let free: Vec<f64> = residuals.iter().zip(&mask).filter(|(_, &m)| m).map(|(r, _)| r.abs()).collect();
    let mean_abs = if free.is_empty() { 0.0 } else { free.iter().sum::<f64>() / free.len() as f64 };
    let penalty = ec_loss(&residuals, &mask, tau)?;
    let summary = json!({
        "days": field.n_days(),
        "ice_free_residual_days": free.len(),
        "mean_abs_residual_w_m2": mean_abs,
        "max_abs_residual_w_m2": budget.max_abs_ice_free_residual(),
        "tau_w_m2": tau,
        "ec_loss_w_m2": penalty.value,
        "days_over_tau": free.iter().filter(|r| **r > tau).count(),
    });
    let summary_path = a.summary.clone().unwrap_or_else(|| sibling(&out, "summary.json"));
    write_atomic(&summary_path, (serde_json::to_string_pretty(&summary)? + "\n").as_bytes())?;
    println!(
        "{} ice-free days: mean |residual| {mean_abs:.4} W/m2, max {:.4} W/m2, ec_loss {:.4}",
        free.len(),
        budget.max_abs_ice_free_residual(),
        penalty.value
    );
    let mut side = Sidecar::new(name, seed, cfg_path.as_deref());
    side.add("field", a.field.display())
        .add("drivers", a.drivers.display())
        .add("hypso", a.hypso.display())
        .add("tau", tau)
        .add("out", out.display())
        .add("summary", summary_path.display());
    side.write(&out)
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// `default` (full grid) or `smoke` (a few quick cells, the default).
    #[arg(long)]
    grid: Option<String>,
    /// `default` (10 years, 25 m) or `small` (3 years, 10 m).
    #[arg(long)]
    benchmark: Option<String>,
    /// Scratch and pretraining epochs; fine-tuning gets half.
    #[arg(long)]
    epochs: Option<usize>,
    /// Repeats per (variant, fraction) cell.
    #[arg(long)]
    repeats: Option<usize>,
    /// Comma-separated variant names, replacing the grid's list.
    #[arg(long)]
    variants: Option<String>,
    /// Comma-separated observation fractions, replacing the grid's list.
    #[arg(long)]
    fractions: Option<String>,
    /// Output directory for `summary.csv` and `runs.csv`.
    #[arg(long, default_value = "experiment-out")]
    out: PathBuf,
}

const EXPERIMENT_KEYS: [&str; 7] = ["seed", "grid", "benchmark", "epochs", "repeats", "variants", "fractions"];

fn experiment_cmd(common: &Common, name: &str, a: &ExperimentArgs) -> Result<()> {
    let (pairs, cfg_path) = collect(common.config.as_deref(), name, &common.overrides)?;
    reject_unknown(&pairs, &EXPERIMENT_KEYS, name)?;
    let seed = resolve_seed(common, &pairs, 1)?;
    let grid_name = a
        .grid
        .clone()
        .or_else(|| setting(&pairs, "grid").map(str::to_owned))
        .unwrap_or_else(|| "smoke".into());
    let mut grid = Grid::named(&grid_name)?;
    let bench_name = a
        .benchmark
        .clone()
        .or_else(|| setting(&pairs, "benchmark").map(str::to_owned))
        .unwrap_or_else(|| if grid_name == "smoke" { "small".into() } else { "default".into() });
    let spec = match bench_name.as_str() {
        "default" => BenchmarkSpec::default(),
        "small" => BenchmarkSpec::small(),
        other => return Err(usage(format!("unknown benchmark '{other}' (default, small)"))),
    };
    let default_epochs = if grid_name == "smoke" { 8 } else { 60 };
    let epochs = a.epochs.or(parse_setting(&pairs, "epochs")?).unwrap_or(default_epochs);
    if let Some(r) = a.repeats.or(parse_setting(&pairs, "repeats")?) {
        grid.repeats = r;
    }
    if let Some(v) = a.variants.clone().or_else(|| setting(&pairs, "variants").map(str::to_owned)) {
        grid.variants = v.split(',').map(|s| s.trim().parse::<Variant>()).collect::<Result<_, _>>()?;
    }
    if let Some(f) = a.fractions.clone().or_else(|| setting(&pairs, "fractions").map(str::to_owned)) {
        grid.fractions = f
            .split(',')
            .map(|s| s.trim().parse::<f64>().map_err(|_| usage(format!("bad fraction '{s}'"))))
            .collect::<Result<_>>()?;
    }
    let cfg = ExperimentConfig::new(spec.clone(), epochs, seed);
    let bundle = prepare_bundle(&spec)?;
    let result = run_experiment_grid(&bundle, &cfg, &grid)?;
    std::fs::create_dir_all(&a.out).map_err(|e| thermocline::Error::io(&a.out, e))?;
    let summary = result.summary_csv();
    write_atomic(&a.out.join("summary.csv"), summary.as_bytes())?;
    write_atomic(&a.out.join("runs.csv"), result.runs_csv().as_bytes())?;
    print!("{summary}");
    let mut side = Sidecar::new(name, seed, cfg_path.as_deref());
    side.add("grid", &grid_name)
        .add("benchmark", &bench_name)
        .add("epochs", epochs)
        .add("finetune_epochs", cfg.finetune.epochs)
        .add("repeats", grid.repeats)
        .add(
            "variants",
            grid.variants.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","),
        )
        .add(
            "fractions",
            grid.fractions.iter().map(|f| f.to_string()).collect::<Vec<_>>().join(","),
        )
        .add("out", a.out.display());
    side.write_at(&a.out.join("config.txt"))
}
