//! Twin-lake benchmark: a generic simulator acts as the teacher, a
//! perturbed copy of it plays the real lake, and models are scored on the
//! perturbed lake's held-out years.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::report::energy_inconsistency;
use crate::data::{
    build_features, sample_observations, DateRange, FeatureMatrix, FeatureSpec, MeteoSeries, Observation, ObservationSet,
    SplitConfig, Source, TemperatureField, TimeSplit,
};
use crate::error::{Error, Result};
use crate::model::{predict, ModelParams};
use crate::physics::{PhysicsConstants, SurfaceForcing};
use crate::sim::{freeze_up, make_geometry, simulate, synth_drivers, Climate, LakeGeometry, Shape, SimConfig, KW_CLEAR, KW_DARK};
use crate::train::{init_params, train, TrainData, TrainingConfig, TrainingHistory};

fn date(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).expect("valid calendar date")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSpec {
    pub climate: Climate,
    pub shape: Shape,
    pub years: u32,
    pub surface_area: f64,
    pub max_depth: f64,
    pub drivers_seed: u64,
    pub split: SplitConfig,
    /// Truth profiles are sampled every this many days...
    pub obs_interval_days: usize,
    /// ...at every this-many-th layer.
    pub obs_layer_step: usize,
}

impl Default for BenchmarkSpec {
    /// Ten years on a 25 m cone; two three-year training blocks around a
    /// four-year test block.
    fn default() -> Self {
        Self {
            climate: Climate::Temperate,
            shape: Shape::Cone,
            years: 10,
            surface_area: 4e7,
            max_depth: 25.0,
            drivers_seed: 1,
            split: SplitConfig {
                train: vec![
                    DateRange::new(date(1990, 1, 1), date(1993, 1, 1)),
                    DateRange::new(date(1997, 1, 1), date(2000, 1, 1)),
                ],
                test: DateRange::new(date(1993, 1, 1), date(1997, 1, 1)),
            },
            obs_interval_days: 7,
            obs_layer_step: 2,
        }
    }
}

impl BenchmarkSpec {
    /// Three years on a 10 m cone, for quick runs.
    pub fn small() -> Self {
        Self {
            years: 3,
            max_depth: 10.0,
            surface_area: 1e7,
            split: SplitConfig {
                train: vec![
                    DateRange::new(date(1990, 1, 1), date(1991, 1, 1)),
                    DateRange::new(date(1992, 1, 1), date(1993, 1, 1)),
                ],
                test: DateRange::new(date(1991, 1, 1), date(1992, 1, 1)),
            },
            ..Self::default()
        }
    }
}

/// Where pretraining data comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PretrainSource {
    /// The generic simulator of the target lake itself.
    Teacher,
    Geometry(Shape),
    /// Generic simulator with a darker (`true`) or clearer (`false`) water column.
    Clarity { dark: bool },
    Climate(Climate),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// Plain RMSE training from random weights.
    Scratch,
    /// RMSE plus the energy penalty, from random weights.
    Ec,
    /// Energy-aware fine-tuning of a pretrained model.
    Pretrained(PretrainSource),
}

impl Variant {
    pub const ALL: [Variant; 9] = [
        Variant::Scratch,
        Variant::Ec,
        Variant::Pretrained(PretrainSource::Teacher),
        Variant::Pretrained(PretrainSource::Geometry(Shape::Barrel)),
        Variant::Pretrained(PretrainSource::Geometry(Shape::Martini)),
        Variant::Pretrained(PretrainSource::Clarity { dark: true }),
        Variant::Pretrained(PretrainSource::Clarity { dark: false }),
        Variant::Pretrained(PretrainSource::Climate(Climate::Warm)),
        Variant::Pretrained(PretrainSource::Geometry(Shape::Cone)),
    ];
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Variant::Scratch => f.write_str("scratch"),
            Variant::Ec => f.write_str("ec"),
            Variant::Pretrained(PretrainSource::Teacher) => f.write_str("pretrained"),
            Variant::Pretrained(PretrainSource::Geometry(s)) => write!(f, "pretrained-{s}"),
            Variant::Pretrained(PretrainSource::Clarity { dark: true }) => f.write_str("pretrained-dark"),
            Variant::Pretrained(PretrainSource::Clarity { dark: false }) => f.write_str("pretrained-clear"),
            Variant::Pretrained(PretrainSource::Climate(c)) => write!(f, "pretrained-{c}"),
        }
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scratch" => return Ok(Variant::Scratch),
            "ec" => return Ok(Variant::Ec),
            "pretrained" => return Ok(Variant::Pretrained(PretrainSource::Teacher)),
            "pretrained-dark" => return Ok(Variant::Pretrained(PretrainSource::Clarity { dark: true })),
            "pretrained-clear" => return Ok(Variant::Pretrained(PretrainSource::Clarity { dark: false })),
            _ => {}
        }
        let rest = s
            .strip_prefix("pretrained-")
            .ok_or_else(|| Error::Config(format!("unknown variant '{s}'")))?;
        if let Ok(shape) = rest.parse::<Shape>() {
            return Ok(Variant::Pretrained(PretrainSource::Geometry(shape)));
        }
        rest.parse::<Climate>()
            .map(|c| Variant::Pretrained(PretrainSource::Climate(c)))
            .map_err(|_| Error::Config(format!("unknown variant '{s}'")))
    }
}

/// Training settings for each stage of the benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub benchmark: BenchmarkSpec,
    /// Used for both scratch variants; `lambda_ec` is overridden per variant.
    pub scratch: TrainingConfig,
    pub pretrain: TrainingConfig,
    pub finetune: TrainingConfig,
    /// Base seed; repeats and pretraining derive theirs from it.
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn new(benchmark: BenchmarkSpec, epochs: usize, seed: u64) -> Self {
        let base = TrainingConfig {
            epochs,
            chunk_len: 365,
            chunk_stride: 365,
            learning_rate: 0.01,
            patience: None,
            ..TrainingConfig::default()
        };
        Self {
            benchmark,
            scratch: base.clone(),
            pretrain: base.clone(),
            // A smaller step keeps fine-tuning on few observations from
            // undoing what pretraining learned.
            finetune: TrainingConfig {
                epochs: epochs / 2,
                learning_rate: base.learning_rate / 10.0,
                ..base
            },
            seed,
        }
    }
}

/// One simulated lake with everything needed to train on it.
#[derive(Debug, Clone)]
pub struct LakeData {
    pub drivers: MeteoSeries,
    pub geometry: LakeGeometry,
    pub features: FeatureMatrix,
    pub forcing: Vec<SurfaceForcing>,
    pub ice_free: Vec<bool>,
    pub field: TemperatureField,
}

impl LakeData {
    fn build(
        drivers: MeteoSeries,
        geometry: LakeGeometry,
        sim: &SimConfig,
        spec: &FeatureSpec,
        stats_from: Option<&FeatureMatrix>,
        stats_days: &[Range<usize>],
    ) -> Result<Self> {
        let field = simulate(&drivers, &geometry, sim)?.field;
        let features = build_features(&drivers, &geometry, spec, stats_from.map(|f| &f.stats), stats_days)?;
        Ok(Self {
            forcing: SurfaceForcing::series(&drivers, &sim.physics)?,
            ice_free: drivers.ice_free_mask(),
            drivers,
            geometry,
            features,
            field,
        })
    }
}

/// Target lake, its held-out truth and the split.
#[derive(Debug, Clone)]
pub struct Bundle {
    pub spec: BenchmarkSpec,
    pub physics: PhysicsConstants,
    /// Perturbed "real" lake; its field is the truth.
    pub truth: LakeData,
    pub split: TimeSplit,
    /// Truth profiles in the training windows, full-series day indices.
    pub train_pool: ObservationSet,
    /// Truth profiles in the test window, indexed from the window start.
    pub test_obs: ObservationSet,
}

fn profile_pool(field: &TemperatureField, interval: usize, layer_step: usize, days: &[Range<usize>]) -> Result<ObservationSet> {
    let obs = days
        .iter()
        .flat_map(|r| r.clone())
        .filter(|t| t % interval == 0)
        .flat_map(|t| {
            (0..field.n_depths())
                .step_by(layer_step)
                .map(move |d| Observation { depth: d, time: t, temp: field.get(d, t) })
        })
        .collect();
    ObservationSet::new(obs, Source::Synthetic)
}

pub fn prepare_bundle(spec: &BenchmarkSpec) -> Result<Bundle> {
    if spec.obs_interval_days == 0 || spec.obs_layer_step == 0 {
        return Err(Error::Config("observation interval and layer step must be positive".into()));
    }
    let season = synth_drivers(spec.climate, spec.years, spec.drivers_seed)?;
    let split = TimeSplit::resolve(&spec.split, &season)?;
    let geometry = make_geometry(spec.shape, spec.surface_area, spec.max_depth)?;
    let sim = SimConfig::default().truth();
    let drivers = freeze_up(&season, &geometry, &sim)?;
    let truth = LakeData::build(drivers, geometry, &sim, &FeatureSpec::default(), None, &split.train)?;
    let train_pool = profile_pool(&truth.field, spec.obs_interval_days, spec.obs_layer_step, &split.train)?;
    let test_obs = profile_pool(
        &truth.field,
        spec.obs_interval_days,
        spec.obs_layer_step,
        std::slice::from_ref(&split.test),
    )?
    .window(split.test.start, split.test.end);
    Ok(Bundle {
        spec: spec.clone(),
        physics: sim.physics,
        truth,
        split,
        train_pool,
        test_obs,
    })
}

impl Bundle {
    fn train_data<'a>(&'a self, obs: &'a ObservationSet) -> TrainData<'a> {
        TrainData {
            features: &self.truth.features,
            forcing: &self.truth.forcing,
            ice_free: &self.truth.ice_free,
            geometry: &self.truth.geometry,
            physics: &self.physics,
            obs,
            windows: &self.split.train,
        }
    }

    /// Generic-simulator twin used for pretraining. Features reuse the
    /// target lake's normalization.
    pub fn source_lake(&self, source: PretrainSource) -> Result<LakeData> {
        let spec = &self.spec;
        let mut sim = SimConfig::default();
        let mut shape = spec.shape;
        let mut climate = spec.climate;
        match source {
            PretrainSource::Teacher => {}
            PretrainSource::Geometry(s) => shape = s,
            PretrainSource::Clarity { dark } => sim.kw = if dark { KW_DARK } else { KW_CLEAR },
            PretrainSource::Climate(c) => climate = c,
        }
        let geometry = if shape == spec.shape {
            self.truth.geometry.clone()
        } else {
            make_geometry(shape, spec.surface_area, spec.max_depth)?
        };
        // The teacher shares the target lake's ice record; any other lake
        // freezes on its own schedule.
        let drivers = if source == PretrainSource::Teacher {
            self.truth.drivers.clone()
        } else {
            freeze_up(&synth_drivers(climate, spec.years, spec.drivers_seed)?, &geometry, &sim)?
        };
        LakeData::build(
            drivers,
            geometry,
            &sim,
            &self.truth.features.stats.spec,
            Some(&self.truth.features),
            &[],
        )
    }

    /// Full-series prediction, then the test window scored against truth.
    pub fn score(&self, params: &ModelParams, cfg: &TrainingConfig) -> Result<Score> {
        let n = self.truth.features.n_days;
        let d = self.truth.features.n_depths;
        let values = predict(self.truth.features.data(), d, n, params, cfg.chunk_len, cfg.chunk_stride)?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("model prediction".into()));
        }
        let field = TemperatureField::new(self.truth.field.depths().to_vec(), self.truth.field.dates().to_vec(), values)?;
        let test = field.window(self.split.test.start, self.split.test.end);
        let rmse = crate::model::rmse_loss(&test, &self.test_obs)?;
        let drivers = self.truth.drivers.window(self.split.test.start, self.split.test.end);
        // Wildly wrong predictions can leave the density range; report those as infinite.
        let energy = match energy_inconsistency(&test, &drivers, &self.truth.geometry, &self.physics) {
            Ok(v) => v,
            Err(Error::OutOfRange(_)) => f64::INFINITY,
            Err(e) => return Err(e),
        };
        Ok(Score {
            rmse,
            energy_inconsistency: energy,
        })
    }

    /// Training observations for one `(fraction, repeat)` cell.
    pub fn sample(&self, fraction: f64, seed: u64) -> Result<ObservationSet> {
        sample_observations(&self.train_pool, fraction, seed, |_| true)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Score {
    /// Test-window RMSE, °C.
    pub rmse: f64,
    /// Test-window mean |energy residual|, W/m².
    pub energy_inconsistency: f64,
}

#[derive(Debug, Clone)]
pub struct Pretrained {
    pub source: PretrainSource,
    pub params: ModelParams,
    pub history: TrainingHistory,
}

/// Trains on every cell of the source twin's simulated field.
pub fn pretrain(bundle: &Bundle, source: PretrainSource, cfg: &ExperimentConfig) -> Result<Pretrained> {
    let lake = bundle.source_lake(source)?;
    let obs = ObservationSet::from_field(&lake.field, Source::Synthetic);
    let windows = [0..lake.features.n_days];
    let train_cfg = TrainingConfig {
        seed: cfg.seed,
        mode: crate::train::Mode::Pretrain,
        ..cfg.pretrain.clone()
    };
    let data = TrainData {
        features: &lake.features,
        forcing: &lake.forcing,
        ice_free: &lake.ice_free,
        geometry: &lake.geometry,
        physics: &bundle.physics,
        obs: &obs,
        windows: &windows,
    };
    let init = init_params(lake.features.n_features(), &obs, &windows, &train_cfg)?;
    let out = train(&init, &data, &train_cfg, None)?;
    Ok(Pretrained {
        source,
        params: out.params,
        history: out.history,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub variant: String,
    pub fraction: f64,
    pub repeat: usize,
    pub seed: u64,
    pub n_train_obs: usize,
    pub score: Score,
    #[serde(skip)]
    pub history: TrainingHistory,
}

/// Seed of repeat `r`; shared by every variant and fraction so cells are
/// compared on the same draws.
pub fn repeat_seed(base: u64, repeat: usize) -> u64 {
    base.wrapping_mul(1_000_003).wrapping_add(repeat as u64 + 1)
}

/// Trains and scores one grid cell. `pretrained` must be given for the
/// pretrained variants.
pub fn run_cell(
    bundle: &Bundle,
    cfg: &ExperimentConfig,
    variant: Variant,
    fraction: f64,
    repeat: usize,
    pretrained: Option<&Pretrained>,
) -> Result<CellResult> {
    let seed = repeat_seed(cfg.seed, repeat);
    let obs = bundle.sample(fraction, seed)?;
    let data = bundle.train_data(&obs);
    let (init, train_cfg) = match variant {
        Variant::Scratch | Variant::Ec => {
            let train_cfg = TrainingConfig {
                seed,
                lambda_ec: if variant == Variant::Ec { cfg.scratch.lambda_ec } else { 0.0 },
                ..cfg.scratch.clone()
            };
            let init = init_params(bundle.truth.features.n_features(), &obs, &bundle.split.train, &train_cfg)?;
            (init, train_cfg)
        }
        Variant::Pretrained(source) => {
            let p = pretrained
                .filter(|p| p.source == source)
                .ok_or_else(|| Error::Config(format!("variant {variant} needs its pretrained model")))?;
            let train_cfg = TrainingConfig {
                seed,
                mode: crate::train::Mode::Finetune,
                ..cfg.finetune.clone()
            };
            (p.params.clone(), train_cfg)
        }
    };
    let out = train(&init, &data, &train_cfg, None)?;
    let score = bundle.score(&out.params, &train_cfg)?;
    Ok(CellResult {
        variant: variant.to_string(),
        fraction,
        repeat,
        seed,
        n_train_obs: obs.len(),
        score,
        history: out.history,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub fractions: Vec<f64>,
    pub variants: Vec<Variant>,
    pub repeats: usize,
}

impl Grid {
    pub fn full() -> Self {
        Self {
            fractions: vec![0.0, 0.002, 0.02, 0.2, 1.0],
            variants: Variant::ALL.to_vec(),
            repeats: 10,
        }
    }

    pub fn smoke() -> Self {
        Self {
            fractions: vec![0.0, 0.2],
            variants: vec![Variant::Scratch, Variant::Ec, Variant::Pretrained(PretrainSource::Teacher)],
            repeats: 2,
        }
    }

    pub fn named(name: &str) -> Result<Self> {
        match name {
            "default" => Ok(Self::full()),
            "smoke" => Ok(Self::smoke()),
            other => Err(Error::Config(format!("unknown grid '{other}' (default, smoke)"))),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.repeats == 0 || self.fractions.is_empty() || self.variants.is_empty() {
            return Err(Error::Config("grid needs at least one fraction, variant and repeat".into()));
        }
        if let Some(f) = self.fractions.iter().find(|f| !(0.0..=1.0).contains(*f)) {
            return Err(Error::Config(format!("fraction {f} outside [0, 1]")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridResult {
    pub cells: Vec<CellResult>,
    pub pretrained: Vec<Pretrained>,
}

impl PartialEq for Pretrained {
    fn eq(&self, other: &Self) -> bool {
        self.source == other.source && self.params == other.params
    }
}

/// Runs every (variant, fraction, repeat) cell. Pretrained models are
/// trained once per source. Cells run in parallel but results come back in
/// grid order, so the tables do not depend on scheduling.
pub fn run_experiment_grid(bundle: &Bundle, cfg: &ExperimentConfig, grid: &Grid) -> Result<GridResult> {
    grid.validate()?;
    let mut sources: Vec<PretrainSource> = grid
        .variants
        .iter()
        .filter_map(|v| match v {
            Variant::Pretrained(s) => Some(*s),
            _ => None,
        })
        .collect();
    sources.sort();
    sources.dedup();
    let pretrained = sources
        .par_iter()
        .map(|&s| pretrain(bundle, s, cfg))
        .collect::<Result<Vec<_>>>()?;
    let cells: Vec<(Variant, f64, usize)> = grid
        .variants
        .iter()
        .flat_map(|&v| grid.fractions.iter().flat_map(move |&f| (0..grid.repeats).map(move |r| (v, f, r))))
        .collect();
    let results = cells
        .par_iter()
        .map(|&(v, f, r)| {
            let p = match v {
                Variant::Pretrained(s) => pretrained.iter().find(|p| p.source == s),
                _ => None,
            };
            run_cell(bundle, cfg, v, f, r, p)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GridResult {
        cells: results,
        pretrained,
    })
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

impl GridResult {
    /// `variant,fraction,runs,rmse_mean,rmse_std,energy_mean,energy_std`,
    /// one row per (variant, fraction) in grid order; std is the sample
    /// standard deviation over repeats.
    pub fn summary_csv(&self) -> String {
        let mut groups: BTreeMap<(usize, usize), (String, f64, Vec<f64>, Vec<f64>)> = BTreeMap::new();
        let mut variant_order: Vec<String> = Vec::new();
        let mut fraction_order: Vec<f64> = Vec::new();
        for c in &self.cells {
            let vi = variant_order.iter().position(|v| *v == c.variant).unwrap_or_else(|| {
                variant_order.push(c.variant.clone());
                variant_order.len() - 1
            });
            let fi = fraction_order.iter().position(|f| *f == c.fraction).unwrap_or_else(|| {
                fraction_order.push(c.fraction);
                fraction_order.len() - 1
            });
            let g = groups
                .entry((vi, fi))
                .or_insert_with(|| (c.variant.clone(), c.fraction, Vec::new(), Vec::new()));
            g.2.push(c.score.rmse);
            g.3.push(c.score.energy_inconsistency);
        }
        let mut out = String::from("variant,fraction,runs,rmse_mean,rmse_std,energy_mean,energy_std\n");
        for (variant, fraction, rmse, energy) in groups.values() {
            let (rm, rs) = mean_std(rmse);
            let (em, es) = mean_std(energy);
            out.push_str(&format!(
                "{variant},{fraction},{},{rm:.6},{rs:.6},{em:.6},{es:.6}\n",
                rmse.len()
            ));
        }
        out
    }

    /// One row per trained model.
    pub fn runs_csv(&self) -> String {
        let mut out = String::from("variant,fraction,repeat,seed,n_train_obs,epochs,rmse,energy_inconsistency\n");
        for c in &self.cells {
            out.push_str(&format!(
                "{},{},{},{},{},{},{:.6},{:.6}\n",
                c.variant,
                c.fraction,
                c.repeat,
                c.seed,
                c.n_train_obs,
                c.history.len(),
                c.score.rmse,
                c.score.energy_inconsistency
            ));
        }
        out
    }

    /// Mean test RMSE of the given variant/fraction cells.
    pub fn mean_rmse(&self, variant: Variant, fraction: f64) -> Option<f64> {
        let name = variant.to_string();
        let v: Vec<f64> = self
            .cells
            .iter()
            .filter(|c| c.variant == name && c.fraction == fraction)
            .map(|c| c.score.rmse)
            .collect();
        (!v.is_empty()).then(|| mean_std(&v).0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.to_string().parse::<Variant>().unwrap(), v);
        }
        assert!("pretrained-purple".parse::<Variant>().is_err());
    }

    #[test]
    fn split_is_disjoint_and_pools_respect_it() {
        let b = prepare_bundle(&BenchmarkSpec::small()).unwrap();
        assert!(b.train_pool.iter().all(|o| b.split.is_train(o.time)));
        assert!(b.test_obs.iter().all(|o| o.time < b.split.test.len()));
        assert!(!b.test_obs.is_empty());
        assert!(b.sample(0.0, 1).unwrap().is_empty());
        assert_eq!(b.sample(1.0, 1).unwrap().len(), b.train_pool.len());
    }

    #[test]
    fn mean_std_uses_sample_deviation() {
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(mean_std(&[5.0]), (5.0, 0.0));
    }
}
