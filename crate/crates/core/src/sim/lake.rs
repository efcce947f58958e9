//! Daily 1D heat-budget simulator on the fixed 0.5 m layer grid.
//!
//! Each layer carries its heat content `u_d = c_w a_d dz T_d rho(T_d)` as the
//! prognostic quantity. Shortwave deposition, surface exchange, diffusion and
//! convective mixing only move or add heat content, and temperatures are
//! recovered by inverting `T rho(T)` per layer. The change in lake heat
//! content over a day therefore equals the day's surface forcing, evaluated
//! from the start-of-day surface temperature, up to rounding.

use serde::{Deserialize, Serialize};

use super::geometry::LakeGeometry;
use crate::data::{MeteoSeries, TemperatureField};
use crate::error::{Error, Result};
use crate::physics::{self, EnergyBudget, PhysicsConstants, SurfaceForcing, SECONDS_PER_DAY};

/// Light extinction presets, m⁻¹.
pub const KW_NORMAL: f64 = 0.45;
pub const KW_DARK: f64 = 1.20;
pub const KW_CLEAR: f64 = 0.25;

/// Parameter factors separating the synthetic "true" lake from the default
/// teacher: light extinction, background diffusivity and wind mixing.
pub const TRUTH_KW_FACTOR: f64 = 1.5;
pub const TRUTH_DIFFUSIVITY_FACTOR: f64 = 2.0;
pub const TRUTH_WIND_FACTOR: f64 = 0.7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Light extinction coefficient, m⁻¹.
    pub kw: f64,
    /// m²/s
    pub background_diffusivity: f64,
    /// Wind-stirred diffusivity per squared wind speed, m²/s per (m/s)².
    pub wind_coefficient: f64,
    /// Depth of the fully wind-stirred surface zone, m.
    pub mixing_depth: f64,
    /// e-folding scale of wind stirring below `mixing_depth`, m.
    pub mixing_decay: f64,
    /// Explicit diffusion steps per day.
    pub substeps: usize,
    /// Steps per day over which the daily surface forcing is spread.
    pub exchange_steps: usize,
    /// Uniform starting temperature used when `initial_profile` is unset, °C.
    pub initial_temp: f64,
    pub initial_profile: Option<Vec<f64>>,
    /// Largest |residual| accepted on an ice-free day, W/m².
    pub closure_tolerance: f64,
    /// Surface temperature at which [`freeze_up`] lets ice form, °C.
    pub freeze_temp: f64,
    pub physics: PhysicsConstants,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            kw: KW_NORMAL,
            background_diffusivity: 1e-6,
            wind_coefficient: 1.5e-5,
            mixing_depth: 3.0,
            mixing_decay: 2.0,
            substeps: 1440,
            exchange_steps: 24,
            initial_temp: 4.0,
            initial_profile: None,
            closure_tolerance: 24.0,
            freeze_temp: 0.5,
            physics: PhysicsConstants::default(),
        }
    }
}

impl SimConfig {
    /// The perturbed twin used to mint synthetic observations.
    pub fn truth(&self) -> Self {
        Self {
            kw: self.kw * TRUTH_KW_FACTOR,
            background_diffusivity: self.background_diffusivity * TRUTH_DIFFUSIVITY_FACTOR,
            wind_coefficient: self.wind_coefficient * TRUTH_WIND_FACTOR,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kw > 0.0) {
            return Err(Error::Config(format!("kw = {} must be positive", self.kw)));
        }
        if !(self.background_diffusivity >= 0.0 && self.wind_coefficient >= 0.0) {
            return Err(Error::Config("diffusivities must be non-negative".into()));
        }
        if !(self.mixing_depth >= 0.0 && self.mixing_decay > 0.0) {
            return Err(Error::Config("mixing depth must be >= 0 and decay > 0".into()));
        }
        if self.exchange_steps == 0 || self.substeps == 0 || !self.substeps.is_multiple_of(self.exchange_steps) {
            return Err(Error::Config(format!(
                "substeps ({}) must be a positive multiple of exchange_steps ({})",
                self.substeps, self.exchange_steps
            )));
        }
        if !(self.closure_tolerance >= 0.0) {
            return Err(Error::Config("closure tolerance must be non-negative".into()));
        }
        self.physics.validate()
    }

    /// Sets one field from `key = value` text. `truth = true` applies the
    /// perturbation factors to the current values.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("invalid value '{value}' for {key}")))
        }
        match key {
            "kw" => self.kw = num(key, value)?,
            "background_diffusivity" => self.background_diffusivity = num(key, value)?,
            "wind_coefficient" => self.wind_coefficient = num(key, value)?,
            "mixing_depth" => self.mixing_depth = num(key, value)?,
            "mixing_decay" => self.mixing_decay = num(key, value)?,
            "substeps" => self.substeps = num(key, value)?,
            "exchange_steps" => self.exchange_steps = num(key, value)?,
            "initial_temp" => self.initial_temp = num(key, value)?,
            "closure_tolerance" => self.closure_tolerance = num(key, value)?,
            "freeze_temp" => self.freeze_temp = num(key, value)?,
            "truth" => {
                if num::<bool>(key, value)? {
                    *self = self.truth();
                }
            }
            other => return Err(Error::Config(format!("unknown simulation key '{other}'"))),
        }
        Ok(())
    }

    /// Scalar settings as `key = value` lines.
    pub fn to_key_values(&self) -> String {
        [
            ("kw", self.kw.to_string()),
            ("background_diffusivity", self.background_diffusivity.to_string()),
            ("wind_coefficient", self.wind_coefficient.to_string()),
            ("mixing_depth", self.mixing_depth.to_string()),
            ("mixing_decay", self.mixing_decay.to_string()),
            ("substeps", self.substeps.to_string()),
            ("exchange_steps", self.exchange_steps.to_string()),
            ("initial_temp", self.initial_temp.to_string()),
            ("closure_tolerance", self.closure_tolerance.to_string()),
            ("freeze_temp", self.freeze_temp.to_string()),
        ]
        .iter()
        .map(|(k, v)| format!("{k} = {v}\n"))
        .collect()
    }

    /// Eddy diffusivity at depth `z` for wind speed `wind`, m²/s.
    pub fn diffusivity(&self, z: f64, wind: f64) -> f64 {
        let stir = self.wind_coefficient * wind * wind;
        let decay = if z <= self.mixing_depth {
            1.0
        } else {
            (-(z - self.mixing_depth) / self.mixing_decay).exp()
        };
        self.background_diffusivity + stir * decay
    }

    /// Diffusion steps per day needed for stability at the given peak diffusivity.
    pub fn required_substeps(&self, max_diffusivity: f64, dz: f64) -> usize {
        let n = (2.0 * max_diffusivity * SECONDS_PER_DAY / (dz * dz)).ceil() as usize;
        n.max(1).div_ceil(self.exchange_steps) * self.exchange_steps
    }
}

/// Shortwave flux reaching depth `z` after surface reflection, W/m².
pub fn attenuate_shortwave(surface: f64, kw: f64, depth: f64, consts: &PhysicsConstants) -> Result<f64> {
    if !(depth >= 0.0) {
        return Err(Error::OutOfRange(format!("depth {depth} must be non-negative")));
    }
    Ok(surface * (1.0 - consts.albedo_sw) * (-kw * depth).exp())
}

/// Share of the surface-absorbed shortwave power kept by each layer.
///
/// Layer `d` absorbs what crosses its top minus what crosses its bottom,
/// `a_d R(z_d) - a_{d+1} R(z_{d+1})`; the deepest layer keeps the rest, so
/// the shares sum to one.
pub fn shortwave_shares(geometry: &LakeGeometry, kw: f64) -> Vec<f64> {
    let a0 = geometry.surface_area();
    let n = geometry.n_layers();
    let through = |d: usize| geometry.areas()[d] / a0 * (-kw * geometry.depth(d)).exp();
    (0..n)
        .map(|d| if d + 1 < n { through(d) - through(d + 1) } else { through(d) })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    /// Column `t` is the profile at the start of day `t`.
    pub field: TemperatureField,
    pub budget: EnergyBudget,
}

/// `T rho(T)` and its derivative.
fn t_rho(t: f64) -> (f64, f64) {
    const A: f64 = 288.9414;
    const B: f64 = 3.9863;
    const C: f64 = 68.12963;
    const S: f64 = 508929.2;
    let n = (t + A) * (t - B) * (t - B);
    let dn = (t - B) * (t - B) + 2.0 * (t + A) * (t - B);
    let d = S * (t + C);
    let rho = 1000.0 * (1.0 - n / d);
    let drho = -1000.0 * (dn * d - n * S) / (d * d);
    (t * rho, rho + t * drho)
}

/// Solves `T rho(T) = target` starting from `guess`.
fn invert(target: f64, guess: f64) -> Result<f64> {
    let mut t = guess;
    for _ in 0..50 {
        let (f, df) = t_rho(t);
        let step = (f - target) / df;
        t -= step;
        if step.abs() <= 1e-13 * t.abs().max(1.0) {
            return Ok(t);
        }
    }
    if t.is_finite() {
        Ok(t)
    } else {
        Err(Error::NonFinite(format!("temperature inversion for heat content {target}")))
    }
}

#[derive(Clone)]
struct Column<'g> {
    geometry: &'g LakeGeometry,
    /// `c_w a_d dz`, J per (°C kg/m³).
    weight: Vec<f64>,
    /// Heat content per layer, J.
    u: Vec<f64>,
    /// Temperatures tracking `u`; exact after [`Column::sync`].
    t: Vec<f64>,
    /// `d u / d T` per layer at the last sync.
    capacity: Vec<f64>,
}

impl<'g> Column<'g> {
    fn new(geometry: &'g LakeGeometry, profile: &[f64], c_w: f64) -> Self {
        let weight: Vec<f64> = geometry
            .areas()
            .iter()
            .map(|a| c_w * a * geometry.layer_thickness())
            .collect();
        let u = profile.iter().zip(&weight).map(|(&t, w)| w * t_rho(t).0).collect();
        let mut col = Self {
            geometry,
            weight,
            u,
            t: profile.to_vec(),
            capacity: vec![0.0; profile.len()],
        };
        col.refresh_capacity();
        col
    }

    fn refresh_capacity(&mut self) {
        for d in 0..self.t.len() {
            self.capacity[d] = self.weight[d] * t_rho(self.t[d]).1;
        }
    }

    fn sync(&mut self) -> Result<()> {
        for d in 0..self.u.len() {
            self.t[d] = invert(self.u[d] / self.weight[d], self.t[d])?;
        }
        self.refresh_capacity();
        Ok(())
    }

    fn add_heat(&mut self, d: usize, joules: f64) {
        self.u[d] += joules;
        self.t[d] += joules / self.capacity[d];
    }

    /// One explicit diffusion step; heat moves between neighbours only.
    fn diffuse(&mut self, k_interface: &[f64], dt: f64, c_w: f64) {
        let dz = self.geometry.layer_thickness();
        let n = self.t.len();
        let mut flux = vec![0.0; n.saturating_sub(1)];
        for (i, f) in flux.iter_mut().enumerate() {
            let area = self.geometry.areas()[i + 1];
            *f = c_w * 1000.0 * k_interface[i] * area * (self.t[i] - self.t[i + 1]) / dz * dt;
        }
        for (i, &f) in flux.iter().enumerate() {
            self.add_heat(i, -f);
            self.add_heat(i + 1, f);
        }
    }

    /// Merges density-unstable neighbours until density no longer decreases
    /// with depth. Merged groups share one temperature and their total heat.
    fn convect(&mut self) -> Result<()> {
        let n = self.t.len();
        // (first layer, last layer, temperature) per group, top to bottom
        let mut groups: Vec<(usize, usize, f64)> = Vec::with_capacity(n);
        for d in 0..n {
            groups.push((d, d, self.t[d]));
            while groups.len() >= 2 {
                let lower = groups[groups.len() - 1];
                let upper = groups[groups.len() - 2];
                if physics::density(upper.2) <= physics::density(lower.2) {
                    break;
                }
                groups.truncate(groups.len() - 2);
                let (first, last) = (upper.0, lower.1);
                let heat: f64 = self.u[first..=last].iter().sum();
                let weight: f64 = self.weight[first..=last].iter().sum();
                let guess = (upper.2 * (upper.1 - upper.0 + 1) as f64 + lower.2 * (lower.1 - lower.0 + 1) as f64)
                    / (last - first + 1) as f64;
                groups.push((first, last, invert(heat / weight, guess)?));
            }
        }
        for (first, last, t) in groups {
            if first == last {
                continue;
            }
            let per = t_rho(t).0;
            for d in first..=last {
                self.t[d] = t;
                self.u[d] = self.weight[d] * per;
            }
        }
        self.refresh_capacity();
        Ok(())
    }
}

/// Runs the lake over every driver day.
///
/// The returned field has one column per driver day; the last driver day
/// only provides the final profile's date. Frozen days skip surface
/// exchange (shortwave included) while diffusion continues.
/// Daily stepping state shared by [`simulate`] and [`freeze_up`].
struct Stepper<'a> {
    geometry: &'a LakeGeometry,
    config: &'a SimConfig,
    forcing: Vec<SurfaceForcing>,
    shares: Vec<f64>,
    col: Column<'a>,
    k: Vec<f64>,
}

impl<'a> Stepper<'a> {
    fn new(drivers: &MeteoSeries, geometry: &'a LakeGeometry, config: &'a SimConfig) -> Result<Self> {
        config.validate()?;
        if drivers.is_empty() {
            return Err(Error::InvalidInput("cannot simulate an empty driver series".into()));
        }
        let n = geometry.n_layers();
        let profile = match &config.initial_profile {
            Some(p) if p.len() != n => {
                return Err(Error::Shape(format!("initial profile has {} layers, geometry {n}", p.len())))
            }
            Some(p) => p.clone(),
            None => vec![config.initial_temp; n],
        };
        for &t in &profile {
            physics::water_density(t)?;
        }
        let peak_wind = drivers.days().iter().map(|d| d.wind).fold(0.0, f64::max);
        let required = config.required_substeps(config.diffusivity(0.0, peak_wind), geometry.layer_thickness());
        if required > config.substeps {
            return Err(Error::UnstableDiffusion {
                required,
                configured: config.substeps,
            });
        }
        Ok(Self {
            geometry,
            config,
            forcing: SurfaceForcing::series(drivers, &config.physics)?,
            shares: shortwave_shares(geometry, config.kw),
            col: Column::new(geometry, &profile, config.physics.c_w),
            k: vec![0.0; n.saturating_sub(1)],
        })
    }

    fn profile(&self) -> &[f64] {
        &self.col.t
    }

    /// Advances the column from the start of `day` to the start of the next.
    fn step(&mut self, day: usize, wind: f64, frozen: bool) -> Result<()> {
        let config = self.config;
        let consts = &config.physics;
        let area = self.geometry.surface_area();
        let per_exchange = config.substeps / config.exchange_steps;
        let dt = SECONDS_PER_DAY / config.substeps as f64;
        let exchange_dt = SECONDS_PER_DAY / config.exchange_steps as f64;
        for (i, k) in self.k.iter_mut().enumerate() {
            *k = config.diffusivity(self.geometry.depth(i + 1), wind);
        }
        let f = &self.forcing[day];
        let (shortwave, surface) = if frozen {
            (0.0, 0.0)
        } else {
            let ts = self.col.t[0];
            physics::saturation_vapor_pressure(ts)?;
            (f.shortwave_absorbed, f.longwave_absorbed - f.outgoing(ts, consts))
        };
        for _ in 0..config.exchange_steps {
            if !frozen {
                for (d, share) in self.shares.iter().enumerate() {
                    self.col.add_heat(d, shortwave * share * area * exchange_dt);
                }
                self.col.add_heat(0, surface * area * exchange_dt);
            }
            for _ in 0..per_exchange {
                self.col.diffuse(&self.k, dt, consts.c_w);
            }
            self.col.sync()?;
            self.col.convect()?;
        }
        match self.col.t.iter().position(|t| !t.is_finite()) {
            Some(d) => Err(Error::NonFinite(format!("layer {d} on day {day}"))),
            None => Ok(()),
        }
    }
}

pub fn simulate(drivers: &MeteoSeries, geometry: &LakeGeometry, config: &SimConfig) -> Result<SimOutput> {
    let mut run = Stepper::new(drivers, geometry, config)?;
    let consts = &config.physics;
    let n_days = drivers.len();
    let mut field = TemperatureField::filled(geometry.depths(), drivers.dates(), 0.0);
    field.set_profile(0, run.profile());
    for day in 0..n_days.saturating_sub(1) {
        let met = drivers.get(day);
        run.step(day, met.wind, met.frozen)?;
        field.set_profile(day + 1, run.profile());
    }

    let budget = physics::energy_budget(&field, drivers, geometry, consts)?;
    for (day, b) in budget.days.iter().enumerate() {
        if let (true, Some(r)) = (b.ice_free, b.residual) {
            if r.abs() > config.closure_tolerance {
                return Err(Error::ClosureViolated {
                    day,
                    residual: r,
                    tolerance: config.closure_tolerance,
                });
            }
        }
    }
    Ok(SimOutput { field, budget })
}

/// Delays each ice-on to the lake's own freeze-up.
///
/// The driver frozen flags are read as the season in which ice can persist.
/// Within each such run of days the lake stays open until a day of open-water
/// exchange would cool its surface to `config.freeze_temp`. From that day
/// until the run ends it is ice-covered. Ice-off dates are unchanged. Returns
/// the drivers with the realized flags, for use with [`simulate`] and the
/// same geometry and config.
pub fn freeze_up(drivers: &MeteoSeries, geometry: &LakeGeometry, config: &SimConfig) -> Result<MeteoSeries> {
    let mut run = Stepper::new(drivers, geometry, config)?;
    let mut days = drivers.days().to_vec();
    let mut iced = false;
    for day in 0..days.len() {
        iced &= days[day].frozen;
        if days[day].frozen && !iced {
            let open = run.col.clone();
            run.step(day, days[day].wind, false)?;
            if run.profile()[0] <= config.freeze_temp {
                run.col = open;
                iced = true;
            }
        }
        days[day].frozen = iced;
        if iced || !drivers.get(day).frozen {
            run.step(day, days[day].wind, iced)?;
        }
    }
    MeteoSeries::new(days)
}
