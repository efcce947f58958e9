//! Lake heat content, surface heat fluxes and the energy-conservation penalty.
//!
//! Sign convention: `latent` (E) and `sensible` (H) are positive when heat
//! leaves the lake, so evaporation and a surface warmer than the air both
//! cool it. The daily balance is
//!
//! ```text
//! residual_t = (U_{t+1} - U_t) / (A_0 * 86400)
//!            - [R_SW (1 - α_SW) + R_LWin (1 - α_LW) - R_LWout - E - H]
//! ```
//!
//! in W/m², with the surface temperature taken from the top layer on day `t`.
//! The vapor pressure gap is `e_s(T_s) (1 - S_RH RH / 100)`; air density uses
//! the driver humidity at the air temperature.
//! Formulas are generic over [`Real`] and shared by the simulator (plain
//! `f64`) and the training loss (tape values).

mod tape;

use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

pub use tape::{ec_loss_tape, energy_residuals_tape};

use crate::data::csvio::write_atomic;
use crate::data::{DailyMeteo, MeteoSeries, TemperatureField};
use crate::error::{Error, Result};
use crate::grad::Real;
use crate::sim::geometry::LakeGeometry;

pub const SECONDS_PER_DAY: f64 = 86_400.0;
pub const KELVIN: f64 = 273.15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhysicsConstants {
    /// Specific heat of water, J/(kg °C).
    pub c_w: f64,
    pub albedo_sw: f64,
    pub albedo_lw: f64,
    /// Emissivity of the water surface.
    pub emissivity: f64,
    /// Stefan-Boltzmann constant, W/(m² K⁴).
    pub stefan_boltzmann: f64,
    /// Latent heat of vaporization, J/kg.
    pub latent_heat: f64,
    /// Specific heat of air, J/(kg K).
    pub c_air: f64,
    /// Molecular mass ratio water / dry air.
    pub omega: f64,
    /// Relative humidity scaling factor.
    pub rh_scale: f64,
    /// Bulk transfer coefficient for latent heat.
    pub c_e: f64,
    /// Bulk transfer coefficient for sensible heat.
    pub c_h: f64,
    /// hPa
    pub default_pressure: f64,
}

impl Default for PhysicsConstants {
    fn default() -> Self {
        Self {
            c_w: 4186.0,
            albedo_sw: 0.07,
            albedo_lw: 0.03,
            emissivity: 0.97,
            stefan_boltzmann: 5.6697e-8,
            latent_heat: 2.453e6,
            c_air: 1005.0,
            omega: 0.622,
            rh_scale: 1.0,
            c_e: 1.3e-3,
            c_h: 1.3e-3,
            default_pressure: 1013.0,
        }
    }
}

impl PhysicsConstants {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("c_w", self.c_w),
            ("emissivity", self.emissivity),
            ("stefan_boltzmann", self.stefan_boltzmann),
            ("latent_heat", self.latent_heat),
            ("c_air", self.c_air),
            ("omega", self.omega),
            ("rh_scale", self.rh_scale),
            ("c_e", self.c_e),
            ("c_h", self.c_h),
            ("default_pressure", self.default_pressure),
        ];
        if let Some((name, v)) = positive.iter().find(|(_, v)| !(*v > 0.0)) {
            return Err(Error::Config(format!("physics constant {name} = {v} must be positive")));
        }
        for (name, a) in [("albedo_sw", self.albedo_sw), ("albedo_lw", self.albedo_lw)] {
            if !(a > 0.0 && a < 1.0) {
                return Err(Error::Config(format!("{name} = {a} must lie in (0, 1)")));
            }
        }
        Ok(())
    }
}

/// Freshwater density, kg/m³, peaking at 1000 near 3.9863 °C.
pub fn density<R: Real>(t: R) -> R {
    let num = (t + 288.9414) * (t - 3.9863).powi(2);
    let den = (t + 68.12963) * 508929.2;
    (num / den) * -1000.0 + 1000.0
}

pub const DENSITY_RANGE: (f64, f64) = (-5.0, 45.0);

pub fn water_density(t: f64) -> Result<f64> {
    if !(DENSITY_RANGE.0..=DENSITY_RANGE.1).contains(&t) {
        return Err(Error::OutOfRange(format!(
            "water temperature {t} °C outside [{}, {}]",
            DENSITY_RANGE.0, DENSITY_RANGE.1
        )));
    }
    Ok(density(t))
}

/// Heat content of one layer, J: `c_w * a * y * rho(y) * dz`.
pub fn layer_energy(t: f64, area: f64, thickness: f64, c_w: f64) -> f64 {
    c_w * area * t * density(t) * thickness
}

/// Lake heat content `U = c_w Σ a_d y_d ρ(y_d) dz`, J.
pub fn thermal_energy(profile: &[f64], geometry: &LakeGeometry, consts: &PhysicsConstants) -> Result<f64> {
    if profile.len() != geometry.n_layers() {
        return Err(Error::Shape(format!(
            "profile has {} layers, geometry {}",
            profile.len(),
            geometry.n_layers()
        )));
    }
    for &t in profile {
        water_density(t)?;
    }
    Ok(heat_content(profile, geometry, consts.c_w))
}

pub(crate) fn heat_content(profile: &[f64], geometry: &LakeGeometry, c_w: f64) -> f64 {
    profile
        .iter()
        .zip(geometry.areas())
        .map(|(&t, &a)| layer_energy(t, a, geometry.layer_thickness(), c_w))
        .sum()
}

/// Saturation vapor pressure over water, hPa.
pub fn svp<R: Real>(t: R) -> R {
    let exponent = (t + KELVIN).recip() * -2322.37885 + 9.28603523;
    (exponent * std::f64::consts::LN_10).exp()
}

pub fn saturation_vapor_pressure(t: f64) -> Result<f64> {
    if !(t >= -30.0) {
        return Err(Error::OutOfRange(format!("temperature {t} °C below -30")));
    }
    Ok(svp(t))
}

/// Actual vapor pressure `S_RH * rh / 100 * e_s(t)`, hPa, with `rh` in %.
pub fn vapor_pressure(t: f64, rh: f64, consts: &PhysicsConstants) -> Result<f64> {
    if !(0.0..=100.0).contains(&rh) {
        return Err(Error::OutOfRange(format!("relative humidity {rh} outside [0, 100]")));
    }
    Ok(consts.rh_scale * rh / 100.0 * saturation_vapor_pressure(t)?)
}

/// Moist air density, kg/m³, from air temperature (°C), vapor pressure and
/// pressure (hPa). The mixing ratio comes from the drivers alone, so the
/// vapor pressure passed here is evaluated at the air temperature.
pub fn air_density(t_air: f64, e_a: f64, pressure: f64, consts: &PhysicsConstants) -> f64 {
    let r = consts.omega * e_a / (pressure - e_a);
    0.348 * (1.0 + r) / (1.0 + 1.61 * r) * pressure / (t_air + KELVIN)
}

fn check_flux_inputs(wind: f64, pressure: f64) -> Result<()> {
    if !(wind >= 0.0) {
        return Err(Error::OutOfRange(format!("wind {wind} must be non-negative")));
    }
    if !(pressure > 0.0) {
        return Err(Error::OutOfRange(format!("pressure {pressure} must be positive")));
    }
    Ok(())
}

/// Latent (evaporative) heat flux, W/m², positive when the lake loses heat.
pub fn latent_heat_flux(
    t_surface: f64,
    t_air: f64,
    rh: f64,
    wind: f64,
    pressure: f64,
    consts: &PhysicsConstants,
) -> Result<f64> {
    check_flux_inputs(wind, pressure)?;
    let e_s = saturation_vapor_pressure(t_surface)?;
    let e_a = vapor_pressure(t_surface, rh, consts)?;
    let rho_a = air_density(t_air, vapor_pressure(t_air, rh, consts)?, pressure, consts);
    Ok(rho_a * consts.c_e * consts.latent_heat * wind * consts.omega / pressure * (e_s - e_a))
}

/// Sensible heat flux, W/m², positive when the lake loses heat.
pub fn sensible_heat_flux(
    t_surface: f64,
    t_air: f64,
    wind: f64,
    pressure: f64,
    rh: f64,
    consts: &PhysicsConstants,
) -> Result<f64> {
    check_flux_inputs(wind, pressure)?;
    let e_a = vapor_pressure(t_air, rh, consts)?;
    let rho_a = air_density(t_air, e_a, pressure, consts);
    Ok(rho_a * consts.c_air * consts.c_h * wind * (t_surface - t_air))
}

/// Long-wave emission of the water surface, W/m².
pub fn back_radiation(t_surface: f64, consts: &PhysicsConstants) -> f64 {
    back_radiation_of(t_surface, consts)
}

fn back_radiation_of<R: Real>(t_surface: R, consts: &PhysicsConstants) -> R {
    (t_surface + KELVIN).powi(4) * (consts.emissivity * consts.stefan_boltzmann)
}

/// Driver-only part of one day's surface exchange. Outgoing terms depend on
/// the surface temperature and are evaluated through [`SurfaceForcing::outgoing`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceForcing {
    /// R_SW (1 - α_SW), W/m².
    pub shortwave_absorbed: f64,
    /// R_LWin (1 - α_LW), W/m².
    pub longwave_absorbed: f64,
    /// E = latent_coeff * e_s(T_s), W/m² per hPa of saturation pressure.
    pub latent_coeff: f64,
    /// H = sensible_coeff * (T_s - T_a), W/m² per K.
    pub sensible_coeff: f64,
    pub air_temp: f64,
}

impl SurfaceForcing {
    pub fn from_day(day: &DailyMeteo, consts: &PhysicsConstants) -> Result<Self> {
        check_flux_inputs(day.wind, day.pressure)?;
        let e_air = vapor_pressure(day.air_temp, day.rel_humidity, consts)?;
        let rho_a = air_density(day.air_temp, e_air, day.pressure, consts);
        let deficit = 1.0 - consts.rh_scale * day.rel_humidity / 100.0;
        Ok(Self {
            shortwave_absorbed: day.shortwave * (1.0 - consts.albedo_sw),
            longwave_absorbed: day.longwave * (1.0 - consts.albedo_lw),
            latent_coeff: rho_a * consts.c_e * consts.latent_heat * day.wind * consts.omega / day.pressure * deficit,
            sensible_coeff: rho_a * consts.c_air * consts.c_h * day.wind,
            air_temp: day.air_temp,
        })
    }

    pub fn series(drivers: &MeteoSeries, consts: &PhysicsConstants) -> Result<Vec<Self>> {
        drivers.days().iter().map(|d| Self::from_day(d, consts)).collect()
    }

    /// F_in, W/m².
    pub fn incoming(&self) -> f64 {
        self.shortwave_absorbed + self.longwave_absorbed
    }

    pub fn latent<R: Real>(&self, t_surface: R) -> R {
        svp(t_surface) * self.latent_coeff
    }

    pub fn sensible<R: Real>(&self, t_surface: R) -> R {
        (t_surface - self.air_temp) * self.sensible_coeff
    }

    /// F_out = R_LWout + E + H, W/m².
    pub fn outgoing<R: Real>(&self, t_surface: R, consts: &PhysicsConstants) -> R {
        back_radiation_of(t_surface, consts) + self.latent(t_surface) + self.sensible(t_surface)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailyBudget {
    /// Lake heat content at the start of the day, J.
    pub thermal_energy: f64,
    pub f_in: f64,
    pub f_out: f64,
    pub shortwave_absorbed: f64,
    pub longwave_absorbed: f64,
    pub longwave_out: f64,
    pub latent: f64,
    pub sensible: f64,
    /// W/m²; absent on the last day of a field.
    pub residual: Option<f64>,
    pub ice_free: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyBudget {
    pub days: Vec<DailyBudget>,
}

impl EnergyBudget {
    pub fn residuals(&self) -> Vec<f64> {
        self.days.iter().filter_map(|d| d.residual).collect()
    }

    /// Ice-free flags aligned with [`EnergyBudget::residuals`].
    pub fn residual_mask(&self) -> Vec<bool> {
        self.days
            .iter()
            .filter(|d| d.residual.is_some())
            .map(|d| d.ice_free)
            .collect()
    }

    /// Largest |residual| over ice-free days.
    pub fn max_abs_ice_free_residual(&self) -> f64 {
        self.days
            .iter()
            .filter(|d| d.ice_free)
            .filter_map(|d| d.residual)
            .fold(0.0, |m, r| m.max(r.abs()))
    }
}

impl EnergyBudget {
    /// One row per day; the residual is empty on the final day.
    pub fn to_csv(&self, dates: &[NaiveDate]) -> Result<String> {
        if dates.len() != self.days.len() {
            return Err(Error::Shape(format!("{} dates for {} budget days", dates.len(), self.days.len())));
        }
        let mut out = String::from(
            "date,thermal_energy_j,f_in,f_out,shortwave_absorbed,longwave_absorbed,longwave_out,latent,sensible,residual,ice_free\n",
        );
        for (date, d) in dates.iter().zip(&self.days) {
            let residual = d.residual.map(|r| r.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{date},{},{},{},{},{},{},{},{},{residual},{}\n",
                d.thermal_energy,
                d.f_in,
                d.f_out,
                d.shortwave_absorbed,
                d.longwave_absorbed,
                d.longwave_out,
                d.latent,
                d.sensible,
                u8::from(d.ice_free)
            ));
        }
        Ok(out)
    }
}

pub fn save_budget(budget: &EnergyBudget, dates: &[NaiveDate], path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), budget.to_csv(dates)?.as_bytes())
}

fn check_field(field: &TemperatureField, drivers: &MeteoSeries, geometry: &LakeGeometry) -> Result<()> {
    if field.n_depths() != geometry.n_layers() {
        return Err(Error::Shape(format!(
            "field has {} depths, geometry {} layers",
            field.n_depths(),
            geometry.n_layers()
        )));
    }
    if field.n_days() > drivers.len() {
        return Err(Error::Shape(format!(
            "field spans {} days, drivers only {}",
            field.n_days(),
            drivers.len()
        )));
    }
    Ok(())
}

/// Daily energy balance mismatch on day `t`, W/m². Needs day `t + 1`.
pub fn energy_balance_residual(
    field: &TemperatureField,
    drivers: &MeteoSeries,
    geometry: &LakeGeometry,
    t: usize,
    consts: &PhysicsConstants,
) -> Result<f64> {
    check_field(field, drivers, geometry)?;
    if t + 1 >= field.n_days() {
        return Err(Error::OutOfRange(format!(
            "residual on day {t} needs day {} but field ends at {}",
            t + 1,
            field.n_days()
        )));
    }
    let u0 = thermal_energy(&field.profile(t), geometry, consts)?;
    let u1 = thermal_energy(&field.profile(t + 1), geometry, consts)?;
    let forcing = SurfaceForcing::from_day(drivers.get(t), consts)?;
    let ts = field.get(0, t);
    Ok(residual_from(u0, u1, &forcing, ts, geometry, consts))
}

fn residual_from(
    u0: f64,
    u1: f64,
    forcing: &SurfaceForcing,
    t_surface: f64,
    geometry: &LakeGeometry,
    consts: &PhysicsConstants,
) -> f64 {
    let du = (u1 - u0) / (geometry.surface_area() * SECONDS_PER_DAY);
    du - (forcing.incoming() - forcing.outgoing(t_surface, consts))
}

/// Per-day budget terms for a whole field. Drivers are aligned by index
/// with the field's days.
pub fn energy_budget(
    field: &TemperatureField,
    drivers: &MeteoSeries,
    geometry: &LakeGeometry,
    consts: &PhysicsConstants,
) -> Result<EnergyBudget> {
    check_field(field, drivers, geometry)?;
    let n = field.n_days();
    let energies = (0..n)
        .map(|t| thermal_energy(&field.profile(t), geometry, consts))
        .collect::<Result<Vec<_>>>()?;
    let mut days = Vec::with_capacity(n);
    for t in 0..n {
        let day = drivers.get(t);
        let forcing = SurfaceForcing::from_day(day, consts)?;
        let ts = field.get(0, t);
        saturation_vapor_pressure(ts)?;
        let longwave_out = back_radiation(ts, consts);
        let latent = forcing.latent(ts);
        let sensible = forcing.sensible(ts);
        let residual = (t + 1 < n).then(|| residual_from(energies[t], energies[t + 1], &forcing, ts, geometry, consts));
        days.push(DailyBudget {
            thermal_energy: energies[t],
            f_in: forcing.incoming(),
            f_out: longwave_out + latent + sensible,
            shortwave_absorbed: forcing.shortwave_absorbed,
            longwave_absorbed: forcing.longwave_absorbed,
            longwave_out,
            latent,
            sensible,
            residual,
            ice_free: !day.frozen,
        });
    }
    Ok(EnergyBudget { days })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EcLoss {
    /// Mean over ice-free days of `relu(|residual| - tau)`, W/m².
    pub value: f64,
    pub ice_free_days: usize,
    /// Set when no ice-free day was available; `value` is then 0.
    pub no_ice_free_days: bool,
}

pub fn ec_loss(residuals: &[f64], ice_free: &[bool], tau: f64) -> Result<EcLoss> {
    if residuals.len() != ice_free.len() {
        return Err(Error::Shape(format!(
            "{} residuals vs {} mask entries",
            residuals.len(),
            ice_free.len()
        )));
    }
    let penalties: Vec<f64> = residuals
        .iter()
        .zip(ice_free)
        .filter(|(_, &free)| free)
        .map(|(&r, _)| (r.abs() - tau).relu())
        .collect();
    if penalties.is_empty() {
        log::warn!("energy-conservation loss over zero ice-free days");
        return Ok(EcLoss {
            value: 0.0,
            ice_free_days: 0,
            no_ice_free_days: true,
        });
    }
    Ok(EcLoss {
        value: penalties.iter().sum::<f64>() / penalties.len() as f64,
        ice_free_days: penalties.len(),
        no_ice_free_days: false,
    })
}
