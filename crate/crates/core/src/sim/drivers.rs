//! Seeded synthetic meteorology: seasonal sinusoids plus persistent weather noise.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, Months, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{DailyMeteo, MeteoSeries, DEFAULT_PRESSURE};
use crate::error::{Error, Result};

const STEFAN_BOLTZMANN: f64 = 5.6697e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Climate {
    /// Seasonal air temperature -10..25 °C with an ice-covered winter.
    Temperate,
    /// Seasonal air temperature 12..33 °C, never frozen.
    Warm,
}

impl fmt::Display for Climate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Climate::Temperate => "temperate",
            Climate::Warm => "warm",
        })
    }
}

impl FromStr for Climate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "temperate" => Ok(Climate::Temperate),
            "warm" => Ok(Climate::Warm),
            other => Err(Error::InvalidInput(format!("unknown climate '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClimateParams {
    pub air_min: f64,
    pub air_max: f64,
    /// Daily mean clear-sky shortwave at the winter and summer solstice, W/m².
    pub shortwave_min: f64,
    pub shortwave_max: f64,
    /// The lake is frozen while the seasonal air temperature is below this, °C.
    pub freeze_below: Option<f64>,
}

impl Climate {
    pub fn params(self) -> ClimateParams {
        match self {
            Climate::Temperate => ClimateParams {
                air_min: -10.0,
                air_max: 25.0,
                shortwave_min: 80.0,
                shortwave_max: 330.0,
                freeze_below: Some(3.0),
            },
            Climate::Warm => ClimateParams {
                air_min: 12.0,
                air_max: 33.0,
                shortwave_min: 160.0,
                shortwave_max: 290.0,
                freeze_below: None,
            },
        }
    }
}

pub fn default_start() -> NaiveDate {
    NaiveDate::from_ymd_opt(1990, 1, 1).expect("valid date")
}

/// `years` calendar years of drivers starting on 1990-01-01.
pub fn synth_drivers(climate: Climate, years: u32, seed: u64) -> Result<MeteoSeries> {
    synth_drivers_from(climate, default_start(), years, seed)
}

pub fn synth_drivers_from(climate: Climate, start: NaiveDate, years: u32, seed: u64) -> Result<MeteoSeries> {
    if years == 0 {
        return Err(Error::InvalidInput("synthetic drivers need at least one year".into()));
    }
    let end = start
        .checked_add_months(Months::new(12 * years))
        .ok_or_else(|| Error::InvalidInput("driver period overflows the calendar".into()))?;
    let n_days = (end - start).num_days() as usize;
    let p = climate.params();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");

    let air_mean = 0.5 * (p.air_min + p.air_max);
    let air_amp = 0.5 * (p.air_max - p.air_min);
    let sw_mean = 0.5 * (p.shortwave_min + p.shortwave_max);
    let sw_amp = 0.5 * (p.shortwave_max - p.shortwave_min);
    // coldest around mid-January, darkest at the winter solstice
    let seasonal_air = |doy: f64| air_mean - air_amp * (2.0 * PI * (doy - 15.0) / 365.25).cos();
    let seasonal_sw = |doy: f64| sw_mean - sw_amp * (2.0 * PI * (doy + 10.0) / 365.25).cos();

    let mut air_anomaly = 0.0;
    let mut cloud_state = 0.0;
    let mut days = Vec::with_capacity(n_days);
    for i in 0..n_days {
        let date = start + chrono::Days::new(i as u64);
        let doy = date.ordinal() as f64;
        air_anomaly = 0.75 * air_anomaly + 2.0 * unit.sample(&mut rng);
        cloud_state = 0.6 * cloud_state + 1.0 * unit.sample(&mut rng);
        let cloud = 1.0 / (1.0 + (-(cloud_state - 0.3f64)).exp());
        let air_temp = seasonal_air(doy) + air_anomaly;
        let shortwave = seasonal_sw(doy) * (1.0 - 0.65 * cloud);
        let emissivity = 0.70 + 0.22 * cloud;
        let longwave = emissivity * STEFAN_BOLTZMANN * (air_temp + 273.15).powi(4);
        let rel_humidity = (60.0 + 30.0 * cloud + 5.0 * unit.sample(&mut rng)).clamp(20.0, 100.0);
        let wind = (3.5 * (0.4 * unit.sample(&mut rng)).exp()).clamp(0.3, 11.0);
        let wet = cloud > 0.6 && rng.gen::<f64>() < 0.6;
        let rain = if wet { -0.6 * (1.0 - rng.gen::<f64>()).ln() } else { 0.0 };
        let frozen = p
            .freeze_below
            .is_some_and(|limit| seasonal_air(doy) < limit);
        let snowing = wet && air_temp < 0.0;
        days.push(DailyMeteo {
            date,
            shortwave,
            longwave,
            air_temp,
            rel_humidity,
            wind,
            rain: if snowing { 0.0 } else { rain },
            frozen,
            snowing,
            pressure: DEFAULT_PRESSURE,
        });
    }
    MeteoSeries::new(days)
}
