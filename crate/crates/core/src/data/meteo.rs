use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::csvio::{self, CsvTable};
use crate::error::{Error, Result};

/// Air pressure used when the driver file has no pressure column, hPa.
pub const DEFAULT_PRESSURE: f64 = 1013.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailyMeteo {
    pub date: NaiveDate,
    /// Incoming short-wave radiation, W/m².
    pub shortwave: f64,
    /// Incoming long-wave radiation, W/m².
    pub longwave: f64,
    /// °C
    pub air_temp: f64,
    /// %
    pub rel_humidity: f64,
    /// At 10 m, m/s.
    pub wind: f64,
    /// cm
    pub rain: f64,
    pub frozen: bool,
    pub snowing: bool,
    /// hPa
    pub pressure: f64,
}

/// Daily meteorological drivers on consecutive dates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeteoSeries {
    days: Vec<DailyMeteo>,
}

/// Driver columns that can be used as model features.
pub const DRIVER_COLUMNS: [&str; 8] = [
    "shortwave",
    "longwave",
    "air_temp",
    "rel_humidity",
    "wind",
    "rain",
    "frozen",
    "snowing",
];

impl MeteoSeries {
    pub fn new(days: Vec<DailyMeteo>) -> Result<Self> {
        for (i, w) in days.windows(2).enumerate() {
            if w[0].date.succ_opt() != Some(w[1].date) {
                return Err(Error::NonConsecutiveDates(format!(
                    "{} follows {} at row {}",
                    w[1].date,
                    w[0].date,
                    i + 2
                )));
            }
        }
        for (i, d) in days.iter().enumerate() {
            if !(0.0..=100.0).contains(&d.rel_humidity) {
                return Err(Error::OutOfRange(format!(
                    "relative humidity {} on day {i} outside [0, 100]",
                    d.rel_humidity
                )));
            }
            if !(d.wind >= 0.0) {
                return Err(Error::OutOfRange(format!("negative wind {} on day {i}", d.wind)));
            }
            if !(d.pressure > 0.0) {
                return Err(Error::OutOfRange(format!("pressure {} on day {i}", d.pressure)));
            }
        }
        Ok(Self { days })
    }

    pub fn days(&self) -> &[DailyMeteo] {
        &self.days
    }

    pub fn len(&self) -> usize {
        self.days.len()
    }

    pub fn is_empty(&self) -> bool {
        self.days.is_empty()
    }

    pub fn get(&self, t: usize) -> &DailyMeteo {
        &self.days[t]
    }

    pub fn dates(&self) -> Vec<NaiveDate> {
        self.days.iter().map(|d| d.date).collect()
    }

    pub fn start_date(&self) -> Option<NaiveDate> {
        self.days.first().map(|d| d.date)
    }

    /// Index of `date` in the series, if covered.
    pub fn index_of(&self, date: NaiveDate) -> Option<usize> {
        let start = self.start_date()?;
        let offset = (date - start).num_days();
        (offset >= 0 && (offset as usize) < self.days.len()).then_some(offset as usize)
    }

    /// `true` where the lake is ice-free (driver frozen flag unset).
    pub fn ice_free_mask(&self) -> Vec<bool> {
        self.days.iter().map(|d| !d.frozen).collect()
    }

    /// Values of a named driver column; booleans map to 0/1.
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let pick: fn(&DailyMeteo) -> f64 = match name {
            "shortwave" => |d| d.shortwave,
            "longwave" => |d| d.longwave,
            "air_temp" => |d| d.air_temp,
            "rel_humidity" => |d| d.rel_humidity,
            "wind" => |d| d.wind,
            "rain" => |d| d.rain,
            "frozen" => |d| d.frozen as u8 as f64,
            "snowing" => |d| d.snowing as u8 as f64,
            "pressure" => |d| d.pressure,
            _ => return None,
        };
        Some(self.days.iter().map(pick).collect())
    }

    /// Contiguous sub-series.
    pub fn window(&self, start: usize, end: usize) -> MeteoSeries {
        MeteoSeries {
            days: self.days[start..end].to_vec(),
        }
    }
}

const REQUIRED: [&str; 8] = [
    "date",
    "shortwave",
    "longwave",
    "air_temp",
    "rel_humidity",
    "wind",
    "frozen",
    "snowing",
];

/// Reads `date,shortwave,longwave,air_temp,rel_humidity,wind,rain,frozen,snowing[,pressure]`.
///
/// `rain` may be absent (filled with 0); `pressure` defaults to 1013 hPa.
pub fn load_drivers(path: impl AsRef<Path>) -> Result<MeteoSeries> {
    let path = path.as_ref();
    let table = CsvTable::read(path)?;
    for col in REQUIRED {
        table.require(col)?;
    }
    let mut days = Vec::with_capacity(table.len());
    for row in 0..table.len() {
        let num = |c: &str| table.f64(row, c);
        days.push(DailyMeteo {
            date: table.date(row, "date")?,
            shortwave: num("shortwave")?,
            longwave: num("longwave")?,
            air_temp: num("air_temp")?,
            rel_humidity: num("rel_humidity")?,
            wind: num("wind")?,
            rain: table.f64_or(row, "rain", 0.0)?,
            frozen: table.flag(row, "frozen")?,
            snowing: table.flag(row, "snowing")?,
            pressure: table.f64_or(row, "pressure", DEFAULT_PRESSURE)?,
        });
    }
    MeteoSeries::new(days).map_err(|e| match e {
        Error::NonConsecutiveDates(m) => {
            Error::NonConsecutiveDates(format!("{}: {m}", path.display()))
        }
        other => other,
    })
}

/// Writes the driver CSV, always including the pressure column.
pub fn save_drivers(series: &MeteoSeries, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::from(
        "date,shortwave,longwave,air_temp,rel_humidity,wind,rain,frozen,snowing,pressure\n",
    );
    for d in &series.days {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            d.date,
            d.shortwave,
            d.longwave,
            d.air_temp,
            d.rel_humidity,
            d.wind,
            d.rain,
            d.frozen as u8,
            d.snowing as u8,
            d.pressure
        ));
    }
    csvio::write_atomic(path.as_ref(), out.as_bytes())
}
