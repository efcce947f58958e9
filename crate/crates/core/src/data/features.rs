//! Standardized per-depth input sequences for the global model.
//!
//! Every depth shares one parameter set, so each sequence carries the
//! surface drivers of the day plus its own depth and a day-of-year encoding.

use std::f64::consts::PI;
use std::ops::Range;

use chrono::Datelike;
use serde::{Deserialize, Serialize};

use super::meteo::{MeteoSeries, DRIVER_COLUMNS};
use crate::error::{Error, Result};
use crate::sim::geometry::LakeGeometry;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DayOfYear {
    /// `sin(2π doy / 366)` and `cos(2π doy / 366)`.
    Periodic,
    /// The day number 1..=366 itself.
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub drivers: Vec<String>,
    pub day_of_year: DayOfYear,
}

impl Default for FeatureSpec {
    fn default() -> Self {
        Self {
            drivers: [
                "shortwave",
                "longwave",
                "air_temp",
                "rel_humidity",
                "wind",
                "frozen",
                "snowing",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect(),
            day_of_year: DayOfYear::Periodic,
        }
    }
}

impl FeatureSpec {
    fn raw_names(&self) -> Vec<String> {
        let mut names = self.drivers.clone();
        names.push("depth".into());
        match self.day_of_year {
            DayOfYear::Periodic => {
                names.push("doy_sin".into());
                names.push("doy_cos".into());
            }
            DayOfYear::Raw => names.push("doy".into()),
        }
        names
    }
}

/// Standardization statistics, fixed on the training window and reused
/// verbatim for every other period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub spec: FeatureSpec,
    /// Retained features, in input order.
    pub names: Vec<String>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Zero-variance features removed from the input.
    pub dropped: Vec<String>,
}

impl NormStats {
    pub fn input_size(&self) -> usize {
        self.names.len()
    }
}

/// Features laid out `[day][depth][feature]`, so one day's batch over all
/// depths is a contiguous `n_depths x n_features` block.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub n_days: usize,
    pub n_depths: usize,
    pub stats: NormStats,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn n_features(&self) -> usize {
        self.stats.input_size()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Feature vector for one depth on one day.
    pub fn at(&self, day: usize, depth: usize) -> &[f64] {
        let f = self.n_features();
        let start = (day * self.n_depths + depth) * f;
        &self.data[start..start + f]
    }

    /// `[T x n_features]` sequence for one depth.
    pub fn sequence(&self, depth: usize) -> Vec<f64> {
        (0..self.n_days)
            .flat_map(|t| self.at(t, depth).iter().copied())
            .collect()
    }

    /// Rows `t * n_depths + d` for days `[start, end)`.
    pub fn days(&self, start: usize, end: usize) -> &[f64] {
        let block = self.n_depths * self.n_features();
        &self.data[start * block..end * block]
    }
}

pub fn day_of_year_encoding(doy: u32) -> (f64, f64) {
    let angle = 2.0 * PI * doy as f64 / 366.0;
    (angle.sin(), angle.cos())
}

fn raw_features(drivers: &MeteoSeries, geometry: &LakeGeometry, spec: &FeatureSpec) -> Result<Vec<Vec<f64>>> {
    let n_days = drivers.len();
    let n_depths = geometry.n_layers();
    let mut per_column: Vec<Vec<f64>> = Vec::new();
    for name in &spec.drivers {
        let col = drivers.column(name).ok_or_else(|| {
            Error::Config(format!(
                "unknown driver feature '{name}' (known: {})",
                DRIVER_COLUMNS.join(", ")
            ))
        })?;
        per_column.push(expand_days(&col, n_depths));
    }
    let depths = geometry.depths();
    per_column.push((0..n_days).flat_map(|_| depths.iter().copied()).collect());
    let doys: Vec<u32> = drivers.days().iter().map(|d| d.date.ordinal()).collect();
    match spec.day_of_year {
        DayOfYear::Periodic => {
            let (s, c): (Vec<f64>, Vec<f64>) = doys.iter().map(|&d| day_of_year_encoding(d)).unzip();
            per_column.push(expand_days(&s, n_depths));
            per_column.push(expand_days(&c, n_depths));
        }
        DayOfYear::Raw => {
            let raw: Vec<f64> = doys.iter().map(|&d| d as f64).collect();
            per_column.push(expand_days(&raw, n_depths));
        }
    }
    Ok(per_column)
}

fn expand_days(per_day: &[f64], n_depths: usize) -> Vec<f64> {
    per_day
        .iter()
        .flat_map(|&v| std::iter::repeat_n(v, n_depths))
        .collect()
}

/// Builds standardized features for every depth and day of `drivers`.
///
/// With `stats = None`, statistics are computed over the days in
/// `stats_days` (the training window) and zero-variance features are
/// dropped; otherwise the given statistics are applied unchanged.
pub fn build_features(
    drivers: &MeteoSeries,
    geometry: &LakeGeometry,
    spec: &FeatureSpec,
    stats: Option<&NormStats>,
    stats_days: &[Range<usize>],
) -> Result<FeatureMatrix> {
    if drivers.is_empty() {
        return Err(Error::InvalidInput("cannot build features from empty drivers".into()));
    }
    let n_depths = geometry.n_layers();
    let n_days = drivers.len();
    let names = spec.raw_names();
    let stats = match stats {
        Some(s) => {
            if &s.spec != spec {
                return Err(Error::Config("normalization stats were built for a different feature spec".into()));
            }
            s.clone()
        }
        None => {
            let columns = raw_features(drivers, geometry, spec)?;
            compute_stats(spec, &names, &columns, n_depths, stats_days)?
        }
    };
    let columns = raw_features(drivers, geometry, spec)?;
    let keep: Vec<usize> = stats
        .names
        .iter()
        .map(|n| names.iter().position(|m| m == n).expect("retained name"))
        .collect();
    let f = keep.len();
    let mut data = vec![0.0; n_days * n_depths * f];
    for row in 0..n_days * n_depths {
        for (j, &c) in keep.iter().enumerate() {
            data[row * f + j] = (columns[c][row] - stats.mean[j]) / stats.std[j];
        }
    }
    Ok(FeatureMatrix {
        n_days,
        n_depths,
        stats,
        data,
    })
}

fn compute_stats(
    spec: &FeatureSpec,
    names: &[String],
    columns: &[Vec<f64>],
    n_depths: usize,
    stats_days: &[Range<usize>],
) -> Result<NormStats> {
    let rows: Vec<usize> = stats_days
        .iter()
        .flat_map(|r| r.clone())
        .flat_map(|t| (0..n_depths).map(move |d| t * n_depths + d))
        .collect();
    if rows.is_empty() {
        return Err(Error::InvalidInput("normalization window is empty".into()));
    }
    let n = rows.len() as f64;
    let mut stats = NormStats {
        spec: spec.clone(),
        names: Vec::new(),
        mean: Vec::new(),
        std: Vec::new(),
        dropped: Vec::new(),
    };
    for (name, col) in names.iter().zip(columns) {
        let mean = rows.iter().map(|&r| col[r]).sum::<f64>() / n;
        let var = rows.iter().map(|&r| (col[r] - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        if !(std > 1e-12 * mean.abs().max(1.0)) {
            log::warn!("dropping zero-variance feature '{name}'");
            stats.dropped.push(name.clone());
            continue;
        }
        stats.names.push(name.clone());
        stats.mean.push(mean);
        stats.std.push(std);
    }
    if stats.names.is_empty() {
        return Err(Error::InvalidInput("every feature has zero variance".into()));
    }
    Ok(stats)
}
