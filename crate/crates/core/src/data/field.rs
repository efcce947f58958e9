use std::path::Path;

use chrono::NaiveDate;

use super::csvio::{self, CsvTable};
use crate::error::{Error, Result};

/// Dense temperatures, °C, indexed `[depth][day]` (row-major by depth).
#[derive(Debug, Clone, PartialEq)]
pub struct TemperatureField {
    depths: Vec<f64>,
    dates: Vec<NaiveDate>,
    values: Vec<f64>,
}

impl TemperatureField {
    pub fn new(depths: Vec<f64>, dates: Vec<NaiveDate>, values: Vec<f64>) -> Result<Self> {
        if values.len() != depths.len() * dates.len() {
            return Err(Error::Shape(format!(
                "field of {} depths x {} days needs {} values, got {}",
                depths.len(),
                dates.len(),
                depths.len() * dates.len(),
                values.len()
            )));
        }
        Ok(Self {
            depths,
            dates,
            values,
        })
    }

    pub fn filled(depths: Vec<f64>, dates: Vec<NaiveDate>, value: f64) -> Self {
        let n = depths.len() * dates.len();
        Self {
            depths,
            dates,
            values: vec![value; n],
        }
    }

    pub fn n_depths(&self) -> usize {
        self.depths.len()
    }

    pub fn n_days(&self) -> usize {
        self.dates.len()
    }

    pub fn depths(&self) -> &[f64] {
        &self.depths
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn get(&self, depth: usize, day: usize) -> f64 {
        self.values[depth * self.dates.len() + day]
    }

    pub fn set(&mut self, depth: usize, day: usize, value: f64) {
        let n = self.dates.len();
        self.values[depth * n + day] = value;
    }

    /// Profile (all depths) on one day.
    pub fn profile(&self, day: usize) -> Vec<f64> {
        (0..self.n_depths()).map(|d| self.get(d, day)).collect()
    }

    pub fn set_profile(&mut self, day: usize, profile: &[f64]) {
        for (d, &v) in profile.iter().enumerate() {
            self.set(d, day, v);
        }
    }

    /// Days `[start, end)` as a new field.
    pub fn window(&self, start: usize, end: usize) -> TemperatureField {
        let n = self.n_days();
        let mut values = Vec::with_capacity(self.n_depths() * (end - start));
        for d in 0..self.n_depths() {
            values.extend_from_slice(&self.values[d * n + start..d * n + end]);
        }
        TemperatureField {
            depths: self.depths.clone(),
            dates: self.dates[start..end].to_vec(),
            values,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

pub fn depth_label(depth: f64) -> String {
    format!("d{depth:.1}")
}

/// Writes `date,d0.0,d0.5,...`: one row per day.
pub fn save_field(field: &TemperatureField, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::from("date");
    for &z in field.depths() {
        out.push(',');
        out.push_str(&depth_label(z));
    }
    out.push('\n');
    for (t, date) in field.dates().iter().enumerate() {
        out.push_str(&date.to_string());
        for d in 0..field.n_depths() {
            out.push(',');
            out.push_str(&field.get(d, t).to_string());
        }
        out.push('\n');
    }
    csvio::write_atomic(path.as_ref(), out.as_bytes())
}

pub fn load_field(path: impl AsRef<Path>) -> Result<TemperatureField> {
    let path = path.as_ref();
    let table = CsvTable::read(path)?;
    table.require("date")?;
    let mut depth_cols = Vec::new();
    for (i, name) in table.columns().iter().enumerate() {
        if name == "date" {
            continue;
        }
        let z: f64 = name
            .strip_prefix('d')
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::InvalidInput(format!("{}: bad depth column '{name}'", path.display())))?;
        depth_cols.push((i, z));
    }
    if depth_cols.is_empty() {
        return Err(Error::MissingColumn("d0.0".into()));
    }
    let n_days = table.len();
    let mut dates = Vec::with_capacity(n_days);
    let mut values = vec![0.0; depth_cols.len() * n_days];
    for row in 0..n_days {
        dates.push(table.date(row, "date")?);
        for (d, &(idx, _)) in depth_cols.iter().enumerate() {
            let name = &table.columns()[idx];
            values[d * n_days + row] = table.parse_f64(row, name, table.raw_at(row, idx)?)?;
        }
    }
    for (i, w) in dates.windows(2).enumerate() {
        if w[0].succ_opt() != Some(w[1]) {
            return Err(Error::NonConsecutiveDates(format!(
                "{}: {} follows {} at row {}",
                path.display(),
                w[1],
                w[0],
                i + 3
            )));
        }
    }
    TemperatureField::new(depth_cols.into_iter().map(|(_, z)| z).collect(), dates, values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_is_exact() {
        let dates: Vec<_> = (0..3)
            .map(|i| NaiveDate::from_ymd_opt(2001, 12, 30).unwrap() + chrono::Days::new(i))
            .collect();
        let values = vec![0.1, 1.0 / 3.0, 25.123456789012345, -0.0, 4.0e-300, 7.77];
        let field = TemperatureField::new(vec![0.0, 0.5], dates, values).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("field.csv");
        save_field(&field, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("date,d0.0,d0.5\n2001-12-30,"));
        assert_eq!(load_field(&path).unwrap(), field);
    }
}
