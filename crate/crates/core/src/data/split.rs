use std::ops::Range;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::meteo::MeteoSeries;
use crate::error::{Error, Result};

/// Half-open date range `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateRange {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DateRange {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Self {
        Self { start, end }
    }

    fn to_indices(self, drivers: &MeteoSeries) -> Result<Range<usize>> {
        let first = drivers
            .start_date()
            .ok_or_else(|| Error::InvalidInput("empty driver series".into()))?;
        let start = (self.start - first).num_days();
        let end = (self.end - first).num_days();
        if start < 0 || end as usize > drivers.len() || end <= start {
            return Err(Error::Config(format!(
                "window {}..{} not inside drivers {}..+{} days",
                self.start,
                self.end,
                first,
                drivers.len()
            )));
        }
        Ok(start as usize..end as usize)
    }
}

/// Interleaved design: training windows flanking one test window.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub train: Vec<DateRange>,
    pub test: DateRange,
}

/// Day-index form of a [`SplitConfig`] for a particular driver series.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimeSplit {
    pub train: Vec<Range<usize>>,
    pub test: Range<usize>,
}

impl TimeSplit {
    pub fn resolve(config: &SplitConfig, drivers: &MeteoSeries) -> Result<Self> {
        let train = config
            .train
            .iter()
            .map(|r| r.to_indices(drivers))
            .collect::<Result<Vec<_>>>()?;
        let test = config.test.to_indices(drivers)?;
        let all: Vec<&Range<usize>> = train.iter().chain(std::iter::once(&test)).collect();
        for (i, a) in all.iter().enumerate() {
            for b in &all[i + 1..] {
                if a.start < b.end && b.start < a.end {
                    return Err(Error::Config(format!("windows {a:?} and {b:?} overlap")));
                }
            }
        }
        Ok(Self { train, test })
    }

    pub fn is_train(&self, t: usize) -> bool {
        self.train.iter().any(|r| r.contains(&t))
    }

    pub fn train_days(&self) -> usize {
        self.train.iter().map(|r| r.len()).sum()
    }
}
