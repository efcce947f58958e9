use std::collections::BTreeMap;
use std::path::Path;

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::csvio::{self, CsvTable};
use super::field::TemperatureField;
use crate::error::{Error, Result};
use crate::sim::geometry::LAYER_THICKNESS;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub depth: usize,
    pub time: usize,
    /// °C
    pub temp: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Real,
    Synthetic,
}

/// Sparse temperature observations on the (depth, day) grid, kept sorted by
/// `(time, depth)` with at most one value per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    obs: Vec<Observation>,
    pub source: Source,
}

impl ObservationSet {
    pub fn new(mut obs: Vec<Observation>, source: Source) -> Result<Self> {
        obs.sort_by_key(|o| (o.time, o.depth));
        for w in obs.windows(2) {
            if (w[0].time, w[0].depth) == (w[1].time, w[1].depth) {
                return Err(Error::InvalidInput(format!(
                    "duplicate observation at depth {} day {}",
                    w[0].depth, w[0].time
                )));
            }
        }
        if let Some(o) = obs.iter().find(|o| !o.temp.is_finite()) {
            return Err(Error::NonFinite(format!(
                "observation at depth {} day {}",
                o.depth, o.time
            )));
        }
        Ok(Self { obs, source })
    }

    pub fn empty(source: Source) -> Self {
        Self {
            obs: Vec::new(),
            source,
        }
    }

    pub fn as_slice(&self) -> &[Observation] {
        &self.obs
    }

    pub fn iter(&self) -> impl Iterator<Item = &Observation> {
        self.obs.iter()
    }

    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }

    /// Errors unless every observation lies inside an `n_depths x n_days` grid.
    pub fn check_bounds(&self, n_depths: usize, n_days: usize) -> Result<()> {
        match self.obs.iter().find(|o| o.depth >= n_depths || o.time >= n_days) {
            Some(o) => Err(Error::OutOfRange(format!(
                "observation at depth {} day {} outside {n_depths} x {n_days} grid",
                o.depth, o.time
            ))),
            None => Ok(()),
        }
    }

    pub fn filter(&self, keep: impl Fn(&Observation) -> bool) -> Self {
        Self {
            obs: self.obs.iter().copied().filter(|o| keep(o)).collect(),
            source: self.source,
        }
    }

    /// Observations with `start <= time < end`, re-indexed to start at 0.
    pub fn window(&self, start: usize, end: usize) -> Self {
        Self {
            obs: self
                .obs
                .iter()
                .filter(|o| o.time >= start && o.time < end)
                .map(|o| Observation {
                    time: o.time - start,
                    ..*o
                })
                .collect(),
            source: self.source,
        }
    }

    /// Every cell of a dense field.
    pub fn from_field(field: &TemperatureField, source: Source) -> Self {
        let mut obs = Vec::with_capacity(field.values().len());
        for t in 0..field.n_days() {
            for d in 0..field.n_depths() {
                obs.push(Observation {
                    depth: d,
                    time: t,
                    temp: field.get(d, t),
                });
            }
        }
        Self { obs, source }
    }

    /// Union of two sets over disjoint cells.
    pub fn merge(&self, other: &ObservationSet) -> Result<Self> {
        let mut all = self.obs.clone();
        all.extend_from_slice(&other.obs);
        Self::new(all, self.source)
    }
}

/// Keeps each eligible observation independently with probability `keep`.
///
/// Observations for which `eligible` is false (e.g. the test period) are
/// always retained. Deterministic per seed since the set is kept sorted.
pub fn sample_observations(
    obs: &ObservationSet,
    keep: f64,
    seed: u64,
    eligible: impl Fn(&Observation) -> bool,
) -> Result<ObservationSet> {
    if !(0.0..=1.0).contains(&keep) {
        return Err(Error::OutOfRange(format!("keep fraction {keep} outside [0, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kept = obs
        .iter()
        .copied()
        .filter(|o| {
            if !eligible(o) {
                return true;
            }
            rng.gen::<f64>() < keep
        })
        .collect();
    Ok(ObservationSet {
        obs: kept,
        source: obs.source,
    })
}

/// Reads `date,depth_m,temp_c`, mapping dates onto days counted from
/// `start` and depths onto the nearest 0.5 m layer. Repeated cells are
/// averaged.
pub fn load_observations(
    path: impl AsRef<Path>,
    start: NaiveDate,
    n_days: usize,
    n_depths: usize,
) -> Result<ObservationSet> {
    let path = path.as_ref();
    let table = CsvTable::read(path)?;
    for col in ["date", "depth_m", "temp_c"] {
        table.require(col)?;
    }
    let mut cells: BTreeMap<(usize, usize), (f64, usize)> = BTreeMap::new();
    for row in 0..table.len() {
        let date = table.date(row, "date")?;
        let depth = table.f64(row, "depth_m")?;
        let temp = table.f64(row, "temp_c")?;
        let offset = (date - start).num_days();
        if offset < 0 || offset as usize >= n_days {
            continue;
        }
        let layer = (depth / LAYER_THICKNESS).round();
        if depth < 0.0 || layer as usize >= n_depths {
            continue;
        }
        let entry = cells.entry((offset as usize, layer as usize)).or_insert((0.0, 0));
        entry.0 += temp;
        entry.1 += 1;
    }
    let obs = cells
        .into_iter()
        .map(|((time, depth), (sum, n))| Observation {
            depth,
            time,
            temp: sum / n as f64,
        })
        .collect();
    ObservationSet::new(obs, Source::Real)
}

pub fn save_observations(
    obs: &ObservationSet,
    start: NaiveDate,
    path: impl AsRef<Path>,
) -> Result<()> {
    let mut out = String::from("date,depth_m,temp_c\n");
    for o in obs.iter() {
        let date = start + chrono::Days::new(o.time as u64);
        out.push_str(&format!(
            "{date},{},{}\n",
            o.depth as f64 * LAYER_THICKNESS,
            o.temp
        ));
    }
    csvio::write_atomic(path.as_ref(), out.as_bytes())
}
