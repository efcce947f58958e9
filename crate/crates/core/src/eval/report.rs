use std::fmt;
use std::path::Path;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::data::csvio::{write_atomic, CsvTable};
use crate::data::{MeteoSeries, ObservationSet, TemperatureField};
use crate::error::{Error, Result};
use crate::physics::{energy_budget, PhysicsConstants};
use crate::sim::LakeGeometry;

/// Depths need more observations than this to get their own RMSE.
pub const MIN_DEPTH_OBS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Season {
    Spring,
    Summer,
    Fall,
    Winter,
}

impl Season {
    pub const ALL: [Season; 4] = [Season::Spring, Season::Summer, Season::Fall, Season::Winter];

    /// Calendar-month seasons: Mar–May, Jun–Aug, Sep–Nov, Dec–Feb.
    pub fn of(date: NaiveDate) -> Self {
        match date.month() {
            3..=5 => Season::Spring,
            6..=8 => Season::Summer,
            9..=11 => Season::Fall,
            _ => Season::Winter,
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Season {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Season::Spring => "spring",
            Season::Summer => "summer",
            Season::Fall => "fall",
            Season::Winter => "winter",
        })
    }
}

impl FromStr for Season {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Season::ALL
            .into_iter()
            .find(|x| x.to_string() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown season '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Strata {
    Overall,
    ByDepth,
    BySeason,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "lowercase")]
pub enum Stratum {
    Overall,
    /// Layer index.
    Depth(usize),
    Season(Season),
}

impl Stratum {
    /// Label used in long-format reports, e.g. `depth:4.5` or `season:summer`.
    pub fn label(&self, depths: &[f64]) -> String {
        match self {
            Stratum::Overall => "overall".into(),
            Stratum::Depth(d) => format!("depth:{}", depths.get(*d).copied().unwrap_or(f64::NAN)),
            Stratum::Season(s) => format!("season:{s}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StratumRmse {
    pub stratum: Stratum,
    /// `None` when the stratum is empty or below the depth threshold.
    pub rmse: Option<f64>,
    pub count: usize,
}

impl StratumRmse {
    pub fn excluded(&self) -> bool {
        self.rmse.is_none()
    }
}

fn check_coverage(pred: &TemperatureField, obs: &ObservationSet) -> Result<()> {
    obs.check_bounds(pred.n_depths(), pred.n_days())
}

/// RMSE of `pred` against `obs` per stratum. Observation times index the
/// field's days, whose dates decide the season.
pub fn rmse_strata(pred: &TemperatureField, obs: &ObservationSet, strata: Strata) -> Result<Vec<StratumRmse>> {
    check_coverage(pred, obs)?;
    let n_groups = match strata {
        Strata::Overall => 1,
        Strata::ByDepth => pred.n_depths(),
        Strata::BySeason => 4,
    };
    let mut sse = vec![0.0; n_groups];
    let mut count = vec![0usize; n_groups];
    for o in obs.iter() {
        let g = match strata {
            Strata::Overall => 0,
            Strata::ByDepth => o.depth,
            Strata::BySeason => Season::of(pred.dates()[o.time]).index(),
        };
        sse[g] += (pred.get(o.depth, o.time) - o.temp).powi(2);
        count[g] += 1;
    }
    Ok((0..n_groups)
        .map(|g| {
            let stratum = match strata {
                Strata::Overall => Stratum::Overall,
                Strata::ByDepth => Stratum::Depth(g),
                Strata::BySeason => Stratum::Season(Season::ALL[g]),
            };
            let enough = match strata {
                Strata::ByDepth => count[g] > MIN_DEPTH_OBS,
                _ => count[g] > 0,
            };
            StratumRmse {
                stratum,
                rmse: enough.then(|| (sse[g] / count[g] as f64).sqrt()),
                count: count[g],
            }
        })
        .collect())
}

/// Mean |daily energy residual| over ice-free days, W/m². Zero (with a
/// warning) when no ice-free day has a residual.
pub fn energy_inconsistency(
    pred: &TemperatureField,
    drivers: &MeteoSeries,
    geometry: &LakeGeometry,
    consts: &PhysicsConstants,
) -> Result<f64> {
    if pred.n_days() < 2 {
        return Err(Error::InvalidInput("energy inconsistency needs at least two days".into()));
    }
    let budget = energy_budget(pred, drivers, geometry, consts)?;
    let values: Vec<f64> = budget
        .days
        .iter()
        .filter(|d| d.ice_free)
        .filter_map(|d| d.residual)
        .map(f64::abs)
        .collect();
    if values.is_empty() {
        log::warn!("no ice-free days with a residual; energy inconsistency reported as 0");
        return Ok(0.0);
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub depths: Vec<f64>,
    pub overall: StratumRmse,
    pub by_depth: Vec<StratumRmse>,
    pub by_season: Vec<StratumRmse>,
    /// W/m², when drivers and geometry were supplied.
    pub energy_inconsistency: Option<f64>,
}

pub const SEASON_NOTE: &str = "seasons by calendar month: spring Mar-May, summer Jun-Aug, fall Sep-Nov, winter Dec-Feb";

impl EvalReport {
    pub fn strata(&self) -> impl Iterator<Item = &StratumRmse> {
        std::iter::once(&self.overall).chain(&self.by_depth).chain(&self.by_season)
    }

    /// Long-format CSV `stratum,metric,value,count`; excluded strata carry an
    /// empty value. A leading comment line records the season definition.
    pub fn to_long_csv(&self) -> String {
        let mut out = format!("# {SEASON_NOTE}\nstratum,metric,value,count\n");
        for s in self.strata() {
            let value = s.rmse.map(|v| format!("{v:e}")).unwrap_or_default();
            out.push_str(&format!("{},rmse,{value},{}\n", s.stratum.label(&self.depths), s.count));
        }
        if let Some(ei) = self.energy_inconsistency {
            out.push_str(&format!("overall,energy_inconsistency_w_m2,{ei:e},\n"));
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Parses output of [`EvalReport::to_long_csv`].
    pub fn from_long_csv(text: &str) -> Result<Self> {
        let body: String = text.lines().filter(|l| !l.starts_with('#')).map(|l| format!("{l}\n")).collect();
        let table = CsvTable::from_reader(body.as_bytes(), "report")?;
        let mut report = EvalReport {
            depths: Vec::new(),
            overall: StratumRmse {
                stratum: Stratum::Overall,
                rmse: None,
                count: 0,
            },
            by_depth: Vec::new(),
            by_season: Vec::new(),
            energy_inconsistency: None,
        };
        for row in 0..table.len() {
            let label = table.raw(row, "stratum")?;
            let metric = table.raw(row, "metric")?;
            let raw = table.raw(row, "value")?;
            let value = if raw.is_empty() { None } else { Some(table.parse_f64(row, "value", raw)?) };
            if metric == "energy_inconsistency_w_m2" {
                report.energy_inconsistency = value;
                continue;
            }
            let count = table.f64(row, "count")? as usize;
            if label == "overall" {
                report.overall = StratumRmse {
                    stratum: Stratum::Overall,
                    rmse: value,
                    count,
                };
            } else if let Some(d) = label.strip_prefix("depth:") {
                let depth = table.parse_f64(row, "stratum", d)?;
                report.by_depth.push(StratumRmse {
                    stratum: Stratum::Depth(report.depths.len()),
                    rmse: value,
                    count,
                });
                report.depths.push(depth);
            } else if let Some(s) = label.strip_prefix("season:") {
                report.by_season.push(StratumRmse {
                    stratum: Stratum::Season(s.parse()?),
                    rmse: value,
                    count,
                });
            } else {
                return Err(Error::InvalidInput(format!("unknown stratum '{label}' on row {}", row + 2)));
            }
        }
        Ok(report)
    }
}

/// Every stratum of `pred` against `obs`, plus the energy score when
/// drivers and geometry are given.
pub fn evaluate(
    pred: &TemperatureField,
    obs: &ObservationSet,
    energy: Option<(&MeteoSeries, &LakeGeometry, &PhysicsConstants)>,
) -> Result<EvalReport> {
    let overall = rmse_strata(pred, obs, Strata::Overall)?[0];
    Ok(EvalReport {
        depths: pred.depths().to_vec(),
        overall,
        by_depth: rmse_strata(pred, obs, Strata::ByDepth)?,
        by_season: rmse_strata(pred, obs, Strata::BySeason)?,
        energy_inconsistency: energy
            .map(|(drivers, geometry, consts)| energy_inconsistency(pred, drivers, geometry, consts))
            .transpose()?,
    })
}

pub fn save_report(report: &EvalReport, csv_path: &Path, json_path: Option<&Path>) -> Result<()> {
    write_atomic(csv_path, report.to_long_csv().as_bytes())?;
    if let Some(p) = json_path {
        write_atomic(p, report.to_json()?.as_bytes())?;
    }
    Ok(())
}
