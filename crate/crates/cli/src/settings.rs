//! Config-file lookup, `key=value` overrides and the resolved-settings sidecar.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use chrono::NaiveDate;
use thermocline::data::csvio::write_atomic;
use thermocline::data::DateRange;
use thermocline::train::{parse_key_values, read_key_values};

pub const CONFIG_DIR_ENV: &str = "THERMOCLINE_CONFIG_DIR";

#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Settings in application order: config file first, then `--set` pairs.
pub fn collect(config: Option<&Path>, command: &str, overrides: &[String]) -> Result<(Vec<(String, String)>, Option<PathBuf>)> {
    let path = match config {
        Some(p) => Some(p.to_path_buf()),
        None => std::env::var_os(CONFIG_DIR_ENV)
            .map(|dir| Path::new(&dir).join(format!("{command}.cfg")))
            .filter(|p| p.is_file()),
    };
    let mut pairs = match &path {
        Some(p) => read_key_values(p)?,
        None => Vec::new(),
    };
    for o in overrides {
        let parsed = parse_key_values(o).map_err(|_| usage(format!("--set expects KEY=VALUE, got '{o}'")))?;
        pairs.extend(parsed);
    }
    Ok((pairs, path))
}

/// `START:END` with ISO dates, end exclusive.
pub fn parse_window(text: &str) -> Result<DateRange> {
    let (a, b) = text
        .split_once(':')
        .ok_or_else(|| usage(format!("window '{text}' should look like 1990-01-01:1993-01-01")))?;
    let date = |s: &str| {
        NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d").map_err(|_| usage(format!("bad date '{s}' in window '{text}'")))
    };
    let (start, end) = (date(a)?, date(b)?);
    if end <= start {
        return Err(usage(format!("window '{text}' ends before it starts")));
    }
    Ok(DateRange::new(start, end))
}

/// `field.csv` + `budget.csv` -> `field.budget.csv`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}

/// Records what a run actually used next to its main output.
pub struct Sidecar {
    lines: Vec<String>,
}

impl Sidecar {
    pub fn new(command: &str, seed: u64, config: Option<&Path>) -> Self {
        let mut lines = vec![format!("command = {command}"), format!("seed = {seed}")];
        if let Some(p) = config {
            lines.push(format!("config_file = {}", p.display()));
        }
        Self { lines }
    }

    pub fn add(&mut self, key: &str, value: impl std::fmt::Display) -> &mut Self {
        self.lines.push(format!("{key} = {value}"));
        self
    }

    pub fn add_block(&mut self, block: &str) -> &mut Self {
        let seen: Vec<String> = self.lines.iter().filter_map(|l| l.split(" = ").next()).map(str::to_owned).collect();
        self.lines.extend(
            block
                .lines()
                .filter(|l| l.split(" = ").next().is_some_and(|k| !seen.iter().any(|s| s == k)))
                .map(str::to_owned),
        );
        self
    }

    /// Writes `<output stem>.config.txt` beside `output`.
    pub fn write(&self, output: &Path) -> Result<()> {
        self.write_at(&sibling(output, "config.txt"))
    }

    pub fn write_at(&self, path: &Path) -> Result<()> {
        let text = self.lines.join("\n") + "\n";
        for line in &self.lines {
            log::info!("{line}");
        }
        write_atomic(path, text.as_bytes()).with_context(|| format!("writing {}", path.display()))
    }
}
