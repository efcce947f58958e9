//! Small helpers over the `csv` crate: header lookup, typed cell parsing
//! with row-numbered errors, and atomic writes.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use chrono::NaiveDate;

use crate::error::{Error, Result};

pub struct CsvTable {
    path: String,
    header: HashMap<String, usize>,
    columns: Vec<String>,
    rows: Vec<csv::StringRecord>,
}

impl CsvTable {
    pub fn read(path: &Path) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(file, &path.display().to_string())
    }

    pub fn from_reader(reader: impl std::io::Read, name: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let columns: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
        let header = columns
            .iter()
            .enumerate()
            .map(|(i, c)| (c.clone(), i))
            .collect();
        let rows = rdr.records().collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(Self {
            path: name.to_owned(),
            header,
            columns,
            rows,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn has(&self, column: &str) -> bool {
        self.header.contains_key(column)
    }

    pub fn require(&self, column: &str) -> Result<()> {
        if self.has(column) {
            Ok(())
        } else {
            Err(Error::MissingColumn(column.to_owned()))
        }
    }

    fn row_error(&self, row: usize, message: String) -> Error {
        // header is line 1
        Error::Row {
            path: self.path.clone(),
            row: row + 2,
            message,
        }
    }

    pub fn raw(&self, row: usize, column: &str) -> Result<&str> {
        let idx = *self
            .header
            .get(column)
            .ok_or_else(|| Error::MissingColumn(column.to_owned()))?;
        self.rows[row]
            .get(idx)
            .ok_or_else(|| self.row_error(row, format!("missing field '{column}'")))
    }

    pub fn raw_at(&self, row: usize, idx: usize) -> Result<&str> {
        self.rows[row]
            .get(idx)
            .ok_or_else(|| self.row_error(row, format!("missing field {idx}")))
    }

    pub fn parse_f64(&self, row: usize, column: &str, text: &str) -> Result<f64> {
        let v: f64 = text
            .parse()
            .map_err(|_| self.row_error(row, format!("'{text}' in column '{column}' is not a number")))?;
        if v.is_nan() {
            return Err(self.row_error(row, format!("NaN in column '{column}'")));
        }
        Ok(v)
    }

    pub fn f64(&self, row: usize, column: &str) -> Result<f64> {
        let text = self.raw(row, column)?;
        self.parse_f64(row, column, text)
    }

    pub fn f64_or(&self, row: usize, column: &str, default: f64) -> Result<f64> {
        if !self.has(column) {
            return Ok(default);
        }
        let text = self.raw(row, column)?;
        if text.is_empty() {
            return Ok(default);
        }
        self.parse_f64(row, column, text)
    }

    pub fn date(&self, row: usize, column: &str) -> Result<NaiveDate> {
        let text = self.raw(row, column)?;
        NaiveDate::parse_from_str(text, "%Y-%m-%d")
            .map_err(|_| self.row_error(row, format!("'{text}' is not a YYYY-MM-DD date")))
    }

    pub fn flag(&self, row: usize, column: &str) -> Result<bool> {
        match self.raw(row, column)? {
            "1" | "true" | "TRUE" | "True" => Ok(true),
            "0" | "false" | "FALSE" | "False" => Ok(false),
            other => Err(self.row_error(row, format!("'{other}' in column '{column}' is not a 0/1 flag"))),
        }
    }
}

/// Writes to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}
