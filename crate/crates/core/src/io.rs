//! Plain CSV tables with round-trip float formatting, and JSON helpers.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

/// 17 significant digits: enough to round-trip any f64.
pub fn format_float(x: f64) -> String {
    if x == 0.0 {
        // avoid "-0" noise in otherwise identical files
        return "0.0000000000000000e0".to_string();
    }
    format!("{x:.16e}")
}

/// In-memory CSV table of floats with named columns.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new<S: Into<String>>(columns: impl IntoIterator<Item = S>) -> Self {
        Self {
            columns: columns.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let idx = self
            .columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::Data(format!("missing column {name:?}")))?;
        Ok(self.rows.iter().map(|r| r[idx]).collect())
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for row in &self.rows {
            for (i, v) in row.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                let _ = write!(out, "{}", format_float(*v));
            }
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::Data("empty CSV".into()))?;
        let columns: Vec<String> = header.split(',').map(|s| s.trim().to_string()).collect();
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            let row: std::result::Result<Vec<f64>, _> = line.split(',').map(|s| s.trim().parse::<f64>()).collect();
            let row = row.map_err(|e| Error::Data(format!("CSV row {}: {e}", i + 2)))?;
            if row.len() != columns.len() {
                return Err(Error::Data(format!(
                    "CSV row {} has {} fields, expected {}",
                    i + 2,
                    row.len(),
                    columns.len()
                )));
            }
            rows.push(row);
        }
        Ok(Self { columns, rows })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        for x in [1.0, -0.1, std::f64::consts::PI, 1e-300, 6.02e23, -0.0, 5e-324] {
            let s = format_float(x);
            assert_eq!(s.parse::<f64>().unwrap(), if x == 0.0 { 0.0 } else { x });
        }
        assert_eq!(format_float(0.1), "1.0000000000000001e-1");
    }

    #[test]
    fn table_round_trip() {
        let mut t = Table::new(["r", "rho"]);
        t.push(vec![0.0, 1.5]);
        t.push(vec![0.25, 1.0 / 3.0]);
        let back = Table::parse(&t.to_csv()).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.column("rho").unwrap(), vec![1.5, 1.0 / 3.0]);
        assert!(back.column("u").is_err());
    }

    #[test]
    fn malformed_rows_rejected() {
        assert!(Table::parse("a,b\n1,2\n3\n").is_err());
        assert!(Table::parse("a,b\n1,x\n").is_err());
        assert!(Table::parse("").is_err());
    }
}
