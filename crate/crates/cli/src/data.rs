//! Delimited-text ingestion and design construction.

use std::path::Path;

use nalgebra::DMatrix;
use selseg::Dataset;

use crate::error::CliError;

#[derive(Debug)]
pub struct Table {
    pub headers: Vec<String>,
    /// Column-major values.
    pub columns: Vec<Vec<f64>>,
}

impl Table {
    pub fn column(&self, name: &str) -> Result<&[f64], CliError> {
        self.headers
            .iter()
            .position(|h| h == name)
            .map(|i| self.columns[i].as_slice())
            .ok_or_else(|| CliError::Parse(format!("column '{name}' not found (available: {})", self.headers.join(", "))))
    }

    pub fn n_rows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }
}

/// Picks the candidate delimiter occurring most often in the header line.
pub fn detect_delimiter(header: &str) -> u8 {
    [b',', b'\t', b';']
        .into_iter()
        .max_by_key(|d| header.bytes().filter(|b| b == d).count())
        .unwrap_or(b',')
}

pub fn parse_table(text: &str) -> Result<Table, CliError> {
    let header = text.lines().next().ok_or_else(|| CliError::Parse("input is empty".into()))?;
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(detect_delimiter(header))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| CliError::Parse(format!("line 1: {e}")))?
        .iter()
        .map(str::to_string)
        .collect();
    if headers.iter().any(String::is_empty) {
        return Err(CliError::Parse("line 1: empty column name".into()));
    }
    let mut columns = vec![Vec::new(); headers.len()];
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            CliError::Parse(format!("line {line}: {e}"))
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != headers.len() {
            return Err(CliError::Parse(format!("line {line}: expected {} fields, found {}", headers.len(), rec.len())));
        }
        for (i, field) in rec.iter().enumerate() {
            if field.is_empty() || field.eq_ignore_ascii_case("na") || field.eq_ignore_ascii_case("nan") {
                return Err(CliError::Parse(format!("line {line}: missing value in column '{}'", headers[i])));
            }
            let v: f64 = field
                .parse()
                .map_err(|_| CliError::Parse(format!("line {line}: '{field}' in column '{}' is not a number", headers[i])))?;
            if !v.is_finite() {
                return Err(CliError::Parse(format!("line {line}: non-finite value in column '{}'", headers[i])));
            }
            columns[i].push(v);
        }
    }
    Ok(Table { headers, columns })
}

pub fn read_table(path: &Path) -> Result<Table, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    parse_table(&text)
}

pub struct DesignSpec<'a> {
    /// Defaults to the first column.
    pub response: Option<&'a str>,
    /// Defaults to every other column.
    pub covariates: Option<&'a [String]>,
    pub intercept: bool,
    pub lags: usize,
}

/// Builds the regression: optional intercept, the named covariates, then
/// `AR1..ARq` lags of the response. The first `q` rows are dropped.
pub fn build_dataset(table: &Table, spec: &DesignSpec) -> Result<Dataset, CliError> {
    let response = spec.response.map(str::to_string).unwrap_or_else(|| table.headers[0].clone());
    let y_all = table.column(&response)?;
    let cov_names: Vec<String> = match spec.covariates {
        Some(c) => c.to_vec(),
        None => table.headers.iter().filter(|h| **h != response).cloned().collect(),
    };
    let q = spec.lags;
    let n = table.n_rows();
    if n <= q {
        return Err(CliError::Parse(format!("{n} rows cannot hold {q} lags")));
    }
    let mut names = Vec::new();
    let mut cols: Vec<Vec<f64>> = Vec::new();
    if spec.intercept {
        names.push("Intercept".to_string());
        cols.push(vec![1.0; n - q]);
    }
    for c in &cov_names {
        if *c == response {
            return Err(CliError::Parse(format!("column '{c}' is both response and covariate")));
        }
        cols.push(table.column(c)?[q..].to_vec());
        names.push(c.clone());
    }
    for l in 1..=q {
        cols.push(y_all[q - l..n - l].to_vec());
        names.push(format!("AR{l}"));
    }
    if cols.is_empty() {
        return Err(CliError::Parse("the model has no covariates".into()));
    }
    let x = DMatrix::from_fn(n - q, cols.len(), |i, j| cols[j][i]);
    Dataset::new(y_all[q..].to_vec(), x, names).map_err(|e| CliError::Parse(e.to_string()))
}
