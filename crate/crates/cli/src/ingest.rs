//! Readers for dense CSV and sparse triplet files.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ccot::DataMatrix;
use ndarray::Array2;

use crate::error::{io_error, parse_error, CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    /// Header row of column ids, then one row per line led by its id.
    DenseCsv,
    /// `row_id, col_id, value` per line, comma or tab separated. Missing
    /// pairs are 0; trailing fields (such as timestamps) are ignored.
    Triplet,
}

impl FromStr for Format {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dense-csv" | "dense" | "csv" => Ok(Format::DenseCsv),
            "triplet" => Ok(Format::Triplet),
            other => Err(CliError::Usage(format!(
                "unknown format {other:?} (expected dense-csv or triplet)"
            ))),
        }
    }
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Format::DenseCsv => "dense-csv",
            Format::Triplet => "triplet",
        })
    }
}

pub fn ingest(path: &Path, format: Format) -> Result<DataMatrix> {
    let text = std::fs::read_to_string(path).map_err(io_error(path))?;
    parse(&text, format)
}

pub fn parse(text: &str, format: Format) -> Result<DataMatrix> {
    match format {
        Format::DenseCsv => parse_dense(text),
        Format::Triplet => parse_triplet(text),
    }
}

fn number(cell: &str, line: usize) -> Result<f64> {
    let cell = cell.trim();
    match cell.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(parse_error(line, format!("not a finite number: {cell:?}"))),
    }
}

pub fn parse_dense(text: &str) -> Result<DataMatrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut records = reader.records();
    let header = match records.next() {
        Some(r) => r?,
        None => return Err(parse_error(1, "empty file")),
    };
    let col_ids: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let width = header.len();

    let mut row_ids = Vec::new();
    let mut values = Vec::new();
    for record in records {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        if record.len() != width {
            return Err(parse_error(
                line,
                format!("expected {width} fields, found {}", record.len()),
            ));
        }
        row_ids.push(record[0].to_string());
        for cell in record.iter().skip(1) {
            values.push(number(cell, line)?);
        }
    }
    let a = Array2::from_shape_vec((row_ids.len(), col_ids.len()), values)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(DataMatrix::new(a, row_ids, col_ids)?)
}

/// Numeric ids sort by value, anything else lexicographically.
fn ordered_ids(ids: HashMap<String, ()>) -> Vec<String> {
    let mut ids: Vec<String> = ids.into_keys().collect();
    if ids.iter().all(|s| s.parse::<i64>().is_ok()) {
        ids.sort_by_key(|s| s.parse::<i64>().unwrap_or_default());
    } else {
        ids.sort();
    }
    ids
}

pub fn parse_triplet(text: &str) -> Result<DataMatrix> {
    let mut entries = Vec::new();
    let mut first_seen: HashMap<(String, String), usize> = HashMap::new();
    let (mut rows, mut cols) = (HashMap::new(), HashMap::new());
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let sep = if trimmed.contains('\t') { '\t' } else { ',' };
        let fields: Vec<&str> = trimmed.split(sep).map(str::trim).collect();
        if fields.len() < 3 {
            return Err(parse_error(
                line,
                format!("expected row, column and value, found {} field(s)", fields.len()),
            ));
        }
        let (r, c) = (fields[0].to_string(), fields[1].to_string());
        let v = number(fields[2], line)?;
        if let Some(prev) = first_seen.insert((r.clone(), c.clone()), line) {
            return Err(parse_error(
                line,
                format!("duplicate entry ({r}, {c}), first given on line {prev}"),
            ));
        }
        rows.insert(r.clone(), ());
        cols.insert(c.clone(), ());
        entries.push((r, c, v));
    }
    let row_ids = ordered_ids(rows);
    let col_ids = ordered_ids(cols);
    let row_pos: HashMap<&str, usize> = row_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let col_pos: HashMap<&str, usize> = col_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let mut a = Array2::zeros((row_ids.len(), col_ids.len()));
    for (r, c, v) in &entries {
        a[[row_pos[r.as_str()], col_pos[c.as_str()]]] = *v;
    }
    Ok(DataMatrix::new(a, row_ids, col_ids)?)
}
