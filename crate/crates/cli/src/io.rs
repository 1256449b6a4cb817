//! CSV and JSON file formats.
//!
//! Matrices: plain CSV without header, one row per line. Vectors: single
//! column with a header line. Labelled tables (returns, loadings): header
//! row of column names followed by numeric rows.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{CliError, CliResult};

pub fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| {
        CliError::parse(path, format!("line {} column {}: {e}", e.line(), e.column()))
    })
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable value");
    s.push('\n');
    s
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    write_text(path, &to_json(value))
}

fn parse_records(path: &Path, text: &str, has_header: bool) -> CliResult<(Vec<String>, Vec<Vec<f64>>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = if has_header {
        reader
            .headers()
            .map_err(|e| CliError::parse(path, e.to_string()))?
            .iter()
            .map(str::to_string)
            .collect()
    } else {
        Vec::new()
    };
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| CliError::parse(path, e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        let row = record
            .iter()
            .enumerate()
            .map(|(col, field)| {
                field.parse::<f64>().map_err(|_| {
                    CliError::parse(path, format!("line {line} column {}: invalid number {field:?}", col + 1))
                })
            })
            .collect::<CliResult<Vec<_>>>()?;
        rows.push(row);
    }
    Ok((header, rows))
}

fn to_matrix(path: &Path, rows: Vec<Vec<f64>>) -> CliResult<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if ncols == 0 {
        return Err(CliError::parse(path, "empty matrix"));
    }
    Ok(DMatrix::from_row_iterator(rows.len(), ncols, rows.into_iter().flatten()))
}

pub fn read_matrix(path: &Path) -> CliResult<DMatrix<f64>> {
    let (_, rows) = parse_records(path, &read_text(path)?, false)?;
    to_matrix(path, rows)
}

pub fn read_vector(path: &Path) -> CliResult<DVector<f64>> {
    let (header, rows) = parse_records(path, &read_text(path)?, true)?;
    if header.len() != 1 {
        return Err(CliError::parse(path, format!("expected one column, found {}", header.len())));
    }
    Ok(DVector::from_iterator(rows.len(), rows.into_iter().map(|r| r[0])))
}

pub fn read_table(path: &Path) -> CliResult<(Vec<String>, DMatrix<f64>)> {
    let (header, rows) = parse_records(path, &read_text(path)?, true)?;
    Ok((header, to_matrix(path, rows)?))
}

fn push_row(out: &mut String, values: impl Iterator<Item = f64>) {
    let fields: Vec<String> = values.map(|v| v.to_string()).collect();
    out.push_str(&fields.join(","));
    out.push('\n');
}

pub fn matrix_csv(m: &DMatrix<f64>) -> String {
    let mut out = String::new();
    for row in m.row_iter() {
        push_row(&mut out, row.iter().copied());
    }
    out
}

pub fn vector_csv(name: &str, v: &DVector<f64>) -> String {
    let mut out = format!("{name}\n");
    for x in v.iter() {
        out.push_str(&format!("{x}\n"));
    }
    out
}

pub fn table_csv(header: &[String], m: &DMatrix<f64>) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for row in m.row_iter() {
        push_row(&mut out, row.iter().copied());
    }
    out
}

pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> CliResult<()> {
    write_text(path, &matrix_csv(m))
}

pub fn write_vector(path: &Path, name: &str, v: &DVector<f64>) -> CliResult<()> {
    write_text(path, &vector_csv(name, v))
}

pub fn write_table(path: &Path, header: &[String], m: &DMatrix<f64>) -> CliResult<()> {
    write_text(path, &table_csv(header, m))
}
