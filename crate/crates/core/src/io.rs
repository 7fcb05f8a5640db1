//! Matrix file formats: headerless CSV (one row per line) and JSON
//! `{"n": 3, "entries": [[...], ...]}`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::NonNegMatrix;

#[derive(Debug, Serialize, Deserialize)]
struct MatrixDoc {
    n: usize,
    entries: Vec<Vec<f64>>,
}

pub fn parse_csv(text: &str) -> Result<NonNegMatrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse(e.to_string()))?;
        let row = record
            .iter()
            .map(|field| {
                field.parse::<f64>().map_err(|_| Error::Parse(format!("bad number `{field}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    NonNegMatrix::validate(&rows)
}

pub fn parse_json(text: &str) -> Result<NonNegMatrix> {
    let doc: MatrixDoc = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    if doc.entries.len() != doc.n {
        return Err(Error::DimensionMismatch { expected: doc.n, got: doc.entries.len() });
    }
    NonNegMatrix::validate(&doc.entries)
}

pub fn to_csv(m: &NonNegMatrix) -> String {
    let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    for row in m.to_rows() {
        writer
            .write_record(row.iter().map(|v| format!("{v:?}")))
            .expect("writing to memory");
    }
    String::from_utf8(writer.into_inner().expect("flush to memory")).expect("utf-8")
}

pub fn to_json(m: &NonNegMatrix) -> String {
    serde_json::to_string(&MatrixDoc { n: m.n(), entries: m.to_rows() }).expect("serializable")
}

/// Reads a matrix, choosing JSON for a `.json` extension and CSV otherwise.
pub fn read_matrix(path: &Path) -> Result<NonNegMatrix> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    match path.extension().and_then(|e| e.to_str()) {
        Some(ext) if ext.eq_ignore_ascii_case("json") => parse_json(&text),
        _ => parse_csv(&text),
    }
}
