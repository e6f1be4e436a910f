//! Deterministic result writers.
//!
//! Every float leaving the tool is rounded to 9 significant digits and then
//! printed in shortest round-trip form, so reruns diff byte-for-byte.

use serde::Serialize;
use serde_json::Value;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

pub const SIGNIFICANT_DIGITS: usize = 9;

/// Rounds to [`SIGNIFICANT_DIGITS`]; non-finite values pass through.
pub fn round_sig(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{:.*e}", SIGNIFICANT_DIGITS - 1, x).parse().unwrap_or(x)
}

pub fn format_float(x: f64) -> String {
    let r = round_sig(x);
    if r == 0.0 {
        // Collapse -0 so sign noise around zero does not leak into diffs.
        "0".to_string()
    } else {
        r.to_string()
    }
}

/// Rounds every float in a JSON tree. Integers are left untouched.
pub fn round_json(value: Value) -> Value {
    match value {
        Value::Number(n) if n.is_f64() => n
            .as_f64()
            .map(|x| {
                let r = round_sig(x);
                serde_json::Number::from_f64(if r == 0.0 { 0.0 } else { r })
                    .map_or(Value::Null, Value::Number)
            })
            .unwrap_or(Value::Null),
        Value::Array(items) => Value::Array(items.into_iter().map(round_json).collect()),
        Value::Object(map) => Value::Object(map.into_iter().map(|(k, v)| (k, round_json(v))).collect()),
        other => other,
    }
}

/// Pretty JSON with rounded floats and a trailing newline.
pub fn to_json_string<T: Serialize>(value: &T) -> serde_json::Result<String> {
    let rounded = round_json(serde_json::to_value(value)?);
    let mut s = serde_json::to_string_pretty(&rounded)?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> io::Result<()> {
    let s = to_json_string(value).map_err(io::Error::other)?;
    write_atomically(path, s.as_bytes())
}

/// A CSV cell: floats go through [`format_float`].
#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Float(f64),
    Int(u64),
    Bool(bool),
    Text(String),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Float(x) => format_float(*x),
            Cell::Int(n) => n.to_string(),
            Cell::Bool(b) => b.to_string(),
            Cell::Text(s) => s.clone(),
        }
    }
}

/// RFC-4180 CSV (CRLF line endings, quoting as needed).
pub fn csv_bytes(header: &[&str], rows: &[Vec<Cell>]) -> io::Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::CRLF)
        .from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(row.iter().map(Cell::render))?;
    }
    w.into_inner().map_err(|e| io::Error::other(e.to_string()))
}

pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<Cell>]) -> io::Result<()> {
    write_atomically(path, &csv_bytes(header, rows)?)
}

/// `results/law.csv` -> `results/law.<suffix>`.
pub fn sidecar_path(path: &Path, suffix: &str) -> PathBuf {
    path.with_extension(suffix)
}

fn write_atomically(path: &Path, bytes: &[u8]) -> io::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)
}
