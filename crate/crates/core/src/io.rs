//! Signal files and atomic output.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::wavelet::Signal;

/// On-disk signal encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignalFormat {
    /// One value per row, optional header, optional column selection.
    Csv,
    /// Raw little-endian IEEE-754 doubles.
    F64le,
}

impl FromStr for SignalFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "csv" => Ok(SignalFormat::Csv),
            "f64le" | "bin" => Ok(SignalFormat::F64le),
            other => Err(Error::Config(format!("unknown signal format `{other}` (csv|f64le)"))),
        }
    }
}

impl SignalFormat {
    /// `.bin`, `.f64` and `.f64le` files are raw doubles; anything else is CSV.
    pub fn from_path(path: &Path) -> Self {
        match path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase())
        {
            Some(e) if e == "bin" || e == "f64" || e == "f64le" => SignalFormat::F64le,
            _ => SignalFormat::Csv,
        }
    }
}

pub fn read_signal(path: &Path, format: SignalFormat, column: Option<usize>) -> Result<Signal> {
    let bytes = fs::read(path)?;
    let values = match format {
        SignalFormat::Csv => parse_csv_signal(&bytes, column)?,
        SignalFormat::F64le => {
            if column.is_some() {
                return Err(Error::Config("column selection only applies to CSV input".into()));
            }
            decode_f64le(&bytes)?
        }
    };
    Signal::new(values)
}

pub fn decode_f64le(bytes: &[u8]) -> Result<Vec<f64>> {
    if !bytes.len().is_multiple_of(8) {
        return Err(Error::Input(format!(
            "f64le input has {} bytes, not a multiple of 8",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

pub fn encode_f64le(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

/// Parses one numeric column (default 0). A first row whose target field is
/// not numeric is taken as a header.
pub fn parse_csv_signal(bytes: &[u8], column: Option<usize>) -> Result<Vec<f64>> {
    let col = column.unwrap_or(0);
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let mut values = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let line = record.position().map_or(i as u64 + 1, |p| p.line()) as usize;
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        let field = record.get(col).ok_or_else(|| Error::Parse {
            line,
            message: format!("no column {col} (row has {} fields)", record.len()),
        })?;
        match field.parse::<f64>() {
            Ok(v) if v.is_finite() => values.push(v),
            Ok(v) => return Err(Error::Input(format!("line {line}: non-finite value {v}"))),
            Err(_) if i == 0 => continue,
            Err(e) => {
                return Err(Error::Parse {
                    line,
                    message: format!("`{field}` is not a number ({e})"),
                })
            }
        }
    }
    Ok(values)
}

pub fn encode_csv_signal(values: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * 20);
    for v in values {
        writeln!(out, "{v:?}").expect("write to memory");
    }
    out
}

pub fn write_signal(path: &Path, values: &[f64], format: SignalFormat) -> Result<()> {
    let bytes = match format {
        SignalFormat::Csv => encode_csv_signal(values),
        SignalFormat::F64le => encode_f64le(values),
    };
    write_atomic(path, &bytes)
}

/// Writes through a temporary file in the destination directory, then
/// renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}
