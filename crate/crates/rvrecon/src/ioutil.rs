//! Shared text-serialization helpers.
//!
//! Every real number leaving the crate (CSV cells, JSON fields) is printed
//! with 17 significant digits so that parsing the text recovers the exact
//! `f64` bit pattern. [`fmt_real`] is the single place that rule lives.

use std::io::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

/// Formats a real number with 17 significant digits (scientific notation).
///
/// 17 digits are sufficient for `f64` round-trips: `s.parse::<f64>()`
/// of the result compares bit-equal to the input.
pub fn fmt_real(x: f64) -> String {
    format!("{x:.16e}")
}

/// JSON formatter identical to `serde_json`'s compact output except that
/// every `f64` is printed via [`fmt_real`]'s 17-significant-digit rule.
struct SigFigFormatter;

impl serde_json::ser::Formatter for SigFigFormatter {
    fn write_f64<W>(&mut self, writer: &mut W, value: f64) -> std::io::Result<()>
    where
        W: ?Sized + std::io::Write,
    {
        write!(writer, "{value:.16e}")
    }
}

/// Serializes `value` to compact JSON with exact-round-trip reals.
pub(crate) fn to_json_vec<T: Serialize>(what: &str, value: &T) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, SigFigFormatter);
    value.serialize(&mut ser).map_err(|e| Error::Json {
        path: what.to_string(),
        source: e,
    })?;
    Ok(buf)
}

/// Serializes `value` to pretty-printed JSON with exact-round-trip reals.
///
/// Numbers are first rendered by [`SigFigFormatter`]; the re-indentation
/// pass preserves their literal text (`arbitrary_precision`), so the
/// 17-digit representations survive unchanged.
pub(crate) fn to_json_pretty<T: Serialize>(what: &str, value: &T) -> Result<String> {
    let compact = to_json_vec(what, value)?;
    let value: serde_json::Value =
        serde_json::from_slice(&compact).map_err(|e| Error::Json {
            path: what.to_string(),
            source: e,
        })?;
    let mut out = serde_json::to_string_pretty(&value).map_err(|e| Error::Json {
        path: what.to_string(),
        source: e,
    })?;
    out.push('\n');
    Ok(out)
}

/// Reads a whole file to a string, keeping the path in any error.
pub(crate) fn read_text_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Writes `contents` to `path`, keeping the path in any error.
pub(crate) fn write_bytes(path: &Path, contents: &[u8]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(contents).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Parses one CSV cell as a finite real.
fn parse_cell(path: &Path, row: usize, col: &str, cell: &str) -> Result<f64> {
    let v: f64 = cell.trim().parse().map_err(|_| Error::Malformed {
        path: path.display().to_string(),
        row,
        msg: format!("column {col}: cannot parse {cell:?} as a real number"),
    })?;
    if !v.is_finite() {
        return Err(Error::Malformed {
            path: path.display().to_string(),
            row,
            msg: format!("column {col}: non-finite value {cell:?}"),
        });
    }
    Ok(v)
}

/// Reads a CSV file of reals with a mandatory exact header.
///
/// Returns one `Vec<f64>` per data row. Errors name the file and the
/// 1-based line number (the header is line 1). Cells must be finite.
pub(crate) fn read_csv(path: &Path, expected_header: &[String]) -> Result<Vec<Vec<f64>>> {
    let text = read_text_file(path)?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or("").trim_end_matches('\r');
    let expected = expected_header.join(",");
    if header != expected {
        return Err(Error::Schema {
            path: path.display().to_string(),
            msg: format!("expected header {expected:?}, found {header:?}"),
        });
    }
    let n_cols = expected_header.len();
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let row_no = i + 2;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != n_cols {
            return Err(Error::Malformed {
                path: path.display().to_string(),
                row: row_no,
                msg: format!("expected {n_cols} columns, found {}", cells.len()),
            });
        }
        let mut row = Vec::with_capacity(n_cols);
        for (cell, name) in cells.iter().zip(expected_header) {
            row.push(parse_cell(path, row_no, name, cell)?);
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Writes a CSV file of reals: `header`, then one line per row, every cell
/// through [`fmt_real`].
pub(crate) fn write_csv(path: &Path, header: &[String], rows: &[Vec<f64>]) -> Result<()> {
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push('\n');
    for row in rows {
        let cells: Vec<String> = row.iter().map(|&x| fmt_real(x)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    write_bytes(path, out.as_bytes())
}
