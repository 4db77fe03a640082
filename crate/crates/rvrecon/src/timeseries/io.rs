//! On-disk scan layout.
//!
//! A scan is a directory of four files:
//!
//! * `bold.csv`   - header `roi_0,...,roi_89`, one row per volume
//! * `motion.csv` - header `trans_x_mm,trans_y_mm,trans_z_mm,rot_x_deg,rot_y_deg,rot_z_deg`
//! * `meta.json`  - keys `scan_id`, `tr_s`, `resp_fs_hz`, `pe_axis`
//! * `resp.csv`   - header `resp`, one row per belt sample (optional)
//!
//! All reals are written with 17 significant digits, so write -> read is
//! exact. RV series use a two-column `volume,rv` CSV.

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ioutil;

use super::{RespiratoryTrace, RvSeries, ScanRecord, N_MOTION, N_ROIS};

/// BOLD matrix file name inside a scan directory.
pub const BOLD_FILE: &str = "bold.csv";
/// Motion matrix file name inside a scan directory.
pub const MOTION_FILE: &str = "motion.csv";
/// Metadata file name inside a scan directory.
pub const META_FILE: &str = "meta.json";
/// Respiratory trace file name inside a scan directory.
pub const RESP_FILE: &str = "resp.csv";

/// Motion column names, in on-disk order.
pub const MOTION_HEADER: [&str; N_MOTION] = [
    "trans_x_mm",
    "trans_y_mm",
    "trans_z_mm",
    "rot_x_deg",
    "rot_y_deg",
    "rot_z_deg",
];

const RESP_HEADER: [&str; 1] = ["resp"];
const RV_HEADER: [&str; 2] = ["volume", "rv"];

/// BOLD column names `roi_0..roi_89`, in on-disk order.
pub fn bold_header() -> Vec<String> {
    (0..N_ROIS).map(|i| format!("roi_{i}")).collect()
}

fn owned(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

/// Scan metadata as stored in `meta.json`.
///
/// `resp_fs_hz` may be absent for scans without a belt recording.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaJson {
    /// Scan identifier; becomes the stem of derived artifact names.
    pub scan_id: String,
    /// Volume sampling interval in seconds.
    pub tr_s: f64,
    /// Belt sampling rate in Hz, when a belt trace exists.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resp_fs_hz: Option<f64>,
    /// Index (0..6) of the motion column along the phase-encoding axis.
    pub pe_axis: usize,
}

impl MetaJson {
    /// Reads and parses a metadata file.
    pub fn read(path: &Path) -> Result<Self> {
        let text = ioutil::read_text_file(path)?;
        let meta: MetaJson = serde_json::from_str(&text).map_err(|e| Error::Json {
            path: path.display().to_string(),
            source: e,
        })?;
        if let Some(fs) = meta.resp_fs_hz {
            if !(fs.is_finite() && fs > 0.0) {
                return Err(Error::invalid(
                    "meta.json",
                    format!("resp_fs_hz must be positive and finite, got {fs}"),
                ));
            }
        }
        Ok(meta)
    }

    /// Writes the metadata file (pretty-printed JSON).
    pub fn write(&self, path: &Path) -> Result<()> {
        let text = ioutil::to_json_pretty(&path.display().to_string(), self)?;
        ioutil::write_bytes(path, text.as_bytes())
    }
}

/// Reads a standalone `bold.csv` into a `[T x 90]` matrix.
pub fn read_bold_csv(path: &Path) -> Result<Array2<f64>> {
    rows_to_matrix(path, ioutil::read_csv(path, &bold_header())?, N_ROIS)
}

/// Reads a standalone `motion.csv` into a `[T x 6]` matrix.
pub fn read_motion_csv(path: &Path) -> Result<Array2<f64>> {
    rows_to_matrix(
        path,
        ioutil::read_csv(path, &owned(&MOTION_HEADER))?,
        N_MOTION,
    )
}

/// Reads a standalone `resp.csv` as a trace sampled at `fs_hz`.
pub fn read_resp_csv(path: &Path, fs_hz: f64) -> Result<RespiratoryTrace> {
    let rows = ioutil::read_csv(path, &owned(&RESP_HEADER))?;
    RespiratoryTrace::new(rows.into_iter().map(|r| r[0]).collect(), fs_hz)
}

fn rows_to_matrix(path: &Path, rows: Vec<Vec<f64>>, n_cols: usize) -> Result<Array2<f64>> {
    let t = rows.len();
    if t == 0 {
        return Err(Error::InsufficientData(format!(
            "{}: no data rows",
            path.display()
        )));
    }
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Array2::from_shape_vec((t, n_cols), flat)
        .map_err(|e| Error::Shape(format!("{}: {e}", path.display())))
}

/// Reads a scan from its component files.
///
/// `resp_path` is optional; when given, `meta.json` must carry
/// `resp_fs_hz`. BOLD and motion must agree on the number of volumes.
pub fn read_scan(
    bold_path: &Path,
    motion_path: &Path,
    meta_path: &Path,
    resp_path: Option<&Path>,
) -> Result<ScanRecord> {
    let meta = MetaJson::read(meta_path)?;
    let bold = read_bold_csv(bold_path)?;
    let motion = read_motion_csv(motion_path)?;
    if bold.nrows() != motion.nrows() {
        return Err(Error::Shape(format!(
            "{} has {} rows but {} has {}",
            bold_path.display(),
            bold.nrows(),
            motion_path.display(),
            motion.nrows()
        )));
    }
    let resp = match resp_path {
        None => None,
        Some(p) => {
            let fs = meta.resp_fs_hz.ok_or_else(|| Error::Schema {
                path: meta_path.display().to_string(),
                msg: "respiratory trace supplied but resp_fs_hz missing".into(),
            })?;
            Some(read_resp_csv(p, fs)?)
        }
    };
    ScanRecord::new(meta.scan_id, bold, motion, meta.tr_s, meta.pe_axis, resp)
}

/// Reads a scan from a directory using the standard file names.
///
/// `resp.csv` is included when present.
pub fn read_scan_dir(dir: &Path) -> Result<ScanRecord> {
    let resp = dir.join(RESP_FILE);
    read_scan(
        &dir.join(BOLD_FILE),
        &dir.join(MOTION_FILE),
        &dir.join(META_FILE),
        resp.exists().then_some(resp.as_path()),
    )
}

fn matrix_rows(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

/// Writes a scan into `dir` using the standard file names.
///
/// Creates the directory if needed. `resp.csv` is written only when the
/// scan has a belt trace.
pub fn write_scan(scan: &ScanRecord, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    ioutil::write_csv(&dir.join(BOLD_FILE), &bold_header(), &matrix_rows(scan.bold()))?;
    ioutil::write_csv(
        &dir.join(MOTION_FILE),
        &owned(&MOTION_HEADER),
        &matrix_rows(scan.motion()),
    )?;
    let meta = MetaJson {
        scan_id: scan.scan_id().to_string(),
        tr_s: scan.tr_s(),
        resp_fs_hz: scan.resp().map(|r| r.fs_hz()),
        pe_axis: scan.pe_axis(),
    };
    meta.write(&dir.join(META_FILE))?;
    if let Some(resp) = scan.resp() {
        let rows: Vec<Vec<f64>> = resp.samples().iter().map(|&v| vec![v]).collect();
        ioutil::write_csv(&dir.join(RESP_FILE), &owned(&RESP_HEADER), &rows)?;
    }
    Ok(())
}

/// Writes an RV series as a `volume,rv` CSV (volume indices are 0-based).
pub fn write_rv_csv(path: &Path, rv: &RvSeries) -> Result<()> {
    let rows: Vec<Vec<f64>> = rv
        .values()
        .iter()
        .enumerate()
        .map(|(i, &v)| vec![i as f64, v])
        .collect();
    ioutil::write_csv(path, &owned(&RV_HEADER), &rows)
}

/// Reads the values of a `volume,rv` CSV, checking that the volume column
/// counts 0, 1, 2, ... without gaps.
pub fn read_rv_values(path: &Path) -> Result<Vec<f64>> {
    let rows = ioutil::read_csv(path, &owned(&RV_HEADER))?;
    let mut values = Vec::with_capacity(rows.len());
    for (i, row) in rows.iter().enumerate() {
        if row[0] != i as f64 {
            return Err(Error::Malformed {
                path: path.display().to_string(),
                row: i + 2,
                msg: format!("expected volume index {i}, found {}", row[0]),
            });
        }
        values.push(row[1]);
    }
    if values.is_empty() {
        return Err(Error::InsufficientData(format!(
            "{}: no RV rows",
            path.display()
        )));
    }
    Ok(values)
}
