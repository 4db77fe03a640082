//! Core timeseries types and per-channel normalization.
//!
//! A scan couples a BOLD matrix (one column per cortical region), a head
//! motion matrix (three translations, three rotations), the volume sampling
//! interval, and optionally the raw respiratory belt trace recorded during
//! acquisition. Respiratory variation (RV) is the population standard
//! deviation of that belt trace inside a 6-second window centred on each
//! volume; [`extract_rv`] turns a trace into one RV value per volume.

mod io;

pub use io::{read_bold_csv, read_motion_csv, read_resp_csv};
pub use io::{read_rv_values, read_scan, read_scan_dir, write_rv_csv, write_scan, MetaJson};
pub use io::{bold_header, BOLD_FILE, META_FILE, MOTION_FILE, MOTION_HEADER, RESP_FILE};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of BOLD regions per scan.
pub const N_ROIS: usize = 90;
/// Number of head-motion channels per scan (3 translations, 3 rotations).
pub const N_MOTION: usize = 6;
/// Half-width of the RV window in seconds (full window: 6 s).
pub const RV_HALF_WINDOW_S: f64 = 3.0;

/// A raw respiratory belt recording with its sampling rate.
#[derive(Debug, Clone, PartialEq)]
pub struct RespiratoryTrace {
    samples: Vec<f64>,
    fs_hz: f64,
}

impl RespiratoryTrace {
    /// Builds a trace, requiring a positive sampling rate and at least one
    /// finite sample.
    pub fn new(samples: Vec<f64>, fs_hz: f64) -> Result<Self> {
        if !(fs_hz.is_finite() && fs_hz > 0.0) {
            return Err(Error::invalid(
                "respiratory trace",
                format!("sampling rate must be positive and finite, got {fs_hz}"),
            ));
        }
        if samples.is_empty() {
            return Err(Error::invalid("respiratory trace", "no samples"));
        }
        if !samples.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                context: "respiratory trace samples".into(),
            });
        }
        Ok(Self { samples, fs_hz })
    }

    /// Belt samples in acquisition order; sample `i` sits at time `i / fs_hz`.
    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    /// Sampling rate in Hz.
    pub fn fs_hz(&self) -> f64 {
        self.fs_hz
    }

    /// Number of samples.
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    /// True when the trace holds no samples (never, by construction).
    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Duration covered by the trace in seconds.
    pub fn duration_s(&self) -> f64 {
        (self.samples.len() - 1) as f64 / self.fs_hz
    }
}

/// Respiratory variation sampled once per volume.
///
/// Values produced by [`extract_rv`] are non-negative by construction;
/// the type itself only requires finiteness so that model outputs in
/// normalized units (which may legitimately be negative) fit as well.
#[derive(Debug, Clone, PartialEq)]
pub struct RvSeries {
    values: Vec<f64>,
    tr_s: f64,
}

impl RvSeries {
    /// Builds a series, requiring a positive volume interval and at least
    /// one finite value.
    pub fn new(values: Vec<f64>, tr_s: f64) -> Result<Self> {
        if !(tr_s.is_finite() && tr_s > 0.0) {
            return Err(Error::invalid(
                "RV series",
                format!("volume interval must be positive and finite, got {tr_s}"),
            ));
        }
        if values.is_empty() {
            return Err(Error::invalid("RV series", "no values"));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                context: "RV series values".into(),
            });
        }
        Ok(Self { values, tr_s })
    }

    /// One value per volume.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Volume sampling interval in seconds.
    pub fn tr_s(&self) -> f64 {
        self.tr_s
    }

    /// Number of volumes.
    pub fn len(&self) -> usize {
        self.values.len()
    }

    /// True when the series holds no values (never, by construction).
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// One fMRI scan: BOLD regions, head motion, timing, and (optionally) the
/// respiratory belt trace recorded alongside.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanRecord {
    scan_id: String,
    bold: Array2<f64>,
    motion: Array2<f64>,
    tr_s: f64,
    pe_axis: usize,
    resp: Option<RespiratoryTrace>,
}

impl ScanRecord {
    /// Builds a scan record.
    ///
    /// Requirements: `bold` is `[T x 90]`, `motion` is `[T x 6]` with the
    /// same `T >= 1`, all values finite, `tr_s > 0`, `pe_axis < 6`, and
    /// `scan_id` is non-empty, free of path separators, and does not start
    /// with a dot (it names files and directories downstream).
    pub fn new(
        scan_id: impl Into<String>,
        bold: Array2<f64>,
        motion: Array2<f64>,
        tr_s: f64,
        pe_axis: usize,
        resp: Option<RespiratoryTrace>,
    ) -> Result<Self> {
        let scan_id = scan_id.into();
        validate_scan_id(&scan_id)?;
        if bold.ncols() != N_ROIS {
            return Err(Error::Shape(format!(
                "scan {scan_id}: BOLD must have {N_ROIS} columns, got {}",
                bold.ncols()
            )));
        }
        if motion.ncols() != N_MOTION {
            return Err(Error::Shape(format!(
                "scan {scan_id}: motion must have {N_MOTION} columns, got {}",
                motion.ncols()
            )));
        }
        if bold.nrows() != motion.nrows() {
            return Err(Error::Shape(format!(
                "scan {scan_id}: BOLD has {} rows but motion has {}",
                bold.nrows(),
                motion.nrows()
            )));
        }
        if bold.nrows() == 0 {
            return Err(Error::invalid("scan", "zero volumes"));
        }
        if !bold.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("BOLD of scan {scan_id}"),
            });
        }
        if !motion.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("motion of scan {scan_id}"),
            });
        }
        if !(tr_s.is_finite() && tr_s > 0.0) {
            return Err(Error::invalid(
                "scan",
                format!("tr_s must be positive and finite, got {tr_s}"),
            ));
        }
        if pe_axis >= N_MOTION {
            return Err(Error::invalid(
                "scan",
                format!("pe_axis must be < {N_MOTION}, got {pe_axis}"),
            ));
        }
        Ok(Self {
            scan_id,
            bold,
            motion,
            tr_s,
            pe_axis,
            resp,
        })
    }

    /// Identifier; used as a directory/file stem by the pipeline.
    pub fn scan_id(&self) -> &str {
        &self.scan_id
    }

    /// `[T x 90]` BOLD matrix, one column per region.
    pub fn bold(&self) -> &Array2<f64> {
        &self.bold
    }

    /// `[T x 6]` motion matrix: translations (mm) then rotations (deg).
    pub fn motion(&self) -> &Array2<f64> {
        &self.motion
    }

    /// Volume sampling interval in seconds.
    pub fn tr_s(&self) -> f64 {
        self.tr_s
    }

    /// Index (0..6) of the motion column along the phase-encoding axis.
    pub fn pe_axis(&self) -> usize {
        self.pe_axis
    }

    /// The raw belt trace, when one was recorded.
    pub fn resp(&self) -> Option<&RespiratoryTrace> {
        self.resp.as_ref()
    }

    /// Number of volumes `T`.
    pub fn n_volumes(&self) -> usize {
        self.bold.nrows()
    }

    /// The motion column along the phase-encoding axis.
    pub fn pe_motion(&self) -> Vec<f64> {
        self.motion.column(self.pe_axis).to_vec()
    }

    /// Same scan with its channel matrices replaced (used to swap in
    /// normalized data while keeping identity and timing).
    pub fn with_channels(&self, bold: Array2<f64>, motion: Array2<f64>) -> Result<Self> {
        Self::new(
            self.scan_id.clone(),
            bold,
            motion,
            self.tr_s,
            self.pe_axis,
            self.resp.clone(),
        )
    }
}

fn validate_scan_id(id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && !id.starts_with('.')
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'));
    if ok {
        Ok(())
    } else {
        Err(Error::invalid(
            "scan_id",
            format!("{id:?} (need non-empty [A-Za-z0-9._-], no leading dot)"),
        ))
    }
}

/// Per-channel location/scale statistics from a training matrix.
///
/// Channels that were constant in the fitting data are flagged; applying
/// the stats maps such channels to zero instead of dividing by zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    /// Per-channel mean.
    pub mean: Vec<f64>,
    /// Per-channel sample standard deviation (0 for constant channels).
    pub std: Vec<f64>,
    /// True where the fitting data was constant.
    pub constant: Vec<bool>,
}

impl ChannelStats {
    /// Computes stats from a `[T x C]` matrix with `T >= 2`.
    ///
    /// A channel counts as constant when its minimum equals its maximum;
    /// this avoids manufacturing a tiny nonzero scale out of rounding noise.
    pub fn from_matrix(m: &Array2<f64>) -> Result<Self> {
        let t = m.nrows();
        if t < 2 {
            return Err(Error::InsufficientData(format!(
                "channel statistics need at least 2 rows, got {t}"
            )));
        }
        let mut mean = Vec::with_capacity(m.ncols());
        let mut std = Vec::with_capacity(m.ncols());
        let mut constant = Vec::with_capacity(m.ncols());
        for col in m.columns() {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            let mut sum = 0.0;
            for &v in col {
                lo = lo.min(v);
                hi = hi.max(v);
                sum += v;
            }
            let mu = sum / t as f64;
            if lo == hi {
                mean.push(mu);
                std.push(0.0);
                constant.push(true);
            } else {
                let ss: f64 = col.iter().map(|&v| (v - mu) * (v - mu)).sum();
                mean.push(mu);
                std.push((ss / (t - 1) as f64).sqrt());
                constant.push(false);
            }
        }
        Ok(Self {
            mean,
            std,
            constant,
        })
    }

    /// Number of channels the stats describe.
    pub fn n_channels(&self) -> usize {
        self.mean.len()
    }

    /// Applies the normalization to a `[T x C]` matrix with matching `C`.
    ///
    /// Constant channels map to zero everywhere: they carried no
    /// information when the stats were fitted, so no scale exists for them.
    pub fn apply(&self, m: &Array2<f64>) -> Result<Array2<f64>> {
        if m.ncols() != self.n_channels() {
            return Err(Error::Shape(format!(
                "normalization fitted on {} channels, matrix has {}",
                self.n_channels(),
                m.ncols()
            )));
        }
        let mut out = m.clone();
        for (j, mut col) in out.columns_mut().into_iter().enumerate() {
            if self.constant[j] {
                col.fill(0.0);
            } else {
                let mu = self.mean[j];
                let sd = self.std[j];
                col.mapv_inplace(|v| (v - mu) / sd);
            }
        }
        Ok(out)
    }

    fn validate(&self) -> Result<()> {
        let n = self.mean.len();
        if self.std.len() != n || self.constant.len() != n {
            return Err(Error::Shape(
                "channel stats fields have differing lengths".into(),
            ));
        }
        let finite = self.mean.iter().chain(self.std.iter()).all(|v| v.is_finite());
        if !finite {
            return Err(Error::NonFinite {
                context: "channel stats".into(),
            });
        }
        if self
            .std
            .iter()
            .zip(&self.constant)
            .any(|(&s, &c)| if c { s != 0.0 } else { s <= 0.0 })
        {
            return Err(Error::invalid(
                "channel stats",
                "std must be 0 exactly for constant channels and positive otherwise",
            ));
        }
        Ok(())
    }

    /// Validates a deserialized instance (lengths agree, scales coherent).
    pub fn validated(self) -> Result<Self> {
        self.validate()?;
        Ok(self)
    }
}

/// Z-scores every column of a `[T x C]` matrix.
///
/// Uses the sample standard deviation (denominator `T - 1`). Constant
/// columns become all-zero rather than dividing by a spurious scale.
/// Returns the normalized matrix together with the fitted stats so the
/// identical transform can be replayed on other data.
pub fn zscore_channels(m: &Array2<f64>) -> Result<(Array2<f64>, ChannelStats)> {
    let stats = ChannelStats::from_matrix(m)?;
    let z = stats.apply(m)?;
    Ok((z, stats))
}

/// Index range (inclusive) of belt samples inside the RV window of `volume`.
///
/// The window covers `(volume + 0.5) * tr_s ± 3 s`, clamped to the trace.
/// Returns `None` when the window lies entirely outside the recording.
pub(crate) fn rv_window_bounds(
    volume: usize,
    tr_s: f64,
    fs_hz: f64,
    n_samples: usize,
) -> Option<(usize, usize)> {
    let centre = (volume as f64 + 0.5) * tr_s;
    let lo_t = centre - RV_HALF_WINDOW_S;
    let hi_t = centre + RV_HALF_WINDOW_S;
    let lo = (lo_t * fs_hz).ceil().max(0.0) as usize;
    let hi_raw = (hi_t * fs_hz).floor();
    if hi_raw < 0.0 {
        return None;
    }
    let hi = (hi_raw as usize).min(n_samples - 1);
    if lo >= n_samples || lo > hi {
        return None;
    }
    Some((lo, hi))
}

/// Extracts respiratory variation: the population standard deviation of the
/// belt trace in a 6-second window centred on each volume.
///
/// Window `t` is centred at `(t + 0.5) * tr_s` and clamped at the
/// recording's edges. A window that catches fewer than two samples is an
/// error ([`Error::DegenerateWindow`]): a standard deviation of less than
/// two points would be silently meaningless.
pub fn extract_rv(trace: &RespiratoryTrace, tr_s: f64, n_volumes: usize) -> Result<RvSeries> {
    if !(tr_s.is_finite() && tr_s > 0.0) {
        return Err(Error::invalid(
            "extract_rv",
            format!("tr_s must be positive and finite, got {tr_s}"),
        ));
    }
    if n_volumes == 0 {
        return Err(Error::invalid("extract_rv", "n_volumes must be >= 1"));
    }
    let xs = trace.samples();
    let mut values = Vec::with_capacity(n_volumes);
    for t in 0..n_volumes {
        let (lo, hi) = rv_window_bounds(t, tr_s, trace.fs_hz(), xs.len()).ok_or(
            Error::DegenerateWindow {
                volume: t,
                n_samples: 0,
            },
        )?;
        let n = hi - lo + 1;
        if n < 2 {
            return Err(Error::DegenerateWindow {
                volume: t,
                n_samples: n,
            });
        }
        let w = &xs[lo..=hi];
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        let mut sum = 0.0;
        for &v in w {
            min = min.min(v);
            max = max.max(v);
            sum += v;
        }
        if min == max {
            // A flat window has zero spread by definition; computing it
            // through the mean would leave rounding residue.
            values.push(0.0);
            continue;
        }
        let mu = sum / n as f64;
        let ss: f64 = w.iter().map(|&v| (v - mu) * (v - mu)).sum();
        values.push((ss / n as f64).sqrt());
    }
    RvSeries::new(values, tr_s)
}
