//! Sliding-window example construction for the three-model scheme.
//!
//! A single centred window cannot predict the first or last `half`
//! volumes of a scan (the window would run off the edge), so three models
//! share the work:
//!
//! * **beginning** - one window over the first `window_len` volumes
//!   predicts the first `half` RV values at once;
//! * **middle** - a window slides one volume at a time and predicts the RV
//!   value at its centre, covering volumes `half .. T - half`;
//! * **end** - one window over the last `window_len` volumes predicts the
//!   final `half` RV values at once.
//!
//! [`stitch`] concatenates the three predictions into one full-length
//! series: every volume is covered exactly once.
//!
//! Windows are never materialized en masse: a dataset keeps one `[T x C]`
//! matrix per scan plus `(scan, start)` records, and [`WindowedDataset::gather`]
//! copies only the rows a batch needs.

use std::io::Read;
use std::path::Path;

use ndarray::{s, Array2, Array3, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::timeseries::{RvSeries, ScanRecord, N_MOTION, N_ROIS};

/// Default analysis window length in volumes.
pub const DEFAULT_WINDOW_LEN: usize = 65;

/// Which input channels a model consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelMode {
    /// BOLD regions only (90 channels).
    BoldOnly,
    /// BOLD regions plus head motion (96 channels).
    BoldPlusMotion,
}

impl ChannelMode {
    /// Number of channels the mode selects.
    pub fn n_channels(self) -> usize {
        match self {
            ChannelMode::BoldOnly => N_ROIS,
            ChannelMode::BoldPlusMotion => N_ROIS + N_MOTION,
        }
    }

    /// The mode that selects exactly `n` channels.
    pub fn from_n_channels(n: usize) -> Result<Self> {
        match n {
            x if x == N_ROIS => Ok(ChannelMode::BoldOnly),
            x if x == N_ROIS + N_MOTION => Ok(ChannelMode::BoldPlusMotion),
            other => Err(Error::ChannelMode(format!(
                "no channel mode selects {other} channels (expected {} or {})",
                N_ROIS,
                N_ROIS + N_MOTION
            ))),
        }
    }

    /// Stable textual name (`bold_only` / `bold_plus_motion`).
    pub fn as_str(self) -> &'static str {
        match self {
            ChannelMode::BoldOnly => "bold_only",
            ChannelMode::BoldPlusMotion => "bold_plus_motion",
        }
    }
}

impl std::str::FromStr for ChannelMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bold_only" => Ok(ChannelMode::BoldOnly),
            "bold_plus_motion" => Ok(ChannelMode::BoldPlusMotion),
            other => Err(Error::ChannelMode(format!(
                "unknown channel mode {other:?} (expected bold_only or bold_plus_motion)"
            ))),
        }
    }
}

impl std::fmt::Display for ChannelMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which span of the scan a model covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// One window at the start predicting the first `half` volumes.
    Beginning,
    /// Sliding windows predicting their centre volume.
    Middle,
    /// One window at the end predicting the last `half` volumes.
    End,
}

impl Method {
    /// All methods in stitch order.
    pub const ALL: [Method; 3] = [Method::Beginning, Method::Middle, Method::End];

    /// Stable textual name.
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Beginning => "beginning",
            Method::Middle => "middle",
            Method::End => "end",
        }
    }

    /// Output dimension of a model trained for this method.
    pub fn out_dim(self, spec: &WindowSpec) -> usize {
        match self {
            Method::Middle => 1,
            Method::Beginning | Method::End => spec.half(),
        }
    }

    fn to_u64(self) -> u64 {
        match self {
            Method::Beginning => 1,
            Method::Middle => 2,
            Method::End => 3,
        }
    }

    fn from_u64(v: u64) -> Option<Self> {
        match v {
            1 => Some(Method::Beginning),
            2 => Some(Method::Middle),
            3 => Some(Method::End),
            _ => None,
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Geometry of one analysis window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowSpec {
    window_len: usize,
    n_channels: usize,
}

impl WindowSpec {
    /// Builds a spec: `window_len` odd and at least 3, `n_channels`
    /// either 90 (BOLD only) or 96 (BOLD plus motion).
    pub fn new(window_len: usize, n_channels: usize) -> Result<Self> {
        if window_len < 3 || window_len % 2 == 0 {
            return Err(Error::invalid(
                "window spec",
                format!("window_len must be odd and >= 3, got {window_len}"),
            ));
        }
        ChannelMode::from_n_channels(n_channels)?;
        Ok(Self {
            window_len,
            n_channels,
        })
    }

    /// Window length in volumes (odd).
    pub fn window_len(&self) -> usize {
        self.window_len
    }

    /// Channels per window row.
    pub fn n_channels(&self) -> usize {
        self.n_channels
    }

    /// Half-width: `(window_len - 1) / 2` volumes on each side.
    pub fn half(&self) -> usize {
        (self.window_len - 1) / 2
    }

    /// The channel mode implied by `n_channels`.
    pub fn channel_mode(&self) -> ChannelMode {
        ChannelMode::from_n_channels(self.n_channels).expect("validated at construction")
    }
}

/// Extracts the channel matrix a mode sees: `[T x 90]` for BOLD only,
/// `[T x 96]` with the six motion columns appended for BOLD plus motion.
pub fn select_channels(scan: &ScanRecord, mode: ChannelMode) -> Array2<f64> {
    match mode {
        ChannelMode::BoldOnly => scan.bold().clone(),
        ChannelMode::BoldPlusMotion => {
            ndarray::concatenate(Axis(1), &[scan.bold().view(), scan.motion().view()])
                .expect("row counts agree by ScanRecord construction")
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct WindowRef {
    scan: usize,
    start: usize,
}

/// A set of training/evaluation examples: windows over one or more scans
/// plus their RV targets.
///
/// Logically the inputs form an `[N x window_len x n_channels]` stack, but
/// storage stays at one matrix per scan; windows are cheap `(scan, start)`
/// references materialized per batch by [`WindowedDataset::gather`].
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedDataset {
    spec: WindowSpec,
    method: Method,
    scan_ids: Vec<String>,
    matrices: Vec<Array2<f64>>,
    windows: Vec<WindowRef>,
    targets: Array2<f64>,
}

impl WindowedDataset {
    /// Window geometry.
    pub fn spec(&self) -> &WindowSpec {
        &self.spec
    }

    /// Which span the examples cover.
    pub fn method(&self) -> Method {
        self.method
    }

    /// Number of windows.
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    /// True when the dataset holds no windows.
    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    /// Number of distinct scans contributing windows.
    pub fn n_scans(&self) -> usize {
        self.scan_ids.len()
    }

    /// Values predicted per window (1 for middle, `half` otherwise).
    pub fn target_dim(&self) -> usize {
        self.targets.ncols()
    }

    /// `[N x target_dim]` target matrix.
    pub fn targets(&self) -> &Array2<f64> {
        &self.targets
    }

    /// Scan the `i`-th window came from.
    pub fn scan_id_of(&self, i: usize) -> &str {
        &self.scan_ids[self.windows[i].scan]
    }

    /// First scan row covered by the `i`-th window.
    pub fn window_start(&self, i: usize) -> usize {
        self.windows[i].start
    }

    /// `[window_len x n_channels]` view of the `i`-th window.
    pub fn input(&self, i: usize) -> ArrayView2<'_, f64> {
        let w = self.windows[i];
        self.matrices[w.scan]
            .slice(ndarray::s![w.start..w.start + self.spec.window_len, ..])
    }

    /// Materializes the windows at `indices` (in that order) as a batch:
    /// inputs `[B x window_len x C]`, targets `[B x target_dim]`.
    ///
    /// Indices must be in range; this is the only point where window data
    /// is copied.
    pub fn gather(&self, indices: &[usize]) -> (Array3<f64>, Array2<f64>) {
        let b = indices.len();
        let wl = self.spec.window_len;
        let c = self.spec.n_channels;
        let mut inputs = Array3::zeros((b, wl, c));
        let mut targets = Array2::zeros((b, self.target_dim()));
        for (row, &i) in indices.iter().enumerate() {
            inputs.index_axis_mut(Axis(0), row).assign(&self.input(i));
            targets.row_mut(row).assign(&self.targets.row(i));
        }
        (inputs, targets)
    }

    /// Merges datasets built with identical spec and method into one.
    pub fn merge(parts: Vec<WindowedDataset>) -> Result<WindowedDataset> {
        let Some(first) = parts.first() else {
            return Err(Error::invalid("merge", "no datasets given"));
        };
        let spec = first.spec;
        let method = first.method;
        if parts
            .iter()
            .any(|p| p.spec != spec || p.method != method)
        {
            return Err(Error::invalid(
                "merge",
                "datasets disagree on window spec or method",
            ));
        }
        let n_windows: usize = parts.iter().map(|p| p.len()).sum();
        let target_dim = first.target_dim();
        let mut scan_ids = Vec::new();
        let mut matrices = Vec::new();
        let mut windows = Vec::with_capacity(n_windows);
        let mut targets = Array2::zeros((n_windows, target_dim));
        let mut row = 0;
        for part in parts {
            let base = matrices.len();
            scan_ids.extend(part.scan_ids);
            matrices.extend(part.matrices);
            for w in part.windows {
                windows.push(WindowRef {
                    scan: base + w.scan,
                    start: w.start,
                });
            }
            for r in part.targets.rows() {
                targets.row_mut(row).assign(&r);
                row += 1;
            }
        }
        Ok(WindowedDataset {
            spec,
            method,
            scan_ids,
            matrices,
            windows,
            targets,
        })
    }
}

/// Builds the windows and targets of one scan for one method.
///
/// The scan's channels are taken as given (the caller normalizes them
/// beforehand when normalization is wanted); `rv` supplies the targets
/// and must cover all `T` volumes at the scan's own sampling interval.
/// The scan must span at least one window (`T >= window_len`).
pub fn build_windows(
    scan: &ScanRecord,
    rv: &RvSeries,
    spec: &WindowSpec,
    method: Method,
) -> Result<WindowedDataset> {
    let t = scan.n_volumes();
    let wl = spec.window_len();
    let half = spec.half();
    if t < wl {
        return Err(Error::ScanTooShort { t, needed: wl });
    }
    if rv.len() != t {
        return Err(Error::Shape(format!(
            "scan {} has {t} volumes but the RV series has {}",
            scan.scan_id(),
            rv.len()
        )));
    }
    if rv.tr_s() != scan.tr_s() {
        return Err(Error::invalid(
            "build_windows",
            format!(
                "RV series interval {} s differs from scan interval {} s",
                rv.tr_s(),
                scan.tr_s()
            ),
        ));
    }
    let matrix = select_channels(scan, spec.channel_mode());
    let values = rv.values();
    let (windows, targets) = match method {
        Method::Middle => {
            let n = t - wl + 1;
            let windows: Vec<WindowRef> =
                (0..n).map(|start| WindowRef { scan: 0, start }).collect();
            let targets =
                Array2::from_shape_fn((n, 1), |(i, _)| values[i + half]);
            (windows, targets)
        }
        Method::Beginning => {
            let windows = vec![WindowRef { scan: 0, start: 0 }];
            let targets = Array2::from_shape_vec((1, half), values[..half].to_vec())
                .expect("target length equals half");
            (windows, targets)
        }
        Method::End => {
            let windows = vec![WindowRef {
                scan: 0,
                start: t - wl,
            }];
            let targets = Array2::from_shape_vec((1, half), values[t - half..].to_vec())
                .expect("target length equals half");
            (windows, targets)
        }
    };
    Ok(WindowedDataset {
        spec: *spec,
        method,
        scan_ids: vec![scan.scan_id().to_string()],
        matrices: vec![matrix],
        windows,
        targets,
    })
}

/// Extracts the input windows of one scan for one method, without
/// targets (for inference, where no measured RV exists).
///
/// Row order matches [`build_windows`]: the beginning and end methods
/// yield a single window (the first and last, respectively); the middle
/// method yields all `T - window_len + 1` sliding windows in start order.
pub fn prediction_windows(
    scan: &ScanRecord,
    spec: &WindowSpec,
    method: Method,
) -> Result<Array3<f64>> {
    let t = scan.n_volumes();
    let wl = spec.window_len();
    if t < wl {
        return Err(Error::ScanTooShort { t, needed: wl });
    }
    let matrix = select_channels(scan, spec.channel_mode());
    let starts: Vec<usize> = match method {
        Method::Beginning => vec![0],
        Method::End => vec![t - wl],
        Method::Middle => (0..t - wl + 1).collect(),
    };
    let mut out = Array3::zeros((starts.len(), wl, spec.n_channels()));
    for (i, &start) in starts.iter().enumerate() {
        out.index_axis_mut(Axis(0), i)
            .assign(&matrix.slice(s![start..start + wl, ..]));
    }
    Ok(out)
}

/// Concatenates the three per-method predictions into one RV series.
///
/// `beginning` covers volumes `0 .. half`, `middle` covers
/// `half .. t - half` (one value per sliding window, in order), and `end`
/// covers `t - half .. t`; together they tile all `t` volumes exactly
/// once. Lengths are checked against the spec.
pub fn stitch(
    beginning: &[f64],
    middle: &[f64],
    end: &[f64],
    t: usize,
    spec: &WindowSpec,
    tr_s: f64,
) -> Result<RvSeries> {
    let wl = spec.window_len();
    let half = spec.half();
    if t < wl {
        return Err(Error::ScanTooShort { t, needed: wl });
    }
    let mid_len = t - wl + 1;
    if beginning.len() != half || end.len() != half || middle.len() != mid_len {
        return Err(Error::Shape(format!(
            "stitch for {t} volumes needs segment lengths {half}/{mid_len}/{half}, \
             got {}/{}/{}",
            beginning.len(),
            middle.len(),
            end.len()
        )));
    }
    let mut values = Vec::with_capacity(t);
    values.extend_from_slice(beginning);
    values.extend_from_slice(middle);
    values.extend_from_slice(end);
    debug_assert_eq!(values.len(), t);
    RvSeries::new(values, tr_s)
}

const CACHE_MAGIC: &[u8; 16] = b"RVRECONWDSCACHE1";

fn push_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn push_f64s<'a>(out: &mut Vec<u8>, vals: impl Iterator<Item = &'a f64>) {
    for &v in vals {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct CacheReader<'a> {
    path: &'a Path,
    data: &'a [u8],
    pos: usize,
}

impl<'a> CacheReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(Error::Malformed {
                path: self.path.display().to_string(),
                row: 0,
                msg: "truncated dataset cache".into(),
            });
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    fn usize_bounded(&mut self, what: &str, max: usize) -> Result<usize> {
        let v = self.u64()?;
        if v > max as u64 {
            return Err(Error::Malformed {
                path: self.path.display().to_string(),
                row: 0,
                msg: format!("{what} {v} exceeds limit {max}"),
            });
        }
        Ok(v as usize)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let b = self.take(n * 8)?;
        Ok(b.chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

impl WindowedDataset {
    /// Writes the dataset as a binary cache file.
    ///
    /// The format (16-byte magic/version, little-endian `u64` dimensions,
    /// row-major little-endian `f64` payloads) is a private cache format:
    /// it is not stable across versions, and readers refuse files whose
    /// magic does not match exactly.
    pub fn write_cache(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        out.extend_from_slice(CACHE_MAGIC);
        push_u64(&mut out, self.spec.window_len as u64);
        push_u64(&mut out, self.spec.n_channels as u64);
        push_u64(&mut out, self.method.to_u64());
        push_u64(&mut out, self.scan_ids.len() as u64);
        push_u64(&mut out, self.windows.len() as u64);
        push_u64(&mut out, self.target_dim() as u64);
        for (id, m) in self.scan_ids.iter().zip(&self.matrices) {
            push_u64(&mut out, id.len() as u64);
            out.extend_from_slice(id.as_bytes());
            push_u64(&mut out, m.nrows() as u64);
            push_f64s(&mut out, m.iter());
        }
        for w in &self.windows {
            push_u64(&mut out, w.scan as u64);
            push_u64(&mut out, w.start as u64);
        }
        push_f64s(&mut out, self.targets.iter());
        crate::ioutil::write_bytes(path, &out)
    }

    /// Reads a cache file written by [`WindowedDataset::write_cache`].
    pub fn read_cache(path: &Path) -> Result<Self> {
        let mut data = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut data))
            .map_err(|e| Error::io(path, e))?;
        let mut r = CacheReader {
            path,
            data: &data,
            pos: 0,
        };
        if r.take(16)? != CACHE_MAGIC {
            return Err(Error::Schema {
                path: path.display().to_string(),
                msg: "not a dataset cache file (bad magic/version)".into(),
            });
        }
        const LIMIT: usize = 1 << 32;
        let window_len = r.usize_bounded("window_len", LIMIT)?;
        let n_channels = r.usize_bounded("n_channels", LIMIT)?;
        let spec = WindowSpec::new(window_len, n_channels)?;
        let method_raw = r.u64()?;
        let method = Method::from_u64(method_raw).ok_or_else(|| Error::Malformed {
            path: path.display().to_string(),
            row: 0,
            msg: format!("unknown method tag {method_raw}"),
        })?;
        let n_scans = r.usize_bounded("scan count", LIMIT)?;
        let n_windows = r.usize_bounded("window count", LIMIT)?;
        let target_dim = r.usize_bounded("target dim", LIMIT)?;
        let mut scan_ids = Vec::with_capacity(n_scans);
        let mut matrices = Vec::with_capacity(n_scans);
        for _ in 0..n_scans {
            let id_len = r.usize_bounded("scan id length", 4096)?;
            let id = String::from_utf8(r.take(id_len)?.to_vec()).map_err(|_| {
                Error::Malformed {
                    path: path.display().to_string(),
                    row: 0,
                    msg: "scan id is not UTF-8".into(),
                }
            })?;
            let t = r.usize_bounded("matrix rows", LIMIT)?;
            let flat = r.f64s(t * n_channels)?;
            let m = Array2::from_shape_vec((t, n_channels), flat)
                .expect("shape matches read length");
            scan_ids.push(id);
            matrices.push(m);
        }
        let mut windows = Vec::with_capacity(n_windows);
        for _ in 0..n_windows {
            let scan = r.usize_bounded("window scan index", LIMIT)?;
            let start = r.usize_bounded("window start", LIMIT)?;
            if scan >= matrices.len() || start + window_len > matrices[scan].nrows() {
                return Err(Error::Malformed {
                    path: path.display().to_string(),
                    row: 0,
                    msg: format!("window ({scan}, {start}) out of bounds"),
                });
            }
            windows.push(WindowRef { scan, start });
        }
        let flat = r.f64s(n_windows * target_dim)?;
        if r.pos != data.len() {
            return Err(Error::Malformed {
                path: path.display().to_string(),
                row: 0,
                msg: "trailing bytes after dataset cache payload".into(),
            });
        }
        let targets = Array2::from_shape_vec((n_windows, target_dim), flat)
            .expect("shape matches read length");
        Ok(WindowedDataset {
            spec,
            method,
            scan_ids,
            matrices,
            windows,
            targets,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn test_scan(id: &str, t: usize, seed: u64) -> (ScanRecord, RvSeries) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let bold = Array2::from_shape_fn((t, N_ROIS), |_| rng.random::<f64>());
        let motion = Array2::from_shape_fn((t, N_MOTION), |_| rng.random::<f64>());
        let scan = ScanRecord::new(id, bold, motion, 0.72, 1, None).unwrap();
        let rv = RvSeries::new((0..t).map(|i| 1.0 + i as f64).collect(), 0.72).unwrap();
        (scan, rv)
    }

    fn spec96() -> WindowSpec {
        WindowSpec::new(DEFAULT_WINDOW_LEN, 96).unwrap()
    }

    #[test]
    fn window_spec_validates() {
        assert!(WindowSpec::new(65, 96).is_ok());
        assert!(WindowSpec::new(65, 90).is_ok());
        assert!(WindowSpec::new(64, 96).is_err());
        assert!(WindowSpec::new(1, 96).is_err());
        assert!(WindowSpec::new(65, 91).is_err());
        assert_eq!(spec96().half(), 32);
    }

    #[test]
    fn middle_windows_cover_the_interior() {
        let (scan, rv) = test_scan("a", 1200, 1);
        let ds = build_windows(&scan, &rv, &spec96(), Method::Middle).unwrap();
        assert_eq!(ds.len(), 1136);
        assert_eq!(ds.target_dim(), 1);
        // Window 0 covers rows 0..65 and targets volume 32 (the 33rd).
        assert_eq!(ds.window_start(0), 0);
        assert_eq!(ds.targets()[(0, 0)], rv.values()[32]);
        // The last window starts at 1135 and targets volume 1167 (the 1168th).
        assert_eq!(ds.window_start(1135), 1135);
        assert_eq!(ds.targets()[(1135, 0)], rv.values()[1167]);
    }

    #[test]
    fn beginning_and_end_windows_cover_the_edges() {
        let (scan, rv) = test_scan("a", 1200, 2);
        let spec = spec96();
        let b = build_windows(&scan, &rv, &spec, Method::Beginning).unwrap();
        assert_eq!(b.len(), 1);
        assert_eq!(b.target_dim(), 32);
        assert_eq!(b.window_start(0), 0);
        assert_eq!(b.targets().row(0).to_vec(), rv.values()[..32].to_vec());
        let e = build_windows(&scan, &rv, &spec, Method::End).unwrap();
        assert_eq!(e.len(), 1);
        assert_eq!(e.window_start(0), 1135);
        assert_eq!(e.targets().row(0).to_vec(), rv.values()[1168..].to_vec());
    }

    #[test]
    fn prediction_windows_match_training_inputs() {
        let (scan, rv) = test_scan("a", 200, 9);
        let spec = spec96();
        for method in Method::ALL {
            let ds = build_windows(&scan, &rv, &spec, method).unwrap();
            let all: Vec<usize> = (0..ds.len()).collect();
            let (inputs, _) = ds.gather(&all);
            let pred = prediction_windows(&scan, &spec, method).unwrap();
            assert_eq!(pred, inputs, "{method:?}");
        }
        let (short, _) = test_scan("b", 64, 10);
        assert!(matches!(
            prediction_windows(&short, &spec, Method::Middle),
            Err(Error::ScanTooShort { t: 64, needed: 65 })
        ));
    }

    #[test]
    fn shortest_legal_scan_has_one_middle_window() {
        let (scan, rv) = test_scan("a", 65, 3);
        let ds = build_windows(&scan, &rv, &spec96(), Method::Middle).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.targets()[(0, 0)], rv.values()[32]);
        let (scan, rv) = test_scan("a", 64, 3);
        let err = build_windows(&scan, &rv, &spec96(), Method::Middle).unwrap_err();
        assert!(matches!(err, Error::ScanTooShort { t: 64, needed: 65 }), "{err}");
    }

    #[test]
    fn rv_length_and_interval_must_match() {
        let (scan, _) = test_scan("a", 100, 4);
        let short_rv = RvSeries::new(vec![1.0; 99], 0.72).unwrap();
        assert!(build_windows(&scan, &short_rv, &spec96(), Method::Middle).is_err());
        let wrong_tr = RvSeries::new(vec![1.0; 100], 0.8).unwrap();
        assert!(build_windows(&scan, &wrong_tr, &spec96(), Method::Middle).is_err());
    }

    #[test]
    fn select_channels_appends_motion_last() {
        let (scan, _) = test_scan("a", 70, 5);
        let m = select_channels(&scan, ChannelMode::BoldPlusMotion);
        assert_eq!(m.ncols(), 96);
        for t in 0..70 {
            for j in 0..N_ROIS {
                assert_eq!(m[(t, j)], scan.bold()[(t, j)]);
            }
            for j in 0..N_MOTION {
                assert_eq!(m[(t, N_ROIS + j)], scan.motion()[(t, j)]);
            }
        }
        let b = select_channels(&scan, ChannelMode::BoldOnly);
        assert_eq!(b, *scan.bold());
    }

    #[test]
    fn input_view_matches_scan_rows() {
        let (scan, rv) = test_scan("a", 100, 6);
        let ds = build_windows(&scan, &rv, &spec96(), Method::Middle).unwrap();
        let full = select_channels(&scan, ChannelMode::BoldPlusMotion);
        let w = ds.input(7);
        assert_eq!(w.nrows(), 65);
        for r in 0..65 {
            for c in 0..96 {
                assert_eq!(w[(r, c)], full[(7 + r, c)]);
            }
        }
    }

    #[test]
    fn gather_materializes_requested_windows_in_order() {
        let (scan, rv) = test_scan("a", 100, 7);
        let ds = build_windows(&scan, &rv, &spec96(), Method::Middle).unwrap();
        let (inputs, targets) = ds.gather(&[5, 2, 11]);
        assert_eq!(inputs.dim(), (3, 65, 96));
        assert_eq!(targets.dim(), (3, 1));
        for (row, &i) in [5usize, 2, 11].iter().enumerate() {
            assert_eq!(inputs.index_axis(Axis(0), row), ds.input(i));
            assert_eq!(targets[(row, 0)], ds.targets()[(i, 0)]);
        }
    }

    #[test]
    fn merge_concatenates_and_keeps_provenance() {
        let (scan_a, rv_a) = test_scan("a", 80, 8);
        let (scan_b, rv_b) = test_scan("b", 70, 9);
        let spec = spec96();
        let da = build_windows(&scan_a, &rv_a, &spec, Method::Middle).unwrap();
        let db = build_windows(&scan_b, &rv_b, &spec, Method::Middle).unwrap();
        let (la, lb) = (da.len(), db.len());
        let merged = WindowedDataset::merge(vec![da.clone(), db.clone()]).unwrap();
        assert_eq!(merged.len(), la + lb);
        assert_eq!(merged.n_scans(), 2);
        assert_eq!(merged.scan_id_of(0), "a");
        assert_eq!(merged.scan_id_of(la), "b");
        assert_eq!(merged.input(la + 3), db.input(3));
        assert_eq!(merged.targets()[(la + 3, 0)], db.targets()[(3, 0)]);
        // Mixed methods refuse to merge.
        let de = build_windows(&scan_b, &rv_b, &spec, Method::End).unwrap();
        assert!(WindowedDataset::merge(vec![da, de]).is_err());
    }

    #[test]
    fn stitch_concatenates_exactly_once() {
        let spec = spec96();
        for t in [65usize, 130, 1200] {
            let half = spec.half();
            let mid = t - spec.window_len() + 1;
            let b: Vec<f64> = (0..half).map(|i| 1_000.0 + i as f64).collect();
            let m: Vec<f64> = (0..mid).map(|i| 2_000.0 + i as f64).collect();
            let e: Vec<f64> = (0..half).map(|i| 3_000.0 + i as f64).collect();
            let rv = stitch(&b, &m, &e, t, &spec, 0.72).unwrap();
            assert_eq!(rv.len(), t);
            assert_eq!(&rv.values()[..half], &b[..]);
            assert_eq!(&rv.values()[half..t - half], &m[..]);
            assert_eq!(&rv.values()[t - half..], &e[..]);
        }
    }

    #[test]
    fn stitch_rejects_wrong_segment_lengths() {
        let spec = spec96();
        let b = vec![0.0; 32];
        let m = vec![0.0; 1136];
        let e = vec![0.0; 32];
        assert!(stitch(&b, &m, &e, 1200, &spec, 0.72).is_ok());
        assert!(stitch(&b[1..], &m, &e, 1200, &spec, 0.72).is_err());
        assert!(stitch(&b, &m[1..], &e, 1200, &spec, 0.72).is_err());
        assert!(stitch(&b, &m, &e, 1199, &spec, 0.72).is_err());
        assert!(stitch(&b, &m, &e, 64, &spec, 0.72).is_err());
    }

    #[test]
    fn cache_round_trip_is_identity() {
        let (scan_a, rv_a) = test_scan("a", 80, 10);
        let (scan_b, rv_b) = test_scan("b", 90, 11);
        let spec = spec96();
        let ds = WindowedDataset::merge(vec![
            build_windows(&scan_a, &rv_a, &spec, Method::Middle).unwrap(),
            build_windows(&scan_b, &rv_b, &spec, Method::Middle).unwrap(),
        ])
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.bin");
        ds.write_cache(&path).unwrap();
        let back = WindowedDataset::read_cache(&path).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn cache_refuses_foreign_and_truncated_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.bin");
        std::fs::write(&path, b"definitely not a cache").unwrap();
        assert!(WindowedDataset::read_cache(&path).is_err());

        let (scan, rv) = test_scan("a", 70, 12);
        let ds = build_windows(&scan, &rv, &spec96(), Method::Middle).unwrap();
        ds.write_cache(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 9]).unwrap();
        assert!(WindowedDataset::read_cache(&path).is_err());
        std::fs::write(&path, [&bytes[..], &[0u8; 4]].concat()).unwrap();
        assert!(WindowedDataset::read_cache(&path).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        #[test]
        fn stitch_partitions_every_scan_length() {
            // Exhaustive over T = 65..=265: the three segments tile 0..T.
            let spec = spec96();
            let half = spec.half();
            for t in spec.window_len()..=265 {
                let mid = t - spec.window_len() + 1;
                let b = vec![1.0; half];
                let m = vec![2.0; mid];
                let e = vec![3.0; half];
                let rv = stitch(&b, &m, &e, t, &spec, 1.0).unwrap();
                let mut counts = vec![0usize; t];
                for (i, &v) in rv.values().iter().enumerate() {
                    counts[i] += 1;
                    let expect = if i < half {
                        1.0
                    } else if i < t - half {
                        2.0
                    } else {
                        3.0
                    };
                    assert_eq!(v, expect, "volume {i} of T={t}");
                }
                assert!(counts.iter().all(|&c| c == 1));
            }
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]

            #[test]
            fn middle_window_count_and_targets(
                t in 65usize..300,
                seed in any::<u64>(),
            ) {
                let (scan, rv) = test_scan("p", t, seed);
                let ds = build_windows(&scan, &rv, &spec96(), Method::Middle).unwrap();
                prop_assert_eq!(ds.len(), t - 64);
                for i in 0..ds.len() {
                    prop_assert_eq!(ds.targets()[(i, 0)], rv.values()[i + 32]);
                }
            }

            #[test]
            fn build_windows_is_deterministic(t in 65usize..200, seed in any::<u64>()) {
                let (scan, rv) = test_scan("p", t, seed);
                let a = build_windows(&scan, &rv, &spec96(), Method::Middle).unwrap();
                let b = build_windows(&scan, &rv, &spec96(), Method::Middle).unwrap();
                prop_assert_eq!(a, b);
            }
        }
    }
}
