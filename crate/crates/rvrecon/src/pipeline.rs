//! Experiment orchestration: k-fold cross-validation over scans, per-fold
//! training of the three segment models in each channel mode, full-scan
//! stitching, metric aggregation, and the mode comparison.
//!
//! Normalization policy: input channels and targets are normalized with
//! statistics pooled over the training scans of a fold. Test-scan
//! statistics are never consulted (that would leak the answer). Metrics
//! are computed in the shared normalized target space; prediction files
//! are written in raw units (mapped back through the train statistics).

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use ndarray::{concatenate, s, Array2, Array3, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{
    build_windows, prediction_windows, stitch, ChannelMode, Method, WindowSpec,
    DEFAULT_WINDOW_LEN,
};
use crate::error::{Error, Result};
use crate::ioutil;
use crate::metrics::{friedman_test, FriedmanResult, ScanMetrics};
use crate::neuralnet::{fit, reference_arch, ModelCheckpoint, NormStats, TargetStats, TrainConfig};
use crate::timeseries::read_scan_dir;
use crate::timeseries::{extract_rv, ChannelStats, RvSeries, ScanRecord, N_ROIS};

/// Everything a cross-validation experiment needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Scan directories, or parents whose immediate subdirectories are
    /// scan directories (anything containing `bold.csv` counts).
    pub scan_dirs: Vec<String>,
    /// Number of cross-validation folds.
    pub k_folds: usize,
    /// Input window length in volumes.
    pub window_len: usize,
    /// Channel modes to run and compare.
    pub modes: Vec<ChannelMode>,
    /// Optimizer settings; its `seed` field is ignored here, the per-fold
    /// seed is `master_seed + fold_index`.
    pub train: TrainConfig,
    /// Normalize training targets with pooled train-set statistics.
    pub zscore_targets: bool,
    /// Where report files are written.
    pub output_dir: String,
    /// Governs fold shuffling and per-fold training seeds.
    pub master_seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scan_dirs: Vec::new(),
            k_folds: 10,
            window_len: DEFAULT_WINDOW_LEN,
            modes: vec![ChannelMode::BoldOnly, ChannelMode::BoldPlusMotion],
            train: TrainConfig::default(),
            zscore_targets: true,
            output_dir: "results".into(),
            master_seed: 0,
        }
    }
}

impl ExperimentConfig {
    /// Rejects configurations the experiment cannot run with.
    pub fn validate(&self) -> Result<()> {
        if self.scan_dirs.is_empty() {
            return Err(Error::invalid("experiment config", "no scan directories"));
        }
        if self.k_folds < 2 {
            return Err(Error::Split(format!(
                "k_folds must be >= 2, got {}",
                self.k_folds
            )));
        }
        if self.modes.is_empty() {
            return Err(Error::invalid("experiment config", "no channel modes"));
        }
        let unique: BTreeSet<&str> = self.modes.iter().map(|m| m.as_str()).collect();
        if unique.len() != self.modes.len() {
            return Err(Error::invalid("experiment config", "duplicate channel modes"));
        }
        for mode in &self.modes {
            WindowSpec::new(self.window_len, mode.n_channels())?;
        }
        self.train.validate()
    }
}

/// SHA-256 of the canonical (compact, 17-significant-digit) JSON encoding
/// of the config; recorded in reports so results can be traced to the
/// exact configuration that produced them.
pub fn config_hash(config: &ExperimentConfig) -> Result<String> {
    let bytes = ioutil::to_json_vec("experiment config", config)?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

/// Splits scan ids into `k` disjoint test sets: seeded shuffle, then a
/// contiguous partition with fold sizes differing by at most one.
/// Splitting is by whole scan, so no window of a test scan is ever seen
/// in training.
pub fn kfold_split(scan_ids: &[String], k: usize, seed: u64) -> Result<Vec<Vec<String>>> {
    if k == 0 || k > scan_ids.len() {
        return Err(Error::Split(format!(
            "cannot split {} scans into {k} folds",
            scan_ids.len()
        )));
    }
    let unique: BTreeSet<&String> = scan_ids.iter().collect();
    if unique.len() != scan_ids.len() {
        return Err(Error::Split("duplicate scan ids".into()));
    }
    let mut shuffled = scan_ids.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    shuffled.shuffle(&mut rng);
    let n = shuffled.len();
    let base = n / k;
    let remainder = n % k;
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for i in 0..k {
        let size = base + usize::from(i < remainder);
        folds.push(shuffled[start..start + size].to_vec());
        start += size;
    }
    debug_assert_eq!(start, n);
    Ok(folds)
}

/// The three trained segment models of one (fold, mode) cell, sharing one
/// normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSet {
    /// Reconstructs volumes `0 .. half` from the first window.
    pub beginning: ModelCheckpoint,
    /// Reconstructs the center volume of every sliding window.
    pub middle: ModelCheckpoint,
    /// Reconstructs volumes `T - half .. T` from the last window.
    pub end: ModelCheckpoint,
}

const SET_FILES: [(&str, Method); 3] = [
    ("beginning.json", Method::Beginning),
    ("middle.json", Method::Middle),
    ("end.json", Method::End),
];

impl ModelSet {
    fn by_method(&self, method: Method) -> &ModelCheckpoint {
        match method {
            Method::Beginning => &self.beginning,
            Method::Middle => &self.middle,
            Method::End => &self.end,
        }
    }

    /// Checks the three checkpoints belong together.
    pub fn validate(&self) -> Result<()> {
        for (_, method) in SET_FILES {
            let ckpt = self.by_method(method);
            ckpt.validate()?;
            if ckpt.method != method {
                return Err(Error::Checkpoint(format!(
                    "expected a {} model, found {}",
                    method.as_str(),
                    ckpt.method.as_str()
                )));
            }
        }
        let anchor = &self.beginning;
        for ckpt in [&self.middle, &self.end] {
            if ckpt.window_len != anchor.window_len
                || ckpt.channel_mode != anchor.channel_mode
                || ckpt.norm_stats != anchor.norm_stats
            {
                return Err(Error::Checkpoint(
                    "checkpoints disagree on window, channels, or normalization".into(),
                ));
            }
        }
        Ok(())
    }

    /// Writes `beginning.json`, `middle.json`, `end.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        self.validate()?;
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (file, method) in SET_FILES {
            self.by_method(method).save(&dir.join(file))?;
        }
        Ok(())
    }

    /// Loads a set written by [`ModelSet::save`].
    pub fn load(dir: &Path) -> Result<Self> {
        let set = Self {
            beginning: ModelCheckpoint::load(&dir.join(SET_FILES[0].0))?,
            middle: ModelCheckpoint::load(&dir.join(SET_FILES[1].0))?,
            end: ModelCheckpoint::load(&dir.join(SET_FILES[2].0))?,
        };
        set.validate()?;
        Ok(set)
    }
}

fn require_resp(scan: &ScanRecord) -> Result<&ScanRecord> {
    if scan.resp().is_none() {
        return Err(Error::InsufficientData(format!(
            "scan {} has no respiratory trace (needed for training targets)",
            scan.scan_id()
        )));
    }
    Ok(scan)
}

/// Splits a normalized `[T x C]` channel matrix back into scan form.
fn normalized_scan(
    scan: &ScanRecord,
    mode: ChannelMode,
    stats: &ChannelStats,
) -> Result<ScanRecord> {
    let selected = crate::dataset::select_channels(scan, mode);
    let z = stats.apply(&selected)?;
    let bold = z.slice(s![.., ..N_ROIS]).to_owned();
    let motion = match mode {
        ChannelMode::BoldPlusMotion => z.slice(s![.., N_ROIS..]).to_owned(),
        // Motion is not an input in this mode; keep it as is.
        ChannelMode::BoldOnly => scan.motion().clone(),
    };
    scan.with_channels(bold, motion)
}

fn normalized_rv(rv: &RvSeries, target: Option<&TargetStats>) -> Result<RvSeries> {
    match target {
        None => Ok(rv.clone()),
        Some(t) => RvSeries::new(
            rv.values().iter().map(|&v| t.normalize(v)).collect(),
            rv.tr_s(),
        ),
    }
}

/// Trains the three segment models on a set of scans.
///
/// Pools per-channel input statistics (and target statistics, when
/// `zscore_targets` is set) over all training scans, normalizes, builds
/// the per-method window datasets, and fits one model per method. All
/// three fits use `config.seed` as given.
pub fn train_models(
    train: &[ScanRecord],
    mode: ChannelMode,
    window_len: usize,
    config: &TrainConfig,
    zscore_targets: bool,
) -> Result<ModelSet> {
    if train.is_empty() {
        return Err(Error::InsufficientData("no training scans".into()));
    }
    let spec = WindowSpec::new(window_len, mode.n_channels())?;
    let rvs: Vec<RvSeries> = train
        .iter()
        .map(|scan| {
            require_resp(scan)?;
            extract_rv(scan.resp().expect("checked"), scan.tr_s(), scan.n_volumes())
        })
        .collect::<Result<_>>()?;

    let selected: Vec<Array2<f64>> = train
        .iter()
        .map(|scan| crate::dataset::select_channels(scan, mode))
        .collect();
    let views: Vec<_> = selected.iter().map(|m| m.view()).collect();
    let stacked = concatenate(Axis(0), &views).expect("equal channel counts");
    let input_stats = ChannelStats::from_matrix(&stacked)?;

    let target_stats = if zscore_targets {
        let pooled: Vec<f64> = rvs.iter().flat_map(|rv| rv.values().iter().copied()).collect();
        Some(TargetStats::from_values(&pooled)?)
    } else {
        None
    };
    let norm = NormStats {
        input: input_stats.clone(),
        target: target_stats,
    };

    let scans_z: Vec<ScanRecord> = train
        .iter()
        .map(|scan| normalized_scan(scan, mode, &input_stats))
        .collect::<Result<_>>()?;
    let rvs_z: Vec<RvSeries> = rvs
        .iter()
        .map(|rv| normalized_rv(rv, norm.target.as_ref()))
        .collect::<Result<_>>()?;

    let fit_method = |method: Method| -> Result<ModelCheckpoint> {
        let parts: Vec<_> = scans_z
            .iter()
            .zip(&rvs_z)
            .map(|(scan, rv)| build_windows(scan, rv, &spec, method))
            .collect::<Result<_>>()?;
        let dataset = crate::dataset::WindowedDataset::merge(parts)?;
        let arch = reference_arch(window_len, spec.n_channels(), method.out_dim(&spec))?;
        fit(&dataset, &arch, config, &norm)
    };
    let set = ModelSet {
        beginning: fit_method(Method::Beginning)?,
        middle: fit_method(Method::Middle)?,
        end: fit_method(Method::End)?,
    };
    set.validate()?;
    Ok(set)
}

/// Runs a checkpoint over windows in bounded slices (keeps the im2col
/// buffers of wide middle batches small).
fn predict_rows(ckpt: &ModelCheckpoint, windows: &Array3<f64>) -> Result<Vec<f64>> {
    const CHUNK: usize = 128;
    let n = windows.dim().0;
    let mut out = Vec::new();
    let mut lo = 0;
    while lo < n {
        let hi = (lo + CHUNK).min(n);
        let chunk = windows.slice(s![lo..hi, .., ..]).to_owned();
        let preds = ckpt.predict(&chunk)?;
        out.extend(preds.iter().copied());
        lo = hi;
    }
    Ok(out)
}

/// Stitched full-scan prediction in the model's normalized target space.
fn predict_scan_normalized(set: &ModelSet, scan: &ScanRecord) -> Result<RvSeries> {
    set.validate()?;
    let spec = WindowSpec::new(set.beginning.window_len, set.beginning.channel_mode.n_channels())?;
    let mut segments = Vec::with_capacity(3);
    for (_, method) in SET_FILES {
        let windows = prediction_windows(scan, &spec, method)?;
        segments.push(predict_rows(set.by_method(method), &windows)?);
    }
    let [beginning, middle, end]: [Vec<f64>; 3] =
        segments.try_into().expect("three methods");
    stitch(&beginning, &middle, &end, scan.n_volumes(), &spec, scan.tr_s())
}

/// Reconstructs a scan's full RV series in raw units.
///
/// Predicts the three segments, stitches them, and maps the result back
/// through the training target statistics stored in the checkpoints.
pub fn predict_scan(set: &ModelSet, scan: &ScanRecord) -> Result<RvSeries> {
    let z = predict_scan_normalized(set, scan)?;
    match &set.beginning.norm_stats.target {
        None => Ok(z),
        Some(t) => RvSeries::new(
            z.values().iter().map(|&v| t.denormalize(v)).collect(),
            z.tr_s(),
        ),
    }
}

/// One test scan's stitched prediction next to its measured series, in
/// raw units.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanPrediction {
    /// Which scan.
    pub scan_id: String,
    /// Measured RV (from the belt trace).
    pub truth: RvSeries,
    /// Reconstructed RV.
    pub pred: RvSeries,
}

/// Everything one (fold, mode) run produces.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldOutcome {
    /// Per-test-scan metrics, in the normalized target space when target
    /// z-scoring is on.
    pub metrics: Vec<ScanMetrics>,
    /// Raw-unit predictions for the report files.
    pub predictions: Vec<ScanPrediction>,
}

/// Trains on `train`, evaluates every scan in `test`.
///
/// Metrics are computed between the stitched prediction and the measured
/// RV, both in the normalized target space of this training run (raw
/// space when `zscore_targets` is off). Train and test must be disjoint;
/// overlap is a caller bug and panics.
pub fn run_fold(
    train: &[ScanRecord],
    test: &[ScanRecord],
    mode: ChannelMode,
    window_len: usize,
    config: &TrainConfig,
    zscore_targets: bool,
) -> Result<FoldOutcome> {
    if test.is_empty() {
        return Err(Error::InsufficientData("no test scans".into()));
    }
    let train_ids: BTreeSet<&str> = train.iter().map(|s| s.scan_id()).collect();
    for scan in test {
        assert!(
            !train_ids.contains(scan.scan_id()),
            "scan {} leaked into both train and test",
            scan.scan_id()
        );
    }
    let set = train_models(train, mode, window_len, config, zscore_targets)?;
    let target = set.beginning.norm_stats.target;
    let mut metrics = Vec::with_capacity(test.len());
    let mut predictions = Vec::with_capacity(test.len());
    for scan in test {
        require_resp(scan)?;
        let truth = extract_rv(scan.resp().expect("checked"), scan.tr_s(), scan.n_volumes())?;
        let pred_z = predict_scan_normalized(&set, scan)?;
        let truth_z = normalized_rv(&truth, target.as_ref())?;
        metrics.push(ScanMetrics::compute(
            scan.scan_id(),
            pred_z.values(),
            truth_z.values(),
        )?);
        let pred_raw = match &target {
            None => pred_z,
            Some(t) => RvSeries::new(
                pred_z.values().iter().map(|&v| t.denormalize(v)).collect(),
                pred_z.tr_s(),
            )?,
        };
        predictions.push(ScanPrediction {
            scan_id: scan.scan_id().to_string(),
            truth,
            pred: pred_raw,
        });
    }
    Ok(FoldOutcome {
        metrics,
        predictions,
    })
}

/// Reads every scan under the configured directories.
///
/// Each entry either is a scan directory itself (contains `bold.csv`) or
/// is a parent whose immediate subdirectories containing `bold.csv` are
/// read. Scans are returned sorted by id; duplicate ids are an error.
pub fn discover_scans(scan_dirs: &[String]) -> Result<Vec<ScanRecord>> {
    let mut scans = Vec::new();
    for dir in scan_dirs {
        let dir = Path::new(dir);
        if dir.join(crate::timeseries::BOLD_FILE).exists() {
            scans.push(read_scan_dir(dir)?);
            continue;
        }
        let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        let mut subdirs: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join(crate::timeseries::BOLD_FILE).exists())
            .collect();
        subdirs.sort();
        if subdirs.is_empty() {
            return Err(Error::invalid(
                "scan discovery",
                format!("no scan directories under {}", dir.display()),
            ));
        }
        for sub in subdirs {
            scans.push(read_scan_dir(&sub)?);
        }
    }
    scans.sort_by(|a, b| a.scan_id().cmp(b.scan_id()));
    for pair in scans.windows(2) {
        if pair[0].scan_id() == pair[1].scan_id() {
            return Err(Error::invalid(
                "scan discovery",
                format!("duplicate scan id {}", pair[0].scan_id()),
            ));
        }
    }
    Ok(scans)
}

/// The four metric values of one aggregate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricVector {
    /// Mean absolute error.
    pub mae: f64,
    /// Mean squared error.
    pub mse: f64,
    /// Pearson correlation.
    pub pearson_r: f64,
    /// Dynamic time warping distance.
    pub dtw: f64,
}

/// Aggregates of one channel mode over all test scans.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    /// Which mode.
    pub mode: ChannelMode,
    /// Per-metric mean over scans.
    pub mean: MetricVector,
    /// Per-metric median over scans.
    pub median: MetricVector,
}

/// Which scans one fold held out, and the seed its models trained with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    /// Fold index (0-based).
    pub fold: usize,
    /// Training seed used by every model of this fold.
    pub seed: u64,
    /// Held-out scan ids.
    pub test_scans: Vec<String>,
}

/// A Friedman comparison of the modes on one metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricFriedman {
    /// Metric name (`mae`, `mse`, `pearson_r`, or `dtw`).
    pub metric: String,
    /// The test result over per-scan paired scores.
    pub result: FriedmanResult,
}

/// One row of the per-scan report.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    /// Fold the scan was tested in.
    pub fold: usize,
    /// Channel mode of this row.
    pub mode: ChannelMode,
    /// The scan's metrics.
    pub metrics: ScanMetrics,
}

/// The serializable experiment summary (`summary.json`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    /// SHA-256 of the canonical config encoding.
    pub config_hash: String,
    /// Number of scans evaluated.
    pub n_scans: usize,
    /// Number of folds run.
    pub n_folds: usize,
    /// `"normalized"` when mae/mse/dtw are in z-scored target units,
    /// `"raw"` otherwise.
    pub metric_space: String,
    /// Per-mode aggregates.
    pub modes: Vec<ModeSummary>,
    /// Per-fold test sets and seeds.
    pub folds: Vec<FoldSummary>,
    /// Mode comparisons, one per metric; empty unless at least two modes
    /// ran.
    pub friedman: Vec<MetricFriedman>,
}

/// The full in-memory result of [`run_experiment`].
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    /// One row per (scan, mode).
    pub rows: Vec<ReportRow>,
    /// Aggregates and provenance, as written to `summary.json`.
    pub summary: ReportSummary,
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite metrics"));
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

fn aggregate(rows: &[&ScanMetrics], agg: fn(&[f64]) -> f64) -> MetricVector {
    let collect = |f: fn(&ScanMetrics) -> f64| -> Vec<f64> { rows.iter().map(|m| f(m)).collect() };
    MetricVector {
        mae: agg(&collect(|m| m.mae)),
        mse: agg(&collect(|m| m.mse)),
        pearson_r: agg(&collect(|m| m.pearson_r)),
        dtw: agg(&collect(|m| m.dtw)),
    }
}

/// Metric accessors paired with their comparison direction.
const METRIC_COLUMNS: [(&str, fn(&ScanMetrics) -> f64, bool); 4] = [
    ("mae", |m| m.mae, true),
    ("mse", |m| m.mse, true),
    ("pearson_r", |m| m.pearson_r, false),
    ("dtw", |m| m.dtw, true),
];

fn write_report_csv(path: &Path, rows: &[ReportRow]) -> Result<()> {
    let mut out = String::from("scan_id,mode,mae,mse,pearson_r,dtw\n");
    for row in rows {
        let m = &row.metrics;
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            m.scan_id,
            row.mode.as_str(),
            ioutil::fmt_real(m.mae),
            ioutil::fmt_real(m.mse),
            ioutil::fmt_real(m.pearson_r),
            ioutil::fmt_real(m.dtw),
        ));
    }
    ioutil::write_bytes(path, out.as_bytes())
}

/// Prediction CSV header: `volume,rv_true,rv_pred`.
pub const PREDICTION_HEADER: [&str; 3] = ["volume", "rv_true", "rv_pred"];

fn write_prediction_csv(path: &Path, prediction: &ScanPrediction) -> Result<()> {
    let rows: Vec<Vec<f64>> = prediction
        .truth
        .values()
        .iter()
        .zip(prediction.pred.values())
        .enumerate()
        .map(|(i, (&t, &p))| vec![i as f64, t, p])
        .collect();
    let header: Vec<String> = PREDICTION_HEADER.iter().map(|s| s.to_string()).collect();
    ioutil::write_csv(path, &header, &rows)
}

/// Runs the whole experiment and writes `report.csv`, `summary.json`, and
/// `predictions/<mode>/<scan_id>.csv` under the configured output
/// directory.
///
/// Every scan is tested in exactly one fold. A failing fold aborts the
/// run with its error; nothing is silently dropped. Two runs with the
/// same config produce byte-identical files.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let scans = discover_scans(&config.scan_dirs)?;
    if config.k_folds > scans.len() {
        return Err(Error::Split(format!(
            "k_folds = {} exceeds the {} scans found",
            config.k_folds,
            scans.len()
        )));
    }
    let ids: Vec<String> = scans.iter().map(|s| s.scan_id().to_string()).collect();
    let folds = kfold_split(&ids, config.k_folds, config.master_seed)?;

    let out_dir = Path::new(&config.output_dir);
    for mode in &config.modes {
        let dir = out_dir.join("predictions").join(mode.as_str());
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }

    let mut rows: Vec<ReportRow> = Vec::new();
    let mut fold_summaries = Vec::with_capacity(folds.len());
    for (fold_idx, fold_ids) in folds.iter().enumerate() {
        let in_fold: BTreeSet<&str> = fold_ids.iter().map(String::as_str).collect();
        let test: Vec<ScanRecord> = scans
            .iter()
            .filter(|s| in_fold.contains(s.scan_id()))
            .cloned()
            .collect();
        let train: Vec<ScanRecord> = scans
            .iter()
            .filter(|s| !in_fold.contains(s.scan_id()))
            .cloned()
            .collect();
        let seed = config.master_seed + fold_idx as u64;
        let train_config = TrainConfig {
            seed,
            ..config.train.clone()
        };
        for &mode in &config.modes {
            let outcome = run_fold(
                &train,
                &test,
                mode,
                config.window_len,
                &train_config,
                config.zscore_targets,
            )?;
            for prediction in &outcome.predictions {
                let path = out_dir
                    .join("predictions")
                    .join(mode.as_str())
                    .join(format!("{}.csv", prediction.scan_id));
                write_prediction_csv(&path, prediction)?;
            }
            rows.extend(outcome.metrics.into_iter().map(|metrics| ReportRow {
                fold: fold_idx,
                mode,
                metrics,
            }));
        }
        let mut test_scans = fold_ids.clone();
        test_scans.sort();
        fold_summaries.push(FoldSummary {
            fold: fold_idx,
            seed,
            test_scans,
        });
    }
    rows.sort_by(|a, b| {
        let mode_pos = |m: ChannelMode| config.modes.iter().position(|&x| x == m).expect("known");
        (mode_pos(a.mode), &a.metrics.scan_id).cmp(&(mode_pos(b.mode), &b.metrics.scan_id))
    });

    let mode_summaries: Vec<ModeSummary> = config
        .modes
        .iter()
        .map(|&mode| {
            let of_mode: Vec<&ScanMetrics> = rows
                .iter()
                .filter(|r| r.mode == mode)
                .map(|r| &r.metrics)
                .collect();
            ModeSummary {
                mode,
                mean: aggregate(&of_mode, mean),
                median: aggregate(&of_mode, median),
            }
        })
        .collect();

    let friedman = if config.modes.len() >= 2 {
        let mut results = Vec::with_capacity(METRIC_COLUMNS.len());
        for (name, getter, lower_is_better) in METRIC_COLUMNS {
            let mut matrix = Array2::zeros((ids.len(), config.modes.len()));
            for (i, id) in ids.iter().enumerate() {
                for (j, &mode) in config.modes.iter().enumerate() {
                    let row = rows
                        .iter()
                        .find(|r| r.mode == mode && r.metrics.scan_id == *id)
                        .expect("every scan evaluated in every mode");
                    matrix[(i, j)] = getter(&row.metrics);
                }
            }
            results.push(MetricFriedman {
                metric: name.to_string(),
                result: friedman_test(&matrix, lower_is_better)?,
            });
        }
        results
    } else {
        Vec::new()
    };

    let summary = ReportSummary {
        config_hash: config_hash(config)?,
        n_scans: ids.len(),
        n_folds: config.k_folds,
        metric_space: if config.zscore_targets { "normalized" } else { "raw" }.to_string(),
        modes: mode_summaries,
        folds: fold_summaries,
        friedman,
    };

    write_report_csv(&out_dir.join("report.csv"), &rows)?;
    let json = ioutil::to_json_pretty("experiment summary", &summary)?;
    ioutil::write_bytes(&out_dir.join("summary.json"), json.as_bytes())?;
    Ok(ExperimentReport { rows, summary })
}
