//! Command-line front end.
//!
//! Exit codes: 0 success, 1 domain or data error, 2 usage error.
//! Diagnostics go to stderr; data goes to files or stdout. Config files
//! are the source of truth; flags override individual keys.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, ensure, Context};
use clap::{Parser, Subcommand, ValueEnum};
use ndarray::Array2;

use rvrecon::dataset::ChannelMode;
use rvrecon::fmt_real;
use rvrecon::metrics::ScanMetrics;
use rvrecon::neuralnet::TrainConfig;
use rvrecon::pipeline::{
    config_hash, discover_scans, predict_scan, run_experiment, train_models, ExperimentConfig,
    ModelSet,
};
use rvrecon::spectral::{grayplot, welch_psd, WelchParams};
use rvrecon::synth::{gen_scan, true_rv, SynthConfig};
use rvrecon::timeseries::{
    extract_rv, read_bold_csv, read_motion_csv, read_resp_csv, read_rv_values, read_scan_dir,
    write_rv_csv, write_scan, MetaJson, ScanRecord, MOTION_HEADER, N_MOTION,
};

#[derive(Parser)]
#[command(name = "rvrecon", version, about = "Respiratory variation from BOLD and head motion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute the RV series of a respiratory belt trace.
    ExtractRv {
        /// Belt trace CSV (header `resp`).
        #[arg(long, value_name = "FILE")]
        resp: PathBuf,
        /// Scan metadata JSON (`tr_s`, `resp_fs_hz`).
        #[arg(long, value_name = "FILE")]
        meta: PathBuf,
        /// Output CSV (header `volume,rv`).
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        /// Number of volumes; defaults to the full TRs the trace covers.
        #[arg(long, value_name = "N")]
        n_volumes: Option<usize>,
    },
    /// Generate synthetic scans with known respiration.
    Synth {
        /// Generator settings JSON; all keys optional, defaults applied.
        #[arg(long, value_name = "FILE")]
        config: Option<PathBuf>,
        /// Output directory; one subdirectory per scan.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Number of scans; scan i uses config seed + i.
        #[arg(long, value_name = "N", default_value_t = 1)]
        n_scans: usize,
        /// Overrides the config seed.
        #[arg(long, value_name = "SEED")]
        seed: Option<u64>,
    },
    /// Welch power spectral density of a motion column.
    Psd {
        /// Motion CSV (standard six-column header).
        #[arg(long, value_name = "FILE")]
        motion: PathBuf,
        /// Scan metadata JSON (`tr_s`, `pe_axis`).
        #[arg(long, value_name = "FILE")]
        meta: PathBuf,
        /// `pe` (phase-encoding axis from the metadata) or a column name.
        #[arg(long, value_name = "NAME")]
        column: ColumnArg,
        /// Output CSV (header `freq_hz,power`).
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        /// Samples per Welch segment.
        #[arg(long, value_name = "N")]
        seg_len: Option<usize>,
        /// Fractional segment overlap in [0, 1).
        #[arg(long, value_name = "F")]
        overlap: Option<f64>,
    },
    /// Render a BOLD matrix as a grayplot image.
    Grayplot {
        /// BOLD CSV (header `roi_0..roi_89`).
        #[arg(long, value_name = "FILE")]
        bold: PathBuf,
        /// Output image (binary PGM, maxval 255).
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Train the three segment models on all configured scans.
    Train {
        /// Experiment config JSON (`scan_dirs`, `window_len`, `train`,
        /// `zscore_targets`; fold settings are ignored here).
        #[arg(long, value_name = "FILE")]
        config: PathBuf,
        /// Input channel set.
        #[arg(long, value_enum, default_value_t = ModeArg::BoldPlusMotion)]
        mode: ModeArg,
        /// Checkpoint directory (`beginning.json`, `middle.json`, `end.json`).
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Overrides the config's training seed.
        #[arg(long, value_name = "SEED")]
        seed: Option<u64>,
    },
    /// Reconstruct a scan's RV series from a trained checkpoint.
    Predict {
        /// Checkpoint directory written by `train` or `cv`.
        #[arg(long, value_name = "DIR")]
        ckpt: PathBuf,
        /// Scan directory (`bold.csv`, `motion.csv`, `meta.json`).
        #[arg(long, value_name = "DIR")]
        scan: PathBuf,
        /// Output CSV (header `volume,rv_pred`).
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Score a prediction against a measured RV series.
    Evaluate {
        /// Prediction CSV (`volume,rv_pred` or `volume,rv_true,rv_pred`).
        #[arg(long, value_name = "FILE")]
        pred: PathBuf,
        /// Measured RV CSV (header `volume,rv`).
        #[arg(long, value_name = "FILE")]
        truth: PathBuf,
        /// Output CSV (header `scan_id,mae,mse,pearson_r,dtw`).
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        /// Scan id recorded in the output; defaults to the prediction
        /// file stem.
        #[arg(long, value_name = "ID")]
        scan_id: Option<String>,
    },
    /// Cross-validated experiment over a scan corpus.
    Cv {
        /// Experiment config JSON.
        #[arg(long, value_name = "FILE")]
        config: PathBuf,
        /// Overrides the config's output directory.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        /// Overrides the config's master seed.
        #[arg(long, value_name = "SEED")]
        seed: Option<u64>,
    },
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum ModeArg {
    #[value(name = "bold_only")]
    BoldOnly,
    #[value(name = "bold_plus_motion")]
    BoldPlusMotion,
}

impl From<ModeArg> for ChannelMode {
    fn from(mode: ModeArg) -> Self {
        match mode {
            ModeArg::BoldOnly => ChannelMode::BoldOnly,
            ModeArg::BoldPlusMotion => ChannelMode::BoldPlusMotion,
        }
    }
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum ColumnArg {
    /// The column along the phase-encoding axis, per `meta.json`.
    Pe,
    #[value(name = "trans_x_mm")]
    TransX,
    #[value(name = "trans_y_mm")]
    TransY,
    #[value(name = "trans_z_mm")]
    TransZ,
    #[value(name = "rot_x_deg")]
    RotX,
    #[value(name = "rot_y_deg")]
    RotY,
    #[value(name = "rot_z_deg")]
    RotZ,
}

impl ColumnArg {
    fn index(self, meta: &MetaJson) -> usize {
        match self {
            ColumnArg::Pe => meta.pe_axis,
            ColumnArg::TransX => 0,
            ColumnArg::TransY => 1,
            ColumnArg::TransZ => 2,
            ColumnArg::RotX => 3,
            ColumnArg::RotY => 4,
            ColumnArg::RotZ => 5,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn read_json_config<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Writes a CSV of real-valued rows with 17-significant-digit cells.
fn write_real_csv(path: &Path, header: &str, rows: &[Vec<f64>]) -> anyhow::Result<()> {
    let mut text = String::with_capacity(rows.len() * 24 + header.len() + 1);
    text.push_str(header);
    text.push('\n');
    for row in rows {
        let cells: Vec<String> = row.iter().map(|&v| fmt_real(v)).collect();
        text.push_str(&cells.join(","));
        text.push('\n');
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Reads the predicted column of a `volume,rv_pred`,
/// `volume,rv_true,rv_pred`, or `volume,rv` CSV.
fn read_prediction_values(path: &Path) -> anyhow::Result<Vec<f64>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .with_context(|| format!("{}: empty file", path.display()))?;
    let cols: Vec<&str> = header.split(',').collect();
    let value_col = match cols.as_slice() {
        ["volume", "rv_pred"] | ["volume", "rv"] => 1,
        ["volume", "rv_true", "rv_pred"] => 2,
        _ => bail!("{}: unrecognized header `{header}`", path.display()),
    };
    let mut values = Vec::new();
    for (i, line) in lines.enumerate() {
        let row = i + 2;
        let cells: Vec<&str> = line.split(',').collect();
        ensure!(
            cells.len() == cols.len(),
            "{}:{row}: expected {} cells, found {}",
            path.display(),
            cols.len(),
            cells.len()
        );
        let volume: f64 = cells[0]
            .parse()
            .with_context(|| format!("{}:{row}: bad volume index `{}`", path.display(), cells[0]))?;
        ensure!(
            volume == i as f64,
            "{}:{row}: expected volume {i}, found {volume}",
            path.display()
        );
        let value: f64 = cells[value_col].parse().with_context(|| {
            format!("{}:{row}: bad value `{}`", path.display(), cells[value_col])
        })?;
        values.push(value);
    }
    ensure!(!values.is_empty(), "{}: no data rows", path.display());
    Ok(values)
}

fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::ExtractRv {
            resp,
            meta,
            out,
            n_volumes,
        } => {
            let meta = MetaJson::read(&meta)?;
            let fs = meta
                .resp_fs_hz
                .context("meta.json carries no resp_fs_hz")?;
            let trace = read_resp_csv(&resp, fs)?;
            let t = match n_volumes {
                Some(t) => t,
                None => (trace.samples().len() as f64 / (fs * meta.tr_s)).floor() as usize,
            };
            let rv = extract_rv(&trace, meta.tr_s, t)?;
            write_rv_csv(&out, &rv)?;
            eprintln!("wrote {} RV values to {}", rv.len(), out.display());
        }
        Command::Synth {
            config,
            out,
            n_scans,
            seed,
        } => {
            let mut base: SynthConfig = match &config {
                Some(path) => read_json_config(path)?,
                None => SynthConfig::default(),
            };
            if let Some(seed) = seed {
                base.seed = seed;
            }
            ensure!(n_scans > 0, "--n-scans must be at least 1");
            for i in 0..n_scans {
                let config = SynthConfig {
                    seed: base.seed + i as u64,
                    ..base.clone()
                };
                let scan_id = format!("scan_{i:03}");
                let scan = gen_scan(&config, &scan_id)?;
                let dir = out.join(&scan_id);
                write_scan(&scan, &dir)?;
                write_rv_csv(&dir.join("rv.csv"), &true_rv(&scan)?)?;
            }
            eprintln!("wrote {n_scans} scan(s) under {}", out.display());
        }
        Command::Psd {
            motion,
            meta,
            column,
            out,
            seg_len,
            overlap,
        } => {
            let meta = MetaJson::read(&meta)?;
            let matrix = read_motion_csv(&motion)?;
            let index = column.index(&meta);
            ensure!(
                index < N_MOTION,
                "pe_axis {index} out of range for {} motion columns",
                N_MOTION
            );
            let signal: Vec<f64> = matrix.column(index).to_vec();
            let defaults = WelchParams::default();
            let params = WelchParams {
                seg_len: seg_len.unwrap_or(defaults.seg_len),
                overlap: overlap.unwrap_or(defaults.overlap),
            };
            let psd = welch_psd(&signal, 1.0 / meta.tr_s, params)?;
            let rows: Vec<Vec<f64>> = psd
                .freqs_hz()
                .iter()
                .zip(psd.power())
                .map(|(&f, &p)| vec![f, p])
                .collect();
            write_real_csv(&out, "freq_hz,power", &rows)?;
            eprintln!(
                "wrote {} bins ({}) to {}",
                rows.len(),
                MOTION_HEADER[index],
                out.display()
            );
        }
        Command::Grayplot { bold, out } => {
            let matrix = read_bold_csv(&bold)?;
            let t = matrix.nrows();
            // Only the BOLD values matter for the image; the rest of the
            // record is filler.
            let scan = ScanRecord::new(
                "grayplot",
                matrix,
                Array2::zeros((t, N_MOTION)),
                1.0,
                0,
                None,
            )?;
            let image = grayplot(&scan)?;
            image.write_pgm(&out)?;
            eprintln!(
                "wrote {}x{} grayplot to {}",
                image.width(),
                image.height(),
                out.display()
            );
        }
        Command::Train {
            config,
            mode,
            out,
            seed,
        } => {
            let config: ExperimentConfig = read_json_config(&config)?;
            config.validate()?;
            let scans = discover_scans(&config.scan_dirs)?;
            let train_config = TrainConfig {
                seed: seed.unwrap_or(config.train.seed),
                ..config.train.clone()
            };
            let set = train_models(
                &scans,
                mode.into(),
                config.window_len,
                &train_config,
                config.zscore_targets,
            )?;
            set.save(&out)?;
            eprintln!(
                "trained on {} scan(s); checkpoints in {}",
                scans.len(),
                out.display()
            );
        }
        Command::Predict { ckpt, scan, out } => {
            let set = ModelSet::load(&ckpt)?;
            let scan = read_scan_dir(&scan)?;
            let rv = predict_scan(&set, &scan)?;
            let rows: Vec<Vec<f64>> = rv
                .values()
                .iter()
                .enumerate()
                .map(|(i, &v)| vec![i as f64, v])
                .collect();
            write_real_csv(&out, "volume,rv_pred", &rows)?;
            eprintln!(
                "predicted {} volumes of {} to {}",
                rv.len(),
                scan.scan_id(),
                out.display()
            );
        }
        Command::Evaluate {
            pred,
            truth,
            out,
            scan_id,
        } => {
            let scan_id = scan_id.unwrap_or_else(|| {
                pred.file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "scan".into())
            });
            let pred_values = read_prediction_values(&pred)?;
            let truth_values = read_rv_values(&truth)?;
            let metrics = ScanMetrics::compute(&scan_id, &pred_values, &truth_values)?;
            let text = format!(
                "scan_id,mae,mse,pearson_r,dtw\n{},{},{},{},{}\n",
                metrics.scan_id,
                fmt_real(metrics.mae),
                fmt_real(metrics.mse),
                fmt_real(metrics.pearson_r),
                fmt_real(metrics.dtw),
            );
            std::fs::write(&out, text).with_context(|| format!("writing {}", out.display()))?;
            println!(
                "{}: mae {:.4} mse {:.4} pearson_r {:.4} dtw {:.4}",
                metrics.scan_id, metrics.mae, metrics.mse, metrics.pearson_r, metrics.dtw
            );
        }
        Command::Cv { config, out, seed } => {
            let mut config: ExperimentConfig = read_json_config(&config)?;
            if let Some(out) = out {
                config.output_dir = out.display().to_string();
            }
            if let Some(seed) = seed {
                config.master_seed = seed;
            }
            let report = run_experiment(&config)?;
            println!("config {}", config_hash(&config)?);
            for mode in &report.summary.modes {
                println!(
                    "{}: mean mae {:.4} mse {:.4} pearson_r {:.4} dtw {:.4}",
                    mode.mode.as_str(),
                    mode.mean.mae,
                    mode.mean.mse,
                    mode.mean.pearson_r,
                    mode.mean.dtw
                );
            }
            for mf in &report.summary.friedman {
                println!(
                    "friedman {}: chi2 {:.4} p {:.6}",
                    mf.metric, mf.result.chi_square, mf.result.p_value
                );
            }
            eprintln!("report files in {}", config.output_dir);
        }
    }
    Ok(())
}
