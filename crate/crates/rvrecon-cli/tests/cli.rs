//! End-to-end tests of the installed binary: every subcommand, the exit
//! code contract, and byte-level determinism of the file outputs.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rvrecon"))
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    bin()
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Generates a small corpus and returns its directory.
fn synth_corpus(dir: &Path, n_scans: usize) -> PathBuf {
    std::fs::write(
        dir.join("synth.json"),
        r#"{"n_volumes":80,"seed":5,"bold_noise_sd":0.1}"#,
    )
    .unwrap();
    let out = run_in(
        dir,
        &[
            "synth",
            "--config",
            "synth.json",
            "--out",
            "corpus",
            "--n-scans",
            &n_scans.to_string(),
        ],
    );
    assert_ok(&out);
    dir.join("corpus")
}

fn write_experiment_config(dir: &Path) {
    std::fs::write(
        dir.join("exp.json"),
        r#"{"scan_dirs":["corpus"],"k_folds":2,"train":{"epochs":1},"output_dir":"results"}"#,
    )
    .unwrap();
}

#[test]
fn help_exits_zero_and_lists_all_subcommands() {
    let out = bin().arg("--help").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    for sub in [
        "extract-rv",
        "synth",
        "psd",
        "grayplot",
        "train",
        "predict",
        "evaluate",
        "cv",
    ] {
        assert!(text.contains(sub), "help lacks {sub}");
        let sub_help = bin().args([sub, "--help"]).output().unwrap();
        assert_eq!(sub_help.status.code(), Some(0), "{sub} --help");
    }
}

#[test]
fn usage_errors_exit_two() {
    let unknown = bin().arg("frobnicate").output().unwrap();
    assert_eq!(unknown.status.code(), Some(2));
    let bad_flag = bin().args(["synth", "--bogus"]).output().unwrap();
    assert_eq!(bad_flag.status.code(), Some(2));
    let bad_value = bin()
        .args(["psd", "--motion", "m", "--meta", "j", "--column", "nope", "--out", "o"])
        .output()
        .unwrap();
    assert_eq!(bad_value.status.code(), Some(2));
}

#[test]
fn synth_is_deterministic_and_extract_rv_reproduces_its_targets() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth_corpus(dir.path(), 2);
    for file in ["bold.csv", "motion.csv", "meta.json", "resp.csv", "rv.csv"] {
        assert!(corpus.join("scan_000").join(file).exists(), "{file}");
    }
    // Same config, second run: byte-identical scan files.
    let out = run_in(
        dir.path(),
        &["synth", "--config", "synth.json", "--out", "again", "--n-scans", "1"],
    );
    assert_ok(&out);
    assert_eq!(
        std::fs::read(corpus.join("scan_000/bold.csv")).unwrap(),
        std::fs::read(dir.path().join("again/scan_000/bold.csv")).unwrap()
    );
    // RV recomputed from the belt trace matches the generator's own file.
    let out = run_in(
        dir.path(),
        &[
            "extract-rv",
            "--resp",
            "corpus/scan_000/resp.csv",
            "--meta",
            "corpus/scan_000/meta.json",
            "--out",
            "rv_cli.csv",
            "--n-volumes",
            "80",
        ],
    );
    assert_ok(&out);
    assert_eq!(
        std::fs::read(dir.path().join("rv_cli.csv")).unwrap(),
        std::fs::read(corpus.join("scan_000/rv.csv")).unwrap()
    );
}

#[test]
fn extract_rv_names_file_and_row_on_bad_cell() {
    let dir = tempfile::tempdir().unwrap();
    synth_corpus(dir.path(), 1);
    let resp = dir.path().join("corpus/scan_000/resp.csv");
    let text = std::fs::read_to_string(&resp).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines[2] = "breath";
    std::fs::write(&resp, lines.join("\n")).unwrap();
    let out = run_in(
        dir.path(),
        &[
            "extract-rv",
            "--resp",
            "corpus/scan_000/resp.csv",
            "--meta",
            "corpus/scan_000/meta.json",
            "--out",
            "rv.csv",
        ],
    );
    assert_eq!(out.status.code(), Some(1));
    let msg = stderr(&out);
    assert!(msg.contains("resp.csv"), "stderr: {msg}");
    assert!(msg.contains(":3:"), "stderr lacks the row number: {msg}");
}

#[test]
fn psd_resolves_pe_to_the_metadata_axis() {
    let dir = tempfile::tempdir().unwrap();
    synth_corpus(dir.path(), 1);
    for (name, out_file) in [("pe", "psd_pe.csv"), ("trans_y_mm", "psd_y.csv")] {
        let out = run_in(
            dir.path(),
            &[
                "psd",
                "--motion",
                "corpus/scan_000/motion.csv",
                "--meta",
                "corpus/scan_000/meta.json",
                "--column",
                name,
                "--out",
                out_file,
                "--seg-len",
                "64",
            ],
        );
        assert_ok(&out);
    }
    // The generated scans put respiration on trans_y (pe_axis 1).
    let pe = std::fs::read(dir.path().join("psd_pe.csv")).unwrap();
    let y = std::fs::read(dir.path().join("psd_y.csv")).unwrap();
    assert_eq!(pe, y);
    let text = String::from_utf8(pe).unwrap();
    assert!(text.starts_with("freq_hz,power\n"));
    // One-sided spectrum of a 64-sample segment: 33 bins.
    assert_eq!(text.lines().count(), 34);
}

#[test]
fn grayplot_writes_a_pgm_with_one_byte_per_sample() {
    let dir = tempfile::tempdir().unwrap();
    synth_corpus(dir.path(), 1);
    let out = run_in(
        dir.path(),
        &["grayplot", "--bold", "corpus/scan_000/bold.csv", "--out", "plot.pgm"],
    );
    assert_ok(&out);
    let bytes = std::fs::read(dir.path().join("plot.pgm")).unwrap();
    let header = b"P5\n80 90\n255\n";
    assert_eq!(&bytes[..header.len()], header);
    assert_eq!(bytes.len(), header.len() + 80 * 90);
}

#[test]
fn train_predict_evaluate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    synth_corpus(dir.path(), 2);
    write_experiment_config(dir.path());
    let out = run_in(
        dir.path(),
        &[
            "train",
            "--config",
            "exp.json",
            "--mode",
            "bold_plus_motion",
            "--out",
            "ckpts",
        ],
    );
    assert_ok(&out);
    for file in ["beginning.json", "middle.json", "end.json"] {
        assert!(dir.path().join("ckpts").join(file).exists(), "{file}");
    }
    let out = run_in(
        dir.path(),
        &[
            "predict",
            "--ckpt",
            "ckpts",
            "--scan",
            "corpus/scan_000",
            "--out",
            "pred.csv",
        ],
    );
    assert_ok(&out);
    let pred = std::fs::read_to_string(dir.path().join("pred.csv")).unwrap();
    assert!(pred.starts_with("volume,rv_pred\n"));
    assert_eq!(pred.lines().count(), 81);
    let out = run_in(
        dir.path(),
        &[
            "evaluate",
            "--pred",
            "pred.csv",
            "--truth",
            "corpus/scan_000/rv.csv",
            "--out",
            "metrics.csv",
        ],
    );
    assert_ok(&out);
    let metrics = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    let mut lines = metrics.lines();
    assert_eq!(lines.next(), Some("scan_id,mae,mse,pearson_r,dtw"));
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row[0], "pred");
    for cell in &row[1..] {
        assert!(cell.parse::<f64>().unwrap().is_finite());
    }
}

#[test]
fn evaluate_rejects_length_mismatch_with_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("pred.csv"), "volume,rv_pred\n0,0.5\n1,0.5\n").unwrap();
    std::fs::write(dir.path().join("truth.csv"), "volume,rv\n0,0.5\n").unwrap();
    let out = run_in(
        dir.path(),
        &["evaluate", "--pred", "pred.csv", "--truth", "truth.csv", "--out", "m.csv"],
    );
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn cv_writes_report_files() {
    let dir = tempfile::tempdir().unwrap();
    synth_corpus(dir.path(), 4);
    write_experiment_config(dir.path());
    let out = run_in(dir.path(), &["cv", "--config", "exp.json"]);
    assert_ok(&out);
    let results = dir.path().join("results");
    assert!(results.join("report.csv").exists());
    assert!(results.join("summary.json").exists());
    for mode in ["bold_only", "bold_plus_motion"] {
        for i in 0..4 {
            let pred = results
                .join("predictions")
                .join(mode)
                .join(format!("scan_{i:03}.csv"));
            assert!(pred.exists(), "{}", pred.display());
        }
    }
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("friedman pearson_r"), "stdout: {stdout}");
    // Missing config is a data error, not a usage error.
    let out = run_in(dir.path(), &["cv", "--config", "nope.json"]);
    assert_eq!(out.status.code(), Some(1));
}
