use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ecoscale"))
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn ecoscale")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fails(args: &[&str]) -> String {
    let out = run(args);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    String::from_utf8(out.stderr).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn plan_single_length() {
    let out = ok(&["plan", "--length", "21"]);
    assert!(out.contains("stage.1.p_k=11"));
    assert!(out.contains("stage.1.kernels=1,2,3,5,7,11"));
}

#[test]
fn plan_strict_reports_escalation() {
    let out = ok(&["plan", "--length", "21", "--strict"]);
    assert!(out.contains("stage.1.base_p_k=11"));
    assert!(out.contains("stage.1.base_gaps=19,20"));
    assert!(out.contains("stage.1.p_k=13"));
    assert!(out.contains("escalated to p_k=13"));
}

#[test]
fn plan_hierarchy() {
    let out = ok(&["plan", "--initial-cover", "64", "--factors", "1,2,4,8"]);
    let pk: Vec<&str> = out
        .lines()
        .filter_map(|l| l.split_once(".p_k=").map(|(_, v)| v))
        .collect();
    assert_eq!(pk, ["37", "17", "11", "5"]);
}

#[test]
fn plan_bad_flags_exit_nonzero() {
    fails(&["plan"]);
    fails(&["plan", "--length", "x"]);
    fails(&["plan", "--factors", "1,2"]);
    let err = fails(&["plan", "--initial-cover", "64", "--factors", "2,4"]);
    assert!(err.contains("error"), "{err}");
}

#[test]
fn help_lists_flags_and_defaults() {
    let out = ok(&["eval", "--help"]);
    for flag in [
        "--config",
        "--weights",
        "--data",
        "--threshold",
        "--split",
        "--out",
    ] {
        assert!(out.contains(flag), "{flag} missing from help");
    }
    assert!(out.contains("[default: 0.5]"));
    assert!(out.contains("[default: test]"));
    let top = ok(&["--help"]);
    for cmd in ["plan", "analyze", "gen-data", "train", "eval", "report"] {
        assert!(top.contains(cmd), "{cmd} missing from help");
    }
}

#[test]
fn analyze_reference_prints_raw_and_scaled_totals() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("r.csv");
    let out = ok(&[
        "analyze",
        "--config",
        p(&config("reference.toml")),
        "--out",
        p(&csv),
    ]);
    assert!(out.contains("params "));
    assert!(out.contains("M)"));
    assert!(out.contains("G)"));
    assert!(out.contains("bn running stats"));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("name,kind,params"));
    assert!(text.lines().last().unwrap().starts_with("total,"));
}

#[test]
fn config_errors_name_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[train]\nbatch_sz = 4\n").unwrap();
    let err = fails(&["analyze", "--config", p(&cfg)]);
    assert!(err.contains("batch_sz"), "{err}");
    std::fs::write(&cfg, "[train]\nlr_init = 1e-6\nlr_final = 1e-4\n").unwrap();
    let err = fails(&["analyze", "--config", p(&cfg)]);
    assert!(err.contains("train.lr_final"), "{err}");
}

#[test]
fn io_errors_name_the_path() {
    let err = fails(&["analyze", "--config", "/nonexistent/run.toml"]);
    assert!(err.contains("/nonexistent/run.toml"), "{err}");
    let err = fails(&[
        "eval",
        "--config",
        p(&config("smoke.toml")),
        "--weights",
        "/nonexistent/w.ecow",
        "--data",
        "/nonexistent/d.ecos",
    ]);
    assert!(err.contains("/nonexistent/d.ecos"), "{err}");
}

#[test]
fn full_pipeline_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = config("smoke.toml");
    let data = d.join("data.ecos");
    let out = ok(&["gen-data", "--config", p(&cfg), "--out", p(&data)]);
    assert!(out.contains("32 records"), "{out}");

    let weights = d.join("w.ecow");
    let log = d.join("train.csv");
    let out = ok(&[
        "train",
        "--config",
        p(&cfg),
        "--data",
        p(&data),
        "--out",
        p(&weights),
        "--log",
        p(&log),
    ]);
    assert!(out.starts_with("trained full"), "{out}");
    assert_eq!(&std::fs::read(&weights).unwrap()[..4], b"ECOW");
    let log_text = std::fs::read_to_string(&log).unwrap();
    assert_eq!(
        log_text.lines().next(),
        Some("epoch,step,lr,train_loss,val_macro_f1")
    );
    assert_eq!(log_text.lines().count(), 3);

    let runs = d.join("runs");
    std::fs::create_dir(&runs).unwrap();
    let metrics = runs.join("full.ml.csv");
    ok(&[
        "eval",
        "--config",
        p(&cfg),
        "--weights",
        p(&weights),
        "--data",
        p(&data),
        "--out",
        p(&metrics),
    ]);
    let stdout_csv = ok(&[
        "eval",
        "--config",
        p(&cfg),
        "--weights",
        p(&weights),
        "--data",
        p(&data),
    ]);
    assert_eq!(stdout_csv, std::fs::read_to_string(&metrics).unwrap());
    assert!(stdout_csv.starts_with("label,precision,recall,f1,support"));

    let strict = ok(&[
        "eval",
        "--config",
        p(&cfg),
        "--weights",
        p(&weights),
        "--data",
        p(&data),
        "--threshold",
        "0.5",
    ]);
    assert_eq!(strict, stdout_csv);

    std::fs::write(runs.join("notes.csv"), "not,metrics\n").unwrap();
    let summary = ok(&["report", "--runs", p(&runs), "--out", p(&d.join("wr.csv"))]);
    assert!(
        summary.contains("compared 1 models over 9 cells"),
        "{summary}"
    );
    let wr = std::fs::read_to_string(d.join("wr.csv")).unwrap();
    assert_eq!(wr.lines().nth(1), Some("full,9,1.0000"));
}

#[test]
fn eval_rejects_mismatched_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let other = d.join("other.toml");
    std::fs::write(&other, "[model]\nleads = 3\ninput_length = 64\nstem_channels = 8\nblocks = [1]\nchannels = [8]\nstrides = [1]\ninitial_cover = 8\n[data]\nnum_records = 4\nclass_scales = [4, 8, 16]\n").unwrap();
    let data = d.join("d.ecos");
    ok(&["gen-data", "--config", p(&other), "--out", p(&data)]);
    let err = fails(&[
        "train",
        "--config",
        p(&config("smoke.toml")),
        "--data",
        p(&data),
        "--out",
        p(&d.join("w")),
    ]);
    assert!(err.contains("3 leads"), "{err}");
}
