//! End-to-end tests of the `dualprune` binary: exit codes, file outputs,
//! and the report table's agreement with the library's cost arithmetic.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dualprune::harness::{cost_savings, read_jsonl};
use dualprune::xmodal::{load_adapters, AdapterPair};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dualprune"))
}

fn run_ok(args: &[&str]) -> Output {
    let out = bin().args(args).output().unwrap();
    assert!(
        out.status.success(),
        "command {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(
        out.stderr.is_empty(),
        "success path wrote to stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn gen_small(dir: &Path, label_noise: &str, seed: &str) -> PathBuf {
    let prefix = dir.join(format!("data_{seed}_{label_noise}"));
    run_ok(&[
        "gen",
        "--n-per-class",
        "50",
        "--classes",
        "4",
        "--dim",
        "8",
        "--embed-dim",
        "8",
        "--label-noise",
        label_noise,
        "--seed",
        seed,
        "--out-prefix",
        prefix.to_str().unwrap(),
    ]);
    prefix
}

fn ext(prefix: &Path, suffix: &str) -> String {
    format!("{}.{suffix}", prefix.display())
}

#[test]
fn gen_writes_three_files() {
    let dir = tempfile::tempdir().unwrap();
    let prefix = gen_small(dir.path(), "0.0", "1");
    for suffix in ["dpds", "dpem", "dpte"] {
        assert!(
            Path::new(&ext(&prefix, suffix)).exists(),
            "missing {suffix}"
        );
    }
}

#[test]
fn gen_rejects_out_of_range_label_noise() {
    let dir = tempfile::tempdir().unwrap();
    let prefix = dir.path().join("bad");
    let out = bin()
        .args([
            "gen",
            "--label-noise",
            "1.5",
            "--out-prefix",
            prefix.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("label-noise"), "stderr was: {stderr}");
}

#[test]
fn gen_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = gen_small(dir.path(), "0.2", "7");
    let b = {
        let sub = dir.path().join("again");
        fs::create_dir(&sub).unwrap();
        gen_small(&sub, "0.2", "7")
    };
    for suffix in ["dpds", "dpem", "dpte"] {
        assert_eq!(
            fs::read(ext(&a, suffix)).unwrap(),
            fs::read(ext(&b, suffix)).unwrap(),
            "{suffix} files differ between identical invocations"
        );
    }
}

#[test]
fn adapt_zero_epochs_writes_identity_maps() {
    let dir = tempfile::tempdir().unwrap();
    let prefix = gen_small(dir.path(), "0.0", "2");
    let out_path = dir.path().join("id.dpad");
    run_ok(&[
        "adapt",
        "--data",
        &ext(&prefix, "dpds"),
        "--image-emb",
        &ext(&prefix, "dpem"),
        "--text-emb",
        &ext(&prefix, "dpte"),
        "--epochs",
        "0",
        "--out",
        out_path.to_str().unwrap(),
    ]);
    let adapters = load_adapters(&out_path).unwrap();
    assert_eq!(adapters, AdapterPair::identity(8));
}

#[test]
fn adapt_is_reproducible_and_missing_input_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let prefix = gen_small(dir.path(), "0.1", "3");
    let adapt = |out: &Path| {
        run_ok(&[
            "adapt",
            "--data",
            &ext(&prefix, "dpds"),
            "--image-emb",
            &ext(&prefix, "dpem"),
            "--text-emb",
            &ext(&prefix, "dpte"),
            "--epochs",
            "2",
            "--batch-size",
            "16",
            "--seed",
            "5",
            "--out",
            out.to_str().unwrap(),
        ]);
    };
    let a = dir.path().join("a.dpad");
    let b = dir.path().join("b.dpad");
    adapt(&a);
    adapt(&b);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());

    let out = bin()
        .args([
            "adapt",
            "--data",
            "/nonexistent/nothing.dpds",
            "--image-emb",
            &ext(&prefix, "dpem"),
            "--text-emb",
            &ext(&prefix, "dpte"),
            "--out",
            dir.path().join("x.dpad").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nothing.dpds"));
}

#[test]
fn run_rejects_unknown_strategy() {
    let dir = tempfile::tempdir().unwrap();
    let prefix = gen_small(dir.path(), "0.0", "4");
    let out = bin()
        .args([
            "run",
            "--strategy",
            "bogus",
            "--data",
            &ext(&prefix, "dpds"),
            "--image-emb",
            &ext(&prefix, "dpem"),
            "--text-emb",
            &ext(&prefix, "dpte"),
            "--out",
            dir.path().join("x.jsonl").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("strategy"));
}

fn run_experiment_cli(dir: &Path, prefix: &Path, name: &str, extra: &[&str]) -> PathBuf {
    let out_path = dir.join(name);
    let mut args = vec![
        "run".to_string(),
        "--data".into(),
        ext(prefix, "dpds"),
        "--image-emb".into(),
        ext(prefix, "dpem"),
        "--text-emb".into(),
        ext(prefix, "dpte"),
        "--epochs".into(),
        "5".into(),
        "--batch-size".into(),
        "25".into(),
        "--refresh-every".into(),
        "0".into(),
        "--seed".into(),
        "6".into(),
        "--out".into(),
        out_path.display().to_string(),
    ];
    args.extend(extra.iter().map(|s| s.to_string()));
    let args_ref: Vec<&str> = args.iter().map(String::as_str).collect();
    run_ok(&args_ref);
    out_path
}

#[test]
fn full_ratio_dual_matches_full_data_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let prefix = gen_small(dir.path(), "0.0", "5");
    let dual = run_experiment_cli(
        dir.path(),
        &prefix,
        "dual.jsonl",
        &["--strategy", "dual", "--ratio", "1.0"],
    );
    let full = run_experiment_cli(
        dir.path(),
        &prefix,
        "full.jsonl",
        &["--strategy", "full_data", "--ratio", "1.0"],
    );
    let a = read_jsonl(&dual).unwrap();
    let b = read_jsonl(&full).unwrap();
    assert_eq!(a.summary.final_accuracy, b.summary.final_accuracy);
}

#[test]
fn report_summarizes_and_cross_checks_cost_arithmetic() {
    let dir = tempfile::tempdir().unwrap();
    let prefix = gen_small(dir.path(), "0.2", "6");
    // N = 200, batch 25: 8 updates per full epoch, 4 per pruned epoch.
    let dual = run_experiment_cli(
        dir.path(),
        &prefix,
        "dual.jsonl",
        &["--strategy", "dual", "--ratio", "0.5"],
    );
    let full = run_experiment_cli(
        dir.path(),
        &prefix,
        "full.jsonl",
        &["--strategy", "full_data", "--ratio", "0.5"],
    );

    let out = run_ok(&[
        "report",
        "--in",
        dual.to_str().unwrap(),
        "--in",
        full.to_str().unwrap(),
        "--format",
        "csv",
    ]);
    let stdout = String::from_utf8(out.stdout).unwrap();
    let mut lines = stdout.lines();
    assert!(lines.next().unwrap().starts_with("run,"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 2);
    // Rows sort by filename: dual.jsonl before full.jsonl.
    assert!(rows[0][0].ends_with("dual.jsonl"));
    assert!(rows[1][0].ends_with("full.jsonl"));

    let fwd_dual: u64 = rows[0][2].parse().unwrap();
    let fwd_full: u64 = rows[1][2].parse().unwrap();
    let bwd_dual: u64 = rows[0][3].parse().unwrap();
    let bwd_full: u64 = rows[1][3].parse().unwrap();

    // Both runs share the warmup epoch; the remaining 4 epochs differ by
    // exactly the closed-form savings of pruning 200 -> 100 at batch 25.
    let saved = cost_savings(200, 100, 4, 25).unwrap();
    assert_eq!(fwd_full - fwd_dual, saved.forward_saved);
    assert_eq!(bwd_full - bwd_dual, saved.backward_saved);
}

#[test]
fn report_single_file_and_empty_file() {
    let dir = tempfile::tempdir().unwrap();
    let prefix = gen_small(dir.path(), "0.0", "8");
    let run = run_experiment_cli(dir.path(), &prefix, "one.jsonl", &["--strategy", "dual"]);
    let out = run_ok(&["report", "--in", run.to_str().unwrap()]);
    let stdout = String::from_utf8(out.stdout).unwrap();
    // Header plus exactly one data row.
    assert_eq!(stdout.lines().count(), 2);
    assert!(stdout.contains("one.jsonl"));

    let empty = dir.path().join("empty.jsonl");
    fs::write(&empty, "").unwrap();
    let out = bin()
        .args(["report", "--in", empty.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));

    let malformed = dir.path().join("mangled.jsonl");
    fs::write(&malformed, "{ not json\n").unwrap();
    let out = bin()
        .args(["report", "--in", malformed.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains(":1:"));
}

#[test]
fn run_writes_parseable_metrics_with_one_line_per_epoch() {
    let dir = tempfile::tempdir().unwrap();
    let prefix = gen_small(dir.path(), "0.2", "9");
    let path = run_experiment_cli(
        dir.path(),
        &prefix,
        "metrics.jsonl",
        &["--strategy", "dual", "--ratio", "0.5"],
    );
    let text = fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 6); // 5 epochs + summary
    let report = read_jsonl(&path).unwrap();
    assert_eq!(report.epochs.len(), 5);
    assert_eq!(report.summary.config.epochs, 5);
    let fwd: u64 = report.epochs.iter().map(|m| m.forward_passes).sum();
    assert_eq!(report.summary.total_forward_passes, fwd);
}
