use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ddlic(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ddlic"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = ddlic(args, cwd);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fails_with(args: &[&str], cwd: &Path, needle: &str) {
    let out = ddlic(args, cwd);
    assert!(!out.status.success(), "{args:?} should fail");
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert_eq!(stderr.lines().count(), 1, "diagnostic is one line: {stderr:?}");
    assert!(stderr.starts_with("error: "), "{stderr:?}");
    assert!(stderr.contains(needle), "{stderr:?} lacks {needle:?}");
}

const SMALL: &[&str] = &["--layer-sizes", "12,8,6", "--h", "10", "--iters", "10"];

#[test]
fn experiment_reports_are_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.cfg");
    fs::write(
        &cfg,
        "data=synthetic\nsynthetic.dim=16\nsynthetic.per_class=30\nlayer_sizes=12,8,6\nalphas=1e-3\nh=10\nreplicates=3\n",
    )
    .unwrap();
    for (out, workers) in [("a", "1"), ("b", "3")] {
        ok(
            &["experiment", "--config", "exp.cfg", "--seed", "5", "--workers", workers, "--out", out],
            dir.path(),
        );
    }
    for name in ["report.csv", "accuracy_by_k.csv", "summary.txt", "config.resolved.txt"] {
        let a = fs::read(dir.path().join("a").join(name)).unwrap();
        let b = fs::read(dir.path().join("b").join(name)).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a, b, "{name} differs");
    }
    let report = fs::read_to_string(dir.path().join("a/report.csv")).unwrap();
    assert_eq!(report.lines().count(), 4);
}

#[test]
fn flags_override_config_file_and_resolved_config_is_written() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("c.cfg"),
        "data=synthetic\nsynthetic.dim=12\nsynthetic.per_class=20\nmethod=ddl\nlayer_sizes=10,6\nreplicates=4\nseed=1\nh=5\n",
    )
    .unwrap();
    ok(
        &["experiment", "--config", "c.cfg", "--replicates", "1", "--method", "ddlic", "--out", "r"],
        dir.path(),
    );
    let resolved = fs::read_to_string(dir.path().join("r/config.resolved.txt")).unwrap();
    assert!(resolved.contains("replicates=1\n"));
    assert!(resolved.contains("method=ddlic\n"));
    assert!(resolved.contains("seed=1\n"));
    assert!(resolved.contains("layer_sizes=10,6\n"));

    // The resolved file reproduces the run.
    ok(&["experiment", "--config", "r/config.resolved.txt", "--out", "r2"], dir.path());
    assert_eq!(
        fs::read(dir.path().join("r/report.csv")).unwrap(),
        fs::read(dir.path().join("r2/report.csv")).unwrap()
    );
}

#[test]
fn synth_train_eval_export_workflow() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    ok(&["synth", "--classes", "3", "--per-class", "25", "--dim", "14", "--seed", "2", "--out", "data/d.csv"], p);
    assert_eq!(fs::read_to_string(p.join("data/d.csv")).unwrap().lines().count(), 75);

    let mut args = vec!["train", "--data", "data/d.csv", "--alphas", "1e-3", "--out", "model"];
    args.extend_from_slice(SMALL);
    let stdout = ok(&args, p);
    assert!(stdout.contains("ddlic"));
    for f in ["metadata.txt", "dictionary_3.txt", "repr_3.txt", "labels.txt", "train.csv", "test.csv", "config.resolved.txt"] {
        assert!(p.join("model").join(f).exists(), "{f}");
    }

    let stdout = ok(&["eval", "--model", "model", "--data", "model/test.csv", "--knn-max", "5", "--out", "ev"], p);
    let acc: f64 = stdout.split_whitespace().nth(1).unwrap().parse().unwrap();
    assert!((0.0..=1.0).contains(&acc));
    assert_eq!(fs::read_to_string(p.join("ev/accuracy_by_k.csv")).unwrap().lines().count(), 6);
    assert_eq!(fs::read_to_string(p.join("ev/predictions.csv")).unwrap().lines().count(), 46);

    ok(&["export", "--model", "model", "--out", "emb"], p);
    for l in 0..=3 {
        let rows = fs::read_to_string(p.join(format!("emb/layer_{l}.csv"))).unwrap().lines().count();
        assert_eq!(rows, 30);
    }
    assert_eq!(fs::read_to_string(p.join("emb/labels.csv")).unwrap().lines().count(), 30);
}

#[test]
fn ddl_method_trains_on_pair_format() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    // Whitespace-separated, one feature per row, one sample per column.
    let text = "0 0.1 0 5 5.1 5\n0.1 0 0 5.1 5 5\n0 0.2 0.1 5 5.2 5.1\n0.2 0 0.1 5.2 5 5.1\n";
    fs::write(p.join("x.txt"), text).unwrap();
    fs::write(p.join("y.txt"), "7\n7\n7\n9\n9\n9\n").unwrap();
    ok(
        &["train", "--data", "x.txt", "--format", "pair", "--labels", "y.txt", "--method", "ddl", "--layer-sizes", "3,2", "--out", "m"],
        p,
    );
    let labels = fs::read_to_string(p.join("m/labels.txt")).unwrap();
    assert_eq!(labels.lines().collect::<Vec<_>>(), ["7", "7", "7", "9", "9", "9"]);
}

#[test]
fn grid_writes_one_row_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["grid", "--data", "synthetic", "--replicates", "1", "--set", "synthetic.dim=14", "--out", "g"];
    args.extend_from_slice(SMALL);
    let stdout = ok(&args, dir.path());
    assert!(stdout.contains("6 cells"));
    let grid = fs::read_to_string(dir.path().join("g/grid.csv")).unwrap();
    assert_eq!(grid.lines().count(), 7);
    assert_eq!(grid.lines().filter(|l| l.ends_with(",true")).count(), 1);
}

#[test]
fn failures_exit_nonzero_with_one_line() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    fails_with(&["train", "--data", "missing.csv", "--out", "m"], p, "missing.csv");
    fails_with(&["experiment", "--data", "synthetic", "--depth", "2", "--out", "o"], p, "depth");
    fails_with(&["experiment", "--data", "synthetic", "--method", "svm", "--out", "o"], p, "svm");
    fails_with(&["experiment", "--data", "synthetic"], p, "--out");
    fails_with(&["experiment", "--set", "bogus=1", "--out", "o"], p, "bogus");
    fails_with(&["grid", "--data", "synthetic", "--method", "ddl", "--out", "o"], p, "ddlic");
    fails_with(&["eval", "--model", "nowhere", "--data", "x.csv"], p, "nowhere");
    fs::write(p.join("bad.csv"), "1,2,0\n3,NaN,1\n").unwrap();
    fails_with(&["train", "--data", "bad.csv", "--out", "m"], p, "non-finite value at");
    // k range above the training size is clipped, but an inverted range is not.
    fails_with(
        &["experiment", "--data", "synthetic", "--set", "knn_min=5", "--knn-max", "2", "--out", "o"],
        p,
        "neighbour range",
    );
}
