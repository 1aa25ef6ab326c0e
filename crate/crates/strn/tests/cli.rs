use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn strn(args: &[&str], seed_env: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_strn"));
    cmd.args(args).env_remove("STRN_SEED");
    if let Some(s) = seed_env {
        cmd.env("STRN_SEED", s);
    }
    cmd.output().expect("spawn strn")
}

fn ok(args: &[&str]) -> String {
    let out = strn(args, None);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn small_sequence(dir: &TempDir, name: &str, extra: &str) -> std::path::PathBuf {
    let cfg = dir.path().join(format!("{name}.cfg"));
    fs::write(&cfg, format!("# small\nidentities = 6\nlength = 150\nname = \"{name}\"\n{extra}")).unwrap();
    let out = dir.path().join(name);
    ok(&["gen", "--config", p(&cfg), "--out", p(&out)]);
    out
}

#[test]
fn eval_of_ground_truth_is_perfect() {
    let dir = TempDir::new().unwrap();
    let seq = small_sequence(&dir, "s", "seed = 3\n");
    let gt = seq.join("gt").join("gt.txt");
    let report = ok(&["eval", "--gt", p(&seq), "--results", p(&gt)]);
    assert!(report.starts_with("MOTA=1.000\n"), "{report}");
    assert!(report.contains("IDS=0\n") && report.contains("IDF1=1.000\n"));
}

#[test]
fn missing_weights_is_an_io_error_naming_the_path() {
    let dir = TempDir::new().unwrap();
    let seq = small_sequence(&dir, "s", "");
    let missing = dir.path().join("absent-weights.txt");
    let out = strn(&["track", "--seq", p(&seq), "--weights", p(&missing), "--out", p(&dir.path().join("r.txt"))], None);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("absent-weights.txt"), "{err}");
    assert_eq!(err.trim_end().lines().count(), 1);
}

#[test]
fn argument_errors_exit_2() {
    assert_eq!(strn(&[], None).status.code(), Some(2));
    assert_eq!(strn(&["train", "--out", "w.txt"], None).status.code(), Some(2));
    assert_eq!(strn(&["frobnicate"], None).status.code(), Some(2));
    let bad = strn(&["train", "--seq", "x", "--out", "w", "--ablation", "A+Q"], None);
    assert_eq!(bad.status.code(), Some(2));
    assert_eq!(strn(&["--help"], None).status.code(), Some(0));
}

#[test]
fn bad_seed_variable_is_an_argument_error() {
    let dir = TempDir::new().unwrap();
    let out = strn(&["gen", "--out", p(&dir.path().join("s"))], Some("many"));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn validation_errors_exit_4() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("zero.cfg");
    fs::write(&cfg, "identities = 0\n").unwrap();
    let out = strn(&["gen", "--config", p(&cfg), "--out", p(&dir.path().join("s"))], None);
    assert_eq!(out.status.code(), Some(4));
    fs::write(&cfg, "warp_factor = 9\n").unwrap();
    let out = strn(&["gen", "--config", p(&cfg), "--out", p(&dir.path().join("s"))], None);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 1"));

    let seq = small_sequence(&dir, "s", "");
    fs::write(seq.join("det").join("det.txt"), "1,-1,10,10,5,5,1\n1,-1,bad,10,5,5,1\n").unwrap();
    let out = strn(&["eval", "--gt", p(&seq), "--results", p(&seq.join("det").join("det.txt"))], None);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn seed_falls_back_to_environment() {
    let dir = TempDir::new().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let c = dir.path().join("c");
    assert!(strn(&["gen", "--out", p(&a)], Some("5")).status.success());
    assert!(strn(&["gen", "--out", p(&b)], Some("5")).status.success());
    assert!(strn(&["gen", "--out", p(&c)], Some("6")).status.success());
    let gt = |d: &Path| fs::read(d.join("gt").join("gt.txt")).unwrap();
    assert_eq!(gt(&a), gt(&b));
    assert_ne!(gt(&a), gt(&c));
}

#[test]
fn full_pipeline_populates_every_metric() {
    let dir = TempDir::new().unwrap();
    let train_seq = small_sequence(&dir, "train", "seed = 1\nmiss_rate = 0.05\nfp_rate = 0.02\njitter = 1\n");
    let test_seq = small_sequence(&dir, "test", "seed = 2\nmiss_rate = 0.05\nfp_rate = 0.02\njitter = 1\n");
    let w = dir.path().join("w.txt");
    let loss = dir.path().join("loss.csv");
    let msg = ok(&["train", "--seq", &format!("{},{}", p(&train_seq), p(&test_seq)), "--out", p(&w), "--iters", "150", "--seed", "4", "--loss", p(&loss)]);
    assert!(msg.contains("150 iterations"), "{msg}");
    let curve = fs::read_to_string(&loss).unwrap();
    assert_eq!(curve.lines().next(), Some("iter,loss"));
    assert_eq!(curve.lines().count(), 151);

    let results = dir.path().join("r.txt");
    ok(&["track", "--seq", p(&test_seq), "--weights", p(&w), "--out", p(&results)]);
    let report = ok(&["eval", "--gt", p(&test_seq), "--results", p(&results)]);
    let keys: Vec<&str> = report.lines().take(12).map(|l| l.split('=').next().unwrap()).collect();
    assert_eq!(keys, ["MOTA", "MOTP", "IDF1", "IDP", "IDR", "MT", "ML", "FP", "FN", "IDS", "Frag", "GT"]);
    for line in report.lines().take(12) {
        let v: f64 = line.split('=').nth(1).unwrap().parse().unwrap();
        assert!(v.is_finite());
    }

    let again = dir.path().join("r2.txt");
    ok(&["track", "--seq", p(&test_seq), "--weights", p(&w), "--out", p(&again)]);
    assert_eq!(fs::read(&results).unwrap(), fs::read(&again).unwrap());

    let dump = dir.path().join("attn.txt");
    ok(&["attn-dump", "--seq", p(&test_seq), "--weights", p(&w), "--frame", "60", "--out", p(&dump)]);
    let text = fs::read_to_string(&dump).unwrap();
    assert!(text.starts_with("STRN-ATTN v1 frame=60"));
    for row in text.lines().filter(|l| l.starts_with("attn,")) {
        let s: f64 = row.split(',').skip(3).map(|v| v.parse::<f64>().unwrap()).sum();
        assert!((s - 1.0).abs() < 1e-9, "{row}");
    }
    assert!(text.lines().any(|l| l.starts_with("temporal,")));

    let out = strn(&["attn-dump", "--seq", p(&test_seq), "--weights", p(&w), "--frame", "100000", "--out", p(&dump)], None);
    assert_eq!(out.status.code(), Some(2));
    let out = strn(&["track", "--seq", p(&test_seq), "--weights", p(&w), "--out", p(&results), "--match-threshold", "1.5"], None);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn track_respects_ablation_override_and_missing_features() {
    let dir = TempDir::new().unwrap();
    let seq = small_sequence(&dir, "s", "seed = 9\n");
    let w = dir.path().join("w.txt");
    ok(&["train", "--seq", p(&seq), "--out", p(&w), "--iters", "30", "--ablation", "A"]);
    assert!(fs::read_to_string(&w).unwrap().contains("@meta ablation A\n"));
    let r = dir.path().join("r.txt");
    let msg = ok(&["track", "--seq", p(&seq), "--weights", p(&w), "--out", p(&r), "--ablation", "A+L+S+Max"]);
    assert!(msg.contains("A+L+S+Max"), "{msg}");

    let feats = seq.join("feat").join("feat.txt");
    let text = fs::read_to_string(&feats).unwrap();
    let trimmed: String = text.lines().take(text.lines().count() - 1).map(|l| format!("{l}\n")).collect();
    let partial = dir.path().join("partial.txt");
    fs::write(&partial, trimmed).unwrap();
    let out = strn(&["track", "--seq", p(&seq), "--weights", p(&w), "--out", p(&r), "--features", p(&partial)], None);
    assert_eq!(out.status.code(), Some(4));
}
