use std::path::Path;
use std::process::{Command, Output};

fn cfmm(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cfmm"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = cfmm(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    std::fs::read(dir.join(name)).unwrap()
}

#[test]
fn gen_data_count_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["gen-data", "--scenarios", "8x3:urban", "--count", "10", "--seed", "1", "--out", "a.jsonl"]);
    ok(
        d,
        &["--threads", "1", "gen-data", "--scenarios", "8x3:urban", "--count", "10", "--seed", "1", "--out", "b.jsonl"],
    );
    let a = read(d, "a.jsonl");
    assert_eq!(String::from_utf8_lossy(&a).lines().count(), 10);
    assert_eq!(a, read(d, "b.jsonl"));
    ok(d, &["gen-data", "--scenarios", "8x3:urban", "--count", "10", "--seed", "2", "--out", "c.jsonl"]);
    assert_ne!(a, read(d, "c.jsonl"));
}

#[test]
fn solve_labels_unlabeled_data() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["gen-data", "--unlabeled", "--scenarios", "3x2:urban", "--count", "4", "--seed", "5", "--out", "u.jsonl"]);
    assert!(!String::from_utf8_lossy(&read(d, "u.jsonl")).contains("eta_opt"));
    ok(d, &["solve", "--in", "u.jsonl", "--out", "s.jsonl"]);
    ok(d, &["gen-data", "--scenarios", "3x2:urban", "--count", "4", "--seed", "5", "--out", "g.jsonl"]);
    assert_eq!(read(d, "s.jsonl"), read(d, "g.jsonl"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let code = |args: &[&str]| cfmm(d, args).status.code().unwrap();
    assert_eq!(code(&["gen-data", "--scenarios", "8x3:lunar", "--count", "1", "--out", "x"]), 2);
    assert_eq!(code(&["gen-data", "--scenarios", "8by3:urban", "--count", "1", "--out", "x"]), 2);
    assert_eq!(code(&["gen-data", "--scenarios", "8x3:urban", "--count", "1", "--out", "x", "--bogus"]), 2);
    assert_eq!(code(&["solve", "--in", "missing.jsonl", "--out", "x"]), 2);
    assert_eq!(code(&["eval", "--model", "m.json", "--data", "d.jsonl", "--report-dir", "r"]), 2);
    assert_eq!(code(&["flops", "--model", "m.json", "--grid", "8x", "--out", "f.csv"]), 2);
    assert_eq!(code(&["frobnicate"]), 2);
    assert_eq!(code(&["--threads", "0", "gen-data", "--scenarios", "2x2:urban", "--count", "1", "--out", "x"]), 2);
    // runtime failure: output directory does not exist
    assert_eq!(code(&["gen-data", "--scenarios", "2x2:urban", "--count", "1", "--out", "no/such/dir.jsonl"]), 1);
    assert_eq!(code(&["--help"]), 0);
}

#[test]
fn pipeline_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("train.toml"), "epochs = 2\nbatch_size = 8\nseed = 3\n").unwrap();
    ok(d, &["gen-data", "--scenarios", "4x2:urban,3x3:suburban", "--count", "12", "--seed", "9", "--out", "d.jsonl"]);
    for (run, threads) in [("a", "1"), ("b", "2")] {
        ok(
            d,
            &["--threads", threads, "train", "--data", "d.jsonl", "--config", "train.toml", "--out", &format!("{run}.json")],
        );
        ok(
            d,
            &[
                "--threads",
                threads,
                "eval",
                "--model",
                &format!("{run}.json"),
                "--data",
                "d.jsonl",
                "--report-dir",
                &format!("rep_{run}"),
            ],
        );
    }
    assert_eq!(read(d, "a.json"), read(d, "b.json"));
    for epoch in ["epoch_0001.json", "epoch_0002.json"] {
        assert_eq!(read(d, &format!("a.json.epochs/{epoch}")), read(d, &format!("b.json.epochs/{epoch}")));
    }
    for f in ["summary.csv", "report.json", "cdf_4x2_urban.csv", "cdf_3x3_suburban.csv"] {
        assert_eq!(read(d, &format!("rep_a/{f}")), read(d, &format!("rep_b/{f}")), "{f}");
    }
    let summary = String::from_utf8(read(d, "rep_a/summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3);

    ok(d, &["train", "--data", "d.jsonl", "--config", "train.toml", "--out", "c.json", "--resume", "a.json.epochs/epoch_0001.json"]);
    assert_eq!(read(d, "a.json"), read(d, "c.json"));
}

#[test]
fn flops_sweep_fits_linear_law() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["gen-data", "--scenarios", "3x2:urban", "--count", "8", "--seed", "1", "--out", "d.jsonl"]);
    std::fs::write(d.join("train.toml"), "epochs = 1\n").unwrap();
    ok(d, &["train", "--data", "d.jsonl", "--config", "train.toml", "--out", "m.json"]);
    let grid: Vec<String> = [8, 16, 32, 64, 128]
        .iter()
        .flat_map(|m| [5, 9, 18, 32].map(|k| format!("{m}x{k}")))
        .collect();
    let out = ok(d, &["flops", "--model", "m.json", "--grid", &grid.join(","), "--out", "f.csv"]);
    let text = String::from_utf8(read(d, "f.csv")).unwrap();
    assert!(text.starts_with("M,K,mk_m_plus_k,gnn_flops,solver_flops\n"));
    let rows: Vec<Vec<f64>> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').take(4).map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 20);
    let x: Vec<f64> = rows.iter().map(|r| r[2]).collect();
    let y: Vec<f64> = rows.iter().map(|r| r[3]).collect();
    let (_, _, r2) = cfmm::eval::linear_fit(&x, &y).unwrap();
    assert!(r2 >= 0.99, "R^2 = {r2}");
    assert!(String::from_utf8_lossy(&out.stdout).contains("R^2"));
}
