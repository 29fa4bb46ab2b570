use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_forest-dsh"))
        .args(args)
        .env_remove("FOREST_DSH_SEED")
        .output()
        .expect("binary runs")
}

fn json(out: &Output) -> serde_json::Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("json on stdout")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn solve_params_prints_exponent() {
    let v = json(&run(&["solve-params", "--fixture", "example", "--n", "4", "--m", "4"]));
    let lambda = v["lambda"].as_f64().unwrap();
    assert!((lambda - 1.7203).abs() < 0.005, "{lambda}");
}

#[test]
fn pipeline_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let gen = json(&run(&["gen", "--t", "0.25", "--n", "200", "--m", "50", "--s", "200", "--seed", "3", "--out-dir", p(d)]));
    assert_eq!(gen["planted"], 50);
    let tree = d.join("tree.bin");
    let built = json(&run(&[
        "build-tree", "--t", "0.25", "--n", "200", "--m", "200", "--s", "200", "--c1-scale", "300", "--c2-scale", "300", "--c3-scale",
        "1000", "--out", p(&tree),
    ]));
    assert!(built["buckets"].as_u64().unwrap() > 1);
    let index = d.join("index.bin");
    let ix = json(&run(&["index", "--tree", p(&tree), "--data", p(&d.join("x.txt")), "--seed", "1", "--out", p(&index)]));
    assert_eq!(ix["points"], 200);
    let hits = d.join("hits.jsonl");
    let q = run(&[
        "query", "--index", p(&index), "--tree", p(&tree), "--queries", p(&d.join("y.txt")), "--out", p(&hits),
    ]);
    assert!(q.status.success(), "{}", String::from_utf8_lossy(&q.stderr));
    let lines: Vec<serde_json::Value> = fs::read_to_string(&hits)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 50);
    let planted: Vec<(u64, u64)> = fs::read_to_string(d.join("planted.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| {
            let (x, y) = l.split_once(',').unwrap();
            (x.parse().unwrap(), y.parse().unwrap())
        })
        .collect();
    let found = planted
        .iter()
        .filter(|(x, y)| lines[*y as usize]["hits"].as_array().unwrap().iter().any(|h| h[0] == *x))
        .count();
    assert!(found >= 40, "found {found} of 50");
}

#[test]
fn seed_comes_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let with_env = |seed: &str, sub: &str| {
        let out_dir = dir.path().join(sub);
        let out = Command::new(env!("CARGO_BIN_EXE_forest-dsh"))
            .args(["gen", "--hamming", "0.8", "--n", "5", "--m", "5", "--s", "30", "--out-dir", p(&out_dir)])
            .env("FOREST_DSH_SEED", seed)
            .output()
            .unwrap();
        assert_eq!(json(&out)["seed"], seed.parse::<u64>().unwrap());
        fs::read_to_string(out_dir.join("x.txt")).unwrap()
    };
    assert_eq!(with_env("9", "a"), with_env("9", "b"));
    assert_ne!(with_env("9", "a"), with_env("10", "c"));
}

#[test]
fn validation_errors_exit_2() {
    let out = run(&["solve-params", "--fixture", "no-such-model", "--n", "4", "--m", "4"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["solve-params", "--t", "1.5", "--n", "4", "--m", "4"]);
    assert_eq!(out.status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{"unknown_field": 1}"#).unwrap();
    assert_eq!(run(&["bench", "--config", p(&cfg)]).status.code(), Some(2));
}

#[test]
fn node_budget_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "build-tree", "--t", "0.25", "--n", "1000", "--m", "1000", "--s", "1000", "--c1-scale", "300", "--c2-scale", "300", "--c3-scale",
        "1000", "--max-nodes", "10", "--out", p(&dir.path().join("t.bin")),
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn bench_reads_toml() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(
        &cfg,
        r#"
name = "smoke"
n = 64
m = 64
s = 100
methods = ["brute"]

[model]
kind = "interpolate"
t = 0.25
"#,
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let out = run(&["bench", "--config", p(&cfg), "--out-dir", p(&out_dir)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out_dir.join("summary.json").exists());
    let metrics = fs::read_to_string(out_dir.join("metrics.jsonl")).unwrap();
    let first: serde_json::Value = serde_json::from_str(metrics.lines().next().unwrap()).unwrap();
    assert_eq!(first["method"], "brute");
    assert_eq!(first["recall"], 1.0);
}

#[test]
fn ingest_applies_log_rank() {
    let dir = tempfile::tempdir().unwrap();
    let ranks = dir.path().join("ranks.csv");
    fs::write(&ranks, "1,2,-\n# comment\n4,,1\n").unwrap();
    let out = dir.path().join("seqs.txt");
    let v = json(&run(&["ingest", "--ranks", p(&ranks), "--out", p(&out)]));
    assert_eq!(v["items"], 2);
    assert_eq!(fs::read_to_string(&out).unwrap().lines().count(), 2);
}
