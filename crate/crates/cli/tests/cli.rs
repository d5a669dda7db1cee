use std::path::Path;
use std::process::{Command, Output};

fn bfly(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bfly")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn csv_rows(path: &Path) -> Vec<csv::StringRecord> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records().map(|x| x.unwrap()).collect()
}

fn column(path: &Path, name: &str) -> Vec<String> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let i = r.headers().unwrap().iter().position(|h| h == name).unwrap();
    r.records().map(|x| x.unwrap()[i].to_string()).collect()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn synth_writes_container_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_eq!(code(&bfly(&["synth", "--L", "6", "--rank", "8", "--seed", "4", "--out", s(&a)])), 0);
    assert_eq!(code(&bfly(&["synth", "--L", "6", "--rank", "8", "--seed", "4", "--out", s(&b)])), 0);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["n"], 512);
    assert_eq!(manifest["L"], 6);
    assert_eq!(manifest["r"], 8);
    assert_eq!(
        std::fs::read(a.join("synthetic.bfly")).unwrap(),
        std::fs::read(b.join("synthetic.bfly")).unwrap()
    );
    let o = bfly(&["synth", "--rank", "9", "--out", s(&a)]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("rank 9"));
}

#[test]
fn factorize_synthetic_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    assert_eq!(code(&bfly(&["synth", "--L", "6", "--rank", "4", "--out", s(out)])), 0);
    let manifest = out.join("manifest.json");
    let o = bfly(&[
        "factorize", "--config", s(&manifest), "--eps", "1e-12", "--oversample", "2", "--max-error", "1e-10",
        "--out", s(out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = out.join("factorize.csv");
    let err: f64 = column(&csv, "error")[0].parse().unwrap();
    assert!(err <= 1e-10);
    assert_eq!(column(&csv, "max_rank")[0], "4");
    assert_eq!(column(&csv, "schema")[0], "factorize.v1");
    let log: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("factorization_log.json")).unwrap()).unwrap();
    let total = log["counts"]["forward_cols"].as_u64().unwrap() + log["counts"]["transpose_cols"].as_u64().unwrap();
    assert_eq!(column(&csv, "matvec_cols")[0], total.to_string());
    assert!(out.join("butterfly.bfly").exists());
}

#[test]
fn factorize_kernel_within_slack_and_max_error_gate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "k.toml", "[operator]\ntype = \"helmholtz3d\"\nn = 2048\nseed = 2\n");
    let out = dir.path().join("o");
    let o = bfly(&["factorize", "--config", &cfg, "--eps", "1e-2", "--r0", "64", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = out.join("factorize.csv");
    let err: f64 = column(&csv, "error")[0].parse().unwrap();
    let levels: f64 = column(&csv, "L")[0].parse().unwrap();
    assert!(err <= (levels + 2.0).sqrt() * 1e-2 * 3.0, "{err}");
    // A limit below the achieved error turns into exit status 1.
    let o = bfly(&["factorize", "--config", &cfg, "--eps", "1e-2", "--r0", "64", "--max-error", "1e-6", "--out", s(&out)]);
    assert_eq!(code(&o), 1);
}

#[test]
fn verify_kernel_bounds_and_tightness() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "k.json", r#"{"operator": {"type": "helmholtz3d", "n": 1024, "seed": 1}}"#);
    let out = dir.path().join("o");
    let o = bfly(&["verify", "--config", &cfg, "--eps", "1e-3", "--r0", "64", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let rows = csv_rows(&out.join("bounds.csv"));
    let checks: Vec<String> = column(&out.join("bounds.csv"), "check");
    for kind in ["column_basis", "row_basis", "hybrid"] {
        assert!(checks.iter().any(|c| c == kind));
    }
    assert!(column(&out.join("bounds.csv"), "pass").iter().all(|p| p == "true"));
    assert_eq!(rows.len(), checks.len());

    // The stored factorization cannot meet a hundredfold tighter bound.
    let stored = out.join("stored.bfly");
    let o = bfly(&["factorize", "--config", &cfg, "--eps", "1e-3", "--r0", "64", "--out", s(&out)]);
    assert_eq!(code(&o), 0);
    std::fs::rename(out.join("butterfly.bfly"), &stored).unwrap();
    let o = bfly(&["verify", "--config", &cfg, "--eps", "1e-5", "--butterfly", s(&stored), "--out", s(&out)]);
    assert_eq!(code(&o), 1);
    assert!(column(&out.join("bounds.csv"), "pass").iter().any(|p| p == "false"));
}

#[test]
fn verify_exact_synthetic_and_dense_cap() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    assert_eq!(code(&bfly(&["synth", "--L", "4", "--rank", "2", "--out", s(out)])), 0);
    let manifest = out.join("manifest.json");
    let o = bfly(&["verify", "--config", s(&manifest), "--eps", "1e-10", "--out", s(out)]);
    assert_eq!(code(&o), 0);
    let residuals: Vec<f64> = column(&out.join("bounds.csv"), "residual").iter().map(|v| v.parse().unwrap()).collect();
    assert!(residuals.iter().all(|&r| r < 1e-10));
    let o = bfly(&["verify", "--config", s(&manifest), "--dense-cap", "64", "--out", s(out)]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("dense-cap"));
}

#[test]
fn bench_synthetic_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "b.json",
        r#"{"operator": {"type": "synthetic", "L": 5, "rank": 3}, "oversample": 2, "eps": 1e-10, "sweep": {"L": [5, 6, 7, 8, 9]}}"#,
    );
    let out = dir.path().join("o");
    let o = bfly(&["bench", "--config", &cfg, "--out", s(&out), "--threads", "2"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = out.join("bench.csv");
    assert_eq!(csv_rows(&csv).len(), 5);
    assert_eq!(column(&csv, "predicted_transfer_cols"), column(&csv, "transfer_cols"));
    let fit: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("bench_fit.json")).unwrap()).unwrap();
    assert!(fit[0]["memory_spread"].as_f64().unwrap() <= 1.5);
    assert_eq!(fit[0]["transfer_matches"], true);

    let empty = write(dir.path(), "e.json", r#"{"operator": {"type": "synthetic", "L": 5, "rank": 3}}"#);
    let o = bfly(&["bench", "--config", &empty, "--out", s(&out)]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("sweep"));
}

#[test]
fn comm_grid_and_simulation() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let o = bfly(&["comm", "--levels", "4", "--kinds", "hybrid", "--r", "2", "--out", s(out)]);
    assert_eq!(code(&o), 0);
    let csv = out.join("comm.csv");
    let rows = csv_rows(&csv);
    assert_eq!(rows.len(), 5);
    // hybrid, L = 4, p = 4: no exchange.
    let p4 = rows.iter().find(|r| &r[5] == "4").unwrap();
    assert_eq!((&p4[6], &p4[7]), ("0", "0"));

    let o = bfly(&["comm", "--levels", "4,6", "--simulate", "--out", s(out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let sources = column(&csv, "source");
    assert_eq!(sources.iter().filter(|x| *x == "measured").count(), sources.len() / 2);

    let o = bfly(&["comm", "--p", "3", "--out", s(out)]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("power of two"));
}

#[test]
fn comm_time_model_column() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let o = bfly(&[
        "comm", "--levels", "4", "--kinds", "column", "--r", "2", "--p", "4", "--alpha", "1e-6", "--beta", "1e-9",
        "--out", s(out),
    ]);
    assert_eq!(code(&o), 0);
    let t: f64 = column(&out.join("comm.csv"), "model_time_s")[0].parse().unwrap();
    assert!((t - (5.0e-6 + 24.0e-9)).abs() < 1e-15);
    let o = bfly(&["comm", "--alpha", "1e-6", "--out", s(out)]);
    assert_eq!(code(&o), 2);
}

#[test]
fn missing_operator_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = bfly(&["factorize", "--out", s(dir.path())]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("operator"));
}
