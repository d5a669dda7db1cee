//! CSV row schemas and small helpers shared by the subcommands.

use std::fs::File;
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

pub const FACTORIZE_SCHEMA: &str = "factorize.v1";
pub const BOUNDS_SCHEMA: &str = "bounds.v1";
pub const BENCH_SCHEMA: &str = "bench.v1";

/// Columns that depend on the machine and are excluded from determinism checks.
pub const TIMING_COLUMNS: &[&str] = &["time_s"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorizeRow {
    pub schema: String,
    pub operator: String,
    pub scalar: String,
    pub m: usize,
    pub n: usize,
    #[serde(rename = "L")]
    pub levels: usize,
    pub l_m: usize,
    pub eps: f64,
    pub oversample: usize,
    pub r0: usize,
    pub seed: u64,
    pub max_rank: usize,
    pub error: f64,
    pub nnz: u64,
    pub bytes: u64,
    pub matvec_cols: u64,
    pub forward_cols: u64,
    pub transpose_cols: u64,
    pub leaf_cols: u64,
    pub time_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    pub schema: String,
    pub check: String,
    pub level: usize,
    pub residual: f64,
    pub bound: f64,
    pub ratio: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub schema: String,
    pub operator: String,
    pub n: usize,
    #[serde(rename = "L")]
    pub levels: usize,
    pub l_m: usize,
    pub eps: f64,
    pub max_rank: usize,
    pub nnz: u64,
    pub bytes: u64,
    pub nnz_per_nlogn: f64,
    pub matvec_cols: u64,
    pub leaf_cols: u64,
    pub transfer_cols: u64,
    /// Transfer-phase columns predicted for a constant-rank operator; empty otherwise.
    pub predicted_transfer_cols: Option<u64>,
    pub error: f64,
    pub time_s: f64,
}

/// Writes `rows` with a header line, replacing any existing file.
pub fn write_csv<R: Serialize>(path: &Path, rows: &[R]) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = csv::Writer::from_writer(file);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    serde_json::to_writer_pretty(file, value)?;
    Ok(())
}

/// Transfer-phase black-box columns of a reconstruction whose blocks all
/// have rank `r`: one probe of width `2r + p` per internal node on either
/// side of the center.
pub fn constant_rank_transfer_columns(levels: usize, center: usize, r: usize, p: usize) -> u64 {
    let probes = ((1u64 << (center + 1)) - 2) + ((1u64 << (levels - center + 1)) - 2);
    (2 * r + p) as u64 * probes
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let k = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / k;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Drops the named columns from CSV text; used to compare runs.
pub fn strip_columns(text: &str, drop: &[&str]) -> Result<String> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    let keep: Vec<usize> = (0..headers.len()).filter(|&i| !drop.contains(&&headers[i])).collect();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(keep.iter().map(|&i| &headers[i]))?;
    for rec in reader.records() {
        let rec = rec?;
        w.write_record(keep.iter().map(|&i| &rec[i]))?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}
