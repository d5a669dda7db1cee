use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use anyhow::{bail, Context, Result};
use butterfly_core::butterfly::{read_butterfly, write_butterfly, HybridButterfly};
use butterfly_core::hier::PartitionTree;
use butterfly_core::layout::{
    comm_cost, simulated_parallel_apply, write_comm_csv, CommCostRow, LayoutKind, LayoutSpec,
};
use butterfly_core::linalg::{derive_seed, gaussian_matrix, Scalar};
use butterfly_core::operators::{
    build_problem, synth_butterfly, AnyProblem, OperatorConfig, Problem, SyntheticButterflySpec,
};
use butterfly_core::reconstruct::{
    check_error_bounds, estimate_error, factorize as reconstruct, FactorizationLog, ReconstructionConfig,
};
use num_complex::Complex64;
use serde::Serialize;

use crate::config::{Settings, ERROR_COLUMNS};
use crate::report::{
    constant_rank_transfer_columns, loglog_slope, write_csv, write_json, BenchRow, BoundRow, FactorizeRow,
    BENCH_SCHEMA, BOUNDS_SCHEMA, FACTORIZE_SCHEMA,
};
use crate::Outcome;

pub const CONTAINER_NAME: &str = "butterfly.bfly";
pub const SYNTH_CONTAINER_NAME: &str = "synthetic.bfly";
pub const MANIFEST_NAME: &str = "manifest.json";
pub const LOG_NAME: &str = "factorization_log.json";
pub const BOUNDS_NAME: &str = "bounds.json";
pub const FIT_NAME: &str = "bench_fit.json";

/// Seed path of the error-estimate test matrix.
const ERROR_SEED_TAG: u64 = 0xE5;

/// Written next to a synthetic container; also a valid `--config`.
#[derive(Clone, Debug, Serialize)]
pub struct Manifest {
    pub schema: &'static str,
    pub n: usize,
    #[serde(rename = "L")]
    pub levels: usize,
    pub l_m: usize,
    pub r: usize,
    pub seed: u64,
    pub scalar: String,
    pub operator: OperatorConfig,
}

pub fn synth(s: &Settings, rank: Option<usize>, complex: bool) -> Result<Outcome> {
    let from_cfg = match &s.operator {
        Some(OperatorConfig::Synthetic { levels, rank, .. }) => Some((*levels, *rank)),
        _ => None,
    };
    let levels = s.levels.or(from_cfg.map(|c| c.0)).unwrap_or(6);
    let rank = rank.or(from_cfg.map(|c| c.1)).unwrap_or(8);
    let mut spec = SyntheticButterflySpec::new(levels, rank, s.seed);
    spec.center = s.center;
    let path = s.out.join(SYNTH_CONTAINER_NAME);
    let sink = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
    let (l_m, scalar) = if complex {
        let bf = synth_butterfly::<Complex64>(&spec)?;
        write_butterfly(&bf, sink)?;
        (bf.center(), "complex")
    } else {
        let bf = synth_butterfly::<f64>(&spec)?;
        write_butterfly(&bf, sink)?;
        (bf.center(), "real")
    };
    let manifest = Manifest {
        schema: "manifest.v1",
        n: spec.size(),
        levels,
        l_m,
        r: rank,
        seed: s.seed,
        scalar: scalar.into(),
        operator: OperatorConfig::Butterfly {
            path: SYNTH_CONTAINER_NAME.into(),
        },
    };
    write_json(&s.out.join(MANIFEST_NAME), &manifest)?;
    println!("synthetic butterfly: n = {}, L = {levels}, r = {rank} -> {}", spec.size(), path.display());
    Ok(Outcome::Pass)
}

fn operator_name(op: &OperatorConfig) -> &'static str {
    match op {
        OperatorConfig::Synthetic { .. } => "synthetic",
        OperatorConfig::Helmholtz3d(_) => "helmholtz3d",
        OperatorConfig::Scattering2d(_) => "scattering2d",
        OperatorConfig::Butterfly { .. } => "butterfly",
    }
}

fn recon_config(s: &Settings, eps: f64) -> ReconstructionConfig {
    let mut cfg = ReconstructionConfig::new(eps, s.oversample, s.r0, s.seed);
    cfg.center = s.center;
    cfg
}

/// Result of one factorization run.
struct Run<T: Scalar> {
    bf: HybridButterfly<T>,
    log: FactorizationLog,
    error: f64,
}

fn run_one<T: Scalar>(problem: &Problem<T>, trees: &(PartitionTree, PartitionTree), cfg: &ReconstructionConfig) -> Result<Run<T>> {
    problem.op.reset_counts();
    let (bf, log) = reconstruct(&problem.op, &trees.0, &trees.1, cfg)?;
    let error = estimate_error(&problem.op, &bf, ERROR_COLUMNS, derive_seed(cfg.seed, &[ERROR_SEED_TAG]))?;
    Ok(Run { bf, log, error })
}

fn scalar_name<T: Scalar>() -> &'static str {
    if T::KIND == butterfly_core::linalg::ScalarKind::Real {
        "real"
    } else {
        "complex"
    }
}

fn factorize_typed<T: Scalar>(s: &Settings, name: &str, problem: &Problem<T>, max_error: Option<f64>) -> Result<Outcome> {
    let trees = problem.trees(s.levels, s.leaf_size)?;
    let cfg = recon_config(s, s.eps);
    let run = run_one(problem, &trees, &cfg)?;
    let path = s.out.join(CONTAINER_NAME);
    write_butterfly(&run.bf, BufWriter::new(File::create(&path)?))?;
    write_json(&s.out.join(LOG_NAME), &run.log)?;
    let mem = run.bf.memory_report();
    let row = FactorizeRow {
        schema: FACTORIZE_SCHEMA.into(),
        operator: name.into(),
        scalar: scalar_name::<T>().into(),
        m: run.bf.rows(),
        n: run.bf.cols(),
        levels: run.bf.levels(),
        l_m: run.bf.center(),
        eps: s.eps,
        oversample: s.oversample,
        r0: s.r0,
        seed: s.seed,
        max_rank: run.bf.max_rank(),
        error: run.error,
        nnz: mem.nnz,
        bytes: mem.bytes,
        matvec_cols: run.log.counts.total_cols(),
        forward_cols: run.log.counts.forward_cols,
        transpose_cols: run.log.counts.transpose_cols,
        leaf_cols: run.log.leaf_columns(),
        time_s: run.log.seconds,
    };
    write_csv(&s.csv_path("factorize.csv"), std::slice::from_ref(&row))?;
    println!(
        "{name}: {}x{} L = {} l_m = {} eps = {:e}: max rank {}, error {:.3e}, {} bytes, {} matvec columns, {:.2} s",
        row.m, row.n, row.levels, row.l_m, row.eps, row.max_rank, row.error, row.bytes, row.matvec_cols, row.time_s
    );
    Ok(match max_error {
        Some(limit) if run.error > limit => {
            println!("FAIL: error {:.3e} above --max-error {limit:e}", run.error);
            Outcome::ChecksFailed
        }
        _ => Outcome::Pass,
    })
}

pub fn factorize(s: &Settings, max_error: Option<f64>) -> Result<Outcome> {
    let op = s.operator()?;
    let name = operator_name(op);
    match build_problem(op)? {
        AnyProblem::Real(p) => factorize_typed(s, name, &p, max_error),
        AnyProblem::Complex(p) => factorize_typed(s, name, &p, max_error),
    }
}

fn verify_typed<T: Scalar>(s: &Settings, problem: &Problem<T>, stored: Option<&Path>) -> Result<Outcome> {
    let (m, n) = (problem.op.rows(), problem.op.cols());
    if m.max(n) > s.dense_cap {
        bail!("dense check of a {m}x{n} operator exceeds --dense-cap {}", s.dense_cap);
    }
    let bf = match stored {
        Some(path) => read_butterfly::<T, _>(BufReader::new(
            File::open(path).with_context(|| format!("opening {}", path.display()))?,
        ))?,
        None => {
            let trees = problem.trees(s.levels, s.leaf_size)?;
            reconstruct(&problem.op, &trees.0, &trees.1, &recon_config(s, s.eps))?.0
        }
    };
    let dense = problem.op.densify()?;
    let report = check_error_bounds(&dense, &bf, s.eps, s.dense_cap * s.dense_cap)?;
    let rows: Vec<BoundRow> = report
        .checks
        .iter()
        .map(|c| BoundRow {
            schema: BOUNDS_SCHEMA.into(),
            check: match c.kind {
                butterfly_core::reconstruct::BoundKind::ColumnBasis => "column_basis",
                butterfly_core::reconstruct::BoundKind::RowBasis => "row_basis",
                butterfly_core::reconstruct::BoundKind::Hybrid => "hybrid",
            }
            .into(),
            level: c.level,
            residual: c.residual_sq.sqrt(),
            bound: c.bound_sq.sqrt(),
            ratio: c.ratio(),
            pass: c.pass,
        })
        .collect();
    write_csv(&s.csv_path("bounds.csv"), &rows)?;
    write_json(&s.out.join(BOUNDS_NAME), &report)?;
    for r in &rows {
        println!(
            "{:<12} level {:>2}: residual {:.3e} bound {:.3e} ratio {:.3} {}",
            r.check,
            r.level,
            r.residual,
            r.bound,
            r.ratio,
            if r.pass { "pass" } else { "FAIL" }
        );
    }
    println!("relative error of the assembled factorization: {:.3e}", report.relative_error);
    Ok(Outcome::from_pass(report.all_pass()))
}

pub fn verify(s: &Settings, stored: Option<&Path>) -> Result<Outcome> {
    match build_problem(s.operator()?)? {
        AnyProblem::Real(p) => verify_typed(s, &p, stored),
        AnyProblem::Complex(p) => verify_typed(s, &p, stored),
    }
}

/// Operator configurations of a bench sweep, with the constant rank when known.
fn bench_operators(s: &Settings) -> Result<Vec<(OperatorConfig, Option<usize>)>> {
    let base = s.operator()?.clone();
    let sw = &s.sweep;
    let list = match &base {
        OperatorConfig::Synthetic { rank, seed, scalar, .. } => {
            if sw.levels.is_empty() {
                bail!("bench over a synthetic operator needs a nonempty sweep.L list");
            }
            sw.levels
                .iter()
                .map(|&l| {
                    let op = OperatorConfig::Synthetic {
                        levels: l,
                        rank: *rank,
                        seed: *seed,
                        scalar: *scalar,
                    };
                    (op, Some(*rank))
                })
                .collect()
        }
        OperatorConfig::Helmholtz3d(h) => {
            if sw.n.is_empty() {
                bail!("bench over a 3D kernel needs a nonempty sweep.n list");
            }
            sw.n.iter()
                .map(|&n| (OperatorConfig::Helmholtz3d(butterfly_core::operators::Helmholtz3DConfig { n, ..*h }), None))
                .collect()
        }
        OperatorConfig::Scattering2d(c) => {
            if sw.n.is_empty() {
                bail!("bench over a scattering operator needs a nonempty sweep.n list");
            }
            sw.n.iter()
                .map(|&n| (OperatorConfig::Scattering2d(butterfly_core::operators::Scattering2DConfig { n, ..*c }), None))
                .collect()
        }
        OperatorConfig::Butterfly { .. } => bail!("bench needs a synthetic, helmholtz3d or scattering2d operator"),
    };
    Ok(list)
}

fn bench_typed<T: Scalar>(
    s: &Settings,
    name: &str,
    problem: &Problem<T>,
    rank: Option<usize>,
    depths: &[Option<usize>],
    eps_list: &[f64],
    rows: &mut Vec<BenchRow>,
) -> Result<()> {
    for &depth in depths {
        let trees = problem.trees(depth, s.leaf_size)?;
        for &eps in eps_list {
            let run = run_one(problem, &trees, &recon_config(s, eps))?;
            let mem = run.bf.memory_report();
            let n = run.bf.cols();
            let nlogn = n as f64 * (n as f64).log2();
            let predicted = rank.map(|r| constant_rank_transfer_columns(run.bf.levels(), run.bf.center(), r, s.oversample));
            let row = BenchRow {
                schema: BENCH_SCHEMA.into(),
                operator: name.into(),
                n,
                levels: run.bf.levels(),
                l_m: run.bf.center(),
                eps,
                max_rank: run.bf.max_rank(),
                nnz: mem.nnz,
                bytes: mem.bytes,
                nnz_per_nlogn: mem.nnz as f64 / nlogn,
                matvec_cols: run.log.counts.total_cols(),
                leaf_cols: run.log.leaf_columns(),
                transfer_cols: run.log.transfer_columns(),
                predicted_transfer_cols: predicted,
                error: run.error,
                time_s: run.log.seconds,
            };
            println!(
                "{name} n = {n} L = {} eps = {eps:e}: rank {}, nnz/(n log n) {:.3}, matvec columns {}, error {:.3e}, {:.2} s",
                row.levels, row.max_rank, row.nnz_per_nlogn, row.matvec_cols, row.error, row.time_s
            );
            rows.push(row);
        }
    }
    Ok(())
}

/// Fitted trends of one tolerance group of a bench sweep.
#[derive(Clone, Debug, Serialize)]
pub struct BenchFit {
    pub eps: f64,
    pub points: usize,
    /// Slope of `log(nnz / (n log n))` against `log n`; near 0 for `O(n log n)` memory.
    pub memory_slope: Option<f64>,
    /// Largest over smallest `nnz / (n log n)`.
    pub memory_spread: f64,
    /// Slope of `log(matvec columns / √n)` against `log n`.
    pub matvec_slope: Option<f64>,
    /// Rows whose transfer columns equal the constant-rank prediction.
    pub transfer_matches: Option<bool>,
}

pub fn bench(s: &Settings) -> Result<Outcome> {
    let ops = bench_operators(s)?;
    let eps_list = if s.sweep.eps.is_empty() { vec![s.eps] } else { s.sweep.eps.clone() };
    let synthetic = matches!(s.operator()?, OperatorConfig::Synthetic { .. });
    let depths: Vec<Option<usize>> = if synthetic || s.sweep.levels.is_empty() {
        vec![s.levels]
    } else {
        s.sweep.levels.iter().map(|&l| Some(l)).collect()
    };
    let mut rows = Vec::new();
    for (op, rank) in &ops {
        let name = operator_name(op);
        match build_problem(op)? {
            AnyProblem::Real(p) => bench_typed(s, name, &p, *rank, &depths, &eps_list, &mut rows)?,
            AnyProblem::Complex(p) => bench_typed(s, name, &p, *rank, &depths, &eps_list, &mut rows)?,
        }
    }
    write_csv(&s.csv_path("bench.csv"), &rows)?;

    let mut fits = Vec::new();
    let mut pass = true;
    for &eps in &eps_list {
        let group: Vec<&BenchRow> = rows.iter().filter(|r| r.eps == eps).collect();
        let mem: Vec<(f64, f64)> = group.iter().map(|r| (r.n as f64, r.nnz_per_nlogn)).collect();
        let mv: Vec<(f64, f64)> = group
            .iter()
            .map(|r| (r.n as f64, r.matvec_cols as f64 / (r.n as f64).sqrt()))
            .collect();
        let hi = mem.iter().map(|p| p.1).fold(f64::MIN, f64::max);
        let lo = mem.iter().map(|p| p.1).fold(f64::MAX, f64::min);
        let transfer_matches = synthetic.then(|| {
            group
                .iter()
                .all(|r| r.predicted_transfer_cols == Some(r.transfer_cols))
        });
        pass &= transfer_matches != Some(false);
        let fit = BenchFit {
            eps,
            points: group.len(),
            memory_slope: loglog_slope(&mem),
            memory_spread: hi / lo,
            matvec_slope: loglog_slope(&mv),
            transfer_matches,
        };
        println!(
            "eps = {eps:e}: nnz/(n log n) spread {:.3}, slope {}, matvec/sqrt(n) slope {}",
            fit.memory_spread,
            fit.memory_slope.map_or("-".into(), |v| format!("{v:.3}")),
            fit.matvec_slope.map_or("-".into(), |v| format!("{v:.3}")),
        );
        fits.push(fit);
    }
    write_json(&s.out.join(FIT_NAME), &fits)?;
    Ok(Outcome::from_pass(pass))
}

/// Grid of a `comm` run; empty lists take their defaults.
#[derive(Clone, Debug, Default)]
pub struct CommGrid {
    pub kinds: Vec<LayoutKind>,
    pub ranks: Vec<usize>,
    pub procs: Vec<usize>,
    pub depths: Vec<usize>,
    pub simulate: bool,
    pub time_model: Option<(f64, f64)>,
}

pub fn comm(s: &Settings, grid: &CommGrid) -> Result<Outcome> {
    let pick = |flag: &Vec<usize>, cfg: &Vec<usize>| if flag.is_empty() { cfg.clone() } else { flag.clone() };
    let kinds = match (grid.kinds.is_empty(), s.sweep.kinds.is_empty()) {
        (false, _) => grid.kinds.clone(),
        (true, false) => s.sweep.kinds.clone(),
        (true, true) => LayoutKind::ALL.to_vec(),
    };
    let mut depths = pick(&grid.depths, &s.sweep.levels);
    if depths.is_empty() {
        depths = s.levels.map_or(vec![4, 6, 8], |l| vec![l]);
    }
    let mut ranks = pick(&grid.ranks, &s.sweep.r);
    if ranks.is_empty() {
        ranks = vec![SyntheticButterflySpec::LEAF_SIZE];
    }
    let procs = pick(&grid.procs, &s.sweep.p);

    let mut rows = Vec::new();
    let mut pass = true;
    for &kind in &kinds {
        for &levels in &depths {
            let ps: Vec<usize> = if procs.is_empty() {
                (0..=levels).map(|k| 1 << k).collect()
            } else {
                procs.clone()
            };
            for &r in &ranks {
                let bf = if grid.simulate {
                    let spec = SyntheticButterflySpec::new(levels, r, s.seed).with_center(kind.center(levels));
                    Some(synth_butterfly::<f64>(&spec)?)
                } else {
                    None
                };
                for &p in &ps {
                    let spec = LayoutSpec::new(p, kind, levels, r);
                    let mut model = comm_cost(&spec)?;
                    if let Some((a, b)) = grid.time_model {
                        model = model.with_time_model(a, b);
                    }
                    rows.push(CommCostRow::new(&spec, &model, "model"));
                    if let Some(bf) = &bf {
                        let x = gaussian_matrix::<f64>(bf.cols(), 1, derive_seed(s.seed, &[p as u64]));
                        let (_, mut measured) = simulated_parallel_apply(bf, &x, &spec)?;
                        if let Some((a, b)) = grid.time_model {
                            measured = measured.with_time_model(a, b);
                        }
                        let agree = measured.same_counts(&model);
                        if !agree {
                            println!(
                                "mismatch {} L = {levels} r = {r} p = {p}: model {model:?}, measured {measured:?}",
                                kind.name()
                            );
                        }
                        pass &= agree;
                        rows.push(CommCostRow::new(&spec, &measured, "measured"));
                    }
                }
            }
        }
    }
    let path = s.csv_path("comm.csv");
    write_comm_csv(File::create(&path).with_context(|| format!("creating {}", path.display()))?, &rows)?;
    println!("{} rows -> {}", rows.len(), path.display());
    if grid.simulate {
        println!("simulation {}", if pass { "matches the model" } else { "DIFFERS from the model" });
    }
    Ok(Outcome::from_pass(pass))
}
