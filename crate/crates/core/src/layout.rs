//! Distributed data layouts for butterfly products over `p` virtual
//! processes, the closed-form communication model and a simulated parallel
//! apply that tallies every inter-process transfer.
//!
//! Volumes are counted in scalars per right-hand side and reported per
//! process (the maximum over processes). Message counts are per process.

use std::collections::BTreeSet;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::butterfly::{flat, gather_rows, scatter_rows, u_children, unflat, v_children, vstack, HybridButterfly};
use crate::error::{check_dims, Error, Result};
use crate::linalg::{gemm, Op, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayoutKind {
    /// `U^L R^{L-1} … R^0 E^0`, leaf U blocks in 1D-row order.
    Column,
    /// `E^L W^L … W^1 V^0`, leaf V blocks in 1D-row order.
    Row,
    /// Column layout above the center level, row layout below it.
    Hybrid,
}

impl LayoutKind {
    pub const ALL: [LayoutKind; 3] = [LayoutKind::Column, LayoutKind::Row, LayoutKind::Hybrid];

    pub fn name(self) -> &'static str {
        match self {
            LayoutKind::Column => "column",
            LayoutKind::Row => "row",
            LayoutKind::Hybrid => "hybrid",
        }
    }

    /// Center level of the factorization the layout distributes.
    pub fn center(self, levels: usize) -> usize {
        match self {
            LayoutKind::Column => 0,
            LayoutKind::Row => levels,
            LayoutKind::Hybrid => levels / 2,
        }
    }
}

impl std::str::FromStr for LayoutKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "column" => Ok(LayoutKind::Column),
            "row" => Ok(LayoutKind::Row),
            "hybrid" => Ok(LayoutKind::Hybrid),
            _ => Err(Error::Precondition(format!(
                "unknown layout `{s}`; expected column, row or hybrid"
            ))),
        }
    }
}

/// Process count, layout and the constant-rank model parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutSpec {
    pub p: usize,
    pub kind: LayoutKind,
    #[serde(rename = "L")]
    pub levels: usize,
    /// Constant block rank; the model takes `n = r 2^L`.
    pub r: usize,
}

impl LayoutSpec {
    pub fn new(p: usize, kind: LayoutKind, levels: usize, r: usize) -> Self {
        Self { p, kind, levels, r }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.p.is_power_of_two() {
            return Err(Error::Precondition(format!(
                "process count {} is not a power of two",
                self.p
            )));
        }
        if self.levels >= usize::BITS as usize - 1 || self.p > 1usize << self.levels {
            return Err(Error::Precondition(format!(
                "process count {} exceeds 2^L = 2^{}",
                self.p, self.levels
            )));
        }
        Ok(())
    }

    /// `log₂ p`.
    pub fn log_p(&self) -> usize {
        self.p.trailing_zeros() as usize
    }
}

/// Latency/bandwidth model `α + β m` per message of size `m`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeModel {
    pub alpha: f64,
    pub beta: f64,
    /// `α · messages + β · volume`.
    pub seconds: f64,
}

/// Per-process communication for one product with one right-hand side.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommCostReport {
    pub exchange_volume: u64,
    pub exchange_msgs: u64,
    pub alltoall_volume: u64,
    pub alltoall_msgs: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time: Option<TimeModel>,
}

impl CommCostReport {
    pub fn total_msgs(&self) -> u64 {
        self.exchange_msgs + self.alltoall_msgs
    }

    pub fn total_volume(&self) -> u64 {
        self.exchange_volume + self.alltoall_volume
    }

    /// Attaches the `α + β m` time estimate.
    pub fn with_time_model(mut self, alpha: f64, beta: f64) -> Self {
        let seconds = alpha * self.total_msgs() as f64 + beta * self.total_volume() as f64;
        self.time = Some(TimeModel { alpha, beta, seconds });
        self
    }

    /// Equality of the four counters, ignoring the time model.
    pub fn same_counts(&self, other: &CommCostReport) -> bool {
        (self.exchange_volume, self.exchange_msgs, self.alltoall_volume, self.alltoall_msgs)
            == (other.exchange_volume, other.exchange_msgs, other.alltoall_volume, other.alltoall_msgs)
    }
}

/// Closed-form communication of one product under `spec`.
///
/// column/row: `log p` exchange levels; hybrid: `max(0, 2 log p − L)`.
/// Each exchange level moves `r 2^L / p` scalars in one message; the single
/// all-to-all redistributes `r 2^L / p` scalars in `min(2^L/p, p−1)` messages.
pub fn comm_cost(spec: &LayoutSpec) -> Result<CommCostReport> {
    spec.validate()?;
    let k = spec.log_p();
    let blocks = (1u64 << spec.levels) / spec.p as u64;
    let local = spec.r as u64 * blocks;
    let exchange_levels = match spec.kind {
        LayoutKind::Column | LayoutKind::Row => k,
        LayoutKind::Hybrid => (2 * k).saturating_sub(spec.levels),
    } as u64;
    Ok(CommCostReport {
        exchange_volume: local * exchange_levels,
        exchange_msgs: exchange_levels,
        alltoall_volume: local,
        alltoall_msgs: blocks.min(spec.p as u64 - 1),
        time: None,
    })
}

fn reverse_bits(x: usize, bits: usize) -> usize {
    if bits == 0 {
        0
    } else {
        x.reverse_bits() >> (usize::BITS as usize - bits)
    }
}

/// Owner of U-side block `(τ, ν)` at level `l` in the column layout.
///
/// Leaf U blocks are split into `p` runs of consecutive targets; each
/// `R_{τ,ν_a}` lives with `R_{τ_a,parent(ν_a)}` one level up.
fn column_owner(levels: usize, log_p: usize, l: usize, idx: usize) -> usize {
    let (tau, nu) = unflat(levels, l, idx);
    ((tau << (levels - l)) | reverse_bits(nu, levels - l)) >> (levels - log_p)
}

/// Owner of V-side block `(τ, ν)` at level `l` in the row layout.
fn row_owner(levels: usize, log_p: usize, l: usize, idx: usize) -> usize {
    let (tau, nu) = unflat(levels, l, idx);
    ((nu << l) | reverse_bits(tau, l)) >> (levels - log_p)
}

/// Owning process of every factor block.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OwnershipMap {
    pub kind: LayoutKind,
    pub p: usize,
    pub levels: usize,
    pub center: usize,
    /// U-side owners at levels `center..=L`, indexed by `l − center`; level
    /// `L` holds the leaf blocks.
    pub u: Vec<Vec<usize>>,
    /// V-side owners at levels `0..=center`; level 0 holds the leaf blocks.
    pub v: Vec<Vec<usize>>,
    pub core: Vec<usize>,
    /// Owner of each input slice (source leaf), 1D-row.
    pub input: Vec<usize>,
    /// Owner of each output slice (target leaf), 1D-row.
    pub output: Vec<usize>,
}

impl OwnershipMap {
    pub fn u_owner(&self, l: usize, idx: usize) -> usize {
        self.u[l - self.center][idx]
    }

    pub fn v_owner(&self, l: usize, idx: usize) -> usize {
        self.v[l][idx]
    }

    /// Number of blocks of each level owned by each process.
    pub fn blocks_per_process(&self) -> usize {
        (1usize << self.levels) / self.p
    }

    /// Checks range, balance, the transfer pairing rule, core placement and
    /// the 1D-row placement of leaf and vector blocks.
    pub fn validate(&self) -> Result<()> {
        let big_l = self.levels;
        let nb = 1usize << big_l;
        let per = self.blocks_per_process();
        let bad = |msg: String| Err(Error::Structure(msg));
        let all = self
            .u
            .iter()
            .chain(self.v.iter())
            .chain([&self.core, &self.input, &self.output]);
        for owners in all {
            if owners.len() != nb || owners.iter().any(|&o| o >= self.p) {
                return bad("owner table has the wrong length or an out-of-range process".into());
            }
            let mut load = vec![0usize; self.p];
            owners.iter().for_each(|&o| load[o] += 1);
            if load.iter().any(|&c| c != per) {
                return bad(format!("unbalanced owner table {load:?}"));
            }
        }
        let one_d_row = |i: usize| i / per;
        if (0..nb).any(|i| self.input[i] != one_d_row(i) || self.output[i] != one_d_row(i)) {
            return bad("vector slices are not in 1D-row order".into());
        }
        for l in self.center..big_l {
            for idx in 0..nb {
                let (tau, nu) = unflat(big_l, l, idx);
                let partner = flat(big_l, l + 1, 2 * tau + (nu & 1), nu >> 1);
                if self.u_owner(l, idx) != self.u_owner(l + 1, partner) {
                    return bad(format!("U-side block ({l}, {idx}) not paired with ({}, {partner})", l + 1));
                }
            }
        }
        for l in 1..=self.center {
            for idx in 0..nb {
                let (tau, nu) = unflat(big_l, l, idx);
                let partner = flat(big_l, l - 1, tau >> 1, 2 * nu + (tau & 1));
                if self.v_owner(l, idx) != self.v_owner(l - 1, partner) {
                    return bad(format!("V-side block ({l}, {idx}) not paired with ({}, {partner})", l - 1));
                }
            }
        }
        let core_with = match self.kind {
            LayoutKind::Column => &self.u[0],
            LayoutKind::Row | LayoutKind::Hybrid => &self.v[self.center],
        };
        if &self.core != core_with {
            return bad("core blocks are not co-located with their neighbouring transfer blocks".into());
        }
        Ok(())
    }
}

/// Distributes the blocks of `bf` over `spec.p` processes.
///
/// The column layout needs a factorization centered at level 0 and the row
/// layout one centered at level `L`; the hybrid layout accepts any center.
pub fn assign_ownership<T: Scalar>(bf: &HybridButterfly<T>, spec: &LayoutSpec) -> Result<OwnershipMap> {
    spec.validate()?;
    let big_l = bf.levels();
    let center = bf.center();
    if spec.levels != big_l {
        return Err(Error::Structure(format!(
            "layout for L = {} applied to a {big_l}-level factorization",
            spec.levels
        )));
    }
    let required = match spec.kind {
        LayoutKind::Column => Some(0),
        LayoutKind::Row => Some(big_l),
        LayoutKind::Hybrid => None,
    };
    if let Some(c) = required.filter(|&c| c != center) {
        return Err(Error::Structure(format!(
            "{} layout needs the center at level {c}, factorization has {center}",
            spec.kind.name()
        )));
    }
    let k = spec.log_p();
    let nb = 1usize << big_l;
    let level = |f: fn(usize, usize, usize, usize) -> usize, l: usize| -> Vec<usize> {
        (0..nb).map(|i| f(big_l, k, l, i)).collect()
    };
    let (u, v): (Vec<_>, Vec<_>) = match spec.kind {
        LayoutKind::Column => (
            (0..=big_l).map(|l| level(column_owner, l)).collect(),
            vec![level(column_owner, 0)],
        ),
        LayoutKind::Row => (
            vec![level(row_owner, big_l)],
            (0..=big_l).map(|l| level(row_owner, l)).collect(),
        ),
        LayoutKind::Hybrid => (
            (center..=big_l).map(|l| level(column_owner, l)).collect(),
            (0..=center).map(|l| level(row_owner, l)).collect(),
        ),
    };
    let core = match spec.kind {
        LayoutKind::Column => u[0].clone(),
        _ => v[center].clone(),
    };
    let per = nb / spec.p;
    let map = OwnershipMap {
        kind: spec.kind,
        p: spec.p,
        levels: big_l,
        center,
        u,
        v,
        core,
        input: (0..nb).map(|i| i / per).collect(),
        output: (0..nb).map(|i| i / per).collect(),
    };
    map.validate()?;
    Ok(map)
}

#[derive(Clone, Debug, Default)]
struct ProcessTally {
    exchange_volume: u64,
    exchange_msgs: BTreeSet<(usize, usize)>,
    alltoall_volume: u64,
    alltoall_msgs: BTreeSet<usize>,
}

/// Sends of one stage: `(sender, receiver, rows)`.
type Sends = Vec<(usize, usize, usize)>;

/// `K X` executed as `p` logical workers over the ownership map of `spec`.
///
/// Every worker computes only the blocks it owns; any operand produced on
/// another worker is counted as a transfer. Exchange stages are the
/// transfer levels, the all-to-all is the single layout switch (input
/// redistribution for column, core output for hybrid, result gathering for
/// row). The all-to-all volume counts the whole local portion taking part,
/// including the share a process keeps. The returned report holds the
/// maximum over processes of each counter, per right-hand side.
pub fn simulated_parallel_apply<T: Scalar>(
    bf: &HybridButterfly<T>,
    x: &DMatrix<T>,
    spec: &LayoutSpec,
) -> Result<(DMatrix<T>, CommCostReport)> {
    check_dims("parallel apply", (bf.cols(), x.ncols()), x.shape())?;
    let own = assign_ownership(bf, spec)?;
    let big_l = bf.levels();
    let center = bf.center();
    let nb = 1usize << big_l;
    let p = spec.p;
    let k = x.ncols();
    let xs = gather_rows(x, bf.col_tree().order());
    let cb = bf.col_tree().leaf_bounds();
    let rb = bf.row_tree().leaf_bounds();
    let mut tally = vec![ProcessTally::default(); p];

    // Stages are tagged so V-side and U-side levels never share a message.
    let record_exchange = |tally: &mut [ProcessTally], stage: usize, sends: Sends| {
        for (s, d, rows) in sends {
            tally[s].exchange_volume += rows as u64;
            tally[s].exchange_msgs.insert((stage, d));
        }
    };
    let record_alltoall = |tally: &mut [ProcessTally], sends: Sends| {
        for (s, d, rows) in sends {
            tally[s].alltoall_volume += rows as u64;
            if s != d {
                tally[s].alltoall_msgs.insert(d);
            }
        }
    };
    // Runs `work` on each process over the blocks it owns and merges the
    // per-block results into one vector indexed by block.
    let run = |owners: &[usize], work: &(dyn Fn(usize) -> DMatrix<T> + Sync)| -> Vec<DMatrix<T>> {
        let per_proc: Vec<Vec<(usize, DMatrix<T>)>> = (0..p)
            .into_par_iter()
            .map(|q| {
                (0..nb)
                    .filter(|&i| owners[i] == q)
                    .map(|i| (i, work(i)))
                    .collect()
            })
            .collect();
        let mut out = vec![DMatrix::<T>::zeros(0, 0); nb];
        for (i, m) in per_proc.into_iter().flatten() {
            out[i] = m;
        }
        out
    };

    // Input slices to the owners of the leaf V blocks.
    let v0 = &own.v[0];
    if spec.kind == LayoutKind::Column {
        record_alltoall(&mut tally, (0..nb).map(|v| (own.input[v], v0[v], cb[v + 1] - cb[v])).collect());
    }
    let mut z = run(v0, &|v| gemm(bf.v_leaf(v), Op::Transpose, &xs.rows_range(cb[v]..cb[v + 1]), Op::None));

    for l in 1..=center {
        let owners = &own.v[l];
        // Each child coefficient goes once to every other process owning a parent.
        let mut sends = Sends::new();
        for c in 0..nb {
            let (tau, nu) = unflat(big_l, l - 1, c);
            let parents = [flat(big_l, l, 2 * tau, nu >> 1), flat(big_l, l, 2 * tau + 1, nu >> 1)];
            let from = own.v_owner(l - 1, c);
            let dests: BTreeSet<usize> = parents.iter().map(|&q| owners[q]).filter(|&d| d != from).collect();
            sends.extend(dests.into_iter().map(|d| (from, d, z[c].nrows())));
        }
        record_exchange(&mut tally, l, sends);
        let prev = &z;
        z = run(owners, &|idx| {
            let (c0, c1) = v_children(big_l, l, idx);
            let stacked = vstack(&prev[c0], &prev[c1]);
            gemm(bf.w_block(l, idx), Op::Transpose, &stacked, Op::None)
        });
    }

    let mut a = run(&own.core, &|idx| gemm(bf.core_block(idx), Op::None, &z[idx], Op::None));
    if spec.kind == LayoutKind::Hybrid {
        record_alltoall(
            &mut tally,
            (0..nb).map(|i| (own.core[i], own.u_owner(center, i), a[i].nrows())).collect(),
        );
    }

    for l in center..big_l {
        // Each R block splits its product into the two halves for the next
        // level; a half computed away from its destination is a transfer.
        let pieces: Vec<[DMatrix<T>; 2]> = {
            let prev = &a;
            let full = run(&own.u[l - center], &|idx| gemm(bf.r_block(l, idx), Op::None, &prev[idx], Op::None));
            (0..nb)
                .map(|idx| {
                    let (c0, _) = u_children(big_l, l, idx);
                    let top = bf.u_rank(l + 1, c0);
                    let m = &full[idx];
                    [m.rows(0, top).into_owned(), m.rows(top, m.nrows() - top).into_owned()]
                })
                .collect()
        };
        let mut sends = Sends::new();
        for idx in 0..nb {
            let (c0, c1) = u_children(big_l, l, idx);
            let from = own.u_owner(l, idx);
            for (half, c) in [c0, c1].into_iter().enumerate() {
                let to = own.u_owner(l + 1, c);
                if to != from {
                    sends.push((from, to, pieces[idx][half].nrows()));
                }
            }
        }
        record_exchange(&mut tally, big_l + 1 + l, sends);
        a = run(&own.u[l + 1 - center], &|c| {
            let (tau, nu) = unflat(big_l, l + 1, c);
            let half = tau & 1;
            let parents = [flat(big_l, l, tau >> 1, 2 * nu), flat(big_l, l, tau >> 1, 2 * nu + 1)];
            let mut acc = DMatrix::<T>::zeros(bf.u_rank(l + 1, c), k);
            for q in parents {
                acc += &pieces[q][half];
            }
            acc
        });
    }

    let leaf = &own.u[big_l - center];
    let parts = run(leaf, &|t| gemm(bf.u_leaf(t), Op::None, &a[t], Op::None));
    if spec.kind == LayoutKind::Row {
        record_alltoall(&mut tally, (0..nb).map(|t| (leaf[t], own.output[t], rb[t + 1] - rb[t])).collect());
    }
    let mut ys = DMatrix::<T>::zeros(bf.rows(), k);
    for (t, part) in parts.iter().enumerate() {
        ys.rows_mut(rb[t], rb[t + 1] - rb[t]).copy_from(part);
    }
    let y = scatter_rows(&ys, bf.row_tree().order());

    let max = |f: &dyn Fn(&ProcessTally) -> u64| tally.iter().map(f).max().unwrap_or(0);
    let report = CommCostReport {
        exchange_volume: max(&|t| t.exchange_volume),
        exchange_msgs: max(&|t| t.exchange_msgs.len() as u64),
        alltoall_volume: max(&|t| t.alltoall_volume),
        alltoall_msgs: max(&|t| t.alltoall_msgs.len() as u64),
        time: None,
    };
    Ok((y, report))
}

/// One CSV row of the communication model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommCostRow {
    pub schema: String,
    /// `model` (closed form) or `measured` (simulation).
    pub source: String,
    pub kind: LayoutKind,
    #[serde(rename = "L")]
    pub levels: usize,
    pub r: usize,
    pub p: usize,
    pub exch_vol: u64,
    pub exch_msgs: u64,
    pub a2a_vol: u64,
    pub a2a_msgs: u64,
    /// `α · messages + β · volume` when a time model is attached.
    pub model_time_s: Option<f64>,
}

pub const COMM_CSV_SCHEMA: &str = "comm_cost.v1";

impl CommCostRow {
    pub fn new(spec: &LayoutSpec, report: &CommCostReport, source: &str) -> Self {
        Self {
            schema: COMM_CSV_SCHEMA.into(),
            source: source.into(),
            kind: spec.kind,
            levels: spec.levels,
            r: spec.r,
            p: spec.p,
            exch_vol: report.exchange_volume,
            exch_msgs: report.exchange_msgs,
            a2a_vol: report.alltoall_volume,
            a2a_msgs: report.alltoall_msgs,
            model_time_s: report.time.map(|t| t.seconds),
        }
    }
}

/// Closed-form rows for every kind and every power-of-two `p ≤ 2^L`.
pub fn comm_cost_table(levels: usize, r: usize) -> Result<Vec<CommCostRow>> {
    let mut rows = Vec::new();
    for kind in LayoutKind::ALL {
        for k in 0..=levels {
            let spec = LayoutSpec::new(1 << k, kind, levels, r);
            rows.push(CommCostRow::new(&spec, &comm_cost(&spec)?, "model"));
        }
    }
    Ok(rows)
}

/// Writes rows with a header line.
pub fn write_comm_csv<W: std::io::Write>(writer: W, rows: &[CommCostRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests;
