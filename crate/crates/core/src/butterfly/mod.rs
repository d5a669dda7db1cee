//! Hybrid butterfly factorization storage and fast application.
//!
//! An L-level hybrid butterfly represents `K ≈ U^L R^{L-1} … R^{l_m} B^{l_m} W^{l_m} … W^1 V^0`.
//! At level `l` the blocks are indexed by a target node `τ` at level `l` of
//! the row tree and a source node `ν` at level `L − l` of the column tree;
//! every level therefore holds `2^L` blocks, stored flat at index
//! `τ · 2^{L−l} + ν`.
//!
//! * U side (levels `l_m..=L`): leaf bases `U_{τ,s}` at level `L`, transfer
//!   blocks `R_{τ,ν}` at levels `l_m..L` mapping onto the children
//!   `(2τ, ν/2)` and `(2τ+1, ν/2)` at level `l+1`.
//! * V side (levels `0..=l_m`): leaf bases `V_{t,ν}` at level 0, transfer
//!   blocks `W_{τ,ν}` at levels `1..=l_m` mapping onto `(τ/2, 2ν)` and
//!   `(τ/2, 2ν+1)` at level `l−1`.
//! * Core blocks `B_{τ,ν}` at level `l_m`, so that
//!   `K(T_τ, S_ν) ≈ U_{τ,ν} B_{τ,ν} V_{τ,ν}ᵀ`.
//!
//! Bases span column spaces of `K` (U side) and of the plain transpose `Kᵀ`
//! (V side). Rows of the tree-ordered operator follow the row tree ordering;
//! the public apply functions take and return vectors in original ordering.

mod io;

pub use io::{inspect_header, read_butterfly, write_butterfly, ContainerHeader, FORMAT_VERSION};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dims, Error, Result};
use crate::hier::PartitionTree;
use crate::linalg::{conj, gemm, Op, Scalar, ScalarKind};

/// Default limit on `rows × cols` for dense expansion.
pub const DEFAULT_DENSE_CAP: usize = 4096 * 4096;

/// Flat block index of `(τ, ν)` at level `l` of an `L`-level factorization.
pub fn flat(levels: usize, l: usize, tau: usize, nu: usize) -> usize {
    (tau << (levels - l)) | nu
}

/// Inverse of [`flat`].
pub fn unflat(levels: usize, l: usize, idx: usize) -> (usize, usize) {
    (idx >> (levels - l), idx & ((1 << (levels - l)) - 1))
}

/// Level `l+1` indices the rows of `R_{τ,ν}` (level `l`) map onto.
pub fn u_children(levels: usize, l: usize, idx: usize) -> (usize, usize) {
    let (tau, nu) = unflat(levels, l, idx);
    (
        flat(levels, l + 1, 2 * tau, nu / 2),
        flat(levels, l + 1, 2 * tau + 1, nu / 2),
    )
}

/// Level `l−1` indices the rows of `W_{τ,ν}` (level `l`) map onto.
pub fn v_children(levels: usize, l: usize, idx: usize) -> (usize, usize) {
    let (tau, nu) = unflat(levels, l, idx);
    (
        flat(levels, l - 1, tau / 2, 2 * nu),
        flat(levels, l - 1, tau / 2, 2 * nu + 1),
    )
}

/// Level `l` blocks whose U-side transfer rows feed node `idx` at level `l+1`,
/// with the half (0 = top, 1 = bottom) used.
fn u_parents(levels: usize, l: usize, idx: usize) -> ([usize; 2], usize) {
    let (tau, nu) = unflat(levels, l + 1, idx);
    (
        [
            flat(levels, l, tau / 2, 2 * nu),
            flat(levels, l, tau / 2, 2 * nu + 1),
        ],
        tau % 2,
    )
}

/// Level `l` blocks whose V-side transfer rows feed node `idx` at level `l−1`.
fn v_parents(levels: usize, l: usize, idx: usize) -> ([usize; 2], usize) {
    let (tau, nu) = unflat(levels, l - 1, idx);
    (
        [
            flat(levels, l, 2 * tau, nu / 2),
            flat(levels, l, 2 * tau + 1, nu / 2),
        ],
        nu % 2,
    )
}

/// Vertical concatenation.
pub fn vstack<T: Scalar>(top: &DMatrix<T>, bottom: &DMatrix<T>) -> DMatrix<T> {
    assert_eq!(top.ncols(), bottom.ncols(), "vstack width mismatch");
    let mut out = DMatrix::zeros(top.nrows() + bottom.nrows(), top.ncols());
    out.rows_mut(0, top.nrows()).copy_from(top);
    out.rows_mut(top.nrows(), bottom.nrows()).copy_from(bottom);
    out
}

/// `out[i] = x[order[i]]`, row-wise.
pub fn gather_rows<T: Scalar>(x: &DMatrix<T>, order: &[usize]) -> DMatrix<T> {
    DMatrix::from_fn(order.len(), x.ncols(), |i, j| x[(order[i], j)])
}

/// `out[order[i]] = y[i]`, row-wise.
pub fn scatter_rows<T: Scalar>(y: &DMatrix<T>, order: &[usize]) -> DMatrix<T> {
    let mut out = DMatrix::zeros(y.nrows(), y.ncols());
    for j in 0..y.ncols() {
        for (i, &o) in order.iter().enumerate() {
            out[(o, j)] = y[(i, j)];
        }
    }
    out
}

/// Per-block ranks of both sides.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankProfile {
    pub levels: usize,
    pub center: usize,
    /// `u[l − center][idx]` for `l` in `center..=levels`.
    pub u: Vec<Vec<usize>>,
    /// `v[l][idx]` for `l` in `0..=center`.
    pub v: Vec<Vec<usize>>,
}

impl RankProfile {
    pub fn u_rank(&self, l: usize, idx: usize) -> usize {
        self.u[l - self.center][idx]
    }

    pub fn v_rank(&self, l: usize, idx: usize) -> usize {
        self.v[l][idx]
    }

    pub fn max_rank(&self) -> usize {
        self.u.iter().chain(self.v.iter()).flatten().copied().max().unwrap_or(0)
    }
}

/// Stored entries of one factor level.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactorMemory {
    /// One of `U`, `R`, `B`, `W`, `V`.
    pub factor: String,
    pub level: usize,
    pub blocks: usize,
    pub nnz: u64,
}

/// Storage accounting.
///
/// `bytes` counts `nnz` scalars, 8 bytes of shape metadata per block, and
/// 8 bytes per entry of both tree orderings and leaf boundary arrays.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryReport {
    pub nnz: u64,
    pub bytes: u64,
    pub factors: Vec<FactorMemory>,
}

/// Compact description for reports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ButterflySummary {
    pub scalar: ScalarKind,
    #[serde(rename = "L")]
    pub levels: usize,
    pub l_m: usize,
    pub m: usize,
    pub n: usize,
    pub max_rank: usize,
    pub nnz: u64,
    pub bytes: u64,
}

/// Hybrid butterfly factorization with per-block storage.
#[derive(Clone, Debug, PartialEq)]
pub struct HybridButterfly<T: Scalar> {
    row_tree: PartitionTree,
    col_tree: PartitionTree,
    levels: usize,
    center: usize,
    u_leaf: Vec<DMatrix<T>>,
    /// Indexed by `l − center`.
    u_transfer: Vec<Vec<DMatrix<T>>>,
    core: Vec<DMatrix<T>>,
    /// Indexed by `l − 1`.
    w_transfer: Vec<Vec<DMatrix<T>>>,
    v_leaf: Vec<DMatrix<T>>,
}

/// Owned block storage used to assemble a [`HybridButterfly`].
#[derive(Clone, Debug)]
pub struct ButterflyParts<T: Scalar> {
    pub row_tree: PartitionTree,
    pub col_tree: PartitionTree,
    pub center: usize,
    pub u_leaf: Vec<DMatrix<T>>,
    pub u_transfer: Vec<Vec<DMatrix<T>>>,
    pub core: Vec<DMatrix<T>>,
    pub w_transfer: Vec<Vec<DMatrix<T>>>,
    pub v_leaf: Vec<DMatrix<T>>,
}

fn structure(msg: String) -> Error {
    Error::Structure(msg)
}

impl<T: Scalar> HybridButterfly<T> {
    /// Validates shapes and assembles a factorization.
    pub fn new(parts: ButterflyParts<T>) -> Result<Self> {
        let ButterflyParts {
            row_tree,
            col_tree,
            center,
            u_leaf,
            u_transfer,
            core,
            w_transfer,
            v_leaf,
        } = parts;
        let levels = row_tree.levels();
        if col_tree.levels() != levels {
            return Err(structure(format!(
                "row tree has {levels} levels, column tree {}",
                col_tree.levels()
            )));
        }
        if center > levels {
            return Err(structure(format!("center level {center} above L = {levels}")));
        }
        let nb = 1usize << levels;
        let count_ok = u_leaf.len() == nb
            && v_leaf.len() == nb
            && core.len() == nb
            && u_transfer.len() == levels - center
            && w_transfer.len() == center
            && u_transfer.iter().chain(w_transfer.iter()).all(|lv| lv.len() == nb);
        if !count_ok {
            return Err(structure("factor block counts do not match the tree depth".into()));
        }
        let bf = Self {
            row_tree,
            col_tree,
            levels,
            center,
            u_leaf,
            u_transfer,
            core,
            w_transfer,
            v_leaf,
        };
        bf.validate()?;
        Ok(bf)
    }

    /// Factorization with every rank zero (the zero operator).
    pub fn zero(row_tree: PartitionTree, col_tree: PartitionTree, center: usize) -> Result<Self> {
        let levels = row_tree.levels();
        let nb = 1usize << levels;
        let empty = || vec![DMatrix::<T>::zeros(0, 0); nb];
        let rb = row_tree.leaf_bounds().to_vec();
        let cb = col_tree.leaf_bounds().to_vec();
        Self::new(ButterflyParts {
            u_leaf: (0..nb).map(|t| DMatrix::zeros(rb[t + 1] - rb[t], 0)).collect(),
            v_leaf: (0..nb).map(|v| DMatrix::zeros(cb[v + 1] - cb[v], 0)).collect(),
            u_transfer: (center..levels).map(|_| empty()).collect(),
            w_transfer: (0..center).map(|_| empty()).collect(),
            core: empty(),
            row_tree,
            col_tree,
            center,
        })
    }

    fn validate(&self) -> Result<()> {
        let l_top = self.levels;
        let rb = self.row_tree.leaf_bounds();
        let cb = self.col_tree.leaf_bounds();
        let basis = |name: &str, l: usize, idx: usize, b: &DMatrix<T>, rows: usize| -> Result<()> {
            if b.nrows() != rows || b.ncols() > rows {
                return Err(structure(format!(
                    "{name} block {idx} at level {l} is {}x{}, expected {rows} rows and at most {rows} columns",
                    b.nrows(),
                    b.ncols()
                )));
            }
            Ok(())
        };
        for (t, b) in self.u_leaf.iter().enumerate() {
            basis("U", l_top, t, b, rb[t + 1] - rb[t])?;
        }
        for (v, b) in self.v_leaf.iter().enumerate() {
            basis("V", 0, v, b, cb[v + 1] - cb[v])?;
        }
        for l in (self.center..l_top).rev() {
            for (idx, b) in self.u_transfer[l - self.center].iter().enumerate() {
                let (c0, c1) = u_children(l_top, l, idx);
                basis("R", l, idx, b, self.u_rank(l + 1, c0) + self.u_rank(l + 1, c1))?;
            }
        }
        for l in 1..=self.center {
            for (idx, b) in self.w_transfer[l - 1].iter().enumerate() {
                let (c0, c1) = v_children(l_top, l, idx);
                basis("W", l, idx, b, self.v_rank(l - 1, c0) + self.v_rank(l - 1, c1))?;
            }
        }
        for (idx, b) in self.core.iter().enumerate() {
            let want = (self.u_rank(self.center, idx), self.v_rank(self.center, idx));
            if b.shape() != want {
                return Err(structure(format!(
                    "core block {idx} is {:?}, expected {want:?}",
                    b.shape()
                )));
            }
        }
        let finite = self.all_blocks().all(|b| b.iter().all(|z| z.is_finite_value()));
        if !finite {
            return Err(structure("non-finite factor entry".into()));
        }
        Ok(())
    }

    fn all_blocks(&self) -> impl Iterator<Item = &DMatrix<T>> {
        self.v_leaf
            .iter()
            .chain(self.w_transfer.iter().flatten())
            .chain(self.core.iter())
            .chain(self.u_transfer.iter().flatten())
            .chain(self.u_leaf.iter())
    }

    pub fn into_parts(self) -> ButterflyParts<T> {
        ButterflyParts {
            row_tree: self.row_tree,
            col_tree: self.col_tree,
            center: self.center,
            u_leaf: self.u_leaf,
            u_transfer: self.u_transfer,
            core: self.core,
            w_transfer: self.w_transfer,
            v_leaf: self.v_leaf,
        }
    }

    pub fn rows(&self) -> usize {
        self.row_tree.size()
    }

    pub fn cols(&self) -> usize {
        self.col_tree.size()
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn center(&self) -> usize {
        self.center
    }

    pub fn row_tree(&self) -> &PartitionTree {
        &self.row_tree
    }

    pub fn col_tree(&self) -> &PartitionTree {
        &self.col_tree
    }

    pub fn u_leaf(&self, tau: usize) -> &DMatrix<T> {
        &self.u_leaf[tau]
    }

    pub fn v_leaf(&self, nu: usize) -> &DMatrix<T> {
        &self.v_leaf[nu]
    }

    /// `R` block at level `l` (`center <= l < L`).
    pub fn r_block(&self, l: usize, idx: usize) -> &DMatrix<T> {
        &self.u_transfer[l - self.center][idx]
    }

    /// `W` block at level `l` (`1 <= l <= center`).
    pub fn w_block(&self, l: usize, idx: usize) -> &DMatrix<T> {
        &self.w_transfer[l - 1][idx]
    }

    pub fn core_block(&self, idx: usize) -> &DMatrix<T> {
        &self.core[idx]
    }

    /// Rank of the U-side basis of block `idx` at level `l >= center`.
    pub fn u_rank(&self, l: usize, idx: usize) -> usize {
        if l == self.levels {
            self.u_leaf[idx].ncols()
        } else {
            self.u_transfer[l - self.center][idx].ncols()
        }
    }

    /// Rank of the V-side basis of block `idx` at level `l <= center`.
    pub fn v_rank(&self, l: usize, idx: usize) -> usize {
        if l == 0 {
            self.v_leaf[idx].ncols()
        } else {
            self.w_transfer[l - 1][idx].ncols()
        }
    }

    pub fn rank_profile(&self) -> RankProfile {
        let nb = 1usize << self.levels;
        RankProfile {
            levels: self.levels,
            center: self.center,
            u: (self.center..=self.levels)
                .map(|l| (0..nb).map(|i| self.u_rank(l, i)).collect())
                .collect(),
            v: (0..=self.center)
                .map(|l| (0..nb).map(|i| self.v_rank(l, i)).collect())
                .collect(),
        }
    }

    pub fn max_rank(&self) -> usize {
        self.rank_profile().max_rank()
    }

    /// `K X` for `X` with `cols()` rows, in original ordering.
    pub fn apply(&self, x: &DMatrix<T>) -> Result<DMatrix<T>> {
        check_dims("butterfly apply", (self.cols(), x.ncols()), x.shape())?;
        let xs = gather_rows(x, self.col_tree.order());
        let ys = self.apply_tree_ordered(&xs);
        Ok(scatter_rows(&ys, self.row_tree.order()))
    }

    /// `Kᵀ Y` (plain transpose) for `Y` with `rows()` rows.
    pub fn apply_transpose(&self, y: &DMatrix<T>) -> Result<DMatrix<T>> {
        check_dims("butterfly transpose apply", (self.rows(), y.ncols()), y.shape())?;
        let ys = gather_rows(y, self.row_tree.order());
        let xs = self.apply_transpose_tree_ordered(&ys);
        Ok(scatter_rows(&xs, self.col_tree.order()))
    }

    /// `Kᴴ Y`.
    pub fn apply_adjoint(&self, y: &DMatrix<T>) -> Result<DMatrix<T>> {
        if T::KIND == ScalarKind::Real {
            return self.apply_transpose(y);
        }
        Ok(conj(&self.apply_transpose(&conj(y))?))
    }

    /// Forward product with input and output in tree ordering.
    pub fn apply_tree_ordered(&self, x: &DMatrix<T>) -> DMatrix<T> {
        let big_l = self.levels;
        let nb = 1usize << big_l;
        let k = x.ncols();
        let cb = self.col_tree.leaf_bounds();
        let mut z: Vec<DMatrix<T>> = (0..nb)
            .into_par_iter()
            .map(|v| gemm(&self.v_leaf[v], Op::Transpose, &x.rows_range(cb[v]..cb[v + 1]), Op::None))
            .collect();
        for l in 1..=self.center {
            z = (0..nb)
                .into_par_iter()
                .map(|idx| {
                    let (c0, c1) = v_children(big_l, l, idx);
                    gemm(self.w_block(l, idx), Op::Transpose, &vstack(&z[c0], &z[c1]), Op::None)
                })
                .collect();
        }
        let mut a: Vec<DMatrix<T>> = (0..nb)
            .into_par_iter()
            .map(|idx| gemm(&self.core[idx], Op::None, &z[idx], Op::None))
            .collect();
        for l in self.center..big_l {
            a = (0..nb)
                .into_par_iter()
                .map(|idx| {
                    let rows = self.u_rank(l + 1, idx);
                    let (parents, half) = u_parents(big_l, l, idx);
                    let mut acc = DMatrix::<T>::zeros(rows, k);
                    for p in parents {
                        let (c0, _) = u_children(big_l, l, p);
                        let off = if half == 0 { 0 } else { self.u_rank(l + 1, c0) };
                        let r = self.r_block(l, p).rows(off, rows);
                        acc += gemm(&r, Op::None, &a[p], Op::None);
                    }
                    acc
                })
                .collect();
        }
        let rb = self.row_tree.leaf_bounds();
        let parts: Vec<DMatrix<T>> = (0..nb)
            .into_par_iter()
            .map(|t| gemm(&self.u_leaf[t], Op::None, &a[t], Op::None))
            .collect();
        let mut y = DMatrix::zeros(self.rows(), k);
        for (t, p) in parts.iter().enumerate() {
            y.rows_mut(rb[t], rb[t + 1] - rb[t]).copy_from(p);
        }
        y
    }

    /// Transposed product with input and output in tree ordering.
    pub fn apply_transpose_tree_ordered(&self, y: &DMatrix<T>) -> DMatrix<T> {
        let big_l = self.levels;
        let nb = 1usize << big_l;
        let k = y.ncols();
        let rb = self.row_tree.leaf_bounds();
        let mut a: Vec<DMatrix<T>> = (0..nb)
            .into_par_iter()
            .map(|t| gemm(&self.u_leaf[t], Op::Transpose, &y.rows_range(rb[t]..rb[t + 1]), Op::None))
            .collect();
        for l in (self.center..big_l).rev() {
            a = (0..nb)
                .into_par_iter()
                .map(|idx| {
                    let (c0, c1) = u_children(big_l, l, idx);
                    gemm(self.r_block(l, idx), Op::Transpose, &vstack(&a[c0], &a[c1]), Op::None)
                })
                .collect();
        }
        let mut z: Vec<DMatrix<T>> = (0..nb)
            .into_par_iter()
            .map(|idx| gemm(&self.core[idx], Op::Transpose, &a[idx], Op::None))
            .collect();
        for l in (1..=self.center).rev() {
            z = (0..nb)
                .into_par_iter()
                .map(|idx| {
                    let rows = self.v_rank(l - 1, idx);
                    let (parents, half) = v_parents(big_l, l, idx);
                    let mut acc = DMatrix::<T>::zeros(rows, k);
                    for p in parents {
                        let (c0, _) = v_children(big_l, l, p);
                        let off = if half == 0 { 0 } else { self.v_rank(l - 1, c0) };
                        let w = self.w_block(l, p).rows(off, rows);
                        acc += gemm(&w, Op::None, &z[p], Op::None);
                    }
                    acc
                })
                .collect();
        }
        let cb = self.col_tree.leaf_bounds();
        let parts: Vec<DMatrix<T>> = (0..nb)
            .into_par_iter()
            .map(|v| gemm(&self.v_leaf[v], Op::None, &z[v], Op::None))
            .collect();
        let mut x = DMatrix::zeros(self.cols(), k);
        for (v, p) in parts.iter().enumerate() {
            x.rows_mut(cb[v], cb[v + 1] - cb[v]).copy_from(p);
        }
        x
    }

    /// Multiply-add count of one apply with `k` right-hand sides.
    pub fn apply_flops(&self, k: usize) -> u64 {
        self.all_blocks()
            .map(|b| 2 * (b.nrows() * b.ncols() * k) as u64)
            .sum()
    }

    /// Explicit U-side bases `U_{τ,ν}` at level `l` (`center <= l <= L`),
    /// each `|T_τ| × r` in tree ordering.
    pub fn expanded_u(&self, l: usize) -> Vec<DMatrix<T>> {
        let big_l = self.levels;
        let mut cur = self.u_leaf.clone();
        for lev in (l..big_l).rev() {
            cur = (0..1usize << big_l)
                .into_par_iter()
                .map(|idx| {
                    let (c0, c1) = u_children(big_l, lev, idx);
                    let r = self.r_block(lev, idx);
                    let top = r.rows(0, cur[c0].ncols());
                    let bot = r.rows(cur[c0].ncols(), cur[c1].ncols());
                    vstack(
                        &gemm(&cur[c0], Op::None, &top, Op::None),
                        &gemm(&cur[c1], Op::None, &bot, Op::None),
                    )
                })
                .collect();
        }
        cur
    }

    /// Explicit V-side bases `V_{τ,ν}` at level `l` (`0 <= l <= center`),
    /// each `|S_ν| × r` in tree ordering.
    pub fn expanded_v(&self, l: usize) -> Vec<DMatrix<T>> {
        let big_l = self.levels;
        let mut cur = self.v_leaf.clone();
        for lev in 1..=l {
            cur = (0..1usize << big_l)
                .into_par_iter()
                .map(|idx| {
                    let (c0, c1) = v_children(big_l, lev, idx);
                    let w = self.w_block(lev, idx);
                    let top = w.rows(0, cur[c0].ncols());
                    let bot = w.rows(cur[c0].ncols(), cur[c1].ncols());
                    vstack(
                        &gemm(&cur[c0], Op::None, &top, Op::None),
                        &gemm(&cur[c1], Op::None, &bot, Op::None),
                    )
                })
                .collect();
        }
        cur
    }

    /// Dense matrix in original ordering, assembled block by block from the
    /// expanded bases at the center level.
    pub fn to_dense(&self, cap: usize) -> Result<DMatrix<T>> {
        let (m, n) = (self.rows(), self.cols());
        if m.saturating_mul(n) > cap {
            return Err(Error::DenseCap { rows: m, cols: n, cap });
        }
        let big_l = self.levels;
        let lm = self.center;
        let us = self.expanded_u(lm);
        let vs = self.expanded_v(lm);
        let mut dense = DMatrix::<T>::zeros(m, n);
        for (idx, b) in self.core.iter().enumerate() {
            let (tau, nu) = unflat(big_l, lm, idx);
            let rows = self.row_tree.range(lm, tau);
            let cols = self.col_tree.range(big_l - lm, nu);
            let ub = gemm(&us[idx], Op::None, b, Op::None);
            let block = gemm(&ub, Op::None, &vs[idx], Op::Transpose);
            dense
                .view_mut((rows.start, cols.start), (rows.len(), cols.len()))
                .copy_from(&block);
        }
        let dense = scatter_rows(&dense, self.row_tree.order());
        let dense = scatter_rows(&dense.transpose(), self.col_tree.order());
        Ok(dense.transpose())
    }

    pub fn memory_report(&self) -> MemoryReport {
        let big_l = self.levels;
        let mut factors = Vec::new();
        let mut push = |factor: &str, level: usize, blocks: &[DMatrix<T>]| {
            factors.push(FactorMemory {
                factor: factor.to_string(),
                level,
                blocks: blocks.len(),
                nnz: blocks.iter().map(|b| b.len() as u64).sum(),
            });
        };
        push("V", 0, &self.v_leaf);
        for l in 1..=self.center {
            push("W", l, &self.w_transfer[l - 1]);
        }
        push("B", self.center, &self.core);
        for l in self.center..big_l {
            push("R", l, &self.u_transfer[l - self.center]);
        }
        push("U", big_l, &self.u_leaf);
        let nnz: u64 = factors.iter().map(|f| f.nnz).sum();
        let blocks: u64 = factors.iter().map(|f| f.blocks as u64).sum();
        let index_entries = (self.rows() + self.cols() + 2 * ((1usize << big_l) + 1)) as u64;
        MemoryReport {
            nnz,
            bytes: nnz * T::BYTES as u64 + 8 * blocks + 8 * index_entries,
            factors,
        }
    }

    pub fn summary(&self) -> ButterflySummary {
        let mem = self.memory_report();
        ButterflySummary {
            scalar: T::KIND,
            levels: self.levels,
            l_m: self.center,
            m: self.rows(),
            n: self.cols(),
            max_rank: self.max_rank(),
            nnz: mem.nnz,
            bytes: mem.bytes,
        }
    }

    /// Level-`l` transfer factor assembled as a sparse-pattern dense matrix
    /// (debugging aid, small instances only).
    ///
    /// For U-side levels the columns follow the level-`l` flat block order
    /// and the rows the level-`l+1` order: within each source node `ν'` at
    /// level `L−l−1`, block `R_{τ,ν}` for `ν ∈ {2ν', 2ν'+1}` places its top
    /// and bottom halves against children `(2τ, ν')` and `(2τ+1, ν')`. The
    /// V-side factor at level `l` is returned in the same orientation as it
    /// acts in the forward product, i.e. `(W^l)` with rows indexed by level
    /// `l` and columns by level `l−1`.
    pub fn assembled_transfer(&self, side: TransferSide, l: usize) -> Result<DMatrix<T>> {
        let big_l = self.levels;
        let nb = 1usize << big_l;
        match side {
            TransferSide::R => {
                if !(self.center..big_l).contains(&l) {
                    return Err(structure(format!("no R factor at level {l}")));
                }
                let col_off = offsets(&(0..nb).map(|i| self.u_rank(l, i)).collect::<Vec<_>>());
                let row_off = offsets(&(0..nb).map(|i| self.u_rank(l + 1, i)).collect::<Vec<_>>());
                let mut f = DMatrix::zeros(row_off[nb], col_off[nb]);
                for idx in 0..nb {
                    let (c0, c1) = u_children(big_l, l, idx);
                    let b = self.r_block(l, idx);
                    let r0 = self.u_rank(l + 1, c0);
                    f.view_mut((row_off[c0], col_off[idx]), (r0, b.ncols()))
                        .copy_from(&b.rows(0, r0));
                    f.view_mut((row_off[c1], col_off[idx]), (b.nrows() - r0, b.ncols()))
                        .copy_from(&b.rows(r0, b.nrows() - r0));
                }
                Ok(f)
            }
            TransferSide::W => {
                if !(1..=self.center).contains(&l) {
                    return Err(structure(format!("no W factor at level {l}")));
                }
                let row_off = offsets(&(0..nb).map(|i| self.v_rank(l, i)).collect::<Vec<_>>());
                let col_off = offsets(&(0..nb).map(|i| self.v_rank(l - 1, i)).collect::<Vec<_>>());
                let mut f = DMatrix::zeros(row_off[nb], col_off[nb]);
                for idx in 0..nb {
                    let (c0, c1) = v_children(big_l, l, idx);
                    let w = self.w_block(l, idx);
                    let r0 = self.v_rank(l - 1, c0);
                    f.view_mut((row_off[idx], col_off[c0]), (w.ncols(), r0))
                        .copy_from(&w.rows(0, r0).transpose());
                    f.view_mut((row_off[idx], col_off[c1]), (w.ncols(), w.nrows() - r0))
                        .copy_from(&w.rows(r0, w.nrows() - r0).transpose());
                }
                Ok(f)
            }
        }
    }
}

/// Which transfer chain [`HybridButterfly::assembled_transfer`] dumps.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TransferSide {
    R,
    W,
}

fn offsets(sizes: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(sizes.len() + 1);
    out.push(0);
    for s in sizes {
        out.push(out.last().copied().unwrap_or(0) + s);
    }
    out
}
