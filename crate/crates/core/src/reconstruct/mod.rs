//! Randomized reconstruction of a hybrid butterfly from black-box products.
//!
//! The engine touches the matrix only through [`BlackBox`] products with
//! structured probes: Gaussian blocks whose nonzero rows are confined to one
//! tree node. Phases run in a fixed order:
//!
//! 1. row bases `V` at the source leaves, from transpose products with a
//!    root probe, doubling the rank guess until it exceeds the revealed rank;
//! 2. column bases `U` at the target leaves, the mirror image with forward
//!    products;
//! 3. `W` transfer blocks for levels `1..=l_m`, one transpose product per
//!    target node;
//! 4. `R` transfer blocks for levels `L−1` down to `l_m`, one forward product
//!    per source node, and the core blocks `B` at `l_m`.
//!
//! Only one probe product is resident at a time.

mod bounds;

pub use bounds::{check_error_bounds, BoundKind, BoundReport, LevelBound};

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::butterfly::{
    flat, gather_rows, u_children, v_children, vstack, ButterflyParts, HybridButterfly,
};
use crate::error::{Error, Result};
use crate::hier::{NodeRef, PartitionTree};
use crate::linalg::{
    derive_seed, gaussian_matrix, gemm, pinv_solve, pivoted_qr_truncate_with, Op, Scalar, Truncation,
};
use crate::operators::{BlackBox, MatvecCounts};

const PHASE_ROW_LEAF: u64 = 0;
const PHASE_COL_LEAF: u64 = 1;
const PHASE_W: u64 = 2;
const PHASE_R: u64 = 3;

/// Relative singular value cutoff of the core least-squares fit.
const CORE_PINV_TOL: f64 = 1e-12;

/// How the core blocks are fitted from `UᴴKΩ` and `VᵀΩ`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoreRule {
    /// Least-squares minimizer `UᴴKΩ (VᵀΩ)⁺`.
    #[default]
    PseudoInverse,
    /// `UᴴKΩ (VᵀΩ)ᵀ`; only correct when `VᵀΩ` has orthonormal rows.
    /// Kept for comparison.
    LiteralTranspose,
}

/// Reconstruction parameters. The depth `L` is taken from the trees.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionConfig {
    /// Relative truncation tolerance `ε`.
    pub tolerance: f64,
    /// Oversampling `p`.
    pub oversampling: usize,
    /// Initial rank guess `r0` of the leaf phases.
    pub rank_guess: usize,
    /// Center level; `None` means `⌊L/2⌋`.
    #[serde(default)]
    pub center: Option<usize>,
    pub seed: u64,
    /// Hard cap on the leaf-phase rank guess; `None` means `min(m, n)`.
    #[serde(default)]
    pub rank_cap: Option<usize>,
    #[serde(default)]
    pub core_rule: CoreRule,
    /// Stopping rule of every range finder call.
    #[serde(default)]
    pub truncation: Truncation,
}

impl ReconstructionConfig {
    pub fn new(tolerance: f64, oversampling: usize, rank_guess: usize, seed: u64) -> Self {
        Self {
            tolerance,
            oversampling,
            rank_guess,
            center: None,
            seed,
            rank_cap: None,
            core_rule: CoreRule::PseudoInverse,
            truncation: Truncation::PivotRatio,
        }
    }

    pub fn validate(&self, levels: usize) -> Result<()> {
        if !(self.tolerance > 0.0 && self.tolerance < 1.0) {
            return Err(Error::Precondition(format!(
                "tolerance {} outside (0, 1)",
                self.tolerance
            )));
        }
        if self.rank_guess == 0 {
            return Err(Error::Precondition("rank guess must be at least 1".into()));
        }
        if let Some(c) = self.center {
            if c > levels {
                return Err(Error::Precondition(format!("center level {c} above L = {levels}")));
            }
        }
        if self.rank_cap == Some(0) {
            return Err(Error::Precondition("rank cap must be at least 1".into()));
        }
        Ok(())
    }

    pub fn center_level(&self, levels: usize) -> usize {
        self.center.unwrap_or(levels / 2)
    }
}

/// Which tree a structured probe lives on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeSide {
    /// `Ω_ν` on the column tree, multiplied by `K`.
    Source,
    /// `Γ_τ` on the row tree, multiplied by `Kᵀ`.
    Target,
}

/// Gaussian block supported on the index range of one tree node.
#[derive(Clone, Debug, PartialEq)]
pub struct StructuredProbe<T: Scalar> {
    pub side: ProbeSide,
    pub node: NodeRef,
    /// `|node| × width`, rows in tree order.
    pub core: DMatrix<T>,
}

impl<T: Scalar> StructuredProbe<T> {
    pub fn gaussian(
        side: ProbeSide,
        tree: &PartitionTree,
        node: NodeRef,
        width: usize,
        seed: u64,
    ) -> Result<Self> {
        let rows = tree.node_range(node)?.len();
        Ok(Self {
            side,
            node,
            core: gaussian_matrix(rows, width, seed),
        })
    }

    pub fn width(&self) -> usize {
        self.core.ncols()
    }

    /// Zero-padded probe in original ordering.
    pub fn embed(&self, tree: &PartitionTree) -> Result<DMatrix<T>> {
        let range = tree.node_range(self.node)?;
        if self.core.nrows() != range.len() {
            return Err(Error::Structure(format!(
                "probe core has {} rows, node ({}, {}) holds {}",
                self.core.nrows(),
                self.node.level,
                self.node.pos,
                range.len()
            )));
        }
        let mut full = DMatrix::zeros(tree.size(), self.width());
        for (k, &orig) in tree.indices(self.node.level, self.node.pos).iter().enumerate() {
            full.row_mut(orig).copy_from(&self.core.row(k));
        }
        Ok(full)
    }
}

/// One black-box call with the padded probe. `tree` must be the tree of
/// the probe's side. The product is returned in original ordering.
pub fn probe_with<T: Scalar>(
    op: &BlackBox<T>,
    tree: &PartitionTree,
    probe: &StructuredProbe<T>,
) -> Result<DMatrix<T>> {
    let height = match probe.side {
        ProbeSide::Source => op.cols(),
        ProbeSide::Target => op.rows(),
    };
    if tree.size() != height {
        return Err(Error::Structure(format!(
            "probe tree has {} points, operator side has {height}",
            tree.size()
        )));
    }
    let full = probe.embed(tree)?;
    match probe.side {
        ProbeSide::Source => op.apply(&full),
        ProbeSide::Target => op.apply_transpose(&full),
    }
}

/// Core block from the projected samples `UᴴKΩ` (`r_U × k`) and `VᵀΩ`
/// (`r_V × k`).
pub fn core_fit<T: Scalar>(uh_k_omega: &DMatrix<T>, vt_omega: &DMatrix<T>, rule: CoreRule) -> Result<DMatrix<T>> {
    let (ru, k) = uh_k_omega.shape();
    let rv = vt_omega.nrows();
    if vt_omega.ncols() != k {
        return Err(Error::Dimension {
            context: "core fit",
            expected: (rv, k),
            found: vt_omega.shape(),
        });
    }
    if ru == 0 || rv == 0 {
        return Ok(DMatrix::zeros(ru, rv));
    }
    match rule {
        CoreRule::PseudoInverse => {
            if k < rv {
                return Err(Error::Underdetermined { rows: rv, cols: k });
            }
            Ok(gemm(uh_k_omega, Op::None, &pinv_solve(vt_omega, CORE_PINV_TOL), Op::None))
        }
        CoreRule::LiteralTranspose => Ok(gemm(uh_k_omega, Op::None, vt_omega, Op::Transpose)),
    }
}

/// Core block `argmin_B ‖KΩ − U B VᵀΩ‖_F` for an orthonormal `U`.
pub fn core_block<T: Scalar>(
    u: &DMatrix<T>,
    k_omega: &DMatrix<T>,
    vt_omega: &DMatrix<T>,
    rule: CoreRule,
) -> Result<DMatrix<T>> {
    if u.nrows() != k_omega.nrows() {
        return Err(Error::Dimension {
            context: "core block",
            expected: (u.nrows(), k_omega.ncols()),
            found: k_omega.shape(),
        });
    }
    core_fit(&gemm(u, Op::Adjoint, k_omega, Op::None), vt_omega, rule)
}

/// Products and timing of one phase.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseLog {
    /// `row_leaf`, `col_leaf`, `W` or `R`.
    pub phase: String,
    /// Tree level of the blocks produced; `None` for leaf phases.
    pub level: Option<usize>,
    pub forward_cols: u64,
    pub transpose_cols: u64,
    /// Black-box calls issued (one per probe).
    pub probes: u64,
    /// Probes skipped because every block they serve has rank zero.
    pub skipped: u64,
    pub seconds: f64,
}

/// Leaf-phase doubling record.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeafRounds {
    /// Rank guess of each round.
    pub guesses: Vec<usize>,
    /// Largest revealed leaf rank of each round.
    pub revealed: Vec<usize>,
    /// Set when the guess reached the cap before the stop rule fired.
    pub capped: bool,
}

impl LeafRounds {
    pub fn rounds(&self) -> usize {
        self.guesses.len()
    }

    /// Black-box columns spent: `Σ (r + p)` over rounds.
    pub fn columns(&self, oversampling: usize) -> u64 {
        self.guesses.iter().map(|&r| (r + oversampling) as u64).sum()
    }
}

/// Cost record of one reconstruction.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FactorizationLog {
    pub phases: Vec<PhaseLog>,
    pub row_leaf: LeafRounds,
    pub col_leaf: LeafRounds,
    /// Operator counter delta over the whole run.
    pub counts: MatvecCounts,
    /// Largest simultaneous footprint of probe products.
    pub peak_probe_bytes: u64,
    /// Footprint of the largest single probe product.
    pub largest_probe_bytes: u64,
    pub seconds: f64,
}

impl FactorizationLog {
    /// Black-box columns of the two leaf phases.
    pub fn leaf_columns(&self) -> u64 {
        self.phases
            .iter()
            .filter(|p| p.level.is_none())
            .map(|p| p.forward_cols + p.transpose_cols)
            .sum()
    }

    /// Black-box columns of the transfer phases.
    pub fn transfer_columns(&self) -> u64 {
        self.counts.total_cols() - self.leaf_columns()
    }
}

/// Tracks resident probe products.
#[derive(Debug, Default)]
struct ProbeTracker {
    current: AtomicU64,
    peak: AtomicU64,
    largest: AtomicU64,
}

impl ProbeTracker {
    fn hold(&self, bytes: u64) {
        let now = self.current.fetch_add(bytes, Ordering::SeqCst) + bytes;
        self.peak.fetch_max(now, Ordering::SeqCst);
        self.largest.fetch_max(bytes, Ordering::SeqCst);
    }

    fn release(&self, bytes: u64) {
        self.current.fetch_sub(bytes, Ordering::SeqCst);
    }
}

fn bytes_of<T: Scalar>(m: &DMatrix<T>) -> u64 {
    (m.len() * T::BYTES) as u64
}

/// Rows of a tree-ordered matrix belonging to a node.
fn node_rows<T: Scalar>(m: &DMatrix<T>, tree: &PartitionTree, level: usize, pos: usize) -> DMatrix<T> {
    let r = tree.range(level, pos);
    m.rows(r.start, r.len()).into_owned()
}

/// Stop rule of the leaf phases: every leaf revealed less than the guess, or
/// is saturated at its full dimension.
fn leaf_converged<T: Scalar>(bases: &[DMatrix<T>], r: usize, other_dim: usize) -> bool {
    bases
        .iter()
        .all(|q| q.ncols() < r || q.ncols() >= q.nrows().min(other_dim))
}

/// Incremental reconstruction state.
///
/// Phases must be called in order: [`Self::leaf_row_bases`],
/// [`Self::leaf_col_bases`], [`Self::transfer_level_w`] for `l = 1..=l_m`,
/// [`Self::transfer_level_r`] for `l = L−1` down to `l_m`; [`Self::finish`]
/// then assembles the factorization. [`factorize`] runs all of them.
pub struct Reconstruction<T: Scalar> {
    op: BlackBox<T>,
    rows: PartitionTree,
    cols: PartitionTree,
    cfg: ReconstructionConfig,
    levels: usize,
    center: usize,
    v_leaf: Option<Vec<DMatrix<T>>>,
    u_leaf: Option<Vec<DMatrix<T>>>,
    /// `w[l − 1]` for the levels computed so far.
    w: Vec<Vec<DMatrix<T>>>,
    /// R levels in computation order `L−1, L−2, …`.
    r: Vec<Vec<DMatrix<T>>>,
    core: Option<Vec<DMatrix<T>>>,
    log: FactorizationLog,
    tracker: ProbeTracker,
    start_counts: MatvecCounts,
    started: Instant,
}

impl<T: Scalar> Reconstruction<T> {
    pub fn new(
        op: BlackBox<T>,
        rows: PartitionTree,
        cols: PartitionTree,
        cfg: ReconstructionConfig,
    ) -> Result<Self> {
        if rows.levels() != cols.levels() {
            return Err(Error::Structure(format!(
                "row tree has {} levels, column tree {}",
                rows.levels(),
                cols.levels()
            )));
        }
        if rows.size() != op.rows() || cols.size() != op.cols() {
            return Err(Error::Dimension {
                context: "reconstruction trees",
                expected: (op.rows(), op.cols()),
                found: (rows.size(), cols.size()),
            });
        }
        let levels = rows.levels();
        cfg.validate(levels)?;
        let start_counts = op.counts();
        Ok(Self {
            center: cfg.center_level(levels),
            op,
            rows,
            cols,
            cfg,
            levels,
            v_leaf: None,
            u_leaf: None,
            w: Vec::new(),
            r: Vec::new(),
            core: None,
            log: FactorizationLog::default(),
            tracker: ProbeTracker::default(),
            start_counts,
            started: Instant::now(),
        })
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn center(&self) -> usize {
        self.center
    }

    pub fn log(&self) -> &FactorizationLog {
        &self.log
    }

    fn nb(&self) -> usize {
        1 << self.levels
    }

    fn seed(&self, phase: u64, level: usize, node: usize, round: usize) -> u64 {
        derive_seed(self.cfg.seed, &[phase, level as u64, node as u64, round as u64])
    }

    fn record(&mut self, phase: &str, level: Option<usize>, before: MatvecCounts, probes: u64, skipped: u64, t: Instant) {
        let after = self.op.counts();
        self.log.phases.push(PhaseLog {
            phase: phase.to_string(),
            level,
            forward_cols: after.forward_cols - before.forward_cols,
            transpose_cols: after.transpose_cols - before.transpose_cols,
            probes,
            skipped,
            seconds: t.elapsed().as_secs_f64(),
        });
    }

    fn v_rank(&self, l: usize, idx: usize) -> usize {
        if l == 0 {
            self.v_leaf.as_ref().expect("row leaves computed")[idx].ncols()
        } else {
            self.w[l - 1][idx].ncols()
        }
    }

    fn u_rank(&self, l: usize, idx: usize) -> usize {
        if l == self.levels {
            self.u_leaf.as_ref().expect("column leaves computed")[idx].ncols()
        } else {
            self.r_level(l)[idx].ncols()
        }
    }

    fn r_level(&self, l: usize) -> &[DMatrix<T>] {
        &self.r[self.levels - 1 - l]
    }

    /// Adaptive leaf phase shared by both sides.
    fn leaf_phase(&mut self, side: ProbeSide) -> Result<(Vec<DMatrix<T>>, LeafRounds)> {
        let (probe_tree, leaf_tree, phase) = match side {
            ProbeSide::Target => (&self.rows, &self.cols, PHASE_ROW_LEAF),
            ProbeSide::Source => (&self.cols, &self.rows, PHASE_COL_LEAF),
        };
        let other_dim = probe_tree.size();
        let cap = self
            .cfg
            .rank_cap
            .unwrap_or(self.op.rows().min(self.op.cols()))
            .max(1);
        let big_l = self.levels;
        let mut r = self.cfg.rank_guess.min(cap);
        let mut rounds = LeafRounds::default();
        loop {
            let seed = derive_seed(self.cfg.seed, &[phase, 0, 0, rounds.rounds() as u64]);
            let probe = StructuredProbe::gaussian(side, probe_tree, NodeRef::new(0, 0), r + self.cfg.oversampling, seed)?;
            let y = gather_rows(&probe_with(&self.op, probe_tree, &probe)?, leaf_tree.order());
            let bytes = bytes_of(&y);
            self.tracker.hold(bytes);
            let (eps, trunc) = (self.cfg.tolerance, self.cfg.truncation);
            let bases: Vec<DMatrix<T>> = (0..1usize << big_l)
                .into_par_iter()
                .map(|leaf| pivoted_qr_truncate_with(&node_rows(&y, leaf_tree, big_l, leaf), eps, trunc).q)
                .collect();
            self.tracker.release(bytes);
            rounds.guesses.push(r);
            rounds.revealed.push(bases.iter().map(|q| q.ncols()).max().unwrap_or(0));
            if leaf_converged(&bases, r, other_dim) {
                return Ok((bases, rounds));
            }
            if r >= cap {
                rounds.capped = true;
                return Ok((bases, rounds));
            }
            r = (2 * r).min(cap);
        }
    }

    /// Row bases `V_{t,ν}` at every source leaf.
    pub fn leaf_row_bases(&mut self) -> Result<&LeafRounds> {
        if self.v_leaf.is_some() {
            return Err(Error::Sequencing("row leaf bases already computed".into()));
        }
        let (t, before) = (Instant::now(), self.op.counts());
        let (bases, rounds) = self.leaf_phase(ProbeSide::Target)?;
        let probes = rounds.rounds() as u64;
        self.v_leaf = Some(bases);
        self.log.row_leaf = rounds;
        self.record("row_leaf", None, before, probes, 0, t);
        Ok(&self.log.row_leaf)
    }

    /// Column bases `U_{τ,s}` at every target leaf. The rank guess restarts
    /// from `r0`.
    pub fn leaf_col_bases(&mut self) -> Result<&LeafRounds> {
        if self.v_leaf.is_none() {
            return Err(Error::Sequencing("row leaf bases must precede column leaf bases".into()));
        }
        if self.u_leaf.is_some() {
            return Err(Error::Sequencing("column leaf bases already computed".into()));
        }
        let (t, before) = (Instant::now(), self.op.counts());
        let (bases, rounds) = self.leaf_phase(ProbeSide::Source)?;
        let probes = rounds.rounds() as u64;
        self.u_leaf = Some(bases);
        self.log.col_leaf = rounds;
        self.record("col_leaf", None, before, probes, 0, t);
        Ok(&self.log.col_leaf)
    }

    /// `W_{τ,ν}` at level `l`, one transpose probe per target node `τ`.
    pub fn transfer_level_w(&mut self, l: usize) -> Result<()> {
        if self.u_leaf.is_none() {
            return Err(Error::Sequencing("leaf bases must precede transfer levels".into()));
        }
        if l == 0 || l > self.center || l != self.w.len() + 1 {
            return Err(Error::Sequencing(format!(
                "W level {l} requested; next admissible level is {} (center {})",
                self.w.len() + 1,
                self.center
            )));
        }
        let (t, before) = (Instant::now(), self.op.counts());
        let big_l = self.levels;
        let p = self.cfg.oversampling;
        let (eps, trunc) = (self.cfg.tolerance, self.cfg.truncation);
        let n_nu = 1usize << (big_l - l);
        let mut level: Vec<DMatrix<T>> = vec![DMatrix::zeros(0, 0); self.nb()];
        let (mut probes, mut skipped) = (0, 0);
        for tau in 0..1usize << l {
            let width = (0..n_nu)
                .map(|nu| {
                    let (c0, c1) = v_children(big_l, l, flat(big_l, l, tau, nu));
                    self.v_rank(l - 1, c0) + self.v_rank(l - 1, c1)
                })
                .max()
                .unwrap_or(0);
            if width == 0 {
                skipped += 1;
                continue;
            }
            let probe = StructuredProbe::gaussian(
                ProbeSide::Target,
                &self.rows,
                NodeRef::new(l, tau),
                width + p,
                self.seed(PHASE_W, l, tau, 0),
            )?;
            let y = gather_rows(&probe_with(&self.op, &self.rows, &probe)?, self.cols.order());
            probes += 1;
            let bytes = bytes_of(&y);
            self.tracker.hold(bytes);
            let z = self.project_v_chain(&y, l - 1, tau >> 1);
            let blocks: Vec<DMatrix<T>> = (0..n_nu)
                .into_par_iter()
                .map(|nu| pivoted_qr_truncate_with(&vstack(&z[2 * nu], &z[2 * nu + 1]), eps, trunc).q)
                .collect();
            self.tracker.release(bytes);
            for (nu, b) in blocks.into_iter().enumerate() {
                level[flat(big_l, l, tau, nu)] = b;
            }
        }
        self.w.push(level);
        self.record("W", Some(l), before, probes, skipped, t);
        Ok(())
    }

    /// `Vᴴ_{τ,ν} Y(S_ν)` for every `ν` at level `L − l` with `τ` fixed at
    /// level `l`, evaluated leaf-up through the partial V chain.
    fn project_v_chain(&self, y: &DMatrix<T>, l: usize, tau: usize) -> Vec<DMatrix<T>> {
        let big_l = self.levels;
        let v_leaf = self.v_leaf.as_ref().expect("row leaves computed");
        let mut z: Vec<DMatrix<T>> = (0..1usize << big_l)
            .into_par_iter()
            .map(|nu| gemm(&v_leaf[nu], Op::Adjoint, &node_rows(y, &self.cols, big_l, nu), Op::None))
            .collect();
        for lev in 1..=l {
            let anc = tau >> (l - lev);
            z = (0..1usize << (big_l - lev))
                .into_par_iter()
                .map(|nu| {
                    let w = &self.w[lev - 1][flat(big_l, lev, anc, nu)];
                    gemm(w, Op::Adjoint, &vstack(&z[2 * nu], &z[2 * nu + 1]), Op::None)
                })
                .collect();
        }
        z
    }

    /// `Uᴴ_{τ,ν} Y(T_τ)` for every `τ` at level `l` with `ν` fixed at
    /// level `L − l` of the column tree.
    fn project_u_chain(&self, y: &DMatrix<T>, l: usize, nu: usize) -> Vec<DMatrix<T>> {
        let big_l = self.levels;
        let u_leaf = self.u_leaf.as_ref().expect("column leaves computed");
        let mut a: Vec<DMatrix<T>> = (0..1usize << big_l)
            .into_par_iter()
            .map(|tau| gemm(&u_leaf[tau], Op::Adjoint, &node_rows(y, &self.rows, big_l, tau), Op::None))
            .collect();
        for lev in (l..big_l).rev() {
            let anc = nu >> (lev - l);
            let r_level = self.r_level(lev);
            a = (0..1usize << lev)
                .into_par_iter()
                .map(|tau| {
                    let r = &r_level[flat(big_l, lev, tau, anc)];
                    gemm(r, Op::Adjoint, &vstack(&a[2 * tau], &a[2 * tau + 1]), Op::None)
                })
                .collect();
        }
        a
    }

    /// `V_{τ,ν}ᵀ Ω` at the center level for one `(τ, ν)`; `omega` holds the
    /// rows of `S_ν` in tree order.
    fn vt_omega(&self, omega: &DMatrix<T>, tau: usize, nu: usize) -> DMatrix<T> {
        let big_l = self.levels;
        let lm = self.center;
        let v_leaf = self.v_leaf.as_ref().expect("row leaves computed");
        let base = self.cols.range(big_l - lm, nu).start;
        let first = nu << lm;
        let mut z: Vec<DMatrix<T>> = (first..first + (1 << lm))
            .map(|leaf| {
                let r = self.cols.range(big_l, leaf);
                gemm(&v_leaf[leaf], Op::Transpose, &omega.rows(r.start - base, r.len()), Op::None)
            })
            .collect();
        for lev in 1..=lm {
            let anc = tau >> (lm - lev);
            let first = nu << (lm - lev);
            z = (0..z.len() / 2)
                .map(|k| {
                    let w = &self.w[lev - 1][flat(big_l, lev, anc, first + k)];
                    gemm(w, Op::Transpose, &vstack(&z[2 * k], &z[2 * k + 1]), Op::None)
                })
                .collect();
        }
        z.pop().expect("one block at the center")
    }

    /// `R_{τ,ν}` at level `l`, one forward probe per source node `ν`; at the
    /// center level the core blocks are fitted from the same products.
    pub fn transfer_level_r(&mut self, l: usize) -> Result<()> {
        let big_l = self.levels;
        if self.u_leaf.is_none() {
            return Err(Error::Sequencing("leaf bases must precede transfer levels".into()));
        }
        let next = big_l.checked_sub(1 + self.r.len());
        if l >= big_l || l < self.center || Some(l) != next {
            return Err(Error::Sequencing(format!(
                "R level {l} requested; levels run from {} down to the center {}",
                big_l.saturating_sub(1),
                self.center
            )));
        }
        let at_center = l == self.center;
        if at_center && self.w.len() != self.center {
            return Err(Error::Sequencing("all W levels must precede the center R level".into()));
        }
        let (t, before) = (Instant::now(), self.op.counts());
        let p = self.cfg.oversampling;
        let (eps, trunc) = (self.cfg.tolerance, self.cfg.truncation);
        let rule = self.cfg.core_rule;
        let n_tau = 1usize << l;
        let mut level: Vec<DMatrix<T>> = vec![DMatrix::zeros(0, 0); self.nb()];
        let mut core: Vec<DMatrix<T>> = vec![DMatrix::zeros(0, 0); self.nb()];
        let (mut probes, mut skipped) = (0, 0);
        for nu in 0..1usize << (big_l - l) {
            let mut width = (0..n_tau)
                .map(|tau| {
                    let (c0, c1) = u_children(big_l, l, flat(big_l, l, tau, nu));
                    self.u_rank(l + 1, c0) + self.u_rank(l + 1, c1)
                })
                .max()
                .unwrap_or(0);
            if width == 0 {
                skipped += 1;
                if at_center {
                    for tau in 0..n_tau {
                        let idx = flat(big_l, l, tau, nu);
                        core[idx] = DMatrix::zeros(0, self.v_rank(l, idx));
                    }
                }
                continue;
            }
            if at_center {
                let rv = (0..n_tau).map(|tau| self.v_rank(l, flat(big_l, l, tau, nu))).max().unwrap_or(0);
                width = width.max(rv);
            }
            let probe = StructuredProbe::gaussian(
                ProbeSide::Source,
                &self.cols,
                NodeRef::new(big_l - l, nu),
                width + p,
                self.seed(PHASE_R, l, nu, 0),
            )?;
            let y = gather_rows(&probe_with(&self.op, &self.cols, &probe)?, self.rows.order());
            probes += 1;
            let bytes = bytes_of(&y);
            self.tracker.hold(bytes);
            let a = self.project_u_chain(&y, l + 1, nu >> 1);
            let results: Vec<(DMatrix<T>, Option<Result<DMatrix<T>>>)> = (0..n_tau)
                .into_par_iter()
                .map(|tau| {
                    let e = vstack(&a[2 * tau], &a[2 * tau + 1]);
                    let q = pivoted_qr_truncate_with(&e, eps, trunc).q;
                    let b = at_center.then(|| {
                        let uk = gemm(&q, Op::Adjoint, &e, Op::None);
                        core_fit(&uk, &self.vt_omega(&probe.core, tau, nu), rule)
                    });
                    (q, b)
                })
                .collect();
            self.tracker.release(bytes);
            for (tau, (q, b)) in results.into_iter().enumerate() {
                let idx = flat(big_l, l, tau, nu);
                level[idx] = q;
                if let Some(b) = b {
                    core[idx] = b?;
                }
            }
        }
        self.r.push(level);
        if at_center {
            self.core = Some(core);
        }
        self.record("R", Some(l), before, probes, skipped, t);
        Ok(())
    }

    /// Core blocks when the center is the leaf level of the row tree (no R
    /// levels): a single root probe on the source side.
    fn core_at_target_leaves(&mut self) -> Result<()> {
        let big_l = self.levels;
        let (t, before) = (Instant::now(), self.op.counts());
        let u_leaf = self.u_leaf.clone().expect("column leaves computed");
        let nb = self.nb();
        let width = (0..nb)
            .map(|tau| u_leaf[tau].ncols().max(self.v_rank(big_l, tau)))
            .max()
            .unwrap_or(0);
        let mut core: Vec<DMatrix<T>> = (0..nb)
            .map(|tau| DMatrix::zeros(u_leaf[tau].ncols(), self.v_rank(big_l, tau)))
            .collect();
        if width > 0 {
            let probe = StructuredProbe::gaussian(
                ProbeSide::Source,
                &self.cols,
                NodeRef::new(0, 0),
                width + self.cfg.oversampling,
                self.seed(PHASE_R, big_l, 0, 0),
            )?;
            let y = gather_rows(&probe_with(&self.op, &self.cols, &probe)?, self.rows.order());
            let bytes = bytes_of(&y);
            self.tracker.hold(bytes);
            let rule = self.cfg.core_rule;
            core = (0..nb)
                .into_par_iter()
                .map(|tau| {
                    let kw = node_rows(&y, &self.rows, big_l, tau);
                    core_block(&u_leaf[tau], &kw, &self.vt_omega(&probe.core, tau, 0), rule)
                })
                .collect::<Result<_>>()?;
            self.tracker.release(bytes);
        }
        self.core = Some(core);
        self.record("B", Some(big_l), before, u64::from(width > 0), u64::from(width == 0), t);
        Ok(())
    }

    /// Assembles the factorization once every phase has run.
    pub fn finish(mut self) -> Result<(HybridButterfly<T>, FactorizationLog)> {
        if self.center == self.levels && self.core.is_none() && self.u_leaf.is_some() && self.w.len() == self.center {
            self.core_at_target_leaves()?;
        }
        let core = self
            .core
            .take()
            .ok_or_else(|| Error::Sequencing("reconstruction finished before the center level".into()))?;
        let mut u_transfer = std::mem::take(&mut self.r);
        u_transfer.reverse();
        let parts = ButterflyParts {
            center: self.center,
            u_leaf: self.u_leaf.take().expect("checked by the center phase"),
            v_leaf: self.v_leaf.take().expect("checked by the center phase"),
            u_transfer,
            w_transfer: std::mem::take(&mut self.w),
            core,
            row_tree: self.rows,
            col_tree: self.cols,
        };
        let bf = HybridButterfly::new(parts)?;
        let end = self.op.counts();
        let mut log = self.log;
        log.counts = MatvecCounts {
            forward_cols: end.forward_cols - self.start_counts.forward_cols,
            transpose_cols: end.transpose_cols - self.start_counts.transpose_cols,
            forward_calls: end.forward_calls - self.start_counts.forward_calls,
            transpose_calls: end.transpose_calls - self.start_counts.transpose_calls,
        };
        log.peak_probe_bytes = self.tracker.peak.load(Ordering::SeqCst);
        log.largest_probe_bytes = self.tracker.largest.load(Ordering::SeqCst);
        log.seconds = self.started.elapsed().as_secs_f64();
        Ok((bf, log))
    }
}

/// Runs every reconstruction phase in order.
pub fn factorize<T: Scalar>(
    op: &BlackBox<T>,
    rows: &PartitionTree,
    cols: &PartitionTree,
    cfg: &ReconstructionConfig,
) -> Result<(HybridButterfly<T>, FactorizationLog)> {
    let mut rec = Reconstruction::new(op.clone(), rows.clone(), cols.clone(), *cfg)?;
    rec.leaf_row_bases()?;
    rec.leaf_col_bases()?;
    for l in 1..=rec.center() {
        rec.transfer_level_w(l)?;
    }
    for l in (rec.center()..rec.levels()).rev() {
        rec.transfer_level_r(l)?;
    }
    rec.finish()
}

/// `‖KΩ − K̃Ω‖_F / ‖KΩ‖_F` with a Gaussian `Ω` of `k` columns.
pub fn estimate_error<T: Scalar>(op: &BlackBox<T>, bf: &HybridButterfly<T>, k: usize, seed: u64) -> Result<f64> {
    if k == 0 {
        return Err(Error::Precondition("error estimate needs at least one column".into()));
    }
    let omega = gaussian_matrix::<T>(op.cols(), k, seed);
    let exact = op.apply(&omega)?;
    let approx = bf.apply(&omega)?;
    let denom = exact.norm();
    if denom == 0.0 {
        return Err(Error::UndefinedMetric("operator maps the test matrix to zero".into()));
    }
    Ok((exact - approx).norm() / denom)
}
