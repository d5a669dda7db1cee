//! Dense checks of the projection error bounds of a reconstructed butterfly.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::butterfly::{gather_rows, unflat, HybridButterfly};
use crate::error::{Error, Result};
use crate::linalg::{frobenius, gemm, Op, Scalar};

/// Which projection a level check measures.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    /// `Σ ‖K_b − U Uᴴ K_b‖²_F ≤ (L − l + 1) ε² ‖K‖²_F`, levels `l_m..=L`.
    ColumnBasis,
    /// `Σ ‖K_b − K_b V̄ Vᵀ‖²_F ≤ (l + 1) ε² ‖K‖²_F`, levels `0..=l_m`.
    RowBasis,
    /// `Σ ‖K_b − U Uᴴ K_b V̄ Vᵀ‖²_F ≤ (L + 2) ε² ‖K‖²_F` at `l_m`.
    Hybrid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelBound {
    pub kind: BoundKind,
    pub level: usize,
    /// Summed squared block residuals.
    pub residual_sq: f64,
    /// Right-hand side of the bound.
    pub bound_sq: f64,
    pub pass: bool,
}

impl LevelBound {
    /// `sqrt(residual / bound)`; below one when the bound holds.
    pub fn ratio(&self) -> f64 {
        if self.bound_sq > 0.0 {
            (self.residual_sq / self.bound_sq).sqrt()
        } else if self.residual_sq > 0.0 {
            f64::INFINITY
        } else {
            0.0
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub tolerance: f64,
    pub levels: usize,
    pub center: usize,
    /// `‖K‖²_F`.
    pub norm_sq: f64,
    pub checks: Vec<LevelBound>,
    /// `‖K − K̃‖_F / ‖K‖_F` of the assembled factorization.
    pub relative_error: f64,
}

impl BoundReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

/// Evaluates the level-wise projection bounds of `bf` against the dense
/// matrix `dense` (original ordering) at tolerance `eps`.
///
/// `cap` bounds `m × n` of the dense expansion.
pub fn check_error_bounds<T: Scalar>(
    dense: &DMatrix<T>,
    bf: &HybridButterfly<T>,
    eps: f64,
    cap: usize,
) -> Result<BoundReport> {
    let (m, n) = dense.shape();
    if (m, n) != (bf.rows(), bf.cols()) {
        return Err(Error::Dimension {
            context: "bound check",
            expected: (bf.rows(), bf.cols()),
            found: (m, n),
        });
    }
    if m.saturating_mul(n) > cap {
        return Err(Error::DenseCap { rows: m, cols: n, cap });
    }
    let big_l = bf.levels();
    let lm = bf.center();
    let rows = bf.row_tree();
    let cols = bf.col_tree();
    // Tree-ordered copy of K.
    let k = gather_rows(dense, rows.order());
    let k = gather_rows(&k.transpose(), cols.order()).transpose();
    let norm_sq = frobenius(&k).powi(2);
    let eps_sq = eps * eps;

    let block = |l: usize, idx: usize| {
        let (tau, nu) = unflat(big_l, l, idx);
        let r = rows.range(l, tau);
        let c = cols.range(big_l - l, nu);
        k.view((r.start, c.start), (r.len(), c.len())).into_owned()
    };
    let nb = 1usize << big_l;
    let mut checks = Vec::new();

    for l in (lm..=big_l).rev() {
        let us = bf.expanded_u(l);
        let residual_sq: f64 = (0..nb)
            .into_par_iter()
            .map(|idx| frobenius(&project_left(&us[idx], &block(l, idx))).powi(2))
            .sum();
        let bound_sq = (big_l - l + 1) as f64 * eps_sq * norm_sq;
        checks.push(LevelBound {
            kind: BoundKind::ColumnBasis,
            level: l,
            residual_sq,
            bound_sq,
            pass: residual_sq <= bound_sq,
        });
    }
    for l in 0..=lm {
        let vs = bf.expanded_v(l);
        let residual_sq: f64 = (0..nb)
            .into_par_iter()
            .map(|idx| frobenius(&project_right(&block(l, idx), &vs[idx])).powi(2))
            .sum();
        let bound_sq = (l + 1) as f64 * eps_sq * norm_sq;
        checks.push(LevelBound {
            kind: BoundKind::RowBasis,
            level: l,
            residual_sq,
            bound_sq,
            pass: residual_sq <= bound_sq,
        });
    }
    let us = bf.expanded_u(lm);
    let vs = bf.expanded_v(lm);
    let residual_sq: f64 = (0..nb)
        .into_par_iter()
        .map(|idx| {
            let kb = block(lm, idx);
            let left = gemm(&us[idx], Op::None, &gemm(&us[idx], Op::Adjoint, &kb, Op::None), Op::None);
            let both = &kb - &left + project_right(&left, &vs[idx]);
            frobenius(&both).powi(2)
        })
        .sum();
    let bound_sq = (big_l + 2) as f64 * eps_sq * norm_sq;
    checks.push(LevelBound {
        kind: BoundKind::Hybrid,
        level: lm,
        residual_sq,
        bound_sq,
        pass: residual_sq <= bound_sq,
    });

    let approx = bf.to_dense(cap)?;
    let relative_error = if norm_sq > 0.0 {
        frobenius(&(dense - approx)) / norm_sq.sqrt()
    } else {
        frobenius(&approx)
    };
    Ok(BoundReport {
        tolerance: eps,
        levels: big_l,
        center: lm,
        norm_sq,
        checks,
        relative_error,
    })
}

/// `A − U Uᴴ A`.
fn project_left<T: Scalar>(u: &DMatrix<T>, a: &DMatrix<T>) -> DMatrix<T> {
    a - gemm(u, Op::None, &gemm(u, Op::Adjoint, a, Op::None), Op::None)
}

/// `A − A V̄ Vᵀ`; `V` spans the range of `Aᵀ`.
fn project_right<T: Scalar>(a: &DMatrix<T>, v: &DMatrix<T>) -> DMatrix<T> {
    let av = gemm(a, Op::None, &v.map(|z| z.conjugate()), Op::None);
    a - gemm(&av, Op::None, v, Op::Transpose)
}
