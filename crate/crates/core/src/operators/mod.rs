//! Black-box operators with counted products.
//!
//! The reconstruction engine only ever sees a [`BlackBox`]: dimensions plus
//! forward and plain-transpose products. Every product advances an atomic
//! column counter on the corresponding side.

mod config;
mod hankel;
mod helmholtz;
mod scattering;
mod synthetic;

pub use config::{build_problem, AnyProblem, Geometry, OperatorConfig, Problem};
pub use hankel::hankel_h0_second_kind;
pub use helmholtz::{build_helmholtz3d_operator, semisphere_cloud, Helmholtz3DConfig};
pub use scattering::{build_scattering_operator, Scattering2DConfig, ScatteringOperator};
pub use synthetic::{synth_butterfly, SyntheticButterflySpec};

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::butterfly::HybridButterfly;
use crate::error::{check_dims, Result};
use crate::linalg::{gemm, Op, Scalar};

/// A linear map `K: F^n → F^m` available through products only.
pub trait LinearOperator<T: Scalar>: Send + Sync {
    fn rows(&self) -> usize;
    fn cols(&self) -> usize;
    /// `K X` for an n×k block.
    fn apply(&self, x: &DMatrix<T>) -> Result<DMatrix<T>>;
    /// `Kᵀ Y` (no conjugation) for an m×k block.
    fn apply_transpose(&self, y: &DMatrix<T>) -> Result<DMatrix<T>>;
}

/// Dense matrix as an operator.
#[derive(Clone, Debug)]
pub struct DenseOperator<T: Scalar> {
    matrix: DMatrix<T>,
}

impl<T: Scalar> DenseOperator<T> {
    pub fn new(matrix: DMatrix<T>) -> Self {
        Self { matrix }
    }

    pub fn matrix(&self) -> &DMatrix<T> {
        &self.matrix
    }
}

impl<T: Scalar> LinearOperator<T> for DenseOperator<T> {
    fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    fn cols(&self) -> usize {
        self.matrix.ncols()
    }

    fn apply(&self, x: &DMatrix<T>) -> Result<DMatrix<T>> {
        check_dims("dense apply", (self.cols(), x.ncols()), x.shape())?;
        Ok(gemm(&self.matrix, Op::None, x, Op::None))
    }

    fn apply_transpose(&self, y: &DMatrix<T>) -> Result<DMatrix<T>> {
        check_dims("dense transpose apply", (self.rows(), y.ncols()), y.shape())?;
        Ok(gemm(&self.matrix, Op::Transpose, y, Op::None))
    }
}

impl<T: Scalar> LinearOperator<T> for HybridButterfly<T> {
    fn rows(&self) -> usize {
        HybridButterfly::rows(self)
    }

    fn cols(&self) -> usize {
        HybridButterfly::cols(self)
    }

    fn apply(&self, x: &DMatrix<T>) -> Result<DMatrix<T>> {
        HybridButterfly::apply(self, x)
    }

    fn apply_transpose(&self, y: &DMatrix<T>) -> Result<DMatrix<T>> {
        HybridButterfly::apply_transpose(self, y)
    }
}

/// Product counts of a [`BlackBox`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatvecCounts {
    /// Columns multiplied by `K`.
    pub forward_cols: u64,
    /// Columns multiplied by `Kᵀ`.
    pub transpose_cols: u64,
    pub forward_calls: u64,
    pub transpose_calls: u64,
}

impl MatvecCounts {
    pub fn total_cols(&self) -> u64 {
        self.forward_cols + self.transpose_cols
    }
}

/// Counting wrapper; cheap to clone, clones share counters.
#[derive(Clone)]
pub struct BlackBox<T: Scalar> {
    inner: Arc<dyn LinearOperator<T>>,
    counters: Arc<[AtomicU64; 4]>,
}

impl<T: Scalar> BlackBox<T> {
    pub fn new<O: LinearOperator<T> + 'static>(op: O) -> Self {
        Self::from_arc(Arc::new(op))
    }

    pub fn from_arc(inner: Arc<dyn LinearOperator<T>>) -> Self {
        Self {
            inner,
            counters: Arc::new(Default::default()),
        }
    }

    pub fn rows(&self) -> usize {
        self.inner.rows()
    }

    pub fn cols(&self) -> usize {
        self.inner.cols()
    }

    pub fn apply(&self, x: &DMatrix<T>) -> Result<DMatrix<T>> {
        check_dims("black-box apply", (self.cols(), x.ncols()), x.shape())?;
        let y = self.inner.apply(x)?;
        check_dims("black-box apply result", (self.rows(), x.ncols()), y.shape())?;
        self.counters[0].fetch_add(x.ncols() as u64, Ordering::Relaxed);
        self.counters[2].fetch_add(1, Ordering::Relaxed);
        Ok(y)
    }

    pub fn apply_transpose(&self, y: &DMatrix<T>) -> Result<DMatrix<T>> {
        check_dims("black-box transpose apply", (self.rows(), y.ncols()), y.shape())?;
        let x = self.inner.apply_transpose(y)?;
        check_dims("black-box transpose result", (self.cols(), y.ncols()), x.shape())?;
        self.counters[1].fetch_add(y.ncols() as u64, Ordering::Relaxed);
        self.counters[3].fetch_add(1, Ordering::Relaxed);
        Ok(x)
    }

    pub fn counts(&self) -> MatvecCounts {
        MatvecCounts {
            forward_cols: self.counters[0].load(Ordering::Relaxed),
            transpose_cols: self.counters[1].load(Ordering::Relaxed),
            forward_calls: self.counters[2].load(Ordering::Relaxed),
            transpose_calls: self.counters[3].load(Ordering::Relaxed),
        }
    }

    pub fn reset_counts(&self) {
        for c in self.counters.iter() {
            c.store(0, Ordering::Relaxed);
        }
    }

    /// Dense matrix obtained by applying the operator to the identity.
    /// Counts as `cols()` forward columns.
    pub fn densify(&self) -> Result<DMatrix<T>> {
        self.apply(&DMatrix::identity(self.cols(), self.cols()))
    }
}

impl<T: Scalar> std::fmt::Debug for BlackBox<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BlackBox")
            .field("rows", &self.rows())
            .field("cols", &self.cols())
            .field("counts", &self.counts())
            .finish()
    }
}

/// Worst relative mismatch `|yᵀ(Kx) − (Kᵀy)ᵀx| / (‖y‖‖Kx‖)` over random pairs.
pub fn adjoint_mismatch<T: Scalar>(op: &BlackBox<T>, pairs: usize, seed: u64) -> Result<f64> {
    use crate::linalg::{derive_seed, gaussian_matrix};
    let mut worst: f64 = 0.0;
    for i in 0..pairs as u64 {
        let x = gaussian_matrix::<T>(op.cols(), 1, derive_seed(seed, &[i, 0]));
        let y = gaussian_matrix::<T>(op.rows(), 1, derive_seed(seed, &[i, 1]));
        let kx = op.apply(&x)?;
        let kty = op.apply_transpose(&y)?;
        let lhs = gemm(&y, Op::Transpose, &kx, Op::None)[(0, 0)];
        let rhs = gemm(&kty, Op::Transpose, &x, Op::None)[(0, 0)];
        let scale = y.norm() * kx.norm();
        if scale > 0.0 {
            worst = worst.max((lhs - rhs).modulus() / scale);
        }
    }
    Ok(worst)
}
