use nalgebra::DMatrix;

use super::{gemm, Op, Scalar};

/// Moore–Penrose pseudo-inverse through the SVD.
///
/// Singular values below `tol * σ_max` are treated as zero. A zero matrix
/// maps to the zero matrix of transposed shape.
pub fn pinv_solve<T: Scalar>(m: &DMatrix<T>, tol: f64) -> DMatrix<T> {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return DMatrix::zeros(cols, rows);
    }
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("left singular vectors requested");
    let v_t = svd.v_t.expect("right singular vectors requested");
    let sigma = svd.singular_values;
    let smax = sigma.iter().cloned().fold(0.0, f64::max);
    let cut = tol * smax;
    // V Σ⁺ Uᴴ, scaling the columns of V.
    let mut v = v_t.adjoint();
    for (j, &s) in sigma.iter().enumerate() {
        let scale = if s > cut && s > 0.0 { 1.0 / s } else { 0.0 };
        v.column_mut(j).scale_mut(scale);
    }
    gemm(&v, Op::None, &u, Op::Adjoint)
}
