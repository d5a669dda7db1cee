//! Dense kernels shared by every other module.
//!
//! Matrices are `nalgebra::DMatrix` values, stored column-major. All kernels
//! are generic over [`Scalar`], implemented for `f64` and [`Complex64`].
//! Wherever a projection needs the adjoint of a basis, the conjugate
//! transpose is used; for real scalars it coincides with the transpose.

mod pinv;
mod qr;
mod range;

pub use pinv::pinv_solve;
pub use qr::{pivoted_qr_truncate, pivoted_qr_truncate_with, Truncation};
pub use range::{adaptive_range, randomized_range, AdaptiveRange, RangeFinderConfig};

use std::fmt::Debug;

use nalgebra::{ComplexField, DMatrix, Dyn, Matrix, RawStorage};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Column-major dense matrix.
pub type DenseMatrix<T> = DMatrix<T>;

/// Scalar field tag, also written into serialized containers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalarKind {
    Real,
    Complex,
}

impl ScalarKind {
    pub fn tag(self) -> u8 {
        match self {
            ScalarKind::Real => 0,
            ScalarKind::Complex => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(ScalarKind::Real),
            1 => Some(ScalarKind::Complex),
            _ => None,
        }
    }
}

/// Double-precision real or complex scalar.
pub trait Scalar: ComplexField<RealField = f64> + Copy + Send + Sync + Debug + 'static {
    const KIND: ScalarKind;
    /// Bytes per serialized entry.
    const BYTES: usize;

    /// Standard normal sample; complex values get independent N(0,1) parts.
    fn sample_standard<R: Rng + ?Sized>(rng: &mut R) -> Self;

    fn write_le(self, out: &mut Vec<u8>);

    /// Reads one entry from exactly `Self::BYTES` bytes.
    fn read_le(bytes: &[u8]) -> Self;

    fn is_finite_value(self) -> bool;

    /// `c = op(a) * op(b)` on raw strided storage.
    ///
    /// # Safety
    /// Pointers and strides must describe valid, non-overlapping storage of
    /// the stated shapes; `c` must be writable.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl Scalar for f64 {
    const KIND: ScalarKind = ScalarKind::Real;
    const BYTES: usize = 8;

    fn sample_standard<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.sample(StandardNormal)
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes[..8].try_into().expect("8 bytes"))
    }

    fn is_finite_value(self) -> bool {
        self.is_finite()
    }

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, 0.0, c, rsc, csc);
    }
}

impl Scalar for Complex64 {
    const KIND: ScalarKind = ScalarKind::Complex;
    const BYTES: usize = 16;

    fn sample_standard<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        Complex64::new(re, im)
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.re.to_le_bytes());
        out.extend_from_slice(&self.im.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        let re = f64::from_le_bytes(bytes[..8].try_into().expect("8 bytes"));
        let im = f64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
        Complex64::new(re, im)
    }

    fn is_finite_value(self) -> bool {
        self.re.is_finite() && self.im.is_finite()
    }

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        use matrixmultiply::CGemmOption::Standard;
        // Complex64 is repr(C) { re, im }, layout-compatible with [f64; 2].
        matrixmultiply::zgemm(
            Standard,
            Standard,
            m,
            k,
            n,
            [1.0, 0.0],
            a as *const [f64; 2],
            rsa,
            csa,
            b as *const [f64; 2],
            rsb,
            csb,
            [0.0, 0.0],
            c as *mut [f64; 2],
            rsc,
            csc,
        );
    }
}

/// How an operand enters a product.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Op {
    /// As stored.
    None,
    /// Plain transpose.
    Transpose,
    /// Conjugate transpose.
    Adjoint,
}

/// Returns `op_a(a) * op_b(b)`.
///
/// Panics if the inner dimensions disagree; public entry points validate
/// shapes before reaching this kernel.
pub fn gemm<T, SA, SB>(
    a: &Matrix<T, Dyn, Dyn, SA>,
    op_a: Op,
    b: &Matrix<T, Dyn, Dyn, SB>,
    op_b: Op,
) -> DMatrix<T>
where
    T: Scalar,
    SA: RawStorage<T, Dyn, Dyn>,
    SB: RawStorage<T, Dyn, Dyn>,
{
    // The kernel has no conjugation flag; adjoint operands of complex type
    // are conjugated into a temporary first.
    if T::KIND == ScalarKind::Complex {
        if op_a == Op::Adjoint {
            let ac = a.map(|z| z.conjugate());
            return gemm(&ac, Op::Transpose, b, op_b);
        }
        if op_b == Op::Adjoint {
            let bc = b.map(|z| z.conjugate());
            return gemm(a, op_a, &bc, Op::Transpose);
        }
    }
    let (ar, ac) = a.shape();
    let (ars, acs) = a.strides();
    let (m, k, rsa, csa) = match op_a {
        Op::None => (ar, ac, ars, acs),
        _ => (ac, ar, acs, ars),
    };
    let (br, bc) = b.shape();
    let (brs, bcs) = b.strides();
    let (kb, n, rsb, csb) = match op_b {
        Op::None => (br, bc, brs, bcs),
        _ => (bc, br, bcs, brs),
    };
    assert_eq!(k, kb, "gemm inner dimension mismatch");
    let mut c = DMatrix::<T>::zeros(m, n);
    if m == 0 || n == 0 || k == 0 {
        return c;
    }
    // SAFETY: shapes and strides come straight from nalgebra storage; `c`
    // is a fresh contiguous column-major buffer of shape m x n.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            c.as_mut_ptr(),
            1,
            m as isize,
        );
    }
    c
}

/// Frobenius norm.
pub fn frobenius<T: Scalar, S: RawStorage<T, Dyn, Dyn>>(a: &Matrix<T, Dyn, Dyn, S>) -> f64 {
    a.iter().map(|z| z.modulus_squared()).sum::<f64>().sqrt()
}

/// Mixes a base seed with a path of tags into an independent stream seed.
///
/// Splitmix64 finalizer applied along the path, so per-node probe streams
/// do not depend on the order in which nodes are visited.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    path.iter().fold(mix(seed), |acc, &tag| mix(acc ^ mix(tag)))
}

/// Matrix of i.i.d. standard normal entries, filled column by column.
pub fn gaussian_matrix<T: Scalar>(rows: usize, cols: usize, seed: u64) -> DenseMatrix<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        data.push(T::sample_standard(&mut rng));
    }
    DMatrix::from_vec(rows, cols, data)
}

/// Matrix with orthonormal columns.
#[derive(Clone, Debug)]
pub struct OrthonormalBasis<T: Scalar> {
    /// m x k, QᴴQ = I_k.
    pub q: DenseMatrix<T>,
    /// Magnitudes of the retained pivoted-R diagonal.
    pub r_diag: Vec<f64>,
    /// Set when the input was identically zero.
    pub zero_input: bool,
}

impl<T: Scalar> OrthonormalBasis<T> {
    pub fn rank(&self) -> usize {
        self.q.ncols()
    }

    pub fn dim(&self) -> usize {
        self.q.nrows()
    }

    pub fn empty(rows: usize) -> Self {
        Self {
            q: DMatrix::zeros(rows, 0),
            r_diag: Vec::new(),
            zero_input: true,
        }
    }

    /// ‖QᴴQ − I‖_F.
    pub fn orthonormality_defect(&self) -> f64 {
        orthonormality_defect(&self.q)
    }

    pub fn into_matrix(self) -> DenseMatrix<T> {
        self.q
    }
}

/// ‖QᴴQ − I‖_F for any tall matrix.
pub fn orthonormality_defect<T: Scalar>(q: &DenseMatrix<T>) -> f64 {
    let mut g = gemm(q, Op::Adjoint, q, Op::None);
    for i in 0..g.nrows() {
        g[(i, i)] -= T::one();
    }
    frobenius(&g)
}

/// `‖A − QQᴴA‖_F`.
pub fn projection_residual<T: Scalar>(q: &DenseMatrix<T>, a: &DenseMatrix<T>) -> f64 {
    let coeff = gemm(q, Op::Adjoint, a, Op::None);
    let proj = gemm(q, Op::None, &coeff, Op::None);
    frobenius(&(a - proj))
}

/// Elementwise complex conjugate.
pub fn conj<T: Scalar>(a: &DenseMatrix<T>) -> DenseMatrix<T> {
    a.map(|z| z.conjugate())
}
