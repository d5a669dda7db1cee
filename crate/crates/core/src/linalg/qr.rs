use nalgebra::DMatrix;

use serde::{Deserialize, Serialize};

use super::{OrthonormalBasis, Scalar};

/// Where a truncated pivoted QR stops.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Truncation {
    /// First `k` with `|R(k+1,k+1)| <= eps * |R(1,1)|`.
    #[default]
    PivotRatio,
    /// First `k` with `‖R(k+1:, k+1:)‖_F <= eps * ‖W‖_F`, so that
    /// `‖W − QQᴴW‖_F <= eps * ‖W‖_F` holds on the sampled matrix.
    Frobenius,
}

/// Truncated Householder QR with column pivoting, `WP = QR`.
///
/// Stops at the first step whose pivot satisfies `|R(k+1,k+1)| <= eps * |R(1,1)|`
/// and returns the leading `k` columns of Q. Column norms are recomputed at
/// every step rather than downdated, which keeps the pivot magnitudes exact.
/// An all-zero input yields a rank-0 basis with `zero_input` set.
pub fn pivoted_qr_truncate<T: Scalar>(w: &DMatrix<T>, eps: f64) -> OrthonormalBasis<T> {
    pivoted_qr_truncate_with(w, eps, Truncation::PivotRatio)
}

/// [`pivoted_qr_truncate`] with an explicit stopping rule.
pub fn pivoted_qr_truncate_with<T: Scalar>(w: &DMatrix<T>, eps: f64, rule: Truncation) -> OrthonormalBasis<T> {
    let (m, n) = w.shape();
    let kmax = m.min(n);
    if kmax == 0 {
        return OrthonormalBasis::empty(m);
    }
    let mut a = w.clone();
    let mut reflectors: Vec<(Vec<T>, f64)> = Vec::new();
    let mut r_diag = Vec::new();
    let mut r11 = 0.0;
    let mut total = 0.0;

    for j in 0..kmax {
        let norms: Vec<f64> = (j..n).map(|c| tail_norm(&a, c, j)).collect();
        let (pivot, norm) = norms
            .iter()
            .enumerate()
            .fold((j, -1.0), |best, (c, &v)| if v > best.1 { (j + c, v) } else { best });
        let trailing = norms.iter().map(|v| v * v).sum::<f64>().sqrt();
        if j == 0 {
            r11 = norm;
            total = trailing;
            if r11 == 0.0 {
                return OrthonormalBasis::empty(m);
            }
        }
        let stop = match rule {
            Truncation::PivotRatio => norm <= eps * r11,
            Truncation::Frobenius => trailing <= eps * total,
        };
        if stop {
            break;
        }
        a.swap_columns(j, pivot);

        let x0 = a[(j, j)];
        let x0_abs = x0.modulus();
        let phase = if x0_abs == 0.0 {
            T::one()
        } else {
            x0.unscale(x0_abs)
        };
        let alpha = -phase.scale(norm);
        let mut v: Vec<T> = (j..m).map(|i| a[(i, j)]).collect();
        v[0] -= alpha;
        let vnorm_sq = 2.0 * norm * (norm + x0_abs);
        let beta = 2.0 / vnorm_sq;

        a[(j, j)] = alpha;
        for i in j + 1..m {
            a[(i, j)] = T::zero();
        }
        for c in j + 1..n {
            reflect_column(&mut a, c, j, &v, beta);
        }
        reflectors.push((v, beta));
        r_diag.push(norm);
    }

    let k = reflectors.len();
    let mut q = DMatrix::<T>::zeros(m, k);
    for i in 0..k {
        q[(i, i)] = T::one();
    }
    for (j, (v, beta)) in reflectors.iter().enumerate().rev() {
        for c in 0..k {
            reflect_column(&mut q, c, j, v, *beta);
        }
    }
    OrthonormalBasis {
        q,
        r_diag,
        zero_input: false,
    }
}

fn tail_norm<T: Scalar>(a: &DMatrix<T>, col: usize, from: usize) -> f64 {
    a.column(col)
        .rows_range(from..)
        .iter()
        .map(|z| z.modulus_squared())
        .sum::<f64>()
        .sqrt()
}

/// Applies `I − beta v vᴴ` to rows `from..` of one column.
fn reflect_column<T: Scalar>(a: &mut DMatrix<T>, col: usize, from: usize, v: &[T], beta: f64) {
    let mut column = a.column_mut(col);
    let mut dot = T::zero();
    for (i, vi) in v.iter().enumerate() {
        dot += vi.conjugate() * column[from + i];
    }
    let s = dot.scale(beta);
    if s == T::zero() {
        return;
    }
    for (i, vi) in v.iter().enumerate() {
        column[from + i] -= *vi * s;
    }
}
