use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{derive_seed, gaussian_matrix, pivoted_qr_truncate, OrthonormalBasis, Scalar};
use crate::error::{Error, Result};

/// Inputs of the randomized range finder.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RangeFinderConfig {
    /// Rank guess `r` (initial guess for the adaptive variant).
    pub rank_guess: usize,
    /// Oversampling `p`.
    pub oversampling: usize,
    /// Relative truncation tolerance.
    pub tolerance: f64,
    pub seed: u64,
}

impl RangeFinderConfig {
    pub fn new(rank_guess: usize, oversampling: usize, tolerance: f64, seed: u64) -> Self {
        Self {
            rank_guess,
            oversampling,
            tolerance,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rank_guess == 0 {
            return Err(Error::Precondition("rank guess must be at least 1".into()));
        }
        if !(self.tolerance > 0.0 && self.tolerance < 1.0) {
            return Err(Error::Precondition(format!(
                "tolerance {} outside (0, 1)",
                self.tolerance
            )));
        }
        Ok(())
    }
}

/// Result of [`adaptive_range`].
#[derive(Clone, Debug)]
pub struct AdaptiveRange<T: Scalar> {
    pub basis: OrthonormalBasis<T>,
    /// Number of probe rounds executed.
    pub rounds: usize,
    /// Rank guess used in the last round.
    pub final_r: usize,
    /// Set when the rank guess hit the cap before the stop rule fired.
    pub capped: bool,
}

fn sample_range<T, F>(
    apply: &mut F,
    m: usize,
    n: usize,
    cols: usize,
    tol: f64,
    seed: u64,
) -> Result<OrthonormalBasis<T>>
where
    T: Scalar,
    F: FnMut(&DMatrix<T>) -> Result<DMatrix<T>>,
{
    let omega = gaussian_matrix::<T>(n, cols, seed);
    let w = apply(&omega)?;
    if w.shape() != (m, cols) {
        return Err(Error::Structure(format!(
            "range callback returned {}x{}, expected {m}x{cols}",
            w.nrows(),
            w.ncols()
        )));
    }
    Ok(pivoted_qr_truncate(&w, tol))
}

/// Basis for the range of an m×n operator from `r + p` Gaussian samples.
///
/// `apply` receives an n×k block and must return the m×k product.
pub fn randomized_range<T, F>(
    mut apply: F,
    m: usize,
    n: usize,
    cfg: &RangeFinderConfig,
) -> Result<OrthonormalBasis<T>>
where
    T: Scalar,
    F: FnMut(&DMatrix<T>) -> Result<DMatrix<T>>,
{
    cfg.validate()?;
    sample_range(
        &mut apply,
        m,
        n,
        cfg.rank_guess + cfg.oversampling,
        cfg.tolerance,
        cfg.seed,
    )
}

/// Range finder with rank doubling.
///
/// Starts at `cfg.rank_guess` and doubles until the guess exceeds the
/// revealed rank. Also stops once the revealed rank equals `min(m, n)`,
/// since no larger probe can reveal more. If the guess reaches `cap`
/// (default `min(m, n)`) first, the last basis is returned with `capped` set.
/// Each round draws a fresh probe from a seed derived from the round index.
pub fn adaptive_range<T, F>(
    mut apply: F,
    m: usize,
    n: usize,
    cfg: &RangeFinderConfig,
    cap: Option<usize>,
) -> Result<AdaptiveRange<T>>
where
    T: Scalar,
    F: FnMut(&DMatrix<T>) -> Result<DMatrix<T>>,
{
    cfg.validate()?;
    let full = m.min(n);
    let cap = cap.unwrap_or(full).max(1);
    let mut r = cfg.rank_guess.min(cap);
    let mut rounds = 0;
    loop {
        rounds += 1;
        let seed = derive_seed(cfg.seed, &[rounds as u64]);
        let basis = sample_range(
            &mut apply,
            m,
            n,
            r + cfg.oversampling,
            cfg.tolerance,
            seed,
        )?;
        let revealed = basis.rank();
        if r > revealed || revealed >= full {
            return Ok(AdaptiveRange {
                basis,
                rounds,
                final_r: r,
                capped: false,
            });
        }
        if r >= cap {
            return Ok(AdaptiveRange {
                basis,
                rounds,
                final_r: r,
                capped: true,
            });
        }
        r = (2 * r).min(cap);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{frobenius, gemm, projection_residual, Op};
    use num_complex::Complex64;

    fn orthonormal<T: Scalar>(rows: usize, cols: usize, seed: u64) -> DMatrix<T> {
        pivoted_qr_truncate(&gaussian_matrix::<T>(rows, cols, seed), 0.0).q
    }

    fn low_rank<T: Scalar>(m: usize, n: usize, r: usize, seed: u64) -> DMatrix<T> {
        let u = orthonormal::<T>(m, r, seed);
        let b = gaussian_matrix::<T>(r, n, seed + 100);
        gemm(&u, Op::None, &b, Op::None)
    }

    fn callback<T: Scalar>(a: &DMatrix<T>) -> impl FnMut(&DMatrix<T>) -> Result<DMatrix<T>> + '_ {
        move |x| Ok(gemm(a, Op::None, x, Op::None))
    }

    #[test]
    fn zero_operator_gives_empty_basis() {
        let a = DMatrix::<f64>::zeros(9, 7);
        let cfg = RangeFinderConfig::new(3, 2, 1e-8, 1);
        let b = randomized_range(callback(&a), 9, 7, &cfg).unwrap();
        assert_eq!(b.rank(), 0);
        assert!(b.zero_input);
    }

    #[test]
    fn exact_rank_is_captured() {
        let a = low_rank::<Complex64>(40, 30, 6, 3);
        let cfg = RangeFinderConfig::new(6, 2, 1e-10, 9);
        let b = randomized_range(callback(&a), 40, 30, &cfg).unwrap();
        assert!(b.rank() <= 8);
        assert!(projection_residual(&b.q, &a) <= 1e-10 * frobenius(&a));
        assert!(b.orthonormality_defect() <= 1e-12 * (b.rank() as f64).sqrt());
    }

    #[test]
    fn graded_spectrum_against_svd_oracle() {
        let n = 20;
        let u = orthonormal::<f64>(n, 10, 31);
        let v = orthonormal::<f64>(n, 10, 32);
        let s = DMatrix::<f64>::from_fn(10, 10, |i, j| {
            if i == j {
                10f64.powi(-(i as i32))
            } else {
                0.0
            }
        });
        let a = &u * s * v.transpose();
        let cfg = RangeFinderConfig::new(5, 2, 1e-4, 4);
        let b = randomized_range(callback(&a), n, n, &cfg).unwrap();
        assert!((4..=7).contains(&b.rank()), "rank {}", b.rank());
        let sv = a.clone().svd(false, false).singular_values;
        let optimal: f64 = sv.iter().skip(5).map(|x| x * x).sum::<f64>().sqrt();
        let err = projection_residual(&b.q, &a);
        assert!(err <= 10.0 * optimal, "{err} vs {optimal}");
    }

    #[test]
    fn callback_shape_is_checked() {
        let cfg = RangeFinderConfig::new(2, 0, 1e-6, 1);
        let bad = |x: &DMatrix<f64>| Ok(DMatrix::zeros(4, x.ncols() + 1));
        assert!(matches!(
            randomized_range(bad, 4, 3, &cfg),
            Err(Error::Structure(_))
        ));
    }

    #[test]
    fn doubling_until_guess_exceeds_rank() {
        let a = low_rank::<f64>(64, 48, 8, 5);
        let cfg = RangeFinderConfig::new(4, 2, 1e-10, 2);
        let out = adaptive_range(callback(&a), 64, 48, &cfg, None).unwrap();
        assert_eq!(out.rounds, 3);
        assert_eq!(out.final_r, 16);
        assert_eq!(out.basis.rank(), 8);
        assert!(!out.capped);

        let cfg = RangeFinderConfig::new(32, 2, 1e-10, 2);
        let out = adaptive_range(callback(&a), 64, 48, &cfg, None).unwrap();
        assert_eq!(out.rounds, 1);
        assert_eq!(out.basis.rank(), 8);
    }

    #[test]
    fn adaptive_on_zero_stops_immediately() {
        let a = DMatrix::<Complex64>::zeros(10, 10);
        let cfg = RangeFinderConfig::new(2, 2, 1e-8, 0);
        let out = adaptive_range(callback(&a), 10, 10, &cfg, None).unwrap();
        assert_eq!((out.rounds, out.basis.rank()), (1, 0));
    }

    #[test]
    fn adaptive_cap_sets_flag() {
        let a = gaussian_matrix::<f64>(30, 30, 8);
        let cfg = RangeFinderConfig::new(2, 0, 1e-12, 3);
        let out = adaptive_range(callback(&a), 30, 30, &cfg, Some(8)).unwrap();
        assert!(out.capped);
        assert_eq!(out.final_r, 8);
        assert_eq!(out.rounds, 3);
    }

    #[test]
    fn full_rank_saturation_stops() {
        let a = gaussian_matrix::<f64>(8, 8, 12);
        let cfg = RangeFinderConfig::new(4, 2, 1e-12, 3);
        let out = adaptive_range(callback(&a), 8, 8, &cfg, None).unwrap();
        assert_eq!(out.basis.rank(), 8);
        assert!(!out.capped);
        assert_eq!(out.rounds, 2);
    }

    #[test]
    fn invalid_config_rejected() {
        let a = DMatrix::<f64>::zeros(3, 3);
        for cfg in [
            RangeFinderConfig::new(0, 1, 1e-3, 0),
            RangeFinderConfig::new(1, 1, 0.0, 0),
            RangeFinderConfig::new(1, 1, 1.5, 0),
        ] {
            assert!(randomized_range(callback(&a), 3, 3, &cfg).is_err());
        }
    }
}
