use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::butterfly::{ButterflyParts, HybridButterfly};
use crate::error::{Error, Result};
use crate::hier::{PartitionTree, PointSet};
use crate::linalg::{derive_seed, gaussian_matrix, pivoted_qr_truncate, Scalar};

/// Exact butterfly of constant rank with 8-point leaves.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticButterflySpec {
    #[serde(rename = "L")]
    pub levels: usize,
    /// Constant block rank, at most 8.
    pub rank: usize,
    pub seed: u64,
    /// Center level; `⌊L/2⌋` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<usize>,
}

impl SyntheticButterflySpec {
    pub const LEAF_SIZE: usize = 8;

    pub fn new(levels: usize, rank: usize, seed: u64) -> Self {
        Self {
            levels,
            rank,
            seed,
            center: None,
        }
    }

    /// Same butterfly shape with its center at level `center`.
    pub fn with_center(mut self, center: usize) -> Self {
        self.center = Some(center);
        self
    }

    pub fn center_level(&self) -> usize {
        self.center.unwrap_or(self.levels / 2)
    }

    /// `n = 2^{L+3}`.
    pub fn size(&self) -> usize {
        Self::LEAF_SIZE << self.levels
    }

    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 || self.rank > Self::LEAF_SIZE {
            return Err(Error::Precondition(format!(
                "synthetic rank {} must lie in 1..=8 so that 8 x r leaf blocks have orthonormal columns",
                self.rank
            )));
        }
        if self.levels > 24 {
            return Err(Error::Precondition(format!("L = {} is too large", self.levels)));
        }
        if self.center_level() > self.levels {
            return Err(Error::Precondition(format!(
                "center level {} above L = {}",
                self.center_level(),
                self.levels
            )));
        }
        Ok(())
    }
}

fn orthonormal<T: Scalar>(rows: usize, cols: usize, seed: u64) -> DMatrix<T> {
    let q = pivoted_qr_truncate(&gaussian_matrix::<T>(rows, cols, seed), 0.0).q;
    debug_assert_eq!(q.ncols(), cols);
    q
}

/// Builds the ground-truth butterfly on `n = 2^{L+3}` equispaced points.
///
/// Leaf and transfer blocks are random matrices with orthonormal columns
/// (Q factors of Gaussian matrices), core blocks are i.i.d. standard
/// normal; the center level defaults to `⌊L/2⌋`. Every block has rank exactly `r`.
pub fn synth_butterfly<T: Scalar>(spec: &SyntheticButterflySpec) -> Result<HybridButterfly<T>> {
    spec.validate()?;
    let big_l = spec.levels;
    let r = spec.rank;
    let n = spec.size();
    let center = spec.center_level();
    let nb = 1usize << big_l;
    let tree = PartitionTree::build(&PointSet::equispaced_line(n)?, big_l)?;
    let seed = |kind: u64, level: usize, idx: usize| derive_seed(spec.seed, &[kind, level as u64, idx as u64]);
    let leaf = SyntheticButterflySpec::LEAF_SIZE;

    let u_leaf = (0..nb).map(|t| orthonormal::<T>(leaf, r, seed(0, big_l, t))).collect();
    let v_leaf = (0..nb).map(|v| orthonormal::<T>(leaf, r, seed(1, 0, v))).collect();
    let u_transfer = (center..big_l)
        .map(|l| (0..nb).map(|i| orthonormal::<T>(2 * r, r, seed(2, l, i))).collect())
        .collect();
    let w_transfer = (1..=center)
        .map(|l| (0..nb).map(|i| orthonormal::<T>(2 * r, r, seed(3, l, i))).collect())
        .collect();
    let core = (0..nb).map(|i| gaussian_matrix::<T>(r, r, seed(4, center, i))).collect();
    HybridButterfly::new(ButterflyParts {
        row_tree: tree.clone(),
        col_tree: tree,
        center,
        u_leaf,
        u_transfer,
        core,
        w_transfer,
        v_leaf,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::orthonormality_defect;
    use num_complex::Complex64;

    #[test]
    fn small_instance_is_well_formed() {
        let bf = synth_butterfly::<f64>(&SyntheticButterflySpec::new(3, 2, 1)).unwrap();
        assert_eq!((bf.rows(), bf.cols()), (64, 64));
        let dense = bf.to_dense(usize::MAX).unwrap();
        assert!(dense.iter().all(|x| x.is_finite()));
        assert!(dense.norm() > 0.0);
        for t in 0..8 {
            assert!(orthonormality_defect(bf.u_leaf(t)) < 1e-12);
            assert!(orthonormality_defect(bf.v_leaf(t)) < 1e-12);
        }
        for l in bf.center()..3 {
            for i in 0..8 {
                assert!(orthonormality_defect(bf.r_block(l, i)) < 1e-12);
            }
        }
    }

    #[test]
    fn sizing_rule() {
        let spec = SyntheticButterflySpec::new(6, 8, 3);
        assert_eq!(spec.size(), 512);
        let bf = synth_butterfly::<Complex64>(&spec).unwrap();
        assert_eq!(bf.rows(), 512);
        assert_eq!(bf.max_rank(), 8);
    }

    #[test]
    fn center_override_gives_column_and_row_forms() {
        let base = SyntheticButterflySpec::new(4, 2, 7);
        let d = synth_butterfly::<f64>(&base).unwrap().to_dense(usize::MAX).unwrap();
        for c in [0, 4] {
            let bf = synth_butterfly::<f64>(&base.with_center(c)).unwrap();
            assert_eq!(bf.center(), c);
            assert_eq!(bf.max_rank(), 2);
            // A different factor chain, so a different matrix.
            assert!((bf.to_dense(usize::MAX).unwrap() - &d).norm() > 1e-3);
        }
        assert!(synth_butterfly::<f64>(&base.with_center(5)).is_err());
    }

    #[test]
    fn deterministic_per_seed() {
        let spec = SyntheticButterflySpec::new(4, 3, 11);
        let a = synth_butterfly::<f64>(&spec).unwrap().to_dense(usize::MAX).unwrap();
        let b = synth_butterfly::<f64>(&spec).unwrap().to_dense(usize::MAX).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rank_above_leaf_size_rejected() {
        assert!(matches!(
            synth_butterfly::<f64>(&SyntheticButterflySpec::new(3, 9, 0)),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn center_blocks_have_full_rank() {
        let bf = synth_butterfly::<f64>(&SyntheticButterflySpec::new(4, 4, 5)).unwrap();
        let dense = bf.to_dense(usize::MAX).unwrap();
        let lm = bf.center();
        for tau in 0..1 << lm {
            for nu in 0..1 << (4 - lm) {
                let rows = bf.row_tree().range(lm, tau);
                let cols = bf.col_tree().range(4 - lm, nu);
                let block = dense.view((rows.start, cols.start), (rows.len(), cols.len())).into_owned();
                let s = block.svd(false, false).singular_values;
                let mut s: Vec<f64> = s.iter().copied().collect();
                s.sort_by(|a, b| b.total_cmp(a));
                assert!(s[3] > 1e-8 * s[0]);
                assert!(s.get(4).is_none_or(|x| *x < 1e-12 * s[0]));
            }
        }
    }
}
