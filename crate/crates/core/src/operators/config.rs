use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{
    build_helmholtz3d_operator, build_scattering_operator, synth_butterfly, BlackBox,
    Helmholtz3DConfig, Scattering2DConfig, SyntheticButterflySpec,
};
use crate::butterfly::{inspect_header, read_butterfly, HybridButterfly};
use crate::error::{Error, Result};
use crate::hier::{default_levels, PartitionTree, PointSet};
use crate::linalg::{Scalar, ScalarKind};

/// Operator source, as read from a JSON or TOML config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum OperatorConfig {
    /// Exact constant-rank butterfly on `2^{L+3}` points.
    Synthetic {
        #[serde(rename = "L")]
        levels: usize,
        rank: usize,
        #[serde(default)]
        seed: u64,
        #[serde(default = "real")]
        scalar: ScalarKind,
    },
    Helmholtz3d(Helmholtz3DConfig),
    Scattering2d(Scattering2DConfig),
    /// A stored butterfly container used as the black box.
    Butterfly { path: PathBuf },
}

fn real() -> ScalarKind {
    ScalarKind::Real
}

/// Where the partition trees come from.
#[derive(Clone, Debug)]
pub enum Geometry {
    /// Point clouds; trees are built on demand.
    Points { rows: PointSet, cols: PointSet },
    /// Fixed trees (synthetic or stored operators).
    Trees {
        rows: PartitionTree,
        cols: PartitionTree,
    },
}

/// A black box with its geometry and, when known, the exact factorization.
#[derive(Clone, Debug)]
pub struct Problem<T: Scalar> {
    pub op: BlackBox<T>,
    pub geometry: Geometry,
    pub truth: Option<HybridButterfly<T>>,
}

impl<T: Scalar> Problem<T> {
    /// Row and column trees with a shared depth.
    ///
    /// For point geometries the depth is `levels`, or by default the
    /// largest depth keeping at least `leaf_size` points in every leaf of
    /// the smaller tree. Fixed trees reject a conflicting explicit depth.
    pub fn trees(&self, levels: Option<usize>, leaf_size: usize) -> Result<(PartitionTree, PartitionTree)> {
        match &self.geometry {
            Geometry::Points { rows, cols } => {
                let l = levels.unwrap_or_else(|| default_levels(rows.len().min(cols.len()), leaf_size));
                Ok((PartitionTree::build(rows, l)?, PartitionTree::build(cols, l)?))
            }
            Geometry::Trees { rows, cols } => {
                if let Some(l) = levels {
                    if l != rows.levels() {
                        return Err(Error::Precondition(format!(
                            "operator fixes L = {}, requested L = {l}",
                            rows.levels()
                        )));
                    }
                }
                Ok((rows.clone(), cols.clone()))
            }
        }
    }
}

/// A problem over either scalar field.
#[derive(Clone, Debug)]
pub enum AnyProblem {
    Real(Problem<f64>),
    Complex(Problem<Complex64>),
}

fn from_butterfly<T: Scalar>(bf: HybridButterfly<T>) -> Problem<T> {
    Problem {
        geometry: Geometry::Trees {
            rows: bf.row_tree().clone(),
            cols: bf.col_tree().clone(),
        },
        op: BlackBox::new(bf.clone()),
        truth: Some(bf),
    }
}

/// Instantiates the operator described by `cfg`.
pub fn build_problem(cfg: &OperatorConfig) -> Result<AnyProblem> {
    Ok(match cfg {
        OperatorConfig::Synthetic {
            levels,
            rank,
            seed,
            scalar,
        } => {
            let spec = SyntheticButterflySpec::new(*levels, *rank, *seed);
            match scalar {
                ScalarKind::Real => AnyProblem::Real(from_butterfly(synth_butterfly::<f64>(&spec)?)),
                ScalarKind::Complex => {
                    AnyProblem::Complex(from_butterfly(synth_butterfly::<Complex64>(&spec)?))
                }
            }
        }
        OperatorConfig::Helmholtz3d(h) => {
            let (op, rows, cols) = build_helmholtz3d_operator(h)?;
            AnyProblem::Complex(Problem {
                op: BlackBox::new(op),
                geometry: Geometry::Points { rows, cols },
                truth: None,
            })
        }
        OperatorConfig::Scattering2d(s) => {
            let op = build_scattering_operator(s)?;
            AnyProblem::Complex(Problem {
                op: BlackBox::new(op),
                geometry: Geometry::Points {
                    rows: s.target_points()?,
                    cols: s.source_points()?,
                },
                truth: None,
            })
        }
        OperatorConfig::Butterfly { path } => {
            let header = inspect_header(BufReader::new(File::open(path)?))?;
            let reader = BufReader::new(File::open(path)?);
            match header.scalar {
                ScalarKind::Real => AnyProblem::Real(from_butterfly(read_butterfly::<f64, _>(reader)?)),
                ScalarKind::Complex => {
                    AnyProblem::Complex(from_butterfly(read_butterfly::<Complex64, _>(reader)?))
                }
            }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_json_configs() {
        let cfg: OperatorConfig =
            serde_json::from_str(r#"{"type": "synthetic", "L": 4, "rank": 3, "seed": 2}"#).unwrap();
        assert_eq!(
            cfg,
            OperatorConfig::Synthetic {
                levels: 4,
                rank: 3,
                seed: 2,
                scalar: ScalarKind::Real
            }
        );
        let cfg: OperatorConfig =
            serde_json::from_str(r#"{"type": "helmholtz3d", "n": 128, "kappa": 2.5}"#).unwrap();
        match cfg {
            OperatorConfig::Helmholtz3d(h) => {
                assert_eq!((h.n, h.kappa, h.max_n), (128, Some(2.5), 4096));
            }
            other => panic!("unexpected {other:?}"),
        }
        let cfg: OperatorConfig =
            serde_json::from_str(r#"{"type": "scattering2d", "k0": 6.0, "n": 64}"#).unwrap();
        assert!(matches!(cfg, OperatorConfig::Scattering2d(s) if s.segment_wavelengths == 0.05));
    }

    #[test]
    fn synthetic_problem_fixes_trees() {
        let p = build_problem(&OperatorConfig::Synthetic {
            levels: 3,
            rank: 2,
            seed: 0,
            scalar: ScalarKind::Complex,
        })
        .unwrap();
        let AnyProblem::Complex(p) = p else { panic!("expected complex") };
        assert_eq!(p.trees(None, 8).unwrap().0.levels(), 3);
        assert!(p.trees(Some(4), 8).is_err());
        assert!(p.truth.is_some());
    }

    #[test]
    fn point_problem_picks_depth_from_leaf_size() {
        let p = build_problem(&OperatorConfig::Helmholtz3d(Helmholtz3DConfig::new(256, 0))).unwrap();
        let AnyProblem::Complex(p) = p else { panic!("expected complex") };
        let (r, c) = p.trees(None, 32).unwrap();
        assert_eq!((r.levels(), c.levels()), (3, 3));
        assert_eq!(p.trees(Some(5), 32).unwrap().0.levels(), 5);
    }
}
