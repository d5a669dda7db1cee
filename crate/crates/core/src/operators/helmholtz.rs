use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::DenseOperator;
use crate::error::{Error, Result};
use crate::hier::PointSet;
use crate::linalg::derive_seed;

/// Kernel `e^{i 2π κ d} / d` between two unit hemispheres.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Helmholtz3DConfig {
    /// Points per hemisphere.
    pub n: usize,
    /// Wavenumber; `None` picks `κ = sqrt(π n / 50)`, i.e. about ten
    /// points per wavelength.
    #[serde(default)]
    pub kappa: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_cap")]
    pub max_n: usize,
}

fn default_cap() -> usize {
    4096
}

impl Helmholtz3DConfig {
    pub fn new(n: usize, seed: u64) -> Self {
        Self {
            n,
            kappa: None,
            seed,
            max_n: default_cap(),
        }
    }

    pub fn wavenumber(&self) -> f64 {
        self.kappa.unwrap_or_else(|| (PI * self.n as f64 / 50.0).sqrt())
    }
}

/// Fibonacci lattice on a unit hemisphere.
///
/// Hemisphere 1 is the half `x <= 0` of the sphere centered at the origin,
/// hemisphere 2 the half `x >= 2` of the sphere centered at `(2, 0, 0)`; the
/// flat sides face each other across a gap of 2. Points are spaced evenly
/// in height along the axis (equal-area bands) and rotated by the golden
/// angle; the seed fixes a random rotation about the axis.
pub fn semisphere_cloud(n: usize, which: u8, seed: u64) -> Result<PointSet> {
    if n < 4 {
        return Err(Error::Precondition(format!("hemisphere cloud needs n >= 4, got {n}")));
    }
    let (center, axis) = match which {
        1 => (0.0, -1.0),
        2 => (2.0, 1.0),
        _ => return Err(Error::Precondition(format!("hemisphere index {which} not in {{1, 2}}"))),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[which as u64]));
    let phase: f64 = rng.random_range(0.0..2.0 * PI);
    let golden = PI * (3.0 - 5f64.sqrt());
    let mut coords = Vec::with_capacity(3 * n);
    for i in 0..n {
        let h = (i as f64 + 0.5) / n as f64;
        let rho = (1.0 - h * h).sqrt();
        let phi = phase + golden * i as f64;
        coords.extend_from_slice(&[center + axis * h, rho * phi.cos(), rho * phi.sin()]);
    }
    PointSet::new(3, coords)
}

/// Dense kernel matrix with rows on hemisphere 1 and columns on hemisphere 2.
/// Returns the operator together with the (row, column) point sets.
pub fn build_helmholtz3d_operator(
    cfg: &Helmholtz3DConfig,
) -> Result<(DenseOperator<Complex64>, PointSet, PointSet)> {
    if cfg.n > cfg.max_n {
        return Err(Error::Precondition(format!(
            "n = {} exceeds the dense assembly cap {}",
            cfg.n, cfg.max_n
        )));
    }
    let kappa = cfg.wavenumber();
    if !(kappa >= 0.0 && kappa.is_finite()) {
        return Err(Error::Precondition(format!("invalid wavenumber {kappa}")));
    }
    let rows = semisphere_cloud(cfg.n, 1, cfg.seed)?;
    let cols = semisphere_cloud(cfg.n, 2, cfg.seed)?;
    let mut a = DMatrix::<Complex64>::zeros(cfg.n, cfg.n);
    for j in 0..cfg.n {
        let q = cols.point(j);
        for i in 0..cfg.n {
            let p = rows.point(i);
            let d = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt();
            if d == 0.0 {
                return Err(Error::Domain(format!("coincident points {i} and {j}")));
            }
            a[(i, j)] = Complex64::from_polar(1.0 / d, 2.0 * PI * kappa * d);
        }
    }
    Ok((DenseOperator::new(a), rows, cols))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dist(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
    }

    #[test]
    fn clouds_lie_on_their_spheres() {
        for which in [1u8, 2] {
            let p = semisphere_cloud(300, which, 4).unwrap();
            let c = if which == 1 { 0.0 } else { 2.0 };
            for i in 0..p.len() {
                let x = p.point(i);
                assert!((dist(x, &[c, 0.0, 0.0]) - 1.0).abs() < 1e-12);
                assert!(if which == 1 { x[0] <= 0.0 } else { x[0] >= 2.0 });
            }
        }
    }

    #[test]
    fn clouds_are_disjoint() {
        let a = semisphere_cloud(200, 1, 0).unwrap();
        let b = semisphere_cloud(200, 2, 0).unwrap();
        let mut min = f64::INFINITY;
        for i in 0..200 {
            for j in 0..200 {
                min = min.min(dist(a.point(i), b.point(j)));
            }
        }
        assert!(min > 0.0);
    }

    #[test]
    fn spacing_matches_area_per_point() {
        let n = 1000;
        let p = semisphere_cloud(n, 1, 9).unwrap();
        let target = (2.0 * PI / n as f64).sqrt();
        let mut nn: Vec<f64> = (0..n)
            .map(|i| {
                (0..n)
                    .filter(|&j| j != i)
                    .map(|j| dist(p.point(i), p.point(j)))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        nn.sort_by(f64::total_cmp);
        let median = nn[n / 2];
        assert!(median > target / 2.0 && median < 2.0 * target, "{median} vs {target}");
    }

    #[test]
    fn kernel_modulus_and_static_limit() {
        let mut cfg = Helmholtz3DConfig::new(64, 1);
        let (op, rows, cols) = build_helmholtz3d_operator(&cfg).unwrap();
        for (i, j) in [(0, 0), (5, 40), (63, 12)] {
            let d = dist(rows.point(i), cols.point(j));
            assert!((op.matrix()[(i, j)].norm() - 1.0 / d).abs() < 1e-14);
        }
        cfg.kappa = Some(0.0);
        let (op, rows, cols) = build_helmholtz3d_operator(&cfg).unwrap();
        for (i, j) in [(1, 2), (30, 30)] {
            let z = op.matrix()[(i, j)];
            assert!(z.im == 0.0 && (z.re - 1.0 / dist(rows.point(i), cols.point(j))).abs() < 1e-14);
        }
    }

    #[test]
    fn auto_wavenumber() {
        let cfg = Helmholtz3DConfig::new(2048, 0);
        let k = cfg.wavenumber();
        assert!((50.0 * k * k / PI - 2048.0).abs() < 1e-9);
    }
}
