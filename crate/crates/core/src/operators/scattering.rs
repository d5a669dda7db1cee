use std::f64::consts::PI;

use nalgebra::{DMatrix, LU};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{hankel_h0_second_kind, LinearOperator};
use crate::error::{check_dims, Error, Result};
use crate::hier::PointSet;
use crate::linalg::{gemm, Op};

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Two parallel lines discretized into equal segments.
///
/// Line 1 carries `n` segments along the x axis starting at the origin,
/// line 2 carries `m` segments at height `separation`. Segment length
/// defaults to `0.05 λ` with `λ = 2π / k₀`; the separation defaults to the
/// length of line 1.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scattering2DConfig {
    pub k0: f64,
    pub n: usize,
    #[serde(default)]
    pub m: Option<usize>,
    /// Segment length in wavelengths.
    #[serde(default = "default_segment")]
    pub segment_wavelengths: f64,
    /// Line distance; `None` means the length of line 1.
    #[serde(default)]
    pub separation: Option<f64>,
    /// Largest `n` accepted for the dense factorization.
    #[serde(default = "default_cap")]
    pub max_n: usize,
}

fn default_segment() -> f64 {
    0.05
}

fn default_cap() -> usize {
    4096
}

impl Scattering2DConfig {
    pub fn new(k0: f64, n: usize) -> Self {
        Self {
            k0,
            n,
            m: None,
            segment_wavelengths: default_segment(),
            separation: None,
            max_n: default_cap(),
        }
    }

    pub fn wavelength(&self) -> f64 {
        2.0 * PI / self.k0
    }

    pub fn segment(&self) -> f64 {
        self.segment_wavelengths * self.wavelength()
    }

    pub fn rows(&self) -> usize {
        self.m.unwrap_or(self.n)
    }

    pub fn line_separation(&self) -> f64 {
        self.separation.unwrap_or(self.n as f64 * self.segment())
    }

    /// Segment midpoints of line 1 (sources, columns).
    pub fn source_points(&self) -> Result<PointSet> {
        let h = self.segment();
        PointSet::from_points(&(0..self.n).map(|i| [(i as f64 + 0.5) * h, 0.0]).collect::<Vec<_>>())
    }

    /// Segment midpoints of line 2 (targets, rows).
    pub fn target_points(&self) -> Result<PointSet> {
        let h = self.segment();
        let d = self.line_separation();
        PointSet::from_points(&(0..self.rows()).map(|i| [(i as f64 + 0.5) * h, d]).collect::<Vec<_>>())
    }
}

/// `A = Z²¹ (Z¹¹)⁻¹` with dense LU factorizations of `Z¹¹` and `(Z¹¹)ᵀ`.
pub struct ScatteringOperator {
    z11: DMatrix<Complex64>,
    z21: DMatrix<Complex64>,
    lu: LU<Complex64, nalgebra::Dyn, nalgebra::Dyn>,
    lu_t: LU<Complex64, nalgebra::Dyn, nalgebra::Dyn>,
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Assembles the segment interaction matrices and factors `Z¹¹`.
///
/// Off-diagonal entries use one-point midpoint quadrature,
/// `h · H₀⁽²⁾(k₀ |ρᵢ − ρⱼ|)`. The self term integrates the two leading
/// terms of the small-argument expansion of `H₀⁽²⁾` over the segment:
/// `h [1 − i (2/π)(ln(k₀h/4) + γ − 1)]`.
pub fn build_scattering_operator(cfg: &Scattering2DConfig) -> Result<ScatteringOperator> {
    if !(cfg.k0 > 0.0 && cfg.k0.is_finite()) {
        return Err(Error::Precondition(format!("wavenumber k0 = {} must be positive", cfg.k0)));
    }
    if cfg.n == 0 || cfg.rows() == 0 {
        return Err(Error::Precondition("both lines need at least one segment".into()));
    }
    if cfg.n > cfg.max_n {
        return Err(Error::Precondition(format!(
            "n = {} exceeds the dense factorization cap {}",
            cfg.n, cfg.max_n
        )));
    }
    if !(cfg.segment_wavelengths > 0.0) || !(cfg.line_separation() > 0.0) {
        return Err(Error::Precondition("segment length and separation must be positive".into()));
    }
    let h = cfg.segment();
    let k0 = cfg.k0;
    let src = cfg.source_points()?;
    let tgt = cfg.target_points()?;
    let self_term = Complex64::new(h, -h * 2.0 / PI * ((k0 * h / 4.0).ln() + EULER_GAMMA - 1.0));

    let mut z11 = DMatrix::<Complex64>::zeros(cfg.n, cfg.n);
    for j in 0..cfg.n {
        for i in 0..cfg.n {
            z11[(i, j)] = if i == j {
                self_term
            } else {
                hankel_h0_second_kind(k0 * distance(src.point(i), src.point(j)))? * h
            };
        }
    }
    let mut z21 = DMatrix::<Complex64>::zeros(cfg.rows(), cfg.n);
    for j in 0..cfg.n {
        for i in 0..cfg.rows() {
            z21[(i, j)] = hankel_h0_second_kind(k0 * distance(tgt.point(i), src.point(j)))? * h;
        }
    }

    let norm = z11.norm();
    let threshold = 1e-14 * norm;
    let lu = z11.clone().lu();
    let pivot = (0..cfg.n).map(|i| lu.u()[(i, i)].norm()).fold(f64::INFINITY, f64::min);
    if pivot < threshold {
        return Err(Error::Conditioning { pivot, threshold });
    }
    let lu_t = z11.transpose().lu();
    Ok(ScatteringOperator { z11, z21, lu, lu_t })
}

impl ScatteringOperator {
    pub fn z11(&self) -> &DMatrix<Complex64> {
        &self.z11
    }

    pub fn z21(&self) -> &DMatrix<Complex64> {
        &self.z21
    }
}

impl LinearOperator<Complex64> for ScatteringOperator {
    fn rows(&self) -> usize {
        self.z21.nrows()
    }

    fn cols(&self) -> usize {
        self.z21.ncols()
    }

    fn apply(&self, x: &DMatrix<Complex64>) -> Result<DMatrix<Complex64>> {
        check_dims("scattering apply", (self.cols(), x.ncols()), x.shape())?;
        let w = self
            .lu
            .solve(x)
            .ok_or_else(|| Error::Structure("singular Z11 factor".into()))?;
        Ok(gemm(&self.z21, Op::None, &w, Op::None))
    }

    fn apply_transpose(&self, y: &DMatrix<Complex64>) -> Result<DMatrix<Complex64>> {
        check_dims("scattering transpose apply", (self.rows(), y.ncols()), y.shape())?;
        let v = gemm(&self.z21, Op::Transpose, y, Op::None);
        self.lu_t
            .solve(&v)
            .ok_or_else(|| Error::Structure("singular Z11 factor".into()))
    }
}
