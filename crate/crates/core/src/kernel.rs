//! Interaction kernels on the unit torus.
//!
//! The matrix kernel is a real trigonometric polynomial
//!
//! ```text
//! a(z) = lambda0 Id + sum_k A_k cos(2 pi k.z)
//! ```
//!
//! with symmetric coefficient matrices `A_k`. Its divergence and the
//! divergence of that are differentiated term by term:
//!
//! ```text
//! b(z)     = div a(z) = sum_k (-2 pi A_k k) sin(2 pi k.z)
//! div b(z)            = sum_k (-4 pi^2 k.A_k k) cos(2 pi k.z)
//! ```
//!
//! Ellipticity is certified at construction: every eigenvalue of `a(z)`
//! lies in `[lambda0 - sum ||A_k||_2, lambda0 + sum ||A_k||_2]`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, Vector, MAX_DIM, ZERO_MATRIX};

/// Absolute tolerance for certified-vs-observed eigenvalue bounds.
pub const BOUND_TOL: f64 = 1e-10;

const SYMMETRY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelMode {
    /// Integer wave vector, nonzero, one entry per axis.
    pub k: Vec<i64>,
    /// Row-major symmetric coefficient matrix.
    #[serde(rename = "A")]
    pub coeff: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    pub dimension: usize,
    pub lambda0: f64,
    #[serde(default)]
    pub modes: Vec<KernelMode>,
}

impl KernelSpec {
    /// `a(z) = 1 + 0.5 cos(2 pi z)` in one dimension.
    pub fn canonical_1d() -> Self {
        Self {
            dimension: 1,
            lambda0: 1.0,
            modes: vec![KernelMode {
                k: vec![1],
                coeff: vec![0.5],
            }],
        }
    }

    pub fn constant(dimension: usize, lambda: f64) -> Self {
        Self {
            dimension,
            lambda0: lambda,
            modes: Vec::new(),
        }
    }
}

/// One Fourier mode with its precomputed derivative coefficients.
#[derive(Debug, Clone, Copy)]
pub struct FieldMode {
    pub wave: [i64; MAX_DIM],
    /// Coefficient of `cos(2 pi k.z)` in `a`.
    pub a: Matrix,
    /// Coefficient of `sin(2 pi k.z)` in `b`.
    pub b: Vector,
    /// Coefficient of `cos(2 pi k.z)` in `div b`.
    pub div_b: f64,
}

impl FieldMode {
    #[inline]
    pub fn phase(&self, z: &[f64]) -> f64 {
        let mut s = 0.0;
        for (k, x) in self.wave.iter().zip(z) {
            s += *k as f64 * x;
        }
        2.0 * PI * s
    }
}

/// A validated kernel with certified ellipticity bounds.
#[derive(Debug, Clone)]
pub struct KernelField {
    spec: KernelSpec,
    dim: usize,
    lambda0: f64,
    modes: Vec<FieldMode>,
    lower: f64,
    upper: f64,
    max_wave: i64,
}

pub fn build_kernel(spec: &KernelSpec) -> Result<KernelField> {
    KernelField::new(spec)
}

/// Reduce each coordinate to `[0, 1)`.
#[inline]
pub fn wrap(x: f64) -> f64 {
    let y = x - x.floor();
    // x slightly below an integer can round up to exactly 1.0
    if y >= 1.0 {
        0.0
    } else {
        y
    }
}

/// Reduce a displacement to `[-0.5, 0.5)`.
#[inline]
pub fn wrap_centered(x: f64) -> f64 {
    let y = x - (x + 0.5).floor();
    if y >= 0.5 {
        y - 1.0
    } else {
        y
    }
}

impl KernelField {
    pub fn new(spec: &KernelSpec) -> Result<Self> {
        let d = spec.dimension;
        if !(1..=MAX_DIM).contains(&d) {
            return Err(Error::InvalidKernel(format!("dimension must be 1, 2 or 3, got {d}")));
        }
        if !(spec.lambda0 > 0.0) || !spec.lambda0.is_finite() {
            return Err(Error::InvalidKernel(format!(
                "lambda0 must be positive and finite, got {}",
                spec.lambda0
            )));
        }
        let mut modes = Vec::with_capacity(spec.modes.len());
        let mut norm_sum = 0.0;
        let mut max_wave = 0;
        for (idx, mode) in spec.modes.iter().enumerate() {
            if mode.k.len() != d {
                return Err(Error::InvalidKernel(format!(
                    "mode {idx}: wave vector has {} entries, expected {d}",
                    mode.k.len()
                )));
            }
            if mode.k.iter().all(|&k| k == 0) {
                return Err(Error::InvalidKernel(format!(
                    "mode {idx}: zero wave vector (use lambda0 for the constant part)"
                )));
            }
            if mode.coeff.len() != d * d {
                return Err(Error::InvalidKernel(format!(
                    "mode {idx}: coefficient has {} entries, expected {}",
                    mode.coeff.len(),
                    d * d
                )));
            }
            if mode.coeff.iter().any(|c| !c.is_finite()) {
                return Err(Error::InvalidKernel(format!("mode {idx}: non-finite coefficient")));
            }
            let mut a = ZERO_MATRIX;
            for i in 0..d {
                for j in 0..d {
                    a[i][j] = mode.coeff[i * d + j];
                }
            }
            let scale = a.iter().flatten().fold(1.0f64, |m, x| m.max(x.abs()));
            if linalg::asymmetry(&a, d) > SYMMETRY_TOL * scale {
                return Err(Error::InvalidKernel(format!(
                    "mode {idx}: coefficient matrix is not symmetric"
                )));
            }
            for i in 0..d {
                for j in 0..i {
                    let m = 0.5 * (a[i][j] + a[j][i]);
                    a[i][j] = m;
                    a[j][i] = m;
                }
            }
            let mut wave = [0i64; MAX_DIM];
            wave[..d].copy_from_slice(&mode.k);
            let kf = wave.map(|k| k as f64);
            let ak = linalg::mat_vec(&a, &kf, d);
            let mut b = [0.0; MAX_DIM];
            for i in 0..d {
                b[i] = -2.0 * PI * ak[i];
            }
            let k_a_k: f64 = (0..d).map(|i| kf[i] * ak[i]).sum();
            norm_sum += linalg::symmetric_norm(&a, d);
            max_wave = max_wave.max(wave.iter().map(|k| k.abs()).max().unwrap_or(0));
            modes.push(FieldMode {
                wave,
                a,
                b,
                div_b: -4.0 * PI * PI * k_a_k,
            });
        }
        let margin = spec.lambda0 - norm_sum;
        if margin <= 0.0 {
            return Err(Error::EllipticityCertificate {
                lambda0: spec.lambda0,
                mode_norm_sum: norm_sum,
                margin,
            });
        }
        Ok(Self {
            spec: spec.clone(),
            dim: d,
            lambda0: spec.lambda0,
            modes,
            lower: margin,
            upper: spec.lambda0 + norm_sum,
            max_wave,
        })
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lambda0(&self) -> f64 {
        self.lambda0
    }

    pub fn modes(&self) -> &[FieldMode] {
        &self.modes
    }

    /// Certified lower ellipticity bound.
    pub fn lower_bound(&self) -> f64 {
        self.lower
    }

    /// Certified upper ellipticity bound.
    pub fn upper_bound(&self) -> f64 {
        self.upper
    }

    /// Largest absolute wave number over all modes and axes.
    pub fn max_wave(&self) -> i64 {
        self.max_wave
    }

    pub fn is_constant(&self) -> bool {
        self.modes.is_empty()
    }

    /// Upper bound on `sup |b|` (Euclidean norm).
    pub fn b_sup_bound(&self) -> f64 {
        self.modes
            .iter()
            .map(|m| m.b.iter().map(|x| x * x).sum::<f64>().sqrt())
            .sum()
    }

    pub fn eval_a(&self, z: &[f64]) -> Matrix {
        let mut a = linalg::identity(self.dim);
        for row in a.iter_mut() {
            for x in row.iter_mut() {
                *x *= self.lambda0;
            }
        }
        for mode in &self.modes {
            let c = mode.phase(z).cos();
            for i in 0..self.dim {
                for j in 0..self.dim {
                    a[i][j] += mode.a[i][j] * c;
                }
            }
        }
        a
    }

    pub fn eval_b(&self, z: &[f64]) -> Vector {
        let mut b = [0.0; MAX_DIM];
        for mode in &self.modes {
            let s = mode.phase(z).sin();
            for i in 0..self.dim {
                b[i] += mode.b[i] * s;
            }
        }
        b
    }

    pub fn eval_div_b(&self, z: &[f64]) -> f64 {
        self.modes.iter().map(|m| m.div_b * m.phase(z).cos()).sum()
    }

    /// `a(z)` and `b(z)` sharing one `sin_cos` per mode.
    #[inline]
    pub fn eval_a_b(&self, z: &[f64]) -> (Matrix, Vector) {
        let d = self.dim;
        let mut a = ZERO_MATRIX;
        for (i, row) in a.iter_mut().enumerate().take(d) {
            row[i] = self.lambda0;
        }
        let mut b = [0.0; MAX_DIM];
        for mode in &self.modes {
            let (s, c) = mode.phase(z).sin_cos();
            for i in 0..d {
                for j in 0..d {
                    a[i][j] += mode.a[i][j] * c;
                }
                b[i] += mode.b[i] * s;
            }
        }
        (a, b)
    }

    /// Scan eigenvalues of `a(z)` on a uniform `grid_n^d` grid and check
    /// them against the certified bounds.
    pub fn certify_bounds(&self, grid_n: usize) -> Result<(f64, f64)> {
        let needed = 2 * self.max_wave as usize + 1;
        if grid_n < needed {
            return Err(Error::GridTooCoarse(format!(
                "certify_bounds needs grid_n >= {needed}, got {grid_n}"
            )));
        }
        let d = self.dim;
        let total = grid_n.pow(d as u32);
        let h = 1.0 / grid_n as f64;
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let mut z = [0.0; MAX_DIM];
        for idx in 0..total {
            let mut rem = idx;
            for axis in (0..d).rev() {
                z[axis] = (rem % grid_n) as f64 * h;
                rem /= grid_n;
            }
            let (l, u) = linalg::eigen_range(&self.eval_a(&z[..d]), d);
            lo = lo.min(l);
            hi = hi.max(u);
        }
        if lo < self.lower - BOUND_TOL || hi > self.upper + BOUND_TOL {
            return Err(Error::BoundViolation {
                observed_min: lo,
                observed_max: hi,
                lower: self.lower,
                upper: self.upper,
            });
        }
        Ok((lo, hi))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn canonical_closed_forms() {
        let field = build_kernel(&KernelSpec::canonical_1d()).unwrap();
        assert_eq!(field.lower_bound(), 0.5);
        assert_eq!(field.upper_bound(), 1.5);
        for &z in &[0.0, 0.1, 0.25, 0.37, 0.5, 0.93] {
            let a = field.eval_a(&[z])[0][0];
            let b = field.eval_b(&[z])[0];
            let db = field.eval_div_b(&[z]);
            assert!(close(a, 1.0 + 0.5 * (2.0 * PI * z).cos(), 1e-15));
            assert!(close(b, -PI * (2.0 * PI * z).sin(), 1e-14));
            assert!(close(db, -2.0 * PI * PI * (2.0 * PI * z).cos(), 1e-13));
        }
        assert!(close(field.eval_a(&[0.25])[0][0], 1.0, 1e-15));
    }

    #[test]
    fn constant_kernel() {
        let field = build_kernel(&KernelSpec::constant(2, 1.7)).unwrap();
        let a = field.eval_a(&[0.3, 0.8]);
        assert_eq!(a[0][0], 1.7);
        assert_eq!(a[1][1], 1.7);
        assert_eq!(a[0][1], 0.0);
        assert_eq!(field.eval_b(&[0.3, 0.8]), [0.0; 3]);
        assert_eq!(field.eval_div_b(&[0.3, 0.8]), 0.0);
        assert_eq!(field.lower_bound(), 1.7);
        assert_eq!(field.upper_bound(), 1.7);
        assert_eq!(field.certify_bounds(4).unwrap(), (1.7, 1.7));
    }

    #[test]
    fn rejects_failed_certificate() {
        let spec = KernelSpec {
            dimension: 1,
            lambda0: 1.0,
            modes: vec![KernelMode {
                k: vec![1],
                coeff: vec![1.5],
            }],
        };
        assert!(matches!(build_kernel(&spec), Err(Error::EllipticityCertificate { .. })));
    }

    #[test]
    fn rejects_malformed_modes() {
        let mut spec = KernelSpec {
            dimension: 2,
            lambda0: 1.0,
            modes: vec![KernelMode {
                k: vec![1, 0],
                coeff: vec![0.1, 0.2, 0.0, 0.1],
            }],
        };
        assert!(build_kernel(&spec).is_err());
        spec.modes[0].coeff = vec![0.1, 0.0, 0.0, 0.1];
        spec.modes[0].k = vec![0, 0];
        assert!(build_kernel(&spec).is_err());
        spec.modes[0].k = vec![1];
        assert!(build_kernel(&spec).is_err());
        assert!(build_kernel(&KernelSpec::constant(4, 1.0)).is_err());
        assert!(build_kernel(&KernelSpec::constant(1, 0.0)).is_err());
    }

    #[test]
    fn periodic_and_b_vanishes_at_origin() {
        let field = build_kernel(&KernelSpec::canonical_1d()).unwrap();
        for &z in &[0.0, 0.17, 0.66] {
            let a0 = field.eval_a(&[z])[0][0];
            let a1 = field.eval_a(&[z + 1.0])[0][0];
            assert!(close(a0, a1, 1e-13));
            assert!(close(field.eval_b(&[z])[0], field.eval_b(&[z - 3.0])[0], 1e-12));
        }
        assert_eq!(field.eval_b(&[0.0])[0], 0.0);
    }

    #[test]
    fn certify_canonical_scan() {
        let field = build_kernel(&KernelSpec::canonical_1d()).unwrap();
        let (lo, hi) = field.certify_bounds(256).unwrap();
        assert!(close(lo, 0.5, 1e-10));
        assert!(close(hi, 1.5, 1e-10));
        assert!(field.certify_bounds(2).is_err());
    }

    #[test]
    fn wrap_ranges() {
        assert_eq!(wrap(1.0), 0.0);
        assert_eq!(wrap(-0.25), 0.75);
        assert!(wrap(-1e-18) < 1.0);
        assert_eq!(wrap_centered(0.5), -0.5);
        assert_eq!(wrap_centered(0.75), -0.25);
        assert_eq!(wrap_centered(-0.6), 0.4);
    }
}
