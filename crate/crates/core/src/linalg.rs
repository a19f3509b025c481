//! Small dense symmetric linear algebra for dimensions up to three.
//!
//! Matrices and vectors are stored in fixed `3x3` / `3` arrays; only the
//! leading `d x d` block is meaningful and the padding stays zero.

use crate::error::{Error, Result};

pub const MAX_DIM: usize = 3;

pub type Vector = [f64; MAX_DIM];
pub type Matrix = [[f64; MAX_DIM]; MAX_DIM];

/// Eigenvalues below `-PSD_TOL` are treated as a genuine loss of
/// semidefiniteness; values in `[-PSD_TOL, 0)` are clamped.
pub const PSD_TOL: f64 = 1e-10;

pub const ZERO_MATRIX: Matrix = [[0.0; MAX_DIM]; MAX_DIM];

pub fn identity(d: usize) -> Matrix {
    let mut m = ZERO_MATRIX;
    for (i, row) in m.iter_mut().enumerate().take(d) {
        row[i] = 1.0;
    }
    m
}

pub fn mat_mul(a: &Matrix, b: &Matrix, d: usize) -> Matrix {
    let mut c = ZERO_MATRIX;
    for i in 0..d {
        for j in 0..d {
            let mut s = 0.0;
            for k in 0..d {
                s += a[i][k] * b[k][j];
            }
            c[i][j] = s;
        }
    }
    c
}

pub fn mat_vec(a: &Matrix, x: &Vector, d: usize) -> Vector {
    let mut y = [0.0; MAX_DIM];
    for i in 0..d {
        y[i] = (0..d).map(|j| a[i][j] * x[j]).sum();
    }
    y
}

pub fn frobenius_distance(a: &Matrix, b: &Matrix, d: usize) -> f64 {
    let mut s = 0.0;
    for i in 0..d {
        for j in 0..d {
            s += (a[i][j] - b[i][j]).powi(2);
        }
    }
    s.sqrt()
}

pub fn asymmetry(a: &Matrix, d: usize) -> f64 {
    let mut m: f64 = 0.0;
    for i in 0..d {
        for j in 0..i {
            m = m.max((a[i][j] - a[j][i]).abs());
        }
    }
    m
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in ascending order and the matrix whose columns are
/// the matching orthonormal eigenvectors.
pub fn symmetric_eigen(a: &Matrix, d: usize) -> (Vector, Matrix) {
    let mut m = *a;
    let mut v = identity(d);
    if d > 1 {
        let scale: f64 = (0..d)
            .flat_map(|i| (0..d).map(move |j| (i, j)))
            .map(|(i, j)| m[i][j] * m[i][j])
            .sum::<f64>()
            .sqrt();
        for _sweep in 0..64 {
            let off: f64 = (0..d)
                .flat_map(|i| (0..i).map(move |j| (i, j)))
                .map(|(i, j)| m[i][j] * m[i][j])
                .sum::<f64>()
                .sqrt();
            if off <= f64::EPSILON * 1e-3 * scale || off == 0.0 {
                break;
            }
            for p in 0..d {
                for q in (p + 1)..d {
                    if m[p][q] == 0.0 {
                        continue;
                    }
                    let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    // m <- J^T m J with J the (p, q) Givens rotation
                    for k in 0..d {
                        let mkp = m[k][p];
                        let mkq = m[k][q];
                        m[k][p] = c * mkp - s * mkq;
                        m[k][q] = s * mkp + c * mkq;
                    }
                    for k in 0..d {
                        let mpk = m[p][k];
                        let mqk = m[q][k];
                        m[p][k] = c * mpk - s * mqk;
                        m[q][k] = s * mpk + c * mqk;
                    }
                    for row in v.iter_mut().take(d) {
                        let vkp = row[p];
                        let vkq = row[q];
                        row[p] = c * vkp - s * vkq;
                        row[q] = s * vkp + c * vkq;
                    }
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| m[i][i].total_cmp(&m[j][j]));
    let mut values = [0.0; MAX_DIM];
    let mut vectors = ZERO_MATRIX;
    for (col, &src) in order.iter().enumerate() {
        values[col] = m[src][src];
        for row in 0..d {
            vectors[row][col] = v[row][src];
        }
    }
    (values, vectors)
}

/// Extreme eigenvalues `(min, max)` of a symmetric matrix.
pub fn eigen_range(a: &Matrix, d: usize) -> (f64, f64) {
    match d {
        1 => (a[0][0], a[0][0]),
        2 => {
            let (lo, hi) = eigenvalues_2x2(a);
            (lo, hi)
        }
        _ => {
            let (values, _) = symmetric_eigen(a, d);
            (values[0], values[d - 1])
        }
    }
}

/// Spectral norm of a symmetric matrix (largest absolute eigenvalue).
pub fn symmetric_norm(a: &Matrix, d: usize) -> f64 {
    let (lo, hi) = eigen_range(a, d);
    lo.abs().max(hi.abs())
}

fn eigenvalues_2x2(a: &Matrix) -> (f64, f64) {
    let mean = 0.5 * (a[0][0] + a[1][1]);
    let radius = (0.5 * (a[0][0] - a[1][1])).hypot(a[0][1]);
    let hi = mean + radius;
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    // the small root via det / hi avoids cancellation in mean - radius
    let naive = mean - radius;
    let lo = if hi.abs() >= naive.abs() && hi != 0.0 {
        det / hi
    } else {
        naive
    };
    (lo, hi)
}

/// Principal square root of a symmetric positive semidefinite matrix.
///
/// d = 1 uses the scalar root, d = 2 the trace/determinant closed form
/// `S = (A + sqrt(det) I) / sqrt(tr + 2 sqrt(det))`, d = 3 a Jacobi
/// eigen-decomposition. Eigenvalues in `[-tol, 0)` are clamped to zero.
pub fn sqrt_psd(a: &Matrix, d: usize, tol: f64) -> Result<Matrix> {
    match d {
        1 => {
            let x = a[0][0];
            if x < -tol {
                return Err(Error::NotPositiveSemidefinite { eigenvalue: x, tol });
            }
            let mut s = ZERO_MATRIX;
            s[0][0] = x.max(0.0).sqrt();
            Ok(s)
        }
        2 => {
            let (lo, hi) = eigenvalues_2x2(a);
            if lo < -tol {
                return Err(Error::NotPositiveSemidefinite { eigenvalue: lo, tol });
            }
            let lo = lo.max(0.0);
            let hi = hi.max(0.0);
            let root_det = (lo * hi).sqrt();
            let denom = hi.sqrt() + lo.sqrt();
            let mut s = ZERO_MATRIX;
            if denom == 0.0 {
                return Ok(s);
            }
            s[0][0] = (a[0][0] + root_det) / denom;
            s[1][1] = (a[1][1] + root_det) / denom;
            let off = 0.5 * (a[0][1] + a[1][0]) / denom;
            s[0][1] = off;
            s[1][0] = off;
            Ok(s)
        }
        3 => {
            let (values, vectors) = symmetric_eigen(a, 3);
            if values[0] < -tol {
                return Err(Error::NotPositiveSemidefinite {
                    eigenvalue: values[0],
                    tol,
                });
            }
            let roots = values.map(|x| x.max(0.0).sqrt());
            let mut s = ZERO_MATRIX;
            for i in 0..3 {
                for j in 0..=i {
                    let x: f64 = (0..3).map(|k| vectors[i][k] * roots[k] * vectors[j][k]).sum();
                    s[i][j] = x;
                    s[j][i] = x;
                }
            }
            Ok(s)
        }
        _ => Err(Error::ShapeMismatch(format!("sqrt_psd supports d <= 3, got {d}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_root() {
        for d in 1..=3 {
            let s = sqrt_psd(&identity(d), d, PSD_TOL).unwrap();
            assert!(frobenius_distance(&s, &identity(d), d) < 1e-15);
        }
    }

    #[test]
    fn diagonal_root() {
        let mut a = ZERO_MATRIX;
        a[0][0] = 4.0;
        a[1][1] = 9.0;
        let s = sqrt_psd(&a, 2, PSD_TOL).unwrap();
        assert!((s[0][0] - 2.0).abs() < 1e-15);
        assert!((s[1][1] - 3.0).abs() < 1e-15);
        assert_eq!(s[0][1], 0.0);
    }

    #[test]
    fn small_negative_eigenvalue_is_clamped() {
        let mut a = ZERO_MATRIX;
        a[0][0] = -5e-11;
        assert_eq!(sqrt_psd(&a, 1, PSD_TOL).unwrap()[0][0], 0.0);
        a[0][0] = -1e-6;
        assert!(matches!(
            sqrt_psd(&a, 1, PSD_TOL),
            Err(Error::NotPositiveSemidefinite { .. })
        ));
        let mut b = ZERO_MATRIX;
        b[0][0] = 1.0;
        b[2][2] = -1e-3;
        assert!(sqrt_psd(&b, 3, PSD_TOL).is_err());
    }

    #[test]
    fn rank_one_two_by_two() {
        // A = u u^T with u = (3, 4) is singular; its root is u u^T / |u|
        let a = [[9.0, 12.0, 0.0], [12.0, 16.0, 0.0], [0.0; 3]];
        let s = sqrt_psd(&a, 2, PSD_TOL).unwrap();
        let ss = mat_mul(&s, &s, 2);
        assert!(frobenius_distance(&ss, &a, 2) < 1e-12);
        assert!((s[0][0] - 9.0 / 5.0).abs() < 1e-12);
    }

    #[test]
    fn jacobi_diagonalizes() {
        let a = [[2.0, -1.0, 0.5], [-1.0, 3.0, 0.25], [0.5, 0.25, 1.0]];
        let (values, vectors) = symmetric_eigen(&a, 3);
        assert!(values[0] <= values[1] && values[1] <= values[2]);
        for col in 0..3 {
            let x = [vectors[0][col], vectors[1][col], vectors[2][col]];
            let ax = mat_vec(&a, &x, 3);
            for i in 0..3 {
                assert!((ax[i] - values[col] * x[i]).abs() < 1e-13);
            }
        }
        let trace: f64 = values.iter().sum();
        assert!((trace - 6.0).abs() < 1e-13);
    }
}
