//! Discrete Fourier transforms on periodic cubic grids `n^dim`, row-major
//! with the last axis contiguous.

use std::f64::consts::PI;
use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Signed frequency of DFT index `j` on an `n`-point axis.
#[inline]
pub fn frequency(j: usize, n: usize) -> i64 {
    if j <= n / 2 {
        j as i64
    } else {
        j as i64 - n as i64
    }
}

/// DFT index holding signed frequency `k`, if representable.
#[inline]
pub fn index_of(k: i64, n: usize) -> Option<usize> {
    let half = (n / 2) as i64;
    if k.abs() > half || (k == -half && n.is_multiple_of(2)) {
        return None;
    }
    Some(k.rem_euclid(n as i64) as usize)
}

const TILE: usize = 16;
/// Lines per parallel task; small grids stay on the calling thread.
const LINES_PER_TASK: usize = 256;

/// Transform consecutive length-`n` lines. Each line is independent, so the
/// result does not depend on how lines are split across threads.
fn process_lines(plan: &Arc<dyn Fft<f64>>, data: &mut [Complex64], n: usize) {
    let chunk = n * LINES_PER_TASK;
    if data.len() <= chunk {
        plan.process(data);
    } else {
        data.par_chunks_mut(chunk).for_each(|c| plan.process(c));
    }
}

/// `out` (cols x rows) = transpose of `input` (rows x cols), tiled.
fn transpose(input: &[Complex64], out: &mut [Complex64], rows: usize, cols: usize) {
    for r0 in (0..rows).step_by(TILE) {
        for c0 in (0..cols).step_by(TILE) {
            for r in r0..(r0 + TILE).min(rows) {
                for c in c0..(c0 + TILE).min(cols) {
                    out[c * rows + r] = input[r * cols + c];
                }
            }
        }
    }
}

/// Frequency used for first derivatives: the even-grid Nyquist mode has no
/// real odd counterpart and is zeroed.
#[inline]
pub fn derivative_frequency(j: usize, n: usize) -> f64 {
    if n.is_multiple_of(2) && j == n / 2 {
        0.0
    } else {
        frequency(j, n) as f64
    }
}

pub struct GridFft {
    n: usize,
    dim: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for GridFft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GridFft")
            .field("n", &self.n)
            .field("dim", &self.dim)
            .finish()
    }
}

impl GridFft {
    pub fn new(n: usize, dim: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            n,
            dim,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Unnormalized forward transform `F[k] = sum_j f_j e^{-2 pi i k.j / n}`.
    pub fn forward(&self, data: &mut [Complex64]) {
        self.transform(data, &self.forward);
    }

    /// Unnormalized inverse transform `f_j = sum_k F[k] e^{+2 pi i k.j / n}`.
    pub fn inverse_unnormalized(&self, data: &mut [Complex64]) {
        self.transform(data, &self.inverse);
    }

    /// Inverse transform including the `1 / n^dim` factor.
    pub fn inverse(&self, data: &mut [Complex64]) {
        self.inverse_unnormalized(data);
        let scale = 1.0 / self.len() as f64;
        for x in data.iter_mut() {
            *x *= scale;
        }
    }

    pub fn forward_real(&self, values: &[f64]) -> Vec<Complex64> {
        let mut data: Vec<Complex64> = values.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.forward(&mut data);
        data
    }

    fn transform(&self, data: &mut [Complex64], plan: &Arc<dyn Fft<f64>>) {
        let n = self.n;
        assert_eq!(data.len(), self.len(), "buffer length does not match grid");
        if n == 1 {
            return;
        }
        // last axis: contiguous lines
        process_lines(plan, data, n);
        if self.dim == 1 {
            return;
        }
        let mut buf = vec![Complex64::new(0.0, 0.0); data.len()];
        for axis in 0..self.dim - 1 {
            let stride = n.pow((self.dim - 1 - axis) as u32);
            let block = stride * n;
            // each block is an n x stride matrix whose columns are the lines
            for chunk in data.chunks_mut(block) {
                let lines = &mut buf[..block];
                transpose(chunk, lines, n, stride);
                process_lines(plan, lines, n);
                transpose(lines, chunk, stride, n);
            }
        }
    }

    /// Multi-index of a flat row-major index.
    pub fn unravel(&self, mut idx: usize) -> [usize; 3] {
        let mut out = [0usize; 3];
        for axis in (0..self.dim).rev() {
            out[axis] = idx % self.n;
            idx /= self.n;
        }
        out
    }

    /// `2 pi i k_axis` multiplier for a spectral first derivative.
    #[inline]
    pub fn derivative_factor(&self, multi: &[usize; 3], axis: usize) -> Complex64 {
        Complex64::new(0.0, 2.0 * PI * derivative_frequency(multi[axis], self.n))
    }

    /// `|2 pi k|^2` for the Laplacian symbol.
    #[inline]
    pub fn laplacian_symbol(&self, multi: &[usize; 3]) -> f64 {
        let mut s = 0.0;
        for &j in multi.iter().take(self.dim) {
            let k = frequency(j, self.n) as f64;
            s += k * k;
        }
        4.0 * PI * PI * s
    }

    /// Spectral derivative along `axis` of real grid values.
    pub fn derivative(&self, values: &[f64], axis: usize) -> Vec<f64> {
        let mut data = self.forward_real(values);
        self.apply_derivative(&mut data, axis);
        self.inverse(&mut data);
        data.iter().map(|c| c.re).collect()
    }

    pub fn apply_derivative(&self, spectrum: &mut [Complex64], axis: usize) {
        self.add_derivative(spectrum, axis, None);
    }

    /// `target += d_axis(source)` in spectral space, or in place when
    /// `target` is `None`.
    pub fn add_derivative(&self, spectrum: &mut [Complex64], axis: usize, target: Option<&mut [Complex64]>) {
        let n = self.n;
        let stride = n.pow((self.dim - 1 - axis) as u32);
        let factors: Vec<Complex64> = (0..n)
            .map(|j| Complex64::new(0.0, 2.0 * PI * derivative_frequency(j, n)))
            .collect();
        match target {
            None => {
                for (c, chunk) in spectrum.chunks_mut(stride).enumerate() {
                    let w = factors[c % n];
                    chunk.iter_mut().for_each(|x| *x *= w);
                }
            }
            Some(out) => {
                for (c, (src, dst)) in spectrum.chunks(stride).zip(out.chunks_mut(stride)).enumerate() {
                    let w = factors[c % n];
                    src.iter().zip(dst).for_each(|(x, y)| *y += w * x);
                }
            }
        }
    }

    /// `|2 pi k|^2` for every flat index.
    pub fn laplacian_symbols(&self) -> Vec<f64> {
        (0..self.len())
            .map(|idx| self.laplacian_symbol(&self.unravel(idx)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frequency_layout() {
        assert_eq!(frequency(0, 8), 0);
        assert_eq!(frequency(4, 8), 4);
        assert_eq!(frequency(5, 8), -3);
        assert_eq!(index_of(-3, 8), Some(5));
        assert_eq!(index_of(4, 8), Some(4));
        assert_eq!(index_of(-4, 8), None);
        assert_eq!(index_of(5, 8), None);
    }

    #[test]
    fn derivative_of_trig_is_exact() {
        let n = 32;
        let fft = GridFft::new(n, 2);
        let h = 1.0 / n as f64;
        let mut values = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let (x, y) = (i as f64 * h, j as f64 * h);
                values[i * n + j] = (2.0 * PI * x).sin() * (4.0 * PI * y).cos();
            }
        }
        let dx = fft.derivative(&values, 0);
        let dy = fft.derivative(&values, 1);
        for i in 0..n {
            for j in 0..n {
                let (x, y) = (i as f64 * h, j as f64 * h);
                let ex = 2.0 * PI * (2.0 * PI * x).cos() * (4.0 * PI * y).cos();
                let ey = -4.0 * PI * (2.0 * PI * x).sin() * (4.0 * PI * y).sin();
                assert!((dx[i * n + j] - ex).abs() < 1e-11);
                assert!((dy[i * n + j] - ey).abs() < 1e-11);
            }
        }
    }

    #[test]
    fn round_trip_3d() {
        let fft = GridFft::new(4, 3);
        let values: Vec<f64> = (0..64).map(|i| ((i * 37) % 11) as f64 - 3.0).collect();
        let mut data = fft.forward_real(&values);
        fft.inverse(&mut data);
        for (a, b) in values.iter().zip(&data) {
            assert!((a - b.re).abs() < 1e-13 && b.im.abs() < 1e-13);
        }
    }
}
