//! Mean-field Landau-like equation on the torus (d = 1, 2):
//!
//! ```text
//! d_t f = div[ (a*f) grad f - (b*f) f ]
//! ```
//!
//! Convolutions and derivatives are spectral. Time stepping is a first-order
//! exponential (IMEX) scheme: the constant-coefficient part `lambda2 Lap f`
//! is integrated exactly in Fourier space and the remainder
//! `div[(a*f - lambda2 Id) grad f - (b*f) f]` is explicit. The remainder is
//! kept in divergence form so the zero mode, and hence the mass, is untouched.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::kernel::KernelField;
use crate::linalg::{self, Matrix, Vector, MAX_DIM, ZERO_MATRIX};
use crate::profile::InitialProfile;
use crate::spectral::{self, GridFft};

/// Tolerance on `h^d sum f = 1` for a normalized density.
pub const MASS_TOL: f64 = 1e-8;
/// Round-off negativity that is clamped instead of aborting.
pub const NEGATIVE_CLAMP_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PeriodicGrid {
    dim: usize,
    n: usize,
}

impl PeriodicGrid {
    pub fn new(dim: usize, n: usize) -> Result<Self> {
        if !(1..=2).contains(&dim) {
            return Err(Error::InvalidGrid(format!(
                "mean-field grids support d = 1 or 2, got {dim}"
            )));
        }
        if n < 2 || !n.is_power_of_two() {
            return Err(Error::InvalidGrid(format!(
                "points per axis must be a power of two >= 2, got {n}"
            )));
        }
        Ok(Self { dim, n })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn spacing(&self) -> f64 {
        1.0 / self.n as f64
    }

    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    /// Coordinates of node `idx` (row-major, last axis fastest).
    pub fn node(&self, idx: usize) -> [f64; MAX_DIM] {
        let mut out = [0.0; MAX_DIM];
        let mut rem = idx;
        for axis in (0..self.dim).rev() {
            out[axis] = (rem % self.n) as f64 * self.spacing();
            rem /= self.n;
        }
        out
    }

    pub fn multi_index(&self, idx: usize) -> [usize; MAX_DIM] {
        let mut out = [0; MAX_DIM];
        let mut rem = idx;
        for axis in (0..self.dim).rev() {
            out[axis] = rem % self.n;
            rem /= self.n;
        }
        out
    }

    /// Check the grid resolves a kernel: `n >= 4 * max wave number`.
    pub fn check_resolves(&self, field: &KernelField) -> Result<()> {
        if field.dim() != self.dim {
            return Err(Error::ShapeMismatch(format!(
                "kernel dimension {} vs grid dimension {}",
                field.dim(),
                self.dim
            )));
        }
        let need = 4 * field.max_wave() as usize;
        if self.n < need {
            return Err(Error::GridTooCoarse(format!(
                "n = {} but the kernel's largest wave number {} needs n >= {need}",
                self.n,
                field.max_wave()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityField {
    grid: PeriodicGrid,
    values: Vec<f64>,
    time: f64,
}

impl DensityField {
    pub fn new(grid: PeriodicGrid, values: Vec<f64>, time: f64) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a grid of {} nodes",
                values.len(),
                grid.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidDensity("non-finite value".into()));
        }
        Ok(Self { grid, values, time })
    }

    pub fn uniform(grid: PeriodicGrid) -> Self {
        Self {
            grid,
            values: vec![1.0; grid.len()],
            time: 0.0,
        }
    }

    pub fn from_fn(grid: PeriodicGrid, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let values = (0..grid.len()).map(|i| f(&grid.node(i)[..grid.dim()])).collect();
        Self::new(grid, values, 0.0)
    }

    /// Tabulate a profile; the grid must resolve its modes without aliasing.
    pub fn from_profile(grid: PeriodicGrid, profile: &InitialProfile) -> Result<Self> {
        profile.validate()?;
        if profile.dimension != grid.dim() {
            return Err(Error::ShapeMismatch(format!(
                "profile dimension {} vs grid dimension {}",
                profile.dimension,
                grid.dim()
            )));
        }
        if 2 * profile.max_wave() as usize >= grid.n() {
            return Err(Error::GridTooCoarse(format!(
                "profile wave number {} not resolved by n = {}",
                profile.max_wave(),
                grid.n()
            )));
        }
        Self::from_fn(grid, |v| profile.eval(v))
    }

    pub fn grid(&self) -> &PeriodicGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn mass(&self) -> f64 {
        self.grid.cell_volume() * self.values.iter().sum::<f64>()
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// `int f log f` with `0 log 0 = 0`.
    pub fn entropy(&self) -> f64 {
        self.grid.cell_volume()
            * self
                .values
                .iter()
                .map(|&f| if f > 0.0 { f * f.ln() } else { 0.0 })
                .sum::<f64>()
    }

    pub fn sup_distance(&self, other: &DensityField) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn normalized(mut self) -> Result<Self> {
        let m = self.mass();
        if !(m > 0.0) {
            return Err(Error::InvalidDensity(format!("mass {m} cannot be normalized")));
        }
        for v in &mut self.values {
            *v /= m;
        }
        Ok(self)
    }

    pub fn check_normalized(&self) -> Result<()> {
        let m = self.mass();
        if (m - 1.0).abs() > MASS_TOL {
            return Err(Error::InvalidDensity(format!(
                "mass {m} differs from 1 by more than {MASS_TOL:e}"
            )));
        }
        Ok(())
    }

    /// Continuous Fourier coefficients `f_hat(k) = int f e^{-2 pi i k.v}` for
    /// every representable `k`, from the node values.
    pub fn fourier_coefficients(&self) -> Vec<Complex64> {
        let fft = GridFft::new(self.grid.n(), self.grid.dim());
        let mut spec = fft.forward_real(&self.values);
        let scale = 1.0 / self.grid.len() as f64;
        for x in spec.iter_mut() {
            *x *= scale;
        }
        spec
    }

    /// Trigonometric interpolant through the node values.
    pub fn interpolant(&self) -> TrigInterpolant {
        TrigInterpolant::new(&self.grid, &self.fourier_coefficients())
    }

    /// Exact integrals of the trigonometric interpolant over `bins^d` equal
    /// periodic cells, row-major.
    pub fn bin_masses(&self, bins: usize) -> Vec<f64> {
        let n = self.grid.n();
        let d = self.grid.dim();
        let coeffs = self.fourier_coefficients();
        // per-axis integral of e^{2 pi i k x} over bin b
        let axis_weight = |k: f64, b: usize| -> Complex64 {
            let lo = b as f64 / bins as f64;
            let hi = (b + 1) as f64 / bins as f64;
            if k == 0.0 {
                Complex64::new(hi - lo, 0.0)
            } else {
                let w = 2.0 * PI * k;
                let e = |x: f64| Complex64::new((w * x).cos(), (w * x).sin());
                (e(hi) - e(lo)) / Complex64::new(0.0, w)
            }
        };
        // frequencies with the Nyquist mode split symmetrically
        let freqs: Vec<Vec<(f64, f64)>> = (0..n)
            .map(|j| {
                if n.is_multiple_of(2) && j == n / 2 {
                    vec![(j as f64, 0.5), (-(j as f64), 0.5)]
                } else {
                    vec![(spectral::frequency(j, n) as f64, 1.0)]
                }
            })
            .collect();
        let table: Vec<Vec<Complex64>> = (0..n)
            .map(|j| {
                (0..bins)
                    .map(|b| freqs[j].iter().map(|&(k, w)| axis_weight(k, b) * w).sum())
                    .collect()
            })
            .collect();
        let total_bins = bins.pow(d as u32);
        (0..total_bins)
            .map(|bin| {
                let (b0, b1) = if d == 1 { (bin, 0) } else { (bin / bins, bin % bins) };
                let mut acc = Complex64::new(0.0, 0.0);
                for (idx, c) in coeffs.iter().enumerate() {
                    let m = self.grid.multi_index(idx);
                    let mut w = table[m[0]][b0];
                    if d == 2 {
                        w *= table[m[1]][b1];
                    }
                    acc += c * w;
                }
                acc.re
            })
            .collect()
    }

    pub(crate) fn set_time(&mut self, t: f64) {
        self.time = t;
    }
}

/// Band-limited interpolant `sum_k c_k e^{2 pi i k.v}` of grid data.
#[derive(Debug, Clone)]
pub struct TrigInterpolant {
    dim: usize,
    terms: Vec<([f64; 2], Complex64)>,
}

impl TrigInterpolant {
    fn new(grid: &PeriodicGrid, coeffs: &[Complex64]) -> Self {
        let n = grid.n();
        let mut terms = Vec::with_capacity(coeffs.len());
        for (idx, &c) in coeffs.iter().enumerate() {
            if c.norm() == 0.0 {
                continue;
            }
            let m = grid.multi_index(idx);
            // split Nyquist components so the interpolant stays real
            let mut options: Vec<Vec<(f64, f64)>> = Vec::new();
            for &j in m.iter().take(grid.dim()) {
                if n.is_multiple_of(2) && j == n / 2 {
                    options.push(vec![(j as f64, 0.5), (-(j as f64), 0.5)]);
                } else {
                    options.push(vec![(spectral::frequency(j, n) as f64, 1.0)]);
                }
            }
            if grid.dim() == 1 {
                for &(k, w) in &options[0] {
                    terms.push(([k, 0.0], c * w));
                }
            } else {
                for &(k0, w0) in &options[0] {
                    for &(k1, w1) in &options[1] {
                        terms.push(([k0, k1], c * (w0 * w1)));
                    }
                }
            }
        }
        Self { dim: grid.dim(), terms }
    }

    /// Value and gradient at an arbitrary point.
    pub fn eval_with_gradient(&self, v: &[f64]) -> (f64, [f64; 2]) {
        let mut val = 0.0;
        let mut grad = [0.0; 2];
        for (k, c) in &self.terms {
            let theta = 2.0 * PI * (k[0] * v[0] + if self.dim == 2 { k[1] * v[1] } else { 0.0 });
            let (s, co) = theta.sin_cos();
            // Re(c e^{i theta}) and its derivative
            let re = c.re * co - c.im * s;
            let dre = -c.re * s - c.im * co;
            val += re;
            for axis in 0..self.dim {
                grad[axis] += 2.0 * PI * k[axis] * dre;
            }
        }
        (val, grad)
    }

    fn log_gradient_norm(&self, v: &[f64]) -> f64 {
        let (f, g) = self.eval_with_gradient(v);
        (g[0] * g[0] + g[1] * g[1]).sqrt() / f
    }
}

/// Fields `a*f`, `b*f` and `(div b)*f` on the grid nodes.
#[derive(Debug, Clone)]
pub struct ConvolvedFields {
    pub a: Vec<Matrix>,
    pub b: Vec<Vector>,
    pub div_b: Vec<f64>,
    dim: usize,
}

impl ConvolvedFields {
    /// Extreme eigenvalues of `a*f` over all nodes.
    pub fn eigen_range(&self) -> (f64, f64) {
        self.a.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), m| {
            let (l, u) = linalg::eigen_range(m, self.dim);
            (lo.min(l), hi.max(u))
        })
    }

    pub fn max_b_norm(&self) -> f64 {
        self.b
            .iter()
            .map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }
}

/// Spectral solver bound to one kernel and one grid.
#[derive(Debug)]
pub struct MeanFieldSolver<'a> {
    field: &'a KernelField,
    grid: PeriodicGrid,
    fft: GridFft,
    /// DFT indices of `+k` and `-k` for each kernel mode.
    mode_index: Vec<(usize, usize)>,
    stiff: f64,
    last_mass_correction: f64,
}

impl<'a> MeanFieldSolver<'a> {
    pub fn new(field: &'a KernelField, grid: PeriodicGrid) -> Result<Self> {
        grid.check_resolves(field)?;
        let n = grid.n();
        let mut mode_index = Vec::with_capacity(field.modes().len());
        for mode in field.modes() {
            let flat = |sign: i64| -> Result<usize> {
                let mut idx = 0usize;
                for axis in 0..grid.dim() {
                    let j = spectral::index_of(sign * mode.wave[axis], n)
                        .ok_or_else(|| Error::GridTooCoarse(format!("wave {:?} not representable", mode.wave)))?;
                    idx = idx * n + j;
                }
                Ok(idx)
            };
            mode_index.push((flat(1)?, flat(-1)?));
        }
        Ok(Self {
            field,
            grid,
            fft: GridFft::new(n, grid.dim()),
            mode_index,
            stiff: field.upper_bound(),
            last_mass_correction: 0.0,
        })
    }

    pub fn grid(&self) -> &PeriodicGrid {
        &self.grid
    }

    pub fn field(&self) -> &KernelField {
        self.field
    }

    /// Relative mass correction applied by the most recent step.
    pub fn last_mass_correction(&self) -> f64 {
        self.last_mass_correction
    }

    /// Largest admissible time step: `h^2 / (2 d (lambda2 - lambda1))` for the
    /// explicit elliptic remainder and `h / sup|b|` for advection.
    pub fn max_stable_dt(&self) -> f64 {
        let h = self.grid.spacing();
        let d = self.grid.dim() as f64;
        let gap = self.field.upper_bound() - self.field.lower_bound();
        let diffusive = if gap > 0.0 {
            h * h / (2.0 * d * gap)
        } else {
            f64::INFINITY
        };
        let b = self.field.b_sup_bound();
        let advective = if b > 0.0 { h / b } else { f64::INFINITY };
        diffusive.min(advective)
    }

    fn check_density(&self, f: &DensityField) -> Result<()> {
        if f.grid != self.grid {
            return Err(Error::ShapeMismatch("density lives on a different grid".into()));
        }
        Ok(())
    }

    /// `a*f`, `b*f`, `(div b)*f` by multiplying Fourier coefficients.
    pub fn convolve(&self, f: &DensityField) -> Result<ConvolvedFields> {
        self.check_density(f)?;
        let spectrum = self.fft.forward_real(f.values());
        Ok(self.convolve_spectrum(&spectrum))
    }

    fn convolve_spectrum(&self, spectrum: &[Complex64]) -> ConvolvedFields {
        let d = self.grid.dim();
        let len = self.grid.len();
        let norm = 1.0 / len as f64;
        let zero = Complex64::new(0.0, 0.0);
        let mass_coeff = spectrum[0] * norm;

        // synthesize sum_k c_k f_hat(k) e^{2 pi i k.v} for one component
        let synth = |constant: f64, coeff: &dyn Fn(usize) -> (Complex64, Complex64)| -> Vec<f64> {
            let mut buf = vec![zero; len];
            buf[0] = mass_coeff * constant;
            for (m, &(plus, minus)) in self.mode_index.iter().enumerate() {
                let (cp, cm) = coeff(m);
                buf[plus] += cp * spectrum[plus] * norm;
                buf[minus] += cm * spectrum[minus] * norm;
            }
            self.fft.inverse_unnormalized(&mut buf);
            buf.iter().map(|c| c.re).collect()
        };

        let modes = self.field.modes();
        let half = Complex64::new(0.5, 0.0);
        let mut a = vec![ZERO_MATRIX; len];
        for i in 0..d {
            for j in i..d {
                let constant = if i == j { self.field.lambda0() } else { 0.0 };
                let vals = synth(constant, &|m| {
                    let c = half * modes[m].a[i][j];
                    (c, c)
                });
                for (node, v) in vals.into_iter().enumerate() {
                    a[node][i][j] = v;
                    a[node][j][i] = v;
                }
            }
        }
        let mut b = vec![[0.0; MAX_DIM]; len];
        for i in 0..d {
            // sin(theta) = (e^{i theta} - e^{-i theta}) / 2i
            let vals = synth(0.0, &|m| {
                let c = modes[m].b[i];
                (Complex64::new(0.0, -0.5 * c), Complex64::new(0.0, 0.5 * c))
            });
            for (node, v) in vals.into_iter().enumerate() {
                b[node][i] = v;
            }
        }
        let div_b = synth(0.0, &|m| {
            let c = half * modes[m].div_b;
            (c, c)
        });
        ConvolvedFields { a, b, div_b, dim: d }
    }

    /// Advance one exponential-Euler step of size `dt`.
    pub fn step(&mut self, f: &DensityField, dt: f64) -> Result<DensityField> {
        self.check_density(f)?;
        let d = self.grid.dim();
        let len = self.grid.len();
        let spectrum = self.fft.forward_real(f.values());
        let conv = self.convolve_spectrum(&spectrum);

        let grads: Vec<Vec<f64>> = (0..d)
            .map(|axis| {
                let mut s = spectrum.clone();
                self.fft.apply_derivative(&mut s, axis);
                self.fft.inverse(&mut s);
                s.iter().map(|c| c.re).collect()
            })
            .collect();

        let mut rhs = vec![Complex64::new(0.0, 0.0); len];
        let mut flux = vec![Complex64::new(0.0, 0.0); len];
        for alpha in 0..d {
            for node in 0..len {
                let mut q = -conv.b[node][alpha] * f.values[node];
                for beta in 0..d {
                    let mut coeff = conv.a[node][alpha][beta];
                    if alpha == beta {
                        coeff -= self.stiff;
                    }
                    q += coeff * grads[beta][node];
                }
                flux[node] = Complex64::new(q, 0.0);
            }
            self.fft.forward(&mut flux);
            self.fft.add_derivative(&mut flux, alpha, Some(&mut rhs));
        }
        rhs[0] = Complex64::new(0.0, 0.0);

        let mut next = spectrum;
        for (idx, (x, r)) in next.iter_mut().zip(&rhs).enumerate() {
            let multi = self.fft.unravel(idx);
            let l = -self.stiff * self.fft.laplacian_symbol(&multi);
            let decay = (l * dt).exp();
            let phi = if l == 0.0 { dt } else { (decay - 1.0) / l };
            *x = *x * decay + r * phi;
        }
        self.fft.inverse(&mut next);
        let mut values: Vec<f64> = next.iter().map(|c| c.re).collect();

        let t_next = f.time + dt;
        for (node, v) in values.iter_mut().enumerate() {
            if *v < 0.0 {
                if *v < -NEGATIVE_CLAMP_TOL {
                    return Err(Error::NegativeDensity {
                        value: *v,
                        node,
                        time: t_next,
                        dt,
                    });
                }
                *v = 0.0;
            }
        }
        let mut out = DensityField::new(self.grid, values, t_next)?;
        let mass = out.mass();
        self.last_mass_correction = (mass - 1.0).abs();
        for v in &mut out.values {
            *v /= mass;
        }
        Ok(out)
    }

    /// Integrate to `horizon`, returning snapshots at the requested times
    /// (the horizon is always included). Steps are shortened so every
    /// snapshot time is hit exactly.
    pub fn solve(
        &mut self,
        f0: &DensityField,
        horizon: f64,
        dt: f64,
        snapshot_times: &[f64],
    ) -> Result<Vec<DensityField>> {
        self.check_density(f0)?;
        f0.check_normalized()?;
        if !(f0.min() > 0.0) {
            return Err(Error::InvalidDensity(format!(
                "initial density must be strictly positive, min = {}",
                f0.min()
            )));
        }
        if !(dt > 0.0) || !(horizon >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "need dt > 0 and T >= 0, got dt = {dt}, T = {horizon}"
            )));
        }
        let limit = self.max_stable_dt();
        if dt > limit * (1.0 + 1e-12) {
            return Err(Error::TimeStepTooLarge { dt, limit });
        }
        let mut targets: Vec<f64> = snapshot_times
            .iter()
            .copied()
            .filter(|&t| (0.0..horizon).contains(&t))
            .collect();
        targets.push(horizon);
        targets.sort_by(f64::total_cmp);
        targets.dedup_by(|a, b| (*a - *b).abs() < 1e-12);

        let mut current = f0.clone();
        let mut out = Vec::with_capacity(targets.len());
        for &target in &targets {
            let remaining = target - current.time;
            if remaining > 1e-12 {
                let steps = ((remaining / dt) - 1e-9).ceil().max(1.0) as usize;
                let start = current.time;
                let h = remaining / steps as f64;
                for s in 1..=steps {
                    current = self.step(&current, h)?;
                    current.set_time(start + s as f64 * h);
                }
                current.set_time(target);
            }
            let entropy = current.entropy();
            if !entropy.is_finite() {
                return Err(Error::InvalidDensity(format!("entropy not finite at t = {target}")));
            }
            out.push(current.clone());
        }
        Ok(out)
    }
}

/// Convenience wrapper building a one-off solver.
pub fn convolve(field: &KernelField, f: &DensityField) -> Result<ConvolvedFields> {
    MeanFieldSolver::new(field, *f.grid())?.convolve(f)
}

/// `sup_v |grad f / f|` of the spectral interpolant of `f`.
///
/// The interpolant is scanned on a zero-padded refinement and the best
/// candidates are polished by golden-section search, so the value is
/// independent of the grid resolution once `f` is resolved.
pub fn log_gradient_bound(f: &DensityField) -> Result<f64> {
    if !(f.min() > 0.0) {
        return Err(Error::InvalidDensity(format!(
            "log-gradient bound needs min f > 0, got {}",
            f.min()
        )));
    }
    let grid = *f.grid();
    let n = grid.n();
    let d = grid.dim();
    let coeffs = f.fourier_coefficients();
    let interp = TrigInterpolant::new(&grid, &coeffs);

    // zero-padded refinement
    let factor = if d == 1 { (4096 / n).max(8) } else { (512 / n).max(4) };
    let m = n * factor;
    let fine = GridFft::new(m, d);
    let fine_len = fine.len();
    let mut base = vec![Complex64::new(0.0, 0.0); fine_len];
    for (idx, c) in coeffs.iter().enumerate() {
        let mi = grid.multi_index(idx);
        let mut targets: Vec<(usize, Complex64)> = vec![(0, *c)];
        for &j in mi.iter().take(d) {
            let ks: Vec<(i64, f64)> = if n.is_multiple_of(2) && j == n / 2 {
                vec![(j as i64, 0.5), (-(j as i64), 0.5)]
            } else {
                vec![(spectral::frequency(j, n), 1.0)]
            };
            let mut next = Vec::new();
            for (flat, val) in &targets {
                for &(k, w) in &ks {
                    let jj = k.rem_euclid(m as i64) as usize;
                    next.push((flat * m + jj, val * w));
                }
            }
            targets = next;
        }
        for (flat, val) in targets {
            base[flat] += val;
        }
    }
    let mut values = base.clone();
    fine.inverse_unnormalized(&mut values);
    let grads: Vec<Vec<f64>> = (0..d)
        .map(|axis| {
            let mut s = base.clone();
            fine.apply_derivative(&mut s, axis);
            fine.inverse_unnormalized(&mut s);
            s.iter().map(|c| c.re).collect()
        })
        .collect();
    let ratio: Vec<f64> = (0..fine_len)
        .map(|i| {
            let g2: f64 = (0..d).map(|a| grads[a][i] * grads[a][i]).sum();
            g2.sqrt() / values[i].re
        })
        .collect();
    let mut order: Vec<usize> = (0..fine_len).collect();
    order.sort_by(|&a, &b| ratio[b].total_cmp(&ratio[a]));
    let h = 1.0 / m as f64;
    let mut best = ratio[order[0]];
    for &cand in order.iter().take(4) {
        let mut x = [0.0; 2];
        let mut rem = cand;
        for axis in (0..d).rev() {
            x[axis] = (rem % m) as f64 * h;
            rem /= m;
        }
        let rounds = if d == 1 { 1 } else { 6 };
        for _ in 0..rounds {
            for axis in 0..d {
                let center = x[axis];
                let objective = |t: f64| {
                    let mut y = x;
                    y[axis] = t;
                    interp.log_gradient_norm(&y[..d])
                };
                x[axis] = golden_max(objective, center - h, center + h);
            }
        }
        best = best.max(interp.log_gradient_norm(&x[..d]));
    }
    Ok(best)
}

fn golden_max(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - r * (hi - lo);
    let mut x2 = lo + r * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    for _ in 0..80 {
        if hi - lo < 1e-13 {
            break;
        }
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + r * (hi - lo);
            f2 = f(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - r * (hi - lo);
            f1 = f(x1);
        }
    }
    0.5 * (lo + hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{build_kernel, KernelSpec};

    fn grid1(n: usize) -> PeriodicGrid {
        PeriodicGrid::new(1, n).unwrap()
    }

    #[test]
    fn grid_validation() {
        assert!(PeriodicGrid::new(1, 12).is_err());
        assert!(PeriodicGrid::new(3, 8).is_err());
        let field = build_kernel(&KernelSpec::canonical_1d()).unwrap();
        assert!(MeanFieldSolver::new(&field, grid1(2)).is_err());
        assert!(MeanFieldSolver::new(&field, grid1(4)).is_ok());
    }

    #[test]
    fn uniform_convolution() {
        let field = build_kernel(&KernelSpec::canonical_1d()).unwrap();
        let f = DensityField::uniform(grid1(32));
        let c = convolve(&field, &f).unwrap();
        for node in 0..32 {
            assert!((c.a[node][0][0] - 1.0).abs() < 1e-14);
            assert!(c.b[node][0].abs() < 1e-14);
            assert!(c.div_b[node].abs() < 1e-13);
        }
    }

    #[test]
    fn cosine_convolution_closed_form() {
        let field = build_kernel(&KernelSpec::canonical_1d()).unwrap();
        let grid = grid1(64);
        let f = DensityField::from_fn(grid, |v| 1.0 + 0.2 * (2.0 * PI * v[0]).cos()).unwrap();
        let c = convolve(&field, &f).unwrap();
        for node in 0..64 {
            let v = grid.node(node)[0];
            assert!((c.a[node][0][0] - (1.0 + 0.05 * (2.0 * PI * v).cos())).abs() < 1e-14);
            // b*f = -pi * 0.1 sin(2 pi v)
            assert!((c.b[node][0] + 0.1 * PI * (2.0 * PI * v).sin()).abs() < 1e-13);
            assert!((c.div_b[node] + 0.2 * PI * PI * (2.0 * PI * v).cos()).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_kernel_convolution() {
        let field = build_kernel(&KernelSpec::constant(2, 0.7)).unwrap();
        let grid = PeriodicGrid::new(2, 16).unwrap();
        let f = DensityField::from_fn(grid, |v| 1.0 + 0.3 * (2.0 * PI * (v[0] - 2.0 * v[1])).sin()).unwrap();
        let c = convolve(&field, &f).unwrap();
        for node in 0..grid.len() {
            assert!((c.a[node][0][0] - 0.7).abs() < 1e-14);
            assert!((c.a[node][1][1] - 0.7).abs() < 1e-14);
            assert!(c.a[node][0][1].abs() < 1e-14);
            assert!(c.b[node][0].abs() < 1e-14 && c.b[node][1].abs() < 1e-14);
        }
    }

    #[test]
    fn heat_mode_decays_exactly() {
        let lambda = 0.8;
        let field = build_kernel(&KernelSpec::constant(1, lambda)).unwrap();
        let grid = grid1(32);
        let mut solver = MeanFieldSolver::new(&field, grid).unwrap();
        let eps = 0.3;
        let k = 3.0;
        let f = DensityField::from_fn(grid, |v| 1.0 + eps * (2.0 * PI * k * v[0]).cos()).unwrap();
        let dt = 1e-3;
        let g = solver.step(&f, dt).unwrap();
        let decay = (-lambda * (2.0 * PI * k).powi(2) * dt).exp();
        for node in 0..32 {
            let v = grid.node(node)[0];
            let exact = 1.0 + eps * decay * (2.0 * PI * k * v).cos();
            assert!((g.values()[node] - exact).abs() < 1e-14);
        }
    }

    #[test]
    fn uniform_state_is_stationary() {
        let spec = KernelSpec {
            dimension: 2,
            lambda0: 1.0,
            modes: vec![crate::kernel::KernelMode {
                k: vec![1, -1],
                coeff: vec![0.2, 0.1, 0.1, 0.3],
            }],
        };
        let field = build_kernel(&spec).unwrap();
        let grid = PeriodicGrid::new(2, 16).unwrap();
        let mut solver = MeanFieldSolver::new(&field, grid).unwrap();
        let f0 = DensityField::uniform(grid);
        let dt = solver.max_stable_dt();
        let snaps = solver.solve(&f0, 20.0 * dt, dt, &[]).unwrap();
        let last = snaps.last().unwrap();
        assert!(last.values().iter().all(|v| (v - 1.0).abs() <= 1e-12));
    }

    #[test]
    fn solve_zero_horizon_returns_input() {
        let field = build_kernel(&KernelSpec::canonical_1d()).unwrap();
        let grid = grid1(16);
        let mut solver = MeanFieldSolver::new(&field, grid).unwrap();
        let f0 = DensityField::from_profile(grid, &InitialProfile::cosine_1d(1, 0.3)).unwrap();
        let out = solver.solve(&f0, 0.0, 1e-4, &[]).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0], f0);
    }

    #[test]
    fn rejects_unstable_step_and_bad_initial_data() {
        let field = build_kernel(&KernelSpec::canonical_1d()).unwrap();
        let grid = grid1(64);
        let mut solver = MeanFieldSolver::new(&field, grid).unwrap();
        let f0 = DensityField::from_profile(grid, &InitialProfile::cosine_1d(1, 0.3)).unwrap();
        let limit = solver.max_stable_dt();
        assert!(matches!(
            solver.solve(&f0, 0.1, 2.0 * limit, &[]),
            Err(Error::TimeStepTooLarge { .. })
        ));
        let unnormalized = DensityField::from_fn(grid, |_| 2.0).unwrap();
        assert!(solver.solve(&unnormalized, 0.1, limit, &[]).is_err());
    }

    #[test]
    fn log_gradient_of_uniform_is_zero() {
        let f = DensityField::uniform(grid1(16));
        assert_eq!(log_gradient_bound(&f).unwrap(), 0.0);
        let zero = DensityField::from_fn(grid1(16), |v| if v[0] < 0.5 { 0.0 } else { 2.0 }).unwrap();
        assert!(log_gradient_bound(&zero).is_err());
    }

    #[test]
    fn bin_masses_are_exact_for_trig_densities() {
        let grid = grid1(32);
        let f = DensityField::from_fn(grid, |v| 1.0 + 0.4 * (2.0 * PI * v[0]).sin()).unwrap();
        let bins = 8;
        let masses = f.bin_masses(bins);
        for (b, m) in masses.iter().enumerate() {
            let (lo, hi) = (b as f64 / 8.0, (b + 1) as f64 / 8.0);
            let exact = (hi - lo) - 0.4 / (2.0 * PI) * ((2.0 * PI * hi).cos() - (2.0 * PI * lo).cos());
            assert!((m - exact).abs() < 1e-14);
        }
        assert!((masses.iter().sum::<f64>() - 1.0).abs() < 1e-14);
    }
}
