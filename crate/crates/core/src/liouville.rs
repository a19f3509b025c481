//! Exact-in-law solves of the N-particle Liouville equation for N = 2, 3
//! particles in one dimension:
//!
//! ```text
//! d_t f_N = sum_i d_i [ A_i(V) d_i f_N - beta_i(V) f_N ],
//! A_i = (1/N) sum_{j != i} a(v^i - v^j),  beta_i = (1/N) sum_{j != i} b(v^i - v^j).
//! ```
//!
//! The grid is `n^N` with spectral derivatives and the fluxes kept in
//! divergence form, so discrete mass is conserved to round-off. The stiff
//! part `c Lap f_N` with `c = lambda2 (N-1)/N >= A_i` is integrated exactly
//! (exponential Euler), the remainder explicitly.

use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::kernel::{wrap_centered, KernelField};
use crate::meanfield::{DensityField, MeanFieldSolver, PeriodicGrid, NEGATIVE_CLAMP_TOL};
use crate::spectral::GridFft;

/// Gibbs tolerance: computed relative entropies must exceed `-GIBBS_TOL`.
pub const GIBBS_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct LiouvilleDensity {
    n_particles: usize,
    n: usize,
    values: Vec<f64>,
    time: f64,
}

fn check_shape(n_particles: usize, n: usize) -> Result<()> {
    if !(2..=3).contains(&n_particles) {
        return Err(Error::InvalidGrid(format!(
            "Liouville solves support N = 2 or 3 particles in d = 1, got N = {n_particles}"
        )));
    }
    if n < 2 || !n.is_power_of_two() {
        return Err(Error::InvalidGrid(format!(
            "points per axis must be a power of two >= 2, got {n}"
        )));
    }
    Ok(())
}

impl LiouvilleDensity {
    pub fn new(n_particles: usize, n: usize, values: Vec<f64>, time: f64) -> Result<Self> {
        check_shape(n_particles, n)?;
        if values.len() != n.pow(n_particles as u32) {
            return Err(Error::ShapeMismatch(format!(
                "{} values for an {n}^{n_particles} grid",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidDensity("non-finite value".into()));
        }
        Ok(Self {
            n_particles,
            n,
            values,
            time,
        })
    }

    pub fn uniform(n_particles: usize, n: usize) -> Result<Self> {
        Self::new(n_particles, n, vec![1.0; n.pow(n_particles as u32)], 0.0)
    }

    /// Grid values of `V -> g(V)`.
    pub fn from_fn(n_particles: usize, n: usize, g: impl Fn(&[f64]) -> f64) -> Result<Self> {
        check_shape(n_particles, n)?;
        let h = 1.0 / n as f64;
        let len = n.pow(n_particles as u32);
        let mut v = vec![0.0; n_particles];
        let values = (0..len)
            .map(|idx| {
                let mut rem = idx;
                for axis in (0..n_particles).rev() {
                    v[axis] = (rem % n) as f64 * h;
                    rem /= n;
                }
                g(&v)
            })
            .collect();
        Self::new(n_particles, n, values, 0.0)
    }

    /// Tensor product `f^{(x)N}` of a one-dimensional density.
    pub fn tensor(f: &DensityField, n_particles: usize) -> Result<Self> {
        if f.grid().dim() != 1 {
            return Err(Error::ShapeMismatch("tensor power needs a 1-d density".into()));
        }
        let n = f.grid().n();
        check_shape(n_particles, n)?;
        let fv = f.values();
        let len = n.pow(n_particles as u32);
        let values = (0..len)
            .map(|idx| {
                let mut rem = idx;
                let mut p = 1.0;
                for _ in 0..n_particles {
                    p *= fv[rem % n];
                    rem /= n;
                }
                p
            })
            .collect();
        Self::new(n_particles, n, values, f.time())
    }

    pub fn n_particles(&self) -> usize {
        self.n_particles
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    fn cell_volume(&self) -> f64 {
        (1.0 / self.n as f64).powi(self.n_particles as i32)
    }

    pub fn mass(&self) -> f64 {
        self.cell_volume() * self.values.iter().sum::<f64>()
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// `int f_N log f_N` with `0 log 0 = 0`.
    pub fn entropy(&self) -> f64 {
        self.cell_volume()
            * self
                .values
                .iter()
                .map(|&f| if f > 0.0 { f * f.ln() } else { 0.0 })
                .sum::<f64>()
    }

    /// Exchange particle axes `p` and `q`.
    pub fn swap_axes(&self, p: usize, q: usize) -> Self {
        let n = self.n;
        let dims = self.n_particles;
        let mut out = self.values.clone();
        for (idx, &v) in self.values.iter().enumerate() {
            let mut multi = [0usize; 3];
            let mut rem = idx;
            for axis in (0..dims).rev() {
                multi[axis] = rem % n;
                rem /= n;
            }
            multi.swap(p, q);
            let target = multi[..dims].iter().fold(0, |acc, &m| acc * n + m);
            out[target] = v;
        }
        Self {
            values: out,
            ..self.clone()
        }
    }

    /// Largest deviation from invariance under every pair exchange.
    pub fn exchange_asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for p in 0..self.n_particles {
            for q in (p + 1)..self.n_particles {
                let s = self.swap_axes(p, q);
                for (a, b) in self.values.iter().zip(&s.values) {
                    worst = worst.max((a - b).abs());
                }
            }
        }
        worst
    }

    /// k-particle marginal `int f_N dv^{k+1} ... dv^N` (k = 1, 2).
    pub fn marginal(&self, k: usize) -> Result<DensityField> {
        if k == 0 || k >= self.n_particles {
            return Err(Error::InvalidConfig(format!(
                "marginal order must satisfy 1 <= k < N = {}, got {k}",
                self.n_particles
            )));
        }
        let n = self.n;
        let inner = n.pow((self.n_particles - k) as u32);
        let weight = (1.0 / n as f64).powi((self.n_particles - k) as i32);
        let values = self
            .values
            .chunks(inner)
            .map(|c| weight * c.iter().sum::<f64>())
            .collect();
        DensityField::new(PeriodicGrid::new(k, n)?, values, self.time)
    }

    /// Law of the wrapped separation `v^1 - v^2` on the circle.
    pub fn separation_law(&self) -> Result<DensityField> {
        let n = self.n;
        let pair = if self.n_particles == 2 {
            self.values.clone()
        } else {
            self.marginal(2)?.values().to_vec()
        };
        let h = 1.0 / n as f64;
        let values = (0..n)
            .map(|d| h * (0..n).map(|i| pair[i * n + (i + n - d) % n]).sum::<f64>())
            .collect();
        DensityField::new(PeriodicGrid::new(1, n)?, values, self.time)
    }

    /// `H_N(f_N | f^{(x)N}) = (1/N) int f_N log(f_N / f^{(x)N})`.
    pub fn relative_entropy(&self, f: &DensityField) -> Result<f64> {
        relative_entropy_to_tensor(&self.values, self.n, self.n_particles, f)
    }
}

/// `(1/k) int g log(g / f^{(x)k})` for a density `g` tabulated on `n^k`.
pub fn relative_entropy_to_tensor(g: &[f64], n: usize, k: usize, f: &DensityField) -> Result<f64> {
    if f.grid().dim() != 1 || f.grid().n() != n {
        return Err(Error::ShapeMismatch(
            "reference density must be 1-d on the same axis grid".into(),
        ));
    }
    if g.len() != n.pow(k as u32) {
        return Err(Error::ShapeMismatch(format!("{} values for an {n}^{k} grid", g.len())));
    }
    if let Some(pos) = f.values().iter().position(|&x| !(x > 0.0)) {
        return Err(Error::InvalidDensity(format!(
            "reference density vanishes at node {pos}"
        )));
    }
    let log_f: Vec<f64> = f.values().iter().map(|x| x.ln()).collect();
    let mut acc = 0.0;
    for (idx, &p) in g.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        let mut rem = idx;
        let mut log_ref = 0.0;
        for _ in 0..k {
            log_ref += log_f[rem % n];
            rem /= n;
        }
        acc += p * (p.ln() - log_ref);
    }
    Ok(acc * (1.0 / n as f64).powi(k as i32) / k as f64)
}

/// Terms of the relative-entropy balance `dH_N/dt = I1 + I2 + I3` at one time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropyBalance {
    pub time: f64,
    pub relative_entropy: f64,
    pub i1: f64,
    pub i2: f64,
    pub i3: f64,
    /// `-I1`.
    pub dissipation: f64,
    /// `(1/N) sum_i int f_N |d_i log(f_N / fbar_N)|^2`.
    pub relative_fisher: f64,
    /// Ellipticity bound `-lambda1 (N-1)/N * relative_fisher >= I1`.
    pub i1_bound: f64,
    /// Young bound `lambda1/2 * fisher + (1/lambda1)(...) >= I2 + I3`.
    pub i23_bound: f64,
}

impl EntropyBalance {
    pub fn rate(&self) -> f64 {
        self.i1 + self.i2 + self.i3
    }
}

/// One entry of the entropy-solution inequality check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropyResidual {
    pub time: f64,
    pub entropy: f64,
    /// `sum_i int f_N A_i |d_i log f_N|^2` at this time.
    pub fisher: f64,
    /// `sum_i int f_N (1/N) sum_{j != i} div b(v^i - v^j)` at this time.
    pub div_b: f64,
    /// Left minus right side of the inequality up to this time.
    pub residual: f64,
}

#[derive(Debug)]
pub struct LiouvilleSolver<'a> {
    field: &'a KernelField,
    n_particles: usize,
    n: usize,
    fft: GridFft,
    diffusion: Vec<Vec<f64>>,
    drift: Vec<Vec<f64>>,
    div_drift_sum: Vec<f64>,
    stiff: f64,
    max_drift: f64,
    laplacian: Vec<f64>,
}

impl<'a> LiouvilleSolver<'a> {
    pub fn new(field: &'a KernelField, n_particles: usize, n: usize) -> Result<Self> {
        check_shape(n_particles, n)?;
        if field.dim() != 1 {
            return Err(Error::ShapeMismatch(format!(
                "Liouville solves need a 1-d kernel, got d = {}",
                field.dim()
            )));
        }
        if n < 4 * field.max_wave() as usize {
            return Err(Error::GridTooCoarse(format!(
                "n = {n} but the kernel needs n >= {}",
                4 * field.max_wave()
            )));
        }
        let len = n.pow(n_particles as u32);
        let h = 1.0 / n as f64;
        let inv_n = 1.0 / n_particles as f64;
        let mut diffusion = vec![vec![0.0; len]; n_particles];
        let mut drift = vec![vec![0.0; len]; n_particles];
        let mut div_drift_sum = vec![0.0; len];
        let mut coords = [0.0; 3];
        for idx in 0..len {
            let mut rem = idx;
            for axis in (0..n_particles).rev() {
                coords[axis] = (rem % n) as f64 * h;
                rem /= n;
            }
            for i in 0..n_particles {
                let mut a = 0.0;
                let mut b = 0.0;
                for j in 0..n_particles {
                    if j == i {
                        continue;
                    }
                    let z = [wrap_centered(coords[i] - coords[j])];
                    let (am, bv) = field.eval_a_b(&z);
                    a += am[0][0];
                    b += bv[0];
                    div_drift_sum[idx] += inv_n * field.eval_div_b(&z);
                }
                diffusion[i][idx] = inv_n * a;
                drift[i][idx] = inv_n * b;
            }
        }
        let max_drift = drift.iter().flatten().fold(0.0f64, |m, x| m.max(x.abs()));
        let fft = GridFft::new(n, n_particles);
        Ok(Self {
            field,
            n_particles,
            n,
            laplacian: fft.laplacian_symbols(),
            fft,
            diffusion,
            drift,
            div_drift_sum,
            stiff: field.upper_bound() * (n_particles as f64 - 1.0) * inv_n,
            max_drift,
        })
    }

    pub fn n_particles(&self) -> usize {
        self.n_particles
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn field(&self) -> &KernelField {
        self.field
    }

    /// Largest admissible step: `h^2 / (2N (c - lambda1 (N-1)/N))` for the
    /// explicit elliptic remainder, `h / max|beta|` for advection.
    pub fn max_stable_dt(&self) -> f64 {
        let h = 1.0 / self.n as f64;
        let scale = (self.n_particles as f64 - 1.0) / self.n_particles as f64;
        let spread = (self.field.upper_bound() - self.field.lower_bound()) * scale;
        let diffusive = if spread > 0.0 {
            h * h / (2.0 * self.n_particles as f64 * spread)
        } else {
            f64::INFINITY
        };
        let advective = if self.max_drift > 0.0 {
            h / self.max_drift
        } else {
            f64::INFINITY
        };
        diffusive.min(advective)
    }

    fn check(&self, f: &LiouvilleDensity) -> Result<()> {
        if f.n_particles != self.n_particles || f.n != self.n {
            return Err(Error::ShapeMismatch(format!(
                "density on {}^{} grid, solver on {}^{}",
                f.n, f.n_particles, self.n, self.n_particles
            )));
        }
        Ok(())
    }

    fn gradients(&self, values: &[f64]) -> (Vec<Complex64>, Vec<Vec<f64>>) {
        let spectrum = self.fft.forward_real(values);
        let grads = (0..self.n_particles)
            .map(|axis| {
                let mut s = spectrum.clone();
                self.fft.apply_derivative(&mut s, axis);
                self.fft.inverse(&mut s);
                s.iter().map(|c| c.re).collect()
            })
            .collect();
        (spectrum, grads)
    }

    /// One exponential-Euler step.
    pub fn step(&self, f: &LiouvilleDensity, dt: f64) -> Result<LiouvilleDensity> {
        self.check(f)?;
        let len = f.values.len();
        let (spectrum, grads) = self.gradients(&f.values);
        let mut rhs = vec![Complex64::new(0.0, 0.0); len];
        let mut flux = vec![Complex64::new(0.0, 0.0); len];
        for axis in 0..self.n_particles {
            let a = &self.diffusion[axis];
            let b = &self.drift[axis];
            let g = &grads[axis];
            for (i, q) in flux.iter_mut().enumerate() {
                *q = Complex64::new((a[i] - self.stiff) * g[i] - b[i] * f.values[i], 0.0);
            }
            self.fft.forward(&mut flux);
            self.fft.add_derivative(&mut flux, axis, Some(&mut rhs));
        }
        rhs[0] = Complex64::new(0.0, 0.0);
        let mut next = spectrum;
        for ((x, r), &lap) in next.iter_mut().zip(&rhs).zip(&self.laplacian) {
            let l = -self.stiff * lap;
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
        let mut out = LiouvilleDensity::new(self.n_particles, self.n, values, t_next)?;
        let mass = out.mass();
        for v in &mut out.values {
            *v /= mass;
        }
        Ok(out)
    }

    /// Integrate to `horizon` with steps of at most `dt`, keeping every
    /// `stride`-th state (the initial and final states always included).
    pub fn solve(&self, f0: &LiouvilleDensity, horizon: f64, dt: f64, stride: usize) -> Result<Vec<LiouvilleDensity>> {
        let plan = TimePlan::new(horizon, dt, stride, self.max_stable_dt())?;
        self.check(f0)?;
        let mut current = f0.clone();
        let mut out = vec![current.clone()];
        for s in 1..=plan.steps {
            current = self.step(&current, plan.h)?;
            current.time = f0.time + s as f64 * plan.h;
            if plan.keep(s) {
                out.push(current.clone());
            }
        }
        Ok(out)
    }

    /// Entropy-balance terms of `f_N` against the mean-field density `f` at
    /// the same time.
    pub fn entropy_balance(
        &self,
        f_n: &LiouvilleDensity,
        f: &DensityField,
        meanfield: &MeanFieldSolver<'_>,
    ) -> Result<EntropyBalance> {
        self.check(f_n)?;
        if f.grid().dim() != 1 || f.grid().n() != self.n {
            return Err(Error::ShapeMismatch(
                "mean-field density must share the axis grid".into(),
            ));
        }
        if !(f.min() > 0.0) || !(f_n.min() > 0.0) {
            return Err(Error::InvalidDensity(
                "entropy balance needs strictly positive densities".into(),
            ));
        }
        let conv = meanfield.convolve(f)?;
        let grid_fft = GridFft::new(self.n, 1);
        let df = grid_fft.derivative(f.values(), 0);
        let log_grad: Vec<f64> = df.iter().zip(f.values()).map(|(d, v)| d / v).collect();
        let (_, grads) = self.gradients(&f_n.values);
        let n = self.n;
        let np = self.n_particles;
        let mut sums = [0.0f64; 6];
        for (idx, &p) in f_n.values.iter().enumerate() {
            let mut rem = idx;
            let mut multi = [0usize; 3];
            for axis in (0..np).rev() {
                multi[axis] = rem % n;
                rem /= n;
            }
            for i in 0..np {
                let m = multi[i];
                let r = grads[i][idx] / p - log_grad[m];
                let da = conv.a[m][0][0] - self.diffusion[i][idx];
                let db = conv.b[m][0] - self.drift[i][idx];
                sums[0] -= p * self.diffusion[i][idx] * r * r;
                sums[1] += p * da * r * log_grad[m];
                sums[2] -= p * db * r;
                sums[3] += p * r * r;
                sums[4] += p * da * da * log_grad[m] * log_grad[m];
                sums[5] += p * db * db;
            }
        }
        let scale = f_n.cell_volume() / np as f64;
        for s in &mut sums {
            *s *= scale;
        }
        let lambda1 = self.field.lower_bound();
        let [i1, i2, i3, fisher, young_a, young_b] = sums;
        Ok(EntropyBalance {
            time: f_n.time,
            relative_entropy: f_n.relative_entropy(f)?,
            i1,
            i2,
            i3,
            dissipation: -i1,
            relative_fisher: fisher,
            i1_bound: -lambda1 * (np as f64 - 1.0) / np as f64 * fisher,
            i23_bound: 0.5 * lambda1 * fisher + (young_a + young_b) / lambda1,
        })
    }

    /// Integrands of the entropy-solution inequality at one time:
    /// `(int f log f, sum_i int A_i |d_i f|^2 / f, int f sum_i (1/N) sum_j div b)`.
    pub fn entropy_terms(&self, f_n: &LiouvilleDensity) -> Result<(f64, f64, f64)> {
        self.check(f_n)?;
        let (_, grads) = self.gradients(&f_n.values);
        let mut fisher = 0.0;
        let mut div_b = 0.0;
        for (idx, &p) in f_n.values.iter().enumerate() {
            if p > 0.0 {
                for i in 0..self.n_particles {
                    fisher += self.diffusion[i][idx] * grads[i][idx] * grads[i][idx] / p;
                }
            }
            div_b += p * self.div_drift_sum[idx];
        }
        let vol = f_n.cell_volume();
        Ok((f_n.entropy(), fisher * vol, div_b * vol))
    }

    /// Residual of the entropy-solution inequality along a trajectory, with
    /// the time integrals taken by the trapezoid rule over the snapshots.
    pub fn entropy_solution_residual(&self, trajectory: &[LiouvilleDensity]) -> Result<Vec<EntropyResidual>> {
        let terms: Vec<(f64, f64, f64)> = trajectory
            .iter()
            .map(|f| self.entropy_terms(f))
            .collect::<Result<_>>()?;
        let mut out = Vec::with_capacity(trajectory.len());
        let mut fisher_int = 0.0;
        let mut div_int = 0.0;
        for (k, (f, &(e, fi, db))) in trajectory.iter().zip(&terms).enumerate() {
            if k > 0 {
                let dt = f.time - trajectory[k - 1].time;
                fisher_int += 0.5 * dt * (fi + terms[k - 1].1);
                div_int += 0.5 * dt * (db + terms[k - 1].2);
            }
            out.push(EntropyResidual {
                time: f.time,
                entropy: e,
                fisher: fi,
                div_b: db,
                residual: e + fisher_int + div_int - terms[0].0,
            });
        }
        Ok(out)
    }
}

/// Uniform time grid hitting the horizon exactly.
#[derive(Debug, Clone, Copy)]
struct TimePlan {
    steps: usize,
    h: f64,
    stride: usize,
}

impl TimePlan {
    fn new(horizon: f64, dt: f64, stride: usize, limit: f64) -> Result<Self> {
        if !(dt > 0.0) || !(horizon >= 0.0) || stride == 0 {
            return Err(Error::InvalidConfig(format!(
                "need dt > 0, T >= 0 and stride >= 1, got dt = {dt}, T = {horizon}, stride = {stride}"
            )));
        }
        if dt > limit * (1.0 + 1e-12) {
            return Err(Error::TimeStepTooLarge { dt, limit });
        }
        let steps = if horizon == 0.0 {
            0
        } else {
            ((horizon / dt) - 1e-9).ceil().max(1.0) as usize
        };
        let h = if steps == 0 { 0.0 } else { horizon / steps as f64 };
        Ok(Self { steps, h, stride })
    }

    fn keep(&self, s: usize) -> bool {
        s.is_multiple_of(self.stride) || s == self.steps
    }
}

/// Liouville and mean-field trajectories sampled at the same times.
#[derive(Debug, Clone)]
pub struct CoupledTrajectory {
    pub liouville: Vec<LiouvilleDensity>,
    pub meanfield: Vec<DensityField>,
}

impl CoupledTrajectory {
    /// `(t, H_N(t))` series.
    pub fn relative_entropy_series(&self) -> Result<Vec<(f64, f64)>> {
        self.liouville
            .iter()
            .zip(&self.meanfield)
            .map(|(fl, fm)| Ok((fl.time(), fl.relative_entropy(fm)?)))
            .collect()
    }
}

/// Evolve `f0^{(x)N}` under the Liouville equation and `f0` under the
/// mean-field equation with identical steps.
pub fn evolve_coupled(
    field: &KernelField,
    f0: &DensityField,
    n_particles: usize,
    horizon: f64,
    dt: f64,
    stride: usize,
) -> Result<CoupledTrajectory> {
    let n = f0.grid().n();
    let solver = LiouvilleSolver::new(field, n_particles, n)?;
    let mut meanfield = MeanFieldSolver::new(field, *f0.grid())?;
    f0.check_normalized()?;
    let limit = solver.max_stable_dt().min(meanfield.max_stable_dt());
    let plan = TimePlan::new(horizon, dt, stride, limit)?;
    let mut fl = LiouvilleDensity::tensor(f0, n_particles)?;
    let mut fm = f0.clone();
    let mut out = CoupledTrajectory {
        liouville: vec![fl.clone()],
        meanfield: vec![fm.clone()],
    };
    for s in 1..=plan.steps {
        fl = solver.step(&fl, plan.h)?;
        fm = meanfield.step(&fm, plan.h)?;
        let t = f0.time() + s as f64 * plan.h;
        fl.time = t;
        fm = DensityField::new(*fm.grid(), fm.values().to_vec(), t)?;
        if plan.keep(s) {
            out.liouville.push(fl.clone());
            out.meanfield.push(fm.clone());
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{build_kernel, KernelSpec};
    use crate::profile::InitialProfile;
    use std::f64::consts::PI;

    fn density_1d(n: usize, eps: f64) -> DensityField {
        DensityField::from_profile(PeriodicGrid::new(1, n).unwrap(), &InitialProfile::cosine_1d(1, eps)).unwrap()
    }

    #[test]
    fn shape_validation() {
        let field = build_kernel(&KernelSpec::canonical_1d()).unwrap();
        assert!(LiouvilleSolver::new(&field, 4, 8).is_err());
        assert!(LiouvilleSolver::new(&field, 2, 2).is_err());
        let field2 = build_kernel(&KernelSpec::constant(2, 1.0)).unwrap();
        assert!(LiouvilleSolver::new(&field2, 2, 8).is_err());
        assert!(LiouvilleDensity::new(2, 4, vec![1.0; 15], 0.0).is_err());
    }

    #[test]
    fn product_marginal_and_zero_entropy() {
        let g = density_1d(16, 0.3);
        let f2 = LiouvilleDensity::tensor(&g, 2).unwrap();
        let m = f2.marginal(1).unwrap();
        assert!(m.sup_distance(&g) < 1e-12);
        assert!(f2.relative_entropy(&g).unwrap().abs() < 1e-12);
        let f3 = LiouvilleDensity::tensor(&g, 3).unwrap();
        let m2 = f3.marginal(2).unwrap();
        let g2 = LiouvilleDensity::tensor(&g, 2).unwrap();
        for (a, b) in m2.values().iter().zip(g2.values()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(f3.marginal(3).is_err());
        assert!(f3.marginal(0).is_err());
    }

    #[test]
    fn two_point_relative_entropy() {
        // n = 2 nodes: masses (0.5, 0.5) per coordinate vs (0.25, 0.75)
        let grid = PeriodicGrid::new(1, 2).unwrap();
        let q = DensityField::new(grid, vec![0.5, 1.5], 0.0).unwrap();
        let p = DensityField::new(grid, vec![1.0, 1.0], 0.0).unwrap();
        let f_n = LiouvilleDensity::tensor(&p, 2).unwrap();
        let kl = 0.5 * (0.5f64 / 0.25).ln() + 0.5 * (0.5f64 / 0.75).ln();
        let h = f_n.relative_entropy(&q).unwrap();
        assert!((h - kl).abs() < 1e-15, "{h} vs {kl}");
    }

    #[test]
    fn zero_reference_node_is_rejected() {
        let grid = PeriodicGrid::new(1, 2).unwrap();
        let q = DensityField::new(grid, vec![0.0, 2.0], 0.0).unwrap();
        let f_n = LiouvilleDensity::uniform(2, 2).unwrap();
        assert!(f_n.relative_entropy(&q).is_err());
    }

    #[test]
    fn constant_kernel_heat_decay() {
        // A_i = lambda/2: a product cosine mode decays at lambda/2 (2 pi k)^2
        let lambda = 1.2;
        let field = build_kernel(&KernelSpec::constant(1, lambda)).unwrap();
        let n = 32;
        let solver = LiouvilleSolver::new(&field, 2, n).unwrap();
        let f0 = LiouvilleDensity::from_fn(2, n, |v| 1.0 + 0.4 * (2.0 * PI * v[0]).cos()).unwrap();
        let t = 0.05;
        let traj = solver.solve(&f0, t, 1e-3, 1000).unwrap();
        let last = traj.last().unwrap();
        let decay = (-0.5 * lambda * (2.0 * PI).powi(2) * t).exp();
        let exact = LiouvilleDensity::from_fn(2, n, |v| 1.0 + 0.4 * decay * (2.0 * PI * v[0]).cos()).unwrap();
        for (a, b) in last.values().iter().zip(exact.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn pair_stationary_state() {
        // f_2 proportional to a(v1 - v2) has zero flux for N = 2
        let field = build_kernel(&KernelSpec::canonical_1d()).unwrap();
        let n = 32;
        let solver = LiouvilleSolver::new(&field, 2, n).unwrap();
        let f0 = LiouvilleDensity::from_fn(2, n, |v| 1.0 + 0.5 * (2.0 * PI * (v[0] - v[1])).cos()).unwrap();
        let dt = 0.5 * solver.max_stable_dt();
        let f1 = solver.step(&f0, dt).unwrap();
        for (a, b) in f1.values().iter().zip(f0.values()) {
            assert!((a - b).abs() < 1e-12);
        }
        // the uniform joint law is not stationary for this kernel
        let u = LiouvilleDensity::uniform(2, n).unwrap();
        let u1 = solver.step(&u, dt).unwrap();
        let drift: f64 = u1.values().iter().map(|x| (x - 1.0).abs()).fold(0.0, f64::max);
        assert!(drift > 1e-6);
    }

    #[test]
    fn uniform_stationary_for_constant_kernel() {
        let field = build_kernel(&KernelSpec::constant(1, 0.9)).unwrap();
        let solver = LiouvilleSolver::new(&field, 3, 8).unwrap();
        let u = LiouvilleDensity::uniform(3, 8).unwrap();
        let out = solver.solve(&u, 0.01, 1e-3, 1).unwrap();
        for f in &out {
            assert!(f.values().iter().all(|x| (x - 1.0).abs() < 1e-12));
        }
    }

    #[test]
    fn tensor_initial_balance_vanishes() {
        let field = build_kernel(&KernelSpec::canonical_1d()).unwrap();
        let g = density_1d(16, 0.3);
        let solver = LiouvilleSolver::new(&field, 2, 16).unwrap();
        let mf = MeanFieldSolver::new(&field, *g.grid()).unwrap();
        let f2 = LiouvilleDensity::tensor(&g, 2).unwrap();
        let eb = solver.entropy_balance(&f2, &g, &mf).unwrap();
        assert!(eb.i1.abs() < 1e-12 && eb.i2.abs() < 1e-12 && eb.i3.abs() < 1e-12);
        assert!(eb.relative_entropy.abs() < 1e-12);
    }

    #[test]
    fn separation_of_pair_function() {
        let n = 16;
        let g = |z: f64| 1.0 + 0.5 * (2.0 * PI * z).cos();
        let f2 = LiouvilleDensity::from_fn(2, n, |v| g(v[0] - v[1])).unwrap();
        let sep = f2.separation_law().unwrap();
        for (d, &x) in sep.values().iter().enumerate() {
            assert!((x - g(d as f64 / n as f64)).abs() < 1e-12);
        }
        let f3 = LiouvilleDensity::from_fn(3, 8, |v| g(v[0] - v[1]) * (1.0 + 0.2 * (2.0 * PI * v[2]).sin())).unwrap();
        let sep3 = f3.separation_law().unwrap();
        assert!((sep3.values()[0] - 1.5).abs() < 1e-12);
    }
}
