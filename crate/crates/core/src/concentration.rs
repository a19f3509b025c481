//! Executable checks of the two concentration estimates behind the entropy
//! method: a change-of-measure (Donsker-Varadhan type) inequality on finite
//! product spaces, and uniform-in-N exponential moments of centered sums.

use std::f64::consts::{E, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernel::KernelField;
use crate::linalg::MAX_DIM;
use crate::meanfield::DensityField;
use crate::particles::replica_key;
use crate::profile::InitialProfile;
use crate::spectral::index_of;

/// Strict sup-norm threshold `1/(2e)` minus a safety gap.
pub fn psi_threshold() -> f64 {
    1.0 / (2.0 * E) - 1e-6
}

/// Finite outcome set `{0..s}` with a joint law `p` on `s^N`, a marginal
/// reference law `q` on `s`, and a test function `phi` on `s^N`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiscreteSpace {
    pub outcomes: usize,
    pub n_particles: usize,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub phi: Vec<f64>,
}

impl DiscreteSpace {
    pub fn new(outcomes: usize, n_particles: usize, p: Vec<f64>, q: Vec<f64>, phi: Vec<f64>) -> Result<Self> {
        if outcomes == 0 || n_particles == 0 {
            return Err(Error::InvalidConfig(
                "need at least one outcome and one particle".into(),
            ));
        }
        let size = outcomes
            .checked_pow(n_particles as u32)
            .filter(|&s| s <= 1 << 22)
            .ok_or_else(|| Error::InvalidConfig("product space too large for exhaustive summation".into()))?;
        if p.len() != size || phi.len() != size || q.len() != outcomes {
            return Err(Error::ShapeMismatch(format!(
                "expected p, phi of length {size} and q of length {outcomes}"
            )));
        }
        for (name, v) in [("p", &p), ("q", &q)] {
            if v.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
                return Err(Error::InvalidDensity(format!(
                    "{name} has a negative or non-finite entry"
                )));
            }
            let total: f64 = v.iter().sum();
            if (total - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidDensity(format!("{name} sums to {total}")));
            }
        }
        if phi.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidConfig("test function must be finite".into()));
        }
        Ok(Self {
            outcomes,
            n_particles,
            p,
            q,
            phi,
        })
    }

    /// `log q^{(x)N}` at a flat product index.
    fn log_tensor(&self, log_q: &[f64], mut idx: usize) -> f64 {
        let mut s = 0.0;
        for _ in 0..self.n_particles {
            s += log_q[idx % self.outcomes];
            idx /= self.outcomes;
        }
        s
    }

    /// `(1/N) sum p log(p / q^{(x)N})`.
    pub fn relative_entropy(&self) -> Result<f64> {
        let log_q: Vec<f64> = self.q.iter().map(|x| x.ln()).collect();
        let mut acc = 0.0;
        for (idx, &p) in self.p.iter().enumerate() {
            if p > 0.0 {
                let lq = self.log_tensor(&log_q, idx);
                if lq == f64::NEG_INFINITY {
                    return Err(Error::InfiniteEntropy(format!(
                        "reference law vanishes at product outcome {idx} where p > 0"
                    )));
                }
                acc += p * (p.ln() - lq);
            }
        }
        Ok(acc / self.n_particles as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChangeOfMeasure {
    pub lhs: f64,
    pub rhs: f64,
    pub relative_entropy: f64,
    pub holds: bool,
}

/// `sum p phi <= (1/eta) (H_N(p | q^N) + (1/N) log sum q^N exp(N eta phi))`
/// by exhaustive summation over the product space.
pub fn change_of_measure_check(space: &DiscreteSpace, eta: f64) -> Result<ChangeOfMeasure> {
    if !(eta > 0.0) || !eta.is_finite() {
        return Err(Error::InvalidConfig(format!("eta must be positive, got {eta}")));
    }
    let n = space.n_particles as f64;
    let h = space.relative_entropy()?;
    let lhs: f64 = space.p.iter().zip(&space.phi).map(|(p, f)| p * f).sum();
    let log_q: Vec<f64> = space.q.iter().map(|x| x.ln()).collect();
    // log-sum-exp of log q^N + N eta phi over outcomes with q^N > 0
    let exps: Vec<f64> = space
        .phi
        .iter()
        .enumerate()
        .map(|(idx, &f)| space.log_tensor(&log_q, idx) + n * eta * f)
        .filter(|x| x.is_finite())
        .collect();
    let top = exps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = top + exps.iter().map(|x| (x - top).exp()).sum::<f64>().ln();
    let rhs = (h + lse / n) / eta;
    Ok(ChangeOfMeasure {
        lhs,
        rhs,
        relative_entropy: h,
        holds: lhs <= rhs + 1e-12,
    })
}

/// Random instance with `outcomes <= max_outcomes`, `N <= max_particles`.
/// The joint law is sometimes a perturbed tensor power and sometimes has
/// zero entries; the reference law is strictly positive.
pub fn random_instance<R: Rng + ?Sized>(
    rng: &mut R,
    max_outcomes: usize,
    max_particles: usize,
) -> (DiscreteSpace, f64) {
    let s = rng.random_range(1..=max_outcomes);
    let n = rng.random_range(1..=max_particles);
    let size = s.pow(n as u32);
    let mut q: Vec<f64> = (0..s).map(|_| 0.05 + rng.random::<f64>()).collect();
    normalize(&mut q);
    let mut p: Vec<f64> = match rng.random_range(0..3) {
        0 => (0..size).map(|_| rng.random::<f64>()).collect(),
        1 => (0..size)
            .map(|_| {
                if rng.random::<f64>() < 0.4 {
                    0.0
                } else {
                    rng.random::<f64>()
                }
            })
            .collect(),
        _ => (0..size)
            .map(|mut idx| {
                let mut w = 1.0;
                for _ in 0..n {
                    w *= q[idx % s];
                    idx /= s;
                }
                w * (1.0 + 0.3 * (rng.random::<f64>() - 0.5))
            })
            .collect(),
    };
    if p.iter().all(|&x| x == 0.0) {
        p[0] = 1.0;
    }
    normalize(&mut p);
    let amp = 10f64.powf(rng.random_range(-1.0..1.0));
    let phi = (0..size).map(|_| amp * (2.0 * rng.random::<f64>() - 1.0)).collect();
    let eta = 10f64.powf(rng.random_range(-2.0..1.0));
    let space = DiscreteSpace::new(s, n, p, q, phi).expect("generated instance is valid");
    (space, eta)
}

fn normalize(v: &mut [f64]) {
    let total: f64 = v.iter().sum();
    for x in v.iter_mut() {
        *x /= total;
    }
}

/// Scalar kernel component fed to the centered test function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum PsiEntry {
    /// Diffusion entry `a_{alpha beta}`.
    A(usize, usize),
    /// Drift entry `b_alpha`.
    B(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct PsiMode {
    wave: [i64; MAX_DIM],
    /// Coefficient of `cos` (diffusion entry) or `sin` (drift entry).
    coeff: f64,
    /// `int f(v) e^{-2 pi i k.v} dv`.
    transform: Complex64,
}

/// `psi(z, v) = scale * (c*f(z) - c(z - v))` for a scalar kernel entry `c`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PsiFunction {
    pub entry: PsiEntry,
    pub dim: usize,
    /// `eta = 2^{-m}`.
    pub eta: f64,
    /// Multiplier in front of the bracket; `sqrt(eta)` unless rescaled.
    pub scale: f64,
    /// Certified bound on `sup |c*f(z) - c(w)|`.
    pub bracket_sup: f64,
    /// `scale * bracket_sup`.
    pub sup_norm: f64,
    /// `max_z |int psi(z, v) f(v) dv|` by grid quadrature.
    pub centering_residual: f64,
    #[serde(skip)]
    constant: f64,
    #[serde(skip)]
    mass: f64,
    #[serde(skip)]
    modes: Vec<PsiMode>,
}

impl PsiFunction {
    fn is_drift(&self) -> bool {
        matches!(self.entry, PsiEntry::B(_))
    }

    /// Kernel entry `c(w)`.
    pub fn kernel(&self, w: &[f64]) -> f64 {
        let drift = self.is_drift();
        self.constant
            + self
                .modes
                .iter()
                .map(|m| {
                    let ph = 2.0 * PI * dot(&m.wave, w, self.dim);
                    m.coeff * if drift { ph.sin() } else { ph.cos() }
                })
                .sum::<f64>()
    }

    /// `c * f (z)`, exact from the Fourier transform of `f`.
    pub fn convolved(&self, z: &[f64]) -> f64 {
        let drift = self.is_drift();
        self.constant * self.mass
            + self
                .modes
                .iter()
                .map(|m| {
                    let ph = 2.0 * PI * dot(&m.wave, z, self.dim);
                    let e = Complex64::from_polar(1.0, ph) * m.transform;
                    m.coeff * if drift { e.im } else { e.re }
                })
                .sum::<f64>()
    }

    pub fn eval(&self, z: &[f64], v: &[f64]) -> f64 {
        let mut w = [0.0; MAX_DIM];
        for a in 0..self.dim {
            w[a] = z[a] - v[a];
        }
        self.scale * (self.convolved(z) - self.kernel(&w[..self.dim]))
    }

    /// Same function rescaled so that its certified sup-norm equals
    /// `target`; used to break the small-norm hypothesis on purpose.
    pub fn rescaled_to(&self, target: f64) -> Self {
        let mut out = self.clone();
        if self.bracket_sup > 0.0 {
            out.scale = target / self.bracket_sup;
            out.sup_norm = target;
            out.centering_residual *= out.scale / self.scale.max(f64::MIN_POSITIVE);
        }
        out
    }
}

fn dot(k: &[i64; MAX_DIM], x: &[f64], dim: usize) -> f64 {
    (0..dim).map(|a| k[a] as f64 * x[a]).sum()
}

fn scan_points(dim: usize) -> usize {
    match dim {
        1 => 4096,
        2 => 256,
        _ => 64,
    }
}

fn for_each_scan_point(dim: usize, mut visit: impl FnMut(&[f64])) {
    let m = scan_points(dim);
    let total = m.pow(dim as u32);
    let mut x = [0.0; MAX_DIM];
    for idx in 0..total {
        let mut rem = idx;
        for a in (0..dim).rev() {
            x[a] = (rem % m) as f64 / m as f64;
            rem /= m;
        }
        visit(&x[..dim]);
    }
}

/// Build the centered test function for one kernel entry and pick the
/// largest dyadic `eta <= 1` with certified `sqrt(eta) * sup < 1/(2e)`.
pub fn build_psi(field: &KernelField, f: &DensityField, entry: PsiEntry) -> Result<PsiFunction> {
    let dim = field.dim();
    if f.grid().dim() != dim {
        return Err(Error::ShapeMismatch("density and kernel dimensions differ".into()));
    }
    f.check_normalized()?;
    f.grid().check_resolves(field)?;
    let constant = match entry {
        PsiEntry::A(i, j) if i < dim && j < dim => {
            if i == j {
                field.lambda0()
            } else {
                0.0
            }
        }
        PsiEntry::B(i) if i < dim => 0.0,
        _ => {
            return Err(Error::InvalidConfig(format!(
                "entry {entry:?} out of range for d = {dim}"
            )));
        }
    };
    let coeffs = f.fourier_coefficients();
    let n = f.grid().n();
    let modes: Vec<PsiMode> = field
        .modes()
        .iter()
        .map(|m| {
            let coeff = match entry {
                PsiEntry::A(i, j) => m.a[i][j],
                PsiEntry::B(i) => m.b[i],
            };
            let mut flat = 0;
            for a in 0..dim {
                let j = index_of(m.wave[a], n).expect("grid resolves the kernel");
                flat = flat * n + j;
            }
            PsiMode {
                wave: m.wave,
                coeff,
                transform: coeffs[flat],
            }
        })
        .filter(|m| m.coeff != 0.0)
        .collect();
    let mut psi = PsiFunction {
        entry,
        dim,
        eta: 1.0,
        scale: 1.0,
        bracket_sup: 0.0,
        sup_norm: 0.0,
        centering_residual: 0.0,
        constant,
        mass: f.mass(),
        modes,
    };
    // scan c*f and c, then add the second-order grid margin
    let (mut gmin, mut gmax, mut cmin, mut cmax) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for_each_scan_point(dim, |x| {
        let g = psi.convolved(x);
        let c = psi.kernel(x);
        gmin = gmin.min(g);
        gmax = gmax.max(g);
        cmin = cmin.min(c);
        cmax = cmax.max(c);
    });
    let curvature: f64 = psi
        .modes
        .iter()
        .map(|m| {
            let k2: f64 = (0..dim).map(|a| (m.wave[a] as f64).powi(2)).sum();
            m.coeff.abs() * 4.0 * PI * PI * k2
        })
        .sum();
    let h = 1.0 / scan_points(dim) as f64;
    let margin = if psi.modes.is_empty() {
        0.0
    } else {
        curvature * dim as f64 * h * h / 8.0
    };
    psi.bracket_sup = ((gmax + margin) - (cmin - margin))
        .max((cmax + margin) - (gmin - margin))
        .max(0.0);
    if psi.modes.is_empty() {
        psi.bracket_sup = (psi.constant * (psi.mass - 1.0)).abs();
    }
    let threshold = psi_threshold();
    let mut eta: f64 = 1.0;
    while eta.sqrt() * psi.bracket_sup >= threshold {
        eta *= 0.5;
    }
    psi.eta = eta;
    psi.scale = eta.sqrt();
    psi.sup_norm = psi.scale * psi.bracket_sup;
    // centering by quadrature on the density grid (exact for these band limits)
    let grid = *f.grid();
    let vol = grid.cell_volume();
    let mut residual: f64 = 0.0;
    let probes = 64usize;
    for p in 0..probes {
        let mut z = [0.0; MAX_DIM];
        for (a, zz) in z.iter_mut().enumerate().take(dim) {
            *zz = ((p as f64 + 0.5) / probes as f64 + 0.37 * a as f64).fract();
        }
        let mut acc = 0.0;
        for (idx, &fv) in f.values().iter().enumerate() {
            acc += psi.eval(&z[..dim], &grid.node(idx)[..dim]) * fv;
        }
        residual = residual.max((acc * vol).abs());
    }
    psi.centering_residual = residual;
    Ok(psi)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentRow {
    pub n_particles: usize,
    pub samples: usize,
    pub mean: f64,
    pub standard_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExpMomentReport {
    pub sup_norm: f64,
    pub rows: Vec<MomentRow>,
    /// `est(N_max) <= 2 est(N_min) + 5 SE`, SE combining both rows.
    pub no_growth: bool,
    /// Every estimate is `>= 1 - 3 SE`.
    pub jensen_ok: bool,
}

pub const MOMENT_BATCH: usize = 1000;

/// Monte Carlo estimate of `E exp(((1/sqrt N) sum_j psi(v^1, v^j))^2)` with
/// `v^j` i.i.d. from `law`, per entry of `ladder`. Batches of
/// `MOMENT_BATCH` samples draw from their own stream, so results do not
/// depend on the worker count.
pub fn exp_moment_check(
    psi: &PsiFunction,
    law: &InitialProfile,
    ladder: &[usize],
    samples: usize,
    seed: u64,
) -> Result<ExpMomentReport> {
    law.validate()?;
    if law.dimension != psi.dim {
        return Err(Error::ShapeMismatch(
            "sampling law and test function dimensions differ".into(),
        ));
    }
    if ladder.is_empty() || ladder.contains(&0) || samples < 2 {
        return Err(Error::InvalidConfig(
            "need a nonempty ladder of N >= 1 and at least two samples".into(),
        ));
    }
    let dim = psi.dim;
    let batches = samples.div_ceil(MOMENT_BATCH);
    let mut rows = Vec::with_capacity(ladder.len());
    for &n in ladder {
        let key = replica_key(seed, n as u64);
        let partial: Vec<(f64, f64)> = (0..batches)
            .into_par_iter()
            .map(|b| {
                let mut rng = ChaCha8Rng::seed_from_u64(key);
                rng.set_stream(b as u64);
                let count = MOMENT_BATCH.min(samples - b * MOMENT_BATCH);
                let mut first = [0.0; MAX_DIM];
                let mut other = [0.0; MAX_DIM];
                let (mut s1, mut s2) = (0.0, 0.0);
                for _ in 0..count {
                    law.sample(&mut rng, &mut first);
                    let mut sum = psi.eval(&first[..dim], &first[..dim]);
                    for _ in 1..n {
                        law.sample(&mut rng, &mut other);
                        sum += psi.eval(&first[..dim], &other[..dim]);
                    }
                    let x = sum / (n as f64).sqrt();
                    let y = (x * x).exp();
                    s1 += y;
                    s2 += y * y;
                }
                (s1, s2)
            })
            .collect();
        let (s1, s2) = partial.iter().fold((0.0, 0.0), |acc, p| (acc.0 + p.0, acc.1 + p.1));
        let m = samples as f64;
        let mean = s1 / m;
        let var = ((s2 / m - mean * mean) * m / (m - 1.0)).max(0.0);
        rows.push(MomentRow {
            n_particles: n,
            samples,
            mean,
            standard_error: (var / m).sqrt(),
        });
    }
    let lo = rows.iter().min_by_key(|r| r.n_particles).expect("nonempty");
    let hi = rows.iter().max_by_key(|r| r.n_particles).expect("nonempty");
    let se = (hi.standard_error.powi(2) + 4.0 * lo.standard_error.powi(2)).sqrt();
    let no_growth = hi.mean <= 2.0 * lo.mean + 5.0 * se;
    let jensen_ok = rows.iter().all(|r| r.mean >= 1.0 - 3.0 * r.standard_error);
    Ok(ExpMomentReport {
        sup_norm: psi.sup_norm,
        rows,
        no_growth,
        jensen_ok,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{build_kernel, KernelSpec};
    use crate::meanfield::PeriodicGrid;

    #[test]
    fn zero_test_function_is_gibbs() {
        let space = DiscreteSpace::new(2, 2, vec![0.1, 0.2, 0.3, 0.4], vec![0.5, 0.5], vec![0.0; 4]).unwrap();
        let r = change_of_measure_check(&space, 0.7).unwrap();
        assert_eq!(r.lhs, 0.0);
        assert!((r.rhs - r.relative_entropy / 0.7).abs() < 1e-14);
        assert!(r.relative_entropy > 0.0 && r.holds);
    }

    #[test]
    fn support_violation_is_an_error() {
        let space = DiscreteSpace::new(2, 1, vec![0.5, 0.5], vec![1.0, 0.0], vec![0.0, 1.0]).unwrap();
        assert!(matches!(
            change_of_measure_check(&space, 1.0),
            Err(Error::InfiniteEntropy(_))
        ));
        assert!(DiscreteSpace::new(2, 1, vec![0.6, 0.6], vec![0.5, 0.5], vec![0.0; 2]).is_err());
    }

    #[test]
    fn canonical_psi_closed_form() {
        let field = build_kernel(&KernelSpec::canonical_1d()).unwrap();
        let f = DensityField::uniform(PeriodicGrid::new(1, 64).unwrap());
        let psi = build_psi(&field, &f, PsiEntry::A(0, 0)).unwrap();
        assert_eq!(psi.eta, 0.125);
        assert!((psi.bracket_sup - 0.5).abs() < 1e-5 && psi.bracket_sup >= 0.5);
        assert!(psi.sup_norm < 1.0 / (2.0 * E));
        assert!(psi.centering_residual <= 1e-10);
        for &(z, v) in &[(0.1, 0.3), (0.7, 0.05), (0.5, 0.5)] {
            let expected = -psi.scale * 0.5 * (2.0 * PI * (z - v)).cos();
            assert!((psi.eval(&[z], &[v]) - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn constant_kernel_psi_vanishes() {
        let field = build_kernel(&KernelSpec::constant(1, 2.0)).unwrap();
        let f = DensityField::uniform(PeriodicGrid::new(1, 16).unwrap());
        let psi = build_psi(&field, &f, PsiEntry::A(0, 0)).unwrap();
        assert!(psi.bracket_sup < 1e-12);
        assert_eq!(psi.eta, 1.0);
        assert!(psi.eval(&[0.2], &[0.9]).abs() < 1e-12);
        assert!(build_psi(&field, &f, PsiEntry::A(1, 0)).is_err());
    }

    #[test]
    fn zero_psi_has_unit_moment() {
        let field = build_kernel(&KernelSpec::constant(1, 1.0)).unwrap();
        let f = DensityField::uniform(PeriodicGrid::new(1, 16).unwrap());
        let psi = build_psi(&field, &f, PsiEntry::B(0)).unwrap();
        let r = exp_moment_check(&psi, &InitialProfile::uniform(1), &[1, 5], 100, 3).unwrap();
        for row in &r.rows {
            assert_eq!(row.mean, 1.0);
        }
        assert!(r.no_growth && r.jensen_ok);
    }
}
