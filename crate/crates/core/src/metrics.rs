//! Distances between particle laws and the mean-field solution: periodic
//! histograms, L1 and entropy audits, and the N-scaling study.

use std::f64::consts::PI;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernel::KernelField;
use crate::meanfield::{DensityField, MeanFieldSolver, PeriodicGrid};
use crate::particles::{replica_key, run_ensemble, EnsembleConfig, SdeScheme};
use crate::profile::InitialProfile;

/// Masses of `bins^dim` equal-width periodic cells, row-major.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinnedMasses {
    pub dim: usize,
    pub bins: usize,
    pub masses: Vec<f64>,
}

impl BinnedMasses {
    pub fn new(dim: usize, bins: usize, masses: Vec<f64>) -> Result<Self> {
        if masses.len() != bins.pow(dim as u32) {
            return Err(Error::ShapeMismatch(format!(
                "{} masses for {bins}^{dim} bins",
                masses.len()
            )));
        }
        Ok(Self { dim, bins, masses })
    }

    /// Exact cell masses of a grid density via its trigonometric interpolant.
    pub fn from_density(f: &DensityField, bins: usize) -> Result<Self> {
        if bins == 0 {
            return Err(Error::InvalidConfig("need at least one bin".into()));
        }
        Self::new(f.grid().dim(), bins, f.bin_masses(bins))
    }

    pub fn total(&self) -> f64 {
        self.masses.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmpiricalDensity {
    pub cells: BinnedMasses,
    pub samples: usize,
}

/// Equal-width periodic histogram of points stored as `dim`-tuples.
pub fn histogram(samples: &[f64], dim: usize, bins: usize) -> Result<EmpiricalDensity> {
    if bins < 4 {
        return Err(Error::InvalidConfig(format!("need at least 4 bins, got {bins}")));
    }
    if dim == 0 || !samples.len().is_multiple_of(dim) {
        return Err(Error::ShapeMismatch(format!(
            "{} coordinates do not form {dim}-tuples",
            samples.len()
        )));
    }
    let count = samples.len() / dim;
    if count == 0 {
        return Err(Error::EmptySamples);
    }
    let mut counts = vec![0u64; bins.pow(dim as u32)];
    for point in samples.chunks(dim) {
        let mut idx = 0;
        for &x in point {
            let w = x - x.floor();
            let b = ((w * bins as f64) as usize).min(bins - 1);
            idx = idx * bins + b;
        }
        counts[idx] += 1;
    }
    let inv = 1.0 / count as f64;
    let masses = counts.iter().map(|&c| c as f64 * inv).collect();
    Ok(EmpiricalDensity {
        cells: BinnedMasses::new(dim, bins, masses)?,
        samples: count,
    })
}

/// `sum |m1 - m2|` over common cells.
pub fn l1_distance(g1: &BinnedMasses, g2: &BinnedMasses) -> Result<f64> {
    if g1.dim != g2.dim || g1.bins != g2.bins {
        return Err(Error::ShapeMismatch(format!(
            "bins {}^{} vs {}^{}",
            g1.bins, g1.dim, g2.bins, g2.dim
        )));
    }
    Ok(g1.masses.iter().zip(&g2.masses).map(|(a, b)| (a - b).abs()).sum())
}

/// `int |g1 - g2|` for densities on a common grid.
pub fn grid_l1(g1: &DensityField, g2: &DensityField) -> Result<f64> {
    if g1.grid() != g2.grid() {
        return Err(Error::ShapeMismatch("densities live on different grids".into()));
    }
    Ok(g1.grid().cell_volume()
        * g1.values()
            .iter()
            .zip(g2.values())
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>())
}

/// `sum p log(p / q)` for probability vectors, `0 log 0 = 0`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::ShapeMismatch(format!("{} vs {} outcomes", p.len(), q.len())));
    }
    let mut acc = 0.0;
    for (i, (&a, &b)) in p.iter().zip(q).enumerate() {
        if a > 0.0 {
            if !(b > 0.0) {
                return Err(Error::InfiniteEntropy(format!("q vanishes at outcome {i} where p > 0")));
            }
            acc += a * (a / b).ln();
        }
    }
    Ok(acc)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CkpAudit {
    pub l1: f64,
    pub relative_entropy: f64,
    pub order: usize,
    pub bound: f64,
    pub holds: bool,
}

/// Pinsker check `||g1 - g2||_1 <= sqrt(2 k H_k)` with `H_k` the
/// relative entropy normalized by the marginal order `k`.
pub fn ckp_audit(l1: f64, relative_entropy: f64, order: usize) -> CkpAudit {
    let bound = (2.0 * order as f64 * relative_entropy.max(0.0)).sqrt();
    CkpAudit {
        l1,
        relative_entropy,
        order,
        bound,
        holds: l1 <= bound + 1e-10,
    }
}

/// Pinsker audit of two grid densities, with the entropy taken on the grid.
pub fn ckp_audit_grid(g1: &DensityField, g2: &DensityField, order: usize) -> Result<CkpAudit> {
    let vol = g1.grid().cell_volume();
    let p: Vec<f64> = g1.values().iter().map(|x| x * vol).collect();
    let q: Vec<f64> = g2.values().iter().map(|x| x * vol).collect();
    let h = kl_divergence(&p, &q)? / order as f64;
    Ok(ckp_audit(grid_l1(g1, g2)?, h, order))
}

/// Expected L1 distance between a histogram of `samples` i.i.d. draws and
/// its cell masses `p`: `sqrt(2/pi) sum_b sqrt(p_b (1 - p_b) / S)`.
pub fn noise_floor(p: &[f64], samples: usize) -> f64 {
    let s = samples as f64;
    (2.0 / PI).sqrt()
        * p.iter()
            .map(|&m| (m.clamp(0.0, 1.0) * (1.0 - m.clamp(0.0, 1.0)) / s).sqrt())
            .sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PowerLawFit {
    pub slope: f64,
    pub intercept: f64,
    /// Standard error of the slope; `None` with two points.
    pub slope_stderr: Option<f64>,
    pub points: usize,
}

/// Least-squares fit of `log y = intercept + slope log x`.
pub fn power_law_fit(x: &[f64], y: &[f64]) -> Result<PowerLawFit> {
    if x.len() != y.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} abscissae, {} ordinates",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::InvalidConfig("a power-law fit needs at least two points".into()));
    }
    if x.iter().chain(y).any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::InvalidConfig("power-law fit needs positive finite data".into()));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let m = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / m;
    let my = ly.iter().sum::<f64>() / m;
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidConfig("power-law fit needs distinct abscissae".into()));
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let slope_stderr = (lx.len() > 2).then(|| {
        let rss: f64 = lx
            .iter()
            .zip(&ly)
            .map(|(a, b)| (b - intercept - slope * a).powi(2))
            .sum();
        (rss / (m - 2.0) / sxx).sqrt()
    });
    Ok(PowerLawFit {
        slope,
        intercept,
        slope_stderr,
        points: lx.len(),
    })
}

/// Kolmogorov-Smirnov statistic of a sample against a continuous CDF.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let c = cdf(x);
            (c - i as f64 / n).abs().max(((i + 1) as f64 / n - c).abs())
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChaosStudyConfig {
    pub ladder: Vec<usize>,
    pub replicas: usize,
    pub dt: f64,
    pub horizon: f64,
    pub bins: usize,
    /// Points per axis of the mean-field reference solve.
    pub grid_n: usize,
    pub initial: InitialProfile,
    pub master_seed: u64,
    pub scheme: SdeScheme,
    pub config_hash: String,
}

impl ChaosStudyConfig {
    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.ladder.len() < 2 || self.ladder.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig(
                "particle ladder needs at least two strictly increasing entries".into(),
            ));
        }
        if self.ladder[0] < 2 || self.replicas == 0 {
            return Err(Error::InvalidConfig("need N >= 2 and at least one replica".into()));
        }
        if self.bins < 4 {
            return Err(Error::InvalidConfig(format!("need at least 4 bins, got {}", self.bins)));
        }
        if 2 * self.bins > self.grid_n {
            return Err(Error::InvalidConfig(format!(
                "bin width must be at least two grid spacings: bins = {}, grid = {}",
                self.bins, self.grid_n
            )));
        }
        let pooled = (self.replicas * self.ladder[0]) as f64;
        if self.bins as f64 > pooled.cbrt() + 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "bins = {} exceeds (M N)^(1/3) = {:.2} for the smallest N",
                self.bins,
                pooled.cbrt()
            )));
        }
        if self.initial.dimension != dim {
            return Err(Error::ShapeMismatch(
                "initial profile and kernel dimensions differ".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChaosRow {
    pub n_particles: usize,
    pub replicas: usize,
    pub horizon: f64,
    pub l1_error: f64,
    /// Expected L1 of a pure-sampling histogram with the same pooled size.
    pub statistical_error: f64,
    pub ckp_bound: Option<f64>,
    pub seed: u64,
    pub config_hash: String,
    pub included: bool,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChaosStudyReport {
    pub rows: Vec<ChaosRow>,
    pub fit: Option<PowerLawFit>,
    /// Slope within the band `[-1.2, -0.3]`; `None` when no fit was possible.
    pub slope_in_band: Option<bool>,
}

impl ChaosStudyReport {
    pub fn excluded(&self) -> impl Iterator<Item = &ChaosRow> {
        self.rows.iter().filter(|r| !r.included)
    }
}

pub const SLOPE_BAND: (f64, f64) = (-1.2, -0.3);

/// Assemble rows, apply the noise-budget filter and fit the slope.
pub fn finish_study(mut rows: Vec<ChaosRow>) -> ChaosStudyReport {
    for r in &mut rows {
        r.included = r.statistical_error < r.l1_error / 3.0;
        if !r.included {
            r.note = format!(
                "excluded: statistical error {:.3e} is not below a third of the measured {:.3e}",
                r.statistical_error, r.l1_error
            );
        }
    }
    let (x, y): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .filter(|r| r.included)
        .map(|r| (r.n_particles as f64, r.l1_error))
        .unzip();
    let fit = power_law_fit(&x, &y).ok();
    let slope_in_band = fit.map(|f| f.slope >= SLOPE_BAND.0 && f.slope <= SLOPE_BAND.1);
    ChaosStudyReport {
        rows,
        fit,
        slope_in_band,
    }
}

/// Seed of the ensemble for ladder entry `n_particles`.
pub fn ladder_seed(master: u64, n_particles: usize) -> u64 {
    replica_key(master, n_particles as u64 ^ 0x5eed_0000_0000_0000)
}

/// Marginal error of pooled particle positions against the mean-field
/// solution at the horizon, over a ladder of particle numbers.
pub fn marginal_error_study(cfg: &ChaosStudyConfig, field: &KernelField, workers: usize) -> Result<ChaosStudyReport> {
    let dim = field.dim();
    cfg.validate(dim)?;
    let grid = PeriodicGrid::new(dim, cfg.grid_n)?;
    let f0 = DensityField::from_profile(grid, &cfg.initial)?;
    let solver = MeanFieldSolver::new(field, grid)?;
    let pde_dt = cfg.dt.min(0.5 * solver.max_stable_dt());
    let mut solver = solver;
    let f_t = solver
        .solve(&f0, cfg.horizon, pde_dt, &[])?
        .pop()
        .expect("solve always returns the horizon");
    let reference = BinnedMasses::from_density(&f_t, cfg.bins)?;
    let mut rows = Vec::with_capacity(cfg.ladder.len());
    for &n in &cfg.ladder {
        let seed = ladder_seed(cfg.master_seed, n);
        let ens = EnsembleConfig {
            replicas: cfg.replicas,
            n_particles: n,
            dt: cfg.dt,
            horizon: cfg.horizon,
            initial: cfg.initial.clone(),
            master_seed: seed,
            snapshot_times: Vec::new(),
            scheme: cfg.scheme,
        };
        let out = run_ensemble(&ens, field, workers)?;
        let pooled = out.terminal().pooled();
        let hist = histogram(&pooled, dim, cfg.bins)?;
        rows.push(ChaosRow {
            n_particles: n,
            replicas: cfg.replicas,
            horizon: cfg.horizon,
            l1_error: l1_distance(&hist.cells, &reference)?,
            statistical_error: noise_floor(&reference.masses, hist.samples),
            ckp_bound: None,
            seed,
            config_hash: cfg.config_hash.clone(),
            included: false,
            note: String::new(),
        });
    }
    Ok(finish_study(rows))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NhSeries {
    pub n_particles: usize,
    /// `(t, H_N(t))`.
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NhReport {
    pub initial_ok: bool,
    pub nonnegative: bool,
    pub finite: bool,
    /// `max_t N H_N(t)` per series.
    pub max_scaled: Vec<(usize, f64)>,
    /// Ratio of the largest to the smallest of `max_scaled`.
    pub envelope_ratio: f64,
    pub envelope_ok: bool,
    /// Fitted `N H_N(t) ~ C1 exp(C2 t)` over points with `H_N > 1e-14`.
    pub c1: Option<f64>,
    pub c2: Option<f64>,
}

impl NhReport {
    pub fn passed(&self) -> bool {
        self.initial_ok && self.nonnegative && self.finite && self.envelope_ok
    }
}

/// Boundedness of `N H_N(t)` across particle numbers.
pub fn nh_boundedness_check(series: &[NhSeries]) -> Result<NhReport> {
    if series.is_empty() || series.iter().any(|s| s.points.is_empty()) {
        return Err(Error::EmptySamples);
    }
    let initial_ok = series.iter().all(|s| s.points[0].1.abs() <= 1e-10);
    let nonnegative = series
        .iter()
        .all(|s| s.points.iter().all(|&(_, h)| h >= -crate::liouville::GIBBS_TOL));
    let finite = series
        .iter()
        .all(|s| s.points.iter().all(|&(t, h)| t.is_finite() && h.is_finite()));
    let max_scaled: Vec<(usize, f64)> = series
        .iter()
        .map(|s| {
            let m = s
                .points
                .iter()
                .map(|&(_, h)| s.n_particles as f64 * h)
                .fold(0.0, f64::max);
            (s.n_particles, m)
        })
        .collect();
    let hi = max_scaled.iter().map(|m| m.1).fold(0.0, f64::max);
    let lo = max_scaled.iter().map(|m| m.1).fold(f64::INFINITY, f64::min);
    let envelope_ratio = if hi == 0.0 { 1.0 } else { hi / lo };
    let (t, y): (Vec<f64>, Vec<f64>) = series
        .iter()
        .flat_map(|s| {
            s.points
                .iter()
                .filter(|p| p.1 > 1e-14)
                .map(move |&(t, h)| (t, (s.n_particles as f64 * h).ln()))
        })
        .unzip();
    let (c1, c2) = linear_fit(&t, &y)
        .map(|(a, b)| (Some(a.exp()), Some(b)))
        .unwrap_or((None, None));
    Ok(NhReport {
        initial_ok,
        nonnegative,
        finite,
        max_scaled,
        envelope_ratio,
        envelope_ok: envelope_ratio.is_finite() && envelope_ratio <= 5.0,
        c1,
        c2,
    })
}

fn linear_fit(x: &[f64], y: &[f64]) -> Option<(f64, f64)> {
    let m = x.len() as f64;
    if x.len() < 2 {
        return None;
    }
    let mx = x.iter().sum::<f64>() / m;
    let my = y.iter().sum::<f64>() / m;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / sxx;
    Some((my - slope * mx, slope))
}
