//! Interacting N-particle SDE on the torus,
//!
//! ```text
//! dV^i = (2/N) sum_j b(V^i - V^j) dt + sqrt(2) ((1/N) sum_j a(V^i - V^j))^{1/2} dB^i,
//! ```
//!
//! with the `j = i` term dropped from both sums. Integrated by
//! Euler–Maruyama with one counter-based ChaCha stream per particle.
//!
//! # The factor 2 in the drift
//!
//! Write `A_i = (1/N) sum_{j != i} a(v^i - v^j)` and
//! `beta_i = (1/N) sum_{j != i} b(v^i - v^j)`. The generator of the SDE is
//! `sum_i [2 beta_i . grad_i + A_i : grad_i^2]`, so the joint law solves
//!
//! ```text
//! d_t f_N = sum_i [ grad_i^2 : (A_i f_N) - div_i(2 beta_i f_N) ].
//! ```
//!
//! Since `b = div a`, `div_i A_i = beta_i` and `grad_i^2 : (A_i f_N) =
//! div_i(A_i grad_i f_N + beta_i f_N)`. One `beta_i` cancels against the
//! drift, leaving the divergence-form Liouville equation
//! `d_t f_N = sum_i div_i(A_i grad_i f_N - beta_i f_N)` solved in
//! [`crate::liouville`]. A drift of `(1/N) sum b` would instead give
//! `sum_i div_i(A_i grad_i f_N)`, whose stationary states differ.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{wrap, wrap_centered, KernelField};
use crate::linalg::{self, Matrix, Vector, MAX_DIM, PSD_TOL, ZERO_MATRIX};
use crate::profile::InitialProfile;

/// Per-particle drift `(2/N) sum b` and diffusion matrix `(1/N) sum a`.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftDiffusion {
    pub dim: usize,
    pub drift: Vec<Vector>,
    pub diffusion: Vec<Matrix>,
}

impl DriftDiffusion {
    /// Largest entrywise difference to another evaluation.
    pub fn max_abs_diff(&self, other: &DriftDiffusion) -> f64 {
        let mut m: f64 = 0.0;
        for (x, y) in self.drift.iter().zip(&other.drift) {
            for a in 0..self.dim {
                m = m.max((x[a] - y[a]).abs());
            }
        }
        for (x, y) in self.diffusion.iter().zip(&other.diffusion) {
            for a in 0..self.dim {
                for b in 0..self.dim {
                    m = m.max((x[a][b] - y[a][b]).abs());
                }
            }
        }
        m
    }
}

/// Direct `O(N^2)` pair summation.
pub fn forces_naive(positions: &[f64], dim: usize, field: &KernelField) -> DriftDiffusion {
    let n = positions.len() / dim;
    let inv_n = 1.0 / n as f64;
    let mut drift = vec![[0.0; MAX_DIM]; n];
    let mut diffusion = vec![ZERO_MATRIX; n];
    let mut z = [0.0; MAX_DIM];
    for i in 0..n {
        let vi = &positions[i * dim..(i + 1) * dim];
        let mut a_sum = ZERO_MATRIX;
        let mut b_sum = [0.0; MAX_DIM];
        for j in 0..n {
            if j == i {
                continue;
            }
            let vj = &positions[j * dim..(j + 1) * dim];
            for axis in 0..dim {
                z[axis] = wrap_centered(vi[axis] - vj[axis]);
            }
            let (a, b) = field.eval_a_b(&z[..dim]);
            for p in 0..dim {
                for q in 0..dim {
                    a_sum[p][q] += a[p][q];
                }
                b_sum[p] += b[p];
            }
        }
        for p in 0..dim {
            for q in 0..dim {
                diffusion[i][p][q] = a_sum[p][q] * inv_n;
            }
            drift[i][p] = 2.0 * b_sum[p] * inv_n;
        }
    }
    DriftDiffusion { dim, drift, diffusion }
}

/// `O(NK)` evaluation through the empirical Fourier sums
/// `S_k = (1/N) sum_j e^{-2 pi i k.v^j}`; the self term is removed
/// analytically (it contributes `A_k / N` to the cosine part and nothing to
/// the sine part).
pub fn forces_spectral(positions: &[f64], dim: usize, field: &KernelField) -> DriftDiffusion {
    let n = positions.len() / dim;
    let inv_n = 1.0 / n as f64;
    let modes = field.modes();
    let k = modes.len();
    // (cos, sin) of each particle's phase per mode, particle-major
    let mut trig = vec![(0.0, 0.0); n * k];
    let mut sums = vec![(0.0, 0.0); k];
    for i in 0..n {
        let vi = &positions[i * dim..(i + 1) * dim];
        for (m, mode) in modes.iter().enumerate() {
            let (s, c) = mode.phase(vi).sin_cos();
            trig[i * k + m] = (c, s);
            sums[m].0 += c;
            sums[m].1 += s;
        }
    }
    for s in &mut sums {
        s.0 *= inv_n;
        s.1 *= inv_n;
    }
    let base = field.lambda0() * (n as f64 - 1.0) * inv_n;
    let mut drift = vec![[0.0; MAX_DIM]; n];
    let mut diffusion = vec![ZERO_MATRIX; n];
    for i in 0..n {
        let a = &mut diffusion[i];
        for (p, row) in a.iter_mut().enumerate().take(dim) {
            row[p] = base;
        }
        let beta = &mut drift[i];
        for (m, mode) in modes.iter().enumerate() {
            let (c, s) = trig[i * k + m];
            let (mean_cos, mean_sin) = sums[m];
            // mean over j of cos / sin of (theta_i - theta_j)
            let cos_diff = c * mean_cos + s * mean_sin - inv_n;
            let sin_diff = s * mean_cos - c * mean_sin;
            for p in 0..dim {
                for q in 0..dim {
                    a[p][q] += mode.a[p][q] * cos_diff;
                }
                beta[p] += 2.0 * mode.b[p] * sin_diff;
            }
        }
    }
    DriftDiffusion { dim, drift, diffusion }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ForceEvaluator {
    Naive,
    #[default]
    Spectral,
}

impl ForceEvaluator {
    pub fn evaluate(self, positions: &[f64], dim: usize, field: &KernelField) -> DriftDiffusion {
        match self {
            ForceEvaluator::Naive => forces_naive(positions, dim, field),
            ForceEvaluator::Spectral => forces_spectral(positions, dim, field),
        }
    }
}

/// Discretization choices for one Euler–Maruyama step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SdeScheme {
    pub evaluator: ForceEvaluator,
    /// Coefficient `c` of the drift `(c/N) sum b`; the model uses 2.
    pub drift_factor: f64,
}

impl Default for SdeScheme {
    fn default() -> Self {
        Self {
            evaluator: ForceEvaluator::Spectral,
            drift_factor: 2.0,
        }
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Key of replica `replica` under `master_seed`.
pub fn replica_key(master_seed: u64, replica: u64) -> u64 {
    splitmix64(master_seed ^ splitmix64(replica.wrapping_add(0x5851_f42d_4c95_7f2d)))
}

/// Dedicated stream of one particle: ChaCha8 keyed by the replica, with the
/// particle index as stream id.
pub fn particle_stream(master_seed: u64, replica: u64, particle: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(replica_key(master_seed, replica));
    rng.set_stream(particle);
    rng
}

#[derive(Debug, Clone)]
pub struct ParticleState {
    dim: usize,
    positions: Vec<f64>,
    time: f64,
    streams: Vec<ChaCha8Rng>,
    master_seed: u64,
    replica: u64,
}

impl ParticleState {
    /// Place particles at given coordinates (wrapped into `[0,1)`), with
    /// fresh streams.
    pub fn from_positions(dim: usize, positions: Vec<f64>, master_seed: u64, replica: u64) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM || !positions.len().is_multiple_of(dim) {
            return Err(Error::ShapeMismatch(format!(
                "{} coordinates do not form particles of dimension {dim}",
                positions.len()
            )));
        }
        let n = positions.len() / dim;
        if n < 2 {
            return Err(Error::InvalidConfig(format!("need N >= 2 particles, got {n}")));
        }
        let streams = (0..n as u64)
            .map(|p| particle_stream(master_seed, replica, p))
            .collect();
        Ok(Self {
            dim,
            positions: positions.into_iter().map(wrap).collect(),
            time: 0.0,
            streams,
            master_seed,
            replica,
        })
    }

    /// I.i.d. initial positions drawn from `profile`, each particle using
    /// its own stream.
    pub fn sample(profile: &InitialProfile, n: usize, master_seed: u64, replica: u64) -> Result<Self> {
        profile.validate()?;
        let dim = profile.dimension;
        let mut state = Self::from_positions(dim, vec![0.0; n * dim], master_seed, replica)?;
        let mut buf = [0.0; MAX_DIM];
        for (p, rng) in state.streams.iter_mut().enumerate() {
            profile.sample(rng, &mut buf);
            state.positions[p * dim..(p + 1) * dim].copy_from_slice(&buf[..dim]);
        }
        Ok(state)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.positions.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn replica(&self) -> u64 {
        self.replica
    }

    /// Words consumed so far by each particle's stream.
    pub fn stream_counters(&self) -> Vec<u128> {
        self.streams.iter().map(|s| s.get_word_pos()).collect()
    }

    /// Relabel particles: particle `i` of the result is particle `perm[i]`
    /// of `self`, stream included.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let d = self.dim;
        let mut positions = Vec::with_capacity(self.positions.len());
        let mut streams = Vec::with_capacity(self.streams.len());
        for &src in perm {
            positions.extend_from_slice(&self.positions[src * d..(src + 1) * d]);
            streams.push(self.streams[src].clone());
        }
        Self {
            positions,
            streams,
            ..self.clone()
        }
    }
}

/// One Euler–Maruyama step
/// `v^i <- wrap(v^i + drift_i dt + sqrt(2 dt) S_i xi_i)`, `S_i = A_i^{1/2}`.
pub fn em_step(state: &mut ParticleState, field: &KernelField, dt: f64, scheme: SdeScheme) -> Result<()> {
    if field.dim() != state.dim {
        return Err(Error::ShapeMismatch(format!(
            "kernel dimension {} vs particle dimension {}",
            field.dim(),
            state.dim
        )));
    }
    if dt == 0.0 {
        return Ok(());
    }
    let d = state.dim;
    let forces = scheme.evaluator.evaluate(&state.positions, d, field);
    let drift_scale = 0.5 * scheme.drift_factor;
    let noise_scale = (2.0 * dt).sqrt();
    let mut xi = [0.0; MAX_DIM];
    for (i, rng) in state.streams.iter_mut().enumerate() {
        let root = linalg::sqrt_psd(&forces.diffusion[i], d, PSD_TOL)?;
        for x in xi.iter_mut().take(d) {
            *x = StandardNormal.sample(rng);
        }
        let kick = linalg::mat_vec(&root, &xi, d);
        let v = &mut state.positions[i * d..(i + 1) * d];
        for axis in 0..d {
            v[axis] = wrap(v[axis] + drift_scale * forces.drift[i][axis] * dt + noise_scale * kick[axis]);
        }
    }
    state.time += dt;
    Ok(())
}

/// Advance to `target` in equal sub-steps no longer than `dt`.
pub fn integrate_to(
    state: &mut ParticleState,
    field: &KernelField,
    target: f64,
    dt: f64,
    scheme: SdeScheme,
) -> Result<()> {
    let remaining = target - state.time;
    if remaining <= 1e-12 {
        return Ok(());
    }
    let steps = ((remaining / dt) - 1e-9).ceil().max(1.0) as usize;
    let start = state.time;
    let h = remaining / steps as f64;
    for s in 1..=steps {
        em_step(state, field, h, scheme)?;
        state.time = start + s as f64 * h;
    }
    state.time = target;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub replicas: usize,
    pub n_particles: usize,
    pub dt: f64,
    pub horizon: f64,
    pub initial: InitialProfile,
    pub master_seed: u64,
    #[serde(default)]
    pub snapshot_times: Vec<f64>,
    #[serde(default)]
    pub scheme: SdeScheme,
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replicas == 0 {
            return Err(Error::InvalidConfig("replica count M must be >= 1".into()));
        }
        if self.n_particles < 2 {
            return Err(Error::InvalidConfig("particle count N must be >= 2".into()));
        }
        if !(self.dt > 0.0) {
            return Err(Error::InvalidConfig(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.horizon >= 0.0) {
            return Err(Error::InvalidConfig(format!("T must be >= 0, got {}", self.horizon)));
        }
        self.initial.validate()
    }

    fn targets(&self) -> Vec<f64> {
        let mut t: Vec<f64> = self
            .snapshot_times
            .iter()
            .copied()
            .filter(|&t| (0.0..self.horizon).contains(&t))
            .collect();
        t.push(self.horizon);
        t.sort_by(f64::total_cmp);
        t.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
        t
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleSnapshot {
    pub time: f64,
    /// Flat particle coordinates, one vector per replica.
    pub replicas: Vec<Vec<f64>>,
}

impl EnsembleSnapshot {
    /// All particles of all replicas in one flat coordinate list.
    pub fn pooled(&self) -> Vec<f64> {
        self.replicas.iter().flatten().copied().collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleOutput {
    pub dim: usize,
    pub snapshots: Vec<EnsembleSnapshot>,
}

impl EnsembleOutput {
    pub fn terminal(&self) -> &EnsembleSnapshot {
        self.snapshots.last().expect("ensemble output always holds the horizon")
    }
}

fn run_replica(cfg: &EnsembleConfig, field: &KernelField, replica: u64, targets: &[f64]) -> Result<Vec<Vec<f64>>> {
    let mut state = ParticleState::sample(&cfg.initial, cfg.n_particles, cfg.master_seed, replica)?;
    let mut out = Vec::with_capacity(targets.len());
    for &t in targets {
        integrate_to(&mut state, field, t, cfg.dt, cfg.scheme)?;
        out.push(state.positions.clone());
    }
    Ok(out)
}

/// Run `M` independent replicas. Each replica depends only on
/// `(master_seed, replica index)`, so the output is identical for any
/// worker count (`workers = 0` uses the global pool).
pub fn run_ensemble(cfg: &EnsembleConfig, field: &KernelField, workers: usize) -> Result<EnsembleOutput> {
    cfg.validate()?;
    if field.dim() != cfg.initial.dimension {
        return Err(Error::ShapeMismatch(format!(
            "kernel dimension {} vs initial profile dimension {}",
            field.dim(),
            cfg.initial.dimension
        )));
    }
    let targets = cfg.targets();
    let job = || -> Result<Vec<Vec<Vec<f64>>>> {
        (0..cfg.replicas as u64)
            .into_par_iter()
            .map(|r| run_replica(cfg, field, r, &targets))
            .collect()
    };
    let per_replica = if workers == 0 {
        job()?
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::ThreadPool(e.to_string()))?
            .install(job)?
    };
    let snapshots = targets
        .iter()
        .enumerate()
        .map(|(s, &time)| EnsembleSnapshot {
            time,
            replicas: per_replica.iter().map(|r| r[s].clone()).collect(),
        })
        .collect();
    Ok(EnsembleOutput {
        dim: cfg.initial.dimension,
        snapshots,
    })
}
