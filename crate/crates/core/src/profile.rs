//! Smooth initial data `f0(v) = 1 + sum eps_k cos(2 pi k.v + phi_k)` and
//! exact i.i.d. sampling from it.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::MAX_DIM;

/// Largest admissible `sum |eps_k|`; keeps `f0 >= 0.5`.
pub const MAX_TOTAL_AMPLITUDE: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileMode {
    pub k: Vec<i64>,
    pub amplitude: f64,
    #[serde(default)]
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialProfile {
    pub dimension: usize,
    #[serde(default)]
    pub modes: Vec<ProfileMode>,
}

impl InitialProfile {
    pub fn uniform(dimension: usize) -> Self {
        Self {
            dimension,
            modes: Vec::new(),
        }
    }

    /// Single cosine bump `1 + amplitude cos(2 pi k v)` in one dimension.
    pub fn cosine_1d(k: i64, amplitude: f64) -> Self {
        Self {
            dimension: 1,
            modes: vec![ProfileMode {
                k: vec![k],
                amplitude,
                phase: 0.0,
            }],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=MAX_DIM).contains(&self.dimension) {
            return Err(Error::InvalidDensity(format!(
                "profile dimension must be 1..=3, got {}",
                self.dimension
            )));
        }
        let mut total = 0.0;
        for (i, m) in self.modes.iter().enumerate() {
            if m.k.len() != self.dimension {
                return Err(Error::InvalidDensity(format!(
                    "profile mode {i}: wave vector has {} entries, expected {}",
                    m.k.len(),
                    self.dimension
                )));
            }
            if m.k.iter().all(|&k| k == 0) {
                return Err(Error::InvalidDensity(format!("profile mode {i}: zero wave vector")));
            }
            if !m.amplitude.is_finite() || !m.phase.is_finite() {
                return Err(Error::InvalidDensity(format!(
                    "profile mode {i}: non-finite amplitude or phase"
                )));
            }
            total += m.amplitude.abs();
        }
        if total > MAX_TOTAL_AMPLITUDE + 1e-15 {
            return Err(Error::InvalidDensity(format!(
                "sum of |amplitude| = {total} exceeds {MAX_TOTAL_AMPLITUDE}"
            )));
        }
        Ok(())
    }

    pub fn is_uniform(&self) -> bool {
        self.modes.iter().all(|m| m.amplitude == 0.0)
    }

    pub fn max_wave(&self) -> i64 {
        self.modes
            .iter()
            .flat_map(|m| m.k.iter().map(|k| k.abs()))
            .max()
            .unwrap_or(0)
    }

    fn phase_of(&self, m: &ProfileMode, v: &[f64]) -> f64 {
        let dot: f64 = m.k.iter().zip(v).map(|(&k, &x)| k as f64 * x).sum();
        2.0 * PI * dot + m.phase
    }

    pub fn eval(&self, v: &[f64]) -> f64 {
        1.0 + self
            .modes
            .iter()
            .map(|m| m.amplitude * self.phase_of(m, v).cos())
            .sum::<f64>()
    }

    fn upper_envelope(&self) -> f64 {
        1.0 + self.modes.iter().map(|m| m.amplitude.abs()).sum::<f64>()
    }

    /// Cumulative distribution on `[0, 1)` for a one-dimensional profile.
    pub fn cdf_1d(&self, v: f64) -> f64 {
        let mut s = v;
        for m in &self.modes {
            let k = m.k[0] as f64;
            let w = 2.0 * PI * k;
            s += m.amplitude / w * ((w * v + m.phase).sin() - m.phase.sin());
        }
        s
    }

    fn inverse_cdf_1d(&self, u: f64) -> f64 {
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        let mut v = u;
        for _ in 0..100 {
            let g = self.cdf_1d(v) - u;
            if g > 0.0 {
                hi = v;
            } else {
                lo = v;
            }
            if g.abs() < 1e-15 {
                break;
            }
            let next = v - g / self.eval(&[v]);
            v = if next > lo && next < hi { next } else { 0.5 * (lo + hi) };
            if hi - lo < 1e-16 {
                break;
            }
        }
        v.clamp(0.0, 1.0 - f64::EPSILON)
    }

    /// Draw one point: inverse CDF in one dimension, rejection from the
    /// uniform proposal otherwise.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        let d = self.dimension;
        if self.is_uniform() {
            for x in out.iter_mut().take(d) {
                *x = rng.random::<f64>();
            }
            return;
        }
        if d == 1 {
            out[0] = self.inverse_cdf_1d(rng.random::<f64>());
            return;
        }
        let envelope = self.upper_envelope();
        loop {
            for x in out.iter_mut().take(d) {
                *x = rng.random::<f64>();
            }
            let accept = rng.random::<f64>() * envelope;
            if accept <= self.eval(&out[..d]) {
                return;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn validation() {
        assert!(InitialProfile::cosine_1d(1, 0.5).validate().is_ok());
        assert!(InitialProfile::cosine_1d(1, 0.6).validate().is_err());
        assert!(InitialProfile::cosine_1d(0, 0.1).validate().is_err());
    }

    #[test]
    fn cdf_endpoints_and_inverse() {
        let p = InitialProfile {
            dimension: 1,
            modes: vec![
                ProfileMode {
                    k: vec![1],
                    amplitude: 0.3,
                    phase: 0.4,
                },
                ProfileMode {
                    k: vec![3],
                    amplitude: -0.15,
                    phase: 0.0,
                },
            ],
        };
        assert!(p.cdf_1d(0.0).abs() < 1e-15);
        assert!((p.cdf_1d(1.0) - 1.0).abs() < 1e-14);
        for i in 1..50 {
            let u = i as f64 / 50.0;
            let v = p.inverse_cdf_1d(u);
            assert!((p.cdf_1d(v) - u).abs() < 1e-13);
        }
    }

    #[test]
    fn sampled_mean_of_cosine_matches_fourier_coefficient() {
        // E[cos 2 pi v] under 1 + eps cos(2 pi v) is eps / 2
        let p = InitialProfile::cosine_1d(1, 0.4);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let m = 200_000;
        let mut acc = 0.0;
        let mut x = [0.0; 3];
        for _ in 0..m {
            p.sample(&mut rng, &mut x);
            acc += (2.0 * PI * x[0]).cos();
        }
        let mean = acc / m as f64;
        let se = (0.5f64 / m as f64).sqrt();
        assert!((mean - 0.2).abs() < 5.0 * se, "mean {mean}");
    }

    #[test]
    fn rejection_sampler_2d() {
        let p = InitialProfile {
            dimension: 2,
            modes: vec![ProfileMode {
                k: vec![1, 1],
                amplitude: 0.5,
                phase: 0.0,
            }],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = 100_000;
        let mut acc = 0.0;
        let mut x = [0.0; 3];
        for _ in 0..m {
            p.sample(&mut rng, &mut x);
            assert!(x[0] < 1.0 && x[1] < 1.0);
            acc += (2.0 * PI * (x[0] + x[1])).cos();
        }
        let mean = acc / m as f64;
        assert!((mean - 0.25).abs() < 5.0 * (0.5f64 / m as f64).sqrt());
    }
}
