#![allow(dead_code)]

use metromd_core::model::{lattice_init, wrap_coord, RngStream, StreamPurpose, SystemSpec};
use metromd_core::potential::{Potential, PotentialError};

/// `U = ½ k Σ (q − c)²` with no periodic wrap; tests keep particles far from
/// the box faces.
#[derive(Debug, Clone)]
pub struct Harmonic {
    pub dim: usize,
    pub k: f64,
    pub centre: f64,
}

impl Potential for Harmonic {
    fn dim(&self) -> usize {
        self.dim
    }

    fn energy(&self, q: &[f64]) -> Result<f64, PotentialError> {
        Ok(q.iter().map(|x| 0.5 * self.k * (x - self.centre).powi(2)).sum())
    }

    fn energy_and_gradient(&self, q: &[f64], grad: &mut [f64]) -> Result<f64, PotentialError> {
        for (g, x) in grad.iter_mut().zip(q) {
            *g = self.k * (x - self.centre);
        }
        self.energy(q)
    }

    fn set_energy(&self, q: &[f64], set: &[usize]) -> Result<f64, PotentialError> {
        let d = self.dim;
        Ok(set
            .iter()
            .flat_map(|&i| &q[i * d..(i + 1) * d])
            .map(|x| 0.5 * self.k * (x - self.centre).powi(2))
            .sum())
    }

    fn set_energy_and_gradient(&self, q: &[f64], set: &[usize], grad: &mut [f64]) -> Result<f64, PotentialError> {
        let d = self.dim;
        for (b, &i) in set.iter().enumerate() {
            for a in 0..d {
                grad[b * d + a] = self.k * (q[i * d + a] - self.centre);
            }
        }
        self.set_energy(q, set)
    }
}

/// Lattice positions jittered by up to `jitter` per component.
pub fn jittered_lattice(spec: &SystemSpec, jitter: f64, seed: u64) -> Vec<f64> {
    let mut rng = RngStream::new(seed, StreamPurpose::Initialization);
    let l = spec.box_length();
    lattice_init(spec)
        .into_iter()
        .map(|x| wrap_coord(x + jitter * (2.0 * rng.uniform() - 1.0), l))
        .collect()
}

/// Rounding-tolerant comparison.
pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

/// 25-particle, 2D LJ fluid box of the autocorrelation experiment.
pub const FLUID_N: usize = 25;
pub const FLUID_RHO: f64 = 0.8442;
pub const FLUID_T: f64 = 0.728;

pub fn fluid_spec(gamma: f64) -> SystemSpec {
    let l = (FLUID_N as f64 / FLUID_RHO).sqrt();
    SystemSpec::uniform(FLUID_N, 2, l, 1.0, 1.0 / FLUID_T, gamma).unwrap()
}
