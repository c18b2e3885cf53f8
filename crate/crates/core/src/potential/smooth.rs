use std::f64::consts::TAU;

use super::{Potential, PotentialError};

/// `U(q) = 1 − cos(2πq/ℓ)` and its derivative for one coordinate.
pub fn cosine_well(q: f64, box_length: f64) -> (f64, f64) {
    let k = TAU / box_length;
    let (s, c) = (k * q).sin_cos();
    (1.0 - c, k * s)
}

/// Smooth periodic external field, `amplitude · (1 − cos(2π q_k / ℓ))` summed
/// over every coordinate. Particles do not interact, so any set's energy is
/// just the sum over its own coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct CosineWell {
    dim: usize,
    box_length: f64,
    amplitude: f64,
}

impl CosineWell {
    pub fn new(dim: usize, box_length: f64) -> Self {
        Self::with_amplitude(dim, box_length, 1.0)
    }

    pub fn with_amplitude(dim: usize, box_length: f64, amplitude: f64) -> Self {
        Self {
            dim,
            box_length,
            amplitude,
        }
    }

    pub fn box_length(&self) -> f64 {
        self.box_length
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    /// Energy of a single coordinate; used by quadrature oracles.
    pub fn coordinate_energy(&self, x: f64) -> f64 {
        self.amplitude * cosine_well(x, self.box_length).0
    }
}

impl Potential for CosineWell {
    fn dim(&self) -> usize {
        self.dim
    }

    fn energy(&self, q: &[f64]) -> Result<f64, PotentialError> {
        Ok(q.iter().map(|&x| self.coordinate_energy(x)).sum())
    }

    fn energy_and_gradient(&self, q: &[f64], grad: &mut [f64]) -> Result<f64, PotentialError> {
        let mut e = 0.0;
        for (g, &x) in grad.iter_mut().zip(q) {
            let (u, du) = cosine_well(x, self.box_length);
            e += self.amplitude * u;
            *g = self.amplitude * du;
        }
        Ok(e)
    }

    fn set_energy(&self, q: &[f64], set: &[usize]) -> Result<f64, PotentialError> {
        let d = self.dim;
        Ok(set
            .iter()
            .flat_map(|&i| &q[i * d..(i + 1) * d])
            .map(|&x| self.coordinate_energy(x))
            .sum())
    }

    fn set_energy_and_gradient(
        &self,
        q: &[f64],
        set: &[usize],
        grad: &mut [f64],
    ) -> Result<f64, PotentialError> {
        let d = self.dim;
        let mut e = 0.0;
        for (b, &i) in set.iter().enumerate() {
            for a in 0..d {
                let (u, du) = cosine_well(q[i * d + a], self.box_length);
                e += self.amplitude * u;
                grad[b * d + a] = self.amplitude * du;
            }
        }
        Ok(e)
    }
}

/// `U ≡ 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZeroPotential {
    pub dim: usize,
}

impl Potential for ZeroPotential {
    fn dim(&self) -> usize {
        self.dim
    }

    fn energy(&self, _q: &[f64]) -> Result<f64, PotentialError> {
        Ok(0.0)
    }

    fn energy_and_gradient(&self, _q: &[f64], grad: &mut [f64]) -> Result<f64, PotentialError> {
        grad.fill(0.0);
        Ok(0.0)
    }

    fn set_energy(&self, _q: &[f64], _set: &[usize]) -> Result<f64, PotentialError> {
        Ok(0.0)
    }

    fn set_energy_and_gradient(
        &self,
        _q: &[f64],
        _set: &[usize],
        grad: &mut [f64],
    ) -> Result<f64, PotentialError> {
        grad.fill(0.0);
        Ok(0.0)
    }
}
