//! Potential-energy evaluators.
//!
//! Every evaluator works on flat, particle-major position vectors wrapped into
//! the periodic box. Besides whole-system energies and gradients, evaluators
//! expose *set-scoped* quantities: the energy of every interaction term that
//! involves at least one particle of a set, and the gradient block of that set.
//! When only the set moves, the change in the set-scoped energy equals the
//! change in total energy, which is what the per-set Metropolis test needs.

mod cells;
mod lj;
mod smooth;

pub use cells::CellList;
pub use lj::{lj_pair_energy, LennardJones, PairWindow};
pub use smooth::{cosine_well, CosineWell, ZeroPotential};

use thiserror::Error;

use crate::model::{PhaseState, SystemSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PotentialError {
    #[error("particles {i} and {j} coincide; pair energy is singular")]
    Overlap { i: usize, j: usize },
    #[error("pair distance must be positive, got {0}")]
    NonPositiveDistance(f64),
    #[error("cutoff {r_cut} must lie in (0, {max}]")]
    BadCutoff { r_cut: f64, max: f64 },
    #[error("split radius {r_split} must lie in (0, {r_cut})")]
    BadSplit { r_split: f64, r_cut: f64 },
}

/// Energy and force evaluator.
///
/// `set` arguments are lists of particle indices. Set-scoped gradients are
/// written as `set.len() * dim` values in the order the particles are listed.
pub trait Potential: Send {
    /// Spatial dimension the evaluator was built for.
    fn dim(&self) -> usize;

    fn energy(&self, q: &[f64]) -> Result<f64, PotentialError>;

    /// Writes `∇U(q)` into `grad` and returns `U(q)`.
    fn energy_and_gradient(&self, q: &[f64], grad: &mut [f64]) -> Result<f64, PotentialError>;

    /// Sum of all interaction terms involving at least one particle of `set`.
    fn set_energy(&self, q: &[f64], set: &[usize]) -> Result<f64, PotentialError>;

    /// Writes the gradient block `∇_{Q_set} U(q)` and returns `set_energy`.
    fn set_energy_and_gradient(
        &self,
        q: &[f64],
        set: &[usize],
        grad: &mut [f64],
    ) -> Result<f64, PotentialError>;

    /// Informs the evaluator that the positions of `set` changed to their
    /// values in `q`. Evaluators with neighbour structures update them here.
    fn commit(&mut self, _q: &[f64], _set: &[usize]) {}

    /// Rebuilds any internal structure from scratch for configuration `q`.
    fn sync(&mut self, _q: &[f64]) {}

    /// Fast and slow parts when the evaluator is a [`PotentialSplit`].
    fn split(&self) -> Option<(&dyn Potential, &dyn Potential)> {
        None
    }
}

impl<P: Potential + ?Sized> Potential for Box<P> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn energy(&self, q: &[f64]) -> Result<f64, PotentialError> {
        (**self).energy(q)
    }
    fn energy_and_gradient(&self, q: &[f64], grad: &mut [f64]) -> Result<f64, PotentialError> {
        (**self).energy_and_gradient(q, grad)
    }
    fn set_energy(&self, q: &[f64], set: &[usize]) -> Result<f64, PotentialError> {
        (**self).set_energy(q, set)
    }
    fn set_energy_and_gradient(
        &self,
        q: &[f64],
        set: &[usize],
        grad: &mut [f64],
    ) -> Result<f64, PotentialError> {
        (**self).set_energy_and_gradient(q, set, grad)
    }
    fn commit(&mut self, q: &[f64], set: &[usize]) {
        (**self).commit(q, set)
    }
    fn sync(&mut self, q: &[f64]) {
        (**self).sync(q)
    }
    fn split(&self) -> Option<(&dyn Potential, &dyn Potential)> {
        (**self).split()
    }
}

/// `U = U_fast + U_slow`, integrated by RESPA with the fast part on the inner
/// stepsize.
#[derive(Debug, Clone)]
pub struct PotentialSplit<F, S> {
    pub fast: F,
    pub slow: S,
}

impl<F: Potential, S: Potential> PotentialSplit<F, S> {
    pub fn new(fast: F, slow: S) -> Self {
        assert_eq!(fast.dim(), slow.dim(), "split parts disagree on dimension");
        Self { fast, slow }
    }
}

impl<F: Potential, S: Potential> Potential for PotentialSplit<F, S> {
    fn dim(&self) -> usize {
        self.fast.dim()
    }

    fn energy(&self, q: &[f64]) -> Result<f64, PotentialError> {
        Ok(self.fast.energy(q)? + self.slow.energy(q)?)
    }

    fn energy_and_gradient(&self, q: &[f64], grad: &mut [f64]) -> Result<f64, PotentialError> {
        let mut tmp = vec![0.0; grad.len()];
        let e = self.fast.energy_and_gradient(q, grad)? + self.slow.energy_and_gradient(q, &mut tmp)?;
        for (g, t) in grad.iter_mut().zip(&tmp) {
            *g += t;
        }
        Ok(e)
    }

    fn set_energy(&self, q: &[f64], set: &[usize]) -> Result<f64, PotentialError> {
        Ok(self.fast.set_energy(q, set)? + self.slow.set_energy(q, set)?)
    }

    fn set_energy_and_gradient(
        &self,
        q: &[f64],
        set: &[usize],
        grad: &mut [f64],
    ) -> Result<f64, PotentialError> {
        let mut tmp = vec![0.0; grad.len()];
        let e = self.fast.set_energy_and_gradient(q, set, grad)?
            + self.slow.set_energy_and_gradient(q, set, &mut tmp)?;
        for (g, t) in grad.iter_mut().zip(&tmp) {
            *g += t;
        }
        Ok(e)
    }

    fn commit(&mut self, q: &[f64], set: &[usize]) {
        self.fast.commit(q, set);
        self.slow.commit(q, set);
    }

    fn sync(&mut self, q: &[f64]) {
        self.fast.sync(q);
        self.slow.sync(q);
    }

    fn split(&self) -> Option<(&dyn Potential, &dyn Potential)> {
        Some((&self.fast, &self.slow))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HamiltonianValue {
    pub kinetic: f64,
    pub potential: f64,
    pub total: f64,
}

pub fn hamiltonian(
    state: &PhaseState,
    spec: &SystemSpec,
    potential: &dyn Potential,
) -> Result<HamiltonianValue, PotentialError> {
    let kinetic = state.kinetic_energy(spec);
    let potential = potential.energy(&state.q)?;
    Ok(HamiltonianValue {
        kinetic,
        potential,
        total: kinetic + potential,
    })
}

/// `−∇U(q)`.
pub fn forces(q: &[f64], potential: &dyn Potential) -> Result<Vec<f64>, PotentialError> {
    let mut g = vec![0.0; q.len()];
    potential.energy_and_gradient(q, &mut g)?;
    for x in &mut g {
        *x = -*x;
    }
    Ok(g)
}

/// Kinetic energy carried by the particles of `set`.
pub fn set_kinetic_energy(p: &[f64], set: &[usize], spec: &SystemSpec) -> f64 {
    let d = spec.dim();
    set.iter()
        .map(|&i| {
            let pi = &p[i * d..(i + 1) * d];
            pi.iter().map(|x| x * x).sum::<f64>() / (2.0 * spec.mass(i))
        })
        .sum()
}

/// `H(after) − H(before)` from the kinetic terms of `set` and the interaction
/// terms involving `set` only. The two states must agree outside `set`.
pub fn local_energy_delta(
    before: &PhaseState,
    after: &PhaseState,
    set: &[usize],
    spec: &SystemSpec,
    potential: &dyn Potential,
) -> Result<f64, PotentialError> {
    let dk = set_kinetic_energy(&after.p, set, spec) - set_kinetic_energy(&before.p, set, spec);
    let du = potential.set_energy(&after.q, set)? - potential.set_energy(&before.q, set)?;
    Ok(dk + du)
}

/// Component-wise nearest-image difference `a − b` for coordinates already
/// wrapped into `[0, l)`.
#[inline]
pub(crate) fn min_image(mut dx: f64, l: f64) -> f64 {
    let half = 0.5 * l;
    if dx > half {
        dx -= l;
    } else if dx < -half {
        dx += l;
    }
    dx
}

/// Euclidean norm of the nearest-image separation of two wrapped points.
pub fn minimum_image_distance(qi: &[f64], qj: &[f64], box_length: f64) -> f64 {
    qi.iter()
        .zip(qj)
        .map(|(a, b)| {
            let dx = min_image(a - b, box_length);
            dx * dx
        })
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimum_image_examples() {
        assert_eq!(minimum_image_distance(&[0.0, 0.0], &[0.0, 0.0], 5.0), 0.0);
        assert!((minimum_image_distance(&[0.1, 0.0], &[4.9, 0.0], 5.0) - 0.2).abs() < 1e-12);
        assert_eq!(minimum_image_distance(&[0.0, 0.0], &[2.5, 0.0], 5.0), 2.5);
        assert_eq!(minimum_image_distance(&[2.5, 0.0], &[0.0, 0.0], 5.0), 2.5);
    }

    #[test]
    fn minimum_image_bounded_by_half_diagonal() {
        let l = 3.0;
        let bound = l * 3f64.sqrt() / 2.0 + 1e-12;
        let mut x = 0.123f64;
        for _ in 0..2000 {
            x = (x * 7.31 + 0.417).fract();
            let a = [x * l, (x * 3.7).fract() * l, (x * 11.3).fract() * l];
            let b = [(x * 5.1).fract() * l, (x * 2.3).fract() * l, (x * 13.9).fract() * l];
            let r = minimum_image_distance(&a, &b, l);
            assert!((0.0..=bound).contains(&r));
        }
    }
}
