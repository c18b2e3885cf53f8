//! Exact Ornstein–Uhlenbeck momentum flows.
//!
//! Over a step of length `h` the momentum SDE `dp = −γ M⁻¹ p dt + √(2γ/β) dW`
//! has the Gaussian transition `p ← e^{−γh/m} p + η` with
//! `Var η = (m/β)(1 − e^{−2γh/m})` per component. Positions are untouched.

use thiserror::Error;

use crate::constraints::{project_tangent, ConstraintSet, MAX_BLOCK};
use crate::model::{PhaseState, RngStream, SystemSpec};

/// Largest entry/step violation of the constraint manifold accepted on entry
/// to the constrained flow.
pub const MANIFOLD_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ThermostatError {
    #[error("stepsize must be positive and finite, got {0}")]
    BadStep(f64),
    #[error("constrained set {0} mixes particle masses")]
    UnequalMasses(usize),
    #[error("state is off the constraint manifold at set {index}: g = {value:e}, tangency = {tangency:e}")]
    OffManifold { index: usize, value: f64, tangency: f64 },
}

/// `e^{−γh/m}`. Satisfies `decay(h₁)·decay(h₂) = decay(h₁ + h₂)` up to rounding.
pub fn decay(gamma: f64, h: f64, mass: f64) -> f64 {
    (-gamma * h / mass).exp()
}

/// Per-component standard deviation of the OU increment.
pub fn noise_std(gamma: f64, beta: f64, h: f64, mass: f64) -> f64 {
    // −expm1 keeps precision when γh/m is tiny
    ((mass / beta) * -(-2.0 * gamma * h / mass).exp_m1()).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct OUParams {
    gamma: f64,
    beta: f64,
    h: f64,
    decay: Vec<f64>,
    std: Vec<f64>,
}

impl OUParams {
    pub fn new(spec: &SystemSpec, h: f64) -> Result<Self, ThermostatError> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(ThermostatError::BadStep(h));
        }
        let (gamma, beta) = (spec.gamma(), spec.beta());
        let masses = spec.masses();
        Ok(Self {
            gamma,
            beta,
            h,
            decay: masses.iter().map(|&m| decay(gamma, h, m)).collect(),
            std: masses.iter().map(|&m| noise_std(gamma, beta, h, m)).collect(),
        })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn particle_decay(&self, i: usize) -> f64 {
        self.decay[i]
    }

    pub fn particle_std(&self, i: usize) -> f64 {
        self.std[i]
    }
}

/// Exact OU flow on every momentum component; draws one Gaussian per
/// component in storage order.
pub fn ou_step(state: &mut PhaseState, params: &OUParams, rng: &mut RngStream) {
    if params.gamma == 0.0 {
        return;
    }
    let mut xi = vec![0.0; state.p.len()];
    rng.fill_gaussian(&mut xi);
    ou_step_with_noise(state, params, &xi);
}

/// [`ou_step`] driven by a given standard normal vector `xi`, one entry per
/// momentum component.
pub fn ou_step_with_noise(state: &mut PhaseState, params: &OUParams, xi: &[f64]) {
    if params.gamma == 0.0 {
        return;
    }
    let d = state.p.len() / params.decay.len();
    for (i, (block, noise)) in state.p.chunks_exact_mut(d).zip(xi.chunks_exact(d)).enumerate() {
        let (c, s) = (params.decay[i], params.std[i]);
        for (x, z) in block.iter_mut().zip(noise) {
            *x = c * *x + s * z;
        }
    }
}

/// Standard normal noise for one step at `2h` that reproduces, in law and
/// pathwise, two consecutive steps at `h` driven by `xi1` then `xi2`:
/// `σ_{2h} ξ = e^{−γh/m} σ_h ξ₁ + σ_h ξ₂`.
pub fn coarsen_noise(fine: &OUParams, coarse: &OUParams, xi1: &[f64], xi2: &[f64], out: &mut [f64]) {
    let d = xi1.len() / fine.decay.len();
    for (k, o) in out.iter_mut().enumerate() {
        let i = k / d;
        let s2 = coarse.std[i];
        *o = if s2 > 0.0 {
            (fine.decay[i] * fine.std[i] * xi1[k] + fine.std[i] * xi2[k]) / s2
        } else {
            xi2[k]
        };
    }
}

/// Dense `ν_i × ν_i` projector `P = I − G (Gᵀ M⁻¹ G)⁻¹ Gᵀ M⁻¹` for one
/// scalar constraint with gradient block `G`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionMatrix {
    size: usize,
    entries: Vec<f64>,
}

impl ProjectionMatrix {
    pub fn new(grad: &[f64], inv_mass: &[f64]) -> Self {
        let size = grad.len();
        let den: f64 = grad.iter().zip(inv_mass).map(|(g, w)| g * w * g).sum();
        let mut entries = vec![0.0; size * size];
        for r in 0..size {
            for c in 0..size {
                let id = if r == c { 1.0 } else { 0.0 };
                let outer = if den > 0.0 { grad[r] * grad[c] * inv_mass[c] / den } else { 0.0 };
                entries[r * size + c] = id - outer;
            }
        }
        Self { size, entries }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.entries[r * self.size + c]
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        (0..self.size)
            .map(|r| (0..self.size).map(|c| self.get(r, c) * v[c]).sum())
            .collect()
    }

    pub fn square(&self) -> Self {
        let n = self.size;
        let mut entries = vec![0.0; n * n];
        for r in 0..n {
            for c in 0..n {
                entries[r * n + c] = (0..n).map(|k| self.get(r, k) * self.get(k, c)).sum();
            }
        }
        Self { size: n, entries }
    }
}

/// Projected OU flow on the cotangent manifold of `constraints`.
///
/// With mass `m` shared by the members of a constrained set,
/// `e^{−γ P M⁻¹ h} = I + (e^{−γh/m} − 1) P` and the increment is `σ P ξ`, so
/// `p ← p + (e^{−γh/m} − 1) P p + σ P ξ`. Particles outside every constraint
/// get the unconstrained flow. One Gaussian is drawn per component in storage
/// order.
pub fn constrained_ou_step(
    state: &mut PhaseState,
    constraints: &ConstraintSet,
    spec: &SystemSpec,
    params: &OUParams,
    rng: &mut RngStream,
) -> Result<(), ThermostatError> {
    let mut xi = vec![0.0; state.p.len()];
    if params.gamma != 0.0 {
        rng.fill_gaussian(&mut xi);
    }
    constrained_ou_step_with_noise(state, constraints, spec, params, &xi)
}

/// [`constrained_ou_step`] driven by a given standard normal vector.
pub fn constrained_ou_step_with_noise(
    state: &mut PhaseState,
    constraints: &ConstraintSet,
    spec: &SystemSpec,
    params: &OUParams,
    xi: &[f64],
) -> Result<(), ThermostatError> {
    let d = spec.dim();
    for (index, c) in constraints.iter().enumerate() {
        let value = c.value(&state.q);
        let tangency = c.tangency(&state.q, &state.p, spec);
        if value.abs() > MANIFOLD_TOLERANCE || tangency.abs() > MANIFOLD_TOLERANCE {
            return Err(ThermostatError::OffManifold {
                index,
                value,
                tangency,
            });
        }
        let [a, b] = c.particles();
        if spec.mass(a) != spec.mass(b) {
            return Err(ThermostatError::UnequalMasses(index));
        }
    }
    if params.gamma == 0.0 {
        return Ok(());
    }
    let mut constrained = vec![false; spec.n_particles()];
    for c in constraints.iter() {
        let [a, b] = c.particles();
        constrained[a] = true;
        constrained[b] = true;
        let (decay, std) = (params.decay[a], params.std[a]);
        let g = c.gradient(&state.q);
        let w = c.inverse_masses(spec);
        let k = 2 * d;
        let mut pp = [0.0; MAX_BLOCK];
        let mut noise = [0.0; MAX_BLOCK];
        pp[..d].copy_from_slice(&state.p[a * d..(a + 1) * d]);
        pp[d..k].copy_from_slice(&state.p[b * d..(b + 1) * d]);
        noise[..d].copy_from_slice(&xi[a * d..(a + 1) * d]);
        noise[d..k].copy_from_slice(&xi[b * d..(b + 1) * d]);
        project_tangent(&g[..k], &w[..k], &mut pp[..k]);
        project_tangent(&g[..k], &w[..k], &mut noise[..k]);
        for x in 0..d {
            state.p[a * d + x] += (decay - 1.0) * pp[x] + std * noise[x];
            state.p[b * d + x] += (decay - 1.0) * pp[d + x] + std * noise[d + x];
        }
    }
    for i in (0..spec.n_particles()).filter(|&i| !constrained[i]) {
        let (c, s) = (params.decay[i], params.std[i]);
        for (x, z) in state.p[i * d..(i + 1) * d].iter_mut().zip(&xi[i * d..(i + 1) * d]) {
            *x = c * *x + s * z;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::StreamPurpose;

    fn one_particle(gamma: f64) -> SystemSpec {
        SystemSpec::uniform(1, 1, 1.0, 1.0, 1.0, gamma).unwrap()
    }

    #[test]
    fn zero_friction_is_identity() {
        let spec = one_particle(0.0);
        let params = OUParams::new(&spec, 0.1).unwrap();
        let mut s = PhaseState::new(&spec, vec![0.3], vec![1.7]).unwrap();
        let mut rng = RngStream::new(1, StreamPurpose::Thermostat);
        ou_step(&mut s, &params, &mut rng);
        assert_eq!(s.p, vec![1.7]);
        assert_eq!(s.q, vec![0.3]);
    }

    #[test]
    fn closed_form_coefficients() {
        let spec = one_particle(1.0);
        let params = OUParams::new(&spec, 0.1).unwrap();
        assert_eq!(params.particle_decay(0), (-0.1f64).exp());
        let var = params.particle_std(0).powi(2);
        assert!((var - (1.0 - (-0.2f64).exp())).abs() < 1e-15);
    }

    #[test]
    fn semigroup_decay() {
        for &(a, b) in &[(0.1, 0.2), (0.013, 0.5), (1.0, 2.0)] {
            let lhs = decay(1.3, a, 0.7) * decay(1.3, b, 0.7);
            let rhs = decay(1.3, a + b, 0.7);
            assert!((lhs - rhs).abs() <= 2.0 * f64::EPSILON * rhs);
        }
    }

    #[test]
    fn large_friction_gives_maxwell() {
        // γh/m = 50
        let spec = SystemSpec::uniform(1, 1, 1.0, 1.0, 2.0, 500.0).unwrap();
        let params = OUParams::new(&spec, 0.1).unwrap();
        let mut rng = RngStream::new(3, StreamPurpose::Thermostat);
        let mut s = PhaseState::new(&spec, vec![0.0], vec![10.0]).unwrap();
        let n = 1_000_000;
        let mut m2 = 0.0;
        for _ in 0..n {
            ou_step(&mut s, &params, &mut rng);
            m2 += s.p[0] * s.p[0];
        }
        let var = m2 / n as f64;
        assert!((var - 0.5).abs() < 0.01 * 0.5, "{var}");
    }

    #[test]
    fn projection_is_idempotent_and_tangent() {
        let g = [1.2, -0.4, 0.3, -1.2, 0.4, -0.3];
        let w = [1.0; 6];
        let p = ProjectionMatrix::new(&g, &w);
        let p2 = p.square();
        for r in 0..6 {
            for c in 0..6 {
                assert!((p.get(r, c) - p2.get(r, c)).abs() < 1e-12);
            }
        }
        let v = [0.3, 1.0, -2.0, 0.5, 0.1, 0.9];
        let pv = p.apply(&v);
        let t: f64 = g.iter().zip(&w).zip(&pv).map(|((g, w), x)| g * w * x).sum();
        assert!(t.abs() < 1e-14);
        let mut direct = v;
        project_tangent(&g, &w, &mut direct);
        for (a, b) in direct.iter().zip(&pv) {
            assert!((a - b).abs() < 1e-14);
        }
    }
}
