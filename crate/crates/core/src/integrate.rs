//! Proposal maps and the Metropolized Langevin step.
//!
//! One step sweeps the partition sets in ascending order. For each set a
//! Verlet, RESPA or RATTLE move of that set alone is proposed and accepted with
//! probability `min(1, e^{−βΔH})`; a rejected set keeps its positions and has
//! its momenta negated. The exact OU thermostat then acts on all momenta.

use std::fmt::Write as _;

use thiserror::Error;

use crate::constraints::{project_tangent, ConstraintError, ConstraintSet, DumbbellConstraint, MAX_BLOCK};
use crate::model::{wrap_coord, ChainRng, Partition, PhaseState, SystemSpec};
use crate::potential::{hamiltonian, set_kinetic_energy, HamiltonianValue, Potential, PotentialError};
use crate::thermostat::{constrained_ou_step_with_noise, ou_step_with_noise, OUParams, ThermostatError};

/// Total energy above which the unpatched integrator is declared divergent.
pub const BLOW_UP_ENERGY: f64 = 1e10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IntegrateError {
    #[error("stepsize must be positive and finite, got {0}")]
    BadStep(f64),
    #[error("inner stepsize {h_fast} must lie in (0, {h}]")]
    BadInnerStep { h: f64, h_fast: f64 },
    #[error("RESPA proposals need a potential with a fast/slow split")]
    NoSplit,
    #[error("RATTLE proposals need a constraint set, and constraints need RATTLE proposals")]
    ConstraintMismatch,
    #[error("solver tolerance must be positive and iterations at least 1")]
    BadSolver,
    #[error("partition covers {partition} particles but the system has {system}")]
    PartitionSize { partition: usize, system: usize },
    #[error("potential is {potential}-dimensional but the system is {system}-dimensional")]
    DimensionMismatch { potential: usize, system: usize },
    #[error(transparent)]
    Constraint(#[from] ConstraintError),
    #[error(transparent)]
    Thermostat(#[from] ThermostatError),
    #[error(transparent)]
    Potential(#[from] PotentialError),
    #[error("constraint solver failed: {0}")]
    Solver(SolverFailure),
    #[error("integrator diverged: total energy {energy:e}")]
    BlowUp { energy: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RattleSolverParams {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for RattleSolverParams {
    fn default() -> Self {
        Self {
            tolerance: 1e-12,
            max_iterations: 50,
        }
    }
}

impl RattleSolverParams {
    pub fn validate(&self) -> Result<(), IntegrateError> {
        if self.tolerance > 0.0 && self.max_iterations >= 1 {
            Ok(())
        } else {
            Err(IntegrateError::BadSolver)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProposalKind {
    Verlet,
    /// Inner stepsize `h_fast`; the number of inner steps is `⌊h/h_fast⌋`.
    Respa { h_fast: f64 },
    Rattle(RattleSolverParams),
}

impl ProposalKind {
    /// `N_f = ⌊h/h_f⌋` for RESPA, 1 otherwise.
    pub fn inner_steps(&self, h: f64) -> Result<usize, IntegrateError> {
        match *self {
            ProposalKind::Respa { h_fast } => {
                if !(h_fast > 0.0 && h_fast <= h * (1.0 + 1e-12)) {
                    return Err(IntegrateError::BadInnerStep { h, h_fast });
                }
                // a ratio a hair below an integer still counts as that integer
                let ratio = h / h_fast;
                let near = ratio.round();
                let n = if (ratio - near).abs() <= 1e-9 * near { near } else { ratio.floor() };
                Ok((n as usize).max(1))
            }
            _ => Ok(1),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ProposalKind::Verlet => "verlet",
            ProposalKind::Respa { .. } => "respa",
            ProposalKind::Rattle(_) => "rattle",
        }
    }
}

/// Newton iteration for the position multiplier did not converge.
#[derive(Debug, Error, Clone, Copy, PartialEq)]
#[error("no convergence after {iterations} iterations, residual {residual:e}")]
pub struct SolverFailure {
    pub iterations: usize,
    pub residual: f64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SubstepError {
    #[error(transparent)]
    Potential(#[from] PotentialError),
    #[error(transparent)]
    Solver(#[from] SolverFailure),
}

/// `min(1, e^{−βΔH})`; `+∞` and NaN give 0.
pub fn accept_probability(delta_h: f64, beta: f64) -> f64 {
    if delta_h <= 0.0 {
        1.0
    } else if delta_h.is_finite() {
        (-beta * delta_h).exp()
    } else {
        0.0
    }
}

/// Order in which a step visits the sets of the partition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Sweep {
    /// Sets `0, 1, …, m − 1`, each moved by `h`.
    #[default]
    Ascending,
    /// Sets `0, …, m − 1` then `m − 1, …, 0`, each visit moving by `h/2`.
    /// The composite map is symmetric, so its splitting error is second order.
    Symmetric,
}

impl Sweep {
    pub fn name(self) -> &'static str {
        match self {
            Sweep::Ascending => "ascending",
            Sweep::Symmetric => "symmetric",
        }
    }

    /// Sets in visiting order for a partition of `m` sets.
    pub fn order(self, m: usize) -> Vec<usize> {
        match self {
            Sweep::Ascending => (0..m).collect(),
            Sweep::Symmetric => (0..m).chain((0..m).rev()).collect(),
        }
    }

    /// Stepsize of each visit.
    pub fn substep(self, h: f64) -> f64 {
        match self {
            Sweep::Ascending => h,
            Sweep::Symmetric => 0.5 * h,
        }
    }
}

/// Outcome of one sweep, one entry per visited set.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepRecord {
    /// Partition set moved by each substep.
    pub set: Vec<usize>,
    pub accepted: Vec<bool>,
    pub delta_h: Vec<f64>,
    pub zeta: Vec<f64>,
    pub probability: Vec<f64>,
    pub solver_failures: u32,
}

impl StepRecord {
    fn reset(&mut self, m: usize) {
        self.set.clear();
        self.accepted.clear();
        self.delta_h.clear();
        self.zeta.clear();
        self.probability.clear();
        self.accepted.reserve(m);
        self.solver_failures = 0;
    }

    pub fn n_accepted(&self) -> usize {
        self.accepted.iter().filter(|&&a| a).count()
    }

    pub fn mean_delta_h(&self) -> f64 {
        if self.delta_h.is_empty() {
            return 0.0;
        }
        self.delta_h.iter().sum::<f64>() / self.delta_h.len() as f64
    }

    pub const CSV_HEADER: &'static str = "step,accepted,mean_delta_h,solver_failures";

    pub fn csv_row(&self, step: u64) -> String {
        let mut s = String::new();
        let _ = write!(
            s,
            "{step},{},{:e},{}",
            self.n_accepted(),
            self.mean_delta_h(),
            self.solver_failures
        );
        s
    }
}

/// In-place Verlet move of `set`. `grad` must hold `set.len() * dim` values.
/// Returns the set-scoped potential energy before and after.
pub fn verlet_in_place(
    q: &mut [f64],
    p: &mut [f64],
    set: &[usize],
    h: f64,
    spec: &SystemSpec,
    potential: &dyn Potential,
    grad: &mut [f64],
) -> Result<(f64, f64), PotentialError> {
    let d = spec.dim();
    let l = spec.box_length();
    let u0 = potential.set_energy_and_gradient(q, set, grad)?;
    for (b, &i) in set.iter().enumerate() {
        let m = spec.mass(i);
        for a in 0..d {
            let k = i * d + a;
            p[k] -= 0.5 * h * grad[b * d + a];
            q[k] = wrap_coord(q[k] + h * p[k] / m, l);
        }
    }
    let u1 = potential.set_energy_and_gradient(q, set, grad)?;
    kick(p, set, d, 0.5 * h, grad);
    Ok((u0, u1))
}

fn kick(p: &mut [f64], set: &[usize], d: usize, half: f64, grad: &[f64]) {
    for (b, &i) in set.iter().enumerate() {
        for a in 0..d {
            p[i * d + a] -= half * grad[b * d + a];
        }
    }
}

/// In-place RESPA move: slow half-kick, `n_inner` Verlet steps of length
/// `h / n_inner` on the fast part, slow half-kick.
#[allow(clippy::too_many_arguments)]
pub fn respa_in_place(
    q: &mut [f64],
    p: &mut [f64],
    set: &[usize],
    h: f64,
    n_inner: usize,
    spec: &SystemSpec,
    fast: &dyn Potential,
    slow: &dyn Potential,
    grad_fast: &mut [f64],
    grad_slow: &mut [f64],
) -> Result<(f64, f64), PotentialError> {
    let d = spec.dim();
    let l = spec.box_length();
    let hf = h / n_inner as f64;
    let us0 = slow.set_energy_and_gradient(q, set, grad_slow)?;
    kick(p, set, d, 0.5 * h, grad_slow);
    let uf0 = fast.set_energy_and_gradient(q, set, grad_fast)?;
    let mut uf1 = uf0;
    for _ in 0..n_inner {
        for (b, &i) in set.iter().enumerate() {
            let m = spec.mass(i);
            for a in 0..d {
                let k = i * d + a;
                p[k] -= 0.5 * hf * grad_fast[b * d + a];
                q[k] = wrap_coord(q[k] + hf * p[k] / m, l);
            }
        }
        uf1 = fast.set_energy_and_gradient(q, set, grad_fast)?;
        kick(p, set, d, 0.5 * hf, grad_fast);
    }
    let us1 = slow.set_energy_and_gradient(q, set, grad_slow)?;
    kick(p, set, d, 0.5 * h, grad_slow);
    Ok((uf0 + us0, uf1 + us1))
}

/// In-place RATTLE move of one dumbbell. `set` must list the constraint's two
/// particles in order. The position multiplier is found by scalar Newton
/// iteration on `g(q_free − (h²/2) λ M⁻¹ ∇g(q)) = 0`; the momentum multiplier
/// by the exact linear solve that makes `p*` tangent at `q*`.
///
/// On solver failure `q` and `p` are left partially updated; callers restore
/// them.
#[allow(clippy::too_many_arguments)]
pub fn rattle_in_place(
    q: &mut [f64],
    p: &mut [f64],
    set: &[usize],
    constraint: &DumbbellConstraint,
    h: f64,
    spec: &SystemSpec,
    potential: &dyn Potential,
    solver: &RattleSolverParams,
    grad: &mut [f64],
) -> Result<(f64, f64), SubstepError> {
    let d = spec.dim();
    let k = 2 * d;
    let l = spec.box_length();
    let [a, b] = constraint.particles();
    debug_assert_eq!(set, [a, b]);
    let w = constraint.inverse_masses(spec);

    // unwrapped local block with the second atom next to the first
    let sep = constraint.separation(q);
    let mut x0 = [0.0; MAX_BLOCK];
    let mut pb = [0.0; MAX_BLOCK];
    for c in 0..d {
        x0[c] = q[a * d + c];
        x0[d + c] = q[a * d + c] - sep[c];
        pb[c] = p[a * d + c];
        pb[d + c] = p[b * d + c];
    }
    let u0 = potential.set_energy_and_gradient(q, set, grad)?;
    let g0 = constraint.block_gradient(&x0);
    let mut q_free = [0.0; MAX_BLOCK];
    let mut dir = [0.0; MAX_BLOCK];
    for c in 0..k {
        pb[c] -= 0.5 * h * grad[c];
        q_free[c] = x0[c] + h * w[c] * pb[c];
        dir[c] = -0.5 * h * h * w[c] * g0[c];
    }

    let mut lambda = 0.0;
    let mut xs = q_free;
    let mut residual = constraint.block_value(&xs);
    let mut iterations = 0;
    while residual.abs() > solver.tolerance {
        if iterations == solver.max_iterations {
            return Err(SolverFailure {
                iterations,
                residual,
            }
            .into());
        }
        let gx = constraint.block_gradient(&xs);
        let slope: f64 = (0..k).map(|c| gx[c] * dir[c]).sum();
        if slope == 0.0 || !slope.is_finite() {
            return Err(SolverFailure {
                iterations,
                residual,
            }
            .into());
        }
        lambda -= residual / slope;
        for c in 0..k {
            xs[c] = q_free[c] + lambda * dir[c];
        }
        residual = constraint.block_value(&xs);
        iterations += 1;
    }

    for c in 0..k {
        pb[c] -= 0.5 * h * lambda * g0[c];
    }
    for c in 0..d {
        q[a * d + c] = wrap_coord(xs[c], l);
        q[b * d + c] = wrap_coord(xs[d + c], l);
    }
    let u1 = potential.set_energy_and_gradient(q, set, grad)?;
    for c in 0..k {
        pb[c] -= 0.5 * h * grad[c];
    }
    let g1 = constraint.gradient(q);
    project_tangent(&g1[..k], &w[..k], &mut pb[..k]);
    for c in 0..d {
        p[a * d + c] = pb[c];
        p[b * d + c] = pb[d + c];
    }
    Ok((u0, u1))
}

/// Verlet proposal for `set` as a fresh state. The potential's neighbour
/// structure, if any, must match `state`.
pub fn verlet_substep(
    state: &PhaseState,
    set: &[usize],
    h: f64,
    spec: &SystemSpec,
    potential: &dyn Potential,
) -> Result<PhaseState, PotentialError> {
    let mut out = state.clone();
    let mut grad = vec![0.0; set.len() * spec.dim()];
    verlet_in_place(&mut out.q, &mut out.p, set, h, spec, potential, &mut grad)?;
    Ok(out)
}

pub fn respa_substep(
    state: &PhaseState,
    set: &[usize],
    h: f64,
    n_inner: usize,
    spec: &SystemSpec,
    fast: &dyn Potential,
    slow: &dyn Potential,
) -> Result<PhaseState, PotentialError> {
    let mut out = state.clone();
    let mut gf = vec![0.0; set.len() * spec.dim()];
    let mut gs = gf.clone();
    respa_in_place(&mut out.q, &mut out.p, set, h, n_inner, spec, fast, slow, &mut gf, &mut gs)?;
    Ok(out)
}

pub fn rattle_substep(
    state: &PhaseState,
    constraint: &DumbbellConstraint,
    h: f64,
    spec: &SystemSpec,
    potential: &dyn Potential,
    solver: &RattleSolverParams,
) -> Result<PhaseState, SubstepError> {
    let mut out = state.clone();
    let set = constraint.particles();
    let mut grad = vec![0.0; 2 * spec.dim()];
    rattle_in_place(
        &mut out.q, &mut out.p, &set, constraint, h, spec, potential, solver, &mut grad,
    )?;
    Ok(out)
}

#[derive(Debug, Default)]
struct Scratch {
    q_old: Vec<f64>,
    p_old: Vec<f64>,
    grad_a: Vec<f64>,
    grad_b: Vec<f64>,
    xi: Vec<f64>,
    zeta: Vec<f64>,
}

/// A single Markov chain: state, potential, partition, proposal and RNG
/// streams. The chain owns its state so that neighbour structures inside the
/// potential always match it.
pub struct Chain<P: Potential> {
    spec: SystemSpec,
    partition: Partition,
    proposal: ProposalKind,
    n_inner: usize,
    h: f64,
    sweep: Sweep,
    order: Vec<usize>,
    h_sub: f64,
    potential: P,
    constraints: Option<ConstraintSet>,
    ou: OUParams,
    rng: ChainRng,
    state: PhaseState,
    record: StepRecord,
    scratch: Scratch,
    substeps: u64,
}

impl<P: Potential> Chain<P> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        spec: SystemSpec,
        partition: Partition,
        proposal: ProposalKind,
        h: f64,
        mut potential: P,
        constraints: Option<ConstraintSet>,
        state: PhaseState,
        seed: u64,
    ) -> Result<Self, IntegrateError> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(IntegrateError::BadStep(h));
        }
        if partition.n_particles() != spec.n_particles() {
            return Err(IntegrateError::PartitionSize {
                partition: partition.n_particles(),
                system: spec.n_particles(),
            });
        }
        if potential.dim() != spec.dim() {
            return Err(IntegrateError::DimensionMismatch {
                potential: potential.dim(),
                system: spec.dim(),
            });
        }
        let n_inner = proposal.inner_steps(h)?;
        match (&proposal, &constraints) {
            (ProposalKind::Rattle(solver), Some(cs)) => {
                solver.validate()?;
                cs.check_partition(&partition)?;
            }
            (ProposalKind::Rattle(_), None) | (_, Some(_)) => {
                return Err(IntegrateError::ConstraintMismatch)
            }
            (ProposalKind::Respa { .. }, None) if potential.split().is_none() => {
                return Err(IntegrateError::NoSplit)
            }
            _ => {}
        }
        let ou = OUParams::new(&spec, h)?;
        potential.sync(&state.q);
        let widest = partition.sets().iter().map(Vec::len).max().unwrap_or(0) * spec.dim();
        let scratch = Scratch {
            q_old: vec![0.0; widest],
            p_old: vec![0.0; widest],
            grad_a: vec![0.0; widest],
            grad_b: vec![0.0; widest],
            xi: vec![0.0; state.p.len()],
            zeta: vec![0.0; partition.len()],
        };
        let partition_len = partition.len();
        Ok(Self {
            spec,
            partition,
            proposal,
            n_inner,
            h,
            sweep: Sweep::Ascending,
            order: Sweep::Ascending.order(partition_len),
            h_sub: h,
            potential,
            constraints,
            ou,
            rng: ChainRng::new(seed),
            state,
            record: StepRecord::default(),
            scratch,
            substeps: 0,
        })
    }

    /// Switches the visiting order of the sets.
    pub fn with_sweep(mut self, sweep: Sweep) -> Result<Self, IntegrateError> {
        let h_sub = sweep.substep(self.h);
        self.n_inner = self.proposal.inner_steps(h_sub)?;
        self.order = sweep.order(self.partition.len());
        self.scratch.zeta = vec![0.0; self.order.len()];
        self.sweep = sweep;
        self.h_sub = h_sub;
        Ok(self)
    }

    pub fn sweep(&self) -> Sweep {
        self.sweep
    }

    /// Metropolis substeps per step, hence uniforms consumed per step.
    pub fn substeps_per_step(&self) -> usize {
        self.order.len()
    }

    pub fn spec(&self) -> &SystemSpec {
        &self.spec
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn inner_steps(&self) -> usize {
        self.n_inner
    }

    pub fn state(&self) -> &PhaseState {
        &self.state
    }

    pub fn into_state(self) -> PhaseState {
        self.state
    }

    pub fn potential(&self) -> &P {
        &self.potential
    }

    pub fn constraints(&self) -> Option<&ConstraintSet> {
        self.constraints.as_ref()
    }

    pub fn ou_params(&self) -> &OUParams {
        &self.ou
    }

    pub fn last_record(&self) -> &StepRecord {
        &self.record
    }

    /// Replaces the state and rebuilds the potential's neighbour structure.
    pub fn set_state(&mut self, state: PhaseState) {
        self.potential.sync(&state.q);
        self.state = state;
    }

    pub fn hamiltonian(&self) -> Result<HamiltonianValue, PotentialError> {
        hamiltonian(&self.state, &self.spec, &self.potential)
    }

    /// One Metropolized step: the accept/reject sweep over all sets in order,
    /// then the thermostat.
    pub fn step(&mut self) -> Result<&StepRecord, IntegrateError> {
        let mut zeta = std::mem::take(&mut self.scratch.zeta);
        let mut xi = std::mem::take(&mut self.scratch.xi);
        for z in zeta.iter_mut() {
            *z = self.rng.metropolis.uniform();
        }
        if self.ou.gamma() != 0.0 {
            self.rng.thermostat.fill_gaussian(&mut xi);
        }
        let out = self.sweep_and_thermostat(&zeta, &xi);
        self.scratch.zeta = zeta;
        self.scratch.xi = xi;
        out?;
        Ok(&self.record)
    }

    /// [`Chain::step`] with externally supplied randomness: one uniform per
    /// substep and one standard normal per momentum component. The chain's
    /// own streams are left untouched.
    pub fn step_with(&mut self, zeta: &[f64], xi: &[f64]) -> Result<&StepRecord, IntegrateError> {
        assert_eq!(zeta.len(), self.order.len(), "one uniform per substep");
        assert_eq!(xi.len(), self.state.p.len(), "one gaussian per component");
        self.sweep_and_thermostat(zeta, xi)?;
        Ok(&self.record)
    }

    fn sweep_and_thermostat(&mut self, zeta: &[f64], xi: &[f64]) -> Result<(), IntegrateError> {
        self.record.reset(self.order.len());
        for (k, &z) in zeta.iter().enumerate() {
            self.metropolis_substep(self.order[k], z);
        }
        self.thermostat_with(xi)
    }

    /// One step of the unpatched integrator: every proposal is accepted.
    /// Returns the total energy afterwards, or [`IntegrateError::BlowUp`] when
    /// it is non-finite or above [`BLOW_UP_ENERGY`].
    pub fn explicit_step(&mut self) -> Result<f64, IntegrateError> {
        for k in 0..self.order.len() {
            let j = self.order[k];
            match self.propose(j) {
                Ok(_) => {}
                Err(SubstepError::Potential(_)) => {
                    return Err(IntegrateError::BlowUp { energy: f64::INFINITY })
                }
                Err(SubstepError::Solver(f)) => return Err(IntegrateError::Solver(f)),
            }
            let set = self.partition.set(j);
            self.potential.commit(&self.state.q, set);
        }
        self.thermostat()?;
        let energy = match self.hamiltonian() {
            Ok(v) => v.total,
            Err(_) => f64::INFINITY,
        };
        if !energy.is_finite() || energy > BLOW_UP_ENERGY {
            return Err(IntegrateError::BlowUp { energy });
        }
        Ok(energy)
    }

    fn thermostat(&mut self) -> Result<(), IntegrateError> {
        let mut xi = std::mem::take(&mut self.scratch.xi);
        if self.ou.gamma() != 0.0 {
            self.rng.thermostat.fill_gaussian(&mut xi);
        }
        let out = self.thermostat_with(&xi);
        self.scratch.xi = xi;
        out
    }

    fn thermostat_with(&mut self, xi: &[f64]) -> Result<(), IntegrateError> {
        match &self.constraints {
            Some(cs) => constrained_ou_step_with_noise(&mut self.state, cs, &self.spec, &self.ou, xi)?,
            None => ou_step_with_noise(&mut self.state, &self.ou, xi),
        }
        Ok(())
    }

    /// Runs the configured proposal on set `j` in place.
    fn propose(&mut self, j: usize) -> Result<(f64, f64), SubstepError> {
        let set = self.partition.set(j);
        let width = set.len() * self.spec.dim();
        let ga = &mut self.scratch.grad_a[..width];
        let q = &mut self.state.q;
        let p = &mut self.state.p;
        match &self.proposal {
            ProposalKind::Verlet => Ok(verlet_in_place(q, p, set, self.h_sub, &self.spec, &self.potential, ga)?),
            ProposalKind::Respa { .. } => {
                let (fast, slow) = self.potential.split().expect("checked at construction");
                let gb = &mut self.scratch.grad_b[..width];
                Ok(respa_in_place(q, p, set, self.h_sub, self.n_inner, &self.spec, fast, slow, ga, gb)?)
            }
            ProposalKind::Rattle(solver) => {
                let c = self.constraints.as_ref().expect("checked at construction").get(j);
                rattle_in_place(q, p, set, c, self.h_sub, &self.spec, &self.potential, solver, ga)
            }
        }
    }

    fn metropolis_substep(&mut self, j: usize, zeta: f64) {
        let d = self.spec.dim();
        let width = self.partition.set(j).len() * d;
        {
            let set = self.partition.set(j);
            for (b, &i) in set.iter().enumerate() {
                self.scratch.q_old[b * d..(b + 1) * d].copy_from_slice(&self.state.q[i * d..(i + 1) * d]);
                self.scratch.p_old[b * d..(b + 1) * d].copy_from_slice(&self.state.p[i * d..(i + 1) * d]);
            }
        }
        let k0 = set_kinetic_energy(&self.state.p, self.partition.set(j), &self.spec);
        let delta_h = match self.propose(j) {
            Ok((u0, u1)) => {
                let k1 = set_kinetic_energy(&self.state.p, self.partition.set(j), &self.spec);
                let dh = (k1 - k0) + (u1 - u0);
                if dh.is_nan() {
                    f64::INFINITY
                } else {
                    dh
                }
            }
            Err(SubstepError::Potential(_)) => f64::INFINITY,
            Err(SubstepError::Solver(_)) => {
                self.record.solver_failures += 1;
                f64::INFINITY
            }
        };
        let probability = accept_probability(delta_h, self.spec.beta());
        let accepted = zeta < probability;

        self.substeps += 1;
        #[cfg(debug_assertions)]
        if accepted && self.substeps % 4096 == 1 {
            self.check_local_delta(j, delta_h);
        }

        let set = self.partition.set(j);
        if accepted {
            self.potential.commit(&self.state.q, set);
        } else {
            for (b, &i) in set.iter().enumerate() {
                self.state.q[i * d..(i + 1) * d].copy_from_slice(&self.scratch.q_old[b * d..(b + 1) * d]);
                for (x, &old) in self.state.p[i * d..(i + 1) * d]
                    .iter_mut()
                    .zip(&self.scratch.p_old[b * d..(b + 1) * d])
                {
                    *x = -old;
                }
            }
        }
        debug_assert!(width <= self.scratch.q_old.len());
        self.record.set.push(j);
        self.record.accepted.push(accepted);
        self.record.delta_h.push(delta_h);
        self.record.zeta.push(zeta);
        self.record.probability.push(probability);
    }

    /// Compares the set-local energy change against two full evaluations.
    #[cfg(debug_assertions)]
    fn check_local_delta(&self, j: usize, delta_h: f64) {
        let d = self.spec.dim();
        let mut before = self.state.clone();
        for (b, &i) in self.partition.set(j).iter().enumerate() {
            before.q[i * d..(i + 1) * d].copy_from_slice(&self.scratch.q_old[b * d..(b + 1) * d]);
            before.p[i * d..(i + 1) * d].copy_from_slice(&self.scratch.p_old[b * d..(b + 1) * d]);
        }
        let h0 = hamiltonian(&before, &self.spec, &self.potential);
        let h1 = hamiltonian(&self.state, &self.spec, &self.potential);
        if let (Ok(h0), Ok(h1)) = (h0, h1) {
            let full = h1.total - h0.total;
            let scale = 1.0 + h0.potential.abs() + h0.kinetic;
            assert!(
                (full - delta_h).abs() <= 1e-9 * scale,
                "local ΔH {delta_h:e} disagrees with full ΔH {full:e}"
            );
        }
    }
}
