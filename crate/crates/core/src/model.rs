//! Core domain types: system description, phase-space state, partitions of the
//! degrees of freedom, and the seeded random streams every chain draws from.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Open01, StandardNormal};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("system must contain at least one particle")]
    NoParticles,
    #[error("spatial dimension must be 1, 2 or 3, got {0}")]
    BadDimension(usize),
    #[error("box length must be positive and finite, got {0}")]
    BadBoxLength(f64),
    #[error("expected {expected} masses, got {got}")]
    MassCount { expected: usize, got: usize },
    #[error("mass of particle {index} must be positive, got {mass}")]
    BadMass { index: usize, mass: f64 },
    #[error("inverse temperature must be positive, got {0}")]
    BadBeta(f64),
    #[error("friction must be non-negative, got {0}")]
    BadGamma(f64),
    #[error("state vectors must have length {expected}, got q={q} p={p}")]
    StateLength { expected: usize, q: usize, p: usize },
    #[error("position component {index} = {value} lies outside [0, {box_length})")]
    Unwrapped { index: usize, value: f64, box_length: f64 },
    #[error("partition: {0}")]
    Partition(String),
    #[error("unknown partition kind `{0}`")]
    UnknownPartitionKind(String),
}

/// Physical description of the simulated system.
///
/// Masses are per particle; every Cartesian component of a particle shares its
/// mass, so the mass matrix is diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemSpec {
    n_particles: usize,
    dim: usize,
    box_length: f64,
    masses: Vec<f64>,
    beta: f64,
    gamma: f64,
}

impl SystemSpec {
    pub fn new(
        n_particles: usize,
        dim: usize,
        box_length: f64,
        masses: Vec<f64>,
        beta: f64,
        gamma: f64,
    ) -> Result<Self, ModelError> {
        if n_particles == 0 {
            return Err(ModelError::NoParticles);
        }
        if !(1..=3).contains(&dim) {
            return Err(ModelError::BadDimension(dim));
        }
        if !(box_length > 0.0 && box_length.is_finite()) {
            return Err(ModelError::BadBoxLength(box_length));
        }
        if masses.len() != n_particles {
            return Err(ModelError::MassCount {
                expected: n_particles,
                got: masses.len(),
            });
        }
        if let Some((index, &mass)) = masses
            .iter()
            .enumerate()
            .find(|(_, m)| !(**m > 0.0 && m.is_finite()))
        {
            return Err(ModelError::BadMass { index, mass });
        }
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(ModelError::BadBeta(beta));
        }
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return Err(ModelError::BadGamma(gamma));
        }
        Ok(Self {
            n_particles,
            dim,
            box_length,
            masses,
            beta,
            gamma,
        })
    }

    /// All particles share the same mass.
    pub fn uniform(
        n_particles: usize,
        dim: usize,
        box_length: f64,
        mass: f64,
        beta: f64,
        gamma: f64,
    ) -> Result<Self, ModelError> {
        Self::new(n_particles, dim, box_length, vec![mass; n_particles], beta, gamma)
    }

    pub fn n_particles(&self) -> usize {
        self.n_particles
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn box_length(&self) -> f64 {
        self.box_length
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn mass(&self, particle: usize) -> f64 {
        self.masses[particle]
    }

    /// Total number of configurational degrees of freedom, `n_particles * dim`.
    pub fn dof(&self) -> usize {
        self.n_particles * self.dim
    }

    pub fn with_gamma(mut self, gamma: f64) -> Result<Self, ModelError> {
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return Err(ModelError::BadGamma(gamma));
        }
        self.gamma = gamma;
        Ok(self)
    }
}

/// Side of a periodic box in `dim` dimensions holding `n` particles at number
/// density `rho`.
pub fn box_length_for_density(n: usize, dim: usize, rho: f64) -> f64 {
    (n as f64 / rho).powf(1.0 / dim as f64)
}

/// Positions (wrapped into the box) and momenta, stored particle-major:
/// component `a` of particle `i` lives at index `i * dim + a`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseState {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
}

impl PhaseState {
    /// Validates lengths and that every position is already wrapped.
    pub fn new(spec: &SystemSpec, q: Vec<f64>, p: Vec<f64>) -> Result<Self, ModelError> {
        let nu = spec.dof();
        if q.len() != nu || p.len() != nu {
            return Err(ModelError::StateLength {
                expected: nu,
                q: q.len(),
                p: p.len(),
            });
        }
        let l = spec.box_length();
        if let Some((index, &value)) = q.iter().enumerate().find(|(_, x)| !(**x >= 0.0 && **x < l)) {
            return Err(ModelError::Unwrapped {
                index,
                value,
                box_length: l,
            });
        }
        Ok(Self { q, p })
    }

    pub fn particle_q(&self, particle: usize, dim: usize) -> &[f64] {
        &self.q[particle * dim..(particle + 1) * dim]
    }

    pub fn particle_p(&self, particle: usize, dim: usize) -> &[f64] {
        &self.p[particle * dim..(particle + 1) * dim]
    }

    /// Kinetic energy `½ pᵀ M⁻¹ p`.
    pub fn kinetic_energy(&self, spec: &SystemSpec) -> f64 {
        let d = spec.dim();
        self.p
            .chunks_exact(d)
            .zip(spec.masses())
            .map(|(pi, m)| pi.iter().map(|x| x * x).sum::<f64>() / (2.0 * m))
            .sum()
    }
}

/// Wraps one coordinate into `[0, box_length)`.
#[inline]
pub fn wrap_coord(x: f64, box_length: f64) -> f64 {
    let r = x.rem_euclid(box_length);
    // rem_euclid of a tiny negative number rounds up to exactly box_length
    if r >= box_length {
        0.0
    } else {
        r
    }
}

pub fn wrap_position(q: &mut [f64], box_length: f64) {
    for x in q.iter_mut() {
        *x = wrap_coord(*x, box_length);
    }
}

/// Ordered, disjoint groups of particle indices covering every particle once.
/// Sets are updated in this order during a Metropolis sweep.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    sets: Vec<Vec<usize>>,
    kind: PartitionKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PartitionKind {
    Trivial,
    PerParticle,
    PerDumbbell,
    Custom,
}

impl PartitionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PartitionKind::Trivial => "trivial",
            PartitionKind::PerParticle => "per_particle",
            PartitionKind::PerDumbbell => "per_dumbbell",
            PartitionKind::Custom => "custom",
        }
    }
}

impl fmt::Display for PartitionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PartitionKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "trivial" => Ok(PartitionKind::Trivial),
            "per_particle" => Ok(PartitionKind::PerParticle),
            "per_dumbbell" => Ok(PartitionKind::PerDumbbell),
            other => Err(ModelError::UnknownPartitionKind(other.to_string())),
        }
    }
}

impl Partition {
    /// One set holding every particle: the global Verlet move.
    pub fn trivial(n_particles: usize) -> Self {
        Self {
            sets: vec![(0..n_particles).collect()],
            kind: PartitionKind::Trivial,
        }
    }

    pub fn per_particle(n_particles: usize) -> Self {
        Self {
            sets: (0..n_particles).map(|i| vec![i]).collect(),
            kind: PartitionKind::PerParticle,
        }
    }

    /// Dumbbell `k` is the particle pair `(2k, 2k + 1)`.
    pub fn per_dumbbell(n_dumbbells: usize) -> Self {
        Self {
            sets: (0..n_dumbbells).map(|k| vec![2 * k, 2 * k + 1]).collect(),
            kind: PartitionKind::PerDumbbell,
        }
    }

    pub fn of_kind(kind: PartitionKind, n_particles: usize) -> Result<Self, ModelError> {
        match kind {
            PartitionKind::Trivial => Ok(Self::trivial(n_particles)),
            PartitionKind::PerParticle => Ok(Self::per_particle(n_particles)),
            PartitionKind::PerDumbbell if n_particles % 2 == 0 => {
                Ok(Self::per_dumbbell(n_particles / 2))
            }
            PartitionKind::PerDumbbell => Err(ModelError::Partition(format!(
                "per-dumbbell partition needs an even particle count, got {n_particles}"
            ))),
            PartitionKind::Custom => Err(ModelError::Partition(
                "custom partitions are built with Partition::from_sets".into(),
            )),
        }
    }

    pub fn from_sets(sets: Vec<Vec<usize>>, n_particles: usize) -> Result<Self, ModelError> {
        let mut seen = vec![false; n_particles];
        for set in &sets {
            if set.is_empty() {
                return Err(ModelError::Partition("empty set".into()));
            }
            for &i in set {
                if i >= n_particles {
                    return Err(ModelError::Partition(format!(
                        "particle {i} out of range for {n_particles} particles"
                    )));
                }
                if std::mem::replace(&mut seen[i], true) {
                    return Err(ModelError::Partition(format!("particle {i} appears twice")));
                }
            }
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(ModelError::Partition(format!("particle {missing} not covered")));
        }
        Ok(Self {
            sets,
            kind: PartitionKind::Custom,
        })
    }

    pub fn kind(&self) -> PartitionKind {
        self.kind
    }

    pub fn sets(&self) -> &[Vec<usize>] {
        &self.sets
    }

    pub fn set(&self, j: usize) -> &[usize] {
        &self.sets[j]
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    pub fn n_particles(&self) -> usize {
        self.sets.iter().map(Vec::len).sum()
    }
}

/// Purpose of a random sub-stream. Each purpose maps to its own ChaCha stream
/// id under the same seed, so thermostat noise, Metropolis uniforms and
/// initialization draws never interleave.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamPurpose {
    Initialization,
    Thermostat,
    Metropolis,
}

impl StreamPurpose {
    fn stream_id(self) -> u64 {
        match self {
            StreamPurpose::Initialization => 0,
            StreamPurpose::Thermostat => 1,
            StreamPurpose::Metropolis => 2,
        }
    }
}

/// Explicitly seeded random stream. Identical `(seed, purpose)` pairs yield
/// bitwise-identical sequences.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    purpose: StreamPurpose,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, purpose: StreamPurpose) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(purpose.stream_id());
        Self { seed, purpose, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn purpose(&self) -> StreamPurpose {
        self.purpose
    }

    /// Uniform draw on the open interval (0, 1).
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        self.rng.sample(Open01)
    }

    #[inline]
    pub fn gaussian(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    pub fn fill_gaussian(&mut self, out: &mut [f64]) {
        for x in out {
            *x = self.gaussian();
        }
    }
}

/// The two streams consumed while a chain runs.
#[derive(Debug, Clone)]
pub struct ChainRng {
    pub thermostat: RngStream,
    pub metropolis: RngStream,
}

impl ChainRng {
    pub fn new(seed: u64) -> Self {
        Self {
            thermostat: RngStream::new(seed, StreamPurpose::Thermostat),
            metropolis: RngStream::new(seed, StreamPurpose::Metropolis),
        }
    }
}

/// Draws momenta from the Maxwell distribution `N(0, m_i / β)` per component.
pub fn sample_maxwell(spec: &SystemSpec, rng: &mut RngStream) -> Vec<f64> {
    let d = spec.dim();
    let mut p = vec![0.0; spec.dof()];
    for (i, pi) in p.chunks_exact_mut(d).enumerate() {
        let sd = (spec.mass(i) / spec.beta()).sqrt();
        for x in pi {
            *x = sd * rng.gaussian();
        }
    }
    p
}

/// Smallest `k` with `k^dim >= n`.
fn lattice_side(n: usize, dim: usize) -> usize {
    let mut k = (n as f64).powf(1.0 / dim as f64).round().max(1.0) as usize;
    while k.saturating_sub(1).pow(dim as u32) >= n && k > 1 {
        k -= 1;
    }
    while k.pow(dim as u32) < n {
        k += 1;
    }
    k
}

/// Places particles on the vertices of a square (cubic) lattice with spacing
/// `ℓ / ⌈n^{1/d}⌉`, filling sites in lexicographic order with the last axis
/// varying fastest.
pub fn lattice_init(spec: &SystemSpec) -> Vec<f64> {
    let n = spec.n_particles();
    let d = spec.dim();
    let k = lattice_side(n, d);
    let spacing = spec.box_length() / k as f64;
    let mut q = Vec::with_capacity(n * d);
    for i in 0..n {
        let mut digits = [0usize; 3];
        let mut rest = i;
        for a in (0..d).rev() {
            digits[a] = rest % k;
            rest /= k;
        }
        q.extend(digits[..d].iter().map(|&c| c as f64 * spacing));
    }
    q
}
