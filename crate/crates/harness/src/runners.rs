//! Experiment runners. Each leg of a ladder is an independent chain; legs run
//! on the rayon pool and are reassembled in ladder order.

use rayon::prelude::*;
use thiserror::Error;

use metromd_core::constraints::{place_dumbbells, project_to_manifold, ConstraintError, ConstraintSet};
use metromd_core::integrate::{Chain, IntegrateError, ProposalKind, BLOW_UP_ENERGY};
use metromd_core::thermostat::coarsen_noise;
use metromd_core::model::{
    lattice_init, sample_maxwell, ModelError, Partition, PartitionKind, PhaseState, RngStream, StreamPurpose,
    SystemSpec,
};
use metromd_core::observe::{
    chi_square_test, lag_count, fit_loglog_slope, gibbs_bin_probabilities, gibbs_expectation, richardson_error,
    AcceptanceStats, AutocorrEstimate, BatchMeans, ChiSquareResult, CorrelationCurve, ObserveError, GIBBS_NODES,
};
use metromd_core::potential::{CosineWell, LennardJones, Potential, PotentialError};

use crate::config::{ConfigError, Estimator, ExperimentConfig, ProposalName};

pub type DynChain = Chain<Box<dyn Potential>>;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Potential(#[from] PotentialError),
    #[error(transparent)]
    Constraint(#[from] ConstraintError),
    #[error(transparent)]
    Integrate(#[from] IntegrateError),
    #[error(transparent)]
    Observe(#[from] ObserveError),
    /// A property the algorithm guarantees was violated.
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl RunError {
    /// CLI exit status: 2 for bad input, 3 for invariant violations.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) | RunError::Model(_) | RunError::Potential(_) | RunError::Constraint(_) => 2,
            RunError::Invariant(_) => 3,
            RunError::Integrate(IntegrateError::BlowUp { .. } | IntegrateError::Solver(_)) => 3,
            _ => 1,
        }
    }
}

/// Independent seed for leg `index` of an experiment seeded with `seed`.
pub fn leg_seed(seed: u64, index: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03))
}

/// Box side giving `particles` particles number density `density`.
pub fn box_side(particles: usize, dim: usize, density: f64) -> f64 {
    (particles as f64 / density).powf(1.0 / dim as f64)
}

fn lj_potential(cfg: &ExperimentConfig, spec: &SystemSpec) -> Result<Box<dyn Potential>, RunError> {
    let l = spec.box_length();
    // small boxes at fixed density can be narrower than two cutoffs
    let lj = if cfg.r_cut <= 0.5 * l {
        LennardJones::new(spec.dim(), l, cfg.r_cut)?
    } else {
        LennardJones::nearest_image_only(spec.dim(), l, cfg.r_cut)?
    }
    .with_cell_list(cfg.cell_list);
    Ok(match cfg.proposal {
        ProposalName::Respa => Box::new(lj.split(cfg.r_split)?),
        _ => Box::new(lj),
    })
}

fn proposal(cfg: &ExperimentConfig, h: f64) -> ProposalKind {
    match cfg.proposal {
        ProposalName::Verlet => ProposalKind::Verlet,
        ProposalName::Respa => ProposalKind::Respa {
            h_fast: cfg.h_fast.unwrap_or(h / 4.0),
        },
        ProposalName::Rattle => ProposalKind::Rattle(cfg.solver()),
    }
}

/// LJ fluid of `n` particles on the lattice with Maxwell momenta.
pub fn fluid_chain(
    cfg: &ExperimentConfig,
    n: usize,
    kind: PartitionKind,
    h: f64,
    seed: u64,
) -> Result<DynChain, RunError> {
    let l = cfg.box_length.unwrap_or_else(|| box_side(n, cfg.dim, cfg.density));
    let spec = SystemSpec::uniform(n, cfg.dim, l, cfg.mass, cfg.beta(), cfg.gamma)?;
    let mut init = RngStream::new(seed, StreamPurpose::Initialization);
    let q = lattice_init(&spec);
    let p = sample_maxwell(&spec, &mut init);
    let state = PhaseState::new(&spec, q, p)?;
    let partition = Partition::of_kind(kind, n)?;
    let potential = lj_potential(cfg, &spec)?;
    Ok(Chain::new(spec, partition, proposal(cfg, h), h, potential, None, state, seed)?.with_sweep(cfg.sweep)?)
}

/// `cfg.n` rigid dumbbells placed at random without overlap, with tangent
/// Maxwell momenta.
pub fn dumbbell_chain(cfg: &ExperimentConfig, h: f64, seed: u64) -> Result<DynChain, RunError> {
    let n_particles = 2 * cfg.n;
    let l = cfg.box_length.unwrap_or_else(|| box_side(n_particles, cfg.dim, cfg.density));
    let spec = SystemSpec::uniform(n_particles, cfg.dim, l, cfg.mass, cfg.beta(), cfg.gamma)?;
    let constraints = ConstraintSet::dumbbells(cfg.n, cfg.rest_length, l, cfg.dim)?;
    let mut init = RngStream::new(seed, StreamPurpose::Initialization);
    let q = place_dumbbells(cfg.n, cfg.rest_length, &spec, 0.8 * cfg.rest_length, &mut init)?;
    let p = sample_maxwell(&spec, &mut init);
    let (q, p) = project_to_manifold(&q, &p, &constraints, &spec)?;
    let state = PhaseState::new(&spec, q, p)?;
    let potential = lj_potential(cfg, &spec)?;
    let partition = Partition::per_dumbbell(cfg.n);
    Ok(Chain::new(
        spec,
        partition,
        proposal(cfg, h),
        h,
        potential,
        Some(constraints),
        state,
        seed,
    )?
    .with_sweep(cfg.sweep)?)
}

/// Steps between energy checks on Metropolized chains.
const ENERGY_CHECK_INTERVAL: u64 = 1000;

fn check_energy(chain: &DynChain, step: u64) -> Result<(), RunError> {
    let energy = chain.hamiltonian().map(|v| v.total).unwrap_or(f64::INFINITY);
    if !energy.is_finite() || energy > BLOW_UP_ENERGY {
        return Err(RunError::Invariant(format!(
            "Metropolized chain diverged at step {step}: total energy {energy:e}"
        )));
    }
    Ok(())
}

/// One chain of an autocorrelation ladder.
#[derive(Debug, Clone)]
pub struct Leg {
    pub n_particles: usize,
    pub partition: PartitionKind,
    pub h: f64,
    pub curve: CorrelationCurve,
    pub samples: u64,
    pub mean_accept_per_particle: f64,
    pub acceptance_rate: f64,
    pub solver_failures: u64,
    pub max_violation: f64,
    pub max_tangency: f64,
    /// Coupled estimator only: largest standard error, over lags, of the
    /// difference between this leg's curve and the next coarser one.
    pub difference_error: Option<f64>,
}

/// Burns in, then pushes momenta until every lag has `samples` products.
pub fn run_leg(mut chain: DynChain, kind: PartitionKind, burn_in: u64, samples: u64, t_corr: f64) -> Result<Leg, RunError> {
    let h = chain.h();
    let dof = chain.spec().dof();
    let mut stats = AcceptanceStats::new(chain.partition());
    let mut failures = 0u64;
    let mut max_violation = 0.0f64;
    let mut max_tangency = 0.0f64;
    let mut est = AutocorrEstimate::new(h, t_corr, dof);
    let pushes = samples + est.n_lags() as u64 - 1;
    for step in 0..burn_in + pushes {
        let record = chain.step()?;
        failures += record.solver_failures as u64;
        if step >= burn_in {
            stats.record(chain.last_record());
            est.push(&chain.state().p);
        }
        if let Some(cs) = chain.constraints() {
            let state = chain.state();
            max_violation = max_violation.max(cs.max_violation(&state.q));
            max_tangency = max_tangency.max(cs.max_tangency(&state.q, &state.p, chain.spec()));
        }
        if step % ENERGY_CHECK_INTERVAL == 0 {
            check_energy(&chain, step)?;
        }
    }
    Ok(Leg {
        n_particles: chain.spec().n_particles(),
        partition: kind,
        h,
        curve: est.curve(),
        samples: est.count(),
        mean_accept_per_particle: stats.mean_accept_per_particle(),
        acceptance_rate: stats.acceptance_rate(),
        solver_failures: failures,
        max_violation,
        max_tangency,
        difference_error: None,
    })
}

/// Origins affordable with the step budget of `samples` per level.
pub fn coupled_origins(samples: u64, levels: usize, steps_per_origin: usize) -> u64 {
    ((samples as f64 * levels as f64 / steps_per_origin as f64).round() as u64).max(2)
}

/// Per-level bookkeeping of the coupled estimator.
struct LevelStats {
    est: AutocorrEstimate,
    /// Products of the current origin only.
    this_origin: AutocorrEstimate,
    stats: AcceptanceStats,
    failures: u64,
    max_violation: f64,
    max_tangency: f64,
}

impl LevelStats {
    fn observe(&mut self, chain: &DynChain) {
        let record = chain.last_record();
        self.stats.record(record);
        self.failures += record.solver_failures as u64;
        let state = chain.state();
        self.this_origin.push(&state.p);
        if let Some(cs) = chain.constraints() {
            self.max_violation = self.max_violation.max(cs.max_violation(&state.q));
            self.max_tangency = self.max_tangency.max(cs.max_tangency(&state.q, &state.p, chain.spec()));
        }
    }
}

/// Coupled estimate of `A^h` on every stepsize of the ladder.
///
/// A master chain at the coarsest stepsize supplies origins spaced
/// `origin_spacing` apart. The number of origins is chosen so that the run
/// costs as many integrator steps as the long-run estimator would at
/// `samples` products per lag on every level. Every Metropolized chain leaves the same Gibbs
/// measure invariant, so each origin is a stationary start for every level.
/// From it the whole ladder runs for `t_corr`: the finest level draws fresh
/// noise, and each coarser level is driven by the exact composition of two
/// fine OU increments and the first of the two fine uniforms. Each level
/// is therefore a correct sample of its own chain, while neighbouring levels
/// follow nearly the same path, which is what makes their differences cheap
/// to resolve.
fn run_coupled_ladder(
    cfg: &ExperimentConfig,
    kind: PartitionKind,
    seed: u64,
    build: impl Fn(f64, u64) -> Result<DynChain, RunError>,
) -> Result<Vec<Leg>, RunError> {
    let mut hs = cfg.h_ladder.clone();
    hs.sort_by(|a, b| b.total_cmp(a));
    let coarse_lags = lag_count(cfg.t_corr, hs[0]);
    for (i, &h) in hs.iter().enumerate() {
        if lag_count(cfg.t_corr, h) != coarse_lags << i {
            return Err(RunError::Invariant(format!(
                "t_corr = {} is not a whole number of steps at h = {h}",
                cfg.t_corr
            )));
        }
    }
    let mut master = build(hs[0], leg_seed(seed, 0))?;
    for step in 0..cfg.burn_in {
        master.step()?;
        if step % ENERGY_CHECK_INTERVAL == 0 {
            check_energy(&master, step)?;
        }
    }
    let spacing = lag_count(cfg.origin_spacing, hs[0]).max(1);
    let per_origin: usize = spacing + (0..hs.len()).map(|i| coarse_lags << i).sum::<usize>();
    let origins = coupled_origins(cfg.samples, hs.len(), per_origin);
    let mut levels = hs
        .iter()
        .enumerate()
        .map(|(i, &h)| build(h, leg_seed(seed, 1 + i as u64)))
        .collect::<Result<Vec<_>, _>>()?;
    let dof = master.spec().dof();
    let n_sets = master.substeps_per_step();
    let mut book: Vec<LevelStats> = levels
        .iter()
        .map(|c| LevelStats {
            est: AutocorrEstimate::new(c.h(), cfg.t_corr, dof),
            this_origin: AutocorrEstimate::new(c.h(), cfg.t_corr, dof),
            stats: AcceptanceStats::new(c.partition()),
            failures: 0,
            max_violation: 0.0,
            max_tangency: 0.0,
        })
        .collect();
    let mut gauss = RngStream::new(leg_seed(seed, 100), StreamPurpose::Thermostat);
    let mut unif = RngStream::new(leg_seed(seed, 100), StreamPurpose::Metropolis);
    let finest = levels.len() - 1;
    // running Σd and Σd² of the per-origin level differences, per lag
    let mut spread = vec![vec![(0.0f64, 0.0f64); coarse_lags + 1]; finest];
    let fan = 1usize << finest;

    for origin in 0..origins {
        for _ in 0..spacing {
            master.step()?;
        }
        if origin % 64 == 0 {
            check_energy(&master, origin)?;
        }
        for (chain, b) in levels.iter_mut().zip(&mut book) {
            chain.set_state(master.state().clone());
            b.this_origin = AutocorrEstimate::new(chain.h(), cfg.t_corr, dof);
            b.this_origin.push(&chain.state().p);
        }
        for _ in 0..coarse_lags {
            let mut zetas: Vec<Vec<f64>> = (0..fan)
                .map(|_| (0..n_sets).map(|_| unif.uniform()).collect())
                .collect();
            let mut xis: Vec<Vec<f64>> = (0..fan)
                .map(|_| {
                    let mut x = vec![0.0; dof];
                    gauss.fill_gaussian(&mut x);
                    x
                })
                .collect();
            for lvl in (0..=finest).rev() {
                for (z, x) in zetas.iter().zip(&xis) {
                    levels[lvl].step_with(z, x)?;
                    book[lvl].observe(&levels[lvl]);
                }
                if lvl == 0 {
                    break;
                }
                let (fine, coarse) = (levels[lvl].ou_params(), levels[lvl - 1].ou_params());
                xis = xis
                    .chunks_exact(2)
                    .map(|pair| {
                        let mut out = vec![0.0; dof];
                        coarsen_noise(fine, coarse, &pair[0], &pair[1], &mut out);
                        out
                    })
                    .collect();
                zetas = zetas.into_iter().step_by(2).collect();
            }
        }
        for b in book.iter_mut() {
            b.est.merge(&b.this_origin)?;
        }
        for (pair, acc) in book.windows(2).zip(&mut spread) {
            let (coarse, fine) = (pair[0].this_origin.values(), pair[1].this_origin.values());
            for (k, (s1, s2)) in acc.iter_mut().enumerate() {
                let d = fine[2 * k] - coarse[k];
                *s1 += d;
                *s2 += d * d;
            }
        }
        for chain in &levels {
            let energy = chain.hamiltonian().map(|v| v.total).unwrap_or(f64::INFINITY);
            if !energy.is_finite() || energy > BLOW_UP_ENERGY {
                return Err(RunError::Invariant(format!(
                    "Metropolized chain at h = {} diverged from origin {origin}: total energy {energy:e}",
                    chain.h()
                )));
            }
        }
    }
    let n = origins as f64;
    let difference_error = spread
        .iter()
        .map(|acc| {
            acc.iter()
                .map(|&(s1, s2)| {
                    let var = (s2 / n - (s1 / n).powi(2)).max(0.0) * n / (n - 1.0).max(1.0);
                    (var / n).sqrt()
                })
                .fold(0.0, f64::max)
        })
        .collect::<Vec<_>>();
    Ok(levels
        .iter()
        .zip(book)
        .enumerate()
        .map(|(i, (chain, b))| Leg {
            n_particles: chain.spec().n_particles(),
            partition: kind,
            h: chain.h(),
            curve: b.est.curve(),
            samples: b.est.count(),
            mean_accept_per_particle: b.stats.mean_accept_per_particle(),
            acceptance_rate: b.stats.acceptance_rate(),
            solver_failures: b.failures,
            max_violation: b.max_violation,
            max_tangency: b.max_tangency,
            difference_error: i.checked_sub(1).map(|j| difference_error[j]),
        })
        .collect())
}

/// Richardson errors of one partition across the stepsize ladder.
#[derive(Debug, Clone)]
pub struct ConvergenceSeries {
    pub partition: PartitionKind,
    /// `(h, ε_h)` for every stepsize whose double is also on the ladder.
    pub points: Vec<(f64, f64)>,
    /// Standard error of each `ε_h`, scaled like `ε_h`, when available.
    pub noise: Vec<Option<f64>>,
    pub slope: f64,
}

#[derive(Debug, Clone)]
pub struct AutocorrReport {
    pub legs: Vec<Leg>,
    pub series: Vec<ConvergenceSeries>,
}

fn convergence(legs: &[Leg], kind: PartitionKind) -> Result<ConvergenceSeries, RunError> {
    let mut mine: Vec<&Leg> = legs.iter().filter(|l| l.partition == kind).collect();
    mine.sort_by(|a, b| b.h.total_cmp(&a.h));
    let reference = &mine.last().expect("ladder is non-empty").curve;
    let scale = reference.values.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let mut points = Vec::new();
    let mut noise = Vec::new();
    for w in mine.windows(2) {
        let (coarse, fine) = (w[0], w[1]);
        points.push((fine.h, richardson_error(&fine.curve, &coarse.curve, reference)?));
        noise.push(fine.difference_error.map(|e| e / scale));
    }
    let slope = fit_loglog_slope(&points)?;
    Ok(ConvergenceSeries {
        partition: kind,
        points,
        noise,
        slope,
    })
}

fn ladder_jobs(cfg: &ExperimentConfig) -> Vec<(usize, PartitionKind, f64)> {
    let mut hs = cfg.h_ladder.clone();
    hs.sort_by(|a, b| b.total_cmp(a));
    let mut jobs = Vec::new();
    for &kind in &cfg.partitions {
        for &h in &hs {
            jobs.push((jobs.len(), kind, h));
        }
    }
    jobs
}

/// LJ fluid momentum autocorrelation across the stepsize ladder for every
/// configured partition.
pub fn run_autocorr_fluid(cfg: &ExperimentConfig) -> Result<AutocorrReport, RunError> {
    let legs = match cfg.estimator {
        Estimator::LongRun => ladder_jobs(cfg)
            .into_par_iter()
            .map(|(idx, kind, h)| {
                let chain = fluid_chain(cfg, cfg.n, kind, h, leg_seed(cfg.seed, idx as u64))?;
                run_leg(chain, kind, cfg.burn_in, cfg.samples, cfg.t_corr)
            })
            .collect::<Result<Vec<_>, _>>()?,
        Estimator::Coupled => flatten(
            cfg.partitions
                .par_iter()
                .enumerate()
                .map(|(idx, &kind)| {
                    run_coupled_ladder(cfg, kind, leg_seed(cfg.seed, idx as u64), |h, seed| {
                        fluid_chain(cfg, cfg.n, kind, h, seed)
                    })
                })
                .collect(),
        )?,
    };
    let series = cfg
        .partitions
        .iter()
        .map(|&k| convergence(&legs, k))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(AutocorrReport { legs, series })
}

fn flatten(parts: Vec<Result<Vec<Leg>, RunError>>) -> Result<Vec<Leg>, RunError> {
    let mut legs = Vec::new();
    for p in parts {
        legs.extend(p?);
    }
    Ok(legs)
}

#[derive(Debug, Clone)]
pub struct DumbbellReport {
    pub autocorr: AutocorrReport,
    pub max_violation: f64,
    pub max_tangency: f64,
    pub solver_failures: u64,
}

/// Rigid-dumbbell fluid with per-dumbbell RATTLE proposals.
pub fn run_autocorr_dumbbell(cfg: &ExperimentConfig) -> Result<DumbbellReport, RunError> {
    let legs = match cfg.estimator {
        Estimator::LongRun => ladder_jobs(cfg)
            .into_par_iter()
            .map(|(idx, kind, h)| {
                let chain = dumbbell_chain(cfg, h, leg_seed(cfg.seed, idx as u64))?;
                run_leg(chain, kind, cfg.burn_in, cfg.samples, cfg.t_corr)
            })
            .collect::<Result<Vec<_>, _>>()?,
        Estimator::Coupled => run_coupled_ladder(cfg, PartitionKind::PerDumbbell, cfg.seed, |h, seed| {
            dumbbell_chain(cfg, h, seed)
        })?,
    };
    let series = vec![convergence(&legs, PartitionKind::PerDumbbell)?];
    let max_violation = legs.iter().map(|l| l.max_violation).fold(0.0, f64::max);
    let max_tangency = legs.iter().map(|l| l.max_tangency).fold(0.0, f64::max);
    let solver_failures = legs.iter().map(|l| l.solver_failures).sum();
    Ok(DumbbellReport {
        autocorr: AutocorrReport { legs, series },
        max_violation,
        max_tangency,
        solver_failures,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingRow {
    pub n: usize,
    pub partition: PartitionKind,
    pub mean_accept_per_particle: f64,
    pub acceptance_rate: f64,
    pub csv_row: String,
}

#[derive(Debug, Clone)]
pub struct ScalingReport {
    pub rows: Vec<ScalingRow>,
    /// Log-log slope of mean acceptance per particle against `n`, per partition.
    pub slopes: Vec<(PartitionKind, f64)>,
}

/// Mean acceptance per particle against system size at fixed density.
pub fn run_scaling(cfg: &ExperimentConfig) -> Result<ScalingReport, RunError> {
    let mut jobs = Vec::new();
    for &kind in &cfg.partitions {
        for &n in &cfg.n_ladder {
            jobs.push((jobs.len(), kind, n));
        }
    }
    let rows = jobs
        .into_par_iter()
        .map(|(idx, kind, n)| {
            let mut chain = fluid_chain(cfg, n, kind, cfg.h, leg_seed(cfg.seed, idx as u64))?;
            let mut stats = AcceptanceStats::new(chain.partition());
            for step in 0..cfg.burn_in + cfg.samples {
                chain.step()?;
                if step >= cfg.burn_in {
                    stats.record(chain.last_record());
                }
                if step % ENERGY_CHECK_INTERVAL == 0 {
                    check_energy(&chain, step)?;
                }
            }
            Ok(ScalingRow {
                n,
                partition: kind,
                mean_accept_per_particle: stats.mean_accept_per_particle(),
                acceptance_rate: stats.acceptance_rate(),
                csv_row: stats.csv_row(),
            })
        })
        .collect::<Result<Vec<_>, RunError>>()?;
    let slopes = cfg
        .partitions
        .iter()
        .map(|&k| {
            let pts: Vec<(f64, f64)> = rows
                .iter()
                .filter(|r| r.partition == k)
                .map(|r| (r.n as f64, r.mean_accept_per_particle))
                .collect();
            Ok((k, fit_loglog_slope(&pts)?))
        })
        .collect::<Result<Vec<_>, RunError>>()?;
    Ok(ScalingReport { rows, slopes })
}

#[derive(Debug, Clone)]
pub struct StationarityReport {
    pub steps: u64,
    pub histogram: Vec<u64>,
    pub expected: Vec<f64>,
    pub chi_square: ChiSquareResult,
    pub momentum_variance: f64,
    pub expected_momentum_variance: f64,
    pub cos_mean: f64,
    pub cos_standard_error: f64,
    pub cos_expected: f64,
    pub acceptance_rate: f64,
}

/// One particle on the one-dimensional torus in the smooth cosine well.
pub fn stationarity_chain(cfg: &ExperimentConfig) -> Result<DynChain, RunError> {
    let l = cfg.box_length.unwrap_or(1.0);
    let spec = SystemSpec::uniform(1, 1, l, cfg.mass, cfg.beta(), cfg.gamma)?;
    let mut init = RngStream::new(cfg.seed, StreamPurpose::Initialization);
    let q = vec![init.uniform() * l];
    let p = sample_maxwell(&spec, &mut init);
    let state = PhaseState::new(&spec, q, p)?;
    let potential: Box<dyn Potential> = Box::new(CosineWell::new(1, l));
    let partition = Partition::trivial(1);
    Ok(Chain::new(spec, partition, ProposalKind::Verlet, cfg.h, potential, None, state, cfg.seed)?)
}

/// Ergodic averages of the smooth one-particle chain against quadrature of
/// the Gibbs density. The position histogram is filled every `thin` steps so
/// that its counts are close to independent; moments use every step.
pub fn run_stationarity(cfg: &ExperimentConfig) -> Result<StationarityReport, RunError> {
    let mut chain = stationarity_chain(cfg)?;
    let l = chain.spec().box_length();
    let beta = chain.spec().beta();
    let mass = chain.spec().mass(0);
    let well = CosineWell::new(1, l);
    let bins = cfg.bins;
    let mut histogram = vec![0u64; bins];
    let mut p2 = 0.0;
    let mut cos = BatchMeans::new(10_000);
    let mut stats = AcceptanceStats::new(chain.partition());
    let k = std::f64::consts::TAU / l;
    for step in 0..cfg.burn_in + cfg.samples {
        chain.step()?;
        if step < cfg.burn_in {
            continue;
        }
        stats.record(chain.last_record());
        let s = chain.state();
        let (q, p) = (s.q[0], s.p[0]);
        p2 += p * p;
        cos.push((k * q).cos());
        if (step - cfg.burn_in) % cfg.thin == 0 {
            let b = ((q / l * bins as f64) as usize).min(bins - 1);
            histogram[b] += 1;
        }
    }
    let expected = gibbs_bin_probabilities(|x| well.coordinate_energy(x), beta, l, bins, 200);
    let chi_square = chi_square_test(&histogram, &expected)?;
    Ok(StationarityReport {
        steps: cfg.samples,
        histogram,
        expected,
        chi_square,
        momentum_variance: p2 / cfg.samples as f64,
        expected_momentum_variance: mass / beta,
        cos_mean: cos.mean(),
        cos_standard_error: cos.standard_error(),
        cos_expected: gibbs_expectation(|x| well.coordinate_energy(x), |x| (k * x).cos(), beta, l, GIBBS_NODES),
        acceptance_rate: stats.acceptance_rate(),
    })
}

#[derive(Debug, Clone)]
pub struct BlowupReport {
    /// Step at which the unpatched chain diverged, if it did.
    pub explicit_blowup_step: Option<u64>,
    pub explicit_steps_run: u64,
    pub patched_steps: u64,
    pub patched_max_energy: f64,
    pub patched_mean_accept: f64,
}

/// Unpatched and Metropolized chains from the same start at a large stepsize.
pub fn run_blowup_demo(cfg: &ExperimentConfig) -> Result<BlowupReport, RunError> {
    let kind = cfg.partitions[0];
    let mut explicit = fluid_chain(cfg, cfg.n, kind, cfg.h, cfg.seed)?;
    let mut explicit_blowup_step = None;
    let mut explicit_steps_run = 0;
    for step in 0..cfg.samples {
        explicit_steps_run = step + 1;
        match explicit.explicit_step() {
            Ok(_) => {}
            Err(IntegrateError::BlowUp { .. }) => {
                explicit_blowup_step = Some(step);
                break;
            }
            Err(e) => return Err(e.into()),
        }
    }

    let mut patched = fluid_chain(cfg, cfg.n, kind, cfg.h, cfg.seed)?;
    let mut stats = AcceptanceStats::new(patched.partition());
    let mut max_energy = f64::NEG_INFINITY;
    for step in 0..cfg.samples {
        patched.step()?;
        stats.record(patched.last_record());
        let energy = patched.hamiltonian().map(|v| v.total).unwrap_or(f64::INFINITY);
        max_energy = max_energy.max(energy);
        if !energy.is_finite() || energy > BLOW_UP_ENERGY {
            return Err(RunError::Invariant(format!(
                "Metropolized chain diverged at step {step}: total energy {energy:e}"
            )));
        }
    }
    Ok(BlowupReport {
        explicit_blowup_step,
        explicit_steps_run,
        patched_steps: cfg.samples,
        patched_max_energy: max_energy,
        patched_mean_accept: stats.mean_accept_per_particle(),
    })
}
