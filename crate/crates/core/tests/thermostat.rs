use metromd_core::constraints::{project_to_manifold, ConstraintSet};
use metromd_core::model::{sample_maxwell, PhaseState, RngStream, StreamPurpose, SystemSpec};
use metromd_core::thermostat::{
    coarsen_noise, constrained_ou_step, constrained_ou_step_with_noise, decay, noise_std, ou_step,
    ou_step_with_noise, OUParams, ProjectionMatrix, ThermostatError,
};
use proptest::prelude::*;

fn moments(xs: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let m4 = xs.iter().map(|x| x.powi(4)).sum::<f64>() / n;
    (mean, var, m4)
}

#[test]
fn exact_flow_agrees_with_fine_euler_maruyama() {
    // Euler–Maruyama transitions are Gaussian; iterate their mean and variance
    let (gamma, beta, m, h) = (2.0, 1.4, 1.3, 0.5);
    let steps = 10_000;
    let dt = h / steps as f64;
    let (mut mean, mut var) = (1.0, 0.0);
    for _ in 0..steps {
        let c = 1.0 - gamma * dt / m;
        mean *= c;
        var = c * c * var + 2.0 * gamma * dt / beta;
    }
    let c = decay(gamma, h, m);
    let s = noise_std(gamma, beta, h, m);
    assert!((mean - c).abs() / c < 0.01);
    assert!((var - s * s).abs() / (s * s) < 0.01);

    // and the sampled flow has that law
    let spec = SystemSpec::uniform(100_000, 1, 10.0, m, beta, gamma).unwrap();
    let params = OUParams::new(&spec, h).unwrap();
    let mut state = PhaseState { q: vec![1.0; 100_000], p: vec![1.0; 100_000] };
    ou_step(&mut state, &params, &mut RngStream::new(3, StreamPurpose::Thermostat));
    let (em, ev, _) = moments(&state.p);
    assert!((em - c).abs() < 0.01);
    assert!((ev - s * s).abs() / (s * s) < 0.02);
}

#[test]
fn maxwell_distribution_is_preserved() {
    let (m, beta) = (2.0, 0.5);
    let n = 1_000_000;
    let spec = SystemSpec::uniform(n, 1, 10.0, m, beta, 3.0).unwrap();
    let params = OUParams::new(&spec, 0.2).unwrap();
    let mut rng = RngStream::new(8, StreamPurpose::Thermostat);
    let p = sample_maxwell(&spec, &mut RngStream::new(8, StreamPurpose::Initialization));
    let mut state = PhaseState { q: vec![0.0; n], p };
    for _ in 0..5 {
        ou_step(&mut state, &params, &mut rng);
    }
    let (mean, var, m4) = moments(&state.p);
    let v = m / beta;
    assert!(mean.abs() < 0.01 * v.sqrt());
    assert!((var - v).abs() / v < 0.01);
    assert!((m4 - 3.0 * v * v).abs() / (3.0 * v * v) < 0.01);
}

#[test]
fn zero_friction_leaves_momenta_alone() {
    let spec = SystemSpec::uniform(3, 2, 5.0, 1.0, 1.0, 0.0).unwrap();
    let params = OUParams::new(&spec, 0.1).unwrap();
    let p = vec![0.3, -1.0, 2.0, 0.0, 5.0, -0.2];
    let mut state = PhaseState { q: vec![1.0; 6], p: p.clone() };
    let mut rng = RngStream::new(1, StreamPurpose::Thermostat);
    ou_step(&mut state, &params, &mut rng);
    assert_eq!(state.p, p);
    let cs = ConstraintSet::dumbbells(1, 1.0, 5.0, 2).unwrap();
    let mut s2 = PhaseState { q: vec![1.0, 1.0, 2.0, 1.0, 3.0, 3.0], p: vec![0.0, 1.0, 0.0, -1.0, 1.0, 1.0] };
    let before = s2.clone();
    constrained_ou_step(&mut s2, &cs, &spec, &params, &mut rng).unwrap();
    assert_eq!(s2, before);
}

#[test]
fn coarse_noise_has_unit_variance() {
    let spec = SystemSpec::uniform(2, 1, 10.0, 1.7, 0.8, 1.2).unwrap();
    let fine = OUParams::new(&spec, 0.03).unwrap();
    let coarse = OUParams::new(&spec, 0.06).unwrap();
    let mut rng = RngStream::new(5, StreamPurpose::Thermostat);
    let n = 200_000;
    let mut out = vec![0.0; 2];
    let mut samples = Vec::with_capacity(2 * n);
    for _ in 0..n {
        let (a, b) = ([rng.gaussian(), rng.gaussian()], [rng.gaussian(), rng.gaussian()]);
        coarsen_noise(&fine, &coarse, &a, &b, &mut out);
        samples.extend_from_slice(&out);
    }
    let (mean, var, _) = moments(&samples);
    assert!(mean.abs() < 0.01);
    assert!((var - 1.0).abs() < 0.01);
}

/// One dumbbell along the x axis with a free third particle.
fn dumbbell_plus_one(gamma: f64, beta: f64) -> (SystemSpec, ConstraintSet, PhaseState) {
    let spec = SystemSpec::uniform(3, 2, 8.0, 1.5, beta, gamma).unwrap();
    let cs = ConstraintSet::dumbbells(1, 1.0, 8.0, 2).unwrap();
    let q = vec![2.0, 2.0, 2.6, 2.8, 6.0, 6.0];
    let p = sample_maxwell(&spec, &mut RngStream::new(2, StreamPurpose::Initialization));
    let (q, p) = project_to_manifold(&q, &p, &cs, &spec).unwrap();
    (spec, cs, PhaseState { q, p })
}

#[test]
fn constrained_flow_stays_tangent() {
    let (spec, cs, mut state) = dumbbell_plus_one(1.0, 1.0);
    let params = OUParams::new(&spec, 0.01).unwrap();
    let mut rng = RngStream::new(4, StreamPurpose::Thermostat);
    for _ in 0..10_000 {
        constrained_ou_step(&mut state, &cs, &spec, &params, &mut rng).unwrap();
        assert!(cs.max_tangency(&state.q, &state.p, &spec) < 1e-12);
    }
}

#[test]
fn strong_friction_gives_projected_covariance() {
    let beta = 2.0;
    let (spec, cs, mut state) = dumbbell_plus_one(1e3, beta);
    let params = OUParams::new(&spec, 1.0).unwrap();
    let c = cs.get(0);
    let g = c.gradient(&state.q);
    let w = c.inverse_masses(&spec);
    let proj = ProjectionMatrix::new(&g[..4], &w[..4]);
    let mut rng = RngStream::new(6, StreamPurpose::Thermostat);
    let n = 200_000;
    let mut cov = [[0.0; 4]; 4];
    for _ in 0..n {
        constrained_ou_step(&mut state, &cs, &spec, &params, &mut rng).unwrap();
        for r in 0..4 {
            for k in 0..4 {
                cov[r][k] += state.p[r] * state.p[k] / n as f64;
            }
        }
    }
    let v = 1.5 / beta;
    for r in 0..4 {
        for k in 0..4 {
            assert!((cov[r][k] - v * proj.get(r, k)).abs() < 0.02 * v, "{r},{k}: {}", cov[r][k]);
        }
    }
}

#[test]
fn constrained_flow_checks_its_input() {
    let (spec, cs, state) = dumbbell_plus_one(1.0, 1.0);
    let params = OUParams::new(&spec, 0.1).unwrap();
    let xi = vec![0.0; 6];

    let mut off = state.clone();
    off.q[0] += 0.01;
    assert!(matches!(
        constrained_ou_step_with_noise(&mut off, &cs, &spec, &params, &xi),
        Err(ThermostatError::OffManifold { .. })
    ));

    let uneven = SystemSpec::new(3, 2, 8.0, vec![1.0, 2.0, 1.0], 1.0, 1.0).unwrap();
    let mut s = state.clone();
    s.p = vec![0.0; 6];
    let params = OUParams::new(&uneven, 0.1).unwrap();
    assert_eq!(
        constrained_ou_step_with_noise(&mut s, &cs, &uneven, &params, &xi),
        Err(ThermostatError::UnequalMasses(0))
    );
}

proptest! {
    #[test]
    fn one_long_step_equals_k_short_steps_in_law(
        gamma in 0.01..5.0f64, beta in 0.2..5.0f64, m in 0.3..3.0f64, h in 0.001..1.0f64, k in 1u32..20,
    ) {
        let short = h / k as f64;
        let c = decay(gamma, short, m);
        let s2 = noise_std(gamma, beta, short, m).powi(2);
        let var: f64 = (0..k).map(|j| c.powi(2 * j as i32) * s2).sum();
        prop_assert!((c.powi(k as i32) - decay(gamma, h, m)).abs() < 1e-12);
        prop_assert!((var - noise_std(gamma, beta, h, m).powi(2)).abs() < 1e-12 * (1.0 + var));
    }

    #[test]
    fn coarsened_noise_reproduces_two_fine_steps(
        gamma in 0.01..5.0f64, h in 0.001..0.5f64, seed in any::<u64>(),
    ) {
        let spec = SystemSpec::uniform(3, 2, 10.0, 1.3, 0.7, gamma).unwrap();
        let fine = OUParams::new(&spec, h).unwrap();
        let coarse = OUParams::new(&spec, 2.0 * h).unwrap();
        let mut rng = RngStream::new(seed, StreamPurpose::Thermostat);
        let mut xi1 = vec![0.0; 6];
        let mut xi2 = vec![0.0; 6];
        rng.fill_gaussian(&mut xi1);
        rng.fill_gaussian(&mut xi2);
        let p0: Vec<f64> = (0..6).map(|_| rng.gaussian()).collect();

        let mut two = PhaseState { q: vec![0.0; 6], p: p0.clone() };
        ou_step_with_noise(&mut two, &fine, &xi1);
        ou_step_with_noise(&mut two, &fine, &xi2);
        let mut xi = vec![0.0; 6];
        coarsen_noise(&fine, &coarse, &xi1, &xi2, &mut xi);
        let mut one = PhaseState { q: vec![0.0; 6], p: p0 };
        ou_step_with_noise(&mut one, &coarse, &xi);
        for (a, b) in one.p.iter().zip(&two.p) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
