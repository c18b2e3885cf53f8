use metromd::config::{Estimator, ExperimentConfig, ExperimentKind};
use metromd::runners::{
    box_side, coupled_origins, leg_seed, run_autocorr_dumbbell, run_autocorr_fluid, run_blowup_demo,
    run_stationarity,
};
use metromd_core::integrate::Sweep;
use metromd_core::model::PartitionKind;

fn quick_fluid(estimator: Estimator) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::defaults(ExperimentKind::AutocorrFluid);
    cfg.estimator = estimator;
    cfg.h_ladder = vec![0.01, 0.005, 0.0025];
    cfg.t_corr = 0.1;
    cfg.samples = 4000;
    cfg.burn_in = 2000;
    cfg.origin_spacing = 0.05;
    cfg
}

#[test]
fn helper_examples() {
    assert!((box_side(25, 2, 0.8442) - 5.4419).abs() < 1e-4);
    assert!((box_side(27, 3, 1.0) - 3.0).abs() < 1e-12);
    // 10^7 samples, four levels, 200 + 3000 steps per origin
    assert_eq!(coupled_origins(10_000_000, 4, 3200), 12_500);
    assert_eq!(coupled_origins(1, 4, 3200), 2);
    let seeds: Vec<u64> = (0..8).map(|i| leg_seed(1, i)).collect();
    for i in 0..8 {
        for j in i + 1..8 {
            assert_ne!(seeds[i], seeds[j]);
        }
    }
}

#[test]
fn coupled_fluid_ladder_is_consistent() {
    let cfg = quick_fluid(Estimator::Coupled);
    let r = run_autocorr_fluid(&cfg).unwrap();
    assert_eq!(r.legs.len(), 6);
    assert_eq!(r.series.len(), 2);
    for leg in &r.legs {
        assert_eq!(leg.curve.values.len(), (0.1 / leg.h).round() as usize + 1);
        // equipartition: A(0) = d n / β
        let a0 = 2.0 * 25.0 * 0.728;
        assert!((leg.curve.values[0] - a0).abs() < 0.1 * a0, "A(0) = {}", leg.curve.values[0]);
    }
    for s in &r.series {
        assert_eq!(s.points.len(), 2);
        assert!(s.noise.iter().all(|n| n.is_some_and(|x| x > 0.0)));
    }
    // same seed, same numbers
    let again = run_autocorr_fluid(&cfg).unwrap();
    for (a, b) in r.legs.iter().zip(&again.legs) {
        assert_eq!(a.curve, b.curve);
    }
}

#[test]
fn long_run_fluid_ladder_runs() {
    let r = run_autocorr_fluid(&quick_fluid(Estimator::LongRun)).unwrap();
    assert_eq!(r.legs.len(), 6);
    assert!(r.legs.iter().all(|l| l.samples == 4000 && l.difference_error.is_none()));
}

#[test]
fn dumbbell_ladder_keeps_the_constraints() {
    for sweep in [Sweep::Ascending, Sweep::Symmetric] {
        let mut cfg = ExperimentConfig::defaults(ExperimentKind::AutocorrDumbbell);
        cfg.n = 8;
        cfg.box_length = Some(7.0);
        cfg.h_ladder = vec![0.01, 0.005, 0.0025];
        cfg.t_corr = 0.05;
        cfg.samples = 2000;
        cfg.burn_in = 500;
        cfg.origin_spacing = 0.05;
        cfg.estimator = Estimator::Coupled;
        cfg.sweep = sweep;
        let r = run_autocorr_dumbbell(&cfg).unwrap();
        assert_eq!(r.solver_failures, 0);
        assert!(r.max_violation <= 1e-10 && r.max_tangency <= 1e-10);
        assert_eq!(r.autocorr.series[0].partition, PartitionKind::PerDumbbell);
    }
}

#[test]
fn stationarity_matches_the_gibbs_oracles() {
    let mut cfg = ExperimentConfig::defaults(ExperimentKind::Stationarity);
    cfg.samples = 1_000_000;
    let r = run_stationarity(&cfg).unwrap();
    assert!(r.chi_square.p_value > 0.01);
    assert_eq!(r.histogram.len(), 50);
    assert!((r.cos_mean - r.cos_expected).abs() < 3.0 * r.cos_standard_error);
    assert!((r.expected.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn large_steps_need_rejections() {
    let mut cfg = ExperimentConfig::defaults(ExperimentKind::BlowupDemo);
    cfg.samples = 2000;
    let r = run_blowup_demo(&cfg).unwrap();
    assert!(r.explicit_blowup_step.is_some());
    assert!(r.patched_mean_accept < 0.99);
    assert!(r.patched_max_energy < 1e3);
}
