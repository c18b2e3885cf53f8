use metromd_core::constraints::{
    check_on_manifold, place_dumbbells, project_tangent, project_to_manifold, ConstraintError, ConstraintSet,
    DumbbellConstraint,
};
use metromd_core::model::{Partition, PhaseState, RngStream, StreamPurpose, SystemSpec};
use metromd_core::potential::minimum_image_distance;
use metromd_core::thermostat::ProjectionMatrix;
use proptest::prelude::*;

fn bond(dim: usize) -> DumbbellConstraint {
    DumbbellConstraint::new(0, 1, 1.0, 10.0, dim).unwrap()
}

#[test]
fn value_examples() {
    let c = bond(2);
    assert_eq!(c.value(&[1.0, 1.0, 2.0, 1.0]), 0.0);
    assert_eq!(c.value(&[3.0, 3.0, 3.0, 3.0]), -1.0);
    // the short way round the box
    assert!((c.value(&[0.2, 5.0, 9.6, 5.0]) - (0.36 - 1.0)).abs() < 1e-12);
    let c3 = bond(3);
    assert!((c3.value(&[1.0, 1.0, 1.0, 2.0, 2.0, 2.0]) - 2.0).abs() < 1e-12);
}

#[test]
fn construction_errors() {
    assert!(matches!(
        DumbbellConstraint::new(0, 1, 5.0, 10.0, 2),
        Err(ConstraintError::BadRestLength { .. })
    ));
    assert_eq!(DumbbellConstraint::new(2, 2, 1.0, 10.0, 2), Err(ConstraintError::ParticleReused(2)));
    let a = DumbbellConstraint::new(0, 1, 1.0, 10.0, 2).unwrap();
    let b = DumbbellConstraint::new(1, 2, 1.0, 10.0, 2).unwrap();
    assert_eq!(ConstraintSet::new(vec![a, b], 3), Err(ConstraintError::ParticleReused(1)));
    let far = DumbbellConstraint::new(0, 5, 1.0, 10.0, 2).unwrap();
    assert_eq!(ConstraintSet::new(vec![far], 3), Err(ConstraintError::OutOfRange(5)));
}

#[test]
fn dumbbell_partition_must_match() {
    let cs = ConstraintSet::dumbbells(2, 1.0, 10.0, 2).unwrap();
    assert!(cs.check_partition(&Partition::per_dumbbell(2)).is_ok());
    assert!(cs.check_partition(&Partition::per_particle(4)).is_err());
}

#[test]
fn projection_examples() {
    let spec = SystemSpec::uniform(2, 2, 10.0, 1.0, 1.0, 1.0).unwrap();
    let cs = ConstraintSet::dumbbells(1, 1.0, 10.0, 2).unwrap();
    // stretched to 1.1 along x: both ends pulled in by 0.05
    let (q, p) = project_to_manifold(&[5.55, 3.0, 4.45, 3.0], &[1.0, 2.0, 0.0, 0.0], &cs, &spec).unwrap();
    let want = [5.5, 3.0, 4.5, 3.0];
    for (a, b) in q.iter().zip(&want) {
        assert!((a - b).abs() < 1e-12);
    }
    // the bond-parallel relative momentum is removed, the rest kept
    assert!((p[0] - 0.5).abs() < 1e-12 && (p[2] - 0.5).abs() < 1e-12);
    assert!((p[1] - 2.0).abs() < 1e-12 && p[3].abs() < 1e-12);
    let state = PhaseState::new(&spec, q.clone(), p.clone()).unwrap();
    check_on_manifold(&state, &cs, &spec, 1e-12).unwrap();

    assert_eq!(
        project_to_manifold(&[1.0, 1.0, 1.0, 1.0], &[0.0; 4], &cs, &spec),
        Err(ConstraintError::Degenerate(0))
    );
}

#[test]
fn off_manifold_states_are_reported() {
    let spec = SystemSpec::uniform(2, 2, 10.0, 1.0, 1.0, 1.0).unwrap();
    let cs = ConstraintSet::dumbbells(1, 1.0, 10.0, 2).unwrap();
    let state = PhaseState::new(&spec, vec![1.0, 1.0, 2.0, 1.0], vec![1.0, 0.0, 0.0, 0.0]).unwrap();
    assert!(matches!(
        check_on_manifold(&state, &cs, &spec, 1e-10),
        Err(ConstraintError::Violated { index: 0, .. })
    ));
}

#[test]
fn placement_respects_bonds_and_spacing() {
    for (n, l, dim) in [(15usize, 7.0, 2usize), (30, (60.0f64 / 0.998).sqrt(), 2), (8, 6.0, 3)] {
        let spec = SystemSpec::uniform(2 * n, dim, l, 1.0, 1.0, 1.0).unwrap();
        let cs = ConstraintSet::dumbbells(n, 1.0, l, dim).unwrap();
        let q = place_dumbbells(n, 1.0, &spec, 0.8, &mut RngStream::new(1, StreamPurpose::Initialization)).unwrap();
        assert!(cs.max_violation(&q) < 1e-10);
        for i in 0..2 * n {
            for j in i + 1..2 * n {
                if j != i + 1 || i % 2 == 1 {
                    let r = minimum_image_distance(&q[i * dim..(i + 1) * dim], &q[j * dim..(j + 1) * dim], l);
                    assert!(r >= 0.8 - 1e-12, "n = {n}: atoms {i}, {j} at {r}");
                }
            }
        }
    }
}

fn finite_difference_gradient(c: &DumbbellConstraint, q: &[f64], dim: usize) -> Vec<f64> {
    let eps = 1e-6;
    let mut out = vec![0.0; 2 * dim];
    for k in 0..2 * dim {
        let (mut up, mut down) = (q.to_vec(), q.to_vec());
        up[k] += eps;
        down[k] -= eps;
        out[k] = (c.value(&up) - c.value(&down)) / (2.0 * eps);
    }
    out
}

proptest! {
    #[test]
    fn gradient_matches_finite_differences(q in prop::collection::vec(0.5..9.5f64, 6), dim in 2usize..4) {
        let c = bond(dim);
        let q = &q[..2 * dim];
        let g = c.gradient(q);
        let fd = finite_difference_gradient(&c, q, dim);
        for k in 0..2 * dim {
            prop_assert!((g[k] - fd[k]).abs() < 1e-8 * (1.0 + g[k].abs()));
        }
    }

    #[test]
    fn value_is_translation_and_swap_invariant(q in prop::collection::vec(0.0..10.0f64, 4), shift in prop::collection::vec(-20.0..20.0f64, 2)) {
        let c = bond(2);
        let moved: Vec<f64> = q.iter().enumerate().map(|(k, x)| x + shift[k % 2]).collect();
        prop_assert!((c.value(&q) - c.value(&moved)).abs() < 1e-10);
        let swapped = DumbbellConstraint::new(1, 0, 1.0, 10.0, 2).unwrap();
        prop_assert!((c.value(&q) - swapped.value(&q)).abs() < 1e-12);
    }

    #[test]
    fn tangent_projection_is_idempotent(q in prop::collection::vec(1.0..9.0f64, 4), p in prop::collection::vec(-3.0..3.0f64, 4), m1 in 0.5..3.0f64, m2 in 0.5..3.0f64) {
        let spec = SystemSpec::new(2, 2, 10.0, vec![m1, m2], 1.0, 0.0).unwrap();
        let c = bond(2);
        prop_assume!(c.value(&q) > -0.99);
        let g = c.gradient(&q);
        let w = c.inverse_masses(&spec);
        let mut once = p.clone();
        project_tangent(&g[..4], &w[..4], &mut once);
        let mut twice = once.clone();
        project_tangent(&g[..4], &w[..4], &mut twice);
        for (a, b) in once.iter().zip(&twice) {
            prop_assert!((a - b).abs() < 1e-12 * (1.0 + a.abs()));
        }
        prop_assert!(c.tangency(&q, &once, &spec).abs() < 1e-12 * (1.0 + g[0].abs() + g[1].abs()));
        // the dense projector agrees and is idempotent
        let proj = ProjectionMatrix::new(&g[..4], &w[..4]);
        let dense = proj.apply(&p);
        let sq = proj.square();
        for r in 0..4 {
            prop_assert!((dense[r] - once[r]).abs() < 1e-12 * (1.0 + dense[r].abs()));
            for k in 0..4 {
                prop_assert!((sq.get(r, k) - proj.get(r, k)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn manifold_projection_lands_on_the_manifold(q in prop::collection::vec(0.0..10.0f64, 6), p in prop::collection::vec(-3.0..3.0f64, 6)) {
        let spec = SystemSpec::uniform(3, 2, 10.0, 1.0, 1.0, 0.0).unwrap();
        let cs = ConstraintSet::dumbbells(1, 1.0, 10.0, 2).unwrap();
        prop_assume!(cs.get(0).value(&q) > -0.999);
        let (q1, p1) = project_to_manifold(&q, &p, &cs, &spec).unwrap();
        let state = PhaseState::new(&spec, q1.clone(), p1.clone()).unwrap();
        prop_assert!(check_on_manifold(&state, &cs, &spec, 1e-12).is_ok());
        // the free particle is untouched
        prop_assert_eq!(&q1[4..], &q[4..]);
        prop_assert_eq!(&p1[4..], &p[4..]);
        let (q2, p2) = project_to_manifold(&q1, &p1, &cs, &spec).unwrap();
        for k in 0..6 {
            prop_assert!((q2[k] - q1[k]).abs() < 1e-12 && (p2[k] - p1[k]).abs() < 1e-12);
        }
    }
}
