use proptest::prelude::*;
use subcart::field::TangentField;
use subcart::ode::IntegratorOptions;
use subcart::orbit::{
    chart_jacobian, dimension_constancy_report, local_completeness_probe, orbit_relation, random_probes, reach,
    sample_orbit, CompletenessProbe, FieldFamily, FlowWord, OrbitError, OrbitOptions, OrbitRelation,
};
use subcart::space::{distance, SubcartesianSpace};

fn family(n: usize, fields: &[(&str, &[&str])]) -> FieldFamily {
    FieldFamily::new(
        SubcartesianSpace::euclidean(n),
        fields.iter().map(|(l, c)| TangentField::parse(*l, c).unwrap()).collect(),
    )
    .unwrap()
}

fn rotation() -> FieldFamily {
    family(2, &[("rot", &["-x2", "x1"])])
}

fn dx_xdy() -> FieldFamily {
    family(2, &[("dx", &["1", "0"]), ("xdy", &["0", "x1"])])
}

#[test]
fn rotation_orbit_is_the_circle() {
    let s = sample_orbit(&rotation(), &[1.0, 0.0], &OrbitOptions::default()).unwrap();
    assert!(s.points.len() > 20);
    for p in &s.points {
        let r = (p.point[0].powi(2) + p.point[1].powi(2)).sqrt();
        assert!((r - 1.0).abs() < 1e-8, "{:?}", p.point);
    }
    assert_eq!(s.est_dimension, 1);
}

#[test]
fn euler_orbit_keeps_its_sign() {
    let f = family(1, &[("xddx", &["x1"])]);
    let opts = OrbitOptions {
        step_scale: 2.0,
        ..OrbitOptions::default()
    };
    let s = sample_orbit(&f, &[0.5], &opts).unwrap();
    for p in &s.points {
        let t: f64 = p.word.steps.iter().map(|(_, t)| t).sum();
        assert!(p.point[0] > 0.0);
        assert!((p.point[0] - 0.5 * t.exp()).abs() < 1e-7 * (1.0 + p.point[0]));
    }
    let zero = sample_orbit(&f, &[0.0], &opts).unwrap();
    assert_eq!(zero.points.len(), 1);
    assert_eq!(zero.est_dimension, 0);
}

#[test]
fn dimension_reports() {
    let opts = OrbitOptions::default();
    let rot = dimension_constancy_report(&rotation(), &[1.0, 0.0], &opts).unwrap();
    assert_eq!(rot.dimensions(), vec![1]);
    assert!(rot.constant);
    let both = family(2, &[("rot", &["-x2", "x1"]), ("radial", &["x1", "x2"])]);
    assert_eq!(dimension_constancy_report(&both, &[1.0, 0.0], &opts).unwrap().dimensions(), vec![2]);
    let mixed = dimension_constancy_report(&dx_xdy(), &[0.0, 0.0], &opts).unwrap();
    assert_eq!(mixed.dimensions(), vec![1, 2]);
    assert!(!mixed.constant);
}

#[test]
fn completeness_singleton_passes_and_pair_fails() {
    let opts = IntegratorOptions::default();
    let single = family(2, &[("xdy", &["0", "x1"])]);
    let probes = random_probes(&single, &[vec![0.3, -0.2], vec![1.0, 1.0]], 3, 1.0, 4);
    assert!(local_completeness_probe(&single, &probes, 1e-8, 1e-8, &opts).unwrap().pass);

    let f = dx_xdy();
    let probe = CompletenessProbe {
        point: vec![-1.0, 0.0],
        t: 1.0,
        flowed: 0,
        pushed: 1,
    };
    let r = local_completeness_probe(&f, &[probe], 1e-8, 1e-8, &opts).unwrap();
    assert!(!r.pass);
    let w = r.witness.unwrap();
    assert!(distance(&w.image, &[0.0, 0.0]) < 1e-9);
    // The pushforward of x∂y by the unit translation is (x-1)∂y, which is ∂y·(-1) at the origin.
    assert!((w.vector[1] + 1.0).abs() < 1e-8);
    assert!(w.residual >= 0.5);
}

#[test]
fn subfamily_orbit_is_no_larger() {
    let opts = OrbitOptions {
        budget: 300,
        max_depth: 3,
        ..OrbitOptions::default()
    };
    let full = family(2, &[("dx", &["1", "0"]), ("xdy", &["0", "x1"]), ("rot", &["-x2", "x1"])]);
    let sub = dx_xdy();
    let a = sample_orbit(&sub, &[0.5, 0.5], &opts).unwrap();
    let b = sample_orbit(&full, &[0.5, 0.5], &opts).unwrap();
    assert!(a.est_dimension <= b.est_dimension);
    let tiny = family(2, &[("dx", &["1", "0"])]);
    let c = sample_orbit(&tiny, &[0.5, 0.5], &opts).unwrap();
    assert!(c.est_dimension <= a.est_dimension);
    assert_eq!(c.est_dimension, 1);
}

#[test]
fn words_replay_to_their_points() {
    let f = dx_xdy();
    let s = sample_orbit(&f, &[0.2, -0.1], &OrbitOptions::default()).unwrap();
    for p in &s.points {
        let y = reach(&f, &[0.2, -0.1], &p.word, &IntegratorOptions::default()).unwrap();
        assert!(distance(&y, &p.point) < 1e-9);
    }
}

#[test]
fn charts_need_independent_fields() {
    let f = dx_xdy();
    let opts = IntegratorOptions::default();
    let c = chart_jacobian(&f, &[0, 1], &[1.0, 0.0], 1e-6, 1e-8, &opts).unwrap();
    assert_eq!(c.rank, 2);
    assert!(c.fd_discrepancy < 1e-5);
    assert!(matches!(
        chart_jacobian(&f, &[0, 1], &[0.0, 0.0], 1e-6, 1e-8, &opts),
        Err(OrbitError::DependentBasis { .. })
    ));
}

#[test]
fn relation_is_connected_or_unknown() {
    let opts = OrbitOptions::default();
    let rot = rotation();
    match orbit_relation(&rot, &[1.0, 0.0], &[0.0, 1.0], &opts).unwrap() {
        OrbitRelation::Connected { word, gap } => {
            assert!(gap < 1e-6);
            let end = reach(&rot, &[1.0, 0.0], &word, &opts.integrator).unwrap();
            assert!(distance(&end, &[0.0, 1.0]) < 1e-6);
        }
        OrbitRelation::Unknown => panic!("points on one circle were not connected"),
    }
    assert_eq!(orbit_relation(&rot, &[1.0, 0.0], &[2.0, 0.0], &opts).unwrap(), OrbitRelation::Unknown);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn inverse_word_returns(steps in prop::collection::vec((0..2usize, -1.0..1.0f64), 0..6), x in -1.0..1.0f64, y in -1.0..1.0f64) {
        let f = dx_xdy();
        let opts = IntegratorOptions::default();
        let w = FlowWord { steps };
        let end = reach(&f, &[x, y], &w, &opts).unwrap();
        let back = reach(&f, &end, &w.inverse(), &opts).unwrap();
        prop_assert!(distance(&back, &[x, y]) < 1e-8);
    }

    #[test]
    fn rotation_orbits_stay_on_their_circle(r in 0.2..2.0f64, seed in 0..1000u64) {
        let opts = OrbitOptions { budget: 40, rng_seed: seed, ..OrbitOptions::default() };
        let s = sample_orbit(&rotation(), &[r, 0.0], &opts).unwrap();
        for p in &s.points {
            prop_assert!((p.point[0].hypot(p.point[1]) - r).abs() < 1e-8 * (1.0 + r));
        }
    }
}
