use std::path::PathBuf;

use subcart::expr::parse;
use subcart::field::TangentField;
use subcart::orbit::OrbitOptions;
use subcart::scenario::Scenario;
use subcart::space::{Region, Relation, SubcartesianSpace};
use subcart::strata::{
    extend_stratum_field, frame_dimension_check, frontier_check, orbit_vs_strata, strongly_stratified_check,
    StrataError, StrataSampler, StratifiedSpace, Stratum,
};

fn cone() -> Scenario {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios/cone.json");
    Scenario::load(&path, &[]).unwrap()
}

fn sampler(sc: &Scenario, seed: u64) -> StrataSampler {
    StrataSampler {
        region: sc.region.clone(),
        per_stratum: 64,
        boundary_prob: 0.5,
        rng_seed: seed,
    }
}

fn on_cone(p: &[f64]) -> bool {
    (p[2] * p[2] - p[0] * p[0] - p[1] * p[1]).abs() < 1e-6 && p[2] >= -1e-9
}

#[test]
fn cone_satisfies_the_frontier_condition() {
    let sc = cone();
    let ss = sc.strata.as_ref().unwrap();
    for seed in 0..3 {
        let r = frontier_check(ss, &sampler(&sc, seed), sc.tolerances.frontier).unwrap();
        assert!(r.pass, "seed {seed}: {r:?}");
        assert!(r.uncovered.is_empty());
        let apex_sheet = r.pairs.iter().find(|p| p.m == "apex" && p.n == "sheet").unwrap();
        assert!(apex_sheet.contact && apex_sheet.ok);
    }
}

#[test]
fn missing_boundary_half_is_uncovered() {
    let e = |t: &str| parse(t, 2).unwrap();
    let space = |cells: Vec<Vec<(subcart::expr::SmoothExpr, Relation)>>| SubcartesianSpace::new(2, cells, 1e-9, true).unwrap();
    let ss = StratifiedSpace {
        total: space(vec![vec![(e("1 - x1^2 - x2^2"), Relation::GeqZero)]]),
        strata: vec![
            Stratum {
                name: "disk".into(),
                space: space(vec![vec![(e("1 - x1^2 - x2^2"), Relation::GtZero)]]),
                dim: 2,
                frame: vec![],
            },
            Stratum {
                name: "upper".into(),
                space: space(vec![vec![(e("1 - x1^2 - x2^2"), Relation::EqZero), (e("x2"), Relation::GeqZero)]]),
                dim: 1,
                frame: vec![],
            },
        ],
        locally_trivial: false,
    };
    let sampler = StrataSampler {
        region: Region::Box {
            lo: vec![-1.5, -1.5],
            hi: vec![1.5, 1.5],
        },
        per_stratum: 64,
        boundary_prob: 0.5,
        rng_seed: 1,
    };
    let r = frontier_check(&ss, &sampler, 1e-4).unwrap();
    assert!(!r.pass);
    assert!(!r.uncovered.is_empty());
    // Boundary oracle: every uncovered sample lies on the lower half of the unit circle.
    for p in &r.uncovered {
        assert!((p[0].hypot(p[1]) - 1.0).abs() < 1e-6, "{p:?}");
        assert!(p[1] < 0.0, "{p:?}");
    }
    let contact = r.pairs.iter().find(|p| p.m == "upper" && p.n == "disk").unwrap();
    assert!(contact.contact && contact.ok);
}

#[test]
fn vertical_field_leaves_the_cone() {
    let sc = cone();
    let ss = sc.strata.as_ref().unwrap();
    let t = &sc.tolerances;
    let dz = sc.field("dz").unwrap();
    let r = strongly_stratified_check(ss, dz, &sampler(&sc, 0), t.drift_horizon, t.drift, &t.integrator()).unwrap();
    assert!(!r.pass);
    let w = r.witness.unwrap();
    assert_eq!(w.stratum, "sheet");
    // Moving up by t from a point at height h leaves residual ((h+t)² − h²) = 2ht + t².
    assert!(w.drift > t.drift * t.drift_horizon);

    let rot = sc.field("rot").unwrap();
    let r = strongly_stratified_check(ss, rot, &sampler(&sc, 0), t.drift_horizon, t.drift, &t.integrator()).unwrap();
    assert!(r.pass, "{r:?}");
}

#[test]
fn strong_family_orbits_stay_in_their_stratum() {
    let sc = cone();
    let ss = sc.strata.as_ref().unwrap();
    let t = &sc.tolerances;
    let family = sc.family(Some("strong")).unwrap();
    let opts = OrbitOptions {
        budget: 1000,
        step_scale: 0.5,
        merge_radius: t.merge_radius,
        rank_tol: t.rank,
        rng_seed: 2,
        integrator: t.integrator(),
        ..OrbitOptions::default()
    };
    let seeds = vec![vec![1.0, 0.0, 1.0], vec![0.0, 0.0, 0.0]];
    let r = orbit_vs_strata(ss, &family, &seeds, &opts, &sampler(&sc, 2), t.drift_horizon, t.drift, t.coverage_radius).unwrap();
    assert!(r.pass);
    let sheet = &r.seeds[0];
    assert_eq!(sheet.stratum, "sheet");
    assert!(sheet.orbit_points >= 1000);
    assert!(sheet.escaped.is_empty());
    assert_eq!(sheet.orbit_dimension, 2);
    let apex = &r.seeds[1];
    assert_eq!(apex.stratum, "apex");
    assert_eq!(apex.orbit_points, 1);
    assert_eq!(apex.orbit_dimension, 0);

    let with_dz = sc.family(None).unwrap();
    assert!(matches!(
        orbit_vs_strata(ss, &with_dz, &seeds, &opts, &sampler(&sc, 2), t.drift_horizon, t.drift, t.coverage_radius),
        Err(StrataError::NotStronglyStratified(_))
    ));
}

#[test]
fn frames_match_declared_dimensions() {
    let sc = cone();
    let r = frame_dimension_check(sc.strata.as_ref().unwrap(), &sampler(&sc, 0), sc.tolerances.rank).unwrap();
    assert!(r.pass, "{r:?}");
}

#[test]
fn extended_field_is_local() {
    let sc = cone();
    let ss = sc.strata.as_ref().unwrap();
    let radial = sc.field("radial").unwrap();
    let x = [1.0, 0.0, 1.0];
    let ext = extend_stratum_field(ss, "sheet", radial, &x, 0.5, 0.9, 1e-8, 0).unwrap();
    let near = [0.96, 0.28, 1.0];
    assert_eq!(ext.value_at(&near).unwrap(), radial.value_at(&near).unwrap());
    assert_eq!(ext.value_at(&[-1.0, 0.0, 1.0]).unwrap(), vec![0.0; 3]);
    assert!(on_cone(&near));

    let dz = TangentField::parse("dz", &["0", "0", "1"]).unwrap();
    assert!(matches!(
        extend_stratum_field(ss, "sheet", &dz, &x, 0.5, 0.9, 1e-8, 0),
        Err(StrataError::NotTangent { .. })
    ));
    assert!(matches!(
        extend_stratum_field(ss, "sheet", radial, &[0.0, 0.0, 0.0], 0.5, 0.9, 1e-8, 0),
        Err(StrataError::NotInStratum { .. })
    ));
}

#[test]
fn strong_orbit_points_lie_on_the_cone() {
    let sc = cone();
    let family = sc.family(Some("strong")).unwrap();
    let opts = OrbitOptions {
        budget: 300,
        step_scale: 0.5,
        integrator: sc.tolerances.integrator(),
        ..OrbitOptions::default()
    };
    let s = subcart::orbit::sample_orbit(&family, &[1.0, 0.0, 1.0], &opts).unwrap();
    assert!(s.points.iter().all(|p| on_cone(&p.point) && p.point[2] > 0.0));
}
