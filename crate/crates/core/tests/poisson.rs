#![allow(clippy::needless_range_loop)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use subcart::expr::{parse, SmoothExpr};
use subcart::ode::IntegratorOptions;
use subcart::orbit::OrbitOptions;
use subcart::poisson::{invariance_residual, leaf_sample, reduce, PoissonError, PoissonStructure, ReductionSetup};
use subcart::space::{Relation, SubcartesianSpace};

fn e(s: &str, n: usize) -> SmoothExpr {
    parse(s, n).unwrap()
}

fn points(n: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()).collect()
}

fn hilbert_setup() -> ReductionSetup {
    ReductionSetup {
        ambient: PoissonStructure::canonical(2),
        invariants: ["x1^2 + x2^2", "x3^2 + x4^2", "x1*x3 + x2*x4", "x1*x4 - x2*x3"]
            .iter()
            .map(|s| e(s, 4))
            .collect(),
        relations: vec![
            (e("x1*x2 - x3^2 - x4^2", 4), Relation::EqZero),
            (e("x1", 4), Relation::GeqZero),
            (e("x2", 4), Relation::GeqZero),
        ],
        degree: 2,
        rng_seed: 11,
    }
}

#[test]
fn hilbert_map_bracket_table() {
    let r = reduce(&hilbert_setup()).unwrap();
    // Chain-rule values: {σ1,σ2} = 4σ3, {σ1,σ3} = 2σ1, {σ2,σ3} = −2σ2, {σi,σ4} = 0.
    let oracle = |s: &[f64]| {
        let mut l = [[0.0; 4]; 4];
        l[0][1] = 4.0 * s[2];
        l[0][2] = 2.0 * s[0];
        l[1][2] = -2.0 * s[1];
        for a in 0..4 {
            for b in 0..a {
                l[a][b] = -l[b][a];
            }
        }
        l
    };
    for s in points(4, 50, 3) {
        let got = r.structure.matrix_at(&s).unwrap();
        let want = oracle(&s);
        for a in 0..4 {
            for b in 0..4 {
                assert!((got[a][b] - want[a][b]).abs() <= 1e-12, "{a}{b}: {} vs {}", got[a][b], want[a][b]);
            }
        }
    }
    assert!(r.certification_residual <= 1e-10);
    assert_eq!(r.certification_points, 200);
}

#[test]
fn single_invariant_reduces_to_zero() {
    let setup = ReductionSetup {
        ambient: PoissonStructure::canonical(1),
        invariants: vec![e("(x1^2 + x2^2)/2", 2)],
        relations: vec![],
        degree: 2,
        rng_seed: 1,
    };
    let r = reduce(&setup).unwrap();
    assert_eq!(r.structure.dim(), 1);
    assert!(r.structure.bivector()[0][0].is_zero());
}

#[test]
fn missing_closure_names_the_pair() {
    let setup = ReductionSetup {
        ambient: PoissonStructure::canonical(2),
        invariants: vec![e("x1^2", 4), e("x3", 4)],
        relations: vec![],
        degree: 2,
        rng_seed: 1,
    };
    match reduce(&setup) {
        Err(PoissonError::NotClosed { a: 1, b: 2, .. }) => {}
        other => panic!("{other:?}"),
    }
}

#[test]
fn biderivation_and_hamiltonian_certification() {
    let p = PoissonStructure::parse(
        "so3",
        &[
            vec!["0".into(), "x3".into(), "-x2".into()],
            vec!["-x3".into(), "0".into(), "x1".into()],
            vec!["x2".into(), "-x1".into(), "0".into()],
        ],
    )
    .unwrap();
    let (f, g, h) = (e("x1*x2 + sin(x3)", 3), e("exp(x1) - x3^2", 3), e("x2*x3 + 1", 3));
    let lhs = p.bracket(&f, &g.mul(&h)).unwrap();
    let rhs = p.bracket(&f, &g).unwrap().mul(&h).add(&p.bracket(&f, &h).unwrap().mul(&g));
    let pts = points(3, 40, 5);
    for x in &pts {
        assert!((lhs.eval(x).unwrap() - rhs.eval(x).unwrap()).abs() <= 1e-12 * (1.0 + rhs.eval(x).unwrap().abs()));
    }
    assert!(p.hamiltonian_defect(&f, &pts).unwrap() <= 1e-12);
    assert!(p.structure_jacobi_residual(&pts).unwrap() <= 1e-12);
}

#[test]
fn hamiltonian_fields_form_a_lie_algebra_morphism() {
    let p = PoissonStructure::canonical(2);
    let (f1, f2) = (e("x1^2*x4 + x2", 4), e("x3*x2 - x4^3", 4));
    let lhs = p.hamiltonian_field(&f1).unwrap().lie_bracket(&p.hamiltonian_field(&f2).unwrap()).unwrap();
    let rhs = p.hamiltonian_field(&p.bracket(&f1, &f2).unwrap()).unwrap();
    for x in points(4, 30, 9) {
        let a = lhs.value_at(&x).unwrap();
        let b = rhs.value_at(&x).unwrap();
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() <= 1e-10 * (1.0 + v.abs()));
        }
    }
}

#[test]
fn jacobi_controls() {
    let canonical = PoissonStructure::canonical(2);
    let pts = points(4, 20, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let monomials = ["x1", "x2", "x3", "x4", "x1*x3", "x2^2", "x4*x1*x2", "x3^3"];
    for _ in 0..20 {
        let pick = |rng: &mut ChaCha8Rng| {
            let a = monomials[rng.random_range(0..monomials.len())];
            let b = monomials[rng.random_range(0..monomials.len())];
            e(&format!("{a} + 2*{b}"), 4)
        };
        let (f1, f2, f3) = (pick(&mut rng), pick(&mut rng), pick(&mut rng));
        assert!(canonical.jacobi_residual(&f1, &f2, &f3, &pts).unwrap() <= 1e-10);
    }

    let row = |a: &str, b: &str, c: &str| vec![a.to_string(), b.to_string(), c.to_string()];
    // With Π²³ = x1 the vector (Π²³, Π³¹, Π¹²) = (x1, 0, x3) is curl free, so Jacobi holds.
    let curl_free = PoissonStructure::parse("curlfree", &[row("0", "x3", "0"), row("-x3", "0", "x1"), row("0", "-x1", "0")]).unwrap();
    let pts3 = points(3, 30, 4);
    assert!(curl_free.structure_jacobi_residual(&pts3).unwrap() <= 1e-12);
    // With Π²³ = x2 the cyclic sum over coordinates is v·curl v = −x3.
    let broken = PoissonStructure::parse("broken", &[row("0", "x3", "0"), row("-x3", "0", "x2"), row("0", "-x2", "0")]).unwrap();
    for x in &pts3 {
        let r = broken.jacobi_residual(&e("x1", 3), &e("x2", 3), &e("x3", 3), std::slice::from_ref(x)).unwrap();
        assert!((r - x[2].abs()).abs() <= 1e-12);
    }
}

#[test]
fn rotation_flow_preserves_bracket() {
    let p = PoissonStructure::canonical(1);
    let plane = SubcartesianSpace::euclidean(2);
    let h = e("(x1^2 + x2^2)/2", 2);
    let opts = IntegratorOptions::default();
    let zero = invariance_residual(&p, &h, &e("x1", 2), &e("x2", 2), 0.0, &[1.0, 0.0], &plane, &opts).unwrap();
    assert_eq!(zero.residual, 0.0);
    for t in [0.1, 1.0] {
        let r = invariance_residual(&p, &h, &e("x1", 2), &e("x2", 2), t, &[1.0, 0.0], &plane, &opts).unwrap();
        assert!(r.residual <= 1e-6);
        assert!((r.image[0] - t.cos()).abs() < 1e-8 && (r.image[1] - t.sin()).abs() < 1e-8);
    }
}

#[test]
fn reduced_flow_preserves_reduced_bracket() {
    let setup = hilbert_setup();
    let red = reduce(&setup).unwrap();
    let space = setup.reduced_space(1e-8).unwrap();
    let opts = IntegratorOptions {
        rtol: 1e-11,
        atol: 1e-13,
        ..IntegratorOptions::default()
    };
    let r = invariance_residual(&red.structure, &e("x1", 4), &e("x2", 4), &e("x3", 4), 0.1, &[1.0, 1.0, 1.0, 0.0], &space, &opts).unwrap();
    assert!(r.residual <= 1e-5, "{r:?}");
}

#[test]
fn leaf_conserves_casimirs() {
    let setup = hilbert_setup();
    let red = reduce(&setup).unwrap();
    let space = setup.reduced_space(1e-7).unwrap();
    let opts = OrbitOptions {
        budget: 500,
        step_scale: 0.3,
        rng_seed: 5,
        integrator: IntegratorOptions {
            rtol: 1e-11,
            atol: 1e-13,
            ..IntegratorOptions::default()
        },
        ..OrbitOptions::default()
    };
    let gens = [e("x1", 4), e("x2", 4), e("x3", 4)];
    let casimirs = [e("x1*x2 - x3^2 - x4^2", 4), e("x4", 4)];
    let leaf = leaf_sample(&space, &red.structure, &gens, &casimirs, &[1.0, 1.0, 1.0, 0.0], &opts).unwrap();
    assert_eq!(leaf.orbit.points.len(), 500);
    for (_, d) in &leaf.casimir_drift {
        assert!(*d <= 1e-6, "{:?}", leaf.casimir_drift);
    }
    assert!(leaf.relation_residual <= 1e-6);
    assert!(leaf.orbit.points.iter().all(|p| p.point[0] >= -1e-7 && p.point[1] >= -1e-7));
}

#[test]
fn canonical_plane_is_one_leaf() {
    let p = PoissonStructure::canonical(1);
    let opts = OrbitOptions {
        budget: 50,
        ..OrbitOptions::default()
    };
    let leaf = leaf_sample(&SubcartesianSpace::euclidean(2), &p, &[e("x1", 2), e("x2", 2)], &[], &[0.2, -0.1], &opts).unwrap();
    assert_eq!(leaf.orbit.est_dimension, 2);
}
