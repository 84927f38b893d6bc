//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use subcart::expr::{parse, SmoothExpr};
use subcart::field::TangentField;
use subcart::flow::{classify_vector_field, escape_time, flow_map, Classification, ProbeOptions};
use subcart::ode::IntegratorOptions;
use subcart::orbit::{
    chart_jacobian, dimension_constancy_report, local_completeness_probe, random_probes, CompletenessProbe,
    OrbitOptions,
};
use subcart::poisson::{invariance_residual, leaf_sample, reduce, PoissonStructure};
use subcart::scenario::Scenario;
use subcart::space::distance;
use subcart::strata::{frontier_check, orbit_vs_strata, strongly_stratified_check, StrataSampler};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if $cond {
        } else {
            return Err(format!($($msg)+));
        }
    };
}

fn path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)
}

fn load(name: &str) -> Scenario {
    Scenario::load(&path(name), &[]).unwrap()
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn probe_options(sc: &Scenario, seed: u64) -> ProbeOptions {
    ProbeOptions {
        seeds: sc.seeds.clone(),
        rng_seed: seed,
        integrator: sc.tolerances.integrator(),
        ..ProbeOptions::default()
    }
}

fn example_one() -> Outcome {
    let sc = load("halfline.json");
    let v = classify_vector_field(&sc.space, sc.field("ddx").unwrap(), &probe_options(&sc, 1)).map_err(|e| e.to_string())?;
    ensure!(v.classification == Classification::NotVectorField, "ddx: {:?}", v.classification);
    let w = v.witness.ok_or("no witness")?;
    ensure!(w.point[0].abs() <= 1e-9, "witness {:?}", w.point);
    let v = classify_vector_field(&sc.space, sc.field("xddx").unwrap(), &probe_options(&sc, 1)).map_err(|e| e.to_string())?;
    ensure!(v.classification == Classification::VectorField, "xddx: {:?}", v.classification);
    ensure!(v.probes_run >= 100, "{} probes", v.probes_run);
    Ok(format!("witness x = {:.2e}; x∂x VectorField after {} probes", w.point[0], v.probes_run))
}

fn example_two() -> Outcome {
    let sc = load("example2.json");
    let field = sc.field("ddx1").unwrap();
    let v = classify_vector_field(&sc.space, field, &probe_options(&sc, 0)).map_err(|e| e.to_string())?;
    ensure!(v.classification == Classification::NotVectorField, "{:?}", v.classification);
    let mut worst: f64 = 0.0;
    for eps in [1e-2, 1e-3, 1e-4] {
        let t = escape_time(&sc.space, field, &[0.0, eps], 10.0, &sc.tolerances.integrator()).map_err(|e| e.to_string())?;
        // The horizontal chord of the disk through (0, ε) has half-length √(2ε − ε²).
        let chord = (2.0 * eps - eps * eps).sqrt();
        ensure!(t <= 2.0 * (2.0 * eps).sqrt(), "ε = {eps}: t = {t}");
        ensure!((t - chord).abs() <= 1e-6, "ε = {eps}: t = {t}, chord {chord}");
        worst = worst.max((t - chord).abs());
    }
    Ok(format!("NotVectorField at (0,0); escape times within {worst:.1e} of the chord"))
}

fn group_law() -> Outcome {
    let sc = load("rotation.json");
    let rot = sc.field("rot").unwrap();
    let opts = IntegratorOptions {
        rtol: 1e-9,
        ..sc.tolerances.integrator()
    };
    let mut r = rng(3);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (t, s) = (r.random_range(-3.0..3.0), r.random_range(-3.0..3.0));
        let x = [r.random_range(-2.0..2.0), r.random_range(-2.0..2.0)];
        let a = flow_map(&sc.space, rot, t + s, &x, &opts).map_err(|e| e.to_string())?;
        let b = flow_map(&sc.space, rot, t, &flow_map(&sc.space, rot, s, &x, &opts).map_err(|e| e.to_string())?, &opts)
            .map_err(|e| e.to_string())?;
        let (c, sn) = ((t + s).cos(), (t + s).sin());
        let exact = [c * x[0] - sn * x[1], sn * x[0] + c * x[1]];
        ensure!(distance(&a, &exact) <= 1e-7, "closed form off by {}", distance(&a, &exact));
        worst = worst.max(distance(&a, &b));
    }
    ensure!(worst <= 1e-7, "group law residual {worst}");
    Ok(format!("max residual {worst:.2e}"))
}

fn chart() -> Outcome {
    let sc = load("dx_xdy.json");
    let f = sc.family(Some("F")).unwrap();
    let t = &sc.tolerances;
    let c = chart_jacobian(&f, &[0, 1], &[1.0, 0.0], t.fd_step, t.rank, &t.integrator()).map_err(|e| e.to_string())?;
    // Stacked field values at (1,0): ∂x = (1,0), x∂y = (0,1).
    let mut gap: f64 = 0.0;
    for (i, row) in [[1.0, 0.0], [0.0, 1.0]].iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            gap = gap.max((c.jacobian_fd[i][j] - v).abs());
        }
    }
    ensure!(gap <= 1e-5 && c.fd_discrepancy <= 1e-5, "fd gap {gap}, discrepancy {}", c.fd_discrepancy);
    ensure!(c.rank == 2, "rank {}", c.rank);
    Ok(format!("rank 2, finite-difference gap {gap:.1e}"))
}

fn dimension_suite() -> Outcome {
    let rot = load("rotation.json");
    let opts = OrbitOptions::default();
    let a = dimension_constancy_report(&rot.family(Some("rotation")).unwrap(), &[1.0, 0.0], &opts).map_err(|e| e.to_string())?;
    ensure!(a.dimensions() == vec![1], "rotation {:?}", a.counts);
    let b = dimension_constancy_report(&rot.family(Some("rotation_radial")).unwrap(), &[1.0, 0.0], &opts).map_err(|e| e.to_string())?;
    ensure!(b.dimensions() == vec![2], "rotation+radial {:?}", b.counts);
    let sc = load("dx_xdy.json");
    let c = dimension_constancy_report(&sc.family(Some("F")).unwrap(), &[0.0, 0.0], &opts).map_err(|e| e.to_string())?;
    ensure!(c.dimensions() == vec![1, 2] && !c.constant, "{{∂x, x∂y}} {:?}", c.counts);
    Ok(format!("{{1}}, {{2}}, {:?}", c.counts))
}

fn completeness() -> Outcome {
    let sc = load("dx_xdy.json");
    let t = &sc.tolerances;
    let single = sc.family(Some("single")).unwrap();
    let probes = random_probes(&single, &sc.seeds, 3, 1.0, 0);
    let r = local_completeness_probe(&single, &probes, t.completeness, t.rank, &t.integrator()).map_err(|e| e.to_string())?;
    ensure!(r.pass, "singleton residual {}", r.max_residual);
    let f = sc.family(Some("F")).unwrap();
    let probe = CompletenessProbe {
        point: vec![-1.0, 0.0],
        t: 1.0,
        flowed: 0,
        pushed: 1,
    };
    let r = local_completeness_probe(&f, &[probe], t.completeness, t.rank, &t.integrator()).map_err(|e| e.to_string())?;
    let w = r.witness.ok_or("no witness")?;
    // (φ^∂x_1)_* x∂y = (x − 1)∂y, which is −∂y at the origin while span ℱ there is ℝ∂x.
    ensure!(distance(&w.image, &[0.0, 0.0]) <= 1e-9, "image {:?}", w.image);
    ensure!(distance(&w.vector, &[0.0, -1.0]) <= 1e-8, "vector {:?}", w.vector);
    ensure!(w.residual >= 0.5, "residual {}", w.residual);
    Ok(format!("singleton PASS; pair witness residual {:.3}", w.residual))
}

/// `{f, g}` on T*ℝ² with coordinates (q1, q2, p1, p2), from hand gradients.
fn canonical_bracket(gf: [f64; 4], gg: [f64; 4]) -> f64 {
    gf[0] * gg[2] + gf[1] * gg[3] - gf[2] * gg[0] - gf[3] * gg[1]
}

fn invariant_gradients(x: &[f64]) -> [[f64; 4]; 4] {
    let (q1, q2, p1, p2) = (x[0], x[1], x[2], x[3]);
    [
        [2.0 * q1, 2.0 * q2, 0.0, 0.0],
        [0.0, 0.0, 2.0 * p1, 2.0 * p2],
        [p1, p2, q1, q2],
        [p2, -p1, -q2, q1],
    ]
}

fn reduced_table() -> Outcome {
    let sc = load("reduction.json");
    let setup = &sc.reduction.as_ref().unwrap().setup;
    let r = reduce(setup).map_err(|e| e.to_string())?;
    ensure!(r.certification_residual <= 1e-10, "certification {}", r.certification_residual);
    ensure!(r.certification_points >= 200, "{} points", r.certification_points);
    let mut g = rng(7);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let x: Vec<f64> = (0..4).map(|_| g.random_range(-2.0..2.0)).collect();
        let s = setup.hilbert_map(&x).map_err(|e| e.to_string())?;
        let grads = invariant_gradients(&x);
        let lambda = r.structure.matrix_at(&s).map_err(|e| e.to_string())?;
        let expected = [[0.0, 4.0 * s[2], 2.0 * s[0], 0.0], [0.0, 0.0, -2.0 * s[1], 0.0]];
        for a in 0..4 {
            for b in 0..4 {
                let chain = canonical_bracket(grads[a], grads[b]);
                worst = worst.max((lambda[a][b] - chain).abs());
                if a < 2 && b > a {
                    ensure!((lambda[a][b] - expected[a][b]).abs() <= 1e-10, "Λ[{a}][{b}] = {}", lambda[a][b]);
                }
            }
            ensure!(lambda[a][3].abs() <= 1e-10, "{{σ{}, σ4}} = {}", a + 1, lambda[a][3]);
        }
    }
    ensure!(worst <= 1e-10, "chain-rule gap {worst}");
    let table: Vec<String> = r.table.iter().filter(|e| e.a < e.b).map(|e| format!("{{σ{},σ{}}}={}", e.a, e.b, e.expr)).collect();
    Ok(format!("{}; certification {:.1e}", table.join(" "), r.certification_residual))
}

fn casimirs() -> Outcome {
    let sc = load("reduction.json");
    let block = sc.reduction.as_ref().unwrap();
    let red = reduce(&block.setup).map_err(|e| e.to_string())?;
    let t = &sc.tolerances;
    let space = block.setup.reduced_space(sc.space.tol()).map_err(|e| e.to_string())?;
    let c = parse("x1*x2 - x3^2 - x4^2", 4).unwrap();
    // {σa, C} vanishes identically: check the symbolic bracket before trusting the cloud.
    let mut g = rng(1);
    for a in 0..4 {
        let b = red.structure.bracket(&SmoothExpr::var(a), &c).map_err(|e| e.to_string())?;
        for _ in 0..20 {
            let s: Vec<f64> = (0..4).map(|_| g.random_range(-2.0..2.0)).collect();
            let v = b.eval(&s).map_err(|e| e.to_string())?;
            ensure!(v.abs() <= 1e-12, "{{σ{}, C}} = {v}", a + 1);
        }
    }
    let opts = OrbitOptions {
        budget: 500,
        step_scale: 0.3,
        rng_seed: 0,
        merge_radius: t.merge_radius,
        rank_tol: t.rank,
        integrator: t.integrator(),
        ..OrbitOptions::default()
    };
    let gens: Vec<SmoothExpr> = (0..3).map(SmoothExpr::var).collect();
    let leaf = leaf_sample(&space, &red.structure, &gens, std::slice::from_ref(&c), &sc.seeds[0], &opts).map_err(|e| e.to_string())?;
    ensure!(leaf.orbit.points.len() >= 500, "{} points", leaf.orbit.points.len());
    let c0 = c.eval(&sc.seeds[0]).unwrap();
    let mut drift: f64 = 0.0;
    for p in &leaf.orbit.points {
        let s = &p.point;
        drift = drift.max((s[0] * s[1] - s[2] * s[2] - s[3] * s[3] - c0).abs());
        ensure!(s[0] >= -space.tol() && s[1] >= -space.tol(), "σ1, σ2 at {s:?}");
    }
    ensure!(drift <= 1e-6, "drift {drift}");
    ensure!(leaf.relation_residual <= 1e-6, "relation residual {}", leaf.relation_residual);
    Ok(format!("{} points, drift {drift:.1e}, relation residual {:.1e}", leaf.orbit.points.len(), leaf.relation_residual))
}

fn invariance() -> Outcome {
    let sc = load("rotation.json");
    let p = &sc.poisson.as_ref().unwrap().structure;
    let h = parse("(x1^2 + x2^2)/2", 2).unwrap();
    let (f1, f2) = (parse("x1^2*x2", 2).unwrap(), parse("sin(x1) + x2", 2).unwrap());
    let mut out = Vec::new();
    for t in [0.1, 1.0] {
        let r = invariance_residual(p, &h, &f1, &f2, t, &[1.0, 0.5], &sc.space, &sc.tolerances.integrator()).map_err(|e| e.to_string())?;
        ensure!(r.residual <= 1e-6, "t = {t}: {}", r.residual);
        // X_h for h = |x|²/2 rotates the plane clockwise with these sign conventions or anticlockwise; both keep |x|.
        ensure!((r.image[0].hypot(r.image[1]) - 1.25f64.sqrt()).abs() <= 1e-8, "image {:?}", r.image);
        out.push(format!("t={t}: {:.1e}", r.residual));
    }
    Ok(out.join(", "))
}

fn random_polynomial(g: &mut ChaCha8Rng, n: usize) -> SmoothExpr {
    let mut text = String::from("0");
    for _ in 0..3 {
        let c = g.random_range(1..=3) as f64 * if g.random_bool(0.5) { 1.0 } else { -1.0 };
        let mono: Vec<String> = (0..g.random_range(1..=3)).map(|_| format!("x{}", g.random_range(1..=n))).collect();
        text.push_str(&format!(" + ({c})*{}", mono.join("*")));
    }
    parse(&text, n).unwrap()
}

fn jacobi() -> Outcome {
    let canonical = load("rotation.json").poisson.unwrap().structure;
    let sc = load("reduction.json");
    let reduced = reduce(&sc.reduction.as_ref().unwrap().setup).map_err(|e| e.to_string())?.structure;
    let mut g = rng(5);
    let mut worst: f64 = 0.0;
    for p in [&canonical, &reduced] {
        let n = p.dim();
        let pts: Vec<Vec<f64>> = (0..20).map(|_| (0..n).map(|_| g.random_range(-1.5..1.5)).collect()).collect();
        for _ in 0..50 {
            let (a, b, c) = (random_polynomial(&mut g, n), random_polynomial(&mut g, n), random_polynomial(&mut g, n));
            worst = worst.max(p.jacobi_residual(&a, &b, &c, &pts).map_err(|e| e.to_string())?);
        }
    }
    ensure!(worst <= 1e-8, "Jacobi residual {worst}");
    let row = |a: &str, b: &str, c: &str| vec![a.to_string(), b.to_string(), c.to_string()];
    let broken = PoissonStructure::parse("broken", &[row("0", "x3", "0"), row("-x3", "0", "x2"), row("0", "-x2", "0")]).unwrap();
    // Cyclic sum over coordinate functions equals v·curl v = −x3 for v = (x2, 0, x3).
    let x = [0.3, -0.2, 0.8];
    let control = broken
        .jacobi_residual(&parse("x1", 3).unwrap(), &parse("x2", 3).unwrap(), &parse("x3", 3).unwrap(), &[x.to_vec()])
        .map_err(|e| e.to_string())?;
    ensure!(control >= 0.1 && (control - x[2]).abs() <= 1e-12, "control {control}");
    Ok(format!("max residual {worst:.1e}; broken control {control:.2}"))
}

/// Hand-coded J for the variable structure, a = 1 + x1².
fn variable_j(x: &[f64]) -> [[f64; 4]; 4] {
    let a = 1.0 + x[0] * x[0];
    [[0.0, -1.0, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0, -a], [0.0, 0.0, 1.0 / a, 0.0]]
}

fn torsion() -> Outcome {
    let sc = load("variable_j.json");
    let acs = &sc.acs.as_ref().unwrap().structure;
    let p = [1.0, 0.0, 0.0, 0.0];
    // Expansion of 2([JX,JY] − J[JX,Y] − J[X,JY] − [X,Y]) for X = ∂1, Y = ∂3:
    // JX = ∂2 and JY = (1/a)∂4 are constant along each other and ∂3, so only
    // [∂1, (1/a)∂4] = −(a′/a²)∂4 survives, and J∂4 = −a∂3.
    let a = 1.0 + p[0] * p[0];
    let da = 2.0 * p[0];
    let bracket = [0.0, 0.0, 0.0, -da / (a * a)];
    let j = variable_j(&p);
    let j_bracket: Vec<f64> = (0..4).map(|i| (0..4).map(|k| j[i][k] * bracket[k]).sum()).collect();
    let oracle: Vec<f64> = j_bracket.iter().map(|v| -2.0 * v).collect();
    let target = [0.0, 0.0, -2.0, 0.0];
    ensure!(distance(&oracle, &target) <= 1e-14, "oracle {oracle:?}");
    let f = sc.family(Some("torsion_pair")).unwrap();
    let n = acs.torsion(&f.fields()[0], &f.fields()[1]).map_err(|e| e.to_string())?;
    let got = n.value_at(&p).map_err(|e| e.to_string())?;
    ensure!(distance(&got, &target) <= 1e-8, "N = {got:?}");
    Ok(format!("N(∂1,∂3)(1,0,0,0) = {got:?}"))
}

fn tensoriality() -> Outcome {
    let mut worst_t: f64 = 0.0;
    let mut worst_e: f64 = 0.0;
    for name in ["kahler_plane.json", "variable_j.json"] {
        let sc = load(name);
        let acs = &sc.acs.as_ref().unwrap().structure;
        let n = acs.dim();
        let mut g = rng(9);
        let pts: Vec<Vec<f64>> = (0..50).map(|_| (0..n).map(|_| g.random_range(-1.0..1.0)).collect()).collect();
        let (f, h) = (parse("x1", n).unwrap(), parse(&format!("x{n}"), n).unwrap());
        let fields: Vec<TangentField> = (0..n).map(|i| TangentField::coordinate(n, i)).collect();
        for x in &fields {
            for y in &fields {
                let t = acs.tensoriality_residual(x, y, &f, &h, &pts).map_err(|e| e.to_string())?;
                let e = acs.eigenspace_closure_residual(x, y, &pts).map_err(|e| e.to_string())?;
                ensure!(t <= 1e-10, "{name}: tensoriality {t}");
                ensure!(e.discrepancy <= 1e-10, "{name}: eigenspace vs ‖N‖/4 {}", e.discrepancy);
                worst_t = worst_t.max(t);
                worst_e = worst_e.max(e.discrepancy);
            }
        }
    }
    Ok(format!("tensoriality {worst_t:.1e}, eigenspace discrepancy {worst_e:.1e}"))
}

fn strata() -> Outcome {
    let sc = load("cone.json");
    let ss = sc.strata.as_ref().unwrap();
    let t = &sc.tolerances;
    let sampler = StrataSampler {
        region: sc.region.clone(),
        per_stratum: 64,
        boundary_prob: 0.5,
        rng_seed: 2,
    };
    let opts = OrbitOptions {
        budget: 1000,
        step_scale: 0.5,
        merge_radius: t.merge_radius,
        rank_tol: t.rank,
        rng_seed: 2,
        integrator: t.integrator(),
        ..OrbitOptions::default()
    };
    let family = sc.family(Some("strong")).unwrap();
    let seed = vec![1.0, 0.0, 1.0];
    let r = orbit_vs_strata(ss, &family, std::slice::from_ref(&seed), &opts, &sampler, t.drift_horizon, t.drift, t.coverage_radius)
        .map_err(|e| e.to_string())?;
    let s = &r.seeds[0];
    ensure!(s.orbit_points >= 1000, "{} orbit points", s.orbit_points);
    ensure!(s.escaped.is_empty(), "{} escaped", s.escaped.len());
    let frontier = frontier_check(ss, &sampler, t.frontier).map_err(|e| e.to_string())?;
    ensure!(frontier.pass, "frontier: uncovered {}, pairs {:?}", frontier.uncovered.len(), frontier.pairs);
    let dz = sc.field("dz").unwrap();
    let d = strongly_stratified_check(ss, dz, &sampler, t.drift_horizon, t.drift, &t.integrator()).map_err(|e| e.to_string())?;
    ensure!(!d.pass, "∂z passed");
    let w = d.witness.ok_or("no witness")?;
    // ∂z moves (x, y, z) to (x, y, z + t): the cone residual becomes |(z + t)² − x² − y²|.
    let (x0, y0, z0) = (w.start[0], w.start[1], w.start[2]);
    let cone = |z: f64| (z * z - x0 * x0 - y0 * y0).abs();
    let oracle = cone(z0 + w.time) - cone(z0);
    ensure!(distance(&w.point, &[x0, y0, z0 + w.time]) <= 1e-9, "witness point {:?}", w.point);
    ensure!((w.drift - oracle).abs() <= 1e-9 * (1.0 + oracle), "drift {} vs oracle {oracle}", w.drift);
    ensure!(w.drift > t.drift * t.drift_horizon, "drift {} not above tolerance", w.drift);
    Ok(format!("{} points, 0 escaped; frontier PASS; ∂z drift {:.3}", s.orbit_points, w.drift))
}

fn determinism() -> Outcome {
    let p = |n: &str| path(n).to_string_lossy().into_owned();
    let runs: Vec<Vec<String>> = [
        vec!["flow", "--scenario", &p("halfline.json"), "--field", "ddx", "--point", "0.5"],
        vec!["classify", "--scenario", &p("halfline.json"), "--field", "xddx", "--seed", "1"],
        vec!["bracket", "--scenario", &p("dx_xdy.json"), "--x", "dx", "--y", "xdy"],
        vec!["orbit", "--scenario", &p("rotation.json"), "--point", "1,0", "--budget", "200", "--seed", "7"],
        vec!["chart", "--scenario", &p("dx_xdy.json"), "--family", "F", "--basis", "dx,xdy", "--point", "1,0"],
        vec!["complete-probe", "--scenario", &p("dx_xdy.json"), "--family", "F", "--seed", "4"],
        vec!["strata", "--scenario", &p("cone.json"), "--check", "frontier", "--seed", "3"],
        vec!["poisson", "--scenario", &p("rotation.json"), "--check", "invariance", "--h", "(x1^2 + x2^2)/2", "--f", "x1", "--g", "x2"],
        vec!["reduce", "--scenario", &p("reduction.json")],
        vec!["leaf", "--scenario", &p("reduction.json"), "--generators", "x1,x2,x3", "--budget", "100"],
        vec!["acs", "--scenario", &p("variable_j.json"), "--check", "eigen", "--seed", "6"],
    ]
    .into_iter()
    .map(|v| v.into_iter().map(String::from).collect())
    .collect();
    for args in &runs {
        let once = || {
            Command::new(env!("CARGO_BIN_EXE_subcart"))
                .args(args)
                .output()
                .map_err(|e| e.to_string())
        };
        let (a, b) = (once()?, once()?);
        ensure!(a.status.code().is_some_and(|c| c < 2), "{}: exit {:?}: {}", args[0], a.status.code(), String::from_utf8_lossy(&a.stderr));
        ensure!(!a.stdout.is_empty() && a.stdout == b.stdout, "{} differs between runs", args[0]);
    }
    Ok(format!("{} commands byte-identical", runs.len()))
}

fn main() {
    let criteria: [Criterion; 14] = [
        ("half-line classification", example_one),
        ("line-plus-disk classification and escape times", example_two),
        ("flow group law on the rotation scenario", group_law),
        ("orbit chart Jacobian", chart),
        ("orbit dimension reports", dimension_suite),
        ("local completeness probe", completeness),
        ("reduced bracket table", reduced_table),
        ("Casimir conservation on a leaf", casimirs),
        ("bracket invariance along a Hamiltonian flow", invariance),
        ("Jacobi residuals and broken control", jacobi),
        ("torsion value", torsion),
        ("torsion tensoriality and eigenspace cross-check", tensoriality),
        ("cone strata", strata),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name} ({secs:.2}s): {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {name} ({secs:.2}s): {why}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
