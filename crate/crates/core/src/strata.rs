//! Declared stratifications: frontier condition, strongly stratified fields
//! and the comparison of orbits with strata.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::expr::SmoothExpr;
use crate::field::{FieldFlow, TangentField};
use crate::flow::FlowError;
use crate::ode::{self, End, IntegratorOptions};
use crate::orbit::{sample_orbit, span_dimension, FieldFamily, OrbitError, OrbitOptions};
use crate::space::{distance, Region, Relation, SubcartesianSpace};

pub const DEFAULT_FRONTIER_TOL: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StrataError {
    #[error("stratum `{0}` produced no sample points")]
    EmptySample(String),
    #[error("unknown stratum `{0}`")]
    UnknownStratum(String),
    #[error("point {0:?} lies in no stratum")]
    NoStratum(Vec<f64>),
    #[error("point {point:?} is not in stratum `{stratum}`")]
    NotInStratum { stratum: String, point: Vec<f64> },
    #[error("radii must satisfy 0 < r_inner < r_outer")]
    BadRadii,
    #[error("field `{field}` is not tangent to `{stratum}`: residual {residual:e} at {point:?}")]
    NotTangent {
        field: String,
        stratum: String,
        residual: f64,
        point: Vec<f64>,
    },
    #[error("field `{0}` is not strongly stratified")]
    NotStronglyStratified(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Orbit(#[from] OrbitError),
}

#[derive(Debug, Clone)]
pub struct Stratum {
    pub name: String,
    pub space: SubcartesianSpace,
    pub dim: usize,
    /// Fields whose span should have dimension `dim` along the stratum.
    pub frame: Vec<TangentField>,
}

#[derive(Debug, Clone)]
pub struct StratifiedSpace {
    pub total: SubcartesianSpace,
    pub strata: Vec<Stratum>,
    /// Declared, never verified.
    pub locally_trivial: bool,
}

#[derive(Debug, Clone)]
pub struct StrataSampler {
    pub region: Region,
    pub per_stratum: usize,
    pub boundary_prob: f64,
    pub rng_seed: u64,
}

fn keyed_rng(seed: u64, key: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(key.as_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

impl StratifiedSpace {
    pub fn stratum(&self, name: &str) -> Result<&Stratum, StrataError> {
        self.strata
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| StrataError::UnknownStratum(name.to_string()))
    }

    /// First stratum, in name order, containing `x`.
    pub fn locate(&self, x: &[f64]) -> Option<&Stratum> {
        self.sorted().into_iter().find(|s| s.space.contains(x))
    }

    fn sorted(&self) -> Vec<&Stratum> {
        let mut v: Vec<&Stratum> = self.strata.iter().collect();
        v.sort_by(|a, b| a.name.cmp(&b.name));
        v
    }

    /// Samples of one stratum; the stream depends on the seed and the name only.
    pub fn sample_stratum(&self, stratum: &Stratum, sampler: &StrataSampler) -> Result<Vec<Vec<f64>>, StrataError> {
        let mut rng = keyed_rng(sampler.rng_seed, &format!("stratum:{}", stratum.name));
        let pts = stratum
            .space
            .sample(&sampler.region, sampler.per_stratum, sampler.boundary_prob, &mut rng);
        if pts.is_empty() {
            return Err(StrataError::EmptySample(stratum.name.clone()));
        }
        Ok(pts)
    }
}

/// Estimated distance from `m` to the closure of `space`, by sampling in balls
/// around `m` that shrink to the nearest point found so far.
fn closure_distance(space: &SubcartesianSpace, known: &[Vec<f64>], m: &[f64], rng: &mut ChaCha8Rng) -> f64 {
    let mut d = known.iter().map(|q| distance(q, m)).fold(f64::INFINITY, f64::min);
    let mut stalls = 0;
    for _ in 0..60 {
        if d <= 1e-14 || !d.is_finite() || stalls >= 3 {
            break;
        }
        let region = Region::Ball {
            center: m.to_vec(),
            radius: d,
        };
        let best = space
            .sample(&region, 16, 0.5, rng)
            .iter()
            .map(|q| distance(q, m))
            .fold(f64::INFINITY, f64::min);
        if best < 0.9 * d {
            d = best;
            stalls = 0;
        } else {
            d = d.min(best);
            stalls += 1;
        }
    }
    d
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairReport {
    /// `m` meets the closure of `n` when `contact_distance ≤ tol`.
    pub m: String,
    pub n: String,
    pub contact_distance: f64,
    pub contact: bool,
    /// Largest estimated distance from an `m` sample to the closure of `n`.
    pub worst_distance: f64,
    pub worst_point: Option<Vec<f64>>,
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrontierReport {
    pub pass: bool,
    pub tol: f64,
    pub pairs: Vec<PairReport>,
    /// Samples of the total space in no stratum, even after polishing onto
    /// the equalities of their cells.
    pub uncovered: Vec<Vec<f64>>,
    /// Samples lying in two or more strata, with their names.
    pub overlaps: Vec<(Vec<f64>, Vec<String>)>,
    pub samples: Vec<(String, usize)>,
}

/// Frontier condition, coverage and disjointness on samples.
///
/// Strata are processed in name order with per-name random streams, so the
/// report does not depend on the order in which strata were declared.
pub fn frontier_check(ss: &StratifiedSpace, sampler: &StrataSampler, tol: f64) -> Result<FrontierReport, StrataError> {
    let strata = ss.sorted();
    let mut samples = Vec::with_capacity(strata.len());
    for s in &strata {
        samples.push(ss.sample_stratum(s, sampler)?);
    }

    let mut pairs = Vec::new();
    for (i, m) in strata.iter().enumerate() {
        for (j, n) in strata.iter().enumerate() {
            if i == j {
                continue;
            }
            let mut rng = keyed_rng(sampler.rng_seed, &format!("pair:{}:{}", m.name, n.name));
            let dists: Vec<f64> = samples[i]
                .iter()
                .map(|p| closure_distance(&n.space, &samples[j], p, &mut rng))
                .collect();
            // A sample touches cl(N) only if it also satisfies N's relaxed constraints.
            let contact_distance = dists
                .iter()
                .zip(&samples[i])
                .filter(|(_, p)| n.space.relaxed_contains(p))
                .map(|(d, _)| *d)
                .fold(f64::INFINITY, f64::min);
            let contact = contact_distance <= tol;
            let (worst_idx, worst_distance) = dists
                .iter()
                .copied()
                .enumerate()
                .fold((0, 0.0), |acc, (k, d)| if d > acc.1 { (k, d) } else { acc });
            pairs.push(PairReport {
                m: m.name.clone(),
                n: n.name.clone(),
                contact_distance,
                contact,
                worst_distance,
                worst_point: contact.then(|| samples[i][worst_idx].clone()),
                ok: !contact || worst_distance <= tol,
            });
        }
    }

    let mut rng = keyed_rng(sampler.rng_seed, "total");
    let total = ss.total.sample(
        &sampler.region,
        sampler.per_stratum * strata.len().max(1),
        sampler.boundary_prob,
        &mut rng,
    );
    let mut uncovered = Vec::new();
    let mut overlaps = Vec::new();
    let mut check = |p: &Vec<f64>| {
        let names: Vec<String> = strata
            .iter()
            .filter(|s| s.space.contains(p))
            .map(|s| s.name.clone())
            .collect();
        match names.len() {
            0 => {
                let polished = ss.total.polish(p);
                if !polished.iter().any(|q| strata.iter().any(|s| s.space.contains(q))) {
                    uncovered.push(p.clone());
                }
            }
            1 => {}
            _ => overlaps.push((p.clone(), names)),
        }
    };
    total.iter().for_each(&mut check);
    samples.iter().flatten().for_each(&mut check);

    let pass = pairs.iter().all(|p| p.ok) && uncovered.is_empty() && overlaps.is_empty();
    Ok(FrontierReport {
        pass,
        tol,
        pairs,
        uncovered,
        overlaps,
        samples: strata
            .iter()
            .zip(&samples)
            .map(|(s, v)| (s.name.clone(), v.len()))
            .collect(),
    })
}

/// Smooth step that is exactly 1 on `‖y − x‖ ≤ r_inner` and exactly 0 on
/// `‖y − x‖ ≥ r_outer`.
pub fn bump(center: &[f64], r_inner: f64, r_outer: f64) -> Result<SmoothExpr, StrataError> {
    if !(r_inner > 0.0 && r_inner < r_outer) {
        return Err(StrataError::BadRadii);
    }
    let s = center
        .iter()
        .enumerate()
        .fold(SmoothExpr::zero(), |acc, (i, c)| {
            acc.add(&SmoothExpr::var(i).sub(&SmoothExpr::constant(*c)).powi(2))
        });
    let (a, b) = (r_outer * r_outer, r_inner * r_inner);
    let t = SmoothExpr::constant(a).sub(&s).div(&SmoothExpr::constant(a - b));
    let up = t.flat();
    let down = SmoothExpr::one().sub(&t).flat();
    Ok(up.div(&up.add(&down)))
}

/// Largest `|X·g|` over equality constraints of the stratum cells holding at
/// each point.
fn tangency_residual(stratum: &Stratum, field: &TangentField, points: &[Vec<f64>]) -> Result<(f64, Vec<f64>), StrataError> {
    let mut worst = (0.0, Vec::new());
    for p in points {
        let member = stratum.space.membership(p, stratum.space.tol());
        for &k in &member.cells {
            for c in &stratum.space.cells()[k] {
                if c.relation != Relation::EqZero {
                    continue;
                }
                let v = field
                    .apply(&c.expr)
                    .map_err(|_| StrataError::DimensionMismatch {
                        expected: field.dim(),
                        got: c.expr.max_var().map_or(0, |v| v + 1),
                    })?
                    .eval(p)
                    .map_err(FlowError::from)?
                    .abs();
                if v > worst.0 {
                    worst = (v, p.clone());
                }
            }
        }
    }
    Ok(worst)
}

/// `b·X_M` with `b` the bump around `x`; tangency of `X_M` is checked on
/// stratum samples inside the outer ball.
#[allow(clippy::too_many_arguments)]
pub fn extend_stratum_field(
    ss: &StratifiedSpace,
    stratum: &str,
    field: &TangentField,
    x: &[f64],
    r_inner: f64,
    r_outer: f64,
    tol: f64,
    rng_seed: u64,
) -> Result<TangentField, StrataError> {
    let m = ss.stratum(stratum)?;
    if field.dim() != ss.total.ambient_dim() || x.len() != field.dim() {
        return Err(StrataError::DimensionMismatch {
            expected: ss.total.ambient_dim(),
            got: field.dim(),
        });
    }
    if !m.space.contains(x) {
        return Err(StrataError::NotInStratum {
            stratum: stratum.to_string(),
            point: x.to_vec(),
        });
    }
    let b = bump(x, r_inner, r_outer)?;
    let mut rng = keyed_rng(rng_seed, &format!("extend:{stratum}"));
    let mut pts = vec![x.to_vec()];
    pts.extend(m.space.sample(
        &Region::Ball {
            center: x.to_vec(),
            radius: r_outer,
        },
        32,
        0.0,
        &mut rng,
    ));
    let (residual, point) = tangency_residual(m, field, &pts)?;
    if residual > tol {
        return Err(StrataError::NotTangent {
            field: field.label().to_string(),
            stratum: stratum.to_string(),
            residual,
            point,
        });
    }
    let components = field.components().iter().map(|c| b.mul(c)).collect();
    Ok(TangentField::new(format!("bump*{}", field.label()), components)
        .expect("bump uses the field's variables"))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DriftWitness {
    pub stratum: String,
    pub start: Vec<f64>,
    pub time: f64,
    pub point: Vec<f64>,
    pub drift: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StratifiedReport {
    pub pass: bool,
    pub field: String,
    pub horizon: f64,
    pub tol: f64,
    /// Largest stratum residual reached along short ambient flows, per stratum.
    pub drift: Vec<(String, f64)>,
    pub witness: Option<DriftWitness>,
}

/// Flows `X` in the ambient space for `|t| ≤ horizon` from stratum samples and
/// records the growth of the stratum residual. Passes when every drift is at
/// most `tol · horizon`.
pub fn strongly_stratified_check(
    ss: &StratifiedSpace,
    field: &TangentField,
    sampler: &StrataSampler,
    horizon: f64,
    tol: f64,
    opts: &IntegratorOptions,
) -> Result<StratifiedReport, StrataError> {
    if field.dim() != ss.total.ambient_dim() {
        return Err(StrataError::DimensionMismatch {
            expected: ss.total.ambient_dim(),
            got: field.dim(),
        });
    }
    let sys = FieldFlow { field, sign: 1.0 };
    let mut drift = Vec::new();
    let mut witness: Option<DriftWitness> = None;
    for s in ss.sorted() {
        let mut worst: f64 = 0.0;
        for p in ss.sample_stratum(s, sampler)? {
            let base = s.space.residual(&p);
            for t_end in [horizon, -horizon] {
                let tr = ode::integrate(&sys, &p, t_end, |_| true, opts);
                match tr.end {
                    End::Reached | End::Exited { .. } => {}
                    End::Underflow { t, .. } => return Err(FlowError::StepUnderflow { t }.into()),
                }
                for (t, y) in &tr.samples {
                    let d = (s.space.residual(y) - base).max(0.0);
                    let d = if d.is_finite() { d } else { f64::MAX };
                    if d > worst {
                        worst = d;
                    }
                    if witness.as_ref().is_none_or(|w| d > w.drift) && d > tol * horizon {
                        witness = Some(DriftWitness {
                            stratum: s.name.clone(),
                            start: p.clone(),
                            time: *t,
                            point: y.clone(),
                            drift: d,
                        });
                    }
                }
            }
        }
        drift.push((s.name.clone(), worst));
    }
    Ok(StratifiedReport {
        pass: witness.is_none(),
        field: field.label().to_string(),
        horizon,
        tol,
        drift,
        witness,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedOrbitReport {
    pub seed: Vec<f64>,
    pub stratum: String,
    pub orbit_points: usize,
    /// Orbit points outside the seed's stratum.
    pub escaped: Vec<Vec<f64>>,
    pub orbit_dimension: usize,
    pub stratum_dimension: usize,
    /// Fraction of stratum samples within `coverage_radius` of the orbit cloud.
    pub coverage_fraction: f64,
    pub coverage_evidence: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrbitStrataReport {
    pub pass: bool,
    pub locally_trivial_declared: bool,
    pub coverage_radius: f64,
    pub seeds: Vec<SeedOrbitReport>,
}

/// Samples orbits from each seed and checks they stay in the seed's stratum.
///
/// Coverage is evidence only: the orbit dimension must equal the declared
/// stratum dimension and some stratum samples must lie within
/// `coverage_radius` of the cloud.
#[allow(clippy::too_many_arguments)]
pub fn orbit_vs_strata(
    ss: &StratifiedSpace,
    family: &FieldFamily,
    seeds: &[Vec<f64>],
    orbit: &OrbitOptions,
    sampler: &StrataSampler,
    precheck_horizon: f64,
    precheck_tol: f64,
    coverage_radius: f64,
) -> Result<OrbitStrataReport, StrataError> {
    for f in family.fields() {
        let r = strongly_stratified_check(ss, f, sampler, precheck_horizon, precheck_tol, &orbit.integrator)?;
        if !r.pass {
            return Err(StrataError::NotStronglyStratified(f.label().to_string()));
        }
    }
    let mut reports = Vec::new();
    for seed in seeds {
        let stratum = ss.locate(seed).ok_or_else(|| StrataError::NoStratum(seed.clone()))?;
        let sample = sample_orbit(family, seed, orbit)?;
        let escaped: Vec<Vec<f64>> = sample
            .points
            .iter()
            .filter(|p| !stratum.space.contains(&p.point))
            .map(|p| p.point.clone())
            .collect();
        let reference = ss.sample_stratum(stratum, sampler)?;
        let near = reference
            .iter()
            .filter(|q| sample.points.iter().any(|p| distance(&p.point, q) <= coverage_radius))
            .count();
        let coverage_fraction = near as f64 / reference.len() as f64;
        let mut orbit_dimension = 0;
        for p in &sample.points {
            orbit_dimension = orbit_dimension.max(span_dimension(family, &p.point, orbit.rank_tol)?);
        }
        reports.push(SeedOrbitReport {
            seed: seed.clone(),
            stratum: stratum.name.clone(),
            orbit_points: sample.points.len(),
            escaped,
            orbit_dimension,
            stratum_dimension: stratum.dim,
            coverage_fraction,
            coverage_evidence: orbit_dimension == stratum.dim && (stratum.dim == 0 || near > 0),
        });
    }
    Ok(OrbitStrataReport {
        pass: reports.iter().all(|r| r.escaped.is_empty()),
        locally_trivial_declared: ss.locally_trivial,
        coverage_radius,
        seeds: reports,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrameReport {
    pub pass: bool,
    /// `(stratum, declared dim, dimensions seen on samples)`.
    pub strata: Vec<(String, usize, Vec<usize>)>,
}

/// Compares declared stratum dimensions with the rank of each stratum's frame.
pub fn frame_dimension_check(ss: &StratifiedSpace, sampler: &StrataSampler, rank_tol: f64) -> Result<FrameReport, StrataError> {
    let mut out = Vec::new();
    let mut pass = true;
    for s in ss.sorted() {
        let family = FieldFamily::new(s.space.clone(), s.frame.clone())?;
        let mut dims = Vec::new();
        for p in ss.sample_stratum(s, sampler)? {
            let d = span_dimension(&family, &p, rank_tol)?;
            if !dims.contains(&d) {
                dims.push(d);
            }
        }
        dims.sort_unstable();
        pass &= dims == [s.dim];
        out.push((s.name.clone(), s.dim, dims));
    }
    Ok(FrameReport { pass, strata: out })
}
