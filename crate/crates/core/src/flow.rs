//! Integral curves inside a space, flow maps, and the vector-field test.
//!
//! A derivation is a vector field when every point has a neighbourhood and an
//! `ε > 0` such that all points of the neighbourhood flow for time `ε` in both
//! directions without leaving the space, and the time-`t` maps are injective
//! there. [`classify_vector_field`] probes this directly and, on locally closed
//! spaces, also looks for integral curves that end at a point of the space.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::expr::ExprError;
use crate::field::{FieldFlow, TangentField};
use crate::ode::{self, End, IntegratorOptions, Trajectory};
use crate::space::{distance, Region, SubcartesianSpace};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FlowError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("point {0:?} is not in the space")]
    NotMember(Vec<f64>),
    #[error("time {t} outside the flow interval ({t_minus}, {t_plus})")]
    OutsideInterval { t: f64, t_minus: f64, t_plus: f64 },
    #[error("flow left the space at t = {t_exit}")]
    Exited { t_exit: f64, point: Vec<f64> },
    #[error("step size underflow at t = {t}")]
    StepUnderflow { t: f64 },
    #[error("no seed points to probe")]
    NoSeeds,
    #[error(transparent)]
    Expr(#[from] ExprError),
}

/// Where and why an integral curve stops.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExitWitness {
    /// Last time at which the curve is inside.
    pub t: f64,
    pub point: Vec<f64>,
    /// First point found outside, absent after a domain-guard failure.
    pub outside: Option<Vec<f64>>,
    pub violated: Vec<String>,
    /// The limit point satisfies every violated constraint with equality, so
    /// the curve ends at a point of the space.
    pub attained: bool,
    pub guard: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntegralCurve {
    pub field: String,
    pub basepoint: Vec<f64>,
    pub t_minus: f64,
    pub t_plus: f64,
    /// The interval was cut by the requested horizon, not by an exit.
    pub clipped_minus: bool,
    pub clipped_plus: bool,
    /// `(t, x)` in increasing `t`.
    pub samples: Vec<(f64, Vec<f64>)>,
    pub exit_minus: Option<ExitWitness>,
    pub exit_plus: Option<ExitWitness>,
}

impl IntegralCurve {
    /// The exit that is closer to the basepoint in time.
    pub fn exit_witness(&self) -> Option<&ExitWitness> {
        match (&self.exit_minus, &self.exit_plus) {
            (Some(a), Some(b)) => Some(if -a.t <= b.t { a } else { b }),
            (a, b) => a.as_ref().or(b.as_ref()),
        }
    }

    /// `min(-t_minus, t_plus)`.
    pub fn escape_time(&self) -> f64 {
        (-self.t_minus).min(self.t_plus)
    }
}

fn check(space: &SubcartesianSpace, field: &TangentField, x: &[f64]) -> Result<(), FlowError> {
    let n = space.ambient_dim();
    if field.dim() != n {
        return Err(FlowError::DimensionMismatch {
            expected: n,
            got: field.dim(),
        });
    }
    if x.len() != n {
        return Err(FlowError::DimensionMismatch {
            expected: n,
            got: x.len(),
        });
    }
    if !space.contains(x) {
        return Err(FlowError::NotMember(x.to_vec()));
    }
    Ok(())
}

fn one_side(
    space: &SubcartesianSpace,
    field: &TangentField,
    x: &[f64],
    t_end: f64,
    opts: &IntegratorOptions,
) -> Trajectory {
    let sys = FieldFlow { field, sign: 1.0 };
    ode::integrate(&sys, x, t_end, |y| space.contains(y), opts)
}

fn witness(space: &SubcartesianSpace, end: &End) -> Option<ExitWitness> {
    match end {
        End::Exited {
            t_in,
            y_in,
            y_out,
            guard,
            ..
        } => {
            let (violated, attained) = match y_out {
                Some(out) => {
                    let info = space.exit_info(y_in, out);
                    (info.violated, info.attained && guard.is_none())
                }
                None => (Vec::new(), false),
            };
            Some(ExitWitness {
                t: *t_in,
                point: y_in.clone(),
                outside: y_out.clone(),
                violated,
                attained,
                guard: guard.clone(),
            })
        }
        _ => None,
    }
}

/// Integral curve of `field` through `x`, cut at `|t| ≤ horizon`.
pub fn integrate(
    space: &SubcartesianSpace,
    field: &TangentField,
    x: &[f64],
    horizon: f64,
    opts: &IntegratorOptions,
) -> Result<IntegralCurve, FlowError> {
    check(space, field, x)?;
    let horizon = horizon.abs();
    let fwd = one_side(space, field, x, horizon, opts);
    let bwd = one_side(space, field, x, -horizon, opts);
    for tr in [&fwd, &bwd] {
        if let End::Underflow { t, .. } = tr.end {
            return Err(FlowError::StepUnderflow { t });
        }
    }
    let mut samples: Vec<(f64, Vec<f64>)> = bwd.samples.iter().skip(1).rev().cloned().collect();
    samples.extend(fwd.samples.iter().cloned());
    let t_plus = match &fwd.end {
        End::Exited { t_in, .. } => *t_in,
        _ => fwd.last().0,
    };
    let t_minus = match &bwd.end {
        End::Exited { t_in, .. } => *t_in,
        _ => bwd.last().0,
    };
    Ok(IntegralCurve {
        field: field.label().to_string(),
        basepoint: x.to_vec(),
        t_minus,
        t_plus,
        clipped_minus: bwd.end == End::Reached,
        clipped_plus: fwd.end == End::Reached,
        samples,
        exit_minus: witness(space, &bwd.end),
        exit_plus: witness(space, &fwd.end),
    })
}

/// `φₜ(x)`, or the flow interval around `x` when `t` lies outside it.
pub fn flow_map(
    space: &SubcartesianSpace,
    field: &TangentField,
    t: f64,
    x: &[f64],
    opts: &IntegratorOptions,
) -> Result<Vec<f64>, FlowError> {
    check(space, field, x)?;
    if t == 0.0 {
        return Ok(x.to_vec());
    }
    let tr = one_side(space, field, x, t, opts);
    match tr.end {
        End::Reached => Ok(tr.last().1.clone()),
        End::Underflow { t, .. } => Err(FlowError::StepUnderflow { t }),
        End::Exited { t_in, .. } => {
            let other = one_side(space, field, x, -t, opts);
            let t_other = match &other.end {
                End::Exited { t_in, .. } => *t_in,
                _ => other.last().0,
            };
            let (t_minus, t_plus) = if t > 0.0 { (t_other, t_in) } else { (t_in, t_other) };
            Err(FlowError::OutsideInterval { t, t_minus, t_plus })
        }
    }
}

/// `min(-t_minus, t_plus)` at `x`, capped by `horizon`.
pub fn escape_time(
    space: &SubcartesianSpace,
    field: &TangentField,
    x: &[f64],
    horizon: f64,
    opts: &IntegratorOptions,
) -> Result<f64, FlowError> {
    Ok(integrate(space, field, x, horizon, opts)?.escape_time())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Classification {
    VectorField,
    NotVectorField,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerdictWitness {
    pub point: Vec<f64>,
    pub time: Option<f64>,
    pub reason: String,
}

/// Per-seed outcome of the direct probe.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedReport {
    pub seed: Vec<f64>,
    /// First refinement level at which every sampled point flowed for `ε`
    /// both ways with injective time-`ε/2` map.
    pub passed_level: Option<usize>,
    /// Smallest escape time found at each level that was run.
    pub min_escape: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VectorFieldVerdict {
    pub classification: Classification,
    pub witness: Option<VerdictWitness>,
    pub probes_run: usize,
    pub seeds: Vec<SeedReport>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeOptions {
    pub seeds: Vec<Vec<f64>>,
    /// Neighbourhood radii, coarse to fine.
    pub radii: Vec<f64>,
    /// Flow times paired with `radii`.
    pub epsilons: Vec<f64>,
    pub samples_per_level: usize,
    pub boundary_prob: f64,
    pub rng_seed: u64,
    /// Horizon for the closed-endpoint search on locally closed spaces.
    pub endpoint_horizon: f64,
    /// Smallest admissible `|φ(a) − φ(b)| / |a − b|` over sampled pairs.
    pub injectivity_floor: f64,
    pub integrator: IntegratorOptions,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        let schedule = vec![1e-1, 3e-2, 1e-2, 3e-3, 1e-3];
        ProbeOptions {
            seeds: Vec::new(),
            radii: schedule.clone(),
            epsilons: schedule,
            samples_per_level: 64,
            boundary_prob: 0.5,
            rng_seed: 0,
            endpoint_horizon: 1.0,
            injectivity_floor: 1e-3,
            integrator: IntegratorOptions::default(),
        }
    }
}

fn min_pair_ratio(before: &[Vec<f64>], after: &[Vec<f64>]) -> f64 {
    let mut ratio = f64::INFINITY;
    for i in 0..before.len() {
        for j in i + 1..before.len() {
            let d = distance(&before[i], &before[j]);
            if d > 0.0 {
                ratio = ratio.min(distance(&after[i], &after[j]) / d);
            }
        }
    }
    ratio
}

/// Decides whether `field` restricts to a vector field on `space` near the seeds.
///
/// On locally closed spaces any integral curve that stops at a point of the
/// space certifies `NotVectorField`. Otherwise a seed fails when no level of
/// the radius/ε schedule passes the direct probe; its witness is the sampled
/// point with the smallest escape time at the finest level.
pub fn classify_vector_field(
    space: &SubcartesianSpace,
    field: &TangentField,
    probe: &ProbeOptions,
) -> Result<VectorFieldVerdict, FlowError> {
    if probe.seeds.is_empty() {
        return Err(FlowError::NoSeeds);
    }
    let opts = &probe.integrator;
    let mut rng = ChaCha8Rng::seed_from_u64(probe.rng_seed);
    let mut probes_run = 0;
    let mut seeds = Vec::new();
    let mut failure: Option<VerdictWitness> = None;
    let mut undecided = false;

    for seed in &probe.seeds {
        check(space, field, seed)?;
        let mut report = SeedReport {
            seed: seed.clone(),
            passed_level: None,
            min_escape: Vec::new(),
        };
        let mut finest: Option<(Vec<f64>, f64)> = None;
        let mut underflow = false;

        for (level, (&r, &eps)) in probe.radii.iter().zip(&probe.epsilons).enumerate() {
            let region = Region::Ball {
                center: seed.clone(),
                radius: r,
            };
            let mut pts = vec![seed.clone()];
            pts.extend(space.sample(&region, probe.samples_per_level, probe.boundary_prob, &mut rng));

            if space.locally_closed() {
                for y in &pts {
                    probes_run += 1;
                    let curve = match integrate(space, field, y, probe.endpoint_horizon, opts) {
                        Ok(c) => c,
                        Err(FlowError::StepUnderflow { .. }) => {
                            underflow = true;
                            continue;
                        }
                        Err(e) => return Err(e),
                    };
                    for w in [&curve.exit_minus, &curve.exit_plus].into_iter().flatten() {
                        if w.attained {
                            return Ok(VectorFieldVerdict {
                                classification: Classification::NotVectorField,
                                witness: Some(VerdictWitness {
                                    point: w.point.clone(),
                                    time: Some(w.t),
                                    reason: format!(
                                        "integral curve from {:?} ends in the space at t = {:e} ({})",
                                        y,
                                        w.t,
                                        w.violated.join(", ")
                                    ),
                                }),
                                probes_run,
                                seeds,
                            });
                        }
                    }
                }
            }

            let mut worst: Option<(Vec<f64>, f64)> = None;
            let mut level_ok = true;
            let mut level_underflow = false;
            for y in &pts {
                probes_run += 1;
                match integrate(space, field, y, eps, opts) {
                    Ok(curve) => {
                        let esc = curve.escape_time();
                        if worst.as_ref().is_none_or(|(_, w)| esc < *w) {
                            worst = Some((y.clone(), esc));
                        }
                        if !(curve.clipped_minus && curve.clipped_plus) {
                            level_ok = false;
                        }
                    }
                    Err(FlowError::StepUnderflow { .. }) => level_underflow = true,
                    Err(e) => return Err(e),
                }
            }
            report
                .min_escape
                .push(worst.as_ref().map_or(f64::NAN, |(_, w)| *w));
            if level_underflow {
                underflow = true;
                level_ok = false;
            }
            if level_ok {
                let mut images = Vec::with_capacity(pts.len());
                for y in &pts {
                    probes_run += 1;
                    images.push(flow_map(space, field, 0.5 * eps, y, opts)?);
                }
                if min_pair_ratio(&pts, &images) >= probe.injectivity_floor {
                    report.passed_level = Some(level);
                    break;
                }
            }
            if !level_underflow {
                finest = worst;
            }
        }

        if report.passed_level.is_none() {
            match finest {
                Some((point, esc)) if !underflow => {
                    if failure.is_none() {
                        let eps = probe.epsilons.last().copied().unwrap_or(0.0);
                        failure = Some(VerdictWitness {
                            point,
                            time: Some(esc),
                            reason: format!(
                                "no neighbourhood of {seed:?} flows for ε: escape time {esc:e} < {eps:e} at the finest level"
                            ),
                        });
                    }
                }
                _ => undecided = true,
            }
        }
        seeds.push(report);
    }

    let classification = if failure.is_some() {
        Classification::NotVectorField
    } else if undecided {
        Classification::Inconclusive
    } else {
        Classification::VectorField
    };
    Ok(VectorFieldVerdict {
        classification,
        witness: failure,
        probes_run,
        seeds,
    })
}
