//! Orbits of finite families of vector fields.
//!
//! An orbit is explored by composing flows along random words. Durations of a
//! step are a hash of the seed, the word leading to the parent point and the
//! label of the field being flowed, so a subfamily explores a subtree of the
//! tree explored by any larger family with the same seed.

use std::collections::BTreeMap;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::field::{pushforward_at, TangentField};
use crate::flow::{flow_map, FlowError};
use crate::linalg::{from_columns, rank_of, singular_values, span_residual, RANK_FLOOR};
use crate::ode::IntegratorOptions;
use crate::space::{distance, SubcartesianSpace};

pub const DEFAULT_MERGE_RADIUS: f64 = 1e-6;
pub const DEFAULT_RANK_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OrbitError {
    #[error("budget must be positive")]
    EmptyBudget,
    #[error("field `{label}` has dimension {got}, space has {expected}")]
    DimensionMismatch {
        label: String,
        expected: usize,
        got: usize,
    },
    #[error("field index {index} outside a family of {size}")]
    IndexOutOfRange { index: usize, size: usize },
    #[error("basis fields have rank {rank} < {m} at the basepoint")]
    DependentBasis { rank: usize, m: usize },
    #[error("segment {segment} of the word: {source}")]
    Segment {
        segment: usize,
        partial: Vec<Vec<f64>>,
        source: FlowError,
    },
    #[error(transparent)]
    Flow(#[from] FlowError),
}

#[derive(Debug, Clone)]
pub struct FieldFamily {
    fields: Vec<TangentField>,
    space: SubcartesianSpace,
}

impl FieldFamily {
    pub fn new(space: SubcartesianSpace, fields: Vec<TangentField>) -> Result<Self, OrbitError> {
        for f in &fields {
            if f.dim() != space.ambient_dim() {
                return Err(OrbitError::DimensionMismatch {
                    label: f.label().to_string(),
                    expected: space.ambient_dim(),
                    got: f.dim(),
                });
            }
        }
        Ok(FieldFamily { fields, space })
    }

    pub fn fields(&self) -> &[TangentField] {
        &self.fields
    }

    pub fn space(&self) -> &SubcartesianSpace {
        &self.space
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    fn field(&self, index: usize) -> Result<&TangentField, OrbitError> {
        self.fields.get(index).ok_or(OrbitError::IndexOutOfRange {
            index,
            size: self.fields.len(),
        })
    }

    pub fn values_at(&self, x: &[f64]) -> Result<Vec<Vec<f64>>, FlowError> {
        Ok(self
            .fields
            .iter()
            .map(|f| f.value_at(x))
            .collect::<Result<_, _>>()?)
    }
}

/// Steps `(field_index, t)`, applied first to last.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct FlowWord {
    pub steps: Vec<(usize, f64)>,
}

impl FlowWord {
    pub fn then(&self, index: usize, t: f64) -> FlowWord {
        let mut steps = self.steps.clone();
        steps.push((index, t));
        FlowWord { steps }
    }

    /// The word that undoes this one.
    pub fn inverse(&self) -> FlowWord {
        FlowWord {
            steps: self.steps.iter().rev().map(|(i, t)| (*i, -t)).collect(),
        }
    }

    pub fn concat(&self, other: &FlowWord) -> FlowWord {
        let mut steps = self.steps.clone();
        steps.extend_from_slice(&other.steps);
        FlowWord { steps }
    }
}

/// `φ^{Xₘ}_{tₘ} ∘ … ∘ φ^{X₁}_{t₁}(x0)`.
pub fn reach(
    family: &FieldFamily,
    x0: &[f64],
    word: &FlowWord,
    opts: &IntegratorOptions,
) -> Result<Vec<f64>, OrbitError> {
    if !family.space.contains(x0) {
        return Err(FlowError::NotMember(x0.to_vec()).into());
    }
    let mut y = x0.to_vec();
    let mut partial = vec![y.clone()];
    for (segment, &(index, t)) in word.steps.iter().enumerate() {
        let field = family.field(index)?;
        match flow_map(&family.space, field, t, &y, opts) {
            Ok(next) => y = next,
            Err(source) => {
                return Err(OrbitError::Segment {
                    segment,
                    partial,
                    source,
                })
            }
        }
        partial.push(y.clone());
    }
    Ok(y)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpanInfo {
    pub rank: usize,
    pub singular_values: Vec<f64>,
}

/// Numerical rank of the field values at `x`.
pub fn span_info(family: &FieldFamily, x: &[f64], rank_tol: f64) -> Result<SpanInfo, FlowError> {
    let cols = family.values_at(x)?;
    let sv = singular_values(x.len(), &cols);
    Ok(SpanInfo {
        rank: rank_of(&sv, rank_tol),
        singular_values: sv,
    })
}

pub fn span_dimension(family: &FieldFamily, x: &[f64], rank_tol: f64) -> Result<usize, FlowError> {
    Ok(span_info(family, x, rank_tol)?.rank)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrbitOptions {
    pub budget: usize,
    pub step_scale: f64,
    pub draws_per_field: usize,
    pub max_depth: usize,
    pub merge_radius: f64,
    pub rank_tol: f64,
    pub rng_seed: u64,
    pub integrator: IntegratorOptions,
}

impl Default for OrbitOptions {
    fn default() -> Self {
        OrbitOptions {
            budget: 200,
            step_scale: 1.0,
            draws_per_field: 2,
            max_depth: usize::MAX,
            merge_radius: DEFAULT_MERGE_RADIUS,
            rank_tol: DEFAULT_RANK_TOL,
            rng_seed: 0,
            integrator: IntegratorOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrbitPoint {
    pub point: Vec<f64>,
    pub word: FlowWord,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct OrbitDiagnostics {
    /// Candidate segments whose flow left the space.
    pub exits: usize,
    /// Candidates dropped as duplicates.
    pub merged: usize,
    pub depth: usize,
    pub budget_exhausted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrbitSample {
    pub seed: Vec<f64>,
    pub points: Vec<OrbitPoint>,
    pub est_dimension: usize,
    pub diagnostics: OrbitDiagnostics,
}

fn step_times(seed: u64, word: &FlowWord, family: &FieldFamily, label: &str, draws: usize, scale: f64) -> Vec<f64> {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for (i, t) in &word.steps {
        h.update(family.fields[*i].label().as_bytes());
        h.update([0u8]);
        h.update(t.to_bits().to_le_bytes());
    }
    h.update([1u8]);
    h.update(label.as_bytes());
    let digest: [u8; 32] = h.finalize().into();
    let mut rng = ChaCha8Rng::from_seed(digest);
    (0..draws)
        .map(|_| if scale > 0.0 { rng.random_range(-scale..=scale) } else { 0.0 })
        .collect()
}

/// Breadth-first orbit exploration from `x0`.
///
/// Each round flows every frontier point along every field for
/// `draws_per_field` hashed durations in `[-step_scale, step_scale]`. Flows
/// of a round run in parallel; acceptance happens in candidate order, so
/// the result depends only on the inputs.
pub fn sample_orbit(family: &FieldFamily, x0: &[f64], opts: &OrbitOptions) -> Result<OrbitSample, OrbitError> {
    if opts.budget == 0 {
        return Err(OrbitError::EmptyBudget);
    }
    if x0.len() != family.space.ambient_dim() {
        return Err(FlowError::DimensionMismatch {
            expected: family.space.ambient_dim(),
            got: x0.len(),
        }
        .into());
    }
    if !family.space.contains(x0) {
        return Err(FlowError::NotMember(x0.to_vec()).into());
    }
    let mut points = vec![OrbitPoint {
        point: x0.to_vec(),
        word: FlowWord::default(),
    }];
    let mut diagnostics = OrbitDiagnostics::default();
    let mut frontier = vec![0usize];
    while !frontier.is_empty() && points.len() < opts.budget && diagnostics.depth < opts.max_depth {
        diagnostics.depth += 1;
        let mut candidates = Vec::new();
        for &p in &frontier {
            for (i, f) in family.fields.iter().enumerate() {
                for t in step_times(opts.rng_seed, &points[p].word, family, f.label(), opts.draws_per_field, opts.step_scale) {
                    candidates.push((p, i, t));
                }
            }
        }
        let flowed: Vec<Result<Vec<f64>, FlowError>> = candidates
            .par_iter()
            .map(|&(p, i, t)| flow_map(&family.space, &family.fields[i], t, &points[p].point, &opts.integrator))
            .collect();
        let mut next = Vec::new();
        for ((p, i, t), result) in candidates.into_iter().zip(flowed) {
            if points.len() >= opts.budget {
                diagnostics.budget_exhausted = true;
                break;
            }
            let y = match result {
                Ok(y) => y,
                Err(FlowError::OutsideInterval { .. }) | Err(FlowError::StepUnderflow { .. }) => {
                    diagnostics.exits += 1;
                    continue;
                }
                Err(e) => return Err(e.into()),
            };
            if points.iter().any(|q| distance(&q.point, &y) < opts.merge_radius) {
                diagnostics.merged += 1;
                continue;
            }
            let word = points[p].word.then(i, t);
            next.push(points.len());
            points.push(OrbitPoint { point: y, word });
        }
        frontier = next;
    }
    let mut est_dimension = 0;
    for p in &points {
        est_dimension = est_dimension.max(span_dimension(family, &p.point, opts.rank_tol)?);
    }
    Ok(OrbitSample {
        seed: x0.to_vec(),
        points,
        est_dimension,
        diagnostics,
    })
}

/// Local chart `T ↦ ξ_T(x)` of an orbit and its Jacobian at `T = 0`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Chart {
    pub basis: Vec<usize>,
    pub basepoint: Vec<f64>,
    /// Half-width of the cube of parameters verified to stay in the space.
    pub parameter_half_width: f64,
    /// Columns `X^j(x)`, as an `n × m` row-major matrix.
    pub jacobian0: Vec<Vec<f64>>,
    /// Central differences of the chart at `T = 0`.
    pub jacobian_fd: Vec<Vec<f64>>,
    pub fd_discrepancy: f64,
    pub singular_values: Vec<f64>,
    pub rank: usize,
}

fn chart_point(family: &FieldFamily, basis: &[usize], params: &[f64], x: &[f64], opts: &IntegratorOptions) -> Result<Vec<f64>, OrbitError> {
    let word = FlowWord {
        steps: basis.iter().zip(params).map(|(i, t)| (*i, *t)).collect(),
    };
    reach(family, x, &word, opts)
}

pub fn chart_jacobian(
    family: &FieldFamily,
    basis: &[usize],
    x: &[f64],
    fd_step: f64,
    rank_tol: f64,
    opts: &IntegratorOptions,
) -> Result<Chart, OrbitError> {
    let n = family.space.ambient_dim();
    let m = basis.len();
    if !family.space.contains(x) {
        return Err(FlowError::NotMember(x.to_vec()).into());
    }
    let mut cols = Vec::with_capacity(m);
    for &i in basis {
        cols.push(family.field(i)?.value_at(x).map_err(FlowError::from)?);
    }
    let sv = singular_values(n, &cols);
    let rank = rank_of(&sv, rank_tol);
    if rank < m {
        return Err(OrbitError::DependentBasis { rank, m });
    }
    let mut fd_cols = Vec::with_capacity(m);
    for j in 0..m {
        let mut plus = vec![0.0; m];
        let mut minus = vec![0.0; m];
        plus[j] = fd_step;
        minus[j] = -fd_step;
        let a = chart_point(family, basis, &plus, x, opts)?;
        let b = chart_point(family, basis, &minus, x, opts)?;
        fd_cols.push(a.iter().zip(&b).map(|(p, q)| (p - q) / (2.0 * fd_step)).collect::<Vec<f64>>());
    }
    let mut fd_discrepancy: f64 = 0.0;
    for (a, b) in cols.iter().zip(&fd_cols) {
        fd_discrepancy = fd_discrepancy.max(distance(a, b));
    }

    let mut half_width = fd_step;
    let mut h = 0.1;
    while h > fd_step {
        let ok = (0..1usize << m).all(|mask| {
            let params: Vec<f64> = (0..m).map(|j| if mask >> j & 1 == 1 { h } else { -h }).collect();
            chart_point(family, basis, &params, x, opts).is_ok()
        });
        if ok {
            half_width = h;
            break;
        }
        h /= 10.0;
    }

    let to_rows = |c: &[Vec<f64>]| (0..n).map(|i| c.iter().map(|col| col[i]).collect()).collect();
    Ok(Chart {
        basis: basis.to_vec(),
        basepoint: x.to_vec(),
        parameter_half_width: half_width,
        jacobian0: to_rows(&cols),
        jacobian_fd: to_rows(&fd_cols),
        fd_discrepancy,
        singular_values: sv,
        rank,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DimensionReport {
    /// Dimension to number of sampled points with it.
    pub counts: BTreeMap<usize, usize>,
    pub constant: bool,
    pub points: usize,
}

impl DimensionReport {
    pub fn dimensions(&self) -> Vec<usize> {
        self.counts.keys().copied().collect()
    }
}

pub fn dimension_constancy_report(family: &FieldFamily, x0: &[f64], opts: &OrbitOptions) -> Result<DimensionReport, OrbitError> {
    let sample = sample_orbit(family, x0, opts)?;
    dimension_report_for(family, sample.points.iter().map(|p| p.point.as_slice()), opts.rank_tol)
}

pub fn dimension_report_for<'a>(
    family: &FieldFamily,
    points: impl Iterator<Item = &'a [f64]>,
    rank_tol: f64,
) -> Result<DimensionReport, OrbitError> {
    let mut counts = BTreeMap::new();
    let mut total = 0;
    for p in points {
        *counts.entry(span_dimension(family, p, rank_tol)?).or_insert(0) += 1;
        total += 1;
    }
    Ok(DimensionReport {
        constant: counts.len() <= 1,
        counts,
        points: total,
    })
}

/// One pushforward test: `(φ^{X_push}_t)_* X_moved` at the image of `x`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompletenessProbe {
    pub point: Vec<f64>,
    pub t: f64,
    pub flowed: usize,
    pub pushed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeResult {
    pub probe: CompletenessProbe,
    pub image: Vec<f64>,
    pub vector: Vec<f64>,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompletenessReport {
    pub pass: bool,
    pub tol: f64,
    pub max_residual: f64,
    pub witness: Option<ProbeResult>,
    pub results: Vec<ProbeResult>,
    /// Probes whose flow left the space.
    pub skipped: usize,
}

/// Random probes at `seeds`: every ordered pair of fields, `per_pair` times in
/// `[-time_scale, time_scale]` each.
pub fn random_probes(family: &FieldFamily, seeds: &[Vec<f64>], per_pair: usize, time_scale: f64, rng_seed: u64) -> Vec<CompletenessProbe> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut out = Vec::new();
    for x in seeds {
        for a in 0..family.len() {
            for b in 0..family.len() {
                for _ in 0..per_pair {
                    out.push(CompletenessProbe {
                        point: x.clone(),
                        t: rng.random_range(-time_scale..=time_scale),
                        flowed: a,
                        pushed: b,
                    });
                }
            }
        }
    }
    out
}

/// Checks `(φ^X_t)_* Y (φ_t x) ∈ span ℱ_{φ_t x}` on the given probes.
pub fn local_completeness_probe(
    family: &FieldFamily,
    probes: &[CompletenessProbe],
    tol: f64,
    rank_tol: f64,
    opts: &IntegratorOptions,
) -> Result<CompletenessReport, OrbitError> {
    let outcomes: Vec<Result<Option<ProbeResult>, OrbitError>> = probes
        .par_iter()
        .map(|probe| {
            let x_field = family.field(probe.flowed)?;
            let y_field = family.field(probe.pushed)?;
            let pf = match pushforward_at(x_field, probe.t, y_field, &probe.point, &family.space, opts) {
                Ok(pf) => pf,
                Err(FlowError::Exited { .. }) | Err(FlowError::StepUnderflow { .. }) => return Ok(None),
                Err(e) => return Err(e.into()),
            };
            let span = family.values_at(&pf.image)?;
            let residual = span_residual(&pf.vector, &span, rank_tol);
            Ok(Some(ProbeResult {
                probe: probe.clone(),
                image: pf.image,
                vector: pf.vector,
                residual,
            }))
        })
        .collect();
    let mut results = Vec::new();
    let mut skipped = 0;
    for o in outcomes {
        match o? {
            Some(r) => results.push(r),
            None => skipped += 1,
        }
    }
    let worst = results
        .iter()
        .max_by(|a, b| a.residual.total_cmp(&b.residual))
        .cloned();
    let max_residual = worst.as_ref().map_or(0.0, |w| w.residual);
    let pass = max_residual <= tol;
    Ok(CompletenessReport {
        pass,
        tol,
        max_residual,
        witness: if pass { None } else { worst },
        results,
        skipped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum OrbitRelation {
    /// `word` carries the first seed to within the merge radius of the second.
    Connected { word: FlowWord, gap: f64 },
    Unknown,
}

/// Gauss-Newton walk from `from` towards `to` along the family's flows.
/// Returns the appended steps once the gap falls below `goal`.
fn bridge(family: &FieldFamily, from: &[f64], to: &[f64], goal: f64, opts: &OrbitOptions) -> Option<FlowWord> {
    let n = family.space.ambient_dim();
    let mut y = from.to_vec();
    let mut word = FlowWord::default();
    let mut gap = distance(&y, to);
    for _ in 0..40 {
        if gap < goal {
            return Some(word);
        }
        let cols = family.values_at(&y).ok()?;
        let a = from_columns(n, &cols);
        let rhs = DVector::from_iterator(n, y.iter().zip(to).map(|(u, v)| v - u));
        let svd = a.svd(true, true);
        let top = svd.singular_values.max();
        let tau = svd.solve(&rhs, (opts.rank_tol * top).max(RANK_FLOOR)).ok()?;
        let norm = tau.norm();
        if norm == 0.0 {
            return None;
        }
        let scale = (opts.step_scale / norm).min(1.0);
        let mut trial = word.clone();
        for (i, t) in tau.iter().enumerate() {
            if *t != 0.0 {
                trial = trial.then(i, t * scale);
            }
        }
        let next = reach(family, from, &trial, &opts.integrator).ok()?;
        let next_gap = distance(&next, to);
        if next_gap >= gap {
            return None;
        }
        word = trial;
        y = next;
        gap = next_gap;
    }
    (gap < goal).then_some(word)
}

/// Looks for a crossing between the sampled orbits of `a` and `b`. Close
/// pairs that miss the merge radius get a short Gauss-Newton bridge.
pub fn orbit_relation(family: &FieldFamily, a: &[f64], b: &[f64], opts: &OrbitOptions) -> Result<OrbitRelation, OrbitError> {
    let from_a = sample_orbit(family, a, opts)?;
    let from_b = sample_orbit(family, b, opts)?;
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (i, p) in from_a.points.iter().enumerate() {
        for (j, q) in from_b.points.iter().enumerate() {
            pairs.push((distance(&p.point, &q.point), i, j));
        }
    }
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    for &(gap, i, j) in pairs.iter().take(8) {
        let (p, q) = (&from_a.points[i], &from_b.points[j]);
        let link = if gap < opts.merge_radius {
            Some(FlowWord::default())
        } else {
            bridge(family, &p.point, &q.point, 0.1 * opts.merge_radius, opts)
        };
        let Some(link) = link else { continue };
        let word = p.word.concat(&link).concat(&q.word.inverse());
        let Ok(end) = reach(family, a, &word, &opts.integrator) else { continue };
        let gap = distance(&end, b);
        if gap < opts.merge_radius {
            return Ok(OrbitRelation::Connected { word, gap });
        }
    }
    Ok(OrbitRelation::Unknown)
}
