//! The `subcart` command line.
//!
//! Every command loads a scenario, runs one computation and writes a JSON
//! report (plus a CSV for curves and clouds when `--out` names a `.csv`).
//! Exit status: 0 for passing or informational reports, 1 for a certified
//! failure, 2 for usage, scenario or I/O errors.

use std::fmt::Display;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use crate::expr::{parse, SmoothExpr};
use crate::field::TangentField;
use crate::flow::{classify_vector_field, integrate, Classification, ProbeOptions};
use crate::orbit::{
    chart_jacobian, dimension_constancy_report, local_completeness_probe, orbit_relation, random_probes, sample_orbit,
    CompletenessProbe, FieldFamily, OrbitError, OrbitOptions, OrbitRelation,
};
use crate::poisson::{invariance_residual, leaf_sample, reduce, PoissonError, PoissonStructure};
use crate::report::{csv, to_json};
use crate::scenario::{parse_overrides, Scenario, ScenarioError};
use crate::space::{Region, SubcartesianSpace};
use crate::strata::{frame_dimension_check, frontier_check, orbit_vs_strata, strongly_stratified_check, StrataError, StrataSampler};

#[derive(Debug, Parser)]
#[command(name = "subcart", version, about = "Flows, orbits and structures on subcartesian spaces")]
pub struct Cli {
    /// Scenario JSON file.
    #[arg(long, global = true)]
    pub scenario: Option<PathBuf>,
    /// Report path; a `.csv` path also gets `<stem>.json` for the report.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Comma-separated `key=value` tolerance overrides.
    #[arg(long, global = true)]
    pub tol_overrides: Option<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Integral curve of a field through a point.
    Flow(FlowArgs),
    /// Decide whether a field restricts to a vector field on the space.
    Classify(ClassifyArgs),
    /// Lie bracket of two fields.
    Bracket(BracketArgs),
    /// Sample the orbit of a family through a point.
    Orbit(OrbitArgs),
    /// Orbit chart Jacobian for a basis of family fields.
    Chart(ChartArgs),
    /// Local completeness probe of a family.
    CompleteProbe(CompleteArgs),
    /// Checks of a declared stratification.
    Strata(StrataArgs),
    /// Checks of a Poisson structure.
    Poisson(PoissonArgs),
    /// Reduced bracket table from the scenario's invariants.
    Reduce,
    /// Sample a symplectic leaf and its Casimir drift.
    Leaf(LeafArgs),
    /// Checks of an almost complex structure.
    Acs(AcsArgs),
}

#[derive(Debug, Args)]
pub struct FlowArgs {
    #[arg(long)]
    pub field: String,
    #[arg(long, allow_hyphen_values = true)]
    pub point: String,
    #[arg(long, default_value_t = 1.0)]
    pub horizon: f64,
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    #[arg(long)]
    pub field: String,
    /// JSON array of seed points; defaults to the scenario seeds.
    #[arg(long)]
    pub seeds: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    pub samples: usize,
}

#[derive(Debug, Args)]
pub struct BracketArgs {
    #[arg(long)]
    pub x: String,
    #[arg(long)]
    pub y: String,
    #[arg(long, allow_hyphen_values = true)]
    pub point: Option<String>,
}

#[derive(Debug, Args)]
pub struct OrbitArgs {
    #[arg(long)]
    pub family: Option<String>,
    /// Defaults to the first scenario seed.
    #[arg(long, allow_hyphen_values = true)]
    pub point: Option<String>,
    #[arg(long, default_value_t = 200)]
    pub budget: usize,
    #[arg(long, default_value_t = 1.0)]
    pub step_scale: f64,
    #[arg(long, default_value_t = 2)]
    pub draws: usize,
    /// Also look for a flow word joining the orbit to this point.
    #[arg(long, allow_hyphen_values = true)]
    pub target: Option<String>,
    /// Report the set of orbit dimensions seen on the cloud.
    #[arg(long)]
    pub dimensions: bool,
}

#[derive(Debug, Args)]
pub struct ChartArgs {
    #[arg(long)]
    pub family: Option<String>,
    /// Field labels or family indices, comma separated; defaults to the whole family.
    #[arg(long)]
    pub basis: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub point: String,
}

#[derive(Debug, Args)]
pub struct CompleteArgs {
    #[arg(long)]
    pub family: Option<String>,
    /// Probe at this point instead of the scenario seeds.
    #[arg(long, allow_hyphen_values = true)]
    pub point: Option<String>,
    #[arg(long, default_value_t = 3)]
    pub per_pair: usize,
    #[arg(long, default_value_t = 1.0)]
    pub time_scale: f64,
    /// Explicit probe `x1,..,xn;t;X;Y` (flow along X, push Y); repeatable.
    #[arg(long, allow_hyphen_values = true)]
    pub probe: Vec<String>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum StrataCheck {
    Frontier,
    Tangency,
    Orbits,
    Frame,
}

#[derive(Debug, Args)]
pub struct StrataArgs {
    #[arg(long, value_enum)]
    pub check: StrataCheck,
    /// Field for the tangency check.
    #[arg(long)]
    pub field: Option<String>,
    #[arg(long)]
    pub family: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub point: Option<String>,
    #[arg(long, default_value_t = 1000)]
    pub budget: usize,
    #[arg(long, default_value_t = 0.5)]
    pub step_scale: f64,
    #[arg(long, default_value_t = 64)]
    pub per_stratum: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PoissonCheck {
    Bracket,
    Hamiltonian,
    Jacobi,
    Invariance,
}

#[derive(Debug, Args)]
pub struct PoissonArgs {
    #[arg(long, value_enum)]
    pub check: Option<PoissonCheck>,
    /// Run the reduction instead of a check.
    #[arg(long)]
    pub reduce: bool,
    /// Use the reduced structure on the reduced space.
    #[arg(long)]
    pub reduced: bool,
    #[arg(long, allow_hyphen_values = true)]
    pub f: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub g: Option<String>,
    /// Hamiltonian for the invariance check.
    #[arg(long, allow_hyphen_values = true)]
    pub h: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub point: Option<String>,
    /// Flow times for the invariance check.
    #[arg(long, default_value = "0.1,1.0")]
    pub t: String,
    /// Random polynomial triples for the Jacobi check.
    #[arg(long, default_value_t = 50)]
    pub triples: usize,
    #[arg(long, default_value_t = 20)]
    pub samples: usize,
}

#[derive(Debug, Args)]
pub struct LeafArgs {
    /// Hamiltonians, comma separated.
    #[arg(long, allow_hyphen_values = true)]
    pub generators: String,
    #[arg(long, allow_hyphen_values = true)]
    pub point: Option<String>,
    #[arg(long, default_value_t = 500)]
    pub budget: usize,
    #[arg(long, default_value_t = 0.3)]
    pub step_scale: f64,
    /// Use the reduced structure even when the scenario has a Poisson block.
    #[arg(long)]
    pub reduced: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AcsCheck {
    Torsion,
    Tensor,
    Eigen,
    Cr,
    Kahler,
    Square,
}

#[derive(Debug, Args)]
pub struct AcsArgs {
    #[arg(long, value_enum)]
    pub check: AcsCheck,
    #[arg(long)]
    pub x: Option<String>,
    #[arg(long)]
    pub y: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub f: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub h: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub point: Option<String>,
    #[arg(long, default_value_t = 50)]
    pub samples: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn usage(msg: impl Display) -> CliError {
    CliError::Usage(msg.to_string())
}

fn rt(e: impl Display) -> CliError {
    CliError::Runtime(e.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Status {
    Pass,
    Fail,
    Inconclusive,
    Info,
}

impl Status {
    fn from_pass(pass: bool) -> Self {
        if pass {
            Status::Pass
        } else {
            Status::Fail
        }
    }

    pub fn exit_code(self) -> i32 {
        match self {
            Status::Fail => 1,
            _ => 0,
        }
    }
}

struct Table {
    header: Vec<String>,
    rows: Vec<(Vec<f64>, Option<usize>)>,
}

struct Outcome {
    status: Status,
    result: Value,
    table: Option<Table>,
    words: Option<Value>,
}

impl Outcome {
    fn new(status: Status, result: Value) -> Self {
        Outcome {
            status,
            result,
            table: None,
            words: None,
        }
    }
}

fn value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report types serialize")
}

fn parse_point(text: &str, n: usize) -> Result<Vec<f64>, CliError> {
    let p: Vec<f64> = text
        .split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|_| usage(format!("bad coordinate `{s}` in point `{text}`"))))
        .collect::<Result<_, _>>()?;
    if p.len() != n {
        return Err(usage(format!("point `{text}` has {} coordinates, expected {n}", p.len())));
    }
    Ok(p)
}

fn parse_expr(text: &str, n: usize) -> Result<SmoothExpr, CliError> {
    parse(text, n).map_err(|e| usage(format!("`{text}`: {e}")))
}

fn required<'a>(opt: &'a Option<String>, flag: &str) -> Result<&'a str, CliError> {
    opt.as_deref().ok_or_else(|| usage(format!("missing --{flag}")))
}

fn start_point(sc: &Scenario, point: &Option<String>) -> Result<Vec<f64>, CliError> {
    match point {
        Some(p) => parse_point(p, sc.space.ambient_dim()),
        None => sc
            .seeds
            .first()
            .cloned()
            .ok_or_else(|| usage("no --point given and the scenario has no seeds")),
    }
}

fn coord_header(prefix: &[&str], n: usize, suffix: &[&str]) -> Vec<String> {
    prefix
        .iter()
        .map(|s| s.to_string())
        .chain((1..=n).map(|i| format!("x{i}")))
        .chain(suffix.iter().map(|s| s.to_string()))
        .collect()
}

/// Uniform points of the scenario region, or the single `--point`.
fn sample_points(region: &Region, n: usize, count: usize, seed: u64, point: Option<Vec<f64>>) -> Vec<Vec<f64>> {
    if let Some(p) = point {
        return vec![p];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| match region {
            Region::Box { lo, hi } => lo
                .iter()
                .zip(hi)
                .map(|(l, h)| if h > l { rng.random_range(*l..*h) } else { *l })
                .collect(),
            Region::Ball { center, radius } => center.iter().map(|c| c + rng.random_range(-radius..*radius) / (n as f64).sqrt()).collect(),
        })
        .collect()
}

/// Sum of three monomials of degree 1 to 3 with small integer coefficients.
fn random_polynomial(n: usize, rng: &mut ChaCha8Rng) -> SmoothExpr {
    let mut p = SmoothExpr::zero();
    for _ in 0..3 {
        let mut term = SmoothExpr::constant([-3.0, -2.0, -1.0, 1.0, 2.0, 3.0][rng.random_range(0..6)]);
        for _ in 0..rng.random_range(1..=3) {
            term = term.mul(&SmoothExpr::var(rng.random_range(0..n)));
        }
        p = p.add(&term);
    }
    p
}

fn orbit_options(sc: &Scenario, seed: u64, budget: usize, step_scale: f64, draws: usize) -> OrbitOptions {
    OrbitOptions {
        budget,
        step_scale,
        draws_per_field: draws,
        merge_radius: sc.tolerances.merge_radius,
        rank_tol: sc.tolerances.rank,
        rng_seed: seed,
        integrator: sc.tolerances.integrator(),
        ..OrbitOptions::default()
    }
}

fn words_value(family: &FieldFamily, words: &[&crate::orbit::FlowWord]) -> Value {
    let labels: Vec<&str> = family.fields().iter().map(|f| f.label()).collect();
    Value::Array(
        words
            .iter()
            .enumerate()
            .map(|(id, w)| {
                json!({
                    "word_id": id,
                    "steps": w.steps.iter().map(|(i, t)| json!({"field": labels[*i], "t": t})).collect::<Vec<_>>(),
                })
            })
            .collect(),
    )
}

fn flow_cmd(sc: &Scenario, a: &FlowArgs, want_table: bool) -> Result<Outcome, CliError> {
    let n = sc.space.ambient_dim();
    let field = sc.field(&a.field)?;
    let x = parse_point(&a.point, n)?;
    let curve = integrate(&sc.space, field, &x, a.horizon, &sc.tolerances.integrator()).map_err(rt)?;
    let mut result = value(&curve);
    let table = Table {
        header: coord_header(&["t"], n, &[]),
        rows: curve
            .samples
            .iter()
            .map(|(t, y)| {
                let mut row = vec![*t];
                row.extend(y);
                (row, None)
            })
            .collect(),
    };
    result["horizon"] = json!(a.horizon);
    if want_table {
        result["samples"] = json!(curve.samples.len());
    }
    let mut out = Outcome::new(Status::Info, result);
    out.table = Some(table);
    Ok(out)
}

fn classify_cmd(sc: &Scenario, seed: u64, a: &ClassifyArgs) -> Result<Outcome, CliError> {
    let n = sc.space.ambient_dim();
    let field = sc.field(&a.field)?;
    let seeds = match &a.seeds {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
            let seeds: Vec<Vec<f64>> = serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
            if let Some(bad) = seeds.iter().position(|s| s.len() != n) {
                return Err(usage(format!("{}: seed {bad} does not have {n} coordinates", path.display())));
            }
            seeds
        }
        None => sc.seeds.clone(),
    };
    let probe = ProbeOptions {
        seeds,
        samples_per_level: a.samples,
        rng_seed: seed,
        integrator: sc.tolerances.integrator(),
        ..ProbeOptions::default()
    };
    let verdict = classify_vector_field(&sc.space, field, &probe).map_err(rt)?;
    let status = match verdict.classification {
        Classification::VectorField => Status::Pass,
        Classification::NotVectorField => Status::Fail,
        Classification::Inconclusive => Status::Inconclusive,
    };
    let mut result = value(&verdict);
    result["field"] = json!(field.label());
    Ok(Outcome::new(status, result))
}

fn field_json(f: &TangentField, point: Option<&[f64]>) -> Result<Value, CliError> {
    let mut v = json!({
        "label": f.label(),
        "components": f.components().iter().map(|c| c.to_string()).collect::<Vec<_>>(),
    });
    if let Some(p) = point {
        v["value"] = json!(f.value_at(p).map_err(rt)?);
    }
    Ok(v)
}

fn bracket_cmd(sc: &Scenario, a: &BracketArgs) -> Result<Outcome, CliError> {
    let x = sc.field(&a.x)?;
    let y = sc.field(&a.y)?;
    let b = x.lie_bracket(y).map_err(rt)?.with_label(format!("[{},{}]", a.x, a.y));
    let p = a.point.as_deref().map(|s| parse_point(s, sc.space.ambient_dim())).transpose()?;
    let mut result = field_json(&b, p.as_deref())?;
    if let Some(p) = p {
        result["point"] = json!(p);
    }
    Ok(Outcome::new(Status::Info, result))
}

fn orbit_cmd(sc: &Scenario, seed: u64, a: &OrbitArgs, want_table: bool) -> Result<Outcome, CliError> {
    let n = sc.space.ambient_dim();
    let family = sc.family(a.family.as_deref())?;
    let x0 = start_point(sc, &a.point)?;
    let opts = orbit_options(sc, seed, a.budget, a.step_scale, a.draws);
    let orbit = sample_orbit(&family, &x0, &opts).map_err(rt)?;
    let mut result = json!({
        "family": sc.family_labels(a.family.as_deref())?,
        "seed_point": orbit.seed,
        "points": orbit.points.len(),
        "est_dimension": orbit.est_dimension,
        "diagnostics": value(&orbit.diagnostics),
    });
    if a.dimensions {
        let report = dimension_constancy_report(&family, &x0, &opts).map_err(rt)?;
        result["dimension_report"] = value(&report);
    }
    if let Some(t) = &a.target {
        let b = parse_point(t, n)?;
        let rel = orbit_relation(&family, &x0, &b, &opts).map_err(rt)?;
        result["relation"] = match rel {
            OrbitRelation::Connected { word, gap } => json!({
                "connected": true,
                "gap": gap,
                "word": words_value(&family, &[&word])[0]["steps"].clone(),
            }),
            OrbitRelation::Unknown => json!({"connected": false}),
        };
    }
    let words: Vec<&crate::orbit::FlowWord> = orbit.points.iter().map(|p| &p.word).collect();
    let words = words_value(&family, &words);
    if !want_table {
        result["cloud"] = Value::Array(
            orbit
                .points
                .iter()
                .zip(words.as_array().expect("array"))
                .map(|(p, w)| json!({"point": p.point, "steps": w["steps"]}))
                .collect(),
        );
    }
    let mut out = Outcome::new(Status::Info, result);
    out.table = Some(Table {
        header: coord_header(&[], n, &["word_id"]),
        rows: orbit.points.iter().enumerate().map(|(i, p)| (p.point.clone(), Some(i))).collect(),
    });
    out.words = Some(words);
    Ok(out)
}

fn chart_cmd(sc: &Scenario, a: &ChartArgs) -> Result<Outcome, CliError> {
    let family = sc.family(a.family.as_deref())?;
    let labels = sc.family_labels(a.family.as_deref())?;
    let basis: Vec<usize> = match &a.basis {
        None => (0..family.len()).collect(),
        Some(text) => text
            .split(',')
            .map(|s| {
                let s = s.trim();
                labels
                    .iter()
                    .position(|l| l == s)
                    .or_else(|| s.parse::<usize>().ok().filter(|i| *i < labels.len()))
                    .ok_or_else(|| usage(format!("`{s}` is not a field of the family")))
            })
            .collect::<Result<_, _>>()?,
    };
    let x = parse_point(&a.point, sc.space.ambient_dim())?;
    let t = &sc.tolerances;
    match chart_jacobian(&family, &basis, &x, t.fd_step, t.rank, &t.integrator()) {
        Ok(chart) => {
            let pass = chart.rank == basis.len() && chart.fd_discrepancy <= t.fd_agreement;
            let mut result = value(&chart);
            result["basis_labels"] = json!(basis.iter().map(|i| labels[*i].clone()).collect::<Vec<_>>());
            Ok(Outcome::new(Status::from_pass(pass), result))
        }
        Err(OrbitError::DependentBasis { rank, m }) => Ok(Outcome::new(
            Status::Fail,
            json!({"error": "dependent basis", "rank": rank, "basis_size": m, "basepoint": x}),
        )),
        Err(e) => Err(rt(e)),
    }
}

fn parse_probe(text: &str, labels: &[String], n: usize) -> Result<CompletenessProbe, CliError> {
    let parts: Vec<&str> = text.split(';').map(str::trim).collect();
    if parts.len() != 4 {
        return Err(usage(format!("probe `{text}` must be `point;t;X;Y`")));
    }
    let index = |s: &str| {
        labels
            .iter()
            .position(|l| l == s)
            .ok_or_else(|| usage(format!("`{s}` is not a field of the family")))
    };
    Ok(CompletenessProbe {
        point: parse_point(parts[0], n)?,
        t: parts[1].parse().map_err(|_| usage(format!("bad time in probe `{text}`")))?,
        flowed: index(parts[2])?,
        pushed: index(parts[3])?,
    })
}

fn complete_cmd(sc: &Scenario, seed: u64, a: &CompleteArgs) -> Result<Outcome, CliError> {
    let n = sc.space.ambient_dim();
    let family = sc.family(a.family.as_deref())?;
    let labels = sc.family_labels(a.family.as_deref())?;
    let probes = if a.probe.is_empty() {
        let seeds = match &a.point {
            Some(p) => vec![parse_point(p, n)?],
            None => sc.seeds.clone(),
        };
        if seeds.is_empty() {
            return Err(usage("no --point, --probe or scenario seeds"));
        }
        random_probes(&family, &seeds, a.per_pair, a.time_scale, seed)
    } else {
        a.probe
            .iter()
            .map(|p| parse_probe(p, &labels, n))
            .collect::<Result<_, _>>()?
    };
    let t = &sc.tolerances;
    let report = local_completeness_probe(&family, &probes, t.completeness, t.rank, &t.integrator()).map_err(rt)?;
    let mut result = value(&report);
    result["family"] = json!(labels);
    Ok(Outcome::new(Status::from_pass(report.pass), result))
}

fn strata_cmd(sc: &Scenario, seed: u64, a: &StrataArgs) -> Result<Outcome, CliError> {
    let ss = sc.strata.as_ref().ok_or_else(|| usage("scenario has no strata"))?;
    let t = &sc.tolerances;
    let sampler = StrataSampler {
        region: sc.region.clone(),
        per_stratum: a.per_stratum,
        boundary_prob: 0.5,
        rng_seed: seed,
    };
    match a.check {
        StrataCheck::Frontier => {
            let r = frontier_check(ss, &sampler, t.frontier).map_err(rt)?;
            Ok(Outcome::new(Status::from_pass(r.pass), value(&r)))
        }
        StrataCheck::Frame => {
            let r = frame_dimension_check(ss, &sampler, t.rank).map_err(rt)?;
            Ok(Outcome::new(Status::from_pass(r.pass), value(&r)))
        }
        StrataCheck::Tangency => {
            let field = sc.field(required(&a.field, "field")?)?;
            let r = strongly_stratified_check(ss, field, &sampler, t.drift_horizon, t.drift, &t.integrator()).map_err(rt)?;
            Ok(Outcome::new(Status::from_pass(r.pass), value(&r)))
        }
        StrataCheck::Orbits => {
            let family = sc.family(a.family.as_deref())?;
            let seeds = match &a.point {
                Some(p) => vec![parse_point(p, sc.space.ambient_dim())?],
                None => sc.seeds.clone(),
            };
            let opts = orbit_options(sc, seed, a.budget, a.step_scale, 2);
            match orbit_vs_strata(ss, &family, &seeds, &opts, &sampler, t.drift_horizon, t.drift, t.coverage_radius) {
                Ok(r) => Ok(Outcome::new(Status::from_pass(r.pass), value(&r))),
                Err(StrataError::NotStronglyStratified(f)) => Ok(Outcome::new(
                    Status::Fail,
                    json!({"error": "field is not strongly stratified", "field": f}),
                )),
                Err(e) => Err(rt(e)),
            }
        }
    }
}

/// The structure a Poisson command works with, and the space it lives on.
fn structure(sc: &Scenario, seed: u64, reduced: bool) -> Result<(PoissonStructure, SubcartesianSpace, Vec<SmoothExpr>), CliError> {
    if !reduced {
        if let Some(p) = &sc.poisson {
            return Ok((p.structure.clone(), sc.space.clone(), p.casimirs.clone()));
        }
    }
    let block = sc
        .reduction
        .as_ref()
        .ok_or_else(|| usage("scenario has no poisson or reduction block"))?;
    let mut setup = block.setup.clone();
    setup.rng_seed = seed;
    let red = reduce(&setup).map_err(rt)?;
    let space = setup.reduced_space(sc.tolerances.membership).map_err(rt)?;
    Ok((red.structure, space, block.casimirs.clone()))
}

fn poisson_cmd(sc: &Scenario, seed: u64, a: &PoissonArgs) -> Result<Outcome, CliError> {
    if a.reduce {
        return reduce_cmd(sc, seed);
    }
    let check = a.check.ok_or_else(|| usage("give --check or --reduce"))?;
    let (p, space, _) = structure(sc, seed, a.reduced)?;
    let n = p.dim();
    let point = a.point.as_deref().map(|s| parse_point(s, n)).transpose()?;
    let region = if a.reduced || sc.poisson.is_none() {
        Region::Box {
            lo: vec![-1.5; n],
            hi: vec![1.5; n],
        }
    } else {
        sc.region.clone()
    };
    let t = &sc.tolerances;
    match check {
        PoissonCheck::Bracket => {
            let f = parse_expr(required(&a.f, "f")?, n)?;
            let g = parse_expr(required(&a.g, "g")?, n)?;
            let b = p.bracket(&f, &g).map_err(rt)?;
            let mut result = json!({"f": f.to_string(), "g": g.to_string(), "bracket": b.to_string()});
            if let Some(x) = point {
                result["value"] = json!(b.eval(&x).map_err(rt)?);
                result["point"] = json!(x);
            }
            Ok(Outcome::new(Status::Info, result))
        }
        PoissonCheck::Hamiltonian => {
            let f = parse_expr(required(&a.f, "f")?, n)?;
            let xf = p.hamiltonian_field(&f).map_err(rt)?;
            let pts = sample_points(&region, n, a.samples, seed, point);
            let defect = p.hamiltonian_defect(&f, &pts).map_err(rt)?;
            let result = json!({"field": field_json(&xf, None)?, "defect": defect, "tol": t.jacobi, "points": pts.len()});
            Ok(Outcome::new(Status::from_pass(defect <= t.jacobi), result))
        }
        PoissonCheck::Jacobi => {
            let pts = sample_points(&region, n, a.samples, seed, point);
            let structural = p.structure_jacobi_residual(&pts).map_err(rt)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
            let mut worst: (f64, Vec<String>) = (0.0, Vec::new());
            for _ in 0..a.triples {
                let fs = [random_polynomial(n, &mut rng), random_polynomial(n, &mut rng), random_polynomial(n, &mut rng)];
                let r = p.jacobi_residual(&fs[0], &fs[1], &fs[2], &pts).map_err(rt)?;
                if r > worst.0 || worst.1.is_empty() {
                    worst = (r, fs.iter().map(|f| f.to_string()).collect());
                }
            }
            let max = worst.0.max(structural);
            let result = json!({
                "structure": if a.reduced || sc.poisson.is_none() { "reduced" } else { "poisson" },
                "structural_residual": structural,
                "triples": a.triples,
                "max_triple_residual": worst.0,
                "worst_triple": worst.1,
                "points": pts.len(),
                "tol": t.jacobi,
            });
            Ok(Outcome::new(Status::from_pass(max <= t.jacobi), result))
        }
        PoissonCheck::Invariance => {
            let h = parse_expr(required(&a.h, "h")?, n)?;
            let f = parse_expr(required(&a.f, "f")?, n)?;
            let g = parse_expr(required(&a.g, "g")?, n)?;
            let x = point
                .or_else(|| sc.seeds.first().cloned().filter(|s| s.len() == n))
                .ok_or_else(|| usage("missing --point"))?;
            let times: Vec<f64> = a
                .t
                .split(',')
                .map(|s| s.trim().parse().map_err(|_| usage(format!("bad time `{s}`"))))
                .collect::<Result<_, _>>()?;
            let mut runs = Vec::new();
            let mut pass = true;
            for time in times {
                let r = invariance_residual(&p, &h, &f, &g, time, &x, &space, &t.integrator()).map_err(rt)?;
                pass &= r.residual <= t.invariance;
                let mut v = value(&r);
                v["t"] = json!(time);
                runs.push(v);
            }
            let result = json!({"h": h.to_string(), "f": f.to_string(), "g": g.to_string(), "point": x, "runs": runs, "tol": t.invariance});
            Ok(Outcome::new(Status::from_pass(pass), result))
        }
    }
}

fn reduce_cmd(sc: &Scenario, seed: u64) -> Result<Outcome, CliError> {
    let block = sc.reduction.as_ref().ok_or_else(|| usage("scenario has no reduction block"))?;
    let mut setup = block.setup.clone();
    setup.rng_seed = seed;
    match reduce(&setup) {
        Ok(red) => {
            let bivector: Vec<Vec<String>> = red
                .structure
                .bivector()
                .iter()
                .map(|row| row.iter().map(|e| e.to_string()).collect())
                .collect();
            let result = json!({
                "invariants": setup.invariants.iter().map(|s| s.to_string()).collect::<Vec<_>>(),
                "table": value(&red.table),
                "bivector": bivector,
                "certification_residual": red.certification_residual,
                "certification_points": red.certification_points,
            });
            Ok(Outcome::new(Status::Pass, result))
        }
        Err(PoissonError::NotClosed { a, b, degree, residual }) => Ok(Outcome::new(
            Status::Fail,
            json!({"error": "bracket not closed", "a": a, "b": b, "degree": degree, "residual": residual}),
        )),
        Err(PoissonError::Certification { a, b, residual }) => Ok(Outcome::new(
            Status::Fail,
            json!({"error": "certification failed", "a": a, "b": b, "residual": residual}),
        )),
        Err(e) => Err(rt(e)),
    }
}

fn leaf_cmd(sc: &Scenario, seed: u64, a: &LeafArgs, want_table: bool) -> Result<Outcome, CliError> {
    let (p, space, casimirs) = structure(sc, seed, a.reduced)?;
    let n = p.dim();
    let gens: Vec<SmoothExpr> = a
        .generators
        .split(',')
        .map(|s| parse_expr(s.trim(), n))
        .collect::<Result<_, _>>()?;
    let x0 = match &a.point {
        Some(s) => parse_point(s, n)?,
        None => sc
            .seeds
            .first()
            .cloned()
            .filter(|s| s.len() == n)
            .ok_or_else(|| usage("missing --point"))?,
    };
    let opts = orbit_options(sc, seed, a.budget, a.step_scale, 2);
    let leaf = leaf_sample(&space, &p, &gens, &casimirs, &x0, &opts).map_err(rt)?;
    let tol = sc.tolerances.casimir;
    let pass = leaf.casimir_drift.iter().all(|(_, d)| *d <= tol) && leaf.relation_residual <= tol;
    let mut result = json!({
        "generators": gens.iter().map(|g| g.to_string()).collect::<Vec<_>>(),
        "seed_point": x0,
        "points": leaf.orbit.points.len(),
        "est_dimension": leaf.orbit.est_dimension,
        "diagnostics": value(&leaf.orbit.diagnostics),
        "casimir_drift": value(&leaf.casimir_drift),
        "relation_residual": leaf.relation_residual,
        "tol": tol,
    });
    if !want_table {
        result["cloud"] = json!(leaf.orbit.points.iter().map(|p| p.point.clone()).collect::<Vec<_>>());
    }
    let mut out = Outcome::new(Status::from_pass(pass), result);
    out.table = Some(Table {
        header: coord_header(&[], n, &["word_id"]),
        rows: leaf.orbit.points.iter().enumerate().map(|(i, p)| (p.point.clone(), Some(i))).collect(),
    });
    Ok(out)
}

fn acs_cmd(sc: &Scenario, seed: u64, a: &AcsArgs) -> Result<Outcome, CliError> {
    let block = sc.acs.as_ref().ok_or_else(|| usage("scenario has no acs block"))?;
    let j = &block.structure;
    let n = j.dim();
    let fields: Vec<TangentField> = block
        .family
        .iter()
        .map(|l| sc.field(l).cloned())
        .collect::<Result<_, _>>()?;
    let point = a.point.as_deref().map(|s| parse_point(s, n)).transpose()?;
    let pts = sample_points(&sc.region, n, a.samples, seed, point);
    let tol = sc.tolerances.acs;
    let pick = |opt: &Option<String>, default: usize| -> Result<TangentField, CliError> {
        match opt {
            Some(l) => Ok(sc.field(l)?.clone()),
            None => fields
                .get(default)
                .cloned()
                .ok_or_else(|| usage("the acs family needs two fields")),
        }
    };
    let err = |e: crate::almostcomplex::AcsError| rt(e);
    match a.check {
        AcsCheck::Square => {
            let r = j.square_residual(&pts).map_err(err)?;
            Ok(Outcome::new(Status::from_pass(r <= tol), json!({"square_residual": r, "points": pts.len(), "tol": tol})))
        }
        AcsCheck::Torsion => {
            let (x, y) = (pick(&a.x, 0)?, pick(&a.y, 1)?);
            let nt = j.torsion(&x, &y).map_err(err)?;
            let mut worst = (0.0f64, pts[0].clone());
            for p in &pts {
                let v = crate::space::norm(&nt.value_at(p).map_err(rt)?);
                if v > worst.0 {
                    worst = (v, p.clone());
                }
            }
            let mut result = json!({
                "torsion": field_json(&nt, None)?,
                "max_norm": worst.0,
                "points": pts.len(),
                "tol": tol,
            });
            if worst.0 > tol {
                result["witness"] = json!({"point": worst.1, "value": nt.value_at(&worst.1).map_err(rt)?});
            }
            if pts.len() == 1 {
                result["value"] = json!(nt.value_at(&pts[0]).map_err(rt)?);
            }
            Ok(Outcome::new(Status::from_pass(worst.0 <= tol), result))
        }
        AcsCheck::Tensor => {
            let f = parse_expr(a.f.as_deref().unwrap_or("x1"), n)?;
            let h = parse_expr(a.h.as_deref().unwrap_or(&format!("x{n}")), n)?;
            let mut worst: f64 = 0.0;
            for x in &fields {
                for y in &fields {
                    worst = worst.max(j.tensoriality_residual(x, y, &f, &h, &pts).map_err(err)?);
                }
            }
            let result = json!({"f": f.to_string(), "h": h.to_string(), "residual": worst, "points": pts.len(), "tol": tol});
            Ok(Outcome::new(Status::from_pass(worst <= tol), result))
        }
        AcsCheck::Eigen => {
            let (x, y) = (pick(&a.x, 0)?, pick(&a.y, 1)?);
            let r = j.eigenspace_closure_residual(&x, &y, &pts).map_err(err)?;
            let mut result = value(&r);
            result["points"] = json!(pts.len());
            result["tol"] = json!(tol);
            Ok(Outcome::new(Status::from_pass(r.discrepancy <= tol), result))
        }
        AcsCheck::Cr => {
            let f = parse_expr(required(&a.f, "f")?, n)?;
            let h = parse_expr(required(&a.h, "h")?, n)?;
            let r = j.cauchy_riemann_residual(&fields, &f, &h, &pts).map_err(err)?;
            let result = json!({"f": f.to_string(), "h": h.to_string(), "residual": r, "points": pts.len(), "tol": tol});
            Ok(Outcome::new(Status::from_pass(r <= tol), result))
        }
        AcsCheck::Kahler => {
            let form = block.form.as_ref().ok_or_else(|| usage("kahler check needs a form or a poisson block"))?;
            let r = crate::almostcomplex::kahler_check(j, form, &fields, &pts, tol).map_err(err)?;
            Ok(Outcome::new(Status::from_pass(r.kahler_at_samples), value(&r)))
        }
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Flow(_) => "flow",
        Command::Classify(_) => "classify",
        Command::Bracket(_) => "bracket",
        Command::Orbit(_) => "orbit",
        Command::Chart(_) => "chart",
        Command::CompleteProbe(_) => "complete-probe",
        Command::Strata(_) => "strata",
        Command::Poisson(_) => "poisson",
        Command::Reduce => "reduce",
        Command::Leaf(_) => "leaf",
        Command::Acs(_) => "acs",
    }
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

/// Runs the parsed command and returns its exit status.
pub fn execute(cli: &Cli) -> Result<i32, CliError> {
    let path = cli.scenario.as_ref().ok_or_else(|| usage("missing --scenario"))?;
    let overrides = match &cli.tol_overrides {
        Some(t) => parse_overrides(t)?,
        None => Vec::new(),
    };
    let sc = Scenario::load(path, &overrides)?;
    let want_table = cli.out.as_deref().is_some_and(is_csv);
    let seed = cli.seed;
    let outcome = match &cli.command {
        Command::Flow(a) => flow_cmd(&sc, a, want_table)?,
        Command::Classify(a) => classify_cmd(&sc, seed, a)?,
        Command::Bracket(a) => bracket_cmd(&sc, a)?,
        Command::Orbit(a) => orbit_cmd(&sc, seed, a, want_table)?,
        Command::Chart(a) => chart_cmd(&sc, a)?,
        Command::CompleteProbe(a) => complete_cmd(&sc, seed, a)?,
        Command::Strata(a) => strata_cmd(&sc, seed, a)?,
        Command::Poisson(a) => poisson_cmd(&sc, seed, a)?,
        Command::Reduce => reduce_cmd(&sc, seed)?,
        Command::Leaf(a) => leaf_cmd(&sc, seed, a, want_table)?,
        Command::Acs(a) => acs_cmd(&sc, seed, a)?,
    };
    let result = outcome.result;
    let report = json!({
        "command": command_name(&cli.command),
        "scenario": {"name": sc.name, "sha256": sc.sha256},
        "seed": seed,
        "tolerances": value(&sc.tolerances),
        "status": outcome.status,
        "result": result,
    });
    let text = to_json(&report);
    match &cli.out {
        None => print!("{text}"),
        Some(out) if want_table => {
            if let Some(table) = outcome.table {
                write(out, &csv(&table.header, table.rows))?;
            }
            write(&out.with_extension("json"), &text)?;
            if let Some(words) = outcome.words {
                write(&out.with_extension("words.json"), &to_json(&words))?;
            }
        }
        Some(out) => write(out, &text)?,
    }
    Ok(outcome.status.exit_code())
}

/// Entry point used by the binary: parses arguments, sizes the worker pool
/// from `SUBCART_THREADS` and maps errors to exit status 2.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if let Some(n) = std::env::var("SUBCART_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}
