//! Scenario files: a space, named fields and everything the commands run on.
//!
//! Loading validates the whole file up front. Errors carry the JSON path of
//! the offending entry, e.g. `fields[2].components[1]`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::almostcomplex::{AlmostComplexStructure, Form};
use crate::expr::{parse, SmoothExpr};
use crate::field::{FieldSpec, TangentField};
use crate::ode::IntegratorOptions;
use crate::orbit::FieldFamily;
use crate::poisson::{PoissonStructure, ReductionSetup};
use crate::space::{Region, Relation, SubcartesianSpace, DEFAULT_MEMBERSHIP_TOL};
use crate::strata::{extend_stratum_field, StratifiedSpace, Stratum};

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
    #[error("unknown tolerance `{0}`")]
    UnknownTolerance(String),
    #[error("bad tolerance override `{0}`, expected key=value")]
    BadOverride(String),
}

fn invalid(path: impl Into<String>, message: impl ToString) -> ScenarioError {
    ScenarioError::Invalid {
        path: path.into(),
        message: message.to_string(),
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConstraint {
    expr: String,
    rel: Relation,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpace {
    ambient_dim: usize,
    #[serde(default)]
    cells: Vec<Vec<RawConstraint>>,
    #[serde(default)]
    locally_closed: bool,
    #[serde(default)]
    tol: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawRegion {
    Box { lo: Vec<f64>, hi: Vec<f64> },
    Ball { center: Vec<f64>, radius: f64 },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawStratum {
    name: String,
    cells: Vec<Vec<RawConstraint>>,
    dim: usize,
    #[serde(default)]
    frame: Vec<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawExtended {
    label: String,
    stratum: String,
    field: String,
    center: Vec<f64>,
    r_inner: f64,
    r_outer: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPoisson {
    bivector: Vec<Vec<String>>,
    #[serde(default)]
    casimirs: Vec<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawReduction {
    ambient_dim: usize,
    #[serde(default)]
    bivector: Option<Vec<Vec<String>>>,
    invariants: Vec<String>,
    degree: usize,
    #[serde(default)]
    relations: Vec<RawConstraint>,
    #[serde(default)]
    casimirs: Vec<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAcs {
    matrix: Vec<Vec<String>>,
    #[serde(default)]
    form: Option<Vec<Vec<String>>>,
    #[serde(default)]
    family: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    #[serde(default)]
    name: String,
    #[serde(default)]
    description: String,
    space: RawSpace,
    #[serde(default)]
    fields: Vec<FieldSpec>,
    #[serde(default)]
    families: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    default_family: Option<String>,
    #[serde(default)]
    seeds: Vec<Vec<f64>>,
    #[serde(default)]
    region: Option<RawRegion>,
    #[serde(default)]
    strata: Option<Vec<RawStratum>>,
    #[serde(default)]
    locally_trivial: bool,
    #[serde(default)]
    extended_fields: Vec<RawExtended>,
    #[serde(default)]
    poisson: Option<RawPoisson>,
    #[serde(default)]
    reduction: Option<RawReduction>,
    #[serde(default)]
    acs: Option<RawAcs>,
    #[serde(default)]
    tolerances: BTreeMap<String, f64>,
}

/// Every numeric knob a command may use. Reports embed the whole set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Tolerances {
    pub membership: f64,
    pub rtol: f64,
    pub atol: f64,
    pub max_step: f64,
    pub exit_tol: f64,
    pub rank: f64,
    pub merge_radius: f64,
    pub frontier: f64,
    pub completeness: f64,
    pub drift: f64,
    pub tangency: f64,
    pub drift_horizon: f64,
    pub coverage_radius: f64,
    pub fd_step: f64,
    pub fd_agreement: f64,
    pub jacobi: f64,
    pub invariance: f64,
    pub casimir: f64,
    pub acs: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        let i = IntegratorOptions::default();
        Tolerances {
            membership: DEFAULT_MEMBERSHIP_TOL,
            rtol: i.rtol,
            atol: i.atol,
            max_step: i.max_step,
            exit_tol: i.exit_tol,
            rank: crate::orbit::DEFAULT_RANK_TOL,
            merge_radius: crate::orbit::DEFAULT_MERGE_RADIUS,
            frontier: crate::strata::DEFAULT_FRONTIER_TOL,
            completeness: 1e-8,
            drift: 1e-6,
            tangency: 1e-8,
            drift_horizon: 0.1,
            coverage_radius: 0.1,
            fd_step: 1e-6,
            fd_agreement: 1e-5,
            jacobi: 1e-8,
            invariance: 1e-6,
            casimir: 1e-6,
            acs: 1e-10,
        }
    }
}

impl Tolerances {
    pub fn set(&mut self, key: &str, value: f64) -> Result<(), ScenarioError> {
        let slot = match key {
            "membership" => &mut self.membership,
            "rtol" => &mut self.rtol,
            "atol" => &mut self.atol,
            "max_step" => &mut self.max_step,
            "exit_tol" => &mut self.exit_tol,
            "rank" => &mut self.rank,
            "merge_radius" => &mut self.merge_radius,
            "frontier" => &mut self.frontier,
            "completeness" => &mut self.completeness,
            "drift" => &mut self.drift,
            "tangency" => &mut self.tangency,
            "drift_horizon" => &mut self.drift_horizon,
            "coverage_radius" => &mut self.coverage_radius,
            "fd_step" => &mut self.fd_step,
            "fd_agreement" => &mut self.fd_agreement,
            "jacobi" => &mut self.jacobi,
            "invariance" => &mut self.invariance,
            "casimir" => &mut self.casimir,
            "acs" => &mut self.acs,
            _ => return Err(ScenarioError::UnknownTolerance(key.to_string())),
        };
        *slot = value;
        Ok(())
    }

    pub fn integrator(&self) -> IntegratorOptions {
        IntegratorOptions {
            rtol: self.rtol,
            atol: self.atol,
            max_step: self.max_step,
            exit_tol: self.exit_tol,
            ..IntegratorOptions::default()
        }
    }
}

/// Parses `"rtol=1e-10,rank=1e-6"`.
pub fn parse_overrides(text: &str) -> Result<Vec<(String, f64)>, ScenarioError> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|kv| {
            let (k, v) = kv.split_once('=').ok_or_else(|| ScenarioError::BadOverride(kv.to_string()))?;
            let v: f64 = v.trim().parse().map_err(|_| ScenarioError::BadOverride(kv.to_string()))?;
            Ok((k.trim().to_string(), v))
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct PoissonBlock {
    pub structure: PoissonStructure,
    pub casimirs: Vec<SmoothExpr>,
}

#[derive(Debug, Clone)]
pub struct ReductionBlock {
    pub setup: ReductionSetup,
    pub casimirs: Vec<SmoothExpr>,
}

#[derive(Debug, Clone)]
pub struct AcsBlock {
    pub structure: AlmostComplexStructure,
    pub form: Option<Form>,
    pub family: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub description: String,
    /// Hex SHA-256 of the file contents.
    pub sha256: String,
    pub space: SubcartesianSpace,
    /// In declaration order; extended fields come last.
    pub fields: Vec<TangentField>,
    pub families: BTreeMap<String, Vec<String>>,
    /// Family used when a command names none; otherwise every field.
    pub default_family: Option<String>,
    pub seeds: Vec<Vec<f64>>,
    pub region: Region,
    pub strata: Option<StratifiedSpace>,
    pub poisson: Option<PoissonBlock>,
    pub reduction: Option<ReductionBlock>,
    pub acs: Option<AcsBlock>,
    pub tolerances: Tolerances,
}

fn constraints(
    raw: &[Vec<RawConstraint>],
    n: usize,
    path: &str,
) -> Result<Vec<Vec<(SmoothExpr, Relation)>>, ScenarioError> {
    raw.iter()
        .enumerate()
        .map(|(i, cell)| {
            cell.iter()
                .enumerate()
                .map(|(j, c)| {
                    let e = parse(&c.expr, n).map_err(|e| invalid(format!("{path}[{i}][{j}].expr"), e))?;
                    Ok((e, c.rel))
                })
                .collect()
        })
        .collect()
}

fn exprs(raw: &[String], n: usize, path: &str) -> Result<Vec<SmoothExpr>, ScenarioError> {
    raw.iter()
        .enumerate()
        .map(|(i, s)| parse(s, n).map_err(|e| invalid(format!("{path}[{i}]"), e)))
        .collect()
}

fn square(rows: &[Vec<String>], n: usize, path: &str) -> Result<(), ScenarioError> {
    if rows.len() != n {
        return Err(invalid(path, format!("expected {n} rows, got {}", rows.len())));
    }
    for (i, r) in rows.iter().enumerate() {
        if r.len() != n {
            return Err(invalid(format!("{path}[{i}]"), format!("expected {n} entries, got {}", r.len())));
        }
        for (j, s) in r.iter().enumerate() {
            parse(s, n).map_err(|e| invalid(format!("{path}[{i}][{j}]"), e))?;
        }
    }
    Ok(())
}

impl Scenario {
    pub fn load(path: &Path, overrides: &[(String, f64)]) -> Result<Self, ScenarioError> {
        let bytes = std::fs::read(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_bytes(&bytes, overrides)
    }

    pub fn from_bytes(bytes: &[u8], overrides: &[(String, f64)]) -> Result<Self, ScenarioError> {
        let sha256 = hex::encode(Sha256::digest(bytes));
        let de = &mut serde_json::Deserializer::from_slice(bytes);
        let raw: RawScenario = serde_path_to_error::deserialize(de).map_err(|e| {
            let p = e.path().to_string();
            invalid(if p == "." { "$".to_string() } else { p }, e.into_inner())
        })?;
        Self::build(raw, sha256, overrides)
    }

    fn build(raw: RawScenario, sha256: String, overrides: &[(String, f64)]) -> Result<Self, ScenarioError> {
        let n = raw.space.ambient_dim;
        if n == 0 {
            return Err(invalid("space.ambient_dim", "must be positive"));
        }
        let mut tolerances = Tolerances::default();
        if let Some(t) = raw.space.tol {
            tolerances.membership = t;
        }
        for (k, v) in &raw.tolerances {
            tolerances
                .set(k, *v)
                .map_err(|e| invalid(format!("tolerances.{k}"), e))?;
        }
        for (k, v) in overrides {
            tolerances.set(k, *v)?;
        }

        let cells = constraints(&raw.space.cells, n, "space.cells")?;
        let space = SubcartesianSpace::new(n, cells, tolerances.membership, raw.space.locally_closed)
            .map_err(|e| invalid("space.cells", e))?;

        let mut fields: Vec<TangentField> = Vec::new();
        for (i, spec) in raw.fields.iter().enumerate() {
            let path = format!("fields[{i}]");
            if spec.components.len() != n {
                return Err(invalid(
                    format!("{path}.components"),
                    format!("expected {n} components, got {}", spec.components.len()),
                ));
            }
            let comps = exprs(&spec.components, n, &format!("{path}.components"))?;
            if fields.iter().any(|f| f.label() == spec.label) {
                return Err(invalid(format!("{path}.label"), format!("duplicate field `{}`", spec.label)));
            }
            fields.push(TangentField::new(spec.label.clone(), comps).map_err(|e| invalid(&path, e))?);
        }

        for (i, s) in raw.seeds.iter().enumerate() {
            if s.len() != n {
                return Err(invalid(format!("seeds[{i}]"), format!("expected {n} coordinates, got {}", s.len())));
            }
        }

        let region = match raw.region {
            None => Region::Box {
                lo: vec![-2.0; n],
                hi: vec![2.0; n],
            },
            Some(RawRegion::Box { lo, hi }) => {
                if lo.len() != n || hi.len() != n {
                    return Err(invalid("region", format!("lo and hi need {n} coordinates")));
                }
                Region::Box { lo, hi }
            }
            Some(RawRegion::Ball { center, radius }) => {
                if center.len() != n {
                    return Err(invalid("region.center", format!("expected {n} coordinates")));
                }
                Region::Ball { center, radius }
            }
        };

        let strata = match &raw.strata {
            None => None,
            Some(list) => {
                let mut out = Vec::new();
                for (i, s) in list.iter().enumerate() {
                    let path = format!("strata[{i}]");
                    let cells = constraints(&s.cells, n, &format!("{path}.cells"))?;
                    let sp = SubcartesianSpace::new(n, cells, tolerances.membership, false)
                        .map_err(|e| invalid(format!("{path}.cells"), e))?;
                    let mut frame = Vec::new();
                    for (k, label) in s.frame.iter().enumerate() {
                        let f = fields
                            .iter()
                            .find(|f| f.label() == label)
                            .ok_or_else(|| invalid(format!("{path}.frame[{k}]"), format!("unknown field `{label}`")))?;
                        frame.push(f.clone());
                    }
                    if out.iter().any(|o: &Stratum| o.name == s.name) {
                        return Err(invalid(format!("{path}.name"), format!("duplicate stratum `{}`", s.name)));
                    }
                    out.push(Stratum {
                        name: s.name.clone(),
                        space: sp,
                        dim: s.dim,
                        frame,
                    });
                }
                Some(StratifiedSpace {
                    total: space.clone(),
                    strata: out,
                    locally_trivial: raw.locally_trivial,
                })
            }
        };

        for (i, x) in raw.extended_fields.iter().enumerate() {
            let path = format!("extended_fields[{i}]");
            let ss = strata
                .as_ref()
                .ok_or_else(|| invalid(&path, "extended fields need strata"))?;
            let base = fields
                .iter()
                .find(|f| f.label() == x.field)
                .ok_or_else(|| invalid(format!("{path}.field"), format!("unknown field `{}`", x.field)))?;
            if x.center.len() != n {
                return Err(invalid(format!("{path}.center"), format!("expected {n} coordinates")));
            }
            if fields.iter().any(|f| f.label() == x.label) {
                return Err(invalid(format!("{path}.label"), format!("duplicate field `{}`", x.label)));
            }
            let ext = extend_stratum_field(ss, &x.stratum, base, &x.center, x.r_inner, x.r_outer, tolerances.tangency, 0)
                .map_err(|e| invalid(&path, e))?;
            fields.push(ext.with_label(x.label.clone()));
        }

        for (name, labels) in &raw.families {
            for (k, label) in labels.iter().enumerate() {
                if !fields.iter().any(|f| f.label() == label) {
                    return Err(invalid(format!("families.{name}[{k}]"), format!("unknown field `{label}`")));
                }
            }
        }

        if let Some(d) = &raw.default_family {
            if !raw.families.contains_key(d) {
                return Err(invalid("default_family", format!("unknown family `{d}`")));
            }
        }

        let poisson = match &raw.poisson {
            None => None,
            Some(p) => {
                square(&p.bivector, n, "poisson.bivector")?;
                let structure = PoissonStructure::parse("poisson", &p.bivector).map_err(|e| invalid("poisson.bivector", e))?;
                let casimirs = exprs(&p.casimirs, n, "poisson.casimirs")?;
                Some(PoissonBlock { structure, casimirs })
            }
        };

        let reduction = match &raw.reduction {
            None => None,
            Some(r) => {
                let d = r.ambient_dim;
                let ambient = match &r.bivector {
                    Some(rows) => {
                        square(rows, d, "reduction.bivector")?;
                        PoissonStructure::parse("ambient", rows).map_err(|e| invalid("reduction.bivector", e))?
                    }
                    None if d % 2 == 0 && d > 0 => PoissonStructure::canonical(d / 2),
                    None => return Err(invalid("reduction.ambient_dim", "needs a bivector when odd")),
                };
                let invariants = exprs(&r.invariants, d, "reduction.invariants")?;
                let m = invariants.len();
                if m == 0 {
                    return Err(invalid("reduction.invariants", "empty"));
                }
                let mut relations = Vec::new();
                for (i, c) in r.relations.iter().enumerate() {
                    let e = parse(&c.expr, m).map_err(|e| invalid(format!("reduction.relations[{i}].expr"), e))?;
                    relations.push((e, c.rel));
                }
                let casimirs = exprs(&r.casimirs, m, "reduction.casimirs")?;
                Some(ReductionBlock {
                    setup: ReductionSetup {
                        ambient,
                        invariants,
                        relations,
                        degree: r.degree,
                        rng_seed: 0,
                    },
                    casimirs,
                })
            }
        };

        let acs = match &raw.acs {
            None => None,
            Some(a) => {
                square(&a.matrix, n, "acs.matrix")?;
                let structure = AlmostComplexStructure::parse(&a.matrix).map_err(|e| invalid("acs.matrix", e))?;
                let form = match &a.form {
                    Some(rows) => {
                        square(rows, n, "acs.form")?;
                        Some(Form::parse(rows).map_err(|e| invalid("acs.form", e))?)
                    }
                    None => poisson.as_ref().map(|p| Form::InverseOf(p.structure.clone())),
                };
                let family = match &a.family {
                    Some(name) => raw
                        .families
                        .get(name)
                        .cloned()
                        .ok_or_else(|| invalid("acs.family", format!("unknown family `{name}`")))?,
                    None => fields.iter().map(|f| f.label().to_string()).collect(),
                };
                Some(AcsBlock { structure, form, family })
            }
        };

        Ok(Scenario {
            name: raw.name,
            description: raw.description,
            sha256,
            space,
            fields,
            families: raw.families,
            default_family: raw.default_family,
            seeds: raw.seeds,
            region,
            strata,
            poisson,
            reduction,
            acs,
            tolerances,
        })
    }

    pub fn field(&self, label: &str) -> Result<&TangentField, ScenarioError> {
        self.fields
            .iter()
            .find(|f| f.label() == label)
            .ok_or_else(|| invalid("fields", format!("unknown field `{label}`")))
    }

    /// Labels of a named family; without a name, the default family or every field.
    pub fn family_labels(&self, name: Option<&str>) -> Result<Vec<String>, ScenarioError> {
        match name.or(self.default_family.as_deref()) {
            Some(n) => self
                .families
                .get(n)
                .cloned()
                .ok_or_else(|| invalid("families", format!("unknown family `{n}`"))),
            None => Ok(self.fields.iter().map(|f| f.label().to_string()).collect()),
        }
    }

    pub fn family(&self, name: Option<&str>) -> Result<FieldFamily, ScenarioError> {
        let fields = self
            .family_labels(name)?
            .iter()
            .map(|l| self.field(l).cloned())
            .collect::<Result<Vec<_>, _>>()?;
        FieldFamily::new(self.space.clone(), fields).map_err(|e| invalid("families", e))
    }
}
