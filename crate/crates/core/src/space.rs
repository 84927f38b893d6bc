//! Differential subspaces of ℝⁿ cut out by smooth constraints.
//!
//! A space is a finite union of cells; each cell is a conjunction of
//! constraints `g ~ 0`. Strict inequalities are tested with a guard band of
//! width `tol` (the space's own membership tolerance) so that membership does
//! not flicker under rounding. A tolerance override only loosens equalities
//! and non-strict inequalities, which keeps membership monotone in it.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::expr::{ExprError, SmoothExpr};

pub const DEFAULT_MEMBERSHIP_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SpaceError {
    #[error("point has dimension {got}, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("constraint `{expr}` uses x{var} outside ambient dimension {dim}")]
    VariableOutOfRange { expr: String, var: usize, dim: usize },
    #[error("point {0:?} is not a member of the space")]
    NotMember(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Relation {
    #[serde(rename = "eq0")]
    EqZero,
    #[serde(rename = "geq0")]
    GeqZero,
    #[serde(rename = "gt0")]
    GtZero,
    #[serde(rename = "lt0")]
    LtZero,
    #[serde(rename = "leq0")]
    LeqZero,
}

impl Relation {
    pub fn is_strict(self) -> bool {
        matches!(self, Relation::GtZero | Relation::LtZero)
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Relation::EqZero => "= 0",
            Relation::GeqZero => ">= 0",
            Relation::GtZero => "> 0",
            Relation::LtZero => "< 0",
            Relation::LeqZero => "<= 0",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Constraint {
    pub expr: SmoothExpr,
    pub relation: Relation,
    gradient: Vec<SmoothExpr>,
}

impl Constraint {
    pub fn new(expr: SmoothExpr, relation: Relation, ambient_dim: usize) -> Self {
        let gradient = expr.gradient(ambient_dim);
        Constraint {
            expr,
            relation,
            gradient,
        }
    }

    /// Signed margin: non-negative exactly when the constraint holds without tolerance.
    pub fn margin(&self, x: &[f64]) -> Result<f64, ExprError> {
        let g = self.expr.eval(x)?;
        Ok(match self.relation {
            Relation::EqZero => -g.abs(),
            Relation::GeqZero | Relation::GtZero => g,
            Relation::LeqZero | Relation::LtZero => -g,
        })
    }

    /// Strict relations must clear the guard band `band`; the others may be
    /// violated by at most `tol`.
    pub fn holds(&self, x: &[f64], tol: f64, band: f64) -> bool {
        match self.margin(x) {
            Ok(m) if self.relation.is_strict() => m > band,
            Ok(m) => m >= -tol,
            Err(_) => false,
        }
    }

    /// Amount by which the constraint is violated (0 when it holds exactly).
    pub fn violation(&self, x: &[f64]) -> Result<f64, ExprError> {
        Ok((-self.margin(x)?).max(0.0))
    }

    pub fn describe(&self) -> String {
        format!("{} {}", self.expr, self.relation.symbol())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Membership {
    pub member: bool,
    /// Indices of the cells that hold at the point.
    pub cells: Vec<usize>,
    /// Domain-guard failures met while evaluating constraints.
    pub diagnostics: Vec<String>,
}

/// Outcome of leaving the space between an inside and an outside point.
#[derive(Debug, Clone, PartialEq)]
pub struct ExitInfo {
    /// Constraints that stop holding, described as text.
    pub violated: Vec<String>,
    /// True when every violated constraint is non-strict, so the limiting
    /// boundary point still belongs to the space.
    pub attained: bool,
}

#[derive(Debug, Clone)]
pub struct SubcartesianSpace {
    ambient_dim: usize,
    cells: Vec<Vec<Constraint>>,
    tol: f64,
    locally_closed: bool,
}

/// Region in which [`SubcartesianSpace::sample`] draws candidates.
#[derive(Debug, Clone)]
pub enum Region {
    Ball { center: Vec<f64>, radius: f64 },
    Box { lo: Vec<f64>, hi: Vec<f64> },
}

impl Region {
    /// Radius of a ball, or the largest half-width of a box.
    pub fn size(&self) -> f64 {
        match self {
            Region::Ball { radius, .. } => *radius,
            Region::Box { lo, hi } => lo
                .iter()
                .zip(hi)
                .map(|(l, h)| 0.5 * (h - l))
                .fold(0.0, f64::max),
        }
    }

    pub fn contains(&self, y: &[f64]) -> bool {
        match self {
            Region::Ball { center, radius } => distance(center, y) <= *radius,
            Region::Box { lo, hi } => y
                .iter()
                .zip(lo.iter().zip(hi))
                .all(|(v, (l, h))| *v >= *l && *v <= *h),
        }
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            Region::Ball { center, radius } => {
                let n = center.len();
                loop {
                    let u: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect();
                    if norm(&u) <= 1.0 {
                        return center.iter().zip(&u).map(|(c, v)| c + radius * v).collect();
                    }
                }
            }
            Region::Box { lo, hi } => lo
                .iter()
                .zip(hi)
                .map(|(l, h)| if h > l { rng.random_range(*l..=*h) } else { *l })
                .collect(),
        }
    }
}

impl SubcartesianSpace {
    /// Builds a space from cells of `(expr, relation)` pairs. An empty cell list
    /// is read as the whole of ℝⁿ.
    pub fn new(
        ambient_dim: usize,
        cells: Vec<Vec<(SmoothExpr, Relation)>>,
        tol: f64,
        locally_closed: bool,
    ) -> Result<Self, SpaceError> {
        let mut built = Vec::with_capacity(cells.len().max(1));
        for cell in cells {
            let mut c = Vec::with_capacity(cell.len());
            for (expr, relation) in cell {
                if let Some(var) = expr.max_var().filter(|v| *v >= ambient_dim) {
                    return Err(SpaceError::VariableOutOfRange {
                        expr: expr.to_string(),
                        var: var + 1,
                        dim: ambient_dim,
                    });
                }
                c.push(Constraint::new(expr, relation, ambient_dim));
            }
            built.push(c);
        }
        if built.is_empty() {
            built.push(Vec::new());
        }
        Ok(SubcartesianSpace {
            ambient_dim,
            cells: built,
            tol,
            locally_closed,
        })
    }

    pub fn euclidean(ambient_dim: usize) -> Self {
        SubcartesianSpace {
            ambient_dim,
            cells: vec![Vec::new()],
            tol: DEFAULT_MEMBERSHIP_TOL,
            locally_closed: true,
        }
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient_dim
    }

    pub fn cells(&self) -> &[Vec<Constraint>] {
        &self.cells
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn locally_closed(&self) -> bool {
        self.locally_closed
    }

    pub fn membership(&self, x: &[f64], tol: f64) -> Membership {
        let mut cells = Vec::new();
        let mut diagnostics = Vec::new();
        if x.len() != self.ambient_dim {
            diagnostics.push(format!(
                "point has dimension {}, expected {}",
                x.len(),
                self.ambient_dim
            ));
            return Membership {
                member: false,
                cells,
                diagnostics,
            };
        }
        for (k, cell) in self.cells.iter().enumerate() {
            let mut ok = true;
            for c in cell {
                match c.margin(x) {
                    Ok(m) => {
                        let holds = if c.relation.is_strict() {
                            m > self.tol
                        } else {
                            m >= -tol
                        };
                        if !holds {
                            ok = false;
                            break;
                        }
                    }
                    Err(e) => {
                        diagnostics.push(format!("cell {k}: {e}"));
                        ok = false;
                        break;
                    }
                }
            }
            if ok {
                cells.push(k);
            }
        }
        Membership {
            member: !cells.is_empty(),
            cells,
            diagnostics,
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.contains_with_tol(x, self.tol)
    }

    pub fn contains_with_tol(&self, x: &[f64], tol: f64) -> bool {
        self.membership(x, tol).member
    }

    /// Membership with strict inequalities relaxed to non-strict ones. The
    /// result contains the closure of the space.
    pub fn relaxed_contains(&self, x: &[f64]) -> bool {
        x.len() == self.ambient_dim
            && self
                .cells
                .iter()
                .any(|cell| cell.iter().all(|c| matches!(c.margin(x), Ok(m) if m >= -self.tol)))
    }

    /// Minimum signed constraint margin, maximised over the cells holding at `x`.
    /// Unconstrained cells contribute `+∞`.
    pub fn slack(&self, x: &[f64]) -> Result<f64, SpaceError> {
        let m = self.membership(x, self.tol);
        if !m.member {
            return Err(SpaceError::NotMember(x.to_vec()));
        }
        let mut best = f64::NEG_INFINITY;
        for &k in &m.cells {
            let mut s = f64::INFINITY;
            for c in &self.cells[k] {
                // Holding cells evaluate cleanly.
                s = s.min(c.margin(x).unwrap_or(f64::NEG_INFINITY));
            }
            best = best.max(s);
        }
        Ok(best)
    }

    /// Describes how a path leaves the space between `inside` and `outside`.
    pub fn exit_info(&self, inside: &[f64], outside: &[f64]) -> ExitInfo {
        let held = self.membership(inside, self.tol).cells;
        let mut violated = Vec::new();
        let mut attained = true;
        for k in held {
            for c in &self.cells[k] {
                if !c.holds(outside, self.tol, self.tol) {
                    if c.relation.is_strict() || c.margin(outside).is_err() {
                        attained = false;
                    }
                    violated.push(c.describe());
                }
            }
        }
        if violated.is_empty() {
            attained = false;
        }
        ExitInfo { violated, attained }
    }

    /// Largest violation over the constraints of the best cell; 0 for members
    /// without tolerance.
    pub fn residual(&self, x: &[f64]) -> f64 {
        self.cells
            .iter()
            .map(|cell| {
                cell.iter()
                    .map(|c| c.violation(x).unwrap_or(f64::INFINITY))
                    .fold(0.0, f64::max)
            })
            .fold(f64::INFINITY, f64::min)
    }

    fn check_dim(&self, x: &[f64]) -> Result<(), SpaceError> {
        if x.len() != self.ambient_dim {
            return Err(SpaceError::DimensionMismatch {
                expected: self.ambient_dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Gauss–Newton projection of `y` onto `{g = target}` for the given
    /// constraints, stopping once every residual is at most `goal`.
    fn project(&self, y: &mut [f64], active: &[(&Constraint, f64)], goal: f64) -> bool {
        if active.is_empty() {
            return true;
        }
        let n = self.ambient_dim;
        for _ in 0..100 {
            let mut r = DVector::zeros(active.len());
            let mut jac = DMatrix::zeros(active.len(), n);
            for (i, (c, target)) in active.iter().enumerate() {
                match c.expr.eval(y) {
                    Ok(v) => r[i] = v - target,
                    Err(_) => return false,
                }
                for j in 0..n {
                    match c.gradient[j].eval(y) {
                        Ok(v) => jac[(i, j)] = v,
                        Err(_) => return false,
                    }
                }
            }
            if r.amax() <= goal {
                return true;
            }
            let svd = jac.clone().svd(true, true);
            let Ok(step) = svd.solve(&r, 1e-14) else {
                return false;
            };
            if step.amax() == 0.0 {
                return r.amax() <= self.tol;
            }
            for j in 0..n {
                y[j] -= step[j];
            }
        }
        active
            .iter()
            .all(|(c, target)| {
                c.expr
                    .eval(y)
                    .map(|v| (v - target).abs() <= self.tol)
                    .unwrap_or(false)
            })
    }

    /// `x` pushed onto the equalities and touching non-strict inequalities of
    /// each cell it belongs to, to near machine precision. Points that satisfy
    /// an equality only within tolerance can sit far from the true zero set
    /// (near a singular point the gap scales like the square root of `tol`).
    pub fn polish(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let member = self.membership(x, self.tol);
        let scale = 1.0 + norm(x);
        member
            .cells
            .iter()
            .filter_map(|&k| {
                let active: Vec<(&Constraint, f64)> = self.cells[k]
                    .iter()
                    .filter(|c| match c.relation {
                        Relation::EqZero => true,
                        Relation::GeqZero | Relation::LeqZero => c.margin(x).is_ok_and(|m| m <= self.tol),
                        _ => false,
                    })
                    .map(|c| (c, 0.0))
                    .collect();
                let mut y = x.to_vec();
                self.project(&mut y, &active, 1e-15 * scale).then_some(y)
            })
            .collect()
    }

    /// Draws up to `count` members of the space inside `region`.
    ///
    /// Candidates are projected onto the equality constraints of a randomly
    /// chosen cell, and with probability `boundary_prob` also onto each of its
    /// non-strict inequalities, so lower-dimensional pieces and boundaries are
    /// reached. Strict inequalities are, with the same probability, pushed to
    /// a level set `g = ±δ` with `δ` log-uniform between `10·tol` and the
    /// region size, which puts samples right next to open boundaries.
    /// The attempt budget is `50 * count`.
    pub fn sample<R: Rng>(
        &self,
        region: &Region,
        count: usize,
        boundary_prob: f64,
        rng: &mut R,
    ) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(count);
        let mut attempts = 0;
        while out.len() < count && attempts < 50 * count.max(1) {
            attempts += 1;
            let mut y = region.draw(rng);
            let cell = &self.cells[rng.random_range(0..self.cells.len())];
            let mut active: Vec<(&Constraint, f64)> = Vec::new();
            for c in cell {
                match c.relation {
                    Relation::EqZero => active.push((c, 0.0)),
                    Relation::GeqZero | Relation::LeqZero => {
                        if rng.random::<f64>() < boundary_prob {
                            active.push((c, 0.0));
                        }
                    }
                    Relation::GtZero | Relation::LtZero => {
                        if rng.random::<f64>() < boundary_prob {
                            let (lo, hi) = ((10.0 * self.tol).ln(), region.size().max(1e-300).ln());
                            let delta = if hi > lo { rng.random_range(lo..hi).exp() } else { hi.exp() };
                            let sign = if c.relation == Relation::GtZero { 1.0 } else { -1.0 };
                            active.push((c, sign * delta));
                        }
                    }
                }
            }
            if !self.project(&mut y, &active, self.tol * 1e-3) {
                continue;
            }
            if region.contains(&y) && self.contains(&y) {
                out.push(y);
            }
        }
        out
    }

    pub fn validate_point(&self, x: &[f64]) -> Result<(), SpaceError> {
        self.check_dim(x)?;
        if !self.contains(x) {
            return Err(SpaceError::NotMember(x.to_vec()));
        }
        Ok(())
    }
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}
