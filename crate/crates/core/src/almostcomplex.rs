//! Almost complex structures acting on ambient vector fields, their torsion
//! and the Kähler compatibility conditions.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;

use crate::expr::{parse, ExprError, SmoothExpr};
use crate::field::{FieldError, TangentField};
use crate::linalg::{from_columns, RANK_FLOOR};
use crate::poisson::PoissonStructure;
use crate::space::norm;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AcsError {
    #[error("matrix must be square with {expected} rows, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("form is degenerate at {0:?}")]
    DegenerateForm(Vec<f64>),
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Field(#[from] FieldError),
}

/// `J(x)` acting by `(JX)ⁱ = Σⱼ Jᵢⱼ Xʲ`.
#[derive(Debug, Clone, PartialEq)]
pub struct AlmostComplexStructure {
    matrix: Vec<Vec<SmoothExpr>>,
}

fn square(rows: &[Vec<SmoothExpr>]) -> Result<usize, AcsError> {
    let n = rows.len();
    for r in rows {
        if r.len() != n {
            return Err(AcsError::Shape { expected: n, got: r.len() });
        }
        for e in r {
            if let Some(v) = e.max_var().filter(|v| *v >= n) {
                return Err(AcsError::DimensionMismatch { expected: n, got: v + 1 });
            }
        }
    }
    Ok(n)
}

fn parse_rows(rows: &[Vec<String>]) -> Result<Vec<Vec<SmoothExpr>>, AcsError> {
    let n = rows.len();
    Ok(rows
        .iter()
        .map(|r| r.iter().map(|e| parse(e, n)).collect::<Result<Vec<_>, _>>())
        .collect::<Result<Vec<_>, _>>()?)
}

fn eval_rows(rows: &[Vec<SmoothExpr>], x: &[f64]) -> Result<Vec<Vec<f64>>, ExprError> {
    rows.iter().map(|r| r.iter().map(|e| e.eval(x)).collect()).collect()
}

fn mat_vec(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    m.iter().map(|r| r.iter().zip(v).map(|(a, b)| a * b).sum()).collect()
}

fn pairing(m: &[Vec<f64>], u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(mat_vec(m, v)).map(|(a, b)| a * b).sum()
}

fn diff_norm(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

impl AlmostComplexStructure {
    pub fn new(matrix: Vec<Vec<SmoothExpr>>) -> Result<Self, AcsError> {
        square(&matrix)?;
        Ok(AlmostComplexStructure { matrix })
    }

    pub fn parse(rows: &[Vec<String>]) -> Result<Self, AcsError> {
        Self::new(parse_rows(rows)?)
    }

    /// `J₀` with `J₀∂₁ = ∂₂` on each coordinate pair `(x_{2k+1}, x_{2k+2})`.
    pub fn standard(k: usize) -> Self {
        let n = 2 * k;
        let mut matrix = vec![vec![SmoothExpr::zero(); n]; n];
        for i in 0..k {
            matrix[2 * i + 1][2 * i] = SmoothExpr::one();
            matrix[2 * i][2 * i + 1] = SmoothExpr::constant(-1.0);
        }
        AlmostComplexStructure { matrix }
    }

    pub fn dim(&self) -> usize {
        self.matrix.len()
    }

    pub fn matrix(&self) -> &[Vec<SmoothExpr>] {
        &self.matrix
    }

    pub fn matrix_at(&self, x: &[f64]) -> Result<Vec<Vec<f64>>, ExprError> {
        eval_rows(&self.matrix, x)
    }

    pub fn negated(&self) -> Self {
        AlmostComplexStructure {
            matrix: self.matrix.iter().map(|r| r.iter().map(SmoothExpr::neg).collect()).collect(),
        }
    }

    fn check(&self, x: &TangentField) -> Result<(), AcsError> {
        if x.dim() != self.dim() {
            return Err(AcsError::DimensionMismatch {
                expected: self.dim(),
                got: x.dim(),
            });
        }
        Ok(())
    }

    pub fn apply(&self, x: &TangentField) -> Result<TangentField, AcsError> {
        self.check(x)?;
        let components = self
            .matrix
            .iter()
            .map(|row| {
                row.iter().zip(x.components()).fold(SmoothExpr::zero(), |acc, (j, c)| {
                    if j.is_zero() || c.is_zero() {
                        acc
                    } else {
                        acc.add(&j.mul(c))
                    }
                })
            })
            .collect();
        Ok(TangentField::new(format!("J{}", x.label()), components)?)
    }

    /// Largest entry of `J(x)² + I` over the points.
    pub fn square_residual(&self, points: &[Vec<f64>]) -> Result<f64, AcsError> {
        let n = self.dim();
        let mut worst: f64 = 0.0;
        for p in points {
            let j = self.matrix_at(p)?;
            for a in 0..n {
                for b in 0..n {
                    let v: f64 = (0..n).map(|k| j[a][k] * j[k][b]).sum::<f64>() + if a == b { 1.0 } else { 0.0 };
                    worst = worst.max(v.abs());
                }
            }
        }
        Ok(worst)
    }

    /// `N(X,Y) = 2([JX,JY] − J[JX,Y] − J[X,JY] − [X,Y])`.
    pub fn torsion(&self, x: &TangentField, y: &TangentField) -> Result<TangentField, AcsError> {
        self.check(x)?;
        self.check(y)?;
        let jx = self.apply(x)?;
        let jy = self.apply(y)?;
        let a = jx.lie_bracket(&jy)?;
        let b = self.apply(&jx.lie_bracket(y)?)?;
        let c = self.apply(&x.lie_bracket(&jy)?)?;
        let d = x.lie_bracket(y)?;
        let two = SmoothExpr::constant(2.0);
        Ok(a.sub(&b)?.sub(&c)?.sub(&d)?.scale(&two).with_label(format!("N({},{})", x.label(), y.label())))
    }

    /// Largest `‖N(fX,hY) − f·h·N(X,Y)‖` over the points.
    pub fn tensoriality_residual(
        &self,
        x: &TangentField,
        y: &TangentField,
        f: &SmoothExpr,
        h: &SmoothExpr,
        points: &[Vec<f64>],
    ) -> Result<f64, AcsError> {
        let lhs = self.torsion(&x.scale(f), &y.scale(h))?;
        let rhs = self.torsion(x, y)?.scale(&f.mul(h));
        let mut worst: f64 = 0.0;
        for p in points {
            worst = worst.max(diff_norm(&lhs.value_at(p)?, &rhs.value_at(p)?));
        }
        Ok(worst)
    }

    /// Component of `[X − iJX, Y − iJY]` in the `−i` eigenspace, taken as the
    /// real part of its image under `(I + iJ)/2`.
    ///
    /// With `A = [X,Y] − [JX,JY]` and `B = −([JX,Y] + [X,JY])` the bracket is
    /// `A + iB` and the real part of the projection is `(A − JB)/2`.
    pub fn eigenspace_closure_residual(&self, x: &TangentField, y: &TangentField, points: &[Vec<f64>]) -> Result<EigenspaceReport, AcsError> {
        let jx = self.apply(x)?;
        let jy = self.apply(y)?;
        let a = x.lie_bracket(y)?.sub(&jx.lie_bracket(&jy)?)?;
        let b = jx.lie_bracket(y)?.add(&x.lie_bracket(&jy)?)?;
        let n = self.torsion(x, y)?;
        let mut residual: f64 = 0.0;
        let mut quarter: f64 = 0.0;
        let mut discrepancy: f64 = 0.0;
        for p in points {
            let j = self.matrix_at(p)?;
            let av = a.value_at(p)?;
            let jb = mat_vec(&j, &b.value_at(p)?);
            let re: Vec<f64> = av.iter().zip(&jb).map(|(u, v)| 0.5 * (u + v)).collect();
            let r = norm(&re);
            let q = norm(&n.value_at(p)?) / 4.0;
            residual = residual.max(r);
            quarter = quarter.max(q);
            discrepancy = discrepancy.max((r - q).abs());
        }
        Ok(EigenspaceReport {
            residual,
            torsion_quarter: quarter,
            discrepancy,
        })
    }

    /// Largest residual of `X·f − (JX)·h = 0` and `(JX)·f + X·h = 0`.
    pub fn cauchy_riemann_residual(&self, fields: &[TangentField], f: &SmoothExpr, h: &SmoothExpr, points: &[Vec<f64>]) -> Result<f64, AcsError> {
        let mut worst: f64 = 0.0;
        for x in fields {
            let jx = self.apply(x)?;
            let first = x.apply(f)?.sub(&jx.apply(h)?);
            let second = jx.apply(f)?.add(&x.apply(h)?);
            for p in points {
                worst = worst.max(first.eval(p)?.abs()).max(second.eval(p)?.abs());
            }
        }
        Ok(worst)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EigenspaceReport {
    pub residual: f64,
    /// Largest `‖N(X,Y)‖/4` over the same points.
    pub torsion_quarter: f64,
    /// Largest pointwise difference between the two.
    pub discrepancy: f64,
}

/// A 2-form `Ω(U,V) = Uᵀ Ω V`, given directly or as the pointwise inverse of
/// a Poisson bivector.
#[derive(Debug, Clone)]
pub enum Form {
    Matrix(Vec<Vec<SmoothExpr>>),
    InverseOf(PoissonStructure),
}

impl Form {
    pub fn parse(rows: &[Vec<String>]) -> Result<Self, AcsError> {
        let m = parse_rows(rows)?;
        square(&m)?;
        Ok(Form::Matrix(m))
    }

    pub fn dim(&self) -> usize {
        match self {
            Form::Matrix(m) => m.len(),
            Form::InverseOf(p) => p.dim(),
        }
    }

    pub fn matrix_at(&self, x: &[f64]) -> Result<Vec<Vec<f64>>, AcsError> {
        let raw = match self {
            Form::Matrix(m) => eval_rows(m, x)?,
            Form::InverseOf(p) => p.matrix_at(x)?,
        };
        let n = raw.len();
        let m = DMatrix::from_fn(n, n, |i, j| raw[i][j]);
        let smallest = m.clone().singular_values().min();
        if n == 0 || smallest <= RANK_FLOOR {
            return Err(AcsError::DegenerateForm(x.to_vec()));
        }
        let m = match self {
            Form::Matrix(_) => m,
            Form::InverseOf(_) => m.try_inverse().ok_or_else(|| AcsError::DegenerateForm(x.to_vec()))?,
        };
        Ok((0..n).map(|i| (0..n).map(|j| m[(i, j)]).collect()).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KahlerReport {
    /// Largest `|Ω(JX,JY) − Ω(X,Y)|` over field pairs and points.
    pub compatibility: f64,
    /// Largest `|g(X,Y) − g(Y,X)|` with `g(X,Y) = Ω(JX,Y)`.
    pub symmetry: f64,
    /// Smallest eigenvalue of the symmetric part of `g` on the span of the fields.
    pub min_eigenvalue: f64,
    pub positive: bool,
    pub torsion_max: f64,
    pub torsion_vanishes: bool,
    pub kahler_at_samples: bool,
}

pub fn kahler_check(
    j: &AlmostComplexStructure,
    form: &Form,
    fields: &[TangentField],
    points: &[Vec<f64>],
    tol: f64,
) -> Result<KahlerReport, AcsError> {
    let n = j.dim();
    if form.dim() != n {
        return Err(AcsError::DimensionMismatch { expected: n, got: form.dim() });
    }
    let mut torsions = Vec::new();
    for a in 0..fields.len() {
        for b in a + 1..fields.len() {
            torsions.push(j.torsion(&fields[a], &fields[b])?);
        }
    }
    let mut compatibility: f64 = 0.0;
    let mut symmetry: f64 = 0.0;
    let mut min_eigenvalue = f64::INFINITY;
    let mut torsion_max: f64 = 0.0;
    for p in points {
        let om = form.matrix_at(p)?;
        let jm = j.matrix_at(p)?;
        let vals: Vec<Vec<f64>> = fields.iter().map(|f| f.value_at(p)).collect::<Result<_, _>>()?;
        let jvals: Vec<Vec<f64>> = vals.iter().map(|v| mat_vec(&jm, v)).collect();
        for a in 0..vals.len() {
            for b in 0..vals.len() {
                compatibility = compatibility.max((pairing(&om, &jvals[a], &jvals[b]) - pairing(&om, &vals[a], &vals[b])).abs());
                symmetry = symmetry.max((pairing(&om, &jvals[a], &vals[b]) - pairing(&om, &jvals[b], &vals[a])).abs());
            }
        }
        if !vals.is_empty() {
            let svd = from_columns(n, &vals).svd(true, false);
            let u = svd.u.expect("left vectors requested");
            let top = svd.singular_values.max();
            let basis: Vec<Vec<f64>> = (0..svd.singular_values.len())
                .filter(|k| svd.singular_values[*k] > (1e-10 * top).max(RANK_FLOOR))
                .map(|k| u.column(k).iter().copied().collect())
                .collect();
            if !basis.is_empty() {
                let m = basis.len();
                let g = DMatrix::from_fn(m, m, |a, b| {
                    let ga = pairing(&om, &mat_vec(&jm, &basis[a]), &basis[b]);
                    let gb = pairing(&om, &mat_vec(&jm, &basis[b]), &basis[a]);
                    0.5 * (ga + gb)
                });
                min_eigenvalue = min_eigenvalue.min(SymmetricEigen::new(g).eigenvalues.min());
            }
        }
        for t in &torsions {
            torsion_max = torsion_max.max(norm(&t.value_at(p)?));
        }
    }
    let positive = min_eigenvalue > tol && min_eigenvalue.is_finite();
    let torsion_vanishes = torsion_max <= tol;
    Ok(KahlerReport {
        compatibility,
        symmetry,
        min_eigenvalue,
        positive,
        torsion_max,
        torsion_vanishes,
        kahler_at_samples: compatibility <= tol && symmetry <= tol && positive && torsion_vanishes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(n: usize, i: usize) -> TangentField {
        TangentField::coordinate(n, i)
    }

    #[test]
    fn standard_structure_squares_to_minus_one() {
        let j = AlmostComplexStructure::standard(2);
        assert_eq!(j.square_residual(&[vec![0.3, 1.0, -2.0, 0.5]]).unwrap(), 0.0);
        let j1 = j.apply(&d(4, 0)).unwrap();
        assert_eq!(j1.value_at(&[0.0; 4]).unwrap(), vec![0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn constant_structure_has_no_torsion() {
        let j = AlmostComplexStructure::standard(1);
        let n = j.torsion(&d(2, 0), &d(2, 1)).unwrap();
        assert!(n.is_zero());
    }

    #[test]
    fn cauchy_riemann_examples() {
        let j = AlmostComplexStructure::standard(1);
        let dx = [d(2, 0)];
        let pts = vec![vec![0.2, -0.7], vec![3.0, 1.0]];
        let x1 = parse("x1", 2).unwrap();
        assert_eq!(j.cauchy_riemann_residual(&dx, &x1, &parse("x2", 2).unwrap(), &pts).unwrap(), 0.0);
        assert_eq!(j.cauchy_riemann_residual(&dx, &x1, &parse("-x2", 2).unwrap(), &pts).unwrap(), 2.0);
        let z = SmoothExpr::zero();
        assert_eq!(j.cauchy_riemann_residual(&dx, &z, &z, &pts).unwrap(), 0.0);
    }

    #[test]
    fn degenerate_form_is_rejected() {
        let form = Form::parse(&[vec!["0".into(), "x1".into()], vec!["-x1".into(), "0".into()]]).unwrap();
        assert!(matches!(form.matrix_at(&[0.0, 1.0]), Err(AcsError::DegenerateForm(_))));
    }
}
