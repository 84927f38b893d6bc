//! Poisson brackets from coordinate bivectors, Hamiltonian fields, and
//! reduction by invariants.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::expr::{parse, ExprError, SmoothExpr};
use crate::field::{flow_jacobian, TangentField};
use crate::flow::FlowError;
use crate::ode::IntegratorOptions;
use crate::orbit::{sample_orbit, FieldFamily, OrbitError, OrbitOptions, OrbitSample};
use crate::space::SubcartesianSpace;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PoissonError {
    #[error("bivector must be square with {expected} rows, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("bivector is not antisymmetric at {point:?}: entry ({i},{j}) off by {defect:e}")]
    NotAntisymmetric {
        i: usize,
        j: usize,
        point: Vec<f64>,
        defect: f64,
    },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("bracket {{σ{a},σ{b}}} is not a polynomial of degree ≤ {degree} in the invariants (residual {residual:e})")]
    NotClosed {
        a: usize,
        b: usize,
        degree: usize,
        residual: f64,
    },
    #[error("certification of {{σ{a},σ{b}}} failed: residual {residual:e}")]
    Certification { a: usize, b: usize, residual: f64 },
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Orbit(#[from] OrbitError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoissonStructure {
    label: String,
    bivector: Vec<Vec<SmoothExpr>>,
}

fn random_points(n: usize, count: usize, half_width: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| (0..n).map(|_| rng.random_range(-half_width..=half_width)).collect())
        .collect()
}

impl PoissonStructure {
    /// Builds a structure and checks antisymmetry on a fixed set of points.
    pub fn new(label: impl Into<String>, bivector: Vec<Vec<SmoothExpr>>) -> Result<Self, PoissonError> {
        let n = bivector.len();
        for row in &bivector {
            if row.len() != n {
                return Err(PoissonError::Shape {
                    expected: n,
                    got: row.len(),
                });
            }
            for e in row {
                if let Some(v) = e.max_var().filter(|v| *v >= n) {
                    return Err(PoissonError::DimensionMismatch { expected: n, got: v + 1 });
                }
            }
        }
        for p in random_points(n, 16, 2.0, 0x5eed) {
            for i in 0..n {
                for j in i..n {
                    let (Ok(a), Ok(b)) = (bivector[i][j].eval(&p), bivector[j][i].eval(&p)) else {
                        continue;
                    };
                    let defect = (a + b).abs();
                    if defect > 1e-12 {
                        return Err(PoissonError::NotAntisymmetric { i, j, point: p, defect });
                    }
                }
            }
        }
        Ok(PoissonStructure {
            label: label.into(),
            bivector,
        })
    }

    pub fn parse(label: impl Into<String>, rows: &[Vec<String>]) -> Result<Self, PoissonError> {
        let n = rows.len();
        let bivector = rows
            .iter()
            .map(|r| r.iter().map(|e| parse(e, n)).collect::<Result<Vec<_>, _>>())
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(label, bivector)
    }

    /// `{qᵢ, pᵢ} = 1` on ℝ^{2k} with coordinates `(q₁..q_k, p₁..p_k)`.
    pub fn canonical(k: usize) -> Self {
        let n = 2 * k;
        let mut bivector = vec![vec![SmoothExpr::zero(); n]; n];
        for i in 0..k {
            bivector[i][k + i] = SmoothExpr::one();
            bivector[k + i][i] = SmoothExpr::constant(-1.0);
        }
        PoissonStructure {
            label: format!("canonical{n}"),
            bivector,
        }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn dim(&self) -> usize {
        self.bivector.len()
    }

    pub fn bivector(&self) -> &[Vec<SmoothExpr>] {
        &self.bivector
    }

    pub fn is_constant(&self) -> bool {
        self.bivector.iter().flatten().all(|e| e.as_const().is_some())
    }

    pub fn matrix_at(&self, x: &[f64]) -> Result<Vec<Vec<f64>>, ExprError> {
        self.bivector
            .iter()
            .map(|row| row.iter().map(|e| e.eval(x)).collect())
            .collect()
    }

    fn check(&self, f: &SmoothExpr) -> Result<(), PoissonError> {
        match f.max_var() {
            Some(v) if v >= self.dim() => Err(PoissonError::DimensionMismatch {
                expected: self.dim(),
                got: v + 1,
            }),
            _ => Ok(()),
        }
    }

    /// `{f, g} = Σ Π^{ij} ∂ᵢf ∂ⱼg`.
    pub fn bracket(&self, f: &SmoothExpr, g: &SmoothExpr) -> Result<SmoothExpr, PoissonError> {
        self.check(f)?;
        self.check(g)?;
        let n = self.dim();
        let df = f.gradient(n);
        let dg = g.gradient(n);
        let mut acc = SmoothExpr::zero();
        for i in 0..n {
            if df[i].is_zero() {
                continue;
            }
            for j in 0..n {
                if self.bivector[i][j].is_zero() || dg[j].is_zero() {
                    continue;
                }
                acc = acc.add(&self.bivector[i][j].mul(&df[i]).mul(&dg[j]));
            }
        }
        Ok(acc)
    }

    /// `X_f` with `X_f · h = {f, h}`, i.e. `(X_f)ʲ = Σᵢ Π^{ij} ∂ᵢf`.
    pub fn hamiltonian_field(&self, f: &SmoothExpr) -> Result<TangentField, PoissonError> {
        self.check(f)?;
        let n = self.dim();
        let df = f.gradient(n);
        let components = (0..n)
            .map(|j| {
                (0..n).fold(SmoothExpr::zero(), |acc, i| {
                    if df[i].is_zero() || self.bivector[i][j].is_zero() {
                        acc
                    } else {
                        acc.add(&self.bivector[i][j].mul(&df[i]))
                    }
                })
            })
            .collect();
        Ok(TangentField::new(format!("X[{f}]"), components).expect("components use the structure's variables"))
    }

    /// Largest `|X_f · xⱼ − {f, xⱼ}|` over coordinates and points.
    pub fn hamiltonian_defect(&self, f: &SmoothExpr, points: &[Vec<f64>]) -> Result<f64, PoissonError> {
        let xf = self.hamiltonian_field(f)?;
        let mut worst: f64 = 0.0;
        for j in 0..self.dim() {
            let h = SmoothExpr::var(j);
            let lhs = xf.apply(&h).expect("same dimension");
            let rhs = self.bracket(f, &h)?;
            for p in points {
                worst = worst.max((lhs.eval(p)? - rhs.eval(p)?).abs());
            }
        }
        Ok(worst)
    }

    /// Largest cyclic sum `{f₁,{f₂,f₃}} + {f₂,{f₃,f₁}} + {f₃,{f₁,f₂}}` over points.
    pub fn jacobi_residual(&self, f1: &SmoothExpr, f2: &SmoothExpr, f3: &SmoothExpr, points: &[Vec<f64>]) -> Result<f64, PoissonError> {
        let cyc = self
            .bracket(f1, &self.bracket(f2, f3)?)?
            .add(&self.bracket(f2, &self.bracket(f3, f1)?)?)
            .add(&self.bracket(f3, &self.bracket(f1, f2)?)?);
        let mut worst: f64 = 0.0;
        for p in points {
            worst = worst.max(cyc.eval(p)?.abs());
        }
        Ok(worst)
    }

    /// Jacobi residual over all coordinate triples.
    pub fn structure_jacobi_residual(&self, points: &[Vec<f64>]) -> Result<f64, PoissonError> {
        let n = self.dim();
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                for k in j + 1..n {
                    worst = worst.max(self.jacobi_residual(&SmoothExpr::var(i), &SmoothExpr::var(j), &SmoothExpr::var(k), points)?);
                }
            }
        }
        Ok(worst)
    }

    fn numeric_bracket(&self, x: &[f64], a: &[f64], b: &[f64]) -> Result<f64, ExprError> {
        let pi = self.matrix_at(x)?;
        let mut acc = 0.0;
        for i in 0..a.len() {
            for j in 0..b.len() {
                acc += pi[i][j] * a[i] * b[j];
            }
        }
        Ok(acc)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvarianceResult {
    pub residual: f64,
    /// Change of the residual when the integrator tolerance is loosened 100×.
    pub error_bar: f64,
    pub image: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
fn invariance_once(
    p: &PoissonStructure,
    xh: &TangentField,
    f1: &SmoothExpr,
    f2: &SmoothExpr,
    t: f64,
    x: &[f64],
    space: &SubcartesianSpace,
    opts: &IntegratorOptions,
) -> Result<(f64, Vec<f64>), PoissonError> {
    let n = p.dim();
    let (y, dphi) = flow_jacobian(xh, t, x, space, opts)?;
    let g1 = f1.eval_jet(&y, 1)?.gradient;
    let g2 = f2.eval_jet(&y, 1)?.gradient;
    let pull = |g: &[f64]| -> Vec<f64> { (0..n).map(|i| (0..n).map(|k| dphi[k][i] * g[k]).sum()).collect() };
    let lhs = p.numeric_bracket(x, &pull(&g1), &pull(&g2))?;
    let rhs = p.numeric_bracket(&y, &g1, &g2)?;
    Ok(((lhs - rhs).abs(), y))
}

/// `|{f₁∘φₜ, f₂∘φₜ}(x) − {f₁,f₂}(φₜ(x))|` along the Hamiltonian flow of `h`,
/// with gradients of the compositions taken through the variational equation.
#[allow(clippy::too_many_arguments)]
pub fn invariance_residual(
    p: &PoissonStructure,
    h: &SmoothExpr,
    f1: &SmoothExpr,
    f2: &SmoothExpr,
    t: f64,
    x: &[f64],
    space: &SubcartesianSpace,
    opts: &IntegratorOptions,
) -> Result<InvarianceResult, PoissonError> {
    let xh = p.hamiltonian_field(h)?;
    if t == 0.0 {
        let (residual, image) = invariance_once(p, &xh, f1, f2, t, x, space, opts)?;
        return Ok(InvarianceResult {
            residual,
            error_bar: 0.0,
            image,
        });
    }
    let (residual, image) = invariance_once(p, &xh, f1, f2, t, x, space, opts)?;
    let loose = IntegratorOptions {
        rtol: opts.rtol * 100.0,
        atol: opts.atol * 100.0,
        ..*opts
    };
    let (coarse, _) = invariance_once(p, &xh, f1, f2, t, x, space, &loose)?;
    Ok(InvarianceResult {
        residual,
        error_bar: (coarse - residual).abs(),
        image,
    })
}

#[derive(Debug, Clone)]
pub struct ReductionSetup {
    pub ambient: PoissonStructure,
    pub invariants: Vec<SmoothExpr>,
    /// Constraints in σ-coordinates describing the image of the invariants.
    pub relations: Vec<(SmoothExpr, crate::space::Relation)>,
    pub degree: usize,
    pub rng_seed: u64,
}

impl ReductionSetup {
    pub fn reduced_space(&self, tol: f64) -> Result<SubcartesianSpace, crate::space::SpaceError> {
        let m = self.invariants.len();
        let cells = if self.relations.is_empty() {
            vec![]
        } else {
            vec![self.relations.clone()]
        };
        SubcartesianSpace::new(m, cells, tol, true)
    }

    pub fn hilbert_map(&self, x: &[f64]) -> Result<Vec<f64>, ExprError> {
        self.invariants.iter().map(|s| s.eval(x)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BracketEntry {
    pub a: usize,
    pub b: usize,
    pub expr: String,
    pub degree: usize,
    pub fit_residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reduction {
    pub structure: PoissonStructure,
    pub table: Vec<BracketEntry>,
    /// Largest `|Λ^{ab}(σ(x)) − {σ_a,σ_b}(x)|` over the certification points.
    pub certification_residual: f64,
    pub certification_points: usize,
}

fn monomials(m: usize, degree: usize) -> Vec<Vec<u32>> {
    let mut out = vec![vec![0u32; m]];
    for d in 1..=degree {
        let mut cur = vec![0u32; m];
        fill(&mut out, &mut cur, 0, d as u32);
    }
    out
}

fn fill(out: &mut Vec<Vec<u32>>, cur: &mut Vec<u32>, k: usize, left: u32) {
    if k + 1 == cur.len() {
        cur[k] = left;
        out.push(cur.clone());
        return;
    }
    if cur.is_empty() {
        return;
    }
    for e in (0..=left).rev() {
        cur[k] = e;
        fill(out, cur, k + 1, left - e);
    }
    cur[k] = 0;
}

fn monomial_value(e: &[u32], y: &[f64]) -> f64 {
    e.iter().zip(y).map(|(k, v)| v.powi(*k as i32)).product()
}

fn snap(c: f64) -> f64 {
    let r = c.round();
    if (c - r).abs() < 1e-9 {
        return r;
    }
    let r = (c * 1e6).round() / 1e6;
    if (c - r).abs() < 1e-12 {
        r
    } else {
        c
    }
}

fn polynomial(coeffs: &[(Vec<u32>, f64)]) -> SmoothExpr {
    coeffs.iter().fold(SmoothExpr::zero(), |acc, (e, c)| {
        if *c == 0.0 {
            return acc;
        }
        let mono = e.iter().enumerate().fold(SmoothExpr::one(), |m, (i, k)| {
            if *k == 0 {
                m
            } else {
                m.mul(&SmoothExpr::var(i).powi(*k as i32))
            }
        });
        acc.add(&SmoothExpr::constant(*c).mul(&mono))
    })
}

fn sample_pairs(setup: &ReductionSetup, count: usize, seed: u64) -> Vec<(Vec<f64>, Vec<f64>)> {
    let n = setup.ambient.dim();
    random_points(n, count * 2, 1.5, seed)
        .into_iter()
        .filter_map(|x| setup.hilbert_map(&x).ok().map(|s| (x, s)))
        .take(count)
        .collect()
}

/// Expresses every `{σ_a, σ_b}` as a polynomial in the σ's by least squares,
/// trying degrees `0..=degree` in turn, then certifies the resulting
/// bivector on 200 fresh points.
pub fn reduce(setup: &ReductionSetup) -> Result<Reduction, PoissonError> {
    let m = setup.invariants.len();
    for s in &setup.invariants {
        setup.ambient.check(s)?;
    }
    let mut lambda = vec![vec![SmoothExpr::zero(); m]; m];
    let mut table = Vec::new();
    let mut upstairs = vec![vec![SmoothExpr::zero(); m]; m];
    for a in 0..m {
        for b in a + 1..m {
            let g = setup.ambient.bracket(&setup.invariants[a], &setup.invariants[b])?;
            upstairs[a][b] = g.clone();
            let mut found = None;
            let mut last_residual = f64::INFINITY;
            for d in 0..=setup.degree {
                let monos = monomials(m, d);
                let pts = sample_pairs(setup, (3 * monos.len()).max(60), setup.rng_seed ^ (d as u64) << 8);
                let mat = DMatrix::from_fn(pts.len(), monos.len(), |r, c| monomial_value(&monos[c], &pts[r].1));
                let mut rhs = DVector::zeros(pts.len());
                for (r, (x, _)) in pts.iter().enumerate() {
                    rhs[r] = g.eval(x)?;
                }
                let svd = mat.clone().svd(true, true);
                let cut = 1e-12 * svd.singular_values.max().max(1.0);
                let Ok(beta) = svd.solve(&rhs, cut) else {
                    continue;
                };
                let coeffs: Vec<(Vec<u32>, f64)> = monos.iter().cloned().zip(beta.iter().map(|c| snap(*c))).collect();
                let fitted = DVector::from_iterator(coeffs.len(), coeffs.iter().map(|c| c.1));
                let residual = (&mat * fitted - &rhs).amax();
                last_residual = residual;
                if residual <= 1e-10 {
                    found = Some((coeffs, d, residual));
                    break;
                }
            }
            let Some((coeffs, degree, fit_residual)) = found else {
                return Err(PoissonError::NotClosed {
                    a: a + 1,
                    b: b + 1,
                    degree: setup.degree,
                    residual: last_residual,
                });
            };
            let poly = polynomial(&coeffs);
            lambda[b][a] = poly.neg();
            lambda[a][b] = poly.clone();
            table.push(BracketEntry {
                a: a + 1,
                b: b + 1,
                expr: poly.to_string(),
                degree,
                fit_residual,
            });
        }
    }
    let structure = PoissonStructure {
        label: format!("reduced({})", setup.ambient.label()),
        bivector: lambda,
    };
    let pts = sample_pairs(setup, 200, setup.rng_seed.wrapping_add(0xce27));
    let mut certification_residual: f64 = 0.0;
    for a in 0..m {
        for b in a + 1..m {
            let mut worst: f64 = 0.0;
            for (x, s) in &pts {
                worst = worst.max((structure.bivector[a][b].eval(s)? - upstairs[a][b].eval(x)?).abs());
            }
            if worst > 1e-10 {
                return Err(PoissonError::Certification {
                    a: a + 1,
                    b: b + 1,
                    residual: worst,
                });
            }
            certification_residual = certification_residual.max(worst);
        }
    }
    Ok(Reduction {
        structure,
        table,
        certification_residual,
        certification_points: pts.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LeafSample {
    pub orbit: OrbitSample,
    /// `(Casimir, max |C(y) − C(x0)|)` over the cloud.
    pub casimir_drift: Vec<(String, f64)>,
    /// Largest constraint violation of the space over the cloud.
    pub relation_residual: f64,
}

/// Orbit of the Hamiltonian fields of `generators`, with Casimir drift.
pub fn leaf_sample(
    space: &SubcartesianSpace,
    p: &PoissonStructure,
    generators: &[SmoothExpr],
    casimirs: &[SmoothExpr],
    x0: &[f64],
    opts: &OrbitOptions,
) -> Result<LeafSample, PoissonError> {
    let fields = generators
        .iter()
        .map(|g| p.hamiltonian_field(g))
        .collect::<Result<Vec<_>, _>>()?;
    let family = FieldFamily::new(space.clone(), fields)?;
    let orbit = sample_orbit(&family, x0, opts)?;
    let mut casimir_drift = Vec::new();
    for c in casimirs {
        let c0 = c.eval(x0)?;
        let mut worst: f64 = 0.0;
        for pt in &orbit.points {
            worst = worst.max((c.eval(&pt.point)? - c0).abs());
        }
        casimir_drift.push((c.to_string(), worst));
    }
    let relation_residual = orbit
        .points
        .iter()
        .map(|pt| space.residual(&pt.point))
        .fold(0.0, f64::max);
    Ok(LeafSample {
        orbit,
        casimir_drift,
        relation_residual,
    })
}
