//! Derivations represented by ambient vector fields `X = Σ fᵢ ∂ᵢ`.
//!
//! A [`TangentField`] is not checked for tangency when it is built; whether
//! its flow preserves a space is a dynamic question answered in [`crate::flow`].

use serde::{Deserialize, Serialize};

use crate::expr::{parse, ExprError, SmoothExpr};
use crate::flow::FlowError;
use crate::ode::{self, End, IntegratorOptions, System};
use crate::space::SubcartesianSpace;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FieldError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("component {index} of `{label}` uses x{var} beyond dimension {dim}")]
    VariableOutOfRange {
        label: String,
        index: usize,
        var: usize,
        dim: usize,
    },
    #[error(transparent)]
    Expr(#[from] ExprError),
}

/// JSON form `{"label": "X", "components": ["-x2", "x1"]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub label: String,
    pub components: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TangentField {
    label: String,
    components: Vec<SmoothExpr>,
}

impl TangentField {
    pub fn new(label: impl Into<String>, components: Vec<SmoothExpr>) -> Result<Self, FieldError> {
        let label = label.into();
        let dim = components.len();
        for (index, c) in components.iter().enumerate() {
            if let Some(var) = c.max_var().filter(|v| *v >= dim) {
                return Err(FieldError::VariableOutOfRange {
                    label,
                    index,
                    var: var + 1,
                    dim,
                });
            }
        }
        Ok(TangentField { label, components })
    }

    pub fn parse(label: impl Into<String>, components: &[&str]) -> Result<Self, FieldError> {
        let n = components.len();
        let comps = components
            .iter()
            .map(|c| parse(c, n))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(label, comps)
    }

    pub fn from_spec(spec: &FieldSpec) -> Result<Self, FieldError> {
        let refs: Vec<&str> = spec.components.iter().map(String::as_str).collect();
        Self::parse(spec.label.clone(), &refs)
    }

    pub fn zero(label: impl Into<String>, dim: usize) -> Self {
        TangentField {
            label: label.into(),
            components: vec![SmoothExpr::zero(); dim],
        }
    }

    /// The coordinate field `∂_{index+1}`.
    pub fn coordinate(dim: usize, index: usize) -> Self {
        let mut components = vec![SmoothExpr::zero(); dim];
        components[index] = SmoothExpr::one();
        TangentField {
            label: format!("d{}", index + 1),
            components,
        }
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn components(&self) -> &[SmoothExpr] {
        &self.components
    }

    pub fn spec(&self) -> FieldSpec {
        FieldSpec {
            label: self.label.clone(),
            components: self.components.iter().map(|c| c.to_string()).collect(),
        }
    }

    pub fn value_at(&self, x: &[f64]) -> Result<Vec<f64>, ExprError> {
        self.components.iter().map(|c| c.eval(x)).collect()
    }

    pub fn is_zero(&self) -> bool {
        self.components.iter().all(SmoothExpr::is_zero)
    }

    fn check_dim(&self, other: usize) -> Result<(), FieldError> {
        if self.dim() != other {
            return Err(FieldError::DimensionMismatch {
                left: self.dim(),
                right: other,
            });
        }
        Ok(())
    }

    /// `X·f = Σᵢ Xⁱ ∂ᵢf`, symbolically.
    pub fn apply(&self, f: &SmoothExpr) -> Result<SmoothExpr, FieldError> {
        if let Some(var) = f.max_var() {
            self.check_dim(self.dim().max(var + 1))?;
        }
        Ok(self.apply_unchecked(f))
    }

    fn apply_unchecked(&self, f: &SmoothExpr) -> SmoothExpr {
        self.components
            .iter()
            .enumerate()
            .fold(SmoothExpr::zero(), |acc, (i, c)| acc.add(&c.mul(&f.diff(i))))
    }

    /// `[X, Y]ⁱ = X·Yⁱ − Y·Xⁱ`.
    pub fn lie_bracket(&self, other: &TangentField) -> Result<TangentField, FieldError> {
        self.check_dim(other.dim())?;
        let components = (0..self.dim())
            .map(|i| {
                self.apply_unchecked(&other.components[i])
                    .sub(&other.apply_unchecked(&self.components[i]))
            })
            .collect();
        Ok(TangentField {
            label: format!("[{},{}]", self.label, other.label),
            components,
        })
    }

    /// `f·X`.
    pub fn scale(&self, f: &SmoothExpr) -> TangentField {
        TangentField {
            label: format!("({})*{}", f, self.label),
            components: self.components.iter().map(|c| f.mul(c)).collect(),
        }
    }

    pub fn add(&self, other: &TangentField) -> Result<TangentField, FieldError> {
        self.check_dim(other.dim())?;
        Ok(TangentField {
            label: format!("{}+{}", self.label, other.label),
            components: self
                .components
                .iter()
                .zip(&other.components)
                .map(|(a, b)| a.add(b))
                .collect(),
        })
    }

    pub fn sub(&self, other: &TangentField) -> Result<TangentField, FieldError> {
        self.check_dim(other.dim())?;
        Ok(TangentField {
            label: format!("{}-{}", self.label, other.label),
            components: self
                .components
                .iter()
                .zip(&other.components)
                .map(|(a, b)| a.sub(b))
                .collect(),
        })
    }

    /// Symbolic Jacobian `∂Xⁱ/∂xʲ`, row-major.
    pub fn jacobian(&self) -> Vec<Vec<SmoothExpr>> {
        self.components
            .iter()
            .map(|c| (0..self.dim()).map(|j| c.diff(j)).collect())
            .collect()
    }
}

/// The ODE `x' = sign · X(x)`.
pub(crate) struct FieldFlow<'a> {
    pub field: &'a TangentField,
    pub sign: f64,
}

impl System for FieldFlow<'_> {
    fn dim(&self) -> usize {
        self.field.dim()
    }

    fn rhs(&self, y: &[f64], out: &mut [f64]) -> Result<(), ExprError> {
        for (o, c) in out.iter_mut().zip(self.field.components()) {
            *o = self.sign * c.eval(y)?;
        }
        Ok(())
    }
}

/// Flow together with `k` tangent vectors transported by `Dφ`.
struct Variational<'a> {
    field: &'a TangentField,
    jac: Vec<Vec<SmoothExpr>>,
    k: usize,
}

impl System for Variational<'_> {
    fn dim(&self) -> usize {
        self.field.dim() * (1 + self.k)
    }

    fn rhs(&self, y: &[f64], out: &mut [f64]) -> Result<(), ExprError> {
        let n = self.field.dim();
        let x = &y[..n];
        for (i, c) in self.field.components().iter().enumerate() {
            out[i] = c.eval(x)?;
        }
        let mut dx = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                dx[i * n + j] = if self.jac[i][j].is_zero() {
                    0.0
                } else {
                    self.jac[i][j].eval(x)?
                };
            }
        }
        for col in 0..self.k {
            let v = &y[n * (col + 1)..n * (col + 2)];
            for i in 0..n {
                let mut acc = 0.0;
                for j in 0..n {
                    acc += dx[i * n + j] * v[j];
                }
                out[n * (col + 1) + i] = acc;
            }
        }
        Ok(())
    }
}

/// Image point and transported vectors `Dφₜ(x)·vⱼ`.
pub fn transport(
    field: &TangentField,
    t: f64,
    x: &[f64],
    vectors: &[Vec<f64>],
    space: &SubcartesianSpace,
    opts: &IntegratorOptions,
) -> Result<(Vec<f64>, Vec<Vec<f64>>), FlowError> {
    let n = field.dim();
    if x.len() != n || space.ambient_dim() != n {
        return Err(FlowError::DimensionMismatch {
            expected: n,
            got: x.len(),
        });
    }
    if !space.contains(x) {
        return Err(FlowError::NotMember(x.to_vec()));
    }
    if t == 0.0 {
        return Ok((x.to_vec(), vectors.to_vec()));
    }
    let sys = Variational {
        field,
        jac: field.jacobian(),
        k: vectors.len(),
    };
    let mut y0 = x.to_vec();
    for v in vectors {
        y0.extend_from_slice(v);
    }
    let tr = ode::integrate(&sys, &y0, t, |y| space.contains(&y[..n]), opts);
    match tr.end {
        End::Reached => {
            let (_, y) = tr.last();
            let image = y[..n].to_vec();
            let moved = (0..vectors.len())
                .map(|c| y[n * (c + 1)..n * (c + 2)].to_vec())
                .collect();
            Ok((image, moved))
        }
        End::Exited { t_in, y_in, .. } => Err(FlowError::Exited {
            t_exit: t_in,
            point: y_in[..n].to_vec(),
        }),
        End::Underflow { t, .. } => Err(FlowError::StepUnderflow { t }),
    }
}

/// `(φₜ)_* Y` at the image point `φₜ(x)`: the vector `Dφₜ(x)·Y(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Pushforward {
    pub image: Vec<f64>,
    pub vector: Vec<f64>,
}

pub fn pushforward_at(
    x_field: &TangentField,
    t: f64,
    y_field: &TangentField,
    x: &[f64],
    space: &SubcartesianSpace,
    opts: &IntegratorOptions,
) -> Result<Pushforward, FlowError> {
    if y_field.dim() != x_field.dim() {
        return Err(FlowError::DimensionMismatch {
            expected: x_field.dim(),
            got: y_field.dim(),
        });
    }
    if x.len() != x_field.dim() {
        return Err(FlowError::DimensionMismatch {
            expected: x_field.dim(),
            got: x.len(),
        });
    }
    let v0 = y_field.value_at(x)?;
    let (image, mut moved) = transport(x_field, t, x, &[v0], space, opts)?;
    Ok(Pushforward {
        image,
        vector: moved.pop().expect("one transported vector"),
    })
}

/// `Dφₜ(x)` as a row-major matrix, with the image point.
pub fn flow_jacobian(
    field: &TangentField,
    t: f64,
    x: &[f64],
    space: &SubcartesianSpace,
    opts: &IntegratorOptions,
) -> Result<(Vec<f64>, Vec<Vec<f64>>), FlowError> {
    let n = field.dim();
    let basis: Vec<Vec<f64>> = (0..n)
        .map(|j| (0..n).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    let (image, columns) = transport(field, t, x, &basis, space, opts)?;
    let matrix = (0..n)
        .map(|i| (0..n).map(|j| columns[j][i]).collect())
        .collect();
    Ok((image, matrix))
}
