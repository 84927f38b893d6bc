//! Smooth scalar expressions on ℝⁿ.
//!
//! A [`SmoothExpr`] is an immutable, reference-counted parse tree. It can be
//! evaluated at a point, differentiated exactly (the derivative is again a
//! `SmoothExpr`), composed with other expressions and printed in a form the
//! parser reads back to the identical tree.
//!
//! Evaluation never produces a silent NaN: quotients, `log`, `sqrt`, negative
//! integer powers and overflow all carry a domain guard that turns into an
//! [`ExprError::Domain`].

mod parser;

use std::fmt;
use std::ops;
use std::sync::Arc;

pub use parser::{parse, parse_with_aliases};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExprError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unknown identifier `{name}` at line {line}, column {column}")]
    UnknownIdentifier {
        name: String,
        line: usize,
        column: usize,
    },
    #[error("variable x{index} at line {line}, column {column} exceeds the {n_vars} available variables")]
    VariableOutOfRange {
        index: usize,
        n_vars: usize,
        line: usize,
        column: usize,
    },
    #[error("domain guard violated by {op} in `{expr}` at point {point:?}")]
    Domain {
        op: &'static str,
        expr: String,
        point: Vec<f64>,
    },
}

/// Unary primitives. `Flat(k)` is the k-th derivative of the flat function
/// `u ↦ exp(-1/u)` for `u > 0`, extended by zero for `u ≤ 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Neg,
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
    Tanh,
    Flat(u32),
}

impl Func {
    pub fn name(self) -> String {
        match self {
            Func::Neg => "-".into(),
            Func::Sin => "sin".into(),
            Func::Cos => "cos".into(),
            Func::Exp => "exp".into(),
            Func::Log => "log".into(),
            Func::Sqrt => "sqrt".into(),
            Func::Tanh => "tanh".into(),
            Func::Flat(0) => "flat".into(),
            Func::Flat(k) => format!("flatd{k}"),
        }
    }

    pub(crate) fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sqrt" => Func::Sqrt,
            "tanh" => Func::Tanh,
            "flat" => Func::Flat(0),
            _ => {
                let k = name.strip_prefix("flatd")?.parse::<u32>().ok()?;
                Func::Flat(k)
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Const(f64),
    Var(usize),
    Sum(SmoothExpr, SmoothExpr),
    Product(SmoothExpr, SmoothExpr),
    Quotient(SmoothExpr, SmoothExpr),
    Pow(SmoothExpr, i32),
    Unary(Func, SmoothExpr),
}

#[derive(Clone, PartialEq)]
pub struct SmoothExpr(Arc<Node>);

/// Value and derivatives of an expression at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct Jet {
    pub value: f64,
    /// Empty for order 0.
    pub gradient: Vec<f64>,
    pub hessian: Option<Vec<Vec<f64>>>,
}

struct Fault {
    op: &'static str,
}

impl SmoothExpr {
    /// Wraps a node without any simplification.
    pub fn from_node(node: Node) -> Self {
        SmoothExpr(Arc::new(node))
    }

    pub fn node(&self) -> &Node {
        &self.0
    }

    pub fn constant(c: f64) -> Self {
        Self::from_node(Node::Const(c))
    }

    pub fn zero() -> Self {
        Self::constant(0.0)
    }

    pub fn one() -> Self {
        Self::constant(1.0)
    }

    /// Coordinate function `x_{index+1}`.
    pub fn var(index: usize) -> Self {
        Self::from_node(Node::Var(index))
    }

    pub fn as_const(&self) -> Option<f64> {
        match *self.0 {
            Node::Const(c) => Some(c),
            _ => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.as_const() == Some(0.0)
    }

    pub fn add(&self, rhs: &SmoothExpr) -> SmoothExpr {
        match (self.as_const(), rhs.as_const()) {
            (Some(a), Some(b)) => Self::constant(a + b),
            (Some(0.0), _) => rhs.clone(),
            (_, Some(0.0)) => self.clone(),
            _ => Self::from_node(Node::Sum(self.clone(), rhs.clone())),
        }
    }

    pub fn sub(&self, rhs: &SmoothExpr) -> SmoothExpr {
        if self == rhs {
            return Self::zero();
        }
        self.add(&rhs.neg())
    }

    pub fn mul(&self, rhs: &SmoothExpr) -> SmoothExpr {
        match (self.as_const(), rhs.as_const()) {
            (Some(a), Some(b)) => Self::constant(a * b),
            (Some(a), _) | (_, Some(a)) if a == 0.0 => Self::zero(),
            (Some(1.0), _) => rhs.clone(),
            (_, Some(1.0)) => self.clone(),
            (Some(-1.0), _) => rhs.neg(),
            (_, Some(-1.0)) => self.neg(),
            _ => Self::from_node(Node::Product(self.clone(), rhs.clone())),
        }
    }

    pub fn div(&self, rhs: &SmoothExpr) -> SmoothExpr {
        match (self.as_const(), rhs.as_const()) {
            (Some(a), Some(b)) if b != 0.0 => Self::constant(a / b),
            (Some(0.0), _) => Self::zero(),
            (_, Some(1.0)) => self.clone(),
            _ => Self::from_node(Node::Quotient(self.clone(), rhs.clone())),
        }
    }

    pub fn neg(&self) -> SmoothExpr {
        match &*self.0 {
            Node::Const(c) => Self::constant(if *c == 0.0 { 0.0 } else { -c }),
            Node::Unary(Func::Neg, inner) => inner.clone(),
            _ => Self::from_node(Node::Unary(Func::Neg, self.clone())),
        }
    }

    pub fn powi(&self, k: i32) -> SmoothExpr {
        if k == 0 {
            return Self::one();
        }
        if k == 1 {
            return self.clone();
        }
        if let Some(c) = self.as_const() {
            if c != 0.0 || k > 0 {
                let v = c.powi(k);
                if v.is_finite() {
                    return Self::constant(v);
                }
            }
        }
        Self::from_node(Node::Pow(self.clone(), k))
    }

    pub fn apply(&self, func: Func) -> SmoothExpr {
        if func == Func::Neg {
            return self.neg();
        }
        if let Some(c) = self.as_const() {
            if let Ok(v) = eval_func(func, c) {
                return Self::constant(v);
            }
        }
        Self::from_node(Node::Unary(func, self.clone()))
    }

    pub fn sin(&self) -> SmoothExpr {
        self.apply(Func::Sin)
    }
    pub fn cos(&self) -> SmoothExpr {
        self.apply(Func::Cos)
    }
    pub fn exp(&self) -> SmoothExpr {
        self.apply(Func::Exp)
    }
    pub fn log(&self) -> SmoothExpr {
        self.apply(Func::Log)
    }
    pub fn sqrt(&self) -> SmoothExpr {
        self.apply(Func::Sqrt)
    }
    pub fn tanh(&self) -> SmoothExpr {
        self.apply(Func::Tanh)
    }
    pub fn flat(&self) -> SmoothExpr {
        self.apply(Func::Flat(0))
    }

    /// Largest variable index referenced, if any.
    pub fn max_var(&self) -> Option<usize> {
        match &*self.0 {
            Node::Const(_) => None,
            Node::Var(i) => Some(*i),
            Node::Sum(a, b) | Node::Product(a, b) | Node::Quotient(a, b) => {
                match (a.max_var(), b.max_var()) {
                    (Some(x), Some(y)) => Some(x.max(y)),
                    (x, y) => x.or(y),
                }
            }
            Node::Pow(a, _) | Node::Unary(_, a) => a.max_var(),
        }
    }

    /// Exact partial derivative with respect to `x_{var+1}`.
    pub fn diff(&self, var: usize) -> SmoothExpr {
        match &*self.0 {
            Node::Const(_) => Self::zero(),
            Node::Var(i) => {
                if *i == var {
                    Self::one()
                } else {
                    Self::zero()
                }
            }
            Node::Sum(a, b) => a.diff(var).add(&b.diff(var)),
            Node::Product(a, b) => a.diff(var).mul(b).add(&a.mul(&b.diff(var))),
            Node::Quotient(a, b) => {
                let num = a.diff(var).mul(b).sub(&a.mul(&b.diff(var)));
                num.div(&b.powi(2))
            }
            Node::Pow(a, k) => Self::constant(*k as f64)
                .mul(&a.powi(k - 1))
                .mul(&a.diff(var)),
            Node::Unary(func, a) => {
                let da = a.diff(var);
                if da.is_zero() {
                    return Self::zero();
                }
                let outer = match func {
                    Func::Neg => return da.neg(),
                    Func::Sin => a.cos(),
                    Func::Cos => a.sin().neg(),
                    Func::Exp => a.exp(),
                    Func::Log => return da.div(a),
                    Func::Sqrt => return da.div(&Self::constant(2.0).mul(&a.sqrt())),
                    Func::Tanh => Self::one().sub(&a.tanh().powi(2)),
                    Func::Flat(k) => a.apply(Func::Flat(k + 1)),
                };
                outer.mul(&da)
            }
        }
    }

    /// Replaces every `x_{i+1}` by `subs[i]`.
    pub fn substitute(&self, subs: &[SmoothExpr]) -> SmoothExpr {
        match &*self.0 {
            Node::Const(_) => self.clone(),
            Node::Var(i) => subs.get(*i).cloned().unwrap_or_else(|| self.clone()),
            Node::Sum(a, b) => a.substitute(subs).add(&b.substitute(subs)),
            Node::Product(a, b) => a.substitute(subs).mul(&b.substitute(subs)),
            Node::Quotient(a, b) => a.substitute(subs).div(&b.substitute(subs)),
            Node::Pow(a, k) => a.substitute(subs).powi(*k),
            Node::Unary(f, a) => a.substitute(subs).apply(*f),
        }
    }

    pub fn eval(&self, point: &[f64]) -> Result<f64, ExprError> {
        let mut culprit = None;
        self.eval_inner(point, &mut culprit).map_err(|fault| ExprError::Domain {
            op: fault.op,
            expr: culprit.map(|e: SmoothExpr| e.to_string()).unwrap_or_default(),
            point: point.to_vec(),
        })
    }

    fn eval_inner(&self, x: &[f64], culprit: &mut Option<SmoothExpr>) -> Result<f64, Fault> {
        let v = match &*self.0 {
            Node::Const(c) => *c,
            Node::Var(i) => match x.get(*i) {
                Some(v) => *v,
                None => {
                    *culprit = Some(self.clone());
                    return Err(Fault {
                        op: "missing coordinate",
                    });
                }
            },
            Node::Sum(a, b) => a.eval_inner(x, culprit)? + b.eval_inner(x, culprit)?,
            Node::Product(a, b) => a.eval_inner(x, culprit)? * b.eval_inner(x, culprit)?,
            Node::Quotient(a, b) => {
                let num = a.eval_inner(x, culprit)?;
                let den = b.eval_inner(x, culprit)?;
                if den == 0.0 {
                    *culprit = Some(self.clone());
                    return Err(Fault {
                        op: "division by zero",
                    });
                }
                num / den
            }
            Node::Pow(a, k) => {
                let base = a.eval_inner(x, culprit)?;
                if base == 0.0 && *k < 0 {
                    *culprit = Some(self.clone());
                    return Err(Fault {
                        op: "negative power of zero",
                    });
                }
                base.powi(*k)
            }
            Node::Unary(f, a) => {
                let arg = a.eval_inner(x, culprit)?;
                match eval_func(*f, arg) {
                    Ok(v) => v,
                    Err(fault) => {
                        *culprit = Some(self.clone());
                        return Err(fault);
                    }
                }
            }
        };
        if !v.is_finite() {
            *culprit = Some(self.clone());
            return Err(Fault { op: "overflow" });
        }
        Ok(v)
    }

    /// Gradient expressions `(∂₁f, …, ∂ₙf)`.
    pub fn gradient(&self, n: usize) -> Vec<SmoothExpr> {
        (0..n).map(|i| self.diff(i)).collect()
    }

    /// Value and derivatives up to `order` (0, 1 or 2) at `point`.
    pub fn eval_jet(&self, point: &[f64], order: u8) -> Result<Jet, ExprError> {
        let n = point.len();
        let value = self.eval(point)?;
        if order == 0 {
            return Ok(Jet {
                value,
                gradient: Vec::new(),
                hessian: None,
            });
        }
        let grad_exprs = self.gradient(n);
        let gradient = grad_exprs
            .iter()
            .map(|g| g.eval(point))
            .collect::<Result<Vec<_>, _>>()?;
        let hessian = if order >= 2 {
            let mut h = vec![vec![0.0; n]; n];
            for i in 0..n {
                for j in i..n {
                    let v = grad_exprs[i].diff(j).eval(point)?;
                    h[i][j] = v;
                    h[j][i] = v;
                }
            }
            Some(h)
        } else {
            None
        };
        Ok(Jet {
            value,
            gradient,
            hessian,
        })
    }

    fn fmt_base(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &*self.0 {
            Node::Const(c) => {
                if c.is_sign_negative() {
                    write!(f, "(-{:?})", c.abs())
                } else {
                    write!(f, "{c:?}")
                }
            }
            Node::Var(i) => write!(f, "x{}", i + 1),
            Node::Sum(a, b) => binary(f, a, " + ", b),
            Node::Product(a, b) => binary(f, a, " * ", b),
            Node::Quotient(a, b) => binary(f, a, " / ", b),
            Node::Pow(a, k) => {
                f.write_str("(")?;
                a.fmt_base(f)?;
                write!(f, "^{k})")
            }
            Node::Unary(Func::Neg, a) => {
                if let Node::Const(c) = a.node() {
                    // `-3.0` would read back as a negative literal.
                    return write!(f, "(-({c:?}))");
                }
                f.write_str("(-")?;
                a.fmt_base(f)?;
                f.write_str(")")
            }
            Node::Unary(func, a) => {
                write!(f, "{}(", func.name())?;
                a.fmt_base(f)?;
                f.write_str(")")
            }
        }
    }
}

fn binary(f: &mut fmt::Formatter<'_>, a: &SmoothExpr, op: &str, b: &SmoothExpr) -> fmt::Result {
    f.write_str("(")?;
    a.fmt_base(f)?;
    f.write_str(op)?;
    b.fmt_base(f)?;
    f.write_str(")")
}

fn eval_func(func: Func, arg: f64) -> Result<f64, Fault> {
    let v = match func {
        Func::Neg => -arg,
        Func::Sin => arg.sin(),
        Func::Cos => arg.cos(),
        Func::Exp => arg.exp(),
        Func::Log => {
            if arg <= 0.0 {
                return Err(Fault {
                    op: "log of non-positive value",
                });
            }
            arg.ln()
        }
        Func::Sqrt => {
            if arg < 0.0 {
                return Err(Fault {
                    op: "sqrt of negative value",
                });
            }
            arg.sqrt()
        }
        Func::Tanh => arg.tanh(),
        Func::Flat(k) => flat_derivative(k, arg),
    };
    if !v.is_finite() {
        return Err(Fault { op: "overflow" });
    }
    Ok(v)
}

/// Coefficients of `p_k` with `dᵏ/duᵏ exp(-1/u) = exp(-1/u)·p_k(1/u)`.
fn flat_polynomial(k: u32) -> Vec<f64> {
    let mut p = vec![1.0];
    for _ in 0..k {
        // p_{k+1}(w) = w²(p_k(w) − p_k'(w))
        let mut next = vec![0.0; p.len() + 2];
        for (j, c) in p.iter().enumerate() {
            next[j + 2] += c;
            if j > 0 {
                next[j + 1] -= c * j as f64;
            }
        }
        p = next;
    }
    p
}

fn flat_derivative(k: u32, u: f64) -> f64 {
    if u <= 0.0 {
        return 0.0;
    }
    let w = 1.0 / u;
    if k == 0 {
        return (-w).exp();
    }
    let ln_w = w.ln();
    flat_polynomial(k)
        .iter()
        .enumerate()
        .filter(|(_, c)| **c != 0.0)
        .map(|(j, c)| c.signum() * (c.abs().ln() + j as f64 * ln_w - w).exp())
        .sum()
}

impl fmt::Display for SmoothExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_base(f)
    }
}

impl fmt::Debug for SmoothExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SmoothExpr({self})")
    }
}

impl From<f64> for SmoothExpr {
    fn from(c: f64) -> Self {
        SmoothExpr::constant(c)
    }
}

macro_rules! binop {
    ($trait:ident, $method:ident) => {
        impl ops::$trait<&SmoothExpr> for &SmoothExpr {
            type Output = SmoothExpr;
            fn $method(self, rhs: &SmoothExpr) -> SmoothExpr {
                SmoothExpr::$method(self, rhs)
            }
        }
        impl ops::$trait<SmoothExpr> for SmoothExpr {
            type Output = SmoothExpr;
            fn $method(self, rhs: SmoothExpr) -> SmoothExpr {
                SmoothExpr::$method(&self, &rhs)
            }
        }
        impl ops::$trait<f64> for SmoothExpr {
            type Output = SmoothExpr;
            fn $method(self, rhs: f64) -> SmoothExpr {
                SmoothExpr::$method(&self, &SmoothExpr::constant(rhs))
            }
        }
    };
}

binop!(Add, add);
binop!(Sub, sub);
binop!(Mul, mul);
binop!(Div, div);

impl ops::Neg for SmoothExpr {
    type Output = SmoothExpr;
    fn neg(self) -> SmoothExpr {
        SmoothExpr::neg(&self)
    }
}

impl ops::Neg for &SmoothExpr {
    type Output = SmoothExpr;
    fn neg(self) -> SmoothExpr {
        SmoothExpr::neg(self)
    }
}
