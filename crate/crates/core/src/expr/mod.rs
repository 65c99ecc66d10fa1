//! Vector-field expression trees: parsing, evaluation, and exact symbolic
//! differentiation.
//!
//! A [`FieldExpr`] holds one expression tree per coordinate of a vector field
//! on ℝⁿ. The node set is deliberately small (constants, coordinates,
//! arithmetic, integer powers, `sin`, `cos`, `exp`): it covers every field
//! this crate ships while keeping derivatives exact. Exactness matters:
//! brackets of constant or linear fields must simplify to the literal zero
//! field so that rank checks can distinguish "algebraically saturated" from
//! "numerically small".
//!
//! Named parameters are substituted as constants at parse time; there is no
//! symbolic parameter algebra. Simplification is structural only (constant
//! folding plus a fixed identity list): an expression that is semantically
//! zero but not syntactically so is not guaranteed to be flagged as zero.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::DMatrix;
use thiserror::Error;

mod parse;

pub use parse::parse_field;

/// Errors from parsing or evaluating field expressions.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("syntax error at byte {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("unknown identifier `{name}` at byte {pos}")]
    UnknownIdentifier { pos: usize, name: String },
    #[error("expected {expected} components separated by ';', found {found}")]
    ComponentCount { expected: usize, found: usize },
    #[error("point has dimension {got}, field expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("division by zero while evaluating at {point:?}")]
    DivisionByZero { point: Vec<f64> },
}

/// A scalar expression over coordinates `x1..xn`.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    /// Coordinate index, 0-based (`x1` parses to `Coord(0)`).
    Coord(usize),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Neg(Box<Expr>),
    Pow(Box<Expr>, i32),
    Sin(Box<Expr>),
    Cos(Box<Expr>),
    Exp(Box<Expr>),
}

impl Expr {
    fn eval(&self, x: &[f64]) -> Result<f64, ExprError> {
        Ok(match self {
            Expr::Const(c) => *c,
            Expr::Coord(j) => x[*j],
            Expr::Add(a, b) => a.eval(x)? + b.eval(x)?,
            Expr::Sub(a, b) => a.eval(x)? - b.eval(x)?,
            Expr::Mul(a, b) => a.eval(x)? * b.eval(x)?,
            Expr::Div(a, b) => {
                let d = b.eval(x)?;
                if d == 0.0 {
                    return Err(ExprError::DivisionByZero { point: x.to_vec() });
                }
                a.eval(x)? / d
            }
            Expr::Neg(a) => -a.eval(x)?,
            Expr::Pow(a, k) => {
                let base = a.eval(x)?;
                if base == 0.0 && *k < 0 {
                    return Err(ExprError::DivisionByZero { point: x.to_vec() });
                }
                base.powi(*k)
            }
            Expr::Sin(a) => a.eval(x)?.sin(),
            Expr::Cos(a) => a.eval(x)?.cos(),
            Expr::Exp(a) => a.eval(x)?.exp(),
        })
    }

    fn is_zero(&self) -> bool {
        matches!(self, Expr::Const(c) if *c == 0.0)
    }

    fn is_one(&self) -> bool {
        matches!(self, Expr::Const(c) if *c == 1.0)
    }

    /// Largest coordinate index referenced, if any.
    fn max_coord(&self) -> Option<usize> {
        match self {
            Expr::Const(_) => None,
            Expr::Coord(j) => Some(*j),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                match (a.max_coord(), b.max_coord()) {
                    (Some(x), Some(y)) => Some(x.max(y)),
                    (x, y) => x.or(y),
                }
            }
            Expr::Neg(a) | Expr::Pow(a, _) | Expr::Sin(a) | Expr::Cos(a) | Expr::Exp(a) => {
                a.max_coord()
            }
        }
    }
}

// Smart constructors: fold constants and apply the identity list, assuming the
// arguments are already in simplified form. `simplify` rebuilds a tree through
// these bottom-up, which makes one pass idempotent.

fn add(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Const(x), Expr::Const(y)) => Expr::Const(x + y),
        _ if a.is_zero() => b,
        _ if b.is_zero() => a,
        _ => Expr::Add(Box::new(a), Box::new(b)),
    }
}

fn sub(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Const(x), Expr::Const(y)) => Expr::Const(x - y),
        _ if b.is_zero() => a,
        _ if a.is_zero() => neg(b),
        _ if a == b => Expr::Const(0.0),
        _ => Expr::Sub(Box::new(a), Box::new(b)),
    }
}

fn mul(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Const(x), Expr::Const(y)) => Expr::Const(x * y),
        _ if a.is_zero() || b.is_zero() => Expr::Const(0.0),
        _ if a.is_one() => b,
        _ if b.is_one() => a,
        _ => Expr::Mul(Box::new(a), Box::new(b)),
    }
}

fn div(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        // Folding with a zero denominator would hide the runtime error.
        (Expr::Const(x), Expr::Const(y)) if *y != 0.0 => Expr::Const(x / y),
        _ if b.is_one() => a,
        _ => Expr::Div(Box::new(a), Box::new(b)),
    }
}

fn neg(a: Expr) -> Expr {
    match a {
        Expr::Const(x) => Expr::Const(-x),
        Expr::Neg(inner) => *inner,
        _ => Expr::Neg(Box::new(a)),
    }
}

fn pow(a: Expr, k: i32) -> Expr {
    match (&a, k) {
        (_, 0) => Expr::Const(1.0),
        (_, 1) => a,
        (Expr::Const(x), _) if !(*x == 0.0 && k < 0) => Expr::Const(x.powi(k)),
        _ => Expr::Pow(Box::new(a), k),
    }
}

fn sin(a: Expr) -> Expr {
    match a {
        Expr::Const(x) => Expr::Const(x.sin()),
        _ => Expr::Sin(Box::new(a)),
    }
}

fn cos(a: Expr) -> Expr {
    match a {
        Expr::Const(x) => Expr::Const(x.cos()),
        _ => Expr::Cos(Box::new(a)),
    }
}

fn exp(a: Expr) -> Expr {
    match a {
        Expr::Const(x) => Expr::Const(x.exp()),
        _ => Expr::Exp(Box::new(a)),
    }
}

fn simplify_expr(e: &Expr) -> Expr {
    match e {
        Expr::Const(_) | Expr::Coord(_) => e.clone(),
        Expr::Add(a, b) => add(simplify_expr(a), simplify_expr(b)),
        Expr::Sub(a, b) => sub(simplify_expr(a), simplify_expr(b)),
        Expr::Mul(a, b) => mul(simplify_expr(a), simplify_expr(b)),
        Expr::Div(a, b) => div(simplify_expr(a), simplify_expr(b)),
        Expr::Neg(a) => neg(simplify_expr(a)),
        Expr::Pow(a, k) => pow(simplify_expr(a), *k),
        Expr::Sin(a) => sin(simplify_expr(a)),
        Expr::Cos(a) => cos(simplify_expr(a)),
        Expr::Exp(a) => exp(simplify_expr(a)),
    }
}

/// ∂e/∂x_j, built through the smart constructors so chain-rule factors of 0
/// and 1 collapse immediately.
fn partial_expr(e: &Expr, j: usize) -> Expr {
    match e {
        Expr::Const(_) => Expr::Const(0.0),
        Expr::Coord(i) => Expr::Const(if *i == j { 1.0 } else { 0.0 }),
        Expr::Add(a, b) => add(partial_expr(a, j), partial_expr(b, j)),
        Expr::Sub(a, b) => sub(partial_expr(a, j), partial_expr(b, j)),
        Expr::Mul(a, b) => add(
            mul(partial_expr(a, j), (**b).clone()),
            mul((**a).clone(), partial_expr(b, j)),
        ),
        Expr::Div(a, b) => div(
            sub(
                mul(partial_expr(a, j), (**b).clone()),
                mul((**a).clone(), partial_expr(b, j)),
            ),
            pow((**b).clone(), 2),
        ),
        Expr::Neg(a) => neg(partial_expr(a, j)),
        Expr::Pow(a, k) => mul(
            Expr::Const(*k as f64),
            mul(pow((**a).clone(), *k - 1), partial_expr(a, j)),
        ),
        Expr::Sin(a) => mul(cos((**a).clone()), partial_expr(a, j)),
        Expr::Cos(a) => neg(mul(sin((**a).clone()), partial_expr(a, j))),
        Expr::Exp(a) => mul(exp((**a).clone()), partial_expr(a, j)),
    }
}

// Precedence levels for unparsing. Unary minus binds tighter than `^`, which
// binds tighter than `*`/`/`, which bind tighter than `+`/`-`.
fn prec(e: &Expr) -> u8 {
    match e {
        Expr::Add(..) | Expr::Sub(..) => 1,
        Expr::Mul(..) | Expr::Div(..) => 2,
        Expr::Pow(..) => 3,
        Expr::Neg(..) => 4,
        _ => 5,
    }
}

fn unparse_expr(e: &Expr, out: &mut String) {
    let group = |child: &Expr, min: u8, out: &mut String| {
        if prec(child) < min {
            out.push('(');
            unparse_expr(child, out);
            out.push(')');
        } else {
            unparse_expr(child, out);
        }
    };
    match e {
        Expr::Const(c) => out.push_str(&format!("{c:?}")),
        Expr::Coord(j) => out.push_str(&format!("x{}", j + 1)),
        Expr::Add(a, b) => {
            group(a, 1, out);
            out.push('+');
            group(b, 2, out);
        }
        Expr::Sub(a, b) => {
            group(a, 1, out);
            out.push('-');
            group(b, 2, out);
        }
        Expr::Mul(a, b) => {
            group(a, 2, out);
            out.push('*');
            group(b, 3, out);
        }
        Expr::Div(a, b) => {
            group(a, 2, out);
            out.push('/');
            group(b, 3, out);
        }
        Expr::Neg(a) => {
            out.push('-');
            // `-1.5` would re-lex as a negative literal, not a negation, so
            // constants keep their parentheses.
            if matches!(**a, Expr::Const(_)) {
                out.push('(');
                unparse_expr(a, out);
                out.push(')');
            } else {
                group(a, 4, out);
            }
        }
        Expr::Pow(a, k) => {
            group(a, 4, out);
            out.push('^');
            out.push_str(&k.to_string());
        }
        Expr::Sin(a) => {
            out.push_str("sin(");
            unparse_expr(a, out);
            out.push(')');
        }
        Expr::Cos(a) => {
            out.push_str("cos(");
            unparse_expr(a, out);
            out.push(')');
        }
        Expr::Exp(a) => {
            out.push_str("exp(");
            unparse_expr(a, out);
            out.push(')');
        }
    }
}

/// A vector field on ℝⁿ given by one expression tree per component.
///
/// Values are immutable after construction; all operations are pure, so a
/// `FieldExpr` can be shared freely across threads.
#[derive(Debug, Clone)]
pub struct FieldExpr {
    components: Vec<Expr>,
    dim: usize,
    params: BTreeMap<String, f64>,
}

/// Equality is structural on the component trees; the parameter map is
/// provenance only (its values are already substituted into the trees).
impl PartialEq for FieldExpr {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim && self.components == other.components
    }
}

impl FieldExpr {
    /// Builds a field from raw component trees, checking coordinate indices.
    pub fn from_components(components: Vec<Expr>, dim: usize) -> Result<Self, ExprError> {
        if components.len() != dim {
            return Err(ExprError::ComponentCount {
                expected: dim,
                found: components.len(),
            });
        }
        for c in &components {
            if let Some(j) = c.max_coord() {
                if j >= dim {
                    return Err(ExprError::DimensionMismatch {
                        expected: dim,
                        got: j + 1,
                    });
                }
            }
        }
        Ok(FieldExpr {
            components,
            dim,
            params: BTreeMap::new(),
        })
    }

    pub(crate) fn with_params(mut self, params: BTreeMap<String, f64>) -> Self {
        self.params = params;
        self
    }

    /// The zero field on ℝⁿ.
    pub fn zero(dim: usize) -> Self {
        FieldExpr {
            components: vec![Expr::Const(0.0); dim],
            dim,
            params: BTreeMap::new(),
        }
    }

    /// The constant field with the given value.
    pub fn constant(values: &[f64]) -> Self {
        FieldExpr {
            components: values.iter().map(|&v| Expr::Const(v)).collect(),
            dim: values.len(),
            params: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn components(&self) -> &[Expr] {
        &self.components
    }

    /// Parameter values substituted at parse time, for reporting.
    pub fn params(&self) -> &BTreeMap<String, f64> {
        &self.params
    }

    /// Evaluates the field at a point.
    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>, ExprError> {
        if x.len() != self.dim {
            return Err(ExprError::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        self.components.iter().map(|c| c.eval(x)).collect()
    }

    /// Evaluates into a pre-allocated buffer; the hot path for integrators.
    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) -> Result<(), ExprError> {
        debug_assert_eq!(x.len(), self.dim);
        debug_assert_eq!(out.len(), self.dim);
        for (o, c) in out.iter_mut().zip(&self.components) {
            *o = c.eval(x)?;
        }
        Ok(())
    }

    /// Exact symbolic ∂f/∂x_j of every component (0-based `j`), simplified.
    pub fn partial(&self, j: usize) -> FieldExpr {
        assert!(j < self.dim, "coordinate index {j} out of range");
        let components = self
            .components
            .iter()
            .map(|c| simplify_expr(&partial_expr(c, j)))
            .collect();
        FieldExpr {
            components,
            dim: self.dim,
            params: self.params.clone(),
        }
    }

    /// Constant folding plus the fixed identity list, applied bottom-up.
    pub fn simplify(&self) -> FieldExpr {
        FieldExpr {
            components: self.components.iter().map(simplify_expr).collect(),
            dim: self.dim,
            params: self.params.clone(),
        }
    }

    /// True when every component is the literal constant 0 (checked after
    /// `simplify` by callers that need the exact-zero certificate).
    pub fn is_syntactically_zero(&self) -> bool {
        self.components.iter().all(|c| c.is_zero())
    }

    /// If every component is a literal constant, the constant vector.
    pub fn as_constant(&self) -> Option<Vec<f64>> {
        self.components
            .iter()
            .map(|c| match c {
                Expr::Const(v) => Some(*v),
                _ => None,
            })
            .collect()
    }

    /// Jacobian matrix at `x`: entry `(k, j)` is ∂f_k/∂x_j evaluated at `x`.
    pub fn jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>, ExprError> {
        self.symbolic_jacobian().eval(x)
    }

    /// The matrix of symbolic partials, computed once and evaluated many times.
    pub fn symbolic_jacobian(&self) -> SymbolicJacobian {
        let n = self.dim;
        let mut entries = Vec::with_capacity(n * n);
        for k in 0..n {
            for j in 0..n {
                entries.push(simplify_expr(&partial_expr(&self.components[k], j)));
            }
        }
        SymbolicJacobian { entries, dim: n }
    }

    /// Renders the field back to parseable source, components joined by `; `.
    pub fn unparse(&self) -> String {
        let mut out = String::new();
        for (i, c) in self.components.iter().enumerate() {
            if i > 0 {
                out.push_str("; ");
            }
            unparse_expr(c, &mut out);
        }
        out
    }
}

impl fmt::Display for FieldExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.unparse())
    }
}

/// Precomputed symbolic Jacobian of a field, row-major.
#[derive(Debug, Clone)]
pub struct SymbolicJacobian {
    entries: Vec<Expr>,
    dim: usize,
}

impl SymbolicJacobian {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn eval(&self, x: &[f64]) -> Result<DMatrix<f64>, ExprError> {
        if x.len() != self.dim {
            return Err(ExprError::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        let n = self.dim;
        let mut m = DMatrix::zeros(n, n);
        for k in 0..n {
            for j in 0..n {
                m[(k, j)] = self.entries[k * n + j].eval(x)?;
            }
        }
        Ok(m)
    }

    /// Row-major evaluation into a flat buffer of length `dim*dim`.
    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) -> Result<(), ExprError> {
        debug_assert_eq!(out.len(), self.dim * self.dim);
        for (o, e) in out.iter_mut().zip(&self.entries) {
            *o = e.eval(x)?;
        }
        Ok(())
    }
}
