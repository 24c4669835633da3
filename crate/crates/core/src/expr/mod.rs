//! Scalar expression graphs with exact input derivatives and parameter
//! gradients.
//!
//! An [`Expr`] is an immutable DAG over named inputs, [`ParamId`] references
//! and constants. Beyond ordinary arithmetic it supports a `derivative-of`
//! node: `u.deriv("x", 2)` is an expression whose *value* is the exact
//! analytic second partial of `u` with respect to the input `x` at the
//! evaluation point. Differential operators of a PDE residual are built this
//! way, and [`Expr::grad_params`] then differentiates the whole thing —
//! including through the embedded input derivatives — with respect to every
//! parameter.
//!
//! Evaluation compiles the DAG once into a flat tape ([`CompiledExpr`])
//! that propagates truncated Taylor jets (value, ∂/∂a, ∂²/∂a² per needed
//! axis) forward and runs a reverse sweep over jet components for parameter
//! gradients. Combined input-derivative order is capped at 2 and mixed
//! partials (∂²/∂x∂y) are rejected at compile time; the PDE residuals here
//! only ever need pure second derivatives.
//!
//! ```
//! use hpkm_pinn::expr::{Expr, Bindings};
//! use hpkm_pinn::params::ParamStore;
//!
//! let x = Expr::input("x");
//! let u = (2.0 * &x).sin();           // sin(2x)
//! let uxx = u.deriv("x", 2);          // -4 sin(2x)
//! let store = ParamStore::new();
//! let v = uxx.eval(&Bindings::of(&[("x", 0.25)]), &store).unwrap();
//! assert!((v - (-4.0 * 0.5_f64.sin())).abs() < 1e-12);
//! ```

mod fd;
mod tape;

pub use fd::{fd_oracle, Wrt};
pub use tape::{CompiledExpr, EvalScratch};

use crate::params::ParamId;
use std::fmt;
use std::sync::Arc;

/// Unary operations on expressions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UnaryOp {
    Neg,
    Sin,
    Cos,
    Tanh,
    Exp,
    /// |x|, with derivative 0 at the kink.
    Abs,
    /// x^n for integer n.
    Powi(i32),
    /// 1/sqrt(x).
    Rsqrt,
    /// arctan(x).
    Atan,
    /// Clamp to [0, 1]; derivative 1 on [0, 1], 0 outside.
    Clip01,
}

/// Binary operations on expressions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug)]
pub(crate) enum Node {
    Const(f64),
    Input(Arc<str>),
    Param(ParamId),
    Unary(UnaryOp, Expr),
    Binary(BinaryOp, Expr, Expr),
    Deriv {
        child: Expr,
        input: Arc<str>,
        order: u8,
    },
}

/// Reference-counted handle to an expression node. Cloning is O(1) and
/// shares structure; sharing is preserved by the compiler, so common
/// subexpressions are evaluated once.
#[derive(Clone)]
pub struct Expr(pub(crate) Arc<Node>);

impl Expr {
    pub fn constant(v: f64) -> Self {
        Expr(Arc::new(Node::Const(v)))
    }

    /// Named input, bound at evaluation time.
    pub fn input(name: &str) -> Self {
        Expr(Arc::new(Node::Input(Arc::from(name))))
    }

    /// Reference to a parameter in the [`crate::params::ParamStore`].
    pub fn param(id: ParamId) -> Self {
        Expr(Arc::new(Node::Param(id)))
    }

    fn unary(op: UnaryOp, a: &Expr) -> Self {
        Expr(Arc::new(Node::Unary(op, a.clone())))
    }

    fn binary(op: BinaryOp, a: &Expr, b: &Expr) -> Self {
        Expr(Arc::new(Node::Binary(op, a.clone(), b.clone())))
    }

    pub fn sin(&self) -> Expr {
        Expr::unary(UnaryOp::Sin, self)
    }

    pub fn cos(&self) -> Expr {
        Expr::unary(UnaryOp::Cos, self)
    }

    pub fn tanh(&self) -> Expr {
        Expr::unary(UnaryOp::Tanh, self)
    }

    pub fn exp(&self) -> Expr {
        Expr::unary(UnaryOp::Exp, self)
    }

    pub fn abs(&self) -> Expr {
        Expr::unary(UnaryOp::Abs, self)
    }

    pub fn powi(&self, n: i32) -> Expr {
        Expr::unary(UnaryOp::Powi(n), self)
    }

    pub fn rsqrt(&self) -> Expr {
        Expr::unary(UnaryOp::Rsqrt, self)
    }

    pub fn atan(&self) -> Expr {
        Expr::unary(UnaryOp::Atan, self)
    }

    pub fn clip01(&self) -> Expr {
        Expr::unary(UnaryOp::Clip01, self)
    }

    /// Exact analytic partial derivative of this expression with respect to
    /// the named input. `order` must be 1 or 2; combined order across nested
    /// `deriv` nodes is capped at 2.
    pub fn deriv(&self, input: &str, order: u8) -> Expr {
        assert!(order == 1 || order == 2, "derivative order must be 1 or 2");
        Expr(Arc::new(Node::Deriv {
            child: self.clone(),
            input: Arc::from(input),
            order,
        }))
    }

    /// Sum of expressions; `0` for an empty iterator. Built as a balanced
    /// tree so very long sums stay shallow.
    pub fn sum<I: IntoIterator<Item = Expr>>(terms: I) -> Expr {
        let mut layer: Vec<Expr> = terms.into_iter().collect();
        if layer.is_empty() {
            return Expr::constant(0.0);
        }
        while layer.len() > 1 {
            layer = layer
                .chunks(2)
                .map(|pair| match pair {
                    [a, b] => a + b,
                    [a] => a.clone(),
                    _ => unreachable!(),
                })
                .collect();
        }
        layer.pop().unwrap()
    }

    /// Compile to a reusable evaluation tape. Compiling once and evaluating
    /// many times is much cheaper than calling [`Expr::eval`] in a loop.
    pub fn compile(&self) -> Result<CompiledExpr, EvalError> {
        CompiledExpr::new(self)
    }

    /// Evaluate at the given input bindings and parameter values.
    pub fn eval(
        &self,
        inputs: &Bindings,
        params: &crate::params::ParamStore,
    ) -> Result<f64, EvalError> {
        self.compile()?.eval(inputs, params)
    }

    /// Value and gradient with respect to every parameter in the store.
    /// Entries for parameters the expression never touches are exactly 0.
    pub fn grad_params(
        &self,
        inputs: &Bindings,
        params: &crate::params::ParamStore,
    ) -> Result<(f64, Vec<f64>), EvalError> {
        self.compile()?.grad_params(inputs, params)
    }

    pub(crate) fn node(&self) -> &Node {
        &self.0
    }
}

/// Input name→value map used when evaluating expressions.
#[derive(Debug, Clone, Default)]
pub struct Bindings {
    entries: Vec<(Arc<str>, f64)>,
}

impl Bindings {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn of(pairs: &[(&str, f64)]) -> Self {
        let mut b = Self::new();
        for (name, v) in pairs {
            b.set(name, *v);
        }
        b
    }

    pub fn set(&mut self, name: &str, v: f64) -> &mut Self {
        if let Some(e) = self.entries.iter_mut().find(|(n, _)| &**n == name) {
            e.1 = v;
        } else {
            self.entries.push((Arc::from(name), v));
        }
        self
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.entries
            .iter()
            .find(|(n, _)| &**n == name)
            .map(|(_, v)| *v)
    }
}

/// Faults raised while compiling or evaluating an expression.
#[derive(Debug, Clone, thiserror::Error)]
pub enum EvalError {
    #[error("input `{0}` is not bound")]
    UnboundInput(String),
    #[error("parameter index {0} is outside the store (len {1})")]
    UnknownParam(usize, usize),
    #[error("division by zero at {path}")]
    DivisionByZero { path: String },
    #[error("non-finite intermediate at {path}")]
    NonFinite { path: String },
    #[error("gradient for parameter block `{block}` is non-finite")]
    NonFiniteGradient { block: String },
    #[error("derivative order beyond 2 requested for input `{input}`")]
    OrderTooHigh { input: String },
    #[error("mixed partial derivative (∂/∂{a} of ∂/∂{b}) is not supported")]
    MixedDerivative { a: String, b: String },
}

impl UnaryOp {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            UnaryOp::Neg => "neg",
            UnaryOp::Sin => "sin",
            UnaryOp::Cos => "cos",
            UnaryOp::Tanh => "tanh",
            UnaryOp::Exp => "exp",
            UnaryOp::Abs => "abs",
            UnaryOp::Powi(_) => "powi",
            UnaryOp::Rsqrt => "rsqrt",
            UnaryOp::Atan => "atan",
            UnaryOp::Clip01 => "clip01",
        }
    }
}

fn fmt_node(node: &Node, f: &mut fmt::Formatter<'_>, depth: usize) -> fmt::Result {
    if depth == 0 {
        return write!(f, "…");
    }
    match node {
        Node::Const(v) => write!(f, "{v}"),
        Node::Input(n) => write!(f, "{n}"),
        Node::Param(id) => write!(f, "θ[{}]", id.index()),
        Node::Unary(op, a) => {
            match op {
                UnaryOp::Neg => write!(f, "-(")?,
                UnaryOp::Powi(n) => {
                    write!(f, "(")?;
                    fmt_node(a.node(), f, depth - 1)?;
                    return write!(f, ")^{n}");
                }
                other => write!(f, "{}(", other.name())?,
            }
            fmt_node(a.node(), f, depth - 1)?;
            write!(f, ")")
        }
        Node::Binary(op, a, b) => {
            let sym = match op {
                BinaryOp::Add => "+",
                BinaryOp::Sub => "-",
                BinaryOp::Mul => "*",
                BinaryOp::Div => "/",
            };
            write!(f, "(")?;
            fmt_node(a.node(), f, depth - 1)?;
            write!(f, " {sym} ")?;
            fmt_node(b.node(), f, depth - 1)?;
            write!(f, ")")
        }
        Node::Deriv {
            child,
            input,
            order,
        } => {
            if *order == 1 {
                write!(f, "∂/∂{input}(")?;
            } else {
                write!(f, "∂²/∂{input}²(")?;
            }
            fmt_node(child.node(), f, depth - 1)?;
            write!(f, ")")
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt_node(self.node(), f, 6)
    }
}

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Expr({self})")
    }
}

impl From<f64> for Expr {
    fn from(v: f64) -> Self {
        Expr::constant(v)
    }
}

macro_rules! impl_bin_op {
    ($trait:ident, $method:ident, $op:expr) => {
        impl std::ops::$trait<&Expr> for &Expr {
            type Output = Expr;
            fn $method(self, rhs: &Expr) -> Expr {
                Expr::binary($op, self, rhs)
            }
        }
        impl std::ops::$trait<Expr> for Expr {
            type Output = Expr;
            fn $method(self, rhs: Expr) -> Expr {
                Expr::binary($op, &self, &rhs)
            }
        }
        impl std::ops::$trait<&Expr> for Expr {
            type Output = Expr;
            fn $method(self, rhs: &Expr) -> Expr {
                Expr::binary($op, &self, rhs)
            }
        }
        impl std::ops::$trait<Expr> for &Expr {
            type Output = Expr;
            fn $method(self, rhs: Expr) -> Expr {
                Expr::binary($op, self, &rhs)
            }
        }
        impl std::ops::$trait<f64> for &Expr {
            type Output = Expr;
            fn $method(self, rhs: f64) -> Expr {
                Expr::binary($op, self, &Expr::constant(rhs))
            }
        }
        impl std::ops::$trait<f64> for Expr {
            type Output = Expr;
            fn $method(self, rhs: f64) -> Expr {
                Expr::binary($op, &self, &Expr::constant(rhs))
            }
        }
        impl std::ops::$trait<&Expr> for f64 {
            type Output = Expr;
            fn $method(self, rhs: &Expr) -> Expr {
                Expr::binary($op, &Expr::constant(self), rhs)
            }
        }
        impl std::ops::$trait<Expr> for f64 {
            type Output = Expr;
            fn $method(self, rhs: Expr) -> Expr {
                Expr::binary($op, &Expr::constant(self), &rhs)
            }
        }
    };
}

impl_bin_op!(Add, add, BinaryOp::Add);
impl_bin_op!(Sub, sub, BinaryOp::Sub);
impl_bin_op!(Mul, mul, BinaryOp::Mul);
impl_bin_op!(Div, div, BinaryOp::Div);

impl std::ops::Neg for &Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        Expr::unary(UnaryOp::Neg, self)
    }
}

impl std::ops::Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        Expr::unary(UnaryOp::Neg, &self)
    }
}
