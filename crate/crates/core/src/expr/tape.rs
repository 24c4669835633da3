//! Compilation of expression DAGs into flat evaluation tapes.
//!
//! A compiled tape executes in topological order over *jets*: per slot we
//! store the value plus, for every derivative axis the expression demands,
//! the pure first and (where needed) second partial with respect to that
//! axis. `derivative-of` nodes then simply select components of their
//! child's jet. Parameter gradients run as a reverse sweep whose update
//! rules are the transposes of the forward jet rules, which requires third
//! derivatives of the primitive functions (differentiating a second-order
//! jet once more with respect to the value path).

use super::{Bindings, EvalError, Expr, Node, UnaryOp};
use crate::params::{ParamId, ParamStore};
use std::collections::HashMap;
use std::sync::Arc;

#[derive(Debug, Clone)]
enum TOp {
    Const { value: f64 },
    Input { name: Arc<str>, axis: Option<u32> },
    Param { id: ParamId },
    Unary { op: UnaryOp, a: u32 },
    Binary { op: super::BinaryOp, a: u32, b: u32 },
    Deriv { a: u32, axis: u32, order: u8 },
}

/// Jet of the root of a compiled expression: the value together with the
/// exact partials the tape carries.
#[derive(Debug, Clone)]
pub struct Jet {
    comps: Vec<f64>,
    axes: Vec<(Arc<str>, u8)>,
    offsets: Vec<usize>,
}

impl Jet {
    pub fn value(&self) -> f64 {
        self.comps[0]
    }

    fn axis_ix(&self, name: &str) -> Option<usize> {
        self.axes.iter().position(|(n, _)| &**n == name)
    }

    /// ∂/∂name, or 0 when the axis is not carried.
    pub fn d1(&self, name: &str) -> f64 {
        self.axis_ix(name)
            .map(|k| self.comps[self.offsets[k]])
            .unwrap_or(0.0)
    }

    /// ∂²/∂name², or 0 when not carried.
    pub fn d2(&self, name: &str) -> f64 {
        match self.axis_ix(name) {
            Some(k) if self.axes[k].1 >= 2 => self.comps[self.offsets[k] + 1],
            _ => 0.0,
        }
    }
}

/// Reusable evaluation buffers; pass to the `_with` entry points to avoid
/// per-call allocation in tight loops.
#[derive(Debug, Default)]
pub struct EvalScratch {
    vals: Vec<f64>,
    adj: Vec<f64>,
}

/// An expression compiled to a flat tape, reusable across evaluations.
#[derive(Debug)]
pub struct CompiledExpr {
    ops: Vec<TOp>,
    exprs: Vec<Expr>,
    root: Expr,
    axes: Vec<(Arc<str>, u8)>,
    /// Component offset of the first derivative of each axis; the second
    /// derivative, when carried, sits one past it.
    axis_off: Vec<usize>,
    comps: usize,
}

struct Demand(Vec<(Arc<str>, u8)>);

impl Demand {
    fn get(&self, name: &str) -> u8 {
        self.0
            .iter()
            .find(|(n, _)| &**n == name)
            .map(|(_, o)| *o)
            .unwrap_or(0)
    }

    fn bump(&mut self, name: &Arc<str>, order: u8) {
        if let Some(e) = self
            .0
            .iter_mut()
            .find(|(n, _)| Arc::ptr_eq(n, name) || **n == **name)
        {
            e.1 = e.1.max(order);
        } else {
            self.0.push((name.clone(), order));
        }
    }
}

impl CompiledExpr {
    pub(crate) fn new(root: &Expr) -> Result<Self, EvalError> {
        // Post-order DFS with pointer-identity dedup so shared subgraphs get
        // one slot each.
        let mut index: HashMap<*const Node, u32> = HashMap::new();
        let mut topo: Vec<Expr> = Vec::new();
        let mut stack: Vec<(Expr, bool)> = vec![(root.clone(), false)];
        while let Some((e, expanded)) = stack.pop() {
            let key = Arc::as_ptr(&e.0);
            if index.contains_key(&key) {
                continue;
            }
            if expanded {
                index.insert(key, topo.len() as u32);
                topo.push(e);
                continue;
            }
            stack.push((e.clone(), true));
            match e.node() {
                Node::Unary(_, a) => stack.push((a.clone(), false)),
                Node::Binary(_, a, b) => {
                    stack.push((b.clone(), false));
                    stack.push((a.clone(), false));
                }
                Node::Deriv { child, .. } => stack.push((child.clone(), false)),
                _ => {}
            }
        }

        // Demand analysis: walk parents-first (reverse topological order) and
        // push required derivative orders down to the children. This is where
        // order-3 requests and mixed partials are rejected.
        let n = topo.len();
        let mut demands: Vec<Demand> = (0..n).map(|_| Demand(Vec::new())).collect();
        for i in (0..n).rev() {
            let d: Vec<(Arc<str>, u8)> = demands[i].0.clone();
            match topo[i].node() {
                Node::Deriv {
                    child,
                    input,
                    order,
                } => {
                    for (axis, o) in &d {
                        if **axis != **input && *o > 0 {
                            return Err(EvalError::MixedDerivative {
                                a: axis.to_string(),
                                b: input.to_string(),
                            });
                        }
                    }
                    let total = demands[i].get(input) + order;
                    if total > 2 {
                        return Err(EvalError::OrderTooHigh {
                            input: input.to_string(),
                        });
                    }
                    let ci = index[&Arc::as_ptr(&child.0)] as usize;
                    demands[ci].bump(input, total);
                }
                Node::Unary(_, a) => {
                    let ci = index[&Arc::as_ptr(&a.0)] as usize;
                    for (axis, o) in &d {
                        demands[ci].bump(axis, *o);
                    }
                }
                Node::Binary(_, a, b) => {
                    for e in [a, b] {
                        let ci = index[&Arc::as_ptr(&e.0)] as usize;
                        for (axis, o) in &d {
                            demands[ci].bump(axis, *o);
                        }
                    }
                }
                _ => {}
            }
        }

        // One uniform component layout for the whole tape: value, then per
        // axis the first and possibly second derivative.
        let mut axes: Vec<(Arc<str>, u8)> = Vec::new();
        for dem in &demands {
            for (axis, o) in &dem.0 {
                if let Some(e) = axes.iter_mut().find(|(n, _)| **n == **axis) {
                    e.1 = e.1.max(*o);
                } else {
                    axes.push((axis.clone(), *o));
                }
            }
        }
        let mut axis_off = Vec::with_capacity(axes.len());
        let mut comps = 1usize;
        for (_, o) in &axes {
            axis_off.push(comps);
            comps += *o as usize;
        }

        let axis_ix = |name: &str| axes.iter().position(|(n, _)| &**n == name);
        let mut ops = Vec::with_capacity(n);
        for e in &topo {
            let op = match e.node() {
                Node::Const(v) => TOp::Const { value: *v },
                Node::Input(name) => TOp::Input {
                    name: name.clone(),
                    axis: axis_ix(name).map(|k| k as u32),
                },
                Node::Param(id) => TOp::Param { id: *id },
                Node::Unary(op, a) => TOp::Unary {
                    op: *op,
                    a: index[&Arc::as_ptr(&a.0)],
                },
                Node::Binary(op, a, b) => TOp::Binary {
                    op: *op,
                    a: index[&Arc::as_ptr(&a.0)],
                    b: index[&Arc::as_ptr(&b.0)],
                },
                Node::Deriv {
                    child,
                    input,
                    order,
                } => TOp::Deriv {
                    a: index[&Arc::as_ptr(&child.0)],
                    axis: axis_ix(input).expect("derivative axis registered") as u32,
                    order: *order,
                },
            };
            ops.push(op);
        }

        Ok(CompiledExpr {
            ops,
            exprs: topo,
            root: root.clone(),
            axes,
            axis_off,
            comps,
        })
    }

    /// Number of tape slots (shared subexpressions count once).
    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    /// Derivative axes this tape carries, as `(input name, max order)`.
    pub fn axes(&self) -> Vec<(String, u8)> {
        self.axes.iter().map(|(n, o)| (n.to_string(), *o)).collect()
    }

    fn forward(
        &self,
        vals: &mut Vec<f64>,
        inputs: &Bindings,
        params: &ParamStore,
    ) -> Result<(), EvalError> {
        let c = self.comps;
        vals.clear();
        vals.resize(self.ops.len() * c, 0.0);
        for (i, op) in self.ops.iter().enumerate() {
            let (before, rest) = vals.split_at_mut(i * c);
            let out = &mut rest[..c];
            match op {
                TOp::Const { value } => out[0] = *value,
                TOp::Input { name, axis } => {
                    out[0] = inputs
                        .get(name)
                        .ok_or_else(|| EvalError::UnboundInput(name.to_string()))?;
                    if let Some(k) = axis {
                        out[self.axis_off[*k as usize]] = 1.0;
                    }
                }
                TOp::Param { id } => {
                    if id.index() >= params.len() {
                        return Err(EvalError::UnknownParam(id.index(), params.len()));
                    }
                    out[0] = params.values()[id.index()];
                }
                TOp::Unary { op, a } => {
                    let a = &before[*a as usize * c..*a as usize * c + c];
                    let (f, f1, f2, _) = unary_d3(*op, a[0]);
                    out[0] = f;
                    for (k, (_, ord)) in self.axes.iter().enumerate() {
                        let o1 = self.axis_off[k];
                        out[o1] = f1 * a[o1];
                        if *ord >= 2 {
                            out[o1 + 1] = f2 * a[o1] * a[o1] + f1 * a[o1 + 1];
                        }
                    }
                }
                TOp::Binary { op, a, b } => {
                    let a = &before[*a as usize * c..*a as usize * c + c];
                    let b = &before[*b as usize * c..*b as usize * c + c];
                    use super::BinaryOp::*;
                    match op {
                        Add => {
                            for j in 0..c {
                                out[j] = a[j] + b[j];
                            }
                        }
                        Sub => {
                            for j in 0..c {
                                out[j] = a[j] - b[j];
                            }
                        }
                        Mul => {
                            out[0] = a[0] * b[0];
                            for (k, (_, ord)) in self.axes.iter().enumerate() {
                                let o1 = self.axis_off[k];
                                out[o1] = a[o1] * b[0] + a[0] * b[o1];
                                if *ord >= 2 {
                                    out[o1 + 1] =
                                        a[o1 + 1] * b[0] + 2.0 * a[o1] * b[o1] + a[0] * b[o1 + 1];
                                }
                            }
                        }
                        Div => {
                            if b[0] == 0.0 {
                                return Err(EvalError::DivisionByZero {
                                    path: self.node_path(i),
                                });
                            }
                            out[0] = a[0] / b[0];
                            for (k, (_, ord)) in self.axes.iter().enumerate() {
                                let o1 = self.axis_off[k];
                                out[o1] = (a[o1] - out[0] * b[o1]) / b[0];
                                if *ord >= 2 {
                                    out[o1 + 1] =
                                        (a[o1 + 1] - 2.0 * out[o1] * b[o1] - out[0] * b[o1 + 1])
                                            / b[0];
                                }
                            }
                        }
                    }
                }
                TOp::Deriv { a, axis, order } => {
                    let a = &before[*a as usize * c..*a as usize * c + c];
                    let k = *axis as usize;
                    let o1 = self.axis_off[k];
                    out[0] = a[o1 + (*order as usize - 1)];
                    // d/daxis of a first derivative is the child's second;
                    // anything deeper was rejected at compile time.
                    if *order == 1 && self.axes[k].1 >= 2 {
                        out[o1] = a[o1 + 1];
                    }
                }
            }
            if !out.iter().all(|v| v.is_finite()) {
                return Err(EvalError::NonFinite {
                    path: self.node_path(i),
                });
            }
        }
        Ok(())
    }

    /// Evaluate the expression's value.
    pub fn eval(&self, inputs: &Bindings, params: &ParamStore) -> Result<f64, EvalError> {
        let mut scratch = EvalScratch::default();
        self.eval_with(&mut scratch, inputs, params)
    }

    pub fn eval_with(
        &self,
        scratch: &mut EvalScratch,
        inputs: &Bindings,
        params: &ParamStore,
    ) -> Result<f64, EvalError> {
        self.forward(&mut scratch.vals, inputs, params)?;
        Ok(scratch.vals[(self.ops.len() - 1) * self.comps])
    }

    /// Evaluate value plus all carried input partials in one pass.
    pub fn eval_jet(&self, inputs: &Bindings, params: &ParamStore) -> Result<Jet, EvalError> {
        let mut scratch = EvalScratch::default();
        self.eval_jet_with(&mut scratch, inputs, params)
    }

    pub fn eval_jet_with(
        &self,
        scratch: &mut EvalScratch,
        inputs: &Bindings,
        params: &ParamStore,
    ) -> Result<Jet, EvalError> {
        self.forward(&mut scratch.vals, inputs, params)?;
        let root = (self.ops.len() - 1) * self.comps;
        Ok(Jet {
            comps: scratch.vals[root..root + self.comps].to_vec(),
            axes: self.axes.clone(),
            offsets: self.axis_off.clone(),
        })
    }

    /// Value and gradient with respect to every parameter in the store.
    pub fn grad_params(
        &self,
        inputs: &Bindings,
        params: &ParamStore,
    ) -> Result<(f64, Vec<f64>), EvalError> {
        let mut scratch = EvalScratch::default();
        let mut grad = vec![0.0; params.len()];
        let v = self.grad_params_with(&mut scratch, inputs, params, &mut grad)?;
        Ok((v, grad))
    }

    /// Like [`CompiledExpr::grad_params`], accumulating into a caller-owned
    /// gradient buffer (which must be aligned with the store).
    pub fn grad_params_with(
        &self,
        scratch: &mut EvalScratch,
        inputs: &Bindings,
        params: &ParamStore,
        grad: &mut [f64],
    ) -> Result<f64, EvalError> {
        assert_eq!(grad.len(), params.len(), "gradient buffer misaligned");
        self.forward(&mut scratch.vals, inputs, params)?;
        let c = self.comps;
        let n = self.ops.len();
        let vals = &scratch.vals;
        let adj = &mut scratch.adj;
        adj.clear();
        adj.resize(n * c, 0.0);
        adj[(n - 1) * c] = 1.0;

        for i in (0..n).rev() {
            // Split so we can read this slot's adjoint while writing inputs'.
            let (aprev, arest) = adj.split_at_mut(i * c);
            let oadj = &arest[..c];
            match &self.ops[i] {
                TOp::Const { .. } | TOp::Input { .. } => {}
                TOp::Param { id } => {
                    grad[id.index()] += oadj[0];
                }
                TOp::Unary { op, a } => {
                    let av = &vals[*a as usize * c..*a as usize * c + c];
                    let aadj = &mut aprev[*a as usize * c..*a as usize * c + c];
                    let (_, f1, f2, f3) = unary_d3(*op, av[0]);
                    let mut v0 = f1 * oadj[0];
                    for (k, (_, ord)) in self.axes.iter().enumerate() {
                        let o1 = self.axis_off[k];
                        let d1 = av[o1];
                        v0 += f2 * d1 * oadj[o1];
                        aadj[o1] += f1 * oadj[o1];
                        if *ord >= 2 {
                            let od2 = oadj[o1 + 1];
                            v0 += (f3 * d1 * d1 + f2 * av[o1 + 1]) * od2;
                            aadj[o1] += 2.0 * f2 * d1 * od2;
                            aadj[o1 + 1] += f1 * od2;
                        }
                    }
                    aadj[0] += v0;
                }
                TOp::Binary { op, a, b } => {
                    let (ai, bi) = (*a as usize, *b as usize);
                    let av = &vals[ai * c..ai * c + c];
                    let bv = &vals[bi * c..bi * c + c];
                    use super::BinaryOp::*;
                    match op {
                        Add => {
                            for j in 0..c {
                                aprev[ai * c + j] += oadj[j];
                                aprev[bi * c + j] += oadj[j];
                            }
                        }
                        Sub => {
                            for j in 0..c {
                                aprev[ai * c + j] += oadj[j];
                                aprev[bi * c + j] -= oadj[j];
                            }
                        }
                        Mul => {
                            let mut a0 = bv[0] * oadj[0];
                            let mut b0 = av[0] * oadj[0];
                            for (k, (_, ord)) in self.axes.iter().enumerate() {
                                let o1 = self.axis_off[k];
                                aprev[ai * c + o1] += bv[0] * oadj[o1];
                                a0 += bv[o1] * oadj[o1];
                                aprev[bi * c + o1] += av[0] * oadj[o1];
                                b0 += av[o1] * oadj[o1];
                                if *ord >= 2 {
                                    let od2 = oadj[o1 + 1];
                                    aprev[ai * c + o1 + 1] += bv[0] * od2;
                                    aprev[ai * c + o1] += 2.0 * bv[o1] * od2;
                                    a0 += bv[o1 + 1] * od2;
                                    aprev[bi * c + o1 + 1] += av[0] * od2;
                                    aprev[bi * c + o1] += 2.0 * av[o1] * od2;
                                    b0 += av[o1 + 1] * od2;
                                }
                            }
                            aprev[ai * c] += a0;
                            aprev[bi * c] += b0;
                        }
                        Div => {
                            // Transpose of the sequential forward rules,
                            // processed deepest component first; q denotes
                            // the stored output jet.
                            let qv = &vals[i * c..i * c + c];
                            let inv_b = 1.0 / bv[0];
                            let mut q0adj = oadj[0];
                            for (k, (_, ord)) in self.axes.iter().enumerate() {
                                let o1 = self.axis_off[k];
                                let mut qd1adj = oadj[o1];
                                if *ord >= 2 {
                                    let od2 = oadj[o1 + 1];
                                    aprev[ai * c + o1 + 1] += od2 * inv_b;
                                    qd1adj += -2.0 * bv[o1] * inv_b * od2;
                                    q0adj += -bv[o1 + 1] * inv_b * od2;
                                    aprev[bi * c + o1] += -2.0 * qv[o1] * inv_b * od2;
                                    aprev[bi * c + o1 + 1] += -qv[0] * inv_b * od2;
                                    aprev[bi * c] += -qv[o1 + 1] * inv_b * od2;
                                }
                                aprev[ai * c + o1] += qd1adj * inv_b;
                                q0adj += -bv[o1] * inv_b * qd1adj;
                                aprev[bi * c + o1] += -qv[0] * inv_b * qd1adj;
                                aprev[bi * c] += -qv[o1] * inv_b * qd1adj;
                            }
                            aprev[ai * c] += q0adj * inv_b;
                            aprev[bi * c] += -qv[0] * inv_b * q0adj;
                        }
                    }
                }
                TOp::Deriv { a, axis, order } => {
                    let k = *axis as usize;
                    let o1 = self.axis_off[k];
                    let aadj = &mut aprev[*a as usize * c..*a as usize * c + c];
                    aadj[o1 + (*order as usize - 1)] += oadj[0];
                    if *order == 1 && self.axes[k].1 >= 2 {
                        aadj[o1 + 1] += oadj[o1];
                    }
                }
            }
        }

        for (i, g) in grad.iter().enumerate() {
            if !g.is_finite() {
                return Err(EvalError::NonFiniteGradient {
                    block: params.block_name_of_index(i).to_string(),
                });
            }
        }
        Ok(vals[(n - 1) * c])
    }

    /// Human-readable path from the root to the slot, for fault reports.
    fn node_path(&self, slot: usize) -> String {
        let target = Arc::as_ptr(&self.exprs[slot].0);
        let mut path: Vec<String> = Vec::new();
        let mut dead_ends: std::collections::HashSet<*const Node> = Default::default();
        if find_path(&self.root, target, &mut path, &mut dead_ends) {
            path.reverse();
            format!("{} (in `{}`)", path.join(" → "), self.exprs[slot])
        } else {
            format!("`{}`", self.exprs[slot])
        }
    }
}

fn find_path(
    e: &Expr,
    target: *const Node,
    path: &mut Vec<String>,
    dead_ends: &mut std::collections::HashSet<*const Node>,
) -> bool {
    let key = Arc::as_ptr(&e.0);
    if key == target {
        path.push(kind_name(e.node()).to_string());
        return true;
    }
    if dead_ends.contains(&key) {
        return false;
    }
    let children: Vec<&Expr> = match e.node() {
        Node::Unary(_, a) => vec![a],
        Node::Binary(_, a, b) => vec![a, b],
        Node::Deriv { child, .. } => vec![child],
        _ => vec![],
    };
    for ch in children {
        if find_path(ch, target, path, dead_ends) {
            path.push(kind_name(e.node()).to_string());
            return true;
        }
    }
    dead_ends.insert(key);
    false
}

fn kind_name(n: &Node) -> &'static str {
    match n {
        Node::Const(_) => "const",
        Node::Input(_) => "input",
        Node::Param(_) => "param",
        Node::Unary(op, _) => op.name(),
        Node::Binary(op, _, _) => match op {
            super::BinaryOp::Add => "add",
            super::BinaryOp::Sub => "sub",
            super::BinaryOp::Mul => "mul",
            super::BinaryOp::Div => "div",
        },
        Node::Deriv { .. } => "deriv",
    }
}

/// x^(n-k) multiplied by the falling-factorial coefficient n(n-1)…(n-k+1).
/// Returns exactly 0 when the coefficient vanishes, so 0^negative never
/// gets multiplied by 0.
fn dpow(x: f64, n: i32, k: u32) -> f64 {
    let mut coeff = 1.0f64;
    let mut m = n;
    for _ in 0..k {
        coeff *= m as f64;
        m -= 1;
    }
    if coeff == 0.0 {
        return 0.0;
    }
    coeff * x.powi(n - k as i32)
}

/// Value and first three derivatives of each primitive at `x`.
fn unary_d3(op: UnaryOp, x: f64) -> (f64, f64, f64, f64) {
    match op {
        UnaryOp::Neg => (-x, -1.0, 0.0, 0.0),
        UnaryOp::Sin => {
            let (s, c) = x.sin_cos();
            (s, c, -s, -c)
        }
        UnaryOp::Cos => {
            let (s, c) = x.sin_cos();
            (c, -s, -c, s)
        }
        UnaryOp::Tanh => {
            let t = x.tanh();
            let t1 = 1.0 - t * t;
            let t2 = -2.0 * t * t1;
            let t3 = -2.0 * t1 * t1 - 2.0 * t * t2;
            (t, t1, t2, t3)
        }
        UnaryOp::Exp => {
            let e = x.exp();
            (e, e, e, e)
        }
        UnaryOp::Abs => {
            let s = if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            };
            (x.abs(), s, 0.0, 0.0)
        }
        UnaryOp::Powi(n) => (x.powi(n), dpow(x, n, 1), dpow(x, n, 2), dpow(x, n, 3)),
        UnaryOp::Rsqrt => {
            let f = 1.0 / x.sqrt();
            let inv = 1.0 / x;
            (
                f,
                -0.5 * f * inv,
                0.75 * f * inv * inv,
                -1.875 * f * inv * inv * inv,
            )
        }
        UnaryOp::Atan => {
            let d = 1.0 + x * x;
            (
                x.atan(),
                1.0 / d,
                -2.0 * x / (d * d),
                (6.0 * x * x - 2.0) / (d * d * d),
            )
        }
        UnaryOp::Clip01 => {
            let f1 = if (0.0..=1.0).contains(&x) { 1.0 } else { 0.0 };
            (x.clamp(0.0, 1.0), f1, 0.0, 0.0)
        }
    }
}
