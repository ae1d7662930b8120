//! Scalar computation graph with reverse-mode differentiation.
//!
//! A [`Graph`] is a tape of primitive scalar operations. Values are computed
//! eagerly as nodes are appended, and the whole tape can be re-run with
//! [`Graph::evaluate`] after leaf values change, so a graph with a fixed
//! structure can be reused across optimizer iterations.
//!
//! Spatial derivatives of a network output are obtained by carrying a
//! [`DerivativeBundle`] (value, first and second derivative) through the
//! network, with every component built from ordinary graph nodes. A reverse
//! sweep seeded at `dx` or `dxx` therefore differentiates the spatial
//! derivative with respect to the parameters.

use thiserror::Error;

/// Denominators smaller than this in magnitude are rejected during checked evaluation.
pub const MIN_DENOMINATOR: f64 = 1e-300;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("non-finite value at node {node} ({op})")]
    NonFinite { node: usize, op: &'static str },
    #[error("division by near-zero denominator at node {node}")]
    DivisionByZero { node: usize },
    #[error("node {0} does not belong to this graph")]
    UnknownNode(usize),
    #[error("node {0} is not an input or parameter leaf")]
    NotALeaf(usize),
}

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(u32);

impl Var {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LeafKind {
    Input,
    Parameter,
    Constant,
}

#[derive(Debug, Clone, Copy)]
enum Op {
    Leaf(LeafKind),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Neg(Var),
    Tanh(Var),
    Powi(Var, i32),
    Abs(Var),
    Scale(Var, f64),
    Offset(Var, f64),
    /// Sum of `len` operands stored from `start` in the operand table.
    Sum { start: u32, len: u32 },
    /// Weighted sum; coefficients share indices with the operand table.
    LinComb { start: u32, len: u32 },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf(_) => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Neg(_) => "neg",
            Op::Tanh(_) => "tanh",
            Op::Powi(..) => "powi",
            Op::Abs(_) => "abs",
            Op::Scale(..) => "scale",
            Op::Offset(..) => "offset",
            Op::Sum { .. } => "sum",
            Op::LinComb { .. } => "lincomb",
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Graph {
    ops: Vec<Op>,
    values: Vec<f64>,
    operands: Vec<Var>,
    coeffs: Vec<f64>,
    params: Vec<Var>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    fn push(&mut self, op: Op) -> Var {
        let id = Var(self.ops.len() as u32);
        self.ops.push(op);
        self.values.push(0.0);
        self.values[id.index()] = self.compute(id.index());
        id
    }

    fn leaf(&mut self, kind: LeafKind, value: f64) -> Var {
        let id = Var(self.ops.len() as u32);
        self.ops.push(Op::Leaf(kind));
        self.values.push(value);
        id
    }

    pub fn input(&mut self, value: f64) -> Var {
        self.leaf(LeafKind::Input, value)
    }

    pub fn parameter(&mut self, value: f64) -> Var {
        let v = self.leaf(LeafKind::Parameter, value);
        self.params.push(v);
        v
    }

    pub fn constant(&mut self, value: f64) -> Var {
        self.leaf(LeafKind::Constant, value)
    }

    /// Parameter leaves in registration order.
    pub fn parameters(&self) -> &[Var] {
        &self.params
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.push(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.push(Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.push(Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.push(Op::Div(a, b))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.push(Op::Neg(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.push(Op::Tanh(a))
    }

    pub fn powi(&mut self, a: Var, n: i32) -> Var {
        self.push(Op::Powi(a, n))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.push(Op::Abs(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.push(Op::Mul(a, a))
    }

    /// `c * a`
    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.push(Op::Scale(a, c))
    }

    /// `a + c`
    pub fn offset(&mut self, a: Var, c: f64) -> Var {
        self.push(Op::Offset(a, c))
    }

    pub fn sum(&mut self, terms: &[Var]) -> Var {
        let start = self.operands.len() as u32;
        self.operands.extend_from_slice(terms);
        self.coeffs.resize(self.operands.len(), 1.0);
        self.push(Op::Sum {
            start,
            len: terms.len() as u32,
        })
    }

    /// `Σ c_k v_k`
    pub fn linear_combination(&mut self, terms: &[(f64, Var)]) -> Var {
        let start = self.operands.len() as u32;
        for &(c, v) in terms {
            self.operands.push(v);
            self.coeffs.push(c);
        }
        self.push(Op::LinComb {
            start,
            len: terms.len() as u32,
        })
    }

    pub fn value(&self, v: Var) -> f64 {
        self.values[v.index()]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn leaf_kind(&self, v: Var) -> Option<LeafKind> {
        match self.ops.get(v.index()) {
            Some(Op::Leaf(kind)) => Some(*kind),
            _ => None,
        }
    }

    /// Changes the value of an input or parameter leaf. Dependent nodes keep
    /// stale values until [`Graph::evaluate`] is called.
    pub fn set_value(&mut self, v: Var, value: f64) -> Result<(), GraphError> {
        match self.ops.get(v.index()) {
            None => Err(GraphError::UnknownNode(v.index())),
            Some(Op::Leaf(LeafKind::Input | LeafKind::Parameter)) => {
                self.values[v.index()] = value;
                Ok(())
            }
            Some(_) => Err(GraphError::NotALeaf(v.index())),
        }
    }

    #[inline]
    fn compute(&self, i: usize) -> f64 {
        let val = |v: Var| self.values[v.index()];
        match self.ops[i] {
            Op::Leaf(_) => self.values[i],
            Op::Add(a, b) => val(a) + val(b),
            Op::Sub(a, b) => val(a) - val(b),
            Op::Mul(a, b) => val(a) * val(b),
            Op::Div(a, b) => val(a) / val(b),
            Op::Neg(a) => -val(a),
            Op::Tanh(a) => val(a).tanh(),
            Op::Powi(a, n) => val(a).powi(n),
            Op::Abs(a) => val(a).abs(),
            Op::Scale(a, c) => c * val(a),
            Op::Offset(a, c) => val(a) + c,
            Op::Sum { start, len } => {
                let (s, e) = (start as usize, (start + len) as usize);
                self.operands[s..e].iter().map(|&v| val(v)).sum()
            }
            Op::LinComb { start, len } => {
                let (s, e) = (start as usize, (start + len) as usize);
                self.operands[s..e]
                    .iter()
                    .zip(&self.coeffs[s..e])
                    .map(|(&v, &c)| c * val(v))
                    .sum()
            }
        }
    }

    /// Re-runs the forward pass over the whole tape, checking every node.
    pub fn evaluate(&mut self) -> Result<(), GraphError> {
        for i in 0..self.ops.len() {
            let op = self.ops[i];
            if let Op::Div(_, b) = op {
                if self.values[b.index()].abs() < MIN_DENOMINATOR {
                    return Err(GraphError::DivisionByZero { node: i });
                }
            }
            let v = self.compute(i);
            if !v.is_finite() {
                return Err(GraphError::NonFinite {
                    node: i,
                    op: op.name(),
                });
            }
            self.values[i] = v;
        }
        Ok(())
    }

    /// Adjoints of every node with respect to `seed`, from one reverse sweep.
    pub fn gradient(&self, seed: Var) -> Result<Gradient, GraphError> {
        let mut adjoints = Vec::new();
        self.gradient_into(seed, &mut adjoints)?;
        Ok(Gradient { adjoints })
    }

    /// Like [`Graph::gradient`] but reuses `adjoints` as the output buffer.
    pub fn gradient_into(&self, seed: Var, adjoints: &mut Vec<f64>) -> Result<(), GraphError> {
        let n = self.ops.len();
        if seed.index() >= n {
            return Err(GraphError::UnknownNode(seed.index()));
        }
        adjoints.clear();
        adjoints.resize(n, 0.0);
        adjoints[seed.index()] = 1.0;
        let vals = &self.values;
        for i in (0..=seed.index()).rev() {
            let g = adjoints[i];
            if g == 0.0 {
                continue;
            }
            match self.ops[i] {
                Op::Leaf(_) => {}
                Op::Add(a, b) => {
                    adjoints[a.index()] += g;
                    adjoints[b.index()] += g;
                }
                Op::Sub(a, b) => {
                    adjoints[a.index()] += g;
                    adjoints[b.index()] -= g;
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (vals[a.index()], vals[b.index()]);
                    adjoints[a.index()] += g * vb;
                    adjoints[b.index()] += g * va;
                }
                Op::Div(a, b) => {
                    let vb = vals[b.index()];
                    adjoints[a.index()] += g / vb;
                    adjoints[b.index()] -= g * vals[i] / vb;
                }
                Op::Neg(a) => adjoints[a.index()] -= g,
                Op::Tanh(a) => {
                    let t = vals[i];
                    adjoints[a.index()] += g * (1.0 - t * t);
                }
                Op::Powi(a, p) => {
                    if p != 0 {
                        adjoints[a.index()] += g * p as f64 * vals[a.index()].powi(p - 1);
                    }
                }
                Op::Abs(a) => {
                    let va = vals[a.index()];
                    // subgradient 0 at the kink
                    adjoints[a.index()] += g * if va > 0.0 {
                        1.0
                    } else if va < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                }
                Op::Scale(a, c) => adjoints[a.index()] += g * c,
                Op::Offset(a, _) => adjoints[a.index()] += g,
                Op::Sum { start, len } => {
                    let (s, e) = (start as usize, (start + len) as usize);
                    for &v in &self.operands[s..e] {
                        adjoints[v.index()] += g;
                    }
                }
                Op::LinComb { start, len } => {
                    let (s, e) = (start as usize, (start + len) as usize);
                    for (&v, &c) in self.operands[s..e].iter().zip(&self.coeffs[s..e]) {
                        adjoints[v.index()] += g * c;
                    }
                }
            }
        }
        Ok(())
    }

    /// `∂seed/∂p` for every parameter leaf, in registration order.
    pub fn parameter_gradient(&self, seed: Var) -> Result<Vec<(Var, f64)>, GraphError> {
        let grad = self.gradient(seed)?;
        Ok(self.params.iter().map(|&p| (p, grad.wrt(p))).collect())
    }
}

#[derive(Debug, Clone)]
pub struct Gradient {
    adjoints: Vec<f64>,
}

impl Gradient {
    pub fn wrt(&self, v: Var) -> f64 {
        self.adjoints.get(v.index()).copied().unwrap_or(0.0)
    }

    pub fn adjoints(&self) -> &[f64] {
        &self.adjoints
    }
}

/// Value, first and second spatial derivative of a quantity, each a graph node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DerivativeBundle {
    pub value: Var,
    pub dx: Var,
    pub dxx: Var,
}

impl DerivativeBundle {
    /// The independent variable itself: `d/dx x = 1`.
    pub fn input(g: &mut Graph, x: Var) -> Self {
        let one = g.constant(1.0);
        let zero = g.constant(0.0);
        Self {
            value: x,
            dx: one,
            dxx: zero,
        }
    }

    pub fn constant(g: &mut Graph, c: Var) -> Self {
        let zero = g.constant(0.0);
        Self {
            value: c,
            dx: zero,
            dxx: zero,
        }
    }

    pub fn add(g: &mut Graph, a: Self, b: Self) -> Self {
        Self {
            value: g.add(a.value, b.value),
            dx: g.add(a.dx, b.dx),
            dxx: g.add(a.dxx, b.dxx),
        }
    }

    pub fn mul(g: &mut Graph, a: Self, b: Self) -> Self {
        let value = g.mul(a.value, b.value);
        let l = g.mul(a.dx, b.value);
        let r = g.mul(a.value, b.dx);
        let dx = g.add(l, r);
        let t0 = g.mul(a.dxx, b.value);
        let t1 = g.mul(a.dx, b.dx);
        let t2 = g.mul(a.value, b.dxx);
        let dxx = g.linear_combination(&[(1.0, t0), (2.0, t1), (1.0, t2)]);
        Self { value, dx, dxx }
    }

    /// Multiplication by a node that does not depend on `x`.
    pub fn scale_by(g: &mut Graph, w: Var, a: Self) -> Self {
        Self {
            value: g.mul(w, a.value),
            dx: g.mul(w, a.dx),
            dxx: g.mul(w, a.dxx),
        }
    }

    /// Sum of bundles plus an `x`-independent offset node.
    pub fn sum_with_offset(g: &mut Graph, terms: &[Self], offset: Var) -> Self {
        let mut vals: Vec<Var> = terms.iter().map(|t| t.value).collect();
        vals.push(offset);
        let d1: Vec<Var> = terms.iter().map(|t| t.dx).collect();
        let d2: Vec<Var> = terms.iter().map(|t| t.dxx).collect();
        Self {
            value: g.sum(&vals),
            dx: g.sum(&d1),
            dxx: g.sum(&d2),
        }
    }

    /// `tanh` with `(tanh a)' = s a'` and `(tanh a)'' = s a'' - 2 t s a'^2`, `s = 1 - t^2`.
    pub fn tanh(g: &mut Graph, a: Self) -> Self {
        let t = g.tanh(a.value);
        let t2 = g.square(t);
        let one = g.constant(1.0);
        let s = g.sub(one, t2);
        let dx = g.mul(s, a.dx);
        let sa2 = g.mul(s, a.dxx);
        let a1sq = g.square(a.dx);
        let ts = g.mul(t, s);
        let curv = g.mul(ts, a1sq);
        let dxx = g.linear_combination(&[(1.0, sa2), (-2.0, curv)]);
        Self { value: t, dx, dxx }
    }

    pub fn values(&self, g: &Graph) -> (f64, f64, f64) {
        (g.value(self.value), g.value(self.dx), g.value(self.dxx))
    }
}

/// Scalar arithmetic shared by plain `f64` code and graph construction, so a
/// formula written once can run on numbers or record itself on a tape.
pub trait Arith {
    type Value: Copy;
    fn constant(&mut self, c: f64) -> Self::Value;
    fn add(&mut self, a: Self::Value, b: Self::Value) -> Self::Value;
    fn sub(&mut self, a: Self::Value, b: Self::Value) -> Self::Value;
    fn mul(&mut self, a: Self::Value, b: Self::Value) -> Self::Value;
    fn div(&mut self, a: Self::Value, b: Self::Value) -> Self::Value;
    fn abs(&mut self, a: Self::Value) -> Self::Value;
    fn scale(&mut self, a: Self::Value, c: f64) -> Self::Value;
    fn offset(&mut self, a: Self::Value, c: f64) -> Self::Value;
    fn lincomb(&mut self, terms: &[(f64, Self::Value)]) -> Self::Value;
    fn square(&mut self, a: Self::Value) -> Self::Value {
        self.mul(a, a)
    }
}

/// [`Arith`] over bare `f64`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Plain;

impl Arith for Plain {
    type Value = f64;
    fn constant(&mut self, c: f64) -> f64 {
        c
    }
    fn add(&mut self, a: f64, b: f64) -> f64 {
        a + b
    }
    fn sub(&mut self, a: f64, b: f64) -> f64 {
        a - b
    }
    fn mul(&mut self, a: f64, b: f64) -> f64 {
        a * b
    }
    fn div(&mut self, a: f64, b: f64) -> f64 {
        a / b
    }
    fn abs(&mut self, a: f64) -> f64 {
        a.abs()
    }
    fn scale(&mut self, a: f64, c: f64) -> f64 {
        c * a
    }
    fn offset(&mut self, a: f64, c: f64) -> f64 {
        a + c
    }
    fn lincomb(&mut self, terms: &[(f64, f64)]) -> f64 {
        terms.iter().map(|&(c, v)| c * v).sum()
    }
}

impl Arith for Graph {
    type Value = Var;
    fn constant(&mut self, c: f64) -> Var {
        Graph::constant(self, c)
    }
    fn add(&mut self, a: Var, b: Var) -> Var {
        Graph::add(self, a, b)
    }
    fn sub(&mut self, a: Var, b: Var) -> Var {
        Graph::sub(self, a, b)
    }
    fn mul(&mut self, a: Var, b: Var) -> Var {
        Graph::mul(self, a, b)
    }
    fn div(&mut self, a: Var, b: Var) -> Var {
        Graph::div(self, a, b)
    }
    fn abs(&mut self, a: Var) -> Var {
        Graph::abs(self, a)
    }
    fn scale(&mut self, a: Var, c: f64) -> Var {
        Graph::scale(self, a, c)
    }
    fn offset(&mut self, a: Var, c: f64) -> Var {
        Graph::offset(self, a, c)
    }
    fn lincomb(&mut self, terms: &[(f64, Var)]) -> Var {
        Graph::linear_combination(self, terms)
    }
    fn square(&mut self, a: Var) -> Var {
        Graph::square(self, a)
    }
}
