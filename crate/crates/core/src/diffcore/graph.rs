use std::sync::Arc;

use thiserror::Error;

use crate::spline::{silu, silu_derivative, silu_second_derivative, SplineGrid};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("non-finite value {value} at node {node} ({op})")]
    NonFinite {
        node: usize,
        op: &'static str,
        value: f64,
    },
    #[error("backward called on node {root} before forward evaluated it")]
    NotEvaluated { root: usize },
    #[error("node {0} does not belong to this graph")]
    UnknownNode(usize),
}

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(u32);

impl Var {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone)]
enum Op {
    Input,
    Const,
    Param(usize),
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Scale(f64),
    Offset(f64),
    Square,
    Sqrt,
    Exp,
    Ln,
    Sin,
    Cos,
    Tanh,
    Silu,
    SiluDerivative,
    Sum,
    /// Σ a_i b_i; parents are a_0..a_{n-1} followed by b_0..b_{n-1}.
    Dot,
    /// Σ c_i B^{(order)}_i(x) with the grid's boundary extension; parents are x, c_0..c_{n-1}.
    Spline { grid: Arc<SplineGrid>, order: u8 },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Const => "const",
            Op::Param(_) => "param",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Div => "div",
            Op::Neg => "neg",
            Op::Scale(_) => "scale",
            Op::Offset(_) => "offset",
            Op::Square => "square",
            Op::Sqrt => "sqrt",
            Op::Exp => "exp",
            Op::Ln => "ln",
            Op::Sin => "sin",
            Op::Cos => "cos",
            Op::Tanh => "tanh",
            Op::Silu => "silu",
            Op::SiluDerivative => "silu'",
            Op::Sum => "sum",
            Op::Dot => "dot",
            Op::Spline { .. } => "spline",
        }
    }

    fn is_leaf(&self) -> bool {
        matches!(self, Op::Input | Op::Const | Op::Param(_))
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    start: u32,
    len: u32,
}

/// Reverse-mode scalar computation graph.
///
/// Nodes are appended in construction order, which is a topological order.
/// Values of interior nodes are computed lazily by [`Graph::forward`]; leaf
/// values are known at construction.
#[derive(Debug, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
    parents: Vec<Var>,
    values: Vec<f64>,
    evaluated: usize,
    theta: Vec<f64>,
    param_vars: Vec<Option<Var>>,
}

/// Adjoints produced by one reverse pass.
#[derive(Debug, Clone)]
pub struct Adjoints {
    node_adjoints: Vec<f64>,
    params: Vec<f64>,
}

impl Adjoints {
    /// ∂root/∂θ for every parameter of the graph (zero for parameters not used).
    pub fn wrt_params(&self) -> &[f64] {
        &self.params
    }

    pub fn into_param_gradient(self) -> Vec<f64> {
        self.params
    }

    /// ∂root/∂v for any node reachable from the root (zero otherwise).
    pub fn wrt(&self, v: Var) -> f64 {
        self.node_adjoints.get(v.index()).copied().unwrap_or(0.0)
    }
}

impl Graph {
    /// Graph over the parameter vector `theta`; parameter leaves are created on demand.
    pub fn new(theta: &[f64]) -> Self {
        Self {
            nodes: Vec::new(),
            parents: Vec::new(),
            values: Vec::new(),
            evaluated: 0,
            theta: theta.to_vec(),
            param_vars: vec![None; theta.len()],
        }
    }

    pub fn without_params() -> Self {
        Self::new(&[])
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn param_count(&self) -> usize {
        self.theta.len()
    }

    fn push(&mut self, op: Op, parents: &[Var], value: f64) -> Var {
        let id = Var(self.nodes.len() as u32);
        let start = self.parents.len() as u32;
        self.parents.extend_from_slice(parents);
        let leaf = op.is_leaf();
        self.nodes.push(Node {
            op,
            start,
            len: parents.len() as u32,
        });
        self.values.push(value);
        if leaf && self.evaluated + 1 == self.nodes.len() {
            self.evaluated += 1;
        }
        id
    }

    pub fn input(&mut self, value: f64) -> Var {
        self.push(Op::Input, &[], value)
    }

    pub fn inputs(&mut self, values: &[f64]) -> Vec<Var> {
        values.iter().map(|&v| self.input(v)).collect()
    }

    pub fn constant(&mut self, value: f64) -> Var {
        self.push(Op::Const, &[], value)
    }

    /// Leaf for parameter `index`; repeated calls return the same node.
    ///
    /// Panics if `index` is out of range of the graph's parameter vector.
    pub fn param(&mut self, index: usize) -> Var {
        if let Some(v) = self.param_vars[index] {
            return v;
        }
        let v = self.push(Op::Param(index), &[], self.theta[index]);
        self.param_vars[index] = Some(v);
        v
    }

    pub fn params(&mut self, range: std::ops::Range<usize>) -> Vec<Var> {
        range.map(|i| self.param(i)).collect()
    }

    /// Overwrites the value of an input leaf and invalidates cached values downstream.
    pub fn set_input(&mut self, v: Var, value: f64) {
        let i = v.index();
        assert!(matches!(self.nodes[i].op, Op::Input), "set_input on a non-input node");
        self.values[i] = value;
        self.evaluated = self.evaluated.min(i + 1);
    }

    fn interior(&mut self, op: Op, parents: &[Var]) -> Var {
        self.push(op, parents, f64::NAN)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.interior(Op::Add, &[a, b])
    }
    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.interior(Op::Sub, &[a, b])
    }
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.interior(Op::Mul, &[a, b])
    }
    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.interior(Op::Div, &[a, b])
    }
    pub fn neg(&mut self, a: Var) -> Var {
        self.interior(Op::Neg, &[a])
    }
    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        self.interior(Op::Scale(factor), &[a])
    }
    pub fn offset(&mut self, a: Var, shift: f64) -> Var {
        self.interior(Op::Offset(shift), &[a])
    }
    pub fn square(&mut self, a: Var) -> Var {
        self.interior(Op::Square, &[a])
    }
    pub fn sqrt(&mut self, a: Var) -> Var {
        self.interior(Op::Sqrt, &[a])
    }
    pub fn exp(&mut self, a: Var) -> Var {
        self.interior(Op::Exp, &[a])
    }
    pub fn ln(&mut self, a: Var) -> Var {
        self.interior(Op::Ln, &[a])
    }
    pub fn sin(&mut self, a: Var) -> Var {
        self.interior(Op::Sin, &[a])
    }
    pub fn cos(&mut self, a: Var) -> Var {
        self.interior(Op::Cos, &[a])
    }
    pub fn tanh(&mut self, a: Var) -> Var {
        self.interior(Op::Tanh, &[a])
    }
    pub fn silu(&mut self, a: Var) -> Var {
        self.interior(Op::Silu, &[a])
    }
    pub fn silu_derivative(&mut self, a: Var) -> Var {
        self.interior(Op::SiluDerivative, &[a])
    }

    /// n-ary sum; the empty sum is the constant 0.
    pub fn sum(&mut self, terms: &[Var]) -> Var {
        match terms {
            [] => self.constant(0.0),
            [only] => *only,
            _ => self.interior(Op::Sum, terms),
        }
    }

    pub fn dot(&mut self, a: &[Var], b: &[Var]) -> Var {
        assert_eq!(a.len(), b.len(), "dot operands differ in length");
        if a.is_empty() {
            return self.constant(0.0);
        }
        let mut parents = Vec::with_capacity(2 * a.len());
        parents.extend_from_slice(a);
        parents.extend_from_slice(b);
        self.interior(Op::Dot, &parents)
    }

    /// `order`-th derivative of the spline Σ c_i B_i at `x`, including the
    /// linear continuation outside the grid domain.
    pub fn spline(&mut self, grid: &Arc<SplineGrid>, order: u8, x: Var, coefficients: &[Var]) -> Var {
        assert_eq!(
            coefficients.len(),
            grid.basis_count(),
            "coefficient count does not match the grid basis"
        );
        let mut parents = Vec::with_capacity(coefficients.len() + 1);
        parents.push(x);
        parents.extend_from_slice(coefficients);
        self.interior(
            Op::Spline {
                grid: Arc::clone(grid),
                order,
            },
            &parents,
        )
    }

    /// Cached value, if the node has been evaluated (leaves always are).
    pub fn value(&self, v: Var) -> Option<f64> {
        let i = v.index();
        if i < self.evaluated || self.nodes.get(i).is_some_and(|n| n.op.is_leaf()) {
            self.values.get(i).copied()
        } else {
            None
        }
    }

    fn parent_slice(&self, node: &Node) -> &[Var] {
        &self.parents[node.start as usize..(node.start + node.len) as usize]
    }

    /// Evaluates every node up to and including `root` and returns its value.
    pub fn forward(&mut self, root: Var) -> Result<f64, GraphError> {
        let r = root.index();
        if r >= self.nodes.len() {
            return Err(GraphError::UnknownNode(r));
        }
        for i in self.evaluated..=r {
            let node = &self.nodes[i];
            let ps = self.parent_slice(node);
            let val = |k: usize| self.values[ps[k].index()];
            let value = match &node.op {
                Op::Input | Op::Const | Op::Param(_) => self.values[i],
                Op::Add => val(0) + val(1),
                Op::Sub => val(0) - val(1),
                Op::Mul => val(0) * val(1),
                Op::Div => val(0) / val(1),
                Op::Neg => -val(0),
                Op::Scale(c) => c * val(0),
                Op::Offset(c) => val(0) + c,
                Op::Square => val(0) * val(0),
                Op::Sqrt => val(0).sqrt(),
                Op::Exp => val(0).exp(),
                Op::Ln => val(0).ln(),
                Op::Sin => val(0).sin(),
                Op::Cos => val(0).cos(),
                Op::Tanh => val(0).tanh(),
                Op::Silu => silu(val(0)),
                Op::SiluDerivative => silu_derivative(val(0)),
                Op::Sum => ps.iter().map(|p| self.values[p.index()]).sum(),
                Op::Dot => {
                    let n = ps.len() / 2;
                    (0..n).map(|k| val(k) * val(n + k)).sum()
                }
                Op::Spline { grid, order } => {
                    let local = grid.local_basis(val(0), *order as usize);
                    local
                        .values()
                        .iter()
                        .enumerate()
                        .map(|(m, b)| b * val(1 + local.first() + m))
                        .sum()
                }
            };
            if !value.is_finite() {
                return Err(GraphError::NonFinite {
                    node: i,
                    op: node.op.name(),
                    value,
                });
            }
            self.values[i] = value;
        }
        self.evaluated = self.evaluated.max(r + 1);
        Ok(self.values[r])
    }

    /// Reverse pass from `root`; requires a prior [`Graph::forward`] covering `root`.
    pub fn backward(&self, root: Var) -> Result<Adjoints, GraphError> {
        let r = root.index();
        if r >= self.nodes.len() {
            return Err(GraphError::UnknownNode(r));
        }
        if r >= self.evaluated {
            return Err(GraphError::NotEvaluated { root: r });
        }
        let mut adj = vec![0.0; r + 1];
        adj[r] = 1.0;
        let mut params = vec![0.0; self.theta.len()];
        for i in (0..=r).rev() {
            let a = adj[i];
            if a == 0.0 {
                continue;
            }
            let node = &self.nodes[i];
            let ps = self.parent_slice(node);
            let val = |k: usize| self.values[ps[k].index()];
            let out = self.values[i];
            match &node.op {
                Op::Input | Op::Const => {}
                Op::Param(k) => params[*k] += a,
                Op::Add => {
                    adj[ps[0].index()] += a;
                    adj[ps[1].index()] += a;
                }
                Op::Sub => {
                    adj[ps[0].index()] += a;
                    adj[ps[1].index()] -= a;
                }
                Op::Mul => {
                    let (x, y) = (val(0), val(1));
                    adj[ps[0].index()] += a * y;
                    adj[ps[1].index()] += a * x;
                }
                Op::Div => {
                    let y = val(1);
                    adj[ps[0].index()] += a / y;
                    adj[ps[1].index()] -= a * out / y;
                }
                Op::Neg => adj[ps[0].index()] -= a,
                Op::Scale(c) => adj[ps[0].index()] += a * c,
                Op::Offset(_) => adj[ps[0].index()] += a,
                Op::Square => adj[ps[0].index()] += 2.0 * a * val(0),
                Op::Sqrt => adj[ps[0].index()] += a * 0.5 / out,
                Op::Exp => adj[ps[0].index()] += a * out,
                Op::Ln => adj[ps[0].index()] += a / val(0),
                Op::Sin => adj[ps[0].index()] += a * val(0).cos(),
                Op::Cos => adj[ps[0].index()] -= a * val(0).sin(),
                Op::Tanh => adj[ps[0].index()] += a * (1.0 - out * out),
                Op::Silu => adj[ps[0].index()] += a * silu_derivative(val(0)),
                Op::SiluDerivative => adj[ps[0].index()] += a * silu_second_derivative(val(0)),
                Op::Sum => {
                    for p in ps {
                        adj[p.index()] += a;
                    }
                }
                Op::Dot => {
                    let n = ps.len() / 2;
                    for k in 0..n {
                        let (x, y) = (val(k), val(n + k));
                        adj[ps[k].index()] += a * y;
                        adj[ps[n + k].index()] += a * x;
                    }
                }
                Op::Spline { grid, order } => {
                    let x = val(0);
                    let order = *order as usize;
                    let local = grid.local_basis(x, order);
                    for (m, b) in local.values().iter().enumerate() {
                        adj[ps[1 + local.first() + m].index()] += a * b;
                    }
                    let slope = grid.local_basis(x, order + 1);
                    let dx: f64 = slope
                        .values()
                        .iter()
                        .enumerate()
                        .map(|(m, b)| b * val(1 + slope.first() + m))
                        .sum();
                    adj[ps[0].index()] += a * dx;
                }
            }
        }
        Ok(Adjoints {
            node_adjoints: adj,
            params,
        })
    }
}
