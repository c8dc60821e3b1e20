//! Implements a scalar expression graph with reverse-mode gradients and
//! forward-over-reverse Hessians.
//!
//! Expressions are built node by node on a [`Graph`]; leaves stand for the
//! independent variables (inputs or parameters) and are bound to values in
//! creation order at evaluation time. The same graph evaluates in plain
//! `f64` arithmetic or in dual-number arithmetic, so a single reverse pass
//! yields the gradient and one dual-seeded reverse pass per direction yields
//! a Hessian column. This module favors clarity over speed and serves as the
//! derivative oracle for the closed-form materials and for cross-checking
//! the fast network kernels.

/// Identifies a node inside a [`Graph`]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(usize);

/// Holds the value, gradient, and optional Hessian of a scalar output
#[derive(Clone, Debug)]
pub struct DerivativeBundle {
    pub value: f64,
    pub gradient: Vec<f64>,
    pub hessian: Option<Vec<Vec<f64>>>,
}

#[derive(Clone, Copy, Debug)]
enum Op {
    Leaf(usize),
    Const(f64),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    Square(usize),
    Powi(usize, i32),
    Sqrt(usize),
    Exp(usize),
    Ln(usize),
    Tanh(usize),
    Sin(usize),
    Cos(usize),
    MaxZero(usize),
}

/// Holds a scalar expression graph in topological (creation) order
#[derive(Clone, Debug, Default)]
pub struct Graph {
    ops: Vec<Op>,
    num_leaves: usize,
}

/// Defines the arithmetic required to evaluate a graph; implemented by
/// `f64` and by [`Dual`] for forward-over-reverse second derivatives
pub trait Scalar: Copy {
    fn from_f64(v: f64) -> Self;
    fn value(self) -> f64;
    fn add(self, o: Self) -> Self;
    fn sub(self, o: Self) -> Self;
    fn mul(self, o: Self) -> Self;
    fn div(self, o: Self) -> Self;
    fn neg(self) -> Self;
    fn sqrt(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn tanh(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn powi(self, n: i32) -> Self;
    fn max_zero(self) -> Self;
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn value(self) -> f64 {
        self
    }
    fn add(self, o: Self) -> Self {
        self + o
    }
    fn sub(self, o: Self) -> Self {
        self - o
    }
    fn mul(self, o: Self) -> Self {
        self * o
    }
    fn div(self, o: Self) -> Self {
        self / o
    }
    fn neg(self) -> Self {
        -self
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
    fn powi(self, n: i32) -> Self {
        f64::powi(self, n)
    }
    fn max_zero(self) -> Self {
        if self > 0.0 {
            self
        } else {
            0.0
        }
    }
}

/// Holds a first-order dual number (value and one directional derivative)
#[derive(Clone, Copy, Debug, Default)]
pub struct Dual {
    pub re: f64,
    pub du: f64,
}

impl Dual {
    /// Returns a dual number seeded with a directional derivative
    pub fn seeded(re: f64, du: f64) -> Self {
        Dual { re, du }
    }
}

impl Scalar for Dual {
    fn from_f64(v: f64) -> Self {
        Dual { re: v, du: 0.0 }
    }
    fn value(self) -> f64 {
        self.re
    }
    fn add(self, o: Self) -> Self {
        Dual { re: self.re + o.re, du: self.du + o.du }
    }
    fn sub(self, o: Self) -> Self {
        Dual { re: self.re - o.re, du: self.du - o.du }
    }
    fn mul(self, o: Self) -> Self {
        Dual { re: self.re * o.re, du: self.du * o.re + self.re * o.du }
    }
    fn div(self, o: Self) -> Self {
        let re = self.re / o.re;
        Dual { re, du: (self.du - re * o.du) / o.re }
    }
    fn neg(self) -> Self {
        Dual { re: -self.re, du: -self.du }
    }
    fn sqrt(self) -> Self {
        let re = self.re.sqrt();
        Dual { re, du: 0.5 * self.du / re }
    }
    fn exp(self) -> Self {
        let re = self.re.exp();
        Dual { re, du: self.du * re }
    }
    fn ln(self) -> Self {
        Dual { re: self.re.ln(), du: self.du / self.re }
    }
    fn tanh(self) -> Self {
        let re = self.re.tanh();
        Dual { re, du: self.du * (1.0 - re * re) }
    }
    fn sin(self) -> Self {
        Dual { re: self.re.sin(), du: self.du * self.re.cos() }
    }
    fn cos(self) -> Self {
        Dual { re: self.re.cos(), du: -self.du * self.re.sin() }
    }
    fn powi(self, n: i32) -> Self {
        Dual { re: self.re.powi(n), du: self.du * f64::from(n) * self.re.powi(n - 1) }
    }
    fn max_zero(self) -> Self {
        // subgradient zero at the kink
        if self.re > 0.0 {
            self
        } else {
            Dual { re: 0.0, du: 0.0 }
        }
    }
}

impl Graph {
    /// Returns an empty graph
    pub fn new() -> Self {
        Graph::default()
    }

    /// Returns the number of nodes
    pub fn len(&self) -> usize {
        self.ops.len()
    }

    /// Returns true if the graph has no nodes
    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    /// Returns the number of leaves (independent variables)
    pub fn num_leaves(&self) -> usize {
        self.num_leaves
    }

    fn push(&mut self, op: Op) -> NodeId {
        self.ops.push(op);
        NodeId(self.ops.len() - 1)
    }

    /// Adds an independent variable; values bind in creation order
    pub fn leaf(&mut self) -> NodeId {
        let slot = self.num_leaves;
        self.num_leaves += 1;
        self.push(Op::Leaf(slot))
    }

    /// Adds a constant node
    pub fn constant(&mut self, value: f64) -> NodeId {
        self.push(Op::Const(value))
    }

    /// Adds a sum node
    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Add(a.0, b.0))
    }

    /// Adds a difference node
    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Sub(a.0, b.0))
    }

    /// Adds a product node
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Mul(a.0, b.0))
    }

    /// Adds a quotient node
    pub fn div(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Div(a.0, b.0))
    }

    /// Adds a negation node
    pub fn neg(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Neg(a.0))
    }

    /// Adds an elementwise square node
    pub fn square(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Square(a.0))
    }

    /// Adds an integer power node
    pub fn powi(&mut self, a: NodeId, n: i32) -> NodeId {
        self.push(Op::Powi(a.0, n))
    }

    /// Adds a square-root node
    pub fn sqrt(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Sqrt(a.0))
    }

    /// Adds an exponential node
    pub fn exp(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Exp(a.0))
    }

    /// Adds a natural-logarithm node
    pub fn ln(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Ln(a.0))
    }

    /// Adds a hyperbolic-tangent node
    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Tanh(a.0))
    }

    /// Adds a sine node
    pub fn sin(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Sin(a.0))
    }

    /// Adds a cosine node
    pub fn cos(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Cos(a.0))
    }

    /// Adds a max-with-zero node (rectifier); its derivative at the kink is
    /// the zero subgradient
    pub fn max_zero(&mut self, a: NodeId) -> NodeId {
        self.push(Op::MaxZero(a.0))
    }

    /// Runs a forward evaluation in the given scalar arithmetic
    fn forward<T: Scalar>(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.num_leaves, "leaf count mismatch");
        let mut values: Vec<T> = Vec::with_capacity(self.ops.len());
        for op in &self.ops {
            let v = match *op {
                Op::Leaf(slot) => x[slot],
                Op::Const(c) => T::from_f64(c),
                Op::Add(a, b) => values[a].add(values[b]),
                Op::Sub(a, b) => values[a].sub(values[b]),
                Op::Mul(a, b) => values[a].mul(values[b]),
                Op::Div(a, b) => values[a].div(values[b]),
                Op::Neg(a) => values[a].neg(),
                Op::Square(a) => values[a].mul(values[a]),
                Op::Powi(a, n) => values[a].powi(n),
                Op::Sqrt(a) => values[a].sqrt(),
                Op::Exp(a) => values[a].exp(),
                Op::Ln(a) => values[a].ln(),
                Op::Tanh(a) => values[a].tanh(),
                Op::Sin(a) => values[a].sin(),
                Op::Cos(a) => values[a].cos(),
                Op::MaxZero(a) => values[a].max_zero(),
            };
            values.push(v);
        }
        values
    }

    /// Runs a reverse pass from the output node, returning adjoints of all
    /// nodes in the same scalar arithmetic as the forward values
    fn reverse<T: Scalar>(&self, out: NodeId, values: &[T]) -> Vec<T> {
        let zero = T::from_f64(0.0);
        let one = T::from_f64(1.0);
        let half = T::from_f64(0.5);
        let two = T::from_f64(2.0);
        let mut adj = vec![zero; self.ops.len()];
        adj[out.0] = one;
        for (i, op) in self.ops.iter().enumerate().rev() {
            let w = adj[i];
            match *op {
                Op::Leaf(_) | Op::Const(_) => {}
                Op::Add(a, b) => {
                    adj[a] = adj[a].add(w);
                    adj[b] = adj[b].add(w);
                }
                Op::Sub(a, b) => {
                    adj[a] = adj[a].add(w);
                    adj[b] = adj[b].sub(w);
                }
                Op::Mul(a, b) => {
                    adj[a] = adj[a].add(w.mul(values[b]));
                    adj[b] = adj[b].add(w.mul(values[a]));
                }
                Op::Div(a, b) => {
                    adj[a] = adj[a].add(w.div(values[b]));
                    adj[b] = adj[b].sub(w.mul(values[i]).div(values[b]));
                }
                Op::Neg(a) => {
                    adj[a] = adj[a].sub(w);
                }
                Op::Square(a) => {
                    adj[a] = adj[a].add(w.mul(two).mul(values[a]));
                }
                Op::Powi(a, n) => {
                    let factor = T::from_f64(f64::from(n)).mul(values[a].powi(n - 1));
                    adj[a] = adj[a].add(w.mul(factor));
                }
                Op::Sqrt(a) => {
                    adj[a] = adj[a].add(w.mul(half).div(values[i]));
                }
                Op::Exp(a) => {
                    adj[a] = adj[a].add(w.mul(values[i]));
                }
                Op::Ln(a) => {
                    adj[a] = adj[a].add(w.div(values[a]));
                }
                Op::Tanh(a) => {
                    let factor = one.sub(values[i].mul(values[i]));
                    adj[a] = adj[a].add(w.mul(factor));
                }
                Op::Sin(a) => {
                    adj[a] = adj[a].add(w.mul(values[a].cos()));
                }
                Op::Cos(a) => {
                    adj[a] = adj[a].sub(w.mul(values[a].sin()));
                }
                Op::MaxZero(a) => {
                    if values[a].value() > 0.0 {
                        adj[a] = adj[a].add(w);
                    }
                }
            }
        }
        adj
    }
}

/// Evaluates the output node at the given leaf values
pub fn evaluate(graph: &Graph, out: NodeId, x: &[f64]) -> f64 {
    graph.forward(x)[out.0]
}

/// Evaluates the output together with its gradient with respect to all
/// leaves (one reverse pass)
pub fn evaluate_with_gradient(graph: &Graph, out: NodeId, x: &[f64]) -> DerivativeBundle {
    let values = graph.forward(x);
    let adj = graph.reverse(out, &values);
    let gradient = leaf_slots(graph).iter().map(|&i| adj[i]).collect();
    DerivativeBundle { value: values[out.0], gradient, hessian: None }
}

/// Evaluates the output with gradient and full Hessian, running one
/// dual-seeded reverse pass per input direction (forward-over-reverse)
pub fn evaluate_with_hessian(graph: &Graph, out: NodeId, x: &[f64]) -> DerivativeBundle {
    let n = graph.num_leaves();
    let slots = leaf_slots(graph);
    let mut gradient = vec![0.0; n];
    let mut hessian = vec![vec![0.0; n]; n];
    let mut value = 0.0;
    for dir in 0..n {
        let seeded: Vec<Dual> = x
            .iter()
            .enumerate()
            .map(|(i, &v)| Dual::seeded(v, if i == dir { 1.0 } else { 0.0 }))
            .collect();
        let values = graph.forward(&seeded);
        let adj = graph.reverse(out, &values);
        if dir == 0 {
            value = values[out.0].re;
            for (k, &slot) in slots.iter().enumerate() {
                gradient[k] = adj[slot].re;
            }
        }
        for (k, &slot) in slots.iter().enumerate() {
            hessian[k][dir] = adj[slot].du;
        }
    }
    if n == 0 {
        value = evaluate(graph, out, x);
    }
    DerivativeBundle { value, gradient, hessian: Some(hessian) }
}

/// Evaluates the gradient restricted to a chosen subset of leaves (for
/// parameter derivatives the subset is the parameter leaves)
pub fn parameter_gradient(graph: &Graph, out: NodeId, x: &[f64], params: &[NodeId]) -> Vec<f64> {
    let values = graph.forward(x);
    let adj = graph.reverse(out, &values);
    params.iter().map(|id| adj[id.0]).collect()
}

/// Returns node indices of all leaves ordered by binding slot
fn leaf_slots(graph: &Graph) -> Vec<usize> {
    let mut slots = vec![0_usize; graph.num_leaves()];
    for (i, op) in graph.ops.iter().enumerate() {
        if let Op::Leaf(slot) = op {
            slots[*slot] = i;
        }
    }
    slots
}

/// Approximates the gradient of a scalar function by central differences
/// with a relative step (verification utility)
pub fn central_difference_gradient<F>(f: F, x: &[f64], rel_step: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut grad = vec![0.0; x.len()];
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        let h = rel_step * (1.0 + x[i].abs());
        xp[i] = x[i] + h;
        let fp = f(&xp);
        xp[i] = x[i] - h;
        let fm = f(&xp);
        xp[i] = x[i];
        grad[i] = (fp - fm) / (2.0 * h);
    }
    grad
}

/// Approximates the Hessian of a scalar function by central differences
/// with a relative step (verification utility)
pub fn central_difference_hessian<F>(f: F, x: &[f64], rel_step: f64) -> Vec<Vec<f64>>
where
    F: Fn(&[f64]) -> f64,
{
    let n = x.len();
    let mut hess = vec![vec![0.0; n]; n];
    let mut xp = x.to_vec();
    let probe = |xp: &mut Vec<f64>, i: usize, di: f64, j: usize, dj: f64| -> f64 {
        xp[i] += di;
        xp[j] += dj;
        let v = f(xp);
        xp[i] -= di;
        xp[j] -= dj;
        v
    };
    for i in 0..n {
        let hi = rel_step * (1.0 + x[i].abs());
        for j in 0..n {
            let hj = rel_step * (1.0 + x[j].abs());
            let fpp = probe(&mut xp, i, hi, j, hj);
            let fpm = probe(&mut xp, i, hi, j, -hj);
            let fmp = probe(&mut xp, i, -hi, j, hj);
            let fmm = probe(&mut xp, i, -hi, j, -hj);
            hess[i][j] = (fpp - fpm - fmp + fmm) / (4.0 * hi * hj);
        }
    }
    hess
}

////////////////////////////////////////////////////////////////////////////////
