//! Reverse-mode automatic differentiation over small vector-valued graphs.
//!
//! A [`Graph`] is built eagerly: every node computes its forward value when
//! it is pushed, so node order is already a valid evaluation order and the
//! graph is acyclic by construction. [`Graph::gradient`] walks the nodes in
//! reverse and accumulates adjoints.
//!
//! The graph is generic over a [`Scalar`]. Running the very same reverse pass
//! over [`Dual`] numbers whose tangent is seeded with a direction `v` yields
//! the Hessian-vector product `∇²L·v` in the tangent part of the gradient
//! (forward-over-reverse). No finite differences are involved anywhere.
//!
//! Graphs are rebuilt for every evaluation; nothing is retained between calls.

use std::fmt;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

use crate::error::{Error, Result};

/// Numeric type flowing through a [`Graph`].
pub trait Scalar:
    Copy
    + fmt::Debug
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
{
    fn from_f64(x: f64) -> Self;
    /// Primal part.
    fn value(self) -> f64;
    fn tanh(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn is_finite(self) -> bool;

    fn zero() -> Self {
        Self::from_f64(0.0)
    }
}

impl Scalar for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn value(self) -> f64 {
        self
    }
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
}

/// Forward-mode dual number `re + eps·ε` with `ε² = 0`.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Dual {
    pub re: f64,
    pub eps: f64,
}

impl Dual {
    pub fn new(re: f64, eps: f64) -> Self {
        Dual { re, eps }
    }
}

impl Add for Dual {
    type Output = Dual;
    fn add(self, o: Dual) -> Dual {
        Dual::new(self.re + o.re, self.eps + o.eps)
    }
}

impl Sub for Dual {
    type Output = Dual;
    fn sub(self, o: Dual) -> Dual {
        Dual::new(self.re - o.re, self.eps - o.eps)
    }
}

impl Mul for Dual {
    type Output = Dual;
    fn mul(self, o: Dual) -> Dual {
        Dual::new(self.re * o.re, self.re * o.eps + self.eps * o.re)
    }
}

impl Div for Dual {
    type Output = Dual;
    fn div(self, o: Dual) -> Dual {
        let q = self.re / o.re;
        Dual::new(q, (self.eps - q * o.eps) / o.re)
    }
}

impl Neg for Dual {
    type Output = Dual;
    fn neg(self) -> Dual {
        Dual::new(-self.re, -self.eps)
    }
}

impl AddAssign for Dual {
    fn add_assign(&mut self, o: Dual) {
        self.re += o.re;
        self.eps += o.eps;
    }
}

impl Scalar for Dual {
    fn from_f64(x: f64) -> Self {
        Dual::new(x, 0.0)
    }
    fn value(self) -> f64 {
        self.re
    }
    fn tanh(self) -> Self {
        let t = self.re.tanh();
        Dual::new(t, self.eps * (1.0 - t * t))
    }
    fn exp(self) -> Self {
        let e = self.re.exp();
        Dual::new(e, self.eps * e)
    }
    fn ln(self) -> Self {
        Dual::new(self.re.ln(), self.eps / self.re)
    }
    fn sqrt(self) -> Self {
        let s = self.re.sqrt();
        Dual::new(s, self.eps / (2.0 * s))
    }
    fn is_finite(self) -> bool {
        self.re.is_finite() && self.eps.is_finite()
    }
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

/// Node kinds, used in diagnostics.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Input,
    Constant,
    Add,
    Mul,
    MatVec,
    BiasAdd,
    Tanh,
    Relu,
    Exp,
    Log,
    Sum,
    SoftmaxXent,
    Slice,
    Scale,
    Rsqrt,
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            OpKind::Input => "input",
            OpKind::Constant => "constant",
            OpKind::Add => "add",
            OpKind::Mul => "mul",
            OpKind::MatVec => "matvec",
            OpKind::BiasAdd => "bias-add",
            OpKind::Tanh => "tanh",
            OpKind::Relu => "relu",
            OpKind::Exp => "exp",
            OpKind::Log => "log",
            OpKind::Sum => "sum",
            OpKind::SoftmaxXent => "softmax-xent",
            OpKind::Slice => "slice",
            OpKind::Scale => "scale",
            OpKind::Rsqrt => "rsqrt",
        };
        f.write_str(name)
    }
}

#[derive(Clone, Debug)]
enum Op {
    Input,
    Constant,
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    /// Row-major `rows × cols` matrix times a vector.
    MatVec {
        matrix: NodeId,
        vector: NodeId,
        rows: usize,
        cols: usize,
    },
    BiasAdd(NodeId, NodeId),
    Tanh(NodeId),
    Relu(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Sum(NodeId),
    SoftmaxXent {
        logits: NodeId,
        target: usize,
    },
    Slice {
        src: NodeId,
        offset: usize,
    },
    /// Vector times a one-element node.
    Scale {
        x: NodeId,
        factor: NodeId,
    },
    Rsqrt(NodeId),
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Input => OpKind::Input,
            Op::Constant => OpKind::Constant,
            Op::Add(..) => OpKind::Add,
            Op::Mul(..) => OpKind::Mul,
            Op::MatVec { .. } => OpKind::MatVec,
            Op::BiasAdd(..) => OpKind::BiasAdd,
            Op::Tanh(_) => OpKind::Tanh,
            Op::Relu(_) => OpKind::Relu,
            Op::Exp(_) => OpKind::Exp,
            Op::Log(_) => OpKind::Log,
            Op::Sum(_) => OpKind::Sum,
            Op::SoftmaxXent { .. } => OpKind::SoftmaxXent,
            Op::Slice { .. } => OpKind::Slice,
            Op::Scale { .. } => OpKind::Scale,
            Op::Rsqrt(_) => OpKind::Rsqrt,
        }
    }
}

struct Node<S> {
    op: Op,
    value: Vec<S>,
    /// Whether any input node is upstream of this one.
    needs_grad: bool,
}

/// Eagerly evaluated computation graph.
///
/// Shape errors inside graph construction are programming errors and panic;
/// user-facing shape validation happens in [`LossFn::check`].
pub struct Graph<S: Scalar> {
    nodes: Vec<Node<S>>,
    first_non_finite: Option<OpKind>,
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            first_non_finite: None,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &[S] {
        &self.nodes[id.0].value
    }

    pub fn kind(&self, id: NodeId) -> OpKind {
        self.nodes[id.0].op.kind()
    }

    fn push(&mut self, op: Op, value: Vec<S>) -> NodeId {
        if self.first_non_finite.is_none() && value.iter().any(|x| !x.is_finite()) {
            self.first_non_finite = Some(op.kind());
        }
        let needs_grad = match &op {
            Op::Input => true,
            Op::Constant => false,
            other => preds(other).iter().any(|p| self.nodes[p.0].needs_grad),
        };
        self.nodes.push(Node { op, value, needs_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn dim(&self, id: NodeId) -> usize {
        self.nodes[id.0].value.len()
    }

    /// Differentiable leaf.
    pub fn input(&mut self, values: Vec<S>) -> NodeId {
        self.push(Op::Input, values)
    }

    /// Non-differentiable leaf.
    pub fn constant(&mut self, values: &[f64]) -> NodeId {
        let v = values.iter().map(|&x| S::from_f64(x)).collect();
        self.push(Op::Constant, v)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.dim(a), self.dim(b), "add: dimension mismatch");
        let v = zip_map(self.value(a), self.value(b), |x, y| x + y);
        self.push(Op::Add(a, b), v)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.dim(a), self.dim(b), "mul: dimension mismatch");
        let v = zip_map(self.value(a), self.value(b), |x, y| x * y);
        self.push(Op::Mul(a, b), v)
    }

    pub fn matvec(&mut self, matrix: NodeId, vector: NodeId, rows: usize, cols: usize) -> NodeId {
        assert_eq!(self.dim(matrix), rows * cols, "matvec: matrix size");
        assert_eq!(self.dim(vector), cols, "matvec: vector size");
        let w = self.value(matrix);
        let x = self.value(vector);
        let v = (0..rows)
            .map(|i| {
                let row = &w[i * cols..(i + 1) * cols];
                let mut acc = S::zero();
                for (&wij, &xj) in row.iter().zip(x) {
                    acc += wij * xj;
                }
                acc
            })
            .collect();
        self.push(
            Op::MatVec {
                matrix,
                vector,
                rows,
                cols,
            },
            v,
        )
    }

    pub fn bias_add(&mut self, x: NodeId, bias: NodeId) -> NodeId {
        assert_eq!(self.dim(x), self.dim(bias), "bias-add: dimension mismatch");
        let v = zip_map(self.value(x), self.value(bias), |a, b| a + b);
        self.push(Op::BiasAdd(x, bias), v)
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).iter().map(|&a| a.tanh()).collect();
        self.push(Op::Tanh(x), v)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let v = self
            .value(x)
            .iter()
            .map(|&a| if a.value() > 0.0 { a } else { S::zero() })
            .collect();
        self.push(Op::Relu(x), v)
    }

    pub fn exp(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).iter().map(|&a| a.exp()).collect();
        self.push(Op::Exp(x), v)
    }

    pub fn log(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).iter().map(|&a| a.ln()).collect();
        self.push(Op::Log(x), v)
    }

    /// Sum of all components, a one-element node.
    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let mut acc = S::zero();
        for &a in self.value(x) {
            acc += a;
        }
        self.push(Op::Sum(x), vec![acc])
    }

    /// `-log softmax(logits)[target]`, stabilized by subtracting the largest logit.
    pub fn softmax_xent(&mut self, logits: NodeId, target: usize) -> NodeId {
        let z = self.value(logits);
        assert!(target < z.len(), "softmax-xent: target out of range");
        let lse = log_sum_exp(z);
        let loss = lse - z[target];
        self.push(Op::SoftmaxXent { logits, target }, vec![loss])
    }

    pub fn slice(&mut self, src: NodeId, offset: usize, len: usize) -> NodeId {
        assert!(offset + len <= self.dim(src), "slice out of range");
        let v = self.value(src)[offset..offset + len].to_vec();
        self.push(Op::Slice { src, offset }, v)
    }

    /// `x · factor` where `factor` is a one-element node.
    pub fn scale(&mut self, x: NodeId, factor: NodeId) -> NodeId {
        assert_eq!(self.dim(factor), 1, "scale: factor must be a scalar node");
        let s = self.value(factor)[0];
        let v = self.value(x).iter().map(|&a| a * s).collect();
        self.push(Op::Scale { x, factor }, v)
    }

    /// Elementwise `1/√x`.
    pub fn rsqrt(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).iter().map(|&a| S::from_f64(1.0) / a.sqrt()).collect();
        self.push(Op::Rsqrt(x), v)
    }

    /// Arithmetic mean of one-element nodes.
    pub fn mean(&mut self, terms: &[NodeId]) -> NodeId {
        assert!(!terms.is_empty(), "mean of no terms");
        let mut acc = terms[0];
        for &t in &terms[1..] {
            acc = self.add(acc, t);
        }
        if terms.len() == 1 {
            return acc;
        }
        let inv = self.constant(&[1.0 / terms.len() as f64]);
        self.scale(acc, inv)
    }

    /// First node kind whose forward value was non-finite, if any.
    pub fn first_non_finite(&self) -> Option<OpKind> {
        self.first_non_finite
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.first_non_finite {
            Some(kind) => Err(Error::non_finite(kind)),
            None => Ok(()),
        }
    }

    /// Gradient of the one-element node `output` with respect to the input
    /// node `wrt`.
    pub fn gradient(&self, output: NodeId, wrt: NodeId) -> Vec<S> {
        assert_eq!(self.dim(output), 1, "gradient of a non-scalar node");
        let n = output.0 + 1;
        let mut adj: Vec<Option<Vec<S>>> = (0..n).map(|_| None).collect();
        adj[output.0] = Some(vec![S::from_f64(1.0)]);

        for i in (0..n).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = adj[i].take() else { continue };
            if i == wrt.0 {
                adj[i] = Some(g);
                continue;
            }
            self.pull_back(i, &g, &mut adj);
        }
        adj[wrt.0].take().unwrap_or_else(|| vec![S::zero(); self.dim(wrt)])
    }

    fn pull_back(&self, i: usize, g: &[S], adj: &mut [Option<Vec<S>>]) {
        let node = &self.nodes[i];
        match node.op {
            Op::Input | Op::Constant => {}
            Op::Add(a, b) | Op::BiasAdd(a, b) => {
                self.accumulate(adj, a, |d| add_into(d, g));
                self.accumulate(adj, b, |d| add_into(d, g));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(a), self.value(b));
                self.accumulate(adj, a, |d| {
                    for ((d, &gi), &y) in d.iter_mut().zip(g).zip(vb) {
                        *d += gi * y;
                    }
                });
                self.accumulate(adj, b, |d| {
                    for ((d, &gi), &x) in d.iter_mut().zip(g).zip(va) {
                        *d += gi * x;
                    }
                });
            }
            Op::MatVec {
                matrix,
                vector,
                rows,
                cols,
            } => {
                let w = self.value(matrix);
                let x = self.value(vector);
                self.accumulate(adj, matrix, |d| {
                    for r in 0..rows {
                        let gr = g[r];
                        let drow = &mut d[r * cols..(r + 1) * cols];
                        for (dw, &xj) in drow.iter_mut().zip(x) {
                            *dw += gr * xj;
                        }
                    }
                });
                self.accumulate(adj, vector, |d| {
                    for r in 0..rows {
                        let gr = g[r];
                        let row = &w[r * cols..(r + 1) * cols];
                        for (dx, &wij) in d.iter_mut().zip(row) {
                            *dx += wij * gr;
                        }
                    }
                });
            }
            Op::Tanh(x) => {
                let y = &node.value;
                self.accumulate(adj, x, |d| {
                    for ((d, &gi), &yi) in d.iter_mut().zip(g).zip(y) {
                        *d += gi * (S::from_f64(1.0) - yi * yi);
                    }
                });
            }
            Op::Relu(x) => {
                // a.e. derivative: relu'(0) = 0, relu'' = 0
                let vx = self.value(x);
                self.accumulate(adj, x, |d| {
                    for ((d, &gi), &xi) in d.iter_mut().zip(g).zip(vx) {
                        if xi.value() > 0.0 {
                            *d += gi;
                        }
                    }
                });
            }
            Op::Exp(x) => {
                let y = &node.value;
                self.accumulate(adj, x, |d| {
                    for ((d, &gi), &yi) in d.iter_mut().zip(g).zip(y) {
                        *d += gi * yi;
                    }
                });
            }
            Op::Log(x) => {
                let vx = self.value(x);
                self.accumulate(adj, x, |d| {
                    for ((d, &gi), &xi) in d.iter_mut().zip(g).zip(vx) {
                        *d += gi / xi;
                    }
                });
            }
            Op::Sum(x) => {
                let g0 = g[0];
                self.accumulate(adj, x, |d| {
                    for d in d.iter_mut() {
                        *d += g0;
                    }
                });
            }
            Op::SoftmaxXent { logits, target } => {
                let z = self.value(logits);
                let p = softmax(z);
                let g0 = g[0];
                self.accumulate(adj, logits, |d| {
                    for (k, (d, &pk)) in d.iter_mut().zip(&p).enumerate() {
                        let delta = if k == target { pk - S::from_f64(1.0) } else { pk };
                        *d += g0 * delta;
                    }
                });
            }
            Op::Slice { src, offset } => {
                self.accumulate(adj, src, |d| add_into(&mut d[offset..offset + g.len()], g));
            }
            Op::Scale { x, factor } => {
                let s = self.value(factor)[0];
                let vx = self.value(x);
                self.accumulate(adj, x, |d| {
                    for (d, &gi) in d.iter_mut().zip(g) {
                        *d += gi * s;
                    }
                });
                self.accumulate(adj, factor, |d| {
                    let mut acc = S::zero();
                    for (&gi, &xi) in g.iter().zip(vx) {
                        acc += gi * xi;
                    }
                    d[0] += acc;
                });
            }
            Op::Rsqrt(x) => {
                let y = &node.value;
                self.accumulate(adj, x, |d| {
                    for ((d, &gi), &yi) in d.iter_mut().zip(g).zip(y) {
                        *d += gi * S::from_f64(-0.5) * yi * yi * yi;
                    }
                });
            }
        }
    }

    fn accumulate(&self, adj: &mut [Option<Vec<S>>], target: NodeId, f: impl FnOnce(&mut [S])) {
        let node = &self.nodes[target.0];
        if !node.needs_grad {
            return;
        }
        let slot = adj[target.0].get_or_insert_with(|| vec![S::zero(); node.value.len()]);
        f(slot);
    }
}

fn preds(op: &Op) -> Vec<NodeId> {
    match *op {
        Op::Input | Op::Constant => vec![],
        Op::Add(a, b) | Op::Mul(a, b) | Op::BiasAdd(a, b) => vec![a, b],
        Op::MatVec { matrix, vector, .. } => vec![matrix, vector],
        Op::Tanh(x) | Op::Relu(x) | Op::Exp(x) | Op::Log(x) | Op::Sum(x) | Op::Rsqrt(x) => vec![x],
        Op::SoftmaxXent { logits, .. } => vec![logits],
        Op::Slice { src, .. } => vec![src],
        Op::Scale { x, factor } => vec![x, factor],
    }
}

fn zip_map<S: Scalar>(a: &[S], b: &[S], f: impl Fn(S, S) -> S) -> Vec<S> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn add_into<S: Scalar>(dst: &mut [S], src: &[S]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn max_index<S: Scalar>(z: &[S]) -> usize {
    let mut best = 0;
    for (i, v) in z.iter().enumerate() {
        if v.value() > z[best].value() {
            best = i;
        }
    }
    best
}

fn log_sum_exp<S: Scalar>(z: &[S]) -> S {
    let m = z[max_index(z)];
    let mut acc = S::zero();
    for &zi in z {
        acc += (zi - m).exp();
    }
    m + acc.ln()
}

fn softmax<S: Scalar>(z: &[S]) -> Vec<S> {
    let m = z[max_index(z)];
    let e: Vec<S> = z.iter().map(|&zi| (zi - m).exp()).collect();
    let mut total = S::zero();
    for &x in &e {
        total += x;
    }
    e.into_iter().map(|x| x / total).collect()
}

/// A differentiable scalar objective of a flat parameter vector.
///
/// Implementations bind their own data (a dataset, a batch of channel
/// draws, ...) and describe the loss by pushing nodes onto a graph.
pub trait LossFn: Sync {
    fn num_params(&self) -> usize;

    /// Validates shapes of the bound data against the model.
    fn check(&self) -> Result<()> {
        Ok(())
    }

    /// Pushes the loss onto `graph` given the parameter input node and
    /// returns the one-element output node.
    fn build<S: Scalar>(&self, graph: &mut Graph<S>, params: NodeId) -> NodeId;
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradientResult {
    pub value: f64,
    pub gradient: Vec<f64>,
}

fn check_params<F: LossFn>(f: &F, p: &[f64]) -> Result<()> {
    if p.len() != f.num_params() {
        return Err(Error::config(format!(
            "parameter vector has {} entries, model expects {}",
            p.len(),
            f.num_params()
        )));
    }
    f.check()
}

/// Loss value only.
pub fn eval_loss<F: LossFn>(f: &F, p: &[f64]) -> Result<f64> {
    check_params(f, p)?;
    let mut g = Graph::<f64>::new();
    let x = g.input(p.to_vec());
    let out = f.build(&mut g, x);
    g.check_finite()?;
    Ok(g.value(out)[0])
}

/// Loss value and exact reverse-mode gradient.
pub fn eval_with_gradient<F: LossFn>(f: &F, p: &[f64]) -> Result<GradientResult> {
    check_params(f, p)?;
    let mut g = Graph::<f64>::new();
    let x = g.input(p.to_vec());
    let out = f.build(&mut g, x);
    g.check_finite()?;
    let gradient = g.gradient(out, x);
    if gradient.iter().any(|v| !v.is_finite()) {
        return Err(Error::non_finite(g.kind(out)));
    }
    Ok(GradientResult {
        value: g.value(out)[0],
        gradient,
    })
}

/// Gradient and Hessian-vector product `∇²L(p)·v` from one dual-number pass.
pub fn gradient_and_hvp<F: LossFn>(f: &F, p: &[f64], v: &[f64]) -> Result<(GradientResult, Vec<f64>)> {
    check_params(f, p)?;
    if v.len() != p.len() {
        return Err(Error::config(format!(
            "direction has {} entries, expected {}",
            v.len(),
            p.len()
        )));
    }
    let mut g = Graph::<Dual>::new();
    let x = g.input(p.iter().zip(v).map(|(&a, &b)| Dual::new(a, b)).collect());
    let out = f.build(&mut g, x);
    g.check_finite()?;
    let grad = g.gradient(out, x);
    if grad.iter().any(|d| !d.is_finite()) {
        return Err(Error::non_finite(g.kind(out)));
    }
    let result = GradientResult {
        value: g.value(out)[0].re,
        gradient: grad.iter().map(|d| d.re).collect(),
    };
    Ok((result, grad.iter().map(|d| d.eps).collect()))
}

/// Hessian-vector product `∇²L(p)·v`.
pub fn hvp<F: LossFn>(f: &F, p: &[f64], v: &[f64]) -> Result<Vec<f64>> {
    gradient_and_hvp(f, p, v).map(|(_, hv)| hv)
}

/// Dense Hessian assembled column by column from Hessian-vector products.
/// Only meant for small models.
pub fn dense_hessian<F: LossFn>(f: &F, p: &[f64]) -> Result<Vec<Vec<f64>>> {
    let n = p.len();
    let mut cols = Vec::with_capacity(n);
    let mut e = vec![0.0; n];
    for j in 0..n {
        e[j] = 1.0;
        cols.push(hvp(f, p, &e)?);
        e[j] = 0.0;
    }
    // row i = column i by symmetry; transpose anyway to return H[i][j]
    Ok((0..n).map(|i| (0..n).map(|j| cols[j][i]).collect()).collect())
}

/// How the meta-gradient treats the Jacobian of the adaptation map.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MetaOrder {
    /// Exact: backpropagate through every inner update, `Π (I − η∇²L_tr)`.
    Exact,
    /// First-order approximation: adaptation Jacobian replaced by the identity.
    FirstOrder,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetaGradient {
    /// Test loss at the adapted parameters.
    pub meta_loss: f64,
    /// Derivative of the test loss at the adapted parameters w.r.t. the
    /// initialization.
    pub meta_grad: Vec<f64>,
    /// Adapted parameters after the inner steps.
    pub adapted: Vec<f64>,
}

/// Runs `m` full-batch gradient steps on `f_tr` from `theta`, returning every
/// iterate `φ_0 = θ, …, φ_m`.
pub fn unroll<F: LossFn>(f_tr: &F, theta: &[f64], eta: f64, m: usize) -> Result<Vec<Vec<f64>>> {
    let mut iterates = Vec::with_capacity(m + 1);
    iterates.push(theta.to_vec());
    for step in 0..m {
        let phi = &iterates[step];
        let next = if eta == 0.0 {
            phi.clone()
        } else {
            let gr = eval_with_gradient(f_tr, phi).map_err(|e| e.at_step(step))?;
            let next: Vec<f64> = phi.iter().zip(&gr.gradient).map(|(p, g)| p - eta * g).collect();
            if next.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical {
                    site: crate::error::Site {
                        step: Some(step),
                        ..Default::default()
                    },
                    message: "adapted parameters are non-finite".into(),
                });
            }
            next
        };
        iterates.push(next);
    }
    Ok(iterates)
}

fn check_meta_args(eta: f64, m: usize) -> Result<()> {
    if m == 0 {
        return Err(Error::config("adaptation step count m must be at least 1"));
    }
    if !(eta >= 0.0 && eta.is_finite()) {
        return Err(Error::config(format!(
            "inner step size must be finite and non-negative, got {eta}"
        )));
    }
    Ok(())
}

/// Meta-gradient of `L_te(adapt(θ))` where `adapt` is `m` gradient steps on
/// `L_tr` with step `eta`.
///
/// With [`MetaOrder::Exact`] the adjoint is propagated backwards through the
/// unrolled updates, `λ ← (I − η∇²L_tr(φ_i))·λ`, one Hessian-vector product
/// per step. For `m = 1` this is `(I − η∇²L_tr(θ))·∇L_te(φ_1)`.
pub fn meta_gradient<F: LossFn, G: LossFn>(
    f_tr: &F,
    f_te: &G,
    theta: &[f64],
    eta: f64,
    m: usize,
    order: MetaOrder,
) -> Result<MetaGradient> {
    check_meta_args(eta, m)?;
    check_params(f_tr, theta)?;
    check_params(f_te, theta)?;
    let mut iterates = unroll(f_tr, theta, eta, m)?;
    let adapted = iterates.pop().expect("unroll returns m + 1 iterates");
    let outer = eval_with_gradient(f_te, &adapted).map_err(|e| e.at_step(m))?;
    let mut adjoint = outer.gradient;
    if order == MetaOrder::Exact && eta != 0.0 {
        for (step, phi) in iterates.iter().enumerate().rev() {
            let hv = hvp(f_tr, phi, &adjoint).map_err(|e| e.at_step(step))?;
            for (a, h) in adjoint.iter_mut().zip(&hv) {
                *a -= eta * h;
            }
        }
    }
    Ok(MetaGradient {
        meta_loss: outer.value,
        meta_grad: adjoint,
        adapted,
    })
}

/// Exact second-order meta-gradient through `m` unrolled inner steps.
pub fn unrolled_meta_gradient<F: LossFn, G: LossFn>(
    f_tr: &F,
    f_te: &G,
    theta: &[f64],
    eta: f64,
    m: usize,
) -> Result<MetaGradient> {
    meta_gradient(f_tr, f_te, theta, eta, m, MetaOrder::Exact)
}
