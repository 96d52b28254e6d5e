//! Define-by-run reverse-mode differentiation over [`Array`] values.
//!
//! A [`Tape`] records every primitive as a [`Node`] whose parents always have
//! smaller ids, so the node list is already in topological order and
//! [`backward`] is a single reverse sweep. A fresh tape is built for every
//! training step.
//!
//! Non-smooth points use fixed subgradients: `relu'(0) = 0`, `sqrt'(0) = 0`
//! and the gradient of the L2 norm at the zero vector is zero.

use std::cell::{Ref, RefCell};

use crate::array::Array;
use crate::error::{Error, Result};

/// Primitive tag stored on each node. Constant operands of `Scale` and
/// `Offset` live in the tag.
#[derive(Debug, Clone, PartialEq)]
pub enum OpKind {
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    Scale(f64),
    Offset(f64),
    /// `a * s` with `s` a 1x1 node.
    MulScalar,
    MatMul,
    Transpose,
    Tanh,
    Relu,
    Square,
    Sqrt,
    Sum,
    Mean,
    /// Reduce over the batch axis: m x n -> 1 x n.
    SumRows,
    MeanRows,
    /// Reduce over the feature axis: m x n -> m x 1.
    SumCols,
    ConcatRows,
    SliceRows {
        start: usize,
        len: usize,
    },
    Norm,
    /// 1 x n -> m x n.
    BroadcastRows(usize),
    /// m x 1 -> m x n.
    BroadcastCols(usize),
}

#[derive(Debug, Clone)]
pub struct Node {
    pub id: usize,
    pub op: OpKind,
    pub parents: Vec<usize>,
    pub value: Array,
}

#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a node on a particular tape.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}", self.id)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    /// A differentiable input (parameter or data).
    pub fn leaf(&self, value: Array) -> Var<'_> {
        self.push(OpKind::Leaf, Vec::new(), value)
    }

    /// Alias of [`Tape::leaf`] for values that are never differentiated.
    pub fn constant(&self, value: Array) -> Var<'_> {
        self.leaf(value)
    }

    pub fn node(&self, id: usize) -> Ref<'_, Node> {
        Ref::map(self.nodes.borrow(), |n| &n[id])
    }

    fn push(&self, op: OpKind, parents: Vec<usize>, value: Array) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        debug_assert!(parents.iter().all(|&p| p < id));
        nodes.push(Node {
            id,
            op,
            parents,
            value,
        });
        Var { tape: self, id }
    }

    /// Appends a node after checking the primitive's shape signature and
    /// computing its forward value.
    pub fn record<'t>(&'t self, op: OpKind, parents: &[Var<'t>]) -> Result<Var<'t>> {
        for p in parents {
            if !std::ptr::eq(p.tape, self) {
                return Err(Error::Contract("operand recorded on another tape".into()));
            }
        }
        let value = {
            let nodes = self.nodes.borrow();
            let vals: Vec<&Array> = parents.iter().map(|p| &nodes[p.id].value).collect();
            forward(&op, &vals)?
        };
        Ok(self.push(op, parents.iter().map(|p| p.id).collect(), value))
    }

    /// Sign pattern of every relu input; changes when an input crosses the kink.
    pub fn relu_signature(&self) -> Vec<bool> {
        let nodes = self.nodes.borrow();
        nodes
            .iter()
            .filter(|n| n.op == OpKind::Relu)
            .flat_map(|n| {
                nodes[n.parents[0]]
                    .value
                    .data()
                    .iter()
                    .map(|&x| x > 0.0)
                    .collect::<Vec<_>>()
            })
            .collect()
    }
}

fn arity(op: &OpKind) -> Option<usize> {
    use OpKind::*;
    match op {
        Leaf => Some(0),
        Add | Sub | Mul | Div | MulScalar | MatMul => Some(2),
        ConcatRows => None,
        _ => Some(1),
    }
}

fn shape_err(op: &OpKind, vals: &[&Array]) -> Error {
    let shapes: Vec<String> = vals
        .iter()
        .map(|v| format!("{}x{}", v.rows(), v.cols()))
        .collect();
    Error::Shape(format!(
        "{op:?} cannot take operands [{}]",
        shapes.join(", ")
    ))
}

fn forward(op: &OpKind, vals: &[&Array]) -> Result<Array> {
    use OpKind::*;
    if let Some(k) = arity(op) {
        if vals.len() != k {
            return Err(Error::Contract(format!(
                "{op:?} takes {k} operands, got {}",
                vals.len()
            )));
        }
    }
    let a = vals.first().copied();
    let out = match op {
        Leaf => return Err(Error::Contract("leaves are created with Tape::leaf".into())),
        Add | Sub | Mul | Div => {
            let (a, b) = (vals[0], vals[1]);
            if a.shape() != b.shape() {
                return Err(shape_err(op, vals));
            }
            let f: fn(f64, f64) -> f64 = match op {
                Add => |x, y| x + y,
                Sub => |x, y| x - y,
                Mul => |x, y| x * y,
                _ => |x, y| x / y,
            };
            a.zip_map(b, f)?
        }
        Scale(k) => a.unwrap().scale(*k),
        Offset(c) => a.unwrap().map(|x| x + c),
        MulScalar => {
            let (a, s) = (vals[0], vals[1]);
            if s.shape() != (1, 1) {
                return Err(shape_err(op, vals));
            }
            a.scale(s.item())
        }
        MatMul => vals[0].matmul(vals[1]).map_err(|_| shape_err(op, vals))?,
        Transpose => a.unwrap().transpose(),
        Tanh => a.unwrap().map(f64::tanh),
        Relu => a.unwrap().map(|x| if x > 0.0 { x } else { 0.0 }),
        Square => a.unwrap().map(|x| x * x),
        Sqrt => {
            let a = a.unwrap();
            if a.data().iter().any(|&x| x < 0.0) {
                return Err(Error::Numeric("sqrt of a negative entry".into()));
            }
            a.map(f64::sqrt)
        }
        Sum => Array::scalar(a.unwrap().sum()),
        Mean => {
            let a = a.unwrap();
            if a.is_empty() {
                return Err(shape_err(op, vals));
            }
            Array::scalar(a.sum() / a.len() as f64)
        }
        SumRows => a.unwrap().sum_rows(),
        MeanRows => {
            let a = a.unwrap();
            if a.rows() == 0 {
                return Err(shape_err(op, vals));
            }
            a.mean_rows()
        }
        SumCols => {
            let a = a.unwrap();
            let data = (0..a.rows()).map(|r| a.row_slice(r).iter().sum()).collect();
            Array::from_parts(a.rows(), 1, data)
        }
        ConcatRows => {
            if vals.is_empty() {
                return Err(Error::Contract("concat of zero arrays".into()));
            }
            Array::vstack(vals).map_err(|_| shape_err(op, vals))?
        }
        SliceRows { start, len } => {
            let a = a.unwrap();
            if start + len > a.rows() {
                return Err(shape_err(op, vals));
            }
            let idx: Vec<usize> = (*start..start + len).collect();
            a.select_rows(&idx)
        }
        Norm => Array::scalar(a.unwrap().norm()),
        BroadcastRows(m) => {
            let a = a.unwrap();
            if a.rows() != 1 {
                return Err(shape_err(op, vals));
            }
            let mut data = Vec::with_capacity(m * a.cols());
            for _ in 0..*m {
                data.extend_from_slice(a.data());
            }
            Array::from_parts(*m, a.cols(), data)
        }
        BroadcastCols(n) => {
            let a = a.unwrap();
            if a.cols() != 1 {
                return Err(shape_err(op, vals));
            }
            let data = a
                .data()
                .iter()
                .flat_map(|&x| std::iter::repeat_n(x, *n))
                .collect();
            Array::from_parts(a.rows(), *n, data)
        }
    };
    Ok(out)
}

#[allow(clippy::should_implement_trait)]
impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Array {
        self.tape.node(self.id).value.clone()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.tape.node(self.id).value.shape()
    }

    /// Value of a 1x1 node.
    pub fn item(&self) -> f64 {
        self.tape.node(self.id).value.item()
    }

    fn unary(self, op: OpKind) -> Result<Var<'t>> {
        self.tape.record(op, &[self])
    }

    fn infallible(self, op: OpKind) -> Var<'t> {
        self.tape
            .record(op, &[self])
            .expect("primitive accepts any shape")
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.tape.record(OpKind::Add, &[self, other])
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.tape.record(OpKind::Sub, &[self, other])
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.tape.record(OpKind::Mul, &[self, other])
    }

    pub fn div(self, other: Var<'t>) -> Result<Var<'t>> {
        self.tape.record(OpKind::Div, &[self, other])
    }

    pub fn scale(self, k: f64) -> Var<'t> {
        self.infallible(OpKind::Scale(k))
    }

    pub fn offset(self, c: f64) -> Var<'t> {
        self.infallible(OpKind::Offset(c))
    }

    pub fn mul_scalar(self, s: Var<'t>) -> Result<Var<'t>> {
        self.tape.record(OpKind::MulScalar, &[self, s])
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.tape.record(OpKind::MatMul, &[self, other])
    }

    pub fn t(self) -> Var<'t> {
        self.infallible(OpKind::Transpose)
    }

    pub fn tanh(self) -> Var<'t> {
        self.infallible(OpKind::Tanh)
    }

    pub fn relu(self) -> Var<'t> {
        self.infallible(OpKind::Relu)
    }

    pub fn square(self) -> Var<'t> {
        self.infallible(OpKind::Square)
    }

    pub fn sqrt(self) -> Result<Var<'t>> {
        self.unary(OpKind::Sqrt)
    }

    pub fn sum(self) -> Var<'t> {
        self.infallible(OpKind::Sum)
    }

    pub fn mean(self) -> Result<Var<'t>> {
        self.unary(OpKind::Mean)
    }

    pub fn sum_rows(self) -> Var<'t> {
        self.infallible(OpKind::SumRows)
    }

    pub fn mean_rows(self) -> Result<Var<'t>> {
        self.unary(OpKind::MeanRows)
    }

    pub fn sum_cols(self) -> Var<'t> {
        self.infallible(OpKind::SumCols)
    }

    pub fn slice_rows(self, start: usize, len: usize) -> Result<Var<'t>> {
        self.unary(OpKind::SliceRows { start, len })
    }

    pub fn norm(self) -> Var<'t> {
        self.infallible(OpKind::Norm)
    }

    pub fn broadcast_rows(self, m: usize) -> Result<Var<'t>> {
        self.unary(OpKind::BroadcastRows(m))
    }

    pub fn broadcast_cols(self, n: usize) -> Result<Var<'t>> {
        self.unary(OpKind::BroadcastCols(n))
    }

    /// Adds a `1 x n` row to every row of `self`.
    pub fn add_row(self, row: Var<'t>) -> Result<Var<'t>> {
        let m = self.shape().0;
        self.add(row.broadcast_rows(m)?)
    }

    /// Multiplies every row of `self` elementwise by a `1 x n` row.
    pub fn mul_row(self, row: Var<'t>) -> Result<Var<'t>> {
        let m = self.shape().0;
        self.mul(row.broadcast_rows(m)?)
    }

    /// Subtracts a `1 x n` row from every row of `self`.
    pub fn sub_row(self, row: Var<'t>) -> Result<Var<'t>> {
        let m = self.shape().0;
        self.sub(row.broadcast_rows(m)?)
    }

    /// Divides `self` by a 1x1 node.
    pub fn div_scalar(self, s: Var<'t>) -> Result<Var<'t>> {
        let one = self.tape.constant(Array::scalar(1.0));
        self.mul_scalar(one.div(s)?)
    }

    /// Elementwise `max(self, floor)`, written as `relu(x - floor) + floor`.
    pub fn clamp_min(self, floor: f64) -> Var<'t> {
        self.offset(-floor).relu().offset(floor)
    }
}

pub fn concat_rows<'t>(parts: &[Var<'t>]) -> Result<Var<'t>> {
    let tape = parts
        .first()
        .ok_or_else(|| Error::Contract("concat of zero arrays".into()))?
        .tape;
    tape.record(OpKind::ConcatRows, parts)
}

/// Gradients of one scalar root with respect to every node it depends on.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Array>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    pub fn get(&self, var: Var<'_>) -> Option<&Array> {
        self.grads.get(var.id).and_then(Option::as_ref)
    }

    /// Gradient for `var`; zeros when the root does not depend on it.
    pub fn wrt(&self, var: Var<'_>) -> Array {
        match self.get(var) {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[var.id];
                Array::zeros(r, c)
            }
        }
    }
}

fn accumulate(slot: &mut Option<Array>, delta: Array) {
    match slot {
        Some(g) => {
            for (a, b) in g.data_mut().iter_mut().zip(delta.data()) {
                *a += b;
            }
        }
        None => *slot = Some(delta),
    }
}

/// Reverse sweep from a 1x1 root.
pub fn backward(root: Var<'_>) -> Result<Gradients> {
    let nodes = root.tape.nodes.borrow();
    let shape = nodes[root.id].value.shape();
    if shape != (1, 1) {
        return Err(Error::Contract(format!(
            "backward needs a scalar root, got {}x{}",
            shape.0, shape.1
        )));
    }
    let mut grads: Vec<Option<Array>> = vec![None; nodes.len()];
    grads[root.id] = Some(Array::scalar(1.0));

    for id in (0..=root.id).rev() {
        let Some(g) = grads[id].take() else { continue };
        let node = &nodes[id];
        let parent_vals: Vec<&Array> = node.parents.iter().map(|&p| &nodes[p].value).collect();
        for (k, delta) in vjp(&node.op, &g, &node.value, &parent_vals)
            .into_iter()
            .enumerate()
        {
            accumulate(&mut grads[node.parents[k]], delta);
        }
        grads[id] = Some(g);
    }

    Ok(Gradients {
        grads,
        shapes: nodes.iter().map(|n| n.value.shape()).collect(),
    })
}

/// Vector-Jacobian products: one upstream-weighted gradient per parent.
fn vjp(op: &OpKind, g: &Array, out: &Array, parents: &[&Array]) -> Vec<Array> {
    use OpKind::*;
    let zip = |a: &Array, b: &Array, f: fn(f64, f64) -> f64| {
        a.zip_map(b, f).expect("shapes checked in forward")
    };
    match op {
        Leaf => vec![],
        Add => vec![g.clone(), g.clone()],
        Sub => vec![g.clone(), g.scale(-1.0)],
        Mul => vec![
            zip(g, parents[1], |g, b| g * b),
            zip(g, parents[0], |g, a| g * a),
        ],
        Div => {
            let (a, b) = (parents[0], parents[1]);
            let ga = zip(g, b, |g, b| g / b);
            let gb_data = g
                .data()
                .iter()
                .zip(a.data().iter().zip(b.data()))
                .map(|(&g, (&a, &b))| -g * a / (b * b))
                .collect();
            vec![ga, Array::from_parts(b.rows(), b.cols(), gb_data)]
        }
        Scale(k) => vec![g.scale(*k)],
        Offset(_) => vec![g.clone()],
        MulScalar => {
            let (a, s) = (parents[0], parents[1]);
            vec![
                g.scale(s.item()),
                Array::scalar(g.dot(a).expect("same shape")),
            ]
        }
        MatMul => {
            let (a, b) = (parents[0], parents[1]);
            vec![
                g.matmul(&b.transpose()).expect("shapes checked"),
                a.transpose().matmul(g).expect("shapes checked"),
            ]
        }
        Transpose => vec![g.transpose()],
        Tanh => vec![zip(g, out, |g, y| g * (1.0 - y * y))],
        Relu => vec![zip(g, parents[0], |g, x| if x > 0.0 { g } else { 0.0 })],
        Square => vec![zip(g, parents[0], |g, x| 2.0 * x * g)],
        Sqrt => vec![zip(g, out, |g, y| if y > 0.0 { 0.5 * g / y } else { 0.0 })],
        Sum => {
            let a = parents[0];
            vec![Array::filled(a.rows(), a.cols(), g.item())]
        }
        Mean => {
            let a = parents[0];
            vec![Array::filled(a.rows(), a.cols(), g.item() / a.len() as f64)]
        }
        SumRows | MeanRows => {
            let a = parents[0];
            let k = if *op == MeanRows {
                1.0 / a.rows() as f64
            } else {
                1.0
            };
            let mut data = Vec::with_capacity(a.len());
            for _ in 0..a.rows() {
                data.extend(g.data().iter().map(|x| x * k));
            }
            vec![Array::from_parts(a.rows(), a.cols(), data)]
        }
        SumCols => {
            let a = parents[0];
            let data = g
                .data()
                .iter()
                .flat_map(|&x| std::iter::repeat_n(x, a.cols()))
                .collect();
            vec![Array::from_parts(a.rows(), a.cols(), data)]
        }
        ConcatRows => {
            let mut start = 0;
            parents
                .iter()
                .map(|p| {
                    let idx: Vec<usize> = (start..start + p.rows()).collect();
                    start += p.rows();
                    g.select_rows(&idx)
                })
                .collect()
        }
        SliceRows { start, .. } => {
            let a = parents[0];
            let mut ga = Array::zeros(a.rows(), a.cols());
            let cols = a.cols();
            ga.data_mut()[start * cols..start * cols + g.len()].copy_from_slice(g.data());
            vec![ga]
        }
        Norm => {
            let a = parents[0];
            let n = out.item();
            if n > 0.0 {
                vec![a.scale(g.item() / n)]
            } else {
                vec![Array::zeros(a.rows(), a.cols())]
            }
        }
        BroadcastRows(_) => vec![g.sum_rows()],
        BroadcastCols(_) => {
            let data = (0..g.rows()).map(|r| g.row_slice(r).iter().sum()).collect();
            vec![Array::from_parts(g.rows(), 1, data)]
        }
    }
}

/// Compares [`backward`] against central finite differences and returns the
/// worst relative error `|a - b| / max(|a|, |b|, 1e-8)` over all entries of `x`.
///
/// Returns [`Error::NonDifferentiable`] when a perturbation moves any relu
/// input across its kink; retry at a perturbed point.
pub fn grad_check<F>(f: F, x: &Array, eps: f64) -> Result<f64>
where
    F: for<'t> Fn(Var<'t>) -> Result<Var<'t>>,
{
    if eps <= 0.0 {
        return Err(Error::Contract("grad_check eps must be positive".into()));
    }
    let tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let root = f(xv)?;
    let analytic = backward(root)?.wrt(xv);
    let signature = tape.relu_signature();

    let eval = |p: Array| -> Result<f64> {
        let t = Tape::new();
        let y = f(t.leaf(p))?;
        if t.relu_signature() != signature {
            return Err(Error::NonDifferentiable(
                "relu kink within finite-difference step".into(),
            ));
        }
        Ok(y.item())
    };

    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let mut plus = x.clone();
        plus.data_mut()[i] += eps;
        let mut minus = x.clone();
        minus.data_mut()[i] -= eps;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * eps);
        let a = analytic.data()[i];
        let denom = a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((a - numeric).abs() / denom);
    }
    Ok(worst)
}
