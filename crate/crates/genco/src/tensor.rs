//! Dense f64 tensors with a recorded computation graph for reverse-mode
//! differentiation.
//!
//! The graph is define-by-run: every operation allocates a fresh node that
//! keeps handles to its parents, and [`Tensor::backward`] walks the graph
//! from a scalar loss, accumulating gradients into every reachable leaf.
//! The primitive set is closed and every primitive carries an exact adjoint
//! rule. Broadcasting is restricted to scalar-vs-tensor; reductions run in
//! fixed left-to-right order so forward evaluation is bit-deterministic.

use std::collections::{HashMap, HashSet};
use std::rc::Rc;

use std::cell::RefCell;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: domain error on input {value}")]
    Domain { op: &'static str, value: f64 },
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarBackward { shape: Vec<usize> },
    #[error("data length {len} does not match shape {shape:?}")]
    LengthMismatch { shape: Vec<usize>, len: usize },
    #[error("{op}: expects a rank-2 operand, got shape {shape:?}")]
    NotAMatrix { op: &'static str, shape: Vec<usize> },
}

type Result<T> = std::result::Result<T, TensorError>;

/// Producing primitive of a non-leaf node, with handles to the parents.
enum Op {
    Add(Tensor, Tensor),
    Sub(Tensor, Tensor),
    Mul(Tensor, Tensor),
    Scale(Tensor, f64),
    MatMul(Tensor, Tensor),
    Sum(Tensor),
    Mean(Tensor),
    LeakyRelu(Tensor, f64),
    Tanh(Tensor),
    Softplus(Tensor),
    Ln(Tensor),
    Sigmoid(Tensor),
    Square(Tensor),
    Sqrt(Tensor),
    Recip(Tensor),
    Concat(Vec<Tensor>),
    Dot(Tensor, Tensor),
    L2Norm(Tensor),
    /// Shape-preserving linear map whose adjoint is itself. Used to route
    /// gradients through external linear operators (frequency rejection).
    SelfAdjoint {
        input: Tensor,
        map: Rc<dyn Fn(&[f64]) -> Vec<f64>>,
    },
}

struct Inner {
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
    op: Option<Op>,
}

/// Shared handle to one node of the computation graph.
#[derive(Clone)]
pub struct Tensor(Rc<RefCell<Inner>>);

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    /// Leaf tensor from explicit shape and data.
    pub fn from_vec(shape: Vec<usize>, data: Vec<f64>) -> Result<Tensor> {
        if numel(&shape) != data.len() || shape.iter().any(|&e| e == 0) {
            return Err(TensorError::LengthMismatch {
                shape,
                len: data.len(),
            });
        }
        Ok(Tensor(Rc::new(RefCell::new(Inner {
            shape,
            data,
            grad: None,
            op: None,
        }))))
    }

    pub fn scalar(value: f64) -> Tensor {
        Tensor::from_vec(vec![1], vec![value]).unwrap()
    }

    pub fn zeros(shape: Vec<usize>) -> Tensor {
        let n = numel(&shape);
        Tensor::from_vec(shape, vec![0.0; n]).unwrap()
    }

    fn wrap(shape: Vec<usize>, data: Vec<f64>, op: Op) -> Tensor {
        Tensor(Rc::new(RefCell::new(Inner {
            shape,
            data,
            grad: None,
            op: Some(op),
        })))
    }

    pub fn shape(&self) -> Vec<usize> {
        self.0.borrow().shape.clone()
    }

    pub fn len(&self) -> usize {
        self.0.borrow().data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn data(&self) -> Vec<f64> {
        self.0.borrow().data.clone()
    }

    /// Scalar value of a one-element tensor.
    pub fn item(&self) -> f64 {
        let inner = self.0.borrow();
        assert!(
            inner.data.len() == 1,
            "item() on tensor of shape {:?}",
            inner.shape
        );
        inner.data[0]
    }

    /// Accumulated gradient, if backward has touched this node.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.borrow().grad.clone()
    }

    /// Gradient buffer, zeros when untouched. Unreachable leaves read as zero.
    pub fn grad_or_zeros(&self) -> Vec<f64> {
        let inner = self.0.borrow();
        inner
            .grad
            .clone()
            .unwrap_or_else(|| vec![0.0; inner.data.len()])
    }

    pub fn zero_grad(&self) {
        self.0.borrow_mut().grad = None;
    }

    /// Overwrites leaf data in place (optimizer updates).
    pub fn set_data(&self, data: Vec<f64>) {
        let mut inner = self.0.borrow_mut();
        assert_eq!(inner.data.len(), data.len(), "set_data length mismatch");
        inner.data = data;
    }

    /// New leaf sharing this node's current values, cut off from the graph.
    pub fn detach(&self) -> Tensor {
        let inner = self.0.borrow();
        Tensor::from_vec(inner.shape.clone(), inner.data.clone()).unwrap()
    }

    pub fn is_leaf(&self) -> bool {
        self.0.borrow().op.is_none()
    }

    fn key(&self) -> *const Inner {
        Rc::as_ptr(&self.0) as *const Inner
    }

    // ── elementwise binary ────────────────────────────────────────────

    fn broadcast_shapes(
        op: &'static str,
        lhs: &[usize],
        llen: usize,
        rhs: &[usize],
        rlen: usize,
    ) -> Result<Vec<usize>> {
        if lhs == rhs {
            Ok(lhs.to_vec())
        } else if llen == 1 {
            Ok(rhs.to_vec())
        } else if rlen == 1 {
            Ok(lhs.to_vec())
        } else {
            Err(TensorError::ShapeMismatch {
                op,
                lhs: lhs.to_vec(),
                rhs: rhs.to_vec(),
            })
        }
    }

    fn binary(
        &self,
        other: &Tensor,
        op_name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: impl FnOnce(Tensor, Tensor) -> Op,
    ) -> Result<Tensor> {
        let (a, b) = (self.0.borrow(), other.0.borrow());
        let shape = Self::broadcast_shapes(op_name, &a.shape, a.data.len(), &b.shape, b.data.len())?;
        let n = numel(&shape);
        let mut data = Vec::with_capacity(n);
        for i in 0..n {
            let x = a.data[if a.data.len() == 1 { 0 } else { i }];
            let y = b.data[if b.data.len() == 1 { 0 } else { i }];
            data.push(f(x, y));
        }
        drop((a, b));
        Ok(Tensor::wrap(shape, data, op(self.clone(), other.clone())))
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, "add", |x, y| x + y, Op::Add)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, "sub", |x, y| x - y, Op::Sub)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, "mul", |x, y| x * y, Op::Mul)
    }

    /// Multiplication by a compile-time constant (not a graph node).
    pub fn scale(&self, c: f64) -> Tensor {
        let inner = self.0.borrow();
        let data = inner.data.iter().map(|&x| x * c).collect();
        let shape = inner.shape.clone();
        drop(inner);
        Tensor::wrap(shape, data, Op::Scale(self.clone(), c))
    }

    pub fn neg(&self) -> Tensor {
        self.scale(-1.0)
    }

    // ── matrix product ────────────────────────────────────────────────

    fn mat_dims(op: &'static str, shape: &[usize]) -> Result<(usize, usize)> {
        match shape {
            [r, c] => Ok((*r, *c)),
            _ => Err(TensorError::NotAMatrix {
                op,
                shape: shape.to_vec(),
            }),
        }
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (a, b) = (self.0.borrow(), other.0.borrow());
        let (m, k) = Self::mat_dims("matmul", &a.shape)?;
        let (k2, n) = Self::mat_dims("matmul", &b.shape)?;
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: a.shape.clone(),
                rhs: b.shape.clone(),
            });
        }
        let data = matmul_raw(&a.data, &b.data, m, k, n);
        drop((a, b));
        Ok(Tensor::wrap(
            vec![m, n],
            data,
            Op::MatMul(self.clone(), other.clone()),
        ))
    }

    // ── reductions ────────────────────────────────────────────────────

    pub fn sum(&self) -> Tensor {
        let inner = self.0.borrow();
        let mut acc = 0.0;
        for &x in &inner.data {
            acc += x;
        }
        drop(inner);
        Tensor::wrap(vec![1], vec![acc], Op::Sum(self.clone()))
    }

    pub fn mean(&self) -> Tensor {
        let inner = self.0.borrow();
        let n = inner.data.len();
        let mut acc = 0.0;
        for &x in &inner.data {
            acc += x;
        }
        drop(inner);
        Tensor::wrap(vec![1], vec![acc / n as f64], Op::Mean(self.clone()))
    }

    // ── elementwise unary ─────────────────────────────────────────────

    fn unary(
        &self,
        f: impl Fn(f64) -> f64,
        op: impl FnOnce(Tensor) -> Op,
    ) -> Tensor {
        let inner = self.0.borrow();
        let data = inner.data.iter().map(|&x| f(x)).collect();
        let shape = inner.shape.clone();
        drop(inner);
        Tensor::wrap(shape, data, op(self.clone()))
    }

    fn unary_checked(
        &self,
        op_name: &'static str,
        valid: impl Fn(f64) -> bool,
        f: impl Fn(f64) -> f64,
        op: impl FnOnce(Tensor) -> Op,
    ) -> Result<Tensor> {
        {
            let inner = self.0.borrow();
            if let Some(&bad) = inner.data.iter().find(|&&x| !valid(x)) {
                return Err(TensorError::Domain {
                    op: op_name,
                    value: bad,
                });
            }
        }
        Ok(self.unary(f, op))
    }

    pub fn leaky_relu(&self, slope: f64) -> Tensor {
        self.unary(
            move |x| if x > 0.0 { x } else { slope * x },
            move |t| Op::LeakyRelu(t, slope),
        )
    }

    pub fn tanh(&self) -> Tensor {
        self.unary(f64::tanh, Op::Tanh)
    }

    pub fn softplus(&self) -> Tensor {
        self.unary(softplus, Op::Softplus)
    }

    pub fn ln(&self) -> Result<Tensor> {
        self.unary_checked("ln", |x| x > 0.0, f64::ln, Op::Ln)
    }

    pub fn sigmoid(&self) -> Tensor {
        self.unary(sigmoid, Op::Sigmoid)
    }

    pub fn square(&self) -> Tensor {
        self.unary(|x| x * x, Op::Square)
    }

    pub fn sqrt(&self) -> Result<Tensor> {
        self.unary_checked("sqrt", |x| x > 0.0, f64::sqrt, Op::Sqrt)
    }

    pub fn recip(&self) -> Result<Tensor> {
        self.unary_checked("recip", |x| x != 0.0, |x| 1.0 / x, Op::Recip)
    }

    // ── vector ops ────────────────────────────────────────────────────

    /// Flattens every input in order into one 1-D tensor.
    pub fn concat(parts: &[Tensor]) -> Result<Tensor> {
        if parts.is_empty() {
            return Err(TensorError::LengthMismatch {
                shape: vec![],
                len: 0,
            });
        }
        let mut data = Vec::new();
        for p in parts {
            data.extend_from_slice(&p.0.borrow().data);
        }
        Ok(Tensor::wrap(
            vec![data.len()],
            data,
            Op::Concat(parts.to_vec()),
        ))
    }

    pub fn dot(&self, other: &Tensor) -> Result<Tensor> {
        let (a, b) = (self.0.borrow(), other.0.borrow());
        if a.data.len() != b.data.len() {
            return Err(TensorError::ShapeMismatch {
                op: "dot",
                lhs: a.shape.clone(),
                rhs: b.shape.clone(),
            });
        }
        let mut acc = 0.0;
        for i in 0..a.data.len() {
            acc += a.data[i] * b.data[i];
        }
        drop((a, b));
        Ok(Tensor::wrap(
            vec![1],
            vec![acc],
            Op::Dot(self.clone(), other.clone()),
        ))
    }

    pub fn l2_norm(&self) -> Tensor {
        let inner = self.0.borrow();
        let mut acc = 0.0;
        for &x in &inner.data {
            acc += x * x;
        }
        drop(inner);
        Tensor::wrap(vec![1], vec![acc.sqrt()], Op::L2Norm(self.clone()))
    }

    /// Applies a shape-preserving self-adjoint linear map. The backward rule
    /// applies the same map to the incoming gradient, which is exact
    /// precisely when `map` is linear and self-adjoint.
    pub fn self_adjoint_map(&self, map: Rc<dyn Fn(&[f64]) -> Vec<f64>>) -> Result<Tensor> {
        let inner = self.0.borrow();
        let data = map(&inner.data);
        if data.len() != inner.data.len() {
            return Err(TensorError::LengthMismatch {
                shape: inner.shape.clone(),
                len: data.len(),
            });
        }
        let shape = inner.shape.clone();
        drop(inner);
        Ok(Tensor::wrap(
            shape,
            data,
            Op::SelfAdjoint {
                input: self.clone(),
                map,
            },
        ))
    }

    // ── reverse pass ──────────────────────────────────────────────────

    /// Accumulates d(self)/d(leaf) into the grad buffer of every reachable
    /// node. `self` must be a scalar. Repeated calls without `zero_grad`
    /// keep accumulating.
    pub fn backward(&self) -> Result<()> {
        if self.len() != 1 {
            return Err(TensorError::NonScalarBackward {
                shape: self.shape(),
            });
        }
        let order = self.topo_order();
        let mut adjoint: HashMap<*const Inner, Vec<f64>> = HashMap::new();
        adjoint.insert(self.key(), vec![1.0]);

        // Reverse topological order: each node is finalized before its parents.
        for t in order.iter().rev() {
            let g = match adjoint.get(&t.key()) {
                Some(g) => g.clone(),
                None => continue, // not on a path to the loss
            };
            let inner = t.0.borrow();
            if let Some(op) = &inner.op {
                propagate(op, &inner.data, &g, &mut adjoint);
            }
        }

        for t in &order {
            if let Some(g) = adjoint.remove(&t.key()) {
                let mut inner = t.0.borrow_mut();
                match &mut inner.grad {
                    Some(buf) => {
                        for (b, x) in buf.iter_mut().zip(&g) {
                            *b += x;
                        }
                    }
                    None => inner.grad = Some(g),
                }
            }
        }
        Ok(())
    }

    /// Post-order DFS: every node appears after all of its parents,
    /// each exactly once.
    fn topo_order(&self) -> Vec<Tensor> {
        let mut order = Vec::new();
        let mut visited: HashSet<*const Inner> = HashSet::new();
        let mut stack: Vec<(Tensor, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !visited.insert(t.key()) {
                continue;
            }
            stack.push((t.clone(), true));
            if let Some(op) = &t.0.borrow().op {
                for p in op_parents(op) {
                    stack.push((p, false));
                }
            }
        }
        order
    }
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let inner = self.0.borrow();
        f.debug_struct("Tensor")
            .field("shape", &inner.shape)
            .field("data", &inner.data)
            .finish()
    }
}

fn op_parents(op: &Op) -> Vec<Tensor> {
    match op {
        Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::MatMul(a, b) | Op::Dot(a, b) => {
            vec![a.clone(), b.clone()]
        }
        Op::Scale(a, _) | Op::LeakyRelu(a, _) => vec![a.clone()],
        Op::Sum(a)
        | Op::Mean(a)
        | Op::Tanh(a)
        | Op::Softplus(a)
        | Op::Ln(a)
        | Op::Sigmoid(a)
        | Op::Square(a)
        | Op::Sqrt(a)
        | Op::Recip(a)
        | Op::L2Norm(a) => vec![a.clone()],
        Op::Concat(parts) => parts.clone(),
        Op::SelfAdjoint { input, .. } => vec![input.clone()],
    }
}

fn accumulate(adjoint: &mut HashMap<*const Inner, Vec<f64>>, t: &Tensor, contribution: &[f64]) {
    let entry = adjoint
        .entry(t.key())
        .or_insert_with(|| vec![0.0; t.len()]);
    if contribution.len() == entry.len() {
        for (e, c) in entry.iter_mut().zip(contribution) {
            *e += c;
        }
    } else {
        // scalar node fed by a broadcast: fold the contribution
        debug_assert_eq!(entry.len(), 1);
        let mut acc = 0.0;
        for &c in contribution {
            acc += c;
        }
        entry[0] += acc;
    }
}

/// Exact adjoint rule of each primitive. `out` is the node's forward value,
/// `g` its incoming gradient.
fn propagate(op: &Op, out: &[f64], g: &[f64], adjoint: &mut HashMap<*const Inner, Vec<f64>>) {
    match op {
        Op::Add(a, b) => {
            accumulate(adjoint, a, g);
            accumulate(adjoint, b, g);
        }
        Op::Sub(a, b) => {
            accumulate(adjoint, a, g);
            let neg: Vec<f64> = g.iter().map(|&x| -x).collect();
            accumulate(adjoint, b, &neg);
        }
        Op::Mul(a, b) => {
            let (ad, bd) = (a.data(), b.data());
            let ga: Vec<f64> = g
                .iter()
                .enumerate()
                .map(|(i, &x)| x * bd[if bd.len() == 1 { 0 } else { i }])
                .collect();
            let gb: Vec<f64> = g
                .iter()
                .enumerate()
                .map(|(i, &x)| x * ad[if ad.len() == 1 { 0 } else { i }])
                .collect();
            accumulate(adjoint, a, &ga);
            accumulate(adjoint, b, &gb);
        }
        Op::Scale(a, c) => {
            let ga: Vec<f64> = g.iter().map(|&x| x * c).collect();
            accumulate(adjoint, a, &ga);
        }
        Op::MatMul(a, b) => {
            let (m, k) = (a.shape()[0], a.shape()[1]);
            let n = b.shape()[1];
            let (ad, bd) = (a.data(), b.data());
            // dA = g · Bᵀ, dB = Aᵀ · g
            let mut ga = vec![0.0; m * k];
            for i in 0..m {
                for j in 0..k {
                    let mut acc = 0.0;
                    for l in 0..n {
                        acc += g[i * n + l] * bd[j * n + l];
                    }
                    ga[i * k + j] = acc;
                }
            }
            let mut gb = vec![0.0; k * n];
            for i in 0..k {
                for j in 0..n {
                    let mut acc = 0.0;
                    for l in 0..m {
                        acc += ad[l * k + i] * g[l * n + j];
                    }
                    gb[i * n + j] = acc;
                }
            }
            accumulate(adjoint, a, &ga);
            accumulate(adjoint, b, &gb);
        }
        Op::Sum(a) => {
            let ga = vec![g[0]; a.len()];
            accumulate(adjoint, a, &ga);
        }
        Op::Mean(a) => {
            let ga = vec![g[0] / a.len() as f64; a.len()];
            accumulate(adjoint, a, &ga);
        }
        Op::LeakyRelu(a, slope) => {
            let ad = a.data();
            let ga: Vec<f64> = g
                .iter()
                .zip(&ad)
                .map(|(&x, &v)| if v > 0.0 { x } else { x * slope })
                .collect();
            accumulate(adjoint, a, &ga);
        }
        Op::Tanh(a) => {
            let ga: Vec<f64> = g.iter().zip(out).map(|(&x, &y)| x * (1.0 - y * y)).collect();
            accumulate(adjoint, a, &ga);
        }
        Op::Softplus(a) => {
            let ad = a.data();
            let ga: Vec<f64> = g.iter().zip(&ad).map(|(&x, &v)| x * sigmoid(v)).collect();
            accumulate(adjoint, a, &ga);
        }
        Op::Ln(a) => {
            let ad = a.data();
            let ga: Vec<f64> = g.iter().zip(&ad).map(|(&x, &v)| x / v).collect();
            accumulate(adjoint, a, &ga);
        }
        Op::Sigmoid(a) => {
            let ga: Vec<f64> = g
                .iter()
                .zip(out)
                .map(|(&x, &y)| x * y * (1.0 - y))
                .collect();
            accumulate(adjoint, a, &ga);
        }
        Op::Square(a) => {
            let ad = a.data();
            let ga: Vec<f64> = g.iter().zip(&ad).map(|(&x, &v)| x * 2.0 * v).collect();
            accumulate(adjoint, a, &ga);
        }
        Op::Sqrt(a) => {
            let ga: Vec<f64> = g.iter().zip(out).map(|(&x, &y)| x / (2.0 * y)).collect();
            accumulate(adjoint, a, &ga);
        }
        Op::Recip(a) => {
            let ga: Vec<f64> = g.iter().zip(out).map(|(&x, &y)| -x * y * y).collect();
            accumulate(adjoint, a, &ga);
        }
        Op::Concat(parts) => {
            let mut offset = 0;
            for p in parts {
                let n = p.len();
                accumulate(adjoint, p, &g[offset..offset + n]);
                offset += n;
            }
        }
        Op::Dot(a, b) => {
            let (ad, bd) = (a.data(), b.data());
            let ga: Vec<f64> = bd.iter().map(|&v| g[0] * v).collect();
            let gb: Vec<f64> = ad.iter().map(|&v| g[0] * v).collect();
            accumulate(adjoint, a, &ga);
            accumulate(adjoint, b, &gb);
        }
        Op::L2Norm(a) => {
            let ad = a.data();
            let norm = out[0];
            // subgradient 0 at the origin
            let ga: Vec<f64> = if norm == 0.0 {
                vec![0.0; ad.len()]
            } else {
                ad.iter().map(|&v| g[0] * v / norm).collect()
            };
            accumulate(adjoint, a, &ga);
        }
        Op::SelfAdjoint { input, map } => {
            let ga = map(g);
            accumulate(adjoint, input, &ga);
        }
    }
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0;
            for l in 0..k {
                acc += a[i * k + l] * b[l * n + j];
            }
            out[i * n + j] = acc;
        }
    }
    out
}

pub(crate) fn softplus(x: f64) -> f64 {
    // ln(1 + e^x) without overflow on either tail
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
