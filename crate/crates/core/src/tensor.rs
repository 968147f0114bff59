//! Dense tensors and a tape-based reverse-mode differentiation engine.
//!
//! Parameters live in [`Tensor`] values owned by a [`ParamSet`]. A forward
//! pass copies them onto a [`Graph`] as leaves, records every operation in
//! execution order, and [`Graph::backward`] walks the record once in reverse.
//! Gradients are then folded back into the owning tensors additively, frozen
//! tensors included; optimizers are the ones that skip frozen tensors.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::AddAssign;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::Rng;
use thiserror::Error;

/// Floating-point element type: `f32` for training, `f64` for gradient checks.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + Sum + AddAssign + 'static
{
    const BITS: u32;
}

impl Real for f32 {
    const BITS: u32 = 32;
}

impl Real for f64 {
    const BITS: u32 = 64;
}

#[inline]
pub(crate) fn lit<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("literal representable")
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("shape {shape:?} needs {expected} values, got {actual}")]
    ShapeData {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("non-finite input to {op}")]
    Numeric { op: &'static str },
    #[error("index {index} out of range for extent {extent}")]
    Index { index: usize, extent: usize },
    #[error("only leaf nodes can be overwritten")]
    NotLeaf,
    #[error("backward already ran on this graph; gradients would be accumulated twice")]
    DoubleBackward,
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

fn check_shape(shape: &[usize], len: usize) -> Result<()> {
    let expected: usize = shape.iter().product();
    if shape.is_empty() || shape.contains(&0) || expected != len {
        return Err(TensorError::ShapeData {
            shape: shape.to_vec(),
            expected,
            actual: len,
        });
    }
    Ok(())
}

/// A dense row-major array with optional accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    values: Vec<T>,
    grad: Option<Vec<T>>,
    pub requires_grad: bool,
    /// Participates in backward but optimizers never touch its values.
    pub frozen: bool,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: &[usize], values: Vec<T>) -> Result<Self> {
        check_shape(shape, values.len())?;
        Ok(Self {
            shape: shape.to_vec(),
            values,
            grad: None,
            requires_grad: false,
            frozen: false,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self::new(shape, vec![T::zero(); n]).expect("non-empty shape")
    }

    pub fn trainable(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    pub fn accumulate_grad(&mut self, g: &[T]) {
        debug_assert_eq!(g.len(), self.values.len());
        match &mut self.grad {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, &b)| *a += b),
            None => self.grad = Some(g.to_vec()),
        }
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            values: self.values.iter().map(|v| U::from(*v).unwrap()).collect(),
            grad: self
                .grad
                .as_ref()
                .map(|g| g.iter().map(|v| U::from(*v).unwrap()).collect()),
            requires_grad: self.requires_grad,
            frozen: self.frozen,
        }
    }
}

/// Handle to a node recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddConst(Var, Vec<T>),
    Softmax { x: Var, outer: usize, len: usize, inner: usize },
    LogSoftmax { x: Var, outer: usize, len: usize, inner: usize },
    LayerNorm { x: Var, gamma: Var, beta: Var, eps: T, xhat: Vec<T>, rstd: Vec<T> },
    Embedding { table: Var, ids: Vec<usize> },
    ConcatCols(Vec<Var>),
    SliceCols { x: Var, start: usize },
    MeanRows(Var),
    Sum(Var),
    Dropout { x: Var, mask: Vec<T> },
    Gelu(Var),
    Nll { x: Var, targets: Vec<usize> },
}

impl<T> Op<T> {
    fn any_input(&self, mut f: impl FnMut(Var) -> bool) -> bool {
        match self {
            Op::Leaf => false,
            Op::MatMul(a, b) | Op::Add(a, b) | Op::AddBias(a, b) | Op::Mul(a, b) => f(*a) || f(*b),
            Op::Transpose(a)
            | Op::Reshape(a)
            | Op::Scale(a, _)
            | Op::AddConst(a, _)
            | Op::MeanRows(a)
            | Op::Sum(a)
            | Op::Gelu(a) => f(*a),
            Op::Softmax { x, .. }
            | Op::LogSoftmax { x, .. }
            | Op::SliceCols { x, .. }
            | Op::Dropout { x, .. }
            | Op::Nll { x, .. } => f(*x),
            Op::Embedding { table, .. } => f(*table),
            Op::LayerNorm { x, gamma, beta, .. } => f(*x) || f(*gamma) || f(*beta),
            Op::ConcatCols(parts) => parts.iter().any(|&p| f(p)),
        }
    }
}

#[derive(Debug)]
struct Node<T> {
    shape: Vec<usize>,
    value: Vec<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Ordered record of executed operations. Nodes are appended as they run, so
/// the record is topologically sorted by construction.
#[derive(Debug)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    backward_done: bool,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    /// Gradient of the last backward's loss w.r.t. `v`, if `v` was reached.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Scalar value of a one-element node.
    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value[0]
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<T>, op: Op<T>, requires_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn dims2(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        match self.nodes[v.0].shape.as_slice() {
            &[m, n] => Ok((m, n)),
            s => Err(TensorError::Dimension {
                op,
                left: s.to_vec(),
                right: vec![],
            }),
        }
    }

    /// Records a copy of `t` as a leaf; gradients flow to it iff `t.requires_grad`.
    pub fn param(&mut self, t: &Tensor<T>) -> Var {
        self.push(t.shape.clone(), t.values.clone(), Op::Leaf, t.requires_grad)
    }

    /// Records a constant input (never differentiated).
    pub fn constant(&mut self, shape: &[usize], values: Vec<T>) -> Result<Var> {
        check_shape(shape, values.len())?;
        Ok(self.push(shape.to_vec(), values, Op::Leaf, false))
    }

    /// Records a differentiable leaf not owned by any parameter set.
    pub fn variable(&mut self, shape: &[usize], values: Vec<T>) -> Result<Var> {
        check_shape(shape, values.len())?;
        Ok(self.push(shape.to_vec(), values, Op::Leaf, true))
    }

    fn record(&mut self, shape: Vec<usize>, mut op: Op<T>, requires_grad: bool) -> Result<Var> {
        let value = self.eval(&mut op, &shape)?;
        Ok(self.push(shape, value, op, requires_grad))
    }

    /// Computes a node's value from its inputs. Shapes were validated when the
    /// node was first recorded; auxiliary buffers inside `op` are refreshed.
    fn eval(&self, op: &mut Op<T>, shape: &[usize]) -> Result<Vec<T>> {
        let val = |v: &Var| &self.nodes[v.0].value;
        Ok(match op {
            Op::Leaf => unreachable!("leaves are never evaluated"),
            Op::MatMul(a, b) => {
                let (m, k) = (self.nodes[a.0].shape[0], self.nodes[a.0].shape[1]);
                let n = shape[1];
                let mut out = vec![T::zero(); m * n];
                matmul_into(val(a), val(b), &mut out, m, k, n);
                out
            }
            Op::Transpose(a) => {
                let (m, n) = (shape[1], shape[0]);
                let src = val(a);
                let mut out = vec![T::zero(); m * n];
                for i in 0..m {
                    for j in 0..n {
                        out[j * m + i] = src[i * n + j];
                    }
                }
                out
            }
            Op::Reshape(a) => val(a).clone(),
            Op::Add(a, b) => zip_map(val(a), val(b), |x, y| x + y),
            Op::AddBias(a, bias) => {
                let b = val(bias);
                let mut out = val(a).clone();
                for row in out.chunks_mut(shape[1]) {
                    row.iter_mut().zip(b).for_each(|(o, &bv)| *o += bv);
                }
                out
            }
            Op::Mul(a, b) => zip_map(val(a), val(b), |x, y| x * y),
            Op::Scale(a, c) => val(a).iter().map(|&x| x * *c).collect(),
            Op::AddConst(a, c) => zip_map(val(a), c, |x, y| x + y),
            Op::Softmax { x, outer, len, inner } => {
                self.check_finite(*x, "softmax")?;
                let (outer, len, inner) = (*outer, *len, *inner);
                let mut out = val(x).clone();
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |k: usize| (o * len + k) * inner + i;
                        let max = (0..len).map(|k| out[idx(k)]).fold(T::neg_infinity(), T::max);
                        let mut total = T::zero();
                        for k in 0..len {
                            let e = (out[idx(k)] - max).exp();
                            out[idx(k)] = e;
                            total += e;
                        }
                        for k in 0..len {
                            out[idx(k)] = out[idx(k)] / total;
                        }
                    }
                }
                out
            }
            Op::LogSoftmax { x, outer, len, inner } => {
                self.check_finite(*x, "log_softmax")?;
                let (outer, len, inner) = (*outer, *len, *inner);
                let mut out = val(x).clone();
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |k: usize| (o * len + k) * inner + i;
                        let max = (0..len).map(|k| out[idx(k)]).fold(T::neg_infinity(), T::max);
                        let total: T = (0..len).map(|k| (out[idx(k)] - max).exp()).sum();
                        let lse = max + total.ln();
                        for k in 0..len {
                            out[idx(k)] = out[idx(k)] - lse;
                        }
                    }
                }
                out
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                eps,
                xhat,
                rstd,
            } => {
                let (m, n) = (shape[0], shape[1]);
                let nf: T = lit(n as f64);
                let (xv, g, b) = (val(x), val(gamma), val(beta));
                xhat.resize(m * n, T::zero());
                rstd.resize(m, T::zero());
                let mut out = vec![T::zero(); m * n];
                for r in 0..m {
                    let row = &xv[r * n..(r + 1) * n];
                    let mean = row.iter().copied().sum::<T>() / nf;
                    let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nf;
                    let rs = (var + *eps).sqrt().recip();
                    rstd[r] = rs;
                    for c in 0..n {
                        let h = (row[c] - mean) * rs;
                        xhat[r * n + c] = h;
                        out[r * n + c] = h * g[c] + b[c];
                    }
                }
                out
            }
            Op::Embedding { table, ids } => {
                let d = shape[1];
                let tv = val(table);
                let mut out = Vec::with_capacity(ids.len() * d);
                for &id in ids.iter() {
                    out.extend_from_slice(&tv[id * d..(id + 1) * d]);
                }
                out
            }
            Op::ConcatCols(parts) => {
                let mut out = Vec::with_capacity(shape[0] * shape[1]);
                for r in 0..shape[0] {
                    for p in parts.iter() {
                        let w = self.nodes[p.0].shape[1];
                        out.extend_from_slice(&val(p)[r * w..(r + 1) * w]);
                    }
                }
                out
            }
            Op::SliceCols { x, start } => {
                let n = self.nodes[x.0].shape[1];
                let (m, width, start) = (shape[0], shape[1], *start);
                let xv = val(x);
                let mut out = Vec::with_capacity(m * width);
                for r in 0..m {
                    out.extend_from_slice(&xv[r * n + start..r * n + start + width]);
                }
                out
            }
            Op::MeanRows(x) => {
                let n = shape[1];
                let xv = val(x);
                let mut out = vec![T::zero(); n];
                for row in xv.chunks(n) {
                    out.iter_mut().zip(row).for_each(|(o, &v)| *o += v);
                }
                let mf: T = lit((xv.len() / n) as f64);
                out.iter_mut().for_each(|o| *o = *o / mf);
                out
            }
            Op::Sum(x) => vec![val(x).iter().copied().sum()],
            Op::Dropout { x, mask } => zip_map(val(x), mask, |a, b| a * b),
            Op::Gelu(x) => {
                let (c, a, half) = (lit::<T>(GELU_C), lit::<T>(GELU_A), lit::<T>(0.5));
                val(x)
                    .iter()
                    .map(|&v| half * v * (T::one() + (c * (v + a * v * v * v)).tanh()))
                    .collect()
            }
            Op::Nll { x, targets } => {
                let v = self.nodes[x.0].shape[1];
                let lp = val(x);
                let total: T = targets.iter().enumerate().map(|(row, &id)| lp[row * v + id]).sum();
                vec![-total]
            }
        })
    }

    /// Overwrites a leaf's values and re-evaluates only the nodes that depend
    /// on it. Any earlier backward result is discarded.
    pub fn replay(&mut self, leaf: Var, values: &[T]) -> Result<()> {
        let node = &mut self.nodes[leaf.0];
        if !matches!(node.op, Op::Leaf) {
            return Err(TensorError::NotLeaf);
        }
        check_shape(&node.shape, values.len())?;
        node.value.copy_from_slice(values);
        self.grads.clear();
        self.backward_done = false;
        let mut dirty = vec![false; self.nodes.len()];
        dirty[leaf.0] = true;
        for idx in leaf.0 + 1..self.nodes.len() {
            if !self.nodes[idx].op.any_input(|v| dirty[v.0]) {
                continue;
            }
            dirty[idx] = true;
            let mut op = std::mem::replace(&mut self.nodes[idx].op, Op::Leaf);
            let shape = std::mem::take(&mut self.nodes[idx].shape);
            let value = self.eval(&mut op, &shape);
            let node = &mut self.nodes[idx];
            node.op = op;
            node.shape = shape;
            node.value = value?;
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a, "matmul")?;
        let (k2, n) = self.dims2(b, "matmul")?;
        if k != k2 {
            return Err(TensorError::Dimension {
                op: "matmul",
                left: vec![m, k],
                right: vec![k2, n],
            });
        }
        let rg = self.rg(a) || self.rg(b);
        self.record(vec![m, n], Op::MatMul(a, b), rg)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.dims2(a, "transpose")?;
        let rg = self.rg(a);
        self.record(vec![n, m], Op::Transpose(a), rg)
    }

    /// Same values under a new shape with the same element count.
    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        check_shape(shape, self.nodes[a.0].value.len())?;
        let rg = self.rg(a);
        self.record(shape.to_vec(), Op::Reshape(a), rg)
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        if self.nodes[a.0].shape != self.nodes[b.0].shape {
            return Err(TensorError::Dimension {
                op,
                left: self.nodes[a.0].shape.clone(),
                right: self.nodes[b.0].shape.clone(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let rg = self.rg(a) || self.rg(b);
        self.record(self.nodes[a.0].shape.clone(), Op::Add(a, b), rg)
    }

    /// `a[m×n] + bias[n]` broadcast over rows.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.dims2(a, "add_bias")?;
        if self.nodes[bias.0].value.len() != n {
            return Err(TensorError::Dimension {
                op: "add_bias",
                left: vec![m, n],
                right: self.nodes[bias.0].shape.clone(),
            });
        }
        let rg = self.rg(a) || self.rg(bias);
        self.record(vec![m, n], Op::AddBias(a, bias), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let rg = self.rg(a) || self.rg(b);
        self.record(self.nodes[a.0].shape.clone(), Op::Mul(a, b), rg)
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let rg = self.rg(a);
        self.record(self.nodes[a.0].shape.clone(), Op::Scale(a, c), rg)
            .expect("scale cannot fail")
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -T::one())
    }

    /// Adds a non-differentiable tensor (e.g. an attention mask of 0 / -inf).
    pub fn add_const(&mut self, a: Var, c: &[T]) -> Result<Var> {
        if c.len() != self.nodes[a.0].value.len() {
            return Err(TensorError::Dimension {
                op: "add_const",
                left: self.nodes[a.0].shape.clone(),
                right: vec![c.len()],
            });
        }
        let rg = self.rg(a);
        self.record(self.nodes[a.0].shape.clone(), Op::AddConst(a, c.to_vec()), rg)
    }

    fn axis_split(&self, x: Var, axis: usize, op: &'static str) -> Result<(usize, usize, usize)> {
        let shape = &self.nodes[x.0].shape;
        if axis >= shape.len() {
            return Err(TensorError::Dimension {
                op,
                left: shape.clone(),
                right: vec![axis],
            });
        }
        let outer = shape[..axis].iter().product();
        let inner = shape[axis + 1..].iter().product();
        Ok((outer, shape[axis], inner))
    }

    fn check_finite(&self, x: Var, op: &'static str) -> Result<()> {
        // -inf is a legal masked logit; NaN and +inf are not.
        if self.nodes[x.0]
            .value
            .iter()
            .any(|v| v.is_nan() || *v == T::infinity())
        {
            return Err(TensorError::Numeric { op });
        }
        Ok(())
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let (outer, len, inner) = self.axis_split(x, axis, "softmax")?;
        let rg = self.rg(x);
        self.record(self.nodes[x.0].shape.clone(), Op::Softmax { x, outer, len, inner }, rg)
    }

    pub fn log_softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let (outer, len, inner) = self.axis_split(x, axis, "log_softmax")?;
        let rg = self.rg(x);
        self.record(self.nodes[x.0].shape.clone(), Op::LogSoftmax { x, outer, len, inner }, rg)
    }

    /// Normalizes each row of `x[m×n]` then applies `gamma[n]`, `beta[n]`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (m, n) = self.dims2(x, "layer_norm")?;
        for p in [gamma, beta] {
            if self.nodes[p.0].value.len() != n {
                return Err(TensorError::Dimension {
                    op: "layer_norm",
                    left: vec![m, n],
                    right: self.nodes[p.0].shape.clone(),
                });
            }
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        let op = Op::LayerNorm {
            x,
            gamma,
            beta,
            eps: lit(eps),
            xhat: Vec::new(),
            rstd: Vec::new(),
        };
        self.record(vec![m, n], op, rg)
    }

    /// Gathers rows of `table[V×d]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (v, d) = self.dims2(table, "embedding")?;
        if ids.is_empty() {
            return Err(TensorError::ShapeData {
                shape: vec![0, d],
                expected: 0,
                actual: 0,
            });
        }
        if let Some(&id) = ids.iter().find(|&&id| id >= v) {
            return Err(TensorError::Index { index: id, extent: v });
        }
        let rg = self.rg(table);
        let op = Op::Embedding {
            table,
            ids: ids.to_vec(),
        };
        self.record(vec![ids.len(), d], op, rg)
    }

    /// Concatenates 2-D tensors with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let (m, _) = self.dims2(parts[0], "concat")?;
        let mut total = 0;
        for &p in parts {
            let (pm, pn) = self.dims2(p, "concat")?;
            if pm != m {
                return Err(TensorError::Dimension {
                    op: "concat",
                    left: self.nodes[parts[0].0].shape.clone(),
                    right: vec![pm, pn],
                });
            }
            total += pn;
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.record(vec![m, total], Op::ConcatCols(parts.to_vec()), rg)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, width: usize) -> Result<Var> {
        let (m, n) = self.dims2(x, "slice_cols")?;
        if width == 0 || start + width > n {
            return Err(TensorError::Index {
                index: start + width,
                extent: n,
            });
        }
        let rg = self.rg(x);
        self.record(vec![m, width], Op::SliceCols { x, start }, rg)
    }

    /// Column means of `x[m×n]`, shape `[1×n]`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let (_, n) = self.dims2(x, "mean_rows")?;
        let rg = self.rg(x);
        self.record(vec![1, n], Op::MeanRows(x), rg)
    }

    /// Sum of all entries, shape `[1]`.
    pub fn sum(&mut self, x: Var) -> Var {
        let rg = self.rg(x);
        self.record(vec![1], Op::Sum(x), rg).expect("sum cannot fail")
    }

    /// Inverted dropout: kept entries are scaled by `1/(1-p)`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, rng: &mut R) -> Var {
        if p <= 0.0 {
            return x;
        }
        let keep: T = lit(1.0 / (1.0 - p));
        let mask: Vec<T> = (0..self.nodes[x.0].value.len())
            .map(|_| if rng.gen::<f64>() < p { T::zero() } else { keep })
            .collect();
        let rg = self.rg(x);
        self.record(self.nodes[x.0].shape.clone(), Op::Dropout { x, mask }, rg)
            .expect("dropout cannot fail")
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        let rg = self.rg(x);
        self.record(self.nodes[x.0].shape.clone(), Op::Gelu(x), rg)
            .expect("gelu cannot fail")
    }

    /// `-Σ_t log_probs[t, targets[t]]` for `log_probs[T×V]`.
    pub fn nll_loss(&mut self, log_probs: Var, targets: &[usize]) -> Result<Var> {
        let (t, v) = self.dims2(log_probs, "nll_loss")?;
        if targets.len() != t {
            return Err(TensorError::Dimension {
                op: "nll_loss",
                left: vec![t, v],
                right: vec![targets.len()],
            });
        }
        if let Some(&id) = targets.iter().find(|&&id| id >= v) {
            return Err(TensorError::Index { index: id, extent: v });
        }
        let rg = self.rg(log_probs);
        let op = Op::Nll {
            x: log_probs,
            targets: targets.to_vec(),
        };
        self.record(vec![1], op, rg)
    }

    /// Reverse pass from a scalar `loss`. Allowed once per graph.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(TensorError::DoubleBackward);
        }
        if self.nodes[loss.0].value.len() != 1 {
            return Err(TensorError::NotScalar(self.nodes[loss.0].shape.clone()));
        }
        self.backward_done = true;
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    fn backprop_node(&self, idx: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[idx];
        let val = |v: Var| &self.nodes[v.0].value;
        let mut send = |v: Var, contrib: Vec<T>| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => acc.iter_mut().zip(&contrib).for_each(|(a, &c)| *a += c),
                slot @ None => *slot = Some(contrib),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, n) = (node.shape[0], node.shape[1]);
                let k = self.nodes[a.0].shape[1];
                if self.rg(*a) {
                    // dA = dC · Bᵀ
                    let bv = val(*b);
                    let mut da = vec![T::zero(); m * k];
                    for i in 0..m {
                        let gr = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            da[i * k + p] = dot(gr, &bv[p * n..(p + 1) * n]);
                        }
                    }
                    send(*a, da);
                }
                if self.rg(*b) {
                    // dB = Aᵀ · dC
                    let av = val(*a);
                    let mut db = vec![T::zero(); k * n];
                    for i in 0..m {
                        let gr = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let s = av[i * k + p];
                            if s != T::zero() {
                                axpy(s, gr, &mut db[p * n..(p + 1) * n]);
                            }
                        }
                    }
                    send(*b, db);
                }
            }
            Op::Transpose(a) => {
                let (n, m) = (node.shape[0], node.shape[1]);
                let mut ga = vec![T::zero(); m * n];
                for j in 0..n {
                    for i in 0..m {
                        ga[i * n + j] = g[j * m + i];
                    }
                }
                send(*a, ga);
            }
            Op::Reshape(a) => send(*a, g.to_vec()),
            Op::Add(a, b) => {
                send(*a, g.to_vec());
                send(*b, g.to_vec());
            }
            Op::AddBias(a, bias) => {
                send(*a, g.to_vec());
                let n = node.shape[1];
                let mut gb = vec![T::zero(); n];
                for row in g.chunks(n) {
                    gb.iter_mut().zip(row).for_each(|(o, &v)| *o += v);
                }
                send(*bias, gb);
            }
            Op::Mul(a, b) => {
                send(*a, zip_map(g, val(*b), |x, y| x * y));
                send(*b, zip_map(g, val(*a), |x, y| x * y));
            }
            Op::Scale(a, c) => send(*a, g.iter().map(|&x| x * *c).collect()),
            Op::AddConst(a, _) => send(*a, g.to_vec()),
            Op::Softmax { x, outer, len, inner } => {
                let y = &node.value;
                let mut gx = vec![T::zero(); y.len()];
                for o in 0..*outer {
                    for i in 0..*inner {
                        let idx = |k: usize| (o * len + k) * inner + i;
                        let s: T = (0..*len).map(|k| g[idx(k)] * y[idx(k)]).sum();
                        for k in 0..*len {
                            gx[idx(k)] = y[idx(k)] * (g[idx(k)] - s);
                        }
                    }
                }
                send(*x, gx);
            }
            Op::LogSoftmax { x, outer, len, inner } => {
                let y = &node.value;
                let mut gx = vec![T::zero(); y.len()];
                for o in 0..*outer {
                    for i in 0..*inner {
                        let idx = |k: usize| (o * len + k) * inner + i;
                        let s: T = (0..*len).map(|k| g[idx(k)]).sum();
                        for k in 0..*len {
                            let p = y[idx(k)].exp();
                            gx[idx(k)] = g[idx(k)] - p * s;
                        }
                    }
                }
                send(*x, gx);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
                ..
            } => {
                let (m, n) = (node.shape[0], node.shape[1]);
                let gv = val(*gamma);
                if self.rg(*x) {
                    let nf: T = lit(n as f64);
                    let mut gx = vec![T::zero(); m * n];
                    for r in 0..m {
                        let gr = &g[r * n..(r + 1) * n];
                        let xh = &xhat[r * n..(r + 1) * n];
                        let dxh: Vec<T> = gr.iter().zip(gv).map(|(&a, &b)| a * b).collect();
                        let s1: T = dxh.iter().copied().sum();
                        let s2: T = dxh.iter().zip(xh).map(|(&a, &b)| a * b).sum();
                        for c in 0..n {
                            gx[r * n + c] = rstd[r] * (dxh[c] - (s1 + xh[c] * s2) / nf);
                        }
                    }
                    send(*x, gx);
                }
                let mut gg = vec![T::zero(); n];
                let mut gb = vec![T::zero(); n];
                for r in 0..m {
                    for c in 0..n {
                        gg[c] += g[r * n + c] * xhat[r * n + c];
                        gb[c] += g[r * n + c];
                    }
                }
                send(*gamma, gg);
                send(*beta, gb);
            }
            Op::Embedding { table, ids } => {
                let d = node.shape[1];
                let mut gt = vec![T::zero(); self.nodes[table.0].value.len()];
                for (row, &id) in ids.iter().enumerate() {
                    gt[id * d..(id + 1) * d]
                        .iter_mut()
                        .zip(&g[row * d..(row + 1) * d])
                        .for_each(|(o, &v)| *o += v);
                }
                send(*table, gt);
            }
            Op::ConcatCols(parts) => {
                let (m, total) = (node.shape[0], node.shape[1]);
                let mut offset = 0;
                for &p in parts {
                    let w = self.nodes[p.0].shape[1];
                    let mut gp = Vec::with_capacity(m * w);
                    for r in 0..m {
                        gp.extend_from_slice(&g[r * total + offset..r * total + offset + w]);
                    }
                    send(p, gp);
                    offset += w;
                }
            }
            Op::SliceCols { x, start } => {
                let (m, w) = (node.shape[0], node.shape[1]);
                let n = self.nodes[x.0].shape[1];
                let mut gx = vec![T::zero(); m * n];
                for r in 0..m {
                    gx[r * n + start..r * n + start + w].copy_from_slice(&g[r * w..(r + 1) * w]);
                }
                send(*x, gx);
            }
            Op::MeanRows(x) => {
                let m = self.nodes[x.0].shape[0];
                let mf: T = lit(m as f64);
                let row: Vec<T> = g.iter().map(|&v| v / mf).collect();
                send(*x, row.repeat(m));
            }
            Op::Sum(x) => send(*x, vec![g[0]; self.nodes[x.0].value.len()]),
            Op::Dropout { x, mask } => send(*x, zip_map(g, mask, |a, b| a * b)),
            Op::Gelu(x) => {
                let (c, a, half) = (lit::<T>(GELU_C), lit::<T>(GELU_A), lit::<T>(0.5));
                let three: T = lit(3.0);
                let gx = val(*x)
                    .iter()
                    .zip(g)
                    .map(|(&v, &gv)| {
                        let u = c * (v + a * v * v * v);
                        let th = u.tanh();
                        let du = c * (T::one() + three * a * v * v);
                        gv * (half * (T::one() + th) + half * v * (T::one() - th * th) * du)
                    })
                    .collect();
                send(*x, gx);
            }
            Op::Nll { x, targets } => {
                let v = self.nodes[x.0].shape[1];
                let mut gx = vec![T::zero(); self.nodes[x.0].value.len()];
                for (row, &id) in targets.iter().enumerate() {
                    gx[row * v + id] = -g[0];
                }
                send(*x, gx);
            }
        }
    }
}

fn zip_map<T: Copy>(a: &[T], b: &[T], f: impl Fn(T, T) -> T) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

#[inline]
fn axpy<T: Real>(s: T, x: &[T], y: &mut [T]) {
    y.iter_mut().zip(x).for_each(|(o, &v)| *o += s * v);
}

fn matmul_into<T: Real>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let s = a[i * k + p];
            if s != T::zero() {
                axpy(s, &b[p * n..(p + 1) * n], row);
            }
        }
    }
}

/// Identifies a tensor inside a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// Named collection of parameter tensors, in registration order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Real> Default for ParamSet<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParamSet<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn register(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter_mut())
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn set_frozen(&mut self, frozen: bool) {
        for t in &mut self.tensors {
            t.frozen = frozen;
        }
    }

    pub fn zero_grads(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::zero_grad);
    }

    /// Copies every tensor onto `graph` as a leaf; the result is indexed by [`ParamId`].
    pub fn bind(&self, graph: &mut Graph<T>) -> Bound {
        Bound(self.tensors.iter().map(|t| graph.param(t)).collect())
    }

    /// Adds the gradients recorded on `graph` into the owning tensors.
    pub fn accumulate_grads(&mut self, graph: &Graph<T>, bound: &Bound) {
        for (t, &v) in self.tensors.iter_mut().zip(&bound.0) {
            if let Some(g) = graph.grad(v) {
                t.accumulate_grad(g);
            }
        }
    }

    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        ParamSet {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }
}

/// Graph handles for every tensor of a [`ParamSet`].
#[derive(Debug, Clone)]
pub struct Bound(Vec<Var>);

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.0[id.0]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g64() -> Graph<f64> {
        Graph::new()
    }

    /// Scalar-loop oracle for the matrix product.
    fn naive_matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    out[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        out
    }

    #[test]
    fn matmul_hand_example_matches_loop_oracle() {
        let mut g = g64();
        let a = g.constant(&[2, 2], vec![1., 2., 3., 4.]).unwrap();
        let b = g.constant(&[2, 2], vec![5., 6., 7., 8.]).unwrap();
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.value(c), &[19., 22., 43., 50.]);
        assert_eq!(g.value(c), naive_matmul(&[1., 2., 3., 4.], &[5., 6., 7., 8.], 2, 2, 2));
    }

    #[test]
    fn matmul_identity_and_unit() {
        let mut g = g64();
        let i = g.constant(&[2, 2], vec![1., 0., 0., 1.]).unwrap();
        let b = g.constant(&[2, 2], vec![-1.5, 2., 0.25, 9.]).unwrap();
        let c = g.matmul(i, b).unwrap();
        assert_eq!(g.value(c), g.value(b));
        let x = g.constant(&[1, 1], vec![1.]).unwrap();
        let y = g.constant(&[1, 1], vec![3.]).unwrap();
        let z = g.matmul(x, y).unwrap();
        assert_eq!(g.value(z), &[3.]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut g = g64();
        let a = g.constant(&[2, 3], vec![0.; 6]).unwrap();
        let b = g.constant(&[2, 2], vec![0.; 4]).unwrap();
        let err = g.matmul(a, b).unwrap_err();
        assert_eq!(
            err,
            TensorError::Dimension {
                op: "matmul",
                left: vec![2, 3],
                right: vec![2, 2]
            }
        );
        assert!(err.to_string().contains("[2, 3]") && err.to_string().contains("[2, 2]"));
    }

    #[test]
    fn softmax_cases() {
        let mut g = g64();
        let u = g.constant(&[4], vec![0.3; 4]).unwrap();
        let su = g.softmax(u, 0).unwrap();
        assert!(g.value(su).iter().all(|&p| (p - 0.25).abs() < 1e-15));

        let x = g.constant(&[2], vec![0.0, 3f64.ln()]).unwrap();
        let sx = g.softmax(x, 0).unwrap();
        // e^0 / (e^0 + e^ln3) = 1/4
        assert!((g.value(sx)[0] - 0.25).abs() < 1e-12);
        assert!((g.value(sx)[1] - 0.75).abs() < 1e-12);

        let y = g.constant(&[2], vec![0.0 + 40.0, 3f64.ln() + 40.0]).unwrap();
        let sy = g.softmax(y, 0).unwrap();
        assert!((g.value(sy)[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn softmax_rejects_nan() {
        let mut g = g64();
        let x = g.constant(&[2], vec![f64::NAN, 0.0]).unwrap();
        assert_eq!(g.softmax(x, 0).unwrap_err(), TensorError::Numeric { op: "softmax" });
    }

    #[test]
    fn softmax_over_leading_axis() {
        let mut g = g64();
        let x = g.constant(&[2, 3], vec![1., 2., 3., 1., 0., 3.]).unwrap();
        let s = g.softmax(x, 0).unwrap();
        let v = g.value(s);
        for col in 0..3 {
            assert!((v[col] + v[3 + col] - 1.0).abs() < 1e-12);
        }
        assert!((v[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn nll_examples() {
        let mut g = g64();
        let lp = g.constant(&[2, 2], vec![0.0, f64::NEG_INFINITY, f64::NEG_INFINITY, 0.0]).unwrap();
        let l = g.nll_loss(lp, &[0, 1]).unwrap();
        assert_eq!(g.scalar(l), 0.0);

        let v = 7usize;
        let lp = g.constant(&[3, v], vec![-(v as f64).ln(); 3 * v]).unwrap();
        let l = g.nll_loss(lp, &[0, 3, 6]).unwrap();
        assert!((g.scalar(l) - 3.0 * (v as f64).ln()).abs() < 1e-12);

        let lp = g.constant(&[2, 2], vec![0.5f64.ln(), 0.5f64.ln(), 0.25f64.ln(), 0.75f64.ln()]).unwrap();
        let l = g.nll_loss(lp, &[0, 0]).unwrap();
        assert!((g.scalar(l) - 2.0794415416798357).abs() < 1e-12);

        assert_eq!(
            g.nll_loss(lp, &[0, 2]).unwrap_err(),
            TensorError::Index { index: 2, extent: 2 }
        );
    }

    #[test]
    fn nll_backward_routes_to_selected_entries() {
        let mut g = g64();
        let p = g.variable(&[2, 3], vec![0.2, 0.5, 0.3, 0.1, 0.1, 0.8]).unwrap();
        let x = g.variable(&[2, 3], vec![0.0; 6]).unwrap();
        let logp = g.add(x, p).unwrap();
        let l = g.nll_loss(logp, &[1, 2]).unwrap();
        g.backward(l).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[0., -1., 0., 0., 0., -1.]);
    }

    #[test]
    fn backward_simple_cases() {
        let mut g = g64();
        let x = g.variable(&[3], vec![1., -2., 5.]).unwrap();
        let s = g.sum(x);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1., 1., 1.]);

        let mut g = g64();
        let x = g.variable(&[1], vec![3.]).unwrap();
        let y = g.mul(x, x).unwrap();
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[6.]);
    }

    #[test]
    fn backward_twice_is_an_error() {
        let mut g = g64();
        let x = g.variable(&[1], vec![3.]).unwrap();
        let y = g.mul(x, x).unwrap();
        g.backward(y).unwrap();
        assert_eq!(g.backward(y).unwrap_err(), TensorError::DoubleBackward);
    }

    #[test]
    fn backward_needs_scalar() {
        let mut g = g64();
        let x = g.variable(&[2], vec![3., 1.]).unwrap();
        assert!(matches!(g.backward(x), Err(TensorError::NotScalar(_))));
    }

    #[test]
    fn reused_tensor_accumulates_across_uses() {
        // loss = sum(x*w) + sum(x) at x = [1,2], w = [3,4]: dx = w + 1
        let mut g = g64();
        let x = g.variable(&[2], vec![1., 2.]).unwrap();
        let w = g.constant(&[2], vec![3., 4.]).unwrap();
        let xw = g.mul(x, w).unwrap();
        let a = g.sum(xw);
        let b = g.sum(x);
        let l = g.add(a, b).unwrap();
        g.backward(l).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[4., 5.]);
    }

    #[test]
    fn frozen_tensor_still_receives_gradient() {
        let mut params = ParamSet::<f64>::new();
        let mut t = Tensor::new(&[2], vec![1., 2.]).unwrap().trainable();
        t.frozen = true;
        let id = params.register("w", t);
        let mut g = Graph::new();
        let bound = params.bind(&mut g);
        let s = g.sum(bound.var(id));
        g.backward(s).unwrap();
        params.accumulate_grads(&g, &bound);
        assert_eq!(params.get(id).grad().unwrap(), &[1., 1.]);
        // a second graph accumulates on top
        let mut g = Graph::new();
        let bound = params.bind(&mut g);
        let s = g.sum(bound.var(id));
        g.backward(s).unwrap();
        params.accumulate_grads(&g, &bound);
        assert_eq!(params.get(id).grad().unwrap(), &[2., 2.]);
        params.zero_grads();
        assert!(params.get(id).grad().is_none());
    }

    #[test]
    fn tensor_shape_must_match_data() {
        assert!(Tensor::<f32>::new(&[2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f32>::new(&[2, 0], vec![]).is_err());
        assert_eq!(Tensor::<f32>::zeros(&[2, 3]).numel(), 6);
    }

    #[test]
    fn dropout_is_identity_at_zero_rate() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut g = g64();
        let x = g.variable(&[4], vec![1., 2., 3., 4.]).unwrap();
        assert_eq!(g.dropout(x, 0.0, &mut rng), x);
        let y = g.dropout(x, 0.5, &mut rng);
        assert!(g.value(y).iter().zip(g.value(x)).all(|(&o, &i)| o == 0.0 || o == 2.0 * i));
    }

    #[test]
    fn replay_matches_fresh_recording() {
        let build = |w: Vec<f64>| {
            let mut g = g64();
            let x = g.constant(&[2, 3], vec![0.5, -1.0, 2.0, 1.5, 0.0, -0.5]).unwrap();
            let wv = g.variable(&[3, 2], w).unwrap();
            let gamma = g.variable(&[2], vec![1.0, 2.0]).unwrap();
            let beta = g.variable(&[2], vec![0.0, 0.1]).unwrap();
            let y = g.matmul(x, wv).unwrap();
            let y = g.layer_norm(y, gamma, beta, 1e-5).unwrap();
            let y = g.gelu(y);
            let lp = g.log_softmax(y, 1).unwrap();
            let loss = g.nll_loss(lp, &[1, 0]).unwrap();
            (g, wv, loss)
        };
        let w0 = vec![0.1, 0.2, -0.3, 0.4, 0.5, -0.6];
        let w1 = vec![0.7, -0.2, 0.3, 0.1, -0.5, 0.6];
        let (mut g, wv, loss) = build(w0);
        let (mut fresh, _, fresh_loss) = build(w1.clone());
        g.replay(wv, &w1).unwrap();
        assert_eq!(g.scalar(loss), fresh.scalar(fresh_loss));
        g.backward(loss).unwrap();
        fresh.backward(fresh_loss).unwrap();
        assert_eq!(g.grad(wv), fresh.grad(wv));
        assert!(matches!(g.replay(loss, &[0.0]), Err(TensorError::NotLeaf)));
    }
}
