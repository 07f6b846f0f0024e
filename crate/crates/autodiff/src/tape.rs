use std::cell::{Cell, RefCell};
use std::fmt;
use std::rc::Rc;

use crate::conv::{self, Geometry};
use crate::error::{AutodiffError, Result};
use crate::scalar::{gemm, Real};
use crate::tensor::Tensor;
use crate::{conv_output_len, conv_transpose_output_len};

/// Pointwise nonlinearities with exact local derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    /// `x` for `x > 0`, `alpha·x` otherwise; the derivative at 0 is `alpha`.
    LeakyRelu(f64),
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn apply<T: Real>(self, x: T) -> T {
        match self {
            Activation::LeakyRelu(a) => {
                if x > T::zero() {
                    x
                } else {
                    T::lit(a) * x
                }
            }
            Activation::Relu => x.max(T::zero()),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    fn derivative<T: Real>(self, x: T, y: T) -> T {
        match self {
            Activation::LeakyRelu(a) => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::lit(a)
                }
            }
            Activation::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Tanh => T::one() - y * y,
            Activation::Sigmoid => y * (T::one() - y),
        }
    }
}

pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `ln(1 + e^x)` without overflow: `max(x, 0) + ln(1 + e^{-|x|})`.
pub(crate) fn softplus<T: Real>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

/// Backward rule of a user-defined operation: maps the output gradient and
/// the input values to one gradient per input.
pub type BackwardFn<T> = Box<dyn Fn(&Tensor<T>, &[Rc<Tensor<T>>]) -> Vec<Tensor<T>>>;

enum Op<T: Real> {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, T),
    MatMul(usize, usize),
    Transpose(usize),
    Reshape(usize),
    SwapLeading(usize),
    Act(usize, Activation),
    Conv2d { x: usize, w: usize, geom: Geometry },
    ConvTranspose2d { x: usize, w: usize, geom: Geometry },
    AddBias(usize, usize),
    Sum(usize),
    Mean(usize),
    RowSums(usize),
    L1(usize),
    Softplus(usize),
    SoftmaxCrossEntropy { logits: usize, labels: Vec<usize>, probs: Tensor<T> },
    ConcatCols(usize, usize),
    GatherRows { table: usize, indices: Vec<usize> },
    SymFromUpper { v: usize, n: usize },
    GcnNormalize { a: usize, dinv: Vec<T> },
    Remap { x: usize, index: Vec<usize>, pass: Vec<bool> },
    Custom { inputs: Vec<usize>, backward: BackwardFn<T> },
}

impl<T: Real> Op<T> {
    fn inputs(&self) -> Vec<usize> {
        use Op::*;
        match self {
            Leaf => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) | MatMul(a, b) | AddBias(a, b) | ConcatCols(a, b) => vec![*a, *b],
            Conv2d { x, w, .. } | ConvTranspose2d { x, w, .. } => vec![*x, *w],
            Scale(a, _) | Transpose(a) | Reshape(a) | SwapLeading(a) | Act(a, _) | Sum(a) | Mean(a) | RowSums(a)
            | L1(a) | Softplus(a) => vec![*a],
            SoftmaxCrossEntropy { logits, .. } => vec![*logits],
            GatherRows { table, .. } => vec![*table],
            SymFromUpper { v, .. } => vec![*v],
            GcnNormalize { a, .. } => vec![*a],
            Remap { x, .. } => vec![*x],
            Custom { inputs, .. } => inputs.clone(),
        }
    }
}

struct Node<T: Real> {
    value: Rc<Tensor<T>>,
    op: Op<T>,
    needs_grad: bool,
}

/// Append-only record of a computation.
///
/// Nodes are stored in creation order, which is a topological order of the
/// graph. [`Tape::backward`] walks them once in reverse and may only run once
/// per recording; [`Tape::reset`] starts a new recording.
pub struct Tape<T: Real = f32> {
    nodes: RefCell<Vec<Node<T>>>,
    consumed: Cell<bool>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> fmt::Debug for Tape<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape")
            .field("nodes", &self.nodes.borrow().len())
            .field("consumed", &self.consumed.get())
            .finish()
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T: Real = f32> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T: Real> fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var").field("id", &self.id).field("shape", &self.shape()).finish()
    }
}

/// Gradients produced by one backward pass, indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients<T: Real = f32> {
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient with respect to `var`; zeros when the loss does not depend on it.
    pub fn wrt(&self, var: Var<'_, T>) -> Tensor<T> {
        self.grads
            .get(var.id)
            .and_then(|g| g.clone())
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[var.id]))
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            consumed: Cell::new(false),
        }
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Clears the recording so the tape can be reused.
    pub fn reset(&mut self) {
        self.nodes.get_mut().clear();
        self.consumed.set(false);
    }

    /// A leaf whose gradient is tracked.
    pub fn param(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf treated as a constant.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, Op::Leaf, false)
    }

    /// Records a user-defined differentiable operation.
    pub fn custom<'t>(&'t self, inputs: &[Var<'t, T>], value: Tensor<T>, backward: BackwardFn<T>) -> Var<'t, T> {
        let needs = inputs.iter().any(|v| v.needs_grad());
        self.push(
            value,
            Op::Custom {
                inputs: inputs.iter().map(|v| v.id).collect(),
                backward,
            },
            needs,
        )
    }

    fn push(&self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            needs_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn value(&self, id: usize) -> Rc<Tensor<T>> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    /// Reverse-mode accumulation from a scalar `loss`.
    ///
    /// Accumulation order is fixed by tape order, so identical recordings give
    /// bit-identical gradients.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Gradients<T>> {
        if self.consumed.get() {
            return Err(AutodiffError::TapeConsumed);
        }
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if !root.value.is_scalar() {
            return Err(AutodiffError::NotScalar(root.value.shape().to_vec()));
        }
        self.consumed.set(true);

        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(Tensor::ones(root.value.shape()));
        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let inputs = node.op.inputs();
            let local = backward_rule(&nodes, node, &g);
            for (input, grad) in inputs.into_iter().zip(local) {
                let Some(grad) = grad else { continue };
                if !nodes[input].needs_grad {
                    continue;
                }
                match &mut grads[input] {
                    Some(acc) => acc.axpy(T::one(), &grad),
                    slot => *slot = Some(grad),
                }
            }
        }
        let shapes = nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }
}

fn mismatch(op: &'static str, a: &[usize], b: &[usize]) -> AutodiffError {
    AutodiffError::ShapeMismatch {
        op,
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    }
}

/// Reduces a gradient to a broadcast scalar operand when needed.
fn unbroadcast<T: Real>(grad: Tensor<T>, target: &Tensor<T>) -> Tensor<T> {
    if target.shape() == grad.shape() {
        grad
    } else {
        Tensor::new(target.shape(), vec![grad.sum()]).expect("scalar operand")
    }
}

fn zip_broadcast<T: Real>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    if a.same_shape(b) {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(a.shape(), data).expect("same shape")
    } else if b.is_scalar() {
        let s = b.item();
        a.map(|x| f(x, s))
    } else {
        let s = a.item();
        b.map(|y| f(s, y))
    }
}

fn transpose2<T: Real>(t: &Tensor<T>) -> Tensor<T> {
    let (r, c) = (t.shape()[0], t.shape()[1]);
    let d = t.data();
    Tensor::from_fn(&[c, r], |i| d[(i % r) * c + i / r])
}

fn swap_leading<T: Real>(t: &Tensor<T>) -> Tensor<T> {
    let (a, b, c) = (t.shape()[0], t.shape()[1], t.shape()[2]);
    let d = t.data();
    let mut out = Vec::with_capacity(d.len());
    for j in 0..b {
        for i in 0..a {
            out.extend_from_slice(&d[(i * b + j) * c..(i * b + j + 1) * c]);
        }
    }
    Tensor::new(&[b, a, c], out).expect("permuted shape")
}

fn backward_rule<T: Real>(nodes: &[Node<T>], node: &Node<T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
    let val = |id: usize| -> &Tensor<T> { &nodes[id].value };
    let want = |id: usize| nodes[id].needs_grad;
    match &node.op {
        Op::Leaf => vec![],
        Op::Add(a, b) => vec![
            Some(unbroadcast(g.clone(), val(*a))),
            Some(unbroadcast(g.clone(), val(*b))),
        ],
        Op::Sub(a, b) => vec![
            Some(unbroadcast(g.clone(), val(*a))),
            Some(unbroadcast(g.map(|x| -x), val(*b))),
        ],
        Op::Mul(a, b) => vec![
            want(*a).then(|| unbroadcast(zip_broadcast(g, val(*b), |x, y| x * y), val(*a))),
            want(*b).then(|| unbroadcast(zip_broadcast(g, val(*a), |x, y| x * y), val(*b))),
        ],
        Op::Scale(_, c) => vec![Some(g.map(|x| x * *c))],
        Op::MatMul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
            let ga = want(*a).then(|| {
                let mut out = vec![T::zero(); m * k];
                gemm(false, true, m, n, k, g.data(), bv.data(), T::zero(), &mut out);
                Tensor::new(&[m, k], out).expect("lhs shape")
            });
            let gb = want(*b).then(|| {
                let mut out = vec![T::zero(); k * n];
                gemm(true, false, k, m, n, av.data(), g.data(), T::zero(), &mut out);
                Tensor::new(&[k, n], out).expect("rhs shape")
            });
            vec![ga, gb]
        }
        Op::Transpose(_) => vec![Some(transpose2(g))],
        Op::Reshape(a) => vec![Some(g.clone().reshape(val(*a).shape()).expect("same numel"))],
        Op::SwapLeading(_) => vec![Some(swap_leading(g))],
        Op::Act(a, kind) => {
            let x = val(*a);
            let data = x
                .data()
                .iter()
                .zip(node.value.data())
                .zip(g.data())
                .map(|((&x, &y), &gv)| gv * kind.derivative(x, y))
                .collect();
            vec![Some(Tensor::new(x.shape(), data).expect("same shape"))]
        }
        Op::Conv2d { x, w, geom } => {
            let (xv, wv) = (val(*x), val(*w));
            let (batch, filters) = (xv.shape()[0], wv.shape()[0]);
            let (gx, gw) =
                conv::conv2d_backward(geom, batch, filters, xv.data(), wv.data(), g.data(), want(*x), want(*w));
            vec![
                gx.map(|d| Tensor::new(xv.shape(), d).expect("input shape")),
                gw.map(|d| Tensor::new(wv.shape(), d).expect("weight shape")),
            ]
        }
        Op::ConvTranspose2d { x, w, geom } => {
            let (xv, wv) = (val(*x), val(*w));
            let (batch, filters) = (xv.shape()[0], wv.shape()[0]);
            let (gx, gw) =
                conv::conv_transpose_backward(geom, batch, filters, xv.data(), wv.data(), g.data(), want(*x), want(*w));
            vec![
                gx.map(|d| Tensor::new(xv.shape(), d).expect("input shape")),
                gw.map(|d| Tensor::new(wv.shape(), d).expect("weight shape")),
            ]
        }
        Op::AddBias(_, b) => {
            let shape = g.shape();
            let channels = shape[1];
            let inner: usize = shape[2..].iter().product();
            let mut gb = vec![T::zero(); channels];
            for (i, &v) in g.data().iter().enumerate() {
                gb[(i / inner) % channels] += v;
            }
            vec![Some(g.clone()), Some(Tensor::new(val(*b).shape(), gb).expect("bias shape"))]
        }
        Op::Sum(a) => vec![Some(Tensor::full(val(*a).shape(), g.item()))],
        Op::Mean(a) => {
            let x = val(*a);
            vec![Some(Tensor::full(x.shape(), g.item() / T::lit(x.len() as f64)))]
        }
        Op::RowSums(a) => {
            let x = val(*a);
            let cols = x.shape()[1];
            let gd = g.data();
            vec![Some(Tensor::from_fn(x.shape(), |i| gd[i / cols]))]
        }
        Op::L1(a) => {
            let s = g.item();
            vec![Some(val(*a).map(|x| {
                if x > T::zero() {
                    s
                } else if x < T::zero() {
                    -s
                } else {
                    T::zero()
                }
            }))]
        }
        Op::Softplus(a) => {
            let x = val(*a);
            let data = x.data().iter().zip(g.data()).map(|(&x, &gv)| gv * sigmoid(x)).collect();
            vec![Some(Tensor::new(x.shape(), data).expect("same shape"))]
        }
        Op::SoftmaxCrossEntropy { labels, probs, .. } => {
            let k = probs.shape()[1];
            let scale = g.item() / T::lit(labels.len() as f64);
            let mut out = probs.clone();
            for (row, &label) in labels.iter().enumerate() {
                out.data_mut()[row * k + label] -= T::one();
            }
            for v in out.data_mut() {
                *v *= scale;
            }
            vec![Some(out)]
        }
        Op::ConcatCols(a, b) => {
            let (p, q) = (val(*a).shape()[1], val(*b).shape()[1]);
            let rows = g.shape()[0];
            let gd = g.data();
            let ga = Tensor::from_fn(&[rows, p], |i| gd[(i / p) * (p + q) + i % p]);
            let gb = Tensor::from_fn(&[rows, q], |i| gd[(i / q) * (p + q) + p + i % q]);
            vec![Some(ga), Some(gb)]
        }
        Op::GatherRows { table, indices } => {
            let t = val(*table);
            let d = t.shape()[1];
            let mut out = Tensor::zeros(t.shape());
            for (row, &idx) in indices.iter().enumerate() {
                for j in 0..d {
                    out.data_mut()[idx * d + j] += g.data()[row * d + j];
                }
            }
            vec![Some(out)]
        }
        Op::SymFromUpper { v, n } => {
            let gd = g.data();
            let mut out = Vec::with_capacity(val(*v).len());
            for i in 0..*n {
                for j in i + 1..*n {
                    out.push(gd[i * n + j] + gd[j * n + i]);
                }
            }
            vec![Some(Tensor::new(val(*v).shape(), out).expect("upper length"))]
        }
        Op::GcnNormalize { a, dinv } => {
            let av = val(*a);
            let n = dinv.len();
            let (ad, gd) = (av.data(), g.data());
            let m = |i: usize, j: usize| if i == j { ad[i * n + j] + T::one() } else { ad[i * n + j] };
            // dL/dd_i collects the row and column appearances of d_i.
            let mut gdinv = vec![T::zero(); n];
            for i in 0..n {
                for j in 0..n {
                    let t = gd[i * n + j] * m(i, j);
                    gdinv[i] += t * dinv[j];
                    gdinv[j] += t * dinv[i];
                }
            }
            let half = T::lit(0.5);
            let out = Tensor::from_fn(av.shape(), |idx| {
                let (i, j) = (idx / n, idx % n);
                gd[idx] * dinv[i] * dinv[j] - half * gdinv[i] * dinv[i] * dinv[i] * dinv[i]
            });
            vec![Some(out)]
        }
        Op::Remap { x, index, pass } => {
            let mut out = Tensor::zeros(val(*x).shape());
            for ((&src, &ok), &gv) in index.iter().zip(pass).zip(g.data()) {
                if ok {
                    out.data_mut()[src] += gv;
                }
            }
            vec![Some(out)]
        }
        Op::Custom { inputs, backward } => {
            let values: Vec<_> = inputs.iter().map(|&i| Rc::clone(&nodes[i].value)).collect();
            backward(g, &values).into_iter().map(Some).collect()
        }
    }
}

// add/sub/mul return Result, so the std operator traits do not fit
#[allow(clippy::should_implement_trait)]
impl<'t, T: Real> Var<'t, T> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor<T>> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    fn needs_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].needs_grad
    }

    fn unary(&self, value: Tensor<T>, op: Op<T>) -> Var<'t, T> {
        self.tape.push(value, op, self.needs_grad())
    }

    fn binary(&self, other: &Var<'t, T>, value: Tensor<T>, op: Op<T>) -> Var<'t, T> {
        let needs = self.needs_grad() || other.needs_grad();
        self.tape.push(value, op, needs)
    }

    fn elementwise(
        &self,
        other: Var<'t, T>,
        name: &'static str,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
    ) -> Result<Var<'t, T>> {
        let (a, b) = (self.value(), other.value());
        if !(a.same_shape(&b) || a.is_scalar() || b.is_scalar()) {
            return Err(mismatch(name, a.shape(), b.shape()));
        }
        Ok(self.binary(&other, zip_broadcast(&a, &b, f), op))
    }

    /// Elementwise sum; either side may be a scalar.
    pub fn add(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.elementwise(other, "add", |x, y| x + y, Op::Add(self.id, other.id))
    }

    pub fn sub(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.elementwise(other, "sub", |x, y| x - y, Op::Sub(self.id, other.id))
    }

    pub fn mul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.elementwise(other, "mul", |x, y| x * y, Op::Mul(self.id, other.id))
    }

    /// Multiplication by a constant.
    pub fn scale(self, c: T) -> Var<'t, T> {
        let v = self.value().map(|x| x * c);
        self.unary(v, Op::Scale(self.id, c))
    }

    pub fn matmul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let (a, b) = (self.value(), other.value());
        if a.shape().len() != 2 || b.shape().len() != 2 || a.shape()[1] != b.shape()[0] {
            return Err(mismatch("matmul", a.shape(), b.shape()));
        }
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let mut out = vec![T::zero(); m * n];
        gemm(false, false, m, k, n, a.data(), b.data(), T::zero(), &mut out);
        let value = Tensor::new(&[m, n], out).expect("product shape");
        Ok(self.binary(&other, value, Op::MatMul(self.id, other.id)))
    }

    pub fn transpose(self) -> Result<Var<'t, T>> {
        let a = self.value();
        if a.shape().len() != 2 {
            return Err(mismatch("transpose", a.shape(), &[]));
        }
        Ok(self.unary(transpose2(&a), Op::Transpose(self.id)))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t, T>> {
        let value = (*self.value()).clone().reshape(shape)?;
        Ok(self.unary(value, Op::Reshape(self.id)))
    }

    /// `(a, b, c) → (b, a, c)`.
    pub fn swap_leading(self) -> Result<Var<'t, T>> {
        let a = self.value();
        if a.shape().len() != 3 {
            return Err(mismatch("swap_leading", a.shape(), &[]));
        }
        Ok(self.unary(swap_leading(&a), Op::SwapLeading(self.id)))
    }

    pub fn activate(self, kind: Activation) -> Var<'t, T> {
        let v = self.value().map(|x| kind.apply(x));
        self.unary(v, Op::Act(self.id, kind))
    }

    pub fn leaky_relu(self, alpha: f64) -> Var<'t, T> {
        self.activate(Activation::LeakyRelu(alpha))
    }

    pub fn relu(self) -> Var<'t, T> {
        self.activate(Activation::Relu)
    }

    pub fn tanh(self) -> Var<'t, T> {
        self.activate(Activation::Tanh)
    }

    pub fn sigmoid(self) -> Var<'t, T> {
        self.activate(Activation::Sigmoid)
    }

    /// Cross-correlation of `self (N, C, H, W)` with `w (F, C, kh, kw)`; kernel
    /// dimensions must be odd.
    pub fn conv2d(self, w: Var<'t, T>, stride: usize, pad: usize) -> Result<Var<'t, T>> {
        let (x, wv) = (self.value(), w.value());
        let (xs, ws) = (x.shape(), wv.shape());
        if xs.len() != 4 || ws.len() != 4 || xs[1] != ws[1] {
            return Err(mismatch("conv2d", xs, ws));
        }
        if ws[2] % 2 == 0 || ws[3] % 2 == 0 {
            return Err(AutodiffError::EvenKernel(ws[2], ws[3]));
        }
        let geom = forward_geometry(xs[1], xs[2], xs[3], ws[2], ws[3], stride, pad)?;
        let out = conv::conv2d_forward(&geom, xs[0], ws[0], x.data(), wv.data());
        let value = Tensor::new(&[xs[0], ws[0], geom.out_h, geom.out_w], out).expect("conv output");
        Ok(self.binary(&w, value, Op::Conv2d { x: self.id, w: w.id, geom }))
    }

    /// Adjoint of [`Var::conv2d`] in its input: `self (N, F, H, W)` with
    /// `w (F, C, kh, kw)` gives `(N, C, (H−1)·stride − 2·pad + kh, …)`.
    pub fn conv_transpose2d(self, w: Var<'t, T>, stride: usize, pad: usize) -> Result<Var<'t, T>> {
        let (x, wv) = (self.value(), w.value());
        let (xs, ws) = (x.shape(), wv.shape());
        if xs.len() != 4 || ws.len() != 4 || xs[1] != ws[0] || stride == 0 {
            return Err(mismatch("conv_transpose2d", xs, ws));
        }
        let out_h = conv_transpose_output_len(xs[2], ws[2], stride, pad);
        let out_w = conv_transpose_output_len(xs[3], ws[3], stride, pad);
        let (Some(out_h), Some(out_w)) = (out_h, out_w) else {
            return Err(AutodiffError::NonIntegralOutput {
                input: xs[2],
                kernel: ws[2],
                stride,
                pad,
            });
        };
        let geom = Geometry {
            channels: ws[1],
            height: out_h,
            width: out_w,
            kh: ws[2],
            kw: ws[3],
            stride,
            pad,
            out_h: xs[2],
            out_w: xs[3],
        };
        let out = conv::conv_transpose_forward(&geom, xs[0], ws[0], x.data(), wv.data());
        let value = Tensor::new(&[xs[0], ws[1], out_h, out_w], out).expect("conv_transpose output");
        Ok(self.binary(&w, value, Op::ConvTranspose2d { x: self.id, w: w.id, geom }))
    }

    /// Adds `bias (C)` along axis 1 of `self (N, C, …)`.
    pub fn add_bias(self, bias: Var<'t, T>) -> Result<Var<'t, T>> {
        let (x, b) = (self.value(), bias.value());
        if x.shape().len() < 2 || b.shape() != [x.shape()[1]] {
            return Err(mismatch("add_bias", x.shape(), b.shape()));
        }
        let channels = x.shape()[1];
        let inner: usize = x.shape()[2..].iter().product();
        let bd = b.data();
        let xd = x.data();
        let value = Tensor::from_fn(x.shape(), |i| xd[i] + bd[(i / inner) % channels]);
        Ok(self.binary(&bias, value, Op::AddBias(self.id, bias.id)))
    }

    pub fn sum(self) -> Var<'t, T> {
        let s = self.value().sum();
        self.unary(Tensor::scalar(s), Op::Sum(self.id))
    }

    pub fn mean(self) -> Var<'t, T> {
        let v = self.value();
        let s = v.sum() / T::lit(v.len() as f64);
        self.unary(Tensor::scalar(s), Op::Mean(self.id))
    }

    /// `(N, D) → (N, 1)` row sums.
    pub fn row_sums(self) -> Result<Var<'t, T>> {
        let v = self.value();
        if v.shape().len() != 2 {
            return Err(mismatch("row_sums", v.shape(), &[]));
        }
        let (rows, cols) = (v.shape()[0], v.shape()[1]);
        let d = v.data();
        let value = Tensor::from_fn(&[rows, 1], |r| d[r * cols..(r + 1) * cols].iter().copied().sum());
        Ok(self.unary(value, Op::RowSums(self.id)))
    }

    /// Sum of absolute values; the subgradient at 0 is 0.
    pub fn l1_norm(self) -> Var<'t, T> {
        let s = self.value().data().iter().map(|x| x.abs()).sum();
        self.unary(Tensor::scalar(s), Op::L1(self.id))
    }

    pub fn softplus(self) -> Var<'t, T> {
        let v = self.value().map(softplus);
        self.unary(v, Op::Softplus(self.id))
    }

    /// Mean over rows of `−log softmax(logits)[label]` for `self (N, K)`.
    pub fn softmax_cross_entropy(self, labels: &[usize]) -> Result<Var<'t, T>> {
        let logits = self.value();
        if logits.shape().len() != 2 || logits.shape()[0] != labels.len() {
            return Err(mismatch("softmax_cross_entropy", logits.shape(), &[labels.len()]));
        }
        let k = logits.shape()[1];
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(AutodiffError::IndexOutOfRange { index: bad, classes: k });
        }
        let mut probs = Vec::with_capacity(logits.len());
        let mut loss = T::zero();
        for (row, &label) in logits.data().chunks(k).zip(labels) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let total: T = row.iter().map(|&z| (z - max).exp()).sum();
            let log_total = total.ln();
            loss += log_total - (row[label] - max);
            probs.extend(row.iter().map(|&z| (z - max).exp() / total));
        }
        let loss = loss / T::lit(labels.len() as f64);
        let probs = Tensor::new(logits.shape(), probs).expect("probability shape");
        Ok(self.unary(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy {
                logits: self.id,
                labels: labels.to_vec(),
                probs,
            },
        ))
    }

    /// `[self | other]` for `(N, p)` and `(N, q)`.
    pub fn concat_cols(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let (a, b) = (self.value(), other.value());
        if a.shape().len() != 2 || b.shape().len() != 2 || a.shape()[0] != b.shape()[0] {
            return Err(mismatch("concat_cols", a.shape(), b.shape()));
        }
        let (rows, p, q) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let mut data = Vec::with_capacity(rows * (p + q));
        for r in 0..rows {
            data.extend_from_slice(&a.data()[r * p..(r + 1) * p]);
            data.extend_from_slice(&b.data()[r * q..(r + 1) * q]);
        }
        let value = Tensor::new(&[rows, p + q], data).expect("concat shape");
        Ok(self.binary(&other, value, Op::ConcatCols(self.id, other.id)))
    }

    /// Row lookup into `self (R, D)`: the embedding-table operation.
    pub fn gather_rows(self, indices: &[usize]) -> Result<Var<'t, T>> {
        let t = self.value();
        if t.shape().len() != 2 {
            return Err(mismatch("gather_rows", t.shape(), &[]));
        }
        let (rows, d) = (t.shape()[0], t.shape()[1]);
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(AutodiffError::IndexOutOfRange { index: bad, classes: rows });
        }
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            data.extend_from_slice(&t.data()[i * d..(i + 1) * d]);
        }
        let value = Tensor::new(&[indices.len(), d], data).expect("gather shape");
        Ok(self.unary(
            value,
            Op::GatherRows {
                table: self.id,
                indices: indices.to_vec(),
            },
        ))
    }

    /// Builds a symmetric `n×n` matrix with zero diagonal from the strict
    /// upper triangle stored row by row in `self`.
    pub fn sym_from_upper(self, n: usize) -> Result<Var<'t, T>> {
        let v = self.value();
        if n < 1 || v.len() != n * (n - 1) / 2 || (n == 1 && v.len() != 1) {
            return Err(mismatch("sym_from_upper", v.shape(), &[n * n.saturating_sub(1) / 2]));
        }
        let mut m = vec![T::zero(); n * n];
        let mut k = 0;
        for i in 0..n {
            for j in i + 1..n {
                m[i * n + j] = v.data()[k];
                m[j * n + i] = v.data()[k];
                k += 1;
            }
        }
        let value = Tensor::new(&[n, n], m).expect("square");
        Ok(self.unary(value, Op::SymFromUpper { v: self.id, n }))
    }

    /// `D^{-1/2} (A + I) D^{-1/2}` with `D` the degree matrix of `A + I`.
    pub fn gcn_normalize(self) -> Result<Var<'t, T>> {
        let a = self.value();
        if a.shape().len() != 2 || a.shape()[0] != a.shape()[1] {
            return Err(mismatch("gcn_normalize", a.shape(), &[]));
        }
        let n = a.shape()[0];
        let (value, dinv) = gcn_normalize_values(&a);
        debug_assert_eq!(dinv.len(), n);
        Ok(self.unary(value, Op::GcnNormalize { a: self.id, dinv }))
    }

    /// Output element `o` is `clamp(self[index[o]] + offset[o])`; gradient
    /// flows back only where the clamp was inactive.
    pub fn remap(self, out_shape: &[usize], index: Vec<usize>, offset: Vec<T>, clamp: (T, T)) -> Result<Var<'t, T>> {
        let x = self.value();
        let n: usize = out_shape.iter().product();
        if index.len() != n || offset.len() != n || index.iter().any(|&i| i >= x.len()) {
            return Err(mismatch("remap", x.shape(), out_shape));
        }
        let (lo, hi) = clamp;
        let mut data = Vec::with_capacity(n);
        let mut pass = Vec::with_capacity(n);
        for (&src, &off) in index.iter().zip(&offset) {
            let v = x.data()[src] + off;
            pass.push(v >= lo && v <= hi);
            data.push(v.max(lo).min(hi));
        }
        let value = Tensor::new(out_shape, data)?;
        Ok(self.unary(value, Op::Remap { x: self.id, index, pass }))
    }
}

/// Forward values of [`Var::gcn_normalize`] plus the `d_i = deg_i^{-1/2}`
/// factors.
pub(crate) fn gcn_normalize_values<T: Real>(a: &Tensor<T>) -> (Tensor<T>, Vec<T>) {
    let n = a.shape()[0];
    let ad = a.data();
    let dinv: Vec<T> = (0..n)
        .map(|i| {
            let deg: T = ad[i * n..(i + 1) * n].iter().copied().sum::<T>() + T::one();
            T::one() / deg.sqrt()
        })
        .collect();
    let value = Tensor::from_fn(a.shape(), |idx| {
        let (i, j) = (idx / n, idx % n);
        let m = if i == j { ad[idx] + T::one() } else { ad[idx] };
        m * dinv[i] * dinv[j]
    });
    (value, dinv)
}

fn forward_geometry(
    channels: usize,
    height: usize,
    width: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
) -> Result<Geometry> {
    let out_h = conv_output_len(height, kh, stride, pad).ok_or(AutodiffError::NonIntegralOutput {
        input: height,
        kernel: kh,
        stride,
        pad,
    })?;
    let out_w = conv_output_len(width, kw, stride, pad).ok_or(AutodiffError::NonIntegralOutput {
        input: width,
        kernel: kw,
        stride,
        pad,
    })?;
    Ok(Geometry {
        channels,
        height,
        width,
        kh,
        kw,
        stride,
        pad,
        out_h,
        out_w,
    })
}
