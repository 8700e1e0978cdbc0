use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use super::kernels::{self, ConvGeom};
use super::{check_finite, Tensor};
use crate::error::{Error, Result};

/// Extension point for differentiable ops defined outside this module.
///
/// The caller computes the forward value; the tape stores the op and calls
/// [`CustomOp::backward`] with the output gradient during the reverse sweep.
pub trait CustomOp {
    fn name(&self) -> &'static str;

    /// One gradient per input, each shaped like that input.
    fn backward(&self, grad_out: &Tensor, inputs: &[Rc<Tensor>]) -> Result<Vec<Tensor>>;
}

enum Op {
    Leaf,
    Constant,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    AddScalar(usize),
    MulScalar(usize, f32),
    PowScalar(usize, f32),
    Abs(usize),
    Exp(usize),
    Log(usize),
    Clamp(usize, f32, f32),
    Relu(usize),
    LeakyRelu(usize, f32),
    Sigmoid(usize),
    Tanh(usize),
    Softplus(usize),
    Sum(usize),
    SumAxes(usize),
    MaxAxes(usize, Vec<usize>),
    Matmul(usize, usize),
    Conv2d(usize, usize, ConvGeom),
    ConvTranspose2d(usize, usize, ConvGeom),
    Reshape(usize),
    Narrow { input: usize, axis: usize, start: usize },
    Concat { inputs: Vec<usize>, axis: usize },
    Custom { inputs: Vec<usize>, op: Box<dyn CustomOp> },
}

impl Op {
    fn inputs(&self) -> Vec<usize> {
        use Op::*;
        match self {
            Leaf | Constant => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) | Matmul(a, b) => vec![*a, *b],
            Conv2d(a, b, _) | ConvTranspose2d(a, b, _) => vec![*a, *b],
            AddScalar(a) | MulScalar(a, _) | PowScalar(a, _) | Abs(a) | Exp(a) | Log(a)
            | Clamp(a, _, _) | Relu(a) | LeakyRelu(a, _) | Sigmoid(a) | Tanh(a) | Softplus(a)
            | Sum(a) | SumAxes(a) | MaxAxes(a, _) | Reshape(a) => vec![*a],
            Narrow { input, .. } => vec![*input],
            Concat { inputs, .. } | Custom { inputs, .. } => inputs.clone(),
        }
    }
}

struct Node {
    value: Rc<Tensor>,
    requires_grad: bool,
    leaf: bool,
    op: Op,
    grad: Option<Tensor>,
}

struct Inner {
    nodes: Vec<Node>,
    consumed: bool,
}

/// Define-by-run recording of differentiable operations.
///
/// A tape supports exactly one [`Tape::backward`] call; afterwards it is
/// consumed and rejects further recording. Build a fresh tape per step.
pub struct Tape {
    inner: RefCell<Inner>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let inner = self.inner.borrow();
        f.debug_struct("Tape")
            .field("nodes", &inner.nodes.len())
            .field("consumed", &inner.consumed)
            .finish()
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            inner: RefCell::new(Inner {
                nodes: Vec::new(),
                consumed: false,
            }),
        }
    }

    /// Gradient-tracking input. Its gradient is available after `backward`.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push_unchecked(value, Op::Leaf, true, true)
    }

    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push_unchecked(value, Op::Constant, false, true)
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_consumed(&self) -> bool {
        self.inner.borrow().consumed
    }

    fn push_unchecked(&self, value: Tensor, op: Op, requires_grad: bool, leaf: bool) -> Var<'_> {
        let mut inner = self.inner.borrow_mut();
        let id = inner.nodes.len();
        inner.nodes.push(Node {
            value: Rc::new(value),
            requires_grad,
            leaf,
            op,
            grad: None,
        });
        Var { tape: self, id }
    }

    fn push(&self, name: &'static str, value: Tensor, op: Op) -> Result<Var<'_>> {
        check_finite(name, value.data())?;
        let requires_grad = {
            let inner = self.inner.borrow();
            if inner.consumed {
                return Err(Error::TapeConsumed);
            }
            op.inputs().iter().any(|&i| inner.nodes[i].requires_grad)
        };
        Ok(self.push_unchecked(value, op, requires_grad, false))
    }

    fn value(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.inner.borrow().nodes[id].value)
    }

    /// Records a caller-computed value produced by a [`CustomOp`].
    pub fn custom<'t>(
        &'t self,
        inputs: &[Var<'t>],
        value: Tensor,
        op: Box<dyn CustomOp>,
    ) -> Result<Var<'t>> {
        for v in inputs {
            self.check_owner(v)?;
        }
        let name = op.name();
        self.push(
            name,
            value,
            Op::Custom {
                inputs: inputs.iter().map(|v| v.id).collect(),
                op,
            },
        )
    }

    fn check_owner(&self, v: &Var<'_>) -> Result<()> {
        if std::ptr::eq(self, v.tape) {
            Ok(())
        } else {
            Err(Error::InvalidArgument("variable belongs to another tape".into()))
        }
    }

    /// Reverse sweep from a scalar `loss`. Every gradient-tracking leaf
    /// receives `d loss / d leaf`; the tape is consumed.
    pub fn backward(&self, loss: &Var<'_>) -> Result<()> {
        self.check_owner(loss)?;
        let mut inner = self.inner.borrow_mut();
        if inner.consumed {
            return Err(Error::TapeConsumed);
        }
        let seed = {
            let root = &inner.nodes[loss.id];
            if root.value.numel() != 1 {
                return Err(Error::NonScalarLoss(root.value.shape().to_vec()));
            }
            if !root.requires_grad {
                return Err(Error::Detached);
            }
            Tensor::full(root.value.shape(), 1.0)
        };
        inner.consumed = true;
        inner.nodes[loss.id].grad = Some(seed);

        for id in (0..=loss.id).rev() {
            let g = {
                let node = &mut inner.nodes[id];
                if !node.requires_grad || node.leaf {
                    continue;
                }
                match node.grad.take() {
                    Some(g) => g,
                    None => continue,
                }
            };
            let contributions = node_backward(&inner.nodes, id, &g)?;
            for (input, gi) in contributions {
                let target = &mut inner.nodes[input];
                if !target.requires_grad {
                    continue;
                }
                match &mut target.grad {
                    Some(acc) => {
                        for (a, b) in acc.data_mut().iter_mut().zip(gi.data()) {
                            *a += b;
                        }
                    }
                    slot @ None => *slot = Some(gi),
                }
            }
        }
        Ok(())
    }
}

fn grad_tensor(shape: &[usize], data: Vec<f32>) -> Tensor {
    Tensor::from_vec(shape.to_vec(), data).expect("gradient shape matches its input")
}

fn node_backward(nodes: &[Node], id: usize, g: &Tensor) -> Result<Vec<(usize, Tensor)>> {
    let val = |i: usize| &nodes[i].value;
    let needs = |i: usize| nodes[i].requires_grad;
    let out = &nodes[id].value;
    let out_shape = out.shape();
    let gd = g.data();
    let unary = |a: usize, f: &dyn Fn(usize, f32) -> f32| {
        let data = gd.iter().enumerate().map(|(i, &gv)| f(i, gv)).collect();
        vec![(a, grad_tensor(val(a).shape(), data))]
    };

    Ok(match &nodes[id].op {
        Op::Leaf | Op::Constant => vec![],
        Op::Add(a, b) => vec![
            (*a, grad_tensor(val(*a).shape(), kernels::reduce_to_shape(gd, out_shape, val(*a).shape()))),
            (*b, grad_tensor(val(*b).shape(), kernels::reduce_to_shape(gd, out_shape, val(*b).shape()))),
        ],
        Op::Sub(a, b) => {
            let gb: Vec<f32> = kernels::reduce_to_shape(gd, out_shape, val(*b).shape())
                .into_iter()
                .map(|v| -v)
                .collect();
            vec![
                (*a, grad_tensor(val(*a).shape(), kernels::reduce_to_shape(gd, out_shape, val(*a).shape()))),
                (*b, grad_tensor(val(*b).shape(), gb)),
            ]
        }
        Op::Mul(a, b) => {
            let (va, vb) = (val(*a), val(*b));
            let ga = kernels::binary_broadcast(gd, out_shape, vb.data(), vb.shape(), out_shape, |g, y| g * y);
            let gb = kernels::binary_broadcast(gd, out_shape, va.data(), va.shape(), out_shape, |g, x| g * x);
            vec![
                (*a, grad_tensor(va.shape(), kernels::reduce_to_shape(&ga, out_shape, va.shape()))),
                (*b, grad_tensor(vb.shape(), kernels::reduce_to_shape(&gb, out_shape, vb.shape()))),
            ]
        }
        Op::Div(a, b) => {
            let (va, vb) = (val(*a), val(*b));
            let ga = kernels::binary_broadcast(gd, out_shape, vb.data(), vb.shape(), out_shape, |g, y| g / y);
            // d(a/b)/db = -(a/b)/b = -out/b
            let q = kernels::binary_broadcast(out.data(), out_shape, vb.data(), vb.shape(), out_shape, |o, y| o / y);
            let gb: Vec<f32> = gd.iter().zip(&q).map(|(g, q)| -g * q).collect();
            vec![
                (*a, grad_tensor(va.shape(), kernels::reduce_to_shape(&ga, out_shape, va.shape()))),
                (*b, grad_tensor(vb.shape(), kernels::reduce_to_shape(&gb, out_shape, vb.shape()))),
            ]
        }
        Op::AddScalar(a) => vec![(*a, g.clone())],
        Op::MulScalar(a, s) => unary(*a, &|_, gv| gv * s),
        Op::PowScalar(a, p) => {
            let x = val(*a).data();
            if *p == 2.0 {
                unary(*a, &|i, gv| 2.0 * gv * x[i])
            } else {
                unary(*a, &|i, gv| gv * p * x[i].powf(p - 1.0))
            }
        }
        Op::Abs(a) => {
            let x = val(*a).data();
            unary(*a, &|i, gv| if x[i] > 0.0 { gv } else if x[i] < 0.0 { -gv } else { 0.0 })
        }
        Op::Exp(a) => unary(*a, &|i, gv| gv * out.data()[i]),
        Op::Log(a) => {
            let x = val(*a).data();
            unary(*a, &|i, gv| gv / x[i])
        }
        Op::Clamp(a, lo, hi) => {
            let x = val(*a).data();
            unary(*a, &|i, gv| if x[i] >= *lo && x[i] <= *hi { gv } else { 0.0 })
        }
        Op::Relu(a) => {
            let x = val(*a).data();
            unary(*a, &|i, gv| if x[i] > 0.0 { gv } else { 0.0 })
        }
        Op::LeakyRelu(a, s) => {
            let x = val(*a).data();
            unary(*a, &|i, gv| if x[i] > 0.0 { gv } else { gv * s })
        }
        Op::Sigmoid(a) => {
            let y = out.data();
            unary(*a, &|i, gv| gv * y[i] * (1.0 - y[i]))
        }
        Op::Tanh(a) => {
            let y = out.data();
            unary(*a, &|i, gv| gv * (1.0 - y[i] * y[i]))
        }
        Op::Softplus(a) => {
            let x = val(*a).data();
            unary(*a, &|i, gv| gv * sigmoid(x[i]))
        }
        Op::Sum(a) => {
            let gv = gd[0];
            vec![(*a, Tensor::full(val(*a).shape(), gv))]
        }
        Op::SumAxes(a) => {
            let data = kernels::expand(gd, out_shape, val(*a).shape());
            vec![(*a, grad_tensor(val(*a).shape(), data))]
        }
        Op::MaxAxes(a, argmax) => {
            let mut data = vec![0.0; val(*a).numel()];
            for (o, &src) in argmax.iter().enumerate() {
                data[src] += gd[o];
            }
            vec![(*a, grad_tensor(val(*a).shape(), data))]
        }
        Op::Matmul(a, b) => {
            let (va, vb) = (val(*a), val(*b));
            let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
            let mut out = Vec::with_capacity(2);
            if needs(*a) {
                out.push((*a, grad_tensor(va.shape(), kernels::matmul_bt(gd, vb.data(), m, n, k))));
            }
            if needs(*b) {
                out.push((*b, grad_tensor(vb.shape(), kernels::matmul_at(va.data(), gd, k, m, n))));
            }
            out
        }
        Op::Conv2d(x, k, geom) => {
            let (vx, vk) = (val(*x), val(*k));
            let (dx, dk) = kernels::conv2d_backward(vx.data(), vk.data(), gd, geom, needs(*x), needs(*k));
            let mut out = Vec::with_capacity(2);
            out.extend(dx.map(|d| (*x, grad_tensor(vx.shape(), d))));
            out.extend(dk.map(|d| (*k, grad_tensor(vk.shape(), d))));
            out
        }
        Op::ConvTranspose2d(y, k, geom) => {
            let (vy, vk) = (val(*y), val(*k));
            let (dy, dk) =
                kernels::conv_transpose2d_backward(vy.data(), vk.data(), gd, geom, needs(*y), needs(*k));
            let mut out = Vec::with_capacity(2);
            out.extend(dy.map(|d| (*y, grad_tensor(vy.shape(), d))));
            out.extend(dk.map(|d| (*k, grad_tensor(vk.shape(), d))));
            out
        }
        Op::Reshape(a) => vec![(*a, grad_tensor(val(*a).shape(), gd.to_vec()))],
        Op::Narrow { input, axis, start } => {
            let src_shape = val(*input).shape();
            let (outer, full, inner) = split_axis(src_shape, *axis);
            let len = out_shape[*axis];
            let mut data = vec![0.0; val(*input).numel()];
            for o in 0..outer {
                let dst = &mut data[(o * full + start) * inner..][..len * inner];
                dst.copy_from_slice(&gd[o * len * inner..][..len * inner]);
            }
            vec![(*input, grad_tensor(src_shape, data))]
        }
        Op::Concat { inputs, axis } => {
            let (outer, full, inner) = split_axis(out_shape, *axis);
            let mut offset = 0;
            let mut result = Vec::with_capacity(inputs.len());
            for &i in inputs {
                let shape = val(i).shape();
                let len = shape[*axis];
                let mut data = Vec::with_capacity(val(i).numel());
                for o in 0..outer {
                    data.extend_from_slice(&gd[(o * full + offset) * inner..][..len * inner]);
                }
                offset += len;
                result.push((i, grad_tensor(shape, data)));
            }
            result
        }
        Op::Custom { inputs, op } => {
            let values: Vec<Rc<Tensor>> = inputs.iter().map(|&i| Rc::clone(val(i))).collect();
            let grads = op.backward(g, &values)?;
            if grads.len() != inputs.len()
                || grads.iter().zip(&values).any(|(g, v)| g.shape() != v.shape())
            {
                return Err(Error::shape(op.name(), "custom backward returned mismatched gradients"));
            }
            inputs.iter().copied().zip(grads).collect()
        }
    })
}

/// `(outer, axis extent, inner)` factorisation of a shape around `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f32) -> f32 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Concatenates variables along `axis`; all other extents must agree.
pub fn concat<'t>(vars: &[Var<'t>], axis: usize) -> Result<Var<'t>> {
    let first = vars
        .first()
        .ok_or_else(|| Error::shape("concat", "no inputs"))?;
    let tape = first.tape;
    let values: Vec<Rc<Tensor>> = vars
        .iter()
        .map(|v| {
            tape.check_owner(v)?;
            Ok(v.value())
        })
        .collect::<Result<_>>()?;
    let base = values[0].shape();
    if axis >= base.len() {
        return Err(Error::shape("concat", format!("axis {axis} out of range for {base:?}")));
    }
    let mut total = 0;
    for v in &values {
        let s = v.shape();
        let compatible = s.len() == base.len()
            && s.iter().zip(base).enumerate().all(|(d, (x, y))| d == axis || x == y);
        if !compatible {
            return Err(Error::shape("concat", format!("{s:?} vs {base:?}")));
        }
        total += s[axis];
    }
    let mut shape = base.to_vec();
    shape[axis] = total;
    let (outer, _, inner) = split_axis(base, axis);
    let mut data = Vec::with_capacity(shape.iter().product());
    for o in 0..outer {
        for v in &values {
            let len = v.shape()[axis] * inner;
            data.extend_from_slice(&v.data()[o * len..][..len]);
        }
    }
    let out = Tensor::from_vec(shape, data)?;
    tape.push(
        "concat",
        out,
        Op::Concat {
            inputs: vars.iter().map(|v| v.id).collect(),
            axis,
        },
    )
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.inner.borrow().nodes[self.id].value.shape().to_vec()
    }

    pub fn item(&self) -> f32 {
        self.value().item()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.inner.borrow().nodes[self.id].requires_grad
    }

    /// Accumulated gradient; populated for leaves after [`Tape::backward`].
    pub fn grad(&self) -> Option<Tensor> {
        self.tape.inner.borrow().nodes[self.id].grad.clone()
    }

    fn binary(
        &self,
        other: &Var<'t>,
        name: &'static str,
        f: impl Fn(f32, f32) -> f32,
        op: Op,
    ) -> Result<Var<'t>> {
        self.tape.check_owner(other)?;
        let (a, b) = (self.value(), other.value());
        let shape = kernels::broadcast_shape(a.shape(), b.shape())
            .ok_or_else(|| Error::shape(name, format!("{:?} vs {:?}", a.shape(), b.shape())))?;
        let data = kernels::binary_broadcast(a.data(), a.shape(), b.data(), b.shape(), &shape, f);
        self.tape.push(name, Tensor::from_vec(shape, data)?, op)
    }

    fn map(&self, name: &'static str, f: impl Fn(f32) -> f32, op: Op) -> Result<Var<'t>> {
        let out = self.value().map(f);
        self.tape.push(name, out, op)
    }

    pub fn add(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "add", |a, b| a + b, Op::Add(self.id, other.id))
    }

    pub fn sub(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "sub", |a, b| a - b, Op::Sub(self.id, other.id))
    }

    pub fn mul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "mul", |a, b| a * b, Op::Mul(self.id, other.id))
    }

    pub fn div(&self, other: &Var<'t>) -> Result<Var<'t>> {
        if other.value().data().contains(&0.0) {
            return Err(Error::domain("div", "division by zero"));
        }
        self.binary(other, "div", |a, b| a / b, Op::Div(self.id, other.id))
    }

    pub fn add_scalar(&self, s: f32) -> Result<Var<'t>> {
        self.map("add_scalar", |x| x + s, Op::AddScalar(self.id))
    }

    pub fn mul_scalar(&self, s: f32) -> Result<Var<'t>> {
        self.map("mul_scalar", |x| x * s, Op::MulScalar(self.id, s))
    }

    pub fn neg(&self) -> Result<Var<'t>> {
        self.mul_scalar(-1.0)
    }

    pub fn pow_scalar(&self, p: f32) -> Result<Var<'t>> {
        let v = self.value();
        if p.fract() != 0.0 && v.data().iter().any(|&x| x < 0.0) {
            return Err(Error::domain("pow", format!("negative base with exponent {p}")));
        }
        if p < 0.0 && v.data().contains(&0.0) {
            return Err(Error::domain("pow", format!("zero base with exponent {p}")));
        }
        if p == 2.0 {
            self.map("pow", |x| x * x, Op::PowScalar(self.id, p))
        } else {
            self.map("pow", |x| x.powf(p), Op::PowScalar(self.id, p))
        }
    }

    pub fn square(&self) -> Result<Var<'t>> {
        self.pow_scalar(2.0)
    }

    pub fn abs(&self) -> Result<Var<'t>> {
        self.map("abs", f32::abs, Op::Abs(self.id))
    }

    pub fn exp(&self) -> Result<Var<'t>> {
        self.map("exp", f32::exp, Op::Exp(self.id))
    }

    pub fn log(&self) -> Result<Var<'t>> {
        if self.value().data().iter().any(|&x| x <= 0.0) {
            return Err(Error::domain("log", "non-positive argument"));
        }
        self.map("log", f32::ln, Op::Log(self.id))
    }

    pub fn clamp(&self, lo: f32, hi: f32) -> Result<Var<'t>> {
        if lo > hi {
            return Err(Error::InvalidArgument(format!("clamp bounds {lo} > {hi}")));
        }
        self.map("clamp", |x| x.clamp(lo, hi), Op::Clamp(self.id, lo, hi))
    }

    pub fn relu(&self) -> Result<Var<'t>> {
        self.map("relu", |x| x.max(0.0), Op::Relu(self.id))
    }

    pub fn leaky_relu(&self, slope: f32) -> Result<Var<'t>> {
        self.map(
            "leaky_relu",
            |x| if x > 0.0 { x } else { x * slope },
            Op::LeakyRelu(self.id, slope),
        )
    }

    pub fn sigmoid(&self) -> Result<Var<'t>> {
        self.map("sigmoid", sigmoid, Op::Sigmoid(self.id))
    }

    pub fn tanh(&self) -> Result<Var<'t>> {
        self.map("tanh", f32::tanh, Op::Tanh(self.id))
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&self) -> Result<Var<'t>> {
        self.map("softplus", softplus, Op::Softplus(self.id))
    }

    /// Sum of all entries as a rank-0 scalar.
    pub fn sum(&self) -> Result<Var<'t>> {
        let s = self.value().sum_f64() as f32;
        self.tape.push("sum", Tensor::scalar(s), Op::Sum(self.id))
    }

    pub fn mean(&self) -> Result<Var<'t>> {
        let n = self.value().numel() as f32;
        self.sum()?.mul_scalar(1.0 / n)
    }

    fn reduced_shape(&self, name: &'static str, axes: &[usize]) -> Result<Vec<usize>> {
        let mut shape = self.shape();
        for &a in axes {
            if a >= shape.len() {
                return Err(Error::shape(name, format!("axis {a} out of range for {shape:?}")));
            }
            shape[a] = 1;
        }
        Ok(shape)
    }

    /// Sum over `axes`; reduced axes are kept with extent 1.
    pub fn sum_axes(&self, axes: &[usize]) -> Result<Var<'t>> {
        let shape = self.reduced_shape("sum_axes", axes)?;
        let v = self.value();
        let data = kernels::reduce_to_shape(v.data(), v.shape(), &shape);
        self.tape
            .push("sum_axes", Tensor::from_vec(shape, data)?, Op::SumAxes(self.id))
    }

    pub fn mean_axes(&self, axes: &[usize]) -> Result<Var<'t>> {
        let shape = self.shape();
        let count: usize = axes.iter().filter_map(|&a| shape.get(a)).product();
        self.sum_axes(axes)?.mul_scalar(1.0 / count as f32)
    }

    /// Maximum over `axes` (kept with extent 1); ties route the gradient to
    /// the first maximal element.
    pub fn max_axes(&self, axes: &[usize]) -> Result<Var<'t>> {
        let shape = self.reduced_shape("max_axes", axes)?;
        let v = self.value();
        let n: usize = shape.iter().product();
        let mut best = vec![f32::NEG_INFINITY; n];
        let mut arg = vec![usize::MAX; n];
        kernels::visit_broadcast(&shape, v.shape(), |i, o| {
            if arg[o] == usize::MAX || v.data()[i] > best[o] {
                best[o] = v.data()[i];
                arg[o] = i;
            }
        });
        self.tape
            .push("max_axes", Tensor::from_vec(shape, best)?, Op::MaxAxes(self.id, arg))
    }

    pub fn matmul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.tape.check_owner(other)?;
        let (a, b) = (self.value(), other.value());
        if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
            return Err(Error::shape("matmul", format!("{:?} · {:?}", a.shape(), b.shape())));
        }
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let data = kernels::matmul(a.data(), b.data(), m, k, n);
        self.tape.push(
            "matmul",
            Tensor::from_vec(vec![m, n], data)?,
            Op::Matmul(self.id, other.id),
        )
    }

    /// Cross-correlation of `self[B,Cin,H,W]` with `kernel[Cout,Cin,kh,kw]`.
    pub fn conv2d(&self, kernel: &Var<'t>, stride: usize, pad: usize) -> Result<Var<'t>> {
        self.tape.check_owner(kernel)?;
        let (x, k) = (self.value(), kernel.value());
        let g = ConvGeom::forward(x.shape(), k.shape(), stride, pad)?;
        let data = kernels::conv2d_forward(x.data(), k.data(), &g);
        let out = Tensor::from_vec(vec![g.batch, g.out_ch, g.oh, g.ow], data)?;
        self.tape.push("conv2d", out, Op::Conv2d(self.id, kernel.id, g))
    }

    /// Adjoint of [`Var::conv2d`] for the same kernel: maps
    /// `[B, k0, H, W]` to `[B, k1, (H-1)·stride - 2·pad + kh, …]`.
    pub fn conv_transpose2d(&self, kernel: &Var<'t>, stride: usize, pad: usize) -> Result<Var<'t>> {
        self.tape.check_owner(kernel)?;
        let (y, k) = (self.value(), kernel.value());
        let g = ConvGeom::transpose(y.shape(), k.shape(), stride, pad)?;
        let data = kernels::conv_transpose2d_forward(y.data(), k.data(), &g);
        let out = Tensor::from_vec(vec![g.batch, g.in_ch, g.h, g.w], data)?;
        self.tape
            .push("conv_transpose2d", out, Op::ConvTranspose2d(self.id, kernel.id, g))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t>> {
        let out = self.value().reshape(shape)?;
        self.tape.push("reshape", out, Op::Reshape(self.id))
    }

    /// `[B, …]` → `[B, rest]`.
    pub fn flatten(&self) -> Result<Var<'t>> {
        let shape = self.shape();
        let b = *shape
            .first()
            .ok_or_else(|| Error::shape("flatten", "rank-0 input"))?;
        let rest = shape[1..].iter().product();
        self.reshape(&[b, rest])
    }

    /// Sub-range `start..start + len` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Var<'t>> {
        let v = self.value();
        let shape = v.shape();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(Error::shape(
                "narrow",
                format!("range {start}..{} on axis {axis} of {shape:?}", start + len),
            ));
        }
        let (outer, full, inner) = split_axis(shape, axis);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            data.extend_from_slice(&v.data()[(o * full + start) * inner..][..len * inner]);
        }
        let mut out_shape = shape.to_vec();
        out_shape[axis] = len;
        self.tape.push(
            "narrow",
            Tensor::from_vec(out_shape, data)?,
            Op::Narrow {
                input: self.id,
                axis,
                start,
            },
        )
    }
}
