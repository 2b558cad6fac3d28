//! Append-only operation tape with a differentiable backward pass.
//!
//! Every op evaluates eagerly and records its inputs. [`Tape::grad`] walks the
//! tape in reverse and expresses each vector-Jacobian product with the same
//! recorded ops, so with `create_graph` the returned gradients are ordinary
//! tape variables that can be differentiated again.

use std::cell::{Cell, RefCell};
use std::rc::Rc;
use std::sync::Arc;

use super::tensor::{kernels, ConvGeom, Padding, Tensor};
use crate::error::{Error, Result};

pub type NodeId = usize;

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Neg(NodeId),
    Affine {
        x: NodeId,
        scale: f64,
    },
    MatMul {
        a: NodeId,
        b: NodeId,
        ta: bool,
        tb: bool,
    },
    Conv {
        x: NodeId,
        k: NodeId,
        geom: ConvGeom,
    },
    ConvInputGrad {
        gy: NodeId,
        k: NodeId,
        geom: ConvGeom,
    },
    ConvKernelGrad {
        x: NodeId,
        gy: NodeId,
        geom: ConvGeom,
    },
    Relu(NodeId),
    Arctan(NodeId),
    Sigmoid(NodeId),
    Log(NodeId),
    Exp(NodeId),
    PowI {
        x: NodeId,
        exps: Rc<[i32]>,
    },
    LogSoftmax(NodeId),
    Softmax(NodeId),
    Sum(NodeId),
    SumLast(NodeId),
    ExpandLast(NodeId),
    Broadcast(NodeId),
    SumTo(NodeId),
    Gather {
        x: NodeId,
        idx: Rc<[usize]>,
    },
    ScatterAdd {
        x: NodeId,
        idx: Rc<[usize]>,
    },
    Reshape(NodeId),
    ConcatLast(NodeId, NodeId),
}

impl Op {
    fn inputs(&self) -> [Option<NodeId>; 2] {
        use Op::*;
        match *self {
            Leaf => [None, None],
            Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) | ConcatLast(a, b) => [Some(a), Some(b)],
            MatMul { a, b, .. } => [Some(a), Some(b)],
            Conv { x, k, .. } => [Some(x), Some(k)],
            ConvInputGrad { gy, k, .. } => [Some(gy), Some(k)],
            ConvKernelGrad { x, gy, .. } => [Some(x), Some(gy)],
            Neg(x)
            | Affine { x, .. }
            | Relu(x)
            | Arctan(x)
            | Sigmoid(x)
            | Log(x)
            | Exp(x)
            | PowI { x, .. }
            | LogSoftmax(x)
            | Softmax(x)
            | Sum(x)
            | SumLast(x)
            | ExpandLast(x)
            | Broadcast(x)
            | SumTo(x)
            | Gather { x, .. }
            | ScatterAdd { x, .. }
            | Reshape(x) => [Some(x), None],
        }
    }
}

struct Node {
    value: Arc<Tensor>,
    op: Op,
    tracked: bool,
}

/// A recording of tensor operations. Single-threaded; build one per
/// computation and drop it when done.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    grad_enabled: Cell<bool>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::with_capacity(256)),
            grad_enabled: Cell::new(true),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A leaf that gradients flow into.
    pub fn param(&self, value: impl Into<Arc<Tensor>>) -> Result<Var<'_>> {
        self.leaf(value.into(), true)
    }

    /// A leaf that never receives gradient.
    pub fn constant(&self, value: impl Into<Arc<Tensor>>) -> Result<Var<'_>> {
        self.leaf(value.into(), false)
    }

    pub fn scalar(&self, v: f64) -> Result<Var<'_>> {
        self.constant(Tensor::scalar(v))
    }

    fn leaf(&self, value: Arc<Tensor>, tracked: bool) -> Result<Var<'_>> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: "leaf" });
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op: Op::Leaf,
            tracked: tracked && self.grad_enabled.get(),
        });
        Ok(Var {
            tape: self,
            id: nodes.len() - 1,
        })
    }

    fn push(&self, name: &'static str, value: Tensor, op: Op) -> Result<Var<'_>> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        let mut nodes = self.nodes.borrow_mut();
        let tracked =
            self.grad_enabled.get() && op.inputs().iter().flatten().any(|&i| nodes[i].tracked);
        nodes.push(Node {
            value: Arc::new(value),
            op,
            tracked,
        });
        Ok(Var {
            tape: self,
            id: nodes.len() - 1,
        })
    }

    fn value(&self, id: NodeId) -> Arc<Tensor> {
        Arc::clone(&self.nodes.borrow()[id].value)
    }

    fn var(&self, id: NodeId) -> Var<'_> {
        Var { tape: self, id }
    }

    /// Runs `f` with recording of gradient dependencies switched off: every
    /// node created inside is a constant.
    pub fn no_grad<T>(&self, f: impl FnOnce() -> T) -> T {
        let prev = self.grad_enabled.replace(false);
        let out = f();
        self.grad_enabled.set(prev);
        out
    }

    /// Reverse-mode gradient of the scalar `output` with respect to `wrt`.
    ///
    /// With `create_graph` the returned gradients stay differentiable; without
    /// it they are constants. A `wrt` variable that `output` does not depend on
    /// receives a zero gradient and is listed in [`Gradients::detached`].
    pub fn grad<'t>(
        &'t self,
        output: Var<'t>,
        wrt: &[Var<'t>],
        create_graph: bool,
    ) -> Result<Gradients<'t>> {
        for v in std::iter::once(&output).chain(wrt) {
            if !std::ptr::eq(v.tape, self) {
                return Err(Error::InvalidArgument(
                    "variable belongs to a different tape".into(),
                ));
            }
        }
        let out_shape = output.shape();
        if !out_shape.is_empty() {
            return Err(Error::NotScalar(out_shape));
        }

        let n = output.id + 1;
        let mut reach = vec![false; n];
        for v in wrt {
            if v.id < n {
                reach[v.id] = true;
            }
        }
        {
            let nodes = self.nodes.borrow();
            for i in 0..n {
                if !reach[i] && nodes[i].tracked {
                    reach[i] = nodes[i].op.inputs().iter().flatten().any(|&j| reach[j]);
                }
            }
        }

        let prev = self.grad_enabled.replace(create_graph);
        let result = self.backward(output, n, &reach);
        self.grad_enabled.set(prev);
        let adjoint = result?;

        let mut grads = Vec::with_capacity(wrt.len());
        let mut detached = Vec::new();
        for (k, v) in wrt.iter().enumerate() {
            match adjoint.get(v.id).copied().flatten() {
                Some(id) if reach[output.id] => grads.push(self.var(id)),
                _ => {
                    detached.push(k);
                    grads.push(self.constant(Tensor::zeros(&v.shape()))?);
                }
            }
        }
        Ok(Gradients { grads, detached })
    }

    fn backward(&self, output: Var<'_>, n: usize, reach: &[bool]) -> Result<Vec<Option<NodeId>>> {
        let mut adjoint: Vec<Option<NodeId>> = vec![None; n];
        if !reach[output.id] {
            return Ok(adjoint);
        }
        adjoint[output.id] = Some(self.constant(Tensor::scalar(1.0))?.id);
        for i in (0..n).rev() {
            let Some(g) = adjoint[i] else { continue };
            if !reach[i] {
                continue;
            }
            let op = self.nodes.borrow()[i].op.clone();
            let [a, b] = op.inputs();
            let need_a = a.is_some_and(|a| reach[a]);
            let need_b = b.is_some_and(|b| reach[b]);
            if !need_a && !need_b {
                continue;
            }
            let (ga, gb) = self.vjp(&op, self.var(g), self.var(i), need_a, need_b)?;
            for (input, contrib) in [(a, ga), (b, gb)] {
                if let (Some(input), Some(c)) = (input, contrib) {
                    adjoint[input] = Some(match adjoint[input] {
                        Some(prev) => self.var(prev).add(c)?.id,
                        None => c.id,
                    });
                }
            }
        }
        Ok(adjoint)
    }

    #[allow(clippy::type_complexity)]
    fn vjp<'t>(
        &'t self,
        op: &Op,
        g: Var<'t>,
        out: Var<'t>,
        need_a: bool,
        need_b: bool,
    ) -> Result<(Option<Var<'t>>, Option<Var<'t>>)> {
        let v = |id| self.var(id);
        let when = |need: bool, f: &dyn Fn() -> Result<Var<'t>>| -> Result<Option<Var<'t>>> {
            if need {
                f().map(Some)
            } else {
                Ok(None)
            }
        };
        Ok(match *op {
            Op::Leaf => (None, None),
            Op::Add(..) => (need_a.then_some(g), need_b.then_some(g)),
            Op::Sub(..) => (need_a.then_some(g), when(need_b, &|| g.neg())?),
            Op::Mul(a, b) => (
                when(need_a, &|| g.mul(v(b)))?,
                when(need_b, &|| g.mul(v(a)))?,
            ),
            Op::Div(_, b) => (
                when(need_a, &|| g.div(v(b)))?,
                when(need_b, &|| g.mul(out)?.div(v(b))?.neg())?,
            ),
            Op::Neg(_) => (Some(g.neg()?), None),
            Op::Affine { scale, .. } => (Some(g.scale(scale)?), None),
            Op::MatMul { a, b, ta, tb } => (
                when(need_a, &|| {
                    if ta {
                        v(b).matmul_t(g, tb, true)
                    } else {
                        g.matmul_t(v(b), false, !tb)
                    }
                })?,
                when(need_b, &|| {
                    if tb {
                        g.matmul_t(v(a), true, ta)
                    } else {
                        v(a).matmul_t(g, !ta, false)
                    }
                })?,
            ),
            Op::Conv { x, k, geom } => (
                when(need_a, &|| conv_input_grad(g, v(k), geom))?,
                when(need_b, &|| conv_kernel_grad(v(x), g, geom))?,
            ),
            Op::ConvInputGrad { gy, k, geom } => (
                when(need_a, &|| conv_raw(g, v(k), geom))?,
                when(need_b, &|| conv_kernel_grad(g, v(gy), geom))?,
            ),
            Op::ConvKernelGrad { x, gy, geom } => (
                when(need_a, &|| conv_input_grad(v(gy), g, geom))?,
                when(need_b, &|| conv_raw(v(x), g, geom))?,
            ),
            Op::Relu(x) => {
                let mask = self.value(x).map(|t| if t > 0.0 { 1.0 } else { 0.0 });
                (Some(g.mul(self.constant(mask)?)?), None)
            }
            Op::Arctan(x) => {
                let xv = v(x);
                let denom = xv.mul(xv)?.add_scalar(1.0)?;
                (Some(g.div(denom)?), None)
            }
            Op::Sigmoid(_) => {
                let d = out.mul(out.affine(-1.0, 1.0)?)?;
                (Some(g.mul(d)?), None)
            }
            Op::Log(x) => (Some(g.div(v(x))?), None),
            Op::Exp(_) => (Some(g.mul(out)?), None),
            Op::PowI { x, ref exps } => {
                let shape = self.value(x).shape().to_vec();
                let lowered: Vec<i32> = exps.iter().map(|e| e - 1).collect();
                let coef: Vec<f64> = if exps.len() == 1 {
                    vec![exps[0] as f64; shape.iter().product()]
                } else {
                    exps.iter().map(|&e| e as f64).collect()
                };
                let lowered_x = if lowered.len() == 1 {
                    v(x).powi(lowered[0])?
                } else {
                    v(x).powi_each(lowered)?
                };
                let d = lowered_x.mul(self.constant(Tensor::from_parts(shape, coef))?)?;
                (Some(g.mul(d)?), None)
            }
            Op::LogSoftmax(_) => {
                let cols = *out.shape().last().unwrap_or(&1);
                let p = out.exp()?;
                let s = g.sum_last()?.expand_last(cols)?;
                (Some(g.sub(p.mul(s)?)?), None)
            }
            Op::Softmax(_) => {
                let cols = *out.shape().last().unwrap_or(&1);
                let s = g.mul(out)?.sum_last()?.expand_last(cols)?;
                (Some(out.mul(g.sub(s)?)?), None)
            }
            Op::Sum(x) => (Some(g.broadcast_to(&self.value(x).shape().to_vec())?), None),
            Op::SumLast(x) => {
                let cols = *self.value(x).shape().last().unwrap_or(&1);
                (Some(g.expand_last(cols)?), None)
            }
            Op::ExpandLast(_) => (Some(g.sum_last()?), None),
            Op::Broadcast(x) => (Some(g.sum_to(&self.value(x).shape().to_vec())?), None),
            Op::SumTo(x) => (Some(g.broadcast_to(&self.value(x).shape().to_vec())?), None),
            Op::Gather { x, ref idx } => {
                let shape = self.value(x).shape().to_vec();
                (Some(g.scatter_add_rc(Rc::clone(idx), &shape)?), None)
            }
            Op::ScatterAdd { x, ref idx } => {
                let shape = self.value(x).shape().to_vec();
                (Some(g.gather_rc(Rc::clone(idx), &shape)?), None)
            }
            Op::Reshape(x) => (Some(g.reshape(&self.value(x).shape().to_vec())?), None),
            Op::ConcatLast(a, b) => {
                let (sa, sb) = (
                    self.value(a).shape().to_vec(),
                    self.value(b).shape().to_vec(),
                );
                let (ca, cb) = (*sa.last().unwrap(), *sb.last().unwrap());
                let rows = sa.iter().product::<usize>() / ca.max(1);
                let pick = |off: usize, c: usize| -> Vec<usize> {
                    (0..rows)
                        .flat_map(|r| (0..c).map(move |j| r * (ca + cb) + off + j))
                        .collect()
                };
                (
                    when(need_a, &|| g.gather(pick(0, ca), &sa))?,
                    when(need_b, &|| g.gather(pick(ca, cb), &sb))?,
                )
            }
        })
    }
}

fn conv_raw<'t>(x: Var<'t>, k: Var<'t>, geom: ConvGeom) -> Result<Var<'t>> {
    let value = kernels::conv2d(&x.value(), &k.value(), &geom);
    x.tape.push(
        "conv2d",
        value,
        Op::Conv {
            x: x.id,
            k: k.id,
            geom,
        },
    )
}

fn conv_input_grad<'t>(gy: Var<'t>, k: Var<'t>, geom: ConvGeom) -> Result<Var<'t>> {
    let value = kernels::conv2d_input_grad(&gy.value(), &k.value(), &geom);
    gy.tape.push(
        "conv2d_input_grad",
        value,
        Op::ConvInputGrad {
            gy: gy.id,
            k: k.id,
            geom,
        },
    )
}

fn conv_kernel_grad<'t>(x: Var<'t>, gy: Var<'t>, geom: ConvGeom) -> Result<Var<'t>> {
    let value = kernels::conv2d_kernel_grad(&x.value(), &gy.value(), &geom);
    x.tape.push(
        "conv2d_kernel_grad",
        value,
        Op::ConvKernelGrad {
            x: x.id,
            gy: gy.id,
            geom,
        },
    )
}

/// Gradients returned by [`Tape::grad`], in the order requested.
pub struct Gradients<'t> {
    pub grads: Vec<Var<'t>>,
    /// Positions of requested variables the output does not depend on.
    pub detached: Vec<usize>,
}

/// A handle to a tensor recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: NodeId,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

fn is_suffix(short: &[usize], long: &[usize]) -> bool {
    short.len() <= long.len() && long[long.len() - short.len()..] == *short
}

impl<'t> Var<'t> {
    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Arc<Tensor> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn item(&self) -> f64 {
        self.value().item()
    }

    /// Whether gradient can flow from this variable into some parameter.
    pub fn is_tracked(&self) -> bool {
        self.tape.nodes.borrow()[self.id].tracked
    }

    /// Same value, zero gradient.
    pub fn stop_gradient(&self) -> Result<Var<'t>> {
        self.tape.constant(self.value())
    }

    fn unary(
        &self,
        name: &'static str,
        op: Op,
        f: impl FnOnce(&Tensor) -> Tensor,
    ) -> Result<Var<'t>> {
        let value = f(&self.value());
        self.tape.push(name, value, op)
    }

    /// Aligns two operands for an element-wise op: equal shapes pass through,
    /// otherwise the operand whose shape is a trailing suffix of the other's
    /// (a scalar included) is tiled. Anything else is an error.
    fn align(self, other: Var<'t>, name: &'static str) -> Result<(Var<'t>, Var<'t>)> {
        let (sa, sb) = (self.shape(), other.shape());
        if sa == sb {
            Ok((self, other))
        } else if is_suffix(&sb, &sa) {
            Ok((self, other.broadcast_to(&sa)?))
        } else if is_suffix(&sa, &sb) {
            Ok((self.broadcast_to(&sb)?, other))
        } else {
            Err(Error::Shape {
                op: name,
                lhs: sa,
                rhs: sb,
            })
        }
    }

    fn binary(
        self,
        other: Var<'t>,
        name: &'static str,
        make: fn(NodeId, NodeId) -> Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var<'t>> {
        let (a, b) = self.align(other, name)?;
        let value = a.value().zip(&b.value(), f);
        self.tape.push(name, value, make(a.id, b.id))
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "add", Op::Add, |a, b| a + b)
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "sub", Op::Sub, |a, b| a - b)
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "mul", Op::Mul, |a, b| a * b)
    }

    pub fn div(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "div", Op::Div, |a, b| a / b)
    }

    pub fn neg(self) -> Result<Var<'t>> {
        self.unary("neg", Op::Neg(self.id), |t| t.map(|v| -v))
    }

    /// `scale * x + shift`.
    pub fn affine(self, scale: f64, shift: f64) -> Result<Var<'t>> {
        self.unary("affine", Op::Affine { x: self.id, scale }, |t| {
            t.map(|v| scale * v + shift)
        })
    }

    pub fn scale(self, c: f64) -> Result<Var<'t>> {
        self.affine(c, 0.0)
    }

    pub fn add_scalar(self, c: f64) -> Result<Var<'t>> {
        self.affine(1.0, c)
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.matmul_t(other, false, false)
    }

    /// `op(self) · op(other)` where `op` transposes when the flag is set.
    pub fn matmul_t(self, other: Var<'t>, ta: bool, tb: bool) -> Result<Var<'t>> {
        let value =
            kernels::matmul(&self.value(), &other.value(), ta, tb).ok_or_else(|| Error::Shape {
                op: "matmul",
                lhs: self.shape(),
                rhs: other.shape(),
            })?;
        self.tape.push(
            "matmul",
            value,
            Op::MatMul {
                a: self.id,
                b: other.id,
                ta,
                tb,
            },
        )
    }

    /// Stride-1 convolution of `[N, C, H, W]` by `[F, C, KH, KW]`, no bias.
    pub fn conv2d(self, kernel: Var<'t>, padding: Padding) -> Result<Var<'t>> {
        let geom = ConvGeom::new(&self.shape(), &kernel.shape(), padding)?;
        conv_raw(self, kernel, geom)
    }

    pub fn relu(self) -> Result<Var<'t>> {
        self.unary("relu", Op::Relu(self.id), |t| t.map(|v| v.max(0.0)))
    }

    pub fn arctan(self) -> Result<Var<'t>> {
        self.unary("arctan", Op::Arctan(self.id), |t| t.map(f64::atan))
    }

    pub fn sigmoid(self) -> Result<Var<'t>> {
        self.unary("sigmoid", Op::Sigmoid(self.id), |t| t.map(sigmoid))
    }

    pub fn log(self) -> Result<Var<'t>> {
        self.unary("log", Op::Log(self.id), |t| t.map(f64::ln))
    }

    pub fn exp(self) -> Result<Var<'t>> {
        self.unary("exp", Op::Exp(self.id), |t| t.map(f64::exp))
    }

    pub fn powi(self, e: i32) -> Result<Var<'t>> {
        let exps: Rc<[i32]> = Rc::from(vec![e]);
        self.unary(
            "powi",
            Op::PowI {
                x: self.id,
                exps: Rc::clone(&exps),
            },
            |t| kernels::powi(t, &exps),
        )
    }

    /// Element-wise integer powers, one exponent per element.
    pub fn powi_each(self, exps: Vec<i32>) -> Result<Var<'t>> {
        if exps.len() != self.value().numel() {
            return Err(Error::Shape {
                op: "powi",
                lhs: self.shape(),
                rhs: vec![exps.len()],
            });
        }
        let exps: Rc<[i32]> = Rc::from(exps);
        self.unary(
            "powi",
            Op::PowI {
                x: self.id,
                exps: Rc::clone(&exps),
            },
            |t| kernels::powi(t, &exps),
        )
    }

    pub fn log_softmax(self) -> Result<Var<'t>> {
        self.unary(
            "log_softmax",
            Op::LogSoftmax(self.id),
            kernels::log_softmax_last,
        )
    }

    pub fn softmax(self) -> Result<Var<'t>> {
        self.unary("softmax", Op::Softmax(self.id), kernels::softmax_last)
    }

    pub fn sum(self) -> Result<Var<'t>> {
        self.unary("sum", Op::Sum(self.id), |t| Tensor::scalar(t.sum()))
    }

    pub fn mean(self) -> Result<Var<'t>> {
        let n = self.value().numel().max(1) as f64;
        self.sum()?.scale(1.0 / n)
    }

    /// Sum over the last axis, dropping it.
    pub fn sum_last(self) -> Result<Var<'t>> {
        if self.shape().is_empty() {
            return Err(Error::Shape {
                op: "sum_last",
                lhs: vec![],
                rhs: vec![],
            });
        }
        self.unary("sum_last", Op::SumLast(self.id), kernels::sum_last)
    }

    /// Repeat each element `n` times along a new last axis.
    pub fn expand_last(self, n: usize) -> Result<Var<'t>> {
        self.unary("expand_last", Op::ExpandLast(self.id), |t| {
            kernels::expand_last(t, n)
        })
    }

    /// Tile to `shape`; this variable's shape must be a trailing suffix of it.
    pub fn broadcast_to(self, shape: &[usize]) -> Result<Var<'t>> {
        let own = self.shape();
        if own == shape {
            return Ok(self);
        }
        if !is_suffix(&own, shape) {
            return Err(Error::Shape {
                op: "broadcast",
                lhs: own,
                rhs: shape.to_vec(),
            });
        }
        self.unary("broadcast", Op::Broadcast(self.id), |t| {
            kernels::broadcast_trailing(t, shape)
        })
    }

    /// Sum over leading axes down to the trailing `shape`.
    pub fn sum_to(self, shape: &[usize]) -> Result<Var<'t>> {
        let own = self.shape();
        if own == shape {
            return Ok(self);
        }
        if !is_suffix(shape, &own) {
            return Err(Error::Shape {
                op: "sum_to",
                lhs: own,
                rhs: shape.to_vec(),
            });
        }
        self.unary("sum_to", Op::SumTo(self.id), |t| {
            kernels::sum_to_trailing(t, shape)
        })
    }

    /// `out.flat[i] = self.flat[idx[i]]`, reshaped to `shape`.
    pub fn gather(self, idx: Vec<usize>, shape: &[usize]) -> Result<Var<'t>> {
        self.gather_rc(Rc::from(idx), shape)
    }

    fn gather_rc(self, idx: Rc<[usize]>, shape: &[usize]) -> Result<Var<'t>> {
        let n = self.value().numel();
        if idx.len() != shape.iter().product::<usize>() || idx.iter().any(|&i| i >= n) {
            return Err(Error::Shape {
                op: "gather",
                lhs: self.shape(),
                rhs: shape.to_vec(),
            });
        }
        self.unary(
            "gather",
            Op::Gather {
                x: self.id,
                idx: Rc::clone(&idx),
            },
            |t| kernels::gather(t, &idx, shape),
        )
    }

    /// `out.flat[idx[i]] += self.flat[i]` into zeros of `shape`.
    pub fn scatter_add(self, idx: Vec<usize>, shape: &[usize]) -> Result<Var<'t>> {
        self.scatter_add_rc(Rc::from(idx), shape)
    }

    fn scatter_add_rc(self, idx: Rc<[usize]>, shape: &[usize]) -> Result<Var<'t>> {
        let n: usize = shape.iter().product();
        if idx.len() != self.value().numel() || idx.iter().any(|&i| i >= n) {
            return Err(Error::Shape {
                op: "scatter_add",
                lhs: self.shape(),
                rhs: shape.to_vec(),
            });
        }
        self.unary(
            "scatter_add",
            Op::ScatterAdd {
                x: self.id,
                idx: Rc::clone(&idx),
            },
            |t| kernels::scatter_add(t, &idx, shape),
        )
    }

    /// Column `j` of every row: `[N, M] -> [N]` picking `cols[n]` from row `n`.
    pub fn pick_columns(self, cols: &[usize]) -> Result<Var<'t>> {
        let shape = self.shape();
        let width = match shape.as_slice() {
            [rows, width] if *rows == cols.len() && cols.iter().all(|c| c < width) => *width,
            _ => {
                return Err(Error::Shape {
                    op: "pick_columns",
                    lhs: shape,
                    rhs: vec![cols.len()],
                })
            }
        };
        let idx = cols
            .iter()
            .enumerate()
            .map(|(r, &c)| r * width + c)
            .collect();
        self.gather(idx, &[cols.len()])
    }

    /// Rows `rows` of a tensor whose first axis indexes rows.
    pub fn select_rows(self, rows: &[usize]) -> Result<Var<'t>> {
        let mut shape = self.shape();
        let width: usize = shape.iter().skip(1).product();
        let idx = rows
            .iter()
            .flat_map(|&r| r * width..(r + 1) * width)
            .collect();
        shape[0] = rows.len();
        self.gather(idx, &shape)
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t>> {
        let value = self.value().reshape(shape)?;
        self.tape.push("reshape", value, Op::Reshape(self.id))
    }

    pub fn concat_last(self, other: Var<'t>) -> Result<Var<'t>> {
        let (sa, sb) = (self.shape(), other.shape());
        if sa.is_empty() || sa.len() != sb.len() || sa[..sa.len() - 1] != sb[..sb.len() - 1] {
            return Err(Error::Shape {
                op: "concat_last",
                lhs: sa,
                rhs: sb,
            });
        }
        let value = kernels::concat_last(&self.value(), &other.value());
        self.tape
            .push("concat_last", value, Op::ConcatLast(self.id, other.id))
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}
