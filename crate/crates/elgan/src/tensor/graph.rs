//! Tape-based reverse-mode automatic differentiation.
//!
//! Every operation appends a node to a shared tape and evaluates eagerly.
//! [`grad`] walks the tape backwards and emits the vector-Jacobian products
//! *as new tape nodes*, so gradients are themselves differentiable. That is
//! what makes a gradient-penalty term (a function of an input gradient)
//! trainable with exact second-order parameter gradients.
//!
//! A graph lives for one training step and is dropped afterwards; parameters
//! are stored outside the graph and re-bound as leaves each step.

use std::cell::RefCell;
use std::rc::Rc;
use std::sync::Arc;

use ndarray::{ArrayD, Axis, IxDyn};

use super::ops;
use crate::error::{Error, Result};

/// Dense f32 tensor with dynamic rank.
pub type Data = ArrayD<f32>;

#[derive(Clone)]
enum Op {
    Leaf,
    StopGrad,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Scale(f32),
    AddScalar,
    Sqrt,
    Abs,
    Tanh,
    Sigmoid,
    Relu,
    LeakyRelu(f32),
    /// Derivative mask of an activation; gradient does not flow through it.
    ActMask,
    MatMul,
    Transpose,
    Conv2d { stride: usize, pad: usize },
    ConvT2d { stride: usize, pad: usize },
    ConvWGrad { stride: usize, pad: usize },
    Reshape,
    BroadcastTo(Vec<usize>),
    SumAxes,
    SumAll,
    MeanAll,
    MaxPool2 { indices: Arc<Vec<usize>> },
    /// Scatter pooled gradients back to input positions (vjp of MaxPool2).
    PoolScatter2 { indices: Arc<Vec<usize>> },
    /// Gather input-shaped values at pooled argmax positions (vjp of PoolScatter2).
    PoolGather2 { indices: Arc<Vec<usize>>, shape: Vec<usize> },
    Upsample2,
    SumPool2,
    ConcatAxis1,
    NarrowAxis1 { start: usize },
    PadAxis1 { start: usize },
}

struct Node {
    value: Data,
    op: Op,
    parents: Vec<usize>,
    needs_grad: bool,
}

#[derive(Default)]
struct Tape {
    nodes: Vec<Node>,
}

/// Shared computation tape. Cheap to clone (reference-counted).
#[derive(Clone, Default)]
pub struct Graph {
    tape: Rc<RefCell<Tape>>,
}

/// Handle to one tensor on the tape.
#[derive(Clone)]
pub struct Var {
    tape: Rc<RefCell<Tape>>,
    id: usize,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of nodes currently on the tape.
    pub fn len(&self) -> usize {
        self.tape.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Differentiable leaf (a parameter or an interpolate point).
    pub fn leaf(&self, value: Data) -> Var {
        self.push(value, Op::Leaf, vec![], true)
    }

    /// Non-differentiable input data.
    pub fn constant(&self, value: Data) -> Var {
        self.push(value, Op::Leaf, vec![], false)
    }

    pub fn scalar(&self, v: f32) -> Var {
        self.constant(ArrayD::from_elem(IxDyn(&[1]), v))
    }

    fn push(&self, value: Data, op: Op, parents: Vec<usize>, needs_grad: bool) -> Var {
        let mut tape = self.tape.borrow_mut();
        let id = tape.nodes.len();
        tape.nodes.push(Node { value, op, parents, needs_grad });
        Var { tape: Rc::clone(&self.tape), id }
    }
}

impl Var {
    fn graph(&self) -> Graph {
        Graph { tape: Rc::clone(&self.tape) }
    }

    /// Copy of the node's value.
    pub fn value(&self) -> Data {
        self.tape.borrow().nodes[self.id].value.clone()
    }

    /// Read the value without cloning.
    pub fn with_value<R>(&self, f: impl FnOnce(&Data) -> R) -> R {
        f(&self.tape.borrow().nodes[self.id].value)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.borrow().nodes[self.id].value.shape().to_vec()
    }

    pub fn len(&self) -> usize {
        self.tape.borrow().nodes[self.id].value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// First element; the usual accessor for scalar losses.
    pub fn scalar_value(&self) -> f32 {
        self.with_value(|v| v.iter().next().copied().unwrap_or(0.0))
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.borrow().nodes[self.id].needs_grad
    }

    fn unary(&self, op: Op, value: Data) -> Var {
        let needs = self.requires_grad() && !matches!(op, Op::ActMask | Op::StopGrad);
        self.graph().push(value, op, vec![self.id], needs)
    }

    fn binary(&self, other: &Var, op: Op, value: Data) -> Var {
        assert!(Rc::ptr_eq(&self.tape, &other.tape), "vars from different graphs");
        let needs = self.requires_grad() || other.requires_grad();
        self.graph().push(value, op, vec![self.id, other.id], needs)
    }

    pub fn stop_grad(&self) -> Var {
        let v = self.value();
        self.unary(Op::StopGrad, v)
    }

    pub fn add(&self, other: &Var) -> Var {
        let v = self.with_value(|a| other.with_value(|b| a + b));
        self.binary(other, Op::Add, v)
    }

    pub fn sub(&self, other: &Var) -> Var {
        let v = self.with_value(|a| other.with_value(|b| a - b));
        self.binary(other, Op::Sub, v)
    }

    pub fn mul(&self, other: &Var) -> Var {
        let v = self.with_value(|a| other.with_value(|b| a * b));
        self.binary(other, Op::Mul, v)
    }

    pub fn div(&self, other: &Var) -> Var {
        let v = self.with_value(|a| other.with_value(|b| a / b));
        self.binary(other, Op::Div, v)
    }

    pub fn neg(&self) -> Var {
        let v = self.with_value(|a| a.mapv(|x| -x));
        self.unary(Op::Neg, v)
    }

    pub fn scale(&self, c: f32) -> Var {
        let v = self.with_value(|a| a.mapv(|x| x * c));
        self.unary(Op::Scale(c), v)
    }

    pub fn add_scalar(&self, c: f32) -> Var {
        let v = self.with_value(|a| a.mapv(|x| x + c));
        self.unary(Op::AddScalar, v)
    }

    pub fn sqrt(&self) -> Var {
        let v = self.with_value(|a| a.mapv(f32::sqrt));
        self.unary(Op::Sqrt, v)
    }

    pub fn abs(&self) -> Var {
        let v = self.with_value(|a| a.mapv(f32::abs));
        self.unary(Op::Abs, v)
    }

    pub fn square(&self) -> Var {
        self.mul(self)
    }

    pub fn tanh(&self) -> Var {
        let v = self.with_value(|a| a.mapv(f32::tanh));
        self.unary(Op::Tanh, v)
    }

    pub fn sigmoid(&self) -> Var {
        let v = self.with_value(|a| a.mapv(|x| 1.0 / (1.0 + (-x).exp())));
        self.unary(Op::Sigmoid, v)
    }

    pub fn relu(&self) -> Var {
        let v = self.with_value(|a| a.mapv(|x| x.max(0.0)));
        self.unary(Op::Relu, v)
    }

    pub fn leaky_relu(&self, slope: f32) -> Var {
        let v = self.with_value(|a| a.mapv(|x| if x > 0.0 { x } else { slope * x }));
        self.unary(Op::LeakyRelu(slope), v)
    }

    fn act_mask(&self, value: Data) -> Var {
        self.unary(Op::ActMask, value)
    }

    /// 2-D matrix product.
    pub fn matmul(&self, other: &Var) -> Var {
        let v = self.with_value(|a| other.with_value(|b| ops::matmul_dyn(a, b)));
        self.binary(other, Op::MatMul, v)
    }

    /// 2-D transpose.
    pub fn t(&self) -> Var {
        let v = self.with_value(|a| a.t().to_owned());
        self.unary(Op::Transpose, v)
    }

    /// Cross-correlation of NCHW input with OIHW weights.
    pub fn conv2d(&self, w: &Var, stride: usize, pad: usize) -> Var {
        let v = self.with_value(|x| w.with_value(|w| ops::conv2d(x, w, stride, pad)));
        self.binary(w, Op::Conv2d { stride, pad }, v)
    }

    /// Transposed convolution; adjoint of [`Var::conv2d`] in its input.
    /// Weights are OIHW exactly as consumed by `conv2d`: this op maps
    /// O-channel maps back to I-channel maps.
    pub fn convt2d(&self, w: &Var, stride: usize, pad: usize) -> Var {
        let v = self.with_value(|z| w.with_value(|w| ops::convt2d(z, w, stride, pad)));
        self.binary(w, Op::ConvT2d { stride, pad }, v)
    }

    fn conv_wgrad(&self, gy: &Var, stride: usize, pad: usize, kh: usize, kw: usize) -> Var {
        let v = self.with_value(|x| gy.with_value(|g| ops::conv_wgrad(x, g, stride, pad, kh, kw)));
        self.binary(gy, Op::ConvWGrad { stride, pad }, v)
    }

    pub fn reshape(&self, shape: &[usize]) -> Var {
        let v = self.with_value(|a| {
            a.clone()
                .into_shape_with_order(IxDyn(shape))
                .expect("reshape: element count mismatch")
        });
        self.unary(Op::Reshape, v)
    }

    /// Flatten all non-batch axes: `[b, ...] -> [b, n]`.
    pub fn flatten(&self) -> Var {
        let s = self.shape();
        let n: usize = s[1..].iter().product();
        self.reshape(&[s[0], n])
    }

    pub fn broadcast_to(&self, shape: &[usize]) -> Var {
        let v = self.with_value(|a| {
            a.broadcast(IxDyn(shape))
                .expect("broadcast_to: incompatible shapes")
                .to_owned()
        });
        self.unary(Op::BroadcastTo(shape.to_vec()), v)
    }

    /// Sum over `axes`, keeping them as size-1 dims.
    pub fn sum_axes(&self, axes: &[usize]) -> Var {
        let v = self.with_value(|a| ops::sum_axes_keep(a, axes));
        self.unary(Op::SumAxes, v)
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum_all(&self) -> Var {
        let v = self.with_value(|a| ArrayD::from_elem(IxDyn(&[1]), a.sum()));
        self.unary(Op::SumAll, v)
    }

    /// Mean of all elements, shape `[1]`.
    pub fn mean_all(&self) -> Var {
        let v = self.with_value(|a| {
            ArrayD::from_elem(IxDyn(&[1]), a.sum() / a.len() as f32)
        });
        self.unary(Op::MeanAll, v)
    }

    /// 2x2 max pooling, stride 2, NCHW.
    pub fn maxpool2(&self) -> Var {
        let (v, idx) = self.with_value(ops::maxpool2);
        self.unary(Op::MaxPool2 { indices: Arc::new(idx) }, v)
    }

    /// Nearest-neighbour 2x upsampling, NCHW.
    pub fn upsample2(&self) -> Var {
        let v = self.with_value(ops::upsample2);
        self.unary(Op::Upsample2, v)
    }

    fn sum_pool2(&self) -> Var {
        let v = self.with_value(ops::sum_pool2);
        self.unary(Op::SumPool2, v)
    }

    /// Concatenate along the channel axis (axis 1).
    pub fn concat1(&self, other: &Var) -> Var {
        let v = self.with_value(|a| {
            other.with_value(|b| {
                ndarray::concatenate(Axis(1), &[a.view(), b.view()])
                    .expect("concat1: shape mismatch")
            })
        });
        self.binary(other, Op::ConcatAxis1, v)
    }

    fn narrow1(&self, start: usize, len: usize) -> Var {
        let v = self.with_value(|a| {
            a.slice_axis(Axis(1), ndarray::Slice::from(start..start + len)).to_owned()
        });
        self.unary(Op::NarrowAxis1 { start }, v)
    }

    fn pad1(&self, start: usize, total: usize) -> Var {
        let v = self.with_value(|a| ops::pad_axis1(a, start, total));
        self.unary(Op::PadAxis1 { start }, v)
    }
}

/// Reverse-mode gradients of `output` with respect to each var in `wrt`.
///
/// The returned gradients are ordinary tape vars, so an expression built
/// from them can be differentiated again. Vars in `wrt` that `output`
/// does not depend on get a zero gradient of their own shape.
pub fn grad(output: &Var, wrt: &[&Var]) -> Result<Vec<Var>> {
    let g = output.graph();
    let out_id = output.id;
    let seed_data = output.with_value(|v| ArrayD::from_elem(v.raw_dim(), 1.0f32));
    let seed = g.constant(seed_data);

    let mut grads: Vec<Option<Var>> = vec![None; out_id + 1];
    grads[out_id] = Some(seed);

    for id in (0..=out_id).rev() {
        let Some(gout) = grads[id].clone() else { continue };
        let (op, parents, needs) = {
            let tape = g.tape.borrow();
            let n = &tape.nodes[id];
            (n.op.clone(), n.parents.clone(), n.needs_grad)
        };
        if !needs {
            continue;
        }
        let node = Var { tape: Rc::clone(&g.tape), id };
        let contributions = vjp(&g, &node, &op, &parents, &gout)?;
        for (pid, contrib) in parents.iter().zip(contributions) {
            let Some(contrib) = contrib else { continue };
            if !g.tape.borrow().nodes[*pid].needs_grad {
                continue;
            }
            grads[*pid] = Some(match grads[*pid].take() {
                None => contrib,
                Some(acc) => acc.add(&contrib),
            });
        }
    }

    let mut out = Vec::with_capacity(wrt.len());
    for v in wrt {
        assert!(Rc::ptr_eq(&v.tape, &g.tape), "wrt var from different graph");
        let gv = match grads.get(v.id).and_then(|o| o.clone()) {
            Some(gv) => gv,
            None => g.constant(v.with_value(|d| ArrayD::zeros(d.raw_dim()))),
        };
        if gv.with_value(|d| d.iter().any(|x| !x.is_finite())) {
            return Err(Error::Numeric("non-finite gradient".into()));
        }
        out.push(gv);
    }
    Ok(out)
}

fn var_at(g: &Graph, id: usize) -> Var {
    Var { tape: Rc::clone(&g.tape), id }
}

/// Per-parent gradient contributions for one node, expressed as tape ops.
fn vjp(g: &Graph, node: &Var, op: &Op, parents: &[usize], gout: &Var) -> Result<Vec<Option<Var>>> {
    let p = |i: usize| var_at(g, parents[i]);
    Ok(match op {
        Op::Leaf | Op::StopGrad | Op::ActMask => vec![None; parents.len()],
        Op::Add => vec![Some(gout.clone()), Some(gout.clone())],
        Op::Sub => vec![Some(gout.clone()), Some(gout.neg())],
        Op::Mul => vec![Some(gout.mul(&p(1))), Some(gout.mul(&p(0)))],
        Op::Div => {
            let b = p(1);
            let ga = gout.div(&b);
            let gb = gout.mul(&p(0)).div(&b.mul(&b)).neg();
            vec![Some(ga), Some(gb)]
        }
        Op::Neg => vec![Some(gout.neg())],
        Op::Scale(c) => vec![Some(gout.scale(*c))],
        Op::AddScalar => vec![Some(gout.clone())],
        Op::Sqrt => {
            // d sqrt(x) = g / (2 * sqrt(x)); reuse the node's own output.
            vec![Some(gout.scale(0.5).div(node))]
        }
        Op::Abs => {
            let sign = p(0).with_value(|a| a.mapv(|x| if x >= 0.0 { 1.0 } else { -1.0 }));
            let mask = p(0).act_mask(sign);
            vec![Some(gout.mul(&mask))]
        }
        Op::Tanh => {
            let one_minus_y2 = node.mul(node).scale(-1.0).add_scalar(1.0);
            vec![Some(gout.mul(&one_minus_y2))]
        }
        Op::Sigmoid => {
            let dy = node.mul(&node.scale(-1.0).add_scalar(1.0));
            vec![Some(gout.mul(&dy))]
        }
        Op::Relu => {
            let m = p(0).with_value(|a| a.mapv(|x| if x > 0.0 { 1.0 } else { 0.0 }));
            let mask = p(0).act_mask(m);
            vec![Some(gout.mul(&mask))]
        }
        Op::LeakyRelu(slope) => {
            let s = *slope;
            let m = p(0).with_value(|a| a.mapv(|x| if x > 0.0 { 1.0 } else { s }));
            let mask = p(0).act_mask(m);
            vec![Some(gout.mul(&mask))]
        }
        Op::MatMul => {
            let ga = gout.matmul(&p(1).t());
            let gb = p(0).t().matmul(gout);
            vec![Some(ga), Some(gb)]
        }
        Op::Transpose => vec![Some(gout.t())],
        Op::Conv2d { stride, pad } => {
            let (x, w) = (p(0), p(1));
            let ws = w.shape();
            let gx = gout.convt2d(&w, *stride, *pad);
            let gw = x.conv_wgrad(gout, *stride, *pad, ws[2], ws[3]);
            vec![Some(gx), Some(gw)]
        }
        Op::ConvT2d { stride, pad } => {
            let (z, w) = (p(0), p(1));
            let ws = w.shape();
            let gz = gout.conv2d(&w, *stride, *pad);
            let gw = gout.conv_wgrad(&z, *stride, *pad, ws[2], ws[3]);
            vec![Some(gz), Some(gw)]
        }
        Op::ConvWGrad { stride, pad, .. } => {
            // node = wgrad(x, gy); bilinear in both arguments.
            let (x, gy) = (p(0), p(1));
            let gx = gy.convt2d(gout, *stride, *pad);
            let ggy = x.conv2d(gout, *stride, *pad);
            vec![Some(gx), Some(ggy)]
        }
        Op::Reshape => {
            let orig = p(0).shape();
            vec![Some(gout.reshape(&orig))]
        }
        Op::BroadcastTo(target) => {
            let orig = p(0).shape();
            let axes = ops::broadcast_reduce_axes(&orig, target);
            let summed = gout.sum_axes(&axes);
            vec![Some(summed.reshape(&orig))]
        }
        Op::SumAxes => {
            let orig = p(0).shape();
            vec![Some(gout.broadcast_to(&orig))]
        }
        Op::SumAll => {
            let orig = p(0).shape();
            let flat_one = gout.reshape(&vec![1; orig.len()]);
            vec![Some(flat_one.broadcast_to(&orig))]
        }
        Op::MeanAll => {
            let orig = p(0).shape();
            let n: usize = orig.iter().product();
            let flat_one = gout.reshape(&vec![1; orig.len()]);
            vec![Some(flat_one.broadcast_to(&orig).scale(1.0 / n as f32))]
        }
        Op::MaxPool2 { indices } => {
            let shape = p(0).shape();
            let v = gout.with_value(|d| ops::pool_scatter2(d, indices, &shape));
            let n = gout.graph().push(
                v,
                Op::PoolScatter2 { indices: Arc::clone(indices) },
                vec![gout.id],
                gout.requires_grad(),
            );
            vec![Some(n)]
        }
        Op::PoolScatter2 { indices } => {
            let out_shape = node.shape();
            let v = gout.with_value(|d| ops::pool_gather2(d, indices));
            let n = gout.graph().push(
                v,
                Op::PoolGather2 { indices: Arc::clone(indices), shape: out_shape },
                vec![gout.id],
                gout.requires_grad(),
            );
            vec![Some(n)]
        }
        Op::PoolGather2 { indices, shape } => {
            let v = gout.with_value(|d| ops::pool_scatter2(d, indices, shape));
            let n = gout.graph().push(
                v,
                Op::PoolScatter2 { indices: Arc::clone(indices) },
                vec![gout.id],
                gout.requires_grad(),
            );
            vec![Some(n)]
        }
        Op::Upsample2 => vec![Some(gout.sum_pool2())],
        Op::SumPool2 => vec![Some(gout.upsample2())],
        Op::ConcatAxis1 => {
            let ca = p(0).shape()[1];
            let cb = p(1).shape()[1];
            vec![Some(gout.narrow1(0, ca)), Some(gout.narrow1(ca, cb))]
        }
        Op::NarrowAxis1 { start } => {
            let total = p(0).shape()[1];
            vec![Some(gout.pad1(*start, total))]
        }
        Op::PadAxis1 { start, .. } => {
            let len = p(0).shape()[1];
            vec![Some(gout.narrow1(*start, len))]
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr1, arr2};

    fn dynify2(a: ndarray::Array2<f32>) -> Data {
        a.into_dyn()
    }

    #[test]
    fn add_mul_grads() {
        let g = Graph::new();
        let a = g.leaf(arr1(&[1.0f32, 2.0, 3.0]).into_dyn());
        let b = g.leaf(arr1(&[4.0f32, 5.0, 6.0]).into_dyn());
        let y = a.mul(&b).sum_all();
        let gs = grad(&y, &[&a, &b]).unwrap();
        assert_eq!(gs[0].value(), arr1(&[4.0f32, 5.0, 6.0]).into_dyn());
        assert_eq!(gs[1].value(), arr1(&[1.0f32, 2.0, 3.0]).into_dyn());
    }

    #[test]
    fn matmul_grad() {
        let g = Graph::new();
        let a = g.leaf(dynify2(arr2(&[[1.0f32, 2.0], [3.0, 4.0]])));
        let b = g.leaf(dynify2(arr2(&[[5.0f32], [6.0]])));
        let y = a.matmul(&b).sum_all();
        let gs = grad(&y, &[&a, &b]).unwrap();
        assert_eq!(gs[0].value(), dynify2(arr2(&[[5.0f32, 6.0], [5.0, 6.0]])));
        assert_eq!(gs[1].value(), dynify2(arr2(&[[4.0f32], [6.0]])));
    }

    #[test]
    fn unreached_wrt_gets_zeros() {
        let g = Graph::new();
        let a = g.leaf(arr1(&[1.0f32, 2.0]).into_dyn());
        let b = g.leaf(arr1(&[3.0f32]).into_dyn());
        let y = a.sum_all();
        let gs = grad(&y, &[&b]).unwrap();
        assert_eq!(gs[0].value(), arr1(&[0.0f32]).into_dyn());
    }

    #[test]
    fn stop_grad_blocks_flow() {
        let g = Graph::new();
        let a = g.leaf(arr1(&[2.0f32]).into_dyn());
        let y = a.stop_grad().mul(&a).sum_all();
        let gs = grad(&y, &[&a]).unwrap();
        // only the non-detached factor contributes
        assert_eq!(gs[0].value(), arr1(&[2.0f32]).into_dyn());
    }

    #[test]
    fn second_order_through_square() {
        // y = x^3, dy/dx = 3x^2, d2y/dx2 = 6x
        let g = Graph::new();
        let x = g.leaf(arr1(&[2.0f32]).into_dyn());
        let y = x.mul(&x).mul(&x).sum_all();
        let dx = grad(&y, &[&x]).unwrap().remove(0);
        assert!((dx.scalar_value() - 12.0).abs() < 1e-5);
        let ddx = grad(&dx.sum_all(), &[&x]).unwrap().remove(0);
        assert!((ddx.scalar_value() - 12.0).abs() < 1e-5);
    }

    #[test]
    fn mean_all_matches_manual() {
        let g = Graph::new();
        let x = g.leaf(arr1(&[1.0f32, 3.0]).into_dyn());
        let y = x.mean_all();
        assert!((y.scalar_value() - 2.0).abs() < 1e-6);
        let gs = grad(&y, &[&x]).unwrap();
        assert_eq!(gs[0].value(), arr1(&[0.5f32, 0.5]).into_dyn());
    }
}
