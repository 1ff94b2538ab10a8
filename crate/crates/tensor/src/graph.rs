use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::rc::Rc;

use crate::error::{shape_err, Result, TensorError};
use crate::ops::broadcast::{binary, broadcast_to, sum_to_shape};
use crate::ops::conv::{conv2d, conv2d_backward, ConvSpec};
use crate::ops::layout::{concat, narrow, narrow_backward, pad_reflect, pad_reflect_backward, pixel_shuffle, pixel_unshuffle};
use crate::ops::matmul::{bmm, bmm_backward};
use crate::ops::norm::{layer_norm_channels, layer_norm_channels_backward, softmax, softmax_backward, LnStats};
use crate::ops::pool::{max_pool2, max_pool2_backward};
use crate::ops::reduce::{reduced_count, sum_axes};
use crate::ops::resample::{Filter, ResamplePlan};
use crate::ops::unary::Unary;
use crate::{Real, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddScalar(Var),
    MulScalar(Var, T),
    Unary(Var, Unary),
    Sum(Var),
    Mean(Var),
    MeanAxes(Var, Vec<usize>),
    Reshape(Var),
    Narrow { x: Var, axis: usize, start: usize },
    Concat { xs: Vec<Var>, axis: usize },
    Conv { x: Var, w: Var, b: Option<Var>, spec: ConvSpec },
    MaxPool { x: Var, arg: Vec<usize> },
    Resample { x: Var, plan: Rc<ResamplePlan<T>> },
    Shuffle { x: Var, r: usize },
    Unshuffle { x: Var, r: usize },
    PadReflect { x: Var, pad: usize },
    Bmm { a: Var, ta: bool, b: Var, tb: bool },
    Softmax { x: Var, axis: usize },
    LayerNorm { x: Var, gamma: Var, beta: Var, stats: LnStats<T> },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Append-only computation tape. Every operation evaluates eagerly and
/// records what its adjoint needs; [`Graph::backward`] walks the tape in
/// reverse.
pub struct Graph<T: Real> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Fingerprint of every branch taken by piecewise operations (leaky and
    /// plain rectifiers, absolute value, smooth L1, clamp, max pooling).
    /// Two evaluations with equal fingerprints lie on the same smooth piece,
    /// which is what finite-difference checks need to be meaningful.
    pub fn branch_fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for node in &self.nodes {
            match &node.op {
                Op::Unary(x, op) => {
                    let xs = self.nodes[x.0].value.data();
                    match *op {
                        Unary::Relu | Unary::LeakyRelu(_) | Unary::Abs => xs.iter().for_each(|v| (*v > T::zero()).hash(&mut h)),
                        Unary::SmoothL1 => xs.iter().for_each(|v| (v.abs() <= T::one(), *v > T::zero()).hash(&mut h)),
                        Unary::Clamp(lo, hi) => xs.iter().for_each(|v| (*v < T::c(lo), *v > T::c(hi)).hash(&mut h)),
                        _ => {}
                    }
                }
                Op::MaxPool { arg, .. } => arg.hash(&mut h),
                _ => {}
            }
        }
        h.finish()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|i| self.nodes[i.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    // ---- element-wise -------------------------------------------------

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = binary(self.value(a), self.value(b), |x, y| x + y)?;
        Ok(self.push(v, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = binary(self.value(a), self.value(b), |x, y| x - y)?;
        Ok(self.push(v, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = binary(self.value(a), self.value(b), |x, y| x * y)?;
        Ok(self.push(v, Op::Mul(a, b), &[a, b]))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = binary(self.value(a), self.value(b), |x, y| x / y)?;
        Ok(self.push(v, Op::Div(a, b), &[a, b]))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let s = T::c(s);
        let v = self.value(a).map(|x| x + s);
        self.push(v, Op::AddScalar(a), &[a])
    }

    pub fn mul_scalar(&mut self, a: Var, s: f64) -> Var {
        let s = T::c(s);
        let v = self.value(a).map(|x| x * s);
        self.push(v, Op::MulScalar(a, s), &[a])
    }

    pub fn unary(&mut self, a: Var, op: Unary) -> Var {
        let v = self.value(a).map(|x| op.apply(x));
        self.push(v, Op::Unary(a, op), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Sigmoid)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        self.unary(a, Unary::LeakyRelu(slope))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Relu)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Gelu)
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, Unary::Clamp(lo, hi))
    }

    // ---- reductions ---------------------------------------------------

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).sum());
        self.push(v, Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).mean());
        self.push(v, Op::Mean(a), &[a])
    }

    /// Mean over `axes`, keeping them as size-1 dimensions.
    pub fn mean_axes(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        let n = reduced_count(self.shape(a), axes);
        let s = T::c(1.0 / n as f64);
        let v = sum_axes(self.value(a), axes)?.map(|x| x * s);
        Ok(self.push(v, Op::MeanAxes(a, axes.to_vec()), &[a]))
    }

    // ---- layout -------------------------------------------------------

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(a).clone().reshape(shape.to_vec())?;
        Ok(self.push(v, Op::Reshape(a), &[a]))
    }

    pub fn narrow(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let v = narrow(self.value(a), axis, start, len)?;
        Ok(self.push(v, Op::Narrow { x: a, axis, start }, &[a]))
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let vals: Vec<&Tensor<T>> = xs.iter().map(|&x| self.value(x)).collect();
        let v = concat(&vals, axis)?;
        Ok(self.push(v, Op::Concat { xs: xs.to_vec(), axis }, xs))
    }

    pub fn pad_reflect(&mut self, a: Var, pad: usize) -> Result<Var> {
        let v = pad_reflect(self.value(a), pad)?;
        Ok(self.push(v, Op::PadReflect { x: a, pad }, &[a]))
    }

    pub fn pixel_shuffle(&mut self, a: Var, r: usize) -> Result<Var> {
        let v = pixel_shuffle(self.value(a), r)?;
        Ok(self.push(v, Op::Shuffle { x: a, r }, &[a]))
    }

    pub fn pixel_unshuffle(&mut self, a: Var, r: usize) -> Result<Var> {
        let v = pixel_unshuffle(self.value(a), r)?;
        Ok(self.push(v, Op::Unshuffle { x: a, r }, &[a]))
    }

    // ---- spatial ------------------------------------------------------

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, spec: ConvSpec) -> Result<Var> {
        let v = conv2d(self.value(x), self.value(w), b.map(|b| self.value(b)), spec)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(v, Op::Conv { x, w, b, spec }, &inputs))
    }

    pub fn max_pool2(&mut self, x: Var) -> Result<Var> {
        let (v, arg) = max_pool2(self.value(x))?;
        Ok(self.push(v, Op::MaxPool { x, arg }, &[x]))
    }

    /// Resamples the spatial axes to `out_hw` with a separable filter.
    pub fn resample(&mut self, x: Var, out_hw: (usize, usize), filter: Filter, antialias: bool) -> Result<Var> {
        let (_, _, h, w) = self.value(x).dims4()?;
        let plan = Rc::new(ResamplePlan::new((h, w), out_hw, filter, antialias)?);
        let v = plan.forward(self.value(x))?;
        Ok(self.push(v, Op::Resample { x, plan }, &[x]))
    }

    /// Integer-factor bilinear up-sampling.
    pub fn upsample_bilinear(&mut self, x: Var, factor: usize) -> Result<Var> {
        let (_, _, h, w) = self.value(x).dims4()?;
        self.resample(x, (h * factor, w * factor), Filter::Bilinear, false)
    }

    // ---- attention ----------------------------------------------------

    /// Batched matrix product of rank-3 tensors with optional transposes.
    pub fn bmm(&mut self, a: Var, ta: bool, b: Var, tb: bool) -> Result<Var> {
        let v = bmm(self.value(a), ta, self.value(b), tb)?;
        Ok(self.push(v, Op::Bmm { a, ta, b, tb }, &[a, b]))
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let v = softmax(self.value(x), axis)?;
        Ok(self.push(v, Op::Softmax { x, axis }, &[x]))
    }

    pub fn layer_norm_channels(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (v, stats) = layer_norm_channels(self.value(x), self.value(gamma), self.value(beta), eps)?;
        Ok(self.push(v, Op::LayerNorm { x, gamma, beta, stats }, &[x, gamma, beta]))
    }

    // ---- reverse pass -------------------------------------------------

    /// Reverse-mode sweep from a single-element `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>> {
        let rv = self.value(root);
        if rv.numel() != 1 {
            return Err(TensorError::NonScalarRoot(rv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::full(rv.shape().to_vec(), T::one()));
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let mut send = |v: Var, t: Tensor<T>| -> Result<()> {
            if !self.wants(v) {
                return Ok(());
            }
            match &mut grads[v.0] {
                Some(acc) => {
                    if acc.shape() != t.shape() {
                        return shape_err(format!("gradient shape {:?} vs {:?}", t.shape(), acc.shape()));
                    }
                    acc.data_mut().iter_mut().zip(t.data()).for_each(|(a, &b)| *a += b);
                }
                slot @ None => *slot = Some(t),
            }
            Ok(())
        };
        match &node.op {
            Op::Leaf => {}
            &Op::Add(a, b) => {
                if self.wants(a) {
                    send(a, sum_to_shape(g, self.shape(a))?)?;
                }
                if self.wants(b) {
                    send(b, sum_to_shape(g, self.shape(b))?)?;
                }
            }
            &Op::Sub(a, b) => {
                if self.wants(a) {
                    send(a, sum_to_shape(g, self.shape(a))?)?;
                }
                if self.wants(b) {
                    send(b, sum_to_shape(g, self.shape(b))?.map(|v| -v))?;
                }
            }
            &Op::Mul(a, b) => {
                if self.wants(a) {
                    send(a, sum_to_shape(&binary(g, self.value(b), |x, y| x * y)?, self.shape(a))?)?;
                }
                if self.wants(b) {
                    send(b, sum_to_shape(&binary(g, self.value(a), |x, y| x * y)?, self.shape(b))?)?;
                }
            }
            &Op::Div(a, b) => {
                let bv = self.value(b);
                if self.wants(a) {
                    send(a, sum_to_shape(&binary(g, bv, |x, y| x / y)?, self.shape(a))?)?;
                }
                if self.wants(b) {
                    // d(a/b)/db = -out / b
                    let t = binary(&g.zip_map(&node.value, |x, o| -x * o)?, bv, |x, y| x / y)?;
                    send(b, sum_to_shape(&t, self.shape(b))?)?;
                }
            }
            &Op::AddScalar(a) => send(a, g.clone())?,
            &Op::MulScalar(a, s) => send(a, g.map(|v| v * s))?,
            &Op::Unary(a, op) => {
                let x = self.value(a);
                let mut d = g.clone();
                for ((dv, &xv), &yv) in d.data_mut().iter_mut().zip(x.data()).zip(node.value.data()) {
                    *dv *= op.derivative(xv, yv);
                }
                send(a, d)?;
            }
            &Op::Sum(a) => send(a, Tensor::full(self.shape(a).to_vec(), g.item()))?,
            &Op::Mean(a) => {
                let n = T::c(self.value(a).numel() as f64);
                send(a, Tensor::full(self.shape(a).to_vec(), g.item() / n))?;
            }
            Op::MeanAxes(a, axes) => {
                let s = T::c(1.0 / reduced_count(self.shape(*a), axes) as f64);
                send(*a, broadcast_to(g, self.shape(*a))?.map(|v| v * s))?;
            }
            &Op::Reshape(a) => send(a, g.clone().reshape(self.shape(a).to_vec())?)?,
            &Op::Narrow { x, axis, start } => send(x, narrow_backward(g, self.shape(x), axis, start))?,
            Op::Concat { xs, axis } => {
                let mut start = 0;
                for &x in xs {
                    let len = self.shape(x)[*axis];
                    if self.wants(x) {
                        send(x, narrow(g, *axis, start, len)?)?;
                    }
                    start += len;
                }
            }
            &Op::Conv { x, w, b, spec } => {
                let need = (self.wants(x), self.wants(w), b.is_some_and(|b| self.wants(b)));
                let cg = conv2d_backward(self.value(x), self.value(w), g, spec, need)?;
                if let Some(dx) = cg.dx {
                    send(x, dx)?;
                }
                if let Some(dw) = cg.dw {
                    send(w, dw)?;
                }
                if let (Some(b), Some(db)) = (b, cg.db) {
                    let shape = self.shape(b).to_vec();
                    send(b, db.reshape(shape)?)?;
                }
            }
            Op::MaxPool { x, arg } => send(*x, max_pool2_backward(g, arg, self.shape(*x)))?,
            Op::Resample { x, plan } => send(*x, plan.backward(g)?)?,
            &Op::Shuffle { x, r } => send(x, pixel_unshuffle(g, r)?)?,
            &Op::Unshuffle { x, r } => send(x, pixel_shuffle(g, r)?)?,
            &Op::PadReflect { x, pad } => send(x, pad_reflect_backward(g, self.shape(x), pad))?,
            &Op::Bmm { a, ta, b, tb } => {
                let (da, db) = bmm_backward(self.value(a), ta, self.value(b), tb, g, (self.wants(a), self.wants(b)))?;
                if let Some(da) = da {
                    send(a, da)?;
                }
                if let Some(db) = db {
                    send(b, db)?;
                }
            }
            &Op::Softmax { x, axis } => send(x, softmax_backward(&node.value, g, axis)?)?,
            Op::LayerNorm { x, gamma, beta, stats } => {
                let (dx, dg, db) = layer_norm_channels_backward(self.value(*x), self.value(*gamma), stats, g)?;
                send(*x, dx)?;
                let gs = self.shape(*gamma).to_vec();
                send(*gamma, dg.reshape(gs)?)?;
                let bs = self.shape(*beta).to_vec();
                send(*beta, db.reshape(bs)?)?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::<f64>::new();
        let a = g.param(Tensor::full([2], 3.0));
        let c = g.constant(Tensor::full([2], 2.0));
        let p = g.mul(a, c).unwrap();
        let s = g.sum(p);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(a).unwrap().data(), &[2.0, 2.0]);
        assert!(grads.get(c).is_none());
    }

    #[test]
    fn fan_out_accumulates() {
        let mut g = Graph::<f64>::new();
        let a = g.param(Tensor::full([3], 2.0));
        let sq = g.mul(a, a).unwrap();
        let s = g.sum(sq);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(a).unwrap().data(), &[4.0, 4.0, 4.0]);
    }

    #[test]
    fn non_scalar_root_rejected() {
        let mut g = Graph::<f64>::new();
        let a = g.param(Tensor::full([3], 2.0));
        assert!(g.backward(a).is_err());
    }
}
