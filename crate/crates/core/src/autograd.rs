//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every operation appends a node holding its value; [`Tape::backward`] walks
//! the nodes in reverse creation order. Nodes that do not depend on any
//! gradient-requiring leaf are skipped, so frozen networks (the saliency
//! detector, a discriminator during the generator update) cost nothing on the
//! way back while still passing gradients through to their inputs.
//!
//! Shape agreement between operands is a caller invariant here and is
//! asserted; the public loss and mask functions validate user input before
//! reaching the tape.

use alloc::vec;
use alloc::vec::Vec;

use crate::kernels::{self, ConvGeom};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    /// `scale * x + shift`
    Affine(Var, f64),
    Relu(Var),
    LeakyRelu(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Abs(Var),
    Square(Var),
    Conv2d { input: Var, weight: Var, bias: Option<Var>, geom: ConvGeom },
    InstanceNorm { input: Var, inv_std: Vec<f64> },
    /// Per-channel `x * scale[c] + shift[c]`.
    ChannelAffine { input: Var, scale: Var, shift: Var },
    UpsampleNearest { input: Var, factor: usize },
    ResizeBilinear { input: Var },
    /// `(B, ...) -> (B)`
    SumItems(Var),
    /// `(B, ...) -> (B)`, remembering the flat index of each maximum.
    MaxItems { input: Var, argmax: Vec<usize> },
    /// `(B) -> (B, ...)`
    ExpandItems(Var),
    Sum(Var),
    Mean(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. `v`, or `None` if `v` does not influence it.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient as a tensor shaped like `like`, zero-filled when absent.
    pub fn tensor(&self, v: Var, like: &Tensor) -> Tensor {
        match self.get(v) {
            Some(g) => Tensor::new(like.shape(), g.to_vec()).expect("gradient shape"),
            None => Tensor::zeros(like.shape()),
        }
    }
}

/// Append-only computation record.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that gradients are collected for.
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf without gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A gradient-free copy of `v`.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn zip_map(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "elementwise operands differ in shape");
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(va.shape(), data).expect("shape");
        let rg = self.rg(&[a, b]);
        self.push(value, op, rg)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let value = self.value(a).map(f);
        let rg = self.rg(&[a]);
        self.push(value, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip_map(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip_map(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip_map(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.zip_map(a, b, |x, y| x / y, Op::Div(a, b))
    }

    /// `scale * a + shift`, elementwise.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        self.unary(a, |x| scale * x + shift, Op::Affine(a, scale))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.affine(a, s, 0.0)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        self.unary(a, |x| if x > 0.0 { x } else { slope * x }, Op::LeakyRelu(a, slope))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, libm::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, f64::abs, Op::Abs(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    /// 2-D convolution, zero padding. `weight` is `(Cout, Cin, k, k)`, `bias` is `(Cout)`.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Option<Var>, stride: usize, pad: usize) -> Var {
        let (batch, cin, h, w) = self.value(input).dims4().expect("conv2d input");
        let ws = self.shape(weight);
        assert_eq!(ws.len(), 4, "conv2d weight must be rank 4");
        assert_eq!(ws[1], cin, "conv2d channel mismatch");
        assert_eq!(ws[2], ws[3], "conv2d kernel must be square");
        let geom = ConvGeom { batch, cin, h, w, cout: ws[0], k: ws[2], stride, pad };
        assert!(h + 2 * pad >= geom.k && w + 2 * pad >= geom.k, "conv2d kernel larger than input");
        let (ho, wo) = geom.out_hw();
        let out = kernels::conv2d_forward(
            &geom,
            self.value(input).data(),
            self.value(weight).data(),
            bias.map(|b| self.value(b).data()),
        );
        let value = Tensor::new(&[batch, geom.cout, ho, wo], out).expect("shape");
        let mut deps = vec![input, weight];
        deps.extend(bias);
        let rg = self.rg(&deps);
        self.push(value, Op::Conv2d { input, weight, bias, geom }, rg)
    }

    /// Per-item, per-channel standardization `(x - μ) / sqrt(σ² + eps)`.
    pub fn instance_norm(&mut self, input: Var, eps: f64) -> Var {
        let (b, c, _, _) = self.value(input).dims4().expect("instance_norm input");
        let (out, inv_std) = kernels::instance_norm_forward(self.value(input).data(), b * c, eps);
        let value = Tensor::new(self.shape(input), out).expect("shape");
        let rg = self.rg(&[input]);
        self.push(value, Op::InstanceNorm { input, inv_std }, rg)
    }

    pub fn channel_affine(&mut self, input: Var, scale: Var, shift: Var) -> Var {
        let (_, c, h, w) = self.value(input).dims4().expect("channel_affine input");
        assert_eq!(self.value(scale).len(), c);
        assert_eq!(self.value(shift).len(), c);
        let (s, t) = (self.value(scale).data(), self.value(shift).data());
        let plane = h * w;
        let data = self
            .value(input)
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let ch = (i / plane) % c;
                x * s[ch] + t[ch]
            })
            .collect();
        let value = Tensor::new(self.shape(input), data).expect("shape");
        let rg = self.rg(&[input, scale, shift]);
        self.push(value, Op::ChannelAffine { input, scale, shift }, rg)
    }

    pub fn upsample_nearest(&mut self, input: Var, factor: usize) -> Var {
        let (b, c, h, w) = self.value(input).dims4().expect("upsample input");
        let (ho, wo) = (h * factor, w * factor);
        let src = self.value(input).data();
        let mut out = vec![0.0; b * c * ho * wo];
        for p in 0..b * c {
            for oy in 0..ho {
                for ox in 0..wo {
                    out[(p * ho + oy) * wo + ox] = src[(p * h + oy / factor) * w + ox / factor];
                }
            }
        }
        let value = Tensor::new(&[b, c, ho, wo], out).expect("shape");
        let rg = self.rg(&[input]);
        self.push(value, Op::UpsampleNearest { input, factor }, rg)
    }

    /// Half-pixel bilinear resampling to `(out_h, out_w)`.
    pub fn resize_bilinear(&mut self, input: Var, out_h: usize, out_w: usize) -> Var {
        let (b, c, h, w) = self.value(input).dims4().expect("resize input");
        if (h, w) == (out_h, out_w) {
            return input;
        }
        let out = kernels::resize_bilinear_forward(self.value(input).data(), b * c, (h, w), (out_h, out_w));
        let value = Tensor::new(&[b, c, out_h, out_w], out).expect("shape");
        let rg = self.rg(&[input]);
        self.push(value, Op::ResizeBilinear { input }, rg)
    }

    pub fn sum_items(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let b = t.shape()[0];
        let per = t.len() / b.max(1);
        let data = t.data().chunks(per.max(1)).map(|c| c.iter().sum()).collect();
        let value = Tensor::new(&[b], data).expect("shape");
        let rg = self.rg(&[a]);
        self.push(value, Op::SumItems(a), rg)
    }

    pub fn max_items(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let b = t.shape()[0];
        let per = t.len() / b.max(1);
        let mut argmax = Vec::with_capacity(b);
        let mut data = Vec::with_capacity(b);
        for (i, chunk) in t.data().chunks(per).enumerate() {
            let (j, &m) = chunk
                .iter()
                .enumerate()
                .fold((0, &f64::NEG_INFINITY), |acc, (j, v)| if *v > *acc.1 { (j, v) } else { acc });
            argmax.push(i * per + j);
            data.push(m);
        }
        let value = Tensor::new(&[b], data).expect("shape");
        let rg = self.rg(&[a]);
        self.push(value, Op::MaxItems { input: a, argmax }, rg)
    }

    /// Broadcast a per-item vector `(B)` to `shape`, whose leading dim is `B`.
    pub fn expand_items(&mut self, a: Var, shape: &[usize]) -> Var {
        let v = self.value(a);
        assert_eq!(v.shape(), &shape[..1], "expand_items expects a (B) vector");
        let per: usize = shape[1..].iter().product();
        let data = v.data().iter().flat_map(|&x| core::iter::repeat_n(x, per)).collect();
        let value = Tensor::new(shape, data).expect("shape");
        let rg = self.rg(&[a]);
        self.push(value, Op::ExpandItems(a), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(&[a]);
        self.push(value, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let value = Tensor::scalar(t.sum() / t.len() as f64);
        let rg = self.rg(&[a]);
        self.push(value, Op::Mean(a), rg)
    }

    /// Sum of several same-shaped vars.
    pub fn add_all(&mut self, vars: &[Var]) -> Var {
        let mut acc = vars[0];
        for &v in &vars[1..] {
            acc = self.add(acc, v);
        }
        acc
    }

    /// Reverse pass from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).len(), 1, "backward needs a scalar loss");
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        // Accumulates into the gradient buffer of `v` when it requires one.
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !nodes[v.0].requires_grad {
                return;
            }
            let buf = grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.len()]);
            f(buf);
        };
        let val = |v: Var| nodes[v.0].value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, &mut |d| add_into(d, g));
                acc(*b, &mut |d| add_into(d, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |d| add_into(d, g));
                acc(*b, &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d -= g));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                acc(*a, &mut |d| zip3(d, g, vb, |g, y| g * y));
                acc(*b, &mut |d| zip3(d, g, va, |g, x| g * x));
            }
            Op::Div(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                acc(*a, &mut |d| zip3(d, g, vb, |g, y| g / y));
                acc(*b, &mut |d| {
                    for i in 0..d.len() {
                        d[i] -= g[i] * va[i] / (vb[i] * vb[i]);
                    }
                });
            }
            Op::Affine(a, s) => acc(*a, &mut |d| zip3(d, g, g, |g, _| s * g)),
            Op::Relu(a) => acc(*a, &mut |d| zip3(d, g, val(*a), |g, x| if x > 0.0 { g } else { 0.0 })),
            Op::LeakyRelu(a, slope) => {
                acc(*a, &mut |d| zip3(d, g, val(*a), |g, x| if x > 0.0 { g } else { slope * g }))
            }
            Op::Tanh(a) => {
                let y = node.value.data();
                acc(*a, &mut |d| zip3(d, g, y, |g, y| g * (1.0 - y * y)))
            }
            Op::Sigmoid(a) => {
                let y = node.value.data();
                acc(*a, &mut |d| zip3(d, g, y, |g, y| g * y * (1.0 - y)))
            }
            Op::Abs(a) => acc(*a, &mut |d| zip3(d, g, val(*a), |g, x| g * sign(x))),
            Op::Square(a) => acc(*a, &mut |d| zip3(d, g, val(*a), |g, x| 2.0 * g * x)),
            Op::Conv2d { input, weight, bias, geom } => {
                let (x, w) = (val(*input), val(*weight));
                let need_x = nodes[input.0].requires_grad;
                let need_w = nodes[weight.0].requires_grad;
                let need_b = bias.is_some_and(|b| nodes[b.0].requires_grad);
                let mut dx = need_x.then(|| vec![0.0; x.len()]);
                let mut dw = need_w.then(|| vec![0.0; w.len()]);
                let mut db = need_b.then(|| vec![0.0; geom.cout]);
                kernels::conv2d_backward(geom, x, w, g, dx.as_deref_mut(), dw.as_deref_mut(), db.as_deref_mut());
                if let Some(dx) = dx {
                    acc(*input, &mut |d| add_into(d, &dx));
                }
                if let Some(dw) = dw {
                    acc(*weight, &mut |d| add_into(d, &dw));
                }
                if let (Some(db), Some(b)) = (db, bias) {
                    acc(*b, &mut |d| add_into(d, &db));
                }
            }
            Op::InstanceNorm { input, inv_std } => {
                let y = node.value.data();
                acc(*input, &mut |d| kernels::instance_norm_backward(y, inv_std, g, d));
            }
            Op::ChannelAffine { input, scale, shift } => {
                let (_, c, h, w) = node.value.dims4().expect("rank 4");
                let plane = h * w;
                let x = val(*input);
                let s = val(*scale);
                acc(*input, &mut |d| {
                    for (i, dv) in d.iter_mut().enumerate() {
                        *dv += g[i] * s[(i / plane) % c];
                    }
                });
                acc(*scale, &mut |d| {
                    for i in 0..g.len() {
                        d[(i / plane) % c] += g[i] * x[i];
                    }
                });
                acc(*shift, &mut |d| {
                    for (i, gv) in g.iter().enumerate() {
                        d[(i / plane) % c] += gv;
                    }
                });
            }
            Op::UpsampleNearest { input, factor } => {
                let (_, _, ho, wo) = node.value.dims4().expect("rank 4");
                let (h, w) = (ho / factor, wo / factor);
                acc(*input, &mut |d| {
                    for (i, gv) in g.iter().enumerate() {
                        let p = i / (ho * wo);
                        let r = i % (ho * wo);
                        let (oy, ox) = (r / wo, r % wo);
                        d[(p * h + oy / factor) * w + ox / factor] += gv;
                    }
                });
            }
            Op::ResizeBilinear { input } => {
                let (b, c, h, w) = nodes[input.0].value.dims4().expect("rank 4");
                let (_, _, ho, wo) = node.value.dims4().expect("rank 4");
                acc(*input, &mut |d| kernels::resize_bilinear_backward(g, b * c, (h, w), (ho, wo), d));
            }
            Op::SumItems(a) => {
                let n = nodes[a.0].value.len();
                let per = n / g.len().max(1);
                acc(*a, &mut |d| {
                    for (i, dv) in d.iter_mut().enumerate() {
                        *dv += g[i / per];
                    }
                });
            }
            Op::MaxItems { input, argmax } => acc(*input, &mut |d| {
                for (gv, &j) in g.iter().zip(argmax) {
                    d[j] += gv;
                }
            }),
            Op::ExpandItems(a) => {
                let per = node.value.len() / nodes[a.0].value.len().max(1);
                acc(*a, &mut |d| {
                    for (i, gv) in g.iter().enumerate() {
                        d[i / per] += gv;
                    }
                });
            }
            Op::Sum(a) => acc(*a, &mut |d| d.iter_mut().for_each(|v| *v += g[0])),
            Op::Mean(a) => {
                let n = nodes[a.0].value.len() as f64;
                acc(*a, &mut |d| d.iter_mut().for_each(|v| *v += g[0] / n))
            }
        }
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

#[inline]
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[inline]
fn add_into(d: &mut [f64], g: &[f64]) {
    d.iter_mut().zip(g).for_each(|(d, g)| *d += g);
}

#[inline]
fn zip3(d: &mut [f64], g: &[f64], x: &[f64], f: impl Fn(f64, f64) -> f64) {
    for i in 0..d.len() {
        d[i] += f(g[i], x[i]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn product_rule() {
        let mut tape = Tape::new();
        let a = tape.variable(t(&[2], &[2.0, 3.0]));
        let b = tape.variable(t(&[2], &[5.0, 7.0]));
        let p = tape.mul(a, b);
        let s = tape.sum(p);
        let g = tape.backward(s);
        assert_eq!(g.get(a).unwrap(), &[5.0, 7.0]);
        assert_eq!(g.get(b).unwrap(), &[2.0, 3.0]);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::new();
        let a = tape.variable(t(&[1], &[2.0]));
        let c = tape.constant(t(&[1], &[4.0]));
        let p = tape.mul(a, c);
        let g = tape.backward(p);
        assert!(g.get(c).is_none());
        assert_eq!(g.get(a).unwrap(), &[4.0]);
    }

    #[test]
    fn reused_var_accumulates() {
        let mut tape = Tape::new();
        let a = tape.variable(t(&[1], &[3.0]));
        let sq = tape.mul(a, a);
        let g = tape.backward(sq);
        assert_eq!(g.get(a).unwrap(), &[6.0]);
    }

    #[test]
    fn item_broadcast_round_trip() {
        let mut tape = Tape::new();
        let a = tape.variable(t(&[2], &[1.0, 2.0]));
        let e = tape.expand_items(a, &[2, 1, 1, 3]);
        assert_eq!(tape.value(e).data(), &[1.0, 1.0, 1.0, 2.0, 2.0, 2.0]);
        let s = tape.sum_items(e);
        let tot = tape.sum(s);
        let g = tape.backward(tot);
        assert_eq!(g.get(a).unwrap(), &[3.0, 3.0]);
    }
}
