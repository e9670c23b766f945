//! Taped reverse-mode differentiation for the handful of ops the model uses.

use alloc::vec;
use alloc::vec::Vec;

use super::kernels::{self, Activation, ConvGeom, Padding};
use super::store::{ParamId, ParameterStore};
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Lower and upper clamp applied to reconstructions inside the cross-entropy.
pub const BCE_CLAMP: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op<T> {
    Input,
    Param(ParamId),
    Fc { x: NodeId, w: NodeId, b: NodeId },
    Conv { x: NodeId, k: NodeId, b: NodeId, geom: ConvGeom },
    Act { x: NodeId, kind: Activation },
    Concat { parts: Vec<NodeId> },
    Reshape { x: NodeId },
    Add { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    Scale { x: NodeId, s: T },
    Sum { x: NodeId },
    Bce { logits: NodeId, target: Tensor<T> },
    Kl { mu: NodeId, logvar: NodeId },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Records a forward computation; `backward` replays it in reverse.
pub struct Tape<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Result<NodeId> {
        if !value.is_finite() {
            return Err(Error::NonFinite(alloc::format!("{} produced NaN/Inf", op_name(&op))));
        }
        self.nodes.push(Node { value, op, needs_grad });
        Ok(NodeId(self.nodes.len() - 1))
    }

    fn grad_of(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|i| self.nodes[i.0].needs_grad)
    }

    /// Constant input (no gradient).
    pub fn input(&mut self, value: Tensor<T>) -> Result<NodeId> {
        self.push(value, Op::Input, false)
    }

    pub fn param(&mut self, store: &ParameterStore<T>, id: ParamId) -> Result<NodeId> {
        self.push(store.value(id).clone(), Op::Param(id), true)
    }

    /// Batched affine map: `x` is `[B, in]`, `w` is `[in, out]`, `b` is `[out]`.
    pub fn fc(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let (xs, ws, bs) = (self.value(x).shape(), self.value(w).shape(), self.value(b).shape());
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] || bs != [ws[1]] {
            return Err(Error::Shape(alloc::format!("fc: input {xs:?}, weights {ws:?}, bias {bs:?}")));
        }
        let (batch, nin, nout) = (xs[0], xs[1], ws[1]);
        let out = kernels::fc_forward(self.value(x).data(), self.value(w).data(), self.value(b).data(), batch, nin, nout);
        let g = self.grad_of(&[x, w, b]);
        self.push(Tensor::new(&[batch, nout], out)?, Op::Fc { x, w, b }, g)
    }

    pub fn conv2d(&mut self, x: NodeId, k: NodeId, b: NodeId, stride: usize, padding: Padding) -> Result<NodeId> {
        let geom = ConvGeom::new(self.value(x).shape(), self.value(k).shape(), stride, padding)?;
        if self.value(b).len() != geom.cout {
            return Err(Error::Shape(alloc::format!("conv bias length {} != {}", self.value(b).len(), geom.cout)));
        }
        let out = kernels::conv2d_forward(self.value(x).data(), self.value(k).data(), self.value(b).data(), &geom);
        let g = self.grad_of(&[x, k, b]);
        self.push(Tensor::new(&geom.out_shape(), out)?, Op::Conv { x, k, b, geom }, g)
    }

    pub fn activation(&mut self, x: NodeId, kind: Activation) -> Result<NodeId> {
        let v = kernels::activation(self.value(x), kind);
        let g = self.grad_of(&[x]);
        self.push(v, Op::Act { x, kind }, g)
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        self.activation(x, Activation::Relu)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        self.activation(x, Activation::Sigmoid)
    }

    pub fn exp(&mut self, x: NodeId) -> Result<NodeId> {
        self.activation(x, Activation::Exp)
    }

    /// Concatenation along the last axis; leading axes must agree.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let first = parts.first().ok_or_else(|| Error::Usage("concat of nothing".into()))?;
        let lead = self.value(*first).shape().split_last().map(|(_, l)| l.to_vec()).unwrap_or_default();
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let s = self.value(*p).shape();
            let (w, l) = s.split_last().ok_or_else(|| Error::Shape("concat of rank-0 tensor".into()))?;
            if l != lead.as_slice() {
                return Err(Error::Shape(alloc::format!("concat leading axes {l:?} vs {lead:?}")));
            }
            widths.push(*w);
        }
        let total: usize = widths.iter().sum();
        let rows: usize = lead.iter().product();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(*p).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let g = self.grad_of(parts);
        self.push(Tensor::new(&shape, out)?, Op::Concat { parts: parts.to_vec() }, g)
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let v = self.value(x).clone().reshape(shape)?;
        let g = self.grad_of(&[x]);
        self.push(v, Op::Reshape { x }, g)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "add")?;
        let v = zip(self.value(a), self.value(b), |p, q| p + q);
        let g = self.grad_of(&[a, b]);
        self.push(v, Op::Add { a, b }, g)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "mul")?;
        let v = zip(self.value(a), self.value(b), |p, q| p * q);
        let g = self.grad_of(&[a, b]);
        self.push(v, Op::Mul { a, b }, g)
    }

    pub fn scale(&mut self, x: NodeId, s: T) -> Result<NodeId> {
        let v = self.value(x).map(|p| p * s);
        let g = self.grad_of(&[x]);
        self.push(v, Op::Scale { x, s }, g)
    }

    /// Sum of all entries, as a one-element tensor.
    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x).data().iter().fold(T::zero(), |a, &b| a + b);
        let g = self.grad_of(&[x]);
        self.push(Tensor::scalar(v), Op::Sum { x }, g)
    }

    /// `z = mu + exp(0.5 * logvar) * eps` with `eps` a constant.
    pub fn reparameterize(&mut self, mu: NodeId, logvar: NodeId, eps: Tensor<T>) -> Result<NodeId> {
        if eps.shape() != self.value(mu).shape() {
            return Err(Error::Usage(alloc::format!(
                "noise shape {:?} does not match latent {:?}",
                eps.shape(),
                self.value(mu).shape()
            )));
        }
        let half = self.scale(logvar, T::of(0.5))?;
        let std = self.exp(half)?;
        let e = self.input(eps)?;
        let noise = self.mul(std, e)?;
        self.add(mu, noise)
    }

    /// Binary cross-entropy between `target` and `sigmoid(logits)`, reconstructions clamped
    /// into `[1e-6, 1 - 1e-6]`, summed over elements and averaged over the leading axis.
    pub fn bce_with_logits(&mut self, logits: NodeId, target: Tensor<T>) -> Result<NodeId> {
        let l = self.value(logits);
        if l.shape() != target.shape() {
            return Err(Error::Shape(alloc::format!("bce: logits {:?} vs target {:?}", l.shape(), target.shape())));
        }
        let batch = T::of(l.shape()[0] as f64);
        let (lo, hi) = (T::of(BCE_CLAMP), T::one() - T::of(BCE_CLAMP));
        let mut sum = T::zero();
        for (&z, &x) in l.data().iter().zip(target.data()) {
            let p = kernels::sigmoid(z).max(lo).min(hi);
            sum = sum - (x * p.ln() + (T::one() - x) * (T::one() - p).ln());
        }
        let g = self.grad_of(&[logits]);
        self.push(Tensor::scalar(sum / batch), Op::Bce { logits, target }, g)
    }

    /// `0.5 * sum(mu^2 + exp(logvar) - 1 - logvar)` averaged over the leading axis.
    pub fn kl(&mut self, mu: NodeId, logvar: NodeId) -> Result<NodeId> {
        self.same_shape(mu, logvar, "kl")?;
        let batch = T::of(self.value(mu).shape()[0] as f64);
        let v = kl_divergence(self.value(mu).data(), self.value(logvar).data()) / batch;
        let g = self.grad_of(&[mu, logvar]);
        self.push(Tensor::scalar(v), Op::Kl { mu, logvar }, g)
    }

    fn same_shape(&self, a: NodeId, b: NodeId, what: &str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::Shape(alloc::format!(
                "{what}: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    /// Accumulates `d loss / d param` into `store` for every parameter on the tape.
    pub fn backward(&self, loss: NodeId, store: &mut ParameterStore<T>) -> Result<()> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::Usage("backward called without a recorded forward pass".into()));
        }
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::Usage(alloc::format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(gout) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Input => {}
                Op::Param(pid) => {
                    let p = store.get_mut(*pid);
                    for (a, &g) in p.grad.data_mut().iter_mut().zip(&gout) {
                        *a = *a + g;
                    }
                }
                Op::Fc { x, w, b } => {
                    let xs = self.value(*x).shape();
                    let (batch, nin, nout) = (xs[0], xs[1], self.value(*w).shape()[1]);
                    let mut gw = vec![T::zero(); nin * nout];
                    let mut gb = vec![T::zero(); nout];
                    let gx = kernels::fc_backward(
                        self.value(*x).data(),
                        self.value(*w).data(),
                        &gout,
                        batch,
                        nin,
                        nout,
                        &mut gw,
                        &mut gb,
                        self.nodes[x.0].needs_grad,
                    );
                    if let Some(gx) = gx {
                        self.send(&mut grads, *x, gx);
                    }
                    self.send(&mut grads, *w, gw);
                    self.send(&mut grads, *b, gb);
                }
                Op::Conv { x, k, b, geom } => {
                    let mut gk = vec![T::zero(); self.value(*k).len()];
                    let mut gb = vec![T::zero(); geom.cout];
                    let gx = kernels::conv2d_backward(
                        self.value(*x).data(),
                        self.value(*k).data(),
                        &gout,
                        geom,
                        &mut gk,
                        &mut gb,
                        self.nodes[x.0].needs_grad,
                    );
                    if let Some(gx) = gx {
                        self.send(&mut grads, *x, gx);
                    }
                    self.send(&mut grads, *k, gk);
                    self.send(&mut grads, *b, gb);
                }
                Op::Act { x, kind } => {
                    let gx = kernels::activate_backward(node.value.data(), &gout, *kind);
                    self.send(&mut grads, *x, gx);
                }
                Op::Concat { parts } => {
                    let total = *node.value.shape().last().unwrap();
                    let rows = node.value.len() / total.max(1);
                    let mut off = 0;
                    for p in parts {
                        let w = *self.value(*p).shape().last().unwrap();
                        if self.nodes[p.0].needs_grad {
                            let mut gp = Vec::with_capacity(rows * w);
                            for r in 0..rows {
                                gp.extend_from_slice(&gout[r * total + off..r * total + off + w]);
                            }
                            self.send(&mut grads, *p, gp);
                        }
                        off += w;
                    }
                }
                Op::Reshape { x } => self.send(&mut grads, *x, gout),
                Op::Add { a, b } => {
                    self.send(&mut grads, *a, gout.clone());
                    self.send(&mut grads, *b, gout);
                }
                Op::Mul { a, b } => {
                    let ga = gout.iter().zip(self.value(*b).data()).map(|(&g, &v)| g * v).collect();
                    let gb = gout.iter().zip(self.value(*a).data()).map(|(&g, &v)| g * v).collect();
                    self.send(&mut grads, *a, ga);
                    self.send(&mut grads, *b, gb);
                }
                Op::Scale { x, s } => {
                    let gx = gout.iter().map(|&g| g * *s).collect();
                    self.send(&mut grads, *x, gx);
                }
                Op::Sum { x } => {
                    let gx = vec![gout[0]; self.value(*x).len()];
                    self.send(&mut grads, *x, gx);
                }
                Op::Bce { logits, target } => {
                    let l = self.value(*logits);
                    let scale = gout[0] / T::of(l.shape()[0] as f64);
                    let gl = l
                        .data()
                        .iter()
                        .zip(target.data())
                        .map(|(&z, &x)| (kernels::sigmoid(z) - x) * scale)
                        .collect();
                    self.send(&mut grads, *logits, gl);
                }
                Op::Kl { mu, logvar } => {
                    let scale = gout[0] / T::of(self.value(*mu).shape()[0] as f64);
                    let gm = self.value(*mu).data().iter().map(|&m| m * scale).collect();
                    let half = T::of(0.5);
                    let gv = self.value(*logvar).data().iter().map(|&v| half * (v.exp() - T::one()) * scale).collect();
                    self.send(&mut grads, *mu, gm);
                    self.send(&mut grads, *logvar, gv);
                }
            }
        }
        Ok(())
    }

    fn send(&self, grads: &mut [Option<Vec<T>>], to: NodeId, g: Vec<T>) {
        if !self.nodes[to.0].needs_grad {
            return;
        }
        match &mut grads[to.0] {
            Some(acc) => {
                for (a, v) in acc.iter_mut().zip(g) {
                    *a = *a + v;
                }
            }
            slot @ None => *slot = Some(g),
        }
    }
}

/// Closed-form `KL[N(mu, exp(logvar)) || N(0, I)]`, summed over all entries.
pub fn kl_divergence<T: Scalar>(mu: &[T], logvar: &[T]) -> T {
    let half = T::of(0.5);
    mu.iter()
        .zip(logvar)
        .fold(T::zero(), |acc, (&m, &v)| acc + half * (m * m + v.exp() - T::one() - v))
}

fn zip<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let d = a.data().iter().zip(b.data()).map(|(&p, &q)| f(p, q)).collect();
    Tensor::new(a.shape(), d).expect("same shape")
}

fn op_name<T>(op: &Op<T>) -> &'static str {
    match op {
        Op::Input => "input",
        Op::Param(_) => "parameter",
        Op::Fc { .. } => "fc",
        Op::Conv { .. } => "conv2d",
        Op::Act { kind: Activation::Relu, .. } => "relu",
        Op::Act { kind: Activation::Sigmoid, .. } => "sigmoid",
        Op::Act { kind: Activation::Exp, .. } => "exp",
        Op::Concat { .. } => "concat",
        Op::Reshape { .. } => "reshape",
        Op::Add { .. } => "add",
        Op::Mul { .. } => "mul",
        Op::Scale { .. } => "scale",
        Op::Sum { .. } => "sum",
        Op::Bce { .. } => "bce",
        Op::Kl { .. } => "kl",
    }
}
