//! Define-by-run autodiff tape over the kernel set.
//!
//! A forward pass appends nodes to the tape; [`Tape::backward`] walks the
//! nodes in reverse, computing input gradients from saved values. Gradient
//! propagation stops at leaves that do not require gradients (targets,
//! noise draws), so large constants cost nothing on the way back.

use super::kernels as k;
use super::params::{ParamId, ParamStore};
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(pub(crate) usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Conv3d { stride: usize, pad: usize },
    ConvTranspose3d { stride: usize, pad: usize },
    InstanceNorm { eps: f64 },
    PRelu,
    Sigmoid,
    Dense,
    Reshape,
    ConcatChannels,
    Add,
    AddScaled { factor: f64 },
    WeightedSum,
    SoftDiceLoss { smooth: f64 },
    KlNormal,
    Reparameterize,
}

struct Node<T> {
    op: Op,
    inputs: Vec<NodeId>,
    value: Tensor<T>,
    grad: Option<Tensor<T>>,
    param: Option<ParamId>,
    needs_grad: bool,
}

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    ran_backward: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            ran_backward: false,
        }
    }

    fn push(&mut self, op: Op, inputs: Vec<NodeId>, value: Tensor<T>) -> NodeId {
        let needs_grad = inputs.iter().any(|&i| self.nodes[i.0].needs_grad);
        self.nodes.push(Node {
            op,
            inputs,
            value,
            grad: None,
            param: None,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Adds a leaf tensor; `needs_grad` controls whether backward computes
    /// a gradient for it.
    pub fn leaf(&mut self, value: Tensor<T>, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            op: Op::Leaf,
            inputs: Vec::new(),
            value,
            grad: None,
            param: None,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Adds a constant leaf (no gradient).
    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.leaf(value, false)
    }

    /// Loads a parameter onto the tape; its gradient is accumulated back
    /// into the store by [`Tape::accumulate_param_grads`].
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> NodeId {
        let node = self.leaf(store.get(id).value.clone(), true);
        self.nodes[node.0].param = Some(id);
        node
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn grad(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.nodes[id.0].grad.as_ref()
    }

    /// Scalar value of a 1-element node.
    pub fn scalar(&self, id: NodeId) -> T {
        debug_assert_eq!(self.nodes[id.0].value.numel(), 1);
        self.nodes[id.0].value.data()[0]
    }

    pub fn conv3d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: NodeId,
        stride: usize,
        pad: usize,
    ) -> NodeId {
        let value = k::conv3d_forward(
            &self.nodes[x.0].value,
            &self.nodes[w.0].value,
            &self.nodes[b.0].value,
            stride,
            pad,
        );
        self.push(Op::Conv3d { stride, pad }, vec![x, w, b], value)
    }

    pub fn conv_transpose3d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: NodeId,
        stride: usize,
        pad: usize,
        out_pad: usize,
    ) -> NodeId {
        let value = k::convt3d_forward(
            &self.nodes[x.0].value,
            &self.nodes[w.0].value,
            &self.nodes[b.0].value,
            stride,
            pad,
            out_pad,
        );
        self.push(Op::ConvTranspose3d { stride, pad }, vec![x, w, b], value)
    }

    pub fn instance_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, eps: f64) -> NodeId {
        let value = k::instance_norm_forward(
            &self.nodes[x.0].value,
            &self.nodes[gamma.0].value,
            &self.nodes[beta.0].value,
            eps,
        );
        self.push(Op::InstanceNorm { eps }, vec![x, gamma, beta], value)
    }

    pub fn prelu(&mut self, x: NodeId, alpha: NodeId) -> NodeId {
        let value = k::prelu_forward(&self.nodes[x.0].value, &self.nodes[alpha.0].value);
        self.push(Op::PRelu, vec![x, alpha], value)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let value = k::sigmoid_forward(&self.nodes[x.0].value);
        self.push(Op::Sigmoid, vec![x], value)
    }

    pub fn dense(&mut self, x: NodeId, w: NodeId, b: NodeId) -> NodeId {
        let value = k::dense_forward(
            &self.nodes[x.0].value,
            &self.nodes[w.0].value,
            &self.nodes[b.0].value,
        );
        self.push(Op::Dense, vec![x, w, b], value)
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> NodeId {
        let value = self.nodes[x.0].value.reshaped(shape);
        self.push(Op::Reshape, vec![x], value)
    }

    /// Concatenates two rank-5 tensors along the channel axis.
    pub fn concat_channels(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (na, ca, d, h, w) = self.nodes[a.0].value.dims5();
        let (nb, cb, db, hb, wb) = self.nodes[b.0].value.dims5();
        assert_eq!((na, d, h, w), (nb, db, hb, wb), "concat spatial mismatch");
        let plane = d * h * w;
        let mut value = Tensor::zeros(&[na, ca + cb, d, h, w]);
        for n in 0..na {
            let dst_base = n * (ca + cb) * plane;
            let a_base = n * ca * plane;
            let b_base = n * cb * plane;
            value.data_mut()[dst_base..dst_base + ca * plane]
                .copy_from_slice(&self.nodes[a.0].value.data()[a_base..a_base + ca * plane]);
            value.data_mut()[dst_base + ca * plane..dst_base + (ca + cb) * plane]
                .copy_from_slice(&self.nodes[b.0].value.data()[b_base..b_base + cb * plane]);
        }
        self.push(Op::ConcatChannels, vec![a, b], value)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let mut value = self.nodes[a.0].value.clone();
        value.add_assign(&self.nodes[b.0].value);
        self.push(Op::Add, vec![a, b], value)
    }

    /// `a + factor * b` (used to combine loss terms).
    pub fn add_scaled(&mut self, a: NodeId, b: NodeId, factor: f64) -> NodeId {
        let f = T::from_f64(factor);
        let mut value = self.nodes[a.0].value.clone();
        assert_eq!(value.shape(), self.nodes[b.0].value.shape());
        for (av, &bv) in value.data_mut().iter_mut().zip(self.nodes[b.0].value.data()) {
            *av = *av + f * bv;
        }
        self.push(Op::AddScaled { factor }, vec![a, b], value)
    }

    /// Scalar `Σ x_i * c_i` against a constant weight tensor (test reducer).
    pub fn weighted_sum(&mut self, x: NodeId, weights: NodeId) -> NodeId {
        let xs = self.nodes[x.0].value.data();
        let ws = self.nodes[weights.0].value.data();
        assert_eq!(xs.len(), ws.len());
        let mut acc = T::zero();
        for (&a, &b) in xs.iter().zip(ws) {
            acc = acc + a * b;
        }
        self.push(Op::WeightedSum, vec![x, weights], Tensor::scalar(acc))
    }

    pub fn soft_dice_loss(&mut self, logits: NodeId, target: NodeId, smooth: f64) -> NodeId {
        let value = k::soft_dice_forward(
            &self.nodes[logits.0].value,
            &self.nodes[target.0].value,
            smooth,
        );
        self.push(
            Op::SoftDiceLoss { smooth },
            vec![logits, target],
            Tensor::scalar(value),
        )
    }

    pub fn kl_normal(&mut self, mean: NodeId, logvar: NodeId) -> NodeId {
        let value = k::kl_normal_forward(&self.nodes[mean.0].value, &self.nodes[logvar.0].value);
        self.push(Op::KlNormal, vec![mean, logvar], Tensor::scalar(value))
    }

    pub fn reparameterize(&mut self, mean: NodeId, logvar: NodeId, eps: NodeId) -> NodeId {
        let value = k::reparameterize_forward(
            &self.nodes[mean.0].value,
            &self.nodes[logvar.0].value,
            &self.nodes[eps.0].value,
        );
        self.push(Op::Reparameterize, vec![mean, logvar, eps], value)
    }

    fn accumulate(&mut self, id: NodeId, grad: Tensor<T>) {
        if !self.nodes[id.0].needs_grad {
            return;
        }
        match &mut self.nodes[id.0].grad {
            Some(g) => g.add_assign(&grad),
            slot @ None => *slot = Some(grad),
        }
    }

    /// Reverse-mode sweep from a scalar loss node.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::ShapeMismatch(
                "backward needs a scalar loss node".into(),
            ));
        }
        self.ran_backward = true;
        self.nodes[loss.0].grad = Some(Tensor::scalar(T::one()));

        for i in (0..self.nodes.len()).rev() {
            let Some(dy) = self.nodes[i].grad.clone() else {
                continue;
            };
            if !self.nodes[i].needs_grad {
                continue;
            }
            let inputs = self.nodes[i].inputs.clone();
            let op = self.nodes[i].op.clone();
            match op {
                Op::Leaf => {}
                Op::Conv3d { stride, pad } => {
                    let (x, w, b) = (inputs[0], inputs[1], inputs[2]);
                    if self.nodes[x.0].needs_grad {
                        let dx = k::conv3d_backward_input(
                            &dy,
                            &self.nodes[w.0].value,
                            &self.nodes[x.0].value.shape().to_vec(),
                            stride,
                            pad,
                        );
                        self.accumulate(x, dx);
                    }
                    if self.nodes[w.0].needs_grad {
                        let dw = k::conv3d_backward_weights(
                            &dy,
                            &self.nodes[x.0].value,
                            &self.nodes[w.0].value.shape().to_vec(),
                            stride,
                            pad,
                        );
                        self.accumulate(w, dw);
                    }
                    if self.nodes[b.0].needs_grad {
                        let db = k::conv3d_backward_bias(&dy);
                        self.accumulate(b, db);
                    }
                }
                Op::ConvTranspose3d { stride, pad } => {
                    let (x, w, b) = (inputs[0], inputs[1], inputs[2]);
                    if self.nodes[x.0].needs_grad {
                        let dx = k::convt3d_backward_input(
                            &dy,
                            &self.nodes[w.0].value,
                            &self.nodes[x.0].value.shape().to_vec(),
                            stride,
                            pad,
                        );
                        self.accumulate(x, dx);
                    }
                    if self.nodes[w.0].needs_grad {
                        let dw = k::convt3d_backward_weights(
                            &dy,
                            &self.nodes[x.0].value,
                            &self.nodes[w.0].value.shape().to_vec(),
                            stride,
                            pad,
                        );
                        self.accumulate(w, dw);
                    }
                    if self.nodes[b.0].needs_grad {
                        let db = k::conv3d_backward_bias(&dy);
                        self.accumulate(b, db);
                    }
                }
                Op::InstanceNorm { eps } => {
                    let (x, gamma, beta) = (inputs[0], inputs[1], inputs[2]);
                    let (dx, dgamma, dbeta) = k::instance_norm_backward(
                        &dy,
                        &self.nodes[x.0].value,
                        &self.nodes[gamma.0].value,
                        eps,
                    );
                    self.accumulate(x, dx);
                    self.accumulate(gamma, dgamma);
                    self.accumulate(beta, dbeta);
                }
                Op::PRelu => {
                    let (x, alpha) = (inputs[0], inputs[1]);
                    let (dx, dalpha) = k::prelu_backward(
                        &dy,
                        &self.nodes[x.0].value,
                        &self.nodes[alpha.0].value,
                    );
                    self.accumulate(x, dx);
                    self.accumulate(alpha, dalpha);
                }
                Op::Sigmoid => {
                    let y = &self.nodes[i].value;
                    let dx = k::sigmoid_backward(&dy, y);
                    self.accumulate(inputs[0], dx);
                }
                Op::Dense => {
                    let (x, w, b) = (inputs[0], inputs[1], inputs[2]);
                    let (dx, dw, db) =
                        k::dense_backward(&dy, &self.nodes[x.0].value, &self.nodes[w.0].value);
                    self.accumulate(x, dx);
                    self.accumulate(w, dw);
                    self.accumulate(b, db);
                }
                Op::Reshape => {
                    let x = inputs[0];
                    let dx = dy.reshaped(&self.nodes[x.0].value.shape().to_vec());
                    self.accumulate(x, dx);
                }
                Op::ConcatChannels => {
                    let (a, b) = (inputs[0], inputs[1]);
                    let (na, ca, d, h, w) = self.nodes[a.0].value.dims5();
                    let (_, cb, ..) = self.nodes[b.0].value.dims5();
                    let plane = d * h * w;
                    let mut da = Tensor::zeros(self.nodes[a.0].value.shape());
                    let mut db = Tensor::zeros(self.nodes[b.0].value.shape());
                    for n in 0..na {
                        let src = n * (ca + cb) * plane;
                        da.data_mut()[n * ca * plane..(n + 1) * ca * plane]
                            .copy_from_slice(&dy.data()[src..src + ca * plane]);
                        db.data_mut()[n * cb * plane..(n + 1) * cb * plane].copy_from_slice(
                            &dy.data()[src + ca * plane..src + (ca + cb) * plane],
                        );
                    }
                    self.accumulate(a, da);
                    self.accumulate(b, db);
                }
                Op::Add => {
                    self.accumulate(inputs[0], dy.clone());
                    self.accumulate(inputs[1], dy);
                }
                Op::AddScaled { factor } => {
                    self.accumulate(inputs[0], dy.clone());
                    let f = T::from_f64(factor);
                    let mut db = dy;
                    for v in db.data_mut() {
                        *v = *v * f;
                    }
                    self.accumulate(inputs[1], db);
                }
                Op::WeightedSum => {
                    let (x, weights) = (inputs[0], inputs[1]);
                    let g = dy.data()[0];
                    let mut dx = self.nodes[weights.0].value.clone();
                    for v in dx.data_mut() {
                        *v = *v * g;
                    }
                    self.accumulate(x, dx);
                }
                Op::SoftDiceLoss { smooth } => {
                    let (logits, target) = (inputs[0], inputs[1]);
                    let dl = k::soft_dice_backward(
                        dy.data()[0],
                        &self.nodes[logits.0].value,
                        &self.nodes[target.0].value,
                        smooth,
                    );
                    self.accumulate(logits, dl);
                }
                Op::KlNormal => {
                    let (mean, logvar) = (inputs[0], inputs[1]);
                    let (dm, dlv) = k::kl_normal_backward(
                        dy.data()[0],
                        &self.nodes[mean.0].value,
                        &self.nodes[logvar.0].value,
                    );
                    self.accumulate(mean, dm);
                    self.accumulate(logvar, dlv);
                }
                Op::Reparameterize => {
                    let (mean, logvar, eps) = (inputs[0], inputs[1], inputs[2]);
                    let (dm, dlv) = k::reparameterize_backward(
                        &dy,
                        &self.nodes[logvar.0].value,
                        &self.nodes[eps.0].value,
                    );
                    self.accumulate(mean, dm);
                    self.accumulate(logvar, dlv);
                }
            }
        }
        Ok(())
    }

    /// Smallest |input| feeding any rectifier on the tape, if one exists.
    /// Finite-difference checks use this to confirm no kink sits within
    /// the perturbation radius.
    pub fn min_abs_prelu_input(&self) -> Option<f64> {
        let mut min: Option<f64> = None;
        for node in &self.nodes {
            if matches!(node.op, Op::PRelu) {
                let x = &self.nodes[node.inputs[0].0];
                for &v in x.value.data() {
                    let a = Scalar::as_f64(v).abs();
                    min = Some(min.map_or(a, |m: f64| m.min(a)));
                }
            }
        }
        min
    }

    /// Adds every parameter-bound leaf gradient into the store.
    pub fn accumulate_param_grads(&self, store: &mut ParamStore<T>) -> Result<()> {
        if !self.ran_backward {
            return Err(Error::InvalidArgument(
                "backward must run before gradients are collected".into(),
            ));
        }
        for node in &self.nodes {
            if let (Some(pid), Some(grad)) = (node.param, node.grad.as_ref()) {
                store.get_mut(pid).grad.add_assign(grad);
            }
        }
        Ok(())
    }
}
