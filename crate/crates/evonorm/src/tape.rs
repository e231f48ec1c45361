//! Tape-based reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A forward pass records every operation on the tape; [`Tape::backward`]
//! replays it once in reverse topological order (the recording order is
//! already topological) and accumulates exact gradients per recorded value.
//! Each candidate evaluation owns its own tape; tapes are single-threaded.

use crate::error::{Error, Result};
use crate::nn::{self, Padding};
use crate::ops::{self, MomentCache, OpKind};
use crate::tensor::{Shape, Tensor};

pub type ValueId = usize;

enum Record {
    Leaf,
    Unary {
        kind: OpKind,
        x: ValueId,
    },
    Binary {
        kind: OpKind,
        a: ValueId,
        b: ValueId,
    },
    Moment {
        kind: OpKind,
        x: ValueId,
        cache: MomentCache,
    },
    Conv2d {
        x: ValueId,
        w: ValueId,
        stride: usize,
        padding: Padding,
        groups: usize,
    },
    GlobalAvgPool {
        x: ValueId,
    },
    SoftmaxXent {
        logits: ValueId,
        labels: Vec<usize>,
        probs: Tensor,
    },
    SumAll {
        x: ValueId,
    },
}

struct Node {
    value: Tensor,
    op: Record,
    needs_grad: bool,
}

/// Records a forward computation and produces reverse-mode gradients.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    fn push(&mut self, value: Tensor, op: Record, needs_grad: bool) -> ValueId {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        self.nodes.len() - 1
    }

    /// A differentiable input (parameter or probe point).
    pub fn leaf(&mut self, value: Tensor) -> ValueId {
        self.push(value, Record::Leaf, true)
    }

    /// A value gradients never flow into.
    pub fn constant(&mut self, value: Tensor) -> ValueId {
        self.push(value, Record::Leaf, false)
    }

    pub fn value(&self, id: ValueId) -> &Tensor {
        &self.nodes[id].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn needs(&self, id: ValueId) -> bool {
        self.nodes[id].needs_grad
    }

    pub fn unary(&mut self, kind: OpKind, x: ValueId) -> ValueId {
        let value = ops::eval_unary(kind, &self.nodes[x].value);
        let needs = self.needs(x);
        self.push(value, Record::Unary { kind, x }, needs)
    }

    pub fn binary(&mut self, kind: OpKind, a: ValueId, b: ValueId) -> Result<ValueId> {
        let value = ops::eval_binary(kind, &self.nodes[a].value, &self.nodes[b].value)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Record::Binary { kind, a, b }, needs))
    }

    pub fn moment(&mut self, kind: OpKind, x: ValueId) -> Result<ValueId> {
        let (value, cache) = ops::moment_forward(kind, &self.nodes[x].value)?;
        let needs = self.needs(x);
        Ok(self.push(value, Record::Moment { kind, x, cache }, needs))
    }

    /// Apply any search-space op by arity.
    pub fn apply(&mut self, kind: OpKind, inputs: &[ValueId]) -> Result<ValueId> {
        if inputs.len() != kind.arity() {
            return Err(Error::Arity {
                op: "apply",
                expected: kind.arity(),
                got: inputs.len(),
            });
        }
        match kind.arity() {
            2 => self.binary(kind, inputs[0], inputs[1]),
            _ if kind.is_moment() => self.moment(kind, inputs[0]),
            _ => Ok(self.unary(kind, inputs[0])),
        }
    }

    pub fn conv2d(
        &mut self,
        x: ValueId,
        w: ValueId,
        stride: usize,
        padding: Padding,
        groups: usize,
    ) -> Result<ValueId> {
        let value = nn::conv2d_forward(
            &self.nodes[x].value,
            &self.nodes[w].value,
            stride,
            padding,
            groups,
        )?;
        let needs = self.needs(x) || self.needs(w);
        Ok(self.push(
            value,
            Record::Conv2d {
                x,
                w,
                stride,
                padding,
                groups,
            },
            needs,
        ))
    }

    pub fn global_avg_pool(&mut self, x: ValueId) -> ValueId {
        let value = nn::global_avg_pool_forward(&self.nodes[x].value);
        let needs = self.needs(x);
        self.push(value, Record::GlobalAvgPool { x }, needs)
    }

    /// Affine over channels: 1x1 convolution plus broadcast bias.
    pub fn dense(&mut self, x: ValueId, w: ValueId, bias: ValueId) -> Result<ValueId> {
        let y = self.conv2d(x, w, 1, Padding::Valid, 1)?;
        self.binary(OpKind::Add, y, bias)
    }

    /// Scalar sum of every element; the usual reduction to a test loss.
    pub fn sum_all(&mut self, x: ValueId) -> ValueId {
        let total: f64 = self.nodes[x].value.data().iter().sum();
        let needs = self.needs(x);
        self.push(Tensor::scalar(total), Record::SumAll { x }, needs)
    }

    pub fn softmax_cross_entropy(&mut self, logits: ValueId, labels: &[usize]) -> Result<ValueId> {
        let (value, probs) = nn::softmax_xent_forward(&self.nodes[logits].value, labels)?;
        let needs = self.needs(logits);
        Ok(self.push(
            value,
            Record::SoftmaxXent {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            needs,
        ))
    }

    /// Reverse pass from a scalar loss; returns per-value gradients.
    pub fn backward(&self, loss: ValueId) -> Result<Gradients> {
        if self.nodes[loss].value.len() != 1 {
            return Err(Error::Config(
                "backward requires a scalar loss value".into(),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss] = Some(Tensor::scalar(1.0));
        for id in (0..=loss).rev() {
            let Some(g) = grads[id].take() else {
                continue;
            };
            let node = &self.nodes[id];
            if !node.needs_grad {
                grads[id] = Some(g);
                continue;
            }
            match &node.op {
                Record::Leaf => {}
                Record::Unary { kind, x } => {
                    if self.needs(*x) {
                        let gx =
                            ops::unary_backward(*kind, &self.nodes[*x].value, &node.value, &g);
                        accumulate(&mut grads[*x], gx)?;
                    }
                }
                Record::Binary { kind, a, b } => {
                    let (ga, gb) =
                        ops::binary_backward(*kind, &self.nodes[*a].value, &self.nodes[*b].value, &g)?;
                    if self.needs(*a) {
                        accumulate(&mut grads[*a], ga)?;
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads[*b], gb)?;
                    }
                }
                Record::Moment { kind, x, cache } => {
                    if self.needs(*x) {
                        let gx = ops::moment_backward(*kind, &self.nodes[*x].value, &g, cache)?;
                        accumulate(&mut grads[*x], gx)?;
                    }
                }
                Record::Conv2d {
                    x,
                    w,
                    stride,
                    padding,
                    groups,
                } => {
                    let (gx, gw) = nn::conv2d_backward(
                        &self.nodes[*x].value,
                        &self.nodes[*w].value,
                        &g,
                        *stride,
                        *padding,
                        *groups,
                    )?;
                    if self.needs(*x) {
                        accumulate(&mut grads[*x], gx)?;
                    }
                    if self.needs(*w) {
                        accumulate(&mut grads[*w], gw)?;
                    }
                }
                Record::GlobalAvgPool { x } => {
                    if self.needs(*x) {
                        let gx = nn::global_avg_pool_backward(self.nodes[*x].value.shape(), &g);
                        accumulate(&mut grads[*x], gx)?;
                    }
                }
                Record::SoftmaxXent {
                    logits,
                    labels,
                    probs,
                } => {
                    if self.needs(*logits) {
                        let gl = nn::softmax_xent_backward(probs, labels, g.scalar_value());
                        accumulate(&mut grads[*logits], gl)?;
                    }
                }
                Record::SumAll { x } => {
                    if self.needs(*x) {
                        let gx = Tensor::full(self.nodes[*x].value.shape(), g.scalar_value());
                        accumulate(&mut grads[*x], gx)?;
                    }
                }
            }
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) -> Result<()> {
    match slot {
        Some(t) => t.add_assign(&g),
        None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

/// Gradient per recorded value; absent for values the loss never touched.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: ValueId) -> Option<&Tensor> {
        self.grads.get(id).and_then(|g| g.as_ref())
    }

    /// Gradient of a leaf, zero-filled when the loss does not depend on it.
    pub fn of(&self, id: ValueId, shape: Shape) -> Tensor {
        self.get(id).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }

    pub fn take(&mut self, id: ValueId) -> Option<Tensor> {
        self.grads.get_mut(id).and_then(|g| g.take())
    }
}

/// Global L2 norm over a parameter list.
pub fn global_l2_norm(tensors: &[Tensor]) -> f64 {
    tensors.iter().map(Tensor::sq_l2).sum::<f64>().sqrt()
}

/// Largest absolute entry over a parameter list.
pub fn global_inf_norm(tensors: &[Tensor]) -> f64 {
    tensors.iter().fold(0.0f64, |m, t| m.max(t.max_abs()))
}

/// Finite-difference Hessian-vector product:
/// (∇ℓ(θ + h·v̂) − ∇ℓ(θ)) / h · ‖v‖ with v̂ = v/‖v‖ ≈ H·v.
///
/// `grad_at` evaluates the exact first-order gradient; two calls happen per
/// invocation. The default step is √(machine ε)·(1 + ‖θ‖∞).
pub fn finite_diff_hvp<F>(
    mut grad_at: F,
    theta: &[Tensor],
    v: &[Tensor],
    fd_eps: Option<f64>,
) -> Result<Vec<Tensor>>
where
    F: FnMut(&[Tensor]) -> Result<Vec<Tensor>>,
{
    let vnorm = global_l2_norm(v);
    if vnorm == 0.0 || !vnorm.is_finite() {
        return Err(Error::ZeroVector);
    }
    let h = fd_eps.unwrap_or_else(|| f64::EPSILON.sqrt() * (1.0 + global_inf_norm(theta)));
    let shifted: Vec<Tensor> = theta
        .iter()
        .zip(v)
        .map(|(t, d)| {
            let mut s = t.clone();
            let sd = s.data_mut();
            for (a, b) in sd.iter_mut().zip(d.data()) {
                *a += h * b / vnorm;
            }
            s
        })
        .collect();
    let g_shifted = grad_at(&shifted)?;
    let g_base = grad_at(theta)?;
    Ok(g_shifted
        .iter()
        .zip(&g_base)
        .map(|(a, b)| {
            let mut out = a.clone();
            let od = out.data_mut();
            for (o, bv) in od.iter_mut().zip(b.data()) {
                *o = (*o - bv) / h * vnorm;
            }
            out
        })
        .collect())
}
