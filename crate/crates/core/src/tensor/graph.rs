use super::conv::{self, ConvSpec};
use super::ops;
use super::{Shape, Tensor};
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

/// Per-channel batch statistics observed by a train-mode batch norm.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Unbiased variance, the estimator fed into running statistics.
    pub var: Vec<f64>,
}

pub(crate) enum Op {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        spec: ConvSpec,
    },
    ConvTranspose2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        spec: ConvSpec,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
    /// Output element `j` is input element `index[j]` (max reductions).
    Gather {
        x: Var,
        index: Vec<usize>,
    },
    AvgPool {
        x: Var,
        window: usize,
        stride: usize,
    },
    GlobalAvg {
        x: Var,
    },
    ChannelAvg {
        x: Var,
    },
    Dense {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Relu {
        x: Var,
    },
    Sigmoid {
        x: Var,
    },
    SoftmaxChannel {
        x: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    /// `a * b` with `b` broadcast along every axis where it has extent 1.
    Mul {
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        k: f64,
    },
    ConcatChannels {
        parts: Vec<Var>,
    },
    Sum {
        x: Var,
    },
    /// A scalar of one input whose derivative was computed in the forward pass.
    Fused {
        x: Var,
        dx: Vec<f64>,
    },
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Conv2d { x, w, b, .. }
            | Op::ConvTranspose2d { x, w, b, .. }
            | Op::Dense { x, w, b } => {
                let mut v = vec![*x, *w];
                v.extend(b);
                v
            }
            Op::BatchNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::Gather { x, .. }
            | Op::AvgPool { x, .. }
            | Op::GlobalAvg { x }
            | Op::ChannelAvg { x }
            | Op::Relu { x }
            | Op::Sigmoid { x }
            | Op::SoftmaxChannel { x }
            | Op::Scale { x, .. }
            | Op::Sum { x } => vec![*x],
            Op::Add { a, b } | Op::Mul { a, b } => vec![*a, *b],
            Op::ConcatChannels { parts } => parts.clone(),
            Op::Fused { x, .. } => vec![*x],
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// A dynamic computation trace.
///
/// Every operation appends a node; [`Graph::backward`] walks the nodes in
/// reverse creation order, which is a valid topological order because a node
/// can only reference nodes created before it. Gradients land in the grad
/// slots of the node tensors and accumulate across repeated calls.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    corrupt_conv_backward: bool,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Makes every conv2d weight gradient wrong by 1%. Exists so the
    /// gradient audit can be shown to fail loudly.
    #[doc(hidden)]
    pub fn inject_conv_backward_fault(&mut self) {
        self.corrupt_conv_backward = true;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push_node(value, Op::Leaf, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_node(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    /// The scalar held by a one-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.value.zero_grad();
        }
    }

    fn push_node(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn push(&mut self, value: Tensor, op: Op) -> Var {
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.push_node(value, op, requires_grad)
    }

    /// Reverse-mode accumulation from a scalar node into every reachable
    /// node that requires a gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let loss_shape = self.shape(loss);
        if loss_shape.numel() != 1 {
            return Err(Error::NotScalar(loss_shape.to_string()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            let Some(dy) = grads[id].take() else {
                continue;
            };
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            for (input, delta) in self.input_grads(id, &dy) {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(g) => g.iter_mut().zip(&delta).for_each(|(g, d)| *g += d),
                    slot @ None => *slot = Some(delta),
                }
            }
            self.nodes[id].value.accumulate_grad(&dy);
        }
        Ok(())
    }

    fn input_grads(&self, id: usize, dy: &[f64]) -> Vec<(Var, Vec<f64>)> {
        let node = &self.nodes[id];
        let out = &node.value;
        let val = |v: &Var| &self.nodes[v.0].value;
        let wants = |v: &Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => vec![],
            Op::Conv2d { x, w, b, spec } => {
                let (dx, mut dw, db) =
                    conv::conv2d_backward(val(x), val(w), spec, dy, wants(x), b.is_some());
                if self.corrupt_conv_backward {
                    dw.iter_mut().for_each(|g| *g *= 1.01);
                }
                let mut g = vec![(*x, dx), (*w, dw)];
                g.extend(b.map(|b| (b, db)));
                g
            }
            Op::ConvTranspose2d { x, w, b, spec } => {
                let (dx, dw, db) = conv::conv_transpose2d_backward(
                    val(x),
                    val(w),
                    spec,
                    dy,
                    wants(x),
                    b.is_some(),
                );
                let mut g = vec![(*x, dx), (*w, dw)];
                g.extend(b.map(|b| (b, db)));
                g
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let (dx, dgamma, dbeta) = ops::batch_norm_backward(
                    val(x).shape(),
                    val(gamma).data(),
                    xhat,
                    inv_std,
                    *batch_stats,
                    dy,
                );
                vec![(*x, dx), (*gamma, dgamma), (*beta, dbeta)]
            }
            Op::Gather { x, index } => {
                let mut dx = vec![0.0; val(x).numel()];
                for (&i, &d) in index.iter().zip(dy) {
                    dx[i] += d;
                }
                vec![(*x, dx)]
            }
            Op::AvgPool { x, window, stride } => {
                vec![(
                    *x,
                    ops::avg_pool_backward(val(x).shape(), out.shape(), *window, *stride, dy),
                )]
            }
            Op::GlobalAvg { x } => {
                let s = val(x).shape();
                let plane = s.plane();
                let scale = 1.0 / plane as f64;
                let dx = (0..s.numel()).map(|i| dy[i / plane] * scale).collect();
                vec![(*x, dx)]
            }
            Op::ChannelAvg { x } => {
                let s = val(x).shape();
                let plane = s.plane();
                let scale = 1.0 / s.c as f64;
                let dx = (0..s.numel())
                    .map(|i| {
                        let (n, p) = (i / (s.c * plane), i % plane);
                        dy[n * plane + p] * scale
                    })
                    .collect();
                vec![(*x, dx)]
            }
            Op::Dense { x, w, b } => {
                let (dx, dw, db) = ops::dense_backward(val(x), val(w), dy);
                let mut g = vec![(*x, dx), (*w, dw)];
                g.extend(b.map(|b| (b, db)));
                g
            }
            Op::Relu { x } => {
                let dx = val(x)
                    .data()
                    .iter()
                    .zip(dy)
                    .map(|(&v, &d)| if v > 0.0 { d } else { 0.0 })
                    .collect();
                vec![(*x, dx)]
            }
            Op::Sigmoid { x } => {
                let dx = out
                    .data()
                    .iter()
                    .zip(dy)
                    .map(|(&s, &d)| d * s * (1.0 - s))
                    .collect();
                vec![(*x, dx)]
            }
            Op::SoftmaxChannel { x } => {
                vec![(*x, ops::softmax_channel_backward(out, dy))]
            }
            Op::Add { a, b } => vec![(*a, dy.to_vec()), (*b, dy.to_vec())],
            Op::Mul { a, b } => {
                let (da, db) = ops::mul_backward(val(a), val(b), dy);
                vec![(*a, da), (*b, db)]
            }
            Op::Scale { x, k } => vec![(*x, dy.iter().map(|d| d * k).collect())],
            Op::ConcatChannels { parts } => ops::concat_backward(
                &parts.iter().map(|p| (*p, val(p).shape())).collect::<Vec<_>>(),
                out.shape(),
                dy,
            ),
            Op::Sum { x } => vec![(*x, vec![dy[0]; val(x).numel()])],
            Op::Fused { x, dx } => vec![(*x, dx.iter().map(|g| g * dy[0]).collect())],
        }
    }
}
