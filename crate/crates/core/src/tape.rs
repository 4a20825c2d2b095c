//! The Wengert tape: an append-only list of op records.
//!
//! Ops push one node each and may only reference earlier nodes, so a single
//! reverse sweep visits every node exactly once with its gradient already
//! complete. Gradients are allocated lazily and only flow into nodes whose
//! `requires` flag is set (leaves created with `requires_grad`, plus anything
//! downstream of one).

use crate::scalar::Scalar;
use crate::tensor::TensorData;
use crate::CoreError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How `pad2d` fills the border.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PadMode {
    Zero,
    /// Mirror about the edge sample (no repeated edge). Pads wider than the
    /// source fold back again, so any amount is legal.
    Reflect,
    /// Repeat the edge sample.
    Replicate,
}

#[derive(Clone, Debug)]
pub(crate) enum Op {
    Leaf,
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    Div { a: NodeId, b: NodeId },
    Scale { x: NodeId, c: f64 },
    AddScalar { x: NodeId },
    Relu { x: NodeId },
    Sigmoid { x: NodeId },
    Gelu { x: NodeId },
    Exp { x: NodeId },
    Ln { x: NodeId },
    Clamp { x: NodeId, lo: f64, hi: f64 },
    Softmax { x: NodeId, axis: usize },
    LayerNorm { x: NodeId, gain: NodeId, shift: NodeId },
    Linear { x: NodeId, w: NodeId, b: Option<NodeId> },
    Bmm { a: NodeId, b: NodeId },
    Conv2d { x: NodeId, w: NodeId, b: Option<NodeId>, stride: usize, pad: usize, groups: usize },
    Pad2d { x: NodeId, l: usize, r: usize, t: usize, bo: usize, mode: PadMode },
    AvgPool { x: NodeId, k: usize, s: usize },
    MaxPool { x: NodeId, arg: Vec<u32> },
    GlobalAvgPool { x: NodeId },
    MeanAxis { x: NodeId, axis: usize },
    MaxAxis { x: NodeId, arg: Vec<u32> },
    SumAll { x: NodeId },
    MeanAll { x: NodeId },
    BilinearResize { x: NodeId },
    GridSample { x: NodeId, flow: NodeId },
    Concat { xs: Vec<NodeId>, axis: usize },
    Narrow { x: NodeId, axis: usize, start: usize },
    Permute { x: NodeId, axes: Vec<usize> },
    Reshape { x: NodeId },
}

pub(crate) struct Node<T> {
    pub(crate) shape: Vec<usize>,
    pub(crate) data: Vec<T>,
    pub(crate) grad: Option<Vec<T>>,
    pub(crate) requires: bool,
    pub(crate) op: Op,
}

pub struct Tape<T> {
    pub(crate) nodes: Vec<Node<T>>,
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    /// Insert a leaf. `requires_grad` marks it as a gradient target.
    pub fn leaf(&mut self, t: TensorData<T>, requires_grad: bool) -> NodeId {
        let (shape, data) = t.into_parts();
        self.push(shape, data, requires_grad, Op::Leaf)
    }

    /// Insert a leaf that never receives gradient (inputs, labels, masks).
    pub fn constant(&mut self, t: TensorData<T>) -> NodeId {
        self.leaf(t, false)
    }

    pub(crate) fn push(
        &mut self,
        shape: Vec<usize>,
        data: Vec<T>,
        requires: bool,
        op: Op,
    ) -> NodeId {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.nodes.push(Node {
            shape,
            data,
            grad: None,
            requires,
            op,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn numel(&self, id: NodeId) -> usize {
        self.nodes[id.0].data.len()
    }

    pub fn data(&self, id: NodeId) -> &[T] {
        &self.nodes[id.0].data
    }

    pub fn grad(&self, id: NodeId) -> Option<&[T]> {
        self.nodes[id.0].grad.as_deref()
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires
    }

    pub fn to_tensor(&self, id: NodeId) -> TensorData<T> {
        TensorData::new(self.nodes[id.0].shape.clone(), self.nodes[id.0].data.clone())
    }

    pub(crate) fn requires_any(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires)
    }

    /// Reverse sweep from a scalar node. Every node is visited once, in
    /// reverse execution order; gradients accumulate into `requires` nodes.
    pub fn backward(&mut self, loss: NodeId) -> Result<(), CoreError> {
        if self.nodes[loss.0].data.len() != 1 {
            return Err(CoreError::NonScalarLoss(self.nodes[loss.0].shape.clone()));
        }
        self.nodes[loss.0].grad = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires {
                continue;
            }
            let Some(g) = self.nodes[i].grad.take() else {
                continue;
            };
            let op = self.nodes[i].op.clone();
            self.dispatch_backward(i, &g, &op);
            self.nodes[i].grad = Some(g);
        }
        Ok(())
    }

    fn dispatch_backward(&mut self, out: usize, g: &[T], op: &Op) {
        use crate::ops;
        match op {
            Op::Leaf => {}
            Op::Add { a, b } => ops::elementwise::bwd_add(self, out, g, *a, *b),
            Op::Sub { a, b } => ops::elementwise::bwd_sub(self, out, g, *a, *b),
            Op::Mul { a, b } => ops::elementwise::bwd_mul(self, out, g, *a, *b),
            Op::Div { a, b } => ops::elementwise::bwd_div(self, out, g, *a, *b),
            Op::Scale { x, c } => ops::elementwise::bwd_scale(self, g, *x, *c),
            Op::AddScalar { x } => ops::elementwise::bwd_add_scalar(self, g, *x),
            Op::Relu { x } => ops::elementwise::bwd_relu(self, g, *x),
            Op::Sigmoid { x } => ops::elementwise::bwd_sigmoid(self, out, g, *x),
            Op::Gelu { x } => ops::elementwise::bwd_gelu(self, g, *x),
            Op::Exp { x } => ops::elementwise::bwd_exp(self, out, g, *x),
            Op::Ln { x } => ops::elementwise::bwd_ln(self, g, *x),
            Op::Clamp { x, lo, hi } => ops::elementwise::bwd_clamp(self, g, *x, *lo, *hi),
            Op::Softmax { x, axis } => ops::reduce::bwd_softmax(self, out, g, *x, *axis),
            Op::LayerNorm { x, gain, shift } => {
                ops::linear::bwd_layer_norm(self, g, *x, *gain, *shift)
            }
            Op::Linear { x, w, b } => ops::linear::bwd_linear(self, g, *x, *w, *b),
            Op::Bmm { a, b } => ops::linear::bwd_bmm(self, g, *a, *b),
            Op::Conv2d { x, w, b, stride, pad, groups } => {
                ops::conv::bwd_conv2d(self, g, *x, *w, *b, *stride, *pad, *groups)
            }
            Op::Pad2d { x, l, r, t, bo, mode } => {
                ops::movement::bwd_pad2d(self, g, *x, *l, *r, *t, *bo, *mode)
            }
            Op::AvgPool { x, k, s } => ops::pool::bwd_avg_pool(self, out, g, *x, *k, *s),
            Op::MaxPool { x, arg } => ops::pool::bwd_max_pool(self, g, *x, arg),
            Op::GlobalAvgPool { x } => ops::pool::bwd_global_avg_pool(self, g, *x),
            Op::MeanAxis { x, axis } => ops::reduce::bwd_mean_axis(self, g, *x, *axis),
            Op::MaxAxis { x, arg } => ops::reduce::bwd_max_axis(self, g, *x, arg),
            Op::SumAll { x } => ops::reduce::bwd_sum_all(self, g, *x),
            Op::MeanAll { x } => ops::reduce::bwd_mean_all(self, g, *x),
            Op::BilinearResize { x } => ops::sample::bwd_bilinear_resize(self, out, g, *x),
            Op::GridSample { x, flow } => ops::sample::bwd_grid_sample(self, g, *x, *flow),
            Op::Concat { xs, axis } => ops::movement::bwd_concat(self, out, g, xs, *axis),
            Op::Narrow { x, axis, start } => {
                ops::movement::bwd_narrow(self, out, g, *x, *axis, *start)
            }
            Op::Permute { x, axes } => ops::movement::bwd_permute(self, g, *x, axes),
            Op::Reshape { x } => ops::movement::bwd_reshape(self, g, *x),
        }
    }

    /// Accumulate a gradient contribution into a node, allocating on first
    /// touch. No-op for nodes outside the differentiated subgraph.
    pub(crate) fn accumulate(&mut self, id: NodeId, contrib: &[T]) {
        let node = &mut self.nodes[id.0];
        if !node.requires {
            return;
        }
        debug_assert_eq!(node.data.len(), contrib.len());
        match &mut node.grad {
            Some(g) => {
                for (gi, ci) in g.iter_mut().zip(contrib) {
                    *gi += *ci;
                }
            }
            None => node.grad = Some(contrib.to_vec()),
        }
    }

    /// Like `accumulate` but takes ownership, avoiding the copy on first touch.
    pub(crate) fn accumulate_owned(&mut self, id: NodeId, contrib: Vec<T>) {
        let node = &mut self.nodes[id.0];
        if !node.requires {
            return;
        }
        debug_assert_eq!(node.data.len(), contrib.len());
        match &mut node.grad {
            Some(g) => {
                for (gi, ci) in g.iter_mut().zip(&contrib) {
                    *gi += *ci;
                }
            }
            None => node.grad = Some(contrib),
        }
    }
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}
