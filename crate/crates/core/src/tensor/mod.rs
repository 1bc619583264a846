//! Tape-based reverse-mode autodiff over dense f64 arrays.
//!
//! A [`Tape`] owns every tensor created during one forward pass. Operations
//! append nodes and return [`TensorId`] handles; [`Tape::backward`] walks the
//! nodes in reverse, accumulating gradients across fan-out. Tensors are
//! immutable once created; gradients live in a side table so backward only
//! ever reads node data.
//!
//! The engine is f64 throughout. Verification (finite differences, oracle
//! comparisons) relies on that; parameter storage quantizes to the f32 grid
//! at the optimizer boundary instead (see [`crate::params`]).

mod conv;
mod elementwise;
pub mod gradcheck;
mod linear;
mod norm;
mod shape_ops;

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use crate::attention::AttnCounters;
use crate::error::ShapeError;

pub use gradcheck::{grad_check, grad_check_sampled, GradCheckParam};

/// Handle to a tensor on its tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(pub(crate) usize);

pub(crate) struct Node {
    shape: Vec<usize>,
    data: Vec<f64>,
    /// True for trainable leaves and anything downstream of one.
    needs_grad: bool,
    op: Option<Box<dyn BackwardOp>>,
}

/// Read-only access to node data/shapes during backward.
pub struct TapeView<'a> {
    nodes: &'a [Node],
}

impl<'a> TapeView<'a> {
    pub fn data(&self, id: TensorId) -> &'a [f64] {
        &self.nodes[id.0].data
    }
    pub fn shape(&self, id: TensorId) -> &'a [usize] {
        &self.nodes[id.0].shape
    }
}

/// Gradient side table. `slot` returns `None` for tensors outside the
/// differentiable subgraph so backward passes can skip dead work.
pub struct Grads<'a> {
    nodes: &'a [Node],
    slots: &'a mut [Option<Vec<f64>>],
}

impl Grads<'_> {
    pub fn slot(&mut self, id: TensorId) -> Option<&mut [f64]> {
        let node = &self.nodes[id.0];
        if !node.needs_grad {
            return None;
        }
        let len = node.data.len();
        Some(self.slots[id.0].get_or_insert_with(|| vec![0.0; len]))
    }
}

/// One operation's reverse rule. Implementations read saved context and
/// their inputs through the view, then accumulate into the input slots.
pub(crate) trait BackwardOp {
    fn backward(&self, view: &TapeView<'_>, out: TensorId, grad_out: &[f64], grads: &mut Grads<'_>);
}

/// Computation tape: append-only node store plus gradient side table.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    /// Instrumentation accumulated by attention ops run on this tape.
    pub attn_counters: AttnCounters,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Non-trainable input tensor. Panics if `shape` and `data` disagree;
    /// sizes are always computed by the caller from the same dims.
    pub fn leaf(&mut self, shape: &[usize], data: Vec<f64>) -> TensorId {
        self.push_leaf(shape, data, false)
    }

    /// Trainable leaf: gradients will be accumulated for it.
    pub fn param(&mut self, shape: &[usize], data: Vec<f64>) -> TensorId {
        self.push_leaf(shape, data, true)
    }

    fn push_leaf(&mut self, shape: &[usize], data: Vec<f64>, needs_grad: bool) -> TensorId {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "leaf data length must equal product of shape"
        );
        self.push_node(shape.to_vec(), data, needs_grad, None)
    }

    pub(crate) fn push_op(
        &mut self,
        shape: Vec<usize>,
        data: Vec<f64>,
        inputs: &[TensorId],
        op: Box<dyn BackwardOp>,
    ) -> TensorId {
        let needs = inputs.iter().any(|i| self.nodes[i.0].needs_grad);
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.push_node(shape, data, needs, Some(op))
    }

    fn push_node(
        &mut self,
        shape: Vec<usize>,
        data: Vec<f64>,
        needs_grad: bool,
        op: Option<Box<dyn BackwardOp>>,
    ) -> TensorId {
        self.nodes.push(Node {
            shape,
            data,
            needs_grad,
            op,
        });
        TensorId(self.nodes.len() - 1)
    }

    pub fn data(&self, id: TensorId) -> &[f64] {
        &self.nodes[id.0].data
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn numel(&self, id: TensorId) -> usize {
        self.nodes[id.0].data.len()
    }

    pub fn requires_grad(&self, id: TensorId) -> bool {
        self.nodes[id.0].needs_grad
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Gradient of the last `backward` call w.r.t. `id`, if it was reached.
    pub fn grad(&self, id: TensorId) -> Option<&[f64]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    /// Reverse pass from a scalar. Gradients of interior nodes are freed as
    /// soon as they have been propagated; leaf gradients stay readable.
    pub fn backward(&mut self, loss: TensorId) -> Result<(), ShapeError> {
        if self.nodes[loss.0].data.len() != 1 {
            return Err(ShapeError(alloc::format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        self.grads.clear();
        self.grads.resize(self.nodes.len(), None);
        if !self.nodes[loss.0].needs_grad {
            return Ok(()); // nothing trainable feeds the loss
        }
        self.grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            if self.nodes[i].op.is_none() {
                continue; // leaves keep their accumulated slot
            }
            let Some(gout) = self.grads[i].take() else {
                continue;
            };
            let view = TapeView { nodes: &self.nodes };
            let mut grads = Grads {
                nodes: &self.nodes,
                slots: &mut self.grads,
            };
            self.nodes[i]
                .op
                .as_ref()
                .expect("op checked above")
                .backward(&view, TensorId(i), &gout, &mut grads);
        }
        Ok(())
    }
}
