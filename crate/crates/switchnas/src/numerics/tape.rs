//! Reverse-mode gradient tape.
//!
//! Ops push one node per primitive in execution order; each node is a
//! closure that pulls the output gradient and accumulates local gradients
//! into the inputs. [`backward`] walks the nodes in exact reverse recording
//! order, which is a valid topological order because an op can only consume
//! tensors that already exist.

use std::cell::{Cell, RefCell};

use crate::error::{NumericsError, Result};
use crate::numerics::tensor::Tensor;

struct Node {
    backward: Box<dyn Fn()>,
}

pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    enabled: Cell<bool>,
}

impl Tape {
    /// A recording tape for training.
    pub fn new() -> Tape {
        Tape { nodes: RefCell::new(Vec::new()), enabled: Cell::new(true) }
    }

    /// A disabled tape: ops run forward-only and record nothing.
    pub fn inference() -> Tape {
        Tape { nodes: RefCell::new(Vec::new()), enabled: Cell::new(false) }
    }

    pub fn is_recording(&self) -> bool {
        self.enabled.get()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    /// Drop all recorded nodes (and the tensors their closures keep alive).
    pub fn clear(&self) {
        self.nodes.borrow_mut().clear();
    }

    pub(crate) fn record(&self, backward: impl Fn() + 'static) {
        debug_assert!(self.enabled.get());
        self.nodes.borrow_mut().push(Node { backward: Box::new(backward) });
    }

    /// Should an op with these inputs be recorded?
    pub(crate) fn tracks(&self, inputs: &[&Tensor]) -> bool {
        self.enabled.get() && inputs.iter().any(|t| t.requires_grad())
    }
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

/// Populate gradients of every tensor that participated in `loss`.
///
/// `loss` must be scalar. Nodes run in reverse recording order; a node whose
/// output never received a gradient (it was not on a path to the loss)
/// contributes nothing.
pub fn backward(loss: &Tensor, tape: &Tape) -> Result<()> {
    if loss.numel() != 1 {
        return Err(NumericsError::NonScalarLoss { shape: loss.shape().to_vec() }.into());
    }
    if tape.is_empty() {
        return Err(NumericsError::EmptyTape.into());
    }
    loss.seed_grad();
    let nodes = tape.nodes.borrow();
    for node in nodes.iter().rev() {
        (node.backward)();
    }
    Ok(())
}
