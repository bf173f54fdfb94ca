//! Reverse-mode differentiation tape.
//!
//! The tape is an arena: every tensor lives in `nodes`, identified by a
//! [`TensorId`] issued in creation order. Operations append an [`OpRecord`]
//! carrying the parent/output ids plus whatever the backward rule needs
//! (pool indices, dropout masks, constant coefficients). `backward` replays
//! the records in reverse; since an op's output id is always greater than
//! its input ids, reverse record order is a reverse topological order.
//!
//! Gradients accumulate additively when a tensor feeds multiple consumers.
//! The gradient buffer of an op's output is released as soon as that op's
//! backward rule has run; only leaf gradients (parameters, inputs) survive
//! the pass, which is all callers read.

use crate::error::{Error, Result};
use crate::ops;
use crate::scalar::Scalar;

/// Handle to a tensor on a tape.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct TensorId(pub(crate) u32);

pub(crate) struct Node<T> {
    pub shape: Vec<usize>,
    pub values: Vec<T>,
    pub requires_grad: bool,
}

/// One recorded operation. Fields are (inputs.., output, aux..).
pub(crate) enum OpRecord<T> {
    Conv1d { x: TensorId, w: TensorId, b: TensorId, y: TensorId, stride: usize, padding: usize },
    ConvTranspose1d { x: TensorId, w: TensorId, b: TensorId, y: TensorId, stride: usize, padding: usize },
    MaxPool1d { x: TensorId, y: TensorId, idx: Vec<u32> },
    MaxUnpool1d { x: TensorId, y: TensorId, idx: Vec<u32> },
    AdaptiveAvgPool1d { x: TensorId, y: TensorId },
    Linear { x: TensorId, w: TensorId, b: TensorId, y: TensorId },
    Relu { x: TensorId, y: TensorId },
    Dropout { x: TensorId, y: TensorId, mask: Vec<u8>, scale: T },
    Softmax { x: TensorId, y: TensorId, axis: usize },
    LogSoftmax { x: TensorId, y: TensorId, axis: usize },
    Concat { a: TensorId, b: TensorId, y: TensorId, axis: usize },
    OuterFlatten { a: TensorId, b: TensorId, y: TensorId },
    Reshape { x: TensorId, y: TensorId },
    MsePerSample { a: TensorId, b: TensorId, y: TensorId },
    NllPerSample { logp: TensorId, y: TensorId, labels: Vec<u32> },
    RowSum { x: TensorId, y: TensorId },
    ElemMul { a: TensorId, b: TensorId, y: TensorId },
    Add { a: TensorId, b: TensorId, y: TensorId },
    Scale { x: TensorId, y: TensorId, c: T },
    Sum { x: TensorId, y: TensorId },
    Mean { x: TensorId, y: TensorId },
    WeightedSum { x: TensorId, y: TensorId, w: Vec<T> },
    LogSigmoid { x: TensorId, y: TensorId },
    GradReverse { x: TensorId, y: TensorId, coeff: T },
}

/// Differentiation tape plus tensor arena. One tape per training step.
pub struct Tape<T> {
    pub(crate) nodes: Vec<Node<T>>,
    pub(crate) ops: Vec<OpRecord<T>>,
    grads: Vec<Option<Vec<T>>>,
    /// Scratch for im2col rebuilds during conv backward passes.
    pub(crate) scratch: Vec<T>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), ops: Vec::new(), grads: Vec::new(), scratch: Vec::new() }
    }

    /// Adds a leaf tensor. Parameters and inputs enter the tape this way.
    pub fn leaf(&mut self, shape: &[usize], values: Vec<T>, requires_grad: bool) -> Result<TensorId> {
        let len: usize = shape.iter().product();
        if shape.iter().any(|&e| e == 0) {
            return Err(Error::Shape(format!("leaf: zero extent in shape {shape:?}")));
        }
        if values.len() != len {
            return Err(Error::Shape(format!(
                "leaf: {} values for shape {shape:?} (expected {len})",
                values.len()
            )));
        }
        Ok(self.push(shape.to_vec(), values, requires_grad))
    }

    /// Adds a non-differentiable leaf.
    pub fn constant(&mut self, shape: &[usize], values: Vec<T>) -> Result<TensorId> {
        self.leaf(shape, values, false)
    }

    pub(crate) fn push(&mut self, shape: Vec<usize>, values: Vec<T>, requires_grad: bool) -> TensorId {
        debug_assert_eq!(values.len(), shape.iter().product::<usize>());
        let id = TensorId(self.nodes.len() as u32);
        self.nodes.push(Node { shape, values, requires_grad });
        id
    }

    pub(crate) fn node(&self, id: TensorId) -> &Node<T> {
        &self.nodes[id.0 as usize]
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.node(id).shape
    }

    pub fn values(&self, id: TensorId) -> &[T] {
        &self.node(id).values
    }

    pub fn len(&self, id: TensorId) -> usize {
        self.node(id).values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn requires_grad(&self, id: TensorId) -> bool {
        self.node(id).requires_grad
    }

    /// Gradient of the last backward pass. Only leaves retain gradients;
    /// interior buffers are released as the pass consumes them.
    pub fn grad(&self, id: TensorId) -> Option<&[T]> {
        self.grads.get(id.0 as usize).and_then(|g| g.as_deref())
    }

    /// True when any input of an op requires grad; such outputs are tracked.
    pub(crate) fn any_requires(&self, ids: &[TensorId]) -> bool {
        ids.iter().any(|&i| self.node(i).requires_grad)
    }

    /// Runs reverse-mode accumulation from a scalar loss.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        if self.len(loss) != 1 {
            return Err(Error::Shape(format!(
                "backward: loss must be scalar, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.grads.clear();
        self.grads.resize_with(self.nodes.len(), || None);
        self.grads[loss.0 as usize] = Some(vec![T::one()]);

        let Tape { nodes, ops, grads, scratch } = self;
        for op in ops.iter().rev() {
            let out = op.output();
            // No gradient reached this op's output: nothing flows upstream.
            let gy = match grads[out.0 as usize].take() {
                Some(g) => g,
                None => continue,
            };
            ops::backward_op(nodes, grads, scratch, op, &gy);
        }
        Ok(())
    }
}

impl<T> OpRecord<T> {
    pub(crate) fn output(&self) -> TensorId {
        use OpRecord::*;
        match *self {
            Conv1d { y, .. }
            | ConvTranspose1d { y, .. }
            | MaxPool1d { y, .. }
            | MaxUnpool1d { y, .. }
            | AdaptiveAvgPool1d { y, .. }
            | Linear { y, .. }
            | Relu { y, .. }
            | Dropout { y, .. }
            | Softmax { y, .. }
            | LogSoftmax { y, .. }
            | Concat { y, .. }
            | OuterFlatten { y, .. }
            | Reshape { y, .. }
            | MsePerSample { y, .. }
            | NllPerSample { y, .. }
            | RowSum { y, .. }
            | ElemMul { y, .. }
            | Add { y, .. }
            | Scale { y, .. }
            | Sum { y, .. }
            | Mean { y, .. }
            | WeightedSum { y, .. }
            | LogSigmoid { y, .. }
            | GradReverse { y, .. } => y,
        }
    }
}

/// Returns the gradient buffer for `id`, creating a zero-filled one on first
/// touch. Callers add their contribution into it (additive accumulation).
pub(crate) fn grad_buf<'a, T: Scalar>(
    grads: &'a mut [Option<Vec<T>>],
    nodes: &[Node<T>],
    id: TensorId,
) -> &'a mut [T] {
    let slot = &mut grads[id.0 as usize];
    if slot.is_none() {
        *slot = Some(vec![T::zero(); nodes[id.0 as usize].values.len()]);
    }
    slot.as_mut().unwrap()
}
