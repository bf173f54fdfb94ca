//! Operator implementations and the backward dispatch table.
//!
//! Forward methods live in `impl Tape<T>` blocks spread over the submodules;
//! each validates shapes, computes values, and appends an [`OpRecord`] when
//! the output participates in differentiation. Backward rules are free
//! functions dispatched from [`backward_op`].

mod conv;
mod dense;
mod pool;
mod reduce;

pub use pool::PoolIndices;

use crate::scalar::Scalar;
use crate::tape::{Node, OpRecord};

/// Applies one op's backward rule: reads the output gradient `gy` and adds
/// each differentiable input's contribution into `grads`.
pub(crate) fn backward_op<T: Scalar>(
    nodes: &[Node<T>],
    grads: &mut [Option<Vec<T>>],
    scratch: &mut Vec<T>,
    op: &OpRecord<T>,
    gy: &[T],
) {
    use OpRecord::*;
    match op {
        Conv1d { x, w, b, y, stride, padding } => {
            conv::bwd_conv1d(nodes, grads, scratch, *x, *w, *b, *y, *stride, *padding, gy)
        }
        ConvTranspose1d { x, w, b, y, stride, padding } => {
            conv::bwd_conv_transpose1d(nodes, grads, scratch, *x, *w, *b, *y, *stride, *padding, gy)
        }
        MaxPool1d { x, y, idx } => pool::bwd_maxpool1d(nodes, grads, *x, *y, idx, gy),
        MaxUnpool1d { x, y, idx } => pool::bwd_maxunpool1d(nodes, grads, *x, *y, idx, gy),
        AdaptiveAvgPool1d { x, y } => pool::bwd_adaptive_avg_pool1d(nodes, grads, *x, *y, gy),
        Linear { x, w, b, y } => dense::bwd_linear(nodes, grads, *x, *w, *b, *y, gy),
        Relu { x, y } => dense::bwd_relu(nodes, grads, *x, *y, gy),
        Dropout { x, y: _, mask, scale } => dense::bwd_dropout(nodes, grads, *x, mask, *scale, gy),
        Softmax { x, y, axis } => dense::bwd_softmax(nodes, grads, *x, *y, *axis, gy),
        LogSoftmax { x, y, axis } => dense::bwd_log_softmax(nodes, grads, *x, *y, *axis, gy),
        Concat { a, b, y, axis } => dense::bwd_concat(nodes, grads, *a, *b, *y, *axis, gy),
        OuterFlatten { a, b, y } => dense::bwd_outer_flatten(nodes, grads, *a, *b, *y, gy),
        Reshape { x, y: _ } => {
            let gx = crate::tape::grad_buf(grads, nodes, *x);
            for (g, &d) in gx.iter_mut().zip(gy) {
                *g += d;
            }
        }
        MsePerSample { a, b, y: _ } => reduce::bwd_mse_per_sample(nodes, grads, *a, *b, gy),
        NllPerSample { logp, y: _, labels } => reduce::bwd_nll_per_sample(nodes, grads, *logp, labels, gy),
        RowSum { x, y: _ } => reduce::bwd_row_sum(nodes, grads, *x, gy),
        ElemMul { a, b, y: _ } => reduce::bwd_elem_mul(nodes, grads, *a, *b, gy),
        Add { a, b, y: _ } => reduce::bwd_add(nodes, grads, *a, *b, gy),
        Scale { x, y: _, c } => reduce::bwd_scale(nodes, grads, *x, *c, gy),
        Sum { x, y: _ } => reduce::bwd_sum(nodes, grads, *x, gy),
        Mean { x, y: _ } => reduce::bwd_mean(nodes, grads, *x, gy),
        WeightedSum { x, y: _, w } => reduce::bwd_weighted_sum(nodes, grads, *x, w, gy),
        LogSigmoid { x, y: _ } => reduce::bwd_log_sigmoid(nodes, grads, *x, gy),
        GradReverse { x, y: _, coeff } => reduce::bwd_grad_reverse(nodes, grads, *x, *coeff, gy),
    }
}
