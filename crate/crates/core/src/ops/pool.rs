//! Max pooling, max unpooling, and adaptive average pooling.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tape::{grad_buf, Node, OpRecord, Tape, TensorId};

/// Argmax positions recorded by a max-pool application, consumed by the
/// paired unpool. Indices are positions within each (batch, channel) row of
/// the *input*, so every index lies inside the window it summarizes.
#[derive(Clone, Debug)]
pub struct PoolIndices {
    pub batch: usize,
    pub channels: usize,
    /// Input row length the pool consumed (the unpool's natural out_len).
    pub in_len: usize,
    /// Output row length (number of windows).
    pub out_len: usize,
    pub window: usize,
    /// Row-major [batch, channels, out_len] argmax positions, each < in_len.
    pub idx: Vec<u32>,
}

impl<T: Scalar> Tape<T> {
    /// Windowed maxima over the last axis with recorded argmax positions.
    ///
    /// A trailing partial window is treated as right-padding with -inf
    /// semantics: the maximum is taken over the positions that exist, so
    /// padding can never win. Ties break to the lowest index.
    pub fn maxpool1d(&mut self, x: TensorId, window: usize) -> Result<(TensorId, PoolIndices)> {
        let xs = self.shape(x);
        if xs.len() != 3 {
            return Err(Error::Shape(format!("maxpool1d: input must be [B,C,L], got {xs:?}")));
        }
        let (batch, channels, l_in) = (xs[0], xs[1], xs[2]);
        if window == 0 {
            return Err(Error::Shape("maxpool1d: window must be positive".into()));
        }
        if window > l_in {
            return Err(Error::Shape(format!(
                "maxpool1d: window {window} exceeds input length {l_in}"
            )));
        }
        let l_out = l_in.div_ceil(window);
        let mut values = vec![T::zero(); batch * channels * l_out];
        let mut idx = vec![0u32; batch * channels * l_out];
        {
            let xv = self.values(x);
            for bc in 0..batch * channels {
                let row = &xv[bc * l_in..(bc + 1) * l_in];
                for j in 0..l_out {
                    let lo = j * window;
                    let hi = (lo + window).min(l_in);
                    let mut best = lo;
                    for p in lo + 1..hi {
                        if row[p] > row[best] {
                            best = p;
                        }
                    }
                    values[bc * l_out + j] = row[best];
                    idx[bc * l_out + j] = best as u32;
                }
            }
        }
        let indices = PoolIndices { batch, channels, in_len: l_in, out_len: l_out, window, idx };
        let track = self.requires_grad(x);
        let y = self.push(vec![batch, channels, l_out], values, track);
        if track {
            self.ops.push(OpRecord::MaxPool1d { x, y, idx: indices.idx.clone() });
        }
        Ok((y, indices))
    }

    /// Scatters values to the recorded argmax positions, zeros elsewhere.
    pub fn maxunpool1d(
        &mut self,
        x: TensorId,
        indices: &PoolIndices,
        out_len: usize,
    ) -> Result<TensorId> {
        let xs = self.shape(x);
        if xs.len() != 3 {
            return Err(Error::Shape(format!("maxunpool1d: input must be [B,C,L], got {xs:?}")));
        }
        let (batch, channels, l_in) = (xs[0], xs[1], xs[2]);
        if batch != indices.batch || channels != indices.channels || l_in != indices.out_len {
            return Err(Error::Shape(format!(
                "maxunpool1d: input [B={batch},C={channels},L={l_in}] does not match pool \
                 geometry [B={},C={},windows={}]",
                indices.batch, indices.channels, indices.out_len
            )));
        }
        if let Some(&bad) = indices.idx.iter().find(|&&i| i as usize >= out_len) {
            return Err(Error::Shape(format!(
                "maxunpool1d: recorded index {bad} out of range for out_len {out_len}"
            )));
        }
        let mut values = vec![T::zero(); batch * channels * out_len];
        {
            let xv = self.values(x);
            for bc in 0..batch * channels {
                for j in 0..l_in {
                    values[bc * out_len + indices.idx[bc * l_in + j] as usize] = xv[bc * l_in + j];
                }
            }
        }
        let track = self.requires_grad(x);
        let y = self.push(vec![batch, channels, out_len], values, track);
        if track {
            self.ops.push(OpRecord::MaxUnpool1d { x, y, idx: indices.idx.clone() });
        }
        Ok(y)
    }

    /// Averages contiguous spans so any input length maps to `out_len`.
    /// Span j covers [floor(j·L/out), ceil((j+1)·L/out)).
    pub fn adaptive_avg_pool1d(&mut self, x: TensorId, out_len: usize) -> Result<TensorId> {
        let xs = self.shape(x);
        if xs.len() != 3 {
            return Err(Error::Shape(format!(
                "adaptive_avg_pool1d: input must be [B,C,L], got {xs:?}"
            )));
        }
        if out_len == 0 {
            return Err(Error::Shape("adaptive_avg_pool1d: out_len must be positive".into()));
        }
        let (batch, channels, l_in) = (xs[0], xs[1], xs[2]);
        let mut values = vec![T::zero(); batch * channels * out_len];
        {
            let xv = self.values(x);
            for bc in 0..batch * channels {
                let row = &xv[bc * l_in..(bc + 1) * l_in];
                for j in 0..out_len {
                    let (lo, hi) = adaptive_span(j, l_in, out_len);
                    let mut s = T::zero();
                    for &v in &row[lo..hi] {
                        s += v;
                    }
                    values[bc * out_len + j] = s / T::from_f64((hi - lo) as f64);
                }
            }
        }
        let track = self.requires_grad(x);
        let y = self.push(vec![batch, channels, out_len], values, track);
        if track {
            self.ops.push(OpRecord::AdaptiveAvgPool1d { x, y });
        }
        Ok(y)
    }
}

pub(crate) fn adaptive_span(j: usize, l_in: usize, out_len: usize) -> (usize, usize) {
    let lo = j * l_in / out_len;
    let hi = ((j + 1) * l_in).div_ceil(out_len);
    (lo, hi)
}

pub(super) fn bwd_maxpool1d<T: Scalar>(
    nodes: &[Node<T>],
    grads: &mut [Option<Vec<T>>],
    x: TensorId,
    y: TensorId,
    idx: &[u32],
    gy: &[T],
) {
    if !nodes[x.0 as usize].requires_grad {
        return;
    }
    let l_in = nodes[x.0 as usize].shape[2];
    let l_out = nodes[y.0 as usize].shape[2];
    let gx = grad_buf(grads, nodes, x);
    let rows = nodes[x.0 as usize].shape[0] * nodes[x.0 as usize].shape[1];
    for bc in 0..rows {
        for j in 0..l_out {
            gx[bc * l_in + idx[bc * l_out + j] as usize] += gy[bc * l_out + j];
        }
    }
}

pub(super) fn bwd_maxunpool1d<T: Scalar>(
    nodes: &[Node<T>],
    grads: &mut [Option<Vec<T>>],
    x: TensorId,
    y: TensorId,
    idx: &[u32],
    gy: &[T],
) {
    if !nodes[x.0 as usize].requires_grad {
        return;
    }
    let l_in = nodes[x.0 as usize].shape[2];
    let out_len = nodes[y.0 as usize].shape[2];
    let gx = grad_buf(grads, nodes, x);
    let rows = nodes[x.0 as usize].shape[0] * nodes[x.0 as usize].shape[1];
    for bc in 0..rows {
        for j in 0..l_in {
            gx[bc * l_in + j] += gy[bc * out_len + idx[bc * l_in + j] as usize];
        }
    }
}

pub(super) fn bwd_adaptive_avg_pool1d<T: Scalar>(
    nodes: &[Node<T>],
    grads: &mut [Option<Vec<T>>],
    x: TensorId,
    y: TensorId,
    gy: &[T],
) {
    if !nodes[x.0 as usize].requires_grad {
        return;
    }
    let l_in = nodes[x.0 as usize].shape[2];
    let out_len = nodes[y.0 as usize].shape[2];
    let gx = grad_buf(grads, nodes, x);
    let rows = nodes[x.0 as usize].shape[0] * nodes[x.0 as usize].shape[1];
    for bc in 0..rows {
        for j in 0..out_len {
            let (lo, hi) = adaptive_span(j, l_in, out_len);
            let share = gy[bc * out_len + j] / T::from_f64((hi - lo) as f64);
            for l in lo..hi {
                gx[bc * l_in + l] += share;
            }
        }
    }
}
