//! Dense layers and shape/probability plumbing: linear, relu, dropout,
//! softmax, log_softmax, concat, outer_flatten, reshape.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tape::{grad_buf, Node, OpRecord, Tape, TensorId};

/// Lane decomposition for axis-wise ops: shape = [outer, axis_len, inner].
fn lanes(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl<T: Scalar> Tape<T> {
    /// Affine map: input [B,F_in], weight [F_out,F_in], bias [F_out].
    pub fn linear(&mut self, x: TensorId, w: TensorId, b: TensorId) -> Result<TensorId> {
        let xs = self.shape(x);
        let ws = self.shape(w);
        let bs = self.shape(b);
        if xs.len() != 2 || ws.len() != 2 {
            return Err(Error::Shape(format!(
                "linear: expected input [B,F_in] and weight [F_out,F_in], got {xs:?} and {ws:?}"
            )));
        }
        if xs[1] != ws[1] {
            return Err(Error::Shape(format!(
                "linear: input F_in={} but weight expects F_in={}",
                xs[1], ws[1]
            )));
        }
        if bs.len() != 1 || bs[0] != ws[0] {
            return Err(Error::Shape(format!(
                "linear: bias shape {bs:?} does not match F_out={}",
                ws[0]
            )));
        }
        let (batch, f_in, f_out) = (xs[0], xs[1], ws[0]);
        let mut values = vec![T::zero(); batch * f_out];
        {
            let xv = self.values(x);
            let wv = self.values(w);
            let bv = self.values(b);
            // y = x · wᵀ
            T::gemm(false, true, batch, f_in, f_out, T::one(), xv, wv, T::zero(), &mut values);
            for bi in 0..batch {
                for (v, &bias) in values[bi * f_out..(bi + 1) * f_out].iter_mut().zip(bv) {
                    *v += bias;
                }
            }
        }
        let track = self.any_requires(&[x, w, b]);
        let y = self.push(vec![batch, f_out], values, track);
        if track {
            self.ops.push(OpRecord::Linear { x, w, b, y });
        }
        Ok(y)
    }

    pub fn relu(&mut self, x: TensorId) -> Result<TensorId> {
        let values: Vec<T> = self.values(x).iter().map(|&v| v.max(T::zero())).collect();
        let track = self.requires_grad(x);
        let shape = self.shape(x).to_vec();
        let y = self.push(shape, values, track);
        if track {
            self.ops.push(OpRecord::Relu { x, y });
        }
        Ok(y)
    }

    /// Inverted dropout: survivors scale by 1/(1−p_drop); identity in eval
    /// mode (the input id is returned unchanged, no node is recorded).
    pub fn dropout(
        &mut self,
        x: TensorId,
        p_drop: f64,
        rng: &mut ChaCha8Rng,
        train: bool,
    ) -> Result<TensorId> {
        if !(0.0..1.0).contains(&p_drop) {
            return Err(Error::Config(format!("dropout: p_drop must be in [0,1), got {p_drop}")));
        }
        if !train {
            return Ok(x);
        }
        let keep_threshold = ((1.0 - p_drop) * 4294967296.0).round() as u64;
        let scale = T::from_f64(1.0 / (1.0 - p_drop));
        let n = self.len(x);
        let mut mask = vec![0u8; n];
        for m in mask.iter_mut() {
            *m = ((rng.random::<u32>() as u64) < keep_threshold) as u8;
        }
        let values: Vec<T> = self
            .values(x)
            .iter()
            .zip(&mask)
            .map(|(&v, &m)| if m == 1 { v * scale } else { T::zero() })
            .collect();
        let track = self.requires_grad(x);
        let shape = self.shape(x).to_vec();
        let y = self.push(shape, values, track);
        if track {
            self.ops.push(OpRecord::Dropout { x, y, mask, scale });
        }
        Ok(y)
    }

    /// Overflow-safe softmax along `axis`.
    pub fn softmax(&mut self, x: TensorId, axis: usize) -> Result<TensorId> {
        let values = self.softmax_values(x, axis, false)?;
        let track = self.requires_grad(x);
        let shape = self.shape(x).to_vec();
        let y = self.push(shape, values, track);
        if track {
            self.ops.push(OpRecord::Softmax { x, y, axis });
        }
        Ok(y)
    }

    /// Overflow-safe log-softmax along `axis`.
    pub fn log_softmax(&mut self, x: TensorId, axis: usize) -> Result<TensorId> {
        let values = self.softmax_values(x, axis, true)?;
        let track = self.requires_grad(x);
        let shape = self.shape(x).to_vec();
        let y = self.push(shape, values, track);
        if track {
            self.ops.push(OpRecord::LogSoftmax { x, y, axis });
        }
        Ok(y)
    }

    fn softmax_values(&self, x: TensorId, axis: usize, log: bool) -> Result<Vec<T>> {
        let shape = self.shape(x);
        if axis >= shape.len() {
            return Err(Error::Shape(format!(
                "softmax: axis {axis} out of range for shape {shape:?}"
            )));
        }
        let (outer, a, inner) = lanes(shape, axis);
        let xv = self.values(x);
        let mut out = vec![T::zero(); xv.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |c: usize| (o * a + c) * inner + i;
                let mut m = xv[at(0)];
                for c in 1..a {
                    m = m.max(xv[at(c)]);
                }
                let mut z = T::zero();
                for c in 0..a {
                    z += (xv[at(c)] - m).exp();
                }
                if log {
                    let lz = z.ln();
                    for c in 0..a {
                        out[at(c)] = xv[at(c)] - m - lz;
                    }
                } else {
                    for c in 0..a {
                        out[at(c)] = (xv[at(c)] - m).exp() / z;
                    }
                }
            }
        }
        Ok(out)
    }

    /// Concatenates two tensors along `axis`; all other extents must match.
    pub fn concat(&mut self, a: TensorId, b: TensorId, axis: usize) -> Result<TensorId> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sa.len() != sb.len() || axis >= sa.len() {
            return Err(Error::Shape(format!(
                "concat: incompatible ranks or axis {axis} for shapes {sa:?} and {sb:?}"
            )));
        }
        for (d, (&ea, &eb)) in sa.iter().zip(&sb).enumerate() {
            if d != axis && ea != eb {
                return Err(Error::Shape(format!(
                    "concat: extent mismatch at dim {d}: {sa:?} vs {sb:?}"
                )));
            }
        }
        let (outer, a_len, inner) = lanes(&sa, axis);
        let b_len = sb[axis];
        let mut shape = sa.clone();
        shape[axis] = a_len + b_len;
        let mut values = vec![T::zero(); outer * (a_len + b_len) * inner];
        {
            let av = self.values(a);
            let bv = self.values(b);
            let a_block = a_len * inner;
            let b_block = b_len * inner;
            for o in 0..outer {
                let dst = &mut values[o * (a_block + b_block)..(o + 1) * (a_block + b_block)];
                dst[..a_block].copy_from_slice(&av[o * a_block..(o + 1) * a_block]);
                dst[a_block..].copy_from_slice(&bv[o * b_block..(o + 1) * b_block]);
            }
        }
        let track = self.any_requires(&[a, b]);
        let y = self.push(shape, values, track);
        if track {
            self.ops.push(OpRecord::Concat { a, b, y, axis });
        }
        Ok(y)
    }

    /// Flattened per-row outer product: a [B,F] × b [B,C] -> [B, F·C].
    /// Alternative discriminator conditioning to plain concatenation.
    pub fn outer_flatten(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sa.len() != 2 || sb.len() != 2 || sa[0] != sb[0] {
            return Err(Error::Shape(format!(
                "outer_flatten: expected [B,F] and [B,C] with equal B, got {sa:?} and {sb:?}"
            )));
        }
        let (batch, f, c) = (sa[0], sa[1], sb[1]);
        let mut values = vec![T::zero(); batch * f * c];
        {
            let av = self.values(a);
            let bv = self.values(b);
            for bi in 0..batch {
                for i in 0..f {
                    let ai = av[bi * f + i];
                    let dst = &mut values[(bi * f + i) * c..(bi * f + i + 1) * c];
                    for (d, &bj) in dst.iter_mut().zip(&bv[bi * c..(bi + 1) * c]) {
                        *d = ai * bj;
                    }
                }
            }
        }
        let track = self.any_requires(&[a, b]);
        let y = self.push(vec![batch, f * c], values, track);
        if track {
            self.ops.push(OpRecord::OuterFlatten { a, b, y });
        }
        Ok(y)
    }

    /// Copies values into a new shape with the same element count.
    pub fn reshape(&mut self, x: TensorId, shape: &[usize]) -> Result<TensorId> {
        let n: usize = shape.iter().product();
        if n != self.len(x) {
            return Err(Error::Shape(format!(
                "reshape: cannot view {:?} as {shape:?}",
                self.shape(x)
            )));
        }
        let values = self.values(x).to_vec();
        let track = self.requires_grad(x);
        let y = self.push(shape.to_vec(), values, track);
        if track {
            self.ops.push(OpRecord::Reshape { x, y });
        }
        Ok(y)
    }
}

pub(super) fn bwd_linear<T: Scalar>(
    nodes: &[Node<T>],
    grads: &mut [Option<Vec<T>>],
    x: TensorId,
    w: TensorId,
    b: TensorId,
    y: TensorId,
    gy: &[T],
) {
    let batch = nodes[x.0 as usize].shape[0];
    let f_in = nodes[x.0 as usize].shape[1];
    let f_out = nodes[y.0 as usize].shape[1];
    let xv = &nodes[x.0 as usize].values;
    let wv = &nodes[w.0 as usize].values;
    if nodes[b.0 as usize].requires_grad {
        let gb = grad_buf(grads, nodes, b);
        for bi in 0..batch {
            for (g, &d) in gb.iter_mut().zip(&gy[bi * f_out..(bi + 1) * f_out]) {
                *g += d;
            }
        }
    }
    if nodes[w.0 as usize].requires_grad {
        let gw = grad_buf(grads, nodes, w);
        // dW += gyᵀ · x
        T::gemm(true, false, f_out, batch, f_in, T::one(), gy, xv, T::one(), gw);
    }
    if nodes[x.0 as usize].requires_grad {
        let gx = grad_buf(grads, nodes, x);
        // dX += gy · w
        T::gemm(false, false, batch, f_out, f_in, T::one(), gy, wv, T::one(), gx);
    }
}

pub(super) fn bwd_relu<T: Scalar>(
    nodes: &[Node<T>],
    grads: &mut [Option<Vec<T>>],
    x: TensorId,
    y: TensorId,
    gy: &[T],
) {
    let yv = &nodes[y.0 as usize].values;
    let gx = grad_buf(grads, nodes, x);
    for ((g, &d), &v) in gx.iter_mut().zip(gy).zip(yv) {
        if v > T::zero() {
            *g += d;
        }
    }
}

pub(super) fn bwd_dropout<T: Scalar>(
    nodes: &[Node<T>],
    grads: &mut [Option<Vec<T>>],
    x: TensorId,
    mask: &[u8],
    scale: T,
    gy: &[T],
) {
    let gx = grad_buf(grads, nodes, x);
    for ((g, &d), &m) in gx.iter_mut().zip(gy).zip(mask) {
        if m == 1 {
            *g += d * scale;
        }
    }
}

pub(super) fn bwd_softmax<T: Scalar>(
    nodes: &[Node<T>],
    grads: &mut [Option<Vec<T>>],
    x: TensorId,
    y: TensorId,
    axis: usize,
    gy: &[T],
) {
    let (outer, a, inner) = lanes(&nodes[y.0 as usize].shape, axis);
    let yv = &nodes[y.0 as usize].values;
    let gx = grad_buf(grads, nodes, x);
    for o in 0..outer {
        for i in 0..inner {
            let at = |c: usize| (o * a + c) * inner + i;
            let mut dot = T::zero();
            for c in 0..a {
                dot += gy[at(c)] * yv[at(c)];
            }
            for c in 0..a {
                gx[at(c)] += yv[at(c)] * (gy[at(c)] - dot);
            }
        }
    }
}

pub(super) fn bwd_log_softmax<T: Scalar>(
    nodes: &[Node<T>],
    grads: &mut [Option<Vec<T>>],
    x: TensorId,
    y: TensorId,
    axis: usize,
    gy: &[T],
) {
    let (outer, a, inner) = lanes(&nodes[y.0 as usize].shape, axis);
    let yv = &nodes[y.0 as usize].values;
    let gx = grad_buf(grads, nodes, x);
    for o in 0..outer {
        for i in 0..inner {
            let at = |c: usize| (o * a + c) * inner + i;
            let mut sum = T::zero();
            for c in 0..a {
                sum += gy[at(c)];
            }
            for c in 0..a {
                gx[at(c)] += gy[at(c)] - yv[at(c)].exp() * sum;
            }
        }
    }
}

pub(super) fn bwd_concat<T: Scalar>(
    nodes: &[Node<T>],
    grads: &mut [Option<Vec<T>>],
    a: TensorId,
    b: TensorId,
    y: TensorId,
    axis: usize,
    gy: &[T],
) {
    let (outer, a_len, inner) = lanes(&nodes[a.0 as usize].shape, axis);
    let b_len = nodes[b.0 as usize].shape[axis];
    let _ = &nodes[y.0 as usize];
    let a_block = a_len * inner;
    let b_block = b_len * inner;
    if nodes[a.0 as usize].requires_grad {
        let ga = grad_buf(grads, nodes, a);
        for o in 0..outer {
            let src = &gy[o * (a_block + b_block)..o * (a_block + b_block) + a_block];
            for (g, &d) in ga[o * a_block..(o + 1) * a_block].iter_mut().zip(src) {
                *g += d;
            }
        }
    }
    if nodes[b.0 as usize].requires_grad {
        let gb = grad_buf(grads, nodes, b);
        for o in 0..outer {
            let src = &gy[o * (a_block + b_block) + a_block..(o + 1) * (a_block + b_block)];
            for (g, &d) in gb[o * b_block..(o + 1) * b_block].iter_mut().zip(src) {
                *g += d;
            }
        }
    }
}

pub(super) fn bwd_outer_flatten<T: Scalar>(
    nodes: &[Node<T>],
    grads: &mut [Option<Vec<T>>],
    a: TensorId,
    b: TensorId,
    y: TensorId,
    gy: &[T],
) {
    let batch = nodes[a.0 as usize].shape[0];
    let f = nodes[a.0 as usize].shape[1];
    let c = nodes[b.0 as usize].shape[1];
    let _ = &nodes[y.0 as usize];
    let av = &nodes[a.0 as usize].values;
    let bv = &nodes[b.0 as usize].values;
    if nodes[a.0 as usize].requires_grad {
        let ga = grad_buf(grads, nodes, a);
        for bi in 0..batch {
            for i in 0..f {
                let row = &gy[(bi * f + i) * c..(bi * f + i + 1) * c];
                let mut s = T::zero();
                for (&d, &bj) in row.iter().zip(&bv[bi * c..(bi + 1) * c]) {
                    s += d * bj;
                }
                ga[bi * f + i] += s;
            }
        }
    }
    if nodes[b.0 as usize].requires_grad {
        let gb = grad_buf(grads, nodes, b);
        for bi in 0..batch {
            for i in 0..f {
                let ai = av[bi * f + i];
                let row = &gy[(bi * f + i) * c..(bi * f + i + 1) * c];
                for (g, &d) in gb[bi * c..(bi + 1) * c].iter_mut().zip(row) {
                    *g += d * ai;
                }
            }
        }
    }
}
