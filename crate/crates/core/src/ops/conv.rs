//! 1D convolution and transposed convolution via per-sample im2col + GEMM.
//!
//! Both directions share two layout helpers. With geometry (C, K, L_src,
//! L_cols, stride, pad):
//!
//! * `im2col`: col[(c·K + k)·L_cols + j] = src[c·L_src + j·stride + k − pad]
//!   (zero where the source index falls outside [0, L_src)).
//! * `col2im`: the adjoint scatter-add, dst[c·L_src + j·stride + k − pad] +=
//!   col[(c·K + k)·L_cols + j].
//!
//! conv1d forward gathers with im2col; its input gradient scatters with
//! col2im. conv_transpose1d is the mirror image: forward scatters, input
//! gradient gathers, which is exactly why forward(conv_transpose1d) equals
//! the backward-input of conv1d on matched shapes.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tape::{grad_buf, Node, OpRecord, Tape, TensorId};

/// Gathers sliding windows of one sample into column-major patch rows.
fn im2col<T: Scalar>(
    src: &[T],
    col: &mut [T],
    c: usize,
    k: usize,
    l_src: usize,
    l_cols: usize,
    stride: usize,
    pad: usize,
) {
    debug_assert_eq!(src.len(), c * l_src);
    debug_assert_eq!(col.len(), c * k * l_cols);
    if stride == 1 {
        for ci in 0..c {
            let row_src = &src[ci * l_src..(ci + 1) * l_src];
            for kk in 0..k {
                let row = &mut col[(ci * k + kk) * l_cols..(ci * k + kk + 1) * l_cols];
                // Source index j + kk - pad is valid for j in [lo, hi).
                let lo = pad.saturating_sub(kk).min(l_cols);
                let hi = (l_src + pad).saturating_sub(kk).min(l_cols).max(lo);
                row[..lo].fill(T::zero());
                if hi > lo {
                    row[lo..hi].copy_from_slice(&row_src[lo + kk - pad..hi + kk - pad]);
                }
                row[hi..].fill(T::zero());
            }
        }
    } else {
        for ci in 0..c {
            for kk in 0..k {
                let row = &mut col[(ci * k + kk) * l_cols..(ci * k + kk + 1) * l_cols];
                for (j, slot) in row.iter_mut().enumerate() {
                    let pos = (j * stride + kk) as isize - pad as isize;
                    *slot = if pos >= 0 && (pos as usize) < l_src {
                        src[ci * l_src + pos as usize]
                    } else {
                        T::zero()
                    };
                }
            }
        }
    }
}

/// Adjoint of `im2col`: scatter-adds patch rows back onto the sample.
fn col2im<T: Scalar>(
    col: &[T],
    dst: &mut [T],
    c: usize,
    k: usize,
    l_src: usize,
    l_cols: usize,
    stride: usize,
    pad: usize,
) {
    debug_assert_eq!(dst.len(), c * l_src);
    debug_assert_eq!(col.len(), c * k * l_cols);
    if stride == 1 {
        for ci in 0..c {
            let dst_row = &mut dst[ci * l_src..(ci + 1) * l_src];
            for kk in 0..k {
                let row = &col[(ci * k + kk) * l_cols..(ci * k + kk + 1) * l_cols];
                let lo = pad.saturating_sub(kk).min(l_cols);
                let hi = (l_src + pad).saturating_sub(kk).min(l_cols).max(lo);
                if hi > lo {
                    let base = lo + kk - pad;
                    for (d, s) in dst_row[base..base + (hi - lo)].iter_mut().zip(&row[lo..hi]) {
                        *d += *s;
                    }
                }
            }
        }
    } else {
        for ci in 0..c {
            for kk in 0..k {
                let row = &col[(ci * k + kk) * l_cols..(ci * k + kk + 1) * l_cols];
                for (j, &v) in row.iter().enumerate() {
                    let pos = (j * stride + kk) as isize - pad as isize;
                    if pos >= 0 && (pos as usize) < l_src {
                        dst[ci * l_src + pos as usize] += v;
                    }
                }
            }
        }
    }
}

struct ConvDims {
    batch: usize,
    c_in: usize,
    l_in: usize,
    c_out: usize,
    kernel: usize,
}

fn check_conv_args<T: Scalar>(
    name: &str,
    tape: &Tape<T>,
    x: TensorId,
    w: TensorId,
    b: TensorId,
    w_in_axis: usize,
    stride: usize,
) -> Result<ConvDims> {
    let xs = tape.shape(x);
    let ws = tape.shape(w);
    let bs = tape.shape(b);
    if xs.len() != 3 {
        return Err(Error::Shape(format!("{name}: input must be [B,C_in,L], got {xs:?}")));
    }
    if ws.len() != 3 {
        return Err(Error::Shape(format!("{name}: weight must be rank 3, got {ws:?}")));
    }
    let (c_in, c_out) = if w_in_axis == 1 { (ws[1], ws[0]) } else { (ws[0], ws[1]) };
    if xs[1] != c_in {
        return Err(Error::Shape(format!(
            "{name}: input channels C_in={} but weight expects C_in={c_in}",
            xs[1]
        )));
    }
    if bs.len() != 1 || bs[0] != c_out {
        return Err(Error::Shape(format!(
            "{name}: bias shape {bs:?} does not match C_out={c_out}"
        )));
    }
    if stride == 0 {
        return Err(Error::Shape(format!("{name}: stride must be positive")));
    }
    Ok(ConvDims { batch: xs[0], c_in, l_in: xs[2], c_out, kernel: ws[2] })
}

impl<T: Scalar> Tape<T> {
    /// Cross-correlation: input [B,C_in,L], weight [C_out,C_in,K], bias [C_out].
    pub fn conv1d(
        &mut self,
        x: TensorId,
        w: TensorId,
        b: TensorId,
        stride: usize,
        padding: usize,
    ) -> Result<TensorId> {
        let d = check_conv_args("conv1d", self, x, w, b, 1, stride)?;
        if d.kernel > d.l_in + 2 * padding {
            return Err(Error::Shape(format!(
                "conv1d: kernel K={} exceeds padded length L+2p={}",
                d.kernel,
                d.l_in + 2 * padding
            )));
        }
        let l_out = (d.l_in + 2 * padding - d.kernel) / stride + 1;
        let mut values = vec![T::zero(); d.batch * d.c_out * l_out];
        let mut col = std::mem::take(&mut self.scratch);
        col.clear();
        col.resize(d.c_in * d.kernel * l_out, T::zero());
        {
            let xv = self.values(x);
            let wv = self.values(w);
            let bv = self.values(b);
            for bi in 0..d.batch {
                im2col(
                    &xv[bi * d.c_in * d.l_in..(bi + 1) * d.c_in * d.l_in],
                    &mut col,
                    d.c_in,
                    d.kernel,
                    d.l_in,
                    l_out,
                    stride,
                    padding,
                );
                T::gemm(
                    false,
                    false,
                    d.c_out,
                    d.c_in * d.kernel,
                    l_out,
                    T::one(),
                    wv,
                    &col,
                    T::zero(),
                    &mut values[bi * d.c_out * l_out..(bi + 1) * d.c_out * l_out],
                );
                for co in 0..d.c_out {
                    let row = &mut values[(bi * d.c_out + co) * l_out..(bi * d.c_out + co + 1) * l_out];
                    for v in row {
                        *v += bv[co];
                    }
                }
            }
        }
        self.scratch = col;
        let track = self.any_requires(&[x, w, b]);
        let y = self.push(vec![d.batch, d.c_out, l_out], values, track);
        if track {
            self.ops.push(OpRecord::Conv1d { x, w, b, y, stride, padding });
        }
        Ok(y)
    }

    /// Transposed convolution: input [B,C_in,L], weight [C_in,C_out,K],
    /// bias [C_out]; output length (L−1)·stride − 2·padding + K.
    pub fn conv_transpose1d(
        &mut self,
        x: TensorId,
        w: TensorId,
        b: TensorId,
        stride: usize,
        padding: usize,
    ) -> Result<TensorId> {
        let d = check_conv_args("conv_transpose1d", self, x, w, b, 0, stride)?;
        let l_out_signed = (d.l_in as isize - 1) * stride as isize - 2 * padding as isize + d.kernel as isize;
        if l_out_signed < 1 {
            return Err(Error::Shape(format!(
                "conv_transpose1d: output length (L-1)*stride - 2*padding + K = {l_out_signed} < 1"
            )));
        }
        let l_out = l_out_signed as usize;
        let mut values = vec![T::zero(); d.batch * d.c_out * l_out];
        let mut col = std::mem::take(&mut self.scratch);
        col.clear();
        col.resize(d.c_out * d.kernel * d.l_in, T::zero());
        {
            let xv = self.values(x);
            let wv = self.values(w);
            let bv = self.values(b);
            for bi in 0..d.batch {
                // col = Wᵀ · x_b, with W viewed as [C_in, C_out·K].
                T::gemm(
                    true,
                    false,
                    d.c_out * d.kernel,
                    d.c_in,
                    d.l_in,
                    T::one(),
                    wv,
                    &xv[bi * d.c_in * d.l_in..(bi + 1) * d.c_in * d.l_in],
                    T::zero(),
                    &mut col,
                );
                let y_b = &mut values[bi * d.c_out * l_out..(bi + 1) * d.c_out * l_out];
                col2im(&col, y_b, d.c_out, d.kernel, l_out, d.l_in, stride, padding);
                for co in 0..d.c_out {
                    for v in &mut y_b[co * l_out..(co + 1) * l_out] {
                        *v += bv[co];
                    }
                }
            }
        }
        self.scratch = col;
        let track = self.any_requires(&[x, w, b]);
        let y = self.push(vec![d.batch, d.c_out, l_out], values, track);
        if track {
            self.ops.push(OpRecord::ConvTranspose1d { x, w, b, y, stride, padding });
        }
        Ok(y)
    }
}

#[allow(clippy::too_many_arguments)]
pub(super) fn bwd_conv1d<T: Scalar>(
    nodes: &[Node<T>],
    grads: &mut [Option<Vec<T>>],
    scratch: &mut Vec<T>,
    x: TensorId,
    w: TensorId,
    b: TensorId,
    y: TensorId,
    stride: usize,
    padding: usize,
    gy: &[T],
) {
    let (batch, c_in, l_in) = dims3(nodes, x);
    let (c_out, _, kernel) = dims3(nodes, w);
    let l_out = nodes[y.0 as usize].shape[2];
    let xv = &nodes[x.0 as usize].values;
    let wv = &nodes[w.0 as usize].values;

    if nodes[b.0 as usize].requires_grad {
        let gb = grad_buf(grads, nodes, b);
        for bi in 0..batch {
            for co in 0..c_out {
                let row = &gy[(bi * c_out + co) * l_out..(bi * c_out + co + 1) * l_out];
                let mut s = T::zero();
                for &g in row {
                    s += g;
                }
                gb[co] += s;
            }
        }
    }

    if nodes[w.0 as usize].requires_grad {
        scratch.clear();
        scratch.resize(c_in * kernel * l_out, T::zero());
        let gw = grad_buf(grads, nodes, w);
        for bi in 0..batch {
            im2col(
                &xv[bi * c_in * l_in..(bi + 1) * c_in * l_in],
                scratch,
                c_in,
                kernel,
                l_in,
                l_out,
                stride,
                padding,
            );
            // dW += gy_b · colᵀ
            T::gemm(
                false,
                true,
                c_out,
                l_out,
                c_in * kernel,
                T::one(),
                &gy[bi * c_out * l_out..(bi + 1) * c_out * l_out],
                scratch,
                T::one(),
                gw,
            );
        }
    }

    if nodes[x.0 as usize].requires_grad {
        scratch.clear();
        scratch.resize(c_in * kernel * l_out, T::zero());
        let gx = grad_buf(grads, nodes, x);
        for bi in 0..batch {
            // dcol = Wᵀ · gy_b
            T::gemm(
                true,
                false,
                c_in * kernel,
                c_out,
                l_out,
                T::one(),
                wv,
                &gy[bi * c_out * l_out..(bi + 1) * c_out * l_out],
                T::zero(),
                scratch,
            );
            col2im(
                scratch,
                &mut gx[bi * c_in * l_in..(bi + 1) * c_in * l_in],
                c_in,
                kernel,
                l_in,
                l_out,
                stride,
                padding,
            );
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub(super) fn bwd_conv_transpose1d<T: Scalar>(
    nodes: &[Node<T>],
    grads: &mut [Option<Vec<T>>],
    scratch: &mut Vec<T>,
    x: TensorId,
    w: TensorId,
    b: TensorId,
    y: TensorId,
    stride: usize,
    padding: usize,
    gy: &[T],
) {
    let (batch, c_in, l_in) = dims3(nodes, x);
    let (_, c_out, kernel) = dims3(nodes, w);
    let l_out = nodes[y.0 as usize].shape[2];
    let xv = &nodes[x.0 as usize].values;
    let wv = &nodes[w.0 as usize].values;

    if nodes[b.0 as usize].requires_grad {
        let gb = grad_buf(grads, nodes, b);
        for bi in 0..batch {
            for co in 0..c_out {
                let row = &gy[(bi * c_out + co) * l_out..(bi * c_out + co + 1) * l_out];
                let mut s = T::zero();
                for &g in row {
                    s += g;
                }
                gb[co] += s;
            }
        }
    }

    let need_x = nodes[x.0 as usize].requires_grad;
    let need_w = nodes[w.0 as usize].requires_grad;
    if need_x || need_w {
        scratch.clear();
        scratch.resize(c_out * kernel * l_in, T::zero());
        for bi in 0..batch {
            // Gather gy_b with the conv geometry; both dX and dW consume it.
            im2col(
                &gy[bi * c_out * l_out..(bi + 1) * c_out * l_out],
                scratch,
                c_out,
                kernel,
                l_out,
                l_in,
                stride,
                padding,
            );
            if need_x {
                let gx = grad_buf(grads, nodes, x);
                // dX_b += W · col, W viewed as [C_in, C_out·K]
                T::gemm(
                    false,
                    false,
                    c_in,
                    c_out * kernel,
                    l_in,
                    T::one(),
                    wv,
                    scratch,
                    T::one(),
                    &mut gx[bi * c_in * l_in..(bi + 1) * c_in * l_in],
                );
            }
            if need_w {
                let gw = grad_buf(grads, nodes, w);
                // dW += x_b · colᵀ
                T::gemm(
                    false,
                    true,
                    c_in,
                    l_in,
                    c_out * kernel,
                    T::one(),
                    &xv[bi * c_in * l_in..(bi + 1) * c_in * l_in],
                    scratch,
                    T::one(),
                    gw,
                );
            }
        }
    }
}

fn dims3<T>(nodes: &[Node<T>], id: TensorId) -> (usize, usize, usize) {
    let s = &nodes[id.0 as usize].shape;
    (s[0], s[1], s[2])
}
