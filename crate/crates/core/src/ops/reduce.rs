//! Reductions, per-sample losses, elementwise arithmetic, and the gradient
//! reversal layer.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tape::{grad_buf, Node, OpRecord, Tape, TensorId};

impl<T: Scalar> Tape<T> {
    /// Per-sample squared Euclidean norm of the difference: [B, ...] -> [B].
    pub fn mse_per_sample(&mut self, xhat: TensorId, x: TensorId) -> Result<TensorId> {
        let sa = self.shape(xhat);
        let sb = self.shape(x);
        if sa != sb {
            return Err(Error::Shape(format!(
                "mse_per_sample: shape mismatch {sa:?} vs {sb:?}"
            )));
        }
        if sa.is_empty() {
            return Err(Error::Shape("mse_per_sample: input must have a batch axis".into()));
        }
        let batch = sa[0];
        let per: usize = sa[1..].iter().product();
        let av = self.values(xhat);
        let bv = self.values(x);
        let mut values = vec![T::zero(); batch];
        for bi in 0..batch {
            let mut s = T::zero();
            for (&p, &q) in av[bi * per..(bi + 1) * per].iter().zip(&bv[bi * per..(bi + 1) * per]) {
                let d = p - q;
                s += d * d;
            }
            values[bi] = s;
        }
        let track = self.any_requires(&[xhat, x]);
        let y = self.push(vec![batch], values, track);
        if track {
            self.ops.push(OpRecord::MsePerSample { a: xhat, b: x, y });
        }
        Ok(y)
    }

    /// Negative log-likelihood rows: logp [B,C], labels [B] -> [B].
    pub fn nll_per_sample(&mut self, logp: TensorId, labels: &[usize]) -> Result<TensorId> {
        let s = self.shape(logp);
        if s.len() != 2 {
            return Err(Error::Shape(format!("nll_per_sample: logp must be [B,C], got {s:?}")));
        }
        let (batch, classes) = (s[0], s[1]);
        if labels.len() != batch {
            return Err(Error::Shape(format!(
                "nll_per_sample: {} labels for batch {batch}",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Data(format!(
                "nll_per_sample: label {bad} out of range for C={classes}"
            )));
        }
        let lv = self.values(logp);
        let values: Vec<T> = labels
            .iter()
            .enumerate()
            .map(|(bi, &l)| -lv[bi * classes + l])
            .collect();
        let track = self.requires_grad(logp);
        let y = self.push(vec![batch], values, track);
        if track {
            let labels = labels.iter().map(|&l| l as u32).collect();
            self.ops.push(OpRecord::NllPerSample { logp, y, labels });
        }
        Ok(y)
    }

    /// Sums over the last axis of a rank-2 tensor: [B,C] -> [B].
    pub fn row_sum(&mut self, x: TensorId) -> Result<TensorId> {
        let s = self.shape(x);
        if s.len() != 2 {
            return Err(Error::Shape(format!("row_sum: input must be rank 2, got {s:?}")));
        }
        let (batch, cols) = (s[0], s[1]);
        let xv = self.values(x);
        let values: Vec<T> = (0..batch)
            .map(|bi| {
                let mut s = T::zero();
                for &v in &xv[bi * cols..(bi + 1) * cols] {
                    s += v;
                }
                s
            })
            .collect();
        let track = self.requires_grad(x);
        let y = self.push(vec![batch], values, track);
        if track {
            self.ops.push(OpRecord::RowSum { x, y });
        }
        Ok(y)
    }

    pub fn elem_mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.check_same_shape("elem_mul", a, b)?;
        let values: Vec<T> =
            self.values(a).iter().zip(self.values(b)).map(|(&p, &q)| p * q).collect();
        let track = self.any_requires(&[a, b]);
        let shape = self.shape(a).to_vec();
        let y = self.push(shape, values, track);
        if track {
            self.ops.push(OpRecord::ElemMul { a, b, y });
        }
        Ok(y)
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.check_same_shape("add", a, b)?;
        let values: Vec<T> =
            self.values(a).iter().zip(self.values(b)).map(|(&p, &q)| p + q).collect();
        let track = self.any_requires(&[a, b]);
        let shape = self.shape(a).to_vec();
        let y = self.push(shape, values, track);
        if track {
            self.ops.push(OpRecord::Add { a, b, y });
        }
        Ok(y)
    }

    pub fn scale(&mut self, x: TensorId, c: T) -> Result<TensorId> {
        let values: Vec<T> = self.values(x).iter().map(|&v| v * c).collect();
        let track = self.requires_grad(x);
        let shape = self.shape(x).to_vec();
        let y = self.push(shape, values, track);
        if track {
            self.ops.push(OpRecord::Scale { x, y, c });
        }
        Ok(y)
    }

    /// Sum of all elements -> scalar [1].
    pub fn sum(&mut self, x: TensorId) -> Result<TensorId> {
        let mut s = T::zero();
        for &v in self.values(x) {
            s += v;
        }
        let track = self.requires_grad(x);
        let y = self.push(vec![1], vec![s], track);
        if track {
            self.ops.push(OpRecord::Sum { x, y });
        }
        Ok(y)
    }

    /// Mean of all elements -> scalar [1].
    pub fn mean(&mut self, x: TensorId) -> Result<TensorId> {
        let n = self.len(x);
        let mut s = T::zero();
        for &v in self.values(x) {
            s += v;
        }
        let track = self.requires_grad(x);
        let y = self.push(vec![1], vec![s / T::from_f64(n as f64)], track);
        if track {
            self.ops.push(OpRecord::Mean { x, y });
        }
        Ok(y)
    }

    /// Dot product with a constant weight vector -> scalar [1]. The masked
    /// loss totals are built with this: weights are the 0/1 keep mask.
    pub fn weighted_sum(&mut self, x: TensorId, weights: &[T]) -> Result<TensorId> {
        if weights.len() != self.len(x) {
            return Err(Error::Shape(format!(
                "weighted_sum: {} weights for {} elements",
                weights.len(),
                self.len(x)
            )));
        }
        let mut s = T::zero();
        for (&v, &w) in self.values(x).iter().zip(weights) {
            s += v * w;
        }
        let track = self.requires_grad(x);
        let y = self.push(vec![1], vec![s], track);
        if track {
            self.ops.push(OpRecord::WeightedSum { x, y, w: weights.to_vec() });
        }
        Ok(y)
    }

    /// Elementwise log(sigmoid(x)), computed in shifted log space so the
    /// result is finite for any finite input.
    pub fn log_sigmoid(&mut self, x: TensorId) -> Result<TensorId> {
        let values: Vec<T> = self
            .values(x)
            .iter()
            .map(|&v| v.min(T::zero()) - (-v.abs()).exp().ln_1p())
            .collect();
        let track = self.requires_grad(x);
        let shape = self.shape(x).to_vec();
        let y = self.push(shape, values, track);
        if track {
            self.ops.push(OpRecord::LogSigmoid { x, y });
        }
        Ok(y)
    }

    /// Identity forward; backward multiplies the incoming gradient by
    /// −coeff. coeff = 0 passes exactly zero gradient upstream.
    pub fn grad_reverse(&mut self, x: TensorId, coeff: T) -> Result<TensorId> {
        if coeff < T::zero() {
            return Err(Error::Config(format!("grad_reverse: coeff must be >= 0, got {coeff}")));
        }
        let values = self.values(x).to_vec();
        let track = self.requires_grad(x);
        let shape = self.shape(x).to_vec();
        let y = self.push(shape, values, track);
        if track {
            self.ops.push(OpRecord::GradReverse { x, y, coeff });
        }
        Ok(y)
    }

    fn check_same_shape(&self, name: &str, a: TensorId, b: TensorId) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape(format!(
                "{name}: shape mismatch {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }
}

pub(super) fn bwd_mse_per_sample<T: Scalar>(
    nodes: &[Node<T>],
    grads: &mut [Option<Vec<T>>],
    a: TensorId,
    b: TensorId,
    gy: &[T],
) {
    let batch = nodes[a.0 as usize].shape[0];
    let per = nodes[a.0 as usize].values.len() / batch;
    let av = &nodes[a.0 as usize].values;
    let bv = &nodes[b.0 as usize].values;
    let two = T::from_f64(2.0);
    if nodes[a.0 as usize].requires_grad {
        let ga = grad_buf(grads, nodes, a);
        for bi in 0..batch {
            let g = two * gy[bi];
            for i in bi * per..(bi + 1) * per {
                ga[i] += g * (av[i] - bv[i]);
            }
        }
    }
    if nodes[b.0 as usize].requires_grad {
        let gb = grad_buf(grads, nodes, b);
        for bi in 0..batch {
            let g = two * gy[bi];
            for i in bi * per..(bi + 1) * per {
                gb[i] -= g * (av[i] - bv[i]);
            }
        }
    }
}

pub(super) fn bwd_nll_per_sample<T: Scalar>(
    nodes: &[Node<T>],
    grads: &mut [Option<Vec<T>>],
    logp: TensorId,
    labels: &[u32],
    gy: &[T],
) {
    let classes = nodes[logp.0 as usize].shape[1];
    let g = grad_buf(grads, nodes, logp);
    for (bi, &l) in labels.iter().enumerate() {
        g[bi * classes + l as usize] -= gy[bi];
    }
}

pub(super) fn bwd_row_sum<T: Scalar>(
    nodes: &[Node<T>],
    grads: &mut [Option<Vec<T>>],
    x: TensorId,
    gy: &[T],
) {
    let cols = nodes[x.0 as usize].shape[1];
    let gx = grad_buf(grads, nodes, x);
    for (bi, &d) in gy.iter().enumerate() {
        for g in &mut gx[bi * cols..(bi + 1) * cols] {
            *g += d;
        }
    }
}

pub(super) fn bwd_elem_mul<T: Scalar>(
    nodes: &[Node<T>],
    grads: &mut [Option<Vec<T>>],
    a: TensorId,
    b: TensorId,
    gy: &[T],
) {
    if nodes[a.0 as usize].requires_grad {
        let bv = &nodes[b.0 as usize].values;
        let ga = grad_buf(grads, nodes, a);
        for ((g, &d), &q) in ga.iter_mut().zip(gy).zip(bv) {
            *g += d * q;
        }
    }
    if nodes[b.0 as usize].requires_grad {
        let av = &nodes[a.0 as usize].values;
        let gb = grad_buf(grads, nodes, b);
        for ((g, &d), &p) in gb.iter_mut().zip(gy).zip(av) {
            *g += d * p;
        }
    }
}

pub(super) fn bwd_add<T: Scalar>(
    nodes: &[Node<T>],
    grads: &mut [Option<Vec<T>>],
    a: TensorId,
    b: TensorId,
    gy: &[T],
) {
    for id in [a, b] {
        if nodes[id.0 as usize].requires_grad {
            let g = grad_buf(grads, nodes, id);
            for (g, &d) in g.iter_mut().zip(gy) {
                *g += d;
            }
        }
    }
}

pub(super) fn bwd_scale<T: Scalar>(
    nodes: &[Node<T>],
    grads: &mut [Option<Vec<T>>],
    x: TensorId,
    c: T,
    gy: &[T],
) {
    let gx = grad_buf(grads, nodes, x);
    for (g, &d) in gx.iter_mut().zip(gy) {
        *g += d * c;
    }
}

pub(super) fn bwd_sum<T: Scalar>(
    nodes: &[Node<T>],
    grads: &mut [Option<Vec<T>>],
    x: TensorId,
    gy: &[T],
) {
    let gx = grad_buf(grads, nodes, x);
    for g in gx.iter_mut() {
        *g += gy[0];
    }
}

pub(super) fn bwd_mean<T: Scalar>(
    nodes: &[Node<T>],
    grads: &mut [Option<Vec<T>>],
    x: TensorId,
    gy: &[T],
) {
    let n = nodes[x.0 as usize].values.len();
    let share = gy[0] / T::from_f64(n as f64);
    let gx = grad_buf(grads, nodes, x);
    for g in gx.iter_mut() {
        *g += share;
    }
}

pub(super) fn bwd_weighted_sum<T: Scalar>(
    nodes: &[Node<T>],
    grads: &mut [Option<Vec<T>>],
    x: TensorId,
    w: &[T],
    gy: &[T],
) {
    let gx = grad_buf(grads, nodes, x);
    for (g, &wi) in gx.iter_mut().zip(w) {
        *g += gy[0] * wi;
    }
}

pub(super) fn bwd_log_sigmoid<T: Scalar>(
    nodes: &[Node<T>],
    grads: &mut [Option<Vec<T>>],
    x: TensorId,
    gy: &[T],
) {
    let xv = &nodes[x.0 as usize].values;
    let gx = grad_buf(grads, nodes, x);
    for ((g, &d), &v) in gx.iter_mut().zip(gy).zip(xv) {
        // d/dx log sigmoid(x) = sigmoid(-x), computed overflow-safely.
        let s = if v >= T::zero() {
            let e = (-v).exp();
            e / (T::one() + e)
        } else {
            T::one() / (T::one() + v.exp())
        };
        *g += d * s;
    }
}

pub(super) fn bwd_grad_reverse<T: Scalar>(
    nodes: &[Node<T>],
    grads: &mut [Option<Vec<T>>],
    x: TensorId,
    coeff: T,
    gy: &[T],
) {
    // coeff 0 contributes nothing: exact-zero adversarial path, so a
    // lambda2 = 0 run is bit-identical to a discriminator-ablated one.
    if coeff == T::zero() {
        return;
    }
    let gx = grad_buf(grads, nodes, x);
    for (g, &d) in gx.iter_mut().zip(gy) {
        *g -= coeff * d;
    }
}
