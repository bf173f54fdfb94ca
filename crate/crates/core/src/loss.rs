//! Loss builders. Each returns tape tensors so gradients flow; per-sample
//! forms feed the selection stage, scalar forms feed the optimizer.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tape::{Tape, TensorId};

/// Per-sample squared reconstruction error and its batch mean.
///
/// The per-sample vector is the selection signal; the mean is the term that
/// enters the objective when no mask is applied.
pub fn reconstruction_loss<T: Scalar>(
    tape: &mut Tape<T>,
    xhat: TensorId,
    x: TensorId,
) -> Result<(TensorId, TensorId)> {
    let per = tape.mse_per_sample(xhat, x)?;
    let total = tape.mean(per)?;
    Ok((per, total))
}

/// Per-sample cross-entropy of logits against integer labels, composed as
/// negative log-likelihood of log-softmax rows.
pub fn cross_entropy<T: Scalar>(
    tape: &mut Tape<T>,
    logits: TensorId,
    labels: &[usize],
) -> Result<TensorId> {
    let logp = tape.log_softmax(logits, 1)?;
    tape.nll_per_sample(logp, labels)
}

/// Per-sample prediction entropy -sum_c p_c log p_c, the task signal for
/// unlabeled batches. Softmax and log-softmax are composed rather than
/// taking log of probabilities, so small p never reaches a bare log.
pub fn entropy_loss<T: Scalar>(tape: &mut Tape<T>, logits: TensorId) -> Result<TensorId> {
    let p = tape.softmax(logits, 1)?;
    let logp = tape.log_softmax(logits, 1)?;
    let plogp = tape.elem_mul(p, logp)?;
    let row = tape.row_sum(plogp)?;
    tape.scale(row, -T::one())
}

/// Domain discriminator binary cross-entropy: source logits labeled 1,
/// target logits labeled 0, both halves averaged then summed.
///
/// The optimizer descends this, improving the discriminator; gradient
/// reversal upstream of the discriminator input makes the encoder ascend
/// the same quantity. Both log terms are computed in log-sigmoid form, so
/// saturated logits stay finite.
pub fn discriminator_loss<T: Scalar>(
    tape: &mut Tape<T>,
    logit_source: TensorId,
    logit_target: TensorId,
) -> Result<TensorId> {
    for (name, id) in [("source", logit_source), ("target", logit_target)] {
        let s = tape.shape(id);
        if s.len() != 2 || s[1] != 1 {
            return Err(Error::Shape(format!(
                "discriminator_loss: {name} logits must be [B,1], got {s:?}"
            )));
        }
    }
    let ls = tape.log_sigmoid(logit_source)?;
    let ls_mean = tape.mean(ls)?;
    let neg_t = tape.scale(logit_target, -T::one())?;
    let lt = tape.log_sigmoid(neg_t)?;
    let lt_mean = tape.mean(lt)?;
    let likelihood = tape.add(ls_mean, lt_mean)?;
    tape.scale(likelihood, -T::one())
}
