//! Online sample selection: per-batch scoring and hard masking.
//!
//! Each batch is scored by adding the min-max normalized per-sample
//! reconstruction and task losses, then the highest-scoring portion is
//! dropped. Masking happens on detached values: the mask is data for the
//! induced loss, never something gradients flow through.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tape::{Tape, TensorId};

/// Which stream a mask was built for. Target batches are never masked:
/// selection guards the labeled and mixed streams against samples whose
/// losses mark them as unalignable, while the target stream is the
/// adaptation objective itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskDomain {
    Source,
    Intermediate,
    Target,
}

/// Outcome of scoring one batch.
#[derive(Debug, Clone)]
pub struct SelectionMask {
    pub domain: MaskDomain,
    /// keep[i] says sample i survives. len == batch.
    pub keep: Vec<bool>,
    /// Number of true entries; always batch - dropped.
    pub kept: usize,
    /// Combined normalized scores, one per sample.
    pub scores: Vec<f64>,
    /// Smallest dropped score, +inf when nothing was dropped. Every kept
    /// sample scores strictly below it or ties it only by index order.
    pub threshold: f64,
}

/// (x - min) / (max - min) per element; a constant vector normalizes to
/// all zeros, carrying no preference.
pub fn minmax_normalize(xs: &[f64]) -> Vec<f64> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &x in xs {
        lo = lo.min(x);
        hi = hi.max(x);
    }
    let span = hi - lo;
    if !(span > 0.0) {
        return vec![0.0; xs.len()];
    }
    xs.iter().map(|&x| (x - lo) / span).collect()
}

/// How many of `batch` samples a keep portion of `k` percent drops:
/// ceil((100 - k) * batch / 100), evaluated exactly in integers whenever k
/// is integral.
pub fn drop_count(batch: usize, keep_percent: f64) -> usize {
    if keep_percent.fract() == 0.0 {
        let k = keep_percent as usize;
        ((100 - k) * batch).div_ceil(100)
    } else {
        // Nudge below the exact value before ceiling, so representation
        // error cannot push an exact multiple up a whole step.
        let raw = (100.0 - keep_percent) * batch as f64 / 100.0;
        (((raw - 1e-9).ceil()).max(0.0) as usize).min(batch)
    }
}

/// Scores one batch and selects the keepers.
///
/// Postconditions: `kept == batch - drop_count(batch, keep_percent)`; the
/// dropped set is exactly the `drop_count` highest scores, ties at the
/// boundary resolved by dropping lower indices first; `threshold` is the
/// smallest dropped score, +inf when nothing is dropped. Target batches
/// short-circuit to a full keep.
pub fn build_mask(
    recon: &[f64],
    task: &[f64],
    keep_percent: f64,
    domain: MaskDomain,
) -> Result<SelectionMask> {
    if recon.len() != task.len() {
        return Err(Error::Shape(format!(
            "selection: {} reconstruction losses vs {} task losses",
            recon.len(),
            task.len()
        )));
    }
    let batch = recon.len();
    if batch == 0 {
        return Err(Error::Shape("selection: empty batch".into()));
    }
    if !(0.0..=100.0).contains(&keep_percent) {
        return Err(Error::Config(format!(
            "keep portion must be in [0, 100], got {keep_percent}"
        )));
    }
    for (name, xs) in [("reconstruction", recon), ("task", task)] {
        if xs.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric(format!(
                "selection: non-finite {name} loss in batch"
            )));
        }
    }

    let nr = minmax_normalize(recon);
    let nt = minmax_normalize(task);
    let scores: Vec<f64> = nr.iter().zip(&nt).map(|(a, b)| a + b).collect();

    if domain == MaskDomain::Target {
        return Ok(SelectionMask {
            domain,
            keep: vec![true; batch],
            kept: batch,
            scores,
            threshold: f64::INFINITY,
        });
    }

    let n_drop = drop_count(batch, keep_percent);
    let mut order: Vec<usize> = (0..batch).collect();
    // Highest score first; equal scores ordered by ascending index, so ties
    // crossing the boundary drop the earlier samples.
    order.sort_by(|&a, &b| {
        scores[b].partial_cmp(&scores[a]).expect("scores are finite").then(a.cmp(&b))
    });
    let mut keep = vec![true; batch];
    let mut threshold = f64::INFINITY;
    for &i in order.iter().take(n_drop) {
        keep[i] = false;
        // Iteration goes best-to-worst among dropped, so the last one
        // visited carries the smallest dropped score.
        threshold = scores[i];
    }
    Ok(SelectionMask { domain, keep, kept: batch - n_drop, scores, threshold })
}

/// Masked means of the per-sample loss vectors: sum of kept entries over
/// the kept count. An empty keep set yields exact zeros, dropping the
/// batch's contribution entirely.
pub fn apply_mask<T: Scalar>(
    tape: &mut Tape<T>,
    per_recon: TensorId,
    per_task: TensorId,
    mask: &SelectionMask,
) -> Result<(TensorId, TensorId)> {
    let batch = mask.keep.len();
    for (name, id) in [("reconstruction", per_recon), ("task", per_task)] {
        let s = tape.shape(id);
        if s.len() != 1 || s[0] != batch {
            return Err(Error::Shape(format!(
                "apply_mask: per-sample {name} losses must be [{batch}], got {s:?}"
            )));
        }
    }
    let denom = mask.kept.max(1) as f64;
    let w: Vec<T> = mask
        .keep
        .iter()
        .map(|&k| if k { T::from_f64(1.0 / denom) } else { T::zero() })
        .collect();
    let mr = tape.weighted_sum(per_recon, &w)?;
    let mt = tape.weighted_sum(per_task, &w)?;
    Ok((mr, mt))
}
