//! The training loop: per-step graph assembly over the three domains,
//! online selection, a single backward pass through gradient reversal, and
//! a decoupled-weight-decay adaptive-moment update, plus the source-only
//! baseline and the ablation switches.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{
    assemble_batch, build_intermediate, DomainDataset, DomainSampler, NormStats, SplitSpec,
};
use crate::error::{Error, Result};
use crate::eval::{self, EvalCase};
use crate::loss;
use crate::nn::{NetConfig, Networks, Param, TrainMode};
use crate::scalar::{Precision, Scalar};
use crate::select::{self, MaskDomain, SelectionMask};
use crate::tape::{Tape, TensorId};

/// Which components are removed. `false` everywhere is the full method.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Ablations {
    /// Disable sample selection: every mask keeps 100 percent.
    pub selection: bool,
    /// Train without the mixed intermediate domain.
    pub intermediate: bool,
    /// Train without the domain discriminator (and its adversarial term).
    pub discriminator: bool,
}

fn default_lr() -> f64 {
    1e-4
}
fn default_weight_decay() -> f64 {
    1e-5
}
fn default_batch() -> usize {
    64
}
fn default_epochs() -> usize {
    20
}
fn default_keep_portion() -> f64 {
    50.0
}
fn default_lambda() -> f64 {
    1.0
}
fn default_split_fraction() -> f64 {
    0.8
}

/// Full run configuration. JSON config files use exactly these keys;
/// unknown keys are rejected.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch: usize,
    pub epochs: usize,
    /// Percent of each source batch kept by selection; also the
    /// intermediate-domain portion unless overridden below.
    pub keep_portion: f64,
    /// Separate keep percent for the intermediate domain, used by the
    /// selection-portion sweep. Absent means same as `keep_portion`.
    pub keep_portion_intermediate: Option<f64>,
    /// Task-loss weight.
    pub lambda1: f64,
    /// Adversarial weight; also the gradient-reversal coefficient.
    pub lambda2: f64,
    pub seed: u64,
    pub precision: Precision,
    pub ablations: Ablations,
    pub net: NetConfig,
    /// Target-domain train fraction; the rest is the held-out test split.
    pub split_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: default_lr(),
            weight_decay: default_weight_decay(),
            batch: default_batch(),
            epochs: default_epochs(),
            keep_portion: default_keep_portion(),
            keep_portion_intermediate: None,
            lambda1: default_lambda(),
            lambda2: default_lambda(),
            seed: 0,
            precision: Precision::F32,
            ablations: Ablations::default(),
            net: NetConfig::default(),
            split_fraction: default_split_fraction(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr <= 0.0 || !self.lr.is_finite() {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Config(format!(
                "weight_decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        if self.batch < 2 {
            return Err(Error::Config(format!("batch must be at least 2, got {}", self.batch)));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(0.0..=100.0).contains(&self.keep_portion) {
            return Err(Error::Config(format!(
                "keep_portion must be in [0, 100], got {}",
                self.keep_portion
            )));
        }
        if let Some(k) = self.keep_portion_intermediate {
            if !(0.0..=100.0).contains(&k) {
                return Err(Error::Config(format!(
                    "keep_portion_intermediate must be in [0, 100], got {k}"
                )));
            }
        }
        if self.lambda1 < 0.0 || self.lambda2 < 0.0 {
            return Err(Error::Config(format!(
                "loss weights must be non-negative, got lambda1={} lambda2={}",
                self.lambda1, self.lambda2
            )));
        }
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return Err(Error::Config(format!(
                "split_fraction must be in (0, 1), got {}",
                self.split_fraction
            )));
        }
        Ok(())
    }

    /// Keep portion after applying the selection ablation: ablating
    /// selection is by definition a 100 percent keep.
    pub fn effective_keep(&self) -> f64 {
        if self.ablations.selection {
            100.0
        } else {
            self.keep_portion
        }
    }

    pub fn effective_keep_intermediate(&self) -> f64 {
        if self.ablations.selection {
            100.0
        } else {
            self.keep_portion_intermediate.unwrap_or(self.keep_portion)
        }
    }
}

/// Adaptive-moment optimizer with decoupled weight decay
/// (beta1 0.9, beta2 0.999, eps 1e-8, bias correction).
pub struct AdamW<T> {
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    step: u64,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(nets: &Networks<T>) -> AdamW<T> {
        AdamW {
            m: nets.params.iter().map(|p| vec![T::zero(); p.values.len()]).collect(),
            v: nets.params.iter().map(|p| vec![T::zero(); p.values.len()]).collect(),
            step: 0,
        }
    }

    /// One update over all parameters. Parameters without a gradient this
    /// step still receive moment decay and weight decay.
    pub fn update(
        &mut self,
        params: &mut [Param<T>],
        grads: &[Option<Vec<T>>],
        lr: f64,
        weight_decay: f64,
    ) {
        assert_eq!(params.len(), grads.len(), "gradient list shape mismatch");
        self.step += 1;
        let t = self.step as i32;
        let b1 = T::from_f64(0.9);
        let b2 = T::from_f64(0.999);
        let one = T::one();
        let eps = T::from_f64(1e-8);
        let corr1 = T::from_f64(1.0 - 0.9f64.powi(t));
        let corr2 = T::from_f64(1.0 - 0.999f64.powi(t));
        let lr_t = T::from_f64(lr);
        let wd = T::from_f64(weight_decay);
        for (i, p) in params.iter_mut().enumerate() {
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            for (j, w) in p.values.iter_mut().enumerate() {
                let g = grads[i].as_ref().map_or(T::zero(), |g| g[j]);
                m[j] = b1 * m[j] + (one - b1) * g;
                v[j] = b2 * v[j] + (one - b2) * g * g;
                let m_hat = m[j] / corr1;
                let v_hat = v[j] / corr2;
                *w = *w - lr_t * (m_hat / (v_hat.sqrt() + eps) + wd * *w);
            }
        }
    }
}

/// One domain's assembled batch.
pub struct Batch<T> {
    pub x: Vec<T>,
    pub b: usize,
    pub labels: Option<Vec<usize>>,
}

/// Per-step scalars, all in the reporting convention: `objective` is the
/// saddle value recon + lambda1 * task - lambda2 * disc_bce that the
/// encoder side minimizes; `disc_bce` is the discriminator's own binary
/// cross-entropy (the term it descends).
#[derive(Debug, Clone)]
pub struct StepReport {
    pub objective: f64,
    pub recon: f64,
    pub task: f64,
    pub disc_bce: f64,
    pub kept_source: usize,
    pub kept_intermediate: usize,
    pub mask_source: Option<SelectionMask>,
    pub mask_intermediate: Option<SelectionMask>,
}

fn finite(tape: &Tape<impl Scalar>, id: TensorId, term: &str) -> Result<f64> {
    let v = tape.values(id)[0].to_f64();
    if !v.is_finite() {
        return Err(Error::Numeric(format!("non-finite {term} loss")));
    }
    Ok(v)
}

fn per_sample_f64<T: Scalar>(tape: &Tape<T>, id: TensorId) -> Vec<f64> {
    tape.values(id).iter().map(|&v| v.to_f64()).collect()
}

/// One full optimization step over aligned batches.
///
/// Ordered contract: encode all domains, classify all, discriminate source
/// and target through gradient reversal, decode all, per-sample losses,
/// discriminator loss, masks from detached scores, masked objective with
/// unmasked target terms, one backward pass, one optimizer update of all
/// four networks.
pub fn train_step<T: Scalar>(
    nets: &mut Networks<T>,
    opt: &mut AdamW<T>,
    cfg: &TrainConfig,
    src: &Batch<T>,
    mid: Option<&Batch<T>>,
    tgt: &Batch<T>,
    drop_rngs: &mut [ChaCha8Rng; 3],
) -> Result<StepReport> {
    let m = nets.cfg.input_len;
    let labels = src
        .labels
        .as_ref()
        .ok_or_else(|| Error::Data("source batch carries no labels".into()))?;
    let use_disc = nets.has_discriminator && !cfg.ablations.discriminator;

    let mut tape = Tape::<T>::new();
    let bound = nets.bind(&mut tape, true)?;
    let xs = tape.leaf(&[src.b, 1, m], src.x.clone(), false)?;
    let xt = tape.leaf(&[tgt.b, 1, m], tgt.x.clone(), false)?;
    let xm = match mid {
        Some(b) => Some(tape.leaf(&[b.b, 1, m], b.x.clone(), false)?),
        None => None,
    };

    // 1. Encode. Fixed order source, intermediate, target keeps the
    // dropout streams aligned across configurations with and without the
    // discriminator.
    let enc_s = bound.encode(&mut tape, xs, TrainMode::Train { rngs: drop_rngs })?;
    let enc_m = match xm {
        Some(x) => Some(bound.encode(&mut tape, x, TrainMode::Train { rngs: drop_rngs })?),
        None => None,
    };
    let enc_t = bound.encode(&mut tape, xt, TrainMode::Train { rngs: drop_rngs })?;

    // 2. Classify.
    let logits_s = bound.classify(&mut tape, enc_s.h)?;
    let logits_m = match &enc_m {
        Some(e) => Some(bound.classify(&mut tape, e.h)?),
        None => None,
    };
    let logits_t = bound.classify(&mut tape, enc_t.h)?;

    // 3. Discriminate source and target, conditioned on predictions.
    let d_logits = if use_disc {
        let probs_s = tape.softmax(logits_s, 1)?;
        let probs_t = tape.softmax(logits_t, 1)?;
        let d_s = bound.discriminate(&mut tape, enc_s.h, probs_s, cfg.lambda2)?;
        let d_t = bound.discriminate(&mut tape, enc_t.h, probs_t, cfg.lambda2)?;
        Some((d_s, d_t))
    } else {
        None
    };

    // 4. Decode.
    let xhat_s = bound.decode(&mut tape, enc_s.h, &enc_s.pools)?;
    let xhat_m = match &enc_m {
        Some(e) => Some(bound.decode(&mut tape, e.h, &e.pools)?),
        None => None,
    };
    let xhat_t = bound.decode(&mut tape, enc_t.h, &enc_t.pools)?;

    // 5. Per-sample losses: reconstruction everywhere; cross-entropy on
    // the labeled source, prediction entropy on the unlabeled domains.
    let (per_recon_s, _) = loss::reconstruction_loss(&mut tape, xhat_s, xs)?;
    let per_task_s = loss::cross_entropy(&mut tape, logits_s, labels)?;
    let per_mid = match (xm, xhat_m, logits_m) {
        (Some(x), Some(xhat), Some(lg)) => {
            let (pr, _) = loss::reconstruction_loss(&mut tape, xhat, x)?;
            let pt = loss::entropy_loss(&mut tape, lg)?;
            Some((pr, pt))
        }
        _ => None,
    };
    let (per_recon_t, _) = loss::reconstruction_loss(&mut tape, xhat_t, xt)?;
    let per_task_t = loss::entropy_loss(&mut tape, logits_t)?;

    // 6. Discriminator loss.
    let ld = match d_logits {
        Some((d_s, d_t)) => Some(loss::discriminator_loss(&mut tape, d_s, d_t)?),
        None => None,
    };

    // 7. Masks from detached per-sample scores.
    let mask_s = select::build_mask(
        &per_sample_f64(&tape, per_recon_s),
        &per_sample_f64(&tape, per_task_s),
        cfg.effective_keep(),
        MaskDomain::Source,
    )?;
    let mask_m = match &per_mid {
        Some((pr, pt)) => Some(select::build_mask(
            &per_sample_f64(&tape, *pr),
            &per_sample_f64(&tape, *pt),
            cfg.effective_keep_intermediate(),
            MaskDomain::Intermediate,
        )?),
        None => None,
    };

    // 8. Objective: masked source and intermediate contributions, unmasked
    // target contributions. The adversarial term enters the backward
    // scalar as the discriminator's BCE, with gradient reversal flipping
    // its sign (scaled by lambda2) into everything upstream.
    let (recon_s, task_s) = select::apply_mask(&mut tape, per_recon_s, per_task_s, &mask_s)?;
    let mid_terms = match (&per_mid, &mask_m) {
        (Some((pr, pt)), Some(mk)) => Some(select::apply_mask(&mut tape, *pr, *pt, mk)?),
        _ => None,
    };
    let recon_t = tape.mean(per_recon_t)?;
    let task_t = tape.mean(per_task_t)?;

    let mut recon_total = tape.add(recon_s, recon_t)?;
    let mut task_total = tape.add(task_s, task_t)?;
    if let Some((rm, tm)) = mid_terms {
        recon_total = tape.add(recon_total, rm)?;
        task_total = tape.add(task_total, tm)?;
    }
    let recon_v = finite(&tape, recon_total, "reconstruction")?;
    let task_v = finite(&tape, task_total, "task")?;
    let disc_v = match ld {
        Some(l) => finite(&tape, l, "discriminator")?,
        None => 0.0,
    };

    let weighted_task = tape.scale(task_total, T::from_f64(cfg.lambda1))?;
    let mut backward_scalar = tape.add(recon_total, weighted_task)?;
    if let Some(l) = ld {
        backward_scalar = tape.add(backward_scalar, l)?;
    }

    // 9. Single backward pass.
    tape.backward(backward_scalar)?;

    // 10. Update every network.
    let ids = bound.ids;
    let grads: Vec<Option<Vec<T>>> =
        ids.iter().map(|&id| tape.grad(id).map(<[T]>::to_vec)).collect();
    opt.update(&mut nets.params, &grads, cfg.lr, cfg.weight_decay);

    let objective = recon_v + cfg.lambda1 * task_v - cfg.lambda2 * disc_v;
    if !objective.is_finite() {
        return Err(Error::Numeric("non-finite objective".into()));
    }
    Ok(StepReport {
        objective,
        recon: recon_v,
        task: task_v,
        disc_bce: disc_v,
        kept_source: mask_s.kept,
        kept_intermediate: mask_m.as_ref().map_or(0, |m| m.kept),
        mask_source: Some(mask_s),
        mask_intermediate: mask_m,
    })
}

/// Per-epoch averages of the step reports.
#[derive(Debug, Clone, Serialize)]
pub struct EpochTrace {
    pub objective: f64,
    pub recon: f64,
    pub task: f64,
    pub disc_bce: f64,
    /// Fraction of source samples kept by selection this epoch.
    pub kept_source_rate: f64,
    pub kept_intermediate_rate: f64,
}

/// One row of the optional per-step mask trace.
#[derive(Debug, Clone, Serialize)]
pub struct MaskTraceRow {
    pub epoch: usize,
    pub step: usize,
    pub domain: String,
    pub batch: usize,
    pub kept: usize,
    pub threshold: f64,
}

/// Everything a finished run hands back.
pub struct TrainOutput<T> {
    pub networks: Networks<T>,
    /// Normalization the evaluation side must apply: target train-split
    /// statistics.
    pub target_norm: NormStats,
    /// Held-out labeled target rows, raw (unnormalized).
    pub target_test: DomainDataset,
    pub epoch_traces: Vec<EpochTrace>,
    pub final_eval: EvalCase,
    pub mask_trace: Vec<MaskTraceRow>,
}

fn normalized_copy(ds: &DomainDataset, stats: &NormStats) -> DomainDataset {
    let mut out = ds.clone();
    for v in &mut out.signals {
        *v = stats.apply(*v) as f32;
    }
    out
}

const IDENTITY_STATS: NormStats = NormStats { mean: 0.0, std: 1.0 };

struct Prepared {
    net_cfg: NetConfig,
    norm_source: DomainDataset,
    norm_target_train: DomainDataset,
    target_test: DomainDataset,
    target_stats: NormStats,
}

/// Shared setup: compatibility checks, target split, normalization.
fn prepare(cfg: &TrainConfig, source: &DomainDataset, target: &DomainDataset) -> Result<Prepared> {
    cfg.validate()?;
    source.validate()?;
    target.validate()?;
    if source.labels.is_none() {
        return Err(Error::Data(format!("source dataset {} is unlabeled", source.name)));
    }
    if source.m != target.m {
        return Err(Error::Data(format!(
            "signal length mismatch: source m={} vs target m={}",
            source.m, target.m
        )));
    }
    if source.classes != target.classes {
        return Err(Error::Data(format!(
            "class count mismatch: source {} vs target {}",
            source.classes, target.classes
        )));
    }
    let mut net_cfg = cfg.net.clone();
    net_cfg.input_len = source.m;
    net_cfg.classes = source.classes;
    net_cfg.validate()?;

    // The target split uses the base seed, not the per-run seed, so every
    // seed of one experiment shares a single held-out test set.
    let split = SplitSpec { train_fraction: cfg.split_fraction, seed: cfg.seed };
    let (train_rows, test_rows) = split.split(target.n, &target.name)?;
    if train_rows.is_empty() || test_rows.is_empty() {
        return Err(Error::Data(format!(
            "target split left an empty side (n={}, fraction={})",
            target.n, cfg.split_fraction
        )));
    }
    let target_test = target.subset(&test_rows, &format!("{}-test", target.name), true);

    let source_stats = NormStats::from_rows(source, &(0..source.n).collect::<Vec<_>>())?;
    let target_stats = NormStats::from_rows(target, &train_rows)?;

    // Train-side copies are materialized pre-normalized; label access for
    // target and intermediate rows is structurally removed here.
    let norm_source = normalized_copy(source, &source_stats);
    let target_train = target.subset(&train_rows, &format!("{}-train", target.name), false);
    let norm_target_train = normalized_copy(&target_train, &target_stats);

    Ok(Prepared { net_cfg, norm_source, norm_target_train, target_test, target_stats })
}

fn make_batch<T: Scalar>(ds: &DomainDataset, rows: &[usize]) -> Batch<T> {
    let (x, labels) = assemble_batch::<T>(ds, rows, &IDENTITY_STATS);
    Batch { x, b: rows.len(), labels }
}

/// Runs the full method (or its ablations) for `cfg.epochs` epochs and
/// evaluates on the held-out target split.
///
/// `run_seed` drives initialization, batch order, dropout, and the
/// intermediate-domain draw. The target train/test split always uses
/// `cfg.seed`, so repeated runs of one experiment share one test set.
pub fn train<T: Scalar>(
    cfg: &TrainConfig,
    source: &DomainDataset,
    target: &DomainDataset,
    run_seed: u64,
    collect_mask_trace: bool,
) -> Result<TrainOutput<T>> {
    let prep = prepare(cfg, source, target)?;
    let intermediate = if cfg.ablations.intermediate {
        None
    } else {
        Some(build_intermediate(&prep.norm_source, &prep.norm_target_train, run_seed)?)
    };

    let mut nets = Networks::<T>::init(&prep.net_cfg, run_seed, true, !cfg.ablations.discriminator)?;
    let mut opt = AdamW::new(&nets);
    let mut drop_rngs = Networks::<T>::dropout_streams(run_seed);

    let mut src_sampler = DomainSampler::new(prep.norm_source.n, run_seed, "source");
    let mut mid_sampler = intermediate
        .as_ref()
        .map(|ds| DomainSampler::new(ds.n, run_seed, "intermediate"));
    let mut tgt_sampler = DomainSampler::new(prep.norm_target_train.n, run_seed, "target");

    let mut steps = prep.norm_source.n / cfg.batch;
    steps = steps.max(prep.norm_target_train.n / cfg.batch);
    if let Some(mid) = &intermediate {
        steps = steps.max(mid.n / cfg.batch);
    }
    let steps = steps.max(1);

    let mut traces = Vec::with_capacity(cfg.epochs);
    let mut mask_trace = Vec::new();
    for epoch in 0..cfg.epochs {
        let mut sums = [0.0f64; 4];
        let mut kept_s = 0usize;
        let mut kept_m = 0usize;
        let mut seen_m = 0usize;
        for step in 0..steps {
            let s_rows = src_sampler.next_batch(cfg.batch)?.to_vec();
            let src = make_batch::<T>(&prep.norm_source, &s_rows);
            let mid = match (&intermediate, &mut mid_sampler) {
                (Some(ds), Some(sampler)) => {
                    let rows = sampler.next_batch(cfg.batch)?.to_vec();
                    Some(make_batch::<T>(ds, &rows))
                }
                _ => None,
            };
            let t_rows = tgt_sampler.next_batch(cfg.batch)?.to_vec();
            let tgt = make_batch::<T>(&prep.norm_target_train, &t_rows);

            let report = train_step(&mut nets, &mut opt, cfg, &src, mid.as_ref(), &tgt, &mut drop_rngs)
                .map_err(|e| match e {
                    Error::Numeric(msg) => {
                        Error::Numeric(format!("{msg} at epoch {epoch} step {step}"))
                    }
                    other => other,
                })?;
            sums[0] += report.objective;
            sums[1] += report.recon;
            sums[2] += report.task;
            sums[3] += report.disc_bce;
            kept_s += report.kept_source;
            if mid.is_some() {
                kept_m += report.kept_intermediate;
                seen_m += cfg.batch;
            }
            if collect_mask_trace {
                if let Some(mask) = &report.mask_source {
                    mask_trace.push(MaskTraceRow {
                        epoch,
                        step,
                        domain: "source".into(),
                        batch: cfg.batch,
                        kept: mask.kept,
                        threshold: mask.threshold,
                    });
                }
                if let Some(mask) = &report.mask_intermediate {
                    mask_trace.push(MaskTraceRow {
                        epoch,
                        step,
                        domain: "intermediate".into(),
                        batch: cfg.batch,
                        kept: mask.kept,
                        threshold: mask.threshold,
                    });
                }
            }
        }
        let n = steps as f64;
        traces.push(EpochTrace {
            objective: sums[0] / n,
            recon: sums[1] / n,
            task: sums[2] / n,
            disc_bce: sums[3] / n,
            kept_source_rate: kept_s as f64 / (steps * cfg.batch) as f64,
            kept_intermediate_rate: if seen_m > 0 { kept_m as f64 / seen_m as f64 } else { 1.0 },
        });
    }

    let final_eval = eval::evaluate(&nets, &prep.target_test, &prep.target_stats, cfg.batch)?;
    Ok(TrainOutput {
        networks: nets,
        target_norm: prep.target_stats,
        target_test: prep.target_test,
        epoch_traces: traces,
        final_eval,
        mask_trace,
    })
}

/// Baseline: encoder and classifier trained with cross-entropy on source
/// only. No decoder, no discriminator, no selection, no target data in
/// training; the target test split is still held out and scored the same
/// way so numbers are comparable.
pub fn train_source_only<T: Scalar>(
    cfg: &TrainConfig,
    source: &DomainDataset,
    target: &DomainDataset,
    run_seed: u64,
) -> Result<TrainOutput<T>> {
    let prep = prepare(cfg, source, target)?;
    let mut nets = Networks::<T>::init(&prep.net_cfg, run_seed, false, false)?;
    let mut opt = AdamW::new(&nets);
    let mut drop_rngs = Networks::<T>::dropout_streams(run_seed);
    let mut sampler = DomainSampler::new(prep.norm_source.n, run_seed, "source");
    let steps = (prep.norm_source.n / cfg.batch).max(1);

    let mut traces = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut sum = 0.0f64;
        for step in 0..steps {
            let rows = sampler.next_batch(cfg.batch)?.to_vec();
            let batch = make_batch::<T>(&prep.norm_source, &rows);
            let labels = batch.labels.as_ref().expect("source batches are labeled");

            let mut tape = Tape::<T>::new();
            let bound = nets.bind(&mut tape, true)?;
            let x = tape.leaf(&[batch.b, 1, prep.net_cfg.input_len], batch.x.clone(), false)?;
            let enc = bound.encode(&mut tape, x, TrainMode::Train { rngs: &mut drop_rngs })?;
            let logits = bound.classify(&mut tape, enc.h)?;
            let per = loss::cross_entropy(&mut tape, logits, labels)?;
            let ce = tape.mean(per)?;
            let v = finite(&tape, ce, "task").map_err(|e| match e {
                Error::Numeric(msg) => Error::Numeric(format!("{msg} at epoch {epoch} step {step}")),
                other => other,
            })?;
            tape.backward(ce)?;
            let ids = bound.ids;
            let grads: Vec<Option<Vec<T>>> =
                ids.iter().map(|&id| tape.grad(id).map(<[T]>::to_vec)).collect();
            opt.update(&mut nets.params, &grads, cfg.lr, cfg.weight_decay);
            sum += v;
        }
        traces.push(EpochTrace {
            objective: sum / steps as f64,
            recon: 0.0,
            task: sum / steps as f64,
            disc_bce: 0.0,
            kept_source_rate: 1.0,
            kept_intermediate_rate: 1.0,
        });
    }

    let final_eval = eval::evaluate(&nets, &prep.target_test, &prep.target_stats, cfg.batch)?;
    Ok(TrainOutput {
        networks: nets,
        target_norm: prep.target_stats,
        target_test: prep.target_test,
        epoch_traces: traces,
        final_eval,
        mask_trace: Vec::new(),
    })
}
