//! Evaluation: deterministic test-time prediction, per-class and averaged
//! F1 scoring, multi-seed aggregation, and the two sweep harnesses
//! (selection-portion surface, loss-weight sensitivity).

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::data::{assemble_batch, DomainDataset, NormStats};
use crate::error::{Error, Result};
use crate::nn::{Networks, TrainMode};
use crate::rng::{derive_seed, fnv1a64};
use crate::scalar::Scalar;
use crate::tape::Tape;
use crate::train::{self, TrainConfig};

/// Precision, recall, F1, and support for one class.
#[derive(Debug, Clone, Serialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

/// Scores for one trained model on one labeled test set.
#[derive(Debug, Clone, Serialize)]
pub struct EvalCase {
    pub macro_f1: f64,
    /// For single-label classification this equals plain accuracy.
    pub micro_f1: f64,
    pub per_class: BTreeMap<usize, ClassScores>,
    /// Row = true class, column = predicted class; entries sum to `n`.
    pub confusion: Vec<Vec<usize>>,
    pub warnings: Vec<String>,
    pub n: usize,
}

/// Runs the trained encoder and classifier over a test set in eval mode
/// (dropout off) and returns argmax predictions; the lowest class id wins
/// exact ties.
pub fn predict<T: Scalar>(
    nets: &Networks<T>,
    test: &DomainDataset,
    stats: &NormStats,
    chunk: usize,
) -> Result<Vec<usize>> {
    if test.m != nets.cfg.input_len {
        return Err(Error::Data(format!(
            "test signal length {} does not match trained encoder input length {}",
            test.m, nets.cfg.input_len
        )));
    }
    let classes = nets.cfg.classes;
    let chunk = chunk.max(1);
    let mut preds = Vec::with_capacity(test.n);
    let rows: Vec<usize> = (0..test.n).collect();
    for block in rows.chunks(chunk) {
        let (x, _) = assemble_batch::<T>(test, block, stats);
        let mut tape = Tape::<T>::new();
        let bound = nets.bind(&mut tape, false)?;
        let xin = tape.leaf(&[block.len(), 1, test.m], x, false)?;
        let enc = bound.encode(&mut tape, xin, TrainMode::Eval)?;
        let logits = bound.classify(&mut tape, enc.h)?;
        let vals = tape.values(logits);
        for b in 0..block.len() {
            let row = &vals[b * classes..(b + 1) * classes];
            let mut best = 0usize;
            for (j, &v) in row.iter().enumerate() {
                if v.to_f64() > row[best].to_f64() {
                    best = j;
                }
            }
            preds.push(best);
        }
    }
    Ok(preds)
}

/// Confusion matrix with rows indexed by truth and columns by prediction.
pub fn confusion_matrix(pred: &[usize], truth: &[usize], classes: usize) -> Result<Vec<Vec<usize>>> {
    if pred.len() != truth.len() {
        return Err(Error::Data(format!(
            "prediction count {} does not match truth count {}",
            pred.len(),
            truth.len()
        )));
    }
    let mut conf = vec![vec![0usize; classes]; classes];
    for (&p, &t) in pred.iter().zip(truth) {
        if p >= classes || t >= classes {
            return Err(Error::Data(format!(
                "label out of range: pred {p} truth {t} with {classes} classes"
            )));
        }
        conf[t][p] += 1;
    }
    Ok(conf)
}

/// Scores predictions against truth. A class absent from both sides
/// contributes F1 = 0 and a warning, keeping the macro average honest
/// about missing classes rather than silently shrinking the denominator.
pub fn score(pred: &[usize], truth: &[usize], classes: usize) -> Result<EvalCase> {
    let conf = confusion_matrix(pred, truth, classes)?;
    let n = pred.len();
    let mut per_class = BTreeMap::new();
    let mut warnings = Vec::new();
    let mut macro_sum = 0.0;
    let mut tp_total = 0usize;
    for c in 0..classes {
        let tp = conf[c][c];
        let fp: usize = (0..classes).filter(|&r| r != c).map(|r| conf[r][c]).sum();
        let fal_n: usize = (0..classes).filter(|&p| p != c).map(|p| conf[c][p]).sum();
        let support: usize = conf[c].iter().sum();
        if tp + fp + fal_n == 0 {
            warnings.push(format!("class {c} absent from both predictions and truth"));
        }
        let precision = if tp + fp > 0 { tp as f64 / (tp + fp) as f64 } else { 0.0 };
        let recall = if tp + fal_n > 0 { tp as f64 / (tp + fal_n) as f64 } else { 0.0 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        macro_sum += f1;
        tp_total += tp;
        per_class.insert(c, ClassScores { precision, recall, f1, support });
    }
    Ok(EvalCase {
        macro_f1: macro_sum / classes as f64,
        micro_f1: if n > 0 { tp_total as f64 / n as f64 } else { 0.0 },
        per_class,
        confusion: conf,
        warnings,
        n,
    })
}

/// Predict-and-score against a labeled dataset.
pub fn evaluate<T: Scalar>(
    nets: &Networks<T>,
    test: &DomainDataset,
    stats: &NormStats,
    chunk: usize,
) -> Result<EvalCase> {
    let labels = test
        .labels
        .as_ref()
        .ok_or_else(|| Error::Data(format!("dataset {} carries no labels to score against", test.name)))?;
    let truth: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
    let pred = predict(nets, test, stats, chunk)?;
    score(&pred, &truth, test.classes)
}

/// Mean and sample standard deviation (n - 1 denominator) over runs.
/// A single run reports std 0; an empty list is an error.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Aggregate {
    pub mean: f64,
    pub std: f64,
}

pub fn aggregate(values: &[f64]) -> Result<Aggregate> {
    if values.is_empty() {
        return Err(Error::Data("no runs to aggregate".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    // Identical runs must report exactly zero spread, which the naive
    // formula misses when the mean itself rounds.
    let all_same = values.iter().all(|v| v.to_bits() == values[0].to_bits());
    let std = if values.len() < 2 || all_same {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    Ok(Aggregate { mean, std })
}

/// Hash of the resolved configuration, used as run provenance in reports
/// and sweep rows.
pub fn config_hash(cfg: &TrainConfig) -> String {
    let json = serde_json::to_string(cfg).expect("config serializes");
    format!("{:016x}", fnv1a64(json.as_bytes()))
}

/// The summary document for one multi-seed experiment.
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub scenario: String,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub per_seed_f1: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    /// Per-class scores averaged over seeds; support is per run (the test
    /// set is shared, so it is constant across seeds).
    pub per_class: BTreeMap<usize, ClassScores>,
}

pub fn build_report(
    scenario: &str,
    cfg: &TrainConfig,
    seeds: &[u64],
    cases: &[EvalCase],
) -> Result<EvalReport> {
    if seeds.len() != cases.len() {
        return Err(Error::Internal(format!(
            "seed count {} does not match case count {}",
            seeds.len(),
            cases.len()
        )));
    }
    let per_seed_f1: Vec<f64> = cases.iter().map(|c| c.macro_f1).collect();
    let agg = aggregate(&per_seed_f1)?;
    let classes: Vec<usize> = cases[0].per_class.keys().copied().collect();
    let mut per_class = BTreeMap::new();
    for &c in &classes {
        let k = cases.len() as f64;
        let mut acc = ClassScores { precision: 0.0, recall: 0.0, f1: 0.0, support: 0 };
        for case in cases {
            let s = case.per_class.get(&c).ok_or_else(|| {
                Error::Internal(format!("class {c} missing from a per-seed case"))
            })?;
            acc.precision += s.precision / k;
            acc.recall += s.recall / k;
            acc.f1 += s.f1 / k;
            acc.support = s.support;
        }
        per_class.insert(c, acc);
    }
    Ok(EvalReport {
        scenario: scenario.to_string(),
        config_hash: config_hash(cfg),
        seeds: seeds.to_vec(),
        per_seed_f1,
        mean: agg.mean,
        std: agg.std,
        per_class,
    })
}

/// One sweep-grid cell. `mean_f1`/`std_f1` are absent when the cell's
/// training diverged; the status string records why.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepCell {
    pub axis1: f64,
    pub axis2: f64,
    pub mean_f1: Option<f64>,
    pub std_f1: Option<f64>,
    pub status: String,
}

/// Which sweep is being run; decides axis semantics and CSV headers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    /// axis1 = source keep percent, axis2 = intermediate keep percent.
    Keep,
    /// axis1 = lambda1, axis2 = lambda2.
    Weights,
}

impl SweepAxis {
    pub fn headers(self) -> (&'static str, &'static str) {
        match self {
            SweepAxis::Keep => ("keep_source", "keep_intermediate"),
            SweepAxis::Weights => ("lambda1", "lambda2"),
        }
    }
}

/// Expands a grid into the cell list for one sweep. The keep sweep is the
/// full factorial over both domains' portions. The weights sweep holds
/// the complementary weight at its default (lambda1 = 1 while sweeping
/// lambda2, lambda2 = 0.3 while sweeping lambda1).
pub fn sweep_pairs(axis: SweepAxis, grid: &[f64]) -> Vec<(f64, f64)> {
    match axis {
        SweepAxis::Keep => {
            let mut pairs = Vec::with_capacity(grid.len() * grid.len());
            for &s in grid {
                for &m in grid {
                    pairs.push((s, m));
                }
            }
            pairs
        }
        SweepAxis::Weights => {
            let mut pairs: Vec<(f64, f64)> = grid.iter().map(|&l2| (1.0, l2)).collect();
            pairs.extend(grid.iter().map(|&l1| (l1, 0.3)));
            pairs.dedup();
            pairs
        }
    }
}

fn cell_config(axis: SweepAxis, base: &TrainConfig, a1: f64, a2: f64) -> TrainConfig {
    let mut cfg = base.clone();
    match axis {
        SweepAxis::Keep => {
            cfg.keep_portion = a1;
            cfg.keep_portion_intermediate = Some(a2);
        }
        SweepAxis::Weights => {
            cfg.lambda1 = a1;
            cfg.lambda2 = a2;
        }
    }
    cfg
}

fn run_cell<T: Scalar>(
    cfg: &TrainConfig,
    source: &DomainDataset,
    target: &DomainDataset,
    cell_seed: u64,
    seeds_per_cell: usize,
) -> Result<Aggregate> {
    let mut f1s = Vec::with_capacity(seeds_per_cell);
    for i in 0..seeds_per_cell {
        let run_seed = cell_seed.wrapping_add(i as u64);
        let out = train::train::<T>(cfg, source, target, run_seed, false)?;
        f1s.push(out.final_eval.macro_f1);
    }
    aggregate(&f1s)
}

/// Runs every cell in `pairs`, up to `jobs` in parallel. Cells are
/// independent: each gets a seed derived from the base seed and its own
/// coordinates, so results do not depend on scheduling or on which cells
/// were skipped by a resume. Divergent cells become failed rows, never
/// errors. `sink` sees each finished cell immediately (for incremental
/// persistence); the returned list is in `pairs` order.
pub fn run_sweep<T: Scalar>(
    axis: SweepAxis,
    pairs: &[(f64, f64)],
    base: &TrainConfig,
    source: &DomainDataset,
    target: &DomainDataset,
    seeds_per_cell: usize,
    jobs: usize,
    sink: &(dyn Fn(&SweepCell) + Sync),
) -> Vec<SweepCell> {
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<(usize, SweepCell)>> = Mutex::new(Vec::with_capacity(pairs.len()));
    let workers = jobs.max(1).min(pairs.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= pairs.len() {
                    break;
                }
                let (a1, a2) = pairs[i];
                let cfg = cell_config(axis, base, a1, a2);
                let cell_seed = derive_seed(base.seed, &format!("cell/{a1}/{a2}"));
                let cell = match run_cell::<T>(&cfg, source, target, cell_seed, seeds_per_cell) {
                    Ok(agg) => SweepCell {
                        axis1: a1,
                        axis2: a2,
                        mean_f1: Some(agg.mean),
                        std_f1: Some(agg.std),
                        status: "ok".into(),
                    },
                    Err(e) => SweepCell {
                        axis1: a1,
                        axis2: a2,
                        mean_f1: None,
                        std_f1: None,
                        status: format!("failed: {e}").replace([',', '\n'], ";"),
                    },
                };
                sink(&cell);
                results.lock().expect("sweep results lock").push((i, cell));
            });
        }
    });
    let mut indexed = results.into_inner().expect("sweep results lock");
    indexed.sort_by_key(|(i, _)| *i);
    indexed.into_iter().map(|(_, c)| c).collect()
}

/// Flat CSV for a sweep: axis values, aggregate scores, status.
pub fn sweep_csv(axis: SweepAxis, cells: &[SweepCell]) -> String {
    let (h1, h2) = axis.headers();
    let mut out = format!("{h1},{h2},mean_f1,std_f1,status\n");
    for c in cells {
        let mean = c.mean_f1.map_or_else(|| "nan".into(), |v| format!("{v}"));
        let std = c.std_f1.map_or_else(|| "nan".into(), |v| format!("{v}"));
        out.push_str(&format!("{},{},{mean},{std},{}\n", c.axis1, c.axis2, c.status));
    }
    out
}
