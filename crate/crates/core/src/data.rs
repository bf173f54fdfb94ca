//! Dataset representation, on-disk format, splits, the mixed intermediate
//! domain, and deterministic batch sampling.
//!
//! # Directory format
//!
//! A dataset is a directory of three files:
//!
//! - `meta.json`: `{"n", "m", "c", "dtype": "f32le", "labeled", "name"}`
//! - `signals.bin`: n*m little-endian f32 values, row-major
//! - `labels.bin`: n bytes of class ids, present iff `labeled`
//!
//! # Converting recorded data
//!
//! Real vibration recordings become datasets by windowing: slice each
//! recording into non-overlapping windows of the chosen length (5120
//! samples for the Paderborn rig's 64 kHz channels, 1024 for the CWRU
//! drive-end channel), tag each window with its recording's fault class,
//! and write the windows as rows of `signals.bin` in recording order.
//! Downloading or parsing the original archives is out of scope; any tool
//! that emits this directory layout can feed the trainer.
//!
//! Normalization is not baked into the files: training computes z-score
//! statistics from its train split and applies them at batch assembly, and
//! checkpoints carry those statistics so later evaluation sees identically
//! scaled inputs.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{fnv1a64, stream};
use crate::scalar::Scalar;

/// One domain's samples: n signals of length m, optionally labeled.
#[derive(Debug, Clone)]
pub struct DomainDataset {
    pub name: String,
    pub n: usize,
    pub m: usize,
    pub classes: usize,
    /// Row-major [n, m].
    pub signals: Vec<f32>,
    /// Class ids < classes; present only for labeled roles.
    pub labels: Option<Vec<u8>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MetaFile {
    n: usize,
    m: usize,
    c: usize,
    dtype: String,
    labeled: bool,
    name: String,
}

impl DomainDataset {
    pub fn validate(&self) -> Result<()> {
        if self.signals.len() != self.n * self.m {
            return Err(Error::Data(format!(
                "dataset {}: {} signal values for n={} m={}",
                self.name,
                self.signals.len(),
                self.n,
                self.m
            )));
        }
        if let Some(labels) = &self.labels {
            if labels.len() != self.n {
                return Err(Error::Data(format!(
                    "dataset {}: {} labels for {} samples",
                    self.name,
                    labels.len(),
                    self.n
                )));
            }
            if let Some(&bad) = labels.iter().find(|&&l| (l as usize) >= self.classes) {
                return Err(Error::Data(format!(
                    "dataset {}: label {bad} out of range for {} classes",
                    self.name, self.classes
                )));
            }
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<DomainDataset> {
        let meta_path = dir.join("meta.json");
        let meta_text = fs::read_to_string(&meta_path)
            .map_err(|e| Error::Data(format!("missing or unreadable {}: {e}", meta_path.display())))?;
        let meta: MetaFile = serde_json::from_str(&meta_text)
            .map_err(|e| Error::Data(format!("malformed {}: {e}", meta_path.display())))?;
        if meta.dtype != "f32le" {
            return Err(Error::Data(format!(
                "dataset {}: unsupported dtype {:?}, expected \"f32le\"",
                meta.name, meta.dtype
            )));
        }

        let sig_path = dir.join("signals.bin");
        let bytes = fs::read(&sig_path)
            .map_err(|e| Error::Data(format!("missing or unreadable {}: {e}", sig_path.display())))?;
        let expect = meta.n * meta.m * 4;
        if bytes.len() != expect {
            return Err(Error::Data(format!(
                "{}: holds {} bytes, expected {} (n={} m={})",
                sig_path.display(),
                bytes.len(),
                expect,
                meta.n,
                meta.m
            )));
        }
        let signals: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();

        let labels = if meta.labeled {
            let lab_path = dir.join("labels.bin");
            let lab = fs::read(&lab_path)
                .map_err(|e| Error::Data(format!("missing or unreadable {}: {e}", lab_path.display())))?;
            if lab.len() != meta.n {
                return Err(Error::Data(format!(
                    "{}: holds {} labels, expected {}",
                    lab_path.display(),
                    lab.len(),
                    meta.n
                )));
            }
            Some(lab)
        } else {
            None
        };

        let ds = DomainDataset {
            name: meta.name,
            n: meta.n,
            m: meta.m,
            classes: meta.c,
            signals,
            labels,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        self.validate()?;
        fs::create_dir_all(dir)?;
        let meta = MetaFile {
            n: self.n,
            m: self.m,
            c: self.classes,
            dtype: "f32le".into(),
            labeled: self.labels.is_some(),
            name: self.name.clone(),
        };
        let mut text = serde_json::to_string_pretty(&meta)?;
        text.push('\n');
        fs::write(dir.join("meta.json"), text)?;
        let mut bytes = Vec::with_capacity(self.signals.len() * 4);
        for v in &self.signals {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(dir.join("signals.bin"), bytes)?;
        if let Some(labels) = &self.labels {
            fs::write(dir.join("labels.bin"), labels)?;
        }
        Ok(())
    }

    /// Stable content hash over shape, signal bytes, and labels; recorded
    /// in run manifests so reruns can prove they saw the same data.
    pub fn content_hash(&self) -> String {
        let mut bytes = Vec::with_capacity(self.signals.len() * 4 + 64);
        bytes.extend_from_slice(&(self.n as u64).to_le_bytes());
        bytes.extend_from_slice(&(self.m as u64).to_le_bytes());
        bytes.extend_from_slice(&(self.classes as u64).to_le_bytes());
        for v in &self.signals {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        if let Some(labels) = &self.labels {
            bytes.extend_from_slice(labels);
        }
        format!("{:016x}", fnv1a64(&bytes))
    }

    /// A new dataset holding the given rows, in order.
    pub fn subset(&self, rows: &[usize], name: &str, keep_labels: bool) -> DomainDataset {
        let mut signals = Vec::with_capacity(rows.len() * self.m);
        for &r in rows {
            signals.extend_from_slice(&self.signals[r * self.m..(r + 1) * self.m]);
        }
        let labels = match (&self.labels, keep_labels) {
            (Some(l), true) => Some(rows.iter().map(|&r| l[r]).collect()),
            _ => None,
        };
        DomainDataset {
            name: name.to_string(),
            n: rows.len(),
            m: self.m,
            classes: self.classes,
            signals,
            labels,
        }
    }
}

/// Train/test partition plan. Partitions are disjoint and cover the rows.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.train_fraction) {
            return Err(Error::Config(format!(
                "train_fraction must be in [0, 1], got {}",
                self.train_fraction
            )));
        }
        Ok(())
    }

    /// Deterministic shuffled partition of `n` rows. The stream is derived
    /// from the split seed and the dataset name, so the same dataset always
    /// splits the same way under one seed regardless of load order.
    pub fn split(&self, n: usize, dataset_name: &str) -> Result<(Vec<usize>, Vec<usize>)> {
        self.validate()?;
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = stream(self.seed, &format!("split/{dataset_name}"));
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng);
        let n_train = (self.train_fraction * n as f64).floor() as usize;
        let test = order.split_off(n_train);
        Ok((order, test))
    }
}

/// Global z-score statistics of one dataset's train split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: f64,
    pub std: f64,
}

impl NormStats {
    /// Mean and population standard deviation over the listed rows. A
    /// constant signal gets unit scale so normalization stays defined.
    pub fn from_rows(ds: &DomainDataset, rows: &[usize]) -> Result<NormStats> {
        if rows.is_empty() {
            return Err(Error::Data(format!("dataset {}: no rows to compute statistics", ds.name)));
        }
        let count = (rows.len() * ds.m) as f64;
        let mut sum = 0.0f64;
        for &r in rows {
            for &v in &ds.signals[r * ds.m..(r + 1) * ds.m] {
                sum += v as f64;
            }
        }
        let mean = sum / count;
        let mut var = 0.0f64;
        for &r in rows {
            for &v in &ds.signals[r * ds.m..(r + 1) * ds.m] {
                let d = v as f64 - mean;
                var += d * d;
            }
        }
        let std = (var / count).sqrt();
        Ok(NormStats { mean, std: if std > 1e-12 { std } else { 1.0 } })
    }

    pub fn apply(&self, v: f32) -> f64 {
        (v as f64 - self.mean) / self.std
    }
}

/// Builds the mixed middle domain: half of each side, sampled uniformly
/// without replacement, unlabeled, fixed for the whole run.
///
/// Size is floor(N_S/2) + floor(N_T/2).
pub fn build_intermediate(
    source: &DomainDataset,
    target: &DomainDataset,
    seed: u64,
) -> Result<DomainDataset> {
    if source.n == 0 || target.n == 0 {
        return Err(Error::Data("intermediate domain needs non-empty source and target".into()));
    }
    if source.m != target.m {
        return Err(Error::Data(format!(
            "intermediate domain: source length {} vs target length {}",
            source.m, target.m
        )));
    }
    let mut rng = stream(seed, "intermediate");
    use rand::seq::SliceRandom;
    let mut pick = |n: usize, take: usize| -> Vec<usize> {
        let mut rows: Vec<usize> = (0..n).collect();
        rows.shuffle(&mut rng);
        rows.truncate(take);
        rows
    };
    let s_rows = pick(source.n, source.n / 2);
    let t_rows = pick(target.n, target.n / 2);
    let mut mixed = source.subset(&s_rows, "intermediate", false);
    let t_half = target.subset(&t_rows, "intermediate", false);
    mixed.signals.extend_from_slice(&t_half.signals);
    mixed.n += t_half.n;
    mixed.classes = source.classes;
    Ok(mixed)
}

/// Per-domain shuffling batch source. Each pass hands out every row exactly
/// once in shuffled order; when fewer than `batch` rows remain, the pass
/// ends (ragged tail dropped) and the next pass reshuffles.
pub struct DomainSampler {
    order: Vec<usize>,
    cursor: usize,
    rng: rand_chacha::ChaCha8Rng,
}

impl DomainSampler {
    pub fn new(n: usize, seed: u64, domain_label: &str) -> DomainSampler {
        let mut s = DomainSampler {
            order: (0..n).collect(),
            cursor: 0,
            rng: stream(seed, &format!("batch/{domain_label}")),
        };
        s.reshuffle();
        s
    }

    fn reshuffle(&mut self) {
        use rand::seq::SliceRandom;
        self.order.shuffle(&mut self.rng);
        self.cursor = 0;
    }

    /// Next `batch` row indices, recycling with a reshuffle at pass end.
    pub fn next_batch(&mut self, batch: usize) -> Result<&[usize]> {
        if batch < 2 {
            return Err(Error::Config(format!("batch size must be at least 2, got {batch}")));
        }
        if self.order.len() < batch {
            return Err(Error::Data(format!(
                "domain has {} samples, fewer than one batch of {batch}",
                self.order.len()
            )));
        }
        if self.cursor + batch > self.order.len() {
            self.reshuffle();
        }
        let out = &self.order[self.cursor..self.cursor + batch];
        self.cursor += batch;
        Ok(out)
    }
}

/// Materializes rows as a normalized [B, 1, m] tensor buffer plus labels
/// when the dataset has them.
pub fn assemble_batch<T: Scalar>(
    ds: &DomainDataset,
    rows: &[usize],
    stats: &NormStats,
) -> (Vec<T>, Option<Vec<usize>>) {
    let mut out = Vec::with_capacity(rows.len() * ds.m);
    for &r in rows {
        for &v in &ds.signals[r * ds.m..(r + 1) * ds.m] {
            out.push(T::from_f64(stats.apply(v)));
        }
    }
    let labels = ds
        .labels
        .as_ref()
        .map(|l| rows.iter().map(|&r| l[r] as usize).collect());
    (out, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(n: usize, m: usize, labeled: bool) -> DomainDataset {
        DomainDataset {
            name: "toy".into(),
            n,
            m,
            classes: 3,
            signals: (0..n * m).map(|i| i as f32 * 0.5 - 1.0).collect(),
            labels: labeled.then(|| (0..n).map(|i| (i % 3) as u8).collect()),
        }
    }

    #[test]
    fn intermediate_size_is_sum_of_floored_halves() {
        for (ns, nt) in [(100, 60), (2, 2), (7, 9), (5, 2), (33, 64)] {
            let s = toy(ns, 4, true);
            let t = toy(nt, 4, false);
            let mid = build_intermediate(&s, &t, 11).unwrap();
            assert_eq!(mid.n, ns / 2 + nt / 2, "ns={ns} nt={nt}");
            assert!(mid.labels.is_none());
        }
    }

    #[test]
    fn intermediate_rows_come_from_inputs_without_duplication() {
        let s = toy(6, 3, true);
        let mut t = toy(8, 3, false);
        // Make target rows distinguishable from source rows.
        for v in &mut t.signals {
            *v += 1000.0;
        }
        let mid = build_intermediate(&s, &t, 5).unwrap();
        assert_eq!(mid.n, 3 + 4);
        let row = |ds: &DomainDataset, i: usize| ds.signals[i * ds.m..(i + 1) * ds.m].to_vec();
        let s_rows: Vec<_> = (0..s.n).map(|i| row(&s, i)).collect();
        let t_rows: Vec<_> = (0..t.n).map(|i| row(&t, i)).collect();
        let mut seen = Vec::new();
        for i in 0..mid.n {
            let r = row(&mid, i);
            assert!(
                s_rows.contains(&r) || t_rows.contains(&r),
                "row {i} not from either input"
            );
            // Toy rows are pairwise distinct, so sampling without
            // replacement means no repeats in the mixture.
            assert!(!seen.contains(&r), "row {i} duplicated");
            seen.push(r);
        }
    }

    #[test]
    fn split_partitions_are_disjoint_and_cover() {
        let spec = SplitSpec { train_fraction: 0.8, seed: 3 };
        let (train, test) = spec.split(25, "toy").unwrap();
        assert_eq!(train.len(), 20);
        assert_eq!(test.len(), 5);
        let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..25).collect::<Vec<_>>());
    }

    #[test]
    fn sampler_passes_are_unique_and_recycle_reshuffles() {
        let mut s = DomainSampler::new(10, 7, "source");
        let a: Vec<usize> = s.next_batch(4).unwrap().to_vec();
        let b: Vec<usize> = s.next_batch(4).unwrap().to_vec();
        // Within one pass no index repeats.
        let mut seen: Vec<usize> = a.iter().chain(&b).copied().collect();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), 8);
        // Third batch would need 12 of 10: the ragged tail is dropped and a
        // fresh pass begins, again valid indices.
        let c: Vec<usize> = s.next_batch(4).unwrap().to_vec();
        assert!(c.iter().all(|&i| i < 10));
    }

    #[test]
    fn sampler_rejects_undersized_domains_and_batches() {
        let mut s = DomainSampler::new(3, 7, "source");
        assert!(s.next_batch(1).is_err());
        assert!(s.next_batch(4).is_err());
    }

    #[test]
    fn norm_stats_standardize_train_rows() {
        let ds = toy(4, 2, false);
        let rows = [0, 1, 2, 3];
        let st = NormStats::from_rows(&ds, &rows).unwrap();
        let normalized: Vec<f64> = ds.signals.iter().map(|&v| st.apply(v)).collect();
        let mean: f64 = normalized.iter().sum::<f64>() / normalized.len() as f64;
        let var: f64 =
            normalized.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / normalized.len() as f64;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-9);
    }
}
