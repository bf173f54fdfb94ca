//! Synthetic distant-domain benchmark generator.
//!
//! Each class is a continuous tone at a class-specific base frequency plus
//! Gaussian-windowed bursts of the same frequency and Gaussian noise. The
//! target domain multiplies every class's frequency and amplitude, which
//! slides the class manifolds toward their neighbours: a classifier trained
//! on the source alone starts confusing adjacent classes, while an aligned
//! feature space can keep them apart. A configurable fraction of source
//! samples is instead drawn at an off-class frequency inside the same band
//! with heavy-tailed noise, while keeping their class labels: these are
//! deliberate negative-transfer carriers that supervised training absorbs
//! as label noise and selection should learn to drop.
//!
//! Generation validates itself: a band-energy statistic (spectral energy at
//! the labelled class's frequencies against the strongest off-label probe)
//! must separate distant from regular source samples with at least 95%
//! accuracy, otherwise the generator refuses the spec as undetectably
//! poisoned.

use rand::Rng;
use rand_distr::{Distribution, Normal, StudentT};
use serde::{Deserialize, Serialize};

use crate::data::DomainDataset;
use crate::error::{Error, Result};
use crate::rng::stream;

/// Base frequency step: class c oscillates at (c+1) times this many cycles
/// per window in the source domain.
const BASE_CYCLES: f64 = 4.0;
const BURSTS: usize = 3;
/// Burst amplitude relative to the tone, kept small so the spectral
/// signature stays concentrated at the tone frequency.
const BURST_AMP: f64 = 0.5;
/// Half-width, in cycles, of the exclusion zone around a label's own
/// frequencies when drawing a distant sample's frequency. Wide enough that
/// spectral leakage cannot make a distant sample look on-label.
const GUARD_CYCLES: f64 = 1.25;

fn default_freq_shift() -> f64 {
    1.2
}
fn default_amp_shift() -> f64 {
    1.3
}
fn default_noise_sigma() -> f64 {
    0.3
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub classes: usize,
    pub m: usize,
    pub n_per_domain: usize,
    pub distant_fraction: f64,
    /// Target-domain multiplier on every class frequency.
    #[serde(default = "default_freq_shift")]
    pub freq_shift: f64,
    /// Target-domain multiplier on burst amplitude.
    #[serde(default = "default_amp_shift")]
    pub amp_shift: f64,
    #[serde(default = "default_noise_sigma")]
    pub noise_sigma: f64,
}

impl Default for SynthSpec {
    /// The desk-scale benchmark scenario.
    fn default() -> Self {
        SynthSpec {
            classes: 3,
            m: 512,
            n_per_domain: 600,
            distant_fraction: 0.3,
            freq_shift: default_freq_shift(),
            amp_shift: default_amp_shift(),
            noise_sigma: default_noise_sigma(),
        }
    }
}

impl SynthSpec {
    /// Highest class frequency across both domains, in cycles per window.
    fn max_class_cycles(&self) -> f64 {
        BASE_CYCLES * self.classes as f64 * self.freq_shift.max(1.0)
    }

    /// Source and target frequencies of one class, in cycles per window.
    fn class_freqs(&self, class: usize) -> (f64, f64) {
        let f = BASE_CYCLES * (class + 1) as f64;
        (f, f * self.freq_shift)
    }

    /// Distant band, in cycles per window. It deliberately overlaps the
    /// class frequencies so distant samples land between and across class
    /// manifolds instead of in a separate, ignorable region.
    fn distant_band(&self) -> (f64, f64) {
        (0.75 * BASE_CYCLES, self.max_class_cycles() + 0.5 * BASE_CYCLES)
    }

    /// Sub-intervals of the distant band a sample labelled `class` may draw
    /// its frequency from: the band minus a guard interval around the
    /// label's own source and target frequencies. Other classes'
    /// frequencies stay available, which is what makes distant samples
    /// poisonous to plain supervised training.
    fn distant_segments(&self, class: usize) -> Vec<(f64, f64)> {
        let (band_lo, band_hi) = self.distant_band();
        let (fs, ft) = self.class_freqs(class);
        let mut holes = [(fs - GUARD_CYCLES, fs + GUARD_CYCLES), (ft - GUARD_CYCLES, ft + GUARD_CYCLES)];
        holes.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut segments = Vec::new();
        let mut cursor = band_lo;
        for (lo, hi) in holes {
            if lo > cursor {
                segments.push((cursor, lo.min(band_hi)));
            }
            cursor = cursor.max(hi);
        }
        if cursor < band_hi {
            segments.push((cursor, band_hi));
        }
        segments.retain(|(lo, hi)| hi > lo);
        segments
    }

    /// Collects every violation rather than stopping at the first, so a
    /// bad spec file is fixable in one pass.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.classes < 2 {
            problems.push(format!("classes: need at least 2, got {}", self.classes));
        }
        if self.n_per_domain < 2 {
            problems.push(format!("n_per_domain: need at least 2, got {}", self.n_per_domain));
        }
        if self.classes >= 2 && self.n_per_domain % self.classes != 0 {
            problems.push(format!(
                "n_per_domain: {} is not divisible by {} classes, so counts cannot balance exactly",
                self.n_per_domain, self.classes
            ));
        }
        if !(0.0..=1.0).contains(&self.distant_fraction) {
            problems.push(format!(
                "distant_fraction: must be in [0, 1], got {}",
                self.distant_fraction
            ));
        }
        if self.freq_shift <= 0.0 {
            problems.push(format!("freq_shift: must be positive, got {}", self.freq_shift));
        }
        if self.amp_shift <= 0.0 {
            problems.push(format!("amp_shift: must be positive, got {}", self.amp_shift));
        }
        if !(self.noise_sigma >= 0.0) {
            problems.push(format!("noise_sigma: must be non-negative, got {}", self.noise_sigma));
        }
        // Every class tone needs at least 16 samples per cycle at the
        // highest frequency in play, or adjacent classes blur together.
        let needed = (16.0 * self.max_class_cycles()).ceil() as usize;
        if self.m < needed {
            problems.push(format!(
                "m: {} is too small for {} classes at frequency shift {}; need at least {}",
                self.m, self.classes, self.freq_shift, needed
            ));
        }
        if self.distant_fraction > 0.0 && self.classes >= 2 && self.freq_shift > 0.0 {
            for c in 0..self.classes {
                let mass: f64 = self.distant_segments(c).iter().map(|(lo, hi)| hi - lo).sum();
                if mass < 1.0 {
                    problems.push(format!(
                        "distant band: excluding class {c}'s guard interval leaves only {mass:.2} cycles to draw from; need at least 1"
                    ));
                }
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid synthesis spec: {}", problems.join("; "))))
        }
    }
}

/// Diagnostics from one generation run.
#[derive(Debug, Clone, Serialize)]
pub struct GenReport {
    /// Accuracy of the band-energy statistic at recovering which source
    /// samples are distant. 1.0 when distant_fraction is 0.
    pub band_energy_accuracy: f64,
    pub distant_count: usize,
}

/// Spectral energy at one frequency (cycles per window) via the Goertzel
/// recurrence; no transform library needed for a handful of probe bins.
fn goertzel_energy(x: &[f32], cycles: f64) -> f64 {
    let m = x.len() as f64;
    let w = 2.0 * std::f64::consts::PI * cycles / m;
    let coeff = 2.0 * w.cos();
    let (mut s1, mut s2) = (0.0f64, 0.0f64);
    for &v in x {
        let s0 = v as f64 + coeff * s1 - s2;
        s2 = s1;
        s1 = s0;
    }
    s1 * s1 + s2 * s2 - coeff * s1 * s2
}

/// Energy at the labelled class's own frequencies over that plus the
/// strongest off-label probe. Regular samples concentrate energy on-label
/// and score near 1; distant samples carry their energy elsewhere in the
/// band and score near 0. Probes step the band at half-cycle spacing, so
/// any tone in it lands within a quarter cycle of some probe.
fn label_energy_ratio(x: &[f32], spec: &SynthSpec, class: usize) -> f64 {
    let (fs, ft) = spec.class_freqs(class);
    let label_e = goertzel_energy(x, fs) + goertzel_energy(x, ft);
    let (band_lo, band_hi) = spec.distant_band();
    let mut off_e = 0.0f64;
    let steps = ((band_hi - band_lo) / 0.5).ceil() as usize;
    for p in 0..=steps {
        let f = band_lo + (band_hi - band_lo) * p as f64 / steps as f64;
        if (f - fs).abs() < GUARD_CYCLES || (f - ft).abs() < GUARD_CYCLES {
            continue;
        }
        off_e = off_e.max(goertzel_energy(x, f));
    }
    label_e / (label_e + off_e + 1e-30)
}

struct RowKind {
    class: u8,
    distant: bool,
}

/// Uniform draw over a union of disjoint intervals, areas already
/// validated non-empty. One rng call regardless of segment count keeps the
/// stream layout independent of the geometry.
fn draw_from_segments(rng: &mut rand_chacha::ChaCha8Rng, segments: &[(f64, f64)]) -> f64 {
    let mass: f64 = segments.iter().map(|(lo, hi)| hi - lo).sum();
    let mut u = rng.random_range(0.0..mass);
    for &(lo, hi) in segments {
        let w = hi - lo;
        if u < w {
            return lo + u;
        }
        u -= w;
    }
    segments.last().map(|&(_, hi)| hi).unwrap_or(0.0)
}

fn gen_domain(
    spec: &SynthSpec,
    rng: &mut rand_chacha::ChaCha8Rng,
    name: &str,
    freq_mul: f64,
    amp_mul: f64,
    distant_fraction: f64,
) -> Result<(DomainDataset, Vec<bool>)> {
    let m = spec.m;
    let per_class = spec.n_per_domain / spec.classes;
    let n_distant_per_class = (distant_fraction * per_class as f64).floor() as usize;
    let normal = Normal::new(0.0, spec.noise_sigma.max(1e-12)).map_err(|e| {
        Error::Config(format!("noise distribution: {e}"))
    })?;
    let heavy = StudentT::new(3.0).map_err(|e| Error::Config(format!("heavy-tail distribution: {e}")))?;
    let segments: Vec<Vec<(f64, f64)>> = (0..spec.classes).map(|c| spec.distant_segments(c)).collect();

    // Lay out rows class by class, then shuffle the whole table so distant
    // rows are not positionally clustered.
    let mut kinds = Vec::with_capacity(spec.n_per_domain);
    for c in 0..spec.classes {
        for i in 0..per_class {
            kinds.push(RowKind { class: c as u8, distant: i < n_distant_per_class });
        }
    }
    use rand::seq::SliceRandom;
    kinds.shuffle(rng);

    let mut signals = Vec::with_capacity(spec.n_per_domain * m);
    let mut labels = Vec::with_capacity(spec.n_per_domain);
    let mut distant_flags = Vec::with_capacity(spec.n_per_domain);
    let width = m as f64 / 16.0;
    let tau = 2.0 * std::f64::consts::PI;
    for kind in &kinds {
        let (freq, amp) = if kind.distant {
            (draw_from_segments(rng, &segments[kind.class as usize]), 1.0)
        } else {
            (BASE_CYCLES * (kind.class as f64 + 1.0) * freq_mul, amp_mul)
        };
        let mut row = vec![0.0f64; m];
        let phase = rng.random_range(0.0..tau);
        for (t, v) in row.iter_mut().enumerate() {
            *v = amp * (tau * freq * t as f64 / m as f64 + phase).sin();
        }
        for _ in 0..BURSTS {
            let center = rng.random_range(0.15 * m as f64..0.85 * m as f64);
            let phase = rng.random_range(0.0..tau);
            for (t, v) in row.iter_mut().enumerate() {
                let dt = t as f64 - center;
                let envelope = (-dt * dt / (2.0 * width * width)).exp();
                *v += BURST_AMP * amp * envelope * (tau * freq * t as f64 / m as f64 + phase).sin();
            }
        }
        for v in row.iter_mut() {
            *v += if kind.distant {
                // Heavy-tailed noise marks the unrelated family.
                0.5 * spec.noise_sigma * heavy.sample(rng)
            } else {
                normal.sample(rng)
            };
        }
        signals.extend(row.iter().map(|&v| v as f32));
        labels.push(kind.class);
        distant_flags.push(kind.distant);
    }

    let ds = DomainDataset {
        name: name.to_string(),
        n: spec.n_per_domain,
        m,
        classes: spec.classes,
        signals,
        labels: Some(labels),
    };
    ds.validate()?;
    Ok((ds, distant_flags))
}

/// Generates the source and target domains. Deterministic given the seed.
pub fn gen_synthetic(spec: &SynthSpec, seed: u64) -> Result<(DomainDataset, DomainDataset, GenReport)> {
    spec.validate()?;
    let mut src_rng = stream(seed, "synth/source");
    let mut tgt_rng = stream(seed, "synth/target");
    let (source, flags) = gen_domain(
        spec,
        &mut src_rng,
        "synthetic-source",
        1.0,
        1.0,
        spec.distant_fraction,
    )?;
    let (target, _) = gen_domain(
        spec,
        &mut tgt_rng,
        "synthetic-target",
        spec.freq_shift,
        spec.amp_shift,
        0.0,
    )?;

    let distant_count = flags.iter().filter(|&&d| d).count();
    let band_energy_accuracy = if distant_count == 0 {
        1.0
    } else {
        let labels = source.labels.as_deref().unwrap_or(&[]);
        let mut correct = 0usize;
        for (i, &is_distant) in flags.iter().enumerate() {
            let row = &source.signals[i * spec.m..(i + 1) * spec.m];
            let ratio = label_energy_ratio(row, spec, labels[i] as usize);
            if (ratio < 0.5) == is_distant {
                correct += 1;
            }
        }
        correct as f64 / flags.len() as f64
    };
    if band_energy_accuracy < 0.95 {
        return Err(Error::Numeric(format!(
            "generator self-check failed: band-energy statistic separates distant samples at {:.1}% (need 95%)",
            band_energy_accuracy * 100.0
        )));
    }
    Ok((source, target, GenReport { band_energy_accuracy, distant_count }))
}
