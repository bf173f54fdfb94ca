//! The four networks: convolutional encoder, mirrored decoder, MLP
//! classifier, and the prediction-conditioned domain discriminator.
//!
//! Parameters live outside any tape in a flat, creation-ordered store so the
//! optimizer can walk them uniformly. Each training step binds them onto a
//! fresh tape as leaves; evaluation binds with gradients off, which keeps
//! the tape from recording at all.
//!
//! Initialization draws from one named stream per network, so adding or
//! removing the decoder or discriminator never shifts another network's
//! initial weights. Dropout draws from one named stream per layer.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::PoolIndices;
use crate::rng::stream;
use crate::scalar::Scalar;
use crate::tape::{Tape, TensorId};

/// How the discriminator conditions on classifier predictions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Conditioning {
    /// Features and class probabilities side by side: width F + C.
    Concat,
    /// All feature-probability products: width F * C.
    OuterFlatten,
}

fn default_input_len() -> usize {
    512
}
fn default_classes() -> usize {
    3
}
fn default_channels() -> usize {
    64
}
fn default_kernel() -> usize {
    9
}
fn default_dropout() -> f64 {
    0.4
}
fn default_adaptive_out() -> usize {
    2
}
fn default_hidden() -> usize {
    128
}
fn default_conditioning() -> Conditioning {
    Conditioning::Concat
}

/// Architecture hyperparameters. `input_len` and `classes` are taken from
/// the dataset at training time; the rest default to the reference sizes.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    #[serde(default = "default_input_len")]
    pub input_len: usize,
    #[serde(default = "default_classes")]
    pub classes: usize,
    #[serde(default = "default_channels")]
    pub channels: usize,
    #[serde(default = "default_kernel")]
    pub kernel: usize,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
    #[serde(default = "default_adaptive_out")]
    pub adaptive_out: usize,
    #[serde(default = "default_hidden")]
    pub classifier_hidden: usize,
    #[serde(default = "default_hidden")]
    pub disc_hidden: usize,
    #[serde(default = "default_conditioning")]
    pub conditioning: Conditioning,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            input_len: default_input_len(),
            classes: default_classes(),
            channels: default_channels(),
            kernel: default_kernel(),
            dropout: default_dropout(),
            adaptive_out: default_adaptive_out(),
            classifier_hidden: default_hidden(),
            disc_hidden: default_hidden(),
            conditioning: default_conditioning(),
        }
    }
}

impl NetConfig {
    /// Feature width after the encoder head.
    pub fn feature_dim(&self) -> usize {
        self.channels * self.adaptive_out
    }

    /// Signal lengths after each of the three halving pools.
    pub fn pooled_lens(&self) -> [usize; 3] {
        let l1 = self.input_len.div_ceil(2);
        let l2 = l1.div_ceil(2);
        let l3 = l2.div_ceil(2);
        [l1, l2, l3]
    }

    /// Discriminator input width under the configured conditioning.
    pub fn disc_in(&self) -> usize {
        match self.conditioning {
            Conditioning::Concat => self.feature_dim() + self.classes,
            Conditioning::OuterFlatten => self.feature_dim() * self.classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel < 3 || self.kernel % 2 == 0 {
            return Err(Error::Config(format!(
                "kernel must be odd and at least 3, got {}",
                self.kernel
            )));
        }
        let min_len = self.kernel * 8;
        if self.input_len < min_len {
            return Err(Error::Config(format!(
                "input_len {} is below the required minimum {} for kernel {}",
                self.input_len, min_len, self.kernel
            )));
        }
        if self.classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {}", self.classes)));
        }
        if self.channels == 0 || self.classifier_hidden == 0 || self.disc_hidden == 0 {
            return Err(Error::Config("channels and hidden widths must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must be in [0, 1), got {}",
                self.dropout
            )));
        }
        let l3 = self.pooled_lens()[2];
        if self.adaptive_out == 0 || self.adaptive_out > l3 {
            return Err(Error::Config(format!(
                "adaptive_out {} must be in 1..={} (the post-pool length for input_len {})",
                self.adaptive_out, l3, self.input_len
            )));
        }
        Ok(())
    }
}

/// One parameter tensor with its stable name.
#[derive(Debug, Clone)]
pub struct Param<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<T>,
}

/// All trainable parameters, in creation order.
#[derive(Debug, Clone)]
pub struct Networks<T> {
    pub cfg: NetConfig,
    pub params: Vec<Param<T>>,
    pub has_decoder: bool,
    pub has_discriminator: bool,
}

/// Dropout behaviour for one bound pass.
pub enum TrainMode<'a> {
    /// Dropout active, masks drawn from the per-layer streams in order.
    Train { rngs: &'a mut [ChaCha8Rng; 3] },
    /// Dropout off; nothing is recorded if parameters are bound frozen.
    Eval,
}

/// Kaiming-uniform fill: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
fn kaiming<T: Scalar>(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Vec<T> {
    let bound = (1.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    (0..n).map(|_| T::from_f64(rng.random_range(-bound..bound))).collect()
}

/// Appends a weight (Kaiming-filled) and its zero bias. Bias length is
/// explicit because transposed conv weights keep C_out in axis 1.
fn push_pair<T: Scalar>(
    params: &mut Vec<Param<T>>,
    rng: &mut ChaCha8Rng,
    base: &str,
    shape: Vec<usize>,
    fan_in: usize,
    bias_len: usize,
) {
    let values = kaiming::<T>(rng, &shape, fan_in);
    params.push(Param { name: format!("{base}.weight"), shape, values });
    params.push(Param { name: format!("{base}.bias"), shape: vec![bias_len], values: vec![T::zero(); bias_len] });
}

impl<T: Scalar> Networks<T> {
    /// Initializes parameters from per-network streams of `seed`.
    pub fn init(cfg: &NetConfig, seed: u64, with_decoder: bool, with_discriminator: bool) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.channels;
        let k = cfg.kernel;
        let f = cfg.feature_dim();
        let l3 = cfg.pooled_lens()[2];
        let mut params = Vec::new();

        let mut enc = stream(seed, "init/encoder");
        push_pair(&mut params, &mut enc, "enc.conv1", vec![c, 1, k], k, c);
        push_pair(&mut params, &mut enc, "enc.conv2", vec![c, c, k], c * k, c);
        push_pair(&mut params, &mut enc, "enc.conv3", vec![c, c, k], c * k, c);

        if with_decoder {
            let mut dec = stream(seed, "init/decoder");
            push_pair(&mut params, &mut dec, "dec.bridge", vec![c * l3, f], f, c * l3);
            // Transposed conv weights are [C_in, C_out, K]; fan-in counts
            // the contributions per output position, C_in * K.
            push_pair(&mut params, &mut dec, "dec.deconv3", vec![c, c, k], c * k, c);
            push_pair(&mut params, &mut dec, "dec.deconv2", vec![c, c, k], c * k, c);
            push_pair(&mut params, &mut dec, "dec.deconv1", vec![c, 1, k], c * k, 1);
        }

        let mut cls = stream(seed, "init/classifier");
        push_pair(&mut params, &mut cls, "cls.fc1", vec![cfg.classifier_hidden, f], f, cfg.classifier_hidden);
        push_pair(&mut params, &mut cls, "cls.fc2", vec![cfg.classes, cfg.classifier_hidden], cfg.classifier_hidden, cfg.classes);

        if with_discriminator {
            let mut dis = stream(seed, "init/discriminator");
            let d_in = cfg.disc_in();
            push_pair(&mut params, &mut dis, "dis.fc1", vec![cfg.disc_hidden, d_in], d_in, cfg.disc_hidden);
            push_pair(&mut params, &mut dis, "dis.fc2", vec![1, cfg.disc_hidden], cfg.disc_hidden, 1);
        }

        Ok(Networks { cfg: cfg.clone(), params, has_decoder: with_decoder, has_discriminator: with_discriminator })
    }

    /// Per-layer dropout streams for one run.
    pub fn dropout_streams(seed: u64) -> [ChaCha8Rng; 3] {
        [
            stream(seed, "dropout/enc1"),
            stream(seed, "dropout/enc2"),
            stream(seed, "dropout/enc3"),
        ]
    }

    /// Places every parameter on `tape`. `trainable` binds with gradients;
    /// pass false for evaluation so nothing is recorded.
    pub fn bind<'n>(&'n self, tape: &mut Tape<T>, trainable: bool) -> Result<Bound<'n, T>> {
        let ids = self
            .params
            .iter()
            .map(|p| tape.leaf(&p.shape, p.values.clone(), trainable))
            .collect::<Result<Vec<_>>>()?;
        Ok(Bound { nets: self, ids })
    }

    pub fn param_index(&self, name: &str) -> usize {
        self.params
            .iter()
            .position(|p| p.name == name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }
}

/// Encoder outputs: pooled feature vector plus the pool bookkeeping the
/// decoder needs to invert each stage.
pub struct Encoded {
    pub h: TensorId,
    pub pools: Vec<PoolIndices>,
}

/// Networks bound onto one tape for one pass.
pub struct Bound<'n, T> {
    nets: &'n Networks<T>,
    pub ids: Vec<TensorId>,
}

impl<'n, T: Scalar> Bound<'n, T> {
    fn id(&self, name: &str) -> TensorId {
        self.ids[self.nets.param_index(name)]
    }

    /// Signal [B, 1, input_len] -> features [B, feature_dim]. Three
    /// conv/relu/dropout/pool stages, adaptive average pooling, flatten.
    pub fn encode(&self, tape: &mut Tape<T>, x: TensorId, mode: TrainMode<'_>) -> Result<Encoded> {
        let cfg = &self.nets.cfg;
        let pad = cfg.kernel / 2;
        let (train, mut rngs) = match mode {
            TrainMode::Train { rngs } => (true, Some(rngs)),
            TrainMode::Eval => (false, None),
        };
        let mut cur = x;
        let mut pools = Vec::with_capacity(3);
        for (li, name) in ["enc.conv1", "enc.conv2", "enc.conv3"].iter().enumerate() {
            let w = self.id(&format!("{name}.weight"));
            let b = self.id(&format!("{name}.bias"));
            cur = tape.conv1d(cur, w, b, 1, pad)?;
            cur = tape.relu(cur)?;
            cur = match rngs.as_mut() {
                Some(r) => tape.dropout(cur, cfg.dropout, &mut r[li], train)?,
                None => cur,
            };
            let (pooled, idx) = tape.maxpool1d(cur, 2)?;
            cur = pooled;
            pools.push(idx);
        }
        let pooled = tape.adaptive_avg_pool1d(cur, cfg.adaptive_out)?;
        let batch = tape.shape(pooled)[0];
        let h = tape.reshape(pooled, &[batch, cfg.feature_dim()])?;
        Ok(Encoded { h, pools })
    }

    /// Features [B, feature_dim] -> reconstruction [B, 1, input_len].
    /// Bridge to the deepest conv length, then three unpool/deconv stages
    /// mirroring the encoder in reverse.
    pub fn decode(&self, tape: &mut Tape<T>, h: TensorId, pools: &[PoolIndices]) -> Result<TensorId> {
        if !self.nets.has_decoder {
            return Err(Error::Config("decoder was not initialized".into()));
        }
        if pools.len() != 3 {
            return Err(Error::Shape(format!("expected 3 pool records, got {}", pools.len())));
        }
        let cfg = &self.nets.cfg;
        let pad = cfg.kernel / 2;
        let l3 = cfg.pooled_lens()[2];
        let batch = tape.shape(h)[0];
        let mut cur = tape.linear(h, self.id("dec.bridge.weight"), self.id("dec.bridge.bias"))?;
        cur = tape.reshape(cur, &[batch, cfg.channels, l3])?;
        for (name, idx) in [("dec.deconv3", &pools[2]), ("dec.deconv2", &pools[1]), ("dec.deconv1", &pools[0])] {
            cur = tape.maxunpool1d(cur, idx, idx.in_len)?;
            let w = self.id(&format!("{name}.weight"));
            let b = self.id(&format!("{name}.bias"));
            cur = tape.conv_transpose1d(cur, w, b, 1, pad)?;
        }
        Ok(cur)
    }

    /// Features [B, feature_dim] -> class logits [B, classes].
    pub fn classify(&self, tape: &mut Tape<T>, h: TensorId) -> Result<TensorId> {
        let z = tape.linear(h, self.id("cls.fc1.weight"), self.id("cls.fc1.bias"))?;
        let z = tape.relu(z)?;
        tape.linear(z, self.id("cls.fc2.weight"), self.id("cls.fc2.bias"))
    }

    /// Features plus class probabilities -> domain logit [B, 1]. The
    /// conditioned input passes through gradient reversal with `coeff`, so
    /// the discriminator itself descends while everything upstream ascends.
    pub fn discriminate(&self, tape: &mut Tape<T>, h: TensorId, probs: TensorId, coeff: f64) -> Result<TensorId> {
        self.discriminate_with(tape, h, probs, Some(coeff))
    }

    /// As `discriminate`, but the reversal is optional. `None` builds the
    /// plain chain-rule graph, which gradient verification uses as the
    /// finite-difference reference for the reversed one.
    pub fn discriminate_with(
        &self,
        tape: &mut Tape<T>,
        h: TensorId,
        probs: TensorId,
        reversal: Option<f64>,
    ) -> Result<TensorId> {
        if !self.nets.has_discriminator {
            return Err(Error::Config("discriminator was not initialized".into()));
        }
        let joined = match self.nets.cfg.conditioning {
            Conditioning::Concat => tape.concat(h, probs, 1)?,
            Conditioning::OuterFlatten => tape.outer_flatten(h, probs)?,
        };
        let gated = match reversal {
            Some(coeff) => tape.grad_reverse(joined, T::from_f64(coeff))?,
            None => joined,
        };
        let z = tape.linear(gated, self.id("dis.fc1.weight"), self.id("dis.fc1.bias"))?;
        let z = tape.relu(z)?;
        tape.linear(z, self.id("dis.fc2.weight"), self.id("dis.fc2.bias"))
    }
}
