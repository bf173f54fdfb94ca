//! Training engine for online selective adversarial alignment on windowed
//! one-dimensional fault signals.
//!
//! The crate is layered bottom-up:
//!
//! - [`tape`] and [`ops`]: a reverse-mode autodiff arena with the exact
//!   operator set the networks need, generic over [`scalar::Scalar`] so
//!   training runs in f32 while verification runs in f64.
//! - [`nn`]: encoder, decoder, classifier, and conditional domain
//!   discriminator as parameter stores bound per-step onto a tape.
//! - [`loss`], [`select`]: objective terms and the per-batch sample
//!   selection that masks unalignable samples out of the induced loss.
//! - [`data`], [`synth`]: dataset directories, batching, the mixed
//!   intermediate domain, and the synthetic benchmark generator.
//! - [`train`], [`eval`]: the optimization loop with its ablations, and
//!   evaluation, aggregation, and sweep harnesses.
//! - [`gradcheck`]: finite-difference verification of every operator and
//!   network chain.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod loss;
pub mod nn;
pub mod ops;
pub mod rng;
pub mod scalar;
pub mod select;
pub mod synth;
pub mod tape;
pub mod train;

pub use error::{Error, Result};
pub use ops::PoolIndices;
pub use scalar::{Precision, Scalar};
pub use tape::{Tape, TensorId};
