//! Replay-attack detection from codec residual features.
//!
//! The pipeline resynthesizes an utterance with a pitch/envelope vocoder, runs the
//! result through a lossy codec roundtrip, and subtracts the temporal-averaged log
//! spectrograms of the processed copy from the original. What survives the
//! subtraction is content- and speaker-independent channel structure, which is
//! scored by one-class classifiers trained on bonafide audio only.
//!
//! Modules follow the processing order: [`audio_io`] and [`dsp`] provide signal
//! primitives, [`vocoder`] and [`codec`] the resynthesis branch, [`features`] the
//! residual feature and PCA, [`augment`] the training-time augmentations,
//! [`classifiers`] the VAE / OCSVM / AnoGAN scorers, [`eval`] the EER metric,
//! [`synth_corpus`] a self-contained test corpus, and [`pipeline`] the experiment
//! orchestration used by the CLI.

pub mod audio_io;
pub mod augment;
pub mod classifiers;
pub mod codec;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod features;
pub mod parallel;
pub mod pipeline;
pub mod synth_corpus;
pub mod vocoder;

pub use audio_io::AudioClip;
pub use error::{Error, Result};

/// Canonical sample rate for everything past ingestion.
pub const CANONICAL_RATE_HZ: u32 = 16_000;
