//! Desk-scale robust speech recognition: mask-based enhancement, gated
//! recurrent fusion of noisy and enhanced feature streams, and a compact
//! transformer recognizer, trained jointly on a synthetic or user-supplied
//! noisy corpus.
//!
//! The crate is organized along the processing chain:
//!
//! * [`dsp`] — STFT analysis/synthesis, mel filterbanks, SNR-controlled
//!   mixing and waveform-level SNR fusion.
//! * [`autodiff`] — the reverse-mode tape, optimizer and checkpoint format
//!   that every trainable component runs on.
//! * [`nn`] — shared layers (BLSTM stacks, linear projections) built from
//!   tape primitives.
//! * [`enhancement`] — amplitude-mask estimation with the spectrum
//!   approximation loss.
//! * [`fusion`] — parallel feature encoders plus the gated recurrent fusion
//!   block over the noisy and enhanced streams.
//! * [`asr`] — transformer encoder-decoder with greedy/beam decoding and
//!   time/frequency masking augmentation.
//! * [`corpus`] — synthetic corpus generation, manifests and batch loading.
//! * [`pipeline`] — training phases, evaluation tables, mode comparison and
//!   spectrogram dumps; the surface the CLI drives.

pub mod asr;
pub mod autodiff;
pub mod corpus;
pub mod dsp;
pub mod enhancement;
pub mod error;
pub mod fusion;
pub mod nn;
pub mod pipeline;

pub use error::{Error, Result};
