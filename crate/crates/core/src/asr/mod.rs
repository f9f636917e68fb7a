//! Compact speech transformer: convolutional front end over fused
//! feature frames, sinusoidal positions, pre-norm encoder and decoder
//! blocks, label-smoothed cross-entropy training, and greedy or beam
//! decoding over a line-per-token vocabulary.

mod augment;
mod decode;
mod layers;
mod model;

pub use augment::spec_augment;
pub use decode::Hypothesis;
pub use layers::{attention, attention_weights, causal_mask, sinusoidal_pe, FeedForward, MultiHeadAttention};
pub use model::AsrModel;

use crate::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const SOS: usize = 2;
pub const EOS: usize = 3;

/// Reserved rows at the top of every vocabulary file, in id order.
pub const SPECIAL_TOKENS: [&str; 4] = ["<pad>", "<unk>", "<sos>", "<eos>"];

/// Checkpoint name prefix for all recognizer parameters.
pub const PARAM_PREFIX: &str = "asr";

#[derive(Debug, Clone)]
pub struct AsrConfig {
    /// Width of the incoming feature frames.
    pub feat_dim: usize,
    pub d_model: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub enc_blocks: usize,
    pub dec_blocks: usize,
    pub vocab: usize,
    /// Longest decoder input the model accepts (start token included).
    pub max_len: usize,
    /// Two stride-2 3x3 convolution blocks ahead of the encoder.
    pub conv_front: bool,
    pub dropout: f64,
    /// Label smoothing mass spread over the vocabulary in training.
    pub smoothing: f64,
}

impl AsrConfig {
    /// Desk-scale default: 64-wide model, 4 heads, two blocks per side.
    pub fn desk(feat_dim: usize, vocab: usize) -> Self {
        Self {
            feat_dim,
            d_model: 64,
            heads: 4,
            d_ff: 128,
            enc_blocks: 2,
            dec_blocks: 2,
            vocab,
            max_len: 64,
            conv_front: true,
            dropout: 0.1,
            smoothing: 0.1,
        }
    }

    /// Full-scale preset: 512-wide model, six blocks per side.
    pub fn paper(feat_dim: usize, vocab: usize) -> Self {
        Self {
            feat_dim,
            d_model: 512,
            heads: 4,
            d_ff: 1024,
            enc_blocks: 6,
            dec_blocks: 6,
            vocab,
            max_len: 256,
            conv_front: true,
            dropout: 0.1,
            smoothing: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.d_model % self.heads != 0 {
            return Err(Error::invalid(
                "asr_config",
                format!("{} heads do not divide d_model {}", self.heads, self.d_model),
            ));
        }
        if self.vocab < SPECIAL_TOKENS.len() {
            return Err(Error::invalid(
                "asr_config",
                format!("vocabulary of {} cannot hold the {} special tokens", self.vocab, SPECIAL_TOKENS.len()),
            ));
        }
        if self.max_len < 2 {
            return Err(Error::invalid("asr_config", "max_len must be at least 2"));
        }
        if self.enc_blocks == 0 || self.dec_blocks == 0 {
            return Err(Error::invalid("asr_config", "encoder and decoder need at least one block"));
        }
        Ok(())
    }

    /// Flattened width entering the model-dimension projection.
    pub fn front_out_dim(&self) -> usize {
        if self.conv_front {
            self.d_model * self.feat_dim.div_ceil(2).div_ceil(2)
        } else {
            self.feat_dim
        }
    }
}

/// Transcript tokens; never contains padding or the start/end markers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<usize>,
}

impl TokenSequence {
    pub fn new(ids: Vec<usize>, vocab: usize) -> Result<Self> {
        if let Some(bad) = ids.iter().find(|id| **id >= vocab) {
            return Err(Error::invalid(
                "token_sequence",
                format!("id {bad} outside vocabulary of {vocab}"),
            ));
        }
        if let Some(bad) = ids.iter().find(|id| matches!(**id, PAD | SOS | EOS)) {
            return Err(Error::invalid(
                "token_sequence",
                format!("reserved id {bad} inside a transcript"),
            ));
        }
        Ok(Self { ids })
    }

    pub fn empty() -> Self {
        Self { ids: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}
