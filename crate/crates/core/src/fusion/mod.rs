//! Gated recurrent fusion of the noisy and enhanced feature streams.
//!
//! Two parameter-independent BLSTM encoders deepen each stream; a
//! GRU-style cell then interleaves the two streams over repeated fusion
//! stages with a single shared parameter set, operating on every time
//! frame independently. The fused representation is the ReLU-projected
//! concatenation of both encoder outputs and the final hidden state.

use std::fmt;
use std::str::FromStr;

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{uniform_tensor, xavier_tensor, Binding, ParamSet, Tape, Tensor, Var};
use crate::nn::{BlstmStack, Linear};
use crate::{Error, Result};

/// Checkpoint name prefix for all fusion parameters.
pub const PARAM_PREFIX: &str = "fus";

/// How the two feature streams are combined before recognition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionMode {
    /// Multi-stage gated recurrent fusion of both encoded streams.
    Grf,
    /// Plain concatenation of the encoded streams.
    Concat,
    /// Bypass: enhanced features go straight to the recognizer.
    EnhancedOnly,
    /// Bypass: noisy features go straight to the recognizer.
    NoisyOnly,
}

impl FusionMode {
    pub const ALL: [FusionMode; 4] = [
        FusionMode::Grf,
        FusionMode::Concat,
        FusionMode::EnhancedOnly,
        FusionMode::NoisyOnly,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            FusionMode::Grf => "grf",
            FusionMode::Concat => "concat",
            FusionMode::EnhancedOnly => "enhanced_only",
            FusionMode::NoisyOnly => "noisy_only",
        }
    }

    /// Whether this mode trains encoder/fusion parameters at all.
    pub fn uses_encoders(&self) -> bool {
        matches!(self, FusionMode::Grf | FusionMode::Concat)
    }
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "grf" => Ok(FusionMode::Grf),
            "concat" => Ok(FusionMode::Concat),
            "enhanced_only" => Ok(FusionMode::EnhancedOnly),
            "noisy_only" => Ok(FusionMode::NoisyOnly),
            other => Err(Error::invalid(
                "fusion_mode",
                format!("unknown mode '{other}' (grf, concat, enhanced_only, noisy_only)"),
            )),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FusionConfig {
    /// Width of the incoming log-fbank frames.
    pub feat_dim: usize,
    /// LSTM units per direction in each stream encoder.
    pub encoder_hidden: usize,
    pub encoder_layers: usize,
    /// Fusion stages; each stage applies the cell to the noisy stream,
    /// then to the enhanced stream.
    pub stages: usize,
    pub mode: FusionMode,
    /// Width of the projected fused representation.
    pub out_dim: usize,
    pub dropout: f64,
}

impl FusionConfig {
    /// Desk-scale default: single-layer 64-unit encoders, 4 stages,
    /// 64-wide output.
    pub fn desk(feat_dim: usize) -> Self {
        Self {
            feat_dim,
            encoder_hidden: 64,
            encoder_layers: 1,
            stages: 4,
            mode: FusionMode::Grf,
            out_dim: 64,
            dropout: 0.5,
        }
    }

    /// Full-scale preset: two-layer 320-unit encoders, 320-wide output.
    pub fn paper(feat_dim: usize) -> Self {
        Self {
            feat_dim,
            encoder_hidden: 320,
            encoder_layers: 2,
            stages: 4,
            mode: FusionMode::Grf,
            out_dim: 320,
            dropout: 0.5,
        }
    }

    /// Encoder output width (both directions).
    pub fn beta_dim(&self) -> usize {
        2 * self.encoder_hidden
    }

    /// Width of the feature matrix this block hands to the recognizer.
    pub fn fused_dim(&self) -> usize {
        match self.mode {
            FusionMode::Grf => self.out_dim,
            FusionMode::Concat => 2 * self.beta_dim(),
            FusionMode::EnhancedOnly | FusionMode::NoisyOnly => self.feat_dim,
        }
    }
}

/// The fusion block: stream encoders, the shared-parameter fusion cell,
/// and the output projection. Bypass modes carry no parameters.
#[derive(Debug, Clone)]
pub struct FusionBlock {
    pub cfg: FusionConfig,
    enc_noisy: Option<BlstmStack>,
    enc_enhanced: Option<BlstmStack>,
    out: Option<Linear>,
}

impl FusionBlock {
    pub fn init(cfg: FusionConfig, params: &mut ParamSet, rng: &mut ChaCha8Rng) -> Result<Self> {
        if cfg.stages == 0 {
            return Err(Error::invalid("fusion_init", "stages must be at least 1"));
        }
        if cfg.out_dim == 0 {
            return Err(Error::invalid("fusion_init", "out_dim must be at least 1"));
        }
        let (enc_noisy, enc_enhanced, out) = if cfg.mode.uses_encoders() {
            let enc_noisy = BlstmStack::init(
                &format!("{PARAM_PREFIX}.enc_noisy"),
                cfg.feat_dim,
                cfg.encoder_hidden,
                cfg.encoder_layers,
                cfg.dropout,
                params,
                rng,
            )?;
            let enc_enhanced = BlstmStack::init(
                &format!("{PARAM_PREFIX}.enc_enh"),
                cfg.feat_dim,
                cfg.encoder_hidden,
                cfg.encoder_layers,
                cfg.dropout,
                params,
                rng,
            )?;
            let out = if cfg.mode == FusionMode::Grf {
                let hidden = cfg.beta_dim();
                let cat = cfg.beta_dim() + hidden;
                for gate in ["wr", "wz", "wh"] {
                    params.insert(
                        &format!("{PARAM_PREFIX}.grf.{gate}"),
                        xavier_tensor(cat, hidden, rng),
                    )?;
                }
                for bias in ["br", "bz", "bh"] {
                    params.insert(
                        &format!("{PARAM_PREFIX}.grf.{bias}"),
                        Tensor::zeros(vec![hidden]),
                    )?;
                }
                params.insert_frozen(
                    &format!("{PARAM_PREFIX}.grf.h0"),
                    uniform_tensor(vec![hidden], -0.01, 0.01, rng),
                )?;
                Some(Linear::init(
                    &format!("{PARAM_PREFIX}.out"),
                    2 * cfg.beta_dim() + hidden,
                    cfg.out_dim,
                    params,
                    rng,
                )?)
            } else {
                None
            };
            (Some(enc_noisy), Some(enc_enhanced), out)
        } else {
            (None, None, None)
        };
        Ok(Self { cfg, enc_noisy, enc_enhanced, out })
    }

    /// Deep features for both streams from the two independent encoders.
    pub fn encode_streams(
        &self,
        tape: &mut Tape,
        bound: &Binding,
        noisy_fbank: Var,
        enhanced_fbank: Var,
        train: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Var, Var)> {
        let (enc_noisy, enc_enhanced) = match (&self.enc_noisy, &self.enc_enhanced) {
            (Some(n), Some(e)) => (n, e),
            _ => {
                return Err(Error::invalid(
                    "encode_streams",
                    format!("mode {} has no stream encoders", self.cfg.mode),
                ))
            }
        };
        let n_shape = tape.shape(noisy_fbank).to_vec();
        let e_shape = tape.shape(enhanced_fbank).to_vec();
        if n_shape != e_shape {
            return Err(Error::shape(
                "encode_streams",
                format!("noisy {n_shape:?} against enhanced {e_shape:?}"),
            ));
        }
        let beta_noisy = enc_noisy.forward(tape, bound, noisy_fbank, train, rng)?;
        let beta_enhanced = enc_enhanced.forward(tape, bound, enhanced_fbank, train, rng)?;
        Ok((beta_noisy, beta_enhanced))
    }

    /// One fusion step: gates from the concatenated input and hidden
    /// state, reset-gated hidden feeds the candidate, and the update
    /// gate interpolates between the old hidden state and the candidate.
    /// Every frame is fused independently.
    pub fn grf_step(&self, tape: &mut Tape, bound: &Binding, input: Var, h: Var) -> Result<Var> {
        let in_shape = tape.shape(input).to_vec();
        let h_shape = tape.shape(h).to_vec();
        let hidden = self.cfg.beta_dim();
        if in_shape.len() != 2 || h_shape.len() != 2 || in_shape[0] != h_shape[0] {
            return Err(Error::shape(
                "grf_step",
                format!("input {in_shape:?} against hidden {h_shape:?}"),
            ));
        }
        if in_shape[1] != self.cfg.beta_dim() || h_shape[1] != hidden {
            return Err(Error::shape(
                "grf_step",
                format!(
                    "expected input width {} and hidden width {}, got {} and {}",
                    self.cfg.beta_dim(),
                    hidden,
                    in_shape[1],
                    h_shape[1]
                ),
            ));
        }
        let gate = |tape: &mut Tape, x: Var, w: &str, b: &str| -> Result<Var> {
            let z = tape.matmul(x, bound.var(w)?)?;
            tape.add_bias(z, bound.var(b)?)
        };
        let cat = tape.concat_cols(&[input, h])?;
        let reset_pre = gate(tape, cat, "fus.grf.wr", "fus.grf.br")?;
        let reset = tape.sigmoid(reset_pre);
        let update_pre = gate(tape, cat, "fus.grf.wz", "fus.grf.bz")?;
        let update = tape.sigmoid(update_pre);
        let gated_h = tape.mul(reset, h)?;
        let cat_gated = tape.concat_cols(&[input, gated_h])?;
        let cand_pre = gate(tape, cat_gated, "fus.grf.wh", "fus.grf.bh")?;
        let cand = tape.tanh(cand_pre);
        let keep = tape.mul(update, h)?;
        let fade = tape.affine(update, -1.0, 1.0);
        let take = tape.mul(fade, cand)?;
        tape.add(keep, take)
    }

    /// Initial hidden state tiled across `frames` rows.
    fn initial_hidden(&self, tape: &mut Tape, bound: &Binding, frames: usize) -> Result<Var> {
        let hidden = self.cfg.beta_dim();
        let h0 = bound.var("fus.grf.h0")?;
        let row = tape.reshape(h0, vec![1, hidden])?;
        let ones = tape.leaf(Tensor::matrix(frames, 1, vec![1.0; frames])?);
        tape.matmul(ones, row)
    }

    /// Run the full multi-stage fusion over already-encoded streams and
    /// project the result. Each stage feeds the noisy stream, then the
    /// enhanced stream, chaining hidden states throughout.
    pub fn grf_fuse(
        &self,
        tape: &mut Tape,
        bound: &Binding,
        beta_noisy: Var,
        beta_enhanced: Var,
    ) -> Result<Var> {
        if self.cfg.mode != FusionMode::Grf {
            return Err(Error::invalid(
                "grf_fuse",
                format!("mode {} is not grf", self.cfg.mode),
            ));
        }
        let n_shape = tape.shape(beta_noisy).to_vec();
        let e_shape = tape.shape(beta_enhanced).to_vec();
        if n_shape != e_shape {
            return Err(Error::shape(
                "grf_fuse",
                format!("noisy {n_shape:?} against enhanced {e_shape:?}"),
            ));
        }
        let frames = n_shape[0];
        let mut h = self.initial_hidden(tape, bound, frames)?;
        for _ in 0..self.cfg.stages {
            h = self.grf_step(tape, bound, beta_noisy, h)?;
            h = self.grf_step(tape, bound, beta_enhanced, h)?;
        }
        let cat = tape.concat_cols(&[beta_noisy, h, beta_enhanced])?;
        let out = self.out.as_ref().expect("grf mode carries an output projection");
        let projected = out.forward(tape, bound, cat)?;
        Ok(tape.relu(projected))
    }

    /// Mode dispatch: produce the single feature matrix handed to the
    /// recognizer. Bypass modes return their input unchanged.
    pub fn fuse(
        &self,
        tape: &mut Tape,
        bound: &Binding,
        noisy_fbank: Var,
        enhanced_fbank: Var,
        train: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Var> {
        match self.cfg.mode {
            FusionMode::Grf => {
                let (bn, be) =
                    self.encode_streams(tape, bound, noisy_fbank, enhanced_fbank, train, rng)?;
                self.grf_fuse(tape, bound, bn, be)
            }
            FusionMode::Concat => {
                let (bn, be) =
                    self.encode_streams(tape, bound, noisy_fbank, enhanced_fbank, train, rng)?;
                tape.concat_cols(&[be, bn])
            }
            FusionMode::EnhancedOnly => Ok(enhanced_fbank),
            FusionMode::NoisyOnly => Ok(noisy_fbank),
        }
    }
}
