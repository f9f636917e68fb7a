//! Orchestration: experiment configuration, the joint model bundle,
//! training phases, evaluation over the SNR grid, mode comparisons, and
//! spectrogram dumps.

mod config;
mod dump;
mod eval;
mod report;
mod train;

pub use config::{Augment, ExperimentConfig};
pub use dump::dump_spectrograms;
pub use eval::{decode_one, edit_distance, evaluate, DecodeOutcome, ResultTable};
pub use report::{compare_modes, ModeSeedOutcome, TrendReport};
pub use train::Pipeline;

use rand_chacha::ChaCha8Rng;

use crate::asr::AsrModel;
use crate::autodiff::{Binding, ParamSet, Tape, Tensor, Var};
use crate::corpus::Utterance;
use crate::dsp::{MelFilterbank, FFT_SIZE, MAG_FLOOR, N_MELS};
use crate::enhancement::{EnhancementConfig, Enhancer};
use crate::fusion::{FusionBlock, FusionConfig, FusionMode};
use crate::{Error, Result};

/// One-sided spectrum width at the fixed analysis FFT size.
pub const BINS: usize = FFT_SIZE / 2 + 1;

/// Log-fbank normalization: features enter the networks as
/// `(x + FBANK_SHIFT) / FBANK_SCALE`.
pub const FBANK_SHIFT: f64 = 10.0;
pub const FBANK_SCALE: f64 = 6.0;

/// Independent deterministic random streams derived from one seed.
pub(crate) const STREAM_INIT: u64 = 1;
pub(crate) const STREAM_TRAIN: u64 = 2;
pub(crate) const STREAM_ORDER: u64 = 3;
pub(crate) const STREAM_AUGMENT: u64 = 4;

pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// The composite objective: recognition loss plus the weighted
/// enhancement loss. With `alpha = 0` or no enhancement term the
/// recognition loss node is returned unchanged.
pub fn joint_loss(tape: &mut Tape, asr_loss: Var, enh_loss: Option<Var>, alpha: f64) -> Result<Var> {
    if !tape.value(asr_loss).item()?.is_finite() {
        return Err(Error::invalid("joint_loss", "recognition loss is not finite"));
    }
    let Some(enh) = enh_loss else {
        return Ok(asr_loss);
    };
    if !tape.value(enh).item()?.is_finite() {
        return Err(Error::invalid("joint_loss", "enhancement loss is not finite"));
    }
    if alpha == 0.0 {
        return Ok(asr_loss);
    }
    let scaled = tape.scale(enh, alpha);
    tape.add(asr_loss, scaled)
}

/// Tape nodes of the enhancement branch, kept for the loss term and for
/// inspection.
#[derive(Debug, Clone, Copy)]
pub struct EnhanceNodes {
    pub mask: Var,
    pub enhanced_mag: Var,
    pub noisy_mag: Var,
}

/// Enhancement, fusion, and recognition bundled under one parameter set.
/// `noisy_only` carries no enhancer: it is the plain recognizer baseline.
#[derive(Debug, Clone)]
pub struct JointModel {
    pub enhancer: Option<Enhancer>,
    pub fusion: FusionBlock,
    pub asr: AsrModel,
}

impl JointModel {
    /// Registers parameters in a fixed order (enhancer, fusion,
    /// recognizer) so initialization is reproducible per seed.
    pub fn init(
        cfg: &ExperimentConfig,
        vocab_size: usize,
        params: &mut ParamSet,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let enhancer = if cfg.mode == FusionMode::NoisyOnly {
            None
        } else {
            let enh_cfg = EnhancementConfig {
                input_dim: BINS,
                hidden: cfg.enh_hidden,
                layers: cfg.enh_layers,
                dropout: cfg.enh_dropout,
            };
            Some(Enhancer::init(enh_cfg, params, rng)?)
        };
        let fus_cfg = FusionConfig {
            feat_dim: N_MELS,
            encoder_hidden: cfg.fusion_hidden,
            encoder_layers: cfg.fusion_layers,
            stages: cfg.fusion_stages,
            mode: cfg.mode,
            out_dim: cfg.fusion_out,
            dropout: cfg.fusion_dropout,
        };
        let fusion = FusionBlock::init(fus_cfg, params, rng)?;
        let asr_cfg = crate::asr::AsrConfig {
            feat_dim: fusion.cfg.fused_dim(),
            d_model: cfg.asr_d_model,
            heads: cfg.asr_heads,
            d_ff: cfg.asr_d_ff,
            enc_blocks: cfg.asr_enc_blocks,
            dec_blocks: cfg.asr_dec_blocks,
            vocab: vocab_size,
            max_len: cfg.asr_max_len,
            conv_front: cfg.asr_conv_front,
            dropout: cfg.asr_dropout,
            smoothing: cfg.asr_smoothing,
        };
        let asr = AsrModel::init(asr_cfg, params, rng)?;
        Ok(Self { enhancer, fusion, asr })
    }

    /// Build the recognizer's input features for one utterance and, when
    /// an enhancer is present, the tape nodes of the enhancement branch.
    ///
    /// The noisy feature stream enters as a precomputed log-fbank matrix
    /// (so training-time augmentation can run on it beforehand); the
    /// enhanced stream is derived on the tape from the masked magnitudes
    /// so gradients reach the enhancer.
    pub fn features(
        &self,
        tape: &mut Tape,
        bound: &Binding,
        mel: &MelFilterbank,
        utt: &Utterance,
        train: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Var, Option<EnhanceNodes>)> {
        let fbank = &utt.noisy_fbank;
        let fbank_leaf = tape.leaf(Tensor::matrix(
            fbank.frames,
            fbank.dim,
            fbank.values.clone(),
        )?);
        let noisy_feat = normalize_fbank(tape, fbank_leaf);
        let Some(enhancer) = &self.enhancer else {
            return Ok((noisy_feat, None));
        };
        let mag = &utt.noisy_mag;
        let noisy_mag = tape.leaf(Tensor::matrix(mag.frames, mag.bins, mag.values.clone())?);
        let (mask, enhanced_mag) = enhancer.forward(tape, bound, noisy_mag, train, rng)?;
        let enhanced_feat = fbank_on_tape(tape, enhanced_mag, mel)?;
        let fused = self.fusion.fuse(tape, bound, noisy_feat, enhanced_feat, train, rng)?;
        Ok((fused, Some(EnhanceNodes { mask, enhanced_mag, noisy_mag })))
    }
}

/// `(x + FBANK_SHIFT) / FBANK_SCALE`, the constant affine both feature
/// streams pass through before any network.
pub fn normalize_fbank(tape: &mut Tape, v: Var) -> Var {
    tape.affine(v, 1.0 / FBANK_SCALE, FBANK_SHIFT / FBANK_SCALE)
}

/// Differentiable log-fbank: magnitudes through the mel weights, floored,
/// logged, and normalized — the on-tape counterpart of the front end's
/// feature extraction.
pub fn fbank_on_tape(tape: &mut Tape, mag: Var, mel: &MelFilterbank) -> Result<Var> {
    let weights = tape.leaf(Tensor::matrix(mel.bins, mel.n_mels, mel.weights.clone())?);
    let energies = tape.matmul(mag, weights)?;
    let floored = tape.clamp_min(energies, MAG_FLOOR);
    let logged = tape.log(floored)?;
    Ok(normalize_fbank(tape, logged))
}
