//! Mask-based speech enhancement: a BLSTM stack estimates a nonnegative
//! time-frequency amplitude mask from the noisy magnitude spectrum, and
//! training minimizes the distance between the masked noisy magnitudes
//! and the clean ones (spectrum approximation).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Binding, ParamSet, Tape, Var};
use crate::dsp::{MagnitudeSpectrum, MAG_FLOOR};
use crate::nn::{BlstmStack, Linear};
use crate::{Error, Result};

/// Ratio ceiling for the amplitude-mask target; keeps near-silent noisy
/// bins from producing unbounded targets.
pub const IAM_CEILING: f64 = 10.0;

/// Checkpoint name prefix for all enhancement parameters.
pub const PARAM_PREFIX: &str = "enh";

#[derive(Debug, Clone)]
pub struct EnhancementConfig {
    /// Spectrum bins per frame (F).
    pub input_dim: usize,
    /// LSTM units per direction.
    pub hidden: usize,
    pub layers: usize,
    pub dropout: f64,
}

impl EnhancementConfig {
    /// Desk-scale default: 2 layers of 128 units per direction over
    /// 257-bin magnitude frames.
    pub fn desk(input_dim: usize) -> Self {
        Self { input_dim, hidden: 128, layers: 2, dropout: 0.5 }
    }

    /// Full-scale preset: 3 layers of 512 units per direction.
    pub fn paper(input_dim: usize) -> Self {
        Self { input_dim, hidden: 512, layers: 3, dropout: 0.5 }
    }
}

/// Nonnegative `T x F` time-frequency amplitude mask. Unbounded above:
/// the amplitude-mask definition allows values past 1 where the noisy
/// magnitude undershoots the clean one.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    pub values: Vec<f64>,
    pub frames: usize,
    pub bins: usize,
}

impl Mask {
    pub fn new(values: Vec<f64>, frames: usize, bins: usize) -> Result<Self> {
        if values.len() != frames * bins {
            return Err(Error::shape(
                "mask",
                format!("{} values for {} x {}", values.len(), frames, bins),
            ));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid("mask", "entries must be finite and nonnegative"));
        }
        Ok(Self { values, frames, bins })
    }

    /// Elementwise product with a magnitude spectrum of the same shape.
    pub fn apply(&self, mag: &MagnitudeSpectrum) -> Result<MagnitudeSpectrum> {
        if self.frames != mag.frames || self.bins != mag.bins {
            return Err(Error::shape(
                "mask",
                format!(
                    "mask {}x{} against spectrum {}x{}",
                    self.frames, self.bins, mag.frames, mag.bins
                ),
            ));
        }
        let values = self
            .values
            .iter()
            .zip(&mag.values)
            .map(|(m, y)| m * y)
            .collect();
        MagnitudeSpectrum::new(values, mag.frames, mag.bins)
    }
}

/// Amplitude-mask training target `|X| / max(|Y|, 1e-10)`, clamped to
/// `[0, 10]`.
pub fn iam_target(clean: &MagnitudeSpectrum, noisy: &MagnitudeSpectrum) -> Result<Mask> {
    if clean.frames != noisy.frames || clean.bins != noisy.bins {
        return Err(Error::shape(
            "iam_target",
            format!(
                "clean {}x{} against noisy {}x{}",
                clean.frames, clean.bins, noisy.frames, noisy.bins
            ),
        ));
    }
    let values = clean
        .values
        .iter()
        .zip(&noisy.values)
        .map(|(x, y)| (x / y.max(MAG_FLOOR)).clamp(0.0, IAM_CEILING))
        .collect();
    Mask::new(values, clean.frames, clean.bins)
}

/// BLSTM mask estimator: stack over the noisy magnitude frames, then a
/// dense projection back to F bins under ReLU.
#[derive(Debug, Clone)]
pub struct Enhancer {
    pub cfg: EnhancementConfig,
    stack: BlstmStack,
    out: Linear,
}

impl Enhancer {
    pub fn init(cfg: EnhancementConfig, params: &mut ParamSet, rng: &mut ChaCha8Rng) -> Result<Self> {
        let stack = BlstmStack::init(
            &format!("{}.blstm", PARAM_PREFIX),
            cfg.input_dim,
            cfg.hidden,
            cfg.layers,
            cfg.dropout,
            params,
            rng,
        )?;
        let out = Linear::init(
            &format!("{}.out", PARAM_PREFIX),
            2 * cfg.hidden,
            cfg.input_dim,
            params,
            rng,
        )?;
        Ok(Self { cfg, stack, out })
    }

    /// Estimate the mask for noisy magnitudes already on the tape and
    /// return `(mask, masked_magnitudes)`, both `T x F`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &Binding,
        noisy_mag: Var,
        train: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Var, Var)> {
        let shape = tape.shape(noisy_mag).to_vec();
        if shape.len() != 2 || shape[1] != self.cfg.input_dim {
            return Err(Error::shape(
                "enhance_forward",
                format!("expected T x {}, got {:?}", self.cfg.input_dim, shape),
            ));
        }
        let deep = self.stack.forward(tape, bound, noisy_mag, train, rng)?;
        let deep = if train && self.cfg.dropout > 0.0 {
            tape.dropout(deep, self.cfg.dropout, rng)?
        } else {
            deep
        };
        let projected = self.out.forward(tape, bound, deep)?;
        let mask = tape.relu(projected);
        let enhanced = tape.mul(mask, noisy_mag)?;
        Ok((mask, enhanced))
    }

    /// Off-tape convenience for evaluation: run on a magnitude spectrum
    /// and return concrete mask and enhanced-magnitude matrices.
    pub fn enhance(
        &self,
        params: &ParamSet,
        noisy: &MagnitudeSpectrum,
    ) -> Result<(Mask, MagnitudeSpectrum)> {
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let x = tape.leaf(crate::autodiff::Tensor::matrix(
            noisy.frames,
            noisy.bins,
            noisy.values.clone(),
        )?);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (mask_var, enhanced_var) = self.forward(&mut tape, &bound, x, false, &mut rng)?;
        let mask = Mask::new(tape.value(mask_var).data.clone(), noisy.frames, noisy.bins)?;
        let enhanced = MagnitudeSpectrum::new(
            tape.value(enhanced_var).data.clone(),
            noisy.frames,
            noisy.bins,
        )?;
        Ok((mask, enhanced))
    }
}

/// Spectrum-approximation loss: mean squared error over all `T x F` bins
/// between the masked noisy magnitudes and the clean ones. All three
/// arguments live on the tape; gradients flow through `mask` (and
/// `noisy` where it is itself a tape product).
pub fn sa_loss(tape: &mut Tape, mask: Var, noisy: Var, clean: Var) -> Result<Var> {
    let shape = tape.shape(mask).to_vec();
    if shape != tape.shape(noisy) || shape != tape.shape(clean) {
        return Err(Error::shape(
            "sa_loss",
            format!(
                "mask {:?}, noisy {:?}, clean {:?}",
                shape,
                tape.shape(noisy),
                tape.shape(clean)
            ),
        ));
    }
    if tape.value(mask).is_empty() {
        return Err(Error::invalid("sa_loss", "empty spectrogram"));
    }
    let masked = tape.mul(mask, noisy)?;
    let diff = tape.sub(masked, clean)?;
    let sq = tape.mul(diff, diff)?;
    tape.mean(sq)
}
