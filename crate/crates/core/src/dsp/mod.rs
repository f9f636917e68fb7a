//! Deterministic signal processing front end: windowed STFT analysis and
//! synthesis, mel/log-filterbank feature extraction, SNR-controlled noise
//! mixing and waveform-level SNR fusion.
//!
//! Everything here is a pure function over immutable inputs; the only state
//! is the caller-provided RNG seed where randomness is part of the contract.

mod mel;
mod mix;
mod stft;
mod wav;

pub use mel::{log_fbank, mel_filterbank, MelFilterbank};
pub use mix::{measure_snr, mix_at_snr, snr_fuse, NoisyCleanPair, SnrTarget};
pub use stft::{istft, stft, StftParams};
pub use wav::{read_wav, write_wav};

use crate::error::{Error, Result};

/// Default sample rate of the whole pipeline, Hz.
pub const SAMPLE_RATE: u32 = 16_000;
/// Analysis window length, 32 ms at 16 kHz.
pub const FRAME_LENGTH_S: f64 = 0.032;
/// Frame shift, 16 ms at 16 kHz.
pub const FRAME_SHIFT_S: f64 = 0.016;
/// FFT size; one-sided spectra have `FFT_SIZE / 2 + 1 = 257` bins.
pub const FFT_SIZE: usize = 512;
/// Mel filterbank size for log-fbank features.
pub const N_MELS: usize = 80;
/// Floor applied before logs and divisions on magnitude data.
pub const MAG_FLOOR: f64 = 1e-10;

/// Mono waveform with its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::invalid("Waveform", "sample_rate must be positive"));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::invalid("Waveform", "samples must be finite"));
        }
        Ok(Waveform {
            samples,
            sample_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Sum of squared samples.
    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|s| s * s).sum()
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            0.0
        } else {
            (self.energy() / self.samples.len() as f64).sqrt()
        }
    }
}

/// Complex STFT frames plus the framing they were produced with.
#[derive(Debug, Clone)]
pub struct Spectrogram {
    /// `frames * bins` complex values, row-major, one row per frame.
    pub re: Vec<f64>,
    pub im: Vec<f64>,
    pub frames: usize,
    pub bins: usize,
    pub params: StftParams,
}

impl Spectrogram {
    pub fn magnitude(&self) -> MagnitudeSpectrum {
        let values = self
            .re
            .iter()
            .zip(&self.im)
            .map(|(r, i)| (r * r + i * i).sqrt())
            .collect();
        MagnitudeSpectrum {
            values,
            frames: self.frames,
            bins: self.bins,
        }
    }

    pub fn same_framing(&self, other: &Spectrogram) -> bool {
        self.frames == other.frames && self.bins == other.bins && self.params == other.params
    }
}

/// Nonnegative magnitudes, `frames * bins` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MagnitudeSpectrum {
    pub values: Vec<f64>,
    pub frames: usize,
    pub bins: usize,
}

impl MagnitudeSpectrum {
    pub fn new(values: Vec<f64>, frames: usize, bins: usize) -> Result<Self> {
        if values.len() != frames * bins {
            return Err(Error::shape(
                "MagnitudeSpectrum",
                format!("{} values for {frames}x{bins}", values.len()),
            ));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid(
                "MagnitudeSpectrum",
                "entries must be finite and nonnegative",
            ));
        }
        Ok(MagnitudeSpectrum {
            values,
            frames,
            bins,
        })
    }

    pub fn at(&self, t: usize, f: usize) -> f64 {
        self.values[t * self.bins + f]
    }
}

/// What a feature matrix holds; fixes the expected width per kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureKind {
    LogFbank,
    Deep,
    Fused,
}

/// Time-major real feature frames.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub values: Vec<f64>,
    pub frames: usize,
    pub dim: usize,
    pub kind: FeatureKind,
}

impl FeatureMatrix {
    pub fn new(values: Vec<f64>, frames: usize, dim: usize, kind: FeatureKind) -> Result<Self> {
        if values.len() != frames * dim {
            return Err(Error::shape(
                "FeatureMatrix",
                format!("{} values for {frames}x{dim}", values.len()),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("FeatureMatrix", "entries must be finite"));
        }
        Ok(FeatureMatrix {
            values,
            frames,
            dim,
            kind,
        })
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.dim..(t + 1) * self.dim]
    }

    pub fn mean(&self) -> f64 {
        if self.values.is_empty() {
            0.0
        } else {
            self.values.iter().sum::<f64>() / self.values.len() as f64
        }
    }
}
