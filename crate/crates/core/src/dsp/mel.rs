//! Triangular mel filterbank construction and log-fbank extraction.

use crate::dsp::{FeatureKind, FeatureMatrix, MagnitudeSpectrum, MAG_FLOOR};
use crate::error::{Error, Result};

/// `bins x n_mels` triangular filter weights, row-major by FFT bin.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    pub weights: Vec<f64>,
    pub bins: usize,
    pub n_mels: usize,
}

impl MelFilterbank {
    pub fn at(&self, bin: usize, mel: usize) -> f64 {
        self.weights[bin * self.n_mels + mel]
    }
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filters mel-spaced from 0 Hz to Nyquist, peak height 1.
pub fn mel_filterbank(fft_size: usize, n_mels: usize, sample_rate: u32) -> Result<MelFilterbank> {
    if n_mels == 0 {
        return Err(Error::invalid("mel_filterbank", "n_mels must be >= 1"));
    }
    if fft_size % 2 != 0 {
        return Err(Error::invalid("mel_filterbank", "fft_size must be even"));
    }
    let bins = fft_size / 2 + 1;
    if n_mels > bins {
        return Err(Error::invalid(
            "mel_filterbank",
            format!("{n_mels} filters for only {bins} bins"),
        ));
    }

    let nyquist = sample_rate as f64 / 2.0;
    let mel_max = hz_to_mel(nyquist);
    // n_mels + 2 edge points: left edge, n_mels centers, right edge
    let edges_hz: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(mel_max * i as f64 / (n_mels + 1) as f64))
        .collect();

    let bin_hz = sample_rate as f64 / fft_size as f64;
    let mut weights = vec![0.0f64; bins * n_mels];
    for m in 0..n_mels {
        let (left, center, right) = (edges_hz[m], edges_hz[m + 1], edges_hz[m + 2]);
        let mut any = false;
        for k in 0..bins {
            let f = k as f64 * bin_hz;
            let w = if f >= left && f <= center && center > left {
                (f - left) / (center - left)
            } else if f > center && f <= right && right > center {
                (right - f) / (right - center)
            } else {
                0.0
            };
            if w > 0.0 {
                any = true;
            }
            weights[k * n_mels + m] = w;
        }
        if !any {
            // triangle narrower than the bin spacing: assign the nearest bin
            // so the column never sums to zero
            let k = (center / bin_hz).round() as usize;
            weights[k.min(bins - 1) * n_mels + m] = 1.0;
        }
    }

    Ok(MelFilterbank {
        weights,
        bins,
        n_mels,
    })
}

/// `log(max(m . filterbank, MAG_FLOOR))`, one row per frame.
pub fn log_fbank(m: &MagnitudeSpectrum, fb: &MelFilterbank) -> Result<FeatureMatrix> {
    if m.bins != fb.bins {
        return Err(Error::shape(
            "log_fbank",
            format!("{} magnitude bins vs {} filter rows", m.bins, fb.bins),
        ));
    }
    let mut values = vec![0.0f64; m.frames * fb.n_mels];
    for t in 0..m.frames {
        let row = &m.values[t * m.bins..(t + 1) * m.bins];
        for j in 0..fb.n_mels {
            let mut acc = 0.0;
            for k in 0..m.bins {
                acc += row[k] * fb.weights[k * fb.n_mels + j];
            }
            values[t * fb.n_mels + j] = acc.max(MAG_FLOOR).ln();
        }
    }
    FeatureMatrix::new(values, m.frames, fb.n_mels, FeatureKind::LogFbank)
}
