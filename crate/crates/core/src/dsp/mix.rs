//! SNR-controlled noise mixing and waveform-level SNR fusion.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dsp::Waveform;
use crate::error::{Error, Result};

/// Requested mixing condition: a finite SNR in dB, or the clean passthrough.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SnrTarget {
    Clean,
    Db(f64),
}

/// The training unit produced by mixing: the noisy signal and the clean
/// signal it was built from.
#[derive(Debug, Clone)]
pub struct NoisyCleanPair {
    pub noisy: Waveform,
    pub clean: Waveform,
}

/// Mix `noise` into `clean` so the energy ratio hits `target` exactly.
///
/// The noise is cropped or tiled to the clean length starting from a seeded
/// random offset, then scaled so `10 log10(E_clean / E_noise) = snr_db`.
pub fn mix_at_snr(
    clean: &Waveform,
    noise: &Waveform,
    target: SnrTarget,
    rng_seed: u64,
) -> Result<NoisyCleanPair> {
    let snr_db = match target {
        SnrTarget::Clean => {
            return Ok(NoisyCleanPair {
                noisy: clean.clone(),
                clean: clean.clone(),
            })
        }
        SnrTarget::Db(db) => db,
    };
    if clean.sample_rate != noise.sample_rate {
        return Err(Error::invalid(
            "mix_at_snr",
            format!(
                "sample rate mismatch: {} vs {}",
                clean.sample_rate, noise.sample_rate
            ),
        ));
    }
    let clean_energy = clean.energy();
    if clean_energy <= 0.0 {
        return Err(Error::invalid("mix_at_snr", "clean signal has zero energy"));
    }
    if noise.energy() <= 0.0 || noise.is_empty() {
        return Err(Error::invalid("mix_at_snr", "noise signal has zero energy"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let offset = rng.gen_range(0..noise.len());
    let fitted: Vec<f64> = (0..clean.len())
        .map(|i| noise.samples[(offset + i) % noise.len()])
        .collect();
    let fitted_energy: f64 = fitted.iter().map(|s| s * s).sum();
    if fitted_energy <= 0.0 {
        return Err(Error::invalid(
            "mix_at_snr",
            "noise crop has zero energy; noise too sparse",
        ));
    }

    let target_noise_energy = clean_energy * 10f64.powf(-snr_db / 10.0);
    let scale = (target_noise_energy / fitted_energy).sqrt();
    let noisy_samples: Vec<f64> = clean
        .samples
        .iter()
        .zip(&fitted)
        .map(|(c, n)| c + scale * n)
        .collect();
    Ok(NoisyCleanPair {
        noisy: Waveform::new(noisy_samples, clean.sample_rate)?,
        clean: clean.clone(),
    })
}

/// SNR of `degraded` against the known `clean` signal in dB:
/// `10 log10(E_clean / E_residual)` over the overlapping samples.
pub fn measure_snr(clean: &Waveform, degraded: &Waveform) -> f64 {
    let n = clean.len().min(degraded.len());
    let mut e_clean = 0.0;
    let mut e_res = 0.0;
    for i in 0..n {
        let c = clean.samples[i];
        let r = degraded.samples[i] - c;
        e_clean += c * c;
        e_res += r * r;
    }
    if e_res <= 0.0 {
        f64::INFINITY
    } else {
        10.0 * (e_clean / e_res).log10()
    }
}

/// Blend the original signal back into an enhanced one at a fixed rms ratio:
/// returns `enhanced + g * original` with `g` chosen so that
/// `20 log10(rms(enhanced) / rms(g * original)) = target_db`.
pub fn snr_fuse(original: &Waveform, enhanced: &Waveform, target_db: f64) -> Result<Waveform> {
    if original.len() != enhanced.len() || original.sample_rate != enhanced.sample_rate {
        return Err(Error::shape(
            "snr_fuse",
            format!(
                "length/rate mismatch: {}@{} vs {}@{}",
                original.len(),
                original.sample_rate,
                enhanced.len(),
                enhanced.sample_rate
            ),
        ));
    }
    let rms_enh = enhanced.rms();
    if rms_enh <= 0.0 {
        return Err(Error::invalid("snr_fuse", "enhanced signal is silent"));
    }
    let rms_orig = original.rms();
    if rms_orig <= 0.0 {
        return Ok(enhanced.clone());
    }
    let gain = rms_enh / (rms_orig * 10f64.powf(target_db / 20.0));
    let samples = enhanced
        .samples
        .iter()
        .zip(&original.samples)
        .map(|(e, o)| e + gain * o)
        .collect();
    Waveform::new(samples, enhanced.sample_rate)
}
