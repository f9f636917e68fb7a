use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::dsp::{mix_at_snr, Waveform, FFT_SIZE, SAMPLE_RATE};
use crate::dsp::{read_wav, write_wav};
use crate::{Error, Result};

use super::{Manifest, ManifestEntry, MixSpec, Split, SyntheticSpec, Vocabulary};

/// Fade length at both ends of every synthetic word.
const RAMP_S: f64 = 0.05;
/// Lowest fundamental bin and inter-word bin spacing; words sit exactly
/// on analysis bins so their spectral peaks are sharp.
const BASE_BIN: usize = 10;
const BIN_STRIDE: usize = 3;
/// Harmonic amplitudes give a word RMS near 0.1, a comfortable level for
/// 16-bit storage and downstream feature scaling.
const AMPLITUDES: [f64; 3] = [0.15, 0.075, 0.05];

/// Analysis bin of word `i`'s fundamental; distinct for every word.
pub fn token_fundamental_bin(word: usize) -> usize {
    BASE_BIN + BIN_STRIDE * word
}

fn bin_hz(bin: usize) -> f64 {
    bin as f64 * SAMPLE_RATE as f64 / FFT_SIZE as f64
}

/// One word's waveform: a fundamental plus up to two harmonics, with
/// raised-cosine ramps at both ends.
fn token_signature(word: usize, duration_s: f64) -> Vec<f64> {
    let samples = (duration_s * SAMPLE_RATE as f64).round() as usize;
    let fundamental = bin_hz(token_fundamental_bin(word));
    let nyquist = SAMPLE_RATE as f64 / 2.0;
    let ramp = ((RAMP_S * SAMPLE_RATE as f64) as usize).min(samples / 2);
    (0..samples)
        .map(|n| {
            let t = n as f64 / SAMPLE_RATE as f64;
            let mut s = 0.0;
            for (h, amp) in AMPLITUDES.iter().enumerate() {
                let freq = fundamental * (h + 1) as f64;
                if freq < 0.95 * nyquist {
                    s += amp * (2.0 * PI * freq * t).sin();
                }
            }
            let gain = if ramp == 0 {
                1.0
            } else if n < ramp {
                0.5 * (1.0 - (PI * (n + 1) as f64 / ramp as f64).cos())
            } else if n >= samples - ramp {
                let k = n - (samples - ramp);
                0.5 * (1.0 + (PI * (k + 1) as f64 / ramp as f64).cos())
            } else {
                1.0
            };
            gain * s
        })
        .collect()
}

fn word_name(i: usize) -> String {
    format!("w{i}")
}

fn utterance_split(index: usize) -> Split {
    match index % 10 {
        8 => Split::Dev,
        9 => Split::Test,
        _ => Split::Train,
    }
}

/// Writes a fully seeded corpus of harmonic-tone utterances under
/// `out_dir`: `wav/utt*.wav`, `vocab.txt` and `manifest.jsonl`.
/// Utterances cycle through train/dev/test with one dev and one test
/// entry per ten.
pub fn generate_synthetic_corpus(spec: &SyntheticSpec, out_dir: &Path) -> Result<Manifest> {
    spec.validate()?;
    let wav_dir = out_dir.join("wav");
    fs::create_dir_all(&wav_dir).map_err(|e| Error::io(&wav_dir, e))?;
    let vocab = Vocabulary::with_words((0..spec.vocab_size).map(word_name))?;
    vocab.save(&out_dir.join("vocab.txt"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut entries = Vec::with_capacity(spec.utterances);
    for u in 0..spec.utterances {
        let count = rng.gen_range(spec.tokens_min..=spec.tokens_max);
        // Pure tones carry no coarticulation cues, so a word recurring within
        // two positions yields locally periodic audio whose repeat count is
        // not recoverable from the signal. Keeping any two-word window free
        // of repeats makes every transcript acoustically unambiguous.
        let mut words: Vec<usize> = Vec::with_capacity(count);
        for _ in 0..count {
            let word = loop {
                let candidate = rng.gen_range(0..spec.vocab_size);
                if !words[words.len().saturating_sub(2)..].contains(&candidate) {
                    break candidate;
                }
            };
            words.push(word);
        }
        let mut samples = Vec::new();
        for &w in &words {
            samples.extend(token_signature(w, spec.token_duration_s));
        }
        let id = format!("utt{u:04}");
        let rel_path = format!("wav/{id}.wav");
        write_wav(&out_dir.join(&rel_path), &Waveform::new(samples, SAMPLE_RATE)?)?;
        let transcript = words
            .iter()
            .map(|&w| word_name(w))
            .collect::<Vec<_>>()
            .join(" ");
        entries.push(ManifestEntry {
            id,
            audio_path: rel_path,
            transcript,
            split: utterance_split(u),
            snr_db: None,
            noise_id: None,
        });
    }
    let manifest = Manifest::new(entries)?;
    manifest.save(&out_dir.join("manifest.jsonl"))?;
    Ok(manifest)
}

fn normalize_rms(samples: &mut [f64], target: f64) {
    let rms = (samples.iter().map(|s| s * s).sum::<f64>() / samples.len() as f64).sqrt();
    if rms > 0.0 {
        let g = target / rms;
        for s in samples.iter_mut() {
            *s *= g;
        }
    }
}

fn white_noise(len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut samples: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
    normalize_rms(&mut samples, 0.1);
    samples
}

/// White noise reshaped to a 1/f amplitude spectrum.
fn pink_noise(len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut planner = FftPlanner::new();
    let forward = planner.plan_fft_forward(len);
    let inverse = planner.plan_fft_inverse(len);
    let mut buf: Vec<Complex<f64>> = (0..len)
        .map(|_| Complex::new(rng.gen_range(-1.0f64..1.0), 0.0))
        .collect();
    forward.process(&mut buf);
    for (k, c) in buf.iter_mut().enumerate() {
        let f = k.min(len - k).max(1) as f64;
        *c *= 1.0 / f.sqrt();
    }
    inverse.process(&mut buf);
    let mut samples: Vec<f64> = buf.iter().map(|c| c.re / len as f64).collect();
    normalize_rms(&mut samples, 0.1);
    samples
}

/// Babble: several concurrent voices, each an unsynchronized stream of
/// random vocabulary words and pauses. Unlike the broadband kinds this
/// puts interference on the same analysis bins real words occupy.
fn babble_noise(len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    const VOICES: usize = 3;
    const VOICE_VOCAB: usize = 8;
    const WORD_S: f64 = 0.2;
    let mut samples = vec![0.0; len];
    for _ in 0..VOICES {
        let mut at = (rng.gen_range(0.0..WORD_S) * SAMPLE_RATE as f64) as usize;
        while at < len {
            if rng.gen_bool(0.3) {
                at += (rng.gen_range(0.05..0.3) * SAMPLE_RATE as f64) as usize;
                continue;
            }
            let word = rng.gen_range(0..VOICE_VOCAB);
            for (i, s) in token_signature(word, WORD_S).iter().enumerate() {
                if at + i < len {
                    samples[at + i] += s;
                }
            }
            at += (WORD_S * SAMPLE_RATE as f64) as usize;
        }
    }
    normalize_rms(&mut samples, 0.1);
    samples
}

/// Writes seeded white, pink and babble noise WAVs into `out_dir` and
/// returns their paths in name order.
pub fn generate_noise_corpus(out_dir: &Path, duration_s: f64, seed: u64) -> Result<Vec<PathBuf>> {
    if duration_s <= 0.0 {
        return Err(Error::invalid("noise_corpus", "duration must be positive"));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let len = (duration_s * SAMPLE_RATE as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut paths = Vec::new();
    let kinds: [(&str, fn(usize, &mut ChaCha8Rng) -> Vec<f64>); 3] =
        [("babble", babble_noise), ("pink", pink_noise), ("white", white_noise)];
    for (name, synth) in kinds {
        let path = out_dir.join(format!("{name}.wav"));
        write_wav(&path, &Waveform::new(synth(len, &mut rng), SAMPLE_RATE)?)?;
        paths.push(path);
    }
    Ok(paths)
}

/// Condition label for an SNR value: integral values print without a
/// decimal point ("0", "5"), others with one ("2.5").
pub fn snr_label(snr: f64) -> String {
    if snr.fract() == 0.0 {
        format!("{}", snr as i64)
    } else {
        format!("{snr:.1}")
    }
}

/// Companion path of a mixed file holding the exact clean signal it was
/// built from: `wav/x.wav` -> `wav/x.clean.wav`.
pub(super) fn clean_companion(audio_path: &str) -> String {
    match audio_path.strip_suffix(".wav") {
        Some(stem) => format!("{stem}.clean.wav"),
        None => format!("{audio_path}.clean.wav"),
    }
}

/// Expands a clean manifest into its noisy training and evaluation sets.
///
/// Train utterances each gain one mix at a uniform-random SNR from the
/// configured range; every dev and test utterance gains one mix per
/// evaluation SNR. All clean entries are retained, mixed audio lands in
/// `wav/` beside the clean files together with a `.clean.wav` companion,
/// and every random choice derives from `spec.seed`.
pub fn build_noisy_sets(
    clean: &Manifest,
    root: &Path,
    noise_dir: &Path,
    spec: &MixSpec,
) -> Result<Manifest> {
    if spec.train_snr_lo > spec.train_snr_hi {
        return Err(Error::invalid(
            "build_noisy_sets",
            format!("empty SNR range [{}, {}]", spec.train_snr_lo, spec.train_snr_hi),
        ));
    }
    let mut noise_paths: Vec<PathBuf> = fs::read_dir(noise_dir)
        .map_err(|e| Error::io(noise_dir, e))?
        .filter_map(|r| r.ok().map(|d| d.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "wav"))
        .collect();
    noise_paths.sort();
    if noise_paths.is_empty() {
        return Err(Error::invalid(
            "build_noisy_sets",
            format!("no .wav files in {}", noise_dir.display()),
        ));
    }
    let noises: Vec<(String, Waveform)> = noise_paths
        .iter()
        .map(|p| {
            let name = p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            read_wav(p).map(|w| (name, w))
        })
        .collect::<Result<_>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut entries = clean.entries().to_vec();
    let mix_one = |entry: &ManifestEntry,
                       new_id: String,
                       snr: f64,
                       noise_pick: usize,
                       mix_seed: u64|
     -> Result<ManifestEntry> {
        let (noise_id, noise) = &noises[noise_pick];
        let clean_wave = read_wav(&root.join(&entry.audio_path))?;
        let pair = mix_at_snr(&clean_wave, noise, crate::dsp::SnrTarget::Db(snr), mix_seed)?;
        let rel_path = format!("wav/{new_id}.wav");
        write_wav(&root.join(&rel_path), &pair.noisy)?;
        write_wav(&root.join(clean_companion(&rel_path)), &pair.clean)?;
        Ok(ManifestEntry {
            id: new_id,
            audio_path: rel_path,
            transcript: entry.transcript.clone(),
            split: entry.split,
            snr_db: Some(snr),
            noise_id: Some(noise_id.clone()),
        })
    };
    for entry in clean.entries() {
        if entry.is_mixed() {
            continue;
        }
        match entry.split {
            Split::Train => {
                let snr = rng.gen_range(spec.train_snr_lo..=spec.train_snr_hi);
                let pick = rng.gen_range(0..noises.len());
                let mix_seed = rng.gen();
                entries.push(mix_one(entry, format!("{}-mix", entry.id), snr, pick, mix_seed)?);
            }
            Split::Dev | Split::Test => {
                for &snr in &spec.eval_snrs {
                    let pick = rng.gen_range(0..noises.len());
                    let mix_seed = rng.gen();
                    let id = format!("{}-snr{}", entry.id, snr_label(snr));
                    entries.push(mix_one(entry, id, snr, pick, mix_seed)?);
                }
            }
        }
    }
    let manifest = Manifest::new(entries)?;
    manifest.save(&root.join("manifest.jsonl"))?;
    Ok(manifest)
}
