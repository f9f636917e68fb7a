use std::path::Path;

use crate::asr::TokenSequence;
use crate::dsp::{
    log_fbank, read_wav, stft, FeatureMatrix, MagnitudeSpectrum, MelFilterbank, FFT_SIZE,
    FRAME_LENGTH_S, FRAME_SHIFT_S,
};
use crate::{Error, Result};

use super::synth::clean_companion;
use super::{Manifest, Split, Vocabulary};

/// One loaded training/evaluation unit: aligned noisy and clean
/// magnitude spectra, the precomputed noisy log-fbank stream, and the
/// tokenized transcript.
#[derive(Debug, Clone)]
pub struct Utterance {
    pub id: String,
    pub split: Split,
    pub snr_db: Option<f64>,
    pub transcript: String,
    pub tokens: TokenSequence,
    pub noisy_mag: MagnitudeSpectrum,
    pub clean_mag: MagnitudeSpectrum,
    pub noisy_fbank: FeatureMatrix,
}

/// Loads one manifest entry. Mixed entries read their `.clean.wav`
/// companion for the clean side; clean entries pair with themselves.
pub fn load_utterance(
    manifest: &Manifest,
    root: &Path,
    id: &str,
    vocab: &Vocabulary,
    filterbank: &MelFilterbank,
) -> Result<Utterance> {
    let entry = manifest
        .get(id)
        .ok_or_else(|| Error::invalid("load_batch", format!("id '{id}' not in manifest")))?;
    let noisy_path = root.join(&entry.audio_path);
    let noisy_wave = read_wav(&noisy_path)?;
    let clean_wave = if entry.is_mixed() {
        read_wav(&root.join(clean_companion(&entry.audio_path)))?
    } else {
        noisy_wave.clone()
    };
    if clean_wave.len() != noisy_wave.len() {
        return Err(Error::invalid(
            "load_batch",
            format!(
                "'{id}': clean companion has {} samples against {}",
                clean_wave.len(),
                noisy_wave.len()
            ),
        ));
    }
    let noisy_mag = stft(&noisy_wave, FRAME_LENGTH_S, FRAME_SHIFT_S, FFT_SIZE)?.magnitude();
    let clean_mag = stft(&clean_wave, FRAME_LENGTH_S, FRAME_SHIFT_S, FFT_SIZE)?.magnitude();
    let noisy_fbank = log_fbank(&noisy_mag, filterbank)?;
    Ok(Utterance {
        id: entry.id.clone(),
        split: entry.split,
        snr_db: entry.snr_db,
        transcript: entry.transcript.clone(),
        tokens: vocab.tokenize(&entry.transcript),
        noisy_mag,
        clean_mag,
        noisy_fbank,
    })
}

/// Loads the listed entries in order; utterances stay separate (no
/// cross-utterance padding).
pub fn load_batch(
    manifest: &Manifest,
    root: &Path,
    ids: &[&str],
    vocab: &Vocabulary,
    filterbank: &MelFilterbank,
) -> Result<Vec<Utterance>> {
    ids.iter()
        .map(|id| load_utterance(manifest, root, id, vocab, filterbank))
        .collect()
}

#[cfg(test)]
mod tests {
    use crate::corpus::{
        build_noisy_sets, generate_noise_corpus, generate_synthetic_corpus, MixSpec, SyntheticSpec,
    };
    use crate::dsp::{mel_filterbank, N_MELS, SAMPLE_RATE};

    use super::*;

    fn corpus() -> (tempfile::TempDir, Manifest, Vocabulary, MelFilterbank) {
        let dir = tempfile::tempdir().unwrap();
        let spec = SyntheticSpec {
            vocab_size: 4,
            utterances: 10,
            tokens_min: 1,
            tokens_max: 2,
            token_duration_s: 0.12,
            seed: 33,
        };
        let manifest = generate_synthetic_corpus(&spec, dir.path()).unwrap();
        let noise_dir = dir.path().join("noise");
        generate_noise_corpus(&noise_dir, 1.0, 34).unwrap();
        let mixed = build_noisy_sets(&manifest, dir.path(), &noise_dir, &MixSpec::desk(35)).unwrap();
        let vocab = Vocabulary::load(&dir.path().join("vocab.txt")).unwrap();
        let fb = mel_filterbank(FFT_SIZE, N_MELS, SAMPLE_RATE).unwrap();
        (dir, mixed, vocab, fb)
    }

    #[test]
    fn clean_entries_pair_with_themselves() {
        let (dir, manifest, vocab, fb) = corpus();
        let utt = load_utterance(&manifest, dir.path(), "utt0000", &vocab, &fb).unwrap();
        assert_eq!(utt.noisy_mag, utt.clean_mag);
        assert!(utt.snr_db.is_none());
    }

    #[test]
    fn mixed_entries_align_their_clean_side() {
        let (dir, manifest, vocab, fb) = corpus();
        let entry = manifest
            .entries()
            .iter()
            .find(|e| e.is_mixed())
            .unwrap()
            .id
            .clone();
        let utt = load_utterance(&manifest, dir.path(), &entry, &vocab, &fb).unwrap();
        assert_eq!(utt.noisy_mag.frames, utt.clean_mag.frames);
        assert_ne!(utt.noisy_mag, utt.clean_mag);
        assert!(utt.snr_db.is_some());
    }

    #[test]
    fn transcript_tokens_round_trip() {
        let (dir, manifest, vocab, fb) = corpus();
        let utt = load_utterance(&manifest, dir.path(), "utt0001", &vocab, &fb).unwrap();
        assert_eq!(vocab.detokenize(&utt.tokens.ids), utt.transcript);
    }

    #[test]
    fn frame_count_follows_the_framing_formula() {
        let (dir, manifest, vocab, fb) = corpus();
        for id in ["utt0000", "utt0002"] {
            let entry = manifest.get(id).unwrap();
            let samples = read_wav(&dir.path().join(&entry.audio_path)).unwrap().len();
            let utt = load_utterance(&manifest, dir.path(), id, &vocab, &fb).unwrap();
            assert_eq!(utt.noisy_mag.frames, 1 + (samples - 512) / 256);
            assert_eq!(utt.noisy_fbank.frames, utt.noisy_mag.frames);
            assert_eq!(utt.noisy_fbank.dim, N_MELS);
        }
    }

    #[test]
    fn missing_id_is_an_error() {
        let (dir, manifest, vocab, fb) = corpus();
        assert!(load_utterance(&manifest, dir.path(), "nope", &vocab, &fb).is_err());
    }

    #[test]
    fn batch_preserves_order() {
        let (dir, manifest, vocab, fb) = corpus();
        let batch = load_batch(&manifest, dir.path(), &["utt0002", "utt0000"], &vocab, &fb).unwrap();
        assert_eq!(batch.len(), 2);
        assert_eq!(batch[0].id, "utt0002");
        assert_eq!(batch[1].id, "utt0000");
    }
}
