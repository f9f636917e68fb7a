use std::collections::BTreeMap;

use serde::Serialize;

use crate::autodiff::ParamSet;
use crate::corpus::{snr_label, Split};
use crate::dsp::{
    istft, log_fbank, read_wav, snr_fuse, stft, Spectrogram, FFT_SIZE, FRAME_LENGTH_S,
    FRAME_SHIFT_S,
};
use crate::{Error, Result};

use super::{stream_rng, JointModel, Pipeline, STREAM_TRAIN};

/// Levenshtein distance over characters, two-row dynamic programming.
pub fn edit_distance(reference: &[char], hypothesis: &[char]) -> usize {
    if reference.is_empty() {
        return hypothesis.len();
    }
    if hypothesis.is_empty() {
        return reference.len();
    }
    let mut prev: Vec<usize> = (0..=hypothesis.len()).collect();
    let mut curr = vec![0usize; hypothesis.len() + 1];
    for (i, r) in reference.iter().enumerate() {
        curr[0] = i + 1;
        for (j, h) in hypothesis.iter().enumerate() {
            let substitution = prev[j] + usize::from(r != h);
            let deletion = prev[j + 1] + 1;
            let insertion = curr[j] + 1;
            curr[j + 1] = substitution.min(deletion).min(insertion);
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[hypothesis.len()]
}

/// One decoded test utterance with its scoring ingredients.
#[derive(Debug, Clone, Serialize)]
pub struct DecodeOutcome {
    pub id: String,
    pub condition: String,
    pub reference: String,
    pub hypothesis: String,
    pub edits: usize,
    pub ref_chars: usize,
    pub log_prob: f64,
}

/// Character error rates per test condition. Rows are ordered by SNR
/// ascending, then "clean", then the "AVG" mean of the numeric SNR rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    pub tag: String,
    pub rows: Vec<(String, f64)>,
}

impl ResultTable {
    /// Aggregate per-utterance counts into the table. CER per condition
    /// is 100 x total edits / total reference characters.
    pub fn build(tag: &str, outcomes: &[DecodeOutcome]) -> Result<Self> {
        if outcomes.is_empty() {
            return Err(Error::Data("no decoded utterances to tabulate".into()));
        }
        // key numeric conditions by value for ordering; label stays the display key
        let mut numeric: BTreeMap<i64, (String, usize, usize)> = BTreeMap::new();
        let mut clean: Option<(usize, usize)> = None;
        for o in outcomes {
            if o.ref_chars == 0 {
                return Err(Error::Data(format!("utterance '{}' has an empty reference", o.id)));
            }
            if o.condition == "clean" {
                let (e, n) = clean.get_or_insert((0, 0));
                *e += o.edits;
                *n += o.ref_chars;
            } else {
                let value: f64 = o.condition.parse().map_err(|_| {
                    Error::Data(format!("condition '{}' is not an SNR label", o.condition))
                })?;
                let entry = numeric
                    .entry((value * 1000.0).round() as i64)
                    .or_insert_with(|| (o.condition.clone(), 0, 0));
                entry.1 += o.edits;
                entry.2 += o.ref_chars;
            }
        }
        let mut rows = Vec::new();
        let mut snr_cers = Vec::new();
        for (_, (label, edits, chars)) in numeric {
            let cer = 100.0 * edits as f64 / chars as f64;
            snr_cers.push(cer);
            rows.push((label, cer));
        }
        if let Some((edits, chars)) = clean {
            rows.push(("clean".to_string(), 100.0 * edits as f64 / chars as f64));
        }
        if !snr_cers.is_empty() {
            let avg = snr_cers.iter().sum::<f64>() / snr_cers.len() as f64;
            rows.push(("AVG".to_string(), avg));
        }
        Ok(Self { tag: tag.to_string(), rows })
    }

    pub fn get(&self, condition: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|(label, _)| label == condition)
            .map(|(_, cer)| *cer)
    }

    /// Aligned text rendering.
    pub fn text(&self) -> String {
        let mut out = format!("CER% [{}]\n", self.tag);
        let width = self
            .rows
            .iter()
            .map(|(label, _)| label.len())
            .max()
            .unwrap_or(0)
            .max("condition".len());
        out.push_str(&format!("{:width$}  {:>8}\n", "condition", "cer"));
        for (label, cer) in &self.rows {
            out.push_str(&format!("{label:width$}  {cer:8.2}\n"));
        }
        out
    }

    /// Full-precision CSV rendering.
    pub fn csv(&self) -> String {
        let mut out = String::from("tag,condition,cer\n");
        for (label, cer) in &self.rows {
            out.push_str(&format!("{},{label},{cer}\n", self.tag));
        }
        out
    }
}

fn chars_of(text: &str) -> Vec<char> {
    text.chars().collect()
}

fn condition_of(snr_db: Option<f64>) -> String {
    match snr_db {
        Some(v) => snr_label(v),
        None => "clean".to_string(),
    }
}

/// Decode every test utterance with the configured beam and aggregate
/// character error rates per SNR condition.
pub fn evaluate(
    pipe: &Pipeline,
    model: &JointModel,
    params: &ParamSet,
    tag: &str,
) -> Result<(ResultTable, Vec<DecodeOutcome>)> {
    let mut ids: Vec<&str> = pipe
        .manifest
        .entries()
        .iter()
        .filter(|e| e.split == Split::Test)
        .map(|e| e.id.as_str())
        .collect();
    ids.sort_unstable();
    if ids.is_empty() {
        return Err(Error::Data("manifest has no test entries".into()));
    }
    let mut outcomes = Vec::with_capacity(ids.len());
    for id in ids {
        outcomes.push(decode_one(pipe, model, params, id)?);
    }
    let table = ResultTable::build(tag, &outcomes)?;
    Ok((table, outcomes))
}

/// Decode a single utterance (beam width from the config) and score it
/// against its transcript.
pub fn decode_one(
    pipe: &Pipeline,
    model: &JointModel,
    params: &ParamSet,
    id: &str,
) -> Result<DecodeOutcome> {
    let entry = pipe
        .manifest
        .get(id)
        .ok_or_else(|| Error::Data(format!("id '{id}' not in manifest")))?;
    let utt = match pipe.cfg.snr_fuse_db {
        Some(db) => snr_fused_utterance(pipe, model, params, id, db)?,
        None => pipe.utterance(id)?,
    };
    let mut tape = crate::autodiff::Tape::new();
    let bound = params.bind(&mut tape);
    let mut rng = stream_rng(pipe.cfg.seed, STREAM_TRAIN);
    let (feat, _) = model.features(&mut tape, &bound, &pipe.mel, &utt, false, &mut rng)?;
    let hyp = model.asr.beam_decode(&mut tape, &bound, feat, pipe.cfg.beam)?;
    let hypothesis = pipe.vocab.detokenize(&hyp.ids);
    let reference = entry.transcript.clone();
    let ref_chars = chars_of(&reference);
    let edits = edit_distance(&ref_chars, &chars_of(&hypothesis));
    Ok(DecodeOutcome {
        id: id.to_string(),
        condition: condition_of(entry.snr_db),
        reference,
        hypothesis,
        edits,
        ref_chars: ref_chars.len(),
        log_prob: hyp.log_prob,
    })
}

/// Evaluation-time preprocessing: resynthesize the enhanced waveform
/// (mask-scaled magnitudes with the noisy phase), blend the original
/// back in at the requested ratio, and rebuild the utterance's features
/// from the blended audio.
fn snr_fused_utterance(
    pipe: &Pipeline,
    model: &JointModel,
    params: &ParamSet,
    id: &str,
    target_db: f64,
) -> Result<crate::corpus::Utterance> {
    let enhancer = model.enhancer.as_ref().ok_or_else(|| {
        Error::Data("snr-fuse preprocessing needs a mode with an enhancer".into())
    })?;
    let mut utt = pipe.utterance(id)?;
    let entry = pipe.manifest.get(id).expect("checked by utterance()");
    let wave = read_wav(&pipe.cfg.data_dir.join(&entry.audio_path))?;
    let spec = stft(&wave, FRAME_LENGTH_S, FRAME_SHIFT_S, FFT_SIZE)?;
    let (_, enhanced_mag) = enhancer.enhance(params, &spec.magnitude())?;
    let enhanced_spec = Spectrogram {
        re: enhanced_mag.values,
        im: vec![0.0; enhanced_mag.frames * enhanced_mag.bins],
        frames: enhanced_mag.frames,
        bins: enhanced_mag.bins,
        params: spec.params,
    };
    let enhanced_wave = istft(&enhanced_spec, &spec)?;
    let blended = snr_fuse(&wave, &enhanced_wave, target_db)?;
    let blended_spec = stft(&blended, FRAME_LENGTH_S, FRAME_SHIFT_S, FFT_SIZE)?;
    utt.noisy_mag = blended_spec.magnitude();
    utt.noisy_fbank = log_fbank(&utt.noisy_mag, &pipe.mel)?;
    Ok(utt)
}
