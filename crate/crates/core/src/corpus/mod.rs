//! Data layer: synthetic harmonic-tone corpus generation, noise
//! synthesis, SNR-conditioned noisy set construction, JSONL manifests,
//! the token vocabulary, and utterance loading for training.

mod batch;
mod synth;
mod vocab;

pub use batch::{load_batch, load_utterance, Utterance};
pub use synth::{
    build_noisy_sets, generate_noise_corpus, generate_synthetic_corpus, snr_label,
    token_fundamental_bin,
};
pub use vocab::Vocabulary;

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(Error::invalid(
                "split",
                format!("unknown split '{other}' (train, dev, test)"),
            )),
        }
    }
}

/// One manifest line. `audio_path` is relative to the corpus root;
/// `snr_db` and `noise_id` are present exactly when the entry is a
/// mixed (noisy) utterance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub audio_path: String,
    pub transcript: String,
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snr_db: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_id: Option<String>,
}

impl ManifestEntry {
    pub fn is_mixed(&self) -> bool {
        self.snr_db.is_some()
    }
}

/// Ordered collection of manifest entries with unique ids, stored as
/// JSON Lines.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn new(entries: Vec<ManifestEntry>) -> Result<Self> {
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert(e.id.as_str()) {
                return Err(Error::invalid(
                    "manifest",
                    format!("duplicate id '{}'", e.id),
                ));
            }
            if e.snr_db.is_some() != e.noise_id.is_some() {
                return Err(Error::invalid(
                    "manifest",
                    format!("entry '{}' must carry snr_db and noise_id together", e.id),
                ));
            }
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: ManifestEntry = serde_json::from_str(line).map_err(|e| {
                Error::invalid(
                    "manifest",
                    format!("{}:{}: {e}", path.display(), lineno + 1),
                )
            })?;
            entries.push(entry);
        }
        Self::new(entries)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        for e in &self.entries {
            let line = serde_json::to_string(e)
                .map_err(|e| Error::invalid("manifest", format!("serialize: {e}")))?;
            writeln!(file, "{line}").map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn split_entries(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Shape of a generated corpus: how many harmonic-tone words exist, how
/// many utterances to emit, and how long each word rings.
#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub vocab_size: usize,
    pub utterances: usize,
    pub tokens_min: usize,
    pub tokens_max: usize,
    pub token_duration_s: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn desk(seed: u64) -> Self {
        Self {
            vocab_size: 8,
            utterances: 60,
            tokens_min: 2,
            tokens_max: 4,
            token_duration_s: 0.2,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 3 {
            return Err(Error::invalid("synthetic_spec", "vocab_size must be at least 3"));
        }
        if self.utterances == 0 {
            return Err(Error::invalid("synthetic_spec", "utterances must be at least 1"));
        }
        if self.tokens_min == 0 || self.tokens_min > self.tokens_max {
            return Err(Error::invalid(
                "synthetic_spec",
                format!("bad token range {}..={}", self.tokens_min, self.tokens_max),
            ));
        }
        if self.token_duration_s <= 0.0 {
            return Err(Error::invalid("synthetic_spec", "token_duration_s must be positive"));
        }
        Ok(())
    }
}

/// Noisy-set construction: training SNR range and the evaluation grid.
#[derive(Debug, Clone)]
pub struct MixSpec {
    pub train_snr_lo: f64,
    pub train_snr_hi: f64,
    pub eval_snrs: Vec<f64>,
    pub seed: u64,
}

impl MixSpec {
    pub fn desk(seed: u64) -> Self {
        Self {
            train_snr_lo: 0.0,
            train_snr_hi: 20.0,
            eval_snrs: vec![0.0, 5.0, 10.0, 15.0, 20.0],
            seed,
        }
    }
}
