use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::fusion::FusionMode;
use crate::{Error, Result};

/// Training-time feature deformation choices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Augment {
    None,
    SpecAugment,
}

impl Augment {
    pub fn as_str(&self) -> &'static str {
        match self {
            Augment::None => "none",
            Augment::SpecAugment => "specaugment",
        }
    }
}

impl fmt::Display for Augment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Augment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Augment::None),
            "specaugment" => Ok(Augment::SpecAugment),
            other => Err(Error::Config(format!(
                "unknown augment '{other}' (expected none or specaugment)"
            ))),
        }
    }
}

/// Every knob of an experiment, addressable as flat `key = value` lines.
/// Unset keys keep the desk-scale defaults below.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub mode: FusionMode,
    /// Weight of the enhancement loss inside the joint objective.
    pub alpha: f64,
    pub augment: Augment,
    pub time_mask: usize,
    pub freq_mask: usize,
    /// Multi-condition training: include clean utterances in the joint phase.
    pub mct: bool,
    pub seed: u64,
    /// Seed list for multi-seed comparisons.
    pub seeds: Vec<u64>,
    pub enh_steps: usize,
    pub asr_steps: usize,
    pub joint_steps: usize,
    /// Extra checkpoint every N steps; 0 keeps only the final one.
    pub checkpoint_every: usize,
    pub beam: usize,
    /// Evaluation-time blend of the original signal back into the
    /// enhanced one, in dB; unset disables the preprocessing.
    pub snr_fuse_db: Option<f64>,
    /// Let the joint phase start from random weights instead of the
    /// pretraining checkpoints.
    pub from_scratch: bool,
    pub enh_hidden: usize,
    pub enh_layers: usize,
    pub enh_dropout: f64,
    pub fusion_hidden: usize,
    pub fusion_layers: usize,
    pub fusion_stages: usize,
    pub fusion_out: usize,
    pub fusion_dropout: f64,
    pub asr_d_model: usize,
    pub asr_heads: usize,
    pub asr_d_ff: usize,
    pub asr_enc_blocks: usize,
    pub asr_dec_blocks: usize,
    pub asr_max_len: usize,
    pub asr_conv_front: bool,
    pub asr_dropout: f64,
    pub asr_smoothing: f64,
    pub optim_factor: f64,
    pub optim_warmup: usize,
    pub optim_clip: f64,
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            mode: FusionMode::Grf,
            alpha: 1.0,
            augment: Augment::None,
            time_mask: 10,
            freq_mask: 12,
            mct: true,
            seed: 1,
            seeds: vec![1, 2, 3],
            enh_steps: 500,
            asr_steps: 2000,
            joint_steps: 400,
            checkpoint_every: 0,
            beam: 5,
            snr_fuse_db: None,
            from_scratch: false,
            enh_hidden: 128,
            enh_layers: 2,
            enh_dropout: 0.5,
            fusion_hidden: 64,
            fusion_layers: 1,
            fusion_stages: 4,
            fusion_out: 80,
            fusion_dropout: 0.5,
            asr_d_model: 64,
            asr_heads: 4,
            asr_d_ff: 128,
            asr_enc_blocks: 2,
            asr_dec_blocks: 2,
            asr_max_len: 64,
            asr_conv_front: true,
            asr_dropout: 0.1,
            asr_smoothing: 0.1,
            optim_factor: 0.5,
            optim_warmup: 200,
            optim_clip: 5.0,
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("out"),
        }
    }
}

fn parse_as<T>(key: &str, value: &str) -> Result<T>
where
    T: FromStr,
    T::Err: fmt::Display,
{
    value
        .parse::<T>()
        .map_err(|e| Error::Config(format!("bad value '{value}' for {key}: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(Error::Config(format!(
            "bad value '{other}' for {key}: expected true or false"
        ))),
    }
}

impl ExperimentConfig {
    /// Apply one `key = value` assignment. Unknown keys are rejected so
    /// typos fail loudly instead of silently training with defaults.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "mode" => self.mode = value.parse()?,
            "alpha" => self.alpha = parse_as(key, value)?,
            "augment" => self.augment = value.parse()?,
            "augment.time_mask" => self.time_mask = parse_as(key, value)?,
            "augment.freq_mask" => self.freq_mask = parse_as(key, value)?,
            "mct" => self.mct = parse_bool(key, value)?,
            "seed" => self.seed = parse_as(key, value)?,
            "seeds" => {
                self.seeds = value
                    .split(',')
                    .map(|s| parse_as::<u64>("seeds", s.trim()))
                    .collect::<Result<_>>()?;
                if self.seeds.is_empty() {
                    return Err(Error::Config("seeds must list at least one seed".into()));
                }
            }
            "steps.enh" => self.enh_steps = parse_as(key, value)?,
            "steps.asr" => self.asr_steps = parse_as(key, value)?,
            "steps.joint" => self.joint_steps = parse_as(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse_as(key, value)?,
            "beam" => self.beam = parse_as(key, value)?,
            "snr_fuse_db" => {
                self.snr_fuse_db = if value == "none" {
                    None
                } else {
                    Some(parse_as(key, value)?)
                }
            }
            "from_scratch" => self.from_scratch = parse_bool(key, value)?,
            "enh.hidden" => self.enh_hidden = parse_as(key, value)?,
            "enh.layers" => self.enh_layers = parse_as(key, value)?,
            "enh.dropout" => self.enh_dropout = parse_as(key, value)?,
            "fusion.encoder_hidden" => self.fusion_hidden = parse_as(key, value)?,
            "fusion.encoder_layers" => self.fusion_layers = parse_as(key, value)?,
            "fusion.stages" => self.fusion_stages = parse_as(key, value)?,
            "fusion.out_dim" => self.fusion_out = parse_as(key, value)?,
            "fusion.dropout" => self.fusion_dropout = parse_as(key, value)?,
            "asr.d_model" => self.asr_d_model = parse_as(key, value)?,
            "asr.heads" => self.asr_heads = parse_as(key, value)?,
            "asr.d_ff" => self.asr_d_ff = parse_as(key, value)?,
            "asr.enc_blocks" => self.asr_enc_blocks = parse_as(key, value)?,
            "asr.dec_blocks" => self.asr_dec_blocks = parse_as(key, value)?,
            "asr.max_len" => self.asr_max_len = parse_as(key, value)?,
            "asr.conv_front" => self.asr_conv_front = parse_bool(key, value)?,
            "asr.dropout" => self.asr_dropout = parse_as(key, value)?,
            "asr.smoothing" => self.asr_smoothing = parse_as(key, value)?,
            "optim.factor" => self.optim_factor = parse_as(key, value)?,
            "optim.warmup" => self.optim_warmup = parse_as(key, value)?,
            "optim.clip" => self.optim_clip = parse_as(key, value)?,
            "paths.data" => self.data_dir = PathBuf::from(value),
            "paths.out" => self.out_dir = PathBuf::from(value),
            other => return Err(Error::Config(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// Parse flat `key = value` text. Blank lines and `#` comments are
    /// skipped; later assignments override earlier ones.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("{origin}:{}: expected key = value", lineno + 1))
            })?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("{origin}:{}: {e}", lineno + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha < 0.0 || !self.alpha.is_finite() {
            return Err(Error::Config(format!("alpha must be finite and >= 0, got {}", self.alpha)));
        }
        if self.beam == 0 {
            return Err(Error::Config("beam must be at least 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must list at least one seed".into()));
        }
        Ok(())
    }
}
