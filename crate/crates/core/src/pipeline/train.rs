use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::asr::spec_augment;
use crate::autodiff::{
    load_into, load_matching, save_checkpoint, AdamNoam, NoamSchedule, ParamSet, Tape, Tensor,
};
use crate::corpus::{load_utterance, Manifest, Split, Utterance, Vocabulary};
use crate::dsp::{mel_filterbank, MagnitudeSpectrum, MelFilterbank, FFT_SIZE, N_MELS, SAMPLE_RATE};
use crate::enhancement::sa_loss;
use crate::fusion::FusionMode;
use crate::{Error, Result};

use super::{
    joint_loss, normalize_fbank, stream_rng, Augment, ExperimentConfig, JointModel, STREAM_AUGMENT,
    STREAM_INIT, STREAM_ORDER, STREAM_TRAIN,
};

/// Consecutive non-finite losses tolerated before a run is declared
/// diverged.
const NAN_LIMIT: usize = 10;

/// One line of the append-only JSONL training log. Non-finite losses are
/// recorded as nulls with `skipped = true`.
#[derive(Debug, Serialize)]
struct LogRecord<'a> {
    phase: &'a str,
    step: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    loss_asr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    loss_enh: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    loss: Option<f64>,
    lr: f64,
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    skipped: bool,
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

/// Tracks consecutive skipped steps and aborts the run at the limit.
#[derive(Debug, Default)]
pub(crate) struct NanGuard {
    streak: usize,
}

impl NanGuard {
    pub(crate) fn observe(&mut self, loss_is_finite: bool) -> Result<()> {
        if loss_is_finite {
            self.streak = 0;
            return Ok(());
        }
        self.streak += 1;
        if self.streak >= NAN_LIMIT {
            return Err(Error::Divergence(format!(
                "loss was not finite for {NAN_LIMIT} consecutive steps"
            )));
        }
        Ok(())
    }
}

struct PhaseLog {
    file: fs::File,
}

impl PhaseLog {
    fn open(path: &Path) -> Result<Self> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let file = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(Self { file })
    }

    fn record(&mut self, r: &LogRecord) -> Result<()> {
        let line = serde_json::to_string(r)
            .map_err(|e| Error::Data(format!("log serialization failed: {e}")))?;
        writeln!(self.file, "{line}").map_err(|e| Error::Data(format!("log write failed: {e}")))
    }
}

fn mag_tensor(mag: &MagnitudeSpectrum) -> Result<Tensor> {
    Tensor::matrix(mag.frames, mag.bins, mag.values.clone())
}

fn progress(phase: &str, step: usize, total: usize, loss: f64) {
    if step % 50 == 0 || step == total {
        log::info!("{phase} step {step}/{total}: loss {loss:.4}");
    }
}

/// Loaded experiment context: configuration, manifest, vocabulary, and
/// the mel filterbank shared by every phase.
pub struct Pipeline {
    pub cfg: ExperimentConfig,
    pub manifest: Manifest,
    pub vocab: Vocabulary,
    pub mel: MelFilterbank,
}

impl Pipeline {
    pub fn load(cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let manifest = Manifest::load(&cfg.data_dir.join("manifest.jsonl"))?;
        let vocab = Vocabulary::load(&cfg.data_dir.join("vocab.txt"))?;
        let mel = mel_filterbank(FFT_SIZE, N_MELS, SAMPLE_RATE)?;
        Ok(Self { cfg, manifest, vocab, mel })
    }

    pub fn utterance(&self, id: &str) -> Result<Utterance> {
        load_utterance(&self.manifest, &self.cfg.data_dir, id, &self.vocab, &self.mel)
    }

    pub fn enh_checkpoint(&self) -> PathBuf {
        self.cfg.out_dir.join("enh_pretrain.ckpt")
    }

    pub fn asr_checkpoint(&self) -> PathBuf {
        self.cfg.out_dir.join("asr_pretrain.ckpt")
    }

    pub fn joint_checkpoint(&self, mode: FusionMode) -> PathBuf {
        self.cfg.out_dir.join(format!("joint_{}.ckpt", mode.as_str()))
    }

    /// Fresh joint model for the configured mode, parameters seeded from
    /// the experiment seed.
    pub fn build_model(&self) -> Result<(JointModel, ParamSet)> {
        let mut params = ParamSet::new();
        let mut rng = stream_rng(self.cfg.seed, STREAM_INIT);
        let model = JointModel::init(&self.cfg, self.vocab.len(), &mut params, &mut rng)?;
        Ok((model, params))
    }

    /// Joint model with every parameter restored from a checkpoint.
    pub fn load_model(&self, checkpoint: &Path) -> Result<(JointModel, ParamSet)> {
        let (model, mut params) = self.build_model()?;
        load_into(&mut params, checkpoint)?;
        Ok((model, params))
    }

    fn optimizer(&self) -> AdamNoam {
        let schedule = NoamSchedule {
            factor: self.cfg.optim_factor,
            warmup: self.cfg.optim_warmup,
            model_dim: self.cfg.asr_d_model,
        };
        let clip = (self.cfg.optim_clip > 0.0).then_some(self.cfg.optim_clip);
        AdamNoam::new(schedule, clip)
    }

    fn out_dir(&self) -> Result<&Path> {
        fs::create_dir_all(&self.cfg.out_dir).map_err(|e| Error::io(&self.cfg.out_dir, e))?;
        Ok(&self.cfg.out_dir)
    }

    /// Train-split utterances for one phase, loaded up front in id order.
    fn training_set(&self, mixed: bool, clean: bool, phase: &str) -> Result<Vec<Utterance>> {
        let mut ids: Vec<&str> = self
            .manifest
            .entries()
            .iter()
            .filter(|e| e.split == Split::Train)
            .filter(|e| if e.is_mixed() { mixed } else { clean })
            .map(|e| e.id.as_str())
            .collect();
        ids.sort_unstable();
        if ids.is_empty() {
            return Err(Error::Data(format!("no train utterances available for {phase}")));
        }
        ids.iter().map(|id| self.utterance(id)).collect()
    }

    fn maybe_periodic_checkpoint(
        &self,
        phase: &str,
        step: usize,
        params: &ParamSet,
    ) -> Result<()> {
        let every = self.cfg.checkpoint_every;
        if every > 0 && step % every == 0 {
            let path = self.cfg.out_dir.join(format!("{phase}.step{step}.ckpt"));
            save_checkpoint(params, &path)?;
        }
        Ok(())
    }

    /// Phase 1: mask estimation alone, trained on (noisy, clean)
    /// magnitude pairs of the train split.
    pub fn pretrain_enh(&self) -> Result<PathBuf> {
        let out = self.out_dir()?.to_path_buf();
        let utts = self.training_set(true, false, "pretrain-enh")?;
        let mut params = ParamSet::new();
        let mut init_rng = stream_rng(self.cfg.seed, STREAM_INIT);
        let enhancer = crate::enhancement::Enhancer::init(
            crate::enhancement::EnhancementConfig {
                input_dim: super::BINS,
                hidden: self.cfg.enh_hidden,
                layers: self.cfg.enh_layers,
                dropout: self.cfg.enh_dropout,
            },
            &mut params,
            &mut init_rng,
        )?;
        let mut opt = self.optimizer();
        let mut log = PhaseLog::open(&out.join("logs").join("pretrain_enh.jsonl"))?;
        let mut guard = NanGuard::default();
        let mut train_rng = stream_rng(self.cfg.seed, STREAM_TRAIN);
        let mut order = EpochOrder::new(utts.len(), stream_rng(self.cfg.seed, STREAM_ORDER));

        for step in 1..=self.cfg.enh_steps {
            let u = &utts[order.next_index()];
            let mut tape = Tape::new();
            let bound = params.bind(&mut tape);
            let noisy = tape.leaf(mag_tensor(&u.noisy_mag)?);
            let clean = tape.leaf(mag_tensor(&u.clean_mag)?);
            let (mask, _) = enhancer.forward(&mut tape, &bound, noisy, true, &mut train_rng)?;
            let loss = sa_loss(&mut tape, mask, noisy, clean)?;
            let value = tape.value(loss).item()?;
            guard.observe(value.is_finite())?;
            if !value.is_finite() {
                let lr = opt.schedule.lr(opt.step_count() + 1);
                log.record(&LogRecord {
                    phase: "pretrain_enh",
                    step,
                    loss_asr: None,
                    loss_enh: None,
                    loss: None,
                    lr,
                    skipped: true,
                })?;
                continue;
            }
            tape.backward(loss)?;
            let stats = opt.step(&mut params, &tape, &bound)?;
            log.record(&LogRecord {
                phase: "pretrain_enh",
                step,
                loss_asr: None,
                loss_enh: finite(value),
                loss: finite(value),
                lr: stats.lr,
                skipped: false,
            })?;
            progress("pretrain_enh", step, self.cfg.enh_steps, value);
            self.maybe_periodic_checkpoint("pretrain_enh", step, &params)?;
        }
        let path = self.enh_checkpoint();
        save_checkpoint(&params, &path)?;
        Ok(path)
    }

    /// Phase 2: the recognizer alone on clean utterances.
    pub fn pretrain_asr(&self) -> Result<PathBuf> {
        let out = self.out_dir()?.to_path_buf();
        let utts = self.training_set(false, true, "pretrain-asr")?;
        let mut asr_cfg = self.cfg.clone();
        asr_cfg.mode = FusionMode::NoisyOnly;
        let mut params = ParamSet::new();
        let mut init_rng = stream_rng(self.cfg.seed, STREAM_INIT);
        let model = JointModel::init(&asr_cfg, self.vocab.len(), &mut params, &mut init_rng)?;
        let mut opt = self.optimizer();
        let mut log = PhaseLog::open(&out.join("logs").join("pretrain_asr.jsonl"))?;
        let mut guard = NanGuard::default();
        let mut train_rng = stream_rng(self.cfg.seed, STREAM_TRAIN);
        let mut aug_rng = stream_rng(self.cfg.seed, STREAM_AUGMENT);
        let mut order = EpochOrder::new(utts.len(), stream_rng(self.cfg.seed, STREAM_ORDER));

        for step in 1..=self.cfg.asr_steps {
            let u = &utts[order.next_index()];
            let fbank = match self.cfg.augment {
                Augment::None => u.noisy_fbank.clone(),
                Augment::SpecAugment => {
                    spec_augment(&u.noisy_fbank, self.cfg.time_mask, self.cfg.freq_mask, &mut aug_rng)
                }
            };
            let mut tape = Tape::new();
            let bound = params.bind(&mut tape);
            let leaf = tape.leaf(Tensor::matrix(fbank.frames, fbank.dim, fbank.values)?);
            let feat = normalize_fbank(&mut tape, leaf);
            let loss =
                model.asr.asr_loss(&mut tape, &bound, feat, &u.tokens, true, &mut train_rng)?;
            let value = tape.value(loss).item()?;
            guard.observe(value.is_finite())?;
            if !value.is_finite() {
                let lr = opt.schedule.lr(opt.step_count() + 1);
                log.record(&LogRecord {
                    phase: "pretrain_asr",
                    step,
                    loss_asr: None,
                    loss_enh: None,
                    loss: None,
                    lr,
                    skipped: true,
                })?;
                continue;
            }
            tape.backward(loss)?;
            let stats = opt.step(&mut params, &tape, &bound)?;
            log.record(&LogRecord {
                phase: "pretrain_asr",
                step,
                loss_asr: finite(value),
                loss_enh: None,
                loss: finite(value),
                lr: stats.lr,
                skipped: false,
            })?;
            progress("pretrain_asr", step, self.cfg.asr_steps, value);
            self.maybe_periodic_checkpoint("pretrain_asr", step, &params)?;
        }
        let path = self.asr_checkpoint();
        save_checkpoint(&params, &path)?;
        Ok(path)
    }

    /// Phase 3: everything together under the composite loss, warm
    /// started from the two pretraining checkpoints.
    pub fn train_joint(&self) -> Result<PathBuf> {
        let out = self.out_dir()?.to_path_buf();
        let (model, mut params) = self.build_model()?;
        if !self.cfg.from_scratch {
            let asr_ckpt = self.asr_checkpoint();
            if !asr_ckpt.exists() {
                return Err(Error::Data(format!(
                    "missing {} — run pretrain-asr first or pass --from-scratch",
                    asr_ckpt.display()
                )));
            }
            if model.enhancer.is_some() {
                let enh_ckpt = self.enh_checkpoint();
                if !enh_ckpt.exists() {
                    return Err(Error::Data(format!(
                        "missing {} — run pretrain-enh first or pass --from-scratch",
                        enh_ckpt.display()
                    )));
                }
                load_matching(&mut params, &enh_ckpt)?;
            }
            load_matching(&mut params, &asr_ckpt)?;
        }
        let utts = self.training_set(true, self.cfg.mct, "train-joint")?;
        let phase = format!("joint_{}", self.cfg.mode.as_str());
        let mut opt = self.optimizer();
        let mut log = PhaseLog::open(&out.join("logs").join(format!("{phase}.jsonl")))?;
        let mut guard = NanGuard::default();
        let mut train_rng = stream_rng(self.cfg.seed, STREAM_TRAIN);
        let mut aug_rng = stream_rng(self.cfg.seed, STREAM_AUGMENT);
        let mut order = EpochOrder::new(utts.len(), stream_rng(self.cfg.seed, STREAM_ORDER));

        for step in 1..=self.cfg.joint_steps {
            let u = &utts[order.next_index()];
            let augmented;
            let u = match self.cfg.augment {
                Augment::None => u,
                Augment::SpecAugment => {
                    let mut v = u.clone();
                    v.noisy_fbank = spec_augment(
                        &u.noisy_fbank,
                        self.cfg.time_mask,
                        self.cfg.freq_mask,
                        &mut aug_rng,
                    );
                    augmented = v;
                    &augmented
                }
            };
            let mut tape = Tape::new();
            let bound = params.bind(&mut tape);
            let (feat, nodes) =
                model.features(&mut tape, &bound, &self.mel, u, true, &mut train_rng)?;
            let asr_var =
                model.asr.asr_loss(&mut tape, &bound, feat, &u.tokens, true, &mut train_rng)?;
            let asr_val = tape.value(asr_var).item()?;
            let (enh_var, enh_val) = match nodes {
                Some(n) => {
                    let clean = tape.leaf(mag_tensor(&u.clean_mag)?);
                    let sa = sa_loss(&mut tape, n.mask, n.noisy_mag, clean)?;
                    let v = tape.value(sa).item()?;
                    (Some(sa), Some(v))
                }
                None => (None, None),
            };
            let total_finite = asr_val.is_finite() && enh_val.map_or(true, f64::is_finite);
            guard.observe(total_finite)?;
            if !total_finite {
                let lr = opt.schedule.lr(opt.step_count() + 1);
                log.record(&LogRecord {
                    phase: &phase,
                    step,
                    loss_asr: finite(asr_val),
                    loss_enh: enh_val.and_then(finite),
                    loss: None,
                    lr,
                    skipped: true,
                })?;
                continue;
            }
            let loss = joint_loss(&mut tape, asr_var, enh_var, self.cfg.alpha)?;
            let value = tape.value(loss).item()?;
            tape.backward(loss)?;
            let stats = opt.step(&mut params, &tape, &bound)?;
            log.record(&LogRecord {
                phase: &phase,
                step,
                loss_asr: finite(asr_val),
                loss_enh: enh_val.and_then(finite),
                loss: finite(value),
                lr: stats.lr,
                skipped: false,
            })?;
            progress(&phase, step, self.cfg.joint_steps, value);
            self.maybe_periodic_checkpoint(&phase, step, &params)?;
        }
        let path = self.joint_checkpoint(self.cfg.mode);
        save_checkpoint(&params, &path)?;
        Ok(path)
    }
}

/// Seeded epoch shuffling: every utterance appears once per epoch and the
/// order is reshuffled between epochs.
struct EpochOrder {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl EpochOrder {
    fn new(len: usize, rng: ChaCha8Rng) -> Self {
        Self { order: (0..len).collect(), pos: len, rng }
    }

    fn next_index(&mut self) -> usize {
        if self.pos == self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let idx = self.order[self.pos];
        self.pos += 1;
        idx
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::corpus::{
        build_noisy_sets, generate_noise_corpus, generate_synthetic_corpus, MixSpec, SyntheticSpec,
    };

    /// Tiny corpus plus tiny model settings shared by the training tests.
    pub(crate) fn tiny_experiment(root: &Path, seed: u64) -> ExperimentConfig {
        let data = root.join("data");
        let spec = SyntheticSpec {
            vocab_size: 3,
            utterances: 12,
            tokens_min: 1,
            tokens_max: 2,
            token_duration_s: 0.1,
            seed: 5,
        };
        let clean = generate_synthetic_corpus(&spec, &data).unwrap();
        let noise_dir = root.join("noise");
        generate_noise_corpus(&noise_dir, 1.0, 6).unwrap();
        build_noisy_sets(&clean, &data, &noise_dir, &MixSpec::desk(7)).unwrap();

        let mut cfg = ExperimentConfig::default();
        cfg.seed = seed;
        cfg.data_dir = data;
        cfg.out_dir = root.join("out");
        cfg.enh_steps = 8;
        cfg.asr_steps = 8;
        cfg.joint_steps = 8;
        cfg.enh_hidden = 6;
        cfg.enh_layers = 1;
        cfg.enh_dropout = 0.0;
        cfg.fusion_hidden = 4;
        cfg.fusion_layers = 1;
        cfg.fusion_stages = 1;
        cfg.fusion_out = 8;
        cfg.fusion_dropout = 0.0;
        cfg.asr_d_model = 8;
        cfg.asr_heads = 2;
        cfg.asr_d_ff = 12;
        cfg.asr_enc_blocks = 1;
        cfg.asr_dec_blocks = 1;
        cfg.asr_max_len = 8;
        cfg.asr_conv_front = false;
        cfg.asr_dropout = 0.0;
        cfg.optim_warmup = 10;
        cfg
    }

    #[test]
    fn nan_guard_aborts_after_ten_consecutive_bad_steps() {
        let mut guard = NanGuard::default();
        for _ in 0..9 {
            guard.observe(false).unwrap();
        }
        guard.observe(true).unwrap();
        for _ in 0..9 {
            guard.observe(false).unwrap();
        }
        let err = guard.observe(false).unwrap_err();
        assert!(matches!(err, Error::Divergence(_)));
    }

    #[test]
    fn epoch_order_covers_every_index_each_epoch() {
        let mut order = EpochOrder::new(5, stream_rng(1, STREAM_ORDER));
        for _ in 0..3 {
            let mut seen: Vec<usize> = (0..5).map(|_| order.next_index()).collect();
            seen.sort_unstable();
            assert_eq!(seen, vec![0, 1, 2, 3, 4]);
        }
    }

    #[test]
    fn pretraining_writes_checkpoints_and_logs_deterministically() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_experiment(dir.path(), 3);

        let run = |out: &Path| -> (Vec<u8>, Vec<u8>, Vec<u8>) {
            let mut cfg = cfg.clone();
            cfg.out_dir = out.to_path_buf();
            let pipe = Pipeline::load(cfg).unwrap();
            let enh = pipe.pretrain_enh().unwrap();
            let asr = pipe.pretrain_asr().unwrap();
            (
                fs::read(enh).unwrap(),
                fs::read(asr).unwrap(),
                fs::read(out.join("logs").join("pretrain_enh.jsonl")).unwrap(),
            )
        };
        let a = run(&dir.path().join("out_a"));
        let b = run(&dir.path().join("out_b"));
        assert_eq!(a.0, b.0, "enhancement checkpoints differ");
        assert_eq!(a.1, b.1, "recognizer checkpoints differ");
        assert_eq!(a.2, b.2, "logs differ");
        assert!(!a.2.is_empty());

        let first_line = a.2.split(|b| *b == b'\n').next().unwrap();
        let record: serde_json::Value = serde_json::from_slice(first_line).unwrap();
        assert_eq!(record["phase"], "pretrain_enh");
        assert_eq!(record["step"], 1);
        assert!(record["loss_enh"].as_f64().unwrap() > 0.0);
        assert!(record["lr"].as_f64().unwrap() > 0.0);
        assert!(record.get("timestamp").is_none());
    }

    #[test]
    fn joint_phase_requires_the_pretraining_checkpoints() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_experiment(dir.path(), 4);
        let pipe = Pipeline::load(cfg.clone()).unwrap();
        let err = pipe.train_joint().unwrap_err();
        assert!(matches!(err, Error::Data(_)), "{err}");
        assert!(err.to_string().contains("from-scratch"), "{err}");
    }

    #[test]
    fn joint_phase_runs_from_scratch_and_after_pretraining() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_experiment(dir.path(), 5);
        cfg.from_scratch = true;
        let pipe = Pipeline::load(cfg.clone()).unwrap();
        let ckpt = pipe.train_joint().unwrap();
        assert!(ckpt.ends_with("joint_grf.ckpt"));
        let (_, params) = pipe.load_model(&ckpt).unwrap();
        assert!(params.iter().any(|p| p.name.starts_with("enh.")));

        cfg.from_scratch = false;
        cfg.out_dir = dir.path().join("out2");
        let pipe = Pipeline::load(cfg).unwrap();
        pipe.pretrain_enh().unwrap();
        pipe.pretrain_asr().unwrap();
        let ckpt = pipe.train_joint().unwrap();
        assert!(ckpt.exists());
        let log = fs::read_to_string(
            pipe.cfg.out_dir.join("logs").join("joint_grf.jsonl"),
        )
        .unwrap();
        let last: serde_json::Value =
            serde_json::from_str(log.lines().last().unwrap()).unwrap();
        assert!(last["loss_asr"].as_f64().is_some());
        assert!(last["loss_enh"].as_f64().is_some());
        assert!(last["loss"].as_f64().unwrap() > 0.0);
    }

    #[test]
    fn joint_warm_start_copies_the_pretrained_tensors() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_experiment(dir.path(), 6);
        let pipe = Pipeline::load(cfg).unwrap();
        pipe.pretrain_enh().unwrap();
        pipe.pretrain_asr().unwrap();

        let (model, mut params) = pipe.build_model().unwrap();
        assert!(model.enhancer.is_some());
        let fresh = params.get("enh.out.w").unwrap().data.clone();
        load_matching(&mut params, &pipe.enh_checkpoint()).unwrap();
        let warmed = params.get("enh.out.w").unwrap().data.clone();
        assert_ne!(fresh, warmed, "warm start should change pretrained tensors");
    }
}
