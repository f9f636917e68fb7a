use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use grf_asr::corpus::{
    build_noisy_sets, generate_noise_corpus, generate_synthetic_corpus, Manifest, MixSpec,
    SyntheticSpec,
};
use grf_asr::fusion::FusionMode;
use grf_asr::pipeline::{
    compare_modes, decode_one, dump_spectrograms, evaluate, ExperimentConfig, Pipeline,
};
use grf_asr::{Error, Result};

/// Speech enhancement, gated recurrent feature fusion and transformer
/// recognition at desk scale: corpus synthesis, the three training
/// phases, decoding, evaluation and multi-seed mode comparison.
#[derive(Parser)]
#[command(name = "grf-asr", version)]
struct Cli {
    #[command(flatten)]
    opts: CommonOpts,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonOpts {
    /// Experiment configuration file (flat `key = value` lines).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Corpus directory (overrides `paths.data`).
    #[arg(long, global = true, value_name = "DIR")]
    data: Option<PathBuf>,
    /// Output directory for checkpoints, logs and tables (overrides `paths.out`).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Experiment seed driving initialization, shuffling and dropout.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Fusion mode: grf, concat, enhanced_only or noisy_only.
    #[arg(long, global = true)]
    mode: Option<String>,
    /// Weight of the enhancement loss inside the joint objective.
    #[arg(long, global = true)]
    alpha: Option<f64>,
    /// Beam width used when decoding.
    #[arg(long, global = true)]
    beam: Option<usize>,
    /// Evaluation-time blend of the original audio back into the
    /// enhanced one, in dB ("none" disables it).
    #[arg(long, global = true, value_name = "DB|none")]
    snr_fuse_db: Option<String>,
    /// Set any configuration key directly, e.g. --set steps.joint=100.
    /// Applied last, so it wins over the other flags.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl CommonOpts {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::from_file(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(v) = &self.data {
            cfg.set("paths.data", &v.display().to_string())?;
        }
        if let Some(v) = &self.out {
            cfg.set("paths.out", &v.display().to_string())?;
        }
        if let Some(v) = self.seed {
            cfg.set("seed", &v.to_string())?;
        }
        if let Some(v) = &self.mode {
            cfg.set("mode", v)?;
        }
        if let Some(v) = self.alpha {
            cfg.set("alpha", &v.to_string())?;
        }
        if let Some(v) = self.beam {
            cfg.set("beam", &v.to_string())?;
        }
        if let Some(v) = &self.snr_fuse_db {
            cfg.set("snr_fuse_db", v)?;
        }
        for pair in &self.set {
            let (key, value) = pair.split_once('=').ok_or_else(|| {
                Error::Config(format!("--set expects KEY=VALUE, got '{pair}'"))
            })?;
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic clean corpus and the noise recordings.
    GenCorpus(GenCorpusArgs),
    /// Mix noisy training and evaluation sets from the clean corpus.
    Mix(MixArgs),
    /// Phase 1: train the enhancement mask estimator alone.
    PretrainEnh,
    /// Phase 2: train the recognizer alone on clean speech.
    PretrainAsr,
    /// Phase 3: joint training, warm started from the pretraining
    /// checkpoints unless --from-scratch is given.
    TrainJoint {
        /// Start from random weights instead of the pretraining checkpoints.
        #[arg(long)]
        from_scratch: bool,
    },
    /// Decode specific utterances with a trained checkpoint.
    Decode {
        checkpoint: PathBuf,
        /// Utterance ids from the manifest.
        #[arg(required = true)]
        ids: Vec<String>,
    },
    /// Decode the whole test split and tabulate character error rates
    /// per SNR condition.
    Evaluate {
        checkpoint: PathBuf,
        /// Label for the table and the result file names
        /// (defaults to the checkpoint file stem).
        #[arg(long)]
        tag: Option<String>,
    },
    /// Train and evaluate fusion modes across the configured seeds and
    /// write a comparison report.
    CompareModes {
        /// Comma-separated fusion modes to compare.
        #[arg(long, default_value = "grf,concat,enhanced_only")]
        modes: String,
    },
    /// Write noisy, enhanced and clean spectrograms of one utterance as
    /// PGM images plus numeric text files.
    DumpSpec {
        checkpoint: PathBuf,
        id: String,
        /// Output directory (defaults to <out>/spec).
        #[arg(long, value_name = "DIR")]
        dir: Option<PathBuf>,
    },
}

#[derive(Args)]
struct GenCorpusArgs {
    /// Number of distinct words in the synthetic vocabulary.
    #[arg(long, default_value_t = 8)]
    vocab_size: usize,
    /// Number of clean utterances across the train/dev/test splits.
    #[arg(long, default_value_t = 60)]
    utterances: usize,
    #[arg(long, default_value_t = 2)]
    tokens_min: usize,
    #[arg(long, default_value_t = 4)]
    tokens_max: usize,
    /// Duration of one spoken token in seconds.
    #[arg(long, default_value_t = 0.2)]
    token_duration: f64,
    /// Duration of each generated noise recording in seconds.
    #[arg(long, default_value_t = 10.0)]
    noise_duration: f64,
    /// Seed for utterance content (defaults to the experiment seed).
    #[arg(long)]
    corpus_seed: Option<u64>,
    /// Seed for the noise recordings (defaults to the experiment seed).
    #[arg(long)]
    noise_seed: Option<u64>,
}

#[derive(Args)]
struct MixArgs {
    /// Lower edge of the uniform training SNR range in dB.
    #[arg(long, default_value_t = 0.0)]
    train_snr_lo: f64,
    /// Upper edge of the uniform training SNR range in dB.
    #[arg(long, default_value_t = 20.0)]
    train_snr_hi: f64,
    /// Comma-separated evaluation SNRs in dB.
    #[arg(long, default_value = "0,5,10,15,20")]
    eval_snrs: String,
    /// Seed for noise selection and mixing (defaults to the experiment seed).
    #[arg(long)]
    mix_seed: Option<u64>,
    /// Directory of noise WAVs (defaults to <data>/noise).
    #[arg(long, value_name = "DIR")]
    noise_dir: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<()> {
    let cfg = cli.opts.config()?;
    match cli.command {
        Command::GenCorpus(args) => {
            let spec = SyntheticSpec {
                vocab_size: args.vocab_size,
                utterances: args.utterances,
                tokens_min: args.tokens_min,
                tokens_max: args.tokens_max,
                token_duration_s: args.token_duration,
                seed: args.corpus_seed.unwrap_or(cfg.seed),
            };
            let manifest = generate_synthetic_corpus(&spec, &cfg.data_dir)?;
            let noise_dir = cfg.data_dir.join("noise");
            let noises = generate_noise_corpus(
                &noise_dir,
                args.noise_duration,
                args.noise_seed.unwrap_or(cfg.seed),
            )?;
            println!(
                "wrote {} clean utterances and {} noise recordings under {}",
                manifest.entries().len(),
                noises.len(),
                cfg.data_dir.display()
            );
        }
        Command::Mix(args) => {
            let manifest = Manifest::load(&cfg.data_dir.join("manifest.jsonl"))?;
            let eval_snrs = args
                .eval_snrs
                .split(',')
                .map(|s| {
                    s.trim().parse::<f64>().map_err(|e| {
                        Error::Config(format!("bad SNR '{}' in --eval-snrs: {e}", s.trim()))
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            let spec = MixSpec {
                train_snr_lo: args.train_snr_lo,
                train_snr_hi: args.train_snr_hi,
                eval_snrs,
                seed: args.mix_seed.unwrap_or(cfg.seed),
            };
            let noise_dir = args.noise_dir.unwrap_or_else(|| cfg.data_dir.join("noise"));
            let before = manifest.entries().len();
            let mixed = build_noisy_sets(&manifest, &cfg.data_dir, &noise_dir, &spec)?;
            println!(
                "mixed {} noisy utterances; manifest now lists {} entries",
                mixed.entries().len() - before,
                mixed.entries().len()
            );
        }
        Command::PretrainEnh => {
            let path = Pipeline::load(cfg)?.pretrain_enh()?;
            println!("checkpoint written to {}", path.display());
        }
        Command::PretrainAsr => {
            let path = Pipeline::load(cfg)?.pretrain_asr()?;
            println!("checkpoint written to {}", path.display());
        }
        Command::TrainJoint { from_scratch } => {
            let mut cfg = cfg;
            if from_scratch {
                cfg.from_scratch = true;
            }
            let path = Pipeline::load(cfg)?.train_joint()?;
            println!("checkpoint written to {}", path.display());
        }
        Command::Decode { checkpoint, ids } => {
            let pipe = Pipeline::load(cfg)?;
            let (model, params) = pipe.load_model(&checkpoint)?;
            for id in &ids {
                let o = decode_one(&pipe, &model, &params, id)?;
                println!("{} ({}) log_prob {:.3}", o.id, o.condition, o.log_prob);
                println!("  ref: {}", o.reference);
                println!("  hyp: {}", o.hypothesis);
                println!("  edits: {}/{}", o.edits, o.ref_chars);
            }
        }
        Command::Evaluate { checkpoint, tag } => {
            let pipe = Pipeline::load(cfg)?;
            let (model, params) = pipe.load_model(&checkpoint)?;
            let tag = tag.unwrap_or_else(|| {
                checkpoint
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "results".to_string())
            });
            let (table, outcomes) = evaluate(&pipe, &model, &params, &tag)?;
            print!("{}", table.text());
            let out = &pipe.cfg.out_dir;
            std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
            let txt = out.join(format!("results_{tag}.txt"));
            let csv = out.join(format!("results_{tag}.csv"));
            let jsonl = out.join(format!("results_{tag}.jsonl"));
            std::fs::write(&txt, table.text()).map_err(|e| Error::io(&txt, e))?;
            std::fs::write(&csv, table.csv()).map_err(|e| Error::io(&csv, e))?;
            let lines = outcomes
                .iter()
                .map(|o| {
                    serde_json::to_string(o)
                        .map_err(|e| Error::Data(format!("result serialization failed: {e}")))
                })
                .collect::<Result<Vec<_>>>()?
                .join("\n");
            std::fs::write(&jsonl, lines + "\n").map_err(|e| Error::io(&jsonl, e))?;
            println!("results written to {} (.csv, .jsonl)", txt.display());
        }
        Command::CompareModes { modes } => {
            let modes = modes
                .split(',')
                .map(|s| s.trim().parse::<FusionMode>())
                .collect::<Result<Vec<_>>>()?;
            let seeds = cfg.seeds.clone();
            let report = compare_modes(&cfg, &modes, &seeds)?;
            print!("{}", report.text);
            println!(
                "report written to {}",
                cfg.out_dir.join("compare_report.txt").display()
            );
        }
        Command::DumpSpec { checkpoint, id, dir } => {
            let pipe = Pipeline::load(cfg)?;
            let (model, params) = pipe.load_model(&checkpoint)?;
            let dir = dir.unwrap_or_else(|| pipe.cfg.out_dir.join("spec"));
            for path in dump_spectrograms(&pipe, &model, &params, &id, &dir)? {
                println!("{}", path.display());
            }
        }
    }
    Ok(())
}

/// Exit codes: 0 success, 1 usage or configuration problems, 2 data and
/// runtime failures, 3 numerically diverged training.
fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::InvalidArgument { .. } => 1,
        Error::Divergence(_) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .format_target(false)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
