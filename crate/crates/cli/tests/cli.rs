//! End-to-end checks of the command line binary: exit codes and the full
//! corpus -> training -> evaluation chain on a tiny setup.

use std::path::Path;
use std::process::{Command, Output};

const TINY_CFG: &str = "\
seed = 3
beam = 2
steps.enh = 5
steps.asr = 5
steps.joint = 5
enh.hidden = 6
enh.layers = 1
enh.dropout = 0
fusion.encoder_hidden = 4
fusion.encoder_layers = 1
fusion.stages = 1
fusion.out_dim = 8
fusion.dropout = 0
asr.d_model = 8
asr.heads = 2
asr.d_ff = 12
asr.enc_blocks = 1
asr.dec_blocks = 1
asr.max_len = 8
asr.conv_front = false
asr.dropout = 0
optim.warmup = 10
paths.data = data
paths.out = out
";

fn bin(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_grf-asr"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary should run")
}

fn assert_ok(out: &Output, what: &str) {
    assert!(
        out.status.success(),
        "{what} failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("no exit code")
}

#[test]
fn help_and_version_exit_zero() {
    let dir = tempfile::tempdir().unwrap();
    for args in [&["--help"][..], &["--version"][..], &["evaluate", "--help"][..]] {
        let out = bin(dir.path(), args);
        assert_eq!(code(&out), 0, "{args:?}");
    }
    let help = bin(dir.path(), &["--help"]);
    let text = String::from_utf8_lossy(&help.stdout).to_string();
    for sub in [
        "gen-corpus",
        "mix",
        "pretrain-enh",
        "pretrain-asr",
        "train-joint",
        "decode",
        "evaluate",
        "compare-modes",
        "dump-spec",
    ] {
        assert!(text.contains(sub), "help misses {sub}:\n{text}");
    }
}

#[test]
fn usage_problems_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let cases: &[&[&str]] = &[
        &["definitely-not-a-command"],
        &["pretrain-enh", "--set", "bogus=1"],
        &["pretrain-enh", "--set", "no-equals-sign"],
        &["pretrain-enh", "--mode", "gru"],
        &["pretrain-enh", "--set", "alpha=-2"],
        &["evaluate"],
    ];
    for args in cases {
        let out = bin(dir.path(), args);
        assert_eq!(code(&out), 1, "{args:?}\n{}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn data_problems_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    // no corpus generated yet
    let out = bin(dir.path(), &["pretrain-enh"]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
    let out = bin(dir.path(), &["mix"]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn tiny_corpus_trains_decodes_and_dumps() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("exp.cfg"), TINY_CFG).unwrap();
    fn with_cfg<'a>(args: &[&'a str]) -> Vec<&'a str> {
        [args, &["--config", "exp.cfg"]].concat()
    }

    assert_ok(
        &bin(
            dir.path(),
            &with_cfg(&[
                "gen-corpus",
                "--utterances",
                "10",
                "--vocab-size",
                "3",
                "--tokens-min",
                "1",
                "--tokens-max",
                "2",
                "--token-duration",
                "0.1",
                "--noise-duration",
                "1.0",
            ]),
        ),
        "gen-corpus",
    );
    assert!(dir.path().join("data/manifest.jsonl").exists());
    assert!(dir.path().join("data/vocab.txt").exists());
    assert!(dir.path().join("data/noise/white.wav").exists());

    assert_ok(&bin(dir.path(), &with_cfg(&["mix"])), "mix");

    // joint training without the pretraining checkpoints is a data error
    let premature = bin(dir.path(), &with_cfg(&["train-joint"]));
    assert_eq!(code(&premature), 2);

    assert_ok(&bin(dir.path(), &with_cfg(&["pretrain-enh"])), "pretrain-enh");
    assert_ok(&bin(dir.path(), &with_cfg(&["pretrain-asr"])), "pretrain-asr");
    assert_ok(&bin(dir.path(), &with_cfg(&["train-joint"])), "train-joint");
    assert!(dir.path().join("out/joint_grf.ckpt").exists());
    assert!(dir.path().join("out/logs/joint_grf.jsonl").exists());

    let eval = bin(dir.path(), &with_cfg(&["evaluate", "out/joint_grf.ckpt"]));
    assert_ok(&eval, "evaluate");
    let table = String::from_utf8_lossy(&eval.stdout).to_string();
    assert!(table.contains("condition"), "{table}");
    assert!(table.contains("AVG"), "{table}");
    assert!(dir.path().join("out/results_joint_grf.txt").exists());
    assert!(dir.path().join("out/results_joint_grf.csv").exists());
    assert!(dir.path().join("out/results_joint_grf.jsonl").exists());

    let decode = bin(
        dir.path(),
        &with_cfg(&["decode", "out/joint_grf.ckpt", "utt0009-snr0", "utt0009"]),
    );
    assert_ok(&decode, "decode");
    let text = String::from_utf8_lossy(&decode.stdout).to_string();
    assert!(text.contains("utt0009-snr0 (0)"), "{text}");
    assert!(text.contains("utt0009 (clean)"), "{text}");
    assert!(text.contains("ref:"), "{text}");
    assert!(text.contains("hyp:"), "{text}");

    let dump = bin(dir.path(), &with_cfg(&["dump-spec", "out/joint_grf.ckpt", "utt0009-snr0"]));
    assert_ok(&dump, "dump-spec");
    for kind in ["noisy", "enhanced", "clean"] {
        assert!(dir.path().join(format!("out/spec/utt0009-snr0_{kind}.pgm")).exists());
        assert!(dir.path().join(format!("out/spec/utt0009-snr0_{kind}.txt")).exists());
    }

    // evaluating the recognizer-only checkpoint needs the matching mode
    let noisy_eval = bin(
        dir.path(),
        &with_cfg(&["evaluate", "out/asr_pretrain.ckpt", "--mode", "noisy_only"]),
    );
    assert_ok(&noisy_eval, "evaluate noisy_only");
}
