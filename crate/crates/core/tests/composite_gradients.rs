//! Finite-difference checks for the composed model blocks: BLSTM stacks,
//! the gated fusion cell, attention, the full recognizer loss, and the
//! joint loss reaching back into the enhancement parameters.
//!
//! Parameters are spot-checked: for every trainable tensor a fixed
//! random subset of entries is perturbed with central differences and
//! compared against the tape gradient. Explicit activation inputs are
//! checked densely.

use grf_asr::asr::{AsrConfig, AsrModel, TokenSequence};
use grf_asr::autodiff::{Binding, ParamSet, Tape, Tensor, Var};
use grf_asr::enhancement::{sa_loss, EnhancementConfig, Enhancer};
use grf_asr::fusion::{FusionBlock, FusionConfig, FusionMode};
use grf_asr::nn::{BlstmStack, Linear};
use grf_asr_oracles::{central_difference, max_rel_err};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-6;
const TOL: f64 = 1e-5;
const FLOOR: f64 = 1e-2;
const SAMPLES_PER_PARAM: usize = 6;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::matrix(rows, cols, data).unwrap()
}

/// Evaluate the scalar loss for a concrete parameter set.
fn loss_at(params: &ParamSet, forward: &dyn Fn(&mut Tape, &Binding) -> Var) -> f64 {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let loss = forward(&mut tape, &bound);
    tape.value(loss).item().unwrap()
}

/// Spot-check the gradient of every trainable parameter against central
/// differences on a deterministic sample of entries.
fn assert_param_grads(
    label: &str,
    params: &ParamSet,
    seed: u64,
    forward: &dyn Fn(&mut Tape, &Binding) -> Var,
) {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let loss = forward(&mut tape, &bound);
    tape.backward(loss).expect(label);

    let mut pick_rng = rng(seed);
    for param in params.iter().filter(|p| p.trainable) {
        let var = bound.var(&param.name).unwrap();
        let grad = tape.grad(var);
        let len = param.tensor.data.len();
        let full: Vec<f64> = if grad.is_empty() { vec![0.0; len] } else { grad.to_vec() };
        let picks: Vec<usize> = if len <= SAMPLES_PER_PARAM {
            (0..len).collect()
        } else {
            let mut set = std::collections::BTreeSet::new();
            while set.len() < SAMPLES_PER_PARAM {
                set.insert(pick_rng.gen_range(0..len));
            }
            set.into_iter().collect()
        };
        for idx in picks {
            let mut plus = params.clone();
            plus.get_mut(&param.name).unwrap().data[idx] += H;
            let mut minus = params.clone();
            minus.get_mut(&param.name).unwrap().data[idx] -= H;
            let numeric = (loss_at(&plus, forward) - loss_at(&minus, forward)) / (2.0 * H);
            let err = max_rel_err(&[full[idx]], &[numeric], FLOOR);
            assert!(
                err < TOL,
                "{label}: {}[{idx}] analytic {} against numeric {numeric} (rel err {err})",
                param.name,
                full[idx],
            );
        }
    }
}

/// Dense check of the gradient w.r.t. explicit input leaves rebuilt from
/// a flat probe vector; parameters stay fixed inside the closure.
fn assert_input_grads(
    label: &str,
    x: &[f64],
    build: &dyn Fn(&mut Tape, &[f64]) -> (Var, Vec<Var>),
) {
    let mut tape = Tape::new();
    let (loss, inputs) = build(&mut tape, x);
    tape.backward(loss).expect(label);
    let mut analytic = Vec::with_capacity(x.len());
    for v in inputs {
        let g = tape.grad(v);
        if g.is_empty() {
            analytic.extend(std::iter::repeat(0.0).take(tape.value(v).len()));
        } else {
            analytic.extend_from_slice(g);
        }
    }
    assert_eq!(analytic.len(), x.len(), "{label}: leaf sizes disagree with input");
    let numeric = central_difference(
        |probe| {
            let mut t = Tape::new();
            let (l, _) = build(&mut t, probe);
            t.value(l).item().unwrap()
        },
        x,
        H,
    );
    let err = max_rel_err(&analytic, &numeric, FLOOR);
    assert!(err < TOL, "{label}: input gradient error {err} exceeds {TOL}");
}

/// Weighted scalar readout so every output entry matters differently.
fn weighted(tape: &mut Tape, v: Var, seed: u64) -> Var {
    let shape = tape.shape(v).to_vec();
    let len: usize = shape.iter().product();
    let mut w_rng = rng(seed);
    let weights: Vec<f64> = (0..len).map(|_| w_rng.gen_range(-1.0..1.0)).collect();
    let w = tape.leaf(Tensor { shape, data: weights });
    let prod = tape.mul(v, w).unwrap();
    tape.sum(prod)
}

#[test]
fn blstm_stack_gradients() {
    let mut init = rng(40);
    let mut params = ParamSet::new();
    let stack = BlstmStack::init("b", 3, 4, 2, 0.0, &mut params, &mut init).unwrap();
    let input = random_matrix(&mut init, 5, 3);

    let fwd = {
        let stack = stack.clone();
        let input = input.clone();
        move |tape: &mut Tape, bound: &Binding| {
            let x = tape.leaf(input.clone());
            let mut r = rng(0);
            let y = stack.forward(tape, bound, x, false, &mut r).unwrap();
            weighted(tape, y, 41)
        }
    };
    assert_param_grads("blstm_stack", &params, 42, &fwd);

    assert_input_grads("blstm_stack_input", &input.data.clone(), &|tape, x| {
        let bound = params.bind(tape);
        let leaf = tape.leaf(Tensor::matrix(5, 3, x.to_vec()).unwrap());
        let mut r = rng(0);
        let y = stack.forward(tape, &bound, leaf, false, &mut r).unwrap();
        (weighted(tape, y, 41), vec![leaf])
    });
}

fn small_fusion(mode: FusionMode) -> FusionConfig {
    FusionConfig {
        feat_dim: 4,
        encoder_hidden: 3,
        encoder_layers: 1,
        stages: 2,
        mode,
        out_dim: 5,
        dropout: 0.0,
    }
}

#[test]
fn grf_step_gradients_for_parameters_and_both_inputs() {
    let mut init = rng(50);
    let mut params = ParamSet::new();
    let block = FusionBlock::init(small_fusion(FusionMode::Grf), &mut params, &mut init).unwrap();
    let width = block.cfg.beta_dim();
    let frames = 4;
    let input = random_matrix(&mut init, frames, width);
    let hidden = random_matrix(&mut init, frames, width);

    let fwd = {
        let block = block.clone();
        let input = input.clone();
        let hidden = hidden.clone();
        move |tape: &mut Tape, bound: &Binding| {
            let x = tape.leaf(input.clone());
            let h = tape.leaf(hidden.clone());
            let y = block.grf_step(tape, bound, x, h).unwrap();
            weighted(tape, y, 51)
        }
    };
    assert_param_grads("grf_step", &params, 52, &fwd);

    let mut flat = input.data.clone();
    flat.extend_from_slice(&hidden.data);
    assert_input_grads("grf_step_inputs", &flat, &|tape, x| {
        let bound = params.bind(tape);
        let half = frames * width;
        let xi = tape.leaf(Tensor::matrix(frames, width, x[..half].to_vec()).unwrap());
        let hi = tape.leaf(Tensor::matrix(frames, width, x[half..].to_vec()).unwrap());
        let y = block.grf_step(tape, &bound, xi, hi).unwrap();
        (weighted(tape, y, 51), vec![xi, hi])
    });
}

#[test]
fn full_fusion_gradients() {
    let mut init = rng(60);
    let mut params = ParamSet::new();
    let block = FusionBlock::init(small_fusion(FusionMode::Grf), &mut params, &mut init).unwrap();
    let frames = 5;
    let noisy = random_matrix(&mut init, frames, block.cfg.feat_dim);
    let enhanced = random_matrix(&mut init, frames, block.cfg.feat_dim);

    let fwd = {
        let block = block.clone();
        let noisy = noisy.clone();
        let enhanced = enhanced.clone();
        move |tape: &mut Tape, bound: &Binding| {
            let n = tape.leaf(noisy.clone());
            let e = tape.leaf(enhanced.clone());
            let mut r = rng(0);
            let y = block.fuse(tape, bound, n, e, false, &mut r).unwrap();
            weighted(tape, y, 61)
        }
    };
    assert_param_grads("grf_fuse", &params, 62, &fwd);

    let mut flat = noisy.data.clone();
    flat.extend_from_slice(&enhanced.data);
    assert_input_grads("grf_fuse_inputs", &flat, &|tape, x| {
        let bound = params.bind(tape);
        let half = frames * block.cfg.feat_dim;
        let n = tape.leaf(Tensor::matrix(frames, block.cfg.feat_dim, x[..half].to_vec()).unwrap());
        let e = tape.leaf(Tensor::matrix(frames, block.cfg.feat_dim, x[half..].to_vec()).unwrap());
        let mut r = rng(0);
        let y = block.fuse(tape, &bound, n, e, false, &mut r).unwrap();
        (weighted(tape, y, 61), vec![n, e])
    });
}

#[test]
fn attention_and_feed_forward_gradients() {
    use grf_asr::asr::{causal_mask, FeedForward, MultiHeadAttention};

    let mut init = rng(70);
    let mut params = ParamSet::new();
    let att = MultiHeadAttention::init("att", 8, 2, 0.0, &mut params, &mut init).unwrap();
    let ffn = FeedForward::init("ffn", 8, 12, &mut params, &mut init).unwrap();
    let query = random_matrix(&mut init, 4, 8);
    let memory = random_matrix(&mut init, 6, 8);

    let fwd = {
        let att = att.clone();
        let ffn = ffn.clone();
        let query = query.clone();
        let memory = memory.clone();
        move |tape: &mut Tape, bound: &Binding| {
            let q = tape.leaf(query.clone());
            let m = tape.leaf(memory.clone());
            let mut r = rng(0);
            let cross = att.forward(tape, bound, q, m, None, false, &mut r).unwrap();
            let mask = causal_mask(tape, 4).unwrap();
            let said = att.forward(tape, bound, cross, cross, Some(mask), false, &mut r).unwrap();
            let deep = ffn.forward(tape, bound, said).unwrap();
            weighted(tape, deep, 71)
        }
    };
    assert_param_grads("attention_ffn", &params, 72, &fwd);

    let mut flat = query.data.clone();
    flat.extend_from_slice(&memory.data);
    assert_input_grads("attention_inputs", &flat, &|tape, x| {
        let bound = params.bind(tape);
        let q = tape.leaf(Tensor::matrix(4, 8, x[..32].to_vec()).unwrap());
        let m = tape.leaf(Tensor::matrix(6, 8, x[32..].to_vec()).unwrap());
        let mut r = rng(0);
        let cross = att.forward(tape, &bound, q, m, None, false, &mut r).unwrap();
        let deep = ffn.forward(tape, &bound, cross).unwrap();
        (weighted(tape, deep, 71), vec![q, m])
    });
}

fn micro_asr(conv_front: bool) -> AsrConfig {
    AsrConfig {
        feat_dim: 5,
        d_model: 8,
        heads: 2,
        d_ff: 12,
        enc_blocks: 1,
        dec_blocks: 1,
        vocab: 6,
        max_len: 8,
        conv_front,
        dropout: 0.0,
        smoothing: 0.1,
    }
}

#[test]
fn recognizer_loss_gradients() {
    for (seed, conv_front) in [(80u64, false), (81, true)] {
        let mut init = rng(seed);
        let mut params = ParamSet::new();
        let model = AsrModel::init(micro_asr(conv_front), &mut params, &mut init).unwrap();
        let features = random_matrix(&mut init, 7, 5);
        let target = TokenSequence::new(vec![4, 5, 4], 6).unwrap();

        let fwd = move |tape: &mut Tape, bound: &Binding| {
            let f = tape.leaf(features.clone());
            let mut r = rng(0);
            model.asr_loss(tape, bound, f, &target, false, &mut r).unwrap()
        };
        assert_param_grads(&format!("asr_loss(conv={conv_front})"), &params, seed + 5, &fwd);
    }
}

#[test]
fn recognizer_loss_gradient_w_r_t_features() {
    let mut init = rng(90);
    let mut params = ParamSet::new();
    let model = AsrModel::init(micro_asr(false), &mut params, &mut init).unwrap();
    let features = random_matrix(&mut init, 6, 5);
    let target = TokenSequence::new(vec![5, 4], 6).unwrap();

    assert_input_grads("asr_features", &features.data.clone(), &|tape, x| {
        let bound = params.bind(tape);
        let f = tape.leaf(Tensor::matrix(6, 5, x.to_vec()).unwrap());
        let mut r = rng(0);
        let loss = model.asr_loss(tape, &bound, f, &target, false, &mut r).unwrap();
        (loss, vec![f])
    });
}

/// The joint objective: recognizer loss on fused features built from the
/// masked magnitudes, plus the weighted mask-estimation loss. Gradients
/// must flow through the log-fbank transform into the enhancer.
#[test]
fn joint_loss_reaches_enhancement_parameters() {
    let bins = 5;
    let mels = 4;
    let frames = 6;
    let alpha = 0.3;

    let mut init = rng(100);
    let mut params = ParamSet::new();
    let enh = Enhancer::init(
        EnhancementConfig { input_dim: bins, hidden: 4, layers: 1, dropout: 0.0 },
        &mut params,
        &mut init,
    )
    .unwrap();
    let fus = FusionBlock::init(small_fusion(FusionMode::Grf), &mut params, &mut init).unwrap();
    let asr_cfg = AsrConfig { feat_dim: fus.cfg.fused_dim(), ..micro_asr(false) };
    let model = AsrModel::init(asr_cfg, &mut params, &mut init).unwrap();

    // fixed nonnegative "spectra" and a fixed mel-style projection
    let noisy: Vec<f64> = (0..frames * bins).map(|_| init.gen_range(0.05..1.0)).collect();
    let clean: Vec<f64> = (0..frames * bins).map(|_| init.gen_range(0.05..1.0)).collect();
    let mel: Vec<f64> = (0..bins * mels).map(|_| init.gen_range(0.1..0.5)).collect();
    let target = TokenSequence::new(vec![4, 5], 6).unwrap();

    let fwd = move |tape: &mut Tape, bound: &Binding| {
        let mut r = rng(0);
        let noisy_mag = tape.leaf(Tensor::matrix(frames, bins, noisy.clone()).unwrap());
        let clean_mag = tape.leaf(Tensor::matrix(frames, bins, clean.clone()).unwrap());
        let mel_w = tape.leaf(Tensor::matrix(bins, mels, mel.clone()).unwrap());
        let (mask, enhanced) = enh.forward(tape, bound, noisy_mag, false, &mut r).unwrap();
        let fbank = |tape: &mut Tape, mag: Var| {
            let proj = tape.matmul(mag, mel_w).unwrap();
            let floored = tape.clamp_min(proj, 1e-10);
            let logged = tape.log(floored).unwrap();
            tape.affine(logged, 1.0 / 6.0, 10.0 / 6.0)
        };
        let noisy_f = fbank(tape, noisy_mag);
        let enhanced_f = fbank(tape, enhanced);
        let fused = fus.fuse(tape, bound, noisy_f, enhanced_f, false, &mut r).unwrap();
        let asr = model.asr_loss(tape, bound, fused, &target, false, &mut r).unwrap();
        let sa = sa_loss(tape, mask, noisy_mag, clean_mag).unwrap();
        let scaled = tape.scale(sa, alpha);
        tape.add(asr, scaled).unwrap()
    };
    assert_param_grads("joint_loss", &params, 101, &fwd);

    // the enhancement stack specifically must receive nonzero gradient
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let loss = fwd(&mut tape, &bound);
    tape.backward(loss).unwrap();
    let enh_grad_norm: f64 = params
        .iter()
        .filter(|p| p.name.starts_with("enh."))
        .map(|p| {
            let g = tape.grad(bound.var(&p.name).unwrap());
            g.iter().map(|v| v * v).sum::<f64>()
        })
        .sum::<f64>()
        .sqrt();
    assert!(enh_grad_norm > 1e-8, "enhancer gradient vanished: {enh_grad_norm}");
}

/// A stack of every layer kind used by the pipeline, checked end to end.
#[test]
fn deep_mixed_stack_gradients() {
    let mut init = rng(110);
    let mut params = ParamSet::new();
    let stack = BlstmStack::init("s", 4, 3, 1, 0.0, &mut params, &mut init).unwrap();
    let lin = Linear::init("p", 6, 4, &mut params, &mut init).unwrap();
    let input = random_matrix(&mut init, 5, 4);

    let fwd = {
        let input = input.clone();
        move |tape: &mut Tape, bound: &Binding| {
            let x = tape.leaf(input.clone());
            let mut r = rng(0);
            let deep = stack.forward(tape, bound, x, false, &mut r).unwrap();
            let projected = lin.forward(tape, bound, deep).unwrap();
            let gated = tape.sigmoid(projected);
            let mixed = tape.mul(gated, x).unwrap();
            let d = tape.sub(mixed, x).unwrap();
            let sq = tape.mul(d, d).unwrap();
            tape.mean(sq).unwrap()
        }
    };
    assert_param_grads("mixed_stack", &params, 111, &fwd);
}
