use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{uniform_tensor, xavier_tensor, Binding, ParamSet, Tape, Tensor, Var};
use crate::nn::{LayerNorm, Linear};
use crate::{Error, Result};

use super::layers::{causal_mask, sinusoidal_pe, FeedForward, MultiHeadAttention};
use super::{AsrConfig, TokenSequence, EOS, PAD, PARAM_PREFIX, SOS};

#[derive(Debug, Clone)]
struct EncoderBlock {
    ln1: LayerNorm,
    att: MultiHeadAttention,
    ln2: LayerNorm,
    ffn: FeedForward,
}

impl EncoderBlock {
    fn init(prefix: &str, cfg: &AsrConfig, params: &mut ParamSet, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(Self {
            ln1: LayerNorm::init(&format!("{prefix}.ln1"), cfg.d_model, params)?,
            att: MultiHeadAttention::init(
                &format!("{prefix}.att"),
                cfg.d_model,
                cfg.heads,
                cfg.dropout,
                params,
                rng,
            )?,
            ln2: LayerNorm::init(&format!("{prefix}.ln2"), cfg.d_model, params)?,
            ffn: FeedForward::init(&format!("{prefix}.ffn"), cfg.d_model, cfg.d_ff, params, rng)?,
        })
    }

    fn forward(
        &self,
        tape: &mut Tape,
        bound: &Binding,
        x: Var,
        dropout: f64,
        train: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Var> {
        let n = self.ln1.forward(tape, bound, x)?;
        let mut a = self.att.forward(tape, bound, n, n, None, train, rng)?;
        if train && dropout > 0.0 {
            a = tape.dropout(a, dropout, rng)?;
        }
        let x = tape.add(x, a)?;
        let n = self.ln2.forward(tape, bound, x)?;
        let mut f = self.ffn.forward(tape, bound, n)?;
        if train && dropout > 0.0 {
            f = tape.dropout(f, dropout, rng)?;
        }
        tape.add(x, f)
    }
}

#[derive(Debug, Clone)]
struct DecoderBlock {
    ln1: LayerNorm,
    self_att: MultiHeadAttention,
    ln2: LayerNorm,
    cross_att: MultiHeadAttention,
    ln3: LayerNorm,
    ffn: FeedForward,
}

impl DecoderBlock {
    fn init(prefix: &str, cfg: &AsrConfig, params: &mut ParamSet, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(Self {
            ln1: LayerNorm::init(&format!("{prefix}.ln1"), cfg.d_model, params)?,
            self_att: MultiHeadAttention::init(
                &format!("{prefix}.self"),
                cfg.d_model,
                cfg.heads,
                cfg.dropout,
                params,
                rng,
            )?,
            ln2: LayerNorm::init(&format!("{prefix}.ln2"), cfg.d_model, params)?,
            cross_att: MultiHeadAttention::init(
                &format!("{prefix}.cross"),
                cfg.d_model,
                cfg.heads,
                cfg.dropout,
                params,
                rng,
            )?,
            ln3: LayerNorm::init(&format!("{prefix}.ln3"), cfg.d_model, params)?,
            ffn: FeedForward::init(&format!("{prefix}.ffn"), cfg.d_model, cfg.d_ff, params, rng)?,
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn forward(
        &self,
        tape: &mut Tape,
        bound: &Binding,
        x: Var,
        memory: Var,
        mask: Var,
        dropout: f64,
        train: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Var> {
        let n = self.ln1.forward(tape, bound, x)?;
        let mut a = self.self_att.forward(tape, bound, n, n, Some(mask), train, rng)?;
        if train && dropout > 0.0 {
            a = tape.dropout(a, dropout, rng)?;
        }
        let x = tape.add(x, a)?;
        let n = self.ln2.forward(tape, bound, x)?;
        let mut c = self.cross_att.forward(tape, bound, n, memory, None, train, rng)?;
        if train && dropout > 0.0 {
            c = tape.dropout(c, dropout, rng)?;
        }
        let x = tape.add(x, c)?;
        let n = self.ln3.forward(tape, bound, x)?;
        let mut f = self.ffn.forward(tape, bound, n)?;
        if train && dropout > 0.0 {
            f = tape.dropout(f, dropout, rng)?;
        }
        tape.add(x, f)
    }
}

/// Encoder-decoder recognizer over fused feature frames.
#[derive(Debug, Clone)]
pub struct AsrModel {
    pub cfg: AsrConfig,
    front_proj: Linear,
    enc_blocks: Vec<EncoderBlock>,
    enc_ln: LayerNorm,
    dec_blocks: Vec<DecoderBlock>,
    dec_ln: LayerNorm,
    out: Linear,
}

impl AsrModel {
    pub fn init(cfg: AsrConfig, params: &mut ParamSet, rng: &mut ChaCha8Rng) -> Result<Self> {
        cfg.validate()?;
        if cfg.conv_front {
            let c = cfg.d_model;
            let limit1 = (6.0 / (9.0 + c as f64 * 9.0)).sqrt();
            params.insert(
                &format!("{PARAM_PREFIX}.front.c1.k"),
                uniform_tensor(vec![c, 1, 3, 3], -limit1, limit1, rng),
            )?;
            params.insert(&format!("{PARAM_PREFIX}.front.c1.b"), Tensor::zeros(vec![c]))?;
            let limit2 = (6.0 / (2.0 * c as f64 * 9.0)).sqrt();
            params.insert(
                &format!("{PARAM_PREFIX}.front.c2.k"),
                uniform_tensor(vec![c, c, 3, 3], -limit2, limit2, rng),
            )?;
            params.insert(&format!("{PARAM_PREFIX}.front.c2.b"), Tensor::zeros(vec![c]))?;
        }
        let front_proj = Linear::init(
            &format!("{PARAM_PREFIX}.front.proj"),
            cfg.front_out_dim(),
            cfg.d_model,
            params,
            rng,
        )?;
        let mut enc_blocks = Vec::with_capacity(cfg.enc_blocks);
        for i in 0..cfg.enc_blocks {
            enc_blocks.push(EncoderBlock::init(
                &format!("{PARAM_PREFIX}.enc.b{i}"),
                &cfg,
                params,
                rng,
            )?);
        }
        let enc_ln = LayerNorm::init(&format!("{PARAM_PREFIX}.enc.ln"), cfg.d_model, params)?;
        params.insert(
            &format!("{PARAM_PREFIX}.emb"),
            xavier_tensor(cfg.vocab, cfg.d_model, rng),
        )?;
        let mut dec_blocks = Vec::with_capacity(cfg.dec_blocks);
        for i in 0..cfg.dec_blocks {
            dec_blocks.push(DecoderBlock::init(
                &format!("{PARAM_PREFIX}.dec.b{i}"),
                &cfg,
                params,
                rng,
            )?);
        }
        let dec_ln = LayerNorm::init(&format!("{PARAM_PREFIX}.dec.ln"), cfg.d_model, params)?;
        let out = Linear::init(&format!("{PARAM_PREFIX}.out"), cfg.d_model, cfg.vocab, params, rng)?;
        Ok(Self { cfg, front_proj, enc_blocks, enc_ln, dec_blocks, dec_ln, out })
    }

    /// Encode feature frames into the memory the decoder attends over.
    /// With the convolutional front end the memory has ceil(T/4) rows.
    pub fn encode(
        &self,
        tape: &mut Tape,
        bound: &Binding,
        features: Var,
        train: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Var> {
        let shape = tape.shape(features).to_vec();
        if shape.len() != 2 || shape[1] != self.cfg.feat_dim {
            return Err(Error::shape(
                "encode",
                format!("expected T x {}, got {shape:?}", self.cfg.feat_dim),
            ));
        }
        let frames = shape[0];
        if frames < 4 {
            return Err(Error::invalid(
                "encode",
                format!("{frames} frames; the front end needs at least 4"),
            ));
        }
        let mut x = if self.cfg.conv_front {
            let volume = tape.reshape(features, vec![1, frames, self.cfg.feat_dim])?;
            let c1 = tape.conv2d(volume, bound.var("asr.front.c1.k")?, 2, 1)?;
            let c1 = tape.add_channel_bias(c1, bound.var("asr.front.c1.b")?)?;
            let c1 = tape.relu(c1);
            let c2 = tape.conv2d(c1, bound.var("asr.front.c2.k")?, 2, 1)?;
            let c2 = tape.add_channel_bias(c2, bound.var("asr.front.c2.b")?)?;
            let c2 = tape.relu(c2);
            let flat = tape.flatten_time(c2)?;
            self.front_proj.forward(tape, bound, flat)?
        } else {
            self.front_proj.forward(tape, bound, features)?
        };
        let rows = tape.shape(x)[0];
        let pe = tape.leaf(sinusoidal_pe(rows, self.cfg.d_model));
        x = tape.add(x, pe)?;
        if train && self.cfg.dropout > 0.0 {
            x = tape.dropout(x, self.cfg.dropout, rng)?;
        }
        for block in &self.enc_blocks {
            x = block.forward(tape, bound, x, self.cfg.dropout, train, rng)?;
        }
        self.enc_ln.forward(tape, bound, x)
    }

    /// Teacher-forced decoder pass: logits row i scores the token that
    /// follows `input_ids[..=i]`.
    pub fn decoder_logits(
        &self,
        tape: &mut Tape,
        bound: &Binding,
        memory: Var,
        input_ids: &[usize],
        train: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Var> {
        if input_ids.is_empty() {
            return Err(Error::invalid("decode", "empty decoder input"));
        }
        if input_ids.len() > self.cfg.max_len {
            return Err(Error::invalid(
                "decode",
                format!("{} decoder positions exceed max_len {}", input_ids.len(), self.cfg.max_len),
            ));
        }
        let len = input_ids.len();
        let emb = tape.embedding(bound.var("asr.emb")?, input_ids)?;
        let mut x = tape.scale(emb, (self.cfg.d_model as f64).sqrt());
        let pe = tape.leaf(sinusoidal_pe(len, self.cfg.d_model));
        x = tape.add(x, pe)?;
        if train && self.cfg.dropout > 0.0 {
            x = tape.dropout(x, self.cfg.dropout, rng)?;
        }
        let mask = causal_mask(tape, len)?;
        for block in &self.dec_blocks {
            x = block.forward(tape, bound, x, memory, mask, self.cfg.dropout, train, rng)?;
        }
        let x = self.dec_ln.forward(tape, bound, x)?;
        self.out.forward(tape, bound, x)
    }

    /// Label-smoothed cross entropy of the target under teacher forcing:
    /// the decoder reads the start-prefixed target and is scored against
    /// the end-suffixed target, averaged over positions.
    pub fn asr_loss(
        &self,
        tape: &mut Tape,
        bound: &Binding,
        features: Var,
        target: &TokenSequence,
        train: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Var> {
        if target.ids.len() + 1 > self.cfg.max_len {
            return Err(Error::invalid(
                "asr_loss",
                format!("target of {} tokens exceeds max_len {}", target.ids.len(), self.cfg.max_len),
            ));
        }
        if let Some(bad) = target.ids.iter().find(|id| **id >= self.cfg.vocab) {
            return Err(Error::invalid(
                "asr_loss",
                format!("target id {bad} outside vocabulary of {}", self.cfg.vocab),
            ));
        }
        let memory = self.encode(tape, bound, features, train, rng)?;
        let mut input = Vec::with_capacity(target.ids.len() + 1);
        input.push(SOS);
        input.extend_from_slice(&target.ids);
        let mut labels = target.ids.clone();
        labels.push(EOS);
        let logits = self.decoder_logits(tape, bound, memory, &input, train, rng)?;
        tape.cross_entropy(logits, &labels, self.cfg.smoothing, Some(PAD))
    }

    /// Next-token log-probabilities after consuming `input_ids`,
    /// computed off-tape from the final logits row.
    pub fn next_token_log_probs(
        &self,
        tape: &mut Tape,
        bound: &Binding,
        memory: Var,
        input_ids: &[usize],
    ) -> Result<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let logits = self.decoder_logits(tape, bound, memory, input_ids, false, &mut rng)?;
        let values = tape.value(logits);
        let v = self.cfg.vocab;
        let row = &values.data[(input_ids.len() - 1) * v..input_ids.len() * v];
        Ok(log_softmax(row))
    }
}

/// Numerically stable log-softmax of one logits row.
pub(super) fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = row.iter().map(|x| (x - max).exp()).sum::<f64>().ln() + max;
    row.iter().map(|x| x - log_sum).collect()
}
