use rand_chacha::ChaCha8Rng;

use crate::autodiff::{xavier_tensor, Binding, ParamSet, Tape, Tensor, Var};
use crate::{Error, Result};

/// One LSTM direction. Gate weights are blocked column-wise in the order
/// input, forget, cell, output; the input projection `w_x` is
/// `input_dim x 4H`, the recurrent projection `w_h` is `H x 4H`.
#[derive(Debug, Clone)]
struct Direction {
    w_x: String,
    w_h: String,
    b: String,
    reverse: bool,
}

impl Direction {
    fn init(
        prefix: &str,
        input_dim: usize,
        hidden: usize,
        reverse: bool,
        params: &mut ParamSet,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let w_x = format!("{}.wx", prefix);
        let w_h = format!("{}.wh", prefix);
        let b = format!("{}.b", prefix);
        params.insert(&w_x, xavier_tensor(input_dim, 4 * hidden, rng))?;
        params.insert(&w_h, xavier_tensor(hidden, 4 * hidden, rng))?;
        // forget-gate bias starts at one so early training does not wipe
        // the cell state
        let mut bias = vec![0.0; 4 * hidden];
        bias[hidden..2 * hidden].fill(1.0);
        params.insert(&b, Tensor::vector(bias))?;
        Ok(Self { w_x, w_h, b, reverse })
    }

    /// Run the recurrence over `x` (`T x input_dim`), returning the hidden
    /// sequence in input frame order.
    fn forward(&self, tape: &mut Tape, bound: &Binding, x: Var, hidden: usize) -> Result<Var> {
        let frames = tape.shape(x)[0];
        let w_x = bound.var(&self.w_x)?;
        let w_h = bound.var(&self.w_h)?;
        let b = bound.var(&self.b)?;
        // all input-side projections in one GEMM, recurrent part per frame
        let proj = tape.matmul(x, w_x)?;
        let proj = tape.add_bias(proj, b)?;
        let mut h = tape.leaf(Tensor::zeros(vec![1, hidden]));
        let mut c = tape.leaf(Tensor::zeros(vec![1, hidden]));
        let mut outputs = vec![h; frames];
        let order: Box<dyn Iterator<Item = usize>> = if self.reverse {
            Box::new((0..frames).rev())
        } else {
            Box::new(0..frames)
        };
        for t in order {
            let zx = tape.slice_rows(proj, t, 1)?;
            let zh = tape.matmul(h, w_h)?;
            let z = tape.add(zx, zh)?;
            let i_gate = {
                let s = tape.slice_cols(z, 0, hidden)?;
                tape.sigmoid(s)
            };
            let f_gate = {
                let s = tape.slice_cols(z, hidden, hidden)?;
                tape.sigmoid(s)
            };
            let g_cell = {
                let s = tape.slice_cols(z, 2 * hidden, hidden)?;
                tape.tanh(s)
            };
            let o_gate = {
                let s = tape.slice_cols(z, 3 * hidden, hidden)?;
                tape.sigmoid(s)
            };
            let keep = tape.mul(f_gate, c)?;
            let write = tape.mul(i_gate, g_cell)?;
            c = tape.add(keep, write)?;
            let c_act = tape.tanh(c);
            h = tape.mul(o_gate, c_act)?;
            outputs[t] = h;
        }
        tape.concat_rows(&outputs)
    }
}

/// Stack of bidirectional LSTM layers. Each layer runs a forward and a
/// reversed pass and concatenates them per frame, so its output width is
/// `2 * hidden`; deeper layers consume that width. Dropout (inverted
/// scaling) sits between layers during training.
#[derive(Debug, Clone)]
pub struct BlstmStack {
    layers: Vec<(Direction, Direction)>,
    pub hidden: usize,
    pub input_dim: usize,
    pub dropout: f64,
}

impl BlstmStack {
    pub fn init(
        prefix: &str,
        input_dim: usize,
        hidden: usize,
        layers: usize,
        dropout: f64,
        params: &mut ParamSet,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if layers == 0 || hidden == 0 {
            return Err(Error::invalid("blstm", "layers and hidden must be at least 1"));
        }
        let mut built = Vec::with_capacity(layers);
        for l in 0..layers {
            let in_dim = if l == 0 { input_dim } else { 2 * hidden };
            let fwd = Direction::init(
                &format!("{}.l{}.fwd", prefix, l),
                in_dim,
                hidden,
                false,
                params,
                rng,
            )?;
            let bwd = Direction::init(
                &format!("{}.l{}.bwd", prefix, l),
                in_dim,
                hidden,
                true,
                params,
                rng,
            )?;
            built.push((fwd, bwd));
        }
        Ok(Self { layers: built, hidden, input_dim, dropout })
    }

    pub fn out_dim(&self) -> usize {
        2 * self.hidden
    }

    /// Forward over `x` (`T x input_dim`) to `T x 2H`. `train` enables
    /// the between-layer dropout driven by `rng`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &Binding,
        x: Var,
        train: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Var> {
        if tape.shape(x).len() != 2 || tape.shape(x)[1] != self.input_dim {
            return Err(Error::shape(
                "blstm",
                format!("expected T x {}, got {:?}", self.input_dim, tape.shape(x)),
            ));
        }
        let mut cur = x;
        for (idx, (fwd, bwd)) in self.layers.iter().enumerate() {
            if idx > 0 && train && self.dropout > 0.0 {
                cur = tape.dropout(cur, self.dropout, rng)?;
            }
            let f = fwd.forward(tape, bound, cur, self.hidden)?;
            let b = bwd.forward(tape, bound, cur, self.hidden)?;
            cur = tape.concat_cols(&[f, b])?;
        }
        Ok(cur)
    }
}
