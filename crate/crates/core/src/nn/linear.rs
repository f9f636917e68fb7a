use rand_chacha::ChaCha8Rng;

use crate::autodiff::{xavier_tensor, Binding, ParamSet, Tape, Tensor, Var};
use crate::Result;

/// Dense layer `x W + b` with parameters registered under a name prefix.
#[derive(Debug, Clone)]
pub struct Linear {
    w_name: String,
    b_name: String,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    /// Register an `in_dim x out_dim` weight (Xavier uniform) and a zero
    /// bias as `{prefix}.w` / `{prefix}.b`.
    pub fn init(
        prefix: &str,
        in_dim: usize,
        out_dim: usize,
        params: &mut ParamSet,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let w_name = format!("{}.w", prefix);
        let b_name = format!("{}.b", prefix);
        params.insert(&w_name, xavier_tensor(in_dim, out_dim, rng))?;
        params.insert(&b_name, Tensor::zeros(vec![out_dim]))?;
        Ok(Self { w_name, b_name, in_dim, out_dim })
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Binding, x: Var) -> Result<Var> {
        let w = bound.var(&self.w_name)?;
        let b = bound.var(&self.b_name)?;
        let wx = tape.matmul(x, w)?;
        tape.add_bias(wx, b)
    }
}
