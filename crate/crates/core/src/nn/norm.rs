use crate::autodiff::{Binding, ParamSet, Tape, Tensor, Var};
use crate::Result;

/// Per-row layer normalization with learned gain and bias.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    g_name: String,
    b_name: String,
    pub dim: usize,
}

impl LayerNorm {
    /// Registers `{prefix}.g` (ones) and `{prefix}.b` (zeros).
    pub fn init(prefix: &str, dim: usize, params: &mut ParamSet) -> Result<Self> {
        let g_name = format!("{prefix}.g");
        let b_name = format!("{prefix}.b");
        params.insert(&g_name, Tensor::new(vec![dim], vec![1.0; dim])?)?;
        params.insert(&b_name, Tensor::zeros(vec![dim]))?;
        Ok(Self { g_name, b_name, dim })
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Binding, x: Var) -> Result<Var> {
        let g = bound.var(&self.g_name)?;
        let b = bound.var(&self.b_name)?;
        tape.layer_norm(x, g, b)
    }
}
