//! Shared trainable layers built from tape primitives: dense projections
//! and bidirectional LSTM stacks. Model modules compose these and keep
//! their parameters in a [`crate::autodiff::ParamSet`] under a prefix.

mod blstm;
mod linear;
mod norm;

pub use blstm::BlstmStack;
pub use linear::Linear;
pub use norm::LayerNorm;
