//! Reverse-mode automatic differentiation on a flat tape, plus the
//! optimizer and checkpoint plumbing shared by every trainable module.
//!
//! A training step records its whole forward computation as nodes on a
//! [`Tape`]; [`Tape::backward`] then walks the tape once in reverse,
//! firing each node's exact reverse rule. Parameters live outside the
//! tape in a [`ParamSet`] and are copied on as leaves each step, so a
//! tape is built, differentiated and dropped per step while the
//! parameters and [`AdamNoam`] moments persist.

mod checkpoint;
mod optim;
mod params;
mod tape;
mod tensor;

pub use checkpoint::{load_checkpoint, load_into, load_matching, save_checkpoint};
pub use optim::{AdamNoam, NoamSchedule, StepStats};
pub use params::{uniform_tensor, xavier_tensor, Binding, Param, ParamSet};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
