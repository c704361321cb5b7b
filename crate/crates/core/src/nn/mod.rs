//! Minimal reverse-mode differentiation engine and the layers the model is built from.

pub mod gradcheck;
pub mod layers;
pub mod optim;
pub mod params;
pub mod tape;
pub mod tensor;

pub use gradcheck::{grad_check, GradReport, ParamCheck};
pub use layers::{BiLstm, GruCell, Linear, LstmCell};
pub use optim::{adam_step, clip_grad_norm};
pub use params::{ParamId, ParamStore};
pub use tape::{Gradients, Primitive, Record, Tape, Var};
pub use tensor::Tensor;
