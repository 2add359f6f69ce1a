//! Minimal reverse-mode autodiff over `f64` vectors plus the layers built on it.

mod gradcheck;
mod graph;
mod layers;
pub mod ops;
mod optim;
mod params;
mod rng;
mod tensor;

pub use gradcheck::{
    analytic_gradients, compare, grad_check, numeric_partial, relative_error, GradCheckOptions,
    GradCheckReport, ParamCheck,
};
pub use graph::{Graph, Var};
pub use layers::{BiLstm, BiLstmOutput, LstmCell};
pub use optim::{adam_step, batch_gradients, AdamConfig, OptimState, RL_LR, TEACHER_FORCING_LR};
pub use params::{Gradients, ParamEntry, ParamId, ParameterSet};
pub use rng::RngState;
pub use tensor::Tensor;
