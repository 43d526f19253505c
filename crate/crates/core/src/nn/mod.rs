//! Tensors-in, tensors-out neural network toolkit with reverse-mode
//! differentiation.

pub mod conv;
mod gradcheck;
mod graph;
mod layers;
pub mod ops;
mod params;
mod tape;

pub use gradcheck::{
    analytic_grads, compare_gradients, grad_check, relative_error, AnalyticGrads, GradCheckOptions, GradCheckReport,
};
pub use graph::{Eval, Graph};
pub use layers::{ConvSpec, ResBlock, ResGroup, LEAKY_SLOPE, LINEAR_GAIN};
pub use ops::Op;
pub use params::{AdamConfig, ParamEntry, ParamStore};
pub use tape::{Gradients, Tape, Var};
