//! Small MLP engine with manual backpropagation.

pub mod gradcheck;
mod head;
pub mod loss;
mod model;
pub mod objective;

pub use gradcheck::{finite_diff_check, GradCheck};
pub use head::{Head, HeadKind};
pub use loss::masked_softmax_ce;
pub use model::{sgd_step, Architecture, Dense, Forward, Gradients, ModelParams, ParamId, Sgd};
