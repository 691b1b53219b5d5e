//! Continual training: finetuning, class-balanced replay and replay-based
//! OOD regularizers, plus the gradient-interference diagnostic.

pub mod buffer;
pub mod interference;
pub mod methods;
pub mod sampler;
mod trainer;

pub use buffer::ReplayBuffer;
pub use interference::{cross_task_interference, interference, mean_gradient};
pub use methods::{irm_penalty, method_loss, Coefficients, DroState, Method, StepLoss};
pub use sampler::{balanced_sampler_weights, BalancedSampler};
pub use trainer::{flat_params, run_scenario, ContinualTrainer, EpochLog, RunOptions, TrainEvent, TrainerConfig};
