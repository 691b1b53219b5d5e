//! Continual-learning lab for spurious and local spurious features.
//!
//! Generates task streams with a controllable spurious correlation, trains
//! small MLP classifiers continually (finetuning, balanced replay and
//! replay-as-environments OOD regularizers), and measures how spurious and
//! locally spurious features hurt generalization.

pub mod error;
pub mod eval;
pub mod features;
pub mod io;
pub mod nn;
pub mod rng;
pub mod scenario;
pub mod train;

pub use error::{Error, Result};
