use std::sync::Arc;

use serde::{Deserialize, Serialize};

/// One labeled input.
///
/// `x` is either a dense feature vector or a flattened H×W×3 image
/// (interleaved channels, values in `[0, 1]`). Storage is shared so clean
/// samples can appear in several tasks without copying.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: Arc<[f32]>,
    pub y: usize,
    /// Underlying mode: the original CIFAR-10 class or the synthetic mode index.
    pub mode_id: usize,
    pub spurious_present: bool,
    /// Which per-task, per-class spurious feature was injected.
    pub spurious_id: Option<u32>,
    pub task_id: usize,
}

impl Sample {
    pub fn dim(&self) -> usize {
        self.x.len()
    }
}

/// Identifier of the spurious feature injected for `class` in `task`.
pub fn spurious_feature_id(task_id: usize, class: usize, n_classes: usize) -> u32 {
    (task_id * n_classes + class) as u32
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskData {
    pub task_id: usize,
    /// Classes that occur in this task.
    pub classes: Vec<usize>,
    pub train: Vec<Sample>,
    /// Held-out samples carrying this task's spurious features.
    pub eval_spurious: Vec<Sample>,
}

/// An ordered task sequence plus a spurious-free test set.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub tasks: Vec<TaskData>,
    pub clean_test: Vec<Sample>,
    pub n_classes: usize,
    pub input_dim: usize,
    /// `(height, width)` when samples are images.
    pub image_shape: Option<(usize, usize)>,
}

impl Scenario {
    pub fn n_tasks(&self) -> usize {
        self.tasks.len()
    }

    /// All training samples of the scenario, task order preserved.
    pub fn all_train(&self) -> Vec<Sample> {
        self.tasks.iter().flat_map(|t| t.train.iter().cloned()).collect()
    }
}

/// RGB color of an injected square.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rgb(pub [u8; 3]);

impl Rgb {
    pub fn linf(self, other: Rgb) -> u8 {
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| a.abs_diff(*b))
            .max()
            .unwrap_or(0)
    }
}
