//! Gradient interference between tasks: a negative dot product between the
//! loss gradients of two tasks means a step on one hurts the other.

use crate::error::{Error, Result};
use crate::eval::metrics::to_matrix;
use crate::nn::objective::mean_ce;
use crate::nn::ModelParams;
use crate::scenario::Sample;

pub fn interference(grad_a: &[f64], grad_b: &[f64]) -> Result<f64> {
    if grad_a.len() != grad_b.len() {
        return Err(Error::shape(format!("gradients of length {} and {}", grad_a.len(), grad_b.len())));
    }
    Ok(grad_a.iter().zip(grad_b).map(|(a, b)| a * b).sum())
}

/// Gradient of the mean cross-entropy over `samples`, flattened over the
/// trainable parameters.
pub fn mean_gradient(model: &ModelParams, samples: &[Sample]) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::invalid("gradient of an empty sample set"));
    }
    let x = to_matrix(samples)?;
    let labels: Vec<usize> = samples.iter().map(|s| s.y).collect();
    let fwd = model.forward_with_mask(x.view(), None)?;
    let (_, dlogits) = mean_ce(model, &fwd.logits, &labels, None)?;
    let grads = model.backward(&fwd, &dlogits, None)?;
    Ok(grads.flatten(&model.param_ids()))
}

/// Mean of `<g(a_i), g(b_j)>` over all sample pairs across the two tasks.
///
/// By bilinearity this equals the dot product of the two mean gradients.
pub fn cross_task_interference(model: &ModelParams, task_a: &[Sample], task_b: &[Sample]) -> Result<f64> {
    interference(&mean_gradient(model, task_a)?, &mean_gradient(model, task_b)?)
}
