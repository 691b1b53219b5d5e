//! Class-balanced sampling of a data mixture (current task plus buffer).

use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;

use crate::error::{Error, Result};
use crate::rng::LabRng;

/// `1 / count(label_i)` for every sample, so each class carries the same
/// total probability mass.
pub fn balanced_sampler_weights(labels: &[usize]) -> Vec<f64> {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &y in labels {
        *counts.entry(y).or_default() += 1;
    }
    labels.iter().map(|y| 1.0 / counts[y] as f64).collect()
}

/// Weighted sampling with replacement.
#[derive(Debug, Clone)]
pub struct BalancedSampler {
    dist: WeightedIndex<f64>,
}

impl BalancedSampler {
    pub fn new(labels: &[usize]) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::invalid("cannot sample from an empty dataset"));
        }
        let dist = WeightedIndex::new(balanced_sampler_weights(labels))
            .map_err(|e| Error::invalid(format!("sampler weights: {e}")))?;
        Ok(BalancedSampler { dist })
    }

    pub fn draw(&self, n: usize, rng: &mut LabRng) -> Vec<usize> {
        (0..n).map(|_| self.dist.sample(rng)).collect()
    }
}
