use ndarray::Array2;

use crate::error::{Error, Result};
use crate::nn::ModelParams;
use crate::scenario::Sample;

const EVAL_CHUNK: usize = 512;

/// Stacks sample features into a `n x dim` matrix.
pub fn to_matrix(samples: &[Sample]) -> Result<Array2<f64>> {
    let dim = samples.first().map_or(0, Sample::dim);
    let mut out = Array2::zeros((samples.len(), dim));
    for (mut row, s) in out.rows_mut().into_iter().zip(samples) {
        if s.dim() != dim {
            return Err(Error::shape(format!("sample of width {} in a batch of width {dim}", s.dim())));
        }
        row.iter_mut().zip(s.x.iter()).for_each(|(r, &v)| *r = f64::from(v));
    }
    Ok(out)
}

/// Index of the largest entry among `allowed`; lowest index wins ties.
pub fn masked_argmax(logits: impl IntoIterator<Item = f64>, allowed: Option<&[bool]>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in logits.into_iter().enumerate() {
        if allowed.is_some_and(|a| !a.get(i).copied().unwrap_or(false)) || v.is_nan() {
            continue;
        }
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

/// Class predictions for `x`, optionally restricted to `classes`.
pub fn predict(model: &ModelParams, x: &Array2<f64>, classes: Option<&[usize]>) -> Result<Vec<usize>> {
    let allowed = classes.map(|cs| {
        let mut a = vec![false; model.n_classes()];
        for &c in cs {
            if let Some(slot) = a.get_mut(c) {
                *slot = true;
            }
        }
        a
    });
    let mut out = Vec::with_capacity(x.nrows());
    for start in (0..x.nrows()).step_by(EVAL_CHUNK) {
        let end = (start + EVAL_CHUNK).min(x.nrows());
        let fwd = model.forward_with_mask(x.slice(ndarray::s![start..end, ..]), None)?;
        let global = model.global_logits(&fwd.logits);
        for row in global.rows() {
            out.push(masked_argmax(row.iter().copied(), allowed.as_deref()).unwrap_or(0));
        }
    }
    Ok(out)
}

/// Fraction of samples whose (masked) argmax equals the label.
pub fn accuracy(model: &ModelParams, dataset: &[Sample], head_mask: Option<&[usize]>) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::invalid("accuracy over an empty dataset"));
    }
    let x = to_matrix(dataset)?;
    let pred = predict(model, &x, head_mask)?;
    Ok(hit_rate(&pred, dataset.iter().map(|s| s.y)))
}

pub(crate) fn hit_rate(pred: &[usize], labels: impl Iterator<Item = usize>) -> f64 {
    let hits = pred.iter().zip(labels).filter(|(p, y)| **p == *y).count();
    hits as f64 / pred.len() as f64
}

/// Mean of the clean-test accuracies measured after each task.
pub fn omega(post_task_accuracies: &[f64]) -> Result<f64> {
    if post_task_accuracies.is_empty() {
        return Err(Error::invalid("omega needs at least one task"));
    }
    Ok(post_task_accuracies.iter().sum::<f64>() / post_task_accuracies.len() as f64)
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Head, HeadKind};
    use ndarray::array;
    use std::sync::Arc;

    fn sample(x: Vec<f32>, y: usize) -> Sample {
        Sample { x: Arc::from(x), y, mode_id: y, spurious_present: false, spurious_id: None, task_id: 0 }
    }

    fn constant_model() -> ModelParams {
        let head = Head::from_parts(HeadKind::Linear, vec![0, 1], array![[0.0], [0.0]], array![1.0, 0.0]).unwrap();
        ModelParams::from_parts(vec![], vec![head], 0.0, 0).unwrap()
    }

    #[test]
    fn constant_predictor_on_balanced_data() {
        let data = vec![sample(vec![1.0], 0), sample(vec![2.0], 1), sample(vec![3.0], 0), sample(vec![4.0], 1)];
        assert_eq!(accuracy(&constant_model(), &data, None).unwrap(), 0.5);
        assert_eq!(accuracy(&constant_model(), &data[..1], None).unwrap(), 1.0);
        assert!(accuracy(&constant_model(), &[], None).is_err());
    }

    #[test]
    fn mask_restricts_argmax() {
        let head = Head::from_parts(
            HeadKind::Linear,
            vec![0, 1, 2, 3],
            array![[0.0], [0.0], [0.0], [0.0]],
            array![0.0, 1.0, 5.0, 2.0],
        )
        .unwrap();
        let m = ModelParams::from_parts(vec![], vec![head], 0.0, 0).unwrap();
        let data = vec![sample(vec![0.0], 1)];
        assert_eq!(accuracy(&m, &data, None).unwrap(), 0.0);
        assert_eq!(accuracy(&m, &data, Some(&[0, 1])).unwrap(), 1.0);
    }

    #[test]
    fn ties_break_low() {
        assert_eq!(masked_argmax([1.0, 3.0, 3.0], None), Some(1));
        assert_eq!(masked_argmax([1.0, 3.0, 3.0], Some(&[true, false, true])), Some(2));
    }

    #[test]
    fn omega_examples() {
        assert!((omega(&[0.5, 0.7, 0.9]).unwrap() - 0.7).abs() < 1e-12);
        assert_eq!(omega(&[0.42]).unwrap(), 0.42);
        assert!(omega(&[]).is_err());
    }
}
