use ndarray::Array2;

use super::loss::masked_softmax_ce;
use super::model::ModelParams;
use crate::error::Result;

/// Per-sample masked cross-entropy over global logits.
///
/// `masks[i]` selects the active classes of sample `i`; `None` means all
/// classes. Returns the losses and `dloss_i / dglobal_logits` row by row.
pub fn per_sample_ce(
    global_logits: &Array2<f64>,
    labels: &[usize],
    masks: Option<&[Vec<bool>]>,
) -> Result<(Vec<f64>, Array2<f64>)> {
    let n_classes = global_logits.ncols();
    let full = vec![true; n_classes];
    let mut losses = Vec::with_capacity(labels.len());
    let mut dglobal = Array2::zeros(global_logits.raw_dim());
    for (i, (row, &y)) in global_logits.rows().into_iter().zip(labels).enumerate() {
        let mask = masks.map_or(&full, |m| &m[i]);
        let active: Vec<bool> = mask
            .iter()
            .zip(row.iter())
            .map(|(&a, l)| a && l.is_finite())
            .collect();
        let logits: Vec<f64> = row.iter().map(|&l| if l.is_finite() { l } else { 0.0 }).collect();
        let (loss, grad) = masked_softmax_ce(&logits, y, &active)?;
        losses.push(loss);
        dglobal.row_mut(i).assign(&ndarray::ArrayView1::from(&grad));
    }
    Ok((losses, dglobal))
}

/// Routes gradients on global logits back to the head that produced them.
pub fn scatter_to_heads(model: &ModelParams, dglobal: &Array2<f64>) -> Vec<Array2<f64>> {
    let mut out: Vec<Array2<f64>> = model
        .heads
        .iter()
        .map(|h| Array2::zeros((dglobal.nrows(), h.n_outputs())))
        .collect();
    // Mirror `global_logits`: the last head serving a class owns it.
    let mut owner = vec![None; dglobal.ncols()];
    for (hi, h) in model.heads.iter().enumerate() {
        for (k, &c) in h.classes.iter().enumerate() {
            owner[c] = Some((hi, k));
        }
    }
    for (c, o) in owner.into_iter().enumerate() {
        if let Some((hi, k)) = o {
            out[hi].column_mut(k).assign(&dglobal.column(c));
        }
    }
    out
}

/// Mean masked cross-entropy of a batch and its gradient per head.
pub fn mean_ce(
    model: &ModelParams,
    logits: &[Array2<f64>],
    labels: &[usize],
    masks: Option<&[Vec<bool>]>,
) -> Result<(f64, Vec<Array2<f64>>)> {
    let global = model.global_logits(logits);
    let (losses, mut dglobal) = per_sample_ce(&global, labels, masks)?;
    let n = labels.len() as f64;
    dglobal.mapv_inplace(|g| g / n);
    Ok((losses.iter().sum::<f64>() / n, scatter_to_heads(model, &dglobal)))
}
