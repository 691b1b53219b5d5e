use crate::error::{Error, Result};

/// Softmax cross-entropy restricted to the entries where `active` is true.
///
/// Returns the loss and its gradient with respect to every logit; inactive
/// entries get a zero gradient. `label` indexes into `logits`.
pub fn masked_softmax_ce(logits: &[f64], label: usize, active: &[bool]) -> Result<(f64, Vec<f64>)> {
    if logits.len() != active.len() {
        return Err(Error::shape(format!("{} logits with a mask of {}", logits.len(), active.len())));
    }
    if !active.get(label).copied().unwrap_or(false) {
        return Err(Error::invalid(format!("label {label} is outside the active mask")));
    }
    let lse = masked_logsumexp(logits, active);
    let mut grad: Vec<f64> = logits
        .iter()
        .zip(active)
        .map(|(&l, &a)| if a { (l - lse).exp() } else { 0.0 })
        .collect();
    grad[label] -= 1.0;
    Ok((lse - logits[label], grad))
}

pub fn masked_logsumexp(logits: &[f64], active: &[bool]) -> f64 {
    let max = logits
        .iter()
        .zip(active)
        .filter(|(_, &a)| a)
        .map(|(&l, _)| l)
        .fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits
        .iter()
        .zip(active)
        .filter(|(_, &a)| a)
        .map(|(&l, _)| (l - max).exp())
        .sum();
    max + sum.ln()
}

/// Softmax over the active entries, zeros elsewhere.
pub fn masked_softmax(logits: &[f64], active: &[bool]) -> Vec<f64> {
    let lse = masked_logsumexp(logits, active);
    logits
        .iter()
        .zip(active)
        .map(|(&l, &a)| if a { (l - lse).exp() } else { 0.0 })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_equal_logits() {
        let (loss, g) = masked_softmax_ce(&[0.0, 0.0], 0, &[true, true]).unwrap();
        assert!((loss - 2f64.ln()).abs() < 1e-15);
        assert_eq!(g, vec![-0.5, 0.5]);
    }

    #[test]
    fn huge_logit_is_stable() {
        let (loss, g) = masked_softmax_ce(&[1000.0, 0.0], 0, &[true, true]).unwrap();
        assert!(loss.is_finite() && loss.abs() < 1e-12);
        assert!(g.iter().all(|v| v.is_finite()));
        let (loss, _) = masked_softmax_ce(&[0.0, 1000.0], 0, &[true, true]).unwrap();
        assert!((loss - 1000.0).abs() < 1e-9);
    }

    #[test]
    fn mask_zeroes_gradient() {
        let (loss, g) = masked_softmax_ce(&[2.0, 5.0, 0.0, 9.0], 2, &[false, false, true, true]).unwrap();
        let (full, _) = masked_softmax_ce(&[0.0, 9.0], 0, &[true, true]).unwrap();
        assert!((loss - full).abs() < 1e-12);
        assert_eq!(&g[..2], &[0.0, 0.0]);
        assert!(g.iter().sum::<f64>().abs() < 1e-15);
    }

    #[test]
    fn full_mask_is_plain_ce() {
        let logits = [0.3, -1.2, 2.0];
        let (loss, _) = masked_softmax_ce(&logits, 1, &[true; 3]).unwrap();
        let z: f64 = logits.iter().map(|l: &f64| l.exp()).sum();
        assert!((loss - (z.ln() - logits[1])).abs() < 1e-12);
    }

    #[test]
    fn label_outside_mask() {
        assert!(masked_softmax_ce(&[0.0, 0.0], 1, &[true, false]).is_err());
        assert!(masked_softmax_ce(&[0.0, 0.0], 5, &[true, true]).is_err());
    }
}
