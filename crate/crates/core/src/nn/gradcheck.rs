//! Central-difference verification of the analytic backward pass.

use ndarray::{Array2, ArrayView2};
use rand::seq::index;

use super::model::{Gradients, ModelParams, ParamId};
use super::objective::mean_ce;
use crate::error::{Error, Result};
use crate::rng::LabRng;

/// Minimum number of coordinates probed per check.
pub const MIN_COORDS: usize = 50;
/// Denominator floor for the relative error.
pub const REL_FLOOR: f64 = 1e-6;

/// A loss evaluation: value, analytic gradient and trunk pre-activations.
pub struct Evaluation {
    pub loss: f64,
    pub grads: Gradients,
    pub preacts: Vec<Array2<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub checked: usize,
    pub skipped: usize,
}

/// Mean cross-entropy over all classes, dropout disabled.
pub fn ce_evaluation(model: &ModelParams, x: ArrayView2<'_, f64>, labels: &[usize]) -> Result<Evaluation> {
    let fwd = model.forward_with_mask(x, None)?;
    let (loss, dlogits) = mean_ce(model, &fwd.logits, labels, None)?;
    let grads = model.backward(&fwd, &dlogits, None)?;
    Ok(Evaluation { loss, grads, preacts: fwd.preacts })
}

/// Max relative error between analytic and central-difference gradients of
/// the mean cross-entropy on `(x, labels)`.
pub fn finite_diff_check(
    model: &ModelParams,
    x: ArrayView2<'_, f64>,
    labels: &[usize],
    epsilon: f64,
    rng: &mut LabRng,
) -> Result<GradCheck> {
    finite_diff_check_with(model, epsilon, MIN_COORDS, rng, |m| ce_evaluation(m, x, labels))
}

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

fn same_pattern(a: &[Array2<f64>], b: &[Array2<f64>]) -> bool {
    a.iter()
        .zip(b)
        .all(|(x, y)| x.iter().zip(y.iter()).all(|(p, q)| (*p > 0.0) == (*q > 0.0)))
}

/// Generic check over any loss. Probes `n_coords` random trainable
/// coordinates (all of them when fewer exist); a coordinate is skipped when
/// its own unit sits within `10·epsilon` of the ReLU kink or when either
/// perturbation flips any ReLU.
pub fn finite_diff_check_with(
    model: &ModelParams,
    epsilon: f64,
    n_coords: usize,
    rng: &mut LabRng,
    eval: impl Fn(&ModelParams) -> Result<Evaluation>,
) -> Result<GradCheck> {
    if !(epsilon > 0.0) {
        return Err(Error::invalid("epsilon must be positive"));
    }
    let base = eval(model)?;
    let ids = model.param_ids();
    let mut coords: Vec<(ParamId, usize)> = Vec::new();
    for &id in &ids {
        coords.extend((0..model.param(id).len()).map(|k| (id, k)));
    }
    let picks = index::sample(rng, coords.len(), n_coords.max(MIN_COORDS).min(coords.len()));
    let mut probe = model.clone();
    let mut out = GradCheck { max_rel_error: 0.0, checked: 0, skipped: 0 };
    for pick in picks {
        let (id, k) = coords[pick];
        if near_kink(model, &base.preacts, id, k, epsilon) {
            out.skipped += 1;
            continue;
        }
        let orig = probe.param(id)[k];
        probe.param_mut(id)[k] = orig + epsilon;
        let plus = eval(&probe)?;
        probe.param_mut(id)[k] = orig - epsilon;
        let minus = eval(&probe)?;
        probe.param_mut(id)[k] = orig;
        if !same_pattern(&base.preacts, &plus.preacts) || !same_pattern(&base.preacts, &minus.preacts) {
            out.skipped += 1;
            continue;
        }
        let numeric = (plus.loss - minus.loss) / (2.0 * epsilon);
        let analytic = base.grads.get(id)[k];
        out.max_rel_error = out.max_rel_error.max(relative_error(analytic, numeric));
        out.checked += 1;
    }
    Ok(out)
}

fn near_kink(model: &ModelParams, preacts: &[Array2<f64>], id: ParamId, k: usize, epsilon: f64) -> bool {
    let (layer, unit) = match id {
        ParamId::TrunkWeight(l) => (l, k / model.trunk[l].fan_in()),
        ParamId::TrunkBias(l) => (l, k),
        _ => return false,
    };
    preacts[layer]
        .column(unit)
        .iter()
        .any(|p| p.abs() < 10.0 * epsilon)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Architecture, HeadKind};
    use rand::{Rng, SeedableRng};

    fn setup(kind: HeadKind, seed: u64) -> (ModelParams, Array2<f64>, Vec<usize>) {
        let arch = Architecture::single_head(5, vec![8, 6], kind, 3);
        let model = ModelParams::new(&arch, seed).unwrap();
        let mut rng = LabRng::seed_from_u64(seed + 100);
        let x = Array2::from_shape_simple_fn((12, 5), || rng.random_range(-2.0..2.0));
        let labels = (0..12).map(|i| i % 3).collect();
        (model, x, labels)
    }

    #[test]
    fn backward_matches_central_differences() {
        for kind in [HeadKind::Linear, HeadKind::WeightNorm] {
            let (m, x, y) = setup(kind, 3);
            let r = finite_diff_check(&m, x.view(), &y, 1e-4, &mut LabRng::seed_from_u64(0)).unwrap();
            assert!(r.checked >= 40, "{r:?}");
            assert!(r.max_rel_error < 1e-4, "{kind:?}: {r:?}");
        }
    }

    #[test]
    fn corrupted_gradient_is_caught() {
        let (m, x, y) = setup(HeadKind::Linear, 5);
        let r = finite_diff_check_with(&m, 1e-4, 200, &mut LabRng::seed_from_u64(1), |model| {
            let mut e = ce_evaluation(model, x.view(), &y)?;
            for g in e.grads.trunk[0].0.iter_mut() {
                *g *= 1.5;
            }
            Ok(e)
        })
        .unwrap();
        assert!(r.max_rel_error > 1e-2, "{r:?}");
    }

    #[test]
    fn kink_coordinates_are_skipped() {
        let (mut m, x, y) = setup(HeadKind::Linear, 8);
        // Put unit 0 of the first layer exactly on the kink for sample 0.
        let pre0: f64 = m.trunk[0].weight.row(0).dot(&x.row(0));
        m.trunk[0].bias[0] = -pre0;
        let fwd = m.forward_with_mask(x.view(), None).unwrap();
        assert!(near_kink(&m, &fwd.preacts, ParamId::TrunkBias(0), 0, 1e-4));
        let r = finite_diff_check(&m, x.view(), &y, 1e-4, &mut LabRng::seed_from_u64(2)).unwrap();
        assert!(r.max_rel_error < 1e-4);
    }
}
