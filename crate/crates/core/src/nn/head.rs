use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::LabRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum HeadKind {
    /// `o_i = <z, A_i> + b_i`
    Linear,
    /// `o_i = cos(z, A_i)`; norms and biases play no role.
    WeightNorm,
    /// Nearest class mean: `o_i = -||z - mu_i||`. Fitted, never trained.
    MeanLayer,
}

/// A classifier head mapping latents to one logit per class in `classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    pub kind: HeadKind,
    /// Global class id of every output.
    pub classes: Vec<usize>,
    /// `N x h`. Class means for `MeanLayer`.
    pub weight: Array2<f64>,
    /// `N`. Always zero unless `Linear`.
    pub bias: Array1<f64>,
    /// Samples absorbed per class (`MeanLayer` only).
    pub counts: Vec<u64>,
    pub frozen: bool,
}

impl Head {
    /// Uniform `±1/sqrt(h)` initialization; `MeanLayer` starts empty.
    pub fn new(kind: HeadKind, classes: Vec<usize>, latent_dim: usize, rng: &mut LabRng) -> Result<Self> {
        if classes.is_empty() {
            return Err(Error::invalid("a head needs at least one class"));
        }
        let n = classes.len();
        let bound = 1.0 / (latent_dim.max(1) as f64).sqrt();
        let (weight, bias) = match kind {
            HeadKind::MeanLayer => (Array2::zeros((n, latent_dim)), Array1::zeros(n)),
            HeadKind::Linear => (
                Array2::from_shape_simple_fn((n, latent_dim), || rng.random_range(-bound..bound)),
                Array1::from_shape_simple_fn(n, || rng.random_range(-bound..bound)),
            ),
            HeadKind::WeightNorm => (
                Array2::from_shape_simple_fn((n, latent_dim), || rng.random_range(-bound..bound)),
                Array1::zeros(n),
            ),
        };
        let head = Head {
            kind,
            classes,
            weight,
            bias,
            counts: vec![0; n],
            frozen: false,
        };
        head.check_rows()?;
        Ok(head)
    }

    /// Builds a head from explicit parameters.
    pub fn from_parts(kind: HeadKind, classes: Vec<usize>, weight: Array2<f64>, bias: Array1<f64>) -> Result<Self> {
        if weight.nrows() != classes.len() || bias.len() != classes.len() {
            return Err(Error::shape(format!(
                "head with {} classes got weight {:?} and bias {}",
                classes.len(),
                weight.dim(),
                bias.len()
            )));
        }
        let n = classes.len();
        let head = Head { kind, classes, weight, bias, counts: vec![0; n], frozen: false };
        head.check_rows()?;
        Ok(head)
    }

    fn check_rows(&self) -> Result<()> {
        if self.kind == HeadKind::WeightNorm {
            for (i, row) in self.weight.rows().into_iter().enumerate() {
                if row.dot(&row) == 0.0 {
                    return Err(Error::invalid(format!("weightnorm row {i} is zero")));
                }
            }
        }
        Ok(())
    }

    pub fn n_outputs(&self) -> usize {
        self.classes.len()
    }

    pub fn latent_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn trainable(&self) -> bool {
        !self.frozen && self.kind != HeadKind::MeanLayer
    }

    /// Logits for a batch of latents (`batch x h` -> `batch x N`).
    pub fn logits(&self, z: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if z.ncols() != self.latent_dim() {
            return Err(Error::shape(format!(
                "latent width {} for a head expecting {}",
                z.ncols(),
                self.latent_dim()
            )));
        }
        Ok(match self.kind {
            HeadKind::Linear => z.dot(&self.weight.t()) + &self.bias,
            HeadKind::WeightNorm => {
                let row_norms = self.weight.map_axis(Axis(1), |r| r.dot(&r).sqrt());
                let mut o = z.dot(&self.weight.t());
                for (mut out, zb) in o.rows_mut().into_iter().zip(z.rows()) {
                    let zn = zb.dot(&zb).sqrt();
                    if zn == 0.0 {
                        out.fill(0.0);
                    } else {
                        out.iter_mut().zip(row_norms.iter()).for_each(|(v, an)| *v /= zn * an);
                    }
                }
                o
            }
            HeadKind::MeanLayer => {
                let mut o = Array2::zeros((z.nrows(), self.n_outputs()));
                for (mut out, zb) in o.rows_mut().into_iter().zip(z.rows()) {
                    for (v, mu) in out.iter_mut().zip(self.weight.rows()) {
                        *v = -zb.iter().zip(mu.iter()).map(|(a, m)| (a - m) * (a - m)).sum::<f64>().sqrt();
                    }
                }
                o
            }
        })
    }

    /// Backpropagates `dlogits` into `(dweight, dbias, dz)`.
    ///
    /// `MeanLayer` and frozen heads return zero parameter gradients; `MeanLayer`
    /// also passes no gradient to the latent.
    pub fn backward(
        &self,
        z: ArrayView2<'_, f64>,
        dlogits: ArrayView2<'_, f64>,
    ) -> Result<(Array2<f64>, Array1<f64>, Array2<f64>)> {
        if dlogits.dim() != (z.nrows(), self.n_outputs()) {
            return Err(Error::shape(format!(
                "dlogits {:?} for {} samples and {} outputs",
                dlogits.dim(),
                z.nrows(),
                self.n_outputs()
            )));
        }
        let mut dw = Array2::zeros(self.weight.raw_dim());
        let mut db = Array1::zeros(self.bias.len());
        let dz = match self.kind {
            HeadKind::MeanLayer => Array2::zeros(z.raw_dim()),
            HeadKind::Linear => {
                if !self.frozen {
                    dw = dlogits.t().dot(&z);
                    db = dlogits.sum_axis(Axis(0));
                }
                dlogits.dot(&self.weight)
            }
            HeadKind::WeightNorm => {
                let row_norms = self.weight.map_axis(Axis(1), |r| r.dot(&r).sqrt());
                let mut dz = Array2::zeros(z.raw_dim());
                for ((zb, gb), mut dzb) in z.rows().into_iter().zip(dlogits.rows()).zip(dz.rows_mut()) {
                    let zn = zb.dot(&zb).sqrt();
                    if zn == 0.0 {
                        continue;
                    }
                    for (i, (a, &an)) in self.weight.rows().into_iter().zip(row_norms.iter()).enumerate() {
                        let g = gb[i];
                        if g == 0.0 {
                            continue;
                        }
                        let o = zb.dot(&a) / (zn * an);
                        // d cos / dz = a/(|z||a|) - o z/|z|^2
                        dzb.scaled_add(g / (zn * an), &a);
                        dzb.scaled_add(-g * o / (zn * zn), &zb);
                        if !self.frozen {
                            // d cos / da = z/(|z||a|) - o a/|a|^2
                            let mut dwi = dw.row_mut(i);
                            dwi.scaled_add(g / (zn * an), &zb);
                            dwi.scaled_add(-g * o / (an * an), &a);
                        }
                    }
                }
                dz
            }
        };
        Ok((dw, db, dz))
    }

    /// Folds a batch of latents into the running class means.
    ///
    /// Labels are global class ids. Fitting in several batches gives the same
    /// means as fitting their union.
    pub fn meanlayer_absorb(&mut self, z: ArrayView2<'_, f64>, labels: &[usize]) -> Result<()> {
        if self.kind != HeadKind::MeanLayer {
            return Err(Error::invalid("only MeanLayer heads are fitted"));
        }
        if self.frozen {
            return Err(Error::invalid("head is frozen"));
        }
        if z.nrows() != labels.len() || z.ncols() != self.latent_dim() {
            return Err(Error::shape("latents and labels disagree"));
        }
        for (zb, &y) in z.rows().into_iter().zip(labels) {
            let i = self
                .classes
                .iter()
                .position(|&c| c == y)
                .ok_or_else(|| Error::invalid(format!("class {y} is not served by this head")))?;
            self.counts[i] += 1;
            let k = self.counts[i] as f64;
            let mut mu = self.weight.row_mut(i);
            mu.zip_mut_with(&zb, |m, &v| *m += (v - *m) / k);
        }
        Ok(())
    }

    /// Fits class means from scratch; every class needs at least one sample.
    pub fn meanlayer_fit(&mut self, z: ArrayView2<'_, f64>, labels: &[usize]) -> Result<()> {
        self.weight.fill(0.0);
        self.counts.iter_mut().for_each(|c| *c = 0);
        self.meanlayer_absorb(z, labels)?;
        if let Some(i) = self.counts.iter().position(|&c| c == 0) {
            return Err(Error::invalid(format!("class {} has no samples", self.classes[i])));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;

    fn linear() -> Head {
        Head::from_parts(HeadKind::Linear, vec![0, 1], array![[1.0, 0.0], [0.6, 0.8]], array![10.0, 0.0]).unwrap()
    }

    fn weightnorm() -> Head {
        Head::from_parts(HeadKind::WeightNorm, vec![0, 1], array![[1.0, 0.0], [0.6, 0.8]], array![0.0, 0.0]).unwrap()
    }

    #[test]
    fn linear_logits() {
        let o = linear().logits(array![[3.0, 4.0], [0.0, 0.0]].view()).unwrap();
        assert_eq!(o.row(0).to_vec(), vec![13.0, 5.0]);
        assert_eq!(o.row(1).to_vec(), vec![10.0, 0.0]);
    }

    #[test]
    fn weightnorm_logits_flip_argmax() {
        let o = weightnorm().logits(array![[3.0, 4.0]].view()).unwrap();
        assert!((o[[0, 0]] - 0.6).abs() < 1e-15);
        assert!((o[[0, 1]] - 1.0).abs() < 1e-15);
        let scaled = weightnorm().logits(array![[300.0, 400.0], [0.0, 0.0]].view()).unwrap();
        assert!((scaled[[0, 0]] - 0.6).abs() < 1e-15);
        assert_eq!(scaled.row(1).to_vec(), vec![0.0, 0.0]);
    }

    #[test]
    fn weightnorm_zero_row_rejected() {
        let r = Head::from_parts(HeadKind::WeightNorm, vec![0, 1], array![[0.0, 0.0], [1.0, 0.0]], array![0.0, 0.0]);
        assert!(r.is_err());
    }

    #[test]
    fn meanlayer_nearest_mean() {
        let mut h = Head::new(HeadKind::MeanLayer, vec![0, 1], 2, &mut LabRng::seed_from_u64(0)).unwrap();
        h.meanlayer_fit(array![[0.0, 0.0], [10.0, 0.0]].view(), &[0, 1]).unwrap();
        let o = h.logits(array![[2.0, 0.0], [10.0, 0.0]].view()).unwrap();
        assert!(o[[0, 0]] > o[[0, 1]]);
        assert_eq!(o[[1, 1]], 0.0);
        assert!(h.meanlayer_fit(array![[1.0, 1.0]].view(), &[0]).is_err());
    }

    #[test]
    fn meanlayer_incremental_equals_batch() {
        let mut rng = LabRng::seed_from_u64(4);
        let z = Array2::from_shape_simple_fn((40, 3), || rng.random_range(-5.0..5.0));
        let labels: Vec<usize> = (0..40).map(|i| (i * 7) % 3).collect();
        let mut once = Head::new(HeadKind::MeanLayer, vec![0, 1, 2], 3, &mut rng).unwrap();
        once.meanlayer_fit(z.view(), &labels).unwrap();
        let mut twice = Head::new(HeadKind::MeanLayer, vec![0, 1, 2], 3, &mut rng).unwrap();
        twice.meanlayer_absorb(z.slice(ndarray::s![..17, ..]), &labels[..17]).unwrap();
        twice.meanlayer_absorb(z.slice(ndarray::s![17.., ..]), &labels[17..]).unwrap();
        for (a, b) in once.weight.iter().zip(twice.weight.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
