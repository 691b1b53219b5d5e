//! Training objectives: cross-entropy and the replay-as-environments OOD
//! regularizers (IRMv1, IB-ERM, IB-IRM, GroupDRO, Spectral Decoupling).
//!
//! Environments are the task-of-origin tags of the samples in a mixed batch.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::objective::{per_sample_ce, scatter_to_heads};
use crate::nn::{Forward, ModelParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Finetune,
    Replay,
    Irm,
    IbErm,
    IbIrm,
    GroupDro,
    SpectralDecoupling,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Finetune,
        Method::Replay,
        Method::Irm,
        Method::IbErm,
        Method::IbIrm,
        Method::GroupDro,
        Method::SpectralDecoupling,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Finetune => "finetune",
            Method::Replay => "replay",
            Method::Irm => "irm",
            Method::IbErm => "ib_erm",
            Method::IbIrm => "ib_irm",
            Method::GroupDro => "group_dro",
            Method::SpectralDecoupling => "spectral_decoupling",
        }
    }

    pub fn uses_buffer(self) -> bool {
        self != Method::Finetune
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| {
            let valid: Vec<&str> = Method::ALL.iter().map(|m| m.name()).collect();
            Error::config("trainer.method", format!("unknown method `{s}`; valid methods: {}", valid.join(", ")))
        })
    }
}

/// Penalty strengths for one step (after warmup scaling).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coefficients {
    pub lambda: f64,
    pub lambda_ib: f64,
    pub eta: f64,
}

/// GroupDRO weights over environments, carried across steps and tasks.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DroState {
    pub q: BTreeMap<usize, f64>,
}

impl DroState {
    /// Registers unseen groups at the current mean weight, then renormalizes.
    fn admit(&mut self, groups: impl Iterator<Item = usize>) {
        for g in groups {
            if !self.q.contains_key(&g) {
                let mean = if self.q.is_empty() {
                    1.0
                } else {
                    self.q.values().sum::<f64>() / self.q.len() as f64
                };
                self.q.insert(g, mean);
            }
        }
        self.normalize();
    }

    fn normalize(&mut self) {
        let total: f64 = self.q.values().sum();
        self.q.values_mut().for_each(|v| *v /= total);
    }

    /// Exponentiated-gradient step `q_g <- q_g exp(eta L_g)`, renormalized.
    pub fn update(&mut self, group_losses: &BTreeMap<usize, f64>, eta: f64) {
        self.admit(group_losses.keys().copied());
        for (g, loss) in group_losses {
            if let Some(q) = self.q.get_mut(g) {
                *q *= (eta * loss).exp();
            }
        }
        self.normalize();
    }
}

/// Loss of one step and its derivatives.
#[derive(Debug, Clone)]
pub struct StepLoss {
    pub loss: f64,
    pub ce: f64,
    pub penalty: f64,
    /// Derivative with respect to each head's logits.
    pub dlogits: Vec<Array2<f64>>,
    /// Direct derivative with respect to the latent (IB penalties).
    pub dlatent: Option<Array2<f64>>,
}

/// IRMv1 penalty `sum_e (d/ds CE_e(s·logits) at s=1)^2` over the rows of
/// `logits` grouped by `envs`, with its gradient. Non-finite logits are
/// treated as inactive classes.
pub fn irm_penalty(logits: &Array2<f64>, labels: &[usize], envs: &[usize]) -> Result<(f64, Array2<f64>)> {
    let groups = group_rows(envs);
    let mut penalty = 0.0;
    let mut grad = Array2::zeros(logits.raw_dim());
    for rows in groups.values() {
        let n_e = rows.len() as f64;
        let mut slope = 0.0;
        let mut parts = Vec::with_capacity(rows.len());
        for &i in rows {
            let row = logits.row(i);
            let active: Vec<bool> = row.iter().map(|l| l.is_finite()).collect();
            let l: Vec<f64> = row.iter().map(|&v| if v.is_finite() { v } else { 0.0 }).collect();
            let probs = crate::nn::loss::masked_softmax(&l, &active);
            let y = labels[i];
            if !active.get(y).copied().unwrap_or(false) {
                return Err(Error::invalid(format!("label {y} has no finite logit")));
            }
            let mean_logit: f64 = probs.iter().zip(&l).map(|(p, v)| p * v).sum();
            // d CE(s l) / ds at s = 1 equals sum_k (p_k - 1[k=y]) l_k
            let s_i = mean_logit - l[y];
            slope += s_i / n_e;
            parts.push((i, probs, l, mean_logit));
        }
        penalty += slope * slope;
        for (i, probs, l, mean_logit) in parts {
            let y = labels[i];
            let mut g = grad.row_mut(i);
            for k in 0..l.len() {
                if probs[k] == 0.0 && k != y {
                    continue;
                }
                let indicator = if k == y { 1.0 } else { 0.0 };
                let ds_dl = probs[k] - indicator + probs[k] * (l[k] - mean_logit);
                g[k] = 2.0 * slope * ds_dl / n_e;
            }
        }
    }
    Ok((penalty, grad))
}

fn group_rows(envs: &[usize]) -> BTreeMap<usize, Vec<usize>> {
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &e) in envs.iter().enumerate() {
        groups.entry(e).or_default().push(i);
    }
    groups
}

/// Objective of `method` on one mixed batch.
///
/// Every method shares one cross-entropy code path with per-sample weights
/// `1/n` (GroupDRO rescales them by the group weights), and penalties with a
/// zero coefficient are skipped entirely, so zero-strength OOD methods
/// reproduce plain replay bit for bit.
pub fn method_loss(
    method: Method,
    model: &ModelParams,
    fwd: &Forward,
    labels: &[usize],
    envs: &[usize],
    coef: Coefficients,
    dro: &mut DroState,
) -> Result<StepLoss> {
    if labels.is_empty() || envs.len() != labels.len() {
        return Err(Error::invalid("method loss needs a non-empty batch with one environment per sample"));
    }
    let global = model.global_logits(&fwd.logits);
    let (losses, dce) = per_sample_ce(&global, labels, None)?;
    let n = labels.len();

    let weights: Vec<f64> = if method == Method::GroupDro {
        let mut sums: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
        for (&e, &l) in envs.iter().zip(&losses) {
            let s = sums.entry(e).or_default();
            s.0 += l;
            s.1 += 1;
        }
        let group_losses: BTreeMap<usize, f64> = sums.into_iter().map(|(g, (s, c))| (g, s / c as f64)).collect();
        dro.update(&group_losses, coef.eta);
        let top = envs.iter().map(|e| dro.q[e]).fold(0.0, f64::max);
        let rel: Vec<f64> = envs.iter().map(|e| dro.q[e] / top).collect();
        let total: f64 = rel.iter().sum();
        rel.into_iter().map(|r| r / total).collect()
    } else {
        vec![1.0 / n as f64; n]
    };

    let ce: f64 = losses.iter().zip(&weights).map(|(l, w)| l * w).sum();
    let mut dglobal = dce;
    for (mut row, w) in dglobal.rows_mut().into_iter().zip(&weights) {
        row.mapv_inplace(|g| g * w);
    }

    let mut penalty = 0.0;
    let irm = matches!(method, Method::Irm | Method::IbIrm);
    if irm && coef.lambda != 0.0 {
        let (p, g) = irm_penalty(&global, labels, envs)?;
        penalty += coef.lambda * p;
        dglobal.scaled_add(coef.lambda, &g);
    }
    if method == Method::SpectralDecoupling && coef.lambda != 0.0 {
        let finite = global.mapv(|v| if v.is_finite() { v } else { 0.0 });
        let sq: f64 = finite.iter().map(|v| v * v).sum::<f64>() / n as f64;
        penalty += 0.5 * coef.lambda * sq;
        dglobal.scaled_add(coef.lambda / n as f64, &finite);
    }
    let mut dlatent = None;
    if matches!(method, Method::IbErm | Method::IbIrm) && coef.lambda_ib != 0.0 {
        let (v, g) = latent_variance(&fwd.latent);
        penalty += coef.lambda_ib * v;
        dlatent = Some(g * coef.lambda_ib);
    }
    Ok(StepLoss {
        loss: ce + penalty,
        ce,
        penalty,
        dlogits: scatter_to_heads(model, &dglobal),
        dlatent,
    })
}

/// Mean over latent dimensions of the within-batch (population) variance,
/// and its gradient.
pub fn latent_variance(z: &Array2<f64>) -> (f64, Array2<f64>) {
    let (n, h) = z.dim();
    if n == 0 || h == 0 {
        return (0.0, Array2::zeros(z.raw_dim()));
    }
    let mean = z.mean_axis(Axis(0)).expect("non-empty batch");
    let centered = z - &mean;
    let value = centered.iter().map(|c| c * c).sum::<f64>() / (n * h) as f64;
    let grad = centered * (2.0 / (n * h) as f64);
    (value, grad)
}
