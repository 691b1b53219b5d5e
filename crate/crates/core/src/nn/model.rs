use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::head::{Head, HeadKind};
use crate::error::{Error, Result};
use crate::rng::{rng_for, stream, LabRng};

/// One affine layer of the trunk, followed by a ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `out x in`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn init(fan_in: usize, fan_out: usize, rng: &mut LabRng) -> Self {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        Dense {
            weight: Array2::from_shape_simple_fn((fan_out, fan_in), || rng.random_range(-bound..bound)),
            bias: Array1::from_shape_simple_fn(fan_out, || rng.random_range(-bound..bound)),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.ncols()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.nrows()
    }
}

/// Architecture of a model, independent of its weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    /// One entry per head: its kind and the global classes it serves.
    pub heads: Vec<(HeadKind, Vec<usize>)>,
    #[serde(default)]
    pub dropout_rate: f64,
}

impl Architecture {
    /// A single head of `kind` over classes `0..n_classes`.
    pub fn single_head(input_dim: usize, hidden: Vec<usize>, kind: HeadKind, n_classes: usize) -> Self {
        Architecture {
            input_dim,
            hidden,
            heads: vec![(kind, (0..n_classes).collect())],
            dropout_rate: 0.0,
        }
    }
}

/// MLP trunk plus classifier heads.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub trunk: Vec<Dense>,
    pub heads: Vec<Head>,
    pub dropout_rate: f64,
    /// A frozen trunk never receives gradient updates.
    pub trunk_frozen: bool,
    pub seed: u64,
}

/// Addresses one parameter tensor of a model (or of its gradient).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamId {
    TrunkWeight(usize),
    TrunkBias(usize),
    HeadWeight(usize),
    HeadBias(usize),
}

/// Cached intermediate values of a forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    /// Input of every trunk layer followed by the trunk output (pre-dropout).
    pub activations: Vec<Array2<f64>>,
    /// Pre-activation of every trunk layer.
    pub preacts: Vec<Array2<f64>>,
    /// Inverted-dropout multipliers applied to the trunk output (0 or `1/(1-rate)`).
    pub dropout_mask: Option<Array2<f64>>,
    /// Latent fed to the heads.
    pub latent: Array2<f64>,
    /// Logits of every head, `batch x n_outputs`.
    pub logits: Vec<Array2<f64>>,
}

impl ModelParams {
    /// Seeded uniform `±1/sqrt(fan_in)` initialization.
    pub fn new(arch: &Architecture, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&arch.dropout_rate) {
            return Err(Error::config("dropout_rate", format!("{} is outside [0, 1)", arch.dropout_rate)));
        }
        if arch.heads.is_empty() {
            return Err(Error::config("heads", "a model needs at least one head"));
        }
        let mut rng = rng_for(seed, stream::INIT, 0);
        let mut fan_in = arch.input_dim;
        let mut trunk = Vec::with_capacity(arch.hidden.len());
        for &width in &arch.hidden {
            trunk.push(Dense::init(fan_in, width, &mut rng));
            fan_in = width;
        }
        let heads = arch
            .heads
            .iter()
            .map(|(kind, classes)| Head::new(*kind, classes.clone(), fan_in, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(ModelParams {
            trunk,
            heads,
            dropout_rate: arch.dropout_rate,
            trunk_frozen: false,
            seed,
        })
    }

    pub fn from_parts(trunk: Vec<Dense>, heads: Vec<Head>, dropout_rate: f64, seed: u64) -> Result<Self> {
        let m = ModelParams { trunk, heads, dropout_rate, trunk_frozen: false, seed };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::config("dropout_rate", format!("{} is outside [0, 1)", self.dropout_rate)));
        }
        for pair in self.trunk.windows(2) {
            if pair[0].fan_out() != pair[1].fan_in() {
                return Err(Error::shape(format!(
                    "trunk layer emits {} features, next expects {}",
                    pair[0].fan_out(),
                    pair[1].fan_in()
                )));
            }
        }
        for layer in &self.trunk {
            if layer.bias.len() != layer.fan_out() {
                return Err(Error::shape("trunk bias length differs from layer width"));
            }
        }
        if let Some(first) = self.heads.first() {
            let h = first.latent_dim();
            if self.heads.iter().any(|hd| hd.latent_dim() != h) {
                return Err(Error::shape("heads disagree on the latent width"));
            }
            if let Some(last) = self.trunk.last() {
                if last.fan_out() != h {
                    return Err(Error::shape(format!("trunk emits {} features, heads expect {h}", last.fan_out())));
                }
            }
        }
        Ok(())
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            input_dim: self.input_dim(),
            hidden: self.trunk.iter().map(Dense::fan_out).collect(),
            heads: self.heads.iter().map(|h| (h.kind, h.classes.clone())).collect(),
            dropout_rate: self.dropout_rate,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.trunk
            .first()
            .map(Dense::fan_in)
            .unwrap_or_else(|| self.latent_dim())
    }

    pub fn latent_dim(&self) -> usize {
        self.heads.first().map(Head::latent_dim).unwrap_or(0)
    }

    /// One past the largest class id served by any head.
    pub fn n_classes(&self) -> usize {
        self.heads
            .iter()
            .flat_map(|h| h.classes.iter())
            .max()
            .map_or(0, |&c| c + 1)
    }

    /// Number of trainable scalars.
    pub fn param_count(&self) -> usize {
        self.param_ids().iter().map(|&id| self.param(id).len()).sum()
    }

    /// Trainable parameter tensors in a fixed order.
    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = Vec::new();
        if !self.trunk_frozen {
            for l in 0..self.trunk.len() {
                ids.push(ParamId::TrunkWeight(l));
                ids.push(ParamId::TrunkBias(l));
            }
        }
        for (i, h) in self.heads.iter().enumerate() {
            if !h.trainable() {
                continue;
            }
            ids.push(ParamId::HeadWeight(i));
            if h.kind == HeadKind::Linear {
                ids.push(ParamId::HeadBias(i));
            }
        }
        ids
    }

    pub fn param(&self, id: ParamId) -> &[f64] {
        let s = match id {
            ParamId::TrunkWeight(l) => self.trunk[l].weight.as_slice(),
            ParamId::TrunkBias(l) => self.trunk[l].bias.as_slice(),
            ParamId::HeadWeight(h) => self.heads[h].weight.as_slice(),
            ParamId::HeadBias(h) => self.heads[h].bias.as_slice(),
        };
        s.expect("parameters are stored contiguously")
    }

    pub fn param_mut(&mut self, id: ParamId) -> &mut [f64] {
        let s = match id {
            ParamId::TrunkWeight(l) => self.trunk[l].weight.as_slice_mut(),
            ParamId::TrunkBias(l) => self.trunk[l].bias.as_slice_mut(),
            ParamId::HeadWeight(h) => self.heads[h].weight.as_slice_mut(),
            ParamId::HeadBias(h) => self.heads[h].bias.as_slice_mut(),
        };
        s.expect("parameters are stored contiguously")
    }

    /// Freezes head `i`; its stored values never change afterwards.
    pub fn freeze_head(&mut self, i: usize) {
        self.heads[i].frozen = true;
    }

    /// Trunk output for a batch, no dropout.
    pub fn latents(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let mut h = self.check_input(x)?;
        for layer in &self.trunk {
            h = relu(&(h.dot(&layer.weight.t()) + &layer.bias));
        }
        Ok(h)
    }

    fn check_input(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.input_dim() {
            return Err(Error::shape(format!(
                "input width {} for a model expecting {}",
                x.ncols(),
                self.input_dim()
            )));
        }
        Ok(x.to_owned())
    }

    /// Forward pass. Dropout is active only in `train_mode` with a positive rate.
    pub fn forward(&self, x: ArrayView2<'_, f64>, train_mode: bool, rng: &mut LabRng) -> Result<Forward> {
        let mask = if train_mode && self.dropout_rate > 0.0 {
            let keep = 1.0 - self.dropout_rate;
            let scale = 1.0 / keep;
            Some(Array2::from_shape_simple_fn((x.nrows(), self.latent_dim()), || {
                if rng.random::<f64>() < keep {
                    scale
                } else {
                    0.0
                }
            }))
        } else {
            None
        };
        self.forward_with_mask(x, mask)
    }

    /// Forward pass with an explicit dropout mask.
    pub fn forward_with_mask(&self, x: ArrayView2<'_, f64>, mask: Option<Array2<f64>>) -> Result<Forward> {
        let mut activations = vec![self.check_input(x)?];
        let mut preacts = Vec::with_capacity(self.trunk.len());
        for layer in &self.trunk {
            let pre = activations.last().expect("input is cached").dot(&layer.weight.t()) + &layer.bias;
            activations.push(relu(&pre));
            preacts.push(pre);
        }
        let raw = activations.last().expect("trunk output");
        let latent = match &mask {
            Some(m) => {
                if m.dim() != raw.dim() {
                    return Err(Error::shape("dropout mask does not match the latent"));
                }
                raw * m
            }
            None => raw.clone(),
        };
        let logits = self
            .heads
            .iter()
            .map(|h| h.logits(latent.view()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Forward { activations, preacts, dropout_mask: mask, latent, logits })
    }

    /// Logits of all heads scattered into `batch x n_classes`; classes no head
    /// serves are `-inf`. Later heads overwrite earlier ones on shared classes.
    pub fn global_logits(&self, logits: &[Array2<f64>]) -> Array2<f64> {
        let rows = logits.first().map_or(0, |l| l.nrows());
        let mut out = Array2::from_elem((rows, self.n_classes()), f64::NEG_INFINITY);
        for (head, l) in self.heads.iter().zip(logits) {
            for (k, &c) in head.classes.iter().enumerate() {
                out.column_mut(c).assign(&l.column(k));
            }
        }
        out
    }

    /// Exact gradients of a loss whose derivative with respect to every head's
    /// logits is `dlogits`, plus an optional direct derivative on the latent.
    pub fn backward(&self, fwd: &Forward, dlogits: &[Array2<f64>], extra_dlatent: Option<&Array2<f64>>) -> Result<Gradients> {
        if dlogits.len() != self.heads.len() {
            return Err(Error::shape(format!("{} dlogits for {} heads", dlogits.len(), self.heads.len())));
        }
        if fwd.activations.len() != self.trunk.len() + 1 {
            return Err(Error::shape("cached forward does not match the trunk depth"));
        }
        let mut grads = Gradients::zeros_like(self);
        let mut dlatent = Array2::<f64>::zeros(fwd.latent.raw_dim());
        for (i, (head, g)) in self.heads.iter().zip(dlogits).enumerate() {
            let (dw, db, dz) = head.backward(fwd.latent.view(), g.view())?;
            dlatent += &dz;
            if head.trainable() {
                grads.heads[i] = (dw, db);
            }
        }
        if let Some(extra) = extra_dlatent {
            if extra.dim() != dlatent.dim() {
                return Err(Error::shape("extra latent gradient has the wrong shape"));
            }
            dlatent += extra;
        }
        if self.trunk_frozen || self.trunk.is_empty() {
            return Ok(grads);
        }
        let mut dout = match &fwd.dropout_mask {
            Some(m) => dlatent * m,
            None => dlatent,
        };
        for l in (0..self.trunk.len()).rev() {
            let mut dpre = dout;
            dpre.zip_mut_with(&fwd.preacts[l], |d, &p| {
                if p <= 0.0 {
                    *d = 0.0;
                }
            });
            let input = &fwd.activations[l];
            grads.trunk[l] = (dpre.t().dot(input), dpre.sum_axis(Axis(0)));
            dout = dpre.dot(&self.trunk[l].weight);
        }
        Ok(grads)
    }
}

fn relu(a: &Array2<f64>) -> Array2<f64> {
    a.mapv(|v| if v > 0.0 { v } else { 0.0 })
}

/// Gradient tensors mirroring a model's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub trunk: Vec<(Array2<f64>, Array1<f64>)>,
    pub heads: Vec<(Array2<f64>, Array1<f64>)>,
}

impl Gradients {
    pub fn zeros_like(model: &ModelParams) -> Self {
        Gradients {
            trunk: model
                .trunk
                .iter()
                .map(|l| (Array2::zeros(l.weight.raw_dim()), Array1::zeros(l.bias.len())))
                .collect(),
            heads: model
                .heads
                .iter()
                .map(|h| (Array2::zeros(h.weight.raw_dim()), Array1::zeros(h.bias.len())))
                .collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        let s = match id {
            ParamId::TrunkWeight(l) => self.trunk[l].0.as_slice(),
            ParamId::TrunkBias(l) => self.trunk[l].1.as_slice(),
            ParamId::HeadWeight(h) => self.heads[h].0.as_slice(),
            ParamId::HeadBias(h) => self.heads[h].1.as_slice(),
        };
        s.expect("gradients are stored contiguously")
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        let s = match id {
            ParamId::TrunkWeight(l) => self.trunk[l].0.as_slice_mut(),
            ParamId::TrunkBias(l) => self.trunk[l].1.as_slice_mut(),
            ParamId::HeadWeight(h) => self.heads[h].0.as_slice_mut(),
            ParamId::HeadBias(h) => self.heads[h].1.as_slice_mut(),
        };
        s.expect("gradients are stored contiguously")
    }

    /// Concatenation over `ids`.
    pub fn flatten(&self, ids: &[ParamId]) -> Vec<f64> {
        ids.iter().flat_map(|&id| self.get(id).iter().copied()).collect()
    }
}

/// SGD with heavy-ball momentum (`v = mu v + g; p -= lr v`).
#[derive(Debug, Clone)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    velocity: Option<Gradients>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64) -> Self {
        Sgd { lr, momentum, velocity: None }
    }

    /// Drops the momentum state.
    pub fn reset(&mut self) {
        self.velocity = None;
    }

    /// Updates every trainable parameter; frozen parts are left untouched.
    pub fn step(&mut self, model: &mut ModelParams, grads: &Gradients) {
        let ids = model.param_ids();
        if self.momentum == 0.0 {
            for id in ids {
                let g = grads.get(id);
                for (p, gv) in model.param_mut(id).iter_mut().zip(g) {
                    *p -= self.lr * gv;
                }
            }
            return;
        }
        let velocity = self.velocity.get_or_insert_with(|| Gradients::zeros_like(model));
        if velocity.trunk.len() != model.trunk.len() || velocity.heads.len() != model.heads.len() {
            *velocity = Gradients::zeros_like(model);
        }
        for id in ids {
            let g = grads.get(id);
            let v = velocity.get_mut(id);
            for (vv, gv) in v.iter_mut().zip(g) {
                *vv = self.momentum * *vv + gv;
            }
            let v = velocity.get(id);
            for (p, vv) in model.param_mut(id).iter_mut().zip(v) {
                *p -= self.lr * vv;
            }
        }
    }
}

/// `sgd_step` without persistent momentum state.
pub fn sgd_step(model: &mut ModelParams, grads: &Gradients, lr: f64) {
    Sgd::new(lr, 0.0).step(model, grads);
}
