//! Multi-head versus single-head inference on class-incremental tasks.
//!
//! Every task gets its own head, trained with a softmax over that task's
//! classes only and frozen afterwards. The local accuracy evaluates each
//! task's test samples with the mask of that task; the global accuracy uses
//! the same weights with all classes competing.

use std::collections::BTreeSet;

use ndarray::{s, Array1, Array2, ArrayView2};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::metrics::{masked_argmax, to_matrix};
use crate::error::{Error, Result};
use crate::nn::objective::per_sample_ce;
use crate::nn::{Dense, Head, HeadKind};
use crate::rng::{rng_for, stream};
use crate::scenario::Scenario;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolConfig {
    pub epochs_per_task: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    /// Width of the random-projection trunk when no trunk is supplied.
    pub projection_width: usize,
    pub seed: u64,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            epochs_per_task: 30,
            batch_size: 32,
            lr: 0.05,
            momentum: 0.9,
            projection_width: 256,
            seed: 0,
        }
    }
}

/// Seeded single-layer random projection (followed by the trunk's ReLU).
pub fn random_projection_trunk(input_dim: usize, width: usize, seed: u64) -> Vec<Dense> {
    let mut rng = rng_for(seed, stream::PROJECTION, 0);
    vec![Dense::init(input_dim, width, &mut rng)]
}

fn trunk_latents(trunk: &[Dense], x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let mut h = x.to_owned();
    for layer in trunk {
        if h.ncols() != layer.fan_in() {
            return Err(Error::shape(format!("trunk expects {} inputs, got {}", layer.fan_in(), h.ncols())));
        }
        h = (h.dot(&layer.weight.t()) + &layer.bias).mapv(|v| v.max(0.0));
    }
    Ok(h)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskGap {
    pub task: usize,
    pub local: f64,
    pub global: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadGap {
    pub kind: HeadKind,
    pub a_local: f64,
    pub a_global: f64,
    pub gap: f64,
    pub per_task: Vec<TaskGap>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub seed: u64,
    pub n_tasks: usize,
    pub heads: Vec<HeadGap>,
    /// Heads of earlier tasks were unchanged by later training.
    pub frozen_heads_intact: bool,
}

/// One CSV row: head kind × task × mask mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    pub seed: u64,
    pub head: HeadKind,
    pub task: usize,
    pub mask: String,
    pub accuracy: f64,
}

impl GapReport {
    pub fn head(&self, kind: HeadKind) -> Option<&HeadGap> {
        self.heads.iter().find(|h| h.kind == kind)
    }

    pub fn rows(&self) -> Vec<GapRow> {
        let mut rows = Vec::new();
        for h in &self.heads {
            for t in &h.per_task {
                for (mask, accuracy) in [("local", t.local), ("global", t.global)] {
                    rows.push(GapRow { seed: self.seed, head: h.kind, task: t.task, mask: mask.into(), accuracy });
                }
            }
        }
        rows
    }
}

/// Mean gap per head kind over several reports.
pub fn mean_gaps(reports: &[GapReport]) -> Vec<(HeadKind, f64)> {
    let kinds = [HeadKind::Linear, HeadKind::WeightNorm, HeadKind::MeanLayer];
    kinds
        .into_iter()
        .filter_map(|k| {
            let gaps: Vec<f64> = reports.iter().filter_map(|r| r.head(k)).map(|h| h.gap).collect();
            (!gaps.is_empty()).then(|| (k, gaps.iter().sum::<f64>() / gaps.len() as f64))
        })
        .collect()
}

struct Momentum {
    vw: Array2<f64>,
    vb: Array1<f64>,
}

fn sgd(head: &mut Head, vel: &mut Momentum, dw: &Array2<f64>, db: &Array1<f64>, cfg: &ProtocolConfig) {
    vel.vw.zip_mut_with(dw, |v, g| *v = cfg.momentum * *v + g);
    vel.vb.zip_mut_with(db, |v, g| *v = cfg.momentum * *v + g);
    head.weight.scaled_add(-cfg.lr, &vel.vw);
    if head.kind == HeadKind::Linear {
        head.bias.scaled_add(-cfg.lr, &vel.vb);
    }
}

/// Runs the protocol on a class-incremental scenario with a frozen trunk.
///
/// Test samples come from the scenario's clean test set.
pub fn local_spurious_protocol(scenario: &Scenario, trunk: &[Dense], config: &ProtocolConfig) -> Result<GapReport> {
    if config.batch_size == 0 {
        return Err(Error::config("eval.batch_size", "must be at least 1"));
    }
    let mut seen = BTreeSet::new();
    for task in &scenario.tasks {
        if task.classes.is_empty() {
            return Err(Error::invalid(format!("task {} has no classes", task.task_id)));
        }
        for &c in &task.classes {
            if !seen.insert(c) {
                return Err(Error::invalid(format!("class {c} appears in more than one task")));
            }
        }
    }
    if scenario.tasks.is_empty() || scenario.clean_test.is_empty() {
        return Err(Error::invalid("protocol needs at least one task and a test set"));
    }
    let n_classes = seen.iter().max().map_or(0, |m| m + 1).max(scenario.n_classes);
    let z_test = trunk_latents(trunk, to_matrix(&scenario.clean_test)?.view())?;
    let h = z_test.ncols();

    let kinds = [HeadKind::Linear, HeadKind::WeightNorm, HeadKind::MeanLayer];
    let mut heads: Vec<Vec<Head>> = vec![Vec::new(); kinds.len()];
    let mut snapshots: Vec<Vec<Head>> = vec![Vec::new(); kinds.len()];
    for (t, task) in scenario.tasks.iter().enumerate() {
        let mut init_rng = rng_for(config.seed, stream::INIT, 100 + t as u64);
        let z = trunk_latents(trunk, to_matrix(&task.train)?.view())?;
        let global_labels: Vec<usize> = task.train.iter().map(|s| s.y).collect();
        let local: Vec<usize> = global_labels
            .iter()
            .map(|y| {
                task.classes
                    .iter()
                    .position(|c| c == y)
                    .ok_or_else(|| Error::invalid(format!("label {y} outside the classes of task {t}")))
            })
            .collect::<Result<_>>()?;

        let mut trained: Vec<(Head, Momentum)> = [HeadKind::Linear, HeadKind::WeightNorm]
            .into_iter()
            .map(|k| {
                let head = Head::new(k, task.classes.clone(), h, &mut init_rng)?;
                let vel = Momentum { vw: Array2::zeros(head.weight.raw_dim()), vb: Array1::zeros(head.bias.len()) };
                Ok((head, vel))
            })
            .collect::<Result<_>>()?;
        let mut rng = rng_for(config.seed, stream::TRAIN, t as u64);
        let mut order: Vec<usize> = (0..z.nrows()).collect();
        for _ in 0..config.epochs_per_task {
            order.shuffle(&mut rng);
            for batch in order.chunks(config.batch_size) {
                let zb = z.select(ndarray::Axis(0), batch);
                let yb: Vec<usize> = batch.iter().map(|&i| local[i]).collect();
                for (head, vel) in trained.iter_mut() {
                    let logits = head.logits(zb.view())?;
                    let (_, mut d) = per_sample_ce(&logits, &yb, None)?;
                    d /= batch.len() as f64;
                    let (dw, db, _) = head.backward(zb.view(), d.view())?;
                    sgd(head, vel, &dw, &db, config);
                }
            }
        }
        let mut mean = Head::new(HeadKind::MeanLayer, task.classes.clone(), h, &mut init_rng)?;
        mean.meanlayer_fit(z.view(), &global_labels)?;
        let fitted = trained.into_iter().map(|(h, _)| h).chain(std::iter::once(mean));
        for (k, mut head) in fitted.enumerate() {
            head.frozen = true;
            snapshots[k].push(head.clone());
            heads[k].push(head);
        }
    }

    let labels: Vec<usize> = scenario.clean_test.iter().map(|s| s.y).collect();
    let mut out = Vec::with_capacity(kinds.len());
    for (kind, task_heads) in kinds.into_iter().zip(&heads) {
        let mut global = Array2::from_elem((z_test.nrows(), n_classes), f64::NEG_INFINITY);
        for head in task_heads {
            let o = head.logits(z_test.view())?;
            for (k, &c) in head.classes.iter().enumerate() {
                global.column_mut(c).assign(&o.column(k));
            }
        }
        let mut per_task = Vec::with_capacity(task_heads.len());
        for (t, head) in task_heads.iter().enumerate() {
            let mut mask = vec![false; n_classes];
            head.classes.iter().for_each(|&c| mask[c] = true);
            let rows: Vec<usize> = (0..labels.len()).filter(|&i| mask[labels[i]]).collect();
            if rows.is_empty() {
                return Err(Error::invalid(format!("no test samples for the classes of task {t}")));
            }
            let (mut local_hits, mut global_hits) = (0usize, 0usize);
            for &i in &rows {
                let row = global.slice(s![i, ..]);
                local_hits += usize::from(masked_argmax(row.iter().copied(), Some(&mask)) == Some(labels[i]));
                global_hits += usize::from(masked_argmax(row.iter().copied(), None) == Some(labels[i]));
            }
            let n = rows.len() as f64;
            per_task.push(TaskGap { task: t, local: local_hits as f64 / n, global: global_hits as f64 / n });
        }
        let n = per_task.len() as f64;
        let a_local = per_task.iter().map(|t| t.local).sum::<f64>() / n;
        let a_global = per_task.iter().map(|t| t.global).sum::<f64>() / n;
        out.push(HeadGap { kind, a_local, a_global, gap: a_local - a_global, per_task });
    }
    Ok(GapReport {
        seed: config.seed,
        n_tasks: scenario.tasks.len(),
        heads: out,
        frozen_heads_intact: heads == snapshots,
    })
}
