//! Feature taxonomy: good, spurious, local and local spurious features.
//!
//! A feature is a binary predicate over samples. Its association with a class
//! is the phi coefficient between the predicate indicator and the class
//! indicator, and a feature is discriminative for `y` when that correlation
//! beats every other class's by at least `tau`.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::Sample;

/// Default margin realizing "correlates significantly more".
pub const DEFAULT_TAU: f64 = 0.2;

pub struct FeaturePredicate {
    pub id: u32,
    pub name: String,
    w: Box<dyn Fn(&Sample) -> bool + Send + Sync>,
}

impl FeaturePredicate {
    pub fn new(
        id: u32,
        name: impl Into<String>,
        w: impl Fn(&Sample) -> bool + Send + Sync + 'static,
    ) -> Self {
        FeaturePredicate { id, name: name.into(), w: Box::new(w) }
    }

    pub fn eval(&self, sample: &Sample) -> bool {
        (self.w)(sample)
    }

    /// Ground truth for generated data: the spurious feature `spurious_id`
    /// (one task's square color or pattern for one class) is present.
    pub fn injected(spurious_id: u32) -> Self {
        Self::new(spurious_id, format!("injected#{spurious_id}"), move |s| {
            s.spurious_present && s.spurious_id == Some(spurious_id)
        })
    }

    /// `x[dim] > threshold`.
    pub fn threshold(id: u32, dim: usize, threshold: f32) -> Self {
        Self::new(id, format!("x[{dim}]>{threshold}"), move |s| s.x[dim] > threshold)
    }
}

impl fmt::Debug for FeaturePredicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FeaturePredicate")
            .field("id", &self.id)
            .field("name", &self.name)
            .finish()
    }
}

/// Phi coefficient of `1[w(x)=1]` against `1[label=y]`; 0 when either
/// indicator is constant.
pub fn correlation(dataset: &[Sample], predicate: &FeaturePredicate, y: usize) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::invalid("correlation over an empty dataset"));
    }
    let indicators = dataset.iter().map(|s| (predicate.eval(s), s.y == y));
    Ok(phi(indicators))
}

fn phi(pairs: impl Iterator<Item = (bool, bool)>) -> f64 {
    // 2x2 contingency: n[w][c]
    let mut n = [[0f64; 2]; 2];
    for (w, c) in pairs {
        n[usize::from(w)][usize::from(c)] += 1.0;
    }
    let w1 = n[1][0] + n[1][1];
    let w0 = n[0][0] + n[0][1];
    let c1 = n[0][1] + n[1][1];
    let c0 = n[0][0] + n[1][0];
    let denom = (w1 * w0 * c1 * c0).sqrt();
    if denom == 0.0 {
        return 0.0;
    }
    ((n[1][1] * n[0][0] - n[1][0] * n[0][1]) / denom).clamp(-1.0, 1.0)
}

fn classes_of(dataset: &[Sample]) -> BTreeSet<usize> {
    dataset.iter().map(|s| s.y).collect()
}

/// Per-class correlations for every class present in `dataset`.
pub fn class_correlations(dataset: &[Sample], predicate: &FeaturePredicate) -> Result<Vec<(usize, f64)>> {
    classes_of(dataset)
        .into_iter()
        .map(|c| Ok((c, correlation(dataset, predicate, c)?)))
        .collect()
}

/// True iff `c(y) >= c(y') + tau` for every other class `y'` of the dataset.
pub fn is_discriminative(dataset: &[Sample], predicate: &FeaturePredicate, y: usize, tau: f64) -> Result<bool> {
    if !(tau > 0.0) {
        return Err(Error::invalid(format!("margin tau must be positive, got {tau}")));
    }
    let classes = classes_of(dataset);
    if !classes.contains(&y) {
        return Err(Error::invalid(format!("class {y} is absent from the dataset")));
    }
    if classes.len() < 2 {
        return Err(Error::invalid("discriminativeness needs at least two classes"));
    }
    let own = correlation(dataset, predicate, y)?;
    for other in classes.into_iter().filter(|&c| c != y) {
        if own < correlation(dataset, predicate, other)? + tau {
            return Ok(false);
        }
    }
    Ok(true)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureKind {
    Good,
    Spurious,
    Local,
    LocalSpurious,
    /// Not discriminative even within its own task.
    NonDiscriminative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureReport {
    pub feature_id: u32,
    pub name: String,
    pub class: usize,
    pub task: usize,
    /// `(class, correlation)` on the task's training data.
    pub task_correlations: Vec<(usize, f64)>,
    /// Same over the training data of the whole scenario. Empty when skipped.
    pub scenario_correlations: Vec<(usize, f64)>,
    /// Same over the clean test set. Empty when skipped.
    pub test_correlations: Vec<(usize, f64)>,
    pub kind: FeatureKind,
    pub margin_tau: f64,
}

/// Inputs of one classification.
pub struct FeatureContext<'a> {
    pub task_train: &'a [Sample],
    pub task_id: usize,
    pub scenario_train: &'a [Sample],
    pub clean_test: &'a [Sample],
    pub tau: f64,
    /// Skip the scenario and test checks; features discriminative on their
    /// task are then reported as `Local`.
    pub task_only: bool,
}

/// Classifies a feature of class `y` from its behavior on the task, the whole
/// scenario and the clean test set.
pub fn classify_feature(predicate: &FeaturePredicate, y: usize, ctx: &FeatureContext<'_>) -> Result<FeatureReport> {
    for (name, data) in [
        ("task", ctx.task_train),
        ("scenario", ctx.scenario_train),
        ("test", ctx.clean_test),
    ] {
        if data.is_empty() {
            return Err(Error::invalid(format!("{name} dataset is empty")));
        }
    }
    let on_task = is_discriminative(ctx.task_train, predicate, y, ctx.tau)?;
    let mut report = FeatureReport {
        feature_id: predicate.id,
        name: predicate.name.clone(),
        class: y,
        task: ctx.task_id,
        task_correlations: class_correlations(ctx.task_train, predicate)?,
        scenario_correlations: Vec::new(),
        test_correlations: Vec::new(),
        kind: FeatureKind::NonDiscriminative,
        margin_tau: ctx.tau,
    };
    if !on_task {
        return Ok(report);
    }
    if ctx.task_only {
        report.kind = FeatureKind::Local;
        return Ok(report);
    }
    report.scenario_correlations = class_correlations(ctx.scenario_train, predicate)?;
    report.test_correlations = class_correlations(ctx.clean_test, predicate)?;
    let on_scenario = is_discriminative(ctx.scenario_train, predicate, y, ctx.tau)?;
    let on_test = is_discriminative(ctx.clean_test, predicate, y, ctx.tau)?;
    report.kind = match (on_scenario, on_test) {
        (true, true) => FeatureKind::Good,
        (true, false) => FeatureKind::Spurious,
        (false, _) => FeatureKind::LocalSpurious,
    };
    Ok(report)
}
