use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::metrics::omega;
use crate::error::{Error, Result};

/// Which data an entry was measured on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    CleanTest,
    /// Held-out data of task `t`, spurious features included.
    EvalSpurious(usize),
    Train,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Split::CleanTest => f.write_str("clean_test"),
            Split::EvalSpurious(t) => write!(f, "eval_spurious_{t}"),
            Split::Train => f.write_str("train"),
        }
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "clean_test" => Ok(Split::CleanTest),
            "train" => Ok(Split::Train),
            _ => s
                .strip_prefix("eval_spurious_")
                .and_then(|t| t.parse().ok())
                .map(Split::EvalSpurious)
                .ok_or_else(|| Error::Format(format!("unknown split `{s}`"))),
        }
    }
}

impl Serialize for Split {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Split {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Metric names used by the trainer.
pub mod metric {
    /// Accuracy measured once a task is finished.
    pub const ACCURACY: &str = "accuracy";
    /// Accuracy measured after every epoch (`--per-epoch`).
    pub const EPOCH_ACCURACY: &str = "epoch_accuracy";
    /// Mean training loss of an epoch.
    pub const LOSS: &str = "loss";
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricEntry {
    pub task_idx: usize,
    pub epoch: usize,
    pub split: Split,
    pub metric: String,
    pub value: f64,
}

/// Time-ordered metric log of one run.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub seed: u64,
    /// Snapshot of the configuration that produced the run.
    pub config: serde_json::Value,
    pub entries: Vec<MetricEntry>,
}

impl RunRecord {
    pub fn new(run_id: impl Into<String>, seed: u64, config: serde_json::Value) -> Self {
        RunRecord { run_id: run_id.into(), seed, config, entries: Vec::new() }
    }

    pub fn push(&mut self, task_idx: usize, epoch: usize, split: Split, metric: &str, value: f64) {
        self.entries.push(MetricEntry { task_idx, epoch, split, metric: metric.to_owned(), value });
    }

    pub fn n_tasks(&self) -> usize {
        self.entries.iter().map(|e| e.task_idx + 1).max().unwrap_or(0)
    }

    /// Post-task values of `metric` on `split`, one per task in order.
    pub fn post_task(&self, split: Split, metric: &str) -> Vec<f64> {
        let mut out: Vec<Option<f64>> = vec![None; self.n_tasks()];
        for e in self.entries.iter().filter(|e| e.split == split && e.metric == metric) {
            out[e.task_idx] = Some(e.value);
        }
        out.into_iter().flatten().collect()
    }

    pub fn clean_trace(&self) -> Vec<f64> {
        self.post_task(Split::CleanTest, metric::ACCURACY)
    }

    /// Per-epoch clean-test accuracy across the whole run (empty unless the run
    /// evaluated every epoch).
    pub fn epoch_trace(&self) -> Vec<f64> {
        self.entries
            .iter()
            .filter(|e| e.split == Split::CleanTest && e.metric == metric::EPOCH_ACCURACY)
            .map(|e| e.value)
            .collect()
    }

    pub fn omega(&self) -> Result<f64> {
        omega(&self.clean_trace())
    }

    /// Final value of `metric` on `split`.
    pub fn last(&self, split: Split, metric: &str) -> Option<f64> {
        self.entries
            .iter()
            .rev()
            .find(|e| e.split == split && e.metric == metric)
            .map(|e| e.value)
    }
}

/// Accuracy with and without spurious features after one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverfitRow {
    pub task: usize,
    pub eval_spurious: f64,
    pub clean_test: f64,
}

/// Pairs every task's own `eval_spurious` accuracy with the clean-test
/// accuracy, both measured right after that task.
pub fn overfit_report(record: &RunRecord) -> Result<Vec<OverfitRow>> {
    let clean = record.clean_trace();
    if clean.len() != record.n_tasks() || clean.is_empty() {
        return Err(Error::invalid("run record lacks post-task clean_test accuracy"));
    }
    (0..record.n_tasks())
        .map(|t| {
            let eval = record
                .entries
                .iter()
                .find(|e| e.task_idx == t && e.split == Split::EvalSpurious(t) && e.metric == metric::ACCURACY)
                .ok_or_else(|| Error::invalid(format!("run record lacks eval_spurious_{t} after task {t}")))?;
            Ok(OverfitRow { task: t, eval_spurious: eval.value, clean_test: clean[t] })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_names_round_trip() {
        for s in [Split::CleanTest, Split::Train, Split::EvalSpurious(12)] {
            assert_eq!(s.to_string().parse::<Split>().unwrap(), s);
        }
        assert!("eval_spurious_x".parse::<Split>().is_err());
    }

    #[test]
    fn overfit_pairs_and_missing_split() {
        let mut r = RunRecord::new("r", 0, serde_json::Value::Null);
        r.push(0, 4, Split::CleanTest, metric::ACCURACY, 0.5);
        assert!(overfit_report(&r).is_err());
        r.push(0, 4, Split::EvalSpurious(0), metric::ACCURACY, 0.99);
        let rows = overfit_report(&r).unwrap();
        assert_eq!(rows, vec![OverfitRow { task: 0, eval_spurious: 0.99, clean_test: 0.5 }]);
        assert_eq!(r.omega().unwrap(), 0.5);
    }
}
