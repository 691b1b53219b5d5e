use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::cifar::read_cifar10_file;
use super::sample::Scenario;
use super::spurious::{build_cifar_scenario, SourcePool, SpuriousSpec};
use super::synth::{build_class_incremental_synth, build_synth_scenario, SynthScenarioSpec, SynthSpec};
use crate::error::{Error, Result};

/// SpuriousCIFAR2 built from CIFAR-10 binary batch files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CifarScenarioSpec {
    pub spurious: SpuriousSpec,
    pub train_batches: Vec<PathBuf>,
    pub test_batch: PathBuf,
}

/// Synthetic tasks with disjoint classes and no injected pattern.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassIncrementalSpec {
    pub classes_per_task: usize,
    pub seed: u64,
    #[serde(default = "ten_class_synth")]
    pub synth: SynthSpec,
}

pub fn ten_class_synth() -> SynthSpec {
    SynthSpec { n_classes: 10, ..SynthSpec::default() }
}

/// Everything needed to regenerate a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioSpec {
    Synth(SynthScenarioSpec),
    Cifar10(CifarScenarioSpec),
    ClassIncremental(ClassIncrementalSpec),
}

impl ScenarioSpec {
    pub fn seed(&self) -> u64 {
        match self {
            ScenarioSpec::Synth(s) => s.seed,
            ScenarioSpec::Cifar10(c) => c.spurious.seed,
            ScenarioSpec::ClassIncremental(c) => c.seed,
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        let mut out = self.clone();
        match &mut out {
            ScenarioSpec::Synth(s) => s.seed = seed,
            ScenarioSpec::Cifar10(c) => c.spurious.seed = seed,
            ScenarioSpec::ClassIncremental(c) => c.seed = seed,
        }
        out
    }

    pub fn correlation_p(&self) -> Option<f64> {
        match self {
            ScenarioSpec::Synth(s) => Some(s.correlation_p),
            ScenarioSpec::Cifar10(c) => Some(c.spurious.correlation_p),
            ScenarioSpec::ClassIncremental(_) => None,
        }
    }

    pub fn with_correlation(&self, p: f64) -> Self {
        let mut out = self.clone();
        match &mut out {
            ScenarioSpec::Synth(s) => s.correlation_p = p,
            ScenarioSpec::Cifar10(c) => c.spurious.correlation_p = p,
            ScenarioSpec::ClassIncremental(_) => {}
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ScenarioSpec::Synth(s) => s.validate(),
            ScenarioSpec::Cifar10(c) => {
                if c.train_batches.is_empty() {
                    return Err(Error::config("cifar10.train_batches", "at least one batch file is required"));
                }
                c.spurious.validate()
            }
            ScenarioSpec::ClassIncremental(c) => c.synth.validate(),
        }
    }

    /// Generates the scenario. Relative CIFAR paths resolve against `base`.
    pub fn build(&self, base: Option<&Path>) -> Result<Scenario> {
        self.validate()?;
        match self {
            ScenarioSpec::Synth(s) => build_synth_scenario(s),
            ScenarioSpec::ClassIncremental(c) => build_class_incremental_synth(&c.synth, c.classes_per_task, c.seed),
            ScenarioSpec::Cifar10(c) => {
                let resolve = |p: &Path| match base {
                    Some(b) if p.is_relative() => b.join(p),
                    _ => p.to_path_buf(),
                };
                let mut records = Vec::new();
                for p in &c.train_batches {
                    records.extend(read_cifar10_file(&resolve(p))?);
                }
                let source = SourcePool::from_records(records, c.spurious.seed)?;
                let test = read_cifar10_file(&resolve(&c.test_batch))?;
                build_cifar_scenario(&c.spurious, &source, test)
            }
        }
    }
}
