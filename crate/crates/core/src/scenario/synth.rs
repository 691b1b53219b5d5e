//! Gaussian-mode analog of SpuriousCIFAR2.
//!
//! Every class owns `modes_per_class` Gaussian modes (the content feature).
//! Spurious samples additionally carry a task-and-class-specific pattern added
//! on a block of coordinates, so the pattern is generated from the task while
//! the content is generated from the label.


use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::sample::{spurious_feature_id, Sample, Scenario, TaskData};
use super::spurious::{sample_support, spurious_indices, support_count, validate_correlation};
use crate::error::{Error, Result};
use crate::rng::{rng_for, stream, LabRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub dim: usize,
    pub n_classes: usize,
    pub modes_per_class: usize,
    /// Mode means are `mode_scale · N(0, I)`, drawn once per seed.
    pub mode_scale: f64,
    pub mode_std: f64,
    /// Half-open coordinate range carrying the spurious pattern.
    pub spurious_block: (usize, usize),
    /// L2 norm of each spurious pattern.
    pub pattern_magnitude: f64,
    pub n_train: usize,
    pub n_eval: usize,
    pub n_test: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            dim: 20,
            n_classes: 2,
            modes_per_class: 5,
            mode_scale: 0.5,
            mode_std: 1.0,
            spurious_block: (0, 4),
            pattern_magnitude: 4.0,
            n_train: 1000,
            n_eval: 200,
            n_test: 2000,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.spurious_block;
        if self.dim == 0 {
            return Err(Error::config("synth.dim", "must be positive"));
        }
        if lo >= hi || hi > self.dim {
            return Err(Error::config(
                "synth.spurious_block",
                format!("[{lo}, {hi}) is not a non-empty range inside 0..{}", self.dim),
            ));
        }
        if self.n_classes < 2 {
            return Err(Error::config("synth.n_classes", "need at least two classes"));
        }
        if self.modes_per_class == 0 {
            return Err(Error::config("synth.modes_per_class", "must be positive"));
        }
        if !(self.mode_std >= 0.0) {
            return Err(Error::config("synth.mode_std", "must be non-negative"));
        }
        if self.n_train == 0 {
            return Err(Error::config("synth.n_train", "must be positive"));
        }
        Ok(())
    }
}

/// Scenario-level settings shared by synthetic scenarios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthScenarioSpec {
    pub correlation_p: f64,
    #[serde(default = "one")]
    pub support_s: f64,
    pub n_tasks: usize,
    pub seed: u64,
    #[serde(default)]
    pub synth: SynthSpec,
}

fn one() -> f64 {
    1.0
}

impl SynthScenarioSpec {
    pub fn new(correlation_p: f64, n_tasks: usize, seed: u64) -> Self {
        SynthScenarioSpec {
            correlation_p,
            support_s: 1.0,
            n_tasks,
            seed,
            synth: SynthSpec::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        validate_correlation(self.correlation_p)?;
        support_count(self.support_s, self.synth.modes_per_class)?;
        if self.n_tasks == 0 {
            return Err(Error::config("n_tasks", "must be at least 1"));
        }
        self.synth.validate()
    }
}

/// Mode means and spurious patterns for one seed.
#[derive(Debug, Clone)]
pub struct SynthGenerator {
    pub spec: SynthSpec,
    /// `mode_means[class][mode]`, each of length `dim`.
    pub mode_means: Vec<Vec<Vec<f64>>>,
    /// `patterns[task][class]`, each of length `spurious_block.1 - spurious_block.0`.
    pub patterns: Vec<Vec<Vec<f64>>>,
}

impl SynthGenerator {
    pub fn new(spec: SynthSpec, seed: u64, n_tasks: usize) -> Result<Self> {
        spec.validate()?;
        let mut rng = rng_for(seed, stream::MODES, 0);
        let mode_means = (0..spec.n_classes)
            .map(|_| {
                (0..spec.modes_per_class)
                    .map(|_| gaussian_vec(spec.dim, &mut rng, spec.mode_scale))
                    .collect()
            })
            .collect();
        let block = spec.spurious_block.1 - spec.spurious_block.0;
        let patterns = (0..n_tasks)
            .map(|t| {
                (0..spec.n_classes)
                    .map(|c| {
                        let idx = (t * spec.n_classes + c) as u64;
                        let mut rng = rng_for(seed, stream::PATTERNS, idx);
                        let v = gaussian_vec(block, &mut rng, 1.0);
                        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
                        v.into_iter().map(|a| a * spec.pattern_magnitude / norm).collect()
                    })
                    .collect()
            })
            .collect();
        Ok(SynthGenerator { spec, mode_means, patterns })
    }

    /// One sample of class `y`: a uniformly chosen supported mode plus
    /// isotropic noise, plus the task's pattern for `y` when `spurious`.
    pub fn sample(
        &self,
        y: usize,
        task_id: usize,
        spurious: bool,
        support: &[usize],
        rng: &mut LabRng,
    ) -> Result<Sample> {
        if y >= self.spec.n_classes {
            return Err(Error::invalid(format!("class {y} >= {}", self.spec.n_classes)));
        }
        if support.is_empty() {
            return Err(Error::invalid("empty mode support"));
        }
        let mode = support[rng.random_range(0..support.len())];
        let mean = self
            .mode_means[y]
            .get(mode)
            .ok_or_else(|| Error::invalid(format!("mode {mode} out of range")))?;
        let mut x: Vec<f64> = mean
            .iter()
            .map(|&m| {
                let z: f64 = StandardNormal.sample(rng);
                m + self.spec.mode_std * z
            })
            .collect();
        if spurious {
            let pattern = self
                .patterns
                .get(task_id)
                .ok_or_else(|| Error::invalid(format!("no spurious pattern for task {task_id}")))?;
            let (lo, _) = self.spec.spurious_block;
            for (k, v) in pattern[y].iter().enumerate() {
                x[lo + k] += v;
            }
        }
        Ok(Sample {
            x: x.into_iter().map(|v| v as f32).collect::<Vec<_>>().into(),
            y,
            mode_id: y * self.spec.modes_per_class + mode,
            spurious_present: spurious,
            spurious_id: spurious.then(|| spurious_feature_id(task_id, y, self.spec.n_classes)),
            task_id,
        })
    }

    /// `n` class-balanced samples (labels cycle through `classes`), with exactly
    /// `floor(p·n)` of them spurious.
    fn batch(
        &self,
        n: usize,
        classes: &[usize],
        p: f64,
        task_id: usize,
        support: &[Vec<usize>],
        rng: &mut LabRng,
    ) -> Result<Vec<Sample>> {
        let marked = spurious_indices(p, n, rng);
        (0..n)
            .map(|i| {
                let y = classes[i % classes.len()];
                self.sample(y, task_id, marked.contains(&i), &support[y], rng)
            })
            .collect()
    }

    fn full_support(&self) -> Vec<Vec<usize>> {
        vec![(0..self.spec.modes_per_class).collect(); self.spec.n_classes]
    }

    fn clean_test(&self, classes: &[usize], seed: u64) -> Result<Vec<Sample>> {
        let mut rng = rng_for(seed, stream::TEST, 0);
        self.batch(self.spec.n_test, classes, 0.0, 0, &self.full_support(), &mut rng)
    }
}

fn gaussian_vec(n: usize, rng: &mut LabRng, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            scale * z
        })
        .collect()
}

/// Convenience wrapper over [`SynthGenerator::sample`].
pub fn synth_sample(
    generator: &SynthGenerator,
    y: usize,
    task_id: usize,
    spurious: bool,
    rng: &mut LabRng,
) -> Result<Sample> {
    let support: Vec<usize> = (0..generator.spec.modes_per_class).collect();
    generator.sample(y, task_id, spurious, &support, rng)
}

/// Domain-incremental synthetic scenario: every task holds all classes, the
/// spurious patterns change from task to task.
pub fn build_synth_scenario(spec: &SynthScenarioSpec) -> Result<Scenario> {
    use rayon::prelude::*;

    spec.validate()?;
    let gen = SynthGenerator::new(spec.synth.clone(), spec.seed, spec.n_tasks)?;
    let classes: Vec<usize> = (0..gen.spec.n_classes).collect();
    let tasks = (0..spec.n_tasks)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng_for(spec.seed, stream::TASK, t as u64);
            let support = sample_support(spec.support_s, gen.spec.modes_per_class, gen.spec.n_classes, &mut rng)?;
            let train = gen.batch(gen.spec.n_train, &classes, spec.correlation_p, t, &support, &mut rng)?;
            let eval_spurious = gen.batch(gen.spec.n_eval, &classes, spec.correlation_p, t, &support, &mut rng)?;
            Ok(TaskData {
                task_id: t,
                classes: classes.clone(),
                train,
                eval_spurious,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Scenario {
        tasks,
        clean_test: gen.clean_test(&classes, spec.seed)?,
        n_classes: gen.spec.n_classes,
        input_dim: gen.spec.dim,
        image_shape: None,
    })
}

/// Class-incremental synthetic scenario: task `t` holds classes
/// `t·k .. (t+1)·k`. Samples carry no spurious pattern; `eval_spurious` holds
/// clean held-out samples of the task's classes.
pub fn build_class_incremental_synth(
    synth: &SynthSpec,
    classes_per_task: usize,
    seed: u64,
) -> Result<Scenario> {
    if classes_per_task == 0 || synth.n_classes % classes_per_task != 0 {
        return Err(Error::config(
            "classes_per_task",
            format!("{classes_per_task} does not divide {} classes", synth.n_classes),
        ));
    }
    let n_tasks = synth.n_classes / classes_per_task;
    let gen = SynthGenerator::new(synth.clone(), seed, n_tasks)?;
    let support = gen.full_support();
    let tasks = (0..n_tasks)
        .map(|t| {
            let classes: Vec<usize> = (t * classes_per_task..(t + 1) * classes_per_task).collect();
            let mut rng = rng_for(seed, stream::TASK, t as u64);
            let train = gen.batch(synth.n_train, &classes, 0.0, t, &support, &mut rng)?;
            let eval_spurious = gen.batch(synth.n_eval, &classes, 0.0, t, &support, &mut rng)?;
            Ok(TaskData { task_id: t, classes, train, eval_spurious })
        })
        .collect::<Result<Vec<_>>>()?;
    let all: Vec<usize> = (0..synth.n_classes).collect();
    Ok(Scenario {
        tasks,
        clean_test: gen.clean_test(&all, seed)?,
        n_classes: synth.n_classes,
        input_dim: synth.dim,
        image_shape: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn gen() -> SynthGenerator {
        SynthGenerator::new(SynthSpec::default(), 11, 3).unwrap()
    }

    #[test]
    fn zero_noise_hits_mode_mean() {
        let mut spec = SynthSpec::default();
        spec.mode_std = 0.0;
        let g = SynthGenerator::new(spec, 5, 1).unwrap();
        let mut rng = LabRng::seed_from_u64(0);
        let s = g.sample(1, 0, false, &[3], &mut rng).unwrap();
        let mean: Vec<f32> = g.mode_means[1][3].iter().map(|&v| v as f32).collect();
        assert_eq!(&s.x[..], &mean[..]);
        assert_eq!(s.mode_id, 8);
        assert!(!s.spurious_present);
    }

    #[test]
    fn pattern_shifts_block() {
        let mut spec = SynthSpec::default();
        spec.mode_std = 0.0;
        spec.spurious_block = (0, 2);
        let mut g = SynthGenerator::new(spec, 5, 1).unwrap();
        g.patterns[0][0] = vec![5.0, 5.0];
        let clean = g.sample(0, 0, false, &[0], &mut LabRng::seed_from_u64(1)).unwrap();
        let dirty = g.sample(0, 0, true, &[0], &mut LabRng::seed_from_u64(1)).unwrap();
        let mean = &g.mode_means[0][0];
        assert_eq!(dirty.x[0], (mean[0] + 5.0) as f32);
        assert_eq!(dirty.x[1], (mean[1] + 5.0) as f32);
        assert_eq!(dirty.x[2..], clean.x[2..]);
        assert_eq!(dirty.spurious_id, Some(0));
    }

    #[test]
    fn seeded_sample_repeats() {
        let g = gen();
        let a = synth_sample(&g, 1, 2, true, &mut LabRng::seed_from_u64(9)).unwrap();
        let b = synth_sample(&g, 1, 2, true, &mut LabRng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn pattern_norm() {
        let g = gen();
        for task in &g.patterns {
            for p in task {
                let n = p.iter().map(|v| v * v).sum::<f64>().sqrt();
                assert!((n - 4.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn scenario_counts() {
        let mut spec = SynthScenarioSpec::new(0.75, 3, 4);
        spec.synth.n_train = 1000;
        let sc = build_synth_scenario(&spec).unwrap();
        for (t, task) in sc.tasks.iter().enumerate() {
            assert_eq!(task.task_id, t);
            assert_eq!(task.train.iter().filter(|s| s.spurious_present).count(), 750);
            assert_eq!(task.train.iter().filter(|s| s.y == 1).count(), 500);
        }
        assert!(sc.clean_test.iter().all(|s| !s.spurious_present));
    }

    #[test]
    fn class_incremental_layout() {
        let mut synth = SynthSpec::default();
        synth.n_classes = 10;
        synth.n_train = 100;
        let sc = build_class_incremental_synth(&synth, 2, 1).unwrap();
        assert_eq!(sc.n_tasks(), 5);
        for (t, task) in sc.tasks.iter().enumerate() {
            assert_eq!(task.classes, vec![2 * t, 2 * t + 1]);
            assert!(task.train.iter().all(|s| task.classes.contains(&s.y)));
        }
        assert!(build_class_incremental_synth(&synth, 3, 1).is_err());
    }
}
