//! Colored-square spurious features on CIFAR-10 images.

use std::collections::BTreeSet;
use std::sync::Arc;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::cifar::{self, Image};
use super::sample::{spurious_feature_id, Rgb, Sample, Scenario, TaskData};
use crate::error::{Error, Result};
use crate::rng::{rng_for, stream, LabRng};

/// Minimum L∞ distance between the two class colors of one task.
pub const WITHIN_TASK_SEPARATION: u8 = 64;
/// Minimum L∞ distance between a class color and that class's earlier colors.
pub const ACROSS_TASK_SEPARATION: u8 = 32;
/// Fraction of every source mode held out for `eval_spurious`.
pub const EVAL_FRACTION: f64 = 0.1;

const BINARY_CLASSES: usize = 2;
const MODES_PER_BINARY_CLASS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpuriousSpec {
    /// Fraction of training images that carry the square.
    pub correlation_p: f64,
    /// Per-task, per-class colors. Drawn from the seed when empty.
    #[serde(default)]
    pub colors: Vec<[Rgb; 2]>,
    #[serde(default = "default_square_size")]
    pub square_size: usize,
    #[serde(default = "default_support")]
    pub support_s: f64,
    pub n_tasks: usize,
    pub seed: u64,
    /// Caps the number of training images per task (uniform subsample).
    #[serde(default)]
    pub max_train_per_task: Option<usize>,
}

fn default_square_size() -> usize {
    2
}

fn default_support() -> f64 {
    1.0
}

impl SpuriousSpec {
    pub fn new(correlation_p: f64, n_tasks: usize, seed: u64) -> Self {
        SpuriousSpec {
            correlation_p,
            colors: Vec::new(),
            square_size: default_square_size(),
            support_s: default_support(),
            n_tasks,
            seed,
            max_train_per_task: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        validate_correlation(self.correlation_p)?;
        support_count(self.support_s, MODES_PER_BINARY_CLASS)?;
        if self.n_tasks == 0 {
            return Err(Error::config("n_tasks", "must be at least 1"));
        }
        if self.square_size == 0 || self.square_size > cifar::IMAGE_SIDE {
            return Err(Error::config("square_size", "must be in 1..=32"));
        }
        if !self.colors.is_empty() {
            if self.colors.len() != self.n_tasks {
                return Err(Error::config(
                    "colors",
                    format!("{} tasks of colors for n_tasks = {}", self.colors.len(), self.n_tasks),
                ));
            }
            for (t, pair) in self.colors.iter().enumerate() {
                if pair[0] == pair[1] {
                    return Err(Error::config(
                        format!("colors[{t}]"),
                        "the two class colors of a task must differ",
                    ));
                }
            }
        }
        Ok(())
    }

    /// The stored colors, or the seeded draw when none are stored.
    pub fn resolved_colors(&self) -> Vec<[Rgb; 2]> {
        if self.colors.is_empty() {
            sample_colors(self.n_tasks, &mut rng_for(self.seed, stream::COLORS, 0))
        } else {
            self.colors.clone()
        }
    }
}

pub(crate) fn validate_correlation(p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::config("correlation_p", format!("{p} is outside [0, 1]")));
    }
    Ok(())
}

/// Number of modes kept per class for support `s`; errors unless `s·modes` is a
/// positive integer.
pub fn support_count(support_s: f64, modes_per_class: usize) -> Result<usize> {
    let k = support_s * modes_per_class as f64;
    let rounded = k.round();
    if !(support_s > 0.0 && support_s <= 1.0) || (k - rounded).abs() > 1e-9 || rounded < 1.0 {
        return Err(Error::config(
            "support_s",
            format!("support {support_s} x {modes_per_class} modes is not a positive integer"),
        ));
    }
    Ok(rounded as usize)
}

/// Draws, independently for each class, a uniform subset of `s·modes_per_class`
/// mode indices (sorted).
pub fn sample_support(
    support_s: f64,
    modes_per_class: usize,
    n_classes: usize,
    rng: &mut LabRng,
) -> Result<Vec<Vec<usize>>> {
    let k = support_count(support_s, modes_per_class)?;
    Ok((0..n_classes)
        .map(|_| {
            let mut picked = index::sample(rng, modes_per_class, k).into_vec();
            picked.sort_unstable();
            picked
        })
        .collect())
}

/// Draws one color pair per task under the separation constraints.
pub fn sample_colors(n_tasks: usize, rng: &mut LabRng) -> Vec<[Rgb; 2]> {
    let mut out: Vec<[Rgb; 2]> = Vec::with_capacity(n_tasks);
    let draw = |rng: &mut LabRng| Rgb([rng.random(), rng.random(), rng.random()]);
    for _ in 0..n_tasks {
        loop {
            let pair = [draw(rng), draw(rng)];
            if pair[0].linf(pair[1]) < WITHIN_TASK_SEPARATION {
                continue;
            }
            let far_from_past = out.iter().all(|past| {
                (0..2).all(|c| past[c].linf(pair[c]) >= ACROSS_TASK_SEPARATION)
            });
            if far_from_past {
                out.push(pair);
                break;
            }
        }
    }
    out
}

/// Overwrites a `size`×`size` square whose top-left corner is `pos`.
pub fn inject_square(image: &Image, color: Rgb, pos: (usize, usize), size: usize) -> Result<Image> {
    let (row, col) = pos;
    if size == 0 || row + size > image.height || col + size > image.width {
        return Err(Error::invalid(format!(
            "{size}x{size} square at ({row}, {col}) does not fit in {}x{}",
            image.height, image.width
        )));
    }
    let mut out = image.clone();
    let rgb = color.0.map(|c| f32::from(c) / 255.0);
    for r in row..row + size {
        for c in col..col + size {
            let i = (r * image.width + c) * 3;
            out.data[i..i + 3].copy_from_slice(&rgb);
        }
    }
    Ok(out)
}

/// Exactly `floor(p·n)` distinct indices, uniform without replacement, sorted.
pub fn spurious_indices(p: f64, n: usize, rng: &mut LabRng) -> BTreeSet<usize> {
    let k = ((p * n as f64).floor() as usize).min(n);
    index::sample(rng, n, k).into_iter().collect()
}

/// Labeled clean CIFAR images split into the training and held-out pools.
#[derive(Debug, Clone)]
pub struct SourcePool {
    pub train: Vec<Sample>,
    pub eval: Vec<Sample>,
    pub height: usize,
    pub width: usize,
}

impl SourcePool {
    /// Binarizes labels and splits each original class 90/10 (seeded).
    pub fn from_records(records: Vec<(u8, Image)>, seed: u64) -> Result<Self> {
        let (height, width) = records
            .first()
            .map(|(_, img)| (img.height, img.width))
            .ok_or_else(|| Error::invalid("empty CIFAR-10 source"))?;
        let mut by_mode: Vec<Vec<Sample>> = vec![Vec::new(); 10];
        for (label, img) in records {
            let mode = usize::from(label);
            by_mode[mode].push(Sample {
                x: Arc::from(img.data),
                y: cifar::binarize_label(mode)?,
                mode_id: mode,
                spurious_present: false,
                spurious_id: None,
                task_id: 0,
            });
        }
        let mut rng = rng_for(seed, stream::SPLIT, 0);
        let mut train = Vec::new();
        let mut eval = Vec::new();
        for mut samples in by_mode {
            samples.shuffle(&mut rng);
            let n_eval = (samples.len() as f64 * EVAL_FRACTION).round() as usize;
            let rest = samples.split_off(n_eval);
            eval.extend(samples);
            train.extend(rest);
        }
        Ok(SourcePool { train, eval, height, width })
    }
}

fn decorate(
    pool: &[Sample],
    allowed: &[BTreeSet<usize>],
    cap: Option<usize>,
    spec: &SpuriousSpec,
    colors: [Rgb; 2],
    task_id: usize,
    (height, width): (usize, usize),
    rng: &mut LabRng,
) -> Result<Vec<Sample>> {
    let mut kept: Vec<&Sample> = pool
        .iter()
        .filter(|s| allowed[s.y].contains(&s.mode_id))
        .collect();
    if let Some(cap) = cap.filter(|&c| c < kept.len()) {
        let mut idx = index::sample(rng, kept.len(), cap).into_vec();
        idx.sort_unstable();
        kept = idx.into_iter().map(|i| kept[i]).collect();
    }
    let marked = spurious_indices(spec.correlation_p, kept.len(), rng);
    kept.into_iter()
        .enumerate()
        .map(|(i, s)| {
            let mut out = Sample { task_id, ..s.clone() };
            if marked.contains(&i) {
                let img = Image::new(height, width, s.x.to_vec())?;
                let pos = (
                    rng.random_range(0..=height - spec.square_size),
                    rng.random_range(0..=width - spec.square_size),
                );
                let injected = inject_square(&img, colors[s.y], pos, spec.square_size)?;
                out.x = Arc::from(injected.data);
                out.spurious_present = true;
                out.spurious_id = Some(spurious_feature_id(task_id, s.y, BINARY_CLASSES));
            }
            Ok(out)
        })
        .collect()
}

/// Builds one SpuriousCIFAR2 task: restrict to the sampled support, then mark
/// exactly `floor(p·n)` images and stamp the class color on each.
pub fn build_task(
    source: &SourcePool,
    spec: &SpuriousSpec,
    colors: [Rgb; 2],
    task_id: usize,
    rng: &mut LabRng,
) -> Result<TaskData> {
    let support = sample_support(spec.support_s, MODES_PER_BINARY_CLASS, BINARY_CLASSES, rng)?;
    let allowed: Vec<BTreeSet<usize>> = support
        .iter()
        .enumerate()
        .map(|(class, picks)| {
            let modes = cifar::modes_of_binary_class(class);
            picks.iter().map(|&i| modes[i]).collect()
        })
        .collect();
    let shape = (source.height, source.width);
    let train = decorate(&source.train, &allowed, spec.max_train_per_task, spec, colors, task_id, shape, rng)?;
    if train.is_empty() {
        return Err(Error::invalid(format!(
            "task {task_id}: no source images in the sampled support"
        )));
    }
    let eval_cap = spec
        .max_train_per_task
        .map(|c| ((c as f64 * EVAL_FRACTION / (1.0 - EVAL_FRACTION)).ceil() as usize).max(1));
    let eval_spurious = decorate(&source.eval, &allowed, eval_cap, spec, colors, task_id, shape, rng)?;
    Ok(TaskData {
        task_id,
        classes: vec![0, 1],
        train,
        eval_spurious,
    })
}

/// A sequence of SpuriousCIFAR2 tasks with fresh colors per task and the
/// binarized test set, square-free, as `clean_test`.
pub fn build_cifar_scenario(
    spec: &SpuriousSpec,
    source: &SourcePool,
    test_records: Vec<(u8, Image)>,
) -> Result<Scenario> {
    use rayon::prelude::*;

    spec.validate()?;
    let colors = spec.resolved_colors();
    let tasks = (0..spec.n_tasks)
        .into_par_iter()
        .map(|t| build_task(source, spec, colors[t], t, &mut rng_for(spec.seed, stream::TASK, t as u64)))
        .collect::<Result<Vec<_>>>()?;
    let clean_test = test_records
        .into_iter()
        .map(|(label, img)| {
            let mode = usize::from(label);
            Ok(Sample {
                x: Arc::from(img.data),
                y: cifar::binarize_label(mode)?,
                mode_id: mode,
                spurious_present: false,
                spurious_id: None,
                task_id: 0,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Scenario {
        tasks,
        clean_test,
        n_classes: BINARY_CLASSES,
        input_dim: source.height * source.width * 3,
        image_shape: Some((source.height, source.width)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn gray(side: usize) -> Image {
        Image::new(side, side, vec![0.5; side * side * 3]).unwrap()
    }

    #[test]
    fn square_at_origin() {
        let img = gray(32);
        let out = inject_square(&img, Rgb([255, 0, 0]), (0, 0), 2).unwrap();
        for (r, c) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            assert_eq!(out.pixel(r, c), [1.0, 0.0, 0.0]);
        }
        assert_eq!(out.pixel(2, 2), [0.5, 0.5, 0.5]);
    }

    #[test]
    fn square_changes_exactly_four_pixels() {
        let img = gray(32);
        let out = inject_square(&img, Rgb([0, 255, 10]), (13, 30), 2).unwrap();
        let changed = (0..32)
            .flat_map(|r| (0..32).map(move |c| (r, c)))
            .filter(|&(r, c)| img.pixel(r, c) != out.pixel(r, c))
            .count();
        assert_eq!(changed, 4);
    }

    #[test]
    fn square_overflow_rejected() {
        assert!(inject_square(&gray(32), Rgb([1, 2, 3]), (31, 31), 2).is_err());
        assert!(inject_square(&gray(32), Rgb([1, 2, 3]), (30, 30), 2).is_ok());
    }

    #[test]
    fn support_sizes() {
        let mut rng = LabRng::seed_from_u64(1);
        let s = sample_support(0.2, 5, 2, &mut rng).unwrap();
        assert!(s.iter().all(|c| c.len() == 1));
        let s = sample_support(1.0, 5, 2, &mut rng).unwrap();
        assert_eq!(s, vec![vec![0, 1, 2, 3, 4]; 2]);
        assert!(sample_support(0.3, 5, 2, &mut rng).is_err());
        assert!(sample_support(0.0, 5, 2, &mut rng).is_err());
    }

    #[test]
    fn colors_respect_separation() {
        let mut rng = LabRng::seed_from_u64(3);
        let colors = sample_colors(10, &mut rng);
        for (t, pair) in colors.iter().enumerate() {
            assert!(pair[0].linf(pair[1]) >= WITHIN_TASK_SEPARATION);
            for past in &colors[..t] {
                assert!(past[0].linf(pair[0]) >= ACROSS_TASK_SEPARATION);
                assert!(past[1].linf(pair[1]) >= ACROSS_TASK_SEPARATION);
            }
        }
    }

    #[test]
    fn exact_spurious_count() {
        let mut rng = LabRng::seed_from_u64(0);
        assert_eq!(spurious_indices(0.75, 1000, &mut rng).len(), 750);
        assert_eq!(spurious_indices(0.0, 1000, &mut rng).len(), 0);
        assert_eq!(spurious_indices(1.0, 37, &mut rng).len(), 37);
    }
}
