use std::collections::BTreeMap;

use rand::seq::index;

use crate::rng::LabRng;
use crate::scenario::{Sample, TaskData};

/// Default number of stored samples per class.
pub const DEFAULT_PER_CLASS: usize = 100;

/// Class-balanced rehearsal memory. Stored samples keep their `task_id`
/// (task of origin), which doubles as the environment label of OOD losses.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    pub per_class: usize,
    stores: BTreeMap<usize, Vec<Sample>>,
}

fn uniform_subset(items: &[Sample], k: usize, rng: &mut LabRng) -> Vec<Sample> {
    if k >= items.len() {
        return items.to_vec();
    }
    let mut idx = index::sample(rng, items.len(), k).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| items[i].clone()).collect()
}

/// Splits `capacity` over groups as evenly as their sizes allow; earlier
/// groups take the remainder.
fn fair_quotas(sizes: &[usize], capacity: usize) -> Vec<usize> {
    let mut quota = vec![0; sizes.len()];
    let mut left = capacity;
    loop {
        let open: Vec<usize> = (0..sizes.len()).filter(|&g| quota[g] < sizes[g]).collect();
        if left == 0 || open.is_empty() {
            return quota;
        }
        let share = (left / open.len()).max(1);
        for g in open {
            let add = share.min(sizes[g] - quota[g]).min(left);
            quota[g] += add;
            left -= add;
            if left == 0 {
                break;
            }
        }
    }
}

impl ReplayBuffer {
    pub fn new(per_class: usize) -> Self {
        ReplayBuffer { per_class, stores: BTreeMap::new() }
    }

    pub fn len(&self) -> usize {
        self.stores.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn class_len(&self, class: usize) -> usize {
        self.stores.get(&class).map_or(0, Vec::len)
    }

    pub fn classes(&self) -> impl Iterator<Item = usize> + '_ {
        self.stores.keys().copied()
    }

    /// All stored samples, class by class.
    pub fn samples(&self) -> impl Iterator<Item = &Sample> {
        self.stores.values().flatten()
    }

    /// Stores up to `per_class` uniformly chosen samples of every class of the
    /// task. When a class is already stored, old and new samples are pooled and
    /// cut back to `per_class` with an equal share per task of origin.
    pub fn update(&mut self, task: &TaskData, rng: &mut LabRng) {
        let mut by_class: BTreeMap<usize, Vec<Sample>> = BTreeMap::new();
        for s in &task.train {
            by_class.entry(s.y).or_default().push(s.clone());
        }
        for (class, samples) in by_class {
            let fresh = uniform_subset(&samples, self.per_class, rng);
            let store = self.stores.entry(class).or_default();
            if store.is_empty() {
                *store = fresh;
                continue;
            }
            let mut by_task: BTreeMap<usize, Vec<Sample>> = BTreeMap::new();
            for s in store.drain(..).chain(fresh) {
                by_task.entry(s.task_id).or_default().push(s);
            }
            let groups: Vec<Vec<Sample>> = by_task.into_values().collect();
            let sizes: Vec<usize> = groups.iter().map(Vec::len).collect();
            let quotas = fair_quotas(&sizes, self.per_class);
            for (group, q) in groups.iter().zip(quotas) {
                store.extend(uniform_subset(group, q, rng));
            }
        }
    }
}
