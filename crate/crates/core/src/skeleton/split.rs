//! Group-atomic train/test partitioning by subject or camera.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{LabeledSample, SkeletonError, SkeletonSequence};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    CrossSubject,
    CrossView,
}

impl std::str::FromStr for SplitMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cross_subject" | "cross-subject" => Ok(Self::CrossSubject),
            "cross_view" | "cross-view" => Ok(Self::CrossView),
            _ => Err(format!("unknown split mode '{s}' (cross_subject | cross_view)")),
        }
    }
}

/// Anything that records who performed it and which camera saw it.
pub trait Provenance {
    fn subject_id(&self) -> u32;
    fn camera_id(&self) -> u32;

    fn group(&self, mode: SplitMode) -> u32 {
        match mode {
            SplitMode::CrossSubject => self.subject_id(),
            SplitMode::CrossView => self.camera_id(),
        }
    }
}

impl Provenance for SkeletonSequence {
    fn subject_id(&self) -> u32 {
        self.subject_id
    }
    fn camera_id(&self) -> u32 {
        self.camera_id
    }
}

impl Provenance for LabeledSample {
    fn subject_id(&self) -> u32 {
        self.subject_id
    }
    fn camera_id(&self) -> u32 {
        self.camera_id
    }
}

impl<T: Provenance> Provenance for &T {
    fn subject_id(&self) -> u32 {
        (*self).subject_id()
    }
    fn camera_id(&self) -> u32 {
        (*self).camera_id()
    }
}

/// Item indices on each side, each list in input order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    /// Chooses whole groups for the training side so that its size is as close
    /// as possible to `round(train_fraction * n)` while leaving both sides
    /// nonempty. Group order is shuffled by `seed` before the subset search, so
    /// different seeds pick different (equally good) partitions.
    pub fn compute<T: Provenance>(
        items: &[T],
        mode: SplitMode,
        train_fraction: f64,
        seed: u64,
    ) -> Result<Self, SkeletonError> {
        if !(train_fraction > 0.0 && train_fraction < 1.0) {
            return Err(SkeletonError::SplitImpossible(format!(
                "train fraction must lie in (0, 1), got {train_fraction}"
            )));
        }
        let mut groups: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (i, it) in items.iter().enumerate() {
            groups.entry(it.group(mode)).or_default().push(i);
        }
        if groups.len() < 2 {
            return Err(SkeletonError::SplitImpossible(format!(
                "{} distinct {} group(s); at least 2 are required",
                groups.len(),
                match mode {
                    SplitMode::CrossSubject => "subject",
                    SplitMode::CrossView => "camera",
                }
            )));
        }
        let mut order: Vec<Vec<usize>> = groups.into_values().collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

        let n = items.len();
        let target = ((train_fraction * n as f64).round() as usize).clamp(1, n - 1);
        let sizes: Vec<usize> = order.iter().map(Vec::len).collect();
        let chosen = closest_subset(&sizes, target, n);

        let mut train = Vec::new();
        let mut test = Vec::new();
        for (g, members) in order.iter().enumerate() {
            if chosen[g] {
                train.extend(members);
            } else {
                test.extend(members);
            }
        }
        train.sort_unstable();
        test.sort_unstable();
        Ok(Split { train, test })
    }
}

/// Subset of `sizes` whose sum is nearest `target` within `[1, total - 1]`,
/// ties resolved toward the smaller sum.
fn closest_subset(sizes: &[usize], target: usize, total: usize) -> Vec<bool> {
    // reach[g][s]: some subset of the first g groups sums to s
    let mut reach = vec![vec![false; total + 1]; sizes.len() + 1];
    reach[0][0] = true;
    for (g, &sz) in sizes.iter().enumerate() {
        for s in 0..=total {
            reach[g + 1][s] = reach[g][s] || (s >= sz && reach[g][s - sz]);
        }
    }
    let full = &reach[sizes.len()];
    let best = (1..total)
        .filter(|&s| full[s])
        .min_by_key(|&s| (s.abs_diff(target), s))
        .expect("any single group is a valid proper subset");
    let mut chosen = vec![false; sizes.len()];
    let mut s = best;
    for g in (0..sizes.len()).rev() {
        if !reach[g][s] {
            chosen[g] = true;
            s -= sizes[g];
        }
    }
    chosen
}

/// Partitions owned items; see [`Split::compute`].
pub fn split_dataset<T: Provenance>(
    samples: Vec<T>,
    mode: SplitMode,
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<T>, Vec<T>), SkeletonError> {
    let split = Split::compute(&samples, mode, train_fraction, seed)?;
    let mut is_train = vec![false; samples.len()];
    for &i in &split.train {
        is_train[i] = true;
    }
    let (mut train, mut test) = (Vec::with_capacity(split.train.len()), Vec::with_capacity(split.test.len()));
    for (item, t) in samples.into_iter().zip(is_train) {
        if t {
            train.push(item);
        } else {
            test.push(item);
        }
    }
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, Clone, Copy, PartialEq)]
    struct Item(u32, u32);

    impl Provenance for Item {
        fn subject_id(&self) -> u32 {
            self.0
        }
        fn camera_id(&self) -> u32 {
            self.1
        }
    }

    #[test]
    fn two_subjects_one_each_side() {
        let items: Vec<Item> = (0..10).map(|i| Item(if i < 7 { 1 } else { 2 }, 1)).collect();
        for frac in [0.1, 0.5, 0.95] {
            let (tr, te) = split_dataset(items.clone(), SplitMode::CrossSubject, frac, 3).unwrap();
            assert!(!tr.is_empty() && !te.is_empty());
            assert_ne!(tr[0].0, te[0].0);
        }
    }

    #[test]
    fn single_group_is_impossible() {
        let items = vec![Item(1, 1), Item(2, 1)];
        assert!(matches!(
            split_dataset(items, SplitMode::CrossView, 0.8, 0),
            Err(SkeletonError::SplitImpossible(_))
        ));
    }

    #[test]
    fn nearest_reachable_size() {
        // groups of 5, 3, 3: target 8 is reachable only as 5 + 3
        let items: Vec<Item> = [(1, 5), (2, 3), (3, 3)]
            .iter()
            .flat_map(|&(s, n)| std::iter::repeat_n(Item(s, 0), n))
            .collect();
        let split = Split::compute(&items, SplitMode::CrossSubject, 8.0 / 11.0, 9).unwrap();
        assert_eq!(split.train.len(), 8);
        assert_eq!(split.test.len(), 3);
    }

    #[test]
    fn deterministic_per_seed() {
        let items: Vec<Item> = (0..60).map(|i| Item(i % 12, i % 3)).collect();
        let a = Split::compute(&items, SplitMode::CrossSubject, 0.8, 17).unwrap();
        let b = Split::compute(&items, SplitMode::CrossSubject, 0.8, 17).unwrap();
        assert_eq!(a, b);
        let differs = (0..20).any(|s| Split::compute(&items, SplitMode::CrossSubject, 0.8, s).unwrap() != a);
        assert!(differs);
    }
}
