//! Fixed-length windows cut from variable-length trials, and the seeded
//! job-level train/test split that turns them into a [`ChallengeDataset`].

use std::collections::{BTreeMap, BTreeSet};

use ndarray::{s, Array2, Array3, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset_io::{ChallengeDataset, LabelConvention, RawTrial};
use crate::error::{Error, Result};
use crate::seed;
use crate::taxonomy::{self, N_GPU_SENSORS};

/// Samples in one window (60 s of telemetry).
pub const DEFAULT_WINDOW: usize = 540;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowKind {
    Start,
    Middle,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowPolicy {
    pub kind: WindowKind,
    /// Present exactly when `kind` is `Random`.
    pub seed: Option<u64>,
    pub length: usize,
}

impl WindowPolicy {
    pub fn start(length: usize) -> Self {
        WindowPolicy {
            kind: WindowKind::Start,
            seed: None,
            length,
        }
    }

    pub fn middle(length: usize) -> Self {
        WindowPolicy {
            kind: WindowKind::Middle,
            seed: None,
            length,
        }
    }

    pub fn random(seed: u64, length: usize) -> Self {
        WindowPolicy {
            kind: WindowKind::Random,
            seed: Some(seed),
            length,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.length == 0 {
            return Err(Error::InvalidArgument("window length must be >= 1".into()));
        }
        if (self.kind == WindowKind::Random) != self.seed.is_some() {
            return Err(Error::InvalidArgument(
                "a seed is required for, and only for, the random policy".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowedTrial {
    /// `length × sensors` contiguous slice of the parent series.
    pub data: Array2<f64>,
    pub label: Option<usize>,
    pub source_offset: usize,
}

/// Keeps the trials with at least `length` samples, in order.
pub fn filter_min_length(trials: Vec<RawTrial>, length: usize) -> Vec<RawTrial> {
    trials
        .into_iter()
        .filter(|t| t.n_samples() >= length)
        .collect()
}

/// Start row of the window `policy` selects from `trial`.
pub fn window_offset(trial: &RawTrial, policy: &WindowPolicy) -> Result<usize> {
    policy.validate()?;
    let n = trial.n_samples();
    if n < policy.length {
        return Err(Error::TooShort {
            n_samples: n,
            length: policy.length,
        });
    }
    let slack = n - policy.length;
    Ok(match policy.kind {
        WindowKind::Start => 0,
        WindowKind::Middle => slack / 2,
        WindowKind::Random => {
            let s = seed::derive(policy.seed.unwrap_or_default(), &trial.trial_key());
            seed::rng(s).random_range(0..=slack)
        }
    })
}

pub fn extract_window(trial: &RawTrial, policy: &WindowPolicy) -> Result<WindowedTrial> {
    let offset = window_offset(trial, policy)?;
    Ok(WindowedTrial {
        data: trial
            .series
            .slice(s![offset..offset + policy.length, ..])
            .to_owned(),
        label: trial.label,
        source_offset: offset,
    })
}

/// Number of training jobs per class: proportional to `ratio`, summing to
/// `round(ratio · jobs)` by largest remainder, at least one job per side.
fn allocate_train(counts: &[usize], ratio: f64) -> Vec<usize> {
    let total: usize = counts.iter().sum();
    let target = (ratio * total as f64).round() as usize;
    let quotas: Vec<f64> = counts.iter().map(|&c| ratio * c as f64).collect();
    let mut alloc: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (quotas[a] - quotas[a].floor(), quotas[b] - quotas[b].floor());
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let assigned: usize = alloc.iter().sum();
    for &c in order.iter().take(target.saturating_sub(assigned)) {
        alloc[c] += 1;
    }
    for (a, &c) in alloc.iter_mut().zip(counts) {
        *a = (*a).clamp(1, c - 1);
    }
    alloc
}

/// Splits trials 80/20 (or `split_ratio`) at the job level, stratified by
/// class, and cuts one window per trial.
///
/// Jobs are shuffled within each class by a generator derived from
/// `split_seed`, so every trial of a job lands on the same side. Labels are
/// remapped to `0..k` in taxonomy order.
pub fn build_challenge_dataset(
    trials: &[RawTrial],
    policy: &WindowPolicy,
    split_ratio: f64,
    split_seed: u64,
) -> Result<ChallengeDataset> {
    policy.validate()?;
    if !(split_ratio > 0.0 && split_ratio < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "split ratio {split_ratio} must lie in (0, 1)"
        )));
    }
    let mut job_label: BTreeMap<&str, usize> = BTreeMap::new();
    for t in trials {
        if t.series.ncols() != N_GPU_SENSORS {
            return Err(Error::ShapeMismatch(format!(
                "trial {} has {} sensors",
                t.trial_key(),
                t.series.ncols()
            )));
        }
        if t.n_samples() < policy.length {
            return Err(Error::TooShort {
                n_samples: t.n_samples(),
                length: policy.length,
            });
        }
        let Some(label) = t.label else {
            log::warn!("skipping unlabelled trial {}", t.trial_key());
            continue;
        };
        match job_label.insert(&t.job_id, label) {
            Some(prev) if prev != label => {
                return Err(Error::InvalidArgument(format!(
                    "job {} carries labels {prev} and {label}",
                    t.job_id
                )))
            }
            _ => {}
        }
    }

    let used: BTreeSet<usize> = job_label.values().copied().collect();
    let remap: BTreeMap<usize, usize> = used.iter().enumerate().map(|(i, &l)| (l, i)).collect();
    let mut jobs_by_class: Vec<Vec<&str>> = vec![Vec::new(); used.len()];
    for (&job, &label) in &job_label {
        jobs_by_class[remap[&label]].push(job);
    }
    let counts: Vec<usize> = jobs_by_class.iter().map(Vec::len).collect();
    if let Some(c) = counts.iter().position(|&n| n < 2) {
        return Err(Error::TooFewTrials(format!(
            "class {} has {} job(s); both splits need one",
            class_name(*used.iter().nth(c).unwrap_or(&0)),
            counts[c]
        )));
    }
    let alloc = allocate_train(&counts, split_ratio);
    let mut train_jobs: BTreeSet<&str> = BTreeSet::new();
    for (c, jobs) in jobs_by_class.iter_mut().enumerate() {
        let mut rng = seed::rng(seed::derive_index(split_seed, "split/class", c as u64));
        jobs.shuffle(&mut rng);
        train_jobs.extend(jobs.iter().take(alloc[c]));
    }

    let labelled: Vec<&RawTrial> = trials.iter().filter(|t| t.label.is_some()).collect();
    let windows: Vec<WindowedTrial> = labelled
        .par_iter()
        .map(|t| extract_window(t, policy))
        .collect::<Result<_>>()?;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (t, w) in labelled.iter().zip(windows) {
        let y = remap[&t.label.expect("filtered")];
        if train_jobs.contains(t.job_id.as_str()) {
            train.push((w.data, y));
        } else {
            test.push((w.data, y));
        }
    }
    let stack = |items: Vec<(Array2<f64>, usize)>| -> (Array3<f64>, Vec<usize>) {
        let mut x = Array3::zeros((items.len(), policy.length, N_GPU_SENSORS));
        let mut y = Vec::with_capacity(items.len());
        for (i, (w, label)) in items.into_iter().enumerate() {
            x.index_axis_mut(Axis(0), i).assign(&w);
            y.push(label);
        }
        (x, y)
    };
    let (x_train, y_train) = stack(train);
    let (x_test, y_test) = stack(test);
    let dataset = ChallengeDataset {
        x_train,
        y_train,
        x_test,
        y_test,
        class_names: used.iter().map(|&l| class_name(l)).collect(),
        label_convention: LabelConvention::ZeroBased,
    };
    dataset.validate()?;
    Ok(dataset)
}

fn class_name(label: usize) -> String {
    taxonomy::CLASSES
        .get(label)
        .map_or_else(|| format!("class_{label}"), |c| c.name.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset_io::SensorKind;

    fn trial(job: &str, gpu: u32, n: usize, label: usize) -> RawTrial {
        RawTrial {
            job_id: job.to_string(),
            node: "n1".into(),
            gpu_index: Some(gpu),
            label: Some(label),
            sensor_kind: SensorKind::Gpu,
            timestamps: (0..n).map(|i| i as f64).collect(),
            series: Array2::from_shape_fn((n, 7), |(i, j)| (i * 7 + j) as f64),
        }
    }

    #[test]
    fn filter_keeps_boundary_length() {
        let trials = vec![trial("a", 0, 539, 0), trial("b", 0, 540, 0), trial("c", 0, 541, 0)];
        let kept = filter_min_length(trials, 540);
        let lens: Vec<_> = kept.iter().map(|t| t.n_samples()).collect();
        assert_eq!(lens, vec![540, 541]);
        assert!(filter_min_length(vec![], 540).is_empty());
    }

    #[test]
    fn filter_matches_linear_scan() {
        let lens = [10usize, 600, 540, 1, 900, 539, 541, 540];
        let trials: Vec<_> = lens
            .iter()
            .enumerate()
            .map(|(i, &n)| trial(&format!("j{i}"), 0, n, 0))
            .collect();
        let mut expected = 0;
        for &n in &lens {
            if n >= 540 {
                expected += 1;
            }
        }
        assert_eq!(filter_min_length(trials, 540).len(), expected);
    }

    #[test]
    fn offsets_per_policy() {
        let exact = trial("a", 0, 540, 0);
        for p in [WindowPolicy::start(540), WindowPolicy::middle(540), WindowPolicy::random(3, 540)] {
            let w = extract_window(&exact, &p).unwrap();
            assert_eq!(w.source_offset, 0);
            assert_eq!(w.data, exact.series);
        }
        let long = trial("b", 0, 1000, 0);
        // floor((1000 - 540) / 2)
        assert_eq!(window_offset(&long, &WindowPolicy::middle(540)).unwrap(), 230);
        assert!(matches!(
            extract_window(&trial("c", 0, 10, 0), &WindowPolicy::start(540)),
            Err(Error::TooShort { n_samples: 10, length: 540 })
        ));
    }

    #[test]
    fn windows_are_contiguous_slices() {
        let t = trial("a", 0, 1234, 0);
        for p in [WindowPolicy::middle(100), WindowPolicy::random(11, 100)] {
            let w = extract_window(&t, &p).unwrap();
            for i in 0..100 {
                assert_eq!(w.data.row(i), t.series.row(w.source_offset + i));
            }
        }
    }

    #[test]
    fn random_offsets_differ_across_seeds() {
        let t = trial("job", 0, 5000, 0);
        let offsets: BTreeSet<usize> = (1..=5)
            .map(|s| window_offset(&t, &WindowPolicy::random(s, 540)).unwrap())
            .collect();
        assert_eq!(offsets.len(), 5);
        assert_eq!(
            window_offset(&t, &WindowPolicy::random(2, 540)).unwrap(),
            window_offset(&t, &WindowPolicy::random(2, 540)).unwrap()
        );
    }

    #[test]
    fn policy_seed_rules() {
        let bad = WindowPolicy {
            kind: WindowKind::Start,
            seed: Some(1),
            length: 540,
        };
        assert!(bad.validate().is_err());
        assert!(WindowPolicy::start(0).validate().is_err());
    }

    #[test]
    fn hundred_jobs_split_eighty_twenty() {
        let trials: Vec<_> = (0..100).map(|i| trial(&format!("j{i:03}"), 0, 20, 3)).collect();
        let ds = build_challenge_dataset(&trials, &WindowPolicy::start(10), 0.8, 7).unwrap();
        assert_eq!(ds.y_train.len(), 80);
        assert_eq!(ds.y_test.len(), 20);
        assert_eq!(ds.class_names, vec!["Inception3".to_string()]);
        let again = build_challenge_dataset(&trials, &WindowPolicy::start(10), 0.8, 7).unwrap();
        assert_eq!(ds, again);
    }

    #[test]
    fn multi_gpu_jobs_stay_on_one_side() {
        let mut trials = Vec::new();
        for i in 0..30 {
            for g in 0..3 {
                trials.push(trial(&format!("j{i}"), g, 40, i % 3 * 5));
            }
        }
        let ds = build_challenge_dataset(&trials, &WindowPolicy::random(4, 16), 0.8, 1).unwrap();
        assert_eq!(ds.y_train.len() % 3, 0);
        assert_eq!(ds.y_train.len() + ds.y_test.len(), 90);
        // labels 0, 5, 10 become 0, 1, 2
        assert_eq!(ds.class_count(), 3);
        for c in 0..3 {
            assert!(ds.y_train.contains(&c) && ds.y_test.contains(&c));
        }
    }

    #[test]
    fn singleton_class_is_too_few() {
        let trials = vec![trial("a", 0, 20, 0), trial("b", 0, 20, 0), trial("c", 0, 20, 1)];
        assert!(matches!(
            build_challenge_dataset(&trials, &WindowPolicy::start(10), 0.8, 1),
            Err(Error::TooFewTrials(_))
        ));
    }

    #[test]
    fn allocation_sums_to_rounded_target() {
        let alloc = allocate_train(&[33, 33, 34], 0.8);
        assert_eq!(alloc.iter().sum::<usize>(), 80);
        let alloc = allocate_train(&[3, 2, 2], 0.8);
        assert!(alloc.iter().zip([3, 2, 2]).all(|(&a, c)| a >= 1 && a < c));
    }
}
