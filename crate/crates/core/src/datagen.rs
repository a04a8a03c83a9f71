//! Synthetic multi-view benchmark generator and dataset splitting.
//!
//! Each collection draws one class per task, decides which views see it
//! (occlusion depends on both hands' location classes, with views
//! compensating for each other), and builds every present view's features as
//!
//! ```text
//! x_v = sum_t informativeness[v][t] * embedding[v][t][class_t]
//!       + subject_signature + scene_exposure[v] * scene_offset + noise
//! ```
//!
//! The subject signature and the per-collection scene offset are shared by
//! all views of a collection, so they can be cancelled by comparing views
//! but not from any single view. Embeddings and scene offset only occupy the
//! first `signal_dims` coordinates.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{complete_fraction, Collection, Dataset, Labels, Split, TaskId, ViewObservation, LOCATION_CLASSES};

/// Generator settings. Matrices are indexed `[view][task]` (tasks in
/// [`TaskId::ALL`] order) and `[view][location class]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub num_subjects: usize,
    pub collections_per_subject: usize,
    pub num_views: usize,
    pub feature_dim: usize,
    pub view_informativeness: Vec<[f64; 4]>,
    pub occlusion_matrix: Vec<[f64; 5]>,
    /// Each view already missing scales the next view's miss probability by
    /// `1 - visibility_anticorrelation`.
    pub visibility_anticorrelation: f64,
    pub subject_signature_scale: f64,
    /// Class embeddings and the scene offset live in the leading
    /// `signal_dims` coordinates; the rest hold subject signature and noise.
    pub signal_dims: usize,
    /// Standard deviation of the per-collection offset shared by all views.
    pub scene_offset_sigma: f64,
    /// Per-view multiplier on the scene offset.
    pub scene_exposure: Vec<f64>,
    pub noise_sigma: f64,
    /// Norm of each class embedding before informativeness scaling.
    pub class_separation: f64,
    /// Class priors per task, in class order.
    pub class_priors: [Vec<f64>; 4],
    pub rng_seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            num_subjects: 12,
            collections_per_subject: 400,
            num_views: 4,
            feature_dim: 16,
            // views: dashboard centre, dashboard driver, steering wheel, rearview
            view_informativeness: vec![
                [0.35, 0.55, 0.40, 0.90],
                [0.30, 0.30, 0.30, 0.45],
                [1.00, 1.00, 1.00, 1.00],
                [0.70, 1.00, 0.90, 0.60],
            ],
            // columns: SteeringWheel, Lap, Air, Radio, Cupholder
            occlusion_matrix: vec![
                [0.02, 0.04, 0.03, 0.01, 0.02],
                [0.01, 0.03, 0.02, 0.03, 0.04],
                [0.66, 0.70, 0.68, 0.68, 0.70],
                [0.03, 0.02, 0.01, 0.02, 0.01],
            ],
            visibility_anticorrelation: 0.97,
            subject_signature_scale: 0.5,
            signal_dims: 8,
            scene_offset_sigma: 1.2,
            scene_exposure: vec![1.0, 1.0, 0.4, 1.0],
            noise_sigma: 0.05,
            class_separation: 3.0,
            class_priors: [vec![0.4, 0.3, 0.3], vec![0.28, 0.18, 0.18, 0.18, 0.18], vec![0.25; 4], vec![0.25; 4]],
            rng_seed: 42,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::input(msg.to_string()));
        if self.num_subjects == 0 || self.collections_per_subject == 0 {
            return bad("num_subjects and collections_per_subject must be positive");
        }
        if self.num_views == 0 || self.feature_dim == 0 {
            return bad("num_views and feature_dim must be positive");
        }
        if self.signal_dims == 0 || self.signal_dims > self.feature_dim {
            return bad("signal_dims must lie in 1..=feature_dim");
        }
        if self.view_informativeness.len() != self.num_views
            || self.occlusion_matrix.len() != self.num_views
            || self.scene_exposure.len() != self.num_views
        {
            return bad("informativeness, occlusion and scene exposure need one row per view");
        }
        if !self.scene_exposure.iter().all(|&x| x >= 0.0 && x.is_finite()) {
            return bad("scene_exposure entries must be finite and non-negative");
        }
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if !self.view_informativeness.iter().flatten().all(|&x| unit(x)) {
            return bad("view_informativeness entries must lie in [0, 1]");
        }
        if !self.occlusion_matrix.iter().flatten().all(|&x| unit(x)) {
            return bad("occlusion probabilities must lie in [0, 1]");
        }
        if !unit(self.visibility_anticorrelation) {
            return bad("visibility_anticorrelation must lie in [0, 1]");
        }
        let nonneg = |x: f64| x >= 0.0 && x.is_finite();
        if !(nonneg(self.subject_signature_scale) && nonneg(self.scene_offset_sigma) && nonneg(self.class_separation)) {
            return bad("scales must be finite and non-negative");
        }
        if !(self.noise_sigma > 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise_sigma must be positive");
        }
        for task in TaskId::ALL {
            let priors = &self.class_priors[task.index()];
            if priors.len() != task.num_classes() || priors.iter().any(|&p| !(p >= 0.0 && p.is_finite())) {
                return Err(Error::input(format!(
                    "class_priors for {task} must be {} non-negative values",
                    task.num_classes()
                )));
            }
            if priors.iter().sum::<f64>() <= 0.0 {
                return Err(Error::input(format!("class_priors for {task} sum to zero")));
            }
        }
        Ok(())
    }

    /// Same settings with every occlusion probability set to zero.
    pub fn without_occlusion(mut self) -> Self {
        self.occlusion_matrix.iter_mut().flatten().for_each(|p| *p = 0.0);
        self
    }

    pub fn num_collections(&self) -> usize {
        self.num_subjects * self.collections_per_subject
    }
}

/// Availability statistics of a generated dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenReport {
    pub complete_fraction: f64,
    pub empty_fraction: f64,
    /// `present_counts[k]` is the number of collections with exactly `k`
    /// views present.
    pub present_counts: Vec<usize>,
}

impl GenReport {
    pub fn of(ds: &Dataset) -> Self {
        let mut present_counts = vec![0; ds.num_views + 1];
        for c in &ds.collections {
            present_counts[c.num_present()] += 1;
        }
        let n = ds.len().max(1) as f64;
        GenReport {
            complete_fraction: complete_fraction(&ds.collections),
            empty_fraction: present_counts[0] as f64 / n,
            present_counts,
        }
    }
}

fn sample_index(rng: &mut ChaCha8Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        if u < w {
            return i;
        }
        u -= w;
    }
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

fn gaussian_vec(rng: &mut ChaCha8Rng, dim: usize, sigma: f64) -> Vec<f64> {
    (0..dim)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            sigma * z
        })
        .collect()
}

/// Generates a dataset; identical configs give bit-identical datasets.
pub fn generate(config: &GenConfig) -> Result<Dataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let (n_views, dim) = (config.num_views, config.feature_dim);
    let signal_dims = config.signal_dims;

    // embeddings[v][t][c], unit direction scaled by class_separation
    let embeddings: Vec<Vec<Vec<Vec<f64>>>> = (0..n_views)
        .map(|_| {
            TaskId::ALL
                .iter()
                .map(|t| {
                    (0..t.num_classes())
                        .map(|_| {
                            let mut v = gaussian_vec(&mut rng, signal_dims, 1.0);
                            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
                            v.iter_mut().for_each(|x| *x *= config.class_separation / norm);
                            v.resize(dim, 0.0);
                            v
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    let signatures: Vec<Vec<f64>> =
        (0..config.num_subjects).map(|_| gaussian_vec(&mut rng, dim, config.subject_signature_scale)).collect();
    let noise = Normal::new(0.0, config.noise_sigma).map_err(|e| Error::input(e.to_string()))?;
    let keep = 1.0 - config.visibility_anticorrelation;

    let mut collections = Vec::with_capacity(config.num_collections());
    let mut order: Vec<usize> = (0..n_views).collect();
    for (subject, signature) in signatures.iter().enumerate() {
        for _ in 0..config.collections_per_subject {
            let id = collections.len() as u64;
            let mut labels = Labels::default();
            for task in TaskId::ALL {
                labels.set(task, sample_index(&mut rng, &config.class_priors[task.index()]));
            }
            let lh = labels.get(TaskId::LeftHandLocation);
            let rh = labels.get(TaskId::RightHandLocation);

            let mut present = vec![true; n_views];
            order.sort_unstable();
            order.shuffle(&mut rng);
            let mut missing_so_far = 0;
            for &v in &order {
                let occ = &config.occlusion_matrix[v];
                let base = 1.0 - (1.0 - occ[lh]) * (1.0 - occ[rh]);
                let p_miss = base * keep.powi(missing_so_far);
                if rng.random::<f64>() < p_miss {
                    present[v] = false;
                    missing_so_far += 1;
                }
            }

            let mut scene = gaussian_vec(&mut rng, signal_dims, config.scene_offset_sigma);
            scene.resize(dim, 0.0);
            let views = (0..n_views)
                .map(|v| {
                    let mut x: Vec<f64> = (0..dim)
                        .map(|k| signature[k] + config.scene_exposure[v] * scene[k] + noise.sample(&mut rng))
                        .collect();
                    for task in TaskId::ALL {
                        let s = config.view_informativeness[v][task.index()];
                        let e = &embeddings[v][task.index()][labels.get(task)];
                        x.iter_mut().zip(e).for_each(|(xi, ei)| *xi += s * ei);
                    }
                    if present[v] {
                        ViewObservation::present(v, x)
                    } else {
                        ViewObservation::missing(v, dim)
                    }
                })
                .collect();
            collections.push(Collection { id, subject: subject as u32, views, labels, timestamp: id });
        }
    }
    debug_assert_eq!(LOCATION_CLASSES.len(), 5);
    Dataset::new(n_views, dim, collections)
}

/// How to assign split tags.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SplitMode {
    /// Seeded shuffle of all collections into train/val/test by fraction.
    Random,
    /// Every collection of the subject is test; the rest is divided into
    /// train/val in proportion to the train and val fractions.
    BySubject(u32),
}

/// Tags every collection of `dataset` as train, val or test.
pub fn split(dataset: Dataset, fractions: (f64, f64, f64), mode: SplitMode, seed: u64) -> Result<Dataset> {
    let (tr, va, te) = fractions;
    if [tr, va, te].iter().any(|&f| !(0.0..=1.0).contains(&f)) {
        return Err(Error::input("split fractions must lie in [0, 1]"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tags = BTreeMap::new();
    match mode {
        SplitMode::Random => {
            if ((tr + va + te) - 1.0).abs() > 1e-9 {
                return Err(Error::input("split fractions must sum to 1"));
            }
            let mut ids: Vec<u64> = dataset.collections.iter().map(|c| c.id).collect();
            ids.shuffle(&mut rng);
            let n = ids.len();
            let n_train = ((n as f64) * tr).round() as usize;
            let n_val = (((n as f64) * va).round() as usize).min(n - n_train);
            for (i, id) in ids.into_iter().enumerate() {
                let split = if i < n_train {
                    Split::Train
                } else if i < n_train + n_val {
                    Split::Val
                } else {
                    Split::Test
                };
                tags.insert(id, split);
            }
        }
        SplitMode::BySubject(left_out) => {
            if !dataset.subjects.contains(&left_out) {
                return Err(Error::input(format!("unknown subject {left_out}")));
            }
            if tr + va <= 0.0 {
                return Err(Error::input("train and val fractions cannot both be zero"));
            }
            let mut rest: Vec<u64> = Vec::new();
            for c in &dataset.collections {
                if c.subject == left_out {
                    tags.insert(c.id, Split::Test);
                } else {
                    rest.push(c.id);
                }
            }
            rest.shuffle(&mut rng);
            let n_train = ((rest.len() as f64) * tr / (tr + va)).round() as usize;
            for (i, id) in rest.into_iter().enumerate() {
                tags.insert(id, if i < n_train { Split::Train } else { Split::Val });
            }
        }
    }
    dataset.with_split_tags(tags)
}
