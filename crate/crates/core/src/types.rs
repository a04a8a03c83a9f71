//! Domain types shared by every module: tasks and their class sets,
//! multi-view collections, probability vectors and datasets.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Location classes in the order used by both location tasks. The left hand
/// only uses the first three.
pub const LOCATION_CLASSES: [&str; 5] = ["SteeringWheel", "Lap", "Air", "Radio", "Cupholder"];
pub const OBJECT_CLASSES: [&str; 4] = ["Phone", "Beverage", "Tablet", "None"];

/// Index of `None` in the object class list.
pub const OBJECT_NONE: usize = 3;

/// Tolerance used when validating that a probability vector sums to one.
pub const PROB_SUM_TOL: f64 = 1e-6;

/// The four hand classification tasks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TaskId {
    #[serde(rename = "lh_loc")]
    LeftHandLocation,
    #[serde(rename = "rh_loc")]
    RightHandLocation,
    #[serde(rename = "lh_obj")]
    LeftHandObject,
    #[serde(rename = "rh_obj")]
    RightHandObject,
}

impl TaskId {
    pub const ALL: [TaskId; 4] =
        [TaskId::LeftHandLocation, TaskId::RightHandLocation, TaskId::LeftHandObject, TaskId::RightHandObject];

    /// Position of the task in [`TaskId::ALL`] and in [`Labels`].
    pub fn index(self) -> usize {
        match self {
            TaskId::LeftHandLocation => 0,
            TaskId::RightHandLocation => 1,
            TaskId::LeftHandObject => 2,
            TaskId::RightHandObject => 3,
        }
    }

    /// Short key used in files and on the command line.
    pub fn key(self) -> &'static str {
        match self {
            TaskId::LeftHandLocation => "lh_loc",
            TaskId::RightHandLocation => "rh_loc",
            TaskId::LeftHandObject => "lh_obj",
            TaskId::RightHandObject => "rh_obj",
        }
    }

    pub fn classes(self) -> &'static [&'static str] {
        match self {
            TaskId::LeftHandLocation => &LOCATION_CLASSES[..3],
            TaskId::RightHandLocation => &LOCATION_CLASSES[..],
            TaskId::LeftHandObject | TaskId::RightHandObject => &OBJECT_CLASSES[..],
        }
    }

    pub fn num_classes(self) -> usize {
        self.classes().len()
    }

    pub fn is_location(self) -> bool {
        matches!(self, TaskId::LeftHandLocation | TaskId::RightHandLocation)
    }

    /// The location task for the same hand (identity for location tasks).
    pub fn location_task(self) -> TaskId {
        match self {
            TaskId::LeftHandLocation | TaskId::LeftHandObject => TaskId::LeftHandLocation,
            TaskId::RightHandLocation | TaskId::RightHandObject => TaskId::RightHandLocation,
        }
    }

    /// The held-object task for the same hand.
    pub fn object_task(self) -> TaskId {
        match self {
            TaskId::LeftHandLocation | TaskId::LeftHandObject => TaskId::LeftHandObject,
            TaskId::RightHandLocation | TaskId::RightHandObject => TaskId::RightHandObject,
        }
    }

    pub fn spec(self) -> TaskSpec {
        TaskSpec { task_id: self, classes: self.classes() }
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for TaskId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TaskId::ALL.into_iter().find(|t| t.key() == s).ok_or_else(|| Error::input(format!("unknown task `{s}`")))
    }
}

/// A classification task together with its ordered class list. All
/// probability vectors for a task index classes in this order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TaskSpec {
    pub task_id: TaskId,
    pub classes: &'static [&'static str],
}

impl TaskSpec {
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn all() -> [TaskSpec; 4] {
        TaskId::ALL.map(TaskId::spec)
    }
}

/// Per-collection ground truth, one class index per task.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct Labels(pub [usize; 4]);

impl Labels {
    pub fn new(lh_loc: usize, rh_loc: usize, lh_obj: usize, rh_obj: usize) -> Self {
        Labels([lh_loc, rh_loc, lh_obj, rh_obj])
    }

    pub fn get(&self, task: TaskId) -> usize {
        self.0[task.index()]
    }

    pub fn set(&mut self, task: TaskId, class: usize) {
        self.0[task.index()] = class;
    }

    pub fn validate(&self) -> Result<()> {
        for task in TaskId::ALL {
            let c = self.get(task);
            if c >= task.num_classes() {
                return Err(Error::input(format!(
                    "label {c} out of range for task {task} ({} classes)",
                    task.num_classes()
                )));
            }
        }
        Ok(())
    }
}

/// One view slot of a collection. A missing view always carries the zero
/// vector; `present` is the single source of truth for availability.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewObservation {
    pub view_id: usize,
    pub present: bool,
    pub features: Vec<f64>,
}

impl ViewObservation {
    pub fn present(view_id: usize, features: Vec<f64>) -> Self {
        ViewObservation { view_id, present: true, features }
    }

    pub fn missing(view_id: usize, feature_dim: usize) -> Self {
        ViewObservation { view_id, present: false, features: vec![0.0; feature_dim] }
    }
}

/// One simultaneous multi-view capture of a single event.
#[derive(Clone, Debug, PartialEq)]
pub struct Collection {
    pub id: u64,
    pub subject: u32,
    pub views: Vec<ViewObservation>,
    pub labels: Labels,
    /// Monotone sequence index within a stream.
    pub timestamp: u64,
}

impl Collection {
    pub fn num_views(&self) -> usize {
        self.views.len()
    }

    pub fn num_present(&self) -> usize {
        self.views.iter().filter(|v| v.present).count()
    }

    /// Checks slot ordering, feature dimensions, the zero-when-missing rule
    /// and label ranges.
    pub fn validate(&self, num_views: usize, feature_dim: usize) -> Result<()> {
        if self.views.len() != num_views {
            return Err(Error::Format(format!(
                "collection {} has {} view slots, expected {num_views}",
                self.id,
                self.views.len()
            )));
        }
        for (j, view) in self.views.iter().enumerate() {
            if view.view_id != j {
                return Err(Error::Format(format!(
                    "collection {}: slot {j} carries view_id {}",
                    self.id, view.view_id
                )));
            }
            if view.features.len() != feature_dim {
                return Err(Error::DimensionMismatch { expected: feature_dim, got: view.features.len() });
            }
            if !view.present && view.features.iter().any(|&x| x != 0.0) {
                return Err(Error::Format(format!("collection {}: missing view {j} has nonzero features", self.id)));
            }
            if view.features.iter().any(|x| !x.is_finite()) {
                return Err(Error::Format(format!("collection {}: non-finite feature", self.id)));
            }
        }
        self.labels.validate()
    }
}

/// True iff every view slot is present.
pub fn complete(collection: &Collection) -> bool {
    collection.views.iter().all(|v| v.present)
}

/// Element `j` is true iff view `j` is present.
pub fn availability_mask(collection: &Collection) -> Vec<bool> {
    collection.views.iter().map(|v| v.present).collect()
}

/// Index of the largest value; ties resolve to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// A distribution over the classes of one task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    /// Validates entries in `[0, 1]` summing to one within [`PROB_SUM_TOL`].
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::input("empty probability vector"));
        }
        if values.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err(Error::input("probability outside [0, 1]"));
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > PROB_SUM_TOL {
            return Err(Error::input(format!("probabilities sum to {sum}")));
        }
        Ok(ProbVector(values))
    }

    pub fn uniform(m: usize) -> Self {
        ProbVector(vec![1.0 / m as f64; m])
    }

    /// Wraps values already known to form a distribution (softmax output,
    /// convex combinations of distributions).
    pub(crate) fn from_normalized(values: Vec<f64>) -> Self {
        debug_assert!(!values.is_empty());
        ProbVector(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }
}

impl AsRef<[f64]> for ProbVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// A set of collections sharing view count and feature dimension, with
/// optional split tags.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub num_views: usize,
    pub feature_dim: usize,
    pub collections: Vec<Collection>,
    /// Sorted, deduplicated subject ids.
    pub subjects: Vec<u32>,
    pub split_tags: BTreeMap<u64, Split>,
}

impl Dataset {
    /// Builds an untagged dataset; subjects are collected from the
    /// collections.
    pub fn new(num_views: usize, feature_dim: usize, collections: Vec<Collection>) -> Result<Self> {
        if num_views == 0 || feature_dim == 0 {
            return Err(Error::input("num_views and feature_dim must be positive"));
        }
        let mut ids = BTreeSet::new();
        for c in &collections {
            c.validate(num_views, feature_dim)?;
            if !ids.insert(c.id) {
                return Err(Error::Format(format!("duplicate collection id {}", c.id)));
            }
        }
        let subjects: BTreeSet<u32> = collections.iter().map(|c| c.subject).collect();
        Ok(Dataset {
            num_views,
            feature_dim,
            collections,
            subjects: subjects.into_iter().collect(),
            split_tags: BTreeMap::new(),
        })
    }

    pub fn task_specs(&self) -> [TaskSpec; 4] {
        TaskSpec::all()
    }

    pub fn len(&self) -> usize {
        self.collections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.collections.is_empty()
    }

    /// Replaces the split tags after checking that they cover every
    /// collection exactly once.
    pub fn with_split_tags(mut self, tags: BTreeMap<u64, Split>) -> Result<Self> {
        if tags.len() != self.collections.len() || self.collections.iter().any(|c| !tags.contains_key(&c.id)) {
            return Err(Error::input("split tags must cover every collection exactly once"));
        }
        self.split_tags = tags;
        Ok(self)
    }

    pub fn split_of(&self, id: u64) -> Option<Split> {
        self.split_tags.get(&id).copied()
    }

    /// Collections carrying `split`, in dataset order.
    pub fn split_collections(&self, split: Split) -> Vec<&Collection> {
        self.collections.iter().filter(|c| self.split_tags.get(&c.id) == Some(&split)).collect()
    }

    pub fn complete_fraction(&self) -> f64 {
        complete_fraction(self.collections.iter())
    }
}

/// Fraction of complete collections; zero for an empty iterator.
pub fn complete_fraction<'a>(collections: impl IntoIterator<Item = &'a Collection>) -> f64 {
    let (mut total, mut full) = (0usize, 0usize);
    for c in collections {
        total += 1;
        full += complete(c) as usize;
    }
    if total == 0 {
        0.0
    } else {
        full as f64 / total as f64
    }
}

#[cfg(test)]
pub(crate) mod test_util {
    use super::*;

    /// Collection with `present` views carrying constant features.
    pub fn collection(id: u64, present: &[bool], dim: usize) -> Collection {
        let views = present
            .iter()
            .enumerate()
            .map(|(j, &p)| {
                if p {
                    ViewObservation::present(j, vec![1.0 + j as f64; dim])
                } else {
                    ViewObservation::missing(j, dim)
                }
            })
            .collect();
        Collection { id, subject: 0, views, labels: Labels::default(), timestamp: id }
    }
}
