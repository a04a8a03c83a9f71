//! Per-frame post-processing of fused predictions: moving-average
//! smoothing, sustained-distraction alerts and the object-then-location
//! cascade.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::FusionModel;
use crate::inducer::InducerModel;
use crate::types::{Collection, ProbVector, TaskId, OBJECT_NONE};

pub const DEFAULT_WINDOW: usize = 5;
pub const DEFAULT_SUSTAIN: usize = 15;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamConfig {
    pub window_size: usize,
    pub sustain_threshold: usize,
    /// Distraction class indices, per task in [`TaskId::ALL`] order.
    pub distraction_classes: [Vec<usize>; 4],
    pub cascade_enabled: bool,
}

impl Default for StreamConfig {
    fn default() -> Self {
        StreamConfig {
            window_size: DEFAULT_WINDOW,
            sustain_threshold: DEFAULT_SUSTAIN,
            // left hand in the air, right hand at radio or cupholder, any
            // held object
            distraction_classes: [vec![2], vec![3, 4], vec![0, 1, 2], vec![0, 1, 2]],
            cascade_enabled: false,
        }
    }
}

impl StreamConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_size == 0 || self.sustain_threshold == 0 {
            return Err(Error::input("window_size and sustain_threshold must be at least 1"));
        }
        for task in TaskId::ALL {
            if let Some(&c) = self.distraction_classes[task.index()].iter().find(|&&c| c >= task.num_classes()) {
                return Err(Error::input(format!("distraction class {c} out of range for {task}")));
            }
        }
        Ok(())
    }

    pub fn is_distraction(&self, task: TaskId, class: usize) -> bool {
        self.distraction_classes[task.index()].contains(&class)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlertEvent {
    /// Frame index at which the alert fired.
    pub timestamp: u64,
    pub task: TaskId,
    pub class: usize,
    pub sustained_frames: usize,
}

/// Streaming moving average. The first `W - 1` outputs average over the
/// frames seen so far.
#[derive(Clone, Debug)]
pub struct LowPass {
    window: usize,
    buf: VecDeque<Vec<f64>>,
}

impl LowPass {
    pub fn new(window: usize) -> Result<Self> {
        if window == 0 {
            return Err(Error::input("window_size must be at least 1"));
        }
        Ok(LowPass { window, buf: VecDeque::with_capacity(window) })
    }

    pub fn push(&mut self, probs: &ProbVector) -> Result<ProbVector> {
        if let Some(first) = self.buf.front() {
            if first.len() != probs.len() {
                return Err(Error::DimensionMismatch { expected: first.len(), got: probs.len() });
            }
        }
        if self.buf.len() == self.window {
            self.buf.pop_front();
        }
        self.buf.push_back(probs.values().to_vec());
        let n = self.buf.len() as f64;
        let mean = (0..probs.len()).map(|k| self.buf.iter().map(|v| v[k]).sum::<f64>() / n).collect();
        Ok(ProbVector::from_normalized(mean))
    }
}

pub fn lowpass(stream: &[ProbVector], window: usize) -> Result<Vec<ProbVector>> {
    let mut filter = LowPass::new(window)?;
    stream.iter().map(|p| filter.push(p)).collect()
}

/// Counts consecutive distraction frames for one task. Fires once per run
/// and re-arms on the next non-distraction frame.
#[derive(Clone, Debug)]
pub struct AlertTracker {
    task: TaskId,
    threshold: usize,
    distraction: Vec<usize>,
    run: usize,
    fired: bool,
}

impl AlertTracker {
    pub fn new(task: TaskId, config: &StreamConfig) -> Result<Self> {
        config.validate()?;
        Ok(AlertTracker {
            task,
            threshold: config.sustain_threshold,
            distraction: config.distraction_classes[task.index()].clone(),
            run: 0,
            fired: false,
        })
    }

    pub fn push(&mut self, frame: u64, class: usize) -> Option<AlertEvent> {
        if !self.distraction.contains(&class) {
            self.run = 0;
            self.fired = false;
            return None;
        }
        self.run += 1;
        if self.fired || self.run < self.threshold {
            return None;
        }
        self.fired = true;
        Some(AlertEvent { timestamp: frame, task: self.task, class, sustained_frames: self.run })
    }
}

/// Alerts over a whole sequence of per-frame classes; frame `i` has
/// timestamp `i`.
pub fn threshold_alerts(classes: &[usize], task: TaskId, config: &StreamConfig) -> Result<Vec<AlertEvent>> {
    let mut tracker = AlertTracker::new(task, config)?;
    Ok(classes.iter().enumerate().filter_map(|(i, &c)| tracker.push(i as u64, c)).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameOutput {
    pub frame: u64,
    pub task: TaskId,
    pub fused_probs: Vec<f64>,
    pub argmax: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alert: Option<AlertEvent>,
}

/// Smoothing followed by alerting for one task's stream.
#[derive(Clone, Debug)]
pub struct StreamProcessor {
    task: TaskId,
    filter: LowPass,
    tracker: AlertTracker,
}

impl StreamProcessor {
    pub fn new(task: TaskId, config: &StreamConfig) -> Result<Self> {
        Ok(StreamProcessor {
            task,
            filter: LowPass::new(config.window_size)?,
            tracker: AlertTracker::new(task, config)?,
        })
    }

    pub fn push(&mut self, frame: u64, probs: &ProbVector) -> Result<FrameOutput> {
        if probs.len() != self.task.num_classes() {
            return Err(Error::DimensionMismatch { expected: self.task.num_classes(), got: probs.len() });
        }
        let smoothed = self.filter.push(probs)?;
        let argmax = smoothed.argmax();
        let alert = self.tracker.push(frame, argmax);
        Ok(FrameOutput { frame, task: self.task, fused_probs: smoothed.into_inner(), argmax, alert })
    }
}

/// Anything producing a distribution for one task from a collection.
pub trait Classifier {
    fn task(&self) -> TaskId;
    fn classify(&self, collection: &Collection) -> Result<ProbVector>;
}

impl Classifier for InducerModel {
    fn task(&self) -> TaskId {
        self.task
    }

    fn classify(&self, collection: &Collection) -> Result<ProbVector> {
        self.predict(collection)
    }
}

impl Classifier for FusionModel {
    fn task(&self) -> TaskId {
        self.task
    }

    fn classify(&self, collection: &Collection) -> Result<ProbVector> {
        self.forward(collection)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CascadeOutput {
    pub object: usize,
    pub location: Option<usize>,
}

/// Held-object model first; the location model only runs when the hand
/// holds nothing.
pub struct Cascade<'a, O: Classifier, L: Classifier> {
    object_model: &'a O,
    location_model: &'a L,
    evaluations: u64,
}

impl<'a, O: Classifier, L: Classifier> Cascade<'a, O, L> {
    pub fn new(object_model: &'a O, location_model: &'a L) -> Result<Self> {
        let (obj, loc) = (object_model.task(), location_model.task());
        if obj.is_location() || !loc.is_location() || obj.location_task() != loc {
            return Err(Error::input(format!(
                "cascade needs an object and a location model for one hand, got {obj} and {loc}"
            )));
        }
        Ok(Cascade { object_model, location_model, evaluations: 0 })
    }

    /// Model evaluations so far.
    pub fn evaluations(&self) -> u64 {
        self.evaluations
    }

    pub fn run(&mut self, collection: &Collection) -> Result<CascadeOutput> {
        let object = self.object_model.classify(collection)?.argmax();
        self.evaluations += 1;
        if object != OBJECT_NONE {
            return Ok(CascadeOutput { object, location: None });
        }
        let location = self.location_model.classify(collection)?.argmax();
        self.evaluations += 1;
        Ok(CascadeOutput { object, location: Some(location) })
    }
}
