//! Per-view classifiers: a ReLU MLP trunk and a softmax head, trained on the
//! (zero-imputed) features of a single view.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::impute::IMPUTATION_VALUE;
use crate::nn::{
    cross_entropy, relu_backward_in_place, relu_in_place, softmax, train_network, Dense, DenseGrad, Network,
    TrainConfig, TrainLog,
};
use crate::types::{Collection, Dataset, ProbVector, Split, TaskId};

pub const DEFAULT_HIDDEN: [usize; 2] = [32, 32];

#[derive(Clone, Debug, PartialEq)]
pub struct InducerModel {
    pub view_id: usize,
    pub task: TaskId,
    /// Hidden layers followed by the head; ReLU after every layer but the
    /// last.
    pub layers: Vec<Dense>,
}

impl InducerModel {
    /// Randomly initialised model with dims `[input, hidden.., classes]`.
    pub fn new(view_id: usize, task: TaskId, input_dim: usize, hidden: &[usize], rng: &mut ChaCha8Rng) -> Self {
        let dims = layer_dims(input_dim, hidden, task.num_classes());
        let layers = dims.windows(2).map(|w| Dense::init(w[0], w[1], rng)).collect();
        InducerModel { view_id, task, layers }
    }

    /// All-zero parameters; predicts the uniform distribution everywhere.
    pub fn zeroed(view_id: usize, task: TaskId, input_dim: usize, hidden: &[usize]) -> Self {
        let dims = layer_dims(input_dim, hidden, task.num_classes());
        let layers = dims.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect();
        InducerModel { view_id, task, layers }
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.layers[0].in_dim];
        dims.extend(self.layers.iter().map(|l| l.out_dim));
        dims
    }

    /// Returns the last hidden activation and the class distribution.
    pub fn forward(&self, features: &[f64]) -> Result<(Vec<f64>, ProbVector)> {
        if features.len() != self.input_dim() {
            return Err(Error::DimensionMismatch { expected: self.input_dim(), got: features.len() });
        }
        let (head, trunk) = self.layers.split_last().expect("at least one layer");
        let mut h = features.to_vec();
        for layer in trunk {
            h = layer.forward(&h);
            relu_in_place(&mut h);
        }
        let probs = softmax(&head.forward(&h));
        Ok((h, ProbVector::from_normalized(probs)))
    }

    /// Class distribution for this model's view of `collection`; a missing
    /// view is scored as the zero vector regardless of stored features.
    pub fn predict(&self, collection: &Collection) -> Result<ProbVector> {
        let view = collection
            .views
            .get(self.view_id)
            .ok_or_else(|| Error::input(format!("collection {} has no view {}", collection.id, self.view_id)))?;
        if view.present {
            Ok(self.forward(&view.features)?.1)
        } else {
            Ok(self.forward(&vec![IMPUTATION_VALUE; self.input_dim()])?.1)
        }
    }

    pub fn to_checkpoint(&self) -> InducerCheckpoint {
        InducerCheckpoint {
            version: 1,
            view: self.view_id,
            task: self.task.key().to_string(),
            dims: self.dims(),
            weights: self.layers.iter().map(|l| l.weights.clone()).collect(),
            biases: self.layers.iter().map(|l| l.biases.clone()).collect(),
        }
    }

    pub fn from_checkpoint(ck: InducerCheckpoint) -> Result<Self> {
        if ck.version != 1 {
            return Err(Error::Format(format!("unsupported checkpoint version {}", ck.version)));
        }
        let task: TaskId = ck.task.parse()?;
        let layers = layers_from_parts(&ck.dims, ck.weights, ck.biases)?;
        if ck.dims.last() != Some(&task.num_classes()) {
            return Err(Error::Format("output width does not match task classes".into()));
        }
        Ok(InducerModel { view_id: ck.view, task, layers })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_text(path, &serde_json::to_string(&self.to_checkpoint())?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck = serde_json::from_reader(std::io::BufReader::new(crate::io::open(path)?))?;
        Self::from_checkpoint(ck)
    }
}

pub(crate) fn layer_dims(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut dims = vec![input];
    dims.extend_from_slice(hidden);
    dims.push(output);
    dims
}

pub(crate) fn layers_from_parts(dims: &[usize], weights: Vec<Vec<f64>>, biases: Vec<Vec<f64>>) -> Result<Vec<Dense>> {
    if dims.len() < 2 || weights.len() != dims.len() - 1 || biases.len() != dims.len() - 1 {
        return Err(Error::Format("checkpoint layer count does not match dims".into()));
    }
    let mut layers = Vec::with_capacity(weights.len());
    for ((w, b), d) in weights.into_iter().zip(biases).zip(dims.windows(2)) {
        let layer = Dense { in_dim: d[0], out_dim: d[1], weights: w, biases: b };
        if layer.weights.len() != d[0] * d[1] || layer.biases.len() != d[1] {
            return Err(Error::Format("checkpoint layer shape does not match dims".into()));
        }
        if !layer.is_finite() {
            return Err(Error::Format("non-finite parameter in checkpoint".into()));
        }
        layers.push(layer);
    }
    Ok(layers)
}

/// On-disk form of an [`InducerModel`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InducerCheckpoint {
    pub version: u32,
    pub view: usize,
    pub task: String,
    pub dims: Vec<usize>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Network for InducerModel {
    fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    fn num_classes(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }

    fn layers(&self) -> Vec<&Dense> {
        self.layers.iter().collect()
    }

    fn layers_mut(&mut self) -> Vec<&mut Dense> {
        self.layers.iter_mut().collect()
    }

    fn logits(&self, input: &[f64]) -> Vec<f64> {
        let last = self.layers.len() - 1;
        let mut h = input.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(&h);
            if i < last {
                relu_in_place(&mut h);
            }
        }
        h
    }

    fn backprop(&self, input: &[f64], label: usize, grads: &mut [DenseGrad]) -> f64 {
        let last = self.layers.len() - 1;
        // activations[i] is the input to layer i
        let mut activations = Vec::with_capacity(self.layers.len());
        let mut h = input.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut out = layer.forward(&h);
            if i < last {
                relu_in_place(&mut out);
            }
            activations.push(h);
            h = out;
        }
        let loss = cross_entropy(&h, label);
        let mut delta = softmax(&h);
        delta[label] -= 1.0;
        for i in (0..self.layers.len()).rev() {
            if i == 0 {
                self.layers[0].backward_params(&activations[0], &delta, &mut grads[0]);
            } else {
                delta = self.layers[i].backward(&activations[i], &delta, &mut grads[i]);
                relu_backward_in_place(&mut delta, &activations[i]);
            }
        }
        loss
    }
}

/// Trains the model for one (view, task) pair on every train-tagged
/// collection, including those where the view is missing.
pub fn train(
    dataset: &Dataset,
    view_id: usize,
    task: TaskId,
    config: &TrainConfig,
    hidden: &[usize],
) -> Result<(InducerModel, TrainLog)> {
    if view_id >= dataset.num_views {
        return Err(Error::input(format!("view {view_id} out of range")));
    }
    let train = dataset.split_collections(Split::Train);
    if train.is_empty() {
        return Err(Error::input("dataset has no train-tagged collections"));
    }
    let zero = vec![IMPUTATION_VALUE; dataset.feature_dim];
    let inputs: Vec<&[f64]> = train
        .iter()
        .map(|c| {
            let v = &c.views[view_id];
            if v.present {
                v.features.as_slice()
            } else {
                zero.as_slice()
            }
        })
        .collect();
    let labels: Vec<usize> = train.iter().map(|c| c.labels.get(task)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let model = InducerModel::new(view_id, task, dataset.feature_dim, hidden, &mut rng);
    train_network(model, &inputs, &labels, config, &mut rng)
}
