//! Late-fusion network: one ReLU branch per view (trunk plus a dense layer
//! of width F), concatenated in view order into a fusion layer of width G,
//! followed by a softmax head. Missing views enter as zero vectors, so the
//! forward cost never depends on which views are present.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::impute::IMPUTATION_VALUE;
use crate::nn::{
    cross_entropy, gradient_check, relu_backward_in_place, relu_in_place, softmax, train_network, Dense, DenseGrad,
    Network, TrainConfig, TrainLog,
};
use crate::types::{Collection, Dataset, ProbVector, Split, TaskId};

/// Layer widths of a fusion network.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusionArch {
    pub trunk_hidden: Vec<usize>,
    /// Width F of each view's dense layer.
    pub view_width: usize,
    /// Width G of the fusion layer.
    pub fusion_width: usize,
}

impl FusionArch {
    pub fn desk() -> Self {
        FusionArch { trunk_hidden: vec![32], view_width: 32, fusion_width: 128 }
    }

    /// Widths matching a ResNet-scale pipeline (512 per view, 2048 fused).
    pub fn paper_scale() -> Self {
        FusionArch { trunk_hidden: vec![32], view_width: 512, fusion_width: 2048 }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "paper" => Ok(Self::paper_scale()),
            other => Err(Error::input(format!("unknown architecture preset `{other}`"))),
        }
    }

    fn branch_dims(&self, feature_dim: usize) -> Vec<usize> {
        let mut dims = vec![feature_dim];
        dims.extend_from_slice(&self.trunk_hidden);
        dims.push(self.view_width);
        dims
    }
}

impl Default for FusionArch {
    fn default() -> Self {
        Self::desk()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FusionModel {
    pub task: TaskId,
    pub num_views: usize,
    pub feature_dim: usize,
    pub arch: FusionArch,
    /// Per view: trunk layers then the width-F layer, ReLU after each.
    pub branches: Vec<Vec<Dense>>,
    pub fusion: Dense,
    pub head: Dense,
}

impl FusionModel {
    pub fn new(task: TaskId, num_views: usize, feature_dim: usize, arch: FusionArch, rng: &mut ChaCha8Rng) -> Self {
        Self::build(task, num_views, feature_dim, arch, |i, o| Dense::init(i, o, rng))
    }

    pub fn zeroed(task: TaskId, num_views: usize, feature_dim: usize, arch: FusionArch) -> Self {
        Self::build(task, num_views, feature_dim, arch, Dense::zeros)
    }

    fn build(
        task: TaskId,
        num_views: usize,
        feature_dim: usize,
        arch: FusionArch,
        mut make: impl FnMut(usize, usize) -> Dense,
    ) -> Self {
        let dims = arch.branch_dims(feature_dim);
        let branches = (0..num_views).map(|_| dims.windows(2).map(|w| make(w[0], w[1])).collect()).collect();
        let fusion = make(num_views * arch.view_width, arch.fusion_width);
        let head = make(arch.fusion_width, task.num_classes());
        FusionModel { task, num_views, feature_dim, arch, branches, fusion, head }
    }

    /// Concatenated network input for `collection`, zero for missing views.
    pub fn input_for(&self, collection: &Collection) -> Result<Vec<f64>> {
        if collection.views.len() != self.num_views {
            return Err(Error::DimensionMismatch { expected: self.num_views, got: collection.views.len() });
        }
        let mut x = Vec::with_capacity(self.num_views * self.feature_dim);
        for view in &collection.views {
            if view.features.len() != self.feature_dim {
                return Err(Error::DimensionMismatch { expected: self.feature_dim, got: view.features.len() });
            }
            if view.present {
                x.extend_from_slice(&view.features);
            } else {
                x.extend(std::iter::repeat_n(IMPUTATION_VALUE, self.feature_dim));
            }
        }
        Ok(x)
    }

    pub fn forward(&self, collection: &Collection) -> Result<ProbVector> {
        let x = self.input_for(collection)?;
        Ok(ProbVector::from_normalized(self.probs(&x)))
    }

    fn branch_forward(&self, view: usize, x: &[f64]) -> Vec<Vec<f64>> {
        // activations[0] is the view input, activations[k] the output of layer k-1
        let mut acts = Vec::with_capacity(self.branches[view].len() + 1);
        acts.push(x.to_vec());
        for layer in &self.branches[view] {
            let mut h = layer.forward(acts.last().unwrap());
            relu_in_place(&mut h);
            acts.push(h);
        }
        acts
    }

    pub fn to_checkpoint(&self) -> FusionCheckpoint {
        let layers = self.layers();
        FusionCheckpoint {
            version: 1,
            task: self.task.key().to_string(),
            arch: ArchDescriptor {
                num_views: self.num_views,
                feature_dim: self.feature_dim,
                trunk_hidden: self.arch.trunk_hidden.clone(),
                view_width: self.arch.view_width,
                fusion_width: self.arch.fusion_width,
            },
            weights: layers.iter().map(|l| l.weights.clone()).collect(),
            biases: layers.iter().map(|l| l.biases.clone()).collect(),
        }
    }

    pub fn from_checkpoint(ck: FusionCheckpoint) -> Result<Self> {
        if ck.version != 1 {
            return Err(Error::Format(format!("unsupported checkpoint version {}", ck.version)));
        }
        let task: TaskId = ck.task.parse()?;
        let a = ck.arch;
        let arch = FusionArch { trunk_hidden: a.trunk_hidden, view_width: a.view_width, fusion_width: a.fusion_width };
        let mut model = Self::zeroed(task, a.num_views, a.feature_dim, arch);
        let mut layers = model.layers_mut();
        if ck.weights.len() != layers.len() || ck.biases.len() != layers.len() {
            return Err(Error::Format("checkpoint layer count does not match architecture".into()));
        }
        for ((layer, w), b) in layers.iter_mut().zip(ck.weights).zip(ck.biases) {
            if w.len() != layer.weights.len() || b.len() != layer.biases.len() {
                return Err(Error::Format("checkpoint layer shape does not match architecture".into()));
            }
            layer.weights = w;
            layer.biases = b;
        }
        if !model.is_finite() {
            return Err(Error::Format("non-finite parameter in checkpoint".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_text(path, &serde_json::to_string(&self.to_checkpoint())?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck = serde_json::from_reader(std::io::BufReader::new(crate::io::open(path)?))?;
        Self::from_checkpoint(ck)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchDescriptor {
    pub num_views: usize,
    pub feature_dim: usize,
    pub trunk_hidden: Vec<usize>,
    pub view_width: usize,
    pub fusion_width: usize,
}

/// On-disk form of a [`FusionModel`]. Layers are listed branch by branch in
/// view order, then the fusion layer, then the head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionCheckpoint {
    pub version: u32,
    pub task: String,
    pub arch: ArchDescriptor,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Network for FusionModel {
    fn input_dim(&self) -> usize {
        self.num_views * self.feature_dim
    }

    fn num_classes(&self) -> usize {
        self.head.out_dim
    }

    fn layers(&self) -> Vec<&Dense> {
        self.branches.iter().flatten().chain([&self.fusion, &self.head]).collect()
    }

    fn layers_mut(&mut self) -> Vec<&mut Dense> {
        self.branches.iter_mut().flatten().chain([&mut self.fusion, &mut self.head]).collect()
    }

    fn logits(&self, input: &[f64]) -> Vec<f64> {
        let mut concat = Vec::with_capacity(self.fusion.in_dim);
        for (v, x) in input.chunks_exact(self.feature_dim).enumerate() {
            let mut h = x.to_vec();
            for layer in &self.branches[v] {
                h = layer.forward(&h);
                relu_in_place(&mut h);
            }
            concat.extend(h);
        }
        let mut z = self.fusion.forward(&concat);
        relu_in_place(&mut z);
        self.head.forward(&z)
    }

    fn backprop(&self, input: &[f64], label: usize, grads: &mut [DenseGrad]) -> f64 {
        let branch_acts: Vec<Vec<Vec<f64>>> =
            input.chunks_exact(self.feature_dim).enumerate().map(|(v, x)| self.branch_forward(v, x)).collect();
        let concat: Vec<f64> = branch_acts.iter().flat_map(|a| a.last().unwrap().iter().copied()).collect();
        let mut fused = self.fusion.forward(&concat);
        relu_in_place(&mut fused);
        let logits = self.head.forward(&fused);
        let loss = cross_entropy(&logits, label);

        let per_branch = self.branches.first().map_or(0, Vec::len);
        let n = grads.len();
        let (branch_grads, tail) = grads.split_at_mut(n - 2);
        let (fusion_grad, head_grad) = tail.split_at_mut(1);

        let mut delta = softmax(&logits);
        delta[label] -= 1.0;
        let mut d_fused = self.head.backward(&fused, &delta, &mut head_grad[0]);
        relu_backward_in_place(&mut d_fused, &fused);
        let d_concat = self.fusion.backward(&concat, &d_fused, &mut fusion_grad[0]);

        for (v, d_view) in d_concat.chunks_exact(self.arch.view_width).enumerate() {
            let acts = &branch_acts[v];
            let mut d = d_view.to_vec();
            relu_backward_in_place(&mut d, &acts[per_branch]);
            for k in (0..per_branch).rev() {
                let grad = &mut branch_grads[v * per_branch + k];
                if k == 0 {
                    self.branches[v][0].backward_params(&acts[0], &d, grad);
                } else {
                    d = self.branches[v][k].backward(&acts[k], &d, grad);
                    relu_backward_in_place(&mut d, &acts[k]);
                }
            }
        }
        loss
    }
}

/// Trains one fusion model end to end on every train-tagged collection,
/// incomplete ones included.
pub fn fusion_train(
    dataset: &Dataset,
    task: TaskId,
    config: &TrainConfig,
    arch: &FusionArch,
) -> Result<(FusionModel, TrainLog)> {
    let train = dataset.split_collections(Split::Train);
    if train.is_empty() {
        return Err(Error::input("dataset has no train-tagged collections"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let model = FusionModel::new(task, dataset.num_views, dataset.feature_dim, arch.clone(), &mut rng);
    let inputs = train.iter().map(|c| model.input_for(c)).collect::<Result<Vec<_>>>()?;
    let refs: Vec<&[f64]> = inputs.iter().map(Vec::as_slice).collect();
    let labels: Vec<usize> = train.iter().map(|c| c.labels.get(task)).collect();
    train_network(model, &refs, &labels, config, &mut rng)
}

/// Largest relative error between analytic and central-difference
/// gradients of the mean cross-entropy over `batch`.
pub fn fusion_gradient_check(model: &FusionModel, batch: &[&Collection]) -> Result<f64> {
    let inputs = batch.iter().map(|c| model.input_for(c)).collect::<Result<Vec<_>>>()?;
    let refs: Vec<&[f64]> = inputs.iter().map(Vec::as_slice).collect();
    let labels: Vec<usize> = batch.iter().map(|c| c.labels.get(model.task)).collect();
    gradient_check(model, &refs, &labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::impute::impute;
    use crate::types::{Labels, ViewObservation};
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn tiny_arch() -> FusionArch {
        FusionArch { trunk_hidden: vec![5], view_width: 4, fusion_width: 6 }
    }

    fn random_collection(r: &mut ChaCha8Rng, id: u64, n: usize, dim: usize) -> Collection {
        let normal = Normal::new(0.0, 1.0).unwrap();
        let views = (0..n)
            .map(|j| {
                if r.random_bool(0.7) {
                    ViewObservation::present(j, (0..dim).map(|_| normal.sample(r)).collect())
                } else {
                    ViewObservation::missing(j, dim)
                }
            })
            .collect();
        let labels =
            Labels::new(r.random_range(0..3), r.random_range(0..5), r.random_range(0..4), r.random_range(0..4));
        Collection { id, subject: 0, views, labels, timestamp: id }
    }

    #[test]
    fn zeroed_model_is_uniform() {
        let m = FusionModel::zeroed(TaskId::RightHandLocation, 4, 3, FusionArch::desk());
        let mut r = ChaCha8Rng::seed_from_u64(1);
        let p = m.forward(&random_collection(&mut r, 0, 4, 3)).unwrap();
        assert!(p.values().iter().all(|&x| (x - 0.2).abs() < 1e-15));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for seed in 0..10u64 {
            let mut r = ChaCha8Rng::seed_from_u64(500 + seed);
            let task = TaskId::ALL[seed as usize % 4];
            let views = 2 + seed as usize % 3;
            let model = FusionModel::new(task, views, 3, tiny_arch(), &mut r);
            let batch: Vec<Collection> = (0..3).map(|i| random_collection(&mut r, i, views, 3)).collect();
            let refs: Vec<&Collection> = batch.iter().collect();
            let err = fusion_gradient_check(&model, &refs).unwrap();
            assert!(err < 1e-4, "seed {seed}: relative error {err}");
            assert_eq!(err, fusion_gradient_check(&model, &refs).unwrap());
        }
    }

    #[test]
    fn constant_parameter_has_zero_gradient() {
        // With every view missing, first-layer weights never influence the
        // loss. Positive biases keep the check away from the ReLU kink.
        let mut r = ChaCha8Rng::seed_from_u64(3);
        let mut model = FusionModel::new(TaskId::LeftHandObject, 2, 3, tiny_arch(), &mut r);
        let c = Collection {
            id: 0,
            subject: 0,
            views: vec![ViewObservation::missing(0, 3), ViewObservation::missing(1, 3)],
            labels: Labels::default(),
            timestamp: 0,
        };
        model.branches[0][0].biases.iter_mut().for_each(|b| *b = 0.1);
        let x = model.input_for(&c).unwrap();
        let (_, grads) = crate::nn::batch_gradient(&model, &[&x], &[1]).unwrap();
        assert!(grads[0].weights.iter().all(|g| g.abs() < 1e-8));
        let err = fusion_gradient_check(&model, &[&c]).unwrap();
        assert!(err < 1e-4);
    }

    #[test]
    fn stale_missing_features_ignored() {
        let mut r = ChaCha8Rng::seed_from_u64(4);
        let model = FusionModel::new(TaskId::RightHandObject, 3, 4, tiny_arch(), &mut r);
        let mut c = random_collection(&mut r, 0, 3, 4);
        c.views[1].present = false;
        c.views[1].features = vec![0.0; 4];
        let mut stale = c.clone();
        stale.views[1].features = vec![9.0, -3.0, 1.0, 2.0];
        assert_eq!(model.forward(&c).unwrap(), model.forward(&stale).unwrap());
        assert_eq!(model.forward(&c).unwrap(), model.forward(&impute(&c)).unwrap());
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let model = FusionModel::zeroed(TaskId::LeftHandLocation, 2, 3, tiny_arch());
        let mut r = ChaCha8Rng::seed_from_u64(5);
        assert!(model.forward(&random_collection(&mut r, 0, 3, 3)).is_err());
        assert!(model.forward(&random_collection(&mut r, 0, 2, 4)).is_err());
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let mut r = ChaCha8Rng::seed_from_u64(6);
        let model = FusionModel::new(TaskId::RightHandLocation, 3, 2, tiny_arch(), &mut r);
        let json = serde_json::to_string(&model.to_checkpoint()).unwrap();
        let back = FusionModel::from_checkpoint(serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(back, model);
    }

    #[test]
    fn presets() {
        assert_eq!(FusionArch::preset("desk").unwrap(), FusionArch::desk());
        let p = FusionArch::preset("paper").unwrap();
        assert_eq!((p.view_width, p.fusion_width), (512, 2048));
        assert!(FusionArch::preset("huge").is_err());
    }
}
