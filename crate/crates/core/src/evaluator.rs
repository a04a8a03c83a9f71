//! Measurement protocols: macro-averaged accuracy, best/worst/average of
//! the single-view models, ensemble evaluation on complete-only or all
//! collections, and leave-one-subject-out cross-validation.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::combiner::{Method, VotingEnsemble};
use crate::datagen::{split, SplitMode};
use crate::error::{Error, Result};
use crate::fusion::{fusion_train, FusionArch, FusionModel};
use crate::inducer::{self, InducerModel};
use crate::nn::{TrainConfig, TrainLog};
use crate::types::{complete, complete_fraction, Collection, Dataset, Split, TaskId};

/// Which collections an evaluation runs on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Subset {
    #[serde(rename = "complete-only")]
    CompleteOnly,
    #[serde(rename = "all")]
    All,
}

impl Subset {
    pub fn key(self) -> &'static str {
        match self {
            Subset::CompleteOnly => "complete-only",
            Subset::All => "all",
        }
    }

    pub fn from_key(key: &str) -> Result<Self> {
        match key {
            "complete-only" => Ok(Subset::CompleteOnly),
            "all" => Ok(Subset::All),
            other => Err(Error::input(format!("unknown subset `{other}`"))),
        }
    }

    pub fn filter<'a>(self, collections: &[&'a Collection]) -> Vec<&'a Collection> {
        match self {
            Subset::All => collections.to_vec(),
            Subset::CompleteOnly => collections.iter().copied().filter(|c| complete(c)).collect(),
        }
    }
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassAccuracy {
    pub class: usize,
    pub support: usize,
    pub correct: usize,
    /// `None` for classes without support.
    pub accuracy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MacroAccuracy {
    pub per_class: Vec<ClassAccuracy>,
    /// Mean accuracy over classes with support.
    pub macro_accuracy: f64,
}

impl MacroAccuracy {
    pub fn unsupported(&self) -> Vec<usize> {
        self.per_class.iter().filter(|c| c.support == 0).map(|c| c.class).collect()
    }
}

/// Per-class accuracy and their mean over supported classes.
pub fn macro_accuracy(predictions: &[usize], labels: &[usize], num_classes: usize) -> Result<MacroAccuracy> {
    if predictions.is_empty() {
        return Err(Error::input("no predictions to score"));
    }
    if predictions.len() != labels.len() {
        return Err(Error::input("predictions and labels differ in length"));
    }
    let mut support = vec![0usize; num_classes];
    let mut correct = vec![0usize; num_classes];
    for (&p, &y) in predictions.iter().zip(labels) {
        if y >= num_classes {
            return Err(Error::input(format!("label {y} out of range")));
        }
        support[y] += 1;
        correct[y] += (p == y) as usize;
    }
    let per_class: Vec<ClassAccuracy> = (0..num_classes)
        .map(|c| ClassAccuracy {
            class: c,
            support: support[c],
            correct: correct[c],
            accuracy: (support[c] > 0).then(|| correct[c] as f64 / support[c] as f64),
        })
        .collect();
    let supported: Vec<f64> = per_class.iter().filter_map(|c| c.accuracy).collect();
    let macro_accuracy = supported.iter().sum::<f64>() / supported.len() as f64;
    Ok(MacroAccuracy { per_class, macro_accuracy })
}

/// Result of one method on one task and subset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: TaskId,
    /// Method key (`nv`, `wmv`, `bmc`, `wmv_bmc`, `lf`) or `view<j>`.
    pub method: String,
    pub subset: Subset,
    pub fold: Option<usize>,
    pub per_class: Vec<ClassAccuracy>,
    pub macro_accuracy: f64,
    /// Fraction of complete collections in the evaluated test set.
    pub complete_fraction: f64,
    pub num_samples: usize,
}

impl EvalReport {
    fn new(
        task: TaskId,
        method: String,
        subset: Subset,
        scores: MacroAccuracy,
        complete_fraction: f64,
        n: usize,
    ) -> Self {
        EvalReport {
            task,
            method,
            subset,
            fold: None,
            per_class: scores.per_class,
            macro_accuracy: scores.macro_accuracy,
            complete_fraction,
            num_samples: n,
        }
    }
}

fn labels_of(collections: &[&Collection], task: TaskId) -> Vec<usize> {
    collections.iter().map(|c| c.labels.get(task)).collect()
}

/// Best, worst and mean macro accuracy over the per-view models.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SingleViewSummary {
    pub task: TaskId,
    pub per_view: Vec<EvalReport>,
    pub best: f64,
    pub worst: f64,
    pub average: f64,
}

/// Scores each view's model on every test collection, blank inputs
/// included.
pub fn eval_single_views(models: &[InducerModel], test: &[&Collection], task: TaskId) -> Result<SingleViewSummary> {
    if test.is_empty() {
        return Err(Error::EmptySubset("empty test set".into()));
    }
    if models.is_empty() {
        return Err(Error::input("no view models"));
    }
    let labels = labels_of(test, task);
    let cf = complete_fraction(test.iter().copied());
    let mut per_view = Vec::with_capacity(models.len());
    for model in models {
        let preds = test.iter().map(|c| model.predict(c).map(|p| p.argmax())).collect::<Result<Vec<_>>>()?;
        let scores = macro_accuracy(&preds, &labels, task.num_classes())?;
        per_view.push(EvalReport::new(task, format!("view{}", model.view_id), Subset::All, scores, cf, test.len()));
    }
    let accs: Vec<f64> = per_view.iter().map(|r| r.macro_accuracy).collect();
    Ok(SingleViewSummary {
        task,
        best: accs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        worst: accs.iter().copied().fold(f64::INFINITY, f64::min),
        average: accs.iter().sum::<f64>() / accs.len() as f64,
        per_view,
    })
}

/// Predicted classes of `method` on `collections`.
pub fn predict_method(
    method: Method,
    ensemble: &VotingEnsemble,
    fusion: &FusionModel,
    collections: &[&Collection],
) -> Result<Vec<usize>> {
    collections
        .iter()
        .map(|c| match method {
            Method::LateFusion => fusion.forward(c).map(|p| p.argmax()),
            voting => ensemble.predict(voting, c).map(|o| o.class),
        })
        .collect()
}

/// One report per method on the requested subset of `test`.
pub fn eval_ensembles(
    ensemble: &VotingEnsemble,
    fusion: &FusionModel,
    test: &[&Collection],
    task: TaskId,
    subset: Subset,
    methods: &[Method],
) -> Result<Vec<EvalReport>> {
    if test.is_empty() {
        return Err(Error::EmptySubset("empty test set".into()));
    }
    let cf = complete_fraction(test.iter().copied());
    let chosen = subset.filter(test);
    if chosen.is_empty() {
        return Err(Error::EmptySubset(format!("no {subset} collections for task {task}")));
    }
    let labels = labels_of(&chosen, task);
    methods
        .iter()
        .map(|&method| {
            let preds = predict_method(method, ensemble, fusion, &chosen)?;
            let scores = macro_accuracy(&preds, &labels, task.num_classes())?;
            Ok(EvalReport::new(task, method.key().to_string(), subset, scores, cf, chosen.len()))
        })
        .collect()
}

/// Training settings for a full set of models on one task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub inducer_train: TrainConfig,
    pub inducer_hidden: Vec<usize>,
    pub fusion_train: TrainConfig,
    pub fusion_arch: FusionArch,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            inducer_train: TrainConfig { learning_rate: 0.05, max_epochs: 30, ..Default::default() },
            inducer_hidden: crate::inducer::DEFAULT_HIDDEN.to_vec(),
            fusion_train: TrainConfig { learning_rate: 0.05, max_epochs: 30, ..Default::default() },
            fusion_arch: FusionArch::desk(),
        }
    }
}

impl ExperimentConfig {
    /// Copy whose training seeds are derived from `seed` and `salt`.
    pub fn seeded(&self, seed: u64, salt: u64) -> Self {
        let mut out = self.clone();
        out.inducer_train.rng_seed = mix(seed, salt, 1);
        out.fusion_train.rng_seed = mix(seed, salt, 2);
        out
    }
}

/// Deterministic seed derivation (splitmix64 finalizer).
pub fn mix(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Everything trained for one task.
#[derive(Clone, Debug)]
pub struct TaskModels {
    pub ensemble: VotingEnsemble,
    pub fusion: FusionModel,
}

/// Trains the per-view inducers, fits the voting discounts on the val
/// split and trains the fusion model.
pub fn train_task_models(dataset: &Dataset, task: TaskId, config: &ExperimentConfig) -> Result<TaskModels> {
    let inducers = train_inducers(dataset, task, config)?;
    let val = dataset.split_collections(Split::Val);
    let ensemble = VotingEnsemble::fit(inducers, &val, task)?;
    let (fusion, _) = fusion_train(dataset, task, &config.fusion_train, &config.fusion_arch)?;
    Ok(TaskModels { ensemble, fusion })
}

pub fn train_inducers(dataset: &Dataset, task: TaskId, config: &ExperimentConfig) -> Result<Vec<InducerModel>> {
    Ok(train_inducers_logged(dataset, task, config)?.into_iter().map(|(m, _)| m).collect())
}

/// Per-view inducers with their training curves, in view order.
pub fn train_inducers_logged(
    dataset: &Dataset,
    task: TaskId,
    config: &ExperimentConfig,
) -> Result<Vec<(InducerModel, TrainLog)>> {
    (0..dataset.num_views)
        .map(|v| {
            let mut tc = config.inducer_train.clone();
            tc.rng_seed = mix(tc.rng_seed, v as u64, 0);
            inducer::train(dataset, v, task, &tc, &config.inducer_hidden)
        })
        .collect()
}

/// Mean and population variance of one method's macro accuracy over folds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldStats {
    pub method: String,
    pub mean: f64,
    pub variance: f64,
    pub folds: Vec<f64>,
}

impl FoldStats {
    pub fn from_values(method: String, folds: Vec<f64>) -> Self {
        let n = folds.len().max(1) as f64;
        let mean = folds.iter().sum::<f64>() / n;
        let variance = folds.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        FoldStats { method, mean, variance, folds }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub held_out_subject: u32,
    pub single_views: SingleViewSummary,
    pub ensembles: Vec<EvalReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossvalReport {
    pub task: TaskId,
    pub k: usize,
    pub folds: Vec<FoldResult>,
    /// Per method, per view (`view<j>`) and `average_of_n`.
    pub stats: Vec<FoldStats>,
}

impl CrossvalReport {
    pub fn stat(&self, method: &str) -> Option<&FoldStats> {
        self.stats.iter().find(|s| s.method == method)
    }
}

/// Fails when any train or val subject also appears in the test split.
pub fn assert_no_subject_leakage(dataset: &Dataset) -> Result<()> {
    let test: BTreeSet<u32> = dataset.split_collections(Split::Test).iter().map(|c| c.subject).collect();
    for split_kind in [Split::Train, Split::Val] {
        if let Some(c) = dataset.split_collections(split_kind).iter().find(|c| test.contains(&c.subject)) {
            return Err(Error::input(format!(
                "subject leakage: subject {} appears in {split_kind:?} and test",
                c.subject
            )));
        }
    }
    Ok(())
}

/// Leave-one-subject-out cross-validation over the first `k` subjects of
/// `rotation` (the dataset's subject list when `None`). Each fold retrains
/// every model with the held-out subject excluded from train and val.
pub fn loso_crossval(
    dataset: &Dataset,
    task: TaskId,
    k: usize,
    rotation: Option<&[u32]>,
    fractions: (f64, f64, f64),
    config: &ExperimentConfig,
    seed: u64,
) -> Result<CrossvalReport> {
    let rotation = rotation.unwrap_or(&dataset.subjects);
    if k == 0 || k > rotation.len() || k > dataset.subjects.len() {
        return Err(Error::input(format!("k = {k} but only {} subjects available", rotation.len())));
    }
    let mut folds = Vec::with_capacity(k);
    for (fold, &subject) in rotation.iter().take(k).enumerate() {
        let tagged = split(dataset.clone(), fractions, SplitMode::BySubject(subject), mix(seed, fold as u64, 7))?;
        assert_no_subject_leakage(&tagged)?;
        let models = train_task_models(&tagged, task, &config.seeded(seed, fold as u64))?;
        let test = tagged.split_collections(Split::Test);
        let mut single_views = eval_single_views(&models.ensemble.models, &test, task)?;
        single_views.per_view.iter_mut().for_each(|r| r.fold = Some(fold));
        let mut ensembles = eval_ensembles(&models.ensemble, &models.fusion, &test, task, Subset::All, &Method::ALL)?;
        ensembles.iter_mut().for_each(|r| r.fold = Some(fold));
        folds.push(FoldResult { fold, held_out_subject: subject, single_views, ensembles });
    }
    folds.sort_by_key(|f| f.fold);

    let mut stats = Vec::new();
    for method in Method::ALL {
        let vals = folds
            .iter()
            .filter_map(|f| f.ensembles.iter().find(|r| r.method == method.key()).map(|r| r.macro_accuracy))
            .collect();
        stats.push(FoldStats::from_values(method.key().to_string(), vals));
    }
    for v in 0..dataset.num_views {
        let vals = folds.iter().map(|f| f.single_views.per_view[v].macro_accuracy).collect();
        stats.push(FoldStats::from_values(format!("view{v}"), vals));
    }
    stats.push(FoldStats::from_values(
        "average_of_n".to_string(),
        folds.iter().map(|f| f.single_views.average).collect(),
    ));
    Ok(CrossvalReport { task, k, folds, stats })
}

/// CSV header for [`report_csv_rows`].
pub const CSV_HEADER: &str = "task,method,subset,fold,class,support,accuracy";

/// One CSV line per class of `report`; unsupported classes have an empty
/// accuracy cell.
pub fn report_csv_rows(report: &EvalReport) -> Vec<String> {
    let fold = report.fold.map(|f| f.to_string()).unwrap_or_default();
    let row = |class: &str, support: usize, acc: String| {
        format!("{},{},{},{},{},{},{}", report.task, report.method, report.subset, fold, class, support, acc)
    };
    let mut rows: Vec<String> = report
        .per_class
        .iter()
        .map(|c| row(report.task.classes()[c.class], c.support, c.accuracy.map(|a| a.to_string()).unwrap_or_default()))
        .collect();
    rows.push(row("macro", report.num_samples, report.macro_accuracy.to_string()));
    rows
}

/// Horizontal bar chart of macro accuracies, one bar per report.
pub fn reports_svg(title: &str, reports: &[EvalReport]) -> String {
    const ROW: usize = 22;
    const LABEL: usize = 200;
    const BAR: f64 = 400.0;
    let height = 40 + ROW * reports.len();
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{height}\" font-family=\"sans-serif\" font-size=\"12\">\n",
        LABEL + BAR as usize + 70
    );
    svg.push_str(&format!("<text x=\"4\" y=\"18\" font-weight=\"bold\">{}</text>\n", escape(title)));
    for (i, r) in reports.iter().enumerate() {
        let y = 30 + ROW * i;
        let w = BAR * r.macro_accuracy.clamp(0.0, 1.0);
        svg.push_str(&format!(
            "<text x=\"4\" y=\"{}\">{} {} {}</text>\n<rect x=\"{LABEL}\" y=\"{y}\" width=\"{w:.1}\" height=\"{}\" fill=\"#4a78a8\"/>\n<text x=\"{:.1}\" y=\"{}\">{:.3}</text>\n",
            y + 14,
            r.task,
            escape(&r.method),
            r.subset,
            ROW - 6,
            LABEL as f64 + w + 4.0,
            y + 14,
            r.macro_accuracy
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
