//! End-to-end synthetic benchmark: generate, split, train every model for
//! every task, evaluate, and check the expected orderings.

use serde::{Deserialize, Serialize};

use crate::combiner::Method;
use crate::datagen::{generate, split, GenConfig, GenReport, SplitMode};
use crate::error::Result;
use crate::evaluator::{
    eval_ensembles, eval_single_views, train_task_models, EvalReport, ExperimentConfig, SingleViewSummary, Subset,
};
use crate::types::{Dataset, Split, TaskId};

pub const DEFAULT_FRACTIONS: (f64, f64, f64) = (0.8, 0.1, 0.1);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub gen: GenConfig,
    pub experiment: ExperimentConfig,
    pub fractions: (f64, f64, f64),
    /// Seeds the split and all training.
    pub seed: u64,
}

impl BenchmarkConfig {
    /// Default generator and training settings, everything seeded by `seed`.
    pub fn with_seed(seed: u64) -> Self {
        BenchmarkConfig {
            gen: GenConfig { rng_seed: seed, ..Default::default() },
            experiment: ExperimentConfig::default(),
            fractions: DEFAULT_FRACTIONS,
            seed,
        }
    }
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self::with_seed(42)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskResult {
    pub task: TaskId,
    pub single_views: SingleViewSummary,
    pub all: Vec<EvalReport>,
    pub complete_only: Vec<EvalReport>,
}

impl TaskResult {
    pub fn macro_of(&self, method: Method, subset: Subset) -> Option<f64> {
        let reports = match subset {
            Subset::All => &self.all,
            Subset::CompleteOnly => &self.complete_only,
        };
        reports.iter().find(|r| r.method == method.key()).map(|r| r.macro_accuracy)
    }
}

/// One pass/fail line of the summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub task: Option<TaskId>,
    pub value: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSummary {
    pub seed: u64,
    pub generation: GenReport,
    pub tasks: Vec<TaskResult>,
    pub checks: Vec<Check>,
}

impl BenchmarkSummary {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

/// Trains and evaluates every method on every task of a split dataset.
pub fn evaluate_dataset(dataset: &Dataset, experiment: &ExperimentConfig, seed: u64) -> Result<Vec<TaskResult>> {
    let test = dataset.split_collections(Split::Test);
    let config = experiment.seeded(seed, 0);
    TaskId::ALL
        .iter()
        .map(|&task| {
            let models = train_task_models(dataset, task, &config)?;
            Ok(TaskResult {
                task,
                single_views: eval_single_views(&models.ensemble.models, &test, task)?,
                all: eval_ensembles(&models.ensemble, &models.fusion, &test, task, Subset::All, &Method::ALL)?,
                complete_only: eval_ensembles(
                    &models.ensemble,
                    &models.fusion,
                    &test,
                    task,
                    Subset::CompleteOnly,
                    &Method::ALL,
                )?,
            })
        })
        .collect()
}

/// Expected orderings: fusion at least 0.10 above the best voting method on
/// all collections, fusion within 0.05 between complete-only and all,
/// every voting method worse on all collections than on complete ones,
/// strict best > average > worst over single views, and a complete
/// fraction in [0.01, 0.10].
pub fn checks(generation: &GenReport, tasks: &[TaskResult]) -> Vec<Check> {
    let mut out = vec![Check {
        name: "complete_fraction".into(),
        task: None,
        value: generation.complete_fraction,
        pass: (0.01..=0.10).contains(&generation.complete_fraction),
    }];
    for r in tasks {
        let get = |m: Method, s: Subset| r.macro_of(m, s).unwrap_or(f64::NAN);
        let lf_all = get(Method::LateFusion, Subset::All);
        let lf_complete = get(Method::LateFusion, Subset::CompleteOnly);
        let best_vote = Method::VOTING.iter().map(|&m| get(m, Subset::All)).fold(f64::NEG_INFINITY, f64::max);
        let vote_drop = Method::VOTING
            .iter()
            .map(|&m| get(m, Subset::CompleteOnly) - get(m, Subset::All))
            .fold(f64::INFINITY, f64::min);
        let sv = &r.single_views;
        let spread = (sv.best - sv.average).min(sv.average - sv.worst);
        let task = Some(r.task);
        out.push(Check {
            name: "fusion_over_voting".into(),
            task,
            value: lf_all - best_vote,
            pass: lf_all - best_vote >= 0.10,
        });
        out.push(Check {
            name: "fusion_complete_gap".into(),
            task,
            value: lf_complete - lf_all,
            pass: lf_complete - lf_all <= 0.05,
        });
        out.push(Check { name: "voting_drop".into(), task, value: vote_drop, pass: vote_drop > 0.0 });
        out.push(Check { name: "single_view_order".into(), task, value: spread, pass: spread > 0.0 });
    }
    out
}

/// Generates the dataset and runs [`evaluate_dataset`] and [`checks`].
pub fn run_benchmark(config: &BenchmarkConfig) -> Result<(Dataset, BenchmarkSummary)> {
    let dataset = split(generate(&config.gen)?, config.fractions, SplitMode::Random, config.seed)?;
    let generation = GenReport::of(&dataset);
    let tasks = evaluate_dataset(&dataset, &config.experiment, config.seed)?;
    let checks = checks(&generation, &tasks);
    Ok((dataset, BenchmarkSummary { seed: config.seed, generation, tasks, checks }))
}
