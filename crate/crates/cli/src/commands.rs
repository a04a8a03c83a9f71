use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use mvfusion::benchmark::{run_benchmark, BenchmarkConfig, DEFAULT_FRACTIONS};
use mvfusion::combiner::{Method, VotingEnsemble};
use mvfusion::datagen::{generate, split, GenReport, SplitMode};
use mvfusion::evaluator::{
    eval_ensembles, eval_single_views, loso_crossval, report_csv_rows, reports_svg, train_inducers_logged, EvalReport,
    SingleViewSummary, CSV_HEADER,
};
use mvfusion::fusion::{fusion_train, FusionArch, FusionModel};
use mvfusion::inducer::InducerModel;
use mvfusion::io::{load_dataset, load_splits, save_dataset, save_splits, write_text};
use mvfusion::nn::TrainLog;
use mvfusion::temporal::{Classifier, StreamConfig, StreamProcessor};
use mvfusion::types::OBJECT_NONE;
use mvfusion::{Dataset, Error, Result, Split, TaskId};
use serde::Serialize;

use crate::settings::Settings;

/// Prints a line, ignoring a closed stdout (e.g. piped into `head`).
macro_rules! say {
    ($($arg:tt)*) => {{
        let _ = writeln!(std::io::stdout().lock(), $($arg)*);
    }};
}

const CURVE_HEADER: &str = "model,task,view,epoch,train_loss,holdout_loss";

/// `data/d.jsonl` + `splits` -> `data/d.splits.json`.
pub fn sidecar(path: &Path, tag: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.{tag}.json"))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", dir.display()))))
}

fn pretty<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

fn load_split_dataset(s: &Settings) -> Result<Dataset> {
    let path = s.required_path("dataset")?;
    let ds = load_dataset(&path)?;
    let tags = load_splits(&sidecar(&path, "splits"))?;
    ds.with_split_tags(tags)
}

fn inducer_path(dir: &Path, task: TaskId, view: usize) -> PathBuf {
    dir.join(format!("inducer_{task}_view{view}.json"))
}

fn fusion_path(dir: &Path, task: TaskId) -> PathBuf {
    dir.join(format!("fusion_{task}.json"))
}

pub fn datagen(s: &Settings) -> Result<()> {
    let seed = s.seed()?;
    let gen = s.gen_config(seed)?;
    let out = s.path("out")?.unwrap_or_else(|| PathBuf::from("dataset.jsonl"));
    let ds = split(generate(&gen)?, DEFAULT_FRACTIONS, SplitMode::Random, seed)?;
    save_dataset(&ds, &out)?;
    save_splits(&ds, &sidecar(&out, "splits"))?;
    write_text(&sidecar(&out, "gen"), &pretty(&gen)?)?;
    say!("{}", serde_json::to_string(&GenReport::of(&ds))?);
    Ok(())
}

fn curve_rows(buf: &mut String, model: &str, task: TaskId, view: Option<usize>, log: &TrainLog) {
    let view = view.map(|v| v.to_string()).unwrap_or_default();
    for e in &log.epochs {
        let _ = writeln!(buf, "{model},{task},{view},{},{},{}", e.epoch, e.train_loss, e.holdout_loss);
    }
}

pub fn train(s: &Settings) -> Result<()> {
    let ds = load_split_dataset(s)?;
    let seed = s.seed()?;
    let config = s.experiment()?.seeded(seed, 0);
    let models = s.str("models")?.unwrap_or_else(|| "all".into());
    let out = s.path("out")?.unwrap_or_else(|| PathBuf::from("models"));
    create_dir(&out)?;
    let tasks = s.tasks()?;
    if models == "inducers" || models == "all" {
        let mut curves = format!("{CURVE_HEADER}\n");
        for &task in &tasks {
            for (view, (model, log)) in train_inducers_logged(&ds, task, &config)?.into_iter().enumerate() {
                let path = inducer_path(&out, task, view);
                model.save(&path)?;
                curve_rows(&mut curves, "inducer", task, Some(view), &log);
                say!("{}", path.display());
            }
        }
        write_text(&out.join("curves_inducers.csv"), &curves)?;
    }
    if models == "fusion" || models == "all" {
        let mut curves = format!("{CURVE_HEADER}\n");
        for &task in &tasks {
            let (model, log) = fusion_train(&ds, task, &config.fusion_train, &config.fusion_arch)?;
            let path = fusion_path(&out, task);
            model.save(&path)?;
            curve_rows(&mut curves, "fusion", task, None, &log);
            say!("{}", path.display());
        }
        write_text(&out.join("curves_fusion.csv"), &curves)?;
    }
    if !["inducers", "fusion", "all"].contains(&models.as_str()) {
        return Err(Error::Input(format!("unknown model set `{models}`")));
    }
    Ok(())
}

#[derive(Serialize)]
struct TaskEval {
    task: TaskId,
    single_views: SingleViewSummary,
    reports: Vec<EvalReport>,
}

fn load_inducers(dir: &Path, task: TaskId, num_views: usize) -> Result<Vec<InducerModel>> {
    (0..num_views)
        .map(|v| {
            let model = InducerModel::load(&inducer_path(dir, task, v))?;
            if model.task != task || model.view_id != v {
                return Err(Error::Format(format!(
                    "{} holds a model for another task or view",
                    inducer_path(dir, task, v).display()
                )));
            }
            Ok(model)
        })
        .collect()
}

fn load_fusion(dir: &Path, task: TaskId) -> Result<FusionModel> {
    let model = FusionModel::load(&fusion_path(dir, task))?;
    if model.task != task {
        return Err(Error::Format(format!("{} holds a model for another task", fusion_path(dir, task).display())));
    }
    Ok(model)
}

pub fn eval(s: &Settings) -> Result<()> {
    let ds = load_split_dataset(s)?;
    let checkpoints = s.path("checkpoints")?.or(s.path("out")?).unwrap_or_else(|| PathBuf::from("models"));
    let out = s.path("out")?.unwrap_or_else(|| checkpoints.clone());
    create_dir(&out)?;
    let methods = s.methods()?;
    let subset = mvfusion::evaluator::Subset::from_key(&s.str("subset")?.unwrap_or_else(|| "all".into()))?;
    let test = ds.split_collections(Split::Test);
    let val = ds.split_collections(Split::Val);
    let mut csv = format!("{CSV_HEADER}\n");
    let mut all_reports = Vec::new();
    let mut results = Vec::new();
    for task in s.tasks()? {
        let inducers = load_inducers(&checkpoints, task, ds.num_views)?;
        let single_views = eval_single_views(&inducers, &test, task)?;
        let fusion = if methods.contains(&Method::LateFusion) {
            load_fusion(&checkpoints, task)?
        } else {
            // never evaluated: late fusion is not among the requested methods
            FusionModel::zeroed(task, ds.num_views, ds.feature_dim, FusionArch::desk())
        };
        let ensemble = VotingEnsemble::fit(inducers, &val, task)?;
        let reports = eval_ensembles(&ensemble, &fusion, &test, task, subset, &methods)?;
        for r in single_views.per_view.iter().chain(&reports) {
            csv.extend(report_csv_rows(r).into_iter().map(|row| row + "\n"));
        }
        for r in &reports {
            say!("{} {} {} {:.4}", r.task, r.method, r.subset, r.macro_accuracy);
        }
        all_reports.extend(reports.iter().cloned());
        results.push(TaskEval { task, single_views, reports });
    }
    write_text(&out.join("eval.csv"), &csv)?;
    write_text(&out.join("eval.json"), &pretty(&results)?)?;
    if s.bool("svg")?.unwrap_or(false) {
        write_text(&out.join("eval.svg"), &reports_svg("macro accuracy", &all_reports))?;
    }
    Ok(())
}

pub fn crossval(s: &Settings) -> Result<()> {
    let path = s.required_path("dataset")?;
    let ds = load_dataset(&path)?;
    let seed = s.seed()?;
    let experiment = s.experiment()?;
    let k = s.uint("k")?.map(|k| k as usize).unwrap_or(ds.subjects.len());
    let out = s.path("out")?.unwrap_or_else(|| PathBuf::from("crossval"));
    create_dir(&out)?;
    let mut csv = format!("{CSV_HEADER}\n");
    let mut summary = String::from("task,method,mean,variance\n");
    let mut reports = Vec::new();
    for task in s.tasks()? {
        let report = loso_crossval(&ds, task, k, None, DEFAULT_FRACTIONS, &experiment, seed)?;
        for fold in &report.folds {
            for r in fold.single_views.per_view.iter().chain(&fold.ensembles) {
                csv.extend(report_csv_rows(r).into_iter().map(|row| row + "\n"));
            }
        }
        for st in &report.stats {
            let _ = writeln!(summary, "{task},{},{},{}", st.method, st.mean, st.variance);
            say!("{task} {} mean {:.4} var {:.6}", st.method, st.mean, st.variance);
        }
        reports.push(report);
    }
    write_text(&out.join("crossval.csv"), &csv)?;
    write_text(&out.join("crossval_summary.csv"), &summary)?;
    write_text(&out.join("crossval.json"), &pretty(&reports)?)?;
    Ok(())
}

pub fn stream(s: &Settings) -> Result<()> {
    let ds = load_dataset(&s.required_path("dataset")?)?;
    let checkpoints = s.path("checkpoints")?.unwrap_or_else(|| PathBuf::from("models"));
    let defaults = StreamConfig::default();
    let config = StreamConfig {
        window_size: s.uint("window")?.map(|v| v as usize).unwrap_or(defaults.window_size),
        sustain_threshold: s.uint("sustain")?.map(|v| v as usize).unwrap_or(defaults.sustain_threshold),
        cascade_enabled: s.bool("cascade")?.unwrap_or(false),
        ..defaults
    };
    config.validate()?;
    let tasks = s.tasks()?;
    let mut models: Vec<Option<FusionModel>> = vec![None; 4];
    for &task in &tasks {
        models[task.index()] = Some(load_fusion(&checkpoints, task)?);
        if config.cascade_enabled && task.is_location() {
            let obj = task.object_task();
            if models[obj.index()].is_none() {
                models[obj.index()] = Some(load_fusion(&checkpoints, obj)?);
            }
        }
    }
    let mut processors =
        tasks.iter().map(|&t| StreamProcessor::new(t, &config).map(|p| (t, p))).collect::<Result<Vec<_>>>()?;
    let mut lines = String::new();
    for c in &ds.collections {
        let mut raw: Vec<Option<mvfusion::ProbVector>> = vec![None; 4];
        for (task, proc) in processors.iter_mut() {
            let task = *task;
            if config.cascade_enabled && task.is_location() {
                let obj = task.object_task();
                if raw[obj.index()].is_none() {
                    raw[obj.index()] = Some(models[obj.index()].as_ref().expect("loaded").classify(c)?);
                }
                if raw[obj.index()].as_ref().map(|p| p.argmax()) != Some(OBJECT_NONE) {
                    continue;
                }
            }
            let probs = match raw[task.index()].take() {
                Some(p) => p,
                None => models[task.index()].as_ref().expect("loaded").classify(c)?,
            };
            let frame = proc.push(c.timestamp, &probs)?;
            raw[task.index()] = Some(probs);
            lines.push_str(&serde_json::to_string(&frame)?);
            lines.push('\n');
        }
    }
    match s.path("out")? {
        Some(path) => write_text(&path, &lines),
        None => {
            let _ = std::io::stdout().lock().write_all(lines.as_bytes());
            Ok(())
        }
    }
}

pub fn bench(s: &Settings) -> Result<()> {
    let seed = s.seed()?;
    let config =
        BenchmarkConfig { gen: s.gen_config(seed)?, experiment: s.experiment()?, fractions: DEFAULT_FRACTIONS, seed };
    let out = s.path("out")?.unwrap_or_else(|| PathBuf::from("bench"));
    create_dir(&out)?;
    let (_, summary) = run_benchmark(&config)?;
    let mut csv = format!("{CSV_HEADER}\n");
    for t in &summary.tasks {
        for r in t.single_views.per_view.iter().chain(&t.all).chain(&t.complete_only) {
            csv.extend(report_csv_rows(r).into_iter().map(|row| row + "\n"));
        }
    }
    write_text(&out.join("reports.csv"), &csv)?;
    write_text(&out.join("summary.json"), &pretty(&summary)?)?;
    for c in &summary.checks {
        let task = c.task.map(|t| t.to_string()).unwrap_or_else(|| "-".into());
        say!("{} {} {task} {:+.4}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.value);
    }
    Ok(())
}
