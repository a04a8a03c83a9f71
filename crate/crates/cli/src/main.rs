//! `mvfusion` command-line tool.

mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::settings::Settings;

#[derive(Parser, Debug)]
#[command(name = "mvfusion", version, about = "Multi-view classification with missing views")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Seed for every random choice of the run.
    #[arg(long, value_parser = clap::value_parser!(u64).range(0..=i64::MAX as u64))]
    seed: Option<u64>,
    /// TOML settings file; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one setting, e.g. `gen.num_subjects=4` or `fusion_train.max_epochs=5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output file or directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dataset file (JSON Lines).
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Fusion architecture preset: desk or paper.
    #[arg(long)]
    preset: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset with its split and config sidecars.
    Datagen {
        #[command(flatten)]
        common: Common,
        /// `off` disables occlusion.
        #[arg(long, value_parser = ["on", "off"])]
        occlusion: Option<String>,
    },
    /// Train per-view inducers and/or fusion models.
    Train {
        #[command(flatten)]
        common: Common,
        /// lh_loc, rh_loc, lh_obj, rh_obj or all.
        #[arg(long)]
        task: Option<String>,
        /// Shorthand for `--task all`.
        #[arg(long, conflicts_with = "task")]
        all_tasks: bool,
        #[arg(long, value_parser = ["inducers", "fusion", "all"])]
        models: Option<String>,
    },
    /// Evaluate trained models on the test split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        task: Option<String>,
        /// Comma-separated subset of nv,wmv,bmc,wmv_bmc,lf, or all.
        #[arg(long)]
        methods: Option<String>,
        #[arg(long, value_parser = ["complete-only", "all"])]
        subset: Option<String>,
        /// Directory holding the checkpoints (defaults to --out).
        #[arg(long)]
        checkpoints: Option<PathBuf>,
        /// Also write a bar chart of macro accuracies.
        #[arg(long)]
        svg: bool,
    },
    /// Leave-one-subject-out cross-validation with per-fold retraining.
    Crossval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        task: Option<String>,
        /// Number of folds (defaults to the number of subjects).
        #[arg(long)]
        k: Option<u64>,
    },
    /// Smooth fused predictions over a stream of collections and emit alerts.
    Stream {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        task: Option<String>,
        #[arg(long)]
        checkpoints: Option<PathBuf>,
        /// Moving-average window in frames.
        #[arg(long)]
        window: Option<u64>,
        /// Consecutive distraction frames before an alert.
        #[arg(long)]
        sustain: Option<u64>,
        /// Skip the location model while the same hand holds an object.
        #[arg(long)]
        cascade: bool,
    },
    /// Generate, train and evaluate the default benchmark.
    Bench {
        #[command(flatten)]
        common: Common,
    },
}

fn settings_for(common: &Common) -> mvfusion::Result<Settings> {
    let mut s = Settings::load(common.config.as_deref(), &common.set)?;
    s.flag("seed", common.seed.map(|v| v as i64));
    s.flag_path("out", common.out.as_ref());
    s.flag_path("dataset", common.dataset.as_ref());
    s.flag("preset", common.preset.clone());
    Ok(s)
}

fn run(cli: Cli) -> mvfusion::Result<()> {
    match cli.command {
        Command::Datagen { common, occlusion } => {
            let mut s = settings_for(&common)?;
            s.flag("occlusion", occlusion);
            commands::datagen(&s)
        }
        Command::Train { common, task, all_tasks, models } => {
            let mut s = settings_for(&common)?;
            s.flag("task", if all_tasks { Some("all".to_string()) } else { task });
            s.flag("models", models);
            commands::train(&s)
        }
        Command::Eval { common, task, methods, subset, checkpoints, svg } => {
            let mut s = settings_for(&common)?;
            s.flag("task", task);
            s.flag("methods", methods);
            s.flag("subset", subset);
            s.flag_path("checkpoints", checkpoints.as_ref());
            s.flag("svg", svg.then_some(true));
            commands::eval(&s)
        }
        Command::Crossval { common, task, k } => {
            let mut s = settings_for(&common)?;
            s.flag("task", task);
            s.flag("k", k.map(|v| v as i64));
            commands::crossval(&s)
        }
        Command::Stream { common, task, checkpoints, window, sustain, cascade } => {
            let mut s = settings_for(&common)?;
            s.flag("task", task);
            s.flag_path("checkpoints", checkpoints.as_ref());
            s.flag("window", window.map(|v| v as i64));
            s.flag("sustain", sustain.map(|v| v as i64));
            s.flag("cascade", cascade.then_some(true));
            commands::stream(&s)
        }
        Command::Bench { common } => commands::bench(&settings_for(&common)?),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error[usage]: {first}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {}", e.kind(), e.to_string().replace('\n', " "));
            ExitCode::from(1)
        }
    }
}
