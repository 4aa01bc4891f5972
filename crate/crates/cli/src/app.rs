//! Command-line grammar and dispatch.

use std::path::{Path, PathBuf};

use annoflow_core::accelerate::Strategy;
use annoflow_core::agreement::AgreementMetric;
use annoflow_core::metrics::Aggregation;
use annoflow_core::partition::PlanMode;
use annoflow_core::schema_ops::ClassAdjustment;
use annoflow_core::TaskKind;
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;

use crate::commands::{self, AgreementArgs, CurveArgs, InitArgs, PlanArgs};
use crate::error::{CliError, CliResult};
use crate::store::{write_atomic, Stage, Store};
use crate::{server, Output};

/// Parses a snake_case enum value through its serde representation.
fn snake<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| format!("unknown value '{s}'"))
}

fn task_kind(s: &str) -> Result<TaskKind, String> {
    snake(s)
}

fn plan_mode(s: &str) -> Result<PlanMode, String> {
    snake(s)
}

fn strategy(s: &str) -> Result<Strategy, String> {
    snake(s)
}

fn aggregation(s: &str) -> Result<Aggregation, String> {
    snake(s)
}

fn agreement_metric(s: &str) -> Result<AgreementMetric, String> {
    snake(s)
}

fn stage(s: &str) -> Result<Stage, String> {
    Stage::parse(s).map_err(|e| e.message)
}

fn range(s: &str) -> Result<(f64, f64), String> {
    let (lo, hi) = s.split_once(',').ok_or("expected LO,HI")?;
    let parse = |x: &str| x.trim().parse::<f64>().map_err(|e| format!("'{x}': {e}"));
    Ok((parse(lo)?, parse(hi)?))
}

#[derive(Debug, Parser)]
#[command(name = "annoflow", version, about = "Iterative text-annotation project workflow")]
pub struct Cli {
    /// Project directory.
    #[arg(long, global = true, env = "ANNOFLOW_ROOT", default_value = ".")]
    pub root: PathBuf,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Create a project in an empty directory.
    Init {
        #[arg(long, value_parser = task_kind)]
        task: TaskKind,
        /// Comma-separated class names (doc_class, span_label).
        #[arg(long, value_delimiter = ',')]
        classes: Vec<String>,
        /// Score range LO,HI (pair_regress).
        #[arg(long, value_parser = range)]
        range: Option<(f64, f64)>,
        #[arg(long, value_delimiter = ',', required = true)]
        annotators: Vec<String>,
        #[arg(long, default_value_t = 50)]
        batch_size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Append documents from a JSONL file.
    AddDocs { file: PathBuf },
    /// Show iteration, pool sizes, last metric and last divergence.
    Status,
    /// Plan the test set or the next batch.
    Plan {
        #[arg(value_parser = plan_mode, default_value = "simple")]
        mode: PlanMode,
        #[arg(long)]
        size: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Plan the held-out test set.
        #[arg(long)]
        test: bool,
        /// Use the documents picked by `select`.
        #[arg(long)]
        from_selection: bool,
    },
    /// Write an annotator's tasks as JSONL.
    Export {
        #[arg(long)]
        annotator: String,
        #[command(flatten)]
        target: Target,
        /// Output file; stdout if omitted.
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Import an annotator's annotations from JSONL.
    Import {
        file: PathBuf,
        #[arg(long)]
        annotator: String,
        #[command(flatten)]
        target: Target,
    },
    /// Merge the annotations of a stage and list the conflicts.
    Merge {
        #[arg(long, value_parser = stage)]
        stage: Option<Stage>,
    },
    /// Serve the conflict-resolution API.
    Serve {
        #[arg(long, value_parser = stage)]
        stage: Option<Stage>,
        #[arg(long, default_value_t = 8640)]
        port: u16,
        /// Stop once every conflict has a resolution.
        #[arg(long)]
        exit_when_resolved: bool,
    },
    /// Apply resolutions and add the stage to the resolved pool.
    Apply {
        #[arg(long, value_parser = stage)]
        stage: Option<Stage>,
        /// JSON list of resolutions; the saved ones if omitted.
        #[arg(long)]
        resolutions: Option<PathBuf>,
    },
    /// Inter-annotator agreement of a cross-annotated stage or of files.
    Agreement {
        #[arg(long, value_parser = stage)]
        stage: Option<Stage>,
        #[arg(long, value_parser = agreement_metric)]
        metric: Option<AgreementMetric>,
        /// Annotation files, one annotator each.
        files: Vec<PathBuf>,
    },
    /// Evaluate predictions against the test set.
    Eval {
        predictions: PathBuf,
        #[arg(long, value_parser = aggregation, default_value = "macro")]
        aggregation: Aggregation,
        /// Append the headline metric to the learning curve.
        #[arg(long)]
        record: bool,
    },
    /// Record a learning-curve point and report plateau status.
    Curve {
        #[arg(long)]
        value: Option<f64>,
        #[arg(long)]
        metric: Option<String>,
        #[arg(long)]
        iteration: Option<u32>,
    },
    /// Compare train and test label distributions.
    Monitor,
    /// Draw a new test set from all resolved documents.
    Resplit {
        #[arg(long, default_value_t = 0.2)]
        fraction: f64,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        stratified: bool,
    },
    /// Pre-annotate with weak rules (JSON list).
    WeakLabel { rules: PathBuf },
    /// Store model predictions as pre-annotations.
    Bootstrap { predictions: PathBuf },
    /// Pick the next batch by model uncertainty.
    Select {
        predictions: PathBuf,
        #[arg(long, value_parser = strategy, default_value = "least_confidence")]
        strategy: Strategy,
        #[arg(long, short)]
        k: usize,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Change the class system of the whole store.
    Adjust {
        #[command(subcommand)]
        op: AdjustOp,
    },
    /// Write a guidelines.md skeleton.
    Guidelines {
        #[arg(long, default_value = "")]
        description: String,
        #[arg(long, default_value_t = 1)]
        examples: usize,
    },
}

#[derive(Debug, Clone, Copy, Args)]
pub struct Target {
    #[arg(long, value_parser = stage)]
    pub stage: Option<Stage>,
    /// The review assignment of the stage.
    #[arg(long)]
    pub review: bool,
}

#[derive(Debug, Subcommand)]
pub enum AdjustOp {
    /// Remove a class.
    Drop { class: String },
    /// Relabel SOURCE as TARGET and remove SOURCE.
    Incorporate { source: String, target: String },
    /// Relabel all SOURCES as TARGET.
    Merge {
        #[arg(long)]
        into: String,
        #[arg(required = true, num_args = 2..)]
        sources: Vec<String>,
    },
}

impl AdjustOp {
    fn adjustment(&self) -> ClassAdjustment {
        match self {
            AdjustOp::Drop { class } => ClassAdjustment::drop(class),
            AdjustOp::Incorporate { source, target } => ClassAdjustment::incorporate(source, target),
            AdjustOp::Merge { into, sources } => ClassAdjustment::Merge {
                sources: sources.clone(),
                target: into.clone(),
            },
        }
    }
}

fn write_tasks(tasks: &[commands::Task], out: Option<&Path>) -> CliResult<Output> {
    let mut text = String::new();
    for t in tasks {
        text.push_str(&serde_json::to_string(t).map_err(|e| CliError::new("serialize", e.to_string()))?);
        text.push('\n');
    }
    let mut output = Output::default();
    match out {
        Some(path) => {
            write_atomic(path, text.as_bytes())?;
            output.line(format!("wrote {} tasks to {}", tasks.len(), path.display()));
        }
        None => output.lines.extend(text.lines().map(str::to_string)),
    }
    Ok(output)
}

/// Runs one command against the store at `cli.root`.
pub fn run(cli: Cli) -> CliResult<Output> {
    let root = cli.root;
    if let Command::Init {
        task,
        classes,
        range,
        annotators,
        batch_size,
        seed,
    } = cli.command
    {
        let args = InitArgs {
            task,
            classes,
            range,
            annotators,
            batch_size,
            seed,
        };
        return commands::init(&root, &args);
    }
    let store = Store::open(&root)?;
    match cli.command {
        Command::Init { .. } => unreachable!(),
        Command::AddDocs { file } => commands::add_docs(&store, &file),
        Command::Status => commands::status(&store),
        Command::Plan {
            mode,
            size,
            seed,
            test,
            from_selection,
        } => commands::plan(
            &store,
            &PlanArgs {
                mode,
                size,
                seed,
                test,
                from_selection,
            },
        ),
        Command::Export { annotator, target, out } => {
            let tasks = commands::export_tasks(&store, &annotator, target.stage, target.review)?;
            write_tasks(&tasks, out.as_deref())
        }
        Command::Import {
            file,
            annotator,
            target,
        } => commands::import(&store, &file, &annotator, target.stage, target.review),
        Command::Merge { stage } => commands::merge(&store, stage),
        Command::Serve {
            stage,
            port,
            exit_when_resolved,
        } => {
            server::serve(&store, stage, port, exit_when_resolved, |addr, api| {
                println!("serving {} on http://{addr}", api.stage());
            })?;
            let mut out = Output::default();
            out.line("server stopped");
            Ok(out)
        }
        Command::Apply { stage, resolutions } => commands::apply_resolutions(&store, stage, resolutions.as_deref()),
        Command::Agreement { stage, metric, files } => {
            commands::agreement(&store, &AgreementArgs { stage, files, metric })
        }
        Command::Eval {
            predictions,
            aggregation,
            record,
        } => commands::eval(&store, &predictions, aggregation, record),
        Command::Curve {
            value,
            metric,
            iteration,
        } => commands::curve(
            &store,
            &CurveArgs {
                value,
                metric,
                iteration,
            },
        ),
        Command::Monitor => commands::monitor_split(&store),
        Command::Resplit {
            fraction,
            seed,
            stratified,
        } => commands::resplit(&store, fraction, seed, stratified),
        Command::WeakLabel { rules } => commands::weak_label(&store, &rules),
        Command::Bootstrap { predictions } => commands::bootstrap(&store, &predictions),
        Command::Select {
            predictions,
            strategy,
            k,
            seed,
        } => commands::select(&store, &predictions, strategy, k, seed),
        Command::Adjust { op } => commands::adjust(&store, &op.adjustment()),
        Command::Guidelines { description, examples } => commands::guidelines(&store, &description, examples),
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_args<I, T>(args: I) -> CliResult<Output>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| CliError::new("usage", e.to_string().trim().to_string()))?;
    run(cli)
}
