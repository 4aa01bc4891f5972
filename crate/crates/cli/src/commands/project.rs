use std::collections::BTreeSet;
use std::path::Path;

use annoflow_core::model::validate_document;
use annoflow_core::monitor::SplitStatus;
use annoflow_core::{Document, LabelSchema, ProjectManifest, TaskKind};
use serde::Deserialize;

use super::{annotated, fmt4, train_and_gold};
use crate::error::{CliError, CliResult};
use crate::store::{read_json, read_jsonl_numbered, write_jsonl, Stage, Store};
use crate::Output;

#[derive(Debug, Clone)]
pub struct InitArgs {
    pub task: TaskKind,
    pub classes: Vec<String>,
    pub range: Option<(f64, f64)>,
    pub annotators: Vec<String>,
    pub batch_size: usize,
    pub seed: u64,
}

pub fn init(root: &Path, args: &InitArgs) -> CliResult<Output> {
    let schema = match args.task {
        TaskKind::DocClass => LabelSchema::doc_class(args.classes.clone())?,
        TaskKind::SpanLabel => LabelSchema::span_label(args.classes.clone())?,
        TaskKind::PairRegress => {
            let (lo, hi) = args
                .range
                .ok_or_else(|| CliError::new("invalid_schema", "pair_regress needs --range LO,HI"))?;
            LabelSchema::pair_regress(lo, hi)?
        }
    };
    let manifest = ProjectManifest::new(schema, args.annotators.clone(), args.batch_size, args.seed);
    Store::create(root, &manifest)?;
    let mut out = Output::default();
    out.line(format!(
        "initialized {} project in {} with {} annotators",
        args.task.as_str(),
        root.display(),
        args.annotators.len()
    ));
    Ok(out)
}

/// Appends documents from a JSONL file. Nothing is written unless every line
/// is valid.
pub fn add_docs(store: &Store, file: &Path) -> CliResult<Output> {
    let _lock = store.lock()?;
    let manifest = store.manifest()?;
    let mut docs = store.docs()?;
    let mut seen: BTreeSet<String> = docs.iter().map(|d| d.id.clone()).collect();
    let records: Vec<(usize, Document)> = read_jsonl_numbered(file)?;
    let added = records.len();
    for (line, doc) in records {
        let at = format!("{}:{line}", file.display());
        let report = validate_document(&doc, &manifest.schema);
        if !report.is_valid() {
            return Err(CliError::new("invalid_document", report.to_string()).at(at));
        }
        if !seen.insert(doc.id.clone()) {
            return Err(CliError::new("duplicate_document", format!("duplicate document id '{}'", doc.id)).at(at));
        }
        docs.push(doc);
    }
    write_jsonl(&store.docs_path(), &docs)?;
    let mut out = Output::default();
    out.line(format!("added {added} documents ({} total)", docs.len()));
    Ok(out)
}

#[derive(Debug, Deserialize)]
struct MonitorSnapshot {
    divergence: f64,
    status: SplitStatus,
}

pub fn status(store: &Store) -> CliResult<Output> {
    let manifest = store.manifest()?;
    let docs = store.docs()?;
    let stages = store.planned_stages()?;
    let (train, gold) = train_and_gold(store, &manifest)?;
    let all = annotated(store)?;
    let iteration = stages.iter().map(|s| s.iteration()).max().unwrap_or(0);

    let mut out = Output::default();
    out.line(format!("iteration {iteration}, {} annotated", train.len()));
    out.line(format!(
        "documents: {} total, {} unannotated, test set {} ({} with gold)",
        docs.len(),
        docs.iter().filter(|d| all.get(&d.id).is_none() && !manifest.test_set.contains(&d.id)).count(),
        manifest.test_set.len(),
        gold.len()
    ));
    for stage in &stages {
        out.line(format!("{stage}: {}", stage_state(store, *stage)?));
    }
    let curve = super::measure::read_curve(store)?;
    match curve.last() {
        Some(r) => out.line(format!(
            "last metric: {} = {} at iteration {}",
            r.metric_name,
            fmt4(r.metric_value),
            r.iteration
        )),
        None => out.line("last metric: none"),
    }
    match read_json::<MonitorSnapshot>(&store.monitor_path())? {
        Some(m) => out.line(format!(
            "last divergence: {} ({})",
            fmt4(m.divergence),
            match m.status {
                SplitStatus::Ok => "ok",
                SplitStatus::ConsiderResplit => "consider resplit",
            }
        )),
        None => out.line("last divergence: none"),
    }
    Ok(out)
}

fn stage_state(store: &Store, stage: Stage) -> CliResult<&'static str> {
    Ok(if store.pool_path(stage).is_file() {
        "applied"
    } else if store.merge_path(stage).is_file() {
        "merged, resolving"
    } else if store.review_plan_path(stage).is_file() {
        "in review"
    } else {
        "annotating"
    })
}
