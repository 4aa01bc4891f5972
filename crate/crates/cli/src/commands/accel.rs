use std::collections::BTreeSet;
use std::path::Path;

use annoflow_core::accelerate::{
    apply_weak_rules, import_predictions, select_active, validate_rules, Prediction, Strategy, WeakRule, MODEL_ANNOTATOR,
};
use annoflow_core::Annotation;

use super::annotated;
use crate::error::{CliError, CliResult};
use crate::store::{read_json, read_jsonl_numbered, write_json, write_jsonl, Store};
use crate::Output;

/// Documents that already have resolved annotations or belong to the test set.
fn excluded(store: &Store) -> CliResult<BTreeSet<String>> {
    let manifest = store.manifest()?;
    let mut ids: BTreeSet<String> = annotated(store)?.doc_ids().map(str::to_string).collect();
    ids.extend(manifest.test_set);
    Ok(ids)
}

/// Applies a JSON list of rules to every unannotated training document and
/// writes the matches to `pre/weak.jsonl`.
pub fn weak_label(store: &Store, rules_file: &Path) -> CliResult<Output> {
    let _lock = store.lock()?;
    let manifest = store.manifest()?;
    let rules: Vec<WeakRule> = read_json(rules_file)?
        .ok_or_else(|| CliError::new("not_found", format!("{} does not exist", rules_file.display())))?;
    validate_rules(&rules, &manifest.schema).map_err(|e| CliError::from(e).at(rules_file.display()))?;
    let skip = excluded(store)?;
    let docs = store.docs()?;
    let candidates: Vec<_> = docs.iter().filter(|d| !skip.contains(&d.id)).collect();
    let labeled: Vec<Annotation> = candidates
        .iter()
        .filter_map(|d| apply_weak_rules(d, &rules, &manifest.schema))
        .collect();
    write_jsonl(&store.pre_path("weak"), &labeled)?;
    let mut out = Output::default();
    out.line(format!(
        "weak-labeled {} of {} candidate documents with {} rules",
        labeled.len(),
        candidates.len(),
        rules.len()
    ));
    Ok(out)
}

fn read_predictions(file: &Path) -> CliResult<Vec<Prediction>> {
    Ok(read_jsonl_numbered::<Prediction>(file)?
        .into_iter()
        .map(|(_, p)| p)
        .collect())
}

/// Splits predictions into those for open documents and the count skipped.
fn open_predictions(store: &Store, preds: Vec<Prediction>) -> CliResult<(Vec<Prediction>, usize)> {
    let skip = excluded(store)?;
    let total = preds.len();
    let open: Vec<Prediction> = preds.into_iter().filter(|p| !skip.contains(&p.doc_id)).collect();
    let skipped = total - open.len();
    Ok((open, skipped))
}

/// Stores model predictions as pre-annotations for the next export.
pub fn bootstrap(store: &Store, predictions: &Path) -> CliResult<Output> {
    let _lock = store.lock()?;
    let manifest = store.manifest()?;
    let (preds, skipped) = open_predictions(store, read_predictions(predictions)?)?;
    let mut out = Output::default();
    if skipped > 0 {
        out.warn(format!("skipped {skipped} predictions for annotated or test documents"));
    }
    let set = import_predictions(&preds, &store.docs()?, &manifest.schema, MODEL_ANNOTATOR)
        .map_err(|e| CliError::from(e).at(predictions.display()))?;
    write_jsonl(&store.pre_path("model"), set.iter())?;
    out.line(format!("stored {} model pre-annotations", set.len()));
    Ok(out)
}

/// Ranks unannotated documents by model uncertainty and writes the top `k`
/// ids to `selection.json` for `plan --from-selection`.
pub fn select(store: &Store, predictions: &Path, strategy: Strategy, k: usize, seed: Option<u64>) -> CliResult<Output> {
    let _lock = store.lock()?;
    let manifest = store.manifest()?;
    let (preds, skipped) = open_predictions(store, read_predictions(predictions)?)?;
    let mut out = Output::default();
    if skipped > 0 {
        out.warn(format!("skipped {skipped} predictions for annotated or test documents"));
    }
    let docs = store.doc_index()?;
    if let Some(p) = preds.iter().find(|p| !docs.contains_key(&p.doc_id)) {
        return Err(CliError::new("unknown_document", format!("prediction for unknown document '{}'", p.doc_id))
            .at(predictions.display()));
    }
    let picked = select_active(&preds, strategy, k, seed.unwrap_or(manifest.seed))
        .map_err(|e| CliError::from(e).at(predictions.display()))?;
    write_json(&store.selection_path(), &picked)?;
    out.line(format!("selected {} documents", picked.len()));
    for id in &picked {
        out.line(format!("  {id}"));
    }
    Ok(out)
}
