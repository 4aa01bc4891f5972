use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use annoflow_core::merge::{apply_resolutions as apply_core, merge_part, MergedDocument, Resolution};
use annoflow_core::model::validate_annotation;
use annoflow_core::partition::{assign_cross, assign_review, draw_batch, split_batch, BatchPlan, PlanMode, Role};
use annoflow_core::{Annotation, AnnotationSet, Document};
use serde::{Deserialize, Serialize};

use super::{annotated, require_plan, resolve_stage};
use crate::error::{CliError, CliResult};
use crate::store::{read_json, read_jsonl_numbered, write_json, write_jsonl, Stage, Store, POOL_ANNOTATOR};
use crate::Output;

#[derive(Debug, Clone)]
pub struct PlanArgs {
    pub mode: PlanMode,
    pub size: Option<usize>,
    pub seed: Option<u64>,
    pub test: bool,
    pub from_selection: bool,
}

/// Plans the next batch (or the test set with `test`).
///
/// `review` mode adds a review assignment to the latest simple plan instead of
/// drawing new documents.
pub fn plan(store: &Store, args: &PlanArgs) -> CliResult<Output> {
    let _lock = store.lock()?;
    let mut manifest = store.manifest()?;
    let mut out = Output::default();

    if args.mode == PlanMode::Review {
        let stage = if args.test { Stage::Test } else { resolve_stage(store, None)? };
        let base = require_plan(store, stage)?;
        if store.review_plan_path(stage).is_file() {
            return Err(CliError::new("already_planned", format!("stage {stage} already has a review plan")));
        }
        if store.merge_path(stage).is_file() {
            return Err(CliError::new("already_merged", format!("stage {stage} is already merged")));
        }
        let review = assign_review(&base)?;
        write_json(&store.review_plan_path(stage), &review)?;
        out.line(format!("planned review of {stage}"));
        describe(&review, &mut out);
        return Ok(out);
    }

    let stages = store.planned_stages()?;
    let stage = if args.test {
        if stages.contains(&Stage::Test) {
            return Err(CliError::new("already_planned", "the test set is already planned and frozen"));
        }
        Stage::Test
    } else {
        if !stages.contains(&Stage::Test) {
            return Err(CliError::new(
                "no_test_set",
                "create the test set first with `annoflow plan --test`",
            ));
        }
        let last = stages.iter().map(|s| s.iteration()).max().unwrap_or(0);
        if last > 0 && !store.pool_path(Stage::Iter(last)).is_file() {
            return Err(CliError::new(
                "stage_pending",
                format!("iteration {last} is not applied yet; finish it before planning the next batch"),
            ));
        }
        Stage::Iter(last + 1)
    };

    let docs = store.docs()?;
    let done = annotated(store)?;
    let pending: BTreeSet<String> = stages
        .iter()
        .filter(|s| !store.pool_path(**s).is_file())
        .map(|s| require_plan(store, *s).map(|p| p.doc_ids().map(str::to_string).collect::<Vec<_>>()))
        .collect::<CliResult<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let test: BTreeSet<&str> = manifest.test_set.iter().map(String::as_str).collect();
    let candidates: Vec<String> = docs
        .iter()
        .map(|d| d.id.clone())
        .filter(|id| done.get(id).is_none() && !pending.contains(id) && !test.contains(id.as_str()))
        .collect();

    let size = args.size.unwrap_or(manifest.batch_size);
    if size == 0 {
        return Err(CliError::new("invalid_parameter", "--size must be ≥ 1"));
    }
    let seed = args.seed.unwrap_or(manifest.seed.wrapping_add(u64::from(stage.iteration())));
    let batch: Vec<String> = if args.from_selection {
        let selection: Vec<String> = read_json(&store.selection_path())?
            .ok_or_else(|| CliError::new("no_selection", "no selection.json; run `annoflow select` first"))?;
        let allowed: BTreeSet<&String> = candidates.iter().collect();
        let (usable, skipped): (Vec<String>, Vec<String>) =
            selection.into_iter().partition(|id| allowed.contains(id));
        if !skipped.is_empty() {
            out.warn(format!("{} selected documents are no longer available and were skipped", skipped.len()));
        }
        usable.into_iter().take(size).collect()
    } else {
        draw_batch(&candidates, size, seed)
    };
    if batch.is_empty() {
        return Err(CliError::new("no_candidates", "no unannotated documents left to plan"));
    }
    if batch.len() < size {
        out.warn(format!(
            "only {} unannotated documents available; planning the remainder",
            batch.len()
        ));
    }

    let plan = match args.mode {
        PlanMode::Simple => split_batch(stage.iteration(), &batch, &manifest.annotators, seed)?,
        PlanMode::Cross => assign_cross(stage.iteration(), &batch, &manifest.annotators, seed)?,
        PlanMode::Review => unreachable!("handled above"),
    };
    write_json(&store.plan_path(stage), &plan)?;
    if stage == Stage::Test {
        let mut ids = batch.clone();
        ids.sort();
        manifest.test_set = ids;
        store.write_manifest(&manifest)?;
    }
    out.line(format!(
        "planned {stage} ({}): {} documents in {} parts",
        plan.mode.as_str(),
        batch.len(),
        plan.assignments.len()
    ));
    describe(&plan, &mut out);
    Ok(out)
}

fn describe(plan: &BatchPlan, out: &mut Output) {
    for (annotator, tasks) in plan.workloads() {
        out.line(format!("  {annotator}: {} tasks", tasks.len()));
    }
}

/// One exported task: the document plus any pre-annotation to correct.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Task {
    pub doc_id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text_b: Option<String>,
    pub role: Role,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pre_annotation: Option<Annotation>,
}

fn assigned_docs(plan: &BatchPlan, annotator: &str) -> Vec<String> {
    plan.assignments_of(annotator)
        .flat_map(|a| a.part.doc_ids.iter().cloned())
        .collect()
}

/// Tasks of `annotator` in `stage`. With `review`, the tasks carry the
/// original annotation to be corrected.
pub fn export_tasks(store: &Store, annotator: &str, stage: Option<Stage>, review: bool) -> CliResult<Vec<Task>> {
    let stage = resolve_stage(store, stage)?;
    let docs = store.doc_index()?;
    let (plan, role) = if review {
        let p = store
            .review_plan(stage)?
            .ok_or_else(|| CliError::new("no_plan", format!("stage {stage} has no review plan")))?;
        (p, Role::Review)
    } else {
        (require_plan(store, stage)?, Role::Annotate)
    };
    let ids = assigned_docs(&plan, annotator);
    if ids.is_empty() {
        return Err(CliError::new(
            "not_assigned",
            format!("'{annotator}' has no {} tasks in {stage}", if review { "review" } else { "annotation" }),
        ));
    }

    let mut pre: BTreeMap<String, Annotation> = BTreeMap::new();
    if review {
        let base = require_plan(store, stage)?;
        for a in plan.assignments_of(annotator) {
            let original = base
                .assignments
                .iter()
                .find(|b| b.part == a.part)
                .map(|b| b.annotators[0].clone())
                .ok_or_else(|| CliError::new("corrupt_plan", "review part has no original assignment"))?;
            let set = store.annotations(stage, &original, false)?.ok_or_else(|| {
                CliError::new("missing_annotations", format!("'{original}' has not imported {stage} yet"))
            })?;
            for id in &a.part.doc_ids {
                if let Some(ann) = set.get(id) {
                    pre.insert(id.clone(), ann.clone());
                }
            }
        }
    } else {
        pre = store.pre_annotations("weak")?;
        pre.extend(store.pre_annotations("model")?);
    }

    ids.into_iter()
        .map(|id| {
            let doc = docs
                .get(&id)
                .ok_or_else(|| CliError::new("unknown_document", format!("planned document '{id}' is missing")))?;
            Ok(Task {
                doc_id: id.clone(),
                text: doc.text.clone(),
                text_b: doc.text_b.clone(),
                role,
                pre_annotation: pre.remove(&id),
            })
        })
        .collect()
}

/// Imports `annotator`'s annotations for `stage`, replacing earlier records
/// for the same documents.
pub fn import(store: &Store, file: &Path, annotator: &str, stage: Option<Stage>, review: bool) -> CliResult<Output> {
    let _lock = store.lock()?;
    let manifest = store.manifest()?;
    let stage = resolve_stage(store, stage)?;
    if store.merge_path(stage).is_file() {
        return Err(CliError::new("already_merged", format!("stage {stage} is already merged")));
    }
    let plan = if review {
        store
            .review_plan(stage)?
            .ok_or_else(|| CliError::new("no_plan", format!("stage {stage} has no review plan")))?
    } else {
        require_plan(store, stage)?
    };
    let assigned: BTreeSet<String> = assigned_docs(&plan, annotator).into_iter().collect();
    if assigned.is_empty() {
        return Err(CliError::new("not_assigned", format!("'{annotator}' has no tasks in {stage}")));
    }
    let docs = store.doc_index()?;
    let mut set = store
        .annotations(stage, annotator, review)?
        .unwrap_or_else(|| AnnotationSet::new(annotator));

    let records: Vec<(usize, Annotation)> = read_jsonl_numbered(file)?;
    let mut seen = BTreeSet::new();
    for (line, ann) in &records {
        let at = format!("{}:{line}", file.display());
        if ann.annotator != annotator {
            return Err(CliError::new(
                "annotator_mismatch",
                format!("record by '{}' in an import for '{annotator}'", ann.annotator),
            )
            .at(at));
        }
        if !assigned.contains(&ann.doc_id) {
            return Err(CliError::new(
                "not_assigned",
                format!("document '{}' is not assigned to '{annotator}' in {stage}", ann.doc_id),
            )
            .at(at));
        }
        if !seen.insert(ann.doc_id.clone()) {
            return Err(CliError::new("duplicate_document", format!("document '{}' imported twice", ann.doc_id)).at(at));
        }
        let doc = &docs[&ann.doc_id];
        let report = validate_annotation(ann, doc, &manifest.schema)?;
        if !report.is_valid() {
            return Err(CliError::new("invalid_annotation", report.to_string()).at(at));
        }
        set.insert(ann.clone())?;
    }
    store.write_annotations(&store.annotation_path(stage, annotator, review), &set)?;

    let mut out = Output::default();
    out.line(format!(
        "imported {} annotations by {annotator} for {stage} ({} of {} assigned done)",
        records.len(),
        set.len(),
        assigned.len()
    ));
    Ok(out)
}

fn part_docs(docs: &BTreeMap<String, Document>, ids: &[String]) -> CliResult<Vec<Document>> {
    ids.iter()
        .map(|id| {
            docs.get(id)
                .cloned()
                .ok_or_else(|| CliError::new("unknown_document", format!("planned document '{id}' is missing")))
        })
        .collect()
}

fn require_set(store: &Store, stage: Stage, annotator: &str, review: bool) -> CliResult<AnnotationSet> {
    store.annotations(stage, annotator, review)?.ok_or_else(|| {
        CliError::new(
            "missing_annotations",
            format!(
                "'{annotator}' has not imported {} annotations for {stage}",
                if review { "review" } else { "their" }
            ),
        )
    })
}

/// Merges every part of `stage` into agreed fragments and conflicts.
///
/// Cross parts merge the two annotators; reviewed parts merge the original
/// annotation with the reviewer's correction; other simple parts are taken
/// as agreed.
pub fn merge(store: &Store, stage: Option<Stage>) -> CliResult<Output> {
    let _lock = store.lock()?;
    let manifest = store.manifest()?;
    let stage = resolve_stage(store, stage)?;
    if store.pool_path(stage).is_file() {
        return Err(CliError::new("already_applied", format!("stage {stage} is already applied")));
    }
    let plan = require_plan(store, stage)?;
    let review = store.review_plan(stage)?;
    let docs = store.doc_index()?;
    let tol = manifest.score_tolerance;

    let mut merged: Vec<MergedDocument> = Vec::new();
    for (i, assignment) in plan.assignments.iter().enumerate() {
        let part = part_docs(&docs, &assignment.part.doc_ids)?;
        let ids = assignment.part.doc_ids.iter().map(String::as_str);
        let part_merged = match (plan.mode, &review) {
            (PlanMode::Cross, _) => {
                let a = require_set(store, stage, &assignment.annotators[0], false)?.restricted_to(ids.clone());
                let b = require_set(store, stage, &assignment.annotators[1], false)?.restricted_to(ids);
                merge_part(&a, &b, &part, &manifest.schema, tol)?
            }
            (_, Some(review)) => {
                let reviewer = &review.assignments[i].annotators[0];
                let a = require_set(store, stage, &assignment.annotators[0], false)?.restricted_to(ids.clone());
                let b = require_set(store, stage, reviewer, true)?.restricted_to(ids);
                merge_part(&a, &b, &part, &manifest.schema, tol)?
            }
            _ => {
                let annotator = &assignment.annotators[0];
                let set = require_set(store, stage, annotator, false)?;
                part.iter()
                    .map(|d| {
                        let ann = set.get(&d.id).ok_or_else(|| {
                            CliError::new(
                                "missing_annotations",
                                format!("'{annotator}' has not annotated '{}' in {stage}", d.id),
                            )
                        })?;
                        Ok(MergedDocument {
                            doc_id: d.id.clone(),
                            agreed: Some(ann.payload.clone()),
                            conflicts: Vec::new(),
                        })
                    })
                    .collect::<CliResult<Vec<_>>>()?
            }
        };
        merged.extend(part_merged);
    }
    write_json(&store.merge_path(stage), &merged)?;

    let mut by_kind: BTreeMap<&str, usize> = BTreeMap::new();
    for c in merged.iter().flat_map(|m| &m.conflicts) {
        *by_kind.entry(c.kind.as_str()).or_default() += 1;
    }
    let total: usize = by_kind.values().sum();
    let mut out = Output::default();
    out.line(format!("merged {} documents of {stage}: {total} conflicts", merged.len()));
    for (kind, n) in by_kind {
        out.line(format!("  {kind}: {n}"));
    }
    Ok(out)
}

/// Applies resolutions (from `file`, else those saved by the resolution
/// server) and writes the stage's resolved annotations into the pool.
pub fn apply_resolutions(store: &Store, stage: Option<Stage>, file: Option<&Path>) -> CliResult<Output> {
    let _lock = store.lock()?;
    let manifest = store.manifest()?;
    let stage = resolve_stage(store, stage)?;
    let merged = store
        .merges(stage)?
        .ok_or_else(|| CliError::new("not_merged", format!("stage {stage} is not merged yet; run `annoflow merge`")))?;
    let resolutions: Vec<Resolution> = match file {
        Some(f) => read_json(f)?.ok_or_else(|| CliError::new("not_found", format!("{} does not exist", f.display())))?,
        None => store.resolutions(stage)?,
    };
    let docs: Vec<Document> = store.docs()?;
    let pool = apply_core(&merged, &resolutions, &docs, &manifest.schema, POOL_ANNOTATOR)?;
    if file.is_some() {
        write_json(&store.resolutions_path(stage), &resolutions)?;
    }
    write_jsonl(&store.pool_path(stage), pool.iter())?;

    let mut out = Output::default();
    out.line(format!(
        "applied {} resolutions to {stage}: {} annotations in the pool",
        resolutions.len(),
        pool.len()
    ));
    Ok(out)
}
