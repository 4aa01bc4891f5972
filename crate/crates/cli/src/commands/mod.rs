//! One function per CLI subcommand. Commands that modify the store take the
//! store lock for their whole duration.

mod accel;
mod measure;
mod project;
mod schema;
mod workflow;

pub use accel::{bootstrap, select, weak_label};
pub use measure::{agreement, curve, eval, monitor_split, resplit, stage_agreement, AgreementArgs, CurveArgs};
pub use project::{add_docs, init, status, InitArgs};
pub use schema::{adjust, guidelines};
pub use workflow::{apply_resolutions, export_tasks, import, merge, plan, PlanArgs, Task};

use std::collections::BTreeSet;

use annoflow_core::partition::BatchPlan;
use annoflow_core::{AnnotationSet, ProjectManifest};

use crate::error::{CliError, CliResult};
use crate::store::{Stage, Store, POOL_ANNOTATOR};

/// `stage` if given, else the most recently planned stage.
pub(crate) fn resolve_stage(store: &Store, stage: Option<Stage>) -> CliResult<Stage> {
    if let Some(s) = stage {
        return Ok(s);
    }
    store
        .planned_stages()?
        .last()
        .copied()
        .ok_or_else(|| CliError::new("no_plan", "nothing planned yet; run `annoflow plan` first"))
}

pub(crate) fn require_plan(store: &Store, stage: Stage) -> CliResult<BatchPlan> {
    store
        .plan(stage)?
        .ok_or_else(|| CliError::new("no_plan", format!("stage {stage} has no plan")))
}

/// All resolved annotations across stages; later stages win on overlap.
pub(crate) fn annotated(store: &Store) -> CliResult<AnnotationSet> {
    let mut all = AnnotationSet::new(POOL_ANNOTATOR);
    for set in store.pools()?.into_values() {
        for ann in set.iter() {
            all.annotations.insert(ann.doc_id.clone(), ann.clone());
        }
    }
    Ok(all)
}

/// (training pool, test gold) according to the manifest's test set.
pub(crate) fn train_and_gold(store: &Store, manifest: &ProjectManifest) -> CliResult<(AnnotationSet, AnnotationSet)> {
    let all = annotated(store)?;
    let test: BTreeSet<&str> = manifest.test_set.iter().map(String::as_str).collect();
    let train = all.restricted_to(all.doc_ids().filter(|d| !test.contains(d)));
    let gold = all.restricted_to(test.iter().copied());
    Ok((train, gold))
}

pub(crate) fn fmt4(x: f64) -> String {
    format!("{x:.4}")
}
