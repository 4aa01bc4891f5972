use std::path::PathBuf;

use annoflow_core::schema_ops::{apply_adjustment, scaffold_guidelines, ClassAdjustment, Corpus, GuidelineExample};
use annoflow_core::{Annotation, AnnotationSet, Payload};

use super::train_and_gold;
use crate::error::{CliError, CliResult};
use crate::store::{read_jsonl, write_atomic, Store};
use crate::Output;

/// Applies a class adjustment to the schema and to every annotation file in
/// the store, and appends it to the manifest's history.
pub fn adjust(store: &Store, adjustment: &ClassAdjustment) -> CliResult<Output> {
    let _lock = store.lock()?;
    let mut manifest = store.manifest()?;
    for stage in store.planned_stages()? {
        if store.merge_path(stage).is_file() && !store.pool_path(stage).is_file() {
            return Err(CliError::new(
                "merge_pending",
                format!("stage {stage} is merged but not applied; apply its resolutions first"),
            ));
        }
    }

    let files = store.annotation_files()?;
    let mut paths: Vec<PathBuf> = Vec::new();
    let mut sets: Vec<AnnotationSet> = Vec::new();
    for path in files {
        let records: Vec<Annotation> = read_jsonl(&path)?;
        let Some(who) = records.first().map(|a| a.annotator.clone()) else {
            continue;
        };
        let set = AnnotationSet::from_annotations(who, records).map_err(|e| CliError::from(e).at(path.display()))?;
        paths.push(path);
        sets.push(set);
    }

    let corpus = Corpus::new(manifest.schema.clone(), sets);
    let outcome = apply_adjustment(&corpus, adjustment)?;
    for (path, set) in paths.iter().zip(&outcome.corpus.sets) {
        store.write_annotations(path, set)?;
    }
    manifest.schema = outcome.corpus.schema.clone();
    manifest.adjustments.push(adjustment.clone());
    store.write_manifest(&manifest)?;

    let log = outcome.log;
    let mut out = Output::default();
    out.line(format!("classes: {}", manifest.schema.classes.join(", ")));
    out.line(format!(
        "{} files: {} labels renamed, {} annotations removed, {} spans removed, {} annotations touched",
        paths.len(),
        log.relabeled,
        log.removed_annotations,
        log.removed_spans,
        log.touched_annotations
    ));
    Ok(out)
}

/// Writes `guidelines.md` with up to `per_class` examples per class taken from
/// the resolved training pool.
pub fn guidelines(store: &Store, description: &str, per_class: usize) -> CliResult<Output> {
    let _lock = store.lock()?;
    let manifest = store.manifest()?;
    let (train, _) = train_and_gold(store, &manifest)?;
    let docs = store.doc_index()?;
    let mut examples = Vec::new();
    for class in &manifest.schema.classes {
        let mut taken = 0;
        for ann in train.iter() {
            if taken == per_class {
                break;
            }
            let Some(doc) = docs.get(&ann.doc_id) else { continue };
            let text = match &ann.payload {
                Payload::Class { value } if value == class => doc.text.clone(),
                Payload::Spans { spans } => match spans.iter().find(|s| &s.label == class) {
                    Some(s) => doc.slice(s.start, s.end).unwrap_or_default().to_string(),
                    None => continue,
                },
                _ => continue,
            };
            examples.push(GuidelineExample {
                text,
                label: class.clone(),
            });
            taken += 1;
        }
    }
    let md = scaffold_guidelines(&manifest.schema, description, &examples);
    let path = store.root().join("guidelines.md");
    write_atomic(&path, md.as_bytes())?;
    let mut out = Output::default();
    out.line(format!("wrote {} with {} examples", path.display(), examples.len()));
    Ok(out)
}
