//! Class-system adjustments (drop, incorporate, merge) as deterministic
//! corpus transforms, and annotation-guideline scaffolding.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AnnotationSet, LabelSchema, Payload, TaskKind};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClassAdjustment {
    Drop { class: String },
    Incorporate { source: String, target: String },
    Merge { sources: Vec<String>, target: String },
}

impl ClassAdjustment {
    pub fn drop(class: &str) -> Self {
        ClassAdjustment::Drop { class: class.into() }
    }

    pub fn incorporate(source: &str, target: &str) -> Self {
        ClassAdjustment::Incorporate {
            source: source.into(),
            target: target.into(),
        }
    }

    pub fn merge(sources: &[&str], target: &str) -> Self {
        ClassAdjustment::Merge {
            sources: sources.iter().map(|s| s.to_string()).collect(),
            target: target.into(),
        }
    }

    /// Every class name the adjustment reads or writes.
    pub fn classes(&self) -> BTreeSet<&str> {
        match self {
            ClassAdjustment::Drop { class } => BTreeSet::from([class.as_str()]),
            ClassAdjustment::Incorporate { source, target } => {
                BTreeSet::from([source.as_str(), target.as_str()])
            }
            ClassAdjustment::Merge { sources, target } => sources
                .iter()
                .map(String::as_str)
                .chain([target.as_str()])
                .collect(),
        }
    }
}

/// A schema together with every annotation set labeled under it.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub schema: LabelSchema,
    pub sets: Vec<AnnotationSet>,
}

impl Corpus {
    pub fn new(schema: LabelSchema, sets: Vec<AnnotationSet>) -> Self {
        Corpus { schema, sets }
    }

    pub fn annotation_count(&self) -> usize {
        self.sets.iter().map(AnnotationSet::len).sum()
    }

    pub fn span_count(&self) -> usize {
        self.sets
            .iter()
            .flat_map(AnnotationSet::iter)
            .map(|a| a.payload.as_spans().map_or(0, <[_]>::len))
            .sum()
    }

    /// Occurrences per class: document labels plus span labels.
    pub fn label_counts(&self) -> BTreeMap<String, usize> {
        let mut counts = BTreeMap::new();
        for ann in self.sets.iter().flat_map(AnnotationSet::iter) {
            match &ann.payload {
                Payload::Class { value } => *counts.entry(value.clone()).or_default() += 1,
                Payload::Spans { spans } => {
                    for s in spans {
                        *counts.entry(s.label.clone()).or_default() += 1;
                    }
                }
                Payload::Score { .. } => {}
            }
        }
        counts
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ChangeLog {
    /// Class labels (document labels or span labels) renamed.
    pub relabeled: usize,
    /// Whole annotations removed (document tasks under `drop`).
    pub removed_annotations: usize,
    /// Spans removed (span tasks under `drop`).
    pub removed_spans: usize,
    /// Annotations that were modified or removed.
    pub touched_annotations: usize,
}

impl ChangeLog {
    fn add(&mut self, other: ChangeLog) {
        self.relabeled += other.relabeled;
        self.removed_annotations += other.removed_annotations;
        self.removed_spans += other.removed_spans;
        self.touched_annotations += other.touched_annotations;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdjustmentOutcome {
    pub corpus: Corpus,
    pub log: ChangeLog,
}

fn new_schema(schema: &LabelSchema, adj: &ClassAdjustment) -> Result<LabelSchema> {
    if schema.task_kind == TaskKind::PairRegress {
        return Err(Error::InvalidAdjustment("regression schemas have no classes".into()));
    }
    let require = |c: &str| {
        if schema.has_class(c) {
            Ok(())
        } else {
            Err(Error::UnknownClass(c.to_string()))
        }
    };
    let classes: Vec<String> = match adj {
        ClassAdjustment::Drop { class } => {
            require(class)?;
            let rest: Vec<String> = schema.classes.iter().filter(|c| *c != class).cloned().collect();
            if rest.is_empty() {
                return Err(Error::InvalidAdjustment(format!("cannot drop the last class '{class}'")));
            }
            rest
        }
        ClassAdjustment::Incorporate { source, target } => {
            require(source)?;
            require(target)?;
            if source == target {
                return Err(Error::InvalidAdjustment(format!("cannot incorporate '{source}' into itself")));
            }
            schema.classes.iter().filter(|c| *c != source).cloned().collect()
        }
        ClassAdjustment::Merge { sources, target } => {
            if sources.len() < 2 {
                return Err(Error::InvalidAdjustment("merge needs at least 2 source classes".into()));
            }
            let distinct: BTreeSet<&String> = sources.iter().collect();
            if distinct.len() != sources.len() {
                return Err(Error::InvalidAdjustment("merge sources must be distinct".into()));
            }
            for s in sources {
                require(s)?;
            }
            if target.is_empty() {
                return Err(Error::InvalidAdjustment("empty target class".into()));
            }
            let target_elsewhere = schema.has_class(target) && !distinct.contains(target);
            let mut placed = target_elsewhere;
            let mut out = Vec::with_capacity(schema.classes.len());
            for c in &schema.classes {
                if distinct.contains(c) {
                    if !placed {
                        out.push(target.clone());
                        placed = true;
                    }
                } else {
                    out.push(c.clone());
                }
            }
            out
        }
    };
    let schema = LabelSchema {
        classes,
        ..schema.clone()
    };
    schema.validate()?;
    Ok(schema)
}

/// Applies one adjustment to every annotation in the corpus.
///
/// `drop` on a document task removes the labels of that class, returning the
/// documents to the unlabeled pool; on a span task it removes the spans.
pub fn apply_adjustment(corpus: &Corpus, adj: &ClassAdjustment) -> Result<AdjustmentOutcome> {
    let schema = new_schema(&corpus.schema, adj)?;
    let rename: BTreeMap<&str, &str> = match adj {
        ClassAdjustment::Drop { .. } => BTreeMap::new(),
        ClassAdjustment::Incorporate { source, target } => BTreeMap::from([(source.as_str(), target.as_str())]),
        ClassAdjustment::Merge { sources, target } => sources
            .iter()
            .filter(|s| *s != target)
            .map(|s| (s.as_str(), target.as_str()))
            .collect(),
    };
    let dropped = match adj {
        ClassAdjustment::Drop { class } => Some(class.as_str()),
        _ => None,
    };

    let mut log = ChangeLog::default();
    let mut sets = Vec::with_capacity(corpus.sets.len());
    for set in &corpus.sets {
        let mut out = AnnotationSet::new(set.annotator.clone());
        for ann in set.iter() {
            let mut ann = ann.clone();
            let mut touched = false;
            match &mut ann.payload {
                Payload::Class { value } => {
                    if Some(value.as_str()) == dropped {
                        log.removed_annotations += 1;
                        log.touched_annotations += 1;
                        continue;
                    }
                    if let Some(to) = rename.get(value.as_str()) {
                        *value = to.to_string();
                        log.relabeled += 1;
                        touched = true;
                    }
                }
                Payload::Spans { spans } => {
                    let before = spans.len();
                    spans.retain(|s| Some(s.label.as_str()) != dropped);
                    if spans.len() != before {
                        log.removed_spans += before - spans.len();
                        touched = true;
                    }
                    for s in spans.iter_mut() {
                        if let Some(to) = rename.get(s.label.as_str()) {
                            s.label = to.to_string();
                            log.relabeled += 1;
                            touched = true;
                        }
                    }
                }
                Payload::Score { .. } => {}
            }
            if touched {
                log.touched_annotations += 1;
            }
            out.annotations.insert(ann.doc_id.clone(), ann);
        }
        sets.push(out);
    }
    Ok(AdjustmentOutcome {
        corpus: Corpus { schema, sets },
        log,
    })
}

/// Applies `history` in order to `corpus`; errors name the failing step
/// (0-based).
pub fn replay_adjustments(corpus: &Corpus, history: &[ClassAdjustment]) -> Result<AdjustmentOutcome> {
    let mut current = AdjustmentOutcome {
        corpus: corpus.clone(),
        log: ChangeLog::default(),
    };
    for (step, adj) in history.iter().enumerate() {
        let next = apply_adjustment(&current.corpus, adj).map_err(|e| Error::HistoryStep {
            step,
            source: Box::new(e),
        })?;
        current.corpus = next.corpus;
        current.log.add(next.log);
    }
    Ok(current)
}

/// An example row for the guideline document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuidelineExample {
    pub text: String,
    pub label: String,
}

/// Markdown skeleton of annotation guidelines: task description, one stub per
/// label, examples and ambiguous-case instructions.
pub fn scaffold_guidelines(schema: &LabelSchema, task_description: &str, examples: &[GuidelineExample]) -> String {
    let mut md = String::new();
    let _ = writeln!(md, "# Annotation guidelines\n");

    let _ = writeln!(md, "## 1. Task description\n");
    if task_description.trim().is_empty() {
        let _ = writeln!(md, "_TBD: describe the task, the data and the purpose of the annotation._\n");
    } else {
        let _ = writeln!(md, "{}\n", task_description.trim());
    }

    let _ = writeln!(md, "## 2. Label descriptions\n");
    match schema.task_kind {
        TaskKind::PairRegress => {
            let (lo, hi) = schema.range().unwrap_or((0.0, 1.0));
            let _ = writeln!(md, "Each sentence pair receives exactly ONE score between {lo} and {hi}.\n");
            let _ = writeln!(md, "- **{lo}**: _TBD: describe the lowest score._");
            let _ = writeln!(md, "- **{hi}**: _TBD: describe the highest score._\n");
        }
        TaskKind::DocClass => {
            for class in &schema.classes {
                let _ = writeln!(md, "- **{class}**: _TBD: describe when to use this label._");
            }
            let _ = writeln!(md, "\nEach document must be assigned exactly ONE label.\n");
        }
        TaskKind::SpanLabel => {
            for class in &schema.classes {
                let _ = writeln!(md, "- **{class}**: _TBD: describe which phrases carry this label._");
            }
            let _ = writeln!(
                md,
                "\nEach marked span carries exactly ONE label. Spans must not overlap.\n"
            );
        }
    }

    let _ = writeln!(md, "## 3. Annotation examples\n");
    if examples.is_empty() {
        let _ = writeln!(md, "_TBD: add annotated examples._\n");
    } else {
        let _ = writeln!(md, "| Text | Label |");
        let _ = writeln!(md, "| --- | --- |");
        for ex in examples {
            let _ = writeln!(md, "| {} | {} |", ex.text.replace('|', "\\|"), ex.label);
        }
        md.push('\n');
    }

    let _ = writeln!(md, "## 4. Ambiguous cases\n");
    match schema.task_kind {
        TaskKind::DocClass => {
            let _ = writeln!(
                md,
                "- _TBD: which label to use when a document fits several labels or none._"
            );
        }
        TaskKind::SpanLabel => {
            let _ = writeln!(
                md,
                "- Entity boundaries: _TBD: which words belong to a span (modifiers, articles, punctuation)._"
            );
            let _ = writeln!(md, "- _TBD: how to choose between labels for an ambiguous phrase._");
        }
        TaskKind::PairRegress => {
            let _ = writeln!(md, "- _TBD: how to score pairs that are only partially related._");
        }
    }
    md
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Annotation, Span};

    fn skills_corpus() -> Corpus {
        let schema = LabelSchema::span_label(["hard skill", "soft skill", "job title"]).unwrap();
        let a = AnnotationSet::from_annotations(
            "A",
            [
                Annotation::human(
                    "d1",
                    "A",
                    Payload::spans([Span::new(0, 4, "hard skill"), Span::new(6, 9, "soft skill")]),
                ),
                Annotation::human("d2", "A", Payload::spans([Span::new(0, 3, "job title")])),
            ],
        )
        .unwrap();
        let b = AnnotationSet::from_annotations(
            "B",
            [Annotation::human("d1", "B", Payload::spans([Span::new(0, 4, "soft skill")]))],
        )
        .unwrap();
        Corpus::new(schema, vec![a, b])
    }

    #[test]
    fn merge_preserves_span_count() {
        let c = skills_corpus();
        let out = apply_adjustment(&c, &ClassAdjustment::merge(&["hard skill", "soft skill"], "skill")).unwrap();
        assert_eq!(out.corpus.span_count(), c.span_count());
        let counts = out.corpus.label_counts();
        assert!(!counts.contains_key("hard skill") && !counts.contains_key("soft skill"));
        assert_eq!(counts["skill"], 3);
        assert_eq!(out.corpus.schema.classes, vec!["skill", "job title"]);
        assert_eq!(out.log.relabeled, 3);
        assert_eq!(out.log.touched_annotations, 2);
    }

    #[test]
    fn drop_removes_counted_spans() {
        let c = skills_corpus();
        let out = apply_adjustment(&c, &ClassAdjustment::drop("soft skill")).unwrap();
        assert_eq!(out.corpus.span_count(), c.span_count() - 2);
        assert_eq!(out.log.removed_spans, 2);
        assert_eq!(out.corpus.annotation_count(), c.annotation_count());
    }

    #[test]
    fn drop_on_doc_task_unlabels_documents() {
        let schema = LabelSchema::doc_class(["POS", "NEG", "NEU"]).unwrap();
        let set = AnnotationSet::from_annotations(
            "A",
            [
                Annotation::human("d1", "A", Payload::class("NEU")),
                Annotation::human("d2", "A", Payload::class("POS")),
            ],
        )
        .unwrap();
        let out = apply_adjustment(&Corpus::new(schema, vec![set]), &ClassAdjustment::drop("NEU")).unwrap();
        assert_eq!(out.corpus.sets[0].len(), 1);
        assert_eq!(out.log.removed_annotations, 1);
        assert_eq!(out.corpus.schema.classes, vec!["POS", "NEG"]);
    }

    #[test]
    fn incorporate_is_single_source_merge() {
        let c = skills_corpus();
        let inc = apply_adjustment(&c, &ClassAdjustment::incorporate("soft skill", "hard skill")).unwrap();
        let merged = apply_adjustment(&c, &ClassAdjustment::merge(&["soft skill", "hard skill"], "hard skill")).unwrap();
        assert_eq!(inc.corpus, merged.corpus);
    }

    #[test]
    fn invalid_adjustments() {
        let c = skills_corpus();
        assert!(matches!(
            apply_adjustment(&c, &ClassAdjustment::drop("nope")),
            Err(Error::UnknownClass(_))
        ));
        assert!(apply_adjustment(&c, &ClassAdjustment::incorporate("job title", "job title")).is_err());
        assert!(apply_adjustment(&c, &ClassAdjustment::merge(&["job title"], "x")).is_err());
        assert!(apply_adjustment(&c, &ClassAdjustment::merge(&["job title", "job title"], "x")).is_err());
    }

    #[test]
    fn replay_examples() {
        let c = skills_corpus();
        assert_eq!(replay_adjustments(&c, &[]).unwrap().corpus, c);
        let merged_then_dropped = replay_adjustments(
            &c,
            &[ClassAdjustment::merge(&["hard skill", "soft skill"], "m"), ClassAdjustment::drop("m")],
        )
        .unwrap();
        let dropped_twice = replay_adjustments(
            &c,
            &[ClassAdjustment::drop("hard skill"), ClassAdjustment::drop("soft skill")],
        )
        .unwrap();
        assert_eq!(merged_then_dropped.corpus, dropped_twice.corpus);

        let bad = [ClassAdjustment::drop("job title"), ClassAdjustment::drop("job title")];
        match replay_adjustments(&c, &bad) {
            Err(Error::HistoryStep { step, .. }) => assert_eq!(step, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn adjustment_wire_format() {
        let adj: ClassAdjustment =
            serde_json::from_str(r#"{"op":"merge","sources":["a","b"],"target":"m"}"#).unwrap();
        assert_eq!(adj, ClassAdjustment::merge(&["a", "b"], "m"));
        assert_eq!(
            serde_json::to_string(&ClassAdjustment::drop("x")).unwrap(),
            r#"{"op":"drop","class":"x"}"#
        );
    }

    #[test]
    fn guidelines_for_sentiment() {
        let schema = LabelSchema::doc_class(["POS", "NEG", "NEU"]).unwrap();
        let md = scaffold_guidelines(&schema, "Classify product reviews.", &[]);
        for section in ["## 1. Task description", "## 2. Label descriptions", "## 3. Annotation examples", "## 4. Ambiguous cases"] {
            assert!(md.contains(section), "{section}");
        }
        for class in ["**POS**", "**NEG**", "**NEU**"] {
            assert!(md.contains(class));
        }
        assert!(md.contains("exactly ONE label"));
        assert!(md.contains("_TBD: add annotated examples._"));
    }

    #[test]
    fn guidelines_for_spans_mention_boundaries() {
        let schema = LabelSchema::span_label(["hard skill"]).unwrap();
        let ex = [GuidelineExample {
            text: "Erfarenhet av CNC".into(),
            label: "hard skill".into(),
        }];
        let md = scaffold_guidelines(&schema, "", &ex);
        assert!(md.contains("Entity boundaries"));
        assert!(md.contains("| Erfarenhet av CNC | hard skill |"));
    }
}
