//! Domain types shared by every other module.
//!
//! Spans index documents by Unicode scalar offsets (`char`s), start inclusive
//! and end exclusive. All types are plain values; validation never mutates.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema_ops::ClassAdjustment;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    DocClass,
    SpanLabel,
    PairRegress,
}

impl TaskKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::DocClass => "doc_class",
            TaskKind::SpanLabel => "span_label",
            TaskKind::PairRegress => "pair_regress",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Task definition: which payload an annotation carries and its label space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelSchema {
    pub task_kind: TaskKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub classes: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub range_lo: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub range_hi: Option<f64>,
}

impl LabelSchema {
    pub fn doc_class<S: Into<String>>(classes: impl IntoIterator<Item = S>) -> Result<Self> {
        Self::with_classes(TaskKind::DocClass, classes)
    }

    pub fn span_label<S: Into<String>>(classes: impl IntoIterator<Item = S>) -> Result<Self> {
        Self::with_classes(TaskKind::SpanLabel, classes)
    }

    pub fn pair_regress(range_lo: f64, range_hi: f64) -> Result<Self> {
        let schema = LabelSchema {
            task_kind: TaskKind::PairRegress,
            classes: Vec::new(),
            range_lo: Some(range_lo),
            range_hi: Some(range_hi),
        };
        schema.validate()?;
        Ok(schema)
    }

    fn with_classes<S: Into<String>>(
        task_kind: TaskKind,
        classes: impl IntoIterator<Item = S>,
    ) -> Result<Self> {
        let schema = LabelSchema {
            task_kind,
            classes: classes.into_iter().map(Into::into).collect(),
            range_lo: None,
            range_hi: None,
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        match self.task_kind {
            TaskKind::PairRegress => {
                if !self.classes.is_empty() {
                    return Err(Error::InvalidSchema("pair_regress takes no classes".into()));
                }
                let (lo, hi) = match (self.range_lo, self.range_hi) {
                    (Some(lo), Some(hi)) => (lo, hi),
                    _ => return Err(Error::InvalidSchema("missing range_lo/range_hi".into())),
                };
                if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                    return Err(Error::InvalidSchema(format!(
                        "range_lo {lo} must be below range_hi {hi}"
                    )));
                }
            }
            TaskKind::DocClass | TaskKind::SpanLabel => {
                if self.range_lo.is_some() || self.range_hi.is_some() {
                    return Err(Error::InvalidSchema(format!(
                        "{} takes no score range",
                        self.task_kind
                    )));
                }
                if self.classes.is_empty() {
                    return Err(Error::InvalidSchema("no classes".into()));
                }
                let mut seen = BTreeSet::new();
                for class in &self.classes {
                    if class.is_empty() {
                        return Err(Error::InvalidSchema("empty class name".into()));
                    }
                    if !seen.insert(class.as_str()) {
                        return Err(Error::InvalidSchema(format!("duplicate class '{class}'")));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn has_class(&self, class: &str) -> bool {
        self.classes.iter().any(|c| c == class)
    }

    pub fn class_index(&self, class: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == class)
    }

    /// `(lo, hi)` for regression schemas.
    pub fn range(&self) -> Option<(f64, f64)> {
        self.range_lo.zip(self.range_hi)
    }

    pub fn require(&self, kind: TaskKind) -> Result<()> {
        if self.task_kind == kind {
            Ok(())
        } else {
            Err(Error::WrongTaskKind {
                expected: kind,
                found: self.task_kind,
            })
        }
    }
}

/// A unit of annotation. Pair-regression documents carry the second sentence
/// in `text_b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Document {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text_b: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<BTreeMap<String, serde_json::Value>>,
}

impl Document {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Document {
            id: id.into(),
            text: text.into(),
            text_b: None,
            meta: None,
        }
    }

    pub fn pair(id: impl Into<String>, text: impl Into<String>, text_b: impl Into<String>) -> Self {
        Document {
            text_b: Some(text_b.into()),
            ..Document::new(id, text)
        }
    }

    /// Length of `text` in characters; the upper bound for span offsets.
    pub fn char_len(&self) -> usize {
        self.text.chars().count()
    }

    /// Character range `[start, end)` of `text`, if in bounds.
    pub fn slice(&self, start: usize, end: usize) -> Option<&str> {
        if start > end {
            return None;
        }
        let mut indices = self.text.char_indices().map(|(i, _)| i).chain([self.text.len()]);
        let from = indices.nth(start)?;
        let to = if end == start {
            from
        } else {
            indices.nth(end - start - 1)?
        };
        Some(&self.text[from..to])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    pub label: String,
}

impl Span {
    pub fn new(start: usize, end: usize, label: impl Into<String>) -> Self {
        Span {
            start,
            end,
            label: label.into(),
        }
    }

    /// Half-open interval overlap.
    pub fn overlaps(&self, other: &Span) -> bool {
        self.start < other.end && other.start < self.end
    }

    pub fn same_range(&self, other: &Span) -> bool {
        self.start == other.start && self.end == other.end
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Human,
    Model,
    Weak,
    Resolved,
}

/// What an annotation asserts about its document. Also used as the fragment
/// type carried by merge conflicts and custom resolutions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Payload {
    Class { value: String },
    Spans { spans: Vec<Span> },
    Score { value: f64 },
}

impl Payload {
    pub fn class(value: impl Into<String>) -> Self {
        Payload::Class {
            value: value.into(),
        }
    }

    pub fn spans(spans: impl IntoIterator<Item = Span>) -> Self {
        Payload::Spans {
            spans: spans.into_iter().collect(),
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Payload::Class { .. } => "class",
            Payload::Spans { .. } => "spans",
            Payload::Score { .. } => "score",
        }
    }

    pub fn matches_task(&self, kind: TaskKind) -> bool {
        matches!(
            (self, kind),
            (Payload::Class { .. }, TaskKind::DocClass)
                | (Payload::Spans { .. }, TaskKind::SpanLabel)
                | (Payload::Score { .. }, TaskKind::PairRegress)
        )
    }

    pub fn as_class(&self) -> Option<&str> {
        match self {
            Payload::Class { value } => Some(value),
            _ => None,
        }
    }

    pub fn as_spans(&self) -> Option<&[Span]> {
        match self {
            Payload::Spans { spans } => Some(spans),
            _ => None,
        }
    }

    pub fn as_score(&self) -> Option<f64> {
        match self {
            Payload::Score { value } => Some(*value),
            _ => None,
        }
    }

    /// Sorts spans by `(start, end, label)`; other payloads are unchanged.
    pub fn normalized(mut self) -> Self {
        if let Payload::Spans { spans } = &mut self {
            spans.sort();
        }
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Annotation {
    pub doc_id: String,
    pub annotator: String,
    pub provenance: Provenance,
    pub payload: Payload,
}

impl Annotation {
    pub fn new(
        doc_id: impl Into<String>,
        annotator: impl Into<String>,
        provenance: Provenance,
        payload: Payload,
    ) -> Self {
        Annotation {
            doc_id: doc_id.into(),
            annotator: annotator.into(),
            provenance,
            payload,
        }
    }

    pub fn human(doc_id: impl Into<String>, annotator: impl Into<String>, payload: Payload) -> Self {
        Annotation::new(doc_id, annotator, Provenance::Human, payload)
    }
}

/// One annotator's annotations, at most one per document.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AnnotationSet {
    pub annotator: String,
    pub annotations: BTreeMap<String, Annotation>,
}

impl AnnotationSet {
    pub fn new(annotator: impl Into<String>) -> Self {
        AnnotationSet {
            annotator: annotator.into(),
            annotations: BTreeMap::new(),
        }
    }

    pub fn from_annotations(
        annotator: impl Into<String>,
        annotations: impl IntoIterator<Item = Annotation>,
    ) -> Result<Self> {
        let mut set = AnnotationSet::new(annotator);
        for ann in annotations {
            set.insert(ann)?;
        }
        Ok(set)
    }

    /// Inserts or replaces the annotation for its document.
    pub fn insert(&mut self, ann: Annotation) -> Result<Option<Annotation>> {
        if ann.annotator != self.annotator {
            return Err(Error::AnnotatorMismatch {
                set: self.annotator.clone(),
                annotation: ann.annotator,
            });
        }
        Ok(self.annotations.insert(ann.doc_id.clone(), ann))
    }

    pub fn get(&self, doc_id: &str) -> Option<&Annotation> {
        self.annotations.get(doc_id)
    }

    pub fn doc_ids(&self) -> impl Iterator<Item = &str> {
        self.annotations.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.annotations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.annotations.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Annotation> {
        self.annotations.values()
    }

    /// Copy restricted to the given documents.
    pub fn restricted_to<'a>(&self, doc_ids: impl IntoIterator<Item = &'a str>) -> AnnotationSet {
        let mut out = AnnotationSet::new(self.annotator.clone());
        for id in doc_ids {
            if let Some(ann) = self.annotations.get(id) {
                out.annotations.insert(id.to_string(), ann.clone());
            }
        }
        out
    }
}

/// Errors unless both sets annotate exactly the same documents.
pub fn check_same_coverage(a: &AnnotationSet, b: &AnnotationSet) -> Result<()> {
    let missing_a: Vec<String> = b
        .doc_ids()
        .filter(|id| !a.annotations.contains_key(*id))
        .map(str::to_string)
        .collect();
    let missing_b: Vec<String> = a
        .doc_ids()
        .filter(|id| !b.annotations.contains_key(*id))
        .map(str::to_string)
        .collect();
    if missing_a.is_empty() && missing_b.is_empty() {
        Ok(())
    } else {
        Err(Error::CoverageMismatch {
            missing_a,
            missing_b,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

/// Validation outcome. Violations are data; an empty report means valid.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, field: impl Into<String>, message: impl Into<String>) {
        self.violations.push(Violation {
            field: field.into(),
            message: message.into(),
        });
    }

    pub fn contains(&self, message: &str) -> bool {
        self.violations.iter().any(|v| v.message == message)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{}: {}", v.field, v.message)?;
        }
        Ok(())
    }
}

pub fn validate_document(doc: &Document, schema: &LabelSchema) -> ValidationReport {
    let mut report = ValidationReport::default();
    if doc.id.is_empty() {
        report.push("id", "empty id");
    }
    if doc.text.is_empty() {
        report.push("text", "empty text");
    }
    match (schema.task_kind, &doc.text_b) {
        (TaskKind::PairRegress, None) => report.push("text_b", "missing text_b"),
        (TaskKind::PairRegress, Some(b)) if b.is_empty() => report.push("text_b", "empty text_b"),
        (TaskKind::DocClass | TaskKind::SpanLabel, Some(_)) => {
            report.push("text_b", "unexpected text_b")
        }
        _ => {}
    }
    report
}

/// Errors with [`Error::UnknownDocument`] if `ann` does not refer to `doc`.
pub fn validate_annotation(
    ann: &Annotation,
    doc: &Document,
    schema: &LabelSchema,
) -> Result<ValidationReport> {
    if ann.doc_id != doc.id {
        return Err(Error::UnknownDocument {
            expected: doc.id.clone(),
            found: ann.doc_id.clone(),
        });
    }
    let mut report = ValidationReport::default();
    if ann.annotator.is_empty() {
        report.push("annotator", "empty annotator");
    }
    check_payload(&ann.payload, doc, schema, &mut report);
    Ok(report)
}

/// Validates a payload against a document without an enclosing annotation.
pub fn validate_payload(payload: &Payload, doc: &Document, schema: &LabelSchema) -> ValidationReport {
    let mut report = ValidationReport::default();
    check_payload(payload, doc, schema, &mut report);
    report
}

fn check_payload(payload: &Payload, doc: &Document, schema: &LabelSchema, report: &mut ValidationReport) {
    if !payload.matches_task(schema.task_kind) {
        report.push(
            "payload",
            format!(
                "payload kind '{}' does not match task kind '{}'",
                payload.kind_name(),
                schema.task_kind
            ),
        );
        return;
    }
    match payload {
        Payload::Class { value } => {
            if !schema.has_class(value) {
                report.push("payload.value", format!("unknown class '{value}'"));
            }
        }
        Payload::Score { value } => {
            let (lo, hi) = schema.range().unwrap_or((f64::NAN, f64::NAN));
            if !(value.is_finite() && *value >= lo && *value <= hi) {
                report.push("payload.value", "score out of range");
            }
        }
        Payload::Spans { spans } => {
            let len = doc.char_len();
            for (i, span) in spans.iter().enumerate() {
                let field = format!("payload.spans[{i}]");
                if span.start >= span.end {
                    report.push(field.clone(), "start ≥ end");
                }
                if span.end > len {
                    report.push(field.clone(), "end beyond text length");
                }
                if !schema.has_class(&span.label) {
                    report.push(field, format!("unknown label '{}'", span.label));
                }
            }
            for (i, pair) in spans.windows(2).enumerate() {
                let field = format!("payload.spans[{}]", i + 1);
                if pair[1].start < pair[0].start {
                    report.push(field, "spans not sorted by start");
                } else if pair[0].overlaps(&pair[1]) || pair[0].same_range(&pair[1]) {
                    report.push(field, "overlapping spans");
                }
            }
        }
    }
}

/// Errors naming the first duplicate id.
pub fn check_unique_ids(docs: &[Document]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for doc in docs {
        if !seen.insert(doc.id.as_str()) {
            return Err(Error::DuplicateDocument(doc.id.clone()));
        }
    }
    Ok(())
}

fn default_epsilon() -> f64 {
    0.01
}

fn default_window() -> usize {
    2
}

fn default_divergence_threshold() -> f64 {
    0.1
}

/// Project configuration plus the frozen test set and class-adjustment history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectManifest {
    pub schema: LabelSchema,
    pub annotators: Vec<String>,
    pub batch_size: usize,
    pub seed: u64,
    #[serde(default = "default_epsilon")]
    pub plateau_epsilon: f64,
    #[serde(default = "default_window")]
    pub plateau_window: usize,
    #[serde(default = "default_divergence_threshold")]
    pub divergence_threshold: f64,
    #[serde(default)]
    pub score_tolerance: f64,
    #[serde(default)]
    pub test_set: Vec<String>,
    #[serde(default)]
    pub adjustments: Vec<ClassAdjustment>,
}

impl ProjectManifest {
    pub fn new(schema: LabelSchema, annotators: Vec<String>, batch_size: usize, seed: u64) -> Self {
        ProjectManifest {
            schema,
            annotators,
            batch_size,
            seed,
            plateau_epsilon: default_epsilon(),
            plateau_window: default_window(),
            divergence_threshold: default_divergence_threshold(),
            score_tolerance: 0.0,
            test_set: Vec::new(),
            adjustments: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.schema.validate()?;
        let bad = |msg: String| Err(Error::InvalidManifest(msg));
        if self.annotators.is_empty() {
            return bad("at least one annotator required".into());
        }
        let mut seen = BTreeSet::new();
        for a in &self.annotators {
            if a.is_empty() {
                return bad("empty annotator id".into());
            }
            if !seen.insert(a.as_str()) {
                return bad(format!("duplicate annotator '{a}'"));
            }
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.plateau_epsilon > 0.0 && self.plateau_epsilon.is_finite()) {
            return bad("plateau_epsilon must be > 0".into());
        }
        if self.plateau_window == 0 {
            return bad("plateau_window must be ≥ 1".into());
        }
        if !(self.divergence_threshold > 0.0 && self.divergence_threshold <= 1.0) {
            return bad("divergence_threshold must lie in (0, 1]".into());
        }
        if !(self.score_tolerance >= 0.0 && self.score_tolerance.is_finite()) {
            return bad("score_tolerance must be ≥ 0".into());
        }
        Ok(())
    }
}
