//! Pairwise merging of annotations into agreed fragments and typed conflicts,
//! and application of human resolutions.
//!
//! For span tasks, spans identical in `(start, end, label)` are agreed. The
//! remaining spans of both sides are grouped into connected components of
//! overlapping spans; each component becomes exactly one conflict:
//!
//! * one span on one side only: `span_presence`
//! * one span per side with the same range: `span_label`
//! * anything else: `span_boundary`

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{
    validate_annotation, validate_payload, Annotation, AnnotationSet, Document, LabelSchema,
    Payload, Provenance, Span, TaskKind,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConflictKind {
    LabelMismatch,
    SpanBoundary,
    SpanLabel,
    SpanPresence,
}

impl ConflictKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ConflictKind::LabelMismatch => "label_mismatch",
            ConflictKind::SpanBoundary => "span_boundary",
            ConflictKind::SpanLabel => "span_label",
            ConflictKind::SpanPresence => "span_presence",
        }
    }

    pub fn is_span(self) -> bool {
        self != ConflictKind::LabelMismatch
    }
}

impl fmt::Display for ConflictKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// How a conflict is settled. Serialized as `"a"`, `"b"`, `"none"` or
/// `{"custom": <payload>}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Choice {
    #[serde(rename = "a")]
    TakeA,
    #[serde(rename = "b")]
    TakeB,
    #[serde(rename = "none")]
    Neither,
    #[serde(rename = "custom")]
    Custom(Payload),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Resolution {
    pub conflict_id: String,
    pub choice: Choice,
}

impl Resolution {
    pub fn new(conflict_id: impl Into<String>, choice: Choice) -> Self {
        Resolution {
            conflict_id: conflict_id.into(),
            choice,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Conflict {
    pub conflict_id: String,
    pub doc_id: String,
    pub kind: ConflictKind,
    pub side_a: Payload,
    pub side_b: Payload,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolution: Option<Choice>,
}

impl Conflict {
    /// Spans mentioned by either side; empty for label conflicts.
    pub fn spans(&self) -> impl Iterator<Item = &Span> {
        self.side_a
            .as_spans()
            .unwrap_or_default()
            .iter()
            .chain(self.side_b.as_spans().unwrap_or_default())
    }

    /// Character region `[start, end)` covered by a span conflict.
    pub fn region(&self) -> Option<(usize, usize)> {
        let start = self.spans().map(|s| s.start).min()?;
        let end = self.spans().map(|s| s.end).max()?;
        Some((start, end))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MergedDocument {
    pub doc_id: String,
    /// Agreed payload. Always present for span tasks (possibly with no spans);
    /// absent for class/score tasks when the sides disagree.
    pub agreed: Option<Payload>,
    pub conflicts: Vec<Conflict>,
}

impl MergedDocument {
    pub fn is_conflict_free(&self) -> bool {
        self.conflicts.is_empty()
    }
}

fn conflict_id(doc_id: &str, kind: ConflictKind, region: Option<(usize, usize)>) -> String {
    let mut hasher = Sha256::new();
    hasher.update(doc_id.as_bytes());
    hasher.update([0x1f]);
    hasher.update(kind.as_str().as_bytes());
    if let Some((start, end)) = region {
        hasher.update(format!("\u{1f}{start}-{end}").as_bytes());
    }
    let digest = hasher.finalize();
    let hex: String = digest.iter().take(8).map(|b| format!("{b:02x}")).collect();
    format!("c{hex}")
}

fn ensure_valid(ann: &Annotation, doc: &Document, schema: &LabelSchema) -> Result<()> {
    let report = validate_annotation(ann, doc, schema)?;
    if report.is_valid() {
        Ok(())
    } else {
        Err(Error::InvalidAnnotation {
            doc_id: ann.doc_id.clone(),
            reason: report.to_string(),
        })
    }
}

/// Merges two annotators' annotations of one document.
///
/// Scores are considered equal when they differ by at most `score_tolerance`;
/// the agreed value is then their mean.
pub fn merge_pair(
    a: &Annotation,
    b: &Annotation,
    doc: &Document,
    schema: &LabelSchema,
    score_tolerance: f64,
) -> Result<MergedDocument> {
    if a.doc_id != b.doc_id {
        return Err(Error::MergeDocMismatch(a.doc_id.clone(), b.doc_id.clone()));
    }
    if a.annotator == b.annotator {
        return Err(Error::MergeSameAnnotator(a.annotator.clone()));
    }
    ensure_valid(a, doc, schema)?;
    ensure_valid(b, doc, schema)?;
    let doc_id = doc.id.clone();

    let label_conflict = |side_a: &Payload, side_b: &Payload| MergedDocument {
        doc_id: doc_id.clone(),
        agreed: None,
        conflicts: vec![Conflict {
            conflict_id: conflict_id(&doc_id, ConflictKind::LabelMismatch, None),
            doc_id: doc_id.clone(),
            kind: ConflictKind::LabelMismatch,
            side_a: side_a.clone(),
            side_b: side_b.clone(),
            resolution: None,
        }],
    };

    let merged = match (&a.payload, &b.payload) {
        (Payload::Class { value: x }, Payload::Class { value: y }) => {
            if x == y {
                MergedDocument {
                    doc_id: doc_id.clone(),
                    agreed: Some(a.payload.clone()),
                    conflicts: Vec::new(),
                }
            } else {
                label_conflict(&a.payload, &b.payload)
            }
        }
        (Payload::Score { value: x }, Payload::Score { value: y }) => {
            if (x - y).abs() <= score_tolerance {
                MergedDocument {
                    doc_id: doc_id.clone(),
                    agreed: Some(Payload::Score { value: (x + y) / 2.0 }),
                    conflicts: Vec::new(),
                }
            } else {
                label_conflict(&a.payload, &b.payload)
            }
        }
        (Payload::Spans { spans: x }, Payload::Spans { spans: y }) => {
            let (agreed, conflicts) = merge_spans(&doc_id, x, y);
            MergedDocument {
                doc_id: doc_id.clone(),
                agreed: Some(Payload::Spans { spans: agreed }),
                conflicts,
            }
        }
        // Validation above guarantees both payloads match the schema.
        _ => unreachable!("payload kinds validated against the same schema"),
    };
    Ok(merged)
}

fn merge_spans(doc_id: &str, a: &[Span], b: &[Span]) -> (Vec<Span>, Vec<Conflict>) {
    let in_a: BTreeSet<&Span> = a.iter().collect();
    let in_b: BTreeSet<&Span> = b.iter().collect();
    let mut agreed: Vec<Span> = a.iter().filter(|s| in_b.contains(s)).cloned().collect();
    agreed.sort();

    // (span, from_a), sorted by start; ties put the longer span first.
    let mut rest: Vec<(&Span, bool)> = a
        .iter()
        .filter(|s| !in_b.contains(s))
        .map(|s| (s, true))
        .chain(b.iter().filter(|s| !in_a.contains(s)).map(|s| (s, false)))
        .collect();
    rest.sort_by(|x, y| {
        (x.0.start, std::cmp::Reverse(x.0.end), !x.1, &x.0.label)
            .cmp(&(y.0.start, std::cmp::Reverse(y.0.end), !y.1, &y.0.label))
    });

    // Same-side spans never overlap, so a sweep over the union yields exactly
    // the connected components of the cross-side overlap graph.
    let mut components: Vec<Vec<(&Span, bool)>> = Vec::new();
    let mut reach = 0;
    for item in rest {
        match components.last_mut() {
            Some(current) if item.0.start < reach => {
                reach = reach.max(item.0.end);
                current.push(item);
            }
            _ => {
                reach = item.0.end;
                components.push(vec![item]);
            }
        }
    }

    let conflicts = components
        .into_iter()
        .map(|component| {
            let mut side_a: Vec<Span> = component.iter().filter(|x| x.1).map(|x| x.0.clone()).collect();
            let mut side_b: Vec<Span> = component.iter().filter(|x| !x.1).map(|x| x.0.clone()).collect();
            side_a.sort();
            side_b.sort();
            let kind = match (side_a.as_slice(), side_b.as_slice()) {
                ([], _) | (_, []) => ConflictKind::SpanPresence,
                ([x], [y]) if x.same_range(y) => ConflictKind::SpanLabel,
                _ => ConflictKind::SpanBoundary,
            };
            let start = component.iter().map(|x| x.0.start).min().unwrap_or(0);
            let end = component.iter().map(|x| x.0.end).max().unwrap_or(0);
            Conflict {
                conflict_id: conflict_id(doc_id, kind, Some((start, end))),
                doc_id: doc_id.to_string(),
                kind,
                side_a: Payload::Spans { spans: side_a },
                side_b: Payload::Spans { spans: side_b },
                resolution: None,
            }
        })
        .collect();
    (agreed, conflicts)
}

/// Merges two annotation sets over the documents of one part, in `docs` order.
pub fn merge_part(
    set_a: &AnnotationSet,
    set_b: &AnnotationSet,
    docs: &[Document],
    schema: &LabelSchema,
    score_tolerance: f64,
) -> Result<Vec<MergedDocument>> {
    let missing = |set: &AnnotationSet| -> Vec<String> {
        docs.iter()
            .filter(|d| set.get(&d.id).is_none())
            .map(|d| d.id.clone())
            .collect()
    };
    let (missing_a, missing_b) = (missing(set_a), missing(set_b));
    if !missing_a.is_empty() || !missing_b.is_empty() {
        return Err(Error::CoverageMismatch {
            missing_a,
            missing_b,
        });
    }
    docs.iter()
        .map(|doc| {
            let a = &set_a.annotations[&doc.id];
            let b = &set_b.annotations[&doc.id];
            merge_pair(a, b, doc, schema, score_tolerance)
        })
        .collect()
}

/// Checks that `choice` can settle `conflict` for `doc` under `schema`.
pub fn check_choice(
    conflict: &Conflict,
    choice: &Choice,
    doc: &Document,
    schema: &LabelSchema,
) -> Result<()> {
    let Choice::Custom(payload) = choice else {
        return Ok(());
    };
    let invalid = |reason: String| Error::InvalidResolution {
        conflict_id: conflict.conflict_id.clone(),
        reason,
    };
    let kind_ok = match payload {
        Payload::Spans { .. } => conflict.kind.is_span(),
        Payload::Class { .. } | Payload::Score { .. } => {
            conflict.kind == ConflictKind::LabelMismatch
        }
    };
    if !kind_ok {
        return Err(invalid(format!(
            "custom '{}' fragment cannot settle a {} conflict",
            payload.kind_name(),
            conflict.kind
        )));
    }
    let report = validate_payload(payload, doc, schema);
    if !report.is_valid() {
        return Err(invalid(report.to_string()));
    }
    if let (Some(spans), Some((start, end))) = (payload.as_spans(), conflict.region()) {
        if let Some(s) = spans.iter().find(|s| s.start < start || s.end > end) {
            return Err(invalid(format!(
                "custom span {}-{} leaves the conflict region {start}-{end}",
                s.start, s.end
            )));
        }
    }
    Ok(())
}

fn chosen<'a>(conflict: &'a Conflict, choice: &'a Choice) -> Option<&'a Payload> {
    match choice {
        Choice::TakeA => Some(&conflict.side_a),
        Choice::TakeB => Some(&conflict.side_b),
        Choice::Neither => None,
        Choice::Custom(p) => Some(p),
    }
}

/// Combines agreed fragments with resolved choices into a final annotation set
/// with provenance `resolved`.
///
/// A resolution in `resolutions` takes precedence over one recorded on the
/// conflict itself. Every conflict must end up with exactly one choice.
pub fn apply_resolutions(
    merged: &[MergedDocument],
    resolutions: &[Resolution],
    docs: &[Document],
    schema: &LabelSchema,
    annotator: &str,
) -> Result<AnnotationSet> {
    let known: BTreeSet<&str> = merged
        .iter()
        .flat_map(|m| m.conflicts.iter().map(|c| c.conflict_id.as_str()))
        .collect();
    let mut by_id: BTreeMap<&str, &Choice> = BTreeMap::new();
    for r in resolutions {
        if !known.contains(r.conflict_id.as_str()) {
            return Err(Error::UnknownConflict(r.conflict_id.clone()));
        }
        if by_id.insert(r.conflict_id.as_str(), &r.choice).is_some() {
            return Err(Error::DuplicateResolution(r.conflict_id.clone()));
        }
    }
    let unresolved: Vec<String> = merged
        .iter()
        .flat_map(|m| &m.conflicts)
        .filter(|c| c.resolution.is_none() && !by_id.contains_key(c.conflict_id.as_str()))
        .map(|c| c.conflict_id.clone())
        .collect();
    if !unresolved.is_empty() {
        return Err(Error::UnresolvedConflicts(unresolved));
    }

    let doc_index: BTreeMap<&str, &Document> = docs.iter().map(|d| (d.id.as_str(), d)).collect();
    let mut out = AnnotationSet::new(annotator);
    for m in merged {
        let doc = doc_index.get(m.doc_id.as_str()).ok_or_else(|| Error::InvalidAnnotation {
            doc_id: m.doc_id.clone(),
            reason: "document not provided".into(),
        })?;
        let mut choices = Vec::with_capacity(m.conflicts.len());
        for c in &m.conflicts {
            let choice = by_id
                .get(c.conflict_id.as_str())
                .copied()
                .or(c.resolution.as_ref())
                .expect("unresolved conflicts rejected above");
            check_choice(c, choice, doc, schema)?;
            choices.push((c, choice));
        }

        let payload = match schema.task_kind {
            TaskKind::SpanLabel => {
                let mut spans: Vec<Span> = m
                    .agreed
                    .as_ref()
                    .and_then(Payload::as_spans)
                    .map(<[Span]>::to_vec)
                    .unwrap_or_default();
                for (c, choice) in &choices {
                    if let Some(p) = chosen(c, choice) {
                        spans.extend(p.as_spans().unwrap_or_default().iter().cloned());
                    }
                }
                spans.sort();
                if spans.windows(2).any(|w| w[0].overlaps(&w[1]) || w[0] == w[1]) {
                    return Err(Error::OverlappingResolution(m.doc_id.clone()));
                }
                Some(Payload::Spans { spans })
            }
            TaskKind::DocClass | TaskKind::PairRegress => match choices.first() {
                None => m.agreed.clone(),
                Some((c, choice)) => chosen(c, choice).cloned(),
            },
        };

        if let Some(payload) = payload {
            let ann = Annotation::new(m.doc_id.clone(), annotator, Provenance::Resolved, payload);
            ensure_valid(&ann, doc, schema)?;
            out.insert(ann)?;
        }
    }
    Ok(out)
}
