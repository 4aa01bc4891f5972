#![allow(dead_code)]

use annoflow_core::{Annotation, AnnotationSet, Document, LabelSchema, Payload, Span};
use proptest::prelude::*;

pub const SPAN_LABELS: [&str; 3] = ["hard skill", "soft skill", "job title"];

pub fn span_schema() -> LabelSchema {
    LabelSchema::span_label(SPAN_LABELS).unwrap()
}

/// Flat, sorted spans laid out left to right from (gap, length, label) steps.
pub fn layout(steps: &[(usize, usize, usize)], text_len: usize, labels: &[&str]) -> Vec<Span> {
    let mut spans = Vec::new();
    let mut pos = 0;
    for &(gap, len, label) in steps {
        let start = pos + gap;
        let end = start + len.max(1);
        if end > text_len {
            break;
        }
        spans.push(Span::new(start, end, labels[label % labels.len()]));
        pos = end;
    }
    spans
}

pub fn spans_strategy(text_len: usize) -> impl Strategy<Value = Vec<Span>> {
    prop::collection::vec((0usize..6, 1usize..8, 0usize..3), 0..8)
        .prop_map(move |steps| layout(&steps, text_len, &SPAN_LABELS))
}

pub fn doc(id: &str, len: usize) -> Document {
    let text: String = (0..len).map(|i| if i % 6 == 5 { ' ' } else { 'x' }).collect();
    Document::new(id, text)
}

pub fn span_set(who: &str, docs: &[Document], spans: &[Vec<Span>]) -> AnnotationSet {
    AnnotationSet::from_annotations(
        who,
        docs.iter()
            .zip(spans)
            .map(|(d, s)| Annotation::human(d.id.clone(), who, Payload::spans(s.clone()))),
    )
    .unwrap()
}

pub fn class_set(who: &str, labels: &[usize], schema: &LabelSchema) -> AnnotationSet {
    AnnotationSet::from_annotations(
        who,
        labels.iter().enumerate().map(|(i, &l)| {
            Annotation::human(format!("d{i:03}"), who, Payload::class(schema.classes[l].clone()))
        }),
    )
    .unwrap()
}

pub fn n_classes(k: usize) -> LabelSchema {
    LabelSchema::doc_class((0..k).map(|i| format!("C{i}"))).unwrap()
}
