mod common;

use annoflow_core::merge::{apply_resolutions, merge_pair, merge_part, Choice, ConflictKind, Resolution};
use annoflow_core::model::validate_annotation;
use annoflow_core::{Annotation, LabelSchema, Payload, Span};
use common::*;
use proptest::prelude::*;

const LEN: usize = 60;

fn sides() -> impl Strategy<Value = (Vec<Span>, Vec<Span>)> {
    (spans_strategy(LEN), spans_strategy(LEN), prop::collection::vec(any::<bool>(), 8)).prop_map(|(a, b, copy)| {
        // Share some of a's spans with b to get agreements.
        let mut b: Vec<Span> = b.into_iter().filter(|s| !a.iter().any(|x| x.overlaps(s))).collect();
        b.extend(a.iter().zip(&copy).filter(|(_, &c)| c).map(|(s, _)| s.clone()));
        b.sort();
        (a, b)
    })
}

proptest! {
    #[test]
    fn every_span_lands_once((a, b) in sides()) {
        let d = doc("d1", LEN);
        let schema = span_schema();
        let m = merge_pair(
            &Annotation::human("d1", "A", Payload::spans(a.clone())),
            &Annotation::human("d1", "B", Payload::spans(b.clone())),
            &d, &schema, 0.0,
        ).unwrap();
        let agreed = m.agreed.as_ref().unwrap().as_spans().unwrap().to_vec();
        let conflict_a: Vec<&Span> = m.conflicts.iter().flat_map(|c| c.side_a.as_spans().unwrap()).collect();
        let conflict_b: Vec<&Span> = m.conflicts.iter().flat_map(|c| c.side_b.as_spans().unwrap()).collect();
        for s in &a {
            let n = agreed.iter().filter(|x| *x == s).count() + conflict_a.iter().filter(|x| **x == s).count();
            prop_assert_eq!(n, 1);
        }
        for s in &b {
            let n = agreed.iter().filter(|x| *x == s).count() + conflict_b.iter().filter(|x| **x == s).count();
            prop_assert_eq!(n, 1);
        }
        prop_assert_eq!(agreed.len() + conflict_a.len(), a.len());
        prop_assert_eq!(agreed.len() + conflict_b.len(), b.len());
        prop_assert_eq!(m.conflicts.is_empty(), a == b);
    }

    #[test]
    fn merge_is_symmetric((a, b) in sides()) {
        let d = doc("d1", LEN);
        let schema = span_schema();
        let ann_a = Annotation::human("d1", "A", Payload::spans(a));
        let ann_b = Annotation::human("d1", "B", Payload::spans(b));
        let ab = merge_pair(&ann_a, &ann_b, &d, &schema, 0.0).unwrap();
        let ba = merge_pair(&ann_b, &ann_a, &d, &schema, 0.0).unwrap();
        prop_assert_eq!(&ab.agreed, &ba.agreed);
        prop_assert_eq!(ab.conflicts.len(), ba.conflicts.len());
        for (x, y) in ab.conflicts.iter().zip(&ba.conflicts) {
            prop_assert_eq!(&x.conflict_id, &y.conflict_id);
            prop_assert_eq!(x.kind, y.kind);
            prop_assert_eq!(&x.side_a, &y.side_b);
            prop_assert_eq!(&x.side_b, &y.side_a);
        }
    }

    #[test]
    fn random_resolutions_validate(
        pairs in prop::collection::vec(sides(), 1..5),
        picks in prop::collection::vec((0usize..4, 0usize..8, 1usize..6, 0usize..3), 40),
    ) {
        let schema = span_schema();
        let docs: Vec<_> = (0..pairs.len()).map(|i| doc(&format!("d{i}"), LEN)).collect();
        let (sa, sb): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        let set_a = span_set("A", &docs, &sa);
        let set_b = span_set("B", &docs, &sb);
        let merged = merge_part(&set_a, &set_b, &docs, &schema, 0.0).unwrap();

        let mut picks = picks.into_iter().cycle();
        let resolutions: Vec<Resolution> = merged
            .iter()
            .flat_map(|m| &m.conflicts)
            .map(|c| {
                let (which, off, len, label) = picks.next().unwrap();
                let choice = match which {
                    0 => Choice::TakeA,
                    1 => Choice::TakeB,
                    2 => Choice::Neither,
                    _ => {
                        let (start, end) = c.region().unwrap();
                        let s = (start + off).min(end - 1);
                        let e = (s + len).min(end);
                        Choice::Custom(Payload::spans([Span::new(s, e, SPAN_LABELS[label])]))
                    }
                };
                Resolution::new(c.conflict_id.clone(), choice)
            })
            .collect();
        let out = apply_resolutions(&merged, &resolutions, &docs, &schema, "final").unwrap();
        prop_assert_eq!(out.len(), docs.len());
        for (ann, d) in out.iter().zip(&docs) {
            prop_assert!(validate_annotation(ann, d, &schema).unwrap().is_valid());
        }
    }

    #[test]
    fn class_merges_conflict_iff_different(x in 0usize..3, y in 0usize..3) {
        let schema = LabelSchema::doc_class(["POS", "NEG", "NEU"]).unwrap();
        let d = doc("d1", 10);
        let m = merge_pair(
            &Annotation::human("d1", "A", Payload::class(schema.classes[x].clone())),
            &Annotation::human("d1", "B", Payload::class(schema.classes[y].clone())),
            &d, &schema, 0.0,
        ).unwrap();
        prop_assert_eq!(m.conflicts.is_empty(), x == y);
        prop_assert!(m.conflicts.iter().all(|c| c.kind == ConflictKind::LabelMismatch));
    }

    #[test]
    fn score_merges_respect_tolerance(x in 0.0f64..5.0, y in 0.0f64..5.0, tol in 0.0f64..1.0) {
        let schema = LabelSchema::pair_regress(0.0, 5.0).unwrap();
        let d = annoflow_core::Document::pair("p", "a", "b");
        let m = merge_pair(
            &Annotation::human("p", "A", Payload::Score { value: x }),
            &Annotation::human("p", "B", Payload::Score { value: y }),
            &d, &schema, tol,
        ).unwrap();
        prop_assert_eq!(m.conflicts.is_empty(), (x - y).abs() <= tol);
    }
}
