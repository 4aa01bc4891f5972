mod common;

use annoflow_core::model::{validate_annotation, validate_document};
use annoflow_core::{Annotation, Document, LabelSchema, Payload, ProjectManifest, Provenance, Span};
use common::*;
use proptest::prelude::*;

fn text_strategy() -> impl Strategy<Value = String> {
    "[a-zåäö ]{1,40}"
}

proptest! {
    #[test]
    fn document_round_trip(id in "[a-z0-9-]{1,12}", text in text_strategy(), b in proptest::option::of(text_strategy())) {
        let doc = Document { id, text, text_b: b, meta: None };
        let back: Document = serde_json::from_str(&serde_json::to_string(&doc).unwrap()).unwrap();
        prop_assert_eq!(back, doc);
    }

    #[test]
    fn annotation_round_trip(spans in spans_strategy(40), score in -5.0f64..5.0, which in 0usize..3) {
        let payload = match which {
            0 => Payload::spans(spans),
            1 => Payload::class("POS"),
            _ => Payload::Score { value: score },
        };
        let ann = Annotation::new("d1", "anna", Provenance::Human, payload);
        let back: Annotation = serde_json::from_str(&serde_json::to_string(&ann).unwrap()).unwrap();
        prop_assert_eq!(back, ann);
    }

    #[test]
    fn manifest_round_trip(seed in any::<u64>(), batch in 1usize..500, eps in 0.001f64..0.2) {
        let mut m = ProjectManifest::new(
            LabelSchema::doc_class(["POS", "NEG"]).unwrap(),
            vec!["a".into(), "b".into()],
            batch,
            seed,
        );
        m.plateau_epsilon = eps;
        m.test_set = vec!["d1".into()];
        let back: ProjectManifest = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
        prop_assert_eq!(back, m);
    }

    #[test]
    fn valid_span_payloads_pass(len in 10usize..60, spans in spans_strategy(60)) {
        let d = doc("d1", 60);
        let spans: Vec<Span> = spans.into_iter().filter(|s| s.end <= len.max(1)).collect();
        let ann = Annotation::human("d1", "a", Payload::spans(spans.clone()));
        prop_assert!(validate_annotation(&ann, &d, &span_schema()).unwrap().is_valid());
        // accepted payloads are already normalized
        prop_assert_eq!(Payload::spans(spans.clone()).normalized(), Payload::spans(spans));
    }

    #[test]
    fn single_mutation_is_rejected(spans in spans_strategy(50), pick in any::<prop::sample::Index>(), mutation in 0usize..4) {
        prop_assume!(!spans.is_empty());
        let d = doc("d1", 50);
        let schema = span_schema();
        let i = pick.index(spans.len());
        let mut bad = spans.clone();
        match mutation {
            0 => { let s = &mut bad[i]; s.end = s.start; }
            1 => bad[i].end = 51,
            2 => bad[i].label = "unknown".into(),
            _ => { let dup = bad[i].clone(); bad.insert(i, dup); }
        }
        let ann = Annotation::human("d1", "a", Payload::spans(bad));
        prop_assert!(!validate_annotation(&ann, &d, &schema).unwrap().is_valid());
    }

    #[test]
    fn score_range_is_enforced(v in -2.0f64..7.0) {
        let schema = LabelSchema::pair_regress(0.0, 5.0).unwrap();
        let d = Document::pair("p1", "a cat", "a dog");
        let ann = Annotation::human("p1", "a", Payload::Score { value: v });
        let ok = validate_annotation(&ann, &d, &schema).unwrap().is_valid();
        prop_assert_eq!(ok, (0.0..=5.0).contains(&v));
    }
}

#[test]
fn document_violations_name_fields() {
    let schema = LabelSchema::doc_class(["POS"]).unwrap();
    let report = validate_document(&Document::new("", ""), &schema);
    assert!(report.contains("empty id"));
    assert!(report.contains("empty text"));
    assert_eq!(report.violations.len(), 2);
}
