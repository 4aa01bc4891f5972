mod common;

use annoflow_core::agreement::{cohen_kappa, fleiss_kappa, pairwise_f1};
use annoflow_core::metrics::entity_f1;
use annoflow_core::Error;
use common::*;
use proptest::prelude::*;

fn label_pairs() -> impl Strategy<Value = (usize, Vec<(usize, usize)>)> {
    (2usize..5).prop_flat_map(|k| (Just(k), prop::collection::vec((0..k, 0..k), 2..40)))
}

proptest! {
    #[test]
    fn cohen_range_symmetry_and_permutation((k, pairs) in label_pairs(), rot in 1usize..4) {
        let schema = n_classes(k);
        let (la, lb): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
        let a = class_set("A", &la, &schema);
        let b = class_set("B", &lb, &schema);
        match cohen_kappa(&a, &b, &schema) {
            Ok(ab) => {
                prop_assert!((-1.0..=1.0).contains(&ab.value));
                let ba = cohen_kappa(&b, &a, &schema).unwrap();
                prop_assert!((ab.value - ba.value).abs() < 1e-12);
                if ab.observed_agreement == Some(1.0) {
                    prop_assert_eq!(ab.value, 1.0);
                }
                let perm = |l: &Vec<usize>| l.iter().map(|x| (x + rot) % k).collect::<Vec<_>>();
                let pa = class_set("A", &perm(&la), &schema);
                let pb = class_set("B", &perm(&lb), &schema);
                let p = cohen_kappa(&pa, &pb, &schema).unwrap();
                prop_assert!((ab.value - p.value).abs() < 1e-12);
            }
            Err(e) => prop_assert!(matches!(e, Error::Undefined { .. }), "unexpected error {:?}", e),
        }
    }

    #[test]
    fn fleiss_range_and_permutation(k in 2usize..5, raters in 3usize..6, labels in prop::collection::vec(0usize..5, 90), rot in 1usize..4) {
        let schema = n_classes(k);
        let n = labels.len() / raters;
        let sets: Vec<_> = (0..raters)
            .map(|r| class_set(&format!("r{r}"), &labels[r * n..(r + 1) * n].iter().map(|l| l % k).collect::<Vec<_>>(), &schema))
            .collect();
        if let Ok(rep) = fleiss_kappa(&sets, &schema) {
            prop_assert!(rep.value <= 1.0 && rep.value >= -1.0);
            let rotated: Vec<_> = (0..raters)
                .map(|r| class_set(&format!("r{r}"), &labels[r * n..(r + 1) * n].iter().map(|l| (l % k + rot) % k).collect::<Vec<_>>(), &schema))
                .collect();
            let p = fleiss_kappa(&rotated, &schema).unwrap();
            prop_assert!((rep.value - p.value).abs() < 1e-12);
        }
    }

    #[test]
    fn pairwise_f1_swap_symmetry_and_kernel(a in prop::collection::vec(spans_strategy(50), 1..6), b in prop::collection::vec(spans_strategy(50), 6)) {
        let schema = span_schema();
        let docs: Vec<_> = (0..a.len()).map(|i| doc(&format!("d{i}"), 50)).collect();
        let sa = span_set("A", &docs, &a);
        let sb = span_set("B", &docs, &b[..a.len()]);
        let Ok(ab) = pairwise_f1(&sa, &sb, &schema) else {
            prop_assert!(entity_f1(&sa, &sb).is_err());
            return Ok(());
        };
        let ba = pairwise_f1(&sb, &sa, &schema).unwrap();
        prop_assert!((0.0..=1.0).contains(&ab.value));
        prop_assert!((ab.value - ba.value).abs() < 1e-12);
        prop_assert_eq!(entity_f1(&sa, &sb).unwrap().value, ab.value);
    }
}
