//! Inter-annotator agreement: Cohen's κ, Fleiss' κ and pairwise span F1.
//!
//! Both κ variants use `κ = (p_o − p_e) / (1 − p_e)`. Cohen takes `p_e` from
//! the product of the two annotators' marginals; Fleiss from the squared pooled
//! category proportions. A chance agreement of 1 leaves κ undefined and is
//! reported as an error.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::count_span_matches;
use crate::model::{check_same_coverage, AnnotationSet, LabelSchema, TaskKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgreementMetric {
    CohenKappa,
    FleissKappa,
    PairwiseF1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub metric: AgreementMetric,
    pub value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observed_agreement: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_agreement: Option<f64>,
    pub n_items: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_class: Option<BTreeMap<String, f64>>,
}

/// Maps each annotated document to its class index in `schema`.
fn class_indices(set: &AnnotationSet, schema: &LabelSchema) -> Result<BTreeMap<String, usize>> {
    set.iter()
        .map(|ann| {
            let class = ann.payload.as_class().ok_or_else(|| Error::InvalidAnnotation {
                doc_id: ann.doc_id.clone(),
                reason: "class payload required".into(),
            })?;
            let idx = schema
                .class_index(class)
                .ok_or_else(|| Error::UnknownClass(class.to_string()))?;
            Ok((ann.doc_id.clone(), idx))
        })
        .collect()
}

/// κ from paired class indices over `k` categories: `(value, p_o, p_e)`.
pub fn kappa_from_labels(a: &[usize], b: &[usize], k: usize) -> Result<(f64, f64, f64)> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(Error::TooFewItems { needed: 1, got: 0 });
    }
    let n = a.len() as f64;
    let mut marg_a = vec![0usize; k];
    let mut marg_b = vec![0usize; k];
    let mut agree = 0usize;
    for (&x, &y) in a.iter().zip(b) {
        marg_a[x] += 1;
        marg_b[y] += 1;
        if x == y {
            agree += 1;
        }
    }
    let observed = agree as f64 / n;
    let expected: f64 = marg_a
        .iter()
        .zip(&marg_b)
        .map(|(&ca, &cb)| (ca as f64 / n) * (cb as f64 / n))
        .sum();
    if expected >= 1.0 {
        return Err(Error::Undefined {
            metric: "cohen_kappa",
            reason: "κ undefined (degenerate marginals)".into(),
        });
    }
    Ok(((observed - expected) / (1.0 - expected), observed, expected))
}

/// Cohen's κ between two annotators on a document-classification task.
///
/// `per_class` holds the one-vs-rest κ of each class where it is defined.
pub fn cohen_kappa(set_a: &AnnotationSet, set_b: &AnnotationSet, schema: &LabelSchema) -> Result<AgreementReport> {
    schema.require(TaskKind::DocClass)?;
    check_same_coverage(set_a, set_b)?;
    let a = class_indices(set_a, schema)?;
    let b = class_indices(set_b, schema)?;
    let xs: Vec<usize> = a.values().copied().collect();
    let ys: Vec<usize> = a.keys().map(|id| b[id]).collect();
    let (value, observed, expected) = kappa_from_labels(&xs, &ys, schema.classes.len())?;

    let mut per_class = BTreeMap::new();
    for (idx, class) in schema.classes.iter().enumerate() {
        let bx: Vec<usize> = xs.iter().map(|&x| usize::from(x == idx)).collect();
        let by: Vec<usize> = ys.iter().map(|&y| usize::from(y == idx)).collect();
        if let Ok((k, _, _)) = kappa_from_labels(&bx, &by, 2) {
            per_class.insert(class.clone(), k);
        }
    }
    Ok(AgreementReport {
        metric: AgreementMetric::CohenKappa,
        value,
        observed_agreement: Some(observed),
        expected_agreement: Some(expected),
        n_items: xs.len(),
        per_class: Some(per_class),
    })
}

/// Fleiss' κ over several annotators. Every document annotated by any set must
/// be annotated by the same number `r ≥ 2` of sets.
///
/// `per_class` holds the category-wise κ_j where the category's pooled
/// proportion lies strictly between 0 and 1.
pub fn fleiss_kappa(sets: &[AnnotationSet], schema: &LabelSchema) -> Result<AgreementReport> {
    schema.require(TaskKind::DocClass)?;
    if sets.len() < 2 {
        return Err(Error::TooFewItems {
            needed: 2,
            got: sets.len(),
        });
    }
    let k = schema.classes.len();
    let mut counts: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for set in sets {
        for (doc_id, idx) in class_indices(set, schema)? {
            counts.entry(doc_id).or_insert_with(|| vec![0; k])[idx] += 1;
        }
    }
    let table: Vec<Vec<usize>> = counts.values().cloned().collect();
    let raters = counts.values().next().map(|row| row.iter().sum()).unwrap_or(0);
    for (doc_id, row) in &counts {
        let r: usize = row.iter().sum();
        if r != raters {
            return Err(Error::VaryingRaters {
                doc_id: doc_id.clone(),
                expected: raters,
                found: r,
            });
        }
    }
    let (value, observed, expected) = fleiss_from_counts(&table)?;

    let n_items = table.len() as f64;
    let r = raters as f64;
    let mut per_class = BTreeMap::new();
    for (j, class) in schema.classes.iter().enumerate() {
        let p_j = table.iter().map(|row| row[j] as f64).sum::<f64>() / (n_items * r);
        if p_j > 0.0 && p_j < 1.0 {
            let disagreement: f64 = table
                .iter()
                .map(|row| {
                    let c = row[j] as f64;
                    c * (r - c)
                })
                .sum();
            let kappa_j = 1.0 - disagreement / (n_items * r * (r - 1.0) * p_j * (1.0 - p_j));
            per_class.insert(class.clone(), kappa_j);
        }
    }
    Ok(AgreementReport {
        metric: AgreementMetric::FleissKappa,
        value,
        observed_agreement: Some(observed),
        expected_agreement: Some(expected),
        n_items: table.len(),
        per_class: Some(per_class),
    })
}

/// Fleiss' κ from an items × categories count table with constant row sums.
/// Returns `(κ, P̄, P̄e)`.
pub fn fleiss_from_counts(table: &[Vec<usize>]) -> Result<(f64, f64, f64)> {
    if table.is_empty() {
        return Err(Error::TooFewItems { needed: 1, got: 0 });
    }
    let r: usize = table[0].iter().sum();
    if r < 2 {
        return Err(Error::TooFewItems { needed: 2, got: r });
    }
    let n = table.len() as f64;
    let rf = r as f64;
    let k = table[0].len();
    let mut column = vec![0usize; k];
    let mut p_sum = 0.0;
    for row in table {
        let sq: usize = row.iter().map(|&c| c * c).sum();
        p_sum += (sq - r) as f64 / (rf * (rf - 1.0));
        for (j, &c) in row.iter().enumerate() {
            column[j] += c;
        }
    }
    let observed = p_sum / n;
    let expected: f64 = column
        .iter()
        .map(|&c| {
            let p = c as f64 / (n * rf);
            p * p
        })
        .sum();
    if expected >= 1.0 {
        return Err(Error::Undefined {
            metric: "fleiss_kappa",
            reason: "κ undefined (all ratings in one category)".into(),
        });
    }
    Ok(((observed - expected) / (1.0 - expected), observed, expected))
}

/// Span agreement as F1, treating `gold` as reference and `pred` as
/// predictions. Symmetric in its value.
pub fn pairwise_f1(gold: &AnnotationSet, pred: &AnnotationSet, schema: &LabelSchema) -> Result<AgreementReport> {
    schema.require(TaskKind::SpanLabel)?;
    let counts = count_span_matches(gold, pred)?;
    if counts.gold == 0 && counts.pred == 0 {
        return Err(Error::Undefined {
            metric: "pairwise_f1",
            reason: "no spans on either side".into(),
        });
    }
    let labels: BTreeSet<&String> = schema.classes.iter().collect();
    let per_class = counts
        .per_label_f1()
        .into_iter()
        .filter(|(l, _)| labels.contains(l))
        .collect();
    Ok(AgreementReport {
        metric: AgreementMetric::PairwiseF1,
        value: counts.f1(),
        observed_agreement: None,
        expected_agreement: None,
        n_items: gold.len(),
        per_class: Some(per_class),
    })
}
