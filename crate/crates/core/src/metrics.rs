//! Model-evaluation metrics: accuracy, precision/recall/F1, entity-level F1,
//! Pearson, Spearman and RMSE.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{check_same_coverage, AnnotationSet, LabelSchema, Payload, Span, TaskKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    PerClass,
    Micro,
    Macro,
}

/// Per-class scores. `None` marks a zero denominator; F1 is defined whenever
/// the class occurs on either side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl ClassScore {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = (tp + fp + fn_ > 0).then(|| harmonic_f1(tp, fp, fn_));
        ClassScore {
            precision,
            recall,
            f1,
            tp,
            fp,
            fn_,
        }
    }

    pub fn support(&self) -> usize {
        self.tp + self.fn_
    }
}

/// `2TP / (2TP + FP + FN)`, the harmonic mean of precision and recall.
/// Zero when there are no true positives.
fn harmonic_f1(tp: usize, fp: usize, fn_: usize) -> f64 {
    let den = 2 * tp + fp + fn_;
    if den == 0 {
        0.0
    } else {
        (2 * tp) as f64 / den as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metric: String,
    pub value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub precision: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recall: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_class: Option<BTreeMap<String, ClassScore>>,
    /// Number of items (documents, spans or score pairs) the value is based on.
    pub support: usize,
    /// Classes whose scores were undefined and were left out of averages.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub undefined_classes: Vec<String>,
}

impl EvalReport {
    fn scalar(metric: &str, value: f64, support: usize) -> Self {
        EvalReport {
            metric: metric.to_string(),
            value,
            precision: None,
            recall: None,
            per_class: None,
            support,
            undefined_classes: Vec::new(),
        }
    }
}

/// Exact-match counts between two span sets, per label.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SpanCounts {
    pub matched: usize,
    pub gold: usize,
    pub pred: usize,
    pub per_label: BTreeMap<String, (usize, usize, usize)>,
}

impl SpanCounts {
    pub fn f1(&self) -> f64 {
        harmonic_f1(self.matched, self.pred - self.matched, self.gold - self.matched)
    }

    pub fn precision(&self) -> Option<f64> {
        (self.pred > 0).then(|| self.matched as f64 / self.pred as f64)
    }

    pub fn recall(&self) -> Option<f64> {
        (self.gold > 0).then(|| self.matched as f64 / self.gold as f64)
    }

    /// F1 per label, `2TP / (2TP + FP + FN)`.
    pub fn per_label_f1(&self) -> BTreeMap<String, f64> {
        self.per_label
            .iter()
            .map(|(label, &(tp, gold, pred))| (label.clone(), harmonic_f1(tp, pred - tp, gold - tp)))
            .collect()
    }
}

/// Entity-level exact-match counting on `(start, end, label)` over documents
/// annotated in both sets. Shared by agreement and evaluation.
pub fn count_span_matches(gold: &AnnotationSet, pred: &AnnotationSet) -> Result<SpanCounts> {
    check_same_coverage(gold, pred)?;
    let mut counts = SpanCounts::default();
    for (doc_id, g) in &gold.annotations {
        let p = &pred.annotations[doc_id];
        let (gs, ps) = match (&g.payload, &p.payload) {
            (Payload::Spans { spans: gs }, Payload::Spans { spans: ps }) => (gs, ps),
            _ => {
                return Err(Error::InvalidAnnotation {
                    doc_id: doc_id.clone(),
                    reason: "span payload required".into(),
                })
            }
        };
        let pred_set: std::collections::BTreeSet<&Span> = ps.iter().collect();
        for s in gs {
            let entry = counts.per_label.entry(s.label.clone()).or_default();
            entry.1 += 1;
            if pred_set.contains(s) {
                entry.0 += 1;
                counts.matched += 1;
            }
        }
        for s in ps {
            counts.per_label.entry(s.label.clone()).or_default().2 += 1;
        }
        counts.gold += gs.len();
        counts.pred += ps.len();
    }
    Ok(counts)
}

fn class_pairs<'a>(gold: &'a AnnotationSet, pred: &'a AnnotationSet) -> Result<Vec<(&'a str, &'a str)>> {
    check_same_coverage(gold, pred)?;
    gold.annotations
        .iter()
        .map(|(doc_id, g)| {
            let p = &pred.annotations[doc_id];
            match (g.payload.as_class(), p.payload.as_class()) {
                (Some(x), Some(y)) => Ok((x, y)),
                _ => Err(Error::InvalidAnnotation {
                    doc_id: doc_id.clone(),
                    reason: "class payload required".into(),
                }),
            }
        })
        .collect()
}

/// Fraction of documents where both sets assign the same class.
pub fn accuracy(gold: &AnnotationSet, pred: &AnnotationSet) -> Result<EvalReport> {
    let pairs = class_pairs(gold, pred)?;
    if pairs.is_empty() {
        return Err(Error::TooFewItems { needed: 1, got: 0 });
    }
    let hits = pairs.iter().filter(|(g, p)| g == p).count();
    Ok(EvalReport::scalar("accuracy", hits as f64 / pairs.len() as f64, pairs.len()))
}

/// Precision, recall and F1 for document classification.
///
/// `per_class` is always filled in. `value` is the micro F1 for
/// [`Aggregation::Micro`] and the macro F1 otherwise. The macro average runs
/// over classes with gold support; the classes left out are listed in
/// `undefined_classes`.
pub fn precision_recall_f1(
    gold: &AnnotationSet,
    pred: &AnnotationSet,
    schema: &LabelSchema,
    aggregation: Aggregation,
) -> Result<EvalReport> {
    schema.require(TaskKind::DocClass)?;
    let pairs = class_pairs(gold, pred)?;
    if pairs.is_empty() {
        return Err(Error::TooFewItems { needed: 1, got: 0 });
    }
    let mut counts: BTreeMap<&str, (usize, usize, usize)> =
        schema.classes.iter().map(|c| (c.as_str(), (0, 0, 0))).collect();
    for (g, p) in &pairs {
        if g == p {
            counts.entry(g).or_default().0 += 1;
        } else {
            counts.entry(p).or_default().1 += 1;
            counts.entry(g).or_default().2 += 1;
        }
    }
    let per_class: BTreeMap<String, ClassScore> = counts
        .iter()
        .map(|(c, &(tp, fp, fn_))| (c.to_string(), ClassScore::from_counts(tp, fp, fn_)))
        .collect();
    let undefined_classes: Vec<String> = per_class
        .iter()
        .filter(|(_, s)| s.support() == 0)
        .map(|(c, _)| c.clone())
        .collect();

    let (tp, fp, fn_) = counts
        .values()
        .fold((0, 0, 0), |acc, c| (acc.0 + c.0, acc.1 + c.1, acc.2 + c.2));
    let micro = ClassScore::from_counts(tp, fp, fn_);
    let supported: Vec<&ClassScore> = per_class.values().filter(|s| s.support() > 0).collect();

    let (metric, value, precision, recall) = match aggregation {
        Aggregation::Micro => ("micro_f1", harmonic_f1(tp, fp, fn_), micro.precision, micro.recall),
        Aggregation::Macro | Aggregation::PerClass => {
            let mean = |xs: Vec<f64>| (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64);
            let f1 = mean(supported.iter().filter_map(|s| s.f1).collect()).ok_or_else(|| Error::Undefined {
                metric: "macro_f1",
                reason: "no class has gold support".into(),
            })?;
            let ps = mean(supported.iter().filter_map(|s| s.precision).collect());
            let rs = mean(supported.iter().filter_map(|s| s.recall).collect());
            let name = if aggregation == Aggregation::Macro { "macro_f1" } else { "f1_per_class" };
            (name, f1, ps, rs)
        }
    };
    Ok(EvalReport {
        metric: metric.to_string(),
        value,
        precision,
        recall,
        per_class: Some(per_class),
        support: pairs.len(),
        undefined_classes,
    })
}

/// Entity-level F1 with exact `(start, end, label)` matching.
pub fn entity_f1(gold: &AnnotationSet, pred: &AnnotationSet) -> Result<EvalReport> {
    let counts = count_span_matches(gold, pred)?;
    if counts.gold == 0 && counts.pred == 0 {
        return Err(Error::Undefined {
            metric: "entity_f1",
            reason: "no spans on either side".into(),
        });
    }
    let per_class = counts
        .per_label
        .iter()
        .map(|(label, &(tp, g, p))| (label.clone(), ClassScore::from_counts(tp, p - tp, g - tp)))
        .collect();
    Ok(EvalReport {
        metric: "entity_f1".into(),
        value: counts.f1(),
        precision: counts.precision(),
        recall: counts.recall(),
        per_class: Some(per_class),
        support: counts.gold,
        undefined_classes: Vec::new(),
    })
}

/// `(gold, pred)` score vectors over documents annotated in both sets.
pub fn score_pairs(gold: &AnnotationSet, pred: &AnnotationSet) -> Result<(Vec<f64>, Vec<f64>)> {
    check_same_coverage(gold, pred)?;
    let mut xs = Vec::with_capacity(gold.len());
    let mut ys = Vec::with_capacity(gold.len());
    for (doc_id, g) in &gold.annotations {
        match (g.payload.as_score(), pred.annotations[doc_id].payload.as_score()) {
            (Some(x), Some(y)) => {
                xs.push(x);
                ys.push(y);
            }
            _ => {
                return Err(Error::InvalidAnnotation {
                    doc_id: doc_id.clone(),
                    reason: "score payload required".into(),
                })
            }
        }
    }
    Ok((xs, ys))
}

fn check_lengths(x: &[f64], y: &[f64], min: usize) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < min {
        return Err(Error::TooFewItems {
            needed: min,
            got: x.len(),
        });
    }
    Ok(())
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn correlation(x: &[f64], y: &[f64], metric: &'static str) -> Result<f64> {
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Undefined {
            metric,
            reason: "zero variance".into(),
        });
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Sample Pearson correlation.
pub fn pearson(gold: &[f64], pred: &[f64]) -> Result<EvalReport> {
    check_lengths(gold, pred, 2)?;
    let r = correlation(gold, pred, "pearson")?;
    Ok(EvalReport::scalar("pearson", r, gold.len()))
}

/// 1-based ranks; tied values share the mean of the ranks they span.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&i, &j| x[i].partial_cmp(&x[j]).unwrap_or(Ordering::Equal));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        // positions i..=j hold ranks i+1..=j+1
        let rank = (i + j + 2) as f64 / 2.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation: Pearson over average ranks.
pub fn spearman(gold: &[f64], pred: &[f64]) -> Result<EvalReport> {
    check_lengths(gold, pred, 2)?;
    let r = correlation(&average_ranks(gold), &average_ranks(pred), "spearman")?;
    Ok(EvalReport::scalar("spearman", r, gold.len()))
}

pub fn rmse(gold: &[f64], pred: &[f64]) -> Result<EvalReport> {
    check_lengths(gold, pred, 1)?;
    let mse = gold.iter().zip(pred).map(|(g, p)| (g - p).powi(2)).sum::<f64>() / gold.len() as f64;
    Ok(EvalReport::scalar("rmse", mse.sqrt(), gold.len()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Annotation;

    fn classes(who: &str, labels: &[&str]) -> AnnotationSet {
        AnnotationSet::from_annotations(
            who,
            labels
                .iter()
                .enumerate()
                .map(|(i, l)| Annotation::human(format!("d{i}"), who, Payload::class(*l))),
        )
        .unwrap()
    }

    fn span_set(who: &str, spans: Vec<Span>) -> AnnotationSet {
        AnnotationSet::from_annotations(who, [Annotation::human("d0", who, Payload::spans(spans))]).unwrap()
    }

    fn schema() -> LabelSchema {
        LabelSchema::doc_class(["P", "N"]).unwrap()
    }

    #[test]
    fn accuracy_examples() {
        let gold = classes("g", &["P", "N", "N", "P"]);
        assert_eq!(accuracy(&gold, &classes("p", &["P", "N", "P", "P"])).unwrap().value, 0.75);
        assert_eq!(accuracy(&gold, &gold).unwrap().value, 1.0);
        assert_eq!(accuracy(&gold, &classes("p", &["N", "P", "P", "N"])).unwrap().value, 0.0);
    }

    #[test]
    fn accuracy_coverage_mismatch() {
        let gold = classes("g", &["P", "N"]);
        let pred = classes("p", &["P"]);
        assert!(matches!(accuracy(&gold, &pred), Err(Error::CoverageMismatch { .. })));
    }

    #[test]
    fn class_score_formula() {
        let s = ClassScore::from_counts(2, 1, 1);
        assert!((s.precision.unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!((s.recall.unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!((s.f1.unwrap() - 2.0 / 3.0).abs() < 1e-15);
        let never_predicted = ClassScore::from_counts(0, 0, 3);
        assert_eq!(never_predicted.precision, None);
        assert_eq!(never_predicted.f1, Some(0.0));
        assert_eq!(ClassScore::from_counts(0, 0, 0).f1, None);
    }

    #[test]
    fn identity_gives_perfect_scores() {
        let gold = classes("g", &["P", "N", "N", "P"]);
        let r = precision_recall_f1(&gold, &gold, &schema(), Aggregation::PerClass).unwrap();
        for s in r.per_class.unwrap().values() {
            assert_eq!((s.precision, s.recall, s.f1), (Some(1.0), Some(1.0), Some(1.0)));
        }
    }

    #[test]
    fn micro_f1_equals_accuracy() {
        let gold = classes("g", &["P", "N", "N", "P", "N"]);
        let pred = classes("p", &["P", "P", "N", "N", "N"]);
        let micro = precision_recall_f1(&gold, &pred, &schema(), Aggregation::Micro).unwrap();
        assert_eq!(micro.value, accuracy(&gold, &pred).unwrap().value);
    }

    #[test]
    fn macro_excludes_undefined_classes() {
        let schema = LabelSchema::doc_class(["P", "N", "U"]).unwrap();
        let gold = classes("g", &["P", "N", "P"]);
        let pred = classes("p", &["P", "N", "N"]);
        let r = precision_recall_f1(&gold, &pred, &schema, Aggregation::Macro).unwrap();
        assert_eq!(r.undefined_classes, vec!["U".to_string()]);
        // P: tp1 fn1 -> 2/3, N: tp1 fp1 -> 2/3
        assert!((r.value - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn entity_f1_examples() {
        let gold = span_set("g", vec![Span::new(0, 5, "S"), Span::new(10, 15, "S")]);
        let pred = span_set("p", vec![Span::new(0, 5, "S")]);
        let r = entity_f1(&gold, &pred).unwrap();
        assert_eq!(r.precision, Some(1.0));
        assert_eq!(r.recall, Some(0.5));
        assert!((r.value - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(entity_f1(&gold, &gold).unwrap().value, 1.0);
        let disjoint = span_set("p", vec![Span::new(20, 25, "S")]);
        assert_eq!(entity_f1(&gold, &disjoint).unwrap().value, 0.0);
        let empty = span_set("p", vec![]);
        assert!(matches!(entity_f1(&empty, &empty), Err(Error::Undefined { .. })));
    }

    #[test]
    fn correlation_examples() {
        let x = [1.0, 2.0, 4.0, 8.0];
        assert!((pearson(&x, &x).unwrap().value - 1.0).abs() < 1e-15);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson(&x, &neg).unwrap().value + 1.0).abs() < 1e-15);
        assert!(matches!(pearson(&x, &[1.0; 4]), Err(Error::Undefined { .. })));
        assert!(matches!(pearson(&[1.0], &[1.0]), Err(Error::TooFewItems { .. })));

        let y = [0.1, 0.5, 0.6, 100.0];
        assert_eq!(spearman(&x, &y).unwrap().value, 1.0);
        let rev = [4.0, 3.0, 2.0, 1.0];
        assert_eq!(spearman(&x, &rev).unwrap().value, -1.0);
    }

    #[test]
    fn average_ranks_with_ties() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap().value, 0.0);
        assert!((rmse(&[0.0, 0.0], &[3.0, 4.0]).unwrap().value - 3.5355339059327378).abs() < 1e-12);
        let r1 = rmse(&[0.0, 1.0, 2.0], &[0.5, 0.0, 2.5]).unwrap().value;
        let r3 = rmse(&[0.0, 3.0, 6.0], &[1.5, 0.0, 7.5]).unwrap().value;
        assert!((r3 - 3.0 * r1).abs() < 1e-12);
        assert!(matches!(rmse(&[1.0], &[1.0, 2.0]), Err(Error::LengthMismatch(1, 2))));
    }
}
