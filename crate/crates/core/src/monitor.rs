//! Learning-curve bookkeeping, plateau detection and train/test
//! representativeness monitoring.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AnnotationSet, LabelSchema, Payload, TaskKind};

/// Printed with every resplit.
pub const RESPLIT_WARNING: &str = "warning: the test set changed; all previous model evaluations \
     must be repeated on the new test set before they can be compared";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: u32,
    pub cumulative_train_size: usize,
    pub metric_name: String,
    pub metric_value: f64,
    #[serde(default)]
    pub agreement_value: Option<f64>,
    #[serde(default)]
    pub notes: Option<String>,
}

impl IterationRecord {
    pub fn new(iteration: u32, size: usize, metric: impl Into<String>, value: f64) -> Self {
        IterationRecord {
            iteration,
            cumulative_train_size: size,
            metric_name: metric.into(),
            metric_value: value,
            agreement_value: None,
            notes: None,
        }
    }
}

/// Append-only learning curve.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    records: Vec<IterationRecord>,
}

impl LearningCurve {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_records(records: impl IntoIterator<Item = IterationRecord>) -> Result<Self> {
        let mut curve = Self::new();
        for r in records {
            curve.record(r)?;
        }
        Ok(curve)
    }

    /// Appends `rec`, which must continue the iteration numbering with a larger
    /// training set and the same metric.
    pub fn record(&mut self, rec: IterationRecord) -> Result<()> {
        match self.records.last() {
            None => {
                if rec.iteration != 1 {
                    return Err(Error::IterationOutOfOrder {
                        last: 0,
                        found: rec.iteration,
                    });
                }
            }
            Some(last) => {
                if rec.iteration != last.iteration + 1 {
                    return Err(Error::IterationOutOfOrder {
                        last: last.iteration,
                        found: rec.iteration,
                    });
                }
                if rec.cumulative_train_size <= last.cumulative_train_size {
                    return Err(Error::NonMonotoneSize {
                        last: last.cumulative_train_size,
                        found: rec.cumulative_train_size,
                    });
                }
                if rec.metric_name != last.metric_name {
                    return Err(Error::MetricNameMismatch {
                        expected: last.metric_name.clone(),
                        found: rec.metric_name,
                    });
                }
            }
        }
        self.records.push(rec);
        Ok(())
    }

    pub fn records(&self) -> &[IterationRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&IterationRecord> {
        self.records.last()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlateauStatus {
    pub plateaued: bool,
    /// Iteration that closes the first step of the qualifying window.
    pub at_iteration: Option<u32>,
}

/// Plateau iff each of the last `window` steps improved the metric by less
/// than `epsilon`.
pub fn detect_plateau(curve: &LearningCurve, epsilon: f64, window: usize) -> Result<PlateauStatus> {
    if epsilon.is_nan() || epsilon <= 0.0 {
        return Err(Error::InvalidParameter(format!("epsilon must be > 0, got {epsilon}")));
    }
    if window == 0 {
        return Err(Error::InvalidParameter("window must be ≥ 1".into()));
    }
    let recs = curve.records();
    if recs.len() < window + 1 {
        return Err(Error::TooFewItems {
            needed: window + 1,
            got: recs.len(),
        });
    }
    let tail = &recs[recs.len() - window - 1..];
    let plateaued = tail
        .windows(2)
        .all(|w| w[1].metric_value - w[0].metric_value < epsilon);
    Ok(PlateauStatus {
        plateaued,
        at_iteration: plateaued.then(|| tail[1].iteration),
    })
}

/// Relative label frequencies.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LabelDistribution(pub BTreeMap<String, f64>);

impl LabelDistribution {
    pub fn from_counts(counts: &BTreeMap<String, usize>) -> Result<Self> {
        let total: usize = counts.values().sum();
        if total == 0 {
            return Err(Error::NoLabeledItems);
        }
        Ok(LabelDistribution(
            counts
                .iter()
                .map(|(k, &v)| (k.clone(), v as f64 / total as f64))
                .collect(),
        ))
    }

    pub fn get(&self, class: &str) -> f64 {
        self.0.get(class).copied().unwrap_or(0.0)
    }
}

/// Label distribution over one or more annotation sets. Span tasks count
/// spans per label.
pub fn label_distribution(sets: &[&AnnotationSet], schema: &LabelSchema) -> Result<LabelDistribution> {
    if schema.task_kind == TaskKind::PairRegress {
        return Err(Error::WrongTaskKind {
            expected: TaskKind::DocClass,
            found: schema.task_kind,
        });
    }
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for set in sets {
        for ann in set.iter() {
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
    }
    if let Some(unknown) = counts.keys().find(|c| !schema.has_class(c)) {
        return Err(Error::UnknownClass(unknown.clone()));
    }
    LabelDistribution::from_counts(&counts)
}

/// Total variation distance; classes missing on one side count as 0.
pub fn divergence(p: &LabelDistribution, q: &LabelDistribution) -> f64 {
    let keys: BTreeSet<&String> = p.0.keys().chain(q.0.keys()).collect();
    let l1: f64 = keys.iter().map(|k| (p.get(k) - q.get(k)).abs()).sum();
    (l1 / 2.0).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitStatus {
    Ok,
    ConsiderResplit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RepresentativenessReport {
    pub status: SplitStatus,
    pub divergence: f64,
}

pub fn check_representativeness(
    train: &LabelDistribution,
    test: &LabelDistribution,
    threshold: f64,
) -> RepresentativenessReport {
    let d = divergence(train, test);
    RepresentativenessReport {
        status: if d > threshold {
            SplitStatus::ConsiderResplit
        } else {
            SplitStatus::Ok
        },
        divergence: d,
    }
}

/// One document in a resplit pool. `label` is the stratum used for
/// stratified splitting.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolItem {
    pub doc_id: String,
    pub label: Option<String>,
}

impl PoolItem {
    pub fn new(doc_id: impl Into<String>, label: Option<&str>) -> Self {
        PoolItem {
            doc_id: doc_id.into(),
            label: label.map(str::to_string),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<String>,
    pub test: Vec<String>,
    pub warning: String,
}

/// Seeded train/test split of `pool`.
///
/// The test set has `round(test_fraction · n)` documents. With `stratified`,
/// the per-class test quotas are apportioned by largest remainder, so each
/// class gets `floor` or `ceil` of its exact share.
pub fn resplit(pool: &[PoolItem], test_fraction: f64, seed: u64, stratified: bool) -> Result<Split> {
    if pool.len() < 2 {
        return Err(Error::TooFewItems {
            needed: 2,
            got: pool.len(),
        });
    }
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "test fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let mut seen = BTreeSet::new();
    for item in pool {
        if !seen.insert(item.doc_id.as_str()) {
            return Err(Error::DuplicateDocument(item.doc_id.clone()));
        }
    }
    let n = pool.len();
    let target = (test_fraction * n as f64).round() as usize;
    if target == 0 {
        return Err(Error::EmptySplit("test set would be empty".into()));
    }
    if target >= n {
        return Err(Error::EmptySplit("train set would be empty".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut test: Vec<String> = Vec::with_capacity(target);
    let mut train: Vec<String> = Vec::with_capacity(n - target);

    if stratified {
        let mut strata: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for item in pool {
            match item.label.as_deref() {
                Some(l) if !l.is_empty() => strata.entry(l).or_default().push(&item.doc_id),
                _ => {
                    return Err(Error::InvalidParameter(format!(
                        "stratified split needs a class for every document; '{}' has none",
                        item.doc_id
                    )))
                }
            }
        }
        let quotas = apportion(&strata.values().map(Vec::len).collect::<Vec<_>>(), test_fraction, target);
        for (members, quota) in strata.into_values().zip(quotas) {
            let mut members: Vec<&str> = members;
            members.sort_unstable();
            members.shuffle(&mut rng);
            test.extend(members[..quota].iter().map(|s| s.to_string()));
            train.extend(members[quota..].iter().map(|s| s.to_string()));
        }
    } else {
        let mut ids: Vec<&str> = pool.iter().map(|p| p.doc_id.as_str()).collect();
        ids.sort_unstable();
        ids.shuffle(&mut rng);
        test.extend(ids[..target].iter().map(|s| s.to_string()));
        train.extend(ids[target..].iter().map(|s| s.to_string()));
    }
    test.sort();
    train.sort();
    Ok(Split {
        train,
        test,
        warning: RESPLIT_WARNING.to_string(),
    })
}

/// Largest-remainder apportionment of `total` seats over classes of the given
/// sizes at rate `fraction`; remainder ties go to the earlier class.
fn apportion(sizes: &[usize], fraction: f64, total: usize) -> Vec<usize> {
    let exact: Vec<f64> = sizes.iter().map(|&s| s as f64 * fraction).collect();
    let mut quotas: Vec<usize> = exact.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = quotas.iter().sum();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&i, &j| {
        let (ri, rj) = (exact[i] - exact[i].floor(), exact[j] - exact[j].floor());
        rj.total_cmp(&ri).then(i.cmp(&j))
    });
    let mut left = total.saturating_sub(assigned);
    for i in order {
        if left == 0 {
            break;
        }
        if quotas[i] < sizes[i] {
            quotas[i] += 1;
            left -= 1;
        }
    }
    quotas
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Annotation, Payload};

    fn curve(values: &[f64]) -> LearningCurve {
        LearningCurve::from_records(
            values
                .iter()
                .enumerate()
                .map(|(i, &v)| IterationRecord::new(i as u32 + 1, 500 * (i + 1), "accuracy", v)),
        )
        .unwrap()
    }

    #[test]
    fn record_rules() {
        let mut c = LearningCurve::new();
        c.record(IterationRecord::new(1, 500, "accuracy", 0.60)).unwrap();
        assert_eq!(c.len(), 1);
        assert!(matches!(
            c.record(IterationRecord::new(3, 1000, "accuracy", 0.7)),
            Err(Error::IterationOutOfOrder { last: 1, found: 3 })
        ));
        assert!(matches!(
            c.record(IterationRecord::new(2, 400, "accuracy", 0.7)),
            Err(Error::NonMonotoneSize { .. })
        ));
        assert!(matches!(
            c.record(IterationRecord::new(1, 600, "accuracy", 0.7)),
            Err(Error::IterationOutOfOrder { .. })
        ));
    }

    #[test]
    fn plateau_example() {
        let c = curve(&[0.60, 0.80, 0.88, 0.90, 0.905, 0.907]);
        let s = detect_plateau(&c, 0.01, 2).unwrap();
        assert!(s.plateaued);
        let at = s.at_iteration.unwrap();
        assert_eq!(c.records()[at as usize - 1].cumulative_train_size, 2500);
    }

    #[test]
    fn steady_improvement_is_no_plateau() {
        let c = curve(&[0.5, 0.55, 0.60, 0.65, 0.70]);
        assert_eq!(
            detect_plateau(&c, 0.01, 2).unwrap(),
            PlateauStatus {
                plateaued: false,
                at_iteration: None
            }
        );
    }

    #[test]
    fn constant_curve_plateaus() {
        let c = curve(&[0.7, 0.7]);
        assert!(detect_plateau(&c, 1e-9, 1).unwrap().plateaued);
    }

    #[test]
    fn short_curve_is_an_error() {
        let c = curve(&[0.7, 0.8]);
        assert!(matches!(detect_plateau(&c, 0.01, 2), Err(Error::TooFewItems { .. })));
    }

    fn class_set(labels: &[&str]) -> AnnotationSet {
        AnnotationSet::from_annotations(
            "x",
            labels
                .iter()
                .enumerate()
                .map(|(i, l)| Annotation::human(format!("d{i}"), "x", Payload::class(*l))),
        )
        .unwrap()
    }

    #[test]
    fn distribution_examples() {
        let schema = LabelSchema::doc_class(["POS", "NEG"]).unwrap();
        let set = class_set(&["POS", "POS", "POS", "POS", "POS", "POS", "NEG", "NEG", "NEG", "NEG"]);
        let d = label_distribution(&[&set], &schema).unwrap();
        assert!((d.get("POS") - 0.6).abs() < 1e-15);
        assert!((d.get("NEG") - 0.4).abs() < 1e-15);
        let d = label_distribution(&[&class_set(&["NEG"])], &schema).unwrap();
        assert_eq!(d.get("NEG"), 1.0);
        assert_eq!(
            label_distribution(&[&AnnotationSet::new("x")], &schema),
            Err(Error::NoLabeledItems)
        );
    }

    fn dist(pairs: &[(&str, f64)]) -> LabelDistribution {
        LabelDistribution(pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect())
    }

    #[test]
    fn divergence_examples() {
        let p = dist(&[("POS", 0.6), ("NEG", 0.4)]);
        let q = dist(&[("POS", 0.4), ("NEG", 0.6)]);
        assert_eq!(divergence(&p, &p), 0.0);
        assert!((divergence(&p, &q) - 0.2).abs() < 1e-12);
        assert_eq!(divergence(&dist(&[("A", 1.0)]), &dist(&[("B", 1.0)])), 1.0);
    }

    #[test]
    fn representativeness_examples() {
        let p = dist(&[("POS", 0.6), ("NEG", 0.4)]);
        let q = dist(&[("POS", 0.4), ("NEG", 0.6)]);
        assert_eq!(check_representativeness(&p, &q, 0.1).status, SplitStatus::ConsiderResplit);
        assert_eq!(check_representativeness(&p, &p, 0.1).status, SplitStatus::Ok);
        let far = dist(&[("B", 1.0)]);
        assert_eq!(check_representativeness(&p, &far, 1.0).status, SplitStatus::Ok);
    }

    fn pool(labels: &[&str]) -> Vec<PoolItem> {
        labels
            .iter()
            .enumerate()
            .map(|(i, l)| PoolItem::new(format!("d{i}"), Some(l)))
            .collect()
    }

    #[test]
    fn stratified_resplit_example() {
        let p = pool(&["POS", "POS", "POS", "POS", "POS", "POS", "NEG", "NEG", "NEG", "NEG"]);
        let split = resplit(&p, 0.5, 11, true).unwrap();
        let label_of = |id: &String| p.iter().find(|x| &x.doc_id == id).unwrap().label.clone().unwrap();
        let pos = split.test.iter().filter(|id| label_of(id) == "POS").count();
        assert_eq!((pos, split.test.len() - pos), (3, 2));
        assert_eq!(split.warning, RESPLIT_WARNING);
    }

    #[test]
    fn resplit_small_and_deterministic() {
        let p = pool(&["A", "B"]);
        let s = resplit(&p, 0.5, 1, false).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (1, 1));
        let big = pool(&["A"; 37]);
        assert_eq!(resplit(&big, 0.3, 5, false), resplit(&big, 0.3, 5, false));
    }

    #[test]
    fn resplit_errors() {
        assert!(matches!(resplit(&pool(&["A"; 10]), 0.01, 0, false), Err(Error::EmptySplit(_))));
        assert!(matches!(resplit(&pool(&["A"; 10]), 0.99, 0, false), Err(Error::EmptySplit(_))));
        let mut p = pool(&["A"; 4]);
        p[2].label = None;
        assert!(resplit(&p, 0.5, 0, true).is_err());
        assert!(resplit(&p, 0.5, 0, false).is_ok());
    }

    #[test]
    fn apportion_keeps_total() {
        assert_eq!(apportion(&[6, 4], 0.5, 5), vec![3, 2]);
        assert_eq!(apportion(&[3, 3, 3], 0.5, 5), vec![2, 2, 1]);
        assert_eq!(apportion(&[1, 1, 1], 0.5, 2), vec![1, 1, 0]);
    }
}
