//! Batch planning: simple split, review permutation and cross-annotation.
//!
//! All planners are deterministic in `(doc_ids, roster, seed)`. Documents are
//! shuffled with a seeded ChaCha stream and dealt round-robin into parts, so
//! part sizes never differ by more than one. Parts that would be empty
//! (fewer documents than annotators) are omitted.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Part {
    pub index: usize,
    pub doc_ids: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Annotate,
    Review,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Assignment {
    pub part: Part,
    pub annotators: Vec<String>,
    pub role: Role,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanMode {
    Simple,
    Review,
    Cross,
}

impl PlanMode {
    pub fn as_str(self) -> &'static str {
        match self {
            PlanMode::Simple => "simple",
            PlanMode::Review => "review",
            PlanMode::Cross => "cross",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchPlan {
    pub iteration: u32,
    pub mode: PlanMode,
    pub assignments: Vec<Assignment>,
}

impl BatchPlan {
    /// Documents each annotator has to work on, in part order.
    pub fn workloads(&self) -> BTreeMap<&str, Vec<&str>> {
        let mut out: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for a in &self.assignments {
            for who in &a.annotators {
                out.entry(who.as_str())
                    .or_default()
                    .extend(a.part.doc_ids.iter().map(String::as_str));
            }
        }
        out
    }

    /// Every document of the batch, in part order.
    pub fn doc_ids(&self) -> impl Iterator<Item = &str> {
        self.assignments
            .iter()
            .flat_map(|a| a.part.doc_ids.iter().map(String::as_str))
    }

    /// Assignments that include `annotator`.
    pub fn assignments_of<'a>(&'a self, annotator: &'a str) -> impl Iterator<Item = &'a Assignment> {
        self.assignments
            .iter()
            .filter(move |a| a.annotators.iter().any(|x| x == annotator))
    }
}

fn check_inputs(doc_ids: &[String], roster: &[String]) -> Result<()> {
    if doc_ids.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if roster.is_empty() {
        return Err(Error::EmptyRoster);
    }
    let mut seen = BTreeSet::new();
    for id in doc_ids {
        if !seen.insert(id) {
            return Err(Error::DuplicateDocument(id.clone()));
        }
    }
    let mut seen = BTreeSet::new();
    for a in roster {
        if !seen.insert(a) {
            return Err(Error::DuplicateAnnotator(a.clone()));
        }
    }
    Ok(())
}

/// Deals documents round-robin into `n` parts; part `i` gets docs `i, i+n, ...`.
fn deal(doc_ids: &[String], n: usize) -> Vec<Vec<String>> {
    let mut parts = vec![Vec::new(); n];
    for (i, id) in doc_ids.iter().enumerate() {
        parts[i % n].push(id.clone());
    }
    parts
}

fn shuffled<T: Clone>(items: &[T], rng: &mut ChaCha8Rng) -> Vec<T> {
    let mut out = items.to_vec();
    out.shuffle(rng);
    out
}

/// Draws a random batch of at most `size` documents from `candidates`.
/// The result is in draw order.
pub fn draw_batch(candidates: &[String], size: usize, seed: u64) -> Vec<String> {
    let mut sorted = candidates.to_vec();
    sorted.sort();
    sorted.dedup();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut drawn = shuffled(&sorted, &mut rng);
    drawn.truncate(size);
    drawn
}

/// Splits a batch into one part per annotator (roster order).
pub fn split_batch(iteration: u32, doc_ids: &[String], roster: &[String], seed: u64) -> Result<BatchPlan> {
    check_inputs(doc_ids, roster)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let docs = shuffled(doc_ids, &mut rng);
    let assignments = deal(&docs, roster.len())
        .into_iter()
        .zip(roster)
        .enumerate()
        .filter(|(_, (part, _))| !part.is_empty())
        .map(|(index, (doc_ids, who))| Assignment {
            part: Part { index, doc_ids },
            annotators: vec![who.clone()],
            role: Role::Annotate,
        })
        .collect();
    Ok(BatchPlan {
        iteration,
        mode: PlanMode::Simple,
        assignments,
    })
}

/// Permutes the parts of a simple plan to reviewers by a cyclic shift: the part
/// of the `i`-th annotator goes to the `(i+1)`-th, in plan order.
pub fn assign_review(plan: &BatchPlan) -> Result<BatchPlan> {
    if plan.mode != PlanMode::Simple {
        return Err(Error::WrongPlanMode {
            expected: "simple",
            found: plan.mode.as_str(),
        });
    }
    let n = plan.assignments.len();
    if n < 2 {
        return Err(Error::NoReviewPermutation);
    }
    let assignments = plan
        .assignments
        .iter()
        .enumerate()
        .map(|(i, a)| Assignment {
            part: a.part.clone(),
            annotators: plan.assignments[(i + 1) % n].annotators.clone(),
            role: Role::Review,
        })
        .collect();
    Ok(BatchPlan {
        iteration: plan.iteration,
        mode: PlanMode::Review,
        assignments,
    })
}

/// Cross-annotation plan: shuffles documents and roster with `seed`, then
/// assigns part `i` to roster members `i` and `i+1 (mod n)`.
pub fn assign_cross(iteration: u32, doc_ids: &[String], roster: &[String], seed: u64) -> Result<BatchPlan> {
    check_inputs(doc_ids, roster)?;
    if roster.len() < 2 {
        return Err(Error::RosterTooSmall(roster.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let docs = shuffled(doc_ids, &mut rng);
    let roster = shuffled(roster, &mut rng);
    Ok(cyclic_schedule(iteration, &docs, &roster))
}

/// The unshuffled cyclic double-assignment used by [`assign_cross`].
pub fn cyclic_schedule(iteration: u32, doc_ids: &[String], roster: &[String]) -> BatchPlan {
    let n = roster.len();
    let assignments = deal(doc_ids, n)
        .into_iter()
        .enumerate()
        .filter(|(_, part)| !part.is_empty())
        .map(|(index, doc_ids)| Assignment {
            part: Part { index, doc_ids },
            annotators: vec![roster[index].clone(), roster[(index + 1) % n].clone()],
            role: Role::Annotate,
        })
        .collect();
    BatchPlan {
        iteration,
        mode: PlanMode::Cross,
        assignments,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("d{i:02}")).collect()
    }

    fn roster(names: &[&str]) -> Vec<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    fn sizes(plan: &BatchPlan) -> Vec<usize> {
        plan.assignments.iter().map(|a| a.part.doc_ids.len()).collect()
    }

    #[test]
    fn draw_batch_is_seeded_subset() {
        let pool = ids(20);
        let a = draw_batch(&pool, 5, 9);
        assert_eq!(a.len(), 5);
        assert_eq!(a, draw_batch(&pool, 5, 9));
        assert!(a.iter().all(|d| pool.contains(d)));
        assert_eq!(draw_batch(&pool, 50, 9).len(), 20);
    }

    #[test]
    fn split_twelve_by_three() {
        let plan = split_batch(1, &ids(12), &roster(&["A", "B", "C"]), 3).unwrap();
        assert_eq!(sizes(&plan), vec![4, 4, 4]);
        for (a, who) in plan.assignments.iter().zip(["A", "B", "C"]) {
            assert_eq!(a.annotators, vec![who.to_string()]);
            assert_eq!(a.role, Role::Annotate);
        }
    }

    #[test]
    fn split_singleton_and_uneven() {
        let plan = split_batch(1, &ids(1), &roster(&["A"]), 0).unwrap();
        assert_eq!(sizes(&plan), vec![1]);
        let plan = split_batch(1, &ids(10), &roster(&["A", "B", "C"]), 0).unwrap();
        assert_eq!(sizes(&plan), vec![4, 3, 3]);
    }

    #[test]
    fn split_errors() {
        assert_eq!(split_batch(1, &[], &roster(&["A"]), 0), Err(Error::EmptyBatch));
        assert_eq!(split_batch(1, &ids(3), &[], 0), Err(Error::EmptyRoster));
        let dup = vec!["x".to_string(), "x".to_string()];
        assert!(matches!(split_batch(1, &dup, &roster(&["A"]), 0), Err(Error::DuplicateDocument(_))));
    }

    #[test]
    fn review_is_cyclic_shift() {
        let plan = split_batch(1, &ids(9), &roster(&["A", "B", "C"]), 1).unwrap();
        let review = assign_review(&plan).unwrap();
        let reviewers: Vec<_> = review.assignments.iter().map(|a| a.annotators[0].as_str()).collect();
        assert_eq!(reviewers, vec!["B", "C", "A"]);
        assert!(review.assignments.iter().all(|a| a.role == Role::Review));
        for (orig, rev) in plan.assignments.iter().zip(&review.assignments) {
            assert_eq!(orig.part, rev.part);
            assert_ne!(orig.annotators, rev.annotators);
        }

        let plan = split_batch(1, &ids(4), &roster(&["A", "B"]), 1).unwrap();
        let reviewers: Vec<_> = assign_review(&plan)
            .unwrap()
            .assignments
            .iter()
            .map(|a| a.annotators[0].clone())
            .collect();
        assert_eq!(reviewers, vec!["B", "A"]);

        let plan = split_batch(1, &ids(4), &roster(&["A"]), 1).unwrap();
        assert_eq!(assign_review(&plan), Err(Error::NoReviewPermutation));
    }

    #[test]
    fn cyclic_schedule_of_twelve() {
        let plan = cyclic_schedule(1, &ids(12), &roster(&["A", "B", "C"]));
        assert_eq!(sizes(&plan), vec![4, 4, 4]);
        let pairs: Vec<Vec<String>> = plan.assignments.iter().map(|a| a.annotators.clone()).collect();
        assert_eq!(pairs, vec![roster(&["A", "B"]), roster(&["B", "C"]), roster(&["C", "A"])]);
        let load: Vec<usize> = plan.workloads().values().map(Vec::len).collect();
        assert_eq!(load, vec![8, 8, 8]);
    }

    #[test]
    fn cross_uneven_workloads() {
        let plan = cyclic_schedule(1, &ids(10), &roster(&["A", "B", "C"]));
        let load: BTreeMap<_, _> = plan.workloads().into_iter().map(|(k, v)| (k, v.len())).collect();
        assert_eq!(load["A"], 7);
        assert_eq!(load["B"], 7);
        assert_eq!(load["C"], 6);

        let plan = assign_cross(1, &ids(10), &roster(&["A", "B", "C"]), 99).unwrap();
        let mut loads: Vec<usize> = plan.workloads().values().map(Vec::len).collect();
        loads.sort();
        assert_eq!(loads, vec![6, 7, 7]);
    }

    #[test]
    fn cross_with_two_is_full_double_annotation() {
        let plan = assign_cross(1, &ids(4), &roster(&["A", "B"]), 5).unwrap();
        for docs in plan.workloads().values() {
            let mut docs = docs.clone();
            docs.sort();
            assert_eq!(docs, vec!["d00", "d01", "d02", "d03"]);
        }
    }

    #[test]
    fn cross_needs_two_annotators() {
        assert_eq!(assign_cross(1, &ids(4), &roster(&["A"]), 0), Err(Error::RosterTooSmall(1)));
    }

    #[test]
    fn fewer_docs_than_annotators() {
        let plan = assign_cross(1, &ids(1), &roster(&["A", "B", "C"]), 0).unwrap();
        assert_eq!(plan.assignments.len(), 1);
        assert_eq!(plan.assignments[0].annotators.len(), 2);
        let plan = split_batch(1, &ids(2), &roster(&["A", "B", "C"]), 0).unwrap();
        assert_eq!(sizes(&plan), vec![1, 1]);
    }

    #[test]
    fn seeds_change_composition_not_shape() {
        let a = assign_cross(1, &ids(30), &roster(&["A", "B", "C", "D"]), 1).unwrap();
        let b = assign_cross(1, &ids(30), &roster(&["A", "B", "C", "D"]), 2).unwrap();
        assert_eq!(sizes(&a), sizes(&b));
        assert_ne!(a, b);
        assert_eq!(a, assign_cross(1, &ids(30), &roster(&["A", "B", "C", "D"]), 1).unwrap());
    }
}
