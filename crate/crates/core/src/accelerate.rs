//! Pre-annotation from weak-supervision rules and model predictions, and
//! uncertainty-based selection of the next documents to annotate.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    validate_annotation, Annotation, AnnotationSet, Document, LabelSchema, Payload, Provenance, Span,
    TaskKind,
};

pub const WEAK_ANNOTATOR: &str = "weak-rules";
pub const MODEL_ANNOTATOR: &str = "model";

const SCORE_SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum RulePattern {
    /// A sequence of tokens that must occur consecutively.
    Literal(Vec<String>),
    /// `prefix` immediately followed by any word of `lexicon`.
    NegatedPositive { prefix: String, lexicon: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeakRule {
    pub rule_id: String,
    pub pattern: RulePattern,
    pub label: String,
    /// Lower is stronger.
    pub priority: i32,
    #[serde(default)]
    pub case_sensitive: bool,
}

impl WeakRule {
    pub fn literal(rule_id: &str, words: &str, label: &str, priority: i32) -> Self {
        WeakRule {
            rule_id: rule_id.into(),
            pattern: RulePattern::Literal(vec![words.into()]),
            label: label.into(),
            priority,
            case_sensitive: false,
        }
    }

    pub fn negated_positive(rule_id: &str, prefix: &str, lexicon: &[&str], label: &str, priority: i32) -> Self {
        WeakRule {
            rule_id: rule_id.into(),
            pattern: RulePattern::NegatedPositive {
                prefix: prefix.into(),
                lexicon: lexicon.iter().map(|s| s.to_string()).collect(),
            },
            label: label.into(),
            priority,
            case_sensitive: false,
        }
    }
}

/// A token with its character range `[start, end)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

/// Splits on anything that is not alphanumeric.
pub fn tokenize(text: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut current: Option<Token> = None;
    for (pos, ch) in text.chars().enumerate() {
        if ch.is_alphanumeric() {
            let tok = current.get_or_insert_with(|| Token {
                text: String::new(),
                start: pos,
                end: pos,
            });
            tok.text.push(ch);
            tok.end = pos + 1;
        } else if let Some(tok) = current.take() {
            tokens.push(tok);
        }
    }
    tokens.extend(current);
    tokens
}

fn words(parts: &[String]) -> Vec<String> {
    parts
        .iter()
        .flat_map(|p| tokenize(p).into_iter().map(|t| t.text))
        .collect()
}

pub fn validate_rules(rules: &[WeakRule], schema: &LabelSchema) -> Result<()> {
    if schema.task_kind == TaskKind::PairRegress {
        return Err(Error::WrongTaskKind {
            expected: TaskKind::DocClass,
            found: schema.task_kind,
        });
    }
    let mut ids = BTreeSet::new();
    for rule in rules {
        let invalid = |reason: String| Error::InvalidRule {
            rule_id: rule.rule_id.clone(),
            reason,
        };
        if rule.rule_id.is_empty() {
            return Err(invalid("empty rule id".into()));
        }
        if !ids.insert(rule.rule_id.as_str()) {
            return Err(invalid("duplicate rule id".into()));
        }
        if !schema.has_class(&rule.label) {
            return Err(invalid(format!("unknown class '{}'", rule.label)));
        }
        let empty = match &rule.pattern {
            RulePattern::Literal(parts) => words(parts).is_empty(),
            RulePattern::NegatedPositive { prefix, lexicon } => {
                tokenize(prefix).len() != 1 || words(lexicon).is_empty()
            }
        };
        if empty {
            return Err(invalid("empty pattern".into()));
        }
    }
    Ok(())
}

fn same_word(a: &str, b: &str, case_sensitive: bool) -> bool {
    if case_sensitive {
        a == b
    } else {
        a.to_lowercase() == b.to_lowercase()
    }
}

/// Character ranges where `rule` matches the token stream.
fn rule_matches(rule: &WeakRule, tokens: &[Token]) -> Vec<(usize, usize)> {
    let cs = rule.case_sensitive;
    match &rule.pattern {
        RulePattern::Literal(parts) => {
            let needle = words(parts);
            if needle.is_empty() || needle.len() > tokens.len() {
                return Vec::new();
            }
            tokens
                .windows(needle.len())
                .filter(|w| w.iter().zip(&needle).all(|(t, n)| same_word(&t.text, n, cs)))
                .map(|w| (w[0].start, w[w.len() - 1].end))
                .collect()
        }
        RulePattern::NegatedPositive { prefix, lexicon } => {
            let lexicon = words(lexicon);
            tokens
                .windows(2)
                .filter(|w| {
                    same_word(&w[0].text, prefix, cs) && lexicon.iter().any(|l| same_word(&w[1].text, l, cs))
                })
                .map(|w| (w[0].start, w[1].end))
                .collect()
        }
    }
}

/// Runs `rules` over `doc` and returns a weak pre-annotation, or `None` when
/// the rules abstain.
///
/// Classification: the strongest matching priority wins; disagreeing rules at
/// that priority abstain. Spans: every match proposes a span; a proposal
/// survives only if no overlapping proposal is stronger or equally strong
/// with a different span.
pub fn apply_weak_rules(doc: &Document, rules: &[WeakRule], schema: &LabelSchema) -> Option<Annotation> {
    let tokens = tokenize(&doc.text);
    let payload = match schema.task_kind {
        TaskKind::DocClass => {
            let mut best: Option<(i32, BTreeSet<&str>)> = None;
            for rule in rules {
                if rule_matches(rule, &tokens).is_empty() {
                    continue;
                }
                match &mut best {
                    Some((p, labels)) if rule.priority == *p => {
                        labels.insert(&rule.label);
                    }
                    Some((p, _)) if rule.priority > *p => {}
                    _ => best = Some((rule.priority, BTreeSet::from([rule.label.as_str()]))),
                }
            }
            let (_, labels) = best?;
            if labels.len() != 1 {
                return None;
            }
            Payload::class(*labels.first()?)
        }
        TaskKind::SpanLabel => {
            let mut proposals: BTreeSet<(i32, Span)> = BTreeSet::new();
            for rule in rules {
                for (start, end) in rule_matches(rule, &tokens) {
                    proposals.insert((rule.priority, Span::new(start, end, rule.label.clone())));
                }
            }
            let proposals: Vec<(i32, Span)> = proposals.into_iter().collect();
            let mut kept: BTreeSet<Span> = BTreeSet::new();
            for (prio, span) in &proposals {
                let beaten = proposals.iter().any(|(other_prio, other)| {
                    other.overlaps(span)
                        && (other_prio < prio || (other_prio == prio && other != span))
                });
                if !beaten {
                    kept.insert(span.clone());
                }
            }
            if kept.is_empty() {
                return None;
            }
            Payload::spans(kept)
        }
        TaskKind::PairRegress => return None,
    };
    Some(Annotation::new(doc.id.clone(), WEAK_ANNOTATOR, Provenance::Weak, payload))
}

/// A model prediction for one document: a class distribution or a payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Prediction {
    pub doc_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<BTreeMap<String, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<Payload>,
}

impl Prediction {
    pub fn scores(doc_id: impl Into<String>, scores: &[(&str, f64)]) -> Self {
        Prediction {
            doc_id: doc_id.into(),
            scores: Some(scores.iter().map(|(k, v)| (k.to_string(), *v)).collect()),
            payload: None,
        }
    }

    pub fn payload(doc_id: impl Into<String>, payload: Payload) -> Self {
        Prediction {
            doc_id: doc_id.into(),
            scores: None,
            payload: Some(payload),
        }
    }
}

fn check_scores(doc_id: &str, scores: &BTreeMap<String, f64>, schema: Option<&LabelSchema>) -> Result<()> {
    let invalid = |reason: String| Error::InvalidPrediction {
        doc_id: doc_id.to_string(),
        reason,
    };
    if scores.is_empty() {
        return Err(invalid("empty score vector".into()));
    }
    if let Some(schema) = schema {
        if let Some(bad) = scores.keys().find(|k| !schema.has_class(k)) {
            return Err(invalid(format!("unknown class '{bad}'")));
        }
    }
    if let Some((k, v)) = scores.iter().find(|(_, v)| !(v.is_finite() && **v >= 0.0 && **v <= 1.0)) {
        return Err(invalid(format!("score {v} for '{k}' outside [0, 1]")));
    }
    let sum: f64 = scores.values().sum();
    if (sum - 1.0).abs() > SCORE_SUM_TOLERANCE {
        return Err(invalid(format!("scores sum to {sum}, not 1")));
    }
    Ok(())
}

/// Argmax class, ties broken by schema class order.
fn argmax<'a>(scores: &BTreeMap<String, f64>, schema: &'a LabelSchema) -> &'a str {
    let mut best: Option<(&str, f64)> = None;
    for class in &schema.classes {
        let p = scores.get(class).copied().unwrap_or(0.0);
        if best.is_none_or(|(_, b)| p > b) {
            best = Some((class, p));
        }
    }
    best.map(|(c, _)| c).unwrap_or_default()
}

/// Converts predictions into a model-provenance annotation set.
pub fn import_predictions(
    preds: &[Prediction],
    docs: &[Document],
    schema: &LabelSchema,
    annotator: &str,
) -> Result<AnnotationSet> {
    let doc_index: BTreeMap<&str, &Document> = docs.iter().map(|d| (d.id.as_str(), d)).collect();
    let mut out = AnnotationSet::new(annotator);
    for pred in preds {
        let invalid = |reason: String| Error::InvalidPrediction {
            doc_id: pred.doc_id.clone(),
            reason,
        };
        let doc = doc_index
            .get(pred.doc_id.as_str())
            .ok_or_else(|| invalid("unknown document".into()))?;
        let payload = match (&pred.scores, &pred.payload) {
            (Some(scores), None) => {
                schema.require(TaskKind::DocClass)?;
                check_scores(&pred.doc_id, scores, Some(schema))?;
                Payload::class(argmax(scores, schema))
            }
            (None, Some(payload)) => payload.clone(),
            _ => return Err(invalid("exactly one of 'scores' or 'payload' required".into())),
        };
        let ann = Annotation::new(pred.doc_id.clone(), annotator, Provenance::Model, payload);
        let report = validate_annotation(&ann, doc, schema)?;
        if !report.is_valid() {
            return Err(invalid(report.to_string()));
        }
        if out.insert(ann)?.is_some() {
            return Err(invalid("duplicate prediction".into()));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    LeastConfidence,
    Margin,
    Entropy,
    Random,
}

fn sorted_desc(scores: &BTreeMap<String, f64>) -> Vec<f64> {
    let mut v: Vec<f64> = scores.values().copied().collect();
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

/// Informativeness key; smaller keys are selected first.
fn uncertainty_key(strategy: Strategy, scores: &BTreeMap<String, f64>) -> f64 {
    let v = sorted_desc(scores);
    match strategy {
        Strategy::LeastConfidence => v[0],
        Strategy::Margin => v[0] - v.get(1).copied().unwrap_or(0.0),
        Strategy::Entropy => scores
            .values()
            .filter(|&&p| p > 0.0)
            .map(|&p| p * p.ln())
            .sum::<f64>(),
        Strategy::Random => 0.0,
    }
}

/// Shannon entropy (nats) of a score vector.
pub fn entropy(scores: &BTreeMap<String, f64>) -> f64 {
    -uncertainty_key(Strategy::Entropy, scores)
}

/// Picks up to `k` documents to annotate next, most informative first.
/// Ties are broken by top probability, then document id.
pub fn select_active(preds: &[Prediction], strategy: Strategy, k: usize, seed: u64) -> Result<Vec<String>> {
    if k == 0 {
        return Err(Error::InvalidParameter("k must be ≥ 1".into()));
    }
    if preds.is_empty() {
        return Err(Error::EmptyPredictionPool);
    }
    let mut pool: Vec<(&str, &BTreeMap<String, f64>)> = Vec::with_capacity(preds.len());
    let mut seen = BTreeSet::new();
    for p in preds {
        let scores = p.scores.as_ref().ok_or_else(|| Error::InvalidPrediction {
            doc_id: p.doc_id.clone(),
            reason: "active selection needs class scores".into(),
        })?;
        check_scores(&p.doc_id, scores, None)?;
        if !seen.insert(p.doc_id.as_str()) {
            return Err(Error::InvalidPrediction {
                doc_id: p.doc_id.clone(),
                reason: "duplicate prediction".into(),
            });
        }
        pool.push((&p.doc_id, scores));
    }
    pool.sort_by(|a, b| a.0.cmp(b.0));

    let take = k.min(pool.len());
    if strategy == Strategy::Random {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        pool.shuffle(&mut rng);
        return Ok(pool[..take].iter().map(|(id, _)| id.to_string()).collect());
    }
    // Secondary key: top probability, so float ties in the primary key still
    // rank by confidence.
    let mut keyed: Vec<(f64, f64, &str)> = pool
        .iter()
        .map(|(id, scores)| (uncertainty_key(strategy, scores), sorted_desc(scores)[0], *id))
        .collect();
    keyed.sort_by(|a, b| {
        a.0.total_cmp(&b.0)
            .then(a.1.total_cmp(&b.1))
            .then_with(|| a.2.cmp(b.2))
    });
    Ok(keyed[..take].iter().map(|(_, _, id)| id.to_string()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sentiment() -> LabelSchema {
        LabelSchema::doc_class(["POS", "NEG", "NEU"]).unwrap()
    }

    #[test]
    fn tokenizer_offsets() {
        let toks = tokenize("it's not good!");
        let words: Vec<_> = toks.iter().map(|t| (t.text.as_str(), t.start, t.end)).collect();
        assert_eq!(words, vec![("it", 0, 2), ("s", 3, 4), ("not", 5, 8), ("good", 9, 13)]);
    }

    #[test]
    fn literal_rule_labels_document() {
        let rules = vec![WeakRule::literal("r1", "excellent", "POS", 1)];
        let doc = Document::new("d1", "This product is excellent");
        let ann = apply_weak_rules(&doc, &rules, &sentiment()).unwrap();
        assert_eq!(ann.payload, Payload::class("POS"));
        assert_eq!(ann.provenance, Provenance::Weak);
    }

    #[test]
    fn negation_beats_positive_word() {
        let rules = vec![
            WeakRule::literal("pos", "good", "POS", 2),
            WeakRule::negated_positive("neg", "not", &["good"], "NEG", 1),
        ];
        let doc = Document::new("d1", "it is not good");
        assert_eq!(apply_weak_rules(&doc, &rules, &sentiment()).unwrap().payload, Payload::class("NEG"));
    }

    #[test]
    fn abstentions() {
        let rules = vec![
            WeakRule::literal("pos", "good", "POS", 1),
            WeakRule::literal("neg", "awful", "NEG", 1),
        ];
        assert!(apply_weak_rules(&Document::new("d", "nothing here"), &rules, &sentiment()).is_none());
        assert!(apply_weak_rules(&Document::new("d", "good but awful"), &rules, &sentiment()).is_none());
    }

    #[test]
    fn case_sensitivity() {
        let mut rule = WeakRule::literal("r", "Excellent", "POS", 1);
        let doc = Document::new("d", "simply excellent");
        assert!(apply_weak_rules(&doc, std::slice::from_ref(&rule), &sentiment()).is_some());
        rule.case_sensitive = true;
        assert!(apply_weak_rules(&doc, &[rule], &sentiment()).is_none());
    }

    #[test]
    fn span_rules_resolve_overlaps() {
        let schema = LabelSchema::span_label(["hard skill", "soft skill"]).unwrap();
        let rules = vec![
            WeakRule::literal("a", "machine learning", "hard skill", 1),
            WeakRule::literal("b", "learning", "soft skill", 2),
            WeakRule::literal("c", "teamwork", "soft skill", 2),
        ];
        let doc = Document::new("d", "Machine learning and teamwork; learning");
        let ann = apply_weak_rules(&doc, &rules, &schema).unwrap();
        assert_eq!(
            ann.payload,
            Payload::spans([
                Span::new(0, 16, "hard skill"),
                Span::new(21, 29, "soft skill"),
                Span::new(31, 39, "soft skill"),
            ])
        );

        let tied = vec![
            WeakRule::literal("a", "machine learning", "hard skill", 1),
            WeakRule::literal("b", "learning", "soft skill", 1),
        ];
        assert!(apply_weak_rules(&Document::new("d", "machine learning"), &tied, &schema).is_none());
    }

    #[test]
    fn rule_validation() {
        let schema = sentiment();
        assert!(validate_rules(&[WeakRule::literal("r", "x", "POS", 0)], &schema).is_ok());
        assert!(validate_rules(&[WeakRule::literal("r", "x", "MEH", 0)], &schema).is_err());
        assert!(validate_rules(&[WeakRule::literal("r", "!!", "POS", 0)], &schema).is_err());
    }

    #[test]
    fn rules_wire_format() {
        let rules: Vec<WeakRule> = serde_json::from_str(
            r#"[{"rule_id":"r1","pattern":{"literal":["excellent"]},"label":"POS","priority":1},
                {"rule_id":"r2","pattern":{"negated_positive":{"prefix":"not","lexicon":["good"]}},
                 "label":"NEG","priority":0,"case_sensitive":true}]"#,
        )
        .unwrap();
        assert_eq!(rules[0], WeakRule::literal("r1", "excellent", "POS", 1));
        assert!(rules[1].case_sensitive);
    }

    fn docs(n: usize) -> Vec<Document> {
        (1..=n).map(|i| Document::new(format!("d{i}"), "text")).collect()
    }

    #[test]
    fn import_argmax_and_tie_break() {
        let schema = LabelSchema::doc_class(["POS", "NEG"]).unwrap();
        let preds = vec![
            Prediction::scores("d1", &[("POS", 0.9), ("NEG", 0.1)]),
            Prediction::scores("d2", &[("POS", 0.5), ("NEG", 0.5)]),
        ];
        let set = import_predictions(&preds, &docs(2), &schema, MODEL_ANNOTATOR).unwrap();
        assert_eq!(set.get("d1").unwrap().payload, Payload::class("POS"));
        assert_eq!(set.get("d2").unwrap().payload, Payload::class("POS"));
        assert!(set.iter().all(|a| a.provenance == Provenance::Model));
    }

    #[test]
    fn import_errors() {
        let schema = LabelSchema::doc_class(["POS", "NEG"]).unwrap();
        let bad_sum = vec![Prediction::scores("d1", &[("POS", 0.5), ("NEG", 0.3)])];
        assert!(import_predictions(&bad_sum, &docs(1), &schema, "m").is_err());
        let unknown = vec![Prediction::scores("zz", &[("POS", 1.0)])];
        assert!(import_predictions(&unknown, &docs(1), &schema, "m").is_err());
        let spans = LabelSchema::span_label(["S"]).unwrap();
        let out_of_bounds = vec![Prediction::payload("d1", Payload::spans([Span::new(0, 99, "S")]))];
        assert!(import_predictions(&out_of_bounds, &docs(1), &spans, "m").is_err());
    }

    #[test]
    fn least_confidence_picks_d2() {
        let preds = vec![
            Prediction::scores("d1", &[("POS", 0.9), ("NEG", 0.1)]),
            Prediction::scores("d2", &[("POS", 0.55), ("NEG", 0.45)]),
            Prediction::scores("d3", &[("POS", 0.7), ("NEG", 0.3)]),
        ];
        assert_eq!(select_active(&preds, Strategy::LeastConfidence, 1, 0).unwrap(), vec!["d2"]);
        assert_eq!(
            select_active(&preds, Strategy::Margin, 5, 0).unwrap(),
            vec!["d2", "d3", "d1"]
        );
    }

    #[test]
    fn uniform_scores_rank_first_by_entropy() {
        let preds = vec![
            Prediction::scores("a", &[("POS", 0.8), ("NEG", 0.1), ("NEU", 0.1)]),
            Prediction::scores("b", &[("POS", 1.0 / 3.0), ("NEG", 1.0 / 3.0), ("NEU", 1.0 / 3.0)]),
            Prediction::scores("c", &[("POS", 0.5), ("NEG", 0.5)]),
        ];
        assert_eq!(select_active(&preds, Strategy::Entropy, 1, 0).unwrap(), vec!["b"]);
    }

    #[test]
    fn random_is_seeded() {
        let preds: Vec<Prediction> = (0..20)
            .map(|i| Prediction::scores(format!("d{i}"), &[("POS", 0.5), ("NEG", 0.5)]))
            .collect();
        let a = select_active(&preds, Strategy::Random, 5, 42).unwrap();
        assert_eq!(a, select_active(&preds, Strategy::Random, 5, 42).unwrap());
        assert_eq!(a.len(), 5);
        assert!(select_active(&[], Strategy::Random, 5, 42).is_err());
    }
}
