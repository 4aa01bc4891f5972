use thiserror::Error;

use crate::model::TaskKind;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid schema: {0}")]
    InvalidSchema(String),

    #[error("invalid manifest: {0}")]
    InvalidManifest(String),

    #[error("annotation refers to document '{found}' but was checked against '{expected}'")]
    UnknownDocument { expected: String, found: String },

    #[error("annotation set of '{set}' cannot hold an annotation by '{annotation}'")]
    AnnotatorMismatch { set: String, annotation: String },

    #[error("operation requires task kind {expected:?}, schema is {found:?}")]
    WrongTaskKind { expected: TaskKind, found: TaskKind },

    #[error("empty batch")]
    EmptyBatch,

    #[error("empty roster")]
    EmptyRoster,

    #[error("roster contains duplicate annotator '{0}'")]
    DuplicateAnnotator(String),

    #[error("batch contains duplicate document '{0}'")]
    DuplicateDocument(String),

    #[error("cross-annotation needs at least 2 annotators, got {0}")]
    RosterTooSmall(usize),

    #[error("no valid review permutation exists for a single-annotator plan")]
    NoReviewPermutation,

    #[error("expected a {expected} plan, got {found}")]
    WrongPlanMode { expected: &'static str, found: &'static str },

    #[error("cannot merge annotations of different documents ('{0}' vs '{1}')")]
    MergeDocMismatch(String, String),

    #[error("cannot merge two annotations by the same annotator '{0}'")]
    MergeSameAnnotator(String),

    #[error("coverage mismatch: missing in first set {missing_a:?}, missing in second set {missing_b:?}")]
    CoverageMismatch {
        missing_a: Vec<String>,
        missing_b: Vec<String>,
    },

    #[error("annotation for '{doc_id}' is invalid: {reason}")]
    InvalidAnnotation { doc_id: String, reason: String },

    #[error("unresolved conflicts: {0:?}")]
    UnresolvedConflicts(Vec<String>),

    #[error("resolution refers to unknown conflict '{0}'")]
    UnknownConflict(String),

    #[error("conflict '{0}' has more than one resolution")]
    DuplicateResolution(String),

    #[error("resolution for conflict '{conflict_id}' is not applicable: {reason}")]
    InvalidResolution { conflict_id: String, reason: String },

    #[error("resolutions produce overlapping spans in document '{0}'")]
    OverlappingResolution(String),

    #[error("{metric} is undefined: {reason}")]
    Undefined { metric: &'static str, reason: String },

    #[error("need at least {needed} items, got {got}")]
    TooFewItems { needed: usize, got: usize },

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("raters per item vary: document '{doc_id}' has {found}, expected {expected}")]
    VaryingRaters {
        doc_id: String,
        expected: usize,
        found: usize,
    },

    #[error("iteration {found} does not follow {last}")]
    IterationOutOfOrder { last: u32, found: u32 },

    #[error("cumulative train size {found} does not exceed previous {last}")]
    NonMonotoneSize { last: usize, found: usize },

    #[error("metric name '{found}' differs from the curve's '{expected}'")]
    MetricNameMismatch { expected: String, found: String },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("no labeled items")]
    NoLabeledItems,

    #[error("split is empty: {0}")]
    EmptySplit(String),

    #[error("invalid prediction for '{doc_id}': {reason}")]
    InvalidPrediction { doc_id: String, reason: String },

    #[error("empty prediction pool")]
    EmptyPredictionPool,

    #[error("invalid rule '{rule_id}': {reason}")]
    InvalidRule { rule_id: String, reason: String },

    #[error("unknown class '{0}'")]
    UnknownClass(String),

    #[error("invalid class adjustment: {0}")]
    InvalidAdjustment(String),

    #[error("adjustment history invalid at step {step}: {source}")]
    HistoryStep { step: usize, source: Box<Error> },
}

impl Error {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidSchema(_) => "invalid_schema",
            Error::InvalidManifest(_) => "invalid_manifest",
            Error::UnknownDocument { .. } => "unknown_document",
            Error::AnnotatorMismatch { .. } => "annotator_mismatch",
            Error::WrongTaskKind { .. } => "wrong_task_kind",
            Error::EmptyBatch => "empty_batch",
            Error::EmptyRoster => "empty_roster",
            Error::DuplicateAnnotator(_) => "duplicate_annotator",
            Error::DuplicateDocument(_) => "duplicate_document",
            Error::RosterTooSmall(_) => "roster_too_small",
            Error::NoReviewPermutation => "no_review_permutation",
            Error::WrongPlanMode { .. } => "wrong_plan_mode",
            Error::MergeDocMismatch(..) => "merge_doc_mismatch",
            Error::MergeSameAnnotator(_) => "merge_same_annotator",
            Error::CoverageMismatch { .. } => "coverage_mismatch",
            Error::InvalidAnnotation { .. } => "invalid_annotation",
            Error::UnresolvedConflicts(_) => "unresolved_conflicts",
            Error::UnknownConflict(_) => "unknown_conflict",
            Error::DuplicateResolution(_) => "duplicate_resolution",
            Error::InvalidResolution { .. } => "invalid_resolution",
            Error::OverlappingResolution(_) => "overlapping_resolution",
            Error::Undefined { .. } => "undefined_metric",
            Error::TooFewItems { .. } => "too_few_items",
            Error::LengthMismatch(..) => "length_mismatch",
            Error::VaryingRaters { .. } => "varying_raters",
            Error::IterationOutOfOrder { .. } => "iteration_out_of_order",
            Error::NonMonotoneSize { .. } => "non_monotone_size",
            Error::MetricNameMismatch { .. } => "metric_name_mismatch",
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::NoLabeledItems => "no_labeled_items",
            Error::EmptySplit(_) => "empty_split",
            Error::InvalidPrediction { .. } => "invalid_prediction",
            Error::EmptyPredictionPool => "empty_prediction_pool",
            Error::InvalidRule { .. } => "invalid_rule",
            Error::UnknownClass(_) => "unknown_class",
            Error::InvalidAdjustment(_) => "invalid_adjustment",
            Error::HistoryStep { .. } => "history_step",
        }
    }
}
