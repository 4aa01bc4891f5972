//! Core model and algorithms for iterative text-annotation projects:
//! batch partitioning, pairwise merging, inter-annotator agreement,
//! evaluation metrics, learning-curve monitoring, pre-annotation and
//! class-system adjustments.

pub mod accelerate;
pub mod agreement;
pub mod error;
pub mod merge;
pub mod metrics;
pub mod model;
pub mod monitor;
pub mod partition;
pub mod schema_ops;

pub use error::{Error, Result};
pub use model::{
    Annotation, AnnotationSet, Document, LabelSchema, Payload, ProjectManifest, Provenance, Span, TaskKind,
};
