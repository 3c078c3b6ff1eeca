//! Core library for the painting-language knowledge graph (PL-KG).
//!
//! The crate is split along the lines of the annotation workflow:
//!
//! - [`ontology`]: the typed seven-dimension schema, loading, structural
//!   validation and tree queries.
//! - [`annotation`]: per-image annotation records, validation against a
//!   schema, ancestor normalisation, consensus merging and training export.
//! - [`features`]: deterministic image and geometry measurements backing the
//!   measurable criteria, plus criterion-driven label suggestion.
//! - [`rules`]: declarative consistency rules evaluated over annotations.
//! - [`agreement`]: per-node presence agreement and Cohen's kappa.
//!
//! Every operation that can fail in more than one way returns a
//! [`ValidationReport`] or a module-specific error type.

pub mod agreement;
pub mod annotation;
pub mod features;
pub mod ontology;
pub mod report;
pub mod rules;

pub use annotation::Annotation;
pub use features::{FeatureKey, FeatureVector};
pub use ontology::{Schema, SchemaNode};
pub use report::{Finding, Severity, ValidationReport};
pub use rules::ConsistencyRule;
