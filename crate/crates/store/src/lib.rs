//! File-backed annotation workspace and its HTTP API.

pub mod service;
pub mod workspace;

pub use service::{bind, router, serve, serve_on};
pub use workspace::{check_annotation, is_safe_id, AnnotationSummary, StoreError, Workspace};
