use serde::{Deserialize, Serialize};

use super::FeatureVector;
use crate::ontology::{MeasurableCriterion, Schema};

/// An advisory label suggestion. Never applied automatically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Suggestion {
    pub node_id: String,
    pub satisfied_criteria: Vec<MeasurableCriterion>,
    /// Satisfied criteria over all criteria of the node.
    pub score: f64,
}

/// Nodes whose measurable criteria agree with `fv`.
///
/// A node is considered when at least one of its criteria refers to a key present
/// in `fv`, and listed when every such criterion is satisfied. Results are sorted
/// by descending score, then by node id.
pub fn suggest_labels(schema: &Schema, fv: &FeatureVector) -> Vec<Suggestion> {
    let mut out = Vec::new();
    for node in schema.nodes() {
        let measured: Vec<(&MeasurableCriterion, f64)> =
            node.criteria.iter().filter_map(|c| fv.get(&c.feature_key).map(|&v| (c, v))).collect();
        if measured.is_empty() {
            continue;
        }
        if !measured.iter().all(|(c, v)| c.is_satisfied(*v) == Some(true)) {
            continue;
        }
        let satisfied: Vec<MeasurableCriterion> = measured.into_iter().map(|(c, _)| c.clone()).collect();
        let score = satisfied.len() as f64 / node.criteria.len() as f64;
        out.push(Suggestion { node_id: node.id.clone(), satisfied_criteria: satisfied, score });
    }
    out.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.node_id.cmp(&b.node_id)));
    out
}
