//! Typed, versioned hierarchical schema of visual concepts.
//!
//! Each [`SchemaNode`] is one visual concept: a prototype (names and definition)
//! plus its category (application scenarios and measurable criteria), placed in a
//! forest of seven dimension trees. A [`Schema`] is immutable once loaded; build a
//! new one to change it.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::FeatureKey;
use crate::report::{Finding, ValidationReport};
use crate::rules::{self, ConsistencyRule};

/// The schema file bundled with the engine.
pub const CANONICAL_SCHEMA_JSON: &str = include_str!("../data/plkg-schema.json");

/// Number of top-level dimensions in the PL-KG.
pub const DIMENSION_COUNT: usize = 7;

/// Deepest level a node may sit at.
pub const MAX_LEVEL: u8 = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Dimension,
    Category,
    Label,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CulturalOrigin {
    Western,
    Chinese,
    Fused,
    Universal,
}

/// How many children of a node an annotation may carry at once.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChildSelection {
    /// At most one child may be assigned.
    Exclusive,
    #[default]
    Multiple,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparator {
    Ge,
    Le,
    InRange,
}

/// A single bound for `ge`/`le`, or an inclusive `[lo, hi]` pair for `in_range`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Threshold {
    Scalar(f64),
    Range([f64; 2]),
}

/// A machine-checkable bound on one feature value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurableCriterion {
    pub feature_key: FeatureKey,
    pub comparator: Comparator,
    pub threshold: Threshold,
    #[serde(default)]
    pub note: String,
}

impl MeasurableCriterion {
    pub fn new(feature_key: FeatureKey, comparator: Comparator, threshold: Threshold) -> Self {
        MeasurableCriterion { feature_key, comparator, threshold, note: String::new() }
    }

    /// Checks the comparator/threshold pairing. Returns a description of the problem.
    pub fn check(&self) -> Result<(), String> {
        match (self.comparator, self.threshold) {
            (Comparator::Ge | Comparator::Le, Threshold::Scalar(t)) if t.is_finite() => Ok(()),
            (Comparator::Ge | Comparator::Le, _) => Err("ge/le criteria need one finite scalar threshold".to_string()),
            (Comparator::InRange, Threshold::Range([lo, hi])) => {
                if !lo.is_finite() || !hi.is_finite() {
                    Err("in_range bounds must be finite".to_string())
                } else if lo > hi {
                    Err(format!("in_range requires lo <= hi, got [{lo}, {hi}]"))
                } else {
                    Ok(())
                }
            }
            (Comparator::InRange, Threshold::Scalar(_)) => {
                Err("in_range criteria need a [lo, hi] threshold".to_string())
            }
        }
    }

    /// Evaluates the criterion against a measured value. Comparisons are inclusive
    /// and exact. Returns `None` when the criterion itself is malformed.
    pub fn is_satisfied(&self, value: f64) -> Option<bool> {
        self.check().ok()?;
        Some(match (self.comparator, self.threshold) {
            (Comparator::Ge, Threshold::Scalar(t)) => value >= t,
            (Comparator::Le, Threshold::Scalar(t)) => value <= t,
            (Comparator::InRange, Threshold::Range([lo, hi])) => lo <= value && value <= hi,
            _ => unreachable!("checked above"),
        })
    }
}

impl fmt::Display for MeasurableCriterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.comparator, self.threshold) {
            (Comparator::Ge, Threshold::Scalar(t)) => write!(f, "{} >= {t}", self.feature_key),
            (Comparator::Le, Threshold::Scalar(t)) => write!(f, "{} <= {t}", self.feature_key),
            (Comparator::InRange, Threshold::Range([lo, hi])) => {
                write!(f, "{} in [{lo}, {hi}]", self.feature_key)
            }
            (cmp, thr) => write!(f, "{} {cmp:?} {thr:?}", self.feature_key),
        }
    }
}

/// One visual concept in the hierarchy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaNode {
    pub id: String,
    pub name_zh: String,
    pub name_en: String,
    pub level: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_id: Option<String>,
    pub kind: NodeKind,
    #[serde(default)]
    pub definition: String,
    /// Application scenarios.
    #[serde(default)]
    pub scenarios: Vec<String>,
    #[serde(default)]
    pub criteria: Vec<MeasurableCriterion>,
    pub cultural_origin: CulturalOrigin,
    #[serde(default)]
    pub child_selection: ChildSelection,
}

#[derive(Debug, Error)]
pub enum SchemaError {
    #[error("malformed schema document: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("schema violates structural invariants:\n{0}")]
    Structure(ValidationReport),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown schema node `{0}`")]
pub struct UnknownNode(pub String);

#[derive(Serialize, Deserialize)]
struct SchemaDocument {
    version: String,
    #[serde(default)]
    nodes: Vec<SchemaNode>,
    #[serde(default)]
    rules: Vec<ConsistencyRule>,
}

#[derive(Serialize)]
struct SchemaDocumentRef<'a> {
    version: &'a str,
    nodes: &'a [SchemaNode],
    rules: &'a [ConsistencyRule],
}

/// A loaded schema: nodes in document order plus lookup indexes.
#[derive(Debug, Clone)]
pub struct Schema {
    version: String,
    nodes: Vec<SchemaNode>,
    rules: Vec<ConsistencyRule>,
    index: HashMap<String, usize>,
    children: HashMap<String, Vec<usize>>,
}

impl PartialEq for Schema {
    fn eq(&self, other: &Self) -> bool {
        self.version == other.version && self.nodes == other.nodes && self.rules == other.rules
    }
}

impl Serialize for Schema {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        SchemaDocumentRef { version: &self.version, nodes: &self.nodes, rules: &self.rules }.serialize(serializer)
    }
}

/// Parses and structurally validates a schema document.
pub fn load_schema(document: &[u8]) -> Result<Schema, SchemaError> {
    let doc: SchemaDocument = serde_json::from_slice(document)?;
    let schema = Schema::from_parts(doc.version, doc.nodes, doc.rules);
    let report = validate_schema(&schema);
    if report.has_errors() {
        return Err(SchemaError::Structure(report));
    }
    Ok(schema)
}

impl Schema {
    /// Builds a schema without validating it. Use [`validate_schema`] or
    /// [`load_schema`] to check invariants.
    pub fn from_parts(version: String, nodes: Vec<SchemaNode>, rules: Vec<ConsistencyRule>) -> Self {
        let mut index = HashMap::with_capacity(nodes.len());
        let mut children: HashMap<String, Vec<usize>> = HashMap::new();
        for (i, node) in nodes.iter().enumerate() {
            index.entry(node.id.clone()).or_insert(i);
            if let Some(parent) = &node.parent_id {
                children.entry(parent.clone()).or_default().push(i);
            }
        }
        Schema { version, nodes, rules, index, children }
    }

    /// The bundled canonical schema.
    pub fn canonical() -> Schema {
        load_schema(CANONICAL_SCHEMA_JSON.as_bytes()).expect("bundled schema is valid")
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn nodes(&self) -> &[SchemaNode] {
        &self.nodes
    }

    pub fn rules(&self) -> &[ConsistencyRule] {
        &self.rules
    }

    pub fn into_parts(self) -> (String, Vec<SchemaNode>, Vec<ConsistencyRule>) {
        (self.version, self.nodes, self.rules)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("schema serialization is infallible")
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn get(&self, id: &str) -> Option<&SchemaNode> {
        self.index.get(id).map(|&i| &self.nodes[i])
    }

    fn require(&self, id: &str) -> Result<&SchemaNode, UnknownNode> {
        self.get(id).ok_or_else(|| UnknownNode(id.to_string()))
    }

    /// Direct children in document order.
    pub fn children(&self, id: &str) -> Vec<&SchemaNode> {
        self.children.get(id).map(|ix| ix.iter().map(|&i| &self.nodes[i]).collect()).unwrap_or_default()
    }

    pub fn is_leaf(&self, id: &str) -> bool {
        self.children.get(id).is_none_or(Vec::is_empty)
    }

    pub fn dimensions(&self) -> Vec<&SchemaNode> {
        self.nodes.iter().filter(|n| n.kind == NodeKind::Dimension).collect()
    }

    /// Pre-order traversal of the subtree below `id`, excluding `id` itself.
    pub fn descendants(&self, id: &str) -> Result<Vec<&SchemaNode>, UnknownNode> {
        self.require(id)?;
        let mut out = Vec::new();
        let mut seen = HashSet::new();
        let mut stack: Vec<usize> = self.children.get(id).cloned().unwrap_or_default();
        stack.reverse();
        while let Some(i) = stack.pop() {
            if !seen.insert(i) {
                continue;
            }
            let node = &self.nodes[i];
            out.push(node);
            if let Some(kids) = self.children.get(&node.id) {
                stack.extend(kids.iter().rev());
            }
        }
        Ok(out)
    }

    /// `[node, parent, ..., dimension]`.
    pub fn path_to_root(&self, id: &str) -> Result<Vec<&SchemaNode>, UnknownNode> {
        let mut node = self.require(id)?;
        let mut path = vec![node];
        while let Some(parent) = &node.parent_id {
            if path.len() > self.nodes.len() {
                break; // parent cycle; reported by validate_schema
            }
            match self.get(parent) {
                Some(p) => {
                    path.push(p);
                    node = p;
                }
                None => break,
            }
        }
        Ok(path)
    }

    /// Ancestors of `id`, nearest first, excluding `id`.
    pub fn ancestors(&self, id: &str) -> Result<Vec<&SchemaNode>, UnknownNode> {
        let mut path = self.path_to_root(id)?;
        path.remove(0);
        Ok(path)
    }

    pub fn is_ancestor(&self, ancestor: &str, id: &str) -> bool {
        self.ancestors(id).is_ok_and(|a| a.iter().any(|n| n.id == ancestor))
    }

    /// All nodes matching `predicate`, ordered by id.
    pub fn find_nodes(&self, predicate: impl Fn(&SchemaNode) -> bool) -> Vec<&SchemaNode> {
        let mut hits: Vec<&SchemaNode> = self.nodes.iter().filter(|n| predicate(n)).collect();
        hits.sort_by(|a, b| a.id.cmp(&b.id));
        hits
    }
}

/// A declarative node filter; unset fields match everything.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct NodeFilter {
    /// Case-insensitive substring of either name.
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub cultural_origin: Option<CulturalOrigin>,
    #[serde(default)]
    pub kind: Option<NodeKind>,
}

impl NodeFilter {
    pub fn matches(&self, node: &SchemaNode) -> bool {
        if let Some(name) = &self.name {
            let needle = name.to_lowercase();
            if !node.name_zh.contains(name.as_str()) && !node.name_en.to_lowercase().contains(&needle) {
                return false;
            }
        }
        self.cultural_origin.is_none_or(|o| node.cultural_origin == o) && self.kind.is_none_or(|k| node.kind == k)
    }
}

fn is_slug(id: &str) -> bool {
    !id.is_empty()
        && id.split('.').all(|seg| {
            !seg.is_empty() && seg.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'-')
        })
}

fn is_semver(version: &str) -> bool {
    let core = version.split(['-', '+']).next().unwrap_or("");
    let parts: Vec<_> = core.split('.').collect();
    parts.len() == 3 && parts.iter().all(|p| !p.is_empty() && p.bytes().all(|b| b.is_ascii_digit()))
}

/// Lists every violated structural invariant. An empty report means the schema
/// is well formed.
pub fn validate_schema(schema: &Schema) -> ValidationReport {
    let mut findings = Vec::new();

    if !is_semver(&schema.version) {
        findings.push(Finding::error(
            "INVALID_VERSION",
            schema.version.clone(),
            "schema version must be a semantic version (MAJOR.MINOR.PATCH)",
        ));
    }

    let mut seen = HashSet::new();
    for node in &schema.nodes {
        if !seen.insert(node.id.as_str()) {
            findings.push(Finding::error("DUPLICATE_ID", &node.id, "node id appears more than once"));
        }
    }

    for node in &schema.nodes {
        let id = node.id.as_str();
        if !is_slug(id) {
            findings.push(Finding::error("INVALID_ID", id, "ids are lowercase dot-separated slugs of [a-z0-9-]"));
        }
        if node.name_zh.trim().is_empty() || node.name_en.trim().is_empty() {
            findings.push(Finding::error("MISSING_NAME", id, "both name_zh and name_en are required"));
        }
        if node.level < 1 || node.level > MAX_LEVEL {
            findings.push(Finding::error(
                "LEVEL_OUT_OF_RANGE",
                id,
                format!("level {} outside 1..={MAX_LEVEL}", node.level),
            ));
        }
        if (node.kind == NodeKind::Dimension) != (node.level == 1) {
            findings.push(Finding::error(
                "KIND_LEVEL_MISMATCH",
                id,
                format!("kind {:?} at level {}; dimensions are exactly the level-1 nodes", node.kind, node.level),
            ));
        }
        match (&node.parent_id, node.level) {
            (Some(_), 1) => findings.push(Finding::error("PARENT_ON_DIMENSION", id, "level-1 nodes have no parent")),
            (None, l) if l != 1 => {
                findings.push(Finding::error("MISSING_PARENT", id, "only level-1 nodes may omit parent_id"))
            }
            (Some(parent_id), level) => match schema.get(parent_id) {
                None => {
                    findings.push(Finding::error("UNKNOWN_PARENT", id, format!("parent `{parent_id}` does not exist")))
                }
                Some(parent) => {
                    if level != parent.level.saturating_add(1) {
                        findings.push(Finding::error(
                            "LEVEL_GAP",
                            id,
                            format!("level {level} under parent `{parent_id}` at level {}", parent.level),
                        ));
                    }
                    if !id.starts_with(&format!("{parent_id}.")) {
                        findings.push(Finding::warning(
                            "ID_PREFIX",
                            id,
                            format!("id should extend its parent id `{parent_id}`"),
                        ));
                    }
                }
            },
            _ => {}
        }
        if node.child_selection == ChildSelection::Exclusive && schema.children(id).len() < 2 {
            findings.push(Finding::error(
                "EXCLUSIVE_UNDERPOPULATED",
                id,
                "an exclusive group needs at least two children",
            ));
        }
        for (i, criterion) in node.criteria.iter().enumerate() {
            let subject = format!("{id}#criteria[{i}]");
            if let Err(problem) = criterion.check() {
                findings.push(Finding::error("CRITERION_THRESHOLD", subject, problem));
                continue;
            }
            let (lo, hi) = criterion.feature_key.value_range();
            let bounds = match criterion.threshold {
                Threshold::Scalar(t) => [t, t],
                Threshold::Range(r) => r,
            };
            if bounds.iter().any(|&t| t < lo || t > hi) {
                findings.push(Finding::error(
                    "CRITERION_OUT_OF_RANGE",
                    subject,
                    format!("threshold outside the value range [{lo}, {hi}] of {}", criterion.feature_key),
                ));
            }
        }
    }

    // parent chains must terminate
    for node in &schema.nodes {
        let mut visited = HashSet::new();
        let mut cursor = node;
        while let Some(parent) = cursor.parent_id.as_deref().and_then(|p| schema.get(p)) {
            if !visited.insert(parent.id.as_str()) || parent.id == node.id {
                findings.push(Finding::error("CYCLE", &node.id, "parent chain loops back on itself"));
                break;
            }
            cursor = parent;
        }
    }

    let dimensions = schema.nodes.iter().filter(|n| n.level == 1).count();
    if dimensions < DIMENSION_COUNT {
        findings.push(Finding::error(
            "MISSING_DIMENSIONS",
            "schema",
            format!("expected {DIMENSION_COUNT} level-1 dimensions, found {dimensions}"),
        ));
    } else if dimensions > DIMENSION_COUNT {
        findings.push(Finding::error(
            "EXTRA_DIMENSIONS",
            "schema",
            format!("expected {DIMENSION_COUNT} level-1 dimensions, found {dimensions}"),
        ));
    }

    let mut report = ValidationReport::from_findings(findings);
    report.merge(rules::check_ruleset(schema, &schema.rules));
    report
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeChange {
    pub id: String,
    pub fields: Vec<String>,
}

/// Differences between two schema versions.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaDiff {
    pub added: Vec<String>,
    pub removed: Vec<String>,
    pub modified: Vec<NodeChange>,
    pub rules_added: Vec<String>,
    pub rules_removed: Vec<String>,
    pub rules_modified: Vec<String>,
}

impl SchemaDiff {
    pub fn is_empty(&self) -> bool {
        self.added.is_empty()
            && self.removed.is_empty()
            && self.modified.is_empty()
            && self.rules_added.is_empty()
            && self.rules_removed.is_empty()
            && self.rules_modified.is_empty()
    }
}

fn changed_fields(old: &SchemaNode, new: &SchemaNode) -> Vec<String> {
    let mut fields = Vec::new();
    let mut check = |name: &str, differs: bool| {
        if differs {
            fields.push(name.to_string());
        }
    };
    check("name_zh", old.name_zh != new.name_zh);
    check("name_en", old.name_en != new.name_en);
    check("level", old.level != new.level);
    check("parent_id", old.parent_id != new.parent_id);
    check("kind", old.kind != new.kind);
    check("definition", old.definition != new.definition);
    check("scenarios", old.scenarios != new.scenarios);
    check("criteria", old.criteria != new.criteria);
    check("cultural_origin", old.cultural_origin != new.cultural_origin);
    check("child_selection", old.child_selection != new.child_selection);
    fields
}

pub fn diff_schemas(old: &Schema, new: &Schema) -> SchemaDiff {
    let old_nodes: BTreeMap<&str, &SchemaNode> = old.nodes.iter().map(|n| (n.id.as_str(), n)).collect();
    let new_nodes: BTreeMap<&str, &SchemaNode> = new.nodes.iter().map(|n| (n.id.as_str(), n)).collect();
    let mut diff = SchemaDiff::default();
    for (id, node) in &new_nodes {
        match old_nodes.get(id) {
            None => diff.added.push(id.to_string()),
            Some(prev) => {
                let fields = changed_fields(prev, node);
                if !fields.is_empty() {
                    diff.modified.push(NodeChange { id: id.to_string(), fields });
                }
            }
        }
    }
    diff.removed = old_nodes.keys().filter(|id| !new_nodes.contains_key(*id)).map(|s| s.to_string()).collect();

    let old_rules: BTreeMap<&str, &ConsistencyRule> = old.rules.iter().map(|r| (r.id.as_str(), r)).collect();
    let new_rules: BTreeMap<&str, &ConsistencyRule> = new.rules.iter().map(|r| (r.id.as_str(), r)).collect();
    for (id, rule) in &new_rules {
        match old_rules.get(id) {
            None => diff.rules_added.push(id.to_string()),
            Some(prev) if prev != rule => diff.rules_modified.push(id.to_string()),
            Some(_) => {}
        }
    }
    diff.rules_removed = old_rules.keys().filter(|id| !new_rules.contains_key(*id)).map(|s| s.to_string()).collect();
    diff
}

#[cfg(test)]
mod tests {
    use super::*;

    fn canonical_parts() -> (String, Vec<SchemaNode>, Vec<ConsistencyRule>) {
        Schema::canonical().into_parts()
    }

    fn id_of(schema: &Schema, name_zh: &str) -> String {
        let hits = schema.find_nodes(|n| n.name_zh == name_zh);
        assert_eq!(hits.len(), 1, "{name_zh} should be unique");
        hits[0].id.clone()
    }

    #[test]
    fn canonical_schema_validates_clean() {
        let schema = Schema::canonical();
        let report = validate_schema(&schema);
        assert!(report.is_empty(), "{report}");
    }

    #[test]
    fn seven_dimensions_in_order() {
        let schema = Schema::canonical();
        let names: Vec<_> = schema.dimensions().iter().map(|n| n.name_zh.as_str()).collect();
        assert_eq!(
            names,
            [
                "构图生成",
                "形状体态生成",
                "透视与空间生成",
                "光影生成",
                "色彩关系生成",
                "笔触与肌理生成",
                "边缘关系生成"
            ]
        );
    }

    #[test]
    fn empty_document_is_missing_dimensions() {
        let err = load_schema(br#"{"version":"1.0.0","nodes":[],"rules":[]}"#).unwrap_err();
        match err {
            SchemaError::Structure(report) => assert_eq!(report.codes(), ["MISSING_DIMENSIONS"]),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn malformed_document_is_parse_error() {
        assert!(matches!(load_schema(b"{\"version\": "), Err(SchemaError::Parse(_))));
        assert!(matches!(load_schema(b"[]"), Err(SchemaError::Parse(_))));
    }

    #[test]
    fn level_gap_detected() {
        let (version, mut nodes, rules) = canonical_parts();
        nodes.push(SchemaNode {
            id: "comp.deep".into(),
            name_zh: "测试".into(),
            name_en: "test".into(),
            level: 3,
            parent_id: Some("comp".into()),
            kind: NodeKind::Label,
            definition: String::new(),
            scenarios: vec![],
            criteria: vec![],
            cultural_origin: CulturalOrigin::Universal,
            child_selection: ChildSelection::Multiple,
        });
        let bytes = serde_json::to_vec(&Schema::from_parts(version, nodes, rules)).unwrap();
        match load_schema(&bytes).unwrap_err() {
            SchemaError::Structure(report) => {
                let gap: Vec<_> = report.with_code("LEVEL_GAP").collect();
                assert_eq!(gap.len(), 1);
                assert_eq!(gap[0].subject, "comp.deep");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn duplicate_id_detected() {
        let (version, mut nodes, rules) = canonical_parts();
        let dup = nodes.last().unwrap().clone();
        nodes.push(dup);
        let report = validate_schema(&Schema::from_parts(version, nodes, rules));
        assert_eq!(report.with_code("DUPLICATE_ID").count(), 1);
    }

    #[test]
    fn exclusive_group_with_one_child() {
        let (version, mut nodes, rules) = canonical_parts();
        let target = nodes.iter_mut().find(|n| n.id == "comp.type.symmetric").unwrap();
        target.child_selection = ChildSelection::Exclusive;
        let report = validate_schema(&Schema::from_parts(version, nodes, rules));
        let hits: Vec<_> = report.with_code("EXCLUSIVE_UNDERPOPULATED").collect();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].subject, "comp.type.symmetric");
    }

    #[test]
    fn bad_criteria_reported() {
        let (version, mut nodes, rules) = canonical_parts();
        let node = nodes.iter_mut().find(|n| n.id == "comp.type.geometric.s-curve").unwrap();
        node.criteria.push(MeasurableCriterion::new(
            FeatureKey::MeanLuminance,
            Comparator::InRange,
            Threshold::Range([0.7, 0.2]),
        ));
        node.criteria.push(MeasurableCriterion::new(FeatureKey::FillRatio, Comparator::Ge, Threshold::Scalar(1.5)));
        node.criteria.push(MeasurableCriterion::new(
            FeatureKey::FillRatio,
            Comparator::Le,
            Threshold::Range([0.1, 0.2]),
        ));
        let report = validate_schema(&Schema::from_parts(version, nodes, rules));
        assert_eq!(report.with_code("CRITERION_THRESHOLD").count(), 2);
        assert_eq!(report.with_code("CRITERION_OUT_OF_RANGE").count(), 1);
    }

    #[test]
    fn kind_and_parent_invariants() {
        let (version, mut nodes, rules) = canonical_parts();
        nodes.iter_mut().find(|n| n.id == "comp.goal").unwrap().kind = NodeKind::Dimension;
        nodes.iter_mut().find(|n| n.id == "comp.fill.full").unwrap().parent_id = Some("nowhere".into());
        let report = validate_schema(&Schema::from_parts(version, nodes, rules));
        assert_eq!(report.with_code("KIND_LEVEL_MISMATCH").count(), 1);
        assert_eq!(report.with_code("UNKNOWN_PARENT").count(), 1);
    }

    #[test]
    fn parent_cycle_detected() {
        let (version, mut nodes, rules) = canonical_parts();
        // comp.goal -> comp.goal.flow -> comp.goal (levels are wrong too, which is fine)
        nodes.iter_mut().find(|n| n.id == "comp.goal").unwrap().parent_id = Some("comp.goal.flow".into());
        let schema = Schema::from_parts(version, nodes, rules);
        let report = validate_schema(&schema);
        assert!(report.with_code("CYCLE").count() >= 1, "{report}");
        // traversal still terminates
        assert!(schema.path_to_root("comp.goal.flow").unwrap().len() <= schema.nodes().len() + 1);
    }

    #[test]
    fn descendants_of_composition() {
        let schema = Schema::canonical();
        let level2: Vec<_> = schema
            .descendants("comp")
            .unwrap()
            .into_iter()
            .filter(|n| n.level == 2)
            .map(|n| n.name_zh.as_str())
            .collect();
        assert_eq!(
            level2,
            ["构成核心目标", "构图类型", "画面充盈度", "视点结构", "视觉引导", "视觉平衡", "节奏与韵律"]
        );
    }

    #[test]
    fn descendants_are_preorder() {
        let schema = Schema::canonical();
        let ids: Vec<_> = schema.descendants("comp.goal").unwrap().iter().map(|n| n.id.as_str()).collect();
        assert_eq!(
            ids,
            [
                "comp.goal.theme",
                "comp.goal.theme.narrative",
                "comp.goal.theme.lyrical",
                "comp.goal.balance",
                "comp.goal.balance.static",
                "comp.goal.balance.dynamic",
                "comp.goal.flow",
            ]
        );
    }

    #[test]
    fn descendants_of_leaf_and_unknown() {
        let schema = Schema::canonical();
        let s_curve = id_of(&schema, "S形构图");
        assert!(schema.descendants(&s_curve).unwrap().is_empty());
        assert_eq!(schema.descendants("no.such.node").unwrap_err(), UnknownNode("no.such.node".into()));
        assert!(schema.path_to_root("no.such.node").is_err());
    }

    #[test]
    fn s_curve_path_to_root() {
        let schema = Schema::canonical();
        let path: Vec<_> =
            schema.path_to_root(&id_of(&schema, "S形构图")).unwrap().iter().map(|n| n.name_zh.as_str()).collect();
        assert_eq!(path, ["S形构图", "几何式构图", "构图类型", "构图生成"]);
        assert_eq!(schema.path_to_root("comp").unwrap().len(), 1);
    }

    #[test]
    fn path_length_equals_level() {
        let schema = Schema::canonical();
        for node in schema.nodes() {
            let path = schema.path_to_root(&node.id).unwrap();
            assert_eq!(path.len(), node.level as usize, "{}", node.id);
            assert_eq!(path.last().unwrap().level, 1);
        }
    }

    #[test]
    fn find_fused_nodes() {
        let schema = Schema::canonical();
        let mut names: Vec<_> = schema
            .find_nodes(|n| n.cultural_origin == CulturalOrigin::Fused)
            .iter()
            .map(|n| n.name_zh.as_str())
            .collect();
        names.sort();
        let mut expected = ["中西方透视融合应用", "中西方融合边缘处理", "中西方融合笔触与肌理"];
        expected.sort();
        assert_eq!(names, expected);
        assert!(schema.find_nodes(|n| n.name_en == "no such thing").is_empty());
        assert_eq!(schema.find_nodes(|n| n.kind == NodeKind::Dimension).len(), 7);
    }

    #[test]
    fn find_nodes_is_id_ordered() {
        let schema = Schema::canonical();
        let hits = schema.find_nodes(|n| n.kind == NodeKind::Label);
        assert!(hits.windows(2).all(|w| w[0].id < w[1].id));
    }

    #[test]
    fn node_filter_by_name() {
        let schema = Schema::canonical();
        let filter = NodeFilter { name: Some("留白".into()), ..Default::default() };
        let hits = schema.find_nodes(|n| filter.matches(n));
        assert!(hits.len() >= 2);
        let filter = NodeFilter { name: Some("Perspective".into()), kind: Some(NodeKind::Label), ..Default::default() };
        assert!(schema.find_nodes(|n| filter.matches(n)).iter().any(|n| n.name_zh == "一点透视"));
    }

    #[test]
    fn diff_identity_is_empty() {
        let schema = Schema::canonical();
        assert!(diff_schemas(&schema, &schema).is_empty());
    }

    #[test]
    fn diff_added_leaf() {
        let old = Schema::canonical();
        let (version, mut nodes, rules) = old.clone().into_parts();
        let mut leaf = nodes.iter().find(|n| n.id == "comp.type.geometric.cross").unwrap().clone();
        leaf.id = "comp.type.geometric.diagonal".into();
        leaf.name_zh = "对角线构图".into();
        leaf.name_en = "diagonal composition".into();
        nodes.push(leaf);
        let new = Schema::from_parts(version, nodes, rules);
        let diff = diff_schemas(&old, &new);
        assert_eq!(diff.added, ["comp.type.geometric.diagonal"]);
        assert!(diff.removed.is_empty() && diff.modified.is_empty());
        let back = diff_schemas(&new, &old);
        assert_eq!(back.removed, ["comp.type.geometric.diagonal"]);
    }

    #[test]
    fn diff_threshold_change_names_criteria() {
        let old = Schema::canonical();
        let (version, mut nodes, rules) = old.clone().into_parts();
        let node = nodes.iter_mut().find(|n| n.id == "comp.type.geometric.s-curve").unwrap();
        assert_eq!(node.criteria[0].threshold, Threshold::Scalar(0.60));
        node.criteria[0].threshold = Threshold::Scalar(0.55);
        let diff = diff_schemas(&old, &Schema::from_parts(version, nodes, rules));
        assert_eq!(
            diff.modified,
            [NodeChange { id: "comp.type.geometric.s-curve".into(), fields: vec!["criteria".into()] }]
        );
        assert!(diff.added.is_empty() && diff.removed.is_empty());
    }

    #[test]
    fn criterion_comparisons_are_inclusive() {
        let ge = MeasurableCriterion::new(FeatureKey::SCurveCoverage, Comparator::Ge, Threshold::Scalar(0.60));
        assert_eq!(ge.is_satisfied(0.60), Some(true));
        assert_eq!(ge.is_satisfied(0.59), Some(false));
        let range =
            MeasurableCriterion::new(FeatureKey::TonalKeyClass, Comparator::InRange, Threshold::Range([1.0, 1.0]));
        assert_eq!(range.is_satisfied(1.0), Some(true));
        assert_eq!(range.is_satisfied(2.0), Some(false));
        let bad = MeasurableCriterion::new(FeatureKey::FillRatio, Comparator::InRange, Threshold::Scalar(0.5));
        assert_eq!(bad.is_satisfied(0.5), None);
    }
}
