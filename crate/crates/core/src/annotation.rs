//! One annotator's labeling of one image, and its validation against a schema.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ontology::{ChildSelection, Schema};
use crate::report::{Finding, ValidationReport};
use crate::rules;

pub const LAST_SUPPER_JSON: &str = include_str!("../data/exemplars/last-supper.json");
pub const TRAVELERS_JSON: &str = include_str!("../data/exemplars/travelers.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Shape {
    Bbox { x: f64, y: f64, w: f64, h: f64 },
    Polygon { points: Vec<[f64; 2]> },
}

impl Shape {
    fn problem(&self) -> Option<String> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        match self {
            Shape::Bbox { x, y, w, h } => {
                if !(*w > 0.0 && *h > 0.0) {
                    Some("bbox needs positive width and height".into())
                } else if ![*x, *y, *w, *h, x + w, y + h].into_iter().all(unit) {
                    Some("bbox extends outside the unit square".into())
                } else {
                    None
                }
            }
            Shape::Polygon { points } => {
                if points.len() < 3 {
                    Some(format!("polygon needs at least 3 points, has {}", points.len()))
                } else if !points.iter().flatten().copied().all(unit) {
                    Some("polygon point outside the unit square".into())
                } else {
                    None
                }
            }
        }
    }

    fn key(&self) -> String {
        serde_json::to_string(self).expect("shape serializes")
    }
}

/// An image area in coordinates normalized to the image size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub id: String,
    pub shape: Shape,
}

fn default_confidence() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelAssignment {
    pub id: String,
    pub node_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region_id: Option<String>,
    #[serde(default = "default_confidence")]
    pub confidence: f64,
}

impl LabelAssignment {
    pub fn new(id: impl Into<String>, node_id: impl Into<String>) -> Self {
        LabelAssignment { id: id.into(), node_id: node_id.into(), region_id: None, confidence: 1.0 }
    }

    pub fn in_region(mut self, region_id: impl Into<String>) -> Self {
        self.region_id = Some(region_id.into());
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    Above,
    Below,
    LeftOf,
    RightOf,
    Inside,
    Contains,
    InFrontOf,
    Behind,
    Near,
    Far,
}

impl Relation {
    pub fn phrase(self) -> &'static str {
        match self {
            Relation::Above => "above",
            Relation::Below => "below",
            Relation::LeftOf => "left of",
            Relation::RightOf => "right of",
            Relation::Inside => "inside",
            Relation::Contains => "containing",
            Relation::InFrontOf => "in front of",
            Relation::Behind => "behind",
            Relation::Near => "near",
            Relation::Far => "far from",
        }
    }
}

/// A visual proposition: `subject relation object`, where both ends are
/// assignment or region ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialRelation {
    pub subject: String,
    pub relation: Relation,
    pub object: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NarrativeSegment {
    pub order: u32,
    pub region_id: String,
    pub assignment_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub id: String,
    pub image_ref: String,
    pub annotator_id: String,
    pub created_at: DateTime<Utc>,
    pub schema_version: String,
    #[serde(default)]
    pub regions: Vec<Region>,
    #[serde(default)]
    pub assignments: Vec<LabelAssignment>,
    #[serde(default)]
    pub propositions: Vec<SpatialRelation>,
    #[serde(default)]
    pub narrative: Vec<NarrativeSegment>,
    #[serde(default)]
    pub notes: String,
    /// Storage revision, bumped on every write.
    #[serde(default)]
    pub revision: u64,
}

impl Annotation {
    pub fn new(
        id: impl Into<String>,
        image_ref: impl Into<String>,
        annotator_id: impl Into<String>,
        schema_version: impl Into<String>,
    ) -> Self {
        Annotation {
            id: id.into(),
            image_ref: image_ref.into(),
            annotator_id: annotator_id.into(),
            created_at: Utc::now(),
            schema_version: schema_version.into(),
            regions: vec![],
            assignments: vec![],
            propositions: vec![],
            narrative: vec![],
            notes: String::new(),
            revision: 0,
        }
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, serde_json::Error> {
        serde_json::from_slice(bytes)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("annotation serializes")
    }

    pub fn last_supper() -> Self {
        Self::from_json(LAST_SUPPER_JSON.as_bytes()).expect("bundled exemplar parses")
    }

    pub fn travelers() -> Self {
        Self::from_json(TRAVELERS_JSON.as_bytes()).expect("bundled exemplar parses")
    }

    pub fn node_ids(&self) -> BTreeSet<&str> {
        self.assignments.iter().map(|a| a.node_id.as_str()).collect()
    }

    pub fn region(&self, id: &str) -> Option<&Region> {
        self.regions.iter().find(|r| r.id == id)
    }

    pub fn assignment(&self, id: &str) -> Option<&LabelAssignment> {
        self.assignments.iter().find(|a| a.id == id)
    }
}

#[derive(Debug, Error)]
pub enum AnnotationError {
    #[error("annotation targets schema version {found}, schema is {expected}")]
    SchemaMismatch { expected: String, found: String },
    #[error("annotation `{id}` has validation errors:\n{report}")]
    InvalidAnnotation { id: String, report: ValidationReport },
    #[error("nothing to merge")]
    NoAnnotations,
    #[error("annotations reference different images: {0:?}")]
    MixedImages(Vec<String>),
    #[error("annotations reference different schema versions: {0:?}")]
    MixedSchemaVersions(Vec<String>),
}

/// Assigned nodes known to the schema together with all their ancestors.
pub fn present_nodes<'s>(schema: &'s Schema, ann: &Annotation) -> BTreeSet<&'s str> {
    let mut out = BTreeSet::new();
    for a in &ann.assignments {
        if let Ok(path) = schema.path_to_root(&a.node_id) {
            out.extend(path.into_iter().map(|n| n.id.as_str()));
        }
    }
    out
}

fn check_schema_version(schema: &Schema, ann: &Annotation) -> Result<(), AnnotationError> {
    if ann.schema_version != schema.version() {
        return Err(AnnotationError::SchemaMismatch {
            expected: schema.version().to_string(),
            found: ann.schema_version.clone(),
        });
    }
    Ok(())
}

/// Structural checks plus the schema's consistency rules.
///
/// Exclusive groups and rules are evaluated on the ancestor closure of the
/// assigned labels, so an annotation need not be normalized first. An empty
/// report means the annotation is accepted.
pub fn validate_annotation(schema: &Schema, ann: &Annotation) -> Result<ValidationReport, AnnotationError> {
    check_schema_version(schema, ann)?;
    let mut findings = Vec::new();

    let mut ids = HashSet::new();
    for id in ann.regions.iter().map(|r| &r.id).chain(ann.assignments.iter().map(|a| &a.id)) {
        if !ids.insert(id.as_str()) {
            findings.push(Finding::error("DUPLICATE_ID", id, "region and assignment ids must be unique"));
        }
    }
    let regions: HashSet<&str> = ann.regions.iter().map(|r| r.id.as_str()).collect();
    let assignments: HashSet<&str> = ann.assignments.iter().map(|a| a.id.as_str()).collect();

    for region in &ann.regions {
        if let Some(problem) = region.shape.problem() {
            findings.push(Finding::error("INVALID_REGION", &region.id, problem));
        }
    }

    for a in &ann.assignments {
        if !schema.contains(&a.node_id) {
            findings.push(Finding::error("UNKNOWN_NODE", &a.id, format!("node `{}` is not in the schema", a.node_id)));
        }
        if let Some(region) = &a.region_id {
            if !regions.contains(region.as_str()) {
                findings.push(Finding::error("DANGLING_REF", &a.id, format!("region `{region}` does not exist")));
            }
        }
        if !(0.0..=1.0).contains(&a.confidence) {
            findings.push(Finding::error(
                "INVALID_CONFIDENCE",
                &a.id,
                format!("confidence {} outside [0, 1]", a.confidence),
            ));
        }
    }

    for (i, p) in ann.propositions.iter().enumerate() {
        let subject = format!("propositions[{i}]");
        for end in [&p.subject, &p.object] {
            if !regions.contains(end.as_str()) && !assignments.contains(end.as_str()) {
                findings.push(Finding::error(
                    "DANGLING_REF",
                    subject.clone(),
                    format!("`{end}` is neither a region nor an assignment"),
                ));
            }
        }
        if p.subject == p.object {
            findings.push(Finding::error("SELF_RELATION", subject, "subject and object must differ"));
        }
    }

    for (i, seg) in ann.narrative.iter().enumerate() {
        let subject = format!("narrative[{i}]");
        if !regions.contains(seg.region_id.as_str()) {
            findings.push(Finding::error(
                "DANGLING_REF",
                subject.clone(),
                format!("region `{}` does not exist", seg.region_id),
            ));
        }
        if seg.assignment_ids.is_empty() {
            findings.push(Finding::error("EMPTY_SEGMENT", subject.clone(), "a segment needs at least one assignment"));
        }
        for id in &seg.assignment_ids {
            if !assignments.contains(id.as_str()) {
                findings.push(Finding::error(
                    "DANGLING_REF",
                    subject.clone(),
                    format!("assignment `{id}` does not exist"),
                ));
            }
        }
    }
    let mut orders: Vec<u32> = ann.narrative.iter().map(|s| s.order).collect();
    orders.sort_unstable();
    if orders.iter().enumerate().any(|(i, &o)| o as usize != i) {
        findings.push(Finding::error(
            "NARRATIVE_GAP",
            "narrative",
            format!("segment orders {orders:?} are not 0..{}", orders.len()),
        ));
    }

    let present = present_nodes(schema, ann);
    for parent in schema.nodes().iter().filter(|n| n.child_selection == ChildSelection::Exclusive) {
        let chosen: Vec<&str> = schema
            .children(&parent.id)
            .into_iter()
            .map(|c| c.id.as_str())
            .filter(|c| present.contains(c))
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        for (i, a) in chosen.iter().enumerate() {
            for b in &chosen[i + 1..] {
                findings.push(Finding::error(
                    "EXCLUSIVE_CONFLICT",
                    format!("{a}|{b}"),
                    format!("{a} and {b} are alternatives under {}", parent.id),
                ));
            }
        }
    }

    let mut report = ValidationReport::from_findings(findings);
    let present: HashSet<&str> = present.into_iter().collect();
    report.merge(rules::evaluate_present(schema.rules(), &present));
    Ok(report)
}

/// Like [`validate_annotation`], with a version mismatch reported as a
/// `SCHEMA_MISMATCH` error finding instead of an `Err`.
pub fn annotation_report(schema: &Schema, ann: &Annotation) -> ValidationReport {
    match validate_annotation(schema, ann) {
        Ok(report) => report,
        Err(e) => ValidationReport::from_findings([Finding::error("SCHEMA_MISMATCH", &ann.id, e.to_string())]),
    }
}

/// Report for a document that is not a well-formed annotation.
pub fn parse_error_report(err: &serde_json::Error) -> ValidationReport {
    ValidationReport::from_findings([Finding::error("PARSE_ERROR", "", err.to_string())])
}

fn require_valid(schema: &Schema, ann: &Annotation) -> Result<(), AnnotationError> {
    let report = validate_annotation(schema, ann)?;
    if report.has_errors() {
        return Err(AnnotationError::InvalidAnnotation { id: ann.id.clone(), report });
    }
    Ok(())
}

/// Adds every missing ancestor of every assigned label.
///
/// An added ancestor takes the maximum confidence of the assignments below it,
/// and their region when they all share one. Existing assignments are left
/// untouched, so the operation is idempotent and never removes anything.
pub fn normalize_annotation(schema: &Schema, ann: &Annotation) -> Result<Annotation, AnnotationError> {
    require_valid(schema, ann)?;
    let assigned: HashSet<&str> = ann.assignments.iter().map(|a| a.node_id.as_str()).collect();
    let mut contributions: BTreeMap<&str, Vec<&LabelAssignment>> = BTreeMap::new();
    for a in &ann.assignments {
        for ancestor in schema.ancestors(&a.node_id).unwrap_or_default() {
            if !assigned.contains(ancestor.id.as_str()) {
                contributions.entry(ancestor.id.as_str()).or_default().push(a);
            }
        }
    }
    let mut taken: HashSet<String> =
        ann.regions.iter().map(|r| r.id.clone()).chain(ann.assignments.iter().map(|a| a.id.clone())).collect();
    let mut out = ann.clone();
    // dimension-first so that ancestors precede descendants
    let mut added: Vec<(&str, Vec<&LabelAssignment>)> = contributions.into_iter().collect();
    added.sort_by_key(|(id, _)| (schema.get(id).map_or(0, |n| n.level), *id));
    for (node_id, children) in added {
        let first = children[0].region_id.clone();
        let region_id = if children.iter().all(|c| c.region_id == first) { first } else { None };
        let confidence = children.iter().map(|c| c.confidence).fold(0.0, f64::max);
        let mut id = format!("auto.{node_id}");
        let mut n = 1;
        while taken.contains(&id) {
            n += 1;
            id = format!("auto.{node_id}.{n}");
        }
        taken.insert(id.clone());
        out.assignments.push(LabelAssignment { id, node_id: node_id.to_string(), region_id, confidence });
    }
    Ok(out)
}

/// One export line for generative-model training.
///
/// Fields are declared in alphabetical order, which keeps serialized keys sorted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub annotation_id: String,
    pub caption: String,
    pub image_ref: String,
    pub labels: Vec<String>,
}

/// Most specific assigned labels: assigned nodes with no assigned descendant.
fn specific_labels<'s>(schema: &'s Schema, ann: &Annotation) -> Vec<&'s str> {
    let assigned: BTreeSet<&str> =
        ann.assignments.iter().filter_map(|a| schema.get(&a.node_id)).map(|n| n.id.as_str()).collect();
    let mut covered = HashSet::new();
    for id in &assigned {
        for ancestor in schema.ancestors(id).unwrap_or_default() {
            covered.insert(ancestor.id.as_str());
        }
    }
    assigned.into_iter().filter(|id| !covered.contains(id)).collect()
}

fn describe_end(schema: &Schema, ann: &Annotation, specific: &HashSet<&str>, id: &str) -> String {
    let name = |node_id: &str| schema.get(node_id).map_or_else(|| node_id.to_string(), |n| n.name_en.clone());
    if let Some(a) = ann.assignment(id) {
        return name(&a.node_id);
    }
    let mut names: Vec<String> = ann
        .assignments
        .iter()
        .filter(|a| a.region_id.as_deref() == Some(id) && specific.contains(a.node_id.as_str()))
        .map(|a| name(&a.node_id))
        .collect();
    names.dedup();
    if names.is_empty() {
        format!("region {id}")
    } else {
        names.join(" and ")
    }
}

/// Builds `painting with {labels}, {relations}`.
///
/// Labels are the English names of the most specific labels in id order, joined
/// by `, `. Relations are `subject phrase object` clauses joined by `; `. Empty
/// parts are dropped; with neither the caption is just `painting`.
pub fn caption(schema: &Schema, ann: &Annotation) -> String {
    let specific = specific_labels(schema, ann);
    let labels: Vec<&str> = specific.iter().filter_map(|id| schema.get(id)).map(|n| n.name_en.as_str()).collect();
    let specific: HashSet<&str> = specific.into_iter().collect();
    let relations: Vec<String> = ann
        .propositions
        .iter()
        .map(|p| {
            format!(
                "{} {} {}",
                describe_end(schema, ann, &specific, &p.subject),
                p.relation.phrase(),
                describe_end(schema, ann, &specific, &p.object)
            )
        })
        .collect();
    let parts: Vec<String> = [labels.join(", "), relations.join("; ")].into_iter().filter(|s| !s.is_empty()).collect();
    if parts.is_empty() {
        "painting".to_string()
    } else {
        format!("painting with {}", parts.join(", "))
    }
}

/// One record per annotation, in input order. No merging across annotators.
pub fn to_training_records(schema: &Schema, anns: &[Annotation]) -> Result<Vec<TrainingRecord>, AnnotationError> {
    anns.iter()
        .map(|ann| {
            require_valid(schema, ann)?;
            Ok(TrainingRecord {
                annotation_id: ann.id.clone(),
                caption: caption(schema, ann),
                image_ref: ann.image_ref.clone(),
                labels: specific_labels(schema, ann).into_iter().map(String::from).collect(),
            })
        })
        .collect()
}

/// JSON Lines, one record per line, each line terminated by `\n`.
pub fn records_to_jsonl(records: &[TrainingRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn records_from_jsonl(text: &str) -> Result<Vec<TrainingRecord>, serde_json::Error> {
    text.lines().filter(|l| !l.trim().is_empty()).map(serde_json::from_str).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
enum EndKey {
    Region(String),
    Assignment(String, Option<String>),
}

fn end_key(ann: &Annotation, id: &str) -> Option<EndKey> {
    let region_key = |rid: &str| ann.region(rid).map(|r| r.shape.key());
    if let Some(a) = ann.assignment(id) {
        return Some(EndKey::Assignment(a.node_id.clone(), a.region_id.as_deref().and_then(region_key)));
    }
    region_key(id).map(EndKey::Region)
}

type NarrativeKey = Vec<(String, Vec<EndKey>)>;

fn narrative_key(ann: &Annotation) -> Option<NarrativeKey> {
    let mut segs: Vec<&NarrativeSegment> = ann.narrative.iter().collect();
    segs.sort_by_key(|s| s.order);
    segs.iter()
        .map(|s| {
            let region = ann.region(&s.region_id)?.shape.key();
            let mut members: Vec<EndKey> = s.assignment_ids.iter().map(|id| end_key(ann, id)).collect::<Option<_>>()?;
            members.sort();
            members.dedup();
            Some((region, members))
        })
        .collect()
}

/// Majority consensus of several annotations of one image.
///
/// An assignment, keyed by node and region shape, survives when more than half
/// of the inputs carry it; its confidence is the mean over those inputs.
/// Propositions survive likewise when both ends survive. The narrative survives
/// when more than half of the inputs share it exactly. Ids are regenerated, and
/// the result does not depend on input order.
pub fn merge_annotations(schema: &Schema, anns: &[Annotation]) -> Result<Annotation, AnnotationError> {
    let first = anns.first().ok_or(AnnotationError::NoAnnotations)?;
    let images: BTreeSet<&str> = anns.iter().map(|a| a.image_ref.as_str()).collect();
    if images.len() > 1 {
        return Err(AnnotationError::MixedImages(images.into_iter().map(String::from).collect()));
    }
    let versions: BTreeSet<&str> = anns.iter().map(|a| a.schema_version.as_str()).collect();
    if versions.len() > 1 {
        return Err(AnnotationError::MixedSchemaVersions(versions.into_iter().map(String::from).collect()));
    }
    check_schema_version(schema, first)?;

    let mut sorted: Vec<&Annotation> = anns.iter().collect();
    sorted.sort_by(|a, b| (&a.annotator_id, &a.id).cmp(&(&b.annotator_id, &b.id)));
    let n = sorted.len();
    let majority = |count: usize| count * 2 > n;

    let mut assignment_votes: BTreeMap<EndKey, Vec<f64>> = BTreeMap::new();
    let mut proposition_votes: BTreeMap<(EndKey, Relation, EndKey), usize> = BTreeMap::new();
    let mut narrative_votes: BTreeMap<NarrativeKey, usize> = BTreeMap::new();
    for ann in &sorted {
        let mut mine: BTreeMap<EndKey, f64> = BTreeMap::new();
        for a in &ann.assignments {
            if let Some(key) = end_key(ann, &a.id) {
                let c = mine.entry(key).or_insert(a.confidence);
                *c = c.max(a.confidence);
            }
        }
        for (key, c) in mine {
            assignment_votes.entry(key).or_default().push(c);
        }
        let props: BTreeSet<_> = ann
            .propositions
            .iter()
            .filter_map(|p| Some((end_key(ann, &p.subject)?, p.relation, end_key(ann, &p.object)?)))
            .collect();
        for p in props {
            *proposition_votes.entry(p).or_default() += 1;
        }
        if !ann.narrative.is_empty() {
            if let Some(key) = narrative_key(ann) {
                *narrative_votes.entry(key).or_default() += 1;
            }
        }
    }

    let kept: BTreeMap<EndKey, f64> = assignment_votes
        .into_iter()
        .filter(|(_, votes)| majority(votes.len()))
        .map(|(key, mut votes)| {
            votes.sort_by(f64::total_cmp);
            let mean = votes.iter().sum::<f64>() / votes.len() as f64;
            (key, mean)
        })
        .collect();
    let propositions: Vec<(EndKey, Relation, EndKey)> = proposition_votes
        .into_iter()
        .filter(|(_, count)| majority(*count))
        .map(|(p, _)| p)
        .filter(|(s, _, o)| [s, o].iter().all(|e| !matches!(e, EndKey::Assignment(..)) || kept.contains_key(e)))
        .collect();
    let narrative = narrative_votes
        .into_iter()
        .find(|(_, count)| majority(*count))
        .map(|(key, _)| key)
        .filter(|key| key.iter().all(|(_, members)| members.iter().all(|m| kept.contains_key(m))));

    let mut shapes: BTreeSet<String> = BTreeSet::new();
    for key in kept.keys() {
        if let EndKey::Assignment(_, Some(shape)) = key {
            shapes.insert(shape.clone());
        }
    }
    for (s, _, o) in &propositions {
        for e in [s, o] {
            if let EndKey::Region(shape) = e {
                shapes.insert(shape.clone());
            }
        }
    }
    for (shape, _) in narrative.iter().flatten() {
        shapes.insert(shape.clone());
    }
    let region_ids: HashMap<&String, String> =
        shapes.iter().enumerate().map(|(i, s)| (s, format!("r{}", i + 1))).collect();
    let assignment_ids: HashMap<&EndKey, String> =
        kept.keys().enumerate().map(|(i, k)| (k, format!("a{}", i + 1))).collect();
    let end_id = |e: &EndKey| match e {
        EndKey::Region(shape) => region_ids[shape].clone(),
        assignment => assignment_ids[assignment].clone(),
    };

    let mut out = Annotation {
        id: format!("consensus-{}", sorted[0].id),
        image_ref: first.image_ref.clone(),
        annotator_id: "consensus".to_string(),
        created_at: sorted.iter().map(|a| a.created_at).max().expect("non-empty"),
        schema_version: first.schema_version.clone(),
        regions: vec![],
        assignments: vec![],
        propositions: vec![],
        narrative: vec![],
        notes: String::new(),
        revision: 0,
    };
    for shape in &shapes {
        out.regions.push(Region {
            id: region_ids[shape].clone(),
            shape: serde_json::from_str(shape).expect("shape key round-trips"),
        });
    }
    for (key, confidence) in &kept {
        if let EndKey::Assignment(node_id, shape) = key {
            out.assignments.push(LabelAssignment {
                id: assignment_ids[key].clone(),
                node_id: node_id.clone(),
                region_id: shape.as_ref().map(|s| region_ids[s].clone()),
                confidence: *confidence,
            });
        }
    }
    for (s, relation, o) in &propositions {
        out.propositions.push(SpatialRelation { subject: end_id(s), relation: *relation, object: end_id(o) });
    }
    for (order, (shape, members)) in narrative.into_iter().flatten().enumerate() {
        out.narrative.push(NarrativeSegment {
            order: order as u32,
            region_id: region_ids[&shape].clone(),
            assignment_ids: members.iter().map(end_id).collect(),
        });
    }
    Ok(out)
}

impl fmt::Display for Annotation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} ({} by {}, {} labels, {} regions, rev {})",
            self.id,
            self.image_ref,
            self.annotator_id,
            self.assignments.len(),
            self.regions.len(),
            self.revision
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::report::Severity;

    fn schema() -> Schema {
        Schema::canonical()
    }

    fn blank(id: &str) -> Annotation {
        let mut ann = Annotation::new(id, "img/test.png", "alice", "1.0.0");
        ann.created_at = "2024-05-01T12:00:00Z".parse().unwrap();
        ann
    }

    fn with_labels(id: &str, nodes: &[&str]) -> Annotation {
        let mut ann = blank(id);
        for (i, node) in nodes.iter().enumerate() {
            ann.assignments.push(LabelAssignment::new(format!("a{i}"), *node));
        }
        ann
    }

    #[test]
    fn exemplars_validate_clean() {
        let schema = schema();
        for ann in [Annotation::last_supper(), Annotation::travelers()] {
            let report = validate_annotation(&schema, &ann).unwrap();
            assert!(report.is_empty(), "{}: {report}", ann.id);
        }
    }

    #[test]
    fn injected_scattered_composition_gives_one_conflict() {
        let schema = schema();
        let mut ann = Annotation::last_supper();
        ann.assignments.push(LabelAssignment::new("injected", "comp.viewpoint.scattered"));
        let report = validate_annotation(&schema, &ann).unwrap();
        assert_eq!(report.len(), 1, "{report}");
        let f = &report.findings[0];
        assert_eq!(
            (f.code.as_str(), f.subject.as_str()),
            ("EXCLUSIVE_CONFLICT", "comp.viewpoint.focal|comp.viewpoint.scattered")
        );
        assert_eq!(f.severity, Severity::Error);
    }

    #[test]
    fn full_and_blank_conflict() {
        let report = validate_annotation(&schema(), &with_labels("x", &["comp.fill.full", "comp.fill.blank"])).unwrap();
        assert_eq!(report.codes(), ["EXCLUSIVE_CONFLICT"]);
    }

    #[test]
    fn empty_annotation_is_accepted() {
        assert!(validate_annotation(&schema(), &blank("e")).unwrap().is_empty());
    }

    #[test]
    fn schema_mismatch() {
        let mut ann = blank("m");
        ann.schema_version = "0.9.0".into();
        assert!(matches!(validate_annotation(&schema(), &ann), Err(AnnotationError::SchemaMismatch { .. })));
    }

    #[test]
    fn structural_findings() {
        let mut ann = with_labels("s", &["comp.no-such", "comp.fill.full"]);
        ann.assignments[1].region_id = Some("ghost".into());
        ann.assignments[1].confidence = 1.5;
        ann.regions.push(Region { id: "r1".into(), shape: Shape::Polygon { points: vec![[0.0, 0.0], [1.0, 1.0]] } });
        ann.regions.push(Region { id: "r2".into(), shape: Shape::Bbox { x: 0.5, y: 0.5, w: 0.6, h: 0.1 } });
        ann.propositions.push(SpatialRelation { subject: "r1".into(), relation: Relation::Above, object: "r1".into() });
        ann.propositions.push(SpatialRelation {
            subject: "a0".into(),
            relation: Relation::Near,
            object: "nobody".into(),
        });
        ann.narrative.push(NarrativeSegment { order: 0, region_id: "r1".into(), assignment_ids: vec!["a1".into()] });
        ann.narrative.push(NarrativeSegment { order: 2, region_id: "r1".into(), assignment_ids: vec![] });
        let report = validate_annotation(&schema(), &ann).unwrap();
        let codes: BTreeSet<&str> = report.codes().into_iter().collect();
        for code in [
            "UNKNOWN_NODE",
            "DANGLING_REF",
            "INVALID_CONFIDENCE",
            "INVALID_REGION",
            "SELF_RELATION",
            "NARRATIVE_GAP",
            "EMPTY_SEGMENT",
        ] {
            assert!(codes.contains(code), "missing {code}: {report}");
        }
        assert_eq!(report.with_code("INVALID_REGION").count(), 2);
    }

    #[test]
    fn duplicate_narrative_order_is_a_gap() {
        let mut ann = with_labels("n", &["comp.goal.flow"]);
        ann.regions.push(Region { id: "r".into(), shape: Shape::Bbox { x: 0.0, y: 0.0, w: 1.0, h: 1.0 } });
        for _ in 0..2 {
            ann.narrative.push(NarrativeSegment { order: 0, region_id: "r".into(), assignment_ids: vec!["a0".into()] });
        }
        assert_eq!(validate_annotation(&schema(), &ann).unwrap().codes(), ["NARRATIVE_GAP"]);
    }

    #[test]
    fn normalize_adds_ancestor_chain() {
        let schema = schema();
        let ann = with_labels("n", &["comp.type.geometric.s-curve"]);
        let norm = normalize_annotation(&schema, &ann).unwrap();
        let names: BTreeSet<&str> =
            norm.assignments.iter().map(|a| schema.get(&a.node_id).unwrap().name_zh.as_str()).collect();
        assert_eq!(names, BTreeSet::from(["S形构图", "几何式构图", "构图类型", "构图生成"]));
    }

    #[test]
    fn normalize_is_idempotent_with_set_semantics() {
        let schema = schema();
        let mut ann = with_labels("n", &["comp.type.geometric.triangle", "comp.type.geometric.circle"]);
        ann.assignments[0].confidence = 0.4;
        ann.assignments[1].confidence = 0.7;
        let once = normalize_annotation(&schema, &ann).unwrap();
        assert_eq!(once.assignments.len(), 5);
        let geometric = once.assignments.iter().find(|a| a.node_id == "comp.type.geometric").unwrap();
        assert_eq!(geometric.confidence, 0.7);
        assert_eq!(normalize_annotation(&schema, &once).unwrap(), once);
    }

    #[test]
    fn normalize_region_inheritance() {
        let schema = schema();
        let mut ann = with_labels("n", &["light.source.direction.side", "light.source.direction.back"]);
        for id in ["r1", "r2"] {
            ann.regions.push(Region { id: id.into(), shape: Shape::Bbox { x: 0.1, y: 0.1, w: 0.2, h: 0.2 } });
        }
        ann.assignments[0].region_id = Some("r1".into());
        ann.assignments[1].region_id = Some("r1".into());
        let norm = normalize_annotation(&schema, &ann).unwrap();
        assert!(norm
            .assignments
            .iter()
            .filter(|a| a.id.starts_with("auto."))
            .all(|a| a.region_id.as_deref() == Some("r1")));
        ann.assignments[1].region_id = Some("r2".into());
        let norm = normalize_annotation(&schema, &ann).unwrap();
        assert!(norm.assignments.iter().filter(|a| a.id.starts_with("auto.")).all(|a| a.region_id.is_none()));
    }

    #[test]
    fn normalize_rejects_invalid() {
        let ann = with_labels("n", &["comp.fill.full", "comp.fill.blank"]);
        assert!(matches!(normalize_annotation(&schema(), &ann), Err(AnnotationError::InvalidAnnotation { .. })));
    }

    #[test]
    fn last_supper_record() {
        let schema = schema();
        let records = to_training_records(&schema, &[Annotation::last_supper()]).unwrap();
        assert_eq!(records.len(), 1);
        let caption = &records[0].caption;
        assert!(caption.starts_with("painting with "));
        assert!(caption.contains("one-point perspective"), "{caption}");
        assert!(caption.contains("focal composition"), "{caption}");
        assert!(records[0].labels.windows(2).all(|w| w[0] < w[1]));
        assert!(records[0].labels.contains(&"space.linear.western.one-point".to_string()));
    }

    #[test]
    fn labels_are_specific_and_stable_under_normalize() {
        let schema = schema();
        let ann = Annotation::travelers();
        let norm = normalize_annotation(&schema, &ann).unwrap();
        let a = to_training_records(&schema, &[ann]).unwrap();
        let b = to_training_records(&schema, &[norm]).unwrap();
        assert_eq!(a[0].labels, b[0].labels);
        assert_eq!(a[0].caption, b[0].caption);
    }

    #[test]
    fn empty_annotation_record() {
        let records = to_training_records(&schema(), &[blank("e")]).unwrap();
        assert!(records[0].labels.is_empty());
        assert_eq!(records[0].caption, "painting");
    }

    #[test]
    fn same_image_two_annotators_two_records() {
        let mut b = Annotation::last_supper();
        b.id = "other".into();
        b.annotator_id = "bob".into();
        let records = to_training_records(&schema(), &[Annotation::last_supper(), b]).unwrap();
        assert_eq!(records.len(), 2);
    }

    #[test]
    fn jsonl_keys_sorted_and_round_trip() {
        let records = to_training_records(&schema(), &[Annotation::last_supper(), Annotation::travelers()]).unwrap();
        let text = records_to_jsonl(&records);
        assert_eq!(text.lines().count(), 2);
        for line in text.lines() {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            let keys: Vec<&String> = v.as_object().unwrap().keys().collect();
            assert!(keys.windows(2).all(|w| w[0] < w[1]));
        }
        assert_eq!(records_from_jsonl(&text).unwrap(), records);
    }

    #[test]
    fn export_rejects_invalid() {
        let bad = with_labels("bad", &["comp.fill.full", "comp.fill.blank"]);
        assert!(to_training_records(&schema(), &[blank("ok"), bad]).is_err());
    }

    fn node_set(ann: &Annotation) -> BTreeSet<String> {
        ann.assignments.iter().map(|a| a.node_id.clone()).collect()
    }

    #[test]
    fn merge_majority() {
        let schema = schema();
        let mut anns = Vec::new();
        for (i, labels) in [
            vec!["space.linear.chinese.three-distances.high", "light.system.key.low"],
            vec!["space.linear.chinese.three-distances.high"],
            vec!["comp.fill.blank"],
        ]
        .into_iter()
        .enumerate()
        {
            let mut ann = with_labels(&format!("t{i}"), &labels);
            ann.annotator_id = format!("annotator-{i}");
            anns.push(ann);
        }
        let merged = merge_annotations(&schema, &anns).unwrap();
        assert_eq!(node_set(&merged), BTreeSet::from(["space.linear.chinese.three-distances.high".to_string()]));
    }

    #[test]
    fn merge_identical_is_input_equivalent() {
        let schema = schema();
        let base = Annotation::travelers();
        let copies: Vec<_> = (0..3)
            .map(|i| {
                let mut a = base.clone();
                a.id = format!("copy{i}");
                a.annotator_id = format!("annotator-{i}");
                a
            })
            .collect();
        let merged = merge_annotations(&schema, &copies).unwrap();
        assert_eq!(node_set(&merged), node_set(&base));
        assert_eq!(merged.regions.len(), base.regions.len());
        assert_eq!(merged.propositions.len(), base.propositions.len());
        assert_eq!(merged.narrative.len(), base.narrative.len());
        assert!(validate_annotation(&schema, &merged).unwrap().is_empty());
    }

    #[test]
    fn merge_tie_drops() {
        let a = with_labels("a", &["comp.fill.blank"]);
        let mut b = with_labels("b", &[]);
        b.annotator_id = "bob".into();
        assert!(merge_annotations(&schema(), &[a, b]).unwrap().assignments.is_empty());
    }

    #[test]
    fn merge_errors() {
        let schema = schema();
        assert!(matches!(merge_annotations(&schema, &[]), Err(AnnotationError::NoAnnotations)));
        let a = blank("a");
        let mut b = blank("b");
        b.image_ref = "elsewhere.png".into();
        assert!(matches!(merge_annotations(&schema, &[a.clone(), b]), Err(AnnotationError::MixedImages(_))));
        let mut c = blank("c");
        c.schema_version = "2.0.0".into();
        assert!(matches!(merge_annotations(&schema, &[a, c]), Err(AnnotationError::MixedSchemaVersions(_))));
    }

    #[test]
    fn json_round_trip() {
        for ann in [Annotation::last_supper(), Annotation::travelers()] {
            let back = Annotation::from_json(ann.to_json_pretty().as_bytes()).unwrap();
            assert_eq!(back, ann);
        }
    }

    #[test]
    fn confidence_defaults_to_one() {
        let a: LabelAssignment = serde_json::from_str(r#"{"id":"a","node_id":"comp"}"#).unwrap();
        assert_eq!(a.confidence, 1.0);
    }

    #[test]
    fn unknown_relation_rejected() {
        let err = serde_json::from_str::<SpatialRelation>(r#"{"subject":"a","relation":"beside","object":"b"}"#);
        assert!(err.is_err());
    }
}
