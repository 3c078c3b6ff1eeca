//! Declarative consistency rules between schema nodes.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotation::Annotation;
use crate::ontology::Schema;
use crate::report::{Finding, Severity, ValidationReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleKind {
    /// No two of `nodes` may be assigned together.
    MutuallyExclusive,
    /// `nodes[0]` requires `nodes[1]`.
    Implies,
    /// `nodes[0]` requires at least one of `nodes[1..]`.
    RequiresAny,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyRule {
    pub id: String,
    pub kind: RuleKind,
    pub nodes: Vec<String>,
    pub severity: Severity,
    #[serde(default)]
    pub provenance: String,
    /// Nodes whose presence switches the rule off.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub suppressed_by: Vec<String>,
}

impl ConsistencyRule {
    fn referenced(&self) -> impl Iterator<Item = &String> {
        self.nodes.iter().chain(&self.suppressed_by)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("rule `{rule}` references unknown node `{node}`")]
pub struct UnknownRuleNode {
    pub rule: String,
    pub node: String,
}

/// Checks `ann` against `rules`. Presence is exact: run on a normalized
/// annotation so that ancestors count.
pub fn evaluate_rules(
    schema: &Schema,
    rules: &[ConsistencyRule],
    ann: &Annotation,
) -> Result<ValidationReport, UnknownRuleNode> {
    for rule in rules {
        if let Some(node) = rule.referenced().find(|n| !schema.contains(n)) {
            return Err(UnknownRuleNode { rule: rule.id.clone(), node: node.clone() });
        }
    }
    let present: HashSet<&str> = ann.assignments.iter().map(|a| a.node_id.as_str()).collect();
    Ok(evaluate_present(rules, &present))
}

pub(crate) fn evaluate_present(rules: &[ConsistencyRule], present: &HashSet<&str>) -> ValidationReport {
    let mut findings = Vec::new();
    for rule in rules {
        if rule.suppressed_by.iter().any(|s| present.contains(s.as_str())) {
            continue;
        }
        let make = |code: &str, subject: String, message: String| Finding {
            severity: rule.severity,
            code: code.to_string(),
            subject,
            message,
        };
        match rule.kind {
            RuleKind::MutuallyExclusive => {
                let hits: BTreeSet<&str> =
                    rule.nodes.iter().map(String::as_str).filter(|n| present.contains(n)).collect();
                let hits: Vec<&str> = hits.into_iter().collect();
                for (i, a) in hits.iter().enumerate() {
                    for b in &hits[i + 1..] {
                        findings.push(make(
                            "EXCLUSIVE_CONFLICT",
                            format!("{a}|{b}"),
                            format!("{a} and {b} exclude each other ({})", rule.id),
                        ));
                    }
                }
            }
            RuleKind::Implies => {
                if let [antecedent, consequent] = rule.nodes.as_slice() {
                    if present.contains(antecedent.as_str()) && !present.contains(consequent.as_str()) {
                        findings.push(make(
                            "IMPLIES_VIOLATION",
                            format!("{antecedent}->{consequent}"),
                            format!("{antecedent} is expected together with {consequent} ({})", rule.id),
                        ));
                    }
                }
            }
            RuleKind::RequiresAny => {
                if let [antecedent, options @ ..] = rule.nodes.as_slice() {
                    if present.contains(antecedent.as_str()) && !options.iter().any(|o| present.contains(o.as_str())) {
                        findings.push(make(
                            "REQUIRES_ANY_VIOLATION",
                            format!("{antecedent}->{}", options.join("|")),
                            format!("{antecedent} is expected with one of {} ({})", options.join(", "), rule.id),
                        ));
                    }
                }
            }
        }
    }
    ValidationReport::from_findings(findings)
}

/// Reports dangling node references, malformed arity, duplicate ids and cycles
/// among `implies` rules.
pub fn check_ruleset(schema: &Schema, rules: &[ConsistencyRule]) -> ValidationReport {
    let mut findings = Vec::new();
    let mut ids = HashSet::new();
    for rule in rules {
        if !ids.insert(rule.id.as_str()) {
            findings.push(Finding::error("DUPLICATE_RULE_ID", &rule.id, "rule id appears more than once"));
        }
        for node in rule.referenced() {
            if !schema.contains(node) {
                findings.push(Finding::error("DANGLING_RULE_NODE", &rule.id, format!("node `{node}` does not exist")));
            }
        }
        let distinct: HashSet<&String> = rule.nodes.iter().collect();
        let arity_ok = match rule.kind {
            RuleKind::MutuallyExclusive => distinct.len() >= 2 && distinct.len() == rule.nodes.len(),
            RuleKind::Implies => rule.nodes.len() == 2,
            RuleKind::RequiresAny => rule.nodes.len() >= 2,
        };
        if !arity_ok {
            findings.push(Finding::error(
                "RULE_ARITY",
                &rule.id,
                format!("{:?} rule has an invalid node list ({} nodes)", rule.kind, rule.nodes.len()),
            ));
        }
    }

    let edges: Vec<(&str, &str, &str)> = rules
        .iter()
        .filter(|r| r.kind == RuleKind::Implies && r.nodes.len() == 2)
        .map(|r| (r.nodes[0].as_str(), r.nodes[1].as_str(), r.id.as_str()))
        .collect();
    let cyclic = cyclic_nodes(&edges);
    for (from, to, id) in &edges {
        if cyclic.contains(from) && cyclic.contains(to) {
            findings.push(Finding::error("IMPLIES_CYCLE", *id, format!("{from} -> {to} lies on an implication cycle")));
        }
    }
    ValidationReport::from_findings(findings)
}

/// Nodes left after repeatedly peeling sources and then sinks off the graph:
/// exactly the nodes that lie on, or between, cycles.
fn cyclic_nodes<'a>(edges: &[(&'a str, &'a str, &str)]) -> BTreeSet<&'a str> {
    let mut alive: BTreeSet<&str> = edges.iter().flat_map(|(a, b, _)| [*a, *b]).collect();
    loop {
        let mut indeg: BTreeMap<&str, usize> = alive.iter().map(|n| (*n, 0)).collect();
        let mut outdeg = indeg.clone();
        for (a, b, _) in edges {
            if alive.contains(a) && alive.contains(b) {
                *outdeg.get_mut(a).unwrap() += 1;
                *indeg.get_mut(b).unwrap() += 1;
            }
        }
        let before = alive.len();
        alive.retain(|n| indeg[n] > 0 && outdeg[n] > 0);
        if alive.len() == before {
            return alive;
        }
    }
}
