//! Structured findings shared by schema, annotation and rule checks.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Warning,
    Error,
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Severity::Warning => f.write_str("warning"),
            Severity::Error => f.write_str("error"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub severity: Severity,
    pub code: String,
    pub subject: String,
    pub message: String,
}

impl Finding {
    pub fn error(code: &str, subject: impl Into<String>, message: impl Into<String>) -> Self {
        Finding { severity: Severity::Error, code: code.to_string(), subject: subject.into(), message: message.into() }
    }

    pub fn warning(code: &str, subject: impl Into<String>, message: impl Into<String>) -> Self {
        Finding {
            severity: Severity::Warning,
            code: code.to_string(),
            subject: subject.into(),
            message: message.into(),
        }
    }

    fn order_key(&self, other: &Self) -> Ordering {
        self.code
            .cmp(&other.code)
            .then_with(|| self.subject.cmp(&other.subject))
            // errors before warnings for the same (code, subject)
            .then_with(|| other.severity.cmp(&self.severity))
            .then_with(|| self.message.cmp(&other.message))
    }
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:<7} {} [{}] {}", self.severity, self.code, self.subject, self.message)
    }
}

/// An ordered list of findings.
///
/// Findings are kept sorted by `(code, subject)`. At most one finding exists per
/// `(code, subject)` pair: when two checks report the same violation (for example
/// an exclusive parent and an exclusion rule flagging the same pair of labels),
/// the more severe one is kept.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_findings(findings: impl IntoIterator<Item = Finding>) -> Self {
        let mut report = ValidationReport { findings: findings.into_iter().collect() };
        report.normalize();
        report
    }

    pub fn push(&mut self, finding: Finding) {
        self.findings.push(finding);
        self.normalize();
    }

    pub fn merge(&mut self, other: ValidationReport) {
        self.findings.extend(other.findings);
        self.normalize();
    }

    fn normalize(&mut self) {
        self.findings.sort_by(|a, b| a.order_key(b));
        self.findings.dedup_by(|later, earlier| later.code == earlier.code && later.subject == earlier.subject);
    }

    pub fn is_empty(&self) -> bool {
        self.findings.is_empty()
    }

    pub fn len(&self) -> usize {
        self.findings.len()
    }

    pub fn has_errors(&self) -> bool {
        self.findings.iter().any(|f| f.severity == Severity::Error)
    }

    pub fn errors(&self) -> impl Iterator<Item = &Finding> {
        self.findings.iter().filter(|f| f.severity == Severity::Error)
    }

    pub fn with_code<'a>(&'a self, code: &'a str) -> impl Iterator<Item = &'a Finding> + 'a {
        self.findings.iter().filter(move |f| f.code == code)
    }

    pub fn codes(&self) -> Vec<&str> {
        self.findings.iter().map(|f| f.code.as_str()).collect()
    }

    /// Compact JSON with sorted keys. The CLI and the HTTP service both emit
    /// exactly this.
    pub fn to_json(&self) -> String {
        to_sorted_json(self)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.findings.is_empty() {
            return writeln!(f, "no findings");
        }
        for finding in &self.findings {
            writeln!(f, "{finding}")?;
        }
        let errors = self.errors().count();
        writeln!(f, "{} finding(s), {} error(s)", self.findings.len(), errors)
    }
}

/// Compact JSON with object keys in lexicographic order.
pub fn to_sorted_json<T: Serialize + ?Sized>(value: &T) -> String {
    let value = serde_json::to_value(value).expect("value serializes");
    serde_json::to_string(&value).expect("value serializes")
}
