//! Inter-annotator agreement on per-node label presence.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotation::Annotation;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AgreementError {
    #[error("image `{0}` is annotated more than once in one corpus")]
    DuplicateImage(String),
    #[error("corpora cover different images; only in first: {only_a:?}, only in second: {only_b:?}")]
    MisalignedCorpora { only_a: Vec<String>, only_b: Vec<String> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeAgreement {
    pub observed_po: f64,
    pub chance_pe: f64,
    pub kappa: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    /// Nodes with a defined kappa only.
    pub per_node: BTreeMap<String, NodeAgreement>,
    pub macro_kappa: Option<f64>,
    pub n_items: usize,
}

struct Aligned<'a> {
    pairs: Vec<(BTreeSet<&'a str>, BTreeSet<&'a str>)>,
}

fn index(corpus: &[Annotation]) -> Result<HashMap<&str, &Annotation>, AgreementError> {
    let mut out = HashMap::new();
    for ann in corpus {
        if out.insert(ann.image_ref.as_str(), ann).is_some() {
            return Err(AgreementError::DuplicateImage(ann.image_ref.clone()));
        }
    }
    Ok(out)
}

fn align<'a>(a: &'a [Annotation], b: &'a [Annotation]) -> Result<Aligned<'a>, AgreementError> {
    let ia = index(a)?;
    let ib = index(b)?;
    let mut only_a: Vec<String> = ia.keys().filter(|k| !ib.contains_key(*k)).map(|k| k.to_string()).collect();
    let mut only_b: Vec<String> = ib.keys().filter(|k| !ia.contains_key(*k)).map(|k| k.to_string()).collect();
    if !only_a.is_empty() || !only_b.is_empty() {
        only_a.sort();
        only_b.sort();
        return Err(AgreementError::MisalignedCorpora { only_a, only_b });
    }
    let mut images: Vec<&&str> = ia.keys().collect();
    images.sort();
    let pairs = images.into_iter().map(|img| (ia[*img].node_ids(), ib[*img].node_ids())).collect();
    Ok(Aligned { pairs })
}

fn node_universe<'a>(aligned: &Aligned<'a>, node_set: Option<&'a [String]>) -> BTreeSet<&'a str> {
    match node_set {
        Some(nodes) => nodes.iter().map(String::as_str).collect(),
        None => aligned.pairs.iter().flat_map(|(x, y)| x.iter().chain(y)).copied().collect(),
    }
}

struct Counts {
    n: usize,
    agree: usize,
    yes_a: usize,
    yes_b: usize,
}

fn counts(aligned: &Aligned<'_>, node: &str) -> Counts {
    let mut c = Counts { n: aligned.pairs.len(), agree: 0, yes_a: 0, yes_b: 0 };
    for (x, y) in &aligned.pairs {
        let (in_a, in_b) = (x.contains(node), y.contains(node));
        c.agree += usize::from(in_a == in_b);
        c.yes_a += usize::from(in_a);
        c.yes_b += usize::from(in_b);
    }
    c
}

/// Per node, the fraction of images on which both corpora agree about presence.
///
/// Corpora are aligned by `image_ref`. When `node_set` is `None`, every node
/// assigned in either corpus is scored. Annotations should be normalized first.
pub fn percent_agreement(
    a: &[Annotation],
    b: &[Annotation],
    node_set: Option<&[String]>,
) -> Result<BTreeMap<String, f64>, AgreementError> {
    let aligned = align(a, b)?;
    Ok(node_universe(&aligned, node_set)
        .into_iter()
        .map(|node| {
            let c = counts(&aligned, node);
            let po = if c.n == 0 { 1.0 } else { c.agree as f64 / c.n as f64 };
            (node.to_string(), po)
        })
        .collect())
}

/// Cohen's kappa on binary presence, per node, plus the macro mean.
///
/// `pe = pa * pb + (1 - pa) * (1 - pb)` from the marginal presence rates. Nodes
/// where `pe = 1` (both annotators unanimous in the same direction) have no
/// defined kappa and are left out.
pub fn cohen_kappa(
    a: &[Annotation],
    b: &[Annotation],
    node_set: Option<&[String]>,
) -> Result<AgreementReport, AgreementError> {
    let aligned = align(a, b)?;
    let mut per_node = BTreeMap::new();
    for node in node_universe(&aligned, node_set) {
        let c = counts(&aligned, node);
        let unanimous = (c.yes_a == 0 && c.yes_b == 0) || (c.yes_a == c.n && c.yes_b == c.n);
        if c.n == 0 || unanimous {
            continue;
        }
        let n = c.n as f64;
        let po = c.agree as f64 / n;
        let (pa, pb) = (c.yes_a as f64 / n, c.yes_b as f64 / n);
        let pe = pa * pb + (1.0 - pa) * (1.0 - pb);
        let kappa = ((po - pe) / (1.0 - pe)).clamp(-1.0, 1.0);
        per_node.insert(node.to_string(), NodeAgreement { observed_po: po, chance_pe: pe, kappa });
    }
    let macro_kappa = if per_node.is_empty() {
        None
    } else {
        Some(per_node.values().map(|v| v.kappa).sum::<f64>() / per_node.len() as f64)
    };
    Ok(AgreementReport { per_node, macro_kappa, n_items: aligned.pairs.len() })
}

impl AgreementReport {
    /// Compact JSON with sorted keys.
    pub fn to_json(&self) -> String {
        crate::report::to_sorted_json(self)
    }

    /// Aligned plain-text table, one node per row.
    pub fn to_table(&self) -> String {
        let width = self.per_node.keys().map(|k| k.chars().count()).max().unwrap_or(0).max("node".len());
        let mut out = String::new();
        let _ = writeln!(out, "{:<width$}  {:>8}  {:>8}  {:>8}", "node", "po", "pe", "kappa");
        for (node, v) in &self.per_node {
            let _ = writeln!(out, "{:<width$}  {:>8.4}  {:>8.4}  {:>8.4}", node, v.observed_po, v.chance_pe, v.kappa);
        }
        let macro_text = self.macro_kappa.map_or_else(|| "undefined".to_string(), |k| format!("{k:.4}"));
        let _ = writeln!(out, "items: {}  nodes: {}  macro kappa: {}", self.n_items, self.per_node.len(), macro_text);
        out
    }
}
