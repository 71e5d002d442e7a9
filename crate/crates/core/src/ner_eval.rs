//! Strict-span NER scoring: a prediction counts only when document, page,
//! start, end and kind all equal a gold mention.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotate::Mention;
use crate::corpus::Checksum;
use crate::ontology::EntityKind;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("prediction references document {0} which is not part of the gold corpus")]
    MixedDocuments(Checksum),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Counts {
    pub fn new(tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        Counts { tp, fp, fn_, precision, recall, f1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub chemical: Counts,
    pub role: Counts,
    pub overall: Counts,
}

impl Metrics {
    pub fn for_kind(&self, kind: EntityKind) -> &Counts {
        match kind {
            EntityKind::Chemical => &self.chemical,
            EntityKind::Role => &self.role,
        }
    }
}

impl fmt::Display for Metrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<10} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7}", "", "P", "R", "F1", "TP", "FP", "FN")?;
        for (name, c) in [("chem", &self.chemical), ("role", &self.role), ("overall", &self.overall)] {
            writeln!(
                f,
                "{:<10} {:>7.1} {:>7.1} {:>7.1} {:>7} {:>7} {:>7}",
                name,
                c.precision * 100.0,
                c.recall * 100.0,
                c.f1 * 100.0,
                c.tp,
                c.fp,
                c.fn_
            )?;
        }
        Ok(())
    }
}

type SpanKey<'a> = (&'a Checksum, u32, usize, usize, EntityKind);

fn key(m: &Mention) -> SpanKey<'_> {
    (&m.location.doc_checksum, m.location.page, m.start(), m.end, m.kind)
}

/// Strict-span scoring where the gold corpus is the set of documents gold
/// mentions refer to.
pub fn score_strict(gold: &[Mention], pred: &[Mention]) -> Result<Metrics, EvalError> {
    let docs: BTreeSet<&Checksum> = gold.iter().map(|m| &m.location.doc_checksum).collect();
    score_with_docs(&docs, gold, pred)
}

/// Strict-span scoring over an explicit gold document set. Identical spans
/// are collapsed on both sides, so matching is one-to-one.
pub fn score_strict_in(
    gold_docs: &BTreeSet<Checksum>,
    gold: &[Mention],
    pred: &[Mention],
) -> Result<Metrics, EvalError> {
    let docs: BTreeSet<&Checksum> = gold_docs.iter().collect();
    score_with_docs(&docs, gold, pred)
}

fn score_with_docs(docs: &BTreeSet<&Checksum>, gold: &[Mention], pred: &[Mention]) -> Result<Metrics, EvalError> {
    if let Some(m) = pred.iter().find(|m| !docs.contains(&m.location.doc_checksum)) {
        return Err(EvalError::MixedDocuments(m.location.doc_checksum.clone()));
    }
    let gold: BTreeSet<SpanKey> = gold.iter().map(key).collect();
    let pred: BTreeSet<SpanKey> = pred.iter().map(key).collect();

    // [chemical, role] x [tp, fp, fn]
    let mut counts = [[0usize; 3]; 2];
    let slot = |k: EntityKind| match k {
        EntityKind::Chemical => 0,
        EntityKind::Role => 1,
    };
    for p in &pred {
        let hit = if gold.contains(p) { 0 } else { 1 };
        counts[slot(p.4)][hit] += 1;
    }
    for g in gold.iter().filter(|g| !pred.contains(*g)) {
        counts[slot(g.4)][2] += 1;
    }
    let [c, r] = counts;
    Ok(Metrics {
        chemical: Counts::new(c[0], c[1], c[2]),
        role: Counts::new(r[0], r[1], r[2]),
        overall: Counts::new(c[0] + r[0], c[1] + r[1], c[2] + r[2]),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ErrorTable {
    pub k: usize,
    pub false_positives: Vec<(String, usize)>,
    pub false_negatives: Vec<(String, usize)>,
}

impl fmt::Display for ErrorTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<30} {:>6}   {:<30} {:>6}", "false positive", "count", "false negative", "count")?;
        let rows = self.false_positives.len().max(self.false_negatives.len());
        for i in 0..rows {
            let cell = |v: &Vec<(String, usize)>| v.get(i).map(|(s, c)| (s.clone(), c.to_string())).unwrap_or_default();
            let (fp, fpc) = cell(&self.false_positives);
            let (fng, fnc) = cell(&self.false_negatives);
            writeln!(f, "{fp:<30} {fpc:>6}   {fng:<30} {fnc:>6}")?;
        }
        Ok(())
    }
}

/// Most frequent false-positive and false-negative surfaces, `k` of each.
pub fn error_table(gold: &[Mention], pred: &[Mention], k: usize) -> ErrorTable {
    let gold_keys: BTreeSet<SpanKey> = gold.iter().map(key).collect();
    let pred_keys: BTreeSet<SpanKey> = pred.iter().map(key).collect();
    let tally = |ms: &[Mention], other: &BTreeSet<SpanKey>| {
        let mut seen = BTreeSet::new();
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for m in ms {
            let kk = key(m);
            if !other.contains(&kk) && seen.insert(kk) {
                *counts.entry(m.surface.as_str()).or_default() += 1;
            }
        }
        let mut rows: Vec<(String, usize)> = counts.into_iter().map(|(s, c)| (s.to_string(), c)).collect();
        rows.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        rows.truncate(k);
        rows
    };
    ErrorTable { k, false_positives: tally(pred, &gold_keys), false_negatives: tally(gold, &pred_keys) }
}
