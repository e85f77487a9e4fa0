//! Triple-match scoring against coarse gold links, the mention-order
//! fallback, and distance-binned analysis.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::algebra::{CoarseRelation, RelationSet};
use crate::corpus::{Document, EventPair, UnknownEventError};
use crate::pairing::w_order;
use crate::predictions::{Prediction, PredictionSet, Provenance};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EvalError {
    #[error("no gold pairs in evaluation scope")]
    NoGold,
    #[error("{gold} gold pairs cannot fill {bins} bins; use fewer bins")]
    TooFewPairs { gold: usize, bins: usize },
    #[error("unknown document {0:?}")]
    UnknownDocument(String),
    #[error(transparent)]
    UnknownEvent(#[from] UnknownEventError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalScope {
    /// Every gold pair counts toward recall.
    #[default]
    Gold,
    /// Only gold pairs that were also predicted (candidate pairs) count.
    CandidateIntersectGold,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Predicted (pair, relation) instances on in-scope pairs.
    pub predicted: usize,
    /// Gold pairs in scope.
    pub gold: usize,
    /// Predicted instances matching gold.
    pub correct: usize,
    /// Gold pairs matched by at least one correct instance.
    pub gold_matched: usize,
}

impl Metrics {
    fn from_counts(predicted: usize, gold: usize, correct: usize, gold_matched: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(correct, predicted);
        let recall = ratio(gold_matched, gold);
        let f1 = if precision == 0.0 || recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Metrics {
            precision,
            recall,
            f1,
            predicted,
            gold,
            correct,
            gold_matched,
        }
    }
}

/// Gold lookup keyed by stored direction.
struct GoldIndex<'a> {
    links: HashMap<(&'a str, &'a str, &'a str), CoarseRelation>,
}

impl<'a> GoldIndex<'a> {
    fn new(gold: &'a [(EventPair, CoarseRelation)]) -> Self {
        GoldIndex {
            links: gold
                .iter()
                .map(|(p, r)| {
                    (
                        (
                            p.doc_id.as_str(),
                            p.source_id.as_str(),
                            p.target_id.as_str(),
                        ),
                        *r,
                    )
                })
                .collect(),
        }
    }

    /// The gold pair a prediction speaks about, and the gold label expressed
    /// in the prediction's direction.
    fn resolve(
        &self,
        pair: &'a EventPair,
    ) -> Option<((&'a str, &'a str, &'a str), CoarseRelation)> {
        let fwd = (
            pair.doc_id.as_str(),
            pair.source_id.as_str(),
            pair.target_id.as_str(),
        );
        if let Some(&g) = self.links.get(&fwd) {
            return Some((fwd, g));
        }
        let rev = (
            pair.doc_id.as_str(),
            pair.target_id.as_str(),
            pair.source_id.as_str(),
        );
        self.links.get(&rev).map(|&g| (rev, g.reverse()))
    }
}

pub fn gold_links(docs: &[Document]) -> Vec<(EventPair, CoarseRelation)> {
    docs.iter().flat_map(|d| d.gold_pairs()).collect()
}

/// Scores `preds` against an explicit gold list.
pub fn evaluate_against(
    preds: &PredictionSet,
    gold: &[(EventPair, CoarseRelation)],
    scope: EvalScope,
) -> Result<Metrics, EvalError> {
    let index = GoldIndex::new(gold);
    let mut predicted = 0;
    let mut correct = 0;
    let mut touched: HashMap<(&str, &str, &str), bool> = HashMap::new();
    for (pair, p) in preds.iter() {
        let Some((key, label)) = index.resolve(pair) else {
            continue;
        };
        let hit = touched.entry(key).or_insert(false);
        for r in p.relations.iter() {
            predicted += 1;
            if r.to_coarse() == label {
                correct += 1;
                *hit = true;
            }
        }
    }
    let gold_in_scope = match scope {
        EvalScope::Gold => gold.len(),
        EvalScope::CandidateIntersectGold => touched.len(),
    };
    if gold_in_scope == 0 {
        return Err(EvalError::NoGold);
    }
    let gold_matched = touched.values().filter(|h| **h).count();
    Ok(Metrics::from_counts(
        predicted,
        gold_in_scope,
        correct,
        gold_matched,
    ))
}

/// Triple-match precision/recall/F1 at coarse granularity.
///
/// Each predicted relation is one instance for precision; a gold pair is
/// recalled when any of its predicted relations is correct. Predictions on
/// the reversed pair are compared after reversing the coarse label.
pub fn evaluate(
    preds: &PredictionSet,
    docs: &[Document],
    scope: EvalScope,
) -> Result<Metrics, EvalError> {
    evaluate_against(preds, &gold_links(docs), scope)
}

fn doc_index(docs: &[Document]) -> HashMap<&str, &Document> {
    docs.iter().map(|d| (d.id.as_str(), d)).collect()
}

/// Mention-order predictions for every pair.
pub fn worder_predictions<'a, I>(pairs: I, docs: &[Document]) -> Result<PredictionSet, EvalError>
where
    I: IntoIterator<Item = &'a EventPair>,
{
    let index = doc_index(docs);
    pairs
        .into_iter()
        .map(|pair| {
            let doc = index
                .get(pair.doc_id.as_str())
                .ok_or_else(|| EvalError::UnknownDocument(pair.doc_id.clone()))?;
            let r = w_order(doc, pair)?;
            Ok((
                pair.clone(),
                Prediction::new(RelationSet::single(r), Provenance::WOrder),
            ))
        })
        .collect()
}

/// Replaces every empty relation set (no YES answer) with the mention-order
/// relation.
pub fn combine_with_worder(
    preds: &PredictionSet,
    docs: &[Document],
) -> Result<PredictionSet, EvalError> {
    let index = doc_index(docs);
    let mut out = preds.clone();
    for (pair, p) in out.iter_mut() {
        if !p.relations.is_empty() {
            continue;
        }
        let doc = index
            .get(pair.doc_id.as_str())
            .ok_or_else(|| EvalError::UnknownDocument(pair.doc_id.clone()))?;
        p.relations = RelationSet::single(w_order(doc, pair)?);
        p.provenance = Provenance::WOrder;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceBin {
    pub bin_low: usize,
    pub bin_high: usize,
    pub count: usize,
    pub metrics: Metrics,
}

/// Character distance between the starts of the two events.
pub fn pair_distance(doc: &Document, pair: &EventPair) -> Result<usize, UnknownEventError> {
    let start = |id: &str| {
        doc.event(id)
            .map(|e| e.char_start)
            .ok_or_else(|| UnknownEventError {
                doc_id: doc.id.clone(),
                event_id: id.to_string(),
            })
    };
    Ok(start(&pair.source_id)?.abs_diff(start(&pair.target_id)?))
}

/// Sorts gold pairs by distance and scores `n_bins` near-equal slices; the
/// first `len % n_bins` bins get one extra pair.
pub fn distance_bins(
    preds: &PredictionSet,
    docs: &[Document],
    n_bins: usize,
) -> Result<Vec<DistanceBin>, EvalError> {
    let gold = gold_links(docs);
    if n_bins == 0 || gold.len() < n_bins {
        return Err(EvalError::TooFewPairs {
            gold: gold.len(),
            bins: n_bins,
        });
    }
    let index = doc_index(docs);
    let mut with_distance = Vec::with_capacity(gold.len());
    for (pair, rel) in gold {
        let doc = index
            .get(pair.doc_id.as_str())
            .ok_or_else(|| EvalError::UnknownDocument(pair.doc_id.clone()))?;
        with_distance.push((pair_distance(doc, &pair)?, pair, rel));
    }
    with_distance.sort_by(|a, b| (a.0, &a.1).cmp(&(b.0, &b.1)));

    let base = with_distance.len() / n_bins;
    let extra = with_distance.len() % n_bins;
    let mut bins = Vec::with_capacity(n_bins);
    let mut rest = with_distance.as_slice();
    for i in 0..n_bins {
        let size = base + usize::from(i < extra);
        let (chunk, tail) = rest.split_at(size);
        rest = tail;
        let subset: Vec<(EventPair, CoarseRelation)> =
            chunk.iter().map(|(_, p, r)| (p.clone(), *r)).collect();
        bins.push(DistanceBin {
            bin_low: chunk.first().map_or(0, |c| c.0),
            bin_high: chunk.last().map_or(0, |c| c.0),
            count: chunk.len(),
            metrics: evaluate_against(preds, &subset, EvalScope::Gold)?,
        });
    }
    Ok(bins)
}

pub fn bins_to_csv(bins: &[DistanceBin]) -> String {
    let mut s = String::from("bin_low,bin_high,count,f1\n");
    for b in bins {
        let _ = writeln!(
            s,
            "{},{},{},{:.6}",
            b.bin_low, b.bin_high, b.count, b.metrics.f1
        );
    }
    s
}

/// One row of the evaluation table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub method: String,
    pub scope: EvalScope,
    pub metrics: Metrics,
}

pub fn metrics_to_csv(rows: &[MetricsRow]) -> String {
    let mut s = String::from("method,scope,precision,recall,f1,predicted,gold,correct\n");
    for r in rows {
        let scope = match r.scope {
            EvalScope::Gold => "gold",
            EvalScope::CandidateIntersectGold => "candidate",
        };
        let m = &r.metrics;
        let _ = writeln!(
            s,
            "{},{},{:.6},{:.6},{:.6},{},{},{}",
            r.method, scope, m.precision, m.recall, m.f1, m.predicted, m.gold, m.correct
        );
    }
    s
}

pub fn render_metrics_table(rows: &[MetricsRow]) -> String {
    let width = rows
        .iter()
        .map(|r| r.method.len())
        .max()
        .unwrap_or(6)
        .max(6);
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<width$}  {:<9}  {:>6}  {:>6}  {:>6}",
        "Method", "Scope", "P", "R", "F1"
    );
    for r in rows {
        let scope = match r.scope {
            EvalScope::Gold => "gold",
            EvalScope::CandidateIntersectGold => "candidate",
        };
        let m = &r.metrics;
        let _ = writeln!(
            s,
            "{:<width$}  {:<9}  {:>6.3}  {:>6.3}  {:>6.3}",
            r.method, scope, m.precision, m.recall, m.f1
        );
    }
    s
}
