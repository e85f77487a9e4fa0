//! Uniqueness and transitivity consistency of a prediction set.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::algebra::{transitive_set, RelationSet};
use crate::corpus::EventPair;
use crate::predictions::PredictionSet;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConsistencyError {
    #[error("uniqueness is undefined over an empty pair set")]
    NoPairs,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Uniqueness {
    /// Percentage of pairs with exactly one predicted relation.
    pub c_u: f64,
    pub n_zero: usize,
    pub n_single: usize,
    pub n_multi: usize,
}

pub fn uniqueness_score(preds: &PredictionSet) -> Result<Uniqueness, ConsistencyError> {
    if preds.is_empty() {
        return Err(ConsistencyError::NoPairs);
    }
    let (mut n_zero, mut n_single, mut n_multi) = (0, 0, 0);
    for (_, p) in preds.iter() {
        match p.relations.len() {
            0 => n_zero += 1,
            1 => n_single += 1,
            _ => n_multi += 1,
        }
    }
    Ok(Uniqueness {
        c_u: 100.0 * n_single as f64 / preds.len() as f64,
        n_zero,
        n_single,
        n_multi,
    })
}

/// One side of a triple. A flipped leg stores `(b, a)` while the triple
/// needs `(a, b)`, so its relations are read through the converse.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Leg {
    pub pair: EventPair,
    pub flipped: bool,
}

impl Leg {
    fn direct(pair: &EventPair) -> Self {
        Leg {
            pair: pair.clone(),
            flipped: false,
        }
    }

    /// Relations of the leg in triple orientation.
    pub fn oriented(&self, stored: RelationSet) -> RelationSet {
        if self.flipped {
            stored.reverse()
        } else {
            stored
        }
    }
}

/// `((e_i, e_j), (e_j, e_k), (e_i, e_k))` within one document.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TransitiveTriple {
    pub legs: [Leg; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TripleMining {
    /// Only the literal `(i,j), (j,k), (i,k)` pattern over stored directions.
    #[default]
    Directed,
    /// Also match legs stored in the opposite direction.
    SymmetryAware,
}

/// All transitive triples over `pairs`, in a deterministic order driven by
/// the input order of the first and second legs.
pub fn find_transitive_triples<'a, I>(pairs: I, mining: TripleMining) -> Vec<TransitiveTriple>
where
    I: IntoIterator<Item = &'a EventPair>,
{
    let pairs: Vec<&EventPair> = pairs.into_iter().collect();
    // (doc, from, to) -> stored pair and whether it is stored reversed
    let mut edges: HashMap<(&str, &str, &str), (usize, bool)> = HashMap::new();
    let mut outgoing: HashMap<(&str, &str), Vec<(usize, bool)>> = HashMap::new();
    let mut push = |from: &'a str, to: &'a str, doc: &'a str, idx: usize, flipped: bool| {
        if edges.insert((doc, from, to), (idx, flipped)).is_none() {
            outgoing
                .entry((doc, from))
                .or_default()
                .push((idx, flipped));
        }
    };
    for (idx, p) in pairs.iter().enumerate() {
        push(&p.source_id, &p.target_id, &p.doc_id, idx, false);
    }
    if mining == TripleMining::SymmetryAware {
        for (idx, p) in pairs.iter().enumerate() {
            push(&p.target_id, &p.source_id, &p.doc_id, idx, true);
        }
    }

    let ends = |idx: usize, flipped: bool| {
        let p = pairs[idx];
        if flipped {
            (p.target_id.as_str(), p.source_id.as_str())
        } else {
            (p.source_id.as_str(), p.target_id.as_str())
        }
    };
    let leg = |idx: usize, flipped: bool| Leg {
        pair: pairs[idx].clone(),
        flipped,
    };

    let mut first_legs: Vec<(usize, bool)> = (0..pairs.len()).map(|i| (i, false)).collect();
    if mining == TripleMining::SymmetryAware {
        first_legs.extend((0..pairs.len()).map(|i| (i, true)));
    }

    let mut out = Vec::new();
    for (i1, f1) in first_legs {
        let doc = pairs[i1].doc_id.as_str();
        let (ei, ej) = ends(i1, f1);
        let Some(next) = outgoing.get(&(doc, ej)) else {
            continue;
        };
        for &(i2, f2) in next {
            let (_, ek) = ends(i2, f2);
            if ek == ei || i2 == i1 {
                continue;
            }
            // a triple and its mirror image impose the same constraint
            if mining == TripleMining::SymmetryAware && ek < ei {
                continue;
            }
            if let Some(&(i3, f3)) = edges.get(&(doc, ei, ek)) {
                if mining == TripleMining::Directed {
                    out.push(TransitiveTriple {
                        legs: [
                            Leg::direct(pairs[i1]),
                            Leg::direct(pairs[i2]),
                            Leg::direct(pairs[i3]),
                        ],
                    });
                } else {
                    out.push(TransitiveTriple {
                        legs: [leg(i1, f1), leg(i2, f2), leg(i3, f3)],
                    });
                }
            }
        }
    }
    out
}

/// How a triple with multi-relation legs is judged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TripleSemantics {
    /// Consistent if some choice of one relation per leg satisfies the table.
    #[default]
    Existential,
    /// Consistent only if every choice does.
    Strict,
}

/// Whether leg relation sets (already in triple orientation) are consistent.
pub fn triple_consistent(
    r1: RelationSet,
    r2: RelationSet,
    r3: RelationSet,
    semantics: TripleSemantics,
) -> bool {
    let mut combos = r1
        .iter()
        .flat_map(|a| r2.iter().map(move |b| (a, b)))
        .flat_map(|(a, b)| r3.iter().map(move |c| transitive_set(a, b).contains(c)));
    match semantics {
        TripleSemantics::Existential => combos.any(|ok| ok),
        TripleSemantics::Strict => combos.all(|ok| ok),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transitivity {
    /// Percentage of evaluated triples that are consistent; absent when no
    /// triple could be evaluated.
    pub c_t: Option<f64>,
    pub n_triples_total: usize,
    pub n_triples_evaluated: usize,
    pub n_consistent: usize,
}

/// Triples with a leg that has no predicted relation are excluded from the
/// denominator.
pub fn transitivity_score(
    preds: &PredictionSet,
    triples: &[TransitiveTriple],
    semantics: TripleSemantics,
) -> Transitivity {
    let mut evaluated = 0;
    let mut consistent = 0;
    for t in triples {
        let sets: Vec<RelationSet> = t
            .legs
            .iter()
            .map(|leg| leg.oriented(preds.relations(&leg.pair).unwrap_or_default()))
            .collect();
        if sets.iter().any(|s| s.is_empty()) {
            continue;
        }
        evaluated += 1;
        if triple_consistent(sets[0], sets[1], sets[2], semantics) {
            consistent += 1;
        }
    }
    Transitivity {
        c_t: (evaluated > 0).then(|| 100.0 * consistent as f64 / evaluated as f64),
        n_triples_total: triples.len(),
        n_triples_evaluated: evaluated,
        n_consistent: consistent,
    }
}

/// One row of the consistency table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub method: String,
    pub c_u: f64,
    pub n_zero: usize,
    pub n_multi: usize,
    pub c_t: Option<f64>,
    pub n_triples_total: usize,
    pub n_triples_evaluated: usize,
    pub semantics: TripleSemantics,
}

impl ConsistencyReport {
    pub fn compute(
        method: &str,
        preds: &PredictionSet,
        triples: &[TransitiveTriple],
        semantics: TripleSemantics,
    ) -> Result<Self, ConsistencyError> {
        let u = uniqueness_score(preds)?;
        let t = transitivity_score(preds, triples, semantics);
        Ok(ConsistencyReport {
            method: method.to_string(),
            c_u: u.c_u,
            n_zero: u.n_zero,
            n_multi: u.n_multi,
            c_t: t.c_t,
            n_triples_total: t.n_triples_total,
            n_triples_evaluated: t.n_triples_evaluated,
            semantics,
        })
    }
}

/// Renders rows as a plain-text table: method, c_U, #0, #>1, c_T.
pub fn render_table(rows: &[ConsistencyReport]) -> String {
    let width = rows
        .iter()
        .map(|r| r.method.len())
        .max()
        .unwrap_or(6)
        .max(6);
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<width$}  {:>8}  {:>8}  {:>8}  {:>8}",
        "Method", "c_U (%)", "# 0", "# >1", "c_T (%)"
    );
    for r in rows {
        let c_t = r.c_t.map_or("-".to_string(), |v| format!("{v:.2}"));
        let _ = writeln!(
            s,
            "{:<width$}  {:>8.2}  {:>8}  {:>8}  {:>8}",
            r.method, r.c_u, r.n_zero, r.n_multi, c_t
        );
    }
    s
}
