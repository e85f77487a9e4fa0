//! Consistency repair: pick exactly one relation per pair, maximizing the
//! summed confidence, subject to uniqueness, converse symmetry and
//! transitivity.
//!
//! The binary program (one indicator per pair and relation) is solved by
//! branch-and-bound over per-pair relation domains. Uniqueness is implicit in
//! the encoding (a pair's value is a single relation), symmetry and
//! transitivity are enforced by domain propagation.

mod greedy;
mod search;

use std::collections::HashMap;
use std::time::{Duration, Instant};

use indexmap::IndexMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::algebra::{Relation, RelationSet};
use crate::consistency::{
    find_transitive_triples, transitivity_score, uniqueness_score, ConsistencyReport,
    TransitiveTriple, TripleMining, TripleSemantics,
};
use crate::corpus::EventPair;
use crate::predictions::{Prediction, PredictionSet, Provenance};
use crate::scalar::Score;

pub use greedy::greedy_fallback;
pub use search::solve_exact;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RepairError {
    #[error("repaired assignment violates {constraint}: {detail}")]
    Violation {
        constraint: &'static str,
        detail: String,
    },
}

/// Confidence given to a relation depending on whether it was predicted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConfidenceScheme<S> {
    pub predicted: S,
    pub unpredicted: S,
}

impl<S: Score> Default for ConfidenceScheme<S> {
    fn default() -> Self {
        ConfidenceScheme {
            predicted: S::one(),
            unpredicted: S::from_ratio(1, 5),
        }
    }
}

/// A transitivity constraint over three pairs, as `(pair index, flipped)`.
pub type TripleRef = [(usize, bool); 3];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintCounts {
    pub uniqueness: usize,
    pub symmetry: usize,
    pub transitivity: usize,
}

/// The binary assignment problem over a fixed pair list.
#[derive(Debug, Clone, PartialEq)]
pub struct RepairProblem<S = f64> {
    pairs: Vec<EventPair>,
    predicted: Vec<RelationSet>,
    scores: Vec<[S; 5]>,
    /// `(p, q)` with `q` the stored reverse of `p`, `p < q`.
    symmetry: Vec<(usize, usize)>,
    triples: Vec<TripleRef>,
}

impl<S: Score> RepairProblem<S> {
    /// Builds the problem for `pairs`; pairs absent from `preds` count as
    /// having no predicted relation.
    pub fn build(
        pairs: &[EventPair],
        preds: &PredictionSet,
        scheme: ConfidenceScheme<S>,
        mining: TripleMining,
    ) -> Self {
        let predicted: Vec<RelationSet> = pairs
            .iter()
            .map(|p| preds.relations(p).unwrap_or_default())
            .collect();
        Self::from_parts(pairs.to_vec(), predicted, scheme, mining)
    }

    pub fn from_parts(
        pairs: Vec<EventPair>,
        predicted: Vec<RelationSet>,
        scheme: ConfidenceScheme<S>,
        mining: TripleMining,
    ) -> Self {
        assert_eq!(pairs.len(), predicted.len());
        let index: HashMap<&EventPair, usize> =
            pairs.iter().enumerate().map(|(i, p)| (p, i)).collect();
        assert_eq!(index.len(), pairs.len(), "pairs must be deduplicated");

        let scores = predicted
            .iter()
            .map(|set| {
                Relation::ALL.map(|r| {
                    if set.contains(r) {
                        scheme.predicted
                    } else {
                        scheme.unpredicted
                    }
                })
            })
            .collect();

        let mut symmetry = Vec::new();
        for (i, p) in pairs.iter().enumerate() {
            if let Some(&j) = index.get(&p.reversed()) {
                if i < j {
                    symmetry.push((i, j));
                }
            }
        }

        let triples = find_transitive_triples(&pairs, mining)
            .iter()
            .map(|t| t.legs.each_ref().map(|leg| (index[&leg.pair], leg.flipped)))
            .collect();

        RepairProblem {
            pairs,
            predicted,
            scores,
            symmetry,
            triples,
        }
    }

    pub fn pairs(&self) -> &[EventPair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn predicted(&self, pair: usize) -> RelationSet {
        self.predicted[pair]
    }

    pub fn score(&self, pair: usize, r: Relation) -> S {
        self.scores[pair][r.index()]
    }

    pub fn symmetry(&self) -> &[(usize, usize)] {
        &self.symmetry
    }

    pub fn triples(&self) -> &[TripleRef] {
        &self.triples
    }

    /// Uniqueness: one per pair. Symmetry: one equality per relation and
    /// co-present reverse pair. Transitivity: one inequality per triple and
    /// relation combination of its first two legs.
    pub fn constraint_counts(&self) -> ConstraintCounts {
        ConstraintCounts {
            uniqueness: self.pairs.len(),
            symmetry: self.symmetry.len() * Relation::ALL.len(),
            transitivity: self.triples.len() * Relation::ALL.len() * Relation::ALL.len(),
        }
    }

    /// Objective of a full assignment, summed in pair order.
    pub fn objective(&self, assignment: &[Relation]) -> S {
        assignment
            .iter()
            .enumerate()
            .map(|(i, r)| self.score(i, *r))
            .sum()
    }

    /// Checks every constraint of the linear program directly on indicator
    /// values, returning the first violated family.
    pub fn check(&self, assignment: &[Relation]) -> Result<(), RepairError> {
        if assignment.len() != self.pairs.len() {
            return Err(RepairError::Violation {
                constraint: "uniqueness",
                detail: format!(
                    "{} of {} pairs assigned",
                    assignment.len(),
                    self.pairs.len()
                ),
            });
        }
        let indicator = |p: usize, r: Relation| i32::from(assignment[p] == r);
        for &(p, q) in &self.symmetry {
            for r in Relation::ALL {
                if indicator(p, r) != indicator(q, r.reverse()) {
                    return Err(RepairError::Violation {
                        constraint: "symmetry",
                        detail: format!("{} vs {}", self.pairs[p], self.pairs[q]),
                    });
                }
            }
        }
        for t in &self.triples {
            let oriented = |(p, flipped): (usize, bool), r: Relation| {
                indicator(p, if flipped { r.reverse() } else { r })
            };
            for r1 in Relation::ALL {
                for r2 in Relation::ALL {
                    let sum3: i32 = crate::algebra::transitive_set(r1, r2)
                        .iter()
                        .map(|r3| oriented(t[2], r3))
                        .sum();
                    if oriented(t[0], r1) + oriented(t[1], r2) - sum3 > 1 {
                        return Err(RepairError::Violation {
                            constraint: "transitivity",
                            detail: format!(
                                "{}, {}, {}",
                                self.pairs[t[0].0], self.pairs[t[1].0], self.pairs[t[2].0]
                            ),
                        });
                    }
                }
            }
        }
        Ok(())
    }

    fn subproblem(&self, members: &[usize]) -> RepairProblem<S> {
        let local: HashMap<usize, usize> =
            members.iter().enumerate().map(|(l, &g)| (g, l)).collect();
        RepairProblem {
            pairs: members.iter().map(|&g| self.pairs[g].clone()).collect(),
            predicted: members.iter().map(|&g| self.predicted[g]).collect(),
            scores: members.iter().map(|&g| self.scores[g]).collect(),
            symmetry: self
                .symmetry
                .iter()
                .filter_map(|&(p, q)| Some((*local.get(&p)?, *local.get(&q)?)))
                .collect(),
            triples: self
                .triples
                .iter()
                .filter(|t| local.contains_key(&t[0].0))
                .map(|t| t.map(|(p, f)| (local[&p], f)))
                .collect(),
        }
    }
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Splits the problem into connected components of the "shares a
/// constraint" graph. Components keep the original relative pair order and
/// are ordered by their first pair.
pub fn decompose<S: Score>(problem: &RepairProblem<S>) -> Vec<RepairProblem<S>> {
    let n = problem.len();
    let mut parent: Vec<usize> = (0..n).collect();
    let mut union = |a: usize, b: usize| {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra.max(rb)] = ra.min(rb);
        }
    };
    for &(p, q) in &problem.symmetry {
        union(p, q);
    }
    for t in &problem.triples {
        union(t[0].0, t[1].0);
        union(t[0].0, t[2].0);
    }
    let mut groups: IndexMap<usize, Vec<usize>> = IndexMap::new();
    for i in 0..n {
        let root = find(&mut parent, i);
        groups.entry(root).or_default().push(i);
    }
    groups
        .values()
        .map(|members| problem.subproblem(members))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SolveStatus {
    ProvenOptimal,
    FeasibleFallback,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepairSolution<S = f64> {
    /// One relation per pair, in problem order.
    pub assignment: Vec<Relation>,
    pub objective: S,
    pub status: SolveStatus,
    pub nodes: u64,
}

/// Search limits for [`solve_exact`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Budget {
    pub time_limit: Duration,
    pub node_limit: u64,
}

impl Default for Budget {
    fn default() -> Self {
        Budget {
            time_limit: Duration::from_secs(10),
            node_limit: u64::MAX,
        }
    }
}

impl Budget {
    pub fn nodes(node_limit: u64) -> Self {
        Budget {
            time_limit: Duration::MAX,
            node_limit,
        }
    }
}

/// Re-scores an assignment with the consistency module and checks converse
/// symmetry; anything short of full consistency is an error.
pub fn verify_consistency(
    pairs: &[EventPair],
    assignment: &[Relation],
    mining: TripleMining,
) -> Result<ConsistencyReport, RepairError> {
    if assignment.len() != pairs.len() {
        return Err(RepairError::Violation {
            constraint: "uniqueness",
            detail: format!("{} of {} pairs assigned", assignment.len(), pairs.len()),
        });
    }
    let preds: PredictionSet = pairs
        .iter()
        .zip(assignment)
        .map(|(p, r)| {
            (
                p.clone(),
                Prediction::new(RelationSet::single(*r), Provenance::Repaired),
            )
        })
        .collect();
    if preds.len() != pairs.len() {
        return Err(RepairError::Violation {
            constraint: "uniqueness",
            detail: "duplicate pairs".into(),
        });
    }
    let triples: Vec<TransitiveTriple> = find_transitive_triples(pairs, mining);
    verify_predictions(&preds, &triples)
}

fn verify_predictions(
    preds: &PredictionSet,
    triples: &[TransitiveTriple],
) -> Result<ConsistencyReport, RepairError> {
    let report = ConsistencyReport::compute("repaired", preds, triples, TripleSemantics::Strict)
        .map_err(|e| RepairError::Violation {
            constraint: "uniqueness",
            detail: e.to_string(),
        })?;
    let u = uniqueness_score(preds).expect("non-empty");
    if u.n_single != preds.len() {
        return Err(RepairError::Violation {
            constraint: "uniqueness",
            detail: format!("c_U = {:.2}", report.c_u),
        });
    }
    let t = transitivity_score(preds, triples, TripleSemantics::Strict);
    if t.n_consistent != t.n_triples_total {
        return Err(RepairError::Violation {
            constraint: "transitivity",
            detail: format!(
                "{} of {} triples consistent",
                t.n_consistent, t.n_triples_total
            ),
        });
    }
    for (pair, p) in preds.iter() {
        if let Some(q) = preds.relations(&pair.reversed()) {
            if q != p.relations.reverse() {
                return Err(RepairError::Violation {
                    constraint: "symmetry",
                    detail: format!("{pair}: {:?} vs reverse {:?}", p.relations, q),
                });
            }
        }
    }
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct RepairOptions {
    pub budget: Budget,
    pub mining: TripleMining,
    /// Solve components on the rayon pool.
    pub parallel: bool,
}

impl Default for RepairOptions {
    fn default() -> Self {
        RepairOptions {
            budget: Budget::default(),
            mining: TripleMining::Directed,
            parallel: true,
        }
    }
}

/// Sidecar summary of a repair run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepairReport {
    pub objective: f64,
    pub components: usize,
    pub largest_component: usize,
    pub fallback_count: usize,
    pub changed_pairs: usize,
    pub nodes: u64,
    pub wall_time: f64,
}

pub struct RepairOutcome<S = f64> {
    pub predictions: PredictionSet,
    pub objective: S,
    pub report: RepairReport,
    pub consistency: ConsistencyReport,
}

/// Repairs every pair in `preds` and verifies the result.
pub fn repair<S: Score>(
    preds: &PredictionSet,
    scheme: ConfidenceScheme<S>,
    opts: &RepairOptions,
) -> Result<RepairOutcome<S>, RepairError> {
    let start = Instant::now();
    let pairs: Vec<EventPair> = preds.pairs().cloned().collect();
    let problem = RepairProblem::build(&pairs, preds, scheme, opts.mining);
    let components = decompose(&problem);
    let solve = |c: &RepairProblem<S>| solve_exact(c, opts.budget);
    let solutions: Vec<RepairSolution<S>> = if opts.parallel {
        components.par_iter().map(solve).collect()
    } else {
        components.iter().map(solve).collect()
    };

    let mut chosen: HashMap<&EventPair, Relation> = HashMap::with_capacity(pairs.len());
    for (c, s) in components.iter().zip(&solutions) {
        for (p, r) in c.pairs().iter().zip(&s.assignment) {
            chosen.insert(p, *r);
        }
    }
    let assignment: Vec<Relation> = pairs.iter().map(|p| chosen[p]).collect();
    problem.check(&assignment)?;
    let objective = problem.objective(&assignment);

    let repaired: PredictionSet = pairs
        .iter()
        .zip(&assignment)
        .map(|(p, r)| {
            (
                p.clone(),
                Prediction::new(RelationSet::single(*r), Provenance::Repaired),
            )
        })
        .collect();
    let triples = find_transitive_triples(&pairs, opts.mining);
    let consistency = verify_predictions(&repaired, &triples)?;

    let changed_pairs = pairs
        .iter()
        .zip(&assignment)
        .filter(|(p, r)| preds.relations(p) != Some(RelationSet::single(**r)))
        .count();
    let report = RepairReport {
        objective: objective.to_f64_lossy(),
        components: components.len(),
        largest_component: components.iter().map(|c| c.len()).max().unwrap_or(0),
        fallback_count: solutions
            .iter()
            .filter(|s| s.status == SolveStatus::FeasibleFallback)
            .count(),
        changed_pairs,
        nodes: solutions.iter().map(|s| s.nodes).sum(),
        wall_time: start.elapsed().as_secs_f64(),
    };
    Ok(RepairOutcome {
        predictions: repaired,
        objective,
        report,
        consistency,
    })
}
