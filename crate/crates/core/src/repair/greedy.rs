use crate::algebra::{Relation, RelationSet};
use crate::scalar::Score;

use super::search::{Domains, Propagator};
use super::{RepairProblem, RepairSolution, SolveStatus};

/// Backtracking steps before giving up on the greedy order.
const STEP_LIMIT: usize = 100_000;

/// Fast feasible assignment: pairs with the highest available confidence are
/// fixed first, each to its best relation that survives propagation.
///
/// Dead ends backtrack chronologically for a bounded number of steps. If that
/// runs out, every pair is set to SIMULTANEOUS, which satisfies all
/// constraints (its composition with itself is itself and it is its own
/// converse).
pub fn greedy_fallback<S: Score>(problem: &RepairProblem<S>) -> RepairSolution<S> {
    let prop = Propagator::new(problem);
    let n = problem.len();

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let sa = prop.best_in(a, RelationSet::FULL).1;
        let sb = prop.best_in(b, RelationSet::FULL).1;
        sb.partial_cmp(&sa).unwrap_or(std::cmp::Ordering::Equal)
    });

    let candidates = |pair: usize, domain: RelationSet| -> Vec<Relation> {
        let mut rs: Vec<Relation> = domain.iter().collect();
        rs.sort_by(|a, b| {
            problem
                .score(pair, *b)
                .partial_cmp(&problem.score(pair, *a))
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        rs
    };

    let mut root = prop.full_domains();
    let mut assignment = None;
    if prop.propagate_all(&mut root) {
        // frames: (position in order, domains before choosing, remaining choices)
        let mut stack: Vec<(usize, Domains, Vec<Relation>)> = Vec::new();
        let mut domains = root;
        let mut pos = 0;
        let mut steps = 0;
        loop {
            while pos < n && domains[order[pos]].len() == 1 {
                pos += 1;
            }
            if pos == n {
                assignment = Some(
                    domains
                        .iter()
                        .map(|d| d.only().expect("singleton"))
                        .collect(),
                );
                break;
            }
            let pair = order[pos];
            stack.push((pos, domains.clone(), candidates(pair, domains[pair])));

            let mut advanced = false;
            while let Some((at, saved, choices)) = stack.last_mut() {
                steps += 1;
                if steps > STEP_LIMIT {
                    break;
                }
                if choices.is_empty() {
                    stack.pop();
                    continue;
                }
                let r = choices.remove(0);
                let mut next = saved.clone();
                let p = order[*at];
                next[p] = RelationSet::single(r);
                if prop.propagate(&mut next, [p]) {
                    pos = *at + 1;
                    domains = next;
                    advanced = true;
                    break;
                }
            }
            if !advanced {
                break;
            }
        }
    }

    let assignment: Vec<Relation> = assignment.unwrap_or_else(|| vec![Relation::Simultaneous; n]);
    RepairSolution {
        objective: problem.objective(&assignment),
        assignment,
        status: SolveStatus::FeasibleFallback,
        nodes: 0,
    }
}
