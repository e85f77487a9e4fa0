use std::time::Instant;

use crate::algebra::{transitive_set, Relation, RelationSet};
use crate::scalar::Score;

use super::{greedy_fallback, Budget, RepairProblem, RepairSolution, SolveStatus};

/// Relation-set domains, one per pair.
pub(super) type Domains = Vec<RelationSet>;

#[derive(Clone, Copy)]
enum Watch {
    Triple(usize),
    Mirror(usize),
}

/// Generalized arc consistency over the symmetry and transitivity
/// constraints of a problem.
pub(super) struct Propagator<'a, S> {
    problem: &'a RepairProblem<S>,
    watches: Vec<Vec<Watch>>,
}

fn orient(set: RelationSet, flipped: bool) -> RelationSet {
    if flipped {
        set.reverse()
    } else {
        set
    }
}

impl<'a, S: Score> Propagator<'a, S> {
    pub(super) fn new(problem: &'a RepairProblem<S>) -> Self {
        let mut watches = vec![Vec::new(); problem.len()];
        for (i, &(p, q)) in problem.symmetry().iter().enumerate() {
            watches[p].push(Watch::Mirror(i));
            watches[q].push(Watch::Mirror(i));
        }
        for (i, t) in problem.triples().iter().enumerate() {
            for &(p, _) in t {
                watches[p].push(Watch::Triple(i));
            }
        }
        Propagator { problem, watches }
    }

    pub(super) fn full_domains(&self) -> Domains {
        vec![RelationSet::FULL; self.problem.len()]
    }

    /// Propagates from every constraint. `false` means a domain emptied.
    pub(super) fn propagate_all(&self, domains: &mut Domains) -> bool {
        self.propagate(domains, 0..self.problem.len())
    }

    /// Propagates after the domains of `changed` were narrowed.
    pub(super) fn propagate(
        &self,
        domains: &mut Domains,
        changed: impl IntoIterator<Item = usize>,
    ) -> bool {
        let mut queue: Vec<usize> = changed.into_iter().collect();
        while let Some(pair) = queue.pop() {
            for &w in &self.watches[pair] {
                let ok = match w {
                    Watch::Mirror(i) => self.revise_mirror(i, domains, &mut queue),
                    Watch::Triple(i) => self.revise_triple(i, domains, &mut queue),
                };
                if !ok {
                    return false;
                }
            }
        }
        true
    }

    fn narrow(domains: &mut Domains, pair: usize, to: RelationSet, queue: &mut Vec<usize>) -> bool {
        let next = domains[pair].intersection(to);
        if next != domains[pair] {
            domains[pair] = next;
            if next.is_empty() {
                return false;
            }
            queue.push(pair);
        }
        true
    }

    fn revise_mirror(&self, i: usize, domains: &mut Domains, queue: &mut Vec<usize>) -> bool {
        let (p, q) = self.problem.symmetry()[i];
        Self::narrow(domains, q, domains[p].reverse(), queue)
            && Self::narrow(domains, p, domains[q].reverse(), queue)
    }

    fn revise_triple(&self, i: usize, domains: &mut Domains, queue: &mut Vec<usize>) -> bool {
        let t = self.problem.triples()[i];
        let d = t.map(|(p, f)| orient(domains[p], f));
        let mut support = [RelationSet::EMPTY; 3];
        for r1 in d[0].iter() {
            for r2 in d[1].iter() {
                let third = transitive_set(r1, r2).intersection(d[2]);
                if !third.is_empty() {
                    support[0].insert(r1);
                    support[1].insert(r2);
                    support[2] = support[2].union(third);
                }
            }
        }
        t.iter()
            .zip(support)
            .all(|(&(p, f), s)| Self::narrow(domains, p, orient(s, f), queue))
    }

    /// Admissible upper bound: each pair's best score within its domain,
    /// minus the unavoidable loss of a greedy packing of pair-disjoint
    /// constraints whose best-scoring relations cannot hold together.
    pub(super) fn bound(&self, domains: &Domains) -> S {
        let best: Vec<(S, RelationSet)> = domains
            .iter()
            .enumerate()
            .map(|(p, d)| self.best_set(p, *d))
            .collect();
        let total: S = best.iter().map(|b| b.0).sum();
        let loss = |p: usize, r: Relation| best[p].0 - self.problem.score(p, r);

        let mut used = vec![false; domains.len()];
        let mut penalty = S::zero();
        for &(p, q) in self.problem.symmetry() {
            if used[p] || used[q] || !best[p].1.intersection(best[q].1.reverse()).is_empty() {
                continue;
            }
            let mut least: Option<S> = None;
            for r in domains[p]
                .iter()
                .filter(|r| domains[q].contains(r.reverse()))
            {
                let l = loss(p, r) + loss(q, r.reverse());
                if least.is_none_or(|m| l < m) {
                    least = Some(l);
                }
            }
            if let Some(l) = least {
                penalty = penalty + l;
                used[p] = true;
                used[q] = true;
            }
        }
        for t in self.problem.triples() {
            let [(p1, f1), (p2, f2), (p3, f3)] = *t;
            if used[p1] || used[p2] || used[p3] {
                continue;
            }
            let b = [best[p1].1, best[p2].1, best[p3].1];
            if Self::supported(orient(b[0], f1), orient(b[1], f2), orient(b[2], f3)) {
                continue;
            }
            let mut least: Option<S> = None;
            for r1 in domains[p1].iter() {
                let l1 = loss(p1, r1);
                let o1 = if f1 { r1.reverse() } else { r1 };
                for r2 in domains[p2].iter() {
                    let l12 = l1 + loss(p2, r2);
                    let o2 = if f2 { r2.reverse() } else { r2 };
                    let third = orient(transitive_set(o1, o2), f3).intersection(domains[p3]);
                    for r3 in third.iter() {
                        let l = l12 + loss(p3, r3);
                        if least.is_none_or(|m| l < m) {
                            least = Some(l);
                        }
                    }
                }
            }
            if let Some(l) = least {
                penalty = penalty + l;
                used[p1] = true;
                used[p2] = true;
                used[p3] = true;
            }
        }
        total - penalty
    }

    fn supported(d1: RelationSet, d2: RelationSet, d3: RelationSet) -> bool {
        d1.iter().any(|r1| {
            d2.iter()
                .any(|r2| !transitive_set(r1, r2).intersection(d3).is_empty())
        })
    }

    /// Top score within a domain and every relation attaining it.
    fn best_set(&self, pair: usize, domain: RelationSet) -> (S, RelationSet) {
        let (_, top) = self.best_in(pair, domain);
        let set = domain
            .iter()
            .filter(|r| !self.problem.score(pair, *r).definitely_lt(top))
            .collect();
        (top, set)
    }

    /// Highest-scoring relation in a domain (first in relation order on ties).
    pub(super) fn best_in(&self, pair: usize, domain: RelationSet) -> (Relation, S) {
        let mut best: Option<(Relation, S)> = None;
        for r in domain.iter() {
            let s = self.problem.score(pair, r);
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((r, s));
            }
        }
        best.expect("non-empty domain")
    }
}

struct Search<'a, S> {
    prop: Propagator<'a, S>,
    best_value: S,
    best: Vec<Relation>,
    /// Whether `best` was reached by the lexicographic search itself.
    best_from_search: bool,
    nodes: u64,
    budget: Budget,
    started: Instant,
    aborted: bool,
}

impl<S: Score> Search<'_, S> {
    fn out_of_budget(&mut self) -> bool {
        if self.aborted {
            return true;
        }
        if self.nodes >= self.budget.node_limit
            || (self.nodes.is_multiple_of(256) && self.started.elapsed() >= self.budget.time_limit)
        {
            self.aborted = true;
        }
        self.aborted
    }

    fn dfs(&mut self, from: usize, domains: Domains) {
        if self.out_of_budget() {
            return;
        }
        self.nodes += 1;

        let bound = self.prop.bound(&domains);
        if bound.definitely_lt(self.best_value)
            || (self.best_from_search && !bound.definitely_gt(self.best_value))
        {
            return;
        }

        let Some(next) = (from..domains.len()).find(|&p| domains[p].len() > 1) else {
            // every domain is a singleton and propagation succeeded
            self.best_value = bound;
            self.best = domains
                .iter()
                .map(|d| d.only().expect("singleton"))
                .collect();
            self.best_from_search = true;
            return;
        };

        for r in domains[next].iter() {
            let mut child = domains.clone();
            child[next] = RelationSet::single(r);
            if self.prop.propagate(&mut child, [next]) {
                self.dfs(next + 1, child);
            }
            if self.aborted {
                return;
            }
        }
    }
}

/// Exact maximization of the summed confidence by branch-and-bound.
///
/// Pairs are branched in problem order and relations in relation order, so
/// among equal-objective optima the lexicographically smallest assignment is
/// returned. The greedy assignment seeds the incumbent; when the budget runs
/// out the best assignment seen so far is returned as a fallback.
pub fn solve_exact<S: Score>(problem: &RepairProblem<S>, budget: Budget) -> RepairSolution<S> {
    let seed = greedy_fallback(problem);
    let prop = Propagator::new(problem);
    let mut root = prop.full_domains();
    let feasible = prop.propagate_all(&mut root);
    debug_assert!(feasible, "full domains are always arc consistent");

    let mut search = Search {
        prop,
        best_value: seed.objective,
        best: seed.assignment,
        best_from_search: false,
        nodes: 0,
        budget,
        started: Instant::now(),
        aborted: false,
    };
    if feasible {
        search.dfs(0, root);
    }

    let status = if search.aborted {
        SolveStatus::FeasibleFallback
    } else {
        SolveStatus::ProvenOptimal
    };
    RepairSolution {
        objective: problem.objective(&search.best),
        assignment: search.best,
        status,
        nodes: search.nodes,
    }
}
