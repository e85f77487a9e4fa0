mod common;

use proptest::prelude::*;

use common::{composition, converse, RELATIONS};
use tempora_core::algebra::{
    relation_from_intervals, transitive_set, Interval, Relation, RelationSet,
};
use tempora_core::consistency::{uniqueness_score, TripleMining};
use tempora_core::corpus::{load_corpus, write_corpus, EventPair};
use tempora_core::evaluation::{distance_bins, evaluate, EvalScope};
use tempora_core::pairing::{generate_candidate_pairs, PairingRuleConfig};
use tempora_core::predictions::{Prediction, PredictionSet};
use tempora_core::repair::{
    greedy_fallback, repair, solve_exact, Budget, RepairOptions, RepairProblem,
};
use tempora_core::synth::{
    corrupt_predictions, oracle_predictions, synthesize_corpus, NoiseConfig,
};
use tempora_core::{ExactConfidence, Rational};

fn interval() -> impl Strategy<Value = Interval<i64>> {
    (0i64..12, 0i64..6).prop_map(|(b, len)| Interval::new(b, b + len).unwrap())
}

fn relation() -> impl Strategy<Value = Relation> {
    (0usize..5).prop_map(|i| RELATIONS[i])
}

fn relation_set() -> impl Strategy<Value = RelationSet> {
    (0u8..32).prop_map(RelationSet::from_bits)
}

struct Case {
    docs: Vec<tempora_core::Document>,
    clean: PredictionSet,
    noisy: PredictionSet,
}

fn case(seed: u64, docs: usize, events: usize) -> Case {
    let corpus = synthesize_corpus(seed, docs, events).unwrap();
    let (docs, timelines): (Vec<_>, Vec<_>) = corpus.into_iter().unzip();
    let pairs: Vec<EventPair> = docs
        .iter()
        .flat_map(|d| generate_candidate_pairs(d, &PairingRuleConfig::default()))
        .collect();
    let clean = oracle_predictions(&pairs, &timelines).unwrap();
    let noisy = corrupt_predictions(&clean, seed ^ 0x5eed, NoiseConfig::default()).unwrap();
    Case { docs, clean, noisy }
}

fn exact(preds: &PredictionSet, mining: TripleMining) -> PredictionSet {
    let opts = RepairOptions {
        mining,
        ..RepairOptions::default()
    };
    repair(preds, ExactConfidence::default(), &opts)
        .unwrap()
        .predictions
}

fn random_problem(
    pairs: Vec<(usize, usize)>,
    predicted: Vec<RelationSet>,
) -> RepairProblem<Rational> {
    let mut seen = std::collections::HashSet::new();
    let (pairs, predicted): (Vec<_>, Vec<_>) = pairs
        .into_iter()
        .zip(predicted)
        .filter(|((s, t), _)| s != t && seen.insert((*s, *t)))
        .map(|((s, t), r)| (EventPair::new("d", &s.to_string(), &t.to_string()), r))
        .unzip();
    RepairProblem::from_parts(
        pairs,
        predicted,
        ExactConfidence::default(),
        TripleMining::SymmetryAware,
    )
}

proptest! {
    #[test]
    fn labelling_is_antisymmetric(a in interval(), b in interval()) {
        prop_assert_eq!(relation_from_intervals(&b, &a), converse(relation_from_intervals(&a, &b)));
    }

    #[test]
    fn composition_is_sound(a in interval(), b in interval(), c in interval()) {
        let (ab, bc, ac) = (
            relation_from_intervals(&a, &b),
            relation_from_intervals(&b, &c),
            relation_from_intervals(&a, &c),
        );
        prop_assert!(transitive_set(ab, bc).contains(ac));
        prop_assert!(composition(ab, bc).contains(&ac));
    }

    #[test]
    fn table_is_symmetric(r1 in relation(), r2 in relation()) {
        prop_assert_eq!(transitive_set(r1, r2).reverse(), transitive_set(r2.reverse(), r1.reverse()));
    }

    #[test]
    fn reverse_is_an_involution_on_sets(s in relation_set()) {
        prop_assert_eq!(s.reverse().reverse(), s);
        prop_assert_eq!(s.reverse().len(), s.len());
    }

    #[test]
    fn uniqueness_counts_partition(sets in proptest::collection::vec(relation_set(), 1..40)) {
        let preds: PredictionSet = sets
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let p = EventPair::new("d", &format!("a{i}"), &format!("b{i}"));
                (p, Prediction::new(*s, tempora_core::Provenance::External))
            })
            .collect();
        let u = uniqueness_score(&preds).unwrap();
        let singles = sets.iter().filter(|s| s.len() == 1).count();
        prop_assert_eq!(u.n_zero + u.n_multi + singles, sets.len());
        prop_assert!((0.0..=100.0).contains(&u.c_u));
    }

    #[test]
    fn greedy_and_budgeted_results_are_feasible(
        pairs in proptest::collection::vec((0usize..5, 0usize..5), 1..14),
        predicted in proptest::collection::vec(relation_set(), 14),
    ) {
        let problem = random_problem(pairs, predicted);
        let g = greedy_fallback(&problem);
        prop_assert!(problem.check(&g.assignment).is_ok());
        let b = solve_exact(&problem, Budget::nodes(3));
        prop_assert!(problem.check(&b.assignment).is_ok());
        let e = solve_exact(&problem, Budget::default());
        prop_assert!(problem.check(&e.assignment).is_ok());
        prop_assert!(e.objective >= g.objective && e.objective >= b.objective);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn evaluation_ignores_pair_direction(seed in 0u64..1000) {
        let c = case(seed, 3, 12);
        let flipped: PredictionSet = c
            .noisy
            .iter()
            .map(|(p, pr)| {
                let mut pr = pr.clone();
                pr.relations = pr.relations.reverse();
                (p.reversed(), pr)
            })
            .collect();
        for scope in [EvalScope::Gold, EvalScope::CandidateIntersectGold] {
            prop_assert_eq!(evaluate(&c.noisy, &c.docs, scope), evaluate(&flipped, &c.docs, scope));
        }
    }

    #[test]
    fn bins_partition_gold(seed in 0u64..1000, bins in 1usize..12) {
        let c = case(seed, 2, 15);
        let gold: usize = c.docs.iter().map(|d| d.gold_links.len()).sum();
        let out = distance_bins(&c.noisy, &c.docs, bins).unwrap();
        prop_assert_eq!(out.iter().map(|b| b.count).sum::<usize>(), gold);
        let (lo, hi) = (
            out.iter().map(|b| b.count).min().unwrap(),
            out.iter().map(|b| b.count).max().unwrap(),
        );
        prop_assert!(hi - lo <= 1);
        prop_assert!(out.windows(2).all(|w| w[0].bin_high <= w[1].bin_low));
    }

    #[test]
    fn repair_is_idempotent_and_conservative(seed in 0u64..1000, symmetric in any::<bool>()) {
        let mining = if symmetric { TripleMining::SymmetryAware } else { TripleMining::Directed };
        let c = case(seed, 2, 20);
        let once = exact(&c.noisy, mining);
        let twice = exact(&once, mining);
        for (p, pr) in once.iter() {
            prop_assert_eq!(twice.relations(p), Some(pr.relations));
        }
        let kept = exact(&c.clean, mining);
        for (p, pr) in c.clean.iter() {
            prop_assert_eq!(kept.relations(p), Some(pr.relations));
        }
    }

    #[test]
    fn corpus_round_trips(seed in 0u64..1000) {
        let c = case(seed, 3, 10);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        write_corpus(&path, &c.docs).unwrap();
        prop_assert_eq!(load_corpus(&path).unwrap(), c.docs);
    }
}
