use proptest::prelude::*;

use mpmd::embed::{contract_chains, reduce_height, sample_embedding, EmbedMode};
use mpmd::lowerbound_gen::surplus_integral;
use mpmd::offline_opt::{bipartite_opt_assignment, exact_opt_subsets, pair_cost};
use mpmd::online_mbpmd::run_b_with;
use mpmd::online_mpmd::{run_with, RunOptions};
use mpmd::{FiniteMetric, Instance, Polarity, RootedTree, Schedule};

/// Tree from a parent sequence (`parent[v] < v`) with points on the leaves.
fn tree_from(parents: &[usize], weights: &[f64]) -> RootedTree {
    let n = parents.len() + 1;
    let mut parent = vec![0];
    parent.extend(parents.iter().enumerate().map(|(k, &p)| p % (k + 1)));
    let mut weight = vec![None];
    weight.extend(weights.iter().take(n - 1).map(|&w| Some(w)));
    let mut has_child = vec![false; n];
    for v in 1..n {
        has_child[parent[v]] = true;
    }
    let leaves = (1..n).filter(|&v| !has_child[v]).collect();
    RootedTree::new(parent, weight, leaves).unwrap()
}

fn arb_tree() -> impl Strategy<Value = RootedTree> {
    (1usize..14).prop_flat_map(|k| {
        (prop::collection::vec(0usize..64, k), prop::collection::vec(0.1f64..10.0, k))
            .prop_map(|(p, w)| tree_from(&p, &w))
    })
}

/// Requests as `(point selector, arrival)`; points are reduced mod the metric size.
fn arb_requests(max_pairs: usize) -> impl Strategy<Value = Vec<(usize, f64)>> {
    (1..=max_pairs).prop_flat_map(|pairs| prop::collection::vec((0usize..1000, 0.0f64..10.0), 2 * pairs))
}

fn instance(metric: FiniteMetric, reqs: &[(usize, f64)], bipartite: bool) -> Instance {
    let n = metric.len();
    let triples = reqs
        .iter()
        .enumerate()
        .map(|(k, &(p, t))| {
            let b = bipartite.then(|| if k % 2 == 0 { Polarity::Plus } else { Polarity::Minus });
            (p % n, t, b)
        })
        .collect();
    Instance::from_unsorted(metric, triples).unwrap()
}

/// Minimum over every perfect matching, by plain recursion.
fn enumerate_opt(inst: &Instance) -> f64 {
    fn go(inst: &Instance, left: &mut Vec<usize>) -> f64 {
        if left.is_empty() {
            return 0.0;
        }
        let i = left.remove(0);
        let mut best = f64::INFINITY;
        for k in 0..left.len() {
            let j = left.remove(k);
            if let Ok(c) = pair_cost(inst, i, j) {
                best = best.min(c + go(inst, left));
            }
            left.insert(k, j);
        }
        left.insert(0, i);
        best
    }
    go(inst, &mut (0..inst.len()).collect())
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn tree_distance_is_a_metric(t in arb_tree(), a in 0usize..64, b in 0usize..64, c in 0usize..64) {
        let n = t.len();
        let (a, b, c) = (a % n, b % n, c % n);
        prop_assert_eq!(t.dist(a, a), 0.0);
        prop_assert!(close(t.dist(a, b), t.dist(b, a)));
        prop_assert!(t.dist(a, c) <= t.dist(a, b) + t.dist(b, c) + 1e-9);
    }

    #[test]
    fn contraction_keeps_leaf_distances_and_is_idempotent(t in arb_tree()) {
        let c = contract_chains(&t);
        for p in 0..t.num_points() {
            for q in 0..t.num_points() {
                prop_assert!((c.point_dist(p, q) - t.point_dist(p, q)).abs() <= 1e-9);
            }
        }
        prop_assert_eq!(contract_chains(&c), c.clone());
        let r = reduce_height(&c).unwrap();
        for p in 0..t.num_points() {
            for q in 0..t.num_points() {
                prop_assert!(r.point_dist(p, q) >= t.point_dist(p, q) - 1e-9);
            }
        }
    }

    #[test]
    fn embedding_never_contracts(pts in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 2..24), seed in any::<u64>()) {
        let m = FiniteMetric::euclidean(&pts);
        prop_assume!(m.is_ok());
        let m = m.unwrap();
        for mode in [EmbedMode::FrtOnly, EmbedMode::FrtReduce] {
            let s = sample_embedding(&m, seed, mode);
            for p in 0..m.len() {
                for q in (p + 1)..m.len() {
                    prop_assert!(s.tree.point_dist(p, q) >= m.dist(p, q) - 1e-9);
                }
            }
        }
    }

    #[test]
    fn subset_dp_matches_enumeration(t in arb_tree(), reqs in arb_requests(4)) {
        let inst = instance(t.leaf_metric().unwrap(), &reqs, false);
        let dp = exact_opt_subsets(&inst).unwrap();
        dp.validate(&inst).unwrap();
        prop_assert!(close(dp.total(), enumerate_opt(&inst)));
    }

    #[test]
    fn assignment_matches_subset_dp(t in arb_tree(), reqs in arb_requests(5)) {
        let inst = instance(t.leaf_metric().unwrap(), &reqs, true);
        let a = bipartite_opt_assignment(&inst).unwrap();
        let s = exact_opt_subsets(&inst).unwrap();
        a.validate(&inst).unwrap();
        prop_assert!(close(a.total(), s.total()));
    }

    #[test]
    fn sorted_pairing_is_optimal_on_the_line(half in 1usize..20, picks in prop::collection::vec(any::<prop::sample::Index>(), 1..6), flip in any::<bool>()) {
        // one simultaneous phase with alternating polarity left to right
        let n = 2 * half;
        let mut pts: Vec<usize> = picks.iter().map(|i| i.index(n)).collect();
        pts.sort_unstable();
        pts.dedup();
        if pts.len() % 2 == 1 {
            pts.pop();
        }
        prop_assume!(!pts.is_empty());
        let first = if flip { Polarity::Plus } else { Polarity::Minus };
        let triples = pts.iter().enumerate().map(|(k, &p)| (p, 1.0, Some(if k % 2 == 0 { first } else { first.opposite() }))).collect();
        let inst = Instance::new(FiniteMetric::line(n).unwrap(), triples).unwrap();
        let sorted = Schedule::offline(&inst, (0..pts.len()).step_by(2).map(|k| (k, k + 1)));
        let opt = bipartite_opt_assignment(&inst).unwrap();
        prop_assert!(close(sorted.total(), opt.total()));
        prop_assert!(close(sorted.connection_cost, surplus_integral(&inst)));
    }

    #[test]
    fn online_runs_are_valid_and_accounted(t in arb_tree(), reqs in arb_requests(6), bip in any::<bool>()) {
        let inst = instance(t.leaf_metric().unwrap(), &reqs, bip);
        let opts = RunOptions::full();
        let (schedule, acc, violations) = if bip {
            let r = run_b_with(&inst, &t, opts).unwrap();
            (r.schedule.clone(), r.accounting.clone(), r.violations().to_vec())
        } else {
            let r = run_with(&inst, &t, opts).unwrap();
            (r.schedule.clone(), r.accounting.clone(), r.violations().to_vec())
        };
        schedule.validate(&inst).unwrap();
        prop_assert!(violations.is_empty(), "{:?}", violations);
        prop_assert!(acc.ok(), "{:?}", acc);
        prop_assert!(schedule.total() + 1e-9 >= exact_opt_subsets(&inst).unwrap().total());
    }
}
