mod common;

use proptest::prelude::*;
use streambound::bound::{exact_bound_at, Scenario};
use streambound::fib::Fanout;
use streambound::sim::{
    bound_excesses, compute_metrics, simulate, strategy_greedy, strategy_parallel_balanced, strategy_random,
    strategy_serial_forest, strategy_serial_tree, strategy_snowball, validate_capacity, Trace,
};
use streambound::topology::{build_single_tree, solve_intertwining, SOURCE};

const PAIRS: [(u32, u32); 5] = [(1, 2), (2, 2), (2, 4), (3, 3), (3, 6)];

fn sc(u: u32, k: u32) -> Scenario {
    Scenario::finite(u, k).unwrap()
}

fn store_and_forward(trace: &Trace) -> Result<(), TestCaseError> {
    for t in &trace.transmissions {
        let ready = if t.sender == SOURCE {
            Some(trace.generation_slot(t.chunk))
        } else {
            trace.completion(t.chunk, t.sender)
        };
        prop_assert!(ready.is_some_and(|r| r <= t.start), "{:?}", t);
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn random_strategies_stay_below(seed in any::<u64>(), pair in prop::sample::select(PAIRS.to_vec()), peers in 1u32..=200) {
        let (u, k) = pair;
        let s = sc(u, k);
        let trace = simulate(&mut strategy_random(seed), &s, peers, 30, 8).unwrap();
        let m = compute_metrics(&trace);
        prop_assert!(bound_excesses(&m, &s).is_empty());
        prop_assert!(validate_capacity(&trace.transmissions, u).is_ok());
        store_and_forward(&trace)?;
    }

    #[test]
    fn greedy_stays_below(pair in prop::sample::select(PAIRS.to_vec()), peers in 1u32..=300) {
        let (u, k) = pair;
        let s = sc(u, k);
        let trace = simulate(&mut strategy_greedy(Fanout::Finite(k)), &s, peers, 40, 10).unwrap();
        prop_assert!(bound_excesses(&compute_metrics(&trace), &s).is_empty());
        store_and_forward(&trace)?;
    }

    #[test]
    fn identical_seeds_identical_traces(seed in any::<u64>(), peers in 1u32..=120) {
        let a = simulate(&mut strategy_random(seed), &sc(2, 4), peers, 25, 6).unwrap();
        let b = simulate(&mut strategy_random(seed), &sc(2, 4), peers, 25, 6).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn parallel_matches_per_node_oracle(k in 2u32..=4, peers in 1u32..=400) {
        let mut p = strategy_parallel_balanced(k, k, peers).unwrap();
        let trace = simulate(&mut p, &sc(k, k), peers, 40, 1).unwrap();
        let oracle = common::parallel_completion(u64::from(k), u64::from(peers));
        for v in 1..=peers {
            prop_assert_eq!(trace.completion(1, v), Some(oracle[v as usize]).filter(|&s| s <= 40));
        }
        prop_assert!(validate_capacity(&trace.transmissions, k).is_ok());
    }

    #[test]
    fn snowball_matches_doubling(u in 1u32..=4, peers in 1u32..=3000) {
        let s = Scenario::unbounded(u).unwrap();
        let trace = simulate(&mut strategy_snowball(u, peers), &s, peers, 16, 1).unwrap();
        let curve = &compute_metrics(&trace).chunk_diffusion[0];
        for t in 0..=16u64 {
            prop_assert_eq!(curve[t as usize], common::snowball(u64::from(u), t, u64::from(peers)));
        }
    }

    #[test]
    fn serial_tree_attains_until_exhausted(u in 2u32..=4, peers in 1u32..=600) {
        let tree = build_single_tree(u, peers).unwrap();
        let trace = simulate(&mut strategy_serial_tree(&tree), &sc(u, u), peers, 40, 4).unwrap();
        let m = compute_metrics(&trace);
        let d = m.d_network.unwrap();
        for t in 1..d {
            prop_assert_eq!(u128::from(m.n_of_t[t as usize]), exact_bound_at(&sc(u, u), t as i64).unwrap());
        }
        prop_assert_eq!(m.n_of_t[d as usize], u64::from(peers));
    }
}

fn delay(trace: &Trace, chunk: u32, v: u32) -> u64 {
    trace.completion(chunk, v).unwrap() - trace.generation_slot(chunk)
}

#[test]
fn serial_tree_delays_do_not_depend_on_chunk() {
    for (u, peers) in [(2, 19), (3, 100), (4, 300)] {
        let tree = build_single_tree(u, peers).unwrap();
        let trace = simulate(&mut strategy_serial_tree(&tree), &sc(u, u), peers, 60, 8).unwrap();
        for v in 1..=peers {
            let first = delay(&trace, 1, v);
            assert!((2..=8).all(|c| delay(&trace, c, v) == first), "U={u} node {v}");
        }
    }
}

#[test]
fn forest_delays_depend_only_on_class() {
    for (u, k, peers) in [(2, 4, 24), (2, 4, 91), (2, 6, 96), (3, 6, 56), (1, 2, 54)] {
        let forest = solve_intertwining(u, k, peers).unwrap().forest;
        let trees = k / u;
        let trace = simulate(&mut strategy_serial_forest(&forest), &sc(u, k), peers, 80, 12).unwrap();
        let m = compute_metrics(&trace);
        assert_eq!(m.chunks_used.len(), 12);
        for v in 1..=peers {
            for c in 1..=12 - trees {
                assert_eq!(delay(&trace, c, v), delay(&trace, c + trees, v), "({u},{k}) node {v} chunk {c}");
            }
        }
        // Every chunk follows the bound until the network is exhausted.
        for curve in &m.chunk_diffusion {
            for (t, &n) in curve.iter().enumerate().skip(1) {
                let b = exact_bound_at(&sc(u, k), t as i64).unwrap();
                assert_eq!(u128::from(n), b.min(u128::from(peers)), "({u},{k}) t={t}");
            }
        }
        // Per-peer worst delay over both classes reaches P exactly at the
        // bound's crossing time.
        let d = m.d_network.unwrap();
        assert_eq!(u128::from(m.n_of_t[d as usize]), exact_bound_at(&sc(u, k), d as i64).unwrap());
        assert!(validate_capacity(&trace.transmissions, u).is_ok());
    }
}
