//! Acceptance checks, one PASS/FAIL line each. Runs without the libtest
//! harness so the lines reach the terminal under `cargo test`.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use streambound::bound::{asymptotic_bound, exact_bound, exact_bound_at, infinite_k_bound, Scenario};
use streambound::fib::{phi, q_at_phi, Fanout};
use streambound::sim::{
    bound_excesses, compute_metrics, simulate, strategy_parallel_balanced, strategy_serial_forest,
    strategy_serial_tree, strategy_snowball, validate_capacity, Trace,
};
use streambound::sweep::{random_cases, run_cases, DominanceCase, StrategySpec};
use streambound::topology::{build_single_tree, check_slot_conflicts, solve_intertwining, validate_forest};

type Check = std::result::Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn sc(u: u32, k: u32) -> Scenario {
    Scenario::finite(u, k).expect("valid scenario")
}

fn bound_table() -> Check {
    let published: [(u32, [u128; 7]); 2] = [(2, [1, 3, 6, 11, 19, 32, 53]), (4, [1, 3, 6, 12, 24, 47, 91])];
    for (k, row) in published {
        for (i, &want) in row.iter().enumerate() {
            let t = i as f64 + 1.0;
            let got = exact_bound(&sc(2, k), t).map_err(|e| e.to_string())?;
            ensure(got == want, || format!("U=2 k={k} t={t}: {got} != {want}"))?;
        }
    }
    Ok("U=2, k=2 and k=4, t=1..7 exact".into())
}

fn constants() -> Check {
    let published = [
        (2, 1.61803, 2.23607),
        (3, 1.83929, 2.97417),
        (4, 1.92756, 3.40352),
        (5, 1.96595, 3.65468),
        (6, 1.98358, 3.80162),
    ];
    let mut worst: f64 = 0.0;
    for (k, p, q) in published {
        let dp = (phi(k).map_err(|e| e.to_string())? - p).abs();
        let dq = (q_at_phi(k).map_err(|e| e.to_string())? - q).abs();
        ensure(dp <= 1e-5 && dq <= 1e-5, || format!("k={k}: |dphi|={dp:e} |dQ|={dq:e}"))?;
        worst = worst.max(dp).max(dq);
    }
    Ok(format!("ten values for k=2..6, worst deviation {worst:.1e}"))
}

fn delays(trace: &Trace, chunk: u32) -> Vec<u64> {
    (1..=trace.params.peers)
        .map(|v| trace.completion(chunk, v).map_or(u64::MAX, |s| s - trace.generation_slot(chunk)))
        .collect()
}

fn single_tree_attainment() -> Check {
    let s = sc(2, 2);
    let tree = build_single_tree(2, 19).map_err(|e| e.to_string())?;
    let chunks = 10;
    let trace = simulate(&mut strategy_serial_tree(&tree), &s, 19, 30, chunks).map_err(|e| e.to_string())?;
    for c in 1..=chunks {
        let worst = delays(&trace, c).into_iter().max().unwrap();
        ensure(worst <= 5, || format!("chunk {c} needs {worst} slots"))?;
    }
    let m = compute_metrics(&trace);
    for t in 1..=5 {
        let want = common::bound(2, 2, t);
        ensure(u128::from(m.n_of_t[t]) == want, || format!("N({t}) = {} != {want}", m.n_of_t[t]))?;
    }
    ensure(validate_capacity(&trace.transmissions, 2).is_ok(), || "capacity violated".into())?;
    Ok(format!("{chunks} chunks, all 19 peers within 5 slots, N(1..5) = 1,3,6,11,19"))
}

fn forest_attainment() -> Check {
    let assignment = solve_intertwining(2, 4, 24).map_err(|e| e.to_string())?;
    let forest = &assignment.forest;
    let conflicts = check_slot_conflicts(forest);
    ensure(conflicts.is_empty(), || format!("{} slot conflicts", conflicts.len()))?;
    let issues = validate_forest(forest);
    ensure(issues.is_empty(), || format!("forest issues: {issues:?}"))?;

    let trace = simulate(&mut strategy_serial_forest(forest), &sc(2, 4), 24, 30, 8).map_err(|e| e.to_string())?;
    let mut per_offset = [0u32; 6];
    for d in delays(&trace, 1) {
        ensure(d <= 5, || format!("chunk 1 reaches a peer after {d} slots"))?;
        per_offset[d as usize] += 1;
    }
    ensure(per_offset[1..] == [1, 2, 3, 6, 12], || format!("per-offset counts {:?}", &per_offset[1..]))?;
    // Every chunk of either class spreads exactly like the bound.
    let m = compute_metrics(&trace);
    for c in 1..=8u32 {
        let curve = &m.chunk_diffusion[c as usize - 1];
        for t in 1..=5 {
            let want = common::bound(2, 4, t);
            ensure(u128::from(curve[t]) == want, || format!("chunk {c} t={t}: {} != {want}", curve[t]))?;
        }
    }
    Ok("chunk 1 counts 1,2,3,6,12 by slot 5; zero slot conflicts; 8 chunks on the bound".into())
}

fn dominance_cases() -> Vec<DominanceCase> {
    let pairs = [(1, 2), (2, 2), (2, 4), (3, 3), (3, 6)];
    let horizon = 40;
    let chunks = 12;
    let mut cases = Vec::new();
    for &(u, k) in &pairs {
        for peers in [1, 2, 19, 24, 100, 250, 500] {
            let mut builtin = vec![StrategySpec::SerialTree, StrategySpec::SerialForest, StrategySpec::Greedy];
            if u == k {
                builtin.push(StrategySpec::Parallel);
            }
            for strategy in builtin {
                cases.push(DominanceCase {
                    capacity: u,
                    fanout: Fanout::Finite(k),
                    peers,
                    horizon,
                    chunks,
                    strategy,
                });
            }
            cases.push(DominanceCase {
                capacity: u,
                fanout: Fanout::Unbounded,
                peers,
                horizon,
                chunks,
                strategy: StrategySpec::Snowball,
            });
        }
    }
    cases.extend(random_cases(&pairs, 0..100, &[7, 24, 63, 150, 333, 500], horizon, chunks));
    cases
}

fn dominance() -> Check {
    let cases = dominance_cases();
    let outcomes = run_cases(&cases);
    let mut touching = 0;
    for o in &outcomes {
        if let Some(e) = &o.error {
            return Err(format!("{:?}: {e}", o.case));
        }
        ensure(o.capacity_ok, || format!("{:?}: capacity validation failed", o.case))?;
        ensure(o.excesses.is_empty(), || format!("{:?}: above the bound at {:?}", o.case, o.excesses[0]))?;
        if o.d_network.is_some() {
            touching += 1;
        }
    }
    let random = cases.iter().filter(|c| matches!(c.strategy, StrategySpec::Random { .. })).count();
    Ok(format!(
        "{} traces ({random} random-seed), zero points above the bound, {touching} fully disseminated",
        outcomes.len()
    ))
}

fn magnitude_gap() -> Check {
    // The engine and the per-node oracle agree on the balanced parallel tree.
    let peers = 2046;
    let mut strategy = strategy_parallel_balanced(2, 2, peers).map_err(|e| e.to_string())?;
    let trace = simulate(&mut strategy, &sc(2, 2), peers, 20, 1).map_err(|e| e.to_string())?;
    let oracle = common::parallel_completion(2, u64::from(peers));
    for v in 1..=peers {
        ensure(trace.completion(1, v) == Some(oracle[v as usize]), || format!("node {v} completion differs"))?;
    }
    let m = compute_metrics(&trace);
    for t in 1..=20u64 {
        let levels = common::parallel_levels(2, t);
        ensure(u128::from(m.n_of_t[t as usize]) == levels, || {
            format!("t={t}: simulated {} vs level oracle {levels}", m.n_of_t[t as usize])
        })?;
    }
    let serial20 = exact_bound_at(&sc(2, 2), 20).map_err(|e| e.to_string())?;
    let parallel20 = m.n_of_t[20];
    ensure(serial20 == 28655 && parallel20 == 2046, || format!("t=20: {serial20} vs {parallel20}"))?;
    let r20 = serial20 as f64 / parallel20 as f64;
    ensure(r20 >= 10.0, || format!("ratio at t=20 is {r20}"))?;

    let serial50 = exact_bound_at(&sc(2, 2), 50).map_err(|e| e.to_string())?;
    let parallel50 = common::parallel_levels(2, 50);
    ensure(serial50 == common::bound(2, 2, 50), || "serial t=50 disagrees with oracle".into())?;
    let r50 = serial50 as f64 / parallel50 as f64;
    ensure(r50 >= 500.0, || format!("ratio at t=50 is {r50}"))?;
    Ok(format!(
        "t=20: 28655 vs 2046 (x{r20:.1}); t=50: {serial50} vs {parallel50} (x{r50:.1})"
    ))
}

fn asymptotic() -> Check {
    let mut worst: f64 = 0.0;
    let mut at = (0, 0, 0);
    for k in 2..=6u32 {
        for u in 1..=k {
            let s = sc(u, k);
            for t in 20..=60i64 {
                let exact = exact_bound_at(&s, t).map_err(|e| e.to_string())?;
                ensure(exact == common::bound(u as usize, k as usize, t as usize), || {
                    format!("exact bound differs from oracle at U={u} k={k} t={t}")
                })?;
                let approx = asymptotic_bound(&s, t).map_err(|e| e.to_string())?;
                let rel = (approx - exact as f64).abs() / exact as f64;
                if rel > worst {
                    worst = rel;
                    at = (u, k, t);
                }
            }
        }
    }
    ensure(worst < 1e-3, || format!("relative error {worst:e} at {at:?}"))?;
    Ok(format!("t=20..60, k=2..6, U<=k: worst relative error {worst:.1e} at (U,k,t)={at:?}"))
}

fn infinite_k() -> Check {
    let peers = 1 << 20;
    for u in 1..=3u32 {
        let s = Scenario::unbounded(u).map_err(|e| e.to_string())?;
        let trace = simulate(&mut strategy_snowball(u, peers), &s, peers, 20, 1).map_err(|e| e.to_string())?;
        let m = compute_metrics(&trace);
        let curve = &m.chunk_diffusion[0];
        for t in 1..=20u64 {
            let got = curve[t as usize];
            let sum = infinite_k_bound(u, t as i64).map_err(|e| e.to_string())?;
            ensure(u128::from(got) == sum, || format!("U={u} t={t}: {got} vs {sum}"))?;
            ensure(got == common::snowball(u64::from(u), t, u64::from(peers)), || format!("U={u} t={t}: oracle"))?;
            if t >= u64::from(u) {
                let closed = 2f64.powi(t as i32) * (1.0 - 2f64.powi(-(u as i32)));
                ensure(got as f64 == closed, || format!("U={u} t={t}: {got} vs {closed}"))?;
            }
        }
        ensure(bound_excesses(&m, &s).is_empty(), || format!("U={u}: above the bound"))?;
    }
    // A small network saturates and then stays at P.
    let s = Scenario::unbounded(2).map_err(|e| e.to_string())?;
    let trace = simulate(&mut strategy_snowball(2, 20), &s, 20, 10, 1).map_err(|e| e.to_string())?;
    let curve = &compute_metrics(&trace).chunk_diffusion[0];
    for t in 1..=10u64 {
        let want = common::snowball(2, t, 20);
        ensure(curve[t as usize] == want, || format!("P=20 t={t}: {} vs {want}", curve[t as usize]))?;
    }
    Ok("U=1,2,3, t<=20 with 2^20 peers: per-slot holders equal 2^t(1-2^-U) (the S_inf sum for t<U)".into())
}

fn recurrences() -> Check {
    let mut pairs = 0;
    for k in 2..=8usize {
        for u in 1..=k {
            let s = sc(u as u32, k as u32);
            let n = common::new_nodes(u, k, 60);
            let f = common::fib_terms(k, 61);
            let mut total = 0u128;
            for t in 1..=60usize {
                total += n[t];
                let direct: u128 = (0..u).filter(|&j| t > j).map(|j| f[t - j]).sum();
                ensure(n[t] == direct, || format!("U={u} k={k}: n({t}) = {} vs {direct}", n[t]))?;
                let exact = exact_bound_at(&s, t as i64).map_err(|e| e.to_string())?;
                ensure(total == exact, || format!("U={u} k={k} t={t}: {total} vs {exact}"))?;
            }
            pairs += 1;
        }
    }
    Ok(format!("{pairs} (U,k) pairs with U<=k<=8, t<=60"))
}

fn main() -> ExitCode {
    let checks: [(&str, fn() -> Check, Option<Duration>); 9] = [
        ("bound table", bound_table, Some(Duration::from_millis(1))),
        ("Fibonacci constants", constants, Some(Duration::from_secs(1))),
        ("single-tree attainment", single_tree_attainment, None),
        ("forest attainment", forest_attainment, None),
        ("dominance suite", dominance, Some(Duration::from_secs(120))),
        ("serial vs parallel gap", magnitude_gap, None),
        ("asymptotic closed form", asymptotic, Some(Duration::from_secs(1))),
        ("unbounded fan-out", infinite_k, None),
        ("recurrence equivalence", recurrences, None),
    ];
    let mut failed = 0;
    for (i, (name, check, budget)) in checks.into_iter().enumerate() {
        let start = Instant::now();
        let mut result = check();
        let elapsed = start.elapsed();
        if let (Ok(_), Some(limit)) = (&result, budget) {
            if elapsed > limit {
                result = Err(format!("took {elapsed:?}, budget {limit:?}"));
            }
        }
        match result {
            Ok(detail) => println!("PASS  {:>2}  {name}: {detail} [{elapsed:.2?}]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {:>2}  {name}: {detail} [{elapsed:.2?}]", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 9 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
