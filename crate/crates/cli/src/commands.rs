use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use serde_json::{json, Value};
use streambound::bound::{asymptotic_bound, exact_bound_at, infinite_k_bound, BoundCurve, Scenario};
use streambound::fib::{phi, q_at_phi, Fanout};
use streambound::sim::{
    bound_excesses, compare_with_bound, compute_metrics, parallel_balanced_reach, simulate as run, strategy_greedy,
    strategy_parallel_balanced, strategy_random, strategy_serial_forest, strategy_serial_tree, strategy_snowball,
    Strategy, Verdict,
};
use streambound::topology::{
    build_single_tree, check_slot_conflicts, forest_shape, solve_intertwining_with, validate_forest, ForcedPlacement,
    Forest, ScheduledTree, TopologyDoc,
};
use streambound::Error;

use crate::report::{fixed, rounded, Failure, Report, EXIT_OVERFLOW, EXIT_VIOLATION};
use crate::{Common, StrategyName};

type Outcome = Result<Report, Failure>;

/// Parallel column cells are simulated while the network needed stays below
/// this size; later cells use the closed form the simulation confirmed.
const PARALLEL_SIM_PEERS: u128 = 1 << 16;

fn int(x: u128) -> Value {
    serde_json::to_value(x).expect("arbitrary precision numbers")
}

fn need<T: Copy>(value: Option<T>, flag: &str, command: &str) -> Result<T, Failure> {
    value.ok_or_else(|| Failure::usage(format!("{command} needs --{flag}")))
}

fn finite_k(c: &Common, command: &str) -> Result<u32, Failure> {
    match need(c.fanout, "k", command)? {
        Fanout::Finite(k) => Ok(k),
        Fanout::Unbounded => Err(Failure::usage(format!("{command} needs a finite --k"))),
    }
}

fn scenario(c: &Common, command: &str) -> Result<Scenario, Failure> {
    let u = need(c.capacity, "U", command)?;
    let k = need(c.fanout, "k", command)?;
    Ok(Scenario::new(u, k)?)
}

pub fn bound(c: &Common) -> Outcome {
    let s = scenario(c, "bound")?;
    let t_max = need(c.t_max, "t-max", "bound")?;
    let t_max = u32::try_from(t_max).map_err(|_| Failure::usage("--t-max is too large"))?;
    let mut report = Report::new(&["t", "exact", "asymptotic", "infinite_k"]);
    let curve = BoundCurve::new(s, t_max);
    let mut rows = Vec::new();
    let mut truncated = None;
    let mut inf_overflow = None;
    for t in 1..=t_max {
        let Some(exact) = curve.at(t) else {
            truncated = Some(t);
            break;
        };
        // The unlimited-fan-out column overflows first; leave its cells empty.
        let inf = infinite_k_bound(s.capacity(), i64::from(t)).ok();
        if inf.is_none() && inf_overflow.is_none() {
            inf_overflow = Some(t);
        }
        let asym = asymptotic_bound(&s, i64::from(t)).ok();
        report.row(vec![
            t.to_string(),
            exact.to_string(),
            asym.map(|a| fixed(a, 4)).unwrap_or_default(),
            inf.map(|v| v.to_string()).unwrap_or_default(),
        ]);
        rows.push(json!({
            "t": t,
            "exact": int(exact),
            "asymptotic": asym.map(|a| rounded(a, 4)),
            "infinite_k": inf.map(int),
        }));
    }
    if let Some(t) = inf_overflow {
        report
            .notices
            .push(format!("notice: infinite_k exceeds 128 bits from t={t}, cells left empty"));
        report.code = EXIT_OVERFLOW;
    }
    if let Some(t) = truncated {
        report
            .notices
            .push(format!("notice: table truncated before t={t}, values exceed 128 bits"));
        report.code = EXIT_OVERFLOW;
    }
    report.json = json!({
        "U": s.capacity(),
        "k": s.fanout().to_string(),
        "rows": rows,
        "truncated_at": truncated,
    });
    Ok(report)
}

pub fn constants(k_max: u32) -> Outcome {
    if k_max < 2 {
        return Err(Failure::usage("--k-max must be at least 2"));
    }
    let mut report = Report::new(&["k", "phi_k", "q_at_phi"]);
    let mut rows = Vec::new();
    for k in 2..=k_max {
        let (p, q) = (phi(k)?, q_at_phi(k)?);
        report.row(vec![k.to_string(), fixed(p, 5), fixed(q, 5)]);
        rows.push(json!({"k": k, "phi_k": rounded(p, 5), "q_at_phi": rounded(q, 5)}));
    }
    report.json = Value::Array(rows);
    Ok(report)
}

/// Offset histogram rows checked against the bound: equality while the
/// network is not exhausted, at most the bound on the last offset.
fn histogram_report(shape: &ScheduledTree, s: &Scenario, topology: &TopologyDoc, extra: Value) -> Outcome {
    let mut report = Report::new(&["offset", "count", "cumulative", "bound", "check"]);
    let counts = shape.offset_histogram();
    let cumulative = shape.cumulative_histogram();
    let last = cumulative.len() - 1;
    let mut rows = Vec::new();
    let mut all_pass = true;
    for t in 1..=last {
        let b = exact_bound_at(s, t as i64)?;
        let n = u128::from(cumulative[t]);
        let pass = if t < last { n == b } else { n <= b };
        all_pass &= pass;
        let mark = if pass { "PASS" } else { "FAIL" };
        report.row(vec![
            t.to_string(),
            counts[t].to_string(),
            cumulative[t].to_string(),
            b.to_string(),
            mark.into(),
        ]);
        rows.push(json!({
            "offset": t,
            "count": counts[t],
            "cumulative": cumulative[t],
            "bound": int(b),
            "check": mark,
        }));
    }
    let verdict = if all_pass { "PASS" } else { "FAIL" };
    report.notices.push(format!(
        "{verdict}: cumulative histogram reaches {} peers at offset {last}, bound there is {}",
        shape.peers(),
        exact_bound_at(s, last as i64)?
    ));
    if !all_pass {
        report.code = EXIT_VIOLATION;
    }
    let mut doc = json!({
        "U": topology.capacity,
        "k": topology.fanout,
        "P": topology.peers,
        "topology": topology,
        "histogram": rows,
        "check": verdict,
    });
    if let (Value::Object(doc), Value::Object(extra)) = (&mut doc, extra) {
        doc.extend(extra);
    }
    report.json = doc;
    Ok(report)
}

pub fn tree(c: &Common) -> Outcome {
    let u = need(c.capacity, "U", "tree")?;
    let peers = need(c.peers, "P", "tree")?;
    if let Some(k) = c.fanout {
        if k != Fanout::Finite(u) {
            return Err(Failure::usage(format!(
                "tree builds the k = U tree, got U={u} k={k}; use forest for k > U"
            )));
        }
    }
    let s = Scenario::finite(u, u)?;
    let tree = build_single_tree(u, peers)?;
    let doc = Forest::single(tree.clone(), u).to_doc();
    histogram_report(&tree, &s, &doc, json!({}))
}

fn search_failure(e: Error, forced: &[ForcedPlacement]) -> Failure {
    let what = match &e {
        Error::Infeasible(_) if forced.is_empty() => "infeasible",
        Error::Infeasible(_) => "infeasible under the forced placements",
        Error::SearchAborted(_) => "aborted",
        _ => return e.into(),
    };
    Failure {
        code: crate::report::exit_code(&e),
        message: format!("intertwining {what}: {e}"),
    }
}

pub fn forest(c: &Common, cap: u64) -> Outcome {
    let u = need(c.capacity, "U", "forest")?;
    let k = finite_k(c, "forest")?;
    let peers = need(c.peers, "P", "forest")?;
    let s = Scenario::finite(u, k)?;
    let shape = forest_shape(u, k, peers)?;
    let solved = solve_intertwining_with(u, k, peers, &[], cap).map_err(|e| search_failure(e, &[]))?;
    let conflicts = check_slot_conflicts(&solved.forest);
    let extra = json!({
        "search": solved.stats,
        "conflicts": conflicts,
    });
    histogram_report(&shape, &s, &solved.forest.to_doc(), extra)
}

fn build_strategy(name: StrategyName, s: &Scenario, peers: u32, seed: u64) -> Result<Box<dyn Strategy>, Failure> {
    let u = s.capacity();
    let mismatch = |why: &str| Failure::usage(format!("strategy {name:?} with U={u} k={}: {why}", s.fanout()));
    Ok(match name {
        StrategyName::SerialTree => Box::new(strategy_serial_tree(&build_single_tree(u, peers)?)),
        StrategyName::SerialForest => {
            let k = s.fanout().finite().ok_or_else(|| mismatch("needs a finite k"))?;
            let a = solve_intertwining_with(u, k, peers, &[], streambound::topology::DEFAULT_SEARCH_CAP)
                .map_err(|e| search_failure(e, &[]))?;
            Box::new(strategy_serial_forest(&a.forest))
        }
        StrategyName::Parallel => {
            let k = s.fanout().finite().ok_or_else(|| mismatch("needs k = U"))?;
            Box::new(strategy_parallel_balanced(u, k, peers).map_err(|e| mismatch(&e.to_string()))?)
        }
        StrategyName::Snowball => {
            if s.fanout() != Fanout::Unbounded {
                return Err(mismatch("snowball needs --k inf"));
            }
            Box::new(strategy_snowball(u, peers))
        }
        StrategyName::Greedy => Box::new(strategy_greedy(s.fanout())),
        StrategyName::Random => Box::new(strategy_random(seed)),
    })
}

pub fn simulate(c: &Common, name: StrategyName, horizon: u64, trace_out: Option<&Path>) -> Outcome {
    let s = scenario(c, "simulate")?;
    let peers = need(c.peers, "P", "simulate")?;
    let t_max = c.t_max.unwrap_or(horizon).min(horizon);
    let mut strategy = build_strategy(name, &s, peers, c.seed)?;
    let trace = run(strategy.as_mut(), &s, peers, horizon, c.chunks)?;
    if let Some(path) = trace_out {
        let file = File::create(path).map_err(|e| Failure {
            code: 1,
            message: format!("{}: {e}", path.display()),
        })?;
        trace.write_jsonl(BufWriter::new(file))?;
    }
    let metrics = compute_metrics(&trace);
    let verdicts = compare_with_bound(&metrics, &s, t_max);
    let excesses = bound_excesses(&metrics, &s);

    let mut report = Report::new(&["t", "simulated", "bound", "verdict"]);
    for v in &verdicts {
        report.row(vec![
            v.t.to_string(),
            v.simulated.to_string(),
            v.bound.to_string(),
            v.verdict.to_string(),
        ]);
    }
    let violated = !excesses.is_empty() || verdicts.iter().any(|v| v.verdict == Verdict::Violation);
    if violated {
        report.code = EXIT_VIOLATION;
        report
            .notices
            .push(format!("VIOLATION: {} points above the bound", excesses.len()));
    }
    report.notices.push(match metrics.d_network {
        Some(d) => format!(
            "{} of {} chunks fully disseminated; network delay {d}",
            metrics.chunks_used.len(),
            c.chunks
        ),
        None => format!("no chunk reached all {peers} peers within {horizon} slots; delays marked not reached"),
    });
    report.json = json!({
        "strategy": strategy.name(),
        "U": s.capacity(),
        "k": s.fanout().to_string(),
        "P": peers,
        "horizon": horizon,
        "chunks": c.chunks,
        "seed": c.seed,
        "chunks_used": metrics.chunks_used.len(),
        "metrics": metrics,
        "verdicts": verdicts.iter().map(|v| json!({
            "t": v.t,
            "simulated": v.simulated,
            "bound": int(v.bound),
            "verdict": v.verdict,
        })).collect::<Vec<_>>(),
        "excesses": excesses,
    });
    Ok(report)
}

/// Balanced parallel tree, simulated on the largest network that stays below
/// [`PARALLEL_SIM_PEERS`]. Entry `t` holds peers reached within `t` slots.
fn parallel_column(u: u32, t_max: u64) -> Result<Vec<u128>, Failure> {
    let mut sim_t = 0;
    for t in 0..=t_max {
        match parallel_balanced_reach(u, t) {
            Ok(n) if n <= PARALLEL_SIM_PEERS => sim_t = t,
            _ => break,
        }
    }
    let peers = parallel_balanced_reach(u, sim_t)? as u32;
    let mut column = vec![0u128; t_max as usize + 1];
    if peers > 0 {
        let s = Scenario::finite(u, u.max(2))?;
        let mut strategy = strategy_parallel_balanced(u, u, peers)?;
        let trace = run(&mut strategy, &s, peers, sim_t, 1)?;
        let curve = &compute_metrics(&trace).chunk_diffusion[0];
        for t in 0..=sim_t {
            column[t as usize] = u128::from(curve[t as usize]);
        }
    }
    for t in 0..=sim_t {
        let closed = parallel_balanced_reach(u, t)?;
        if column[t as usize] != closed {
            return Err(Failure {
                code: EXIT_VIOLATION,
                message: format!("parallel simulation gives {} at t={t}, closed form {closed}", column[t as usize]),
            });
        }
    }
    for t in sim_t + 1..=t_max {
        match parallel_balanced_reach(u, t) {
            Ok(n) => column[t as usize] = n,
            Err(_) => {
                column.truncate(t as usize);
                break;
            }
        }
    }
    Ok(column)
}

pub fn compare(c: &Common) -> Outcome {
    let u = need(c.capacity, "U", "compare")?;
    let t_max = need(c.t_max, "t-max", "compare")?;
    if u == 0 {
        return Err(Failure::usage("--U must be at least 1"));
    }
    let cols = [
        format!("serial_k{u}"),
        format!("serial_k{}", 2 * u),
        "serial_kinf".to_string(),
        format!("parallel_k{u}"),
    ];
    let mut report = Report::new(&["t", &cols[0], &cols[1], &cols[2], &cols[3]]);
    let wide = Scenario::finite(u, 2 * u.max(1))?;
    let parallel = parallel_column(u, t_max)?;
    let mut rows = Vec::new();
    let mut truncated = None;
    for t in 1..=t_max {
        // With U = 1 the single tree is a chain: one new peer per slot.
        let same = if u >= 2 {
            exact_bound_at(&Scenario::finite(u, u)?, t as i64)
        } else {
            Ok(u128::from(t))
        };
        let cells = (
            same,
            exact_bound_at(&wide, t as i64),
            infinite_k_bound(u, t as i64),
            parallel.get(t as usize),
        );
        let (Ok(a), Ok(b), Ok(inf), Some(&par)) = cells else {
            truncated = Some(t);
            break;
        };
        report.row(vec![t.to_string(), a.to_string(), b.to_string(), inf.to_string(), par.to_string()]);
        let mut row = serde_json::Map::new();
        row.insert("t".into(), json!(t));
        for (name, v) in cols.iter().zip([a, b, inf, par]) {
            row.insert(name.clone(), int(v));
        }
        rows.push(Value::Object(row));
    }
    if let Some(t) = truncated {
        report
            .notices
            .push(format!("notice: table truncated before t={t}, values exceed 128 bits"));
        report.code = EXIT_OVERFLOW;
    }
    report.json = json!({"U": u, "rows": rows, "truncated_at": truncated});
    Ok(report)
}

pub fn intertwine(c: &Common, cap: u64, forced: &[ForcedPlacement]) -> Outcome {
    let u = need(c.capacity, "U", "intertwine")?;
    let k = finite_k(c, "intertwine")?;
    let peers = need(c.peers, "P", "intertwine")?;
    let shape = forest_shape(u, k, peers)?;
    let mut report = Report::new(&["status", "tree", "node", "residue", "detail"]);
    let mut forest = None;
    let (status, stats) = match solve_intertwining_with(u, k, peers, forced, cap) {
        Ok(a) => {
            forest = Some(a.forest);
            ("solved", a.stats)
        }
        Err(e) => {
            let (status, stats) = match e {
                Error::Infeasible(s) => ("infeasible", s),
                Error::SearchAborted(s) => ("aborted", s),
                other => return Err(other.into()),
            };
            report.code = crate::report::exit_code(&e);
            // Show what the forced placements break in an otherwise valid forest.
            if status == "infeasible" && !forced.is_empty() {
                if let Ok(free) = solve_intertwining_with(u, k, peers, &[], cap) {
                    forest = Some(free.swapped_all(&shape, forced)?);
                }
            }
            (status, stats)
        }
    };
    let issues = forest.as_ref().map(validate_forest).unwrap_or_default();
    for issue in &issues {
        let (tree, node, residue, detail) = match issue {
            streambound::topology::ForestIssue::SlotConflict(c) => (
                c.trees.iter().map(|t| t.to_string()).collect::<Vec<_>>().join("+"),
                c.node,
                c.residue.to_string(),
                "slot conflict".to_string(),
            ),
            streambound::topology::ForestIssue::Fanout { node, neighbors } => {
                (String::new(), *node, String::new(), format!("{neighbors} neighbors > k={k}"))
            }
            streambound::topology::ForestIssue::Unreached { node, tree } => {
                (tree.to_string(), *node, String::new(), "not in tree".to_string())
            }
        };
        report.row(vec![status.into(), tree, node.to_string(), residue, detail]);
    }
    if issues.is_empty() {
        report.row(vec![status.into(), String::new(), String::new(), String::new(), "no conflicts".into()]);
    }
    report.notices.push(format!(
        "{status}: {} expansions, {} backtracks",
        stats.expanded, stats.backtracks
    ));
    let conflicts = forest.as_ref().map(check_slot_conflicts).unwrap_or_default();
    report.json = json!({
        "U": u,
        "k": k,
        "P": peers,
        "status": status,
        "search": stats,
        "forced": forced,
        "topology": forest.as_ref().map(Forest::to_doc),
        "conflicts": conflicts,
        "issues": issues,
    });
    Ok(report)
}
