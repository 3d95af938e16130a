//! Batches of independent simulation runs checked against the bound.
//!
//! With the `parallel` feature (on by default) cases fan out over the rayon
//! pool; without it they run one after another. Results come back in input
//! order either way.

use serde::{Deserialize, Serialize};

use crate::bound::Scenario;
use crate::error::Result;
use crate::fib::Fanout;
use crate::sim::{
    bound_excesses, compute_metrics, simulate, strategy_greedy, strategy_parallel_balanced, strategy_random,
    strategy_serial_forest, strategy_serial_tree, strategy_snowball, validate_capacity, BoundExcess, Strategy,
};
use crate::topology::{build_single_tree, solve_intertwining};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "kebab-case")]
pub enum StrategySpec {
    SerialTree,
    SerialForest,
    Parallel,
    Snowball,
    Greedy,
    Random { seed: u64 },
}

impl StrategySpec {
    pub fn build(&self, scenario: &Scenario, peers: u32) -> Result<Box<dyn Strategy + Send>> {
        let u = scenario.capacity();
        Ok(match *self {
            StrategySpec::SerialTree => Box::new(strategy_serial_tree(&build_single_tree(u, peers)?)),
            StrategySpec::SerialForest => {
                let k = scenario.fanout().finite().unwrap_or(u);
                Box::new(strategy_serial_forest(&solve_intertwining(u, k, peers)?.forest))
            }
            StrategySpec::Parallel => {
                let k = scenario.fanout().finite().unwrap_or(u);
                Box::new(strategy_parallel_balanced(u, k, peers)?)
            }
            StrategySpec::Snowball => Box::new(strategy_snowball(u, peers)),
            StrategySpec::Greedy => Box::new(strategy_greedy(scenario.fanout())),
            StrategySpec::Random { seed } => Box::new(strategy_random(seed)),
        })
    }
}

/// One run to check for dominance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DominanceCase {
    #[serde(rename = "U")]
    pub capacity: u32,
    #[serde(rename = "k")]
    pub fanout: Fanout,
    #[serde(rename = "P")]
    pub peers: u32,
    pub horizon: u64,
    pub chunks: u32,
    pub strategy: StrategySpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseOutcome {
    pub case: DominanceCase,
    pub transmissions: usize,
    pub chunks_used: usize,
    pub d_network: Option<u64>,
    /// Points where `N(t)` or a chunk's diffusion exceeds the bound.
    pub excesses: Vec<BoundExcess>,
    pub capacity_ok: bool,
    /// Set when the run itself failed.
    pub error: Option<String>,
}

impl CaseOutcome {
    pub fn dominated(&self) -> bool {
        self.error.is_none() && self.capacity_ok && self.excesses.is_empty()
    }
}

pub fn run_case(case: &DominanceCase) -> CaseOutcome {
    let failed = |e: crate::Error| CaseOutcome {
        case: *case,
        transmissions: 0,
        chunks_used: 0,
        d_network: None,
        excesses: Vec::new(),
        capacity_ok: false,
        error: Some(e.to_string()),
    };
    let scenario = match Scenario::new(case.capacity, case.fanout) {
        Ok(s) => s,
        Err(e) => return failed(e),
    };
    let mut strategy = match case.strategy.build(&scenario, case.peers) {
        Ok(s) => s,
        Err(e) => return failed(e),
    };
    let trace = match simulate(strategy.as_mut(), &scenario, case.peers, case.horizon, case.chunks) {
        Ok(t) => t,
        Err(e) => return failed(e),
    };
    let metrics = compute_metrics(&trace);
    CaseOutcome {
        case: *case,
        transmissions: trace.transmissions.len(),
        chunks_used: metrics.chunks_used.len(),
        d_network: metrics.d_network,
        excesses: bound_excesses(&metrics, &scenario),
        capacity_ok: validate_capacity(&trace.transmissions, case.capacity).is_ok(),
        error: None,
    }
}

/// Runs every case, in parallel when the `parallel` feature is on.
pub fn run_cases(cases: &[DominanceCase]) -> Vec<CaseOutcome> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        cases.par_iter().map(run_case).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        run_cases_sequential(cases)
    }
}

pub fn run_cases_sequential(cases: &[DominanceCase]) -> Vec<CaseOutcome> {
    cases.iter().map(run_case).collect()
}

/// Random-strategy cases for every `(U, k)` and seed in `seeds`. Peer counts
/// cycle through `peers`.
pub fn random_cases(
    scenarios: &[(u32, u32)],
    seeds: std::ops::Range<u64>,
    peers: &[u32],
    horizon: u64,
    chunks: u32,
) -> Vec<DominanceCase> {
    let mut out = Vec::new();
    for &(u, k) in scenarios {
        for seed in seeds.clone() {
            out.push(DominanceCase {
                capacity: u,
                fanout: Fanout::Finite(k),
                peers: peers[(seed as usize) % peers.len()],
                horizon,
                chunks,
                strategy: StrategySpec::Random { seed },
            });
        }
    }
    out
}
