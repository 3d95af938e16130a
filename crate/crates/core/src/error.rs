use thiserror::Error;

use crate::sim::Violation;
use crate::topology::SearchStats;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("step order k must be at least 2, got {0}")]
    InvalidOrder(u32),

    #[error("{what} overflows 128-bit integers at index {index}")]
    Overflow { what: &'static str, index: i64 },

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("time must be a finite non-negative number, got {0}")]
    InvalidTime(f64),

    #[error("network size must be at least 1")]
    EmptyNetwork,

    #[error("no valid tree intertwining exists ({} expansions, {} backtracks)", .0.expanded, .0.backtracks)]
    Infeasible(SearchStats),

    #[error("intertwining search aborted at the expansion cap ({} expansions)", .0.expanded)]
    SearchAborted(SearchStats),

    #[error("inadmissible transmission at slot {slot}: {violation}")]
    Inadmissible { slot: u64, violation: Violation },
}
