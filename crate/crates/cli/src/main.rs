use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use streambound::fib::Fanout;
use streambound::topology::ForcedPlacement;

mod commands;
mod report;

use report::{Failure, Format};

/// Delay bounds and bound-attaining schedules for chunk-based P2P live streaming.
///
/// Times are in units of T*, the time a peer needs to upload one chunk at full
/// rate. Exit status: 0 ok, 1 I/O error, 2 usage error, 3 bound or admissibility
/// violation, 4 infeasible intertwining, 5 integer overflow, 6 search aborted.
#[derive(Parser, Debug)]
#[command(name = "streambound", version, about, long_about)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    #[command(flatten)]
    common: Common,
}

#[derive(clap::Args, Debug, Clone)]
pub struct Common {
    /// Normalized upload capacity U
    #[arg(long = "U", global = true)]
    pub capacity: Option<u32>,

    /// Neighbor fan-out k, an integer or "inf"
    #[arg(long = "k", global = true)]
    pub fanout: Option<Fanout>,

    /// Number of peers P, the source excluded
    #[arg(long = "P", global = true)]
    pub peers: Option<u32>,

    /// Last time in the table
    #[arg(long, global = true)]
    pub t_max: Option<u64>,

    /// Chunks generated by the source
    #[arg(long, global = true, default_value_t = 10)]
    pub chunks: u32,

    /// Seed of the random strategy
    #[arg(long, global = true, default_value_t = 1)]
    pub seed: u64,

    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    pub format: Format,

    /// Write the result here instead of standard output
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// N̄(t) table: exact bound, asymptotic form and the unlimited-fan-out bound
    Bound,
    /// Fibonacci constants phi_k and Q_k(phi_k)
    Constants {
        #[arg(long, default_value_t = 6)]
        k_max: u32,
    },
    /// Single serialized tree (k = U) and its completion-offset histogram
    Tree,
    /// Intertwined forest of k/U trees and the shared offset histogram
    Forest {
        /// Expansion budget of the intertwining search
        #[arg(long, default_value_t = streambound::topology::DEFAULT_SEARCH_CAP)]
        cap: u64,
    },
    /// Run a strategy and compare N(t) against the bound
    Simulate {
        #[arg(long, value_enum)]
        strategy: StrategyName,
        /// Slots to simulate
        #[arg(long, default_value_t = 40)]
        horizon: u64,
        /// Also write every transmission as JSON lines
        #[arg(long)]
        trace_out: Option<PathBuf>,
    },
    /// Serial k=U, serial k=2U, serial k=inf and parallel k=U side by side
    Compare,
    /// Solve the tree intertwining problem and report slot conflicts
    Intertwine {
        #[arg(long, default_value_t = streambound::topology::DEFAULT_SEARCH_CAP)]
        cap: u64,
        /// Pin a node: TREE:POSITION:NODE, trees counted from 0
        #[arg(long, value_parser = parse_forced)]
        force_place: Vec<ForcedPlacement>,
    },
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum StrategyName {
    SerialTree,
    SerialForest,
    Parallel,
    Snowball,
    Greedy,
    Random,
}

fn parse_forced(s: &str) -> Result<ForcedPlacement, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let [tree, position, node] = parts[..] else {
        return Err(format!("expected TREE:POSITION:NODE, got {s:?}"));
    };
    let num = |x: &str| x.trim().parse::<u32>().map_err(|e| format!("{x:?}: {e}"));
    Ok(ForcedPlacement {
        tree: num(tree)? as usize,
        position: num(position)?,
        node: num(node)?,
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let c = &cli.common;
    let result = match &cli.command {
        Command::Bound => commands::bound(c),
        Command::Constants { k_max } => commands::constants(*k_max),
        Command::Tree => commands::tree(c),
        Command::Forest { cap } => commands::forest(c, *cap),
        Command::Simulate {
            strategy,
            horizon,
            trace_out,
        } => commands::simulate(c, *strategy, *horizon, trace_out.as_deref()),
        Command::Compare => commands::compare(c),
        Command::Intertwine { cap, force_place } => commands::intertwine(c, *cap, force_place),
    };
    let outcome = result.and_then(|report| report.emit(c.format, c.out.as_deref()));
    match outcome {
        Ok(code) => code,
        Err(Failure { code, message }) => {
            eprintln!("error: {message}");
            ExitCode::from(code)
        }
    }
}
