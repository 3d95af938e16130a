//! Upper bound on the stream diffusion metric `N(t)`.
//!
//! Time is measured in units of `T*`, the time a node needs to push one chunk
//! to one neighbor using its whole upload bandwidth. A new chunk appears at the
//! source every `T = U * T*`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fib::{Fanout, FibConstant, FibTable};

/// Homogeneous network parameters: normalized upload capacity `U` and the
/// neighbor fan-out `k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Scenario {
    capacity: u32,
    fanout: Fanout,
}

impl Scenario {
    /// Rejects `U = 0`, `k < 2`, and `k < U` (the constructions need every
    /// chunk period to reach `U` distinct receivers).
    pub fn new(capacity: u32, fanout: Fanout) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidScenario("upload capacity U must be at least 1".into()));
        }
        fanout.validate_order()?;
        if let Fanout::Finite(k) = fanout {
            if k < capacity {
                return Err(Error::InvalidScenario(format!(
                    "fan-out k={k} is smaller than upload capacity U={capacity}"
                )));
            }
        }
        Ok(Self { capacity, fanout })
    }

    pub fn finite(capacity: u32, k: u32) -> Result<Self> {
        Self::new(capacity, Fanout::Finite(k))
    }

    pub fn unbounded(capacity: u32) -> Result<Self> {
        Self::new(capacity, Fanout::Unbounded)
    }

    /// `U`
    pub fn capacity(&self) -> u32 {
        self.capacity
    }

    /// `k`
    pub fn fanout(&self) -> Fanout {
        self.fanout
    }

    /// Slot at which chunk `c` (1-based) is generated at the source.
    pub fn generation_slot(&self, chunk: u32) -> u64 {
        u64::from(chunk.saturating_sub(1)) * u64::from(self.capacity)
    }

    fn table(&self, len: usize) -> Result<FibTable> {
        FibTable::with_len(self.fanout, len)
    }
}

fn floor_time(t: f64) -> Result<i64> {
    if !t.is_finite() || t < 0.0 {
        return Err(Error::InvalidTime(t));
    }
    Ok(t.floor() as i64)
}

fn bound_from_table(table: &FibTable, capacity: u32, t: i64) -> Result<u128> {
    let mut total: u128 = 0;
    for j in 1..=i64::from(capacity) {
        let n = t - j + 1;
        let s = table.sum(n).ok_or(Error::Overflow {
            what: "k-step Fibonacci sum",
            index: n,
        })?;
        total = total.checked_add(s).ok_or(Error::Overflow {
            what: "diffusion bound",
            index: t,
        })?;
    }
    Ok(total)
}

/// `N̄(t) = Σ_{j=1..U} S_k(⌊t⌋ - j + 1)`.
///
/// Non-integer times are floored. With an unbounded fan-out this coincides
/// with [`infinite_k_bound`].
pub fn exact_bound(s: &Scenario, t: f64) -> Result<u128> {
    exact_bound_at(s, floor_time(t)?)
}

/// Integer-time form of [`exact_bound`].
pub fn exact_bound_at(s: &Scenario, t: i64) -> Result<u128> {
    let table = s.table(t.max(0) as usize)?;
    bound_from_table(&table, s.capacity, t)
}

/// Closed-form asymptotic approximation of the bound.
///
/// `phi^2 (1 - phi^-U) / (Q (phi - 1)^2) * phi^t - U / (k - 1)`.
pub fn asymptotic_bound(s: &Scenario, t: i64) -> Result<f64> {
    let Fanout::Finite(k) = s.fanout else {
        return Err(Error::InvalidScenario(
            "the asymptotic closed form needs a finite fan-out".into(),
        ));
    };
    let c = FibConstant::new(k)?;
    let u = f64::from(s.capacity);
    let phi = c.phi;
    let lead = phi * phi * (1.0 - phi.powf(-u)) / (c.q_at_phi * (phi - 1.0).powi(2));
    Ok(lead * phi.powf(t as f64) - u / f64::from(k - 1))
}

/// Bound without a neighbor limit: `Σ_{j=1..U} 2^(t-j)`, which is
/// `2^t (1 - 2^-U)` once `t >= U`. Zero for `t < 1`.
pub fn infinite_k_bound(capacity: u32, t: i64) -> Result<u128> {
    if capacity == 0 {
        return Err(Error::InvalidScenario("upload capacity U must be at least 1".into()));
    }
    if t < 1 {
        return Ok(0);
    }
    // (2^m - 1) << (t - m) with m = min(U, t)
    let m = i64::from(capacity).min(t);
    let overflow = Error::Overflow {
        what: "unbounded-fan-out bound",
        index: t,
    };
    if m > 128 {
        return Err(overflow);
    }
    let ones = if m == 128 { u128::MAX } else { (1u128 << m) - 1 };
    let shift = (t - m) as u32;
    if shift >= 128 || ones.leading_zeros() < shift {
        return Err(overflow);
    }
    Ok(ones << shift)
}

/// Smallest integer `t` with `N̄(t) >= peers`: the least possible absolute
/// network delay, in `T*` units, of a network with `peers` receivers.
pub fn min_time_to_reach(s: &Scenario, peers: u64) -> Result<u32> {
    if peers == 0 {
        return Err(Error::EmptyNetwork);
    }
    let mut table = FibTable::new(s.fanout)?;
    let mut t: i64 = 0;
    loop {
        t += 1;
        table.extend_to(t as usize)?;
        if bound_from_table(&table, s.capacity, t)? >= u128::from(peers) {
            return Ok(t as u32);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundFlavor {
    Exact,
    UnboundedK,
}

/// `N̄(t)` sampled at `t = 0..=t_max`, truncated at the first overflow.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundCurve {
    pub scenario: Scenario,
    pub flavor: BoundFlavor,
    /// `samples[t] = N̄(t)`
    pub samples: Vec<u128>,
    /// First `t` whose value no longer fits, if the curve was cut short.
    pub overflow_at: Option<u32>,
}

impl BoundCurve {
    pub fn new(scenario: Scenario, t_max: u32) -> Self {
        let flavor = match scenario.fanout {
            Fanout::Finite(_) => BoundFlavor::Exact,
            Fanout::Unbounded => BoundFlavor::UnboundedK,
        };
        let mut table = FibTable::new(scenario.fanout).expect("scenario order is validated");
        // Overflow in the table only bites at the index that overflowed.
        let _ = table.extend_to(t_max as usize);
        let mut samples = Vec::with_capacity(t_max as usize + 1);
        let mut overflow_at = None;
        for t in 0..=t_max {
            match bound_from_table(&table, scenario.capacity, i64::from(t)) {
                Ok(v) => samples.push(v),
                Err(_) => {
                    overflow_at = Some(t);
                    break;
                }
            }
        }
        Self {
            scenario,
            flavor,
            samples,
            overflow_at,
        }
    }

    pub fn at(&self, t: u32) -> Option<u128> {
        self.samples.get(t as usize).copied()
    }

    pub fn t_max(&self) -> u32 {
        self.samples.len().saturating_sub(1) as u32
    }
}
