//! k-step Fibonacci sequences, their partial sums and the Fibonacci constants.
//!
//! Indices follow the usual convention for the sequence: `F_k(i) = 0` for
//! `i <= 0`, `F_k(1) = 1` and every later term is the sum of the previous `k`
//! terms. All integer arithmetic is exact on `u128` and overflow is reported
//! instead of wrapping.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Step order of a Fibonacci sequence. The same quantity is the number of
/// overlay neighbors a peer may push chunks to, hence the name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fanout {
    Finite(u32),
    /// No neighbor limit. The sequence degenerates to powers of two.
    Unbounded,
}

impl Fanout {
    pub fn finite(self) -> Option<u32> {
        match self {
            Fanout::Finite(k) => Some(k),
            Fanout::Unbounded => None,
        }
    }

    /// Whether a node with `children` distinct receivers may add another one.
    pub fn admits(self, children: usize) -> bool {
        match self {
            Fanout::Finite(k) => children < k as usize,
            Fanout::Unbounded => true,
        }
    }

    pub(crate) fn validate_order(self) -> Result<Self> {
        match self {
            Fanout::Finite(k) if k < 2 => Err(Error::InvalidOrder(k)),
            other => Ok(other),
        }
    }
}

impl fmt::Display for Fanout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Fanout::Finite(k) => write!(f, "{k}"),
            Fanout::Unbounded => f.write_str("inf"),
        }
    }
}

impl std::str::FromStr for Fanout {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim() {
            "inf" | "infinity" | "unbounded" => Ok(Fanout::Unbounded),
            other => other
                .parse::<u32>()
                .map(Fanout::Finite)
                .map_err(|_| format!("expected an integer or \"inf\", got {other:?}")),
        }
    }
}

/// Memoized `F_k(i)` and `S_k(n)` for `i, n` in `1..=len`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FibTable {
    order: Fanout,
    // values[i - 1] = F_k(i), sums[n - 1] = S_k(n)
    values: Vec<u128>,
    sums: Vec<u128>,
}

impl FibTable {
    pub fn new(order: Fanout) -> Result<Self> {
        Ok(Self {
            order: order.validate_order()?,
            values: Vec::new(),
            sums: Vec::new(),
        })
    }

    /// Table holding every index up to and including `len`.
    pub fn with_len(order: Fanout, len: usize) -> Result<Self> {
        let mut table = Self::new(order)?;
        table.extend_to(len)?;
        Ok(table)
    }

    pub fn order(&self) -> Fanout {
        self.order
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Grows the table to cover indices `1..=len`. On overflow the table keeps
    /// every entry computed before the failing index.
    pub fn extend_to(&mut self, len: usize) -> Result<()> {
        self.values.reserve(len.saturating_sub(self.values.len()));
        while self.values.len() < len {
            let i = self.values.len() + 1;
            let overflow = || Error::Overflow {
                what: "k-step Fibonacci term",
                index: i as i64,
            };
            let next = if i == 1 {
                1
            } else {
                match self.order {
                    Fanout::Finite(k) => {
                        // Running-window form: F(i) = 2 F(i-1) - F(i-1-k).
                        let prev = self.values[i - 2];
                        let dropped = if i > k as usize + 1 { self.values[i - 2 - k as usize] } else { 0 };
                        if i == 2 {
                            1
                        } else {
                            (prev - dropped).checked_add(prev).ok_or_else(overflow)?
                        }
                    }
                    // F_inf(i) is the sum of every earlier term: 2^(i-2).
                    Fanout::Unbounded => self.sums[i - 2],
                }
            };
            let sum = match self.sums.last() {
                Some(s) => s.checked_add(next).ok_or(Error::Overflow {
                    what: "k-step Fibonacci sum",
                    index: i as i64,
                })?,
                None => next,
            };
            self.values.push(next);
            self.sums.push(sum);
        }
        Ok(())
    }

    /// `F_k(i)`; `None` when `i` lies beyond the table.
    pub fn value(&self, i: i64) -> Option<u128> {
        if i <= 0 {
            return Some(0);
        }
        self.values.get(i as usize - 1).copied()
    }

    /// `S_k(n)`; `None` when `n` lies beyond the table.
    pub fn sum(&self, n: i64) -> Option<u128> {
        if n <= 0 {
            return Some(0);
        }
        self.sums.get(n as usize - 1).copied()
    }

    pub fn values(&self) -> &[u128] {
        &self.values
    }

    pub fn sums(&self) -> &[u128] {
        &self.sums
    }
}

fn table_through(order: Fanout, i: i64) -> Result<FibTable> {
    FibTable::with_len(order, i.max(0) as usize)
}

/// `F_k(i)` for a finite step order `k >= 2`.
pub fn fib_k(k: u32, i: i64) -> Result<u128> {
    let table = table_through(Fanout::Finite(k), i)?;
    Ok(table.value(i).expect("table covers i"))
}

/// `S_k(n) = F_k(1) + ... + F_k(n)`, zero for `n <= 0`.
pub fn fib_sum(k: u32, n: i64) -> Result<u128> {
    let table = table_through(Fanout::Finite(k), n)?;
    Ok(table.sum(n).expect("table covers n"))
}

/// Characteristic polynomial `x^k - x^(k-1) - ... - x - 1`, Horner form.
pub fn characteristic(k: u32, x: f64) -> f64 {
    (0..k).fold(1.0, |acc, _| acc * x - 1.0)
}

/// Dominant real root of the characteristic polynomial, in `(1, 2)`.
///
/// Plain bisection on `[1, 2]`: the polynomial is `1 - k` at one end and `1`
/// at the other, and it has a single sign change there. Iterates until the
/// bracket cannot be halved any further in `f64`.
pub fn phi(k: u32) -> Result<f64> {
    Fanout::Finite(k).validate_order()?;
    let (mut lo, mut hi) = (1.0_f64, 2.0_f64);
    loop {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if characteristic(k, mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if characteristic(k, lo).abs() <= characteristic(k, hi).abs() {
        Ok(lo)
    } else {
        Ok(hi)
    }
}

/// Normalizer `Q_k(phi_k)` such that `F_k(n) ~ phi_k^n / Q_k(phi_k)`.
///
/// Closed form `phi ((k + 1) phi - 2k) / (phi - 1)`; it agrees with the five
/// tabulated constants for `k = 2..=6` to five decimals (see the tests).
pub fn q_at_phi(k: u32) -> Result<f64> {
    let p = phi(k)?;
    Ok(q_from_phi(k, p))
}

fn q_from_phi(k: u32, p: f64) -> f64 {
    let k = f64::from(k);
    p * ((k + 1.0) * p - 2.0 * k) / (p - 1.0)
}

/// `phi_k` together with `Q_k(phi_k)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FibConstant {
    pub k: u32,
    pub phi: f64,
    pub q_at_phi: f64,
}

impl FibConstant {
    pub fn new(k: u32) -> Result<Self> {
        let phi = phi(k)?;
        Ok(Self {
            k,
            phi,
            q_at_phi: q_from_phi(k, phi),
        })
    }

    /// Leading-order estimate `phi^n / Q` of `F_k(n)`.
    pub fn approx_term(&self, n: i32) -> f64 {
        self.phi.powi(n) / self.q_at_phi
    }
}
