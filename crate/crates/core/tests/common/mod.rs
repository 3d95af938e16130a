//! Reference computations written from the definitions, sharing no code with
//! the library.
#![allow(dead_code)]

/// `F_k(1..=n)` by direct summation of the previous `k` terms; index 0 unused.
pub fn fib_terms(k: usize, n: usize) -> Vec<u128> {
    let mut f = vec![0u128; n + 1];
    for i in 1..=n {
        f[i] = if i == 1 {
            1
        } else {
            (1..=k).filter(|&j| j < i).map(|j| f[i - j]).sum()
        };
    }
    f
}

/// `S_k(n)` for `n` in `0..=len`, with `S_k(n) = 0` for `n <= 0`.
pub fn fib_sums(k: usize, len: usize) -> Vec<u128> {
    let f = fib_terms(k, len);
    let mut s = vec![0u128; len + 1];
    for i in 1..=len {
        s[i] = s[i - 1] + f[i];
    }
    s
}

/// `Σ_{j=1..U} S_k(t - j + 1)`.
pub fn bound(u: usize, k: usize, t: usize) -> u128 {
    let s = fib_sums(k, t);
    (1..=u).filter(|&j| t + 1 > j).map(|j| s[t + 1 - j]).sum()
}

/// New nodes completing a chunk exactly `i` slots after its generation when
/// the serialized schedule attains the bound; `n[0] = 1` stands for the
/// source. While `i <= U` the source still serves the chunk; once `i > k` only
/// the last `k` cohorts have children left.
pub fn new_nodes(u: usize, k: usize, t: usize) -> Vec<u128> {
    let mut n = vec![0u128; t + 1];
    n[0] = 1;
    for i in 1..=t {
        let lo = if i <= u {
            0
        } else if i <= k {
            1
        } else {
            i - k
        };
        n[i] = n[lo..i].iter().sum();
    }
    n
}

/// Peers holding a chunk `t` slots after generation under unlimited fan-out:
/// every holder relays once per slot and the source seeds one peer per slot
/// for the first `U` slots. Capped at `peers`.
pub fn snowball(u: u64, t: u64, peers: u64) -> u64 {
    let mut held: u64 = 0;
    for s in 1..=t {
        let seeded = u64::from(s <= u);
        held = (held.saturating_mul(2) + seeded).min(peers);
    }
    held
}

/// Completion slot of every peer of a complete `k`-ary tree (heap layout,
/// children of `v` are `v k + 1 ..= v k + k`) where each node sends a chunk
/// to all its children at once, sharing upload equally. Index 0 is the source.
pub fn parallel_completion(k: u64, peers: u64) -> Vec<u64> {
    let mut done = vec![0u64; peers as usize + 1];
    for v in 0..=peers {
        let first = v * k + 1;
        if first > peers {
            continue;
        }
        let last = (first + k - 1).min(peers);
        let width = last - first + 1;
        for c in first..=last {
            done[c as usize] = done[v as usize] + width;
        }
    }
    done
}

/// `N(t)` for a balanced parallel tree large enough never to run out of
/// peers: depth `d` holds `k^d` nodes, each level waiting one full batch of
/// `k` slots after its parent level.
pub fn parallel_levels(k: u64, t: u64) -> u128 {
    let mut total: u128 = 0;
    let mut level: u128 = 1;
    let mut slot = 0;
    loop {
        slot += k;
        level *= u128::from(k);
        if slot > t {
            return total;
        }
        total += level;
    }
}
