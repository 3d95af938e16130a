//! Slot-level simulator of chunk dissemination.
//!
//! One slot is `T*`. Chunk `c` appears at the source at slot `(c - 1) U`. A
//! transmission started at slot `s` with duration `d` runs at rate `1/d` of
//! the sender's upload and completes at `s + d`; the receiver may forward the
//! chunk from that slot on. Propagation delay is zero and downlinks are never
//! a bottleneck.
//!
//! The engine decides admissibility, not the strategy: every requested
//! transmission is checked for store-and-forward order, duplicate delivery,
//! the fan-out budget `k`, the source's `U` receivers per chunk and the
//! sender's upload capacity. The first violation aborts the run.

use std::collections::BTreeSet;
use std::fmt;
use std::io::{self, BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bound::{BoundCurve, Scenario};
use crate::error::{Error, Result};
use crate::fib::Fanout;
use crate::topology::{Forest, NodeId, ScheduledTree, SOURCE};

pub type Slot = u64;
pub type ChunkId = u32;

/// Longest admissible transmission, in slots.
pub const MAX_DURATION: u32 = 64;

/// Upload capacity of one node in exact fixed-point units: divisible by every
/// duration up to [`MAX_DURATION`].
pub const CAPACITY_UNITS: u128 = lcm_upto(MAX_DURATION as u128);

const fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

const fn lcm_upto(n: u128) -> u128 {
    let mut acc = 1;
    let mut i = 2;
    while i <= n {
        acc = acc / gcd(acc, i) * i;
        i += 1;
    }
    acc
}

fn units(duration: u32) -> u128 {
    CAPACITY_UNITS / u128::from(duration)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Transmission {
    pub sender: NodeId,
    pub receiver: NodeId,
    pub chunk: ChunkId,
    pub start: Slot,
    pub duration: u32,
}

impl Transmission {
    pub fn serial(sender: NodeId, receiver: NodeId, chunk: ChunkId, start: Slot) -> Self {
        Self {
            sender,
            receiver,
            chunk,
            start,
            duration: 1,
        }
    }

    pub fn end(&self) -> Slot {
        self.start + Slot::from(self.duration)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Violation {
    UnknownNode { transmission: Transmission },
    UnknownChunk { transmission: Transmission },
    SelfDelivery { transmission: Transmission },
    SourceReceives { transmission: Transmission },
    WrongStart { transmission: Transmission, slot: Slot },
    BadDuration { transmission: Transmission },
    /// Sender has not completed reception of the chunk.
    NotHeld { transmission: Transmission },
    /// Receiver already holds or is already receiving the chunk.
    Duplicate { transmission: Transmission },
    /// Sender would exceed `k` distinct receivers.
    Fanout { transmission: Transmission, limit: u32 },
    /// Source would serve a chunk to more than `U` peers.
    SourceQuota { transmission: Transmission, capacity: u32 },
    /// Sender's upload would exceed its capacity.
    Capacity { transmission: Transmission, load_units: u128 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use Violation::*;
        let t = match self {
            UnknownNode { transmission }
            | UnknownChunk { transmission }
            | SelfDelivery { transmission }
            | SourceReceives { transmission }
            | WrongStart { transmission, .. }
            | BadDuration { transmission }
            | NotHeld { transmission }
            | Duplicate { transmission }
            | Fanout { transmission, .. }
            | SourceQuota { transmission, .. }
            | Capacity { transmission, .. } => transmission,
        };
        let what = match self {
            UnknownNode { .. } => "node id outside the network".to_string(),
            UnknownChunk { .. } => "chunk index outside the run".to_string(),
            SelfDelivery { .. } => "sender and receiver coincide".to_string(),
            SourceReceives { .. } => "the source never receives".to_string(),
            WrongStart { slot, .. } => format!("transmissions must start at the current slot {slot}"),
            BadDuration { .. } => format!("duration must be in 1..={MAX_DURATION}"),
            NotHeld { .. } => "store-and-forward: sender does not hold the chunk yet".to_string(),
            Duplicate { .. } => "receiver already has or is receiving the chunk".to_string(),
            Fanout { limit, .. } => format!("fan-out limit k={limit} exceeded"),
            SourceQuota { capacity, .. } => format!("source serves a chunk to more than U={capacity} peers"),
            Capacity { load_units, .. } => format!(
                "upload capacity exceeded (load already {:.4})",
                *load_units as f64 / CAPACITY_UNITS as f64
            ),
        };
        write!(
            f,
            "{what} [{} -> {} chunk {} start {} duration {}]",
            t.sender, t.receiver, t.chunk, t.start, t.duration
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunParams {
    #[serde(rename = "U")]
    pub capacity: u32,
    #[serde(rename = "k")]
    pub fanout: Fanout,
    #[serde(rename = "P")]
    pub peers: u32,
    pub horizon: Slot,
    pub chunks: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Reception {
    Absent,
    Incoming,
    Done(Slot),
}

/// Everything that happened in one run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trace {
    pub params: RunParams,
    /// In admission order.
    pub transmissions: Vec<Transmission>,
    // completion[(chunk - 1) * (P + 1) + node]
    completion: Vec<Option<Slot>>,
}

impl Trace {
    pub fn scenario(&self) -> Scenario {
        Scenario::new(self.params.capacity, self.params.fanout).expect("validated at run start")
    }

    /// Slot at which `node` completed `chunk`, if it did within the horizon.
    pub fn completion(&self, chunk: ChunkId, node: NodeId) -> Option<Slot> {
        if chunk == 0 || chunk > self.params.chunks || node > self.params.peers {
            return None;
        }
        let width = self.params.peers as usize + 1;
        self.completion[(chunk as usize - 1) * width + node as usize]
    }

    pub fn generation_slot(&self, chunk: ChunkId) -> Slot {
        Slot::from(chunk - 1) * Slot::from(self.params.capacity)
    }

    /// One JSON object per line: `sender, receiver, chunk, start, duration`.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> io::Result<()> {
        for t in &self.transmissions {
            serde_json::to_writer(&mut w, t)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Reads transmissions written by [`Trace::write_jsonl`].
pub fn read_jsonl<R: BufRead>(r: R) -> io::Result<Vec<Transmission>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(io::Error::from)?);
    }
    Ok(out)
}

/// Engine state as seen by strategies.
pub struct SlotView<'a> {
    engine: &'a Engine,
}

impl SlotView<'_> {
    pub fn slot(&self) -> Slot {
        self.engine.slot
    }

    pub fn params(&self) -> &RunParams {
        &self.engine.params
    }

    pub fn peers(&self) -> u32 {
        self.engine.params.peers
    }

    pub fn chunks(&self) -> u32 {
        self.engine.params.chunks
    }

    pub fn generation_slot(&self, chunk: ChunkId) -> Slot {
        self.engine.generation_slot(chunk)
    }

    /// Chunks generated so far, oldest first.
    pub fn generated(&self) -> impl Iterator<Item = ChunkId> + '_ {
        (1..=self.engine.params.chunks).take_while(|&c| self.engine.generation_slot(c) <= self.engine.slot)
    }

    pub fn holds(&self, node: NodeId, chunk: ChunkId) -> bool {
        self.engine.holds(node, chunk)
    }

    /// Holds the chunk or is currently receiving it.
    pub fn has_or_incoming(&self, node: NodeId, chunk: ChunkId) -> bool {
        node == SOURCE || self.engine.reception(node, chunk) != Reception::Absent
    }

    pub fn completion(&self, node: NodeId, chunk: ChunkId) -> Option<Slot> {
        match self.engine.reception(node, chunk) {
            Reception::Done(s) => Some(s),
            _ => None,
        }
    }

    /// `(chunk, node)` pairs completed exactly at the current slot.
    pub fn just_completed(&self) -> &[(ChunkId, NodeId)] {
        &self.engine.just_completed
    }

    /// Unused upload capacity of `node` in this slot, in [`CAPACITY_UNITS`].
    pub fn spare_units(&self, node: NodeId) -> u128 {
        CAPACITY_UNITS - self.engine.load(node)
    }

    pub fn is_idle(&self, node: NodeId) -> bool {
        self.engine.load(node) == 0
    }

    /// Distinct receivers `node` has delivered to so far.
    pub fn neighbors(&self, node: NodeId) -> &BTreeSet<NodeId> {
        &self.engine.neighbors[node as usize]
    }

    pub fn fanout(&self) -> Fanout {
        self.engine.params.fanout
    }

    /// Peers the source has served (or is serving) `chunk` to.
    pub fn source_served(&self, chunk: ChunkId) -> u32 {
        self.engine.source_served[chunk as usize - 1]
    }
}

/// Per-slot decision procedure.
pub trait Strategy {
    fn name(&self) -> &str;

    /// Pushes the transmissions to start at `view.slot()`.
    fn decide(&mut self, view: &SlotView<'_>, out: &mut Vec<Transmission>);
}

struct Engine {
    params: RunParams,
    slot: Slot,
    reception: Vec<Reception>,
    // per node: (end slot, units) of running transmissions
    active: Vec<Vec<(Slot, u128)>>,
    neighbors: Vec<BTreeSet<NodeId>>,
    source_served: Vec<u32>,
    // pending[end - slot - 1] holds completions in the future, ring-free
    pending: std::collections::BTreeMap<Slot, Vec<(ChunkId, NodeId)>>,
    just_completed: Vec<(ChunkId, NodeId)>,
    transmissions: Vec<Transmission>,
}

impl Engine {
    fn new(params: RunParams) -> Self {
        let nodes = params.peers as usize + 1;
        Self {
            params,
            slot: 0,
            reception: vec![Reception::Absent; nodes * params.chunks as usize],
            active: vec![Vec::new(); nodes],
            neighbors: vec![BTreeSet::new(); nodes],
            source_served: vec![0; params.chunks as usize],
            pending: Default::default(),
            just_completed: Vec::new(),
            transmissions: Vec::new(),
        }
    }

    fn generation_slot(&self, chunk: ChunkId) -> Slot {
        Slot::from(chunk - 1) * Slot::from(self.params.capacity)
    }

    fn index(&self, node: NodeId, chunk: ChunkId) -> usize {
        (chunk as usize - 1) * (self.params.peers as usize + 1) + node as usize
    }

    fn reception(&self, node: NodeId, chunk: ChunkId) -> Reception {
        if chunk == 0 || chunk > self.params.chunks || node > self.params.peers {
            return Reception::Absent;
        }
        self.reception[self.index(node, chunk)]
    }

    fn holds(&self, node: NodeId, chunk: ChunkId) -> bool {
        if chunk == 0 || chunk > self.params.chunks {
            return false;
        }
        if node == SOURCE {
            return self.generation_slot(chunk) <= self.slot;
        }
        matches!(self.reception(node, chunk), Reception::Done(_))
    }

    fn load(&self, node: NodeId) -> u128 {
        self.active[node as usize]
            .iter()
            .filter(|(end, _)| *end > self.slot)
            .map(|(_, u)| u)
            .sum()
    }

    fn advance_to(&mut self, slot: Slot) {
        self.slot = slot;
        self.just_completed.clear();
        if let Some(done) = self.pending.remove(&slot) {
            for (chunk, node) in done {
                let i = self.index(node, chunk);
                self.reception[i] = Reception::Done(slot);
                self.just_completed.push((chunk, node));
            }
        }
        for a in &mut self.active {
            a.retain(|(end, _)| *end > slot);
        }
    }

    fn admit(&mut self, t: Transmission) -> std::result::Result<(), Violation> {
        let p = &self.params;
        if t.sender > p.peers || t.receiver > p.peers {
            return Err(Violation::UnknownNode { transmission: t });
        }
        if t.chunk == 0 || t.chunk > p.chunks {
            return Err(Violation::UnknownChunk { transmission: t });
        }
        if t.sender == t.receiver {
            return Err(Violation::SelfDelivery { transmission: t });
        }
        if t.receiver == SOURCE {
            return Err(Violation::SourceReceives { transmission: t });
        }
        if t.start != self.slot {
            return Err(Violation::WrongStart {
                transmission: t,
                slot: self.slot,
            });
        }
        if t.duration == 0 || t.duration > MAX_DURATION {
            return Err(Violation::BadDuration { transmission: t });
        }
        if !self.holds(t.sender, t.chunk) {
            return Err(Violation::NotHeld { transmission: t });
        }
        if self.reception(t.receiver, t.chunk) != Reception::Absent {
            return Err(Violation::Duplicate { transmission: t });
        }
        let known = self.neighbors[t.sender as usize].contains(&t.receiver);
        if !known && !p.fanout.admits(self.neighbors[t.sender as usize].len()) {
            return Err(Violation::Fanout {
                transmission: t,
                limit: p.fanout.finite().unwrap_or(u32::MAX),
            });
        }
        if t.sender == SOURCE && self.source_served[t.chunk as usize - 1] >= p.capacity {
            return Err(Violation::SourceQuota {
                transmission: t,
                capacity: p.capacity,
            });
        }
        // Loads never grow after the current slot, so checking it suffices.
        let load = self.load(t.sender);
        if load + units(t.duration) > CAPACITY_UNITS {
            return Err(Violation::Capacity {
                transmission: t,
                load_units: load,
            });
        }

        if t.sender == SOURCE {
            self.source_served[t.chunk as usize - 1] += 1;
        }
        self.neighbors[t.sender as usize].insert(t.receiver);
        self.active[t.sender as usize].push((t.end(), units(t.duration)));
        let i = self.index(t.receiver, t.chunk);
        self.reception[i] = Reception::Incoming;
        self.pending.entry(t.end()).or_default().push((t.chunk, t.receiver));
        self.transmissions.push(t);
        Ok(())
    }

    fn into_trace(self) -> Trace {
        let completion = self
            .reception
            .iter()
            .map(|r| match r {
                Reception::Done(s) => Some(*s),
                _ => None,
            })
            .collect();
        Trace {
            params: self.params,
            transmissions: self.transmissions,
            completion,
        }
    }
}

/// Runs `strategy` for slots `0..horizon`; completions landing exactly on
/// `horizon` are kept, later ones are dropped.
pub fn simulate(
    strategy: &mut dyn Strategy,
    scenario: &Scenario,
    peers: u32,
    horizon: Slot,
    chunks: u32,
) -> Result<Trace> {
    if horizon == 0 {
        return Err(Error::InvalidScenario("horizon must be at least one slot".into()));
    }
    if chunks == 0 {
        return Err(Error::InvalidScenario("at least one chunk is needed".into()));
    }
    let params = RunParams {
        capacity: scenario.capacity(),
        fanout: scenario.fanout(),
        peers,
        horizon,
        chunks,
    };
    let mut engine = Engine::new(params);
    if peers == 0 {
        return Ok(engine.into_trace());
    }
    let mut requested = Vec::new();
    for slot in 0..horizon {
        engine.advance_to(slot);
        requested.clear();
        strategy.decide(&SlotView { engine: &engine }, &mut requested);
        for t in requested.drain(..) {
            engine
                .admit(t)
                .map_err(|violation| Error::Inadmissible { slot, violation })?;
        }
    }
    engine.advance_to(horizon);
    Ok(engine.into_trace())
}

/// Replays fixed per-tree schedules; chunk `c` follows tree `(c - 1) mod T`.
/// Every hop is a full-rate serial transmission.
pub struct SerialReplay {
    name: &'static str,
    // per tree, per start offset: (sender, receiver)
    by_start: Vec<Vec<Vec<(NodeId, NodeId)>>>,
}

impl SerialReplay {
    fn new(name: &'static str, trees: &[ScheduledTree]) -> Self {
        let by_start = trees
            .iter()
            .map(|tree| {
                let mut slots: Vec<Vec<(NodeId, NodeId)>> = Vec::new();
                for [p, c, o] in tree.edges() {
                    let start = (o - 1) as usize;
                    if slots.len() <= start {
                        slots.resize(start + 1, Vec::new());
                    }
                    slots[start].push((p, c));
                }
                slots
            })
            .collect();
        Self { name, by_start }
    }
}

impl Strategy for SerialReplay {
    fn name(&self) -> &str {
        self.name
    }

    fn decide(&mut self, view: &SlotView<'_>, out: &mut Vec<Transmission>) {
        let slot = view.slot();
        let trees = self.by_start.len();
        for chunk in view.generated() {
            let since = (slot - view.generation_slot(chunk)) as usize;
            let schedule = &self.by_start[(chunk as usize - 1) % trees];
            if let Some(hops) = schedule.get(since) {
                out.extend(hops.iter().map(|&(s, r)| Transmission::serial(s, r, chunk, slot)));
            }
        }
    }
}

/// Replays a single serialized tree for every chunk.
pub fn strategy_serial_tree(tree: &ScheduledTree) -> SerialReplay {
    SerialReplay::new("serial-tree", std::slice::from_ref(tree))
}

/// Replays a forest, rotating chunks over its trees.
pub fn strategy_serial_forest(forest: &Forest) -> SerialReplay {
    SerialReplay::new("serial-forest", forest.trees())
}

/// Complete `k`-ary tree in which every node pushes each chunk to all its
/// children at once, sharing its upload equally.
pub struct ParallelBalanced {
    arity: u32,
    peers: u32,
}

/// Balanced tree with `k = U` children per node, parallel transmissions.
pub fn strategy_parallel_balanced(capacity: u32, fanout: u32, peers: u32) -> Result<ParallelBalanced> {
    if capacity == 0 || fanout != capacity {
        return Err(Error::InvalidScenario(format!(
            "the balanced parallel tree needs k = U, got U={capacity} k={fanout}"
        )));
    }
    Ok(ParallelBalanced { arity: fanout, peers })
}

impl ParallelBalanced {
    fn children(&self, v: NodeId) -> std::ops::RangeInclusive<NodeId> {
        let first = u64::from(v) * u64::from(self.arity) + 1;
        let last = (first + u64::from(self.arity) - 1).min(u64::from(self.peers));
        if first > u64::from(self.peers) {
            #[allow(clippy::reversed_empty_ranges)]
            return 1..=0;
        }
        first as NodeId..=last as NodeId
    }

    fn push_batch(&self, v: NodeId, chunk: ChunkId, slot: Slot, out: &mut Vec<Transmission>) {
        let kids = self.children(v);
        let width = kids.clone().count() as u32;
        out.extend(kids.map(|c| Transmission {
            sender: v,
            receiver: c,
            chunk,
            start: slot,
            duration: width,
        }));
    }
}

impl Strategy for ParallelBalanced {
    fn name(&self) -> &str {
        "parallel"
    }

    fn decide(&mut self, view: &SlotView<'_>, out: &mut Vec<Transmission>) {
        let slot = view.slot();
        for chunk in view.generated() {
            if view.generation_slot(chunk) == slot {
                self.push_batch(SOURCE, chunk, slot, out);
            }
        }
        for &(chunk, node) in view.just_completed() {
            self.push_batch(node, chunk, slot, out);
        }
    }
}

/// Peers reached within `t` slots by an unbounded balanced parallel tree of
/// arity `k`: depth `d` completes at slot `d k`, so this is
/// `Σ_{d=1..⌊t/k⌋} k^d`.
pub fn parallel_balanced_reach(arity: u32, t: u64) -> Result<u128> {
    if arity == 0 {
        return Err(Error::InvalidScenario("the balanced tree needs at least one child per node".into()));
    }
    let overflow = Error::Overflow {
        what: "balanced parallel reach",
        index: t as i64,
    };
    let mut total: u128 = 0;
    let mut level: u128 = 1;
    for _ in 0..t / u64::from(arity) {
        level = level.checked_mul(u128::from(arity)).ok_or(overflow.clone())?;
        total = total.checked_add(level).ok_or(overflow.clone())?;
    }
    Ok(total)
}

/// Serial relaying to fresh peers: the source seeds `U` peers per chunk, and
/// every idle holder pushes its oldest incomplete chunk to the lowest-id peer
/// still missing it. With a finite fan-out, a node whose neighbor set is full
/// only serves its existing neighbors.
pub struct Snowball {
    fanout: Fanout,
    name: &'static str,
}

/// Snowball dissemination without a neighbor limit.
pub fn strategy_snowball(_capacity: u32, _peers: u32) -> Snowball {
    Snowball {
        fanout: Fanout::Unbounded,
        name: "snowball",
    }
}

/// Snowball relaying restricted to `k` neighbors per node.
pub fn strategy_greedy(fanout: Fanout) -> Snowball {
    Snowball {
        fanout,
        name: "greedy",
    }
}

impl Strategy for Snowball {
    fn name(&self) -> &str {
        self.name
    }

    fn decide(&mut self, view: &SlotView<'_>, out: &mut Vec<Transmission>) {
        let slot = view.slot();
        let peers = view.peers();
        let chunks: Vec<ChunkId> = view.generated().collect();
        // Lowest peer id not yet holding or receiving each chunk; claims made
        // in this slot are tracked on the side.
        let mut cursor = vec![1 as NodeId; chunks.len()];
        let mut claimed: Vec<BTreeSet<NodeId>> = vec![BTreeSet::new(); chunks.len()];
        let taken = |c: usize, v: NodeId, claimed: &Vec<BTreeSet<NodeId>>| {
            view.has_or_incoming(v, chunks[c]) || claimed[c].contains(&v)
        };
        for sender in 0..=peers {
            if !view.is_idle(sender) {
                continue;
            }
            for (ci, &chunk) in chunks.iter().enumerate() {
                if !view.holds(sender, chunk) {
                    continue;
                }
                if sender == SOURCE && view.source_served(chunk) + claimed_by_source(out, chunk) >= view.params().capacity {
                    continue;
                }
                let neighbors = view.neighbors(sender);
                let receiver = if self.fanout.admits(neighbors.len()) {
                    while cursor[ci] <= peers && taken(ci, cursor[ci], &claimed) {
                        cursor[ci] += 1;
                    }
                    (cursor[ci] <= peers).then_some(cursor[ci])
                } else {
                    neighbors.iter().copied().find(|&v| !taken(ci, v, &claimed))
                };
                if let Some(r) = receiver {
                    claimed[ci].insert(r);
                    out.push(Transmission::serial(sender, r, chunk, slot));
                    break;
                }
            }
        }
    }
}

fn claimed_by_source(out: &[Transmission], chunk: ChunkId) -> u32 {
    out.iter().filter(|t| t.sender == SOURCE && t.chunk == chunk).count() as u32
}

/// Random admissible transmissions: every node with spare upload may start a
/// batch of `m` equal-rate transmissions of random chunks to random eligible
/// peers. Deterministic per seed.
pub struct RandomStrategy {
    rng: ChaCha8Rng,
    activity: f64,
}

pub fn strategy_random(seed: u64) -> RandomStrategy {
    RandomStrategy {
        rng: ChaCha8Rng::seed_from_u64(seed),
        activity: 0.8,
    }
}

impl Strategy for RandomStrategy {
    fn name(&self) -> &str {
        "random"
    }

    fn decide(&mut self, view: &SlotView<'_>, out: &mut Vec<Transmission>) {
        let slot = view.slot();
        let peers = view.peers();
        let capacity = view.params().capacity;
        let fanout = view.fanout();
        let max_batch = fanout.finite().unwrap_or(4).min(MAX_DURATION);
        let chunks: Vec<ChunkId> = view.generated().collect();
        let mut claimed: BTreeSet<(ChunkId, NodeId)> = BTreeSet::new();
        let mut source_extra: Vec<u32> = vec![0; chunks.len()];

        for sender in 0..=peers {
            let mut spare = view.spare_units(sender);
            if spare == 0 || !self.rng.gen_bool(self.activity) {
                continue;
            }
            let held: Vec<usize> = (0..chunks.len()).filter(|&i| view.holds(sender, chunks[i])).collect();
            if held.is_empty() {
                continue;
            }
            // Smallest batch width the spare capacity can carry.
            let min_width = (CAPACITY_UNITS.div_ceil(spare)).max(1) as u32;
            if min_width > max_batch {
                continue;
            }
            let width = self.rng.gen_range(min_width..=max_batch);
            let mut new_neighbors: BTreeSet<NodeId> = BTreeSet::new();
            let mut batch = Vec::new();
            for _ in 0..width {
                let ci = held[self.rng.gen_range(0..held.len())];
                let chunk = chunks[ci];
                if sender == SOURCE && view.source_served(chunk) + source_extra[ci] >= capacity {
                    continue;
                }
                let known = view.neighbors(sender);
                let open = fanout.admits(known.len() + new_neighbors.len());
                let mut pick = None;
                for _ in 0..8 {
                    let candidate = if open || known.is_empty() {
                        self.rng.gen_range(1..=peers)
                    } else {
                        let pool: Vec<NodeId> = known.iter().chain(new_neighbors.iter()).copied().collect();
                        pool[self.rng.gen_range(0..pool.len())]
                    };
                    let fresh_neighbor = !known.contains(&candidate) && !new_neighbors.contains(&candidate);
                    if candidate == sender
                        || view.has_or_incoming(candidate, chunk)
                        || claimed.contains(&(chunk, candidate))
                        || (fresh_neighbor && !open)
                    {
                        continue;
                    }
                    pick = Some(candidate);
                    break;
                }
                let Some(r) = pick else { continue };
                claimed.insert((chunk, r));
                if !known.contains(&r) {
                    new_neighbors.insert(r);
                }
                if sender == SOURCE {
                    source_extra[ci] += 1;
                }
                batch.push((r, chunk));
            }
            // The batch shares the sender's upload equally.
            let width = batch.len() as u32;
            if width == 0 || units(width) * u128::from(width) > spare {
                for (r, chunk) in batch {
                    claimed.remove(&(chunk, r));
                }
                continue;
            }
            for (r, chunk) in batch {
                out.push(Transmission {
                    sender,
                    receiver: r,
                    chunk,
                    start: slot,
                    duration: width,
                });
                spare -= units(width);
            }
        }
    }
}

/// Delay metrics of a trace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Metrics {
    /// `[chunk, node, delay]` for every completed reception.
    pub d: Vec<[u64; 3]>,
    /// `[node, D(p)]` over fully disseminated chunks; empty when none.
    #[serde(rename = "Dp")]
    pub dp: Vec<[u64; 2]>,
    /// `N(t)` for `t = 0..=horizon`, over fully disseminated chunks.
    #[serde(rename = "N_of_t")]
    pub n_of_t: Vec<u64>,
    /// `min {t : N(t) = P}`, `None` when not reached.
    #[serde(rename = "D_network")]
    pub d_network: Option<u64>,
    /// Chunks that reached every peer within the horizon.
    pub chunks_used: Vec<ChunkId>,
    /// Per chunk (index `c - 1`): peers reached within `t` slots of
    /// generation, `t = 0..=horizon`. Counts partially disseminated chunks.
    pub chunk_diffusion: Vec<Vec<u64>>,
}

pub fn compute_metrics(trace: &Trace) -> Metrics {
    let p = trace.params;
    let horizon = p.horizon as usize;
    let mut d = Vec::new();
    let mut chunk_diffusion = vec![vec![0u64; horizon + 1]; p.chunks as usize];
    let mut chunks_used = Vec::new();
    for c in 1..=p.chunks {
        let gen = trace.generation_slot(c);
        let mut reached = 0;
        for v in 1..=p.peers {
            if let Some(done) = trace.completion(c, v) {
                let delay = done - gen;
                d.push([u64::from(c), u64::from(v), delay]);
                reached += 1;
                if (delay as usize) <= horizon {
                    chunk_diffusion[c as usize - 1][delay as usize] += 1;
                }
            }
        }
        let row = &mut chunk_diffusion[c as usize - 1];
        for t in 1..row.len() {
            row[t] += row[t - 1];
        }
        if p.peers > 0 && reached == p.peers {
            chunks_used.push(c);
        }
    }

    let mut dp = Vec::new();
    let mut n_of_t = vec![0u64; horizon + 1];
    if !chunks_used.is_empty() {
        for v in 1..=p.peers {
            let worst = chunks_used
                .iter()
                .map(|&c| trace.completion(c, v).expect("chunk fully disseminated") - trace.generation_slot(c))
                .max()
                .expect("non-empty");
            dp.push([u64::from(v), worst]);
            if (worst as usize) <= horizon {
                n_of_t[worst as usize] += 1;
            }
        }
        for t in 1..n_of_t.len() {
            n_of_t[t] += n_of_t[t - 1];
        }
    }
    let d_network = if chunks_used.is_empty() {
        None
    } else {
        n_of_t.iter().position(|&n| n == u64::from(p.peers)).map(|t| t as u64)
    };
    Metrics {
        d,
        dp,
        n_of_t,
        d_network,
        chunks_used,
        chunk_diffusion,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CapacityViolation {
    /// Concurrent transmissions of one node use more than its upload.
    Overload { node: NodeId, slot: Slot, load_units: u128 },
    SourceQuota { chunk: ChunkId, receivers: u32 },
}

impl CapacityViolation {
    pub fn load(&self) -> Option<f64> {
        match self {
            CapacityViolation::Overload { load_units, .. } => Some(*load_units as f64 / CAPACITY_UNITS as f64),
            CapacityViolation::SourceQuota { .. } => None,
        }
    }
}

/// Recomputes per-node, per-slot upload usage of a set of transmissions, and
/// the source's receivers per chunk, independently of the engine.
pub fn validate_capacity(
    transmissions: &[Transmission],
    capacity: u32,
) -> std::result::Result<(), Vec<CapacityViolation>> {
    use std::collections::BTreeMap;
    let mut usage: BTreeMap<(NodeId, Slot), u128> = BTreeMap::new();
    let mut served: BTreeMap<ChunkId, BTreeSet<NodeId>> = BTreeMap::new();
    let mut bad_duration = Vec::new();
    for t in transmissions {
        if t.duration == 0 || t.duration > MAX_DURATION {
            bad_duration.push(CapacityViolation::Overload {
                node: t.sender,
                slot: t.start,
                load_units: u128::MAX,
            });
            continue;
        }
        for s in t.start..t.end() {
            *usage.entry((t.sender, s)).or_default() += units(t.duration);
        }
        if t.sender == SOURCE {
            served.entry(t.chunk).or_default().insert(t.receiver);
        }
    }
    let mut violations = bad_duration;
    violations.extend(
        usage
            .into_iter()
            .filter(|&(_, u)| u > CAPACITY_UNITS)
            .map(|((node, slot), load_units)| CapacityViolation::Overload { node, slot, load_units }),
    );
    violations.extend(served.into_iter().filter(|(_, r)| r.len() > capacity as usize).map(|(chunk, r)| {
        CapacityViolation::SourceQuota {
            chunk,
            receivers: r.len() as u32,
        }
    }));
    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Verdict {
    Equal,
    Below,
    Violation,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Equal => "EQUAL",
            Verdict::Below => "BELOW",
            Verdict::Violation => "VIOLATION",
        })
    }
}

impl Verdict {
    pub fn of(simulated: u64, bound: u128) -> Self {
        match u128::from(simulated).cmp(&bound) {
            std::cmp::Ordering::Less => Verdict::Below,
            std::cmp::Ordering::Equal => Verdict::Equal,
            std::cmp::Ordering::Greater => Verdict::Violation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerdictRow {
    pub t: u64,
    pub simulated: u64,
    pub bound: u128,
    pub verdict: Verdict,
}

/// Where a trace exceeds the bound: the `N(t)` curve, or any single chunk's
/// diffusion curve.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundExcess {
    /// `None` for the `N(t)` curve, else the chunk.
    pub chunk: Option<ChunkId>,
    pub t: u64,
    pub simulated: u64,
    pub bound: u128,
}

/// `N_sim(t)` against `N̄(t)` for `t = 1..=t_max`.
pub fn compare_with_bound(metrics: &Metrics, scenario: &Scenario, t_max: u64) -> Vec<VerdictRow> {
    let curve = BoundCurve::new(*scenario, t_max as u32);
    (1..=t_max)
        .map(|t| {
            let simulated = metrics
                .n_of_t
                .get(t as usize)
                .or(metrics.n_of_t.last())
                .copied()
                .unwrap_or(0);
            let bound = curve.at(t as u32).unwrap_or(u128::MAX);
            VerdictRow {
                t,
                simulated,
                bound,
                verdict: Verdict::of(simulated, bound),
            }
        })
        .collect()
}

/// Every point where `N(t)` or a chunk's diffusion exceeds the bound.
pub fn bound_excesses(metrics: &Metrics, scenario: &Scenario) -> Vec<BoundExcess> {
    let horizon = metrics.n_of_t.len().saturating_sub(1);
    let curve = BoundCurve::new(*scenario, horizon as u32);
    let mut out = Vec::new();
    let mut scan = |chunk: Option<ChunkId>, series: &[u64]| {
        for (t, &n) in series.iter().enumerate() {
            let bound = curve.at(t as u32).unwrap_or(u128::MAX);
            if u128::from(n) > bound {
                out.push(BoundExcess {
                    chunk,
                    t: t as u64,
                    simulated: n,
                    bound,
                });
            }
        }
    };
    scan(None, &metrics.n_of_t);
    for (i, series) in metrics.chunk_diffusion.iter().enumerate() {
        scan(Some(i as ChunkId + 1), series);
    }
    out
}
