//! Bound-attaining overlay schedules.
//!
//! With `k = U` a single serialized tree reaches the bound: every node pushes
//! each chunk to its children one after the other, at full upload rate. With
//! `k > U` (and `k` a multiple of `U`) the source rotates successive chunks
//! over `k / U` trees of the same shape, which gives every node a period of
//! `k` slots per tree. The hard part is placing each node in every tree so
//! that its roles never ask for two transmissions in the same slot
//! ("intertwining"); [`solve_intertwining`] does that by backtracking.

use std::collections::{BTreeMap, BinaryHeap};
use std::cmp::Reverse;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type NodeId = u32;
pub const SOURCE: NodeId = 0;

/// Default expansion budget of the intertwining search.
pub const DEFAULT_SEARCH_CAP: u64 = 10_000_000;

/// One distribution tree over nodes `0..=P`, `0` being the source.
///
/// `offset[v]` is the number of slots between a chunk's generation and its
/// complete reception at `v`. Children are kept in serial service order, so
/// the `m`-th child of `v` sits at `offset[v] + m` (the source's children are
/// at `1..`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScheduledTree {
    parent: Vec<Option<NodeId>>,
    offset: Vec<u32>,
    children: Vec<Vec<NodeId>>,
}

impl ScheduledTree {
    /// Greedy serialized construction. The sender with the earliest free
    /// transmission offset (ties to the lower node id) adopts the next node id.
    fn grow(source_fanout: u32, node_fanout: u32, peers: u32) -> Self {
        let n = peers as usize + 1;
        let mut tree = Self {
            parent: vec![None; n],
            offset: vec![0; n],
            children: vec![Vec::new(); n],
        };
        // (offset the next child would get, sender, child slots left)
        let mut ready = BinaryHeap::new();
        if source_fanout > 0 {
            ready.push(Reverse((1u32, SOURCE, source_fanout)));
        }
        let mut next: NodeId = 1;
        while next <= peers {
            let Some(Reverse((at, sender, left))) = ready.pop() else {
                break;
            };
            tree.parent[next as usize] = Some(sender);
            tree.offset[next as usize] = at;
            tree.children[sender as usize].push(next);
            if node_fanout > 0 {
                ready.push(Reverse((at + 1, next, node_fanout)));
            }
            if left > 1 {
                ready.push(Reverse((at + 1, sender, left - 1)));
            }
            next += 1;
        }
        tree
    }

    /// Rebuilds a tree from `(parent, child, offset)` edges over nodes `0..=peers`.
    pub fn from_edges(peers: u32, edges: &[[u32; 3]]) -> Result<Self> {
        let n = peers as usize + 1;
        let bad = |msg: String| Err(Error::InvalidScenario(msg));
        let mut tree = Self {
            parent: vec![None; n],
            offset: vec![0; n],
            children: vec![Vec::new(); n],
        };
        for &[p, c, o] in edges {
            if p as usize >= n || c as usize >= n || c == SOURCE || p == c {
                return bad(format!("edge {p}->{c} outside nodes 0..={peers}"));
            }
            if tree.parent[c as usize].replace(p).is_some() {
                return bad(format!("node {c} has two parents"));
            }
            tree.offset[c as usize] = o;
            tree.children[p as usize].push(c);
        }
        for v in 1..n {
            if tree.parent[v].is_none() {
                return bad(format!("node {v} has no parent"));
            }
        }
        for v in 0..n {
            tree.children[v].sort_by_key(|&c| (tree.offset[c as usize], c));
            let base = tree.offset[v];
            for (m, &c) in tree.children[v].iter().enumerate() {
                if tree.offset[c as usize] != base + m as u32 + 1 {
                    return bad(format!("child {c} of node {v} is not served serially"));
                }
            }
        }
        // Serial offsets strictly increase along edges, so no cycles remain
        // once every node has a parent and offsets are consistent.
        Ok(tree)
    }

    pub fn peers(&self) -> u32 {
        (self.parent.len() - 1) as u32
    }

    pub fn parent(&self, v: NodeId) -> Option<NodeId> {
        self.parent.get(v as usize).copied().flatten()
    }

    pub fn offset(&self, v: NodeId) -> u32 {
        self.offset[v as usize]
    }

    pub fn children(&self, v: NodeId) -> &[NodeId] {
        &self.children[v as usize]
    }

    /// Number of overlay hops from the source.
    pub fn depth(&self, mut v: NodeId) -> u32 {
        let mut d = 0;
        while let Some(p) = self.parent(v) {
            d += 1;
            v = p;
        }
        d
    }

    /// Nodes crossed between the source and `v`, excluding both ends.
    pub fn path(&self, v: NodeId) -> Vec<NodeId> {
        let mut path = Vec::new();
        let mut cur = self.parent(v);
        while let Some(p) = cur {
            if p == SOURCE {
                break;
            }
            path.push(p);
            cur = self.parent(p);
        }
        path.reverse();
        path
    }

    /// `(parent, child, offset)` sorted by offset, then child id.
    pub fn edges(&self) -> Vec<[u32; 3]> {
        let mut edges: Vec<[u32; 3]> = (1..self.parent.len())
            .filter_map(|c| self.parent[c].map(|p| [p, c as u32, self.offset[c]]))
            .collect();
        edges.sort_by_key(|e| (e[2], e[1]));
        edges
    }

    /// `hist[i]` = number of peers completing reception `i` slots after
    /// generation. `hist[0]` is always zero.
    pub fn offset_histogram(&self) -> Vec<u64> {
        let max = self.offset.iter().copied().max().unwrap_or(0) as usize;
        let mut hist = vec![0u64; max + 1];
        for &o in &self.offset[1..] {
            hist[o as usize] += 1;
        }
        hist
    }

    /// Running sum of [`Self::offset_histogram`]: the tree's `N(t)`.
    pub fn cumulative_histogram(&self) -> Vec<u64> {
        self.offset_histogram()
            .into_iter()
            .scan(0, |acc, n| {
                *acc += n;
                Some(*acc)
            })
            .collect()
    }

    /// Same shape with positions renamed: position `x` becomes `map[x]`.
    fn relabel(&self, map: &[NodeId]) -> Self {
        let n = self.parent.len();
        let mut out = Self {
            parent: vec![None; n],
            offset: vec![0; n],
            children: vec![Vec::new(); n],
        };
        for x in 0..n {
            let v = map[x] as usize;
            out.parent[v] = self.parent[x].map(|p| map[p as usize]);
            out.offset[v] = self.offset[x];
            out.children[v] = self.children[x].iter().map(|&c| map[c as usize]).collect();
        }
        out
    }
}

/// Read-only node → offset view of a tree.
pub fn reception_schedule(tree: &ScheduledTree) -> BTreeMap<NodeId, u32> {
    (0..=tree.peers()).map(|v| (v, tree.offset(v))).collect()
}

/// Serialized tree for `k = U`: every node serves up to `U` children in series.
pub fn build_single_tree(capacity: u32, peers: u32) -> Result<ScheduledTree> {
    if capacity == 0 {
        return Err(Error::InvalidScenario("upload capacity U must be at least 1".into()));
    }
    if peers == 0 {
        return Err(Error::EmptyNetwork);
    }
    Ok(ScheduledTree::grow(capacity, capacity, peers))
}

/// `k / U` trees over the same nodes; chunk `c` travels down tree
/// `(c - 1) mod (k / U)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Forest {
    capacity: u32,
    fanout: u32,
    trees: Vec<ScheduledTree>,
}

impl Forest {
    pub fn new(capacity: u32, fanout: u32, trees: Vec<ScheduledTree>) -> Result<Self> {
        check_forest_params(capacity, fanout, true)?;
        if trees.len() != (fanout / capacity) as usize {
            return Err(Error::InvalidScenario(format!(
                "expected k/U = {} trees, got {}",
                fanout / capacity,
                trees.len()
            )));
        }
        let peers = trees[0].peers();
        if trees.iter().any(|t| t.peers() != peers) {
            return Err(Error::InvalidScenario("trees span different node sets".into()));
        }
        Ok(Self {
            capacity,
            fanout,
            trees,
        })
    }

    /// The `k = U` case as a one-tree forest.
    pub fn single(tree: ScheduledTree, capacity: u32) -> Self {
        Self {
            capacity,
            fanout: capacity,
            trees: vec![tree],
        }
    }

    pub fn capacity(&self) -> u32 {
        self.capacity
    }

    pub fn fanout(&self) -> u32 {
        self.fanout
    }

    /// Repetition period of every tree, `k` slots.
    pub fn period(&self) -> u32 {
        self.fanout
    }

    pub fn peers(&self) -> u32 {
        self.trees[0].peers()
    }

    pub fn trees(&self) -> &[ScheduledTree] {
        &self.trees
    }

    pub fn tree_of_chunk(&self, chunk: u32) -> usize {
        (chunk.saturating_sub(1) as usize) % self.trees.len()
    }

    /// Slot residues (mod `k`) at which `v` starts transmissions, with the
    /// tree each one belongs to.
    pub fn transmit_residues(&self, v: NodeId) -> Vec<(u32, usize)> {
        let mut out = Vec::new();
        for (tau, tree) in self.trees.iter().enumerate() {
            for &c in tree.children(v) {
                let start = tau as u32 * self.capacity + tree.offset(c) - 1;
                out.push((start % self.fanout, tau));
            }
        }
        out
    }

    /// Distinct receivers of `v` across all trees.
    pub fn neighbor_count(&self, v: NodeId) -> usize {
        let mut all: Vec<NodeId> = self.trees.iter().flat_map(|t| t.children(v).iter().copied()).collect();
        all.sort_unstable();
        all.dedup();
        all.len()
    }

    pub fn to_doc(&self) -> TopologyDoc {
        TopologyDoc {
            capacity: self.capacity,
            fanout: self.fanout,
            peers: self.peers(),
            trees: self.trees.iter().map(|t| TreeDoc { edges: t.edges() }).collect(),
        }
    }

    pub fn from_doc(doc: &TopologyDoc) -> Result<Self> {
        let trees = doc
            .trees
            .iter()
            .map(|t| ScheduledTree::from_edges(doc.peers, &t.edges))
            .collect::<Result<Vec<_>>>()?;
        if doc.capacity == doc.fanout && trees.len() == 1 {
            return Ok(Self::single(trees.into_iter().next().expect("one tree"), doc.capacity));
        }
        Self::new(doc.capacity, doc.fanout, trees)
    }
}

/// JSON shape `{U, k, P, trees: [{edges: [[parent, child, offset], ...]}]}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopologyDoc {
    #[serde(rename = "U")]
    pub capacity: u32,
    #[serde(rename = "k")]
    pub fanout: u32,
    #[serde(rename = "P")]
    pub peers: u32,
    pub trees: Vec<TreeDoc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeDoc {
    pub edges: Vec<[u32; 3]>,
}

/// Two or more transmissions of one node falling on the same slot residue.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotConflict {
    pub node: NodeId,
    pub residue: u32,
    pub trees: Vec<usize>,
}

/// All residue clashes in the forest; empty iff every node's transmissions
/// fall on pairwise distinct slots modulo `k`.
pub fn check_slot_conflicts(forest: &Forest) -> Vec<SlotConflict> {
    let mut out = Vec::new();
    for v in 0..=forest.peers() {
        let mut by_residue: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (r, tau) in forest.transmit_residues(v) {
            by_residue.entry(r).or_default().push(tau);
        }
        for (residue, trees) in by_residue {
            if trees.len() > 1 {
                out.push(SlotConflict {
                    node: v,
                    residue,
                    trees,
                });
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ForestIssue {
    SlotConflict(SlotConflict),
    /// A node delivers to more than `k` distinct neighbors.
    Fanout { node: NodeId, neighbors: usize },
    /// A peer is missing from a tree.
    Unreached { node: NodeId, tree: usize },
}

/// Residue conflicts, fan-out overruns and missing memberships.
pub fn validate_forest(forest: &Forest) -> Vec<ForestIssue> {
    let mut issues: Vec<ForestIssue> = check_slot_conflicts(forest)
        .into_iter()
        .map(ForestIssue::SlotConflict)
        .collect();
    for v in 0..=forest.peers() {
        let neighbors = forest.neighbor_count(v);
        if neighbors > forest.fanout as usize {
            issues.push(ForestIssue::Fanout { node: v, neighbors });
        }
    }
    for (tau, tree) in forest.trees.iter().enumerate() {
        for v in 1..=forest.peers() {
            if tree.parent(v).is_none() {
                issues.push(ForestIssue::Unreached { node: v, tree: tau });
            }
        }
    }
    issues
}

fn check_forest_params(capacity: u32, fanout: u32, allow_equal: bool) -> Result<()> {
    if capacity == 0 {
        return Err(Error::InvalidScenario("upload capacity U must be at least 1".into()));
    }
    if fanout < capacity || (!allow_equal && fanout == capacity) {
        return Err(Error::InvalidScenario(format!(
            "forest needs k > U, got U={capacity} k={fanout}"
        )));
    }
    if fanout % capacity != 0 {
        return Err(Error::InvalidScenario(format!(
            "k={fanout} is not a multiple of U={capacity}"
        )));
    }
    if fanout > MAX_SEARCH_FANOUT {
        return Err(Error::InvalidScenario(format!(
            "fan-out above {MAX_SEARCH_FANOUT} is not supported"
        )));
    }
    Ok(())
}

/// Residue sets are kept as `u128` bit masks.
const MAX_SEARCH_FANOUT: u32 = 128;

/// Shape shared by every tree of a forest: source fan-out `U` per chunk,
/// node fan-out `k`.
pub fn forest_shape(capacity: u32, fanout: u32, peers: u32) -> Result<ScheduledTree> {
    check_forest_params(capacity, fanout, true)?;
    if peers == 0 {
        return Err(Error::EmptyNetwork);
    }
    Ok(ScheduledTree::grow(capacity, fanout, peers))
}

/// Builds the first tree and intertwines the remaining `k / U - 1` ones.
pub fn build_forest(capacity: u32, fanout: u32, peers: u32) -> Result<Forest> {
    Ok(solve_intertwining(capacity, fanout, peers)?.forest)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchStats {
    /// Placements accepted by the constraint checks.
    pub expanded: u64,
    /// Placements undone after their subtree failed.
    pub backtracks: u64,
}

/// Pins node `node` to structural position `position` of tree `tree`
/// (`tree >= 1`; tree 0 uses the identity placement).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForcedPlacement {
    pub tree: usize,
    pub position: NodeId,
    pub node: NodeId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntertwineAssignment {
    /// `placements[tau][x]` = node at structural position `x` of tree `tau`.
    /// Tree 0 is the identity.
    pub placements: Vec<Vec<NodeId>>,
    pub stats: SearchStats,
    pub forest: Forest,
}

impl IntertwineAssignment {
    /// Forest obtained by moving `node` into `position` of tree `tree`,
    /// swapping with whoever held it. Used to probe bad placements.
    pub fn swapped(&self, shape: &ScheduledTree, forced: ForcedPlacement) -> Result<Forest> {
        self.swapped_all(shape, &[forced])
    }

    /// [`swapped`](Self::swapped) applied for each placement in turn.
    pub fn swapped_all(&self, shape: &ScheduledTree, forced: &[ForcedPlacement]) -> Result<Forest> {
        let mut placements = self.placements.clone();
        for f in forced {
            let Some(map) = placements.get_mut(f.tree) else {
                return Err(Error::InvalidScenario(format!("no tree {}", f.tree)));
            };
            let (x, v) = (f.position as usize, f.node);
            if x == 0 || x >= map.len() || v == SOURCE || v as usize >= map.len() {
                return Err(Error::InvalidScenario("forced placement outside the network".into()));
            }
            let old = map.iter().position(|&n| n == v).expect("placements are permutations");
            map.swap(x, old);
        }
        let trees = placements.iter().map(|m| shape.relabel(m)).collect();
        Forest::new(self.forest.capacity, self.forest.fanout, trees)
    }
}

/// Why the intertwining search returned no forest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SearchFailure {
    /// Every placement was tried: no valid forest exists for this `P` (under
    /// the given forced placements).
    Infeasible(SearchStats),
    /// The expansion budget ran out before the search finished.
    Aborted(SearchStats),
}

impl std::fmt::Display for SearchFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let (what, s) = match self {
            SearchFailure::Infeasible(s) => ("no valid intertwining exists", s),
            SearchFailure::Aborted(s) => ("search aborted at the expansion cap", s),
        };
        write!(f, "{what} ({} expansions, {} backtracks)", s.expanded, s.backtracks)
    }
}

impl From<SearchFailure> for Error {
    fn from(f: SearchFailure) -> Self {
        match f {
            SearchFailure::Infeasible(stats) => Error::Infeasible(stats),
            SearchFailure::Aborted(stats) => Error::SearchAborted(stats),
        }
    }
}

/// [`solve_intertwining_with`] without forced placements and the default cap.
pub fn solve_intertwining(capacity: u32, fanout: u32, peers: u32) -> Result<IntertwineAssignment> {
    solve_intertwining_with(capacity, fanout, peers, &[], DEFAULT_SEARCH_CAP)
}

/// Depth-first search over node placements in trees `1..k/U`.
///
/// Positions are visited tree by tree in offset order; candidates in ascending
/// node id. A placement is rejected when it gives the node a transmission
/// residue it already uses, or pushes its parent over `k` distinct receivers.
/// The first solution found is therefore the lexicographically least one.
pub fn solve_intertwining_with(
    capacity: u32,
    fanout: u32,
    peers: u32,
    forced: &[ForcedPlacement],
    cap: u64,
) -> Result<IntertwineAssignment> {
    check_forest_params(capacity, fanout, true)?;
    if peers == 0 {
        return Err(Error::EmptyNetwork);
    }
    let shape = ScheduledTree::grow(capacity, fanout, peers);
    let trees = (fanout / capacity) as usize;
    let mut search = Search::new(&shape, capacity, fanout, trees, cap);
    for f in forced {
        if f.tree == 0 || f.tree >= trees || f.position == 0 || f.position > peers || f.node == 0 || f.node > peers
        {
            return Err(Error::InvalidScenario(format!(
                "forced placement {f:?} is outside trees 1..{trees} / nodes 1..={peers}"
            )));
        }
        search.force(f.tree, f.position, f.node)?;
    }
    match search.run() {
        Ok(()) => {
            let placements = search.placements;
            let forest_trees = placements.iter().map(|m| shape.relabel(m)).collect();
            let forest = Forest::new(capacity, fanout, forest_trees)?;
            Ok(IntertwineAssignment {
                placements,
                stats: search.stats,
                forest,
            })
        }
        Err(failure) => Err(failure.into()),
    }
}

struct Search<'a> {
    shape: &'a ScheduledTree,
    fanout: u32,
    trees: usize,
    cap: u64,
    stats: SearchStats,
    placements: Vec<Vec<NodeId>>,
    // per tree: node -> position, 0 when unplaced
    position_of: Vec<Vec<NodeId>>,
    // per tree: position -> forced node
    forced: Vec<Vec<Option<NodeId>>>,
    // per tree: node is reserved by a forced placement
    reserved: Vec<Vec<bool>>,
    residues: Vec<u128>,
    neighbors: Vec<Vec<NodeId>>,
    // per position: residue mask for each tree
    position_mask: Vec<Vec<u128>>,
}

enum Step {
    Done,
    Exhausted,
}

impl<'a> Search<'a> {
    fn new(shape: &'a ScheduledTree, capacity: u32, fanout: u32, trees: usize, cap: u64) -> Self {
        let n = shape.parent.len();
        let identity: Vec<NodeId> = (0..n as NodeId).collect();
        let mut placements = vec![identity.clone()];
        placements.extend((1..trees).map(|_| vec![0; n]));
        let mut position_of = vec![identity];
        position_of.extend((1..trees).map(|_| vec![0; n]));

        let position_mask: Vec<Vec<u128>> = (0..n)
            .map(|x| {
                (0..trees)
                    .map(|tau| {
                        shape.children[x].iter().fold(0u128, |m, &c| {
                            let start = tau as u32 * capacity + shape.offset[c as usize] - 1;
                            m | 1u128 << (start % fanout)
                        })
                    })
                    .collect()
            })
            .collect();
        let residues = (0..n).map(|x| position_mask[x][0]).collect();
        let neighbors = shape.children.clone();

        Self {
            shape,
            fanout,
            trees,
            cap,
            stats: SearchStats::default(),
            placements,
            position_of,
            forced: vec![vec![None; n]; trees],
            reserved: vec![vec![false; n]; trees],
            residues,
            neighbors,
            position_mask,
        }
    }

    fn force(&mut self, tree: usize, position: NodeId, node: NodeId) -> Result<()> {
        if self.forced[tree][position as usize].is_some() || self.reserved[tree][node as usize] {
            return Err(Error::InvalidScenario(format!(
                "conflicting forced placements in tree {tree}"
            )));
        }
        self.forced[tree][position as usize] = Some(node);
        self.reserved[tree][node as usize] = true;
        Ok(())
    }

    fn run(&mut self) -> std::result::Result<(), SearchFailure> {
        if self.trees == 1 {
            return Ok(());
        }
        match self.descend(1, 1) {
            Ok(Step::Done) => Ok(()),
            Ok(Step::Exhausted) => Err(SearchFailure::Infeasible(self.stats)),
            Err(()) => Err(SearchFailure::Aborted(self.stats)),
        }
    }

    // Err(()) signals the expansion cap.
    fn descend(&mut self, tree: usize, position: usize) -> std::result::Result<Step, ()> {
        let n = self.shape.parent.len();
        if position == n {
            if tree + 1 == self.trees {
                return Ok(Step::Done);
            }
            return self.descend(tree + 1, 1);
        }
        let candidates: Vec<NodeId> = match self.forced[tree][position] {
            Some(v) => vec![v],
            None => (1..n as NodeId)
                .filter(|&v| self.position_of[tree][v as usize] == 0 && !self.reserved[tree][v as usize])
                .collect(),
        };
        for v in candidates {
            let Some(undo) = self.place(tree, position, v) else {
                continue;
            };
            self.stats.expanded += 1;
            if self.stats.expanded > self.cap {
                return Err(());
            }
            match self.descend(tree, position + 1)? {
                Step::Done => return Ok(Step::Done),
                Step::Exhausted => {
                    self.stats.backtracks += 1;
                    self.unplace(tree, position, v, undo);
                }
            }
        }
        Ok(Step::Exhausted)
    }

    /// Returns whether the parent gained `v` as a new neighbor, or `None` if
    /// the placement is inadmissible.
    fn place(&mut self, tree: usize, position: usize, v: NodeId) -> Option<bool> {
        let mask = self.position_mask[position][tree];
        if self.residues[v as usize] & mask != 0 {
            return None;
        }
        let fanout = self.fanout as usize;
        let positions = self.shape.children[position].len();
        if positions > 0 {
            // Children beyond the remaining neighbor budget must be nodes v
            // already serves that are still free in this tree.
            let budget = fanout - self.neighbors[v as usize].len().min(fanout);
            if positions > budget {
                let reusable = self.neighbors[v as usize]
                    .iter()
                    .filter(|&&w| self.position_of[tree][w as usize] == 0)
                    .count();
                if reusable < positions - budget {
                    return None;
                }
            }
        }
        let parent_pos = self.shape.parent[position].expect("non-source position");
        let parent = self.placements[tree][parent_pos as usize];
        let known = self.neighbors[parent as usize].contains(&v);
        if !known && self.neighbors[parent as usize].len() >= fanout {
            return None;
        }
        if !known {
            self.neighbors[parent as usize].push(v);
        }
        self.residues[v as usize] |= mask;
        self.placements[tree][position] = v;
        self.position_of[tree][v as usize] = position as NodeId;
        Some(!known)
    }

    fn unplace(&mut self, tree: usize, position: usize, v: NodeId, added: bool) {
        let parent_pos = self.shape.parent[position].expect("non-source position");
        let parent = self.placements[tree][parent_pos as usize];
        if added {
            let popped = self.neighbors[parent as usize].pop();
            debug_assert_eq!(popped, Some(v));
        }
        self.residues[v as usize] &= !self.position_mask[position][tree];
        self.placements[tree][position] = 0;
        self.position_of[tree][v as usize] = 0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fig3() -> ScheduledTree {
        build_single_tree(2, 19).unwrap()
    }

    #[test]
    fn serial_tree_histogram() {
        assert_eq!(fig3().offset_histogram(), [0, 1, 2, 3, 5, 8]);
        assert_eq!(fig3().cumulative_histogram(), [0, 1, 3, 6, 11, 19]);
    }

    #[test]
    fn serial_tree_first_levels() {
        let t = build_single_tree(2, 3).unwrap();
        assert_eq!(t.offset(1), 1);
        assert_eq!((t.offset(2), t.offset(3)), (2, 2));
        assert_eq!(t.parent(3), Some(1));
        let one = build_single_tree(3, 1).unwrap();
        assert_eq!(one.offset(1), 1);
        assert_eq!(one.children(SOURCE), [1]);
    }

    #[test]
    fn serial_tree_wiring_for_nineteen_peers() {
        let t = fig3();
        assert_eq!(t.children(SOURCE), [1, 2]);
        assert_eq!(t.children(1), [3, 4]);
        assert_eq!(t.children(2), [5, 7]);
        assert_eq!(t.path(15), [2, 7]);
        assert_eq!(t.path(19), [1, 3, 6, 11]);
        let sched = reception_schedule(&t);
        assert_eq!(sched[&15], 5);
        assert_eq!(sched[&19], 5);
        assert_eq!(sched[&SOURCE], 0);
        // Equal delay over unequal hop counts.
        assert_ne!(t.depth(15), t.depth(19));
    }

    #[test]
    fn serial_children_offsets() {
        let t = build_single_tree(3, 200).unwrap();
        for v in 0..=200 {
            assert!(t.children(v).len() <= 3);
            for (m, &c) in t.children(v).iter().enumerate() {
                assert_eq!(t.offset(c), t.offset(v) + m as u32 + 1);
            }
        }
    }

    #[test]
    fn rejects_empty_network() {
        assert!(matches!(build_single_tree(2, 0), Err(Error::EmptyNetwork)));
        assert!(build_forest(2, 4, 0).is_err());
    }

    #[test]
    fn forest_parameter_checks() {
        assert!(build_forest(2, 3, 10).is_err());
        assert!(build_forest(3, 2, 10).is_err());
        assert!(solve_intertwining(2, 4, 24).is_ok());
    }

    #[test]
    fn forest_shape_for_twenty_four_peers() {
        let shape = forest_shape(2, 4, 24).unwrap();
        assert_eq!(shape.offset_histogram(), [0, 1, 2, 3, 6, 12]);
        assert_eq!(shape.children(1), [3, 4, 7, 13]);
        assert_eq!(shape.children(2), [5, 8, 14]);
        assert_eq!(shape.children(5), [11, 17]);
    }

    #[test]
    fn forest_24_is_valid() {
        let a = solve_intertwining(2, 4, 24).unwrap();
        assert_eq!(a.forest.trees().len(), 2);
        assert!(validate_forest(&a.forest).is_empty());
        for tree in a.forest.trees() {
            assert_eq!(tree.offset_histogram(), [0, 1, 2, 3, 6, 12]);
        }
        // Even chunks enter through 13 and 14.
        assert_eq!(a.forest.trees()[1].children(SOURCE), [13, 14]);
    }

    #[test]
    fn tiny_forest() {
        let a = solve_intertwining(2, 4, 2).unwrap();
        let f = &a.forest;
        for tree in f.trees() {
            let mut kids = tree.children(SOURCE).to_vec();
            kids.sort();
            assert_eq!(kids, [1, 2]);
        }
        assert!(check_slot_conflicts(f).is_empty());
    }

    #[test]
    fn forced_placement_conflicts_at_residue_two() {
        // Node 2 serves at offsets 2, 3, 4 of the odd tree; moving it onto an
        // offset-4 position with one child in the even tree adds a transmission
        // at 2 + 4, which lands on residue 2 again.
        let shape = forest_shape(2, 4, 24).unwrap();
        let a = solve_intertwining(2, 4, 24).unwrap();
        let probe = ForcedPlacement {
            tree: 1,
            position: 7,
            node: 2,
        };
        let forest = a.swapped(&shape, probe).unwrap();
        let conflicts = check_slot_conflicts(&forest);
        assert!(
            conflicts.iter().any(|c| c.node == 2 && c.residue == 2 && c.trees == [0, 1]),
            "{conflicts:?}"
        );
    }

    #[test]
    fn forced_bad_placement_is_pruned() {
        // Node 5 already serves two receivers; the offset-2 position of the
        // even tree would add three more.
        let forced = [ForcedPlacement {
            tree: 1,
            position: 3,
            node: 5,
        }];
        let err = solve_intertwining_with(2, 4, 24, &forced, DEFAULT_SEARCH_CAP).unwrap_err();
        assert!(matches!(err, Error::Infeasible(_)), "{err:?}");

        let shape = forest_shape(2, 4, 24).unwrap();
        let a = solve_intertwining(2, 4, 24).unwrap();
        let issues = validate_forest(&a.swapped(&shape, forced[0]).unwrap());
        assert!(issues.iter().any(|i| matches!(
            i,
            ForestIssue::Fanout { node: 5, .. } | ForestIssue::SlotConflict(SlotConflict { node: 5, .. })
        )));
    }

    #[test]
    fn single_tree_forest_has_no_conflicts() {
        let f = Forest::single(build_single_tree(3, 100).unwrap(), 3);
        assert!(check_slot_conflicts(&f).is_empty());
        assert!(validate_forest(&f).is_empty());
    }

    #[test]
    fn search_cap_aborts() {
        let err = solve_intertwining_with(2, 4, 24, &[], 3).unwrap_err();
        assert!(matches!(err, Error::SearchAborted(s) if s.expanded > 3), "{err:?}");
    }

    #[test]
    fn doc_round_trip() {
        let a = solve_intertwining(2, 4, 24).unwrap();
        let doc = a.forest.to_doc();
        let json = serde_json::to_string(&doc).unwrap();
        assert!(json.starts_with(r#"{"U":2,"k":4,"P":24,"trees":[{"edges":[[0,1,1],"#));
        let back = Forest::from_doc(&serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(back, a.forest);
    }

    #[test]
    fn from_edges_rejects_broken_trees() {
        assert!(ScheduledTree::from_edges(2, &[[0, 1, 1]]).is_err());
        assert!(ScheduledTree::from_edges(2, &[[0, 1, 1], [0, 2, 3]]).is_err());
        assert!(ScheduledTree::from_edges(2, &[[0, 1, 1], [1, 2, 2], [0, 2, 2]]).is_err());
        assert!(ScheduledTree::from_edges(2, &[[0, 1, 1], [0, 2, 2]]).is_ok());
    }
}
