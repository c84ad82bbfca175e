//! Frontier constraint pairs and the bounded priority queue.
//!
//! A pair `(s, d)` is a CFG edge from a covered block to an uncovered one.
//! Pairs are scored by the BFS distance of `s` from the entry and kept in a
//! min-heap holding at most `L` pairs.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeSet, BinaryHeap, VecDeque};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::cfg::{Cfg, CoverageMap};
use crate::fuzz::Corpus;
use crate::hexfmt;

pub const DEFAULT_LIMIT: usize = 32;
/// Depth cap for [`TargetMode::Deep`].
pub const DEEP_TARGET_DEPTH: u32 = 8;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetMode {
    /// Aim at the uncovered edge target itself.
    #[default]
    Edge,
    /// Aim at the deepest uncovered node below the edge target.
    Deep,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintPair {
    #[serde(with = "crate::hexfmt")]
    pub src: u32,
    #[serde(with = "crate::hexfmt")]
    pub dst: u32,
    pub score: u32,
    /// Lowest corpus id whose trace visits `src`.
    pub witness: Option<usize>,
    /// Block the symbolic phase tries to reach; `dst` unless in deep mode.
    #[serde(with = "crate::hexfmt")]
    pub goal: u32,
}

impl ConstraintPair {
    fn key(&self) -> (u32, u32, u32) {
        (self.score, self.src, self.dst)
    }
}

impl Ord for ConstraintPair {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key()
            .cmp(&other.key())
            .then_with(|| self.goal.cmp(&other.goal))
            .then_with(|| self.witness.cmp(&other.witness))
    }
}

impl PartialOrd for ConstraintPair {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Score of a pair: the BFS distance of its source, `None` if unreachable.
pub fn score(cfg: &Cfg, src: u32) -> Option<u32> {
    cfg.bfs_distance(src)
}

/// All `(u, v)` edges with `u` covered and `v` uncovered, scored, sorted.
pub fn extract_pairs(cfg: &Cfg, cov: &CoverageMap, corpus: &Corpus) -> Vec<ConstraintPair> {
    extract_pairs_with(cfg, cov, corpus, TargetMode::Edge)
}

pub fn extract_pairs_with(
    cfg: &Cfg,
    cov: &CoverageMap,
    corpus: &Corpus,
    mode: TargetMode,
) -> Vec<ConstraintPair> {
    let mut pairs = Vec::new();
    for e in cfg.edges() {
        if !cov.is_covered(e.src) || cov.is_covered(e.dst) {
            continue;
        }
        let Some(score) = score(cfg, e.src) else {
            log::warn!("dropping pair {e}: source unreachable from the entry");
            continue;
        };
        let goal = match mode {
            TargetMode::Edge => e.dst,
            TargetMode::Deep => deepest_uncovered(cfg, cov, e.dst),
        };
        pairs.push(ConstraintPair {
            src: e.src,
            dst: e.dst,
            score,
            witness: corpus.witness_for(e.src),
            goal,
        });
    }
    pairs.sort();
    pairs
}

fn deepest_uncovered(cfg: &Cfg, cov: &CoverageMap, root: u32) -> u32 {
    let mut best = (0u32, root);
    let mut seen = BTreeSet::from([root]);
    let mut queue = VecDeque::from([(root, 0u32)]);
    while let Some((node, depth)) = queue.pop_front() {
        if depth > best.0 || (depth == best.0 && node < best.1) {
            best = (depth, node);
        }
        if depth == DEEP_TARGET_DEPTH {
            continue;
        }
        for &s in cfg.successors(node) {
            if !cov.is_covered(s) && seen.insert(s) {
                queue.push_back((s, depth + 1));
            }
        }
    }
    best.1
}

/// Min-heap of pairs bounded to `limit` entries.
#[derive(Clone, Debug)]
pub struct FrontierQueue {
    heap: BinaryHeap<Reverse<ConstraintPair>>,
    limit: usize,
}

impl FrontierQueue {
    pub fn new(limit: usize) -> Self {
        assert!(limit >= 1, "queue limit must be at least 1");
        FrontierQueue {
            heap: BinaryHeap::new(),
            limit,
        }
    }

    /// Keeps the `limit` smallest pairs.
    pub fn build(pairs: impl IntoIterator<Item = ConstraintPair>, limit: usize) -> Self {
        let mut all: Vec<ConstraintPair> = pairs.into_iter().collect();
        all.sort();
        all.truncate(limit);
        let mut q = FrontierQueue::new(limit);
        q.heap.extend(all.into_iter().map(Reverse));
        q
    }

    pub fn limit(&self) -> usize {
        self.limit
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn push(&mut self, pair: ConstraintPair) {
        self.heap.push(Reverse(pair));
        if self.heap.len() > self.limit {
            let mut v = std::mem::take(&mut self.heap).into_sorted_vec();
            // Sorted descending by Reverse, so the largest pair comes first.
            v.remove(0);
            self.heap = v.into_iter().collect();
        }
    }

    pub fn peek(&self) -> Option<&ConstraintPair> {
        self.heap.peek().map(|r| &r.0)
    }

    pub fn pop(&mut self) -> Option<ConstraintPair> {
        self.heap.pop().map(|r| r.0)
    }

    /// Pairs in pop order.
    pub fn sorted(&self) -> Vec<ConstraintPair> {
        let mut v: Vec<ConstraintPair> = self.heap.iter().map(|r| r.0).collect();
        v.sort();
        v
    }

    /// `score src dst witnessId` lines in pop order.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for p in self.sorted() {
            let w = p.witness.map_or_else(|| "-".to_string(), |w| w.to_string());
            let _ = writeln!(
                out,
                "{} {} {} {}",
                p.score,
                hexfmt::addr(p.src),
                hexfmt::addr(p.dst),
                w
            );
        }
        out
    }
}

impl Iterator for FrontierQueue {
    type Item = ConstraintPair;

    fn next(&mut self) -> Option<ConstraintPair> {
        self.pop()
    }
}
