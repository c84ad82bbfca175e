//! Static control-flow graph and edge coverage.
//!
//! Blocks are identified by their start address throughout the crate; the
//! dense `id` on [`BasicBlock`] exists for exports.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::error::IntegrityError;
use crate::hexfmt;
use crate::minivm::{Instruction, Program, INSN_SIZE};

/// A control transfer between two blocks, by start address.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Edge {
    #[serde(with = "crate::hexfmt")]
    pub src: u32,
    #[serde(with = "crate::hexfmt")]
    pub dst: u32,
}

impl Edge {
    pub const fn new(src: u32, dst: u32) -> Self {
        Edge { src, dst }
    }
}

impl fmt::Display for Edge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}->{}", hexfmt::addr(self.src), hexfmt::addr(self.dst))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    Fallthrough,
    Conditional,
    Jump,
    Call,
    Return,
    Halt,
}

impl BlockKind {
    pub fn name(self) -> &'static str {
        match self {
            BlockKind::Fallthrough => "fallthrough",
            BlockKind::Conditional => "conditional",
            BlockKind::Jump => "jump",
            BlockKind::Call => "call",
            BlockKind::Return => "return",
            BlockKind::Halt => "halt",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BasicBlock {
    pub id: usize,
    pub start: u32,
    /// Address of the last instruction.
    pub end: u32,
    pub kind: BlockKind,
}

/// Immutable basic-block graph of a program.
#[derive(Clone, Debug)]
pub struct Cfg {
    blocks: Vec<BasicBlock>,
    index: BTreeMap<u32, usize>,
    edges: BTreeSet<Edge>,
    succ: Vec<Vec<u32>>,
    pred: Vec<Vec<u32>>,
    entry: u32,
    dist: Vec<Option<u32>>,
}

impl Cfg {
    pub fn build(program: &Program) -> Cfg {
        let mut blocks = Vec::new();
        let mut index = BTreeMap::new();
        for (id, start) in program.leaders().enumerate() {
            let end = program.block_end(start);
            let kind = match program.fetch(end).expect("block end is valid") {
                Instruction::Branch { .. } => BlockKind::Conditional,
                Instruction::Jmp { .. } => BlockKind::Jump,
                Instruction::Call { .. } => BlockKind::Call,
                Instruction::Ret => BlockKind::Return,
                Instruction::Halt => BlockKind::Halt,
                _ => BlockKind::Fallthrough,
            };
            index.insert(start, id);
            blocks.push(BasicBlock {
                id,
                start,
                end,
                kind,
            });
        }

        // Successors ignoring returns; calls step over to their return site
        // for the intraprocedural view.
        let local = |b: &BasicBlock| -> Vec<u32> {
            let insn = program.fetch(b.end).expect("valid");
            let next = b.end + INSN_SIZE;
            match *insn {
                Instruction::Branch { target, .. } => vec![target, next],
                Instruction::Jmp { target } => vec![target],
                Instruction::Ret | Instruction::Halt => vec![],
                _ => vec![next],
            }
        };

        let mut edges = BTreeSet::new();
        let mut call_sites: Vec<(u32, u32)> = Vec::new();
        for b in &blocks {
            if let Instruction::Call { target } = *program.fetch(b.end).expect("valid") {
                edges.insert(Edge::new(b.start, target));
                call_sites.push((b.end, target));
            } else {
                for s in local(b) {
                    edges.insert(Edge::new(b.start, s));
                }
            }
        }

        // A RET returns to every caller of each function whose body reaches it.
        let mut body_cache: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
        for &(site, callee) in &call_sites {
            let rets = body_cache.entry(callee).or_insert_with(|| {
                let mut seen = BTreeSet::new();
                let mut queue = VecDeque::from([callee]);
                let mut rets = Vec::new();
                while let Some(a) = queue.pop_front() {
                    if !seen.insert(a) {
                        continue;
                    }
                    let b = &blocks[index[&a]];
                    if b.kind == BlockKind::Return {
                        rets.push(a);
                    }
                    queue.extend(local(b));
                }
                rets
            });
            for &r in rets.iter() {
                edges.insert(Edge::new(r, site + INSN_SIZE));
            }
        }

        let n = blocks.len();
        let mut succ = vec![Vec::new(); n];
        let mut pred = vec![Vec::new(); n];
        for e in &edges {
            succ[index[&e.src]].push(e.dst);
            pred[index[&e.dst]].push(e.src);
        }

        let entry = program.entry();
        let mut dist = vec![None; n];
        dist[index[&entry]] = Some(0);
        let mut queue = VecDeque::from([entry]);
        while let Some(a) = queue.pop_front() {
            let d = dist[index[&a]].expect("queued nodes have a distance");
            for &s in &succ[index[&a]] {
                let slot = &mut dist[index[&s]];
                if slot.is_none() {
                    *slot = Some(d + 1);
                    queue.push_back(s);
                }
            }
        }

        Cfg {
            blocks,
            index,
            edges,
            succ,
            pred,
            entry,
            dist,
        }
    }

    pub fn entry(&self) -> u32 {
        self.entry
    }

    pub fn blocks(&self) -> &[BasicBlock] {
        &self.blocks
    }

    pub fn block(&self, start: u32) -> Option<&BasicBlock> {
        self.index.get(&start).map(|&i| &self.blocks[i])
    }

    pub fn edges(&self) -> &BTreeSet<Edge> {
        &self.edges
    }

    pub fn contains_edge(&self, e: &Edge) -> bool {
        self.edges.contains(e)
    }

    pub fn node_count(&self) -> usize {
        self.blocks.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn successors(&self, start: u32) -> &[u32] {
        self.index.get(&start).map_or(&[], |&i| &self.succ[i])
    }

    pub fn predecessors(&self, start: u32) -> &[u32] {
        self.index.get(&start).map_or(&[], |&i| &self.pred[i])
    }

    /// Shortest edge count from the entry; `None` when unreachable.
    pub fn bfs_distance(&self, start: u32) -> Option<u32> {
        self.index.get(&start).and_then(|&i| self.dist[i])
    }

    pub fn is_reachable(&self, start: u32) -> bool {
        self.bfs_distance(start).is_some()
    }

    /// Edges whose source is reachable from the entry.
    pub fn reachable_edges(&self) -> impl Iterator<Item = &Edge> {
        self.edges.iter().filter(|e| self.is_reachable(e.src))
    }

    pub fn reachable_edge_count(&self) -> usize {
        self.reachable_edges().count()
    }

    /// True when `to` can be reached from `from` along CFG edges.
    pub fn reaches(&self, from: u32, to: u32) -> bool {
        let mut seen = BTreeSet::new();
        let mut queue = VecDeque::from([from]);
        while let Some(a) = queue.pop_front() {
            if a == to {
                return true;
            }
            if seen.insert(a) {
                queue.extend(self.successors(a).iter().copied());
            }
        }
        false
    }

    /// `node id start end kind` and `edge src dst` lines (ids, not addresses).
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for b in &self.blocks {
            let _ = writeln!(
                out,
                "node {} {} {} {}",
                b.id,
                hexfmt::addr(b.start),
                hexfmt::addr(b.end),
                b.kind.name()
            );
        }
        for e in &self.edges {
            let _ = writeln!(out, "edge {} {}", self.index[&e.src], self.index[&e.dst]);
        }
        let _ = writeln!(out, "entry {}", self.index[&self.entry]);
        out
    }

    /// Graphviz rendering.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph cfg {\n  node [shape=circle];\n");
        for b in &self.blocks {
            let label = if b.start == self.entry {
                format!("v0\\n{}", hexfmt::addr(b.start))
            } else {
                hexfmt::addr(b.start)
            };
            let _ = writeln!(out, "  b{} [label=\"{}\"];", b.id, label);
        }
        for e in &self.edges {
            let _ = writeln!(out, "  b{} -> b{};", self.index[&e.src], self.index[&e.dst]);
        }
        out.push_str("}\n");
        out
    }
}

/// Executed edges and the cumulative coverage history.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CoverageMap {
    edges: BTreeSet<Edge>,
    nodes: BTreeSet<u32>,
    history: Vec<u64>,
}

impl CoverageMap {
    pub fn new() -> Self {
        CoverageMap::default()
    }

    /// Merges one execution trace; the entry block counts as covered
    /// whenever any execution was recorded. Returns the number of new edges.
    pub fn record_trace(&mut self, cfg: &Cfg, trace: &[Edge]) -> Result<usize, IntegrityError> {
        if let Some(&edge) = trace.iter().find(|e| !cfg.contains_edge(e)) {
            return Err(IntegrityError { edge });
        }
        self.nodes.insert(cfg.entry());
        let before = self.edges.len();
        for &e in trace {
            if self.edges.insert(e) {
                self.nodes.insert(e.src);
                self.nodes.insert(e.dst);
            }
        }
        Ok(self.edges.len() - before)
    }

    /// Number of edges in `trace` not yet covered.
    pub fn count_new(&self, trace: &[Edge]) -> usize {
        let fresh: BTreeSet<&Edge> = trace.iter().filter(|e| !self.edges.contains(e)).collect();
        fresh.len()
    }

    /// Appends the current cumulative edge count to the history.
    pub fn push_iteration(&mut self) {
        self.history.push(self.edges.len() as u64);
    }

    /// Re-records the latest history entry after out-of-batch admissions.
    pub fn refresh_iteration(&mut self) {
        let n = self.edges.len() as u64;
        match self.history.last_mut() {
            Some(last) => *last = n,
            None => self.history.push(n),
        }
    }

    pub fn history(&self) -> &[u64] {
        &self.history
    }

    pub fn covered_edges(&self) -> &BTreeSet<Edge> {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn is_covered(&self, node: u32) -> bool {
        self.nodes.contains(&node)
    }

    pub fn covered_nodes(&self) -> &BTreeSet<u32> {
        &self.nodes
    }

    pub fn uncovered_nodes(&self, cfg: &Cfg) -> BTreeSet<u32> {
        cfg.blocks()
            .iter()
            .map(|b| b.start)
            .filter(|a| !self.nodes.contains(a))
            .collect()
    }
}
