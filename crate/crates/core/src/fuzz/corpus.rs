use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::TestInput;
use crate::cfg::Edge;

/// Chance that [`schedule`] picks a favored entry when both kinds exist.
pub const FAVORED_PROBABILITY: f64 = 0.75;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CorpusEntry {
    pub id: usize,
    pub input: TestInput,
    /// Distinct edges of the entry's trace.
    pub edges: BTreeSet<Edge>,
    /// Blocks the trace visits, including the block it started in.
    pub blocks: BTreeSet<u32>,
}

impl CorpusEntry {
    pub fn reaches(&self, block: u32) -> bool {
        self.blocks.contains(&block)
    }
}

/// Ordered test inputs with stable ids (ids are indices).
#[derive(Clone, Debug, Default)]
pub struct Corpus {
    entries: Vec<CorpusEntry>,
    favored: Vec<bool>,
}

impl Corpus {
    pub fn new() -> Self {
        Corpus::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[CorpusEntry] {
        &self.entries
    }

    pub fn get(&self, id: usize) -> Option<&CorpusEntry> {
        self.entries.get(id)
    }

    /// Adds an input with its execution trace and returns the new id.
    pub fn admit(&mut self, input: TestInput, start_block: u32, trace: &[Edge]) -> usize {
        let id = self.entries.len();
        let edges: BTreeSet<Edge> = trace.iter().copied().collect();
        let mut blocks = BTreeSet::from([start_block]);
        for e in &edges {
            blocks.insert(e.src);
            blocks.insert(e.dst);
        }
        self.entries.push(CorpusEntry {
            id,
            input,
            edges,
            blocks,
        });
        self.recompute_favored();
        id
    }

    pub fn is_favored(&self, id: usize) -> bool {
        self.favored.get(id).copied().unwrap_or(false)
    }

    pub fn favored_ids(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.favored[i]).collect()
    }

    /// Lowest id whose trace visits `block`.
    pub fn witness_for(&self, block: u32) -> Option<usize> {
        self.entries.iter().find(|e| e.reaches(block)).map(|e| e.id)
    }

    /// True if any entry's trace visits `block`.
    pub fn any_reaches(&self, block: u32) -> bool {
        self.witness_for(block).is_some()
    }

    // Favored set: every favored entry covers an edge no other favored entry
    // covers. Greedy cover by size (ties by id), then drop redundant picks.
    fn recompute_favored(&mut self) {
        let mut order: Vec<usize> = (0..self.entries.len()).collect();
        order.sort_by_key(|&i| (std::cmp::Reverse(self.entries[i].edges.len()), i));
        let mut covered: BTreeSet<Edge> = BTreeSet::new();
        let mut picked = Vec::new();
        for i in order {
            let e = &self.entries[i];
            if e.edges.iter().any(|x| !covered.contains(x)) {
                covered.extend(e.edges.iter().copied());
                picked.push(i);
            }
        }
        let mut keep: BTreeSet<usize> = picked.iter().copied().collect();
        for &i in picked.iter().rev() {
            let unique = self.entries[i].edges.iter().any(|x| {
                !keep
                    .iter()
                    .any(|&j| j != i && self.entries[j].edges.contains(x))
            });
            if !unique {
                keep.remove(&i);
            }
        }
        self.favored = (0..self.entries.len()).map(|i| keep.contains(&i)).collect();
    }
}

/// Picks the next entry to mutate. A favored entry is chosen with
/// probability [`FAVORED_PROBABILITY`] when the corpus has both kinds.
pub fn schedule(corpus: &Corpus, seed: u64) -> usize {
    assert!(!corpus.is_empty(), "schedule needs a non-empty corpus");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let favored: Vec<usize> = corpus.favored_ids();
    let rest: Vec<usize> = (0..corpus.len())
        .filter(|&i| !corpus.is_favored(i))
        .collect();
    if favored.is_empty() || rest.is_empty() {
        return rng.gen_range(0..corpus.len());
    }
    if rng.gen_bool(FAVORED_PROBABILITY) {
        favored[rng.gen_range(0..favored.len())]
    } else {
        rest[rng.gen_range(0..rest.len())]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e(s: u32, d: u32) -> Edge {
        Edge::new(s, d)
    }

    #[test]
    fn single_entry_always_chosen() {
        let mut c = Corpus::new();
        c.admit(TestInput::seed(vec![0]), 0, &[e(0, 4)]);
        for s in 0..100 {
            assert_eq!(schedule(&c, s), 0);
        }
    }

    #[test]
    fn disjoint_entries_are_both_favored() {
        let mut c = Corpus::new();
        c.admit(TestInput::seed(vec![0]), 0, &[e(0, 4)]);
        c.admit(TestInput::seed(vec![1]), 0, &[e(0, 8)]);
        assert_eq!(c.favored_ids(), vec![0, 1]);
    }

    #[test]
    fn subsumed_entry_is_not_favored() {
        let mut c = Corpus::new();
        c.admit(TestInput::seed(vec![0]), 0, &[e(0, 4)]);
        c.admit(TestInput::seed(vec![1]), 0, &[e(0, 4), e(4, 8)]);
        assert_eq!(c.favored_ids(), vec![1]);
    }

    #[test]
    fn favored_frequency_near_three_quarters() {
        let mut c = Corpus::new();
        c.admit(TestInput::seed(vec![0]), 0, &[e(0, 4)]);
        c.admit(TestInput::seed(vec![1]), 0, &[e(0, 4), e(4, 8)]);
        let hits = (0..10_000u64).filter(|&s| schedule(&c, s) == 1).count();
        let freq = hits as f64 / 10_000.0;
        assert!(freq >= 0.70, "{freq}");
        assert!((freq - FAVORED_PROBABILITY).abs() <= 0.02, "{freq}");
    }

    #[test]
    fn witness_is_lowest_id() {
        let mut c = Corpus::new();
        c.admit(TestInput::seed(vec![0]), 0, &[e(0, 4)]);
        c.admit(TestInput::seed(vec![1]), 0, &[e(0, 8), e(8, 12)]);
        c.admit(TestInput::seed(vec![2]), 0, &[e(0, 8)]);
        assert_eq!(c.witness_for(0), Some(0));
        assert_eq!(c.witness_for(8), Some(1));
        assert_eq!(c.witness_for(16), None);
    }
}
