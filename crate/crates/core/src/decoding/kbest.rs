//! Lazy k-best enumeration over independent positions.
//!
//! Each position has its options sorted best first. A state is the vector
//! of chosen ranks. The successors of a state are the states obtained by
//! bumping one rank at or after its last non-zero rank, which gives every
//! state exactly one parent, so a max-heap emits each sequence once and in
//! order without a visited set.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

/// A token sequence with its separable score.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSequence {
    pub tokens: Vec<usize>,
    pub score: f64,
}

struct Entry {
    score: f64,
    tokens: Vec<usize>,
    ranks: Vec<usize>,
    pivot: usize,
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry {
    // higher score first, then lexicographically smaller tokens
    fn cmp(&self, other: &Self) -> Ordering {
        self.score
            .total_cmp(&other.score)
            .then_with(|| other.tokens.cmp(&self.tokens))
    }
}

/// The `k` best sequences where position `t` picks from `options[t]`.
///
/// `options[t]` lists `(token, score)` pairs sorted by descending score,
/// ties by ascending token. `total` maps per-position scores to the
/// sequence score and must be non-decreasing in each argument.
pub fn kbest_separable(
    options: &[Vec<(usize, f64)>],
    k: usize,
    total: impl Fn(&[f64]) -> f64,
) -> Vec<ScoredSequence> {
    if options.is_empty() || k == 0 || options.iter().any(Vec::is_empty) {
        return Vec::new();
    }
    let make = |ranks: Vec<usize>, pivot: usize| {
        let tokens: Vec<usize> = ranks.iter().zip(options).map(|(&r, o)| o[r].0).collect();
        let parts: Vec<f64> = ranks.iter().zip(options).map(|(&r, o)| o[r].1).collect();
        Entry {
            score: total(&parts),
            tokens,
            ranks,
            pivot,
        }
    };
    let mut heap = BinaryHeap::new();
    heap.push(make(vec![0; options.len()], 0));
    let mut out = Vec::with_capacity(k);
    while let Some(e) = heap.pop() {
        for j in e.pivot..options.len() {
            if e.ranks[j] + 1 < options[j].len() {
                let mut r = e.ranks.clone();
                r[j] += 1;
                heap.push(make(r, j));
            }
        }
        out.push(ScoredSequence {
            tokens: e.tokens,
            score: e.score,
        });
        if out.len() == k {
            break;
        }
    }
    out
}
