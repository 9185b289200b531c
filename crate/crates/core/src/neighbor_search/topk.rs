use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

/// A `(score, id)` pair ordered so that "greater" means "ranks earlier":
/// higher score first, then smaller id.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ranked {
    pub score: f64,
    pub id: u64,
}

impl Eq for Ranked {}

impl Ord for Ranked {
    fn cmp(&self, other: &Self) -> Ordering {
        self.score
            .total_cmp(&other.score)
            .then_with(|| other.id.cmp(&self.id))
    }
}

impl PartialOrd for Ranked {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Bounded top-k selection under the [`Ranked`] order.
///
/// Keeps the worst retained entry at the top of a min-heap; an entry that
/// does not beat it is dropped when the accumulator is full.
#[derive(Debug, Clone)]
pub struct TopKAccumulator {
    capacity: usize,
    heap: BinaryHeap<Reverse<Ranked>>,
}

impl TopKAccumulator {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1, "top-k capacity must be positive");
        Self {
            capacity,
            heap: BinaryHeap::with_capacity(capacity.min(4096) + 1),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn push(&mut self, score: f64, id: u64) {
        let item = Ranked { score, id };
        if self.heap.len() < self.capacity {
            self.heap.push(Reverse(item));
        } else if let Some(Reverse(worst)) = self.heap.peek() {
            if item > *worst {
                self.heap.pop();
                self.heap.push(Reverse(item));
            }
        }
    }

    pub fn merge(&mut self, other: TopKAccumulator) {
        for Reverse(r) in other.heap {
            self.push(r.score, r.id);
        }
    }

    /// Entries best first.
    pub fn into_sorted_vec(self) -> Vec<Ranked> {
        let mut v: Vec<Ranked> = self.heap.into_iter().map(|Reverse(r)| r).collect();
        v.sort_unstable_by(|a, b| b.cmp(a));
        v
    }
}
