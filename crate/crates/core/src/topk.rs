//! Bounded top-k selection, ordered by (score descending, id ascending).

use std::cmp::Ordering;
use std::collections::BinaryHeap;

/// Heap entry ordered so that the *worst* kept candidate is at the top:
/// lower score is "greater", and on equal scores the higher id is "greater".
#[derive(Debug, PartialEq)]
struct Worst {
    score: f64,
    id: u32,
}

impl Eq for Worst {}

impl Ord for Worst {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .score
            .total_cmp(&self.score)
            .then(self.id.cmp(&other.id))
    }
}

impl PartialOrd for Worst {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

pub(crate) struct TopK {
    k: usize,
    heap: BinaryHeap<Worst>,
}

impl TopK {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            heap: BinaryHeap::with_capacity(k + 1),
        }
    }

    pub fn push(&mut self, id: u32, score: f64) {
        if self.k == 0 {
            return;
        }
        let entry = Worst { score, id };
        if self.heap.len() < self.k {
            self.heap.push(entry);
        } else if entry < *self.heap.peek().unwrap() {
            self.heap.pop();
            self.heap.push(entry);
        }
    }

    /// Best-first (score desc, id asc) list of the kept candidates.
    pub fn into_sorted(self) -> Vec<(u32, f64)> {
        self.heap
            .into_sorted_vec()
            .into_iter()
            .map(|w| (w.id, w.score))
            .collect()
    }
}
