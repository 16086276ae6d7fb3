//! Addressable binary max-heap over dense integer keys.
//!
//! Used as the message queue (keyed by factor) and the domain queue (keyed by
//! flattened `(variable, value)`). Among equal priorities the entry enqueued
//! or updated earliest wins, so traces are reproducible.

use alloc::vec;
use alloc::vec::Vec;

const ABSENT: usize = usize::MAX;

#[derive(Debug, Clone, Copy)]
struct Entry {
    key: usize,
    priority: f64,
    seq: u64,
}

impl Entry {
    #[inline]
    fn beats(&self, other: &Entry) -> bool {
        self.priority > other.priority || (self.priority == other.priority && self.seq < other.seq)
    }
}

#[derive(Debug, Clone)]
pub struct IndexedMaxHeap {
    entries: Vec<Entry>,
    position: Vec<usize>,
    next_seq: u64,
}

impl IndexedMaxHeap {
    /// Empty heap accepting keys `0..key_space`.
    pub fn new(key_space: usize) -> Self {
        Self {
            entries: Vec::new(),
            position: vec![ABSENT; key_space],
            next_seq: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn key_space(&self) -> usize {
        self.position.len()
    }

    pub fn contains(&self, key: usize) -> bool {
        self.position[key] != ABSENT
    }

    pub fn priority(&self, key: usize) -> Option<f64> {
        match self.position[key] {
            ABSENT => None,
            p => Some(self.entries[p].priority),
        }
    }

    pub fn peek(&self) -> Option<(usize, f64)> {
        self.entries.first().map(|e| (e.key, e.priority))
    }

    /// Highest priority, or `-inf` when empty.
    pub fn max_priority(&self) -> f64 {
        self.entries.first().map_or(f64::NEG_INFINITY, |e| e.priority)
    }

    /// Insert `key` or change its priority. Either way the entry gets a fresh
    /// sequence number.
    pub fn set(&mut self, key: usize, priority: f64) {
        debug_assert!(!priority.is_nan());
        let seq = self.next_seq;
        self.next_seq += 1;
        match self.position[key] {
            ABSENT => {
                let at = self.entries.len();
                self.entries.push(Entry { key, priority, seq });
                self.position[key] = at;
                self.sift_up(at);
            }
            at => {
                let old = self.entries[at].priority;
                self.entries[at].priority = priority;
                self.entries[at].seq = seq;
                if priority > old {
                    self.sift_up(at);
                } else {
                    self.sift_down(at);
                }
            }
        }
    }

    /// Add `delta` to an existing priority (inserting at `delta` if absent).
    pub fn increase(&mut self, key: usize, delta: f64) {
        let current = self.priority(key).unwrap_or(0.0);
        self.set(key, current + delta);
    }

    pub fn remove(&mut self, key: usize) -> Option<f64> {
        let at = self.position[key];
        if at == ABSENT {
            return None;
        }
        let removed = self.entries[at];
        let last = self.entries.len() - 1;
        self.swap(at, last);
        self.entries.pop();
        self.position[key] = ABSENT;
        if at < self.entries.len() {
            let moved = self.sift_up(at);
            self.sift_down(moved);
        }
        Some(removed.priority)
    }

    pub fn pop(&mut self) -> Option<(usize, f64)> {
        let (key, priority) = self.peek()?;
        self.remove(key);
        Some((key, priority))
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.entries.iter().map(|e| (e.key, e.priority))
    }

    fn swap(&mut self, a: usize, b: usize) {
        self.entries.swap(a, b);
        self.position[self.entries[a].key] = a;
        self.position[self.entries[b].key] = b;
    }

    fn sift_up(&mut self, mut at: usize) -> usize {
        while at > 0 {
            let parent = (at - 1) / 2;
            if self.entries[at].beats(&self.entries[parent]) {
                self.swap(at, parent);
                at = parent;
            } else {
                break;
            }
        }
        at
    }

    fn sift_down(&mut self, mut at: usize) -> usize {
        let len = self.entries.len();
        loop {
            let left = 2 * at + 1;
            if left >= len {
                break;
            }
            let right = left + 1;
            let best = if right < len && self.entries[right].beats(&self.entries[left]) {
                right
            } else {
                left
            };
            if self.entries[best].beats(&self.entries[at]) {
                self.swap(at, best);
                at = best;
            } else {
                break;
            }
        }
        at
    }

    #[cfg(test)]
    fn check_heap_property(&self) {
        for i in 1..self.entries.len() {
            assert!(!self.entries[i].beats(&self.entries[(i - 1) / 2]));
        }
        for (i, e) in self.entries.iter().enumerate() {
            assert_eq!(self.position[e.key], i);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ties_pop_in_enqueue_order() {
        let mut h = IndexedMaxHeap::new(4);
        for k in [2, 0, 3, 1] {
            h.set(k, 1.0);
        }
        let order: Vec<usize> = core::iter::from_fn(|| h.pop().map(|(k, _)| k)).collect();
        assert_eq!(order, vec![2, 0, 3, 1]);
    }

    #[test]
    fn update_refreshes_sequence() {
        let mut h = IndexedMaxHeap::new(3);
        h.set(0, 1.0);
        h.set(1, 1.0);
        h.set(0, 1.0);
        assert_eq!(h.peek(), Some((1, 1.0)));
    }

    #[test]
    fn increase_and_remove() {
        let mut h = IndexedMaxHeap::new(5);
        for k in 0..5 {
            h.set(k, k as f64);
        }
        h.increase(0, 10.0);
        assert_eq!(h.peek(), Some((0, 10.0)));
        assert_eq!(h.remove(0), Some(10.0));
        assert_eq!(h.remove(0), None);
        assert_eq!(h.peek(), Some((4, 4.0)));
        h.check_heap_property();
    }

    #[test]
    fn infinity_is_a_valid_priority() {
        let mut h = IndexedMaxHeap::new(3);
        h.set(0, 5.0);
        h.set(1, f64::INFINITY);
        h.increase(1, 1.0);
        assert_eq!(h.peek(), Some((1, f64::INFINITY)));
        assert_eq!(IndexedMaxHeap::new(1).max_priority(), f64::NEG_INFINITY);
    }

    #[test]
    fn random_operations_keep_invariants() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut h = IndexedMaxHeap::new(64);
        for _ in 0..5000 {
            let key = rng.random_range(0..64);
            match rng.random_range(0..3) {
                0 => h.set(key, rng.random_range(0..8) as f64),
                1 => {
                    h.remove(key);
                }
                _ => {
                    h.pop();
                }
            }
            h.check_heap_property();
        }
    }
}
