//! FIFO replay buffer and preference-aware hindsight relabeling.
//!
//! Observations are stored once as shared `f32` slices: a transition's `s_next` is
//! the same allocation as the following transition's `s`, and relabeled copies share
//! both.

use super::preference::PreferenceVector;
use crate::reward::REWARD_DIM;
use rand::Rng;
use std::sync::Arc;

pub type SharedObs = Arc<[f32]>;

pub fn share(features: &[f64]) -> SharedObs {
    features.iter().map(|&v| v as f32).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub s: SharedObs,
    pub a: [f64; 2],
    pub r: [f64; REWARD_DIM],
    pub s_next: SharedObs,
    pub done: bool,
    pub lambda: PreferenceVector,
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    /// Slot the next push overwrites once the buffer is full.
    head: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            items: Vec::new(),
            head: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.head] = t;
            self.head = (self.head + 1) % self.capacity;
        }
    }

    pub fn extend(&mut self, ts: impl IntoIterator<Item = Transition>) {
        for t in ts {
            self.push(t);
        }
    }

    /// Uniform indices (with replacement) into the filled region.
    pub fn sample_indices<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<usize> {
        if self.items.is_empty() {
            return Vec::new();
        }
        (0..n).map(|_| rng.random_range(0..self.items.len())).collect()
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.items[i]
    }

    /// Transitions from oldest to newest.
    pub fn iter_fifo(&self) -> impl Iterator<Item = &Transition> {
        let (newer, older) = self.items.split_at(self.head);
        older.iter().chain(newer)
    }

    /// Storage order and overwrite position, for exact checkpointing.
    pub fn raw_parts(&self) -> (&[Transition], usize) {
        (&self.items, self.head)
    }

    /// Inverse of [`raw_parts`](Self::raw_parts).
    pub fn from_raw(capacity: usize, items: Vec<Transition>, head: usize) -> Option<Self> {
        if capacity == 0 || items.len() > capacity || (head != 0 && (items.len() < capacity || head >= capacity)) {
            return None;
        }
        Some(Self { capacity, items, head })
    }

    /// Rebuilds a buffer from transitions given oldest first.
    pub fn from_fifo(capacity: usize, items: Vec<Transition>) -> Self {
        let mut b = Self::new(capacity);
        b.extend(items);
        b
    }
}

/// Returns the episode followed by `k` copies of each transition under fresh preferences.
///
/// Rewards are preference independent, so only λ changes; copies of transition `i`
/// come right after the originals in episode order.
pub fn her_relabel<R: Rng + ?Sized>(episode: &[Transition], rng: &mut R, k: usize) -> Vec<Transition> {
    let mut out = Vec::with_capacity(episode.len() * (k + 1));
    out.extend_from_slice(episode);
    for t in episode {
        for _ in 0..k {
            out.push(Transition {
                lambda: PreferenceVector::sample(rng),
                ..t.clone()
            });
        }
    }
    out
}
