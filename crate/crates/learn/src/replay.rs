//! FIFO transition store with uniform minibatch sampling.

use crate::Real;
use rand::Rng;

/// One environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<Real>,
    pub action: Vec<Real>,
    pub reward: Real,
    pub next_obs: Vec<Real>,
    pub done: bool,
}

/// Bounded ring of transitions. When full, pushes evict the oldest entry
/// first; sampling is uniform without replacement within one batch.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    data: Vec<Transition>,
    /// Next slot to overwrite once the ring is full.
    cursor: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "capacity must be positive");
        ReplayBuffer { capacity, data: Vec::new(), cursor: 0 }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, t: Transition) {
        if self.data.len() < self.capacity {
            self.data.push(t);
        } else {
            self.data[self.cursor] = t;
            self.cursor = (self.cursor + 1) % self.capacity;
        }
    }

    /// `n` distinct transitions, uniform over the buffer. Requires
    /// `n <= len`.
    pub fn sample<'a, R: Rng>(&'a self, rng: &mut R, n: usize) -> Vec<&'a Transition> {
        assert!(n <= self.data.len(), "batch larger than buffer");
        // Partial Fisher-Yates over an index array: the first n slots end
        // up a uniform sample without replacement.
        let mut idx: Vec<usize> = (0..self.data.len()).collect();
        for i in 0..n {
            let j = rng.gen_range(i..idx.len());
            idx.swap(i, j);
        }
        idx[..n].iter().map(|&i| &self.data[i]).collect()
    }
}
