//! Fixed-capacity experience replay holding the last N transitions, with
//! uniform random sampling (with replacement). Each worker owns its buffer
//! privately; there is no cross-worker sharing.

use crate::error::{Error, Result};
use crate::nncore::Tensor;
use crate::rng::Rng64;

/// One transition: (phi_t, a_t, r_t, phi_{t+1}, terminal). When `terminal`
/// is set, `phi_next` is ignored by target computation.
#[derive(Debug, Clone, PartialEq)]
pub struct Experience {
    pub phi: Tensor,
    pub action: usize,
    pub reward: f64,
    pub phi_next: Tensor,
    pub terminal: bool,
}

#[derive(Debug)]
pub struct ReplayBuffer {
    entries: Vec<Experience>,
    capacity: usize,
    /// Next slot to overwrite once full.
    write_idx: usize,
    insert_count: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("replay capacity must be positive".into()));
        }
        Ok(ReplayBuffer {
            entries: Vec::with_capacity(capacity.min(1 << 16)),
            capacity,
            write_idx: 0,
            insert_count: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn insert_count(&self) -> u64 {
        self.insert_count
    }

    /// Stores an experience; once full, evicts the single oldest entry.
    pub fn store(&mut self, e: Experience) {
        if self.entries.len() < self.capacity {
            self.entries.push(e);
        } else {
            self.entries[self.write_idx] = e;
            self.write_idx = (self.write_idx + 1) % self.capacity;
        }
        self.insert_count += 1;
    }

    /// `b` independent uniform draws with replacement from the current
    /// contents. Errors on an empty buffer; `b = 0` yields an empty vec.
    pub fn sample_uniform(&self, b: usize, rng: &mut Rng64) -> Result<Vec<&Experience>> {
        if self.entries.is_empty() {
            return Err(Error::Usage("sampling from an empty replay buffer".into()));
        }
        Ok((0..b)
            .map(|_| &self.entries[rng.range(self.entries.len())])
            .collect())
    }

    /// Current contents oldest-first.
    pub fn iter_in_order(&self) -> impl Iterator<Item = &Experience> {
        let split = if self.entries.len() < self.capacity {
            0
        } else {
            self.write_idx
        };
        self.entries[split..].iter().chain(self.entries[..split].iter())
    }
}
