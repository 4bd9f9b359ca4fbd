use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::EnvState;
use crate::error::{Error, Result};

/// Fixed-capacity ring buffer of visited states.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<EnvState>,
    /// Total pushes so far; the next write goes to `inserted % capacity`.
    inserted: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("buffer capacity must be positive".into()));
        }
        Ok(Self {
            capacity,
            items: Vec::with_capacity(capacity.min(1 << 16)),
            inserted: 0,
        })
    }

    pub fn push(&mut self, s: EnvState) {
        let slot = (self.inserted % self.capacity as u64) as usize;
        if slot < self.items.len() {
            self.items[slot] = s;
        } else {
            self.items.push(s);
        }
        self.inserted += 1;
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    pub fn items(&self) -> &[EnvState] {
        &self.items
    }

    /// Indices drawn uniformly with replacement.
    pub fn sample_indices<R: Rng>(&self, rng: &mut R, k: usize) -> Result<Vec<usize>> {
        if k == 0 || k > self.items.len() {
            return Err(Error::Config(format!("cannot sample {k} states from a buffer of {}", self.items.len())));
        }
        Ok((0..k).map(|_| rng.gen_range(0..self.items.len())).collect())
    }

    pub fn sample<R: Rng>(&self, rng: &mut R, k: usize) -> Result<Vec<EnvState>> {
        Ok(self.sample_indices(rng, k)?.into_iter().map(|i| self.items[i].clone()).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::Scenario;
    use proptest::prelude::*;

    fn state(i: usize) -> EnvState {
        EnvState {
            x: vec![i as f64],
            clock: i,
            scenario: Scenario::Sine,
        }
    }

    proptest! {
        #[test]
        fn capacity_respected_and_oldest_evicted(cap in 1usize..20, pushes in 0usize..60) {
            let mut b = ReplayBuffer::new(cap).unwrap();
            for i in 0..pushes {
                b.push(state(i));
            }
            prop_assert_eq!(b.len(), pushes.min(cap));
            let mut clocks: Vec<usize> = b.items().iter().map(|s| s.clock).collect();
            clocks.sort();
            let expect: Vec<usize> = (pushes.saturating_sub(cap)..pushes).collect();
            prop_assert_eq!(clocks, expect);
        }
    }

    #[test]
    fn oversampling_rejected() {
        let mut b = ReplayBuffer::new(4).unwrap();
        b.push(state(0));
        let mut rng = rand::thread_rng();
        assert!(b.sample(&mut rng, 2).is_err());
        assert_eq!(b.sample(&mut rng, 1).unwrap().len(), 1);
    }
}
