use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scheduler::Transition;

/// Fixed-capacity ring of transitions; once full, the oldest entry is overwritten.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    cursor: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Validation("buffer capacity must be >= 1".into()));
        }
        Ok(ReplayBuffer {
            capacity,
            items: Vec::new(),
            cursor: 0,
        })
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
            self.items[self.cursor] = t;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
    }

    /// Oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        let split = if self.items.len() < self.capacity {
            0
        } else {
            self.cursor
        };
        self.items[split..].iter().chain(self.items[..split].iter())
    }

    /// Uniform sampling with replacement.
    pub fn sample<R: Rng>(&self, batch: usize, rng: &mut R) -> Result<Vec<&Transition>> {
        if self.items.len() < batch || batch == 0 {
            return Err(Error::BufferUnderfull {
                have: self.items.len(),
                need: batch.max(1),
            });
        }
        Ok((0..batch)
            .map(|_| &self.items[rng.gen_range(0..self.items.len())])
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scheduler::{ActionVector, StateVector};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tr(r: f64) -> Transition {
        let s = StateVector {
            batteries: vec![50.0],
            last_tx_min: vec![0.0],
        };
        Transition {
            s: s.clone(),
            a: ActionVector(vec![0.0]),
            r,
            s_next: s,
            done: true,
        }
    }

    #[test]
    fn underfull_sampling_errors() {
        let mut b = ReplayBuffer::new(10).unwrap();
        b.push(tr(1.0));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            b.sample(2, &mut rng),
            Err(Error::BufferUnderfull { have: 1, need: 2 })
        ));
        assert_eq!(b.sample(1, &mut rng).unwrap().len(), 1);
    }

    #[test]
    fn zero_capacity_rejected() {
        assert!(ReplayBuffer::new(0).is_err());
    }

    proptest! {
        #[test]
        fn fifo_overwrite(cap in 1usize..20, n in 0usize..60) {
            let mut b = ReplayBuffer::new(cap).unwrap();
            for k in 0..n {
                b.push(tr(k as f64));
                prop_assert!(b.len() <= cap);
            }
            let kept: Vec<f64> = b.iter().map(|t| t.r).collect();
            let expect: Vec<f64> = (n.saturating_sub(cap)..n).map(|k| k as f64).collect();
            prop_assert_eq!(kept, expect);
        }
    }
}
