//! Pieces shared by the GVF and n-step learners: the network/optimizer pair,
//! architecture configuration and the seeded mini-batch schedule.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mlp::{adam_step, AdamConfig, Gradient, Network, OptimizerState, Real};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub hidden: Vec<usize>,
    pub adam: AdamConfig,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            hidden: vec![512, 512],
            adam: AdamConfig::default(),
        }
    }
}

impl NetworkConfig {
    pub fn dims(&self, input: usize) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 2);
        dims.push(input);
        dims.extend_from_slice(&self.hidden);
        dims.push(1);
        dims
    }
}

/// A network `f_w` together with the optimizer state that updates it.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictor<R: Real> {
    pub network: Network<R>,
    pub optimizer: OptimizerState<R>,
}

impl<R: Real> Predictor<R> {
    pub fn new(cfg: &NetworkConfig, input: usize, seed: u64) -> Result<Self> {
        let network = Network::new(&cfg.dims(input), seed)?;
        let optimizer = OptimizerState::new(cfg.adam, &network);
        Ok(Predictor { network, optimizer })
    }

    pub fn from_parts(network: Network<R>, optimizer: OptimizerState<R>) -> Result<Self> {
        if optimizer.first_moment.len() != network.num_params()
            || optimizer.second_moment.len() != network.num_params()
        {
            return Err(Error::WidthMismatch {
                expected: network.num_params(),
                found: optimizer.first_moment.len(),
            });
        }
        Ok(Predictor { network, optimizer })
    }

    pub fn predict(&self, state: &[f64]) -> Result<f64> {
        self.network.forward(state)
    }

    pub fn step(&mut self, direction: &Gradient<R>, lr: f64) -> Result<()> {
        adam_step(&mut self.network, &mut self.optimizer, direction, lr)
    }

    pub fn input_width(&self) -> usize {
        self.network.input_width()
    }
}

/// Seeded epoch-wise shuffling into mini-batches of indices. The final batch
/// of an epoch may be short.
#[derive(Debug, Clone)]
pub struct BatchSchedule {
    rng: ChaCha8Rng,
    order: Vec<usize>,
    batch_size: usize,
    cursor: usize,
}

impl BatchSchedule {
    pub fn new(len: usize, batch_size: usize, seed: u64) -> Result<Self> {
        if len == 0 {
            return Err(Error::Empty("training set"));
        }
        if batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        let mut s = BatchSchedule {
            rng: ChaCha8Rng::seed_from_u64(seed),
            order: (0..len).collect(),
            batch_size,
            cursor: 0,
        };
        s.order.shuffle(&mut s.rng);
        Ok(s)
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.order.len().div_ceil(self.batch_size)
    }

    /// The next batch, reshuffling at epoch boundaries.
    pub fn next_batch(&mut self) -> &[usize] {
        if self.cursor >= self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let start = self.cursor;
        let end = (start + self.batch_size).min(self.order.len());
        self.cursor = end;
        &self.order[start..end]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_covers_each_epoch() {
        let mut s = BatchSchedule::new(10, 4, 1).unwrap();
        assert_eq!(s.batches_per_epoch(), 3);
        for _ in 0..3 {
            let mut seen: Vec<usize> = (0..3).flat_map(|_| s.next_batch().to_vec()).collect();
            seen.sort();
            assert_eq!(seen, (0..10).collect::<Vec<_>>());
        }
    }

    #[test]
    fn schedule_is_seeded() {
        let take = |seed| {
            let mut s = BatchSchedule::new(50, 8, seed).unwrap();
            (0..20).flat_map(|_| s.next_batch().to_vec()).collect::<Vec<_>>()
        };
        assert_eq!(take(3), take(3));
        assert_ne!(take(3), take(4));
    }

    #[test]
    fn dims_wrap_hidden() {
        let cfg = NetworkConfig::default();
        assert_eq!(cfg.dims(384), vec![384, 512, 512, 1]);
        assert!(BatchSchedule::new(0, 4, 0).is_err());
        assert!(BatchSchedule::new(4, 0, 0).is_err());
    }
}
