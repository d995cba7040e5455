use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Seeded misbehaviour for the queue channel: late and duplicated
/// deliveries, and deletes that silently do nothing (the message then
/// reappears after the visibility timeout).
#[derive(Debug, Clone, PartialEq)]
pub struct FaultConfig {
    pub seed: u64,
    pub max_delay: Duration,
    pub duplicate_prob: f64,
    pub lost_delete_prob: f64,
}

impl FaultConfig {
    pub fn delays(seed: u64, max_delay: Duration) -> Self {
        Self {
            seed,
            max_delay,
            duplicate_prob: 0.0,
            lost_delete_prob: 0.0,
        }
    }
}

#[derive(Debug)]
pub(crate) struct FaultInjector {
    cfg: FaultConfig,
    rng: ChaCha8Rng,
}

impl FaultInjector {
    pub(crate) fn new(cfg: FaultConfig) -> Self {
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        Self { cfg, rng }
    }

    /// Delivery delays for one published message; more than one entry means
    /// duplicates.
    pub(crate) fn deliveries(&mut self) -> Vec<Duration> {
        let mut out = vec![self.delay()];
        if self.cfg.duplicate_prob > 0.0 && self.rng.gen_bool(self.cfg.duplicate_prob.min(1.0)) {
            out.push(self.delay());
        }
        out
    }

    fn delay(&mut self) -> Duration {
        if self.cfg.max_delay.is_zero() {
            Duration::ZERO
        } else {
            self.cfg.max_delay.mul_f64(self.rng.gen::<f64>())
        }
    }

    pub(crate) fn lose_delete(&mut self) -> bool {
        self.cfg.lost_delete_prob > 0.0 && self.rng.gen_bool(self.cfg.lost_delete_prob.min(1.0))
    }
}
