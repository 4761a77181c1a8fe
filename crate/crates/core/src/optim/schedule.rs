use serde::{Deserialize, Serialize};

use super::sampling::SamplingStrategy;
use crate::error::{Error, Result};

/// Round / iteration / step structure of sparse spectral training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SstSchedule {
    /// `T₁`: number of re-SVD rounds.
    pub rounds: usize,
    /// `T₂`: sampling iterations per round.
    pub iterations_per_round: usize,
    /// `T₃`: optimizer steps per iteration.
    pub iteration_interval: usize,
    pub warmup_steps: usize,
    pub sampling: SamplingStrategy,
    pub rank: usize,
}

impl SstSchedule {
    pub const DEFAULT_WARMUP: usize = 20;

    /// `T₂ = d / r`, at least 1.
    pub fn default_iterations(d: usize, rank: usize) -> usize {
        (d / rank.max(1)).max(1)
    }

    /// A schedule with `T₂ = d / r` and the default warmup (clipped to `T₃`).
    pub fn new(d: usize, rank: usize, rounds: usize, iteration_interval: usize) -> Self {
        Self {
            rounds,
            iterations_per_round: Self::default_iterations(d, rank),
            iteration_interval,
            warmup_steps: Self::DEFAULT_WARMUP.min(iteration_interval),
            sampling: SamplingStrategy::MultinomialMix,
            rank,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("rounds", self.rounds),
            ("iterations_per_round", self.iterations_per_round),
            ("iteration_interval", self.iteration_interval),
            ("warmup_steps", self.warmup_steps),
            ("rank", self.rank),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidArgument(format!("schedule: {name} must be at least 1")));
        }
        if self.warmup_steps > self.iteration_interval {
            return Err(Error::InvalidArgument(format!(
                "schedule: warmup_steps {} exceeds iteration_interval {}",
                self.warmup_steps, self.iteration_interval
            )));
        }
        Ok(())
    }

    /// `T₁ · T₂ · T₃`.
    pub fn total_steps(&self) -> usize {
        self.rounds * self.iterations_per_round * self.iteration_interval
    }

    /// Position of global step `s` as `(round, iteration within round, step
    /// within iteration)`.
    pub fn locate(&self, s: usize) -> (usize, usize, usize) {
        let iteration = s / self.iteration_interval;
        (
            iteration / self.iterations_per_round,
            iteration % self.iterations_per_round,
            s % self.iteration_interval,
        )
    }
}

/// Linear ramp `min(1, (s + 1) / warmup)`; `warmup == 0` disables it.
pub fn warmup_factor(steps_since_reset: usize, warmup: usize) -> f64 {
    if warmup == 0 {
        1.0
    } else {
        ((steps_since_reset + 1) as f64 / warmup as f64).min(1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iterations_from_dimension() {
        assert_eq!(SstSchedule::default_iterations(8, 2), 4);
        assert_eq!(SstSchedule::new(8, 2, 1, 50).iterations_per_round, 4);
    }

    #[test]
    fn validation() {
        let mut s = SstSchedule::new(8, 2, 3, 50);
        assert!(s.validate().is_ok());
        s.warmup_steps = 51;
        assert!(s.validate().is_err());
        s.warmup_steps = 0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn locate_steps() {
        let s = SstSchedule::new(8, 2, 2, 10);
        assert_eq!(s.total_steps(), 80);
        assert_eq!(s.locate(0), (0, 0, 0));
        assert_eq!(s.locate(39), (0, 3, 9));
        assert_eq!(s.locate(40), (1, 0, 0));
    }

    #[test]
    fn warmup_ramp() {
        assert_eq!(warmup_factor(0, 4), 0.25);
        assert_eq!(warmup_factor(3, 4), 1.0);
        assert_eq!(warmup_factor(100, 4), 1.0);
        assert_eq!(warmup_factor(0, 0), 1.0);
    }
}
