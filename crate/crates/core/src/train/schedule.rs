//! Stepped learning-rate schedule.

use crate::error::{Error, Result};

/// Halves the learning rate every `decay_every` iterations:
/// `lr(t) = initial_lr / 2^⌊t / decay_every⌋`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub initial_lr: f64,
    pub decay_every: u64,
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.initial_lr.is_finite() && self.initial_lr > 0.0) {
            return Err(Error::config(format!(
                "initial_lr must be positive and finite, got {}",
                self.initial_lr
            )));
        }
        if self.decay_every == 0 {
            return Err(Error::config("decay_every must be at least 1"));
        }
        Ok(())
    }

    /// Learning rate at zero-based iteration `iter`.
    pub fn lr(&self, iter: u64) -> f64 {
        let halvings = (iter / self.decay_every).min(4096) as i32;
        self.initial_lr * 0.5f64.powi(halvings)
    }
}
