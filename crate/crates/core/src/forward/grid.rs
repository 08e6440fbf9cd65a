use serde::Serialize;

use crate::error::{BsviError, Result};

/// Uniform grid `t0 < t0 + dt < … < t_end` with `n_steps` intervals.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TimeGrid {
    t0: f64,
    t_end: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, t_end: f64, n_steps: usize) -> Result<Self> {
        if n_steps == 0 {
            return Err(BsviError::invalid("time grid needs n_steps >= 1"));
        }
        if !(t_end > t0) || !t0.is_finite() || !t_end.is_finite() {
            return Err(BsviError::invalid(format!(
                "time grid needs finite t0 < T (got {t0}, {t_end})"
            )));
        }
        Ok(Self { t0, t_end, n_steps })
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn horizon(&self) -> f64 {
        self.t_end - self.t0
    }

    pub fn dt(&self) -> f64 {
        self.horizon() / self.n_steps as f64
    }

    /// `t_k`; the last node is exactly `t_end`.
    pub fn time(&self, k: usize) -> f64 {
        if k == self.n_steps {
            self.t_end
        } else {
            self.t0 + k as f64 * self.dt()
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.n_steps).map(|k| self.time(k)).collect()
    }
}
