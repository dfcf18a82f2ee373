//! Uniform time grid on `[0, T]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform grid `t_k = k * dt`, `k = 0..=steps`, with `dt = t_end / steps`.
///
/// Every solved path, gain schedule and simulated trajectory in this crate is
/// sampled on the same grid, so that quadrature, feedback lookup and
/// Euler-Maruyama stepping never interpolate against each other.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    t_end: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(t_end: f64, steps: usize) -> Result<Self> {
        if !(t_end > 0.0) || !t_end.is_finite() {
            return Err(Error::invalid(format!("horizon must be positive, got {t_end}")));
        }
        if steps < 2 {
            return Err(Error::invalid(format!("grid needs at least 2 steps, got {steps}")));
        }
        Ok(TimeGrid { t_end, steps })
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Number of grid points, `steps + 1`.
    pub fn len(&self) -> usize {
        self.steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dt(&self) -> f64 {
        self.t_end / self.steps as f64
    }

    pub fn t(&self, k: usize) -> f64 {
        debug_assert!(k <= self.steps);
        k as f64 * self.dt()
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len()).map(|k| self.t(k))
    }

    /// Grid with the same horizon and `factor`-times more steps.
    pub fn refined(&self, factor: usize) -> TimeGrid {
        TimeGrid {
            t_end: self.t_end,
            steps: self.steps * factor,
        }
    }

    /// Trapezoidal quadrature weight of node `k`.
    pub fn quad_weight(&self, k: usize) -> f64 {
        if k == 0 || k == self.steps {
            0.5 * self.dt()
        } else {
            self.dt()
        }
    }
}
