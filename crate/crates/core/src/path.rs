//! Grid-sampled matrix-valued functions of time.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::grid::TimeGrid;

/// A matrix-valued coefficient or solution sampled at every grid point,
/// evaluated piecewise-linearly between points.
///
/// Dimensions are fixed along the path and all entries must stay finite.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixPath {
    values: Vec<DMatrix<f64>>,
    rows: usize,
    cols: usize,
}

impl MatrixPath {
    pub fn new(values: Vec<DMatrix<f64>>) -> Result<Self> {
        let first = values
            .first()
            .ok_or_else(|| Error::invalid("empty matrix path"))?;
        let (rows, cols) = (first.nrows(), first.ncols());
        for (k, m) in values.iter().enumerate() {
            if m.nrows() != rows || m.ncols() != cols {
                return Err(Error::dimension(format!(
                    "path entry {k} is {}x{}, expected {rows}x{cols}",
                    m.nrows(),
                    m.ncols()
                )));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("non-finite entry in path at index {k}")));
            }
        }
        Ok(MatrixPath { values, rows, cols })
    }

    /// Constant path: the same matrix at every grid point.
    pub fn constant(grid: &TimeGrid, m: DMatrix<f64>) -> Result<Self> {
        MatrixPath::new(vec![m; grid.len()])
    }

    /// Constant scalar path (1x1).
    pub fn scalar(grid: &TimeGrid, v: f64) -> Self {
        MatrixPath::constant(grid, DMatrix::from_element(1, 1, v)).expect("scalar path")
    }

    /// Path sampled from an analytic function of time.
    pub fn from_fn(grid: &TimeGrid, f: impl Fn(f64) -> DMatrix<f64>) -> Result<Self> {
        MatrixPath::new(grid.times().map(f).collect())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Value at grid node `k`.
    pub fn at(&self, k: usize) -> &DMatrix<f64> {
        &self.values[k]
    }

    pub fn values(&self) -> &[DMatrix<f64>] {
        &self.values
    }

    pub fn matches_grid(&self, grid: &TimeGrid) -> bool {
        self.values.len() == grid.len()
    }

    /// Piecewise-linear evaluation at an arbitrary time in `[0, T]`.
    pub fn eval(&self, grid: &TimeGrid, t: f64) -> DMatrix<f64> {
        debug_assert!(self.matches_grid(grid));
        let dt = grid.dt();
        let s = (t / dt).clamp(0.0, grid.steps() as f64);
        let k = (s.floor() as usize).min(grid.steps() - 1);
        let w = s - k as f64;
        if w == 0.0 {
            self.values[k].clone()
        } else {
            &self.values[k] * (1.0 - w) + &self.values[k + 1] * w
        }
    }

    /// Largest absolute entry along the whole path.
    pub fn max_abs(&self) -> f64 {
        self.values
            .iter()
            .flat_map(|m| m.iter())
            .fold(0.0f64, |acc, v| acc.max(v.abs()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_interpolation_is_exact_on_linear_data() {
        let grid = TimeGrid::new(1.0, 4).unwrap();
        let path = MatrixPath::from_fn(&grid, |t| DMatrix::from_element(1, 1, 2.0 * t + 1.0)).unwrap();
        for &t in &[0.0, 0.1, 0.33, 0.625, 1.0] {
            let v = path.eval(&grid, t)[(0, 0)];
            assert!((v - (2.0 * t + 1.0)).abs() < 1e-12, "t={t}: {v}");
        }
    }

    #[test]
    fn rejects_ragged_dimensions() {
        let vals = vec![DMatrix::zeros(2, 2), DMatrix::zeros(2, 3)];
        assert!(MatrixPath::new(vals).is_err());
    }

    #[test]
    fn rejects_non_finite_entries() {
        let vals = vec![DMatrix::from_element(1, 1, f64::NAN)];
        assert!(MatrixPath::new(vals).is_err());
    }
}
