//! CSV and plain-text export of solved paths and simulation output.
//!
//! Files are deterministic functions of their inputs: no timestamps, fixed
//! column order, shortest-roundtrip float formatting.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::Result;
use crate::grid::TimeGrid;
use crate::path::MatrixPath;

/// Render a matrix path as CSV: `t` column followed by row-major entries.
pub fn matrix_path_csv(grid: &TimeGrid, path: &MatrixPath) -> String {
    let mut out = String::new();
    out.push('t');
    for r in 0..path.rows() {
        for c in 0..path.cols() {
            let _ = write!(out, ",r{r}c{c}");
        }
    }
    out.push('\n');
    for k in 0..grid.len() {
        let _ = write!(out, "{}", grid.t(k));
        let m = path.at(k);
        for r in 0..path.rows() {
            for c in 0..path.cols() {
                let _ = write!(out, ",{}", m[(r, c)]);
            }
        }
        out.push('\n');
    }
    out
}

pub fn write_matrix_path_csv(file: &Path, grid: &TimeGrid, path: &MatrixPath) -> Result<()> {
    fs::write(file, matrix_path_csv(grid, path))?;
    Ok(())
}

/// A set of labelled scalar time series sharing one grid, as CSV.
pub fn series_csv(grid: &TimeGrid, columns: &[(&str, &[f64])]) -> String {
    let mut out = String::from("t");
    for (name, _) in columns {
        let _ = write!(out, ",{name}");
    }
    out.push('\n');
    for k in 0..grid.len() {
        let _ = write!(out, "{}", grid.t(k));
        for (_, vals) in columns {
            let _ = write!(out, ",{}", vals[k]);
        }
        out.push('\n');
    }
    out
}

pub fn write_series_csv(file: &Path, grid: &TimeGrid, columns: &[(&str, &[f64])]) -> Result<()> {
    fs::write(file, series_csv(grid, columns))?;
    Ok(())
}

/// Long-format trajectory CSV: one line per (path, agent, node).
///
/// Agent index 0 is the leader; filtered states and observations are included
/// when available (empty cells otherwise).
pub struct TrajectoryRow<'a> {
    pub t: f64,
    pub path: usize,
    pub agent: usize,
    pub x: &'a [f64],
    pub x_hat: &'a [f64],
    pub u: &'a [f64],
    pub y: &'a [f64],
}

pub fn trajectory_header(n: usize, k: usize) -> String {
    let mut out = String::from("t,path,agent");
    for i in 0..n {
        let _ = write!(out, ",x{i}");
    }
    for i in 0..n {
        let _ = write!(out, ",xhat{i}");
    }
    for i in 0..k {
        let _ = write!(out, ",u{i}");
    }
    for i in 0..n {
        let _ = write!(out, ",y{i}");
    }
    out.push('\n');
    out
}

pub fn push_trajectory_row(out: &mut String, row: &TrajectoryRow) {
    let _ = write!(out, "{},{},{}", row.t, row.path, row.agent);
    for v in row.x {
        let _ = write!(out, ",{v}");
    }
    for v in row.x_hat {
        let _ = write!(out, ",{v}");
    }
    for v in row.u {
        let _ = write!(out, ",{v}");
    }
    for v in row.y {
        let _ = write!(out, ",{v}");
    }
    out.push('\n');
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    #[test]
    fn csv_shape_matches_path() {
        let grid = TimeGrid::new(1.0, 2).unwrap();
        let path = MatrixPath::constant(&grid, DMatrix::from_row_slice(1, 2, &[1.0, 2.0])).unwrap();
        let csv = matrix_path_csv(&grid, &path);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[0], "t,r0c0,r0c1");
        assert_eq!(lines[1], "0,1,2");
    }

    #[test]
    fn csv_is_deterministic() {
        let grid = TimeGrid::new(1.0, 3).unwrap();
        let path = MatrixPath::from_fn(&grid, |t| DMatrix::from_element(1, 1, (t * 7.3).sin())).unwrap();
        assert_eq!(matrix_path_csv(&grid, &path), matrix_path_csv(&grid, &path));
    }
}
