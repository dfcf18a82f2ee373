//! Loading a [`ModelSpec`] from a TOML description.
//!
//! Every coefficient accepts three spellings:
//!
//! * a scalar — broadcast to `v * I` for square matrices, a constant-filled
//!   vector for vectors; for non-square matrices only `0.0` is accepted,
//! * a flat row-major array with `rows * cols` entries,
//! * an array of rows.
//!
//! A constant coefficient is broadcast over the whole grid. Time-varying
//! coefficients are written as `{ path = [v0, v1, ...] }` with one entry per
//! grid point. Omitted coefficients default to zero, except the control
//! weights `r` and the observation noises `f_noise`, which default to the
//! identity so that minimal configs stay well-posed.

use nalgebra::{DMatrix, DVector};
use toml::Value;

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::model::{
    FollowerCost, FollowerDynamics, FollowerTerminalCost, LeaderCost, LeaderDynamics,
    LeaderTerminalCost, ModelSpec, ObservationModel,
};
use crate::path::MatrixPath;

fn bad(key: &str, why: impl std::fmt::Display) -> Error {
    Error::config(format!("{key}: {why}"))
}

fn number(v: &Value, key: &str) -> Result<f64> {
    match v {
        Value::Integer(i) => Ok(*i as f64),
        Value::Float(f) => Ok(*f),
        _ => Err(bad(key, "expected a number")),
    }
}

fn matrix_from_value(v: &Value, rows: usize, cols: usize, key: &str) -> Result<DMatrix<f64>> {
    match v {
        Value::Integer(_) | Value::Float(_) => {
            let x = number(v, key)?;
            if rows == cols {
                Ok(DMatrix::identity(rows, cols) * x)
            } else if cols == 1 {
                Ok(DMatrix::from_element(rows, 1, x))
            } else if x == 0.0 {
                Ok(DMatrix::zeros(rows, cols))
            } else {
                Err(bad(key, format!("scalar shorthand is ambiguous for a {rows}x{cols} matrix")))
            }
        }
        Value::Array(items) => {
            if items.iter().all(|i| matches!(i, Value::Integer(_) | Value::Float(_))) {
                let flat: Vec<f64> =
                    items.iter().map(|i| number(i, key)).collect::<Result<_>>()?;
                if flat.len() != rows * cols {
                    return Err(bad(
                        key,
                        format!("expected {} entries for a {rows}x{cols} matrix, got {}", rows * cols, flat.len()),
                    ));
                }
                Ok(DMatrix::from_row_slice(rows, cols, &flat))
            } else {
                if items.len() != rows {
                    return Err(bad(key, format!("expected {rows} rows, got {}", items.len())));
                }
                let mut flat = Vec::with_capacity(rows * cols);
                for row in items {
                    let Value::Array(entries) = row else {
                        return Err(bad(key, "rows must be arrays of numbers"));
                    };
                    if entries.len() != cols {
                        return Err(bad(key, format!("expected {cols} columns, got {}", entries.len())));
                    }
                    for e in entries {
                        flat.push(number(e, key)?);
                    }
                }
                Ok(DMatrix::from_row_slice(rows, cols, &flat))
            }
        }
        _ => Err(bad(key, "expected a number or array")),
    }
}

fn path_from_table(
    table: Option<&Value>,
    field: &str,
    grid: &TimeGrid,
    rows: usize,
    cols: usize,
    default: Option<DMatrix<f64>>,
) -> Result<MatrixPath> {
    let entry = table.and_then(|t| t.get(field));
    match entry {
        None => {
            let m = default.unwrap_or_else(|| DMatrix::zeros(rows, cols));
            MatrixPath::constant(grid, m)
        }
        Some(Value::Table(t)) if t.contains_key("path") => {
            let Some(Value::Array(items)) = t.get("path") else {
                return Err(bad(field, "`path` must be an array"));
            };
            if items.len() != grid.len() {
                return Err(bad(
                    field,
                    format!("time-varying path needs {} samples (steps + 1), got {}", grid.len(), items.len()),
                ));
            }
            let values: Vec<DMatrix<f64>> = items
                .iter()
                .map(|v| matrix_from_value(v, rows, cols, field))
                .collect::<Result<_>>()?;
            MatrixPath::new(values)
        }
        Some(v) => MatrixPath::constant(grid, matrix_from_value(v, rows, cols, field)?),
    }
}

fn const_matrix(
    table: Option<&Value>,
    field: &str,
    rows: usize,
    cols: usize,
) -> Result<DMatrix<f64>> {
    match table.and_then(|t| t.get(field)) {
        None => Ok(DMatrix::zeros(rows, cols)),
        Some(v) => matrix_from_value(v, rows, cols, field),
    }
}

fn const_vector(table: Option<&Value>, field: &str, n: usize) -> Result<DVector<f64>> {
    Ok(DVector::from_column_slice(const_matrix(table, field, n, 1)?.as_slice()))
}

/// Parse a full model description from TOML text.
pub fn model_from_toml(text: &str) -> Result<ModelSpec> {
    model_from_toml_with(text, None)
}

/// Parse with an optional grid-steps override (CLI `--steps`).
///
/// Only constant coefficients can be re-broadcast onto a different grid;
/// explicitly time-varying paths pin the sample count.
pub fn model_from_toml_with(text: &str, steps_override: Option<usize>) -> Result<ModelSpec> {
    let mut root: Value = text
        .parse()
        .map_err(|e| Error::config(format!("toml parse error: {e}")))?;
    if let Some(steps) = steps_override {
        let grid = root
            .get_mut("grid")
            .ok_or_else(|| Error::config("missing [grid] section"))?;
        if let Value::Table(t) = grid {
            t.insert("steps".into(), Value::Integer(steps as i64));
        }
    }
    let root = root;

    let n = root
        .get("n")
        .map(|v| number(v, "n"))
        .transpose()?
        .unwrap_or(1.0) as usize;
    let k = root
        .get("k")
        .map(|v| number(v, "k"))
        .transpose()?
        .unwrap_or(1.0) as usize;
    if n == 0 || k == 0 {
        return Err(Error::config("n and k must be positive"));
    }

    let grid_tbl = root.get("grid").ok_or_else(|| Error::config("missing [grid] section"))?;
    let t_end = number(
        grid_tbl.get("t_end").ok_or_else(|| Error::config("grid.t_end missing"))?,
        "grid.t_end",
    )?;
    let steps = number(
        grid_tbl.get("steps").ok_or_else(|| Error::config("grid.steps missing"))?,
        "grid.steps",
    )? as usize;
    let grid = TimeGrid::new(t_end, steps)?;

    let identity = DMatrix::identity(n, n);
    let id_k = DMatrix::identity(k, k);

    let obs = |tbl: Option<&Value>| -> Result<ObservationModel> {
        Ok(ObservationModel {
            h: path_from_table(tbl, "h", &grid, n, n, None)?,
            h_bar: path_from_table(tbl, "h_bar", &grid, n, n, None)?,
            i_pop: path_from_table(tbl, "i_pop", &grid, n, n, None)?,
            h_aff: path_from_table(tbl, "h_aff", &grid, n, 1, None)?,
            f_noise: path_from_table(tbl, "f_noise", &grid, n, n, Some(identity.clone()))?,
        })
    };

    let ldr = root.get("leader");
    let leader = LeaderDynamics {
        a: path_from_table(ldr, "a", &grid, n, n, None)?,
        a_bar: path_from_table(ldr, "a_bar", &grid, n, n, None)?,
        c: path_from_table(ldr, "c", &grid, n, n, None)?,
        b_ctrl: path_from_table(ldr, "b_ctrl", &grid, n, k, None)?,
        b_aff: path_from_table(ldr, "b_aff", &grid, n, 1, None)?,
        sigma: path_from_table(ldr, "sigma", &grid, n, n, None)?,
        sigma_bar: path_from_table(ldr, "sigma_bar", &grid, n, n, None)?,
        xi: const_vector(ldr, "xi", n)?,
        obs: obs(ldr)?,
    };

    let flw = root.get("follower");
    let follower = FollowerDynamics {
        a: path_from_table(flw, "a", &grid, n, n, None)?,
        a_bar: path_from_table(flw, "a_bar", &grid, n, n, None)?,
        c: path_from_table(flw, "c", &grid, n, n, None)?,
        f_lead: path_from_table(flw, "f_lead", &grid, n, n, None)?,
        b_ctrl: path_from_table(flw, "b_ctrl", &grid, n, k, None)?,
        b_aff: path_from_table(flw, "b_aff", &grid, n, 1, None)?,
        sigma: path_from_table(flw, "sigma", &grid, n, n, None)?,
        sigma_bar: path_from_table(flw, "sigma_bar", &grid, n, n, None)?,
        xi: const_vector(flw, "xi", n)?,
        obs: obs(flw)?,
    };

    let lc = root.get("leader_cost");
    let leader_cost = LeaderCost {
        q: path_from_table(lc, "q", &grid, n, n, None)?,
        r: path_from_table(lc, "r", &grid, k, k, Some(id_k.clone()))?,
        s: path_from_table(lc, "s", &grid, k, n, None)?,
        gamma_pop: path_from_table(lc, "gamma_pop", &grid, n, n, None)?,
        gamma_mean: path_from_table(lc, "gamma_mean", &grid, n, n, None)?,
        eta: path_from_table(lc, "eta", &grid, n, 1, None)?,
        terminal: LeaderTerminalCost {
            g: const_matrix(lc, "g", n, n)?,
            gamma_pop: const_matrix(lc, "terminal_gamma_pop", n, n)?,
            gamma_mean: const_matrix(lc, "terminal_gamma_mean", n, n)?,
            eta: const_vector(lc, "terminal_eta", n)?,
        },
    };

    let fc = root.get("follower_cost");
    let follower_cost = FollowerCost {
        q: path_from_table(fc, "q", &grid, n, n, None)?,
        r: path_from_table(fc, "r", &grid, k, k, Some(id_k))?,
        s: path_from_table(fc, "s", &grid, k, n, None)?,
        gamma_pop: path_from_table(fc, "gamma_pop", &grid, n, n, None)?,
        gamma_mean: path_from_table(fc, "gamma_mean", &grid, n, n, None)?,
        gamma_lead: path_from_table(fc, "gamma_lead", &grid, n, n, None)?,
        gamma_lead_mean: path_from_table(fc, "gamma_lead_mean", &grid, n, n, None)?,
        eta: path_from_table(fc, "eta", &grid, n, 1, None)?,
        terminal: FollowerTerminalCost {
            g: const_matrix(fc, "g", n, n)?,
            gamma_pop: const_matrix(fc, "terminal_gamma_pop", n, n)?,
            gamma_mean: const_matrix(fc, "terminal_gamma_mean", n, n)?,
            gamma_lead: const_matrix(fc, "terminal_gamma_lead", n, n)?,
            gamma_lead_mean: const_matrix(fc, "terminal_gamma_lead_mean", n, n)?,
            eta: const_vector(fc, "terminal_eta", n)?,
        },
    };

    let spec = ModelSpec {
        grid,
        n,
        k,
        leader,
        follower,
        leader_cost,
        follower_cost,
    };
    spec.check_dimensions()?;
    Ok(spec)
}

/// Load a model description from a file path.
pub fn model_from_file(path: &std::path::Path) -> Result<ModelSpec> {
    let text = std::fs::read_to_string(path)?;
    model_from_toml(&text)
}

pub fn model_from_file_with(
    path: &std::path::Path,
    steps_override: Option<usize>,
) -> Result<ModelSpec> {
    let text = std::fs::read_to_string(path)?;
    model_from_toml_with(&text, steps_override)
}
