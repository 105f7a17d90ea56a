//! CSV and JSON output. Files are written to a temporary sibling and renamed
//! into place.
//!
//! Trajectory CSV columns: `knot, time, x_0 … x_{nx−1}, u_0 … u_{nu−1}`. The
//! final knot has no control, so its control cells are empty.
//!
//! Sweep CSV columns: `loss, beta, lambda, zero_count, zero_fraction,
//! final_task_cost, iterations, wall_ms, converged`. Metrics of a cell whose
//! solve errored are left empty.
//!
//! Floats are written with 17 significant digits.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use serde::Serialize;

use super::SweepGrid;
use crate::{Error, Result, Trajectory};

pub const SWEEP_COLUMNS: [&str; 9] = [
    "loss",
    "beta",
    "lambda",
    "zero_count",
    "zero_fraction",
    "final_task_cost",
    "iterations",
    "wall_ms",
    "converged",
];

/// Formats a float with 17 significant digits.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes `contents` to `path` via a temporary file in the same directory.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::InvalidInput(format!("cannot serialize {}: {e}", path.display())))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn trajectory_csv(traj: &Trajectory) -> String {
    let nx = traj.states[0].len();
    let nu = traj.controls.first().map_or(0, |u| u.len());
    let mut out = String::from("knot,time");
    for i in 0..nx {
        let _ = write!(out, ",x_{i}");
    }
    for i in 0..nu {
        let _ = write!(out, ",u_{i}");
    }
    out.push('\n');
    for (k, x) in traj.states.iter().enumerate() {
        let _ = write!(out, "{k},{}", fmt_float(traj.time(k)));
        for v in x.iter() {
            let _ = write!(out, ",{}", fmt_float(*v));
        }
        match traj.controls.get(k) {
            Some(u) => u.iter().for_each(|v| {
                let _ = write!(out, ",{}", fmt_float(*v));
            }),
            None => out.push_str(&",".repeat(nu)),
        }
        out.push('\n');
    }
    out
}

/// Sweep CSV; `include_timing = false` blanks the `wall_ms` column.
pub fn sweep_csv(grid: &SweepGrid, include_timing: bool) -> String {
    let mut out = SWEEP_COLUMNS.join(",");
    out.push('\n');
    for c in &grid.cells {
        let _ = write!(out, "{},{},{},", c.loss, fmt_float(c.beta), fmt_float(c.lambda));
        match &c.report {
            Some(r) => {
                let _ = write!(
                    out,
                    "{},{},{},",
                    r.zero_count,
                    fmt_float(r.zero_fraction),
                    fmt_float(r.final_task_cost)
                );
            }
            None => out.push_str(",,,"),
        }
        let wall = if include_timing { fmt_float(c.wall_ms) } else { String::new() };
        let _ = writeln!(out, "{},{},{}", c.iterations, wall, c.converged);
    }
    out
}
