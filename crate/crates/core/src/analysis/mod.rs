//! Sparsity metrics, grid sweeps, timing statistics and derivative checks.

mod check;
pub mod io;
mod sweep;
mod timing;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::regularizers::l1_norm;
use crate::solver::{Problem, SolveResult};
use crate::Trajectory;

pub use check::{check_derivatives, CheckEntry, CorruptedJacobians, DerivativeReport, CHECK_THRESHOLD};
pub use sweep::{run_sweep, SweepCell, SweepGrid, SweepSpec, TrendStat, TREND_THRESHOLD};
pub use timing::{timing_report, TimingReport, TimingStats};

/// Distance from a finite bound under which a control counts as saturated.
pub const SATURATION_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsityReport {
    /// Control scalars with `|u| ≤ β`.
    pub zero_count: usize,
    pub total_count: usize,
    pub zero_fraction: f64,
    /// Scalars within [`SATURATION_TOLERANCE`] of a finite bound.
    pub bound_saturation_count: usize,
    /// `Σ_t Σ_i |u_{t+1,i} − u_{t,i}|`
    pub total_variation: f64,
    pub final_task_cost: f64,
    /// `Σ |u|`
    pub l1_norm: f64,
}

impl SparsityReport {
    pub fn new(
        trajectory: &Trajectory,
        beta: f64,
        lower: &DVector<f64>,
        upper: &DVector<f64>,
        final_task_cost: f64,
    ) -> Self {
        let mut zero_count = 0;
        let mut total_count = 0;
        let mut bound_saturation_count = 0;
        for u in &trajectory.controls {
            for (i, &ui) in u.iter().enumerate() {
                total_count += 1;
                if ui.abs() <= beta {
                    zero_count += 1;
                }
                let near = |b: f64| b.is_finite() && (ui - b).abs() <= SATURATION_TOLERANCE;
                if near(lower[i]) || near(upper[i]) {
                    bound_saturation_count += 1;
                }
            }
        }
        let total_variation = trajectory
            .controls
            .windows(2)
            .map(|w| w[0].iter().zip(w[1].iter()).map(|(a, b)| (b - a).abs()).sum::<f64>())
            .sum();
        let scalars: Vec<f64> = trajectory.control_scalars().collect();
        Self {
            zero_count,
            total_count,
            zero_fraction: if total_count == 0 {
                1.0
            } else {
                zero_count as f64 / total_count as f64
            },
            bound_saturation_count,
            total_variation,
            final_task_cost,
            l1_norm: l1_norm(&scalars),
        }
    }

    /// Report for a solve, counting zeros with the problem's own `β`.
    pub fn for_solve(problem: &Problem, result: &SolveResult) -> Self {
        Self::new(
            &result.trajectory,
            problem.costs.loss.beta(),
            problem.model.lower_bounds(),
            problem.model.upper_bounds(),
            result.final_task_cost(),
        )
    }
}
