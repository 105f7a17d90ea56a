use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::SparsityReport;
use crate::regularizers::{LossKind, LossSpec};
use crate::solver::{ExitReason, Problem, SolverConfig};
use crate::{Error, Result};

/// Fraction of adjacent λ pairs that must follow a trend.
pub const TREND_THRESHOLD: f64 = 0.8;

/// Axes of a (loss, β, λ) grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub losses: Vec<LossKind>,
    pub betas: Vec<f64>,
    pub lambdas: Vec<f64>,
}

impl SweepSpec {
    /// `n` values from `lo` to `hi`, evenly spaced in `log10`.
    pub fn log_spaced(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) || n == 0 {
            return Err(Error::InvalidInput(format!("log grid needs 0 < lo ≤ hi and n ≥ 1, got {lo}, {hi}, {n}")));
        }
        if n == 1 {
            return Ok(vec![lo]);
        }
        let (a, b) = (lo.log10(), hi.log10());
        Ok((0..n)
            .map(|i| 10f64.powf(a + (b - a) * i as f64 / (n - 1) as f64))
            .collect())
    }

    pub fn validate(&self) -> Result<()> {
        if self.losses.is_empty() {
            return Err(Error::EmptyGrid("losses"));
        }
        if self.betas.is_empty() {
            return Err(Error::EmptyGrid("betas"));
        }
        if self.lambdas.is_empty() {
            return Err(Error::EmptyGrid("lambdas"));
        }
        for &kind in &self.losses {
            for &beta in &self.betas {
                for &lambda in &self.lambdas {
                    LossSpec::new(kind, beta, lambda)?;
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.losses.len() * self.betas.len() * self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Cells in loss-major, then β, then λ order.
    fn cells(&self) -> Vec<(LossKind, f64, f64)> {
        let mut out = Vec::with_capacity(self.len());
        for &kind in &self.losses {
            for &beta in &self.betas {
                for &lambda in &self.lambdas {
                    out.push((kind, beta, lambda));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub loss: LossKind,
    pub beta: f64,
    pub lambda: f64,
    pub converged: bool,
    pub exit_reason: Option<ExitReason>,
    pub iterations: usize,
    pub wall_ms: f64,
    /// `None` when the solve returned an error.
    pub report: Option<SparsityReport>,
    pub error: Option<String>,
}

/// Adjacent-λ trend along one (loss, β) row of the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendStat {
    pub loss: LossKind,
    pub beta: f64,
    pub pairs: usize,
    pub zero_count_nondecreasing: usize,
    pub task_cost_nondecreasing: usize,
}

impl TrendStat {
    pub fn zero_count_fraction(&self) -> f64 {
        fraction(self.zero_count_nondecreasing, self.pairs)
    }

    pub fn task_cost_fraction(&self) -> f64 {
        fraction(self.task_cost_nondecreasing, self.pairs)
    }

    pub fn holds(&self) -> bool {
        self.zero_count_fraction() >= TREND_THRESHOLD && self.task_cost_fraction() >= TREND_THRESHOLD
    }
}

fn fraction(k: usize, n: usize) -> f64 {
    if n == 0 {
        1.0
    } else {
        k as f64 / n as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub spec: SweepSpec,
    pub cells: Vec<SweepCell>,
    /// One entry per (loss, β) row.
    pub trends: Vec<TrendStat>,
}

impl SweepGrid {
    pub fn cell(&self, loss: LossKind, beta_index: usize, lambda_index: usize) -> &SweepCell {
        let l = self.spec.losses.iter().position(|k| *k == loss).expect("loss in grid");
        let (nb, nl) = (self.spec.betas.len(), self.spec.lambdas.len());
        &self.cells[(l * nb + beta_index) * nl + lambda_index]
    }

    /// Trend at the largest β for `loss`.
    pub fn headline_trend(&self, loss: LossKind) -> Option<&TrendStat> {
        let largest = self.spec.betas.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        self.trends.iter().find(|t| t.loss == loss && t.beta == largest)
    }

    fn compute_trends(spec: &SweepSpec, cells: &[SweepCell]) -> Vec<TrendStat> {
        let mut order: Vec<usize> = (0..spec.lambdas.len()).collect();
        order.sort_by(|&a, &b| spec.lambdas[a].total_cmp(&spec.lambdas[b]));
        let mut out = Vec::new();
        for (l, &loss) in spec.losses.iter().enumerate() {
            for (b, &beta) in spec.betas.iter().enumerate() {
                let row = |i: usize| &cells[(l * spec.betas.len() + b) * spec.lambdas.len() + i];
                let mut stat = TrendStat {
                    loss,
                    beta,
                    pairs: order.len().saturating_sub(1),
                    zero_count_nondecreasing: 0,
                    task_cost_nondecreasing: 0,
                };
                for w in order.windows(2) {
                    if let (Some(a), Some(c)) = (&row(w[0]).report, &row(w[1]).report) {
                        stat.zero_count_nondecreasing += usize::from(c.zero_count >= a.zero_count);
                        stat.task_cost_nondecreasing += usize::from(c.final_task_cost >= a.final_task_cost);
                    }
                }
                out.push(stat);
            }
        }
        out
    }
}

fn solve_cell(template: &Problem, config: &SolverConfig, (loss, beta, lambda): (LossKind, f64, f64)) -> SweepCell {
    let mut cell = SweepCell {
        loss,
        beta,
        lambda,
        converged: false,
        exit_reason: None,
        iterations: 0,
        wall_ms: 0.0,
        report: None,
        error: None,
    };
    let mut problem = template.clone();
    let outcome = LossSpec::new(loss, beta, lambda).and_then(|spec| {
        problem.costs.loss = spec;
        problem.solve(config)
    });
    match outcome {
        Ok(result) => {
            cell.converged = result.converged;
            cell.exit_reason = Some(result.exit_reason);
            cell.iterations = result.iterations;
            cell.wall_ms = result.wall_ms();
            // zero counting uses the cell's β, also for L2
            cell.report = Some(SparsityReport::new(
                &result.trajectory,
                beta,
                problem.model.lower_bounds(),
                problem.model.upper_bounds(),
                result.final_task_cost(),
            ));
        }
        Err(e) => cell.error = Some(e.to_string()),
    }
    cell
}

/// Solves every grid cell from zero controls on `jobs` worker threads.
///
/// Cells are independent; a failed solve is recorded in its cell and does not
/// abort the sweep. Output order and content do not depend on `jobs`.
pub fn run_sweep(template: &Problem, spec: &SweepSpec, config: &SolverConfig, jobs: usize) -> Result<SweepGrid> {
    spec.validate()?;
    config.validate()?;
    let grid = spec.cells();
    let cells: Vec<SweepCell> = if jobs <= 1 {
        grid.into_iter().map(|c| solve_cell(template, config, c)).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::InvalidInput(format!("cannot start {jobs} workers: {e}")))?;
        pool.install(|| grid.into_par_iter().map(|c| solve_cell(template, config, c)).collect())
    };
    let trends = SweepGrid::compute_trends(spec, &cells);
    Ok(SweepGrid {
        spec: spec.clone(),
        cells,
        trends,
    })
}
