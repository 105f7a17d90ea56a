use serde::{Deserialize, Serialize};

use crate::regularizers::{LossKind, LossSpec};
use crate::solver::{Problem, SolverConfig};
use crate::{Error, Result};

/// Shape parameter used for every timing run.
pub const TIMING_BETA: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingStats {
    pub loss: LossKind,
    pub runs: usize,
    pub converged: usize,
    pub mean_iterations: f64,
    pub median_iterations: f64,
    pub mean_wall_ms: f64,
    pub median_wall_ms: f64,
    pub iterations: Vec<usize>,
    pub wall_ms: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub beta: f64,
    pub lambdas: Vec<f64>,
    pub stats: Vec<TimingStats>,
    /// Loss kinds from fastest to slowest median wall time.
    pub ordering: Vec<LossKind>,
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Solves each loss at `β = 1` across `lambdas`, one run at a time.
pub fn timing_report(template: &Problem, losses: &[LossKind], lambdas: &[f64], config: &SolverConfig) -> Result<TimingReport> {
    if losses.is_empty() {
        return Err(Error::EmptyGrid("losses"));
    }
    if lambdas.is_empty() {
        return Err(Error::EmptyGrid("lambdas"));
    }
    let mut stats = Vec::with_capacity(losses.len());
    for &loss in losses {
        let mut iterations = Vec::with_capacity(lambdas.len());
        let mut wall_ms = Vec::with_capacity(lambdas.len());
        let mut converged = 0;
        for &lambda in lambdas {
            let mut problem = template.clone();
            problem.costs.loss = LossSpec::new(loss, TIMING_BETA, lambda)?;
            let result = problem.solve(config)?;
            iterations.push(result.iterations);
            wall_ms.push(result.wall_ms());
            converged += usize::from(result.converged);
        }
        let its: Vec<f64> = iterations.iter().map(|&i| i as f64).collect();
        stats.push(TimingStats {
            loss,
            runs: lambdas.len(),
            converged,
            mean_iterations: mean(&its),
            median_iterations: median(&its),
            mean_wall_ms: mean(&wall_ms),
            median_wall_ms: median(&wall_ms),
            iterations,
            wall_ms,
        });
    }
    let mut ordering: Vec<&TimingStats> = stats.iter().collect();
    ordering.sort_by(|a, b| a.median_wall_ms.total_cmp(&b.median_wall_ms));
    let ordering = ordering.iter().map(|s| s.loss).collect();
    Ok(TimingReport {
        beta: TIMING_BETA,
        lambdas: lambdas.to_vec(),
        stats,
        ordering,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::costs::{CostBundle, QuadraticStateCost, ReferenceSchedule};
    use crate::dynamics::ArmModel;
    use nalgebra::DVector;
    use std::sync::Arc;

    fn template() -> Problem {
        let arm = ArmModel::new(vec![0.3; 2], 0.1, vec![2.0; 2]).unwrap();
        let state = QuadraticStateCost::new(
            DVector::from_element(4, 0.1),
            DVector::from_element(4, 10.0),
            ReferenceSchedule::constant(DVector::from_vec(vec![0.5, -0.3, 0.0, 0.0])),
        )
        .unwrap();
        Problem::new(Arc::new(arm), CostBundle::new(state, LossSpec::l2(1.0).unwrap()), DVector::zeros(4), 20).unwrap()
    }

    #[test]
    fn single_run_statistics() {
        let r = timing_report(&template(), &[LossKind::Huber], &[0.1], &SolverConfig::default()).unwrap();
        let s = &r.stats[0];
        assert_eq!(s.runs, 1);
        assert_eq!(s.mean_iterations, s.iterations[0] as f64);
        assert_eq!(s.median_wall_ms, s.wall_ms[0]);
        assert_eq!(r.ordering, vec![LossKind::Huber]);
    }

    #[test]
    fn empty_lambda_grid() {
        assert!(matches!(
            timing_report(&template(), &[LossKind::L2], &[], &SolverConfig::default()),
            Err(Error::EmptyGrid("lambdas"))
        ));
    }

    #[test]
    fn medians() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
