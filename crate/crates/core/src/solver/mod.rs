//! Differential dynamic programming with box-limited controls.
//!
//! Each iteration linearizes the dynamics and quadratizes the cost along the
//! current trajectory, runs a backward Riccati-like pass to obtain
//! feed-forward `k_t` and feedback `K_t` gains, and then line-searches the
//! forward rollout
//!
//! ```text
//! û_t = u_t − α k_t − K_t (x̂_t ⊖ x_t)
//! ```
//!
//! The Q-model is Gauss-Newton (iLQR) by default: dynamics curvature enters
//! only when [`SolverConfig::use_second_order_dynamics`] is set and the model
//! provides [`crate::dynamics::DynamicsHessians`].

mod backward;
pub mod box_qp;
mod forward;

use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::costs::{CostBreakdown, CostBundle};
use crate::dynamics::{check_len, JacobianMode, SystemModel};
use crate::{Error, Result, Trajectory};

pub use backward::{QModel, ValueModel};
pub use box_qp::{box_qp, BoxQpSolution};

/// How control bounds enter the solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LimitMode {
    /// Clip controls in the forward pass only.
    Clamp,
    /// Solve a box QP per knot in the backward pass and clip in the forward pass.
    #[default]
    #[serde(rename = "box_qp")]
    BoxQp,
    /// Ignore bounds.
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub max_iterations: usize,
    /// Converged when an accepted step changes the cost by less than this.
    pub cost_tolerance: f64,
    /// Converged when every control gradient not held at a bound is below this.
    pub gradient_tolerance: f64,
    pub mu_init: f64,
    /// Values below this snap to zero.
    pub mu_min: f64,
    pub mu_max: f64,
    /// Growth factor after a failed backward or forward pass.
    pub mu_scale: f64,
    /// Shrink factor after a full (`α = 1`) step is accepted.
    pub mu_decrease: f64,
    /// Step lengths tried in order.
    pub line_search: Vec<f64>,
    /// Minimum ratio of actual to expected cost reduction.
    pub armijo: f64,
    pub limit_mode: LimitMode,
    pub use_second_order_dynamics: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            cost_tolerance: 1e-9,
            gradient_tolerance: 1e-7,
            mu_init: 1e-6,
            mu_min: 1e-6,
            mu_max: 1e10,
            mu_scale: 10.0,
            mu_decrease: 2.0,
            line_search: (0..=10).map(|i| 0.5f64.powi(i)).collect(),
            armijo: 1e-4,
            limit_mode: LimitMode::BoxQp,
            use_second_order_dynamics: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::config(format!("solver.{name}"), format!("must be positive, got {v}")))
            }
        };
        positive("cost_tolerance", self.cost_tolerance)?;
        positive("gradient_tolerance", self.gradient_tolerance)?;
        positive("mu_max", self.mu_max)?;
        positive("armijo", self.armijo)?;
        if !(self.mu_min >= 0.0 && self.mu_init >= 0.0 && self.mu_min <= self.mu_max && self.mu_init <= self.mu_max) {
            return Err(Error::config("solver.mu_min", "need 0 ≤ mu_min, mu_init ≤ mu_max"));
        }
        if !(self.mu_scale > 1.0 && self.mu_decrease > 1.0) {
            return Err(Error::config("solver.mu_scale", "mu_scale and mu_decrease must exceed 1"));
        }
        if self.max_iterations == 0 {
            return Err(Error::config("solver.max_iterations", "must be at least 1"));
        }
        if self.line_search.is_empty() || self.line_search.iter().any(|a| !(*a > 0.0 && *a <= 1.0)) {
            return Err(Error::config("solver.line_search", "step lengths must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// Control correction `δu = −k − K δx`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gains {
    pub k: DVector<f64>,
    #[serde(rename = "K")]
    pub big_k: DMatrix<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitReason {
    GradientTolerance,
    CostTolerance,
    MaxIterations,
    /// Regularization exceeded `mu_max` without an acceptable step.
    RegularizationLimit,
}

impl ExitReason {
    pub fn converged(self) -> bool {
        matches!(self, Self::GradientTolerance | Self::CostTolerance)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveResult {
    pub trajectory: Trajectory,
    pub gains: Vec<Gains>,
    pub converged: bool,
    pub exit_reason: ExitReason,
    /// Backward/forward cycles run, whether or not their step was accepted.
    pub iterations: usize,
    /// Total cost of the initial rollout followed by each accepted iterate.
    pub cost_trace: Vec<f64>,
    /// Wall time of each cycle in milliseconds.
    pub iteration_ms: Vec<f64>,
    pub cost: CostBreakdown,
    pub final_mu: f64,
    pub gradient_norm: f64,
}

impl SolveResult {
    pub fn wall_ms(&self) -> f64 {
        self.iteration_ms.iter().sum()
    }

    pub fn final_task_cost(&self) -> f64 {
        self.cost.terminal
    }
}

/// A shooting problem: dynamics, costs, initial state and horizon.
#[derive(Debug, Clone)]
pub struct Problem {
    pub model: Arc<dyn SystemModel>,
    pub costs: CostBundle,
    pub x0: DVector<f64>,
    /// Number of knots `N`; the problem has `N − 1` controls.
    pub knots: usize,
    pub jacobian_mode: JacobianMode,
}

impl Problem {
    pub fn new(model: Arc<dyn SystemModel>, costs: CostBundle, x0: DVector<f64>, knots: usize) -> Result<Self> {
        if knots < 2 {
            return Err(Error::InvalidInput(format!("horizon needs at least 2 knots, got {knots}")));
        }
        check_len("initial state", model.nx(), x0.len())?;
        model.state_diff(&x0, &x0)?;
        costs.validate(model.as_ref(), knots)?;
        Ok(Self {
            model,
            costs,
            x0,
            knots,
            jacobian_mode: JacobianMode::Analytic,
        })
    }

    pub fn with_jacobian_mode(mut self, mode: JacobianMode) -> Self {
        self.jacobian_mode = mode;
        self
    }

    pub fn zero_controls(&self) -> Vec<DVector<f64>> {
        vec![DVector::zeros(self.model.nu()); self.knots - 1]
    }

    pub fn rollout(&self, controls: Vec<DVector<f64>>) -> Result<Trajectory> {
        check_len("control sequence", self.knots - 1, controls.len())?;
        for u in &controls {
            check_len("control", self.model.nu(), u.len())?;
        }
        let states = self.model.rollout(&self.x0, &controls)?;
        Trajectory::new(states, controls, self.model.dt())
    }

    pub fn cost(&self, traj: &Trajectory) -> Result<CostBreakdown> {
        self.costs.total_cost(self.model.as_ref(), traj)
    }

    /// Solves from all-zero controls.
    pub fn solve(&self, config: &SolverConfig) -> Result<SolveResult> {
        solve(self, self.zero_controls(), config)
    }
}

/// Runs DDP from `initial_controls`.
///
/// Divergence is reported through [`SolveResult::exit_reason`]; an `Err` is
/// returned only for invalid input or non-finite derivatives.
pub fn solve(problem: &Problem, mut initial_controls: Vec<DVector<f64>>, config: &SolverConfig) -> Result<SolveResult> {
    config.validate()?;
    if config.limit_mode != LimitMode::None {
        for u in &mut initial_controls {
            problem.model.clamp_control(u);
        }
    }
    let mut traj = problem.rollout(initial_controls)?;
    let mut cost = problem.cost(&traj)?;
    if !cost.total.is_finite() {
        return Err(Error::NonFinite("initial rollout cost".into()));
    }

    let mut mu = config.mu_init;
    let mut cost_trace = vec![cost.total];
    let mut iteration_ms = Vec::new();
    let mut gains: Option<Vec<Gains>> = None;
    let mut iterations = 0;
    let mut gradient_norm = f64::INFINITY;
    let mut lin = backward::Linearization::new(problem, &traj, config.use_second_order_dynamics)?;

    let exit_reason = loop {
        if iterations >= config.max_iterations {
            break ExitReason::MaxIterations;
        }
        let started = Instant::now();

        let pass = loop {
            match backward::backward_pass(problem, &traj, &lin, config, mu, gains.as_deref()) {
                Ok(pass) => break Some(pass),
                Err(Error::NotPositiveDefinite { .. }) => {
                    mu = (mu * config.mu_scale).max(config.mu_min);
                    if mu > config.mu_max {
                        break None;
                    }
                }
                Err(e) => return Err(e),
            }
        };
        let Some(pass) = pass else {
            iteration_ms.push(started.elapsed().as_secs_f64() * 1e3);
            break ExitReason::RegularizationLimit;
        };
        gradient_norm = pass.gradient_norm;
        gains = Some(pass.gains.clone());
        if gradient_norm < config.gradient_tolerance {
            break ExitReason::GradientTolerance;
        }

        iterations += 1;
        let mut accepted = None;
        for &alpha in &config.line_search {
            let expected = pass.expected_reduction(alpha);
            if let Some((cand, cand_cost)) = forward::forward_pass(problem, &traj, &pass.gains, alpha, config.limit_mode) {
                let actual = cost.total - cand_cost.total;
                if expected > 0.0 && actual >= config.armijo * expected {
                    accepted = Some((alpha, cand, cand_cost));
                    break;
                }
            }
        }
        iteration_ms.push(started.elapsed().as_secs_f64() * 1e3);

        match accepted {
            Some((alpha, cand, cand_cost)) => {
                let change = cost.total - cand_cost.total;
                traj = cand;
                cost = cand_cost;
                cost_trace.push(cost.total);
                lin = backward::Linearization::new(problem, &traj, config.use_second_order_dynamics)?;
                if alpha == 1.0 {
                    mu /= config.mu_decrease;
                    if mu < config.mu_min {
                        mu = 0.0;
                    }
                }
                if change.abs() < config.cost_tolerance {
                    // refresh gains so they describe the returned trajectory
                    let refreshed = backward::backward_pass(problem, &traj, &lin, config, mu, gains.as_deref())
                        .or_else(|_| backward::backward_pass(problem, &traj, &lin, config, mu.max(config.mu_min), gains.as_deref()));
                    if let Ok(pass) = refreshed {
                        gradient_norm = pass.gradient_norm;
                        gains = Some(pass.gains);
                    }
                    break ExitReason::CostTolerance;
                }
            }
            None => {
                if pass.expected_reduction(1.0) < config.cost_tolerance {
                    break ExitReason::CostTolerance;
                }
                mu = (mu * config.mu_scale).max(config.mu_min);
                if mu > config.mu_max {
                    break ExitReason::RegularizationLimit;
                }
            }
        }
    };

    let gains = gains.unwrap_or_else(|| {
        let (nu, ndx) = (problem.model.nu(), problem.model.ndx());
        vec![
            Gains {
                k: DVector::zeros(nu),
                big_k: DMatrix::zeros(nu, ndx),
            };
            problem.knots - 1
        ]
    });
    Ok(SolveResult {
        trajectory: traj,
        gains,
        converged: exit_reason.converged(),
        exit_reason,
        iterations,
        cost_trace,
        iteration_ms,
        cost,
        final_mu: mu,
        gradient_norm,
    })
}
