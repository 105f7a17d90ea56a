use nalgebra::DVector;

use super::{Gains, LimitMode, Problem};
use crate::costs::CostBreakdown;
use crate::Trajectory;

/// Rolls out `û_t = u_t − α k_t − K_t (x̂_t ⊖ x_t)`.
///
/// Returns `None` when the rollout leaves the finite reals or the model
/// rejects a state, which the line search treats as a failed step.
pub(crate) fn forward_pass(
    problem: &Problem,
    reference: &Trajectory,
    gains: &[Gains],
    alpha: f64,
    limit_mode: LimitMode,
) -> Option<(Trajectory, CostBreakdown)> {
    let model = problem.model.as_ref();
    let steps = reference.controls.len();
    let mut states: Vec<DVector<f64>> = Vec::with_capacity(steps + 1);
    let mut controls = Vec::with_capacity(steps);
    states.push(reference.states[0].clone());
    for t in 0..steps {
        let x = &states[t];
        let dx = model.state_diff(x, &reference.states[t]).ok()?;
        let mut u = &reference.controls[t] - &gains[t].k * alpha - &gains[t].big_k * dx;
        if limit_mode != LimitMode::None {
            model.clamp_control(&mut u);
        }
        let next = model.step(x, &u).ok()?;
        if next.iter().any(|v| !v.is_finite()) {
            return None;
        }
        controls.push(u);
        states.push(next);
    }
    let traj = Trajectory::new(states, controls, reference.dt).ok()?;
    let cost = problem.costs.total_cost(model, &traj).ok()?;
    cost.total.is_finite().then_some((traj, cost))
}
