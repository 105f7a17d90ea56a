//! Running and terminal costs.
//!
//! ```text
//! J(X, U) = h(x_N) + Σ_t [ l(x_t, u_t) + λ l_s(u_t) ]
//! h(x)    = (x ⊖ x*_N)ᵀ Q_f (x ⊖ x*_N)  [+ end-effector terminal term]
//! l(x, u) = (x ⊖ x*_t)ᵀ Q   (x ⊖ x*_t)  [+ end-effector running term]
//! ```
//!
//! State and control terms are separable, so `l_ux` is always zero and
//! `l_uu = λ diag(l_s'')`. All state derivatives live in the model's tangent
//! space.

use nalgebra::{DMatrix, DVector, Vector2};

use crate::dynamics::{check_len, PlanarKinematics, SystemModel};
use crate::regularizers::LossSpec;
use crate::{Error, Result, Trajectory};

/// Piecewise-constant reference `x*_t`, one state per stage.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSchedule {
    stages: Vec<(usize, DVector<f64>)>,
}

impl ReferenceSchedule {
    pub fn constant(state: DVector<f64>) -> Self {
        Self {
            stages: vec![(0, state)],
        }
    }

    /// Stages as `(first knot, reference state)`. The first stage must start
    /// at knot 0 and start knots must increase strictly.
    pub fn staged(stages: Vec<(usize, DVector<f64>)>) -> Result<Self> {
        match stages.first() {
            None => return Err(Error::InvalidInput("reference schedule is empty".into())),
            Some((0, _)) => {}
            Some((k, _)) => {
                return Err(Error::InvalidInput(format!(
                    "first reference stage must start at knot 0, got {k}"
                )))
            }
        }
        if stages.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::InvalidInput("reference stage start knots must increase".into()));
        }
        Ok(Self { stages })
    }

    pub fn at(&self, knot: usize) -> &DVector<f64> {
        let idx = self.stages.partition_point(|(start, _)| *start <= knot);
        &self.stages[idx.saturating_sub(1)].1
    }

    pub fn stages(&self) -> &[(usize, DVector<f64>)] {
        &self.stages
    }
}

/// Diagonal quadratic tracking of a reference schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticStateCost {
    pub running_weights: DVector<f64>,
    pub terminal_weights: DVector<f64>,
    pub references: ReferenceSchedule,
}

impl QuadraticStateCost {
    pub fn new(
        running_weights: DVector<f64>,
        terminal_weights: DVector<f64>,
        references: ReferenceSchedule,
    ) -> Result<Self> {
        for (name, w) in [("running", &running_weights), ("terminal", &terminal_weights)] {
            if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::InvalidInput(format!("{name} state weights must be non-negative")));
            }
        }
        Ok(Self {
            running_weights,
            terminal_weights,
            references,
        })
    }
}

/// `w ‖p(q) − target‖²` on the planar end-effector position.
///
/// The arm state is `(q, v)`; only the joint-position block enters.
#[derive(Debug, Clone, PartialEq)]
pub struct EndEffectorCost {
    pub kinematics: PlanarKinematics,
    pub target: Vector2<f64>,
    pub running_weight: f64,
    pub terminal_weight: f64,
}

impl EndEffectorCost {
    fn term(&self, x: &DVector<f64>, weight: f64, with_derivatives: bool) -> StateTerm {
        let n = self.kinematics.link_lengths().len();
        let nx = x.len();
        let q = &x.as_slice()[..n];
        let e = self.kinematics.end_effector(q) - self.target;
        let value = weight * e.norm_squared();
        if !with_derivatives {
            return StateTerm::value_only(value, nx);
        }
        let jac = self.kinematics.jacobian(q);
        let [hx, hy] = self.kinematics.hessians(q);
        let mut grad = DVector::zeros(nx);
        grad.rows_mut(0, n).copy_from(&(jac.transpose() * e * (2.0 * weight)));
        let mut hess = DMatrix::zeros(nx, nx);
        let block = (jac.transpose() * &jac + hx * e.x + hy * e.y) * (2.0 * weight);
        hess.view_mut((0, 0), (n, n)).copy_from(&block);
        StateTerm { value, grad, hess }
    }
}

struct StateTerm {
    value: f64,
    grad: DVector<f64>,
    hess: DMatrix<f64>,
}

impl StateTerm {
    fn value_only(value: f64, ndx: usize) -> Self {
        Self {
            value,
            grad: DVector::zeros(ndx),
            hess: DMatrix::zeros(0, 0),
        }
    }
}

/// Derivatives of `l(x, u) + λ l_s(u)` at one knot.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningCost {
    pub value: f64,
    /// State-dependent part of `value`.
    pub task: f64,
    /// `λ Σ l_s(u_i)`
    pub regularization: f64,
    pub lx: DVector<f64>,
    pub lu: DVector<f64>,
    pub lxx: DMatrix<f64>,
    pub luu: DMatrix<f64>,
    /// Always zero; kept so the Q-model assembly reads like the general case.
    pub lux: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TerminalCost {
    pub value: f64,
    pub hx: DVector<f64>,
    pub hxx: DMatrix<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct CostBreakdown {
    pub total: f64,
    /// Everything except the sparsity regularizer.
    pub task: f64,
    /// `λ Σ_t Σ_i l_s(u_{t,i})`
    pub regularization: f64,
    /// `h(x_N)`, reported as the final task cost.
    pub terminal: f64,
}

/// Every cost term of a problem.
#[derive(Debug, Clone, PartialEq)]
pub struct CostBundle {
    pub state: QuadraticStateCost,
    pub end_effector: Option<EndEffectorCost>,
    pub loss: LossSpec,
}

impl CostBundle {
    pub fn new(state: QuadraticStateCost, loss: LossSpec) -> Self {
        Self {
            state,
            end_effector: None,
            loss,
        }
    }

    pub fn with_end_effector(mut self, cost: EndEffectorCost) -> Self {
        self.end_effector = Some(cost);
        self
    }

    /// Checks dimensions against `model` and the horizon.
    pub fn validate(&self, model: &dyn SystemModel, knots: usize) -> Result<()> {
        check_len("running state weights", model.ndx(), self.state.running_weights.len())?;
        check_len("terminal state weights", model.ndx(), self.state.terminal_weights.len())?;
        for (start, x) in self.state.references.stages() {
            check_len("reference state", model.nx(), x.len())?;
            model.state_diff(x, x)?;
            if *start >= knots.max(1) {
                return Err(Error::InvalidInput(format!(
                    "reference stage starts at knot {start} beyond horizon of {knots} knots"
                )));
            }
        }
        if let Some(ee) = &self.end_effector {
            if 2 * ee.kinematics.link_lengths().len() != model.nx() {
                return Err(Error::InvalidInput(
                    "end-effector cost needs a (q, v) arm state".into(),
                ));
            }
            if !(ee.running_weight >= 0.0 && ee.terminal_weight >= 0.0) {
                return Err(Error::InvalidInput("end-effector weights must be non-negative".into()));
            }
        }
        Ok(())
    }

    fn state_terms(
        &self,
        model: &dyn SystemModel,
        x: &DVector<f64>,
        knot: usize,
        terminal: bool,
        with_derivatives: bool,
    ) -> Result<StateTerm> {
        let weights = if terminal {
            &self.state.terminal_weights
        } else {
            &self.state.running_weights
        };
        let reference = self.state.references.at(knot);
        let ndx = model.ndx();
        let mut out = if weights.iter().all(|w| *w == 0.0) {
            model.state_diff(x, reference)?;
            StateTerm {
                value: 0.0,
                grad: DVector::zeros(ndx),
                hess: DMatrix::zeros(ndx, ndx),
            }
        } else if with_derivatives {
            let t = model.tracking_cost(x, reference, weights)?;
            StateTerm {
                value: t.value,
                grad: t.grad,
                hess: t.hess,
            }
        } else {
            let e = model.state_diff(x, reference)?;
            StateTerm::value_only(e.dot(&weights.component_mul(&e)), ndx)
        };
        if let Some(ee) = &self.end_effector {
            let w = if terminal { ee.terminal_weight } else { ee.running_weight };
            if w > 0.0 {
                let t = ee.term(x, w, with_derivatives);
                out.value += t.value;
                if with_derivatives {
                    out.grad += t.grad;
                    out.hess += t.hess;
                }
            }
        }
        Ok(out)
    }

    fn regularization(&self, u: &DVector<f64>, with_derivatives: bool) -> Result<(f64, DVector<f64>, DVector<f64>)> {
        let lambda = self.loss.lambda();
        let nu = u.len();
        if lambda == 0.0 {
            // exactly zero, including for non-smooth points
            if u.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("control".into()));
            }
            return Ok((0.0, DVector::zeros(nu), DVector::zeros(nu)));
        }
        if !with_derivatives {
            let mut v = 0.0;
            for &ui in u.iter() {
                v += self.loss.value(ui)?;
            }
            return Ok((lambda * v, DVector::zeros(0), DVector::zeros(0)));
        }
        let e = self.loss.eval_vector(u)?;
        Ok((lambda * e.value, e.grad * lambda, e.hess_diag * lambda))
    }

    pub fn running_cost(
        &self,
        model: &dyn SystemModel,
        x: &DVector<f64>,
        u: &DVector<f64>,
        knot: usize,
    ) -> Result<RunningCost> {
        check_len("control", model.nu(), u.len())?;
        let s = self.state_terms(model, x, knot, false, true)?;
        let (reg, lu, luu) = self.regularization(u, true)?;
        let (ndx, nu) = (model.ndx(), model.nu());
        Ok(RunningCost {
            value: s.value + reg,
            task: s.value,
            regularization: reg,
            lx: s.grad,
            lu,
            lxx: s.hess,
            luu: DMatrix::from_diagonal(&luu),
            lux: DMatrix::zeros(nu, ndx),
        })
    }

    /// `(task, regularization)` parts of the running cost, without derivatives.
    pub fn running_value(
        &self,
        model: &dyn SystemModel,
        x: &DVector<f64>,
        u: &DVector<f64>,
        knot: usize,
    ) -> Result<(f64, f64)> {
        check_len("control", model.nu(), u.len())?;
        let s = self.state_terms(model, x, knot, false, false)?;
        let (reg, _, _) = self.regularization(u, false)?;
        Ok((s.value, reg))
    }

    pub fn terminal_cost(&self, model: &dyn SystemModel, x: &DVector<f64>, knot: usize) -> Result<TerminalCost> {
        let s = self.state_terms(model, x, knot, true, true)?;
        Ok(TerminalCost {
            value: s.value,
            hx: s.grad,
            hxx: s.hess,
        })
    }

    pub fn terminal_value(&self, model: &dyn SystemModel, x: &DVector<f64>, knot: usize) -> Result<f64> {
        Ok(self.state_terms(model, x, knot, true, false)?.value)
    }

    /// `J(X, U)` with its task/regularizer/terminal split.
    pub fn total_cost(&self, model: &dyn SystemModel, trajectory: &Trajectory) -> Result<CostBreakdown> {
        let n = trajectory.knots();
        if trajectory.controls.len() + 1 != n {
            return Err(Error::DimensionMismatch {
                context: "trajectory controls",
                expected: n.saturating_sub(1),
                actual: trajectory.controls.len(),
            });
        }
        let mut out = CostBreakdown::default();
        for (t, (x, u)) in trajectory.states.iter().zip(&trajectory.controls).enumerate() {
            let (task, reg) = self.running_value(model, x, u, t)?;
            out.task += task;
            out.regularization += reg;
        }
        out.terminal = self.terminal_value(model, trajectory.final_state(), n - 1)?;
        out.task += out.terminal;
        out.total = out.task + out.regularization;
        Ok(out)
    }
}
