use nalgebra::{DMatrix, DVector};

use super::box_qp::{box_qp, submatrix};
use super::{Gains, LimitMode, Problem, SolverConfig};
use crate::costs::RunningCost;
use crate::dynamics::{DynamicsHessians, StepJacobians};
use crate::{Error, Result, Trajectory};

/// Quadratic model of `Q(δx, δu)` at one knot.
#[derive(Debug, Clone, PartialEq)]
pub struct QModel {
    pub qx: DVector<f64>,
    pub qu: DVector<f64>,
    pub qxx: DMatrix<f64>,
    pub quu: DMatrix<f64>,
    pub qux: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueModel {
    pub v: f64,
    pub vx: DVector<f64>,
    pub vxx: DMatrix<f64>,
}

/// Derivatives along a trajectory; independent of the regularization `mu`.
pub(crate) struct Linearization {
    pub jacobians: Vec<StepJacobians>,
    pub hessians: Vec<Option<DynamicsHessians>>,
    pub running: Vec<RunningCost>,
    pub terminal: ValueModel,
}

impl Linearization {
    pub fn new(problem: &Problem, traj: &Trajectory, second_order: bool) -> Result<Self> {
        let model = problem.model.as_ref();
        let n = traj.knots();
        let mut jacobians = Vec::with_capacity(n - 1);
        let mut hessians = Vec::with_capacity(n - 1);
        let mut running = Vec::with_capacity(n - 1);
        for (t, (x, u)) in traj.states.iter().zip(&traj.controls).enumerate() {
            jacobians.push(model.linearize(x, u, problem.jacobian_mode)?);
            hessians.push(if second_order { model.dynamics_hessians(x, u) } else { None });
            running.push(problem.costs.running_cost(model, x, u, t)?);
        }
        let term = problem.costs.terminal_cost(model, traj.final_state(), n - 1)?;
        Ok(Self {
            jacobians,
            hessians,
            running,
            terminal: ValueModel {
                v: term.value,
                vx: term.hx,
                vxx: term.hxx,
            },
        })
    }
}

#[derive(Debug, Clone)]
pub(crate) struct BackwardPass {
    pub gains: Vec<Gains>,
    /// `values[t]` is the model at knot `t`; the last entry is terminal.
    #[cfg_attr(not(test), allow(dead_code))]
    pub values: Vec<ValueModel>,
    #[cfg_attr(not(test), allow(dead_code))]
    pub q_models: Vec<QModel>,
    /// `Σ kᵀQu` and `Σ kᵀQ̃uu k`, so the expected reduction of a step `α` is
    /// `α d1 − α²/2 d2`.
    pub d1: f64,
    pub d2: f64,
    /// Largest gradient component not held at a bound.
    pub gradient_norm: f64,
}

impl BackwardPass {
    pub fn expected_reduction(&self, alpha: f64) -> f64 {
        alpha * self.d1 - 0.5 * alpha * alpha * self.d2
    }
}

pub(crate) fn q_model(lin: &Linearization, t: usize, next: &ValueModel) -> QModel {
    let l = &lin.running[t];
    let StepJacobians { fx, fu } = &lin.jacobians[t];
    let vxx_fx = &next.vxx * fx;
    let vxx_fu = &next.vxx * fu;
    let mut q = QModel {
        qx: &l.lx + fx.tr_mul(&next.vx),
        qu: &l.lu + fu.tr_mul(&next.vx),
        qxx: &l.lxx + fx.tr_mul(&vxx_fx),
        quu: &l.luu + fu.tr_mul(&vxx_fu),
        qux: &l.lux + fu.tr_mul(&vxx_fx),
    };
    if let Some(h) = &lin.hessians[t] {
        for i in 0..next.vx.len() {
            q.qxx += &h.fxx[i] * next.vx[i];
            q.quu += &h.fuu[i] * next.vx[i];
            q.qux += &h.fux[i] * next.vx[i];
        }
    }
    q.qxx = symmetrize(&q.qxx);
    q.quu = symmetrize(&q.quu);
    q
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn all_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|v| v.is_finite())
}

pub(crate) fn backward_pass(
    problem: &Problem,
    traj: &Trajectory,
    lin: &Linearization,
    config: &SolverConfig,
    mu: f64,
    warm: Option<&[Gains]>,
) -> Result<BackwardPass> {
    let model = problem.model.as_ref();
    let (nu, ndx) = (model.nu(), model.ndx());
    let steps = traj.controls.len();
    let (lower, upper) = (model.lower_bounds(), model.upper_bounds());

    let mut values = vec![lin.terminal.clone(); steps + 1];
    let mut gains = vec![
        Gains {
            k: DVector::zeros(nu),
            big_k: DMatrix::zeros(nu, ndx),
        };
        steps
    ];
    let mut q_models = Vec::with_capacity(steps);
    let (mut d1, mut d2, mut gradient_norm) = (0.0f64, 0.0f64, 0.0f64);

    for t in (0..steps).rev() {
        let q = q_model(lin, t, &values[t + 1]);
        if !(q.qx.iter().chain(q.qu.iter()).all(|v| v.is_finite()) && all_finite(&q.quu) && all_finite(&q.qxx)) {
            return Err(Error::NonFinite(format!("Q-model at knot {t}")));
        }
        let quu_reg = &q.quu + DMatrix::identity(nu, nu) * mu;
        let chol = quu_reg
            .clone()
            .cholesky()
            .ok_or(Error::NotPositiveDefinite { knot: t, mu })?;

        let u = &traj.controls[t];
        let (k, big_k, free) = match config.limit_mode {
            LimitMode::BoxQp => {
                let warm_start = warm.map(|g| -&g[t].k);
                let sol = box_qp(&quu_reg, &q.qu, u, lower, upper, warm_start.as_ref()).map_err(|e| match e {
                    Error::NotPositiveDefinite { .. } => Error::NotPositiveDefinite { knot: t, mu },
                    other => other,
                })?;
                let mut big_k = DMatrix::zeros(nu, ndx);
                let free_idx = sol.free_indices();
                if let Some(factor) = &sol.free_factor {
                    let all: Vec<usize> = (0..ndx).collect();
                    let kf = factor.solve(&submatrix(&q.qux, &free_idx, &all));
                    for (a, &i) in free_idx.iter().enumerate() {
                        big_k.set_row(i, &kf.row(a));
                    }
                }
                (-sol.delta, big_k, sol.free)
            }
            LimitMode::Clamp | LimitMode::None => (chol.solve(&q.qu), chol.solve(&q.qux), vec![true; nu]),
        };

        for i in 0..nu {
            let pinned = config.limit_mode != LimitMode::None
                && ((u[i] >= upper[i] && q.qu[i] < 0.0) || (u[i] <= lower[i] && q.qu[i] > 0.0));
            if free[i] && !pinned {
                gradient_norm = gradient_norm.max(q.qu[i].abs());
            }
        }

        let quu_k = &q.quu * &k;
        d1 += k.dot(&q.qu);
        d2 += k.dot(&(&quu_reg * &k));

        let kt = big_k.transpose();
        let vx = &q.qx - &kt * &q.qu + &kt * &quu_k - q.qux.tr_mul(&k);
        let kt_qux = &kt * &q.qux;
        let vxx = &q.qxx + &kt * &q.quu * &big_k - &kt_qux - kt_qux.transpose();
        let v = values[t + 1].v + lin.running[t].value - k.dot(&q.qu) + 0.5 * k.dot(&quu_k);
        let vxx = symmetrize(&vxx);
        if !(vx.iter().all(|x| x.is_finite()) && all_finite(&vxx)) {
            return Err(Error::NonFinite(format!("value model at knot {t}")));
        }
        values[t] = ValueModel { v, vx, vxx };
        gains[t] = Gains { k, big_k };
        q_models.push(q);
    }
    q_models.reverse();
    Ok(BackwardPass {
        gains,
        values,
        q_models,
        d1,
        d2,
        gradient_norm,
    })
}
