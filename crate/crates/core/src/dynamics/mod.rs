//! Discrete-time system models `x_{t+1} = f(x_t, u_t)`.
//!
//! All models integrate with semi-implicit (symplectic) Euler: velocities are
//! updated from the accelerations first and the configuration is advanced with
//! the *new* velocities. Jacobians are expressed in the tangent space of the
//! state manifold, which is Euclidean for every model except the satellite,
//! whose orientation is a unit quaternion with a 3-dimensional tangent.

mod arm;
mod cartpole;
mod satellite;
pub mod so3;

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use arm::{ArmModel, PlanarKinematics};
pub use cartpole::CartpoleModel;
pub use satellite::{SatelliteModel, SatelliteParams, Thruster, ThrusterTable};

/// Tangent-space Jacobians of one integration step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepJacobians {
    /// `ndx × ndx`
    pub fx: DMatrix<f64>,
    /// `ndx × nu`
    pub fu: DMatrix<f64>,
}

/// Second-order dynamics terms: one matrix per output tangent coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsHessians {
    pub fxx: Vec<DMatrix<f64>>,
    pub fuu: Vec<DMatrix<f64>>,
    /// `nu × ndx` per output coordinate
    pub fux: Vec<DMatrix<f64>>,
}

/// Weighted squared tangent-space error `eᵀ W e` with `e = x ⊖ x_ref`, and its
/// derivatives with respect to a tangent perturbation of `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackingTerm {
    pub value: f64,
    pub grad: DVector<f64>,
    pub hess: DMatrix<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JacobianMode {
    #[default]
    Analytic,
    FiniteDifference,
}

pub trait SystemModel: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;

    fn nx(&self) -> usize;

    /// Dimension of the tangent space; equals `nx` for Euclidean states.
    fn ndx(&self) -> usize {
        self.nx()
    }

    fn nu(&self) -> usize;

    fn dt(&self) -> f64;

    fn lower_bounds(&self) -> &DVector<f64>;

    fn upper_bounds(&self) -> &DVector<f64>;

    fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>>;

    /// Analytic Jacobians where the model provides them, finite differences
    /// otherwise.
    fn jacobians(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<StepJacobians> {
        finite_difference_jacobians(self, x, u)
    }

    /// Tangent vector taking `x0` to `x1`.
    fn state_diff(&self, x1: &DVector<f64>, x0: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("state_diff x1", self.nx(), x1.len())?;
        check_len("state_diff x0", self.nx(), x0.len())?;
        Ok(x1 - x0)
    }

    /// Retraction `x ⊕ dx`, the inverse of [`SystemModel::state_diff`].
    fn integrate(&self, x: &DVector<f64>, dx: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("integrate x", self.nx(), x.len())?;
        check_len("integrate dx", self.ndx(), dx.len())?;
        Ok(x + dx)
    }

    /// Per-tangent-coordinate magnitudes used to scale finite-difference steps.
    fn tangent_magnitudes(&self, x: &DVector<f64>) -> DVector<f64> {
        x.abs()
    }

    /// Second-order dynamics, when the model can provide them exactly.
    fn dynamics_hessians(&self, _x: &DVector<f64>, _u: &DVector<f64>) -> Option<DynamicsHessians> {
        None
    }

    fn tracking_cost(
        &self,
        x: &DVector<f64>,
        x_ref: &DVector<f64>,
        weights: &DVector<f64>,
    ) -> Result<TrackingTerm> {
        let e = self.state_diff(x, x_ref)?;
        check_len("tracking weights", self.ndx(), weights.len())?;
        let we = weights.component_mul(&e);
        Ok(TrackingTerm {
            value: e.dot(&we),
            grad: 2.0 * we,
            hess: DMatrix::from_diagonal(&(2.0 * weights)),
        })
    }
}

impl dyn SystemModel {
    pub fn linearize(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        mode: JacobianMode,
    ) -> Result<StepJacobians> {
        match mode {
            JacobianMode::Analytic => self.jacobians(x, u),
            JacobianMode::FiniteDifference => finite_difference_jacobians(self, x, u),
        }
    }

    /// Clamps `u` into the control bounds.
    pub fn clamp_control(&self, u: &mut DVector<f64>) {
        let (lo, hi) = (self.lower_bounds(), self.upper_bounds());
        for i in 0..u.len() {
            u[i] = u[i].clamp(lo[i], hi[i]);
        }
    }

    /// Rolls out `controls` from `x0`, returning `controls.len() + 1` states.
    pub fn rollout(&self, x0: &DVector<f64>, controls: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
        let mut states = Vec::with_capacity(controls.len() + 1);
        states.push(x0.clone());
        for u in controls {
            let next = self.step(states.last().expect("non-empty"), u)?;
            states.push(next);
        }
        Ok(states)
    }
}

/// Central-difference step for a coordinate of magnitude `value`.
pub fn fd_step(value: f64) -> f64 {
    fd_step_scaled(value, 1e-6)
}

fn fd_step_scaled(value: f64, relative: f64) -> f64 {
    relative * value.abs().max(1.0)
}

/// Central finite-difference Jacobians in the tangent space.
pub fn finite_difference_jacobians<M: SystemModel + ?Sized>(
    model: &M,
    x: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<StepJacobians> {
    finite_difference_jacobians_with_step(model, x, u, 1e-6)
}

/// As [`finite_difference_jacobians`] with step `relative · max(1, |v|)`.
pub fn finite_difference_jacobians_with_step<M: SystemModel + ?Sized>(
    model: &M,
    x: &DVector<f64>,
    u: &DVector<f64>,
    relative: f64,
) -> Result<StepJacobians> {
    let (ndx, nu) = (model.ndx(), model.nu());
    check_len("control", nu, u.len())?;
    let nominal = model.step(x, u)?;
    let mags = model.tangent_magnitudes(x);

    let mut fx = DMatrix::zeros(ndx, ndx);
    for i in 0..ndx {
        let h = fd_step_scaled(mags[i], relative);
        let mut dx = DVector::zeros(ndx);
        dx[i] = h;
        let plus = model.step(&model.integrate(x, &dx)?, u)?;
        let minus = model.step(&model.integrate(x, &(-&dx))?, u)?;
        let col = (model.state_diff(&plus, &nominal)? - model.state_diff(&minus, &nominal)?) / (2.0 * h);
        fx.set_column(i, &col);
    }

    let mut fu = DMatrix::zeros(ndx, nu);
    for j in 0..nu {
        let h = fd_step_scaled(u[j], relative);
        let mut up = u.clone();
        up[j] += h;
        let mut um = u.clone();
        um[j] -= h;
        let plus = model.step(x, &up)?;
        let minus = model.step(x, &um)?;
        let col = (model.state_diff(&plus, &nominal)? - model.state_diff(&minus, &nominal)?) / (2.0 * h);
        fu.set_column(j, &col);
    }
    Ok(StepJacobians { fx, fu })
}

pub(crate) fn check_len(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            actual,
        })
    }
}

pub(crate) fn check_finite(context: &str, v: &DVector<f64>) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(context.to_string()))
    }
}

/// Largest entrywise error scaled by `max(1, |a|, |b|)`.
pub fn max_scaled_error(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(&p, &q)| (p - q).abs() / p.abs().max(q.abs()).max(1.0))
        .fold(0.0, f64::max)
}
