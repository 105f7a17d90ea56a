//! Differential dynamic programming with sparsity-inducing control
//! regularization.
//!
//! The crate is organised bottom-up:
//!
//! - [`regularizers`]: closed-form SmoothL1, Huber and Pseudo-Huber losses
//!   (plus the quadratic baseline) with first and second derivatives.
//! - [`dynamics`]: discrete-time models `x' = f(x, u)` for a cartpole, a
//!   thruster-actuated rigid-body satellite and a planar reaching arm.
//! - [`costs`]: quadratic tracking, end-effector and λ-weighted sparsity
//!   terms with tangent-space derivatives.
//! - [`solver`]: the DDP/iLQR solver with box-constrained control limits.
//! - [`analysis`]: sparsity metrics, grid sweeps, timing reports and the
//!   finite-difference derivative checker.
//! - [`config`]: the TOML problem description shared by the CLI and the
//!   experiment harness.
//!
//! ```
//! use sparse_ddp::prelude::*;
//!
//! let loss = LossSpec::new(LossKind::Huber, 0.5, 1.0).unwrap();
//! assert_eq!(loss.value(0.5).unwrap(), 0.125);
//! assert_eq!(loss.grad(2.0).unwrap(), 0.5);
//! ```

pub mod analysis;
pub mod config;
pub mod costs;
pub mod dynamics;
mod error;
pub mod regularizers;
pub mod solver;
mod trajectory;

pub use error::{Error, Result};
pub use trajectory::Trajectory;

/// The types most programs need.
pub mod prelude {
    pub use crate::analysis::{run_sweep, SparsityReport, SweepGrid, SweepSpec};
    pub use crate::config::ProblemConfig;
    pub use crate::costs::{CostBundle, EndEffectorCost, QuadraticStateCost, ReferenceSchedule};
    pub use crate::dynamics::{ArmModel, CartpoleModel, JacobianMode, SatelliteModel, SatelliteParams, SystemModel};
    pub use crate::regularizers::{LossKind, LossSpec};
    pub use crate::solver::{solve, LimitMode, Problem, SolveResult, SolverConfig};
    pub use crate::{Error, Result, Trajectory};
}

