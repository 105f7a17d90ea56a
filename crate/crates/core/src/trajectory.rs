use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// `N` states paired with `N − 1` controls on a uniform time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<DVector<f64>>,
    pub controls: Vec<DVector<f64>>,
    pub dt: f64,
}

impl Trajectory {
    pub fn new(states: Vec<DVector<f64>>, controls: Vec<DVector<f64>>, dt: f64) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::InvalidInput("trajectory needs at least one state".into()));
        }
        if states.len() != controls.len() + 1 {
            return Err(Error::DimensionMismatch {
                context: "trajectory controls (must be one fewer than states)",
                expected: states.len() - 1,
                actual: controls.len(),
            });
        }
        Ok(Self { states, controls, dt })
    }

    /// Number of knots `N`.
    pub fn knots(&self) -> usize {
        self.states.len()
    }

    pub fn final_state(&self) -> &DVector<f64> {
        self.states.last().expect("trajectory is never empty")
    }

    pub fn time(&self, knot: usize) -> f64 {
        knot as f64 * self.dt
    }

    /// Every control scalar, knot-major.
    pub fn control_scalars(&self) -> impl Iterator<Item = f64> + '_ {
        self.controls.iter().flat_map(|u| u.iter().copied())
    }
}
