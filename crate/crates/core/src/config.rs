//! TOML problem files.
//!
//! A file describes one problem plus optional solver, output, sweep and timing
//! settings. Unknown keys are rejected and every validation error names the
//! offending field, e.g. `cost.beta`. All quantities are SI: seconds, metres,
//! kilograms, newtons, radians.
//!
//! ```toml
//! schema_version = 1
//!
//! [system]
//! kind = "cartpole"
//! dt = 0.01
//! knots = 200
//!
//! [cost]
//! loss = "smoothl1"
//! beta = 0.01
//! lambda = 1e-4
//! running_weights = [0.0, 0.0, 0.0, 0.0]
//! terminal_weights = [100.0, 100.0, 100.0, 100.0]
//! target = [0.0, 3.141592653589793, 0.0, 0.0]
//! ```

use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::{DVector, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::analysis::SweepSpec;
use crate::analysis::CorruptedJacobians;
use crate::costs::{CostBundle, EndEffectorCost, QuadraticStateCost, ReferenceSchedule};
use crate::dynamics::{ArmModel, CartpoleModel, JacobianMode, SatelliteModel, SatelliteParams, SystemModel};
use crate::regularizers::{LossKind, LossSpec};
use crate::solver::{Problem, SolverConfig};
use crate::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemKind {
    Cartpole,
    Satellite,
    Arm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CartpoleParams {
    pub cart_mass: f64,
    pub pole_mass: f64,
    pub pole_length: f64,
    pub gravity: f64,
    /// Symmetric force bound on the cart.
    pub force_limit: f64,
}

impl Default for CartpoleParams {
    fn default() -> Self {
        Self {
            cart_mass: 1.0,
            pole_mass: 0.5,
            pole_length: 0.5,
            gravity: 9.81,
            force_limit: 30.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmParams {
    pub link_lengths: Vec<f64>,
    /// Symmetric joint-acceleration bounds; unbounded when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accel_limits: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub kind: SystemKind,
    pub dt: f64,
    pub knots: usize,
    /// Defaults to the model's rest state at the origin.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_state: Option<Vec<f64>>,
    #[serde(default)]
    pub jacobians: JacobianMode,
    /// Test fixture: corrupts the analytic `f_x`.
    #[serde(default, skip_serializing_if = "is_false")]
    pub inject_jacobian_fault: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cartpole: Option<CartpoleParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub satellite: Option<SatelliteParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arm: Option<ArmParams>,
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub start_knot: usize,
    pub state: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndEffectorConfig {
    pub target: [f64; 2],
    pub running_weight: f64,
    pub terminal_weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostConfig {
    pub loss: LossKind,
    /// Ignored for `l2`.
    #[serde(default = "one")]
    pub beta: f64,
    pub lambda: f64,
    /// Diagonal of `Q`, one entry per tangent coordinate.
    pub running_weights: Vec<f64>,
    /// Diagonal of `Q_f`.
    pub terminal_weights: Vec<f64>,
    /// Constant reference state. Exclusive with `stages`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub stages: Vec<StageConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end_effector: Option<EndEffectorConfig>,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    /// Overridden by `--out` and then by the `SPARSE_DDP_OUT` variable.
    pub dir: PathBuf,
    pub trajectory: String,
    pub sparsity: String,
    pub result: String,
    pub sweep_csv: String,
    pub sweep_summary: String,
    pub timing: String,
    pub check: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            trajectory: "trajectory.csv".into(),
            sparsity: "sparsity.json".into(),
            result: "solve_result.json".into(),
            sweep_csv: "sweep.csv".into(),
            sweep_summary: "sweep_summary.json".into(),
            timing: "timing.json".into(),
            check: "check.json".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimingConfig {
    pub losses: Vec<LossKind>,
    pub lambdas: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub system: SystemConfig,
    pub cost: CostConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timing: Option<TimingConfig>,
}

fn cfg(field: impl Into<String>) -> impl FnOnce(Error) -> Error {
    let field = field.into();
    move |e| match e {
        Error::Config { .. } => e,
        other => Error::config(field, other.to_string()),
    }
}

impl ProblemConfig {
    /// Parses and validates a TOML document.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let de = toml::Deserializer::parse(text).map_err(|e| Error::config("<document>", e.to_string().trim().to_string()))?;
        let config: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let field = if path == "." { "<document>".to_string() } else { path };
            Error::config(field, e.into_inner().message().trim().to_string())
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("<file>", format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::config("<document>", e.to_string()))
    }

    /// Checks every field that can be checked without building the model.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::config(
                "schema_version",
                format!("unsupported version {}, expected {SCHEMA_VERSION}", self.schema_version),
            ));
        }
        let s = &self.system;
        if !(s.dt.is_finite() && s.dt > 0.0) {
            return Err(Error::config("system.dt", format!("must be positive, got {}", s.dt)));
        }
        if s.knots < 2 {
            return Err(Error::config("system.knots", format!("need at least 2 knots, got {}", s.knots)));
        }
        let present = [
            ("system.cartpole", s.cartpole.is_some(), SystemKind::Cartpole),
            ("system.satellite", s.satellite.is_some(), SystemKind::Satellite),
            ("system.arm", s.arm.is_some(), SystemKind::Arm),
        ];
        for (name, is_set, kind) in present {
            if is_set && kind != s.kind {
                return Err(Error::config(name, format!("does not apply to system kind {:?}", s.kind)));
            }
        }
        if s.kind == SystemKind::Arm && s.arm.is_none() {
            return Err(Error::config("system.arm", "arm systems need link_lengths"));
        }

        let c = &self.cost;
        if c.loss.uses_beta() && !(c.beta.is_finite() && c.beta > 0.0) {
            return Err(Error::config("cost.beta", format!("must be positive, got {}", c.beta)));
        }
        if !(c.lambda.is_finite() && c.lambda >= 0.0) {
            return Err(Error::config("cost.lambda", format!("must be non-negative, got {}", c.lambda)));
        }
        for (name, w) in [("cost.running_weights", &c.running_weights), ("cost.terminal_weights", &c.terminal_weights)] {
            if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::config(name, "weights must be finite and non-negative"));
            }
        }
        match (&c.target, c.stages.is_empty()) {
            (Some(_), false) => return Err(Error::config("cost.target", "give either target or stages, not both")),
            (None, true) => return Err(Error::config("cost.target", "a target or at least one stage is required")),
            _ => {}
        }
        if c.end_effector.is_some() && s.kind != SystemKind::Arm {
            return Err(Error::config("cost.end_effector", "only arm systems have an end effector"));
        }

        self.solver.validate()?;
        if let Some(sweep) = &self.sweep {
            sweep.validate().map_err(|e| match e {
                Error::EmptyGrid(axis) => Error::config(format!("sweep.{axis}"), "must not be empty"),
                other => Error::config("sweep", other.to_string()),
            })?;
        }
        if let Some(t) = &self.timing {
            if t.losses.is_empty() {
                return Err(Error::config("timing.losses", "must not be empty"));
            }
            if t.lambdas.is_empty() || t.lambdas.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
                return Err(Error::config("timing.lambdas", "need at least one non-negative value"));
            }
        }
        Ok(())
    }

    pub fn loss_spec(&self) -> Result<LossSpec> {
        let c = &self.cost;
        LossSpec::new(c.loss, c.beta, c.lambda).map_err(cfg("cost.beta"))
    }

    pub fn build_model(&self) -> Result<Arc<dyn SystemModel>> {
        let s = &self.system;
        let model: Arc<dyn SystemModel> = match s.kind {
            SystemKind::Cartpole => {
                let p = s.cartpole.clone().unwrap_or_default();
                let m = CartpoleModel::new(p.cart_mass, p.pole_mass, p.pole_length, p.gravity, s.dt, p.force_limit)
                    .map_err(cfg("system.cartpole"))?;
                if s.inject_jacobian_fault {
                    Arc::new(CorruptedJacobians { inner: m })
                } else {
                    Arc::new(m)
                }
            }
            SystemKind::Satellite => {
                let m = SatelliteModel::new(s.satellite.clone().unwrap_or_default(), s.dt).map_err(cfg("system.satellite"))?;
                if s.inject_jacobian_fault {
                    Arc::new(CorruptedJacobians { inner: m })
                } else {
                    Arc::new(m)
                }
            }
            SystemKind::Arm => {
                let p = s.arm.clone().ok_or_else(|| Error::config("system.arm", "missing"))?;
                let m = match p.accel_limits {
                    Some(limits) => ArmModel::new(p.link_lengths, s.dt, limits),
                    None => ArmModel::unbounded(p.link_lengths, s.dt),
                }
                .map_err(cfg("system.arm"))?;
                if s.inject_jacobian_fault {
                    Arc::new(CorruptedJacobians { inner: m })
                } else {
                    Arc::new(m)
                }
            }
        };
        Ok(model)
    }

    fn state_vector(model: &dyn SystemModel, field: &str, values: &[f64]) -> Result<DVector<f64>> {
        if values.len() != model.nx() {
            return Err(Error::config(field, format!("expected {} entries, got {}", model.nx(), values.len())));
        }
        let x = DVector::from_column_slice(values);
        model.state_diff(&x, &x).map_err(cfg(field))?;
        Ok(x)
    }

    fn rest_state(&self, model: &dyn SystemModel) -> DVector<f64> {
        match self.system.kind {
            SystemKind::Satellite => SatelliteModel::rest_state(Vector3::zeros()),
            _ => DVector::zeros(model.nx()),
        }
    }

    /// Builds the model, costs and initial state.
    pub fn build_problem(&self) -> Result<Problem> {
        self.validate()?;
        let model = self.build_model()?;
        let m = model.as_ref();
        let c = &self.cost;
        for (name, w) in [("cost.running_weights", &c.running_weights), ("cost.terminal_weights", &c.terminal_weights)] {
            if w.len() != m.ndx() {
                return Err(Error::config(name, format!("expected {} entries, got {}", m.ndx(), w.len())));
            }
        }
        let references = match &c.target {
            Some(target) => ReferenceSchedule::constant(Self::state_vector(m, "cost.target", target)?),
            None => {
                let mut stages = Vec::with_capacity(c.stages.len());
                for (i, st) in c.stages.iter().enumerate() {
                    if st.start_knot >= self.system.knots {
                        return Err(Error::config(
                            format!("cost.stages[{i}].start_knot"),
                            format!("beyond the {}-knot horizon", self.system.knots),
                        ));
                    }
                    stages.push((st.start_knot, Self::state_vector(m, &format!("cost.stages[{i}].state"), &st.state)?));
                }
                ReferenceSchedule::staged(stages).map_err(cfg("cost.stages"))?
            }
        };
        let state = QuadraticStateCost::new(
            DVector::from_vec(c.running_weights.clone()),
            DVector::from_vec(c.terminal_weights.clone()),
            references,
        )
        .map_err(cfg("cost.running_weights"))?;
        let mut costs = CostBundle::new(state, self.loss_spec()?);
        if let Some(ee) = &c.end_effector {
            let links = self.system.arm.as_ref().map(|a| a.link_lengths.clone()).unwrap_or_default();
            let kinematics = crate::dynamics::PlanarKinematics::new(links).map_err(cfg("system.arm.link_lengths"))?;
            if !(ee.running_weight >= 0.0 && ee.terminal_weight >= 0.0) {
                return Err(Error::config("cost.end_effector", "weights must be non-negative"));
            }
            costs = costs.with_end_effector(EndEffectorCost {
                kinematics,
                target: Vector2::new(ee.target[0], ee.target[1]),
                running_weight: ee.running_weight,
                terminal_weight: ee.terminal_weight,
            });
        }
        let x0 = match &self.system.initial_state {
            Some(x) => Self::state_vector(m, "system.initial_state", x)?,
            None => self.rest_state(m),
        };
        Ok(Problem::new(model, costs, x0, self.system.knots)
            .map_err(cfg("cost"))?
            .with_jacobian_mode(self.system.jacobians))
    }
}
