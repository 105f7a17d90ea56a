use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{finite_difference_jacobians_with_step, max_scaled_error, StepJacobians, SystemModel};
use crate::regularizers::LossKind;
use crate::solver::Problem;
use crate::{Error, Result};

/// A check fails when its scaled error reaches this value.
pub const CHECK_THRESHOLD: f64 = 1e-4;
const SEED: u64 = 0x5eed_dd9;
const SAMPLES: usize = 8;
const LOSS_SAMPLES: usize = 200;
/// Loss samples closer than this to a kink are skipped.
const KINK_MARGIN: f64 = 1e-3;
/// Relative differencing step; large enough that roundoff stays near 1e-12.
const STEP: f64 = 1e-4;

fn step(v: f64) -> f64 {
    STEP * v.abs().max(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckEntry {
    pub name: String,
    pub max_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivativeReport {
    pub entries: Vec<CheckEntry>,
    pub passed: bool,
    /// Name and error of the largest relative error.
    pub worst: (String, f64),
}

impl fmt::Display for DerivativeReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.entries {
            writeln!(f, "{:<6} {:<14} max error {:.3e}", if e.passed { "ok" } else { "FAIL" }, e.name, e.max_error)?;
        }
        write!(
            f,
            "{}: worst offender {} at {:.3e}",
            if self.passed { "PASS" } else { "FAIL" },
            self.worst.0,
            self.worst.1
        )
    }
}

struct Recorder(Vec<CheckEntry>);

impl Recorder {
    fn record(&mut self, name: &str, err: f64) {
        let err = if err.is_nan() { f64::INFINITY } else { err };
        match self.0.iter_mut().find(|e| e.name == name) {
            Some(e) => e.max_error = e.max_error.max(err),
            None => self.0.push(CheckEntry {
                name: name.to_string(),
                max_error: err,
                passed: true,
            }),
        }
    }
}

fn scaled(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

fn vector_error(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(&p, &q)| scaled(p, q)).fold(0.0, f64::max)
}

fn sample_control(rng: &mut ChaCha8Rng, model: &dyn SystemModel) -> DVector<f64> {
    let (lo, hi) = (model.lower_bounds(), model.upper_bounds());
    DVector::from_fn(model.nu(), |i, _| {
        let a = if lo[i].is_finite() { lo[i] } else { -1.0 };
        let b = if hi[i].is_finite() { hi[i] } else { 1.0 };
        rng.random_range(a..=b)
    })
}

/// Random control whose coordinates all stay clear of the loss kinks.
fn sample_smooth_control(rng: &mut ChaCha8Rng, problem: &Problem) -> DVector<f64> {
    let model = problem.model.as_ref();
    let spec = &problem.costs.loss;
    let has_kink = matches!(spec.kind(), LossKind::SmoothL1 | LossKind::Huber);
    loop {
        let u = sample_control(rng, model);
        if !has_kink || u.iter().all(|x| (x.abs() - spec.beta()).abs() > KINK_MARGIN) {
            return u;
        }
    }
}

/// Compares every analytic derivative the solver consumes against central
/// finite differences at seeded random points near `x0`.
pub fn check_derivatives(problem: &Problem) -> Result<DerivativeReport> {
    let model = problem.model.as_ref();
    let costs = &problem.costs;
    let spec = &costs.loss;
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut rec = Recorder(Vec::new());
    let ndx = model.ndx();

    // loss calculus, per coordinate
    let scale = spec.beta().max(1.0) * 10.0;
    let mut taken = 0;
    while taken < LOSS_SAMPLES {
        let x: f64 = rng.random_range(-scale..scale);
        if spec.kind().uses_beta() && (x.abs() - spec.beta()).abs() <= KINK_MARGIN {
            continue;
        }
        taken += 1;
        let h = step(x) * spec.beta().min(1.0);
        let fd_grad = (spec.value(x + h)? - spec.value(x - h)?) / (2.0 * h);
        let fd_hess = (spec.grad(x + h)? - spec.grad(x - h)?) / (2.0 * h);
        rec.record("loss.grad", scaled(fd_grad, spec.grad(x)?));
        rec.record("loss.hess", scaled(fd_hess, spec.hess(x)?));
    }

    let perturb = |rng: &mut ChaCha8Rng, scale: f64| -> Result<DVector<f64>> {
        let dx = DVector::from_fn(ndx, |_, _| rng.random_range(-scale..scale));
        model.integrate(&problem.x0, &dx)
    };

    for s in 0..SAMPLES {
        let x = perturb(&mut rng, 0.5)?;
        let u = sample_smooth_control(&mut rng, problem);
        let knot = (s * (problem.knots - 1)) / SAMPLES;

        let analytic = model.linearize(&x, &u, problem.jacobian_mode)?;
        let numeric = finite_difference_jacobians_with_step(model, &x, &u, STEP)?;
        rec.record("dynamics.fx", max_scaled_error(&analytic.fx, &numeric.fx));
        rec.record("dynamics.fu", max_scaled_error(&analytic.fu, &numeric.fu));

        let run = costs.running_cost(model, &x, &u, knot)?;
        let term = costs.terminal_cost(model, &x, problem.knots - 1)?;
        let mags = model.tangent_magnitudes(&x);
        let mut fd_lx = DVector::zeros(ndx);
        let mut fd_hx = DVector::zeros(ndx);
        let mut fd_lxx = DMatrix::zeros(ndx, ndx);
        let mut fd_hxx = DMatrix::zeros(ndx, ndx);
        for i in 0..ndx {
            let h = step(mags[i]);
            let mut d = DVector::zeros(ndx);
            d[i] = h;
            let xp = model.integrate(&x, &d)?;
            let xm = model.integrate(&x, &(-&d))?;
            let (rp, rm) = (costs.running_cost(model, &xp, &u, knot)?, costs.running_cost(model, &xm, &u, knot)?);
            let (tp, tm) = (
                costs.terminal_cost(model, &xp, problem.knots - 1)?,
                costs.terminal_cost(model, &xm, problem.knots - 1)?,
            );
            fd_lx[i] = (rp.value - rm.value) / (2.0 * h);
            fd_hx[i] = (tp.value - tm.value) / (2.0 * h);
            fd_lxx.set_column(i, &((&rp.lx - &rm.lx) / (2.0 * h)));
            fd_hxx.set_column(i, &((&tp.hx - &tm.hx) / (2.0 * h)));
        }
        rec.record("cost.lx", vector_error(&fd_lx, &run.lx));
        rec.record("cost.hx", vector_error(&fd_hx, &term.hx));
        // symmetrize to cancel first-order differencing noise
        rec.record("cost.lxx", max_scaled_error(&((&fd_lxx + fd_lxx.transpose()) * 0.5), &run.lxx));
        rec.record("cost.hxx", max_scaled_error(&((&fd_hxx + fd_hxx.transpose()) * 0.5), &term.hxx));

        let nu = model.nu();
        let mut fd_lu = DVector::zeros(nu);
        let mut fd_luu = DVector::zeros(nu);
        for j in 0..nu {
            let h = step(u[j]) * spec.beta().min(1.0);
            let mut up = u.clone();
            up[j] += h;
            let mut um = u.clone();
            um[j] -= h;
            let (rp, rm) = (costs.running_cost(model, &x, &up, knot)?, costs.running_cost(model, &x, &um, knot)?);
            fd_lu[j] = (rp.value - rm.value) / (2.0 * h);
            fd_luu[j] = (rp.lu[j] - rm.lu[j]) / (2.0 * h);
        }
        rec.record("cost.lu", vector_error(&fd_lu, &run.lu));
        rec.record("cost.luu", vector_error(&fd_luu, &run.luu.diagonal()));
    }

    let mut entries = rec.0;
    for e in &mut entries {
        e.passed = e.max_error < CHECK_THRESHOLD;
    }
    let worst = entries
        .iter()
        .max_by(|a, b| a.max_error.total_cmp(&b.max_error))
        .map(|e| (e.name.clone(), e.max_error))
        .ok_or_else(|| Error::InvalidInput("no derivative checks ran".into()))?;
    Ok(DerivativeReport {
        passed: entries.iter().all(|e| e.passed),
        entries,
        worst,
    })
}

/// Wraps a model and corrupts one entry of its analytic `f_x`.
///
/// Used as a fault-injection fixture for [`check_derivatives`].
#[derive(Debug)]
pub struct CorruptedJacobians<M> {
    pub inner: M,
}

impl<M: SystemModel> SystemModel for CorruptedJacobians<M> {
    fn name(&self) -> &str {
        self.inner.name()
    }
    fn nx(&self) -> usize {
        self.inner.nx()
    }
    fn ndx(&self) -> usize {
        self.inner.ndx()
    }
    fn nu(&self) -> usize {
        self.inner.nu()
    }
    fn dt(&self) -> f64 {
        self.inner.dt()
    }
    fn lower_bounds(&self) -> &DVector<f64> {
        self.inner.lower_bounds()
    }
    fn upper_bounds(&self) -> &DVector<f64> {
        self.inner.upper_bounds()
    }
    fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        self.inner.step(x, u)
    }
    fn jacobians(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<StepJacobians> {
        let mut j = self.inner.jacobians(x, u)?;
        j.fx[(0, 0)] += 0.5;
        Ok(j)
    }
    fn state_diff(&self, x1: &DVector<f64>, x0: &DVector<f64>) -> Result<DVector<f64>> {
        self.inner.state_diff(x1, x0)
    }
    fn integrate(&self, x: &DVector<f64>, dx: &DVector<f64>) -> Result<DVector<f64>> {
        self.inner.integrate(x, dx)
    }
    fn tangent_magnitudes(&self, x: &DVector<f64>) -> DVector<f64> {
        self.inner.tangent_magnitudes(x)
    }
    fn tracking_cost(
        &self,
        x: &DVector<f64>,
        x_ref: &DVector<f64>,
        weights: &DVector<f64>,
    ) -> Result<crate::dynamics::TrackingTerm> {
        self.inner.tracking_cost(x, x_ref, weights)
    }
}
