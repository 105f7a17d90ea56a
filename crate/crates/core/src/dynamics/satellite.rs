use nalgebra::{DMatrix, DVector, Matrix3, Matrix3xX, Vector3};
use serde::{Deserialize, Serialize};

use super::so3::{self, Quat};
use super::{check_finite, check_len, SystemModel, TrackingTerm};
use crate::{Error, Result};

const NORM_TOLERANCE: f64 = 1e-6;

/// A single thruster: body-frame application point, unit force direction and
/// upper force limit (the lower limit is always 0).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thruster {
    pub position: [f64; 3],
    pub direction: [f64; 3],
    pub limit: f64,
}

/// Thruster layout together with the linear map from thrust magnitudes to the
/// body-frame wrench (total force, torque about the centre of mass).
#[derive(Debug, Clone, PartialEq)]
pub struct ThrusterTable {
    pub thrusters: Vec<Thruster>,
    pub force_map: Matrix3xX<f64>,
    pub torque_map: Matrix3xX<f64>,
}

impl ThrusterTable {
    /// Box layout with half-extents `(a, b, c)`.
    ///
    /// Index 0 sits on the +X face and pushes along −X, index 1 on the −X face
    /// pushing along +X; both are primary thrusters with `primary_limit`.
    /// Indices 2..18 are four corner thrusters per ±Y, ±Z face (in that order)
    /// pushing inward along the face normal, each limited to `side_limit`.
    pub fn box_layout(half_extents: [f64; 3], primary_limit: f64, side_limit: f64) -> Self {
        let [a, b, c] = half_extents;
        let mut thrusters = vec![
            Thruster {
                position: [a, 0.0, 0.0],
                direction: [-1.0, 0.0, 0.0],
                limit: primary_limit,
            },
            Thruster {
                position: [-a, 0.0, 0.0],
                direction: [1.0, 0.0, 0.0],
                limit: primary_limit,
            },
        ];
        let corners = [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)];
        for sign in [1.0, -1.0] {
            for (sx, sz) in corners {
                thrusters.push(Thruster {
                    position: [sx * a, sign * b, sz * c],
                    direction: [0.0, -sign, 0.0],
                    limit: side_limit,
                });
            }
        }
        for sign in [1.0, -1.0] {
            for (sx, sy) in corners {
                thrusters.push(Thruster {
                    position: [sx * a, sy * b, sign * c],
                    direction: [0.0, 0.0, -sign],
                    limit: side_limit,
                });
            }
        }
        Self::from_thrusters(thrusters)
    }

    pub fn from_thrusters(thrusters: Vec<Thruster>) -> Self {
        let n = thrusters.len();
        let mut force_map = Matrix3xX::zeros(n);
        let mut torque_map = Matrix3xX::zeros(n);
        for (i, t) in thrusters.iter().enumerate() {
            let d = Vector3::from(t.direction);
            let r = Vector3::from(t.position);
            force_map.set_column(i, &d);
            torque_map.set_column(i, &r.cross(&d));
        }
        Self {
            thrusters,
            force_map,
            torque_map,
        }
    }

    pub fn len(&self) -> usize {
        self.thrusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thrusters.is_empty()
    }

    /// Body-frame force and torque for thrust magnitudes `u`.
    pub fn wrench(&self, u: &DVector<f64>) -> (Vector3<f64>, Vector3<f64>) {
        (&self.force_map * u, &self.torque_map * u)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SatelliteParams {
    /// kg
    pub mass: f64,
    /// m
    pub half_extents: [f64; 3],
    /// Principal moments in kg·m²; a solid box of `mass` when absent.
    pub inertia: Option<[f64; 3]>,
    /// N
    pub primary_limit: f64,
    /// N
    pub side_limit: f64,
}

impl Default for SatelliteParams {
    fn default() -> Self {
        Self {
            mass: 1000.0,
            half_extents: [2.0, 1.0, 1.0],
            inertia: None,
            primary_limit: 200.0,
            side_limit: 50.0,
        }
    }
}

/// Free-floating rigid body actuated by 18 unilateral thrusters.
///
/// State `(p, q, v, ω)`: world position, scalar-first body-to-world
/// quaternion, world linear velocity and body angular velocity (`nx = 13`).
/// The tangent space is `(δp, δθ, δv, δω)` with the rotation perturbation
/// applied on the right, `q ⊗ exp(δθ)` (`ndx = 12`).
///
/// One step updates the momenta first and then the pose with the new rates:
///
/// ```text
/// v' = v + h R(q) F / m              Π = J ω + h τ
/// p' = p + h v'                      q' = q ⊗ exp(h J⁻¹ Π)
///                                    ω' = J⁻¹ exp(h J⁻¹ Π)ᵀ Π
/// ```
///
/// which keeps the world-frame angular momentum `R J ω` exactly constant in
/// torque-free motion.
#[derive(Debug, Clone, PartialEq)]
pub struct SatelliteModel {
    params: SatelliteParams,
    inertia: Matrix3<f64>,
    inertia_inv: Matrix3<f64>,
    thrusters: ThrusterTable,
    pub dt: f64,
    lower: DVector<f64>,
    upper: DVector<f64>,
}

impl SatelliteModel {
    pub fn new(params: SatelliteParams, dt: f64) -> Result<Self> {
        if !(params.mass.is_finite() && params.mass > 0.0) {
            return Err(Error::InvalidInput("satellite mass must be positive".into()));
        }
        if params.half_extents.iter().any(|e| !(*e > 0.0)) {
            return Err(Error::InvalidInput("satellite half extents must be positive".into()));
        }
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::InvalidInput(format!("satellite dt must be positive, got {dt}")));
        }
        if !(params.primary_limit > 0.0 && params.side_limit > 0.0) {
            return Err(Error::InvalidInput("thruster limits must be positive".into()));
        }
        let [a, b, c] = params.half_extents;
        let m = params.mass;
        let moments = params
            .inertia
            .unwrap_or([m * (b * b + c * c) / 3.0, m * (a * a + c * c) / 3.0, m * (a * a + b * b) / 3.0]);
        if moments.iter().any(|i| !(*i > 0.0)) {
            return Err(Error::InvalidInput("inertia must be positive definite".into()));
        }
        let inertia = Matrix3::from_diagonal(&Vector3::from(moments));
        let inertia_inv = Matrix3::from_diagonal(&Vector3::from(moments.map(|i| 1.0 / i)));
        let thrusters = ThrusterTable::box_layout(params.half_extents, params.primary_limit, params.side_limit);
        let upper = DVector::from_iterator(thrusters.len(), thrusters.thrusters.iter().map(|t| t.limit));
        Ok(Self {
            params,
            inertia,
            inertia_inv,
            dt,
            lower: DVector::zeros(upper.len()),
            upper,
            thrusters,
        })
    }

    pub fn params(&self) -> &SatelliteParams {
        &self.params
    }

    pub fn thrusters(&self) -> &ThrusterTable {
        &self.thrusters
    }

    pub fn inertia(&self) -> &Matrix3<f64> {
        &self.inertia
    }

    /// State vector from its blocks.
    pub fn state(position: Vector3<f64>, orientation: Quat, velocity: Vector3<f64>, rate: Vector3<f64>) -> DVector<f64> {
        let mut x = DVector::zeros(13);
        x.fixed_rows_mut::<3>(0).copy_from(&position);
        x.fixed_rows_mut::<4>(3).copy_from(&orientation);
        x.fixed_rows_mut::<3>(7).copy_from(&velocity);
        x.fixed_rows_mut::<3>(10).copy_from(&rate);
        x
    }

    pub fn rest_state(position: Vector3<f64>) -> DVector<f64> {
        Self::state(position, so3::identity(), Vector3::zeros(), Vector3::zeros())
    }

    /// Unit quaternion of a state; errors if its norm is off by more than 1e-6.
    pub fn orientation(x: &DVector<f64>) -> Result<Quat> {
        check_len("satellite state", 13, x.len())?;
        let q: Quat = x.fixed_rows::<4>(3).into_owned();
        let n = q.norm();
        if !n.is_finite() || (n - 1.0).abs() > NORM_TOLERANCE {
            return Err(Error::InvalidQuaternion(n));
        }
        Ok(q / n)
    }

    /// World-frame angular momentum `R J ω`.
    pub fn angular_momentum(&self, x: &DVector<f64>) -> Result<Vector3<f64>> {
        let q = Self::orientation(x)?;
        let w: Vector3<f64> = x.fixed_rows::<3>(10).into_owned();
        Ok(so3::to_matrix(&q) * (self.inertia * w))
    }
}

impl SystemModel for SatelliteModel {
    fn name(&self) -> &str {
        "satellite"
    }

    fn nx(&self) -> usize {
        13
    }

    fn ndx(&self) -> usize {
        12
    }

    fn nu(&self) -> usize {
        self.thrusters.len()
    }

    fn dt(&self) -> f64 {
        self.dt
    }

    fn lower_bounds(&self) -> &DVector<f64> {
        &self.lower
    }

    fn upper_bounds(&self) -> &DVector<f64> {
        &self.upper
    }

    fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        let q = Self::orientation(x)?;
        check_len("satellite control", self.nu(), u.len())?;
        check_finite("satellite control", u)?;
        let h = self.dt;
        let p: Vector3<f64> = x.fixed_rows::<3>(0).into_owned();
        let v: Vector3<f64> = x.fixed_rows::<3>(7).into_owned();
        let w: Vector3<f64> = x.fixed_rows::<3>(10).into_owned();
        let (force, torque) = self.thrusters.wrench(u);

        let v_next = v + so3::to_matrix(&q) * force * (h / self.params.mass);
        let p_next = p + v_next * h;

        let momentum = self.inertia * w + torque * h;
        let w_mid = self.inertia_inv * momentum;
        let dq = so3::exp(&(w_mid * h));
        let q_next = so3::mul(&q, &dq).normalize();
        let w_next = self.inertia_inv * (so3::to_matrix(&dq).transpose() * momentum);

        Ok(Self::state(p_next, q_next, v_next, w_next))
    }

    fn state_diff(&self, x1: &DVector<f64>, x0: &DVector<f64>) -> Result<DVector<f64>> {
        let q1 = Self::orientation(x1)?;
        let q0 = Self::orientation(x0)?;
        let mut d = DVector::zeros(12);
        d.fixed_rows_mut::<3>(0).copy_from(&(x1.fixed_rows::<3>(0) - x0.fixed_rows::<3>(0)));
        d.fixed_rows_mut::<3>(3).copy_from(&so3::log(&so3::mul(&so3::conj(&q0), &q1)));
        d.fixed_rows_mut::<6>(6).copy_from(&(x1.fixed_rows::<6>(7) - x0.fixed_rows::<6>(7)));
        Ok(d)
    }

    fn integrate(&self, x: &DVector<f64>, dx: &DVector<f64>) -> Result<DVector<f64>> {
        let q = Self::orientation(x)?;
        check_len("satellite tangent", 12, dx.len())?;
        let mut out = x.clone();
        out.fixed_rows_mut::<3>(0).copy_from(&(x.fixed_rows::<3>(0) + dx.fixed_rows::<3>(0)));
        let rot: Vector3<f64> = dx.fixed_rows::<3>(3).into_owned();
        out.fixed_rows_mut::<4>(3).copy_from(&so3::mul(&q, &so3::exp(&rot)).normalize());
        out.fixed_rows_mut::<6>(7).copy_from(&(x.fixed_rows::<6>(7) + dx.fixed_rows::<6>(6)));
        Ok(out)
    }

    fn tangent_magnitudes(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut m = DVector::zeros(12);
        m.fixed_rows_mut::<3>(0).copy_from(&x.fixed_rows::<3>(0).abs());
        m.fixed_rows_mut::<6>(6).copy_from(&x.fixed_rows::<6>(7).abs());
        m
    }

    /// Exact derivatives when the three rotation weights are equal; otherwise
    /// the rotation block falls back to the Gauss-Newton approximation
    /// `2 Jᵀ W J` with `J = Jr⁻¹(e)`.
    fn tracking_cost(
        &self,
        x: &DVector<f64>,
        x_ref: &DVector<f64>,
        weights: &DVector<f64>,
    ) -> Result<TrackingTerm> {
        check_len("tracking weights", 12, weights.len())?;
        let e = self.state_diff(x, x_ref)?;
        let we = weights.component_mul(&e);
        let mut grad = 2.0 * &we;
        let mut hess = DMatrix::from_diagonal(&(2.0 * weights));

        let er: Vector3<f64> = e.fixed_rows::<3>(3).into_owned();
        let wr: Vector3<f64> = weights.fixed_rows::<3>(3).into_owned();
        let block = if wr.x == wr.y && wr.y == wr.z {
            // ∇ = 2w e exactly, since Jr⁻ᵀ(e) e = e
            let h = so3::hat(&er);
            (Matrix3::identity() + so3::inv_jacobian_coeff(er.norm()) * h * h) * (2.0 * wr.x)
        } else {
            let j = so3::right_jacobian_inv(&er);
            let w = Matrix3::from_diagonal(&wr);
            grad.fixed_rows_mut::<3>(3).copy_from(&(2.0 * j.transpose() * w * er));
            2.0 * j.transpose() * w * j
        };
        hess.fixed_view_mut::<3, 3>(3, 3).copy_from(&block);
        Ok(TrackingTerm {
            value: e.dot(&we),
            grad,
            hess,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use crate::dynamics::finite_difference_jacobians;

    fn model() -> SatelliteModel {
        SatelliteModel::new(SatelliteParams::default(), 0.1).unwrap()
    }

    fn tumbling() -> DVector<f64> {
        SatelliteModel::state(
            Vector3::new(1.0, -2.0, 0.5),
            so3::exp(&Vector3::new(0.3, -0.2, 0.9)),
            Vector3::new(0.3, 0.1, -0.2),
            Vector3::new(0.05, -0.2, 0.12),
        )
    }

    #[test]
    fn thruster_table_layout() {
        let t = ThrusterTable::box_layout([2.0, 1.0, 1.0], 200.0, 50.0);
        assert_eq!(t.len(), 18);
        let mut u = DVector::zeros(18);
        u[0] = 200.0;
        let (f, tq) = t.wrench(&u);
        assert_eq!(f, Vector3::new(-200.0, 0.0, 0.0));
        assert_eq!(tq, Vector3::zeros());

        let mut u = DVector::zeros(18);
        for i in 2..6 {
            u[i] = 10.0;
        }
        let (f, tq) = t.wrench(&u);
        assert_relative_eq!(f, Vector3::new(0.0, -40.0, 0.0));
        assert_relative_eq!(tq, Vector3::zeros());
    }

    #[test]
    fn asymmetric_firing_torque_matches_cross_products() {
        let t = ThrusterTable::box_layout([2.0, 1.0, 0.5], 200.0, 50.0);
        let u = DVector::from_fn(18, |i, _| ((i * 7) % 5) as f64 * 3.0);
        let (f, tq) = t.wrench(&u);
        let mut f_ref = [0.0; 3];
        let mut t_ref = [0.0; 3];
        for (i, th) in t.thrusters.iter().enumerate() {
            let (r, d) = (th.position, th.direction);
            let s = u[i];
            for k in 0..3 {
                f_ref[k] += s * d[k];
            }
            t_ref[0] += s * (r[1] * d[2] - r[2] * d[1]);
            t_ref[1] += s * (r[2] * d[0] - r[0] * d[2]);
            t_ref[2] += s * (r[0] * d[1] - r[1] * d[0]);
        }
        assert_relative_eq!(f, Vector3::from(f_ref), epsilon = 1e-12);
        assert_relative_eq!(tq, Vector3::from(t_ref), epsilon = 1e-12);
    }

    #[test]
    fn free_drift() {
        let m = model();
        let x = SatelliteModel::state(Vector3::zeros(), so3::identity(), Vector3::new(1.0, -2.0, 0.5), Vector3::zeros());
        let next = m.step(&x, &DVector::zeros(18)).unwrap();
        assert_relative_eq!(
            next.fixed_rows::<3>(0).into_owned(),
            Vector3::new(0.1, -0.2, 0.05),
            epsilon = 1e-15
        );
        assert_eq!(next.fixed_rows::<4>(3).into_owned(), so3::identity());
    }

    #[test]
    fn torque_free_conservation() {
        let m = model();
        let mut x = tumbling();
        let l0 = m.angular_momentum(&x).unwrap();
        let v0: Vector3<f64> = x.fixed_rows::<3>(7).into_owned();
        for _ in 0..100 {
            x = m.step(&x, &DVector::zeros(18)).unwrap();
            assert!((x.fixed_rows::<4>(3).norm() - 1.0).abs() < 1e-9);
        }
        let l = m.angular_momentum(&x).unwrap();
        assert!((l - l0).norm() < 1e-6 * l0.norm());
        assert_eq!(x.fixed_rows::<3>(7).into_owned(), v0);
    }

    #[test]
    fn state_diff_blocks() {
        let m = model();
        let x0 = tumbling();
        assert_eq!(m.state_diff(&x0, &x0).unwrap(), DVector::zeros(12));

        let mut x1 = x0.clone();
        x1[7] += 1.0;
        let d = m.state_diff(&x1, &x0).unwrap();
        let mut expected = DVector::zeros(12);
        expected[6] = 1.0;
        assert_relative_eq!(d, expected, epsilon = 1e-15);

        let q0 = SatelliteModel::orientation(&x0).unwrap();
        let mut x2 = x0.clone();
        x2.fixed_rows_mut::<4>(3).copy_from(&so3::mul(&q0, &so3::exp(&Vector3::new(0.0, 0.0, 0.2))));
        let d = m.state_diff(&x2, &x0).unwrap();
        assert_relative_eq!(d.fixed_rows::<3>(3).into_owned(), Vector3::new(0.0, 0.0, 0.2), epsilon = 1e-12);

        let dx = DVector::from_fn(12, |i, _| 0.01 * (i as f64 - 5.0));
        let moved = m.integrate(&x0, &dx).unwrap();
        assert_relative_eq!(m.state_diff(&moved, &x0).unwrap(), dx, epsilon = 1e-12);
    }

    #[test]
    fn rejects_non_unit_quaternion() {
        let m = model();
        let mut x = tumbling();
        x[3] *= 1.01;
        assert!(matches!(m.step(&x, &DVector::zeros(18)), Err(Error::InvalidQuaternion(_))));
    }

    #[test]
    fn rotation_block_of_free_drift_jacobian() {
        let m = model();
        let w = Vector3::new(0.2, -0.1, 0.3);
        let x = SatelliteModel::state(Vector3::zeros(), so3::exp(&Vector3::new(0.1, 0.2, -0.3)), Vector3::zeros(), w);
        let j = finite_difference_jacobians(&m, &x, &DVector::zeros(18)).unwrap();
        // torque-free: q' = q exp(hω) so ∂δθ'/∂δθ = exp(hω)ᵀ
        let closed = so3::to_matrix(&so3::exp(&(w * m.dt))).transpose();
        let block = j.fx.fixed_view::<3, 3>(3, 3).into_owned();
        assert_relative_eq!(block, closed, epsilon = 1e-8);
    }

    #[test]
    fn tracking_cost_derivatives() {
        let m = model();
        let x_ref = SatelliteModel::rest_state(Vector3::new(1.0, 0.0, 0.0));
        let x = tumbling();
        let weights = DVector::from_vec(vec![1.0, 2.0, 3.0, 5.0, 5.0, 5.0, 0.5, 0.5, 0.5, 7.0, 8.0, 9.0]);
        let term = m.tracking_cost(&x, &x_ref, &weights).unwrap();
        let f = |dx: &DVector<f64>| m.tracking_cost(&m.integrate(&x, dx).unwrap(), &x_ref, &weights).unwrap();
        let h = 1e-5;
        for i in 0..12 {
            let mut d = DVector::zeros(12);
            d[i] = h;
            let (p, n) = (f(&d), f(&(-&d)));
            let g = (p.value - n.value) / (2.0 * h);
            assert!((g - term.grad[i]).abs() < 1e-6 * g.abs().max(1.0), "grad {i}");
        }
        // mixed second differences of g(δ) = cost(x ⊕ δ)
        let h = 1e-4;
        for i in 0..12 {
            for j in 0..12 {
                let at = |si: f64, sj: f64| {
                    let mut d = DVector::zeros(12);
                    d[i] += si * h;
                    d[j] += sj * h;
                    f(&d).value
                };
                let fd = (at(1.0, 1.0) - at(1.0, -1.0) - at(-1.0, 1.0) + at(-1.0, -1.0)) / (4.0 * h * h);
                let an = term.hess[(i, j)];
                assert!((fd - an).abs() < 1e-5 * an.abs().max(1.0), "hess ({i},{j}): {fd} vs {an}");
            }
        }
    }

    #[test]
    fn rotation_error_cost() {
        let m = model();
        let x_ref = SatelliteModel::rest_state(Vector3::zeros());
        let x = SatelliteModel::state(Vector3::zeros(), so3::exp(&Vector3::new(0.0, 0.0, 0.2)), Vector3::zeros(), Vector3::zeros());
        let mut w = DVector::zeros(12);
        w.fixed_rows_mut::<3>(3).fill(3.0);
        let term = m.tracking_cost(&x, &x_ref, &w).unwrap();
        assert_relative_eq!(term.value, 3.0 * 0.04, epsilon = 1e-14);
    }
}
