use nalgebra::{DMatrix, DVector, Matrix2xX, Vector2};
use serde::{Deserialize, Serialize};

use super::{check_finite, check_len, DynamicsHessians, StepJacobians, SystemModel};
use crate::{Error, Result};

/// Planar serial arm driven by joint accelerations.
///
/// The dynamics are a double integrator per joint, so `f` is exactly linear:
///
/// ```text
/// v' = v + h u
/// q' = q + h v'
/// ```
///
/// Link lengths only enter through [`PlanarKinematics`], used by the
/// end-effector cost.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmModel {
    kinematics: PlanarKinematics,
    pub dt: f64,
    lower: DVector<f64>,
    upper: DVector<f64>,
}

impl ArmModel {
    pub fn new(link_lengths: Vec<f64>, dt: f64, accel_limits: Vec<f64>) -> Result<Self> {
        let n = link_lengths.len();
        if n == 0 {
            return Err(Error::InvalidInput("arm needs at least one joint".into()));
        }
        check_len("arm acceleration limits", n, accel_limits.len())?;
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::InvalidInput(format!("arm dt must be positive, got {dt}")));
        }
        if accel_limits.iter().any(|a| !(*a > 0.0)) {
            return Err(Error::InvalidInput("arm acceleration limits must be positive".into()));
        }
        let upper = DVector::from_vec(accel_limits);
        Ok(Self {
            kinematics: PlanarKinematics::new(link_lengths)?,
            dt,
            lower: -&upper,
            upper,
        })
    }

    /// An arm without control limits.
    pub fn unbounded(link_lengths: Vec<f64>, dt: f64) -> Result<Self> {
        let n = link_lengths.len();
        Self::new(link_lengths, dt, vec![f64::INFINITY; n])
    }

    pub fn n_joints(&self) -> usize {
        self.kinematics.link_lengths.len()
    }

    pub fn kinematics(&self) -> &PlanarKinematics {
        &self.kinematics
    }

    /// `(A, B)` such that `x' = A x + B u`.
    pub fn system_matrices(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let n = self.n_joints();
        let h = self.dt;
        let eye = DMatrix::<f64>::identity(n, n);
        let mut a = DMatrix::identity(2 * n, 2 * n);
        a.view_mut((0, n), (n, n)).copy_from(&(&eye * h));
        let mut b = DMatrix::zeros(2 * n, n);
        b.view_mut((0, 0), (n, n)).copy_from(&(&eye * (h * h)));
        b.view_mut((n, 0), (n, n)).copy_from(&(&eye * h));
        (a, b)
    }
}

impl SystemModel for ArmModel {
    fn name(&self) -> &str {
        "arm"
    }

    fn nx(&self) -> usize {
        2 * self.n_joints()
    }

    fn nu(&self) -> usize {
        self.n_joints()
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
        let n = self.n_joints();
        check_len("arm state", 2 * n, x.len())?;
        check_len("arm control", n, u.len())?;
        check_finite("arm control", u)?;
        let h = self.dt;
        let mut next = x.clone();
        for j in 0..n {
            let v = x[n + j] + h * u[j];
            next[n + j] = v;
            next[j] = x[j] + h * v;
        }
        Ok(next)
    }

    fn jacobians(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<StepJacobians> {
        check_len("arm state", self.nx(), x.len())?;
        check_len("arm control", self.nu(), u.len())?;
        let (fx, fu) = self.system_matrices();
        Ok(StepJacobians { fx, fu })
    }

    fn dynamics_hessians(&self, _x: &DVector<f64>, _u: &DVector<f64>) -> Option<DynamicsHessians> {
        let (nx, nu) = (self.nx(), self.nu());
        Some(DynamicsHessians {
            fxx: vec![DMatrix::zeros(nx, nx); nx],
            fuu: vec![DMatrix::zeros(nu, nu); nx],
            fux: vec![DMatrix::zeros(nu, nx); nx],
        })
    }
}

/// Forward kinematics of a planar chain with relative joint angles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanarKinematics {
    link_lengths: Vec<f64>,
}

impl PlanarKinematics {
    pub fn new(link_lengths: Vec<f64>) -> Result<Self> {
        if link_lengths.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
            return Err(Error::InvalidInput("link lengths must be positive".into()));
        }
        Ok(Self { link_lengths })
    }

    pub fn link_lengths(&self) -> &[f64] {
        &self.link_lengths
    }

    fn absolute_angles(&self, q: &[f64]) -> Vec<f64> {
        q.iter()
            .scan(0.0, |acc, &qi| {
                *acc += qi;
                Some(*acc)
            })
            .collect()
    }

    pub fn end_effector(&self, q: &[f64]) -> Vector2<f64> {
        self.absolute_angles(q)
            .iter()
            .zip(&self.link_lengths)
            .map(|(phi, l)| Vector2::new(l * phi.cos(), l * phi.sin()))
            .sum()
    }

    /// `∂p/∂q`, a `2 × n` matrix.
    pub fn jacobian(&self, q: &[f64]) -> Matrix2xX<f64> {
        let n = q.len();
        let phis = self.absolute_angles(q);
        let mut jac = Matrix2xX::zeros(n);
        // column j accumulates every link at or beyond joint j
        for j in 0..n {
            for i in j..n {
                let l = self.link_lengths[i];
                jac[(0, j)] -= l * phis[i].sin();
                jac[(1, j)] += l * phis[i].cos();
            }
        }
        jac
    }

    /// Second derivatives `∂²p_k/∂q_j∂q_m` for `k = 0, 1`.
    pub fn hessians(&self, q: &[f64]) -> [DMatrix<f64>; 2] {
        let n = q.len();
        let phis = self.absolute_angles(q);
        // tail sums S_i = Σ_{k ≥ i} l_k (cos φ_k, sin φ_k)
        let mut tail = vec![Vector2::zeros(); n + 1];
        for i in (0..n).rev() {
            tail[i] = tail[i + 1] + self.link_lengths[i] * Vector2::new(phis[i].cos(), phis[i].sin());
        }
        let mut hx = DMatrix::zeros(n, n);
        let mut hy = DMatrix::zeros(n, n);
        for j in 0..n {
            for m in 0..n {
                let s = tail[j.max(m)];
                hx[(j, m)] = -s.x;
                hy[(j, m)] = -s.y;
            }
        }
        [hx, hy]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{finite_difference_jacobians, max_scaled_error};
    use approx::assert_relative_eq;

    fn arm(n: usize) -> ArmModel {
        ArmModel::new(vec![0.3; n], 0.1, vec![5.0; n]).unwrap()
    }

    #[test]
    fn constant_jacobians() {
        let m = arm(3);
        let x = DVector::from_fn(6, |i, _| i as f64 * 0.1);
        let u = DVector::from_element(3, 0.7);
        let j = m.jacobians(&x, &u).unwrap();
        let h = 0.1;
        for i in 0..3 {
            assert_eq!(j.fx[(i, i)], 1.0);
            assert_eq!(j.fx[(i, 3 + i)], h);
            assert_eq!(j.fx[(3 + i, 3 + i)], 1.0);
            assert_eq!(j.fu[(i, i)], h * h);
            assert_eq!(j.fu[(3 + i, i)], h);
        }
        let fd = finite_difference_jacobians(&m, &x, &u).unwrap();
        assert!(max_scaled_error(&j.fx, &fd.fx) < 1e-9);
        assert!(max_scaled_error(&j.fu, &fd.fu) < 1e-9);
    }

    #[test]
    fn step_is_exactly_linear() {
        let m = arm(2);
        let x = DVector::from_vec(vec![0.5, -0.25, 1.0, 2.0]);
        let u = DVector::from_vec(vec![-1.0, 0.5]);
        let (a, b) = m.system_matrices();
        assert_relative_eq!(m.step(&x, &u).unwrap(), &a * &x + &b * &u, epsilon = 1e-15);
        // from rest, the state difference is exactly fu·u
        let zero = DVector::zeros(4);
        let dx = m.state_diff(&m.step(&zero, &u).unwrap(), &zero).unwrap();
        assert_eq!(dx, &b * &u);
    }

    #[test]
    fn kinematics_derivatives() {
        let k = PlanarKinematics::new(vec![0.4, 0.3, 0.2]).unwrap();
        let q = [0.3, -0.8, 1.1];
        assert_relative_eq!(
            k.end_effector(&[0.0, 0.0, 0.0]),
            Vector2::new(0.9, 0.0),
            epsilon = 1e-15
        );
        let jac = k.jacobian(&q);
        let hs = k.hessians(&q);
        let h = 1e-6;
        for j in 0..3 {
            let mut qp = q;
            qp[j] += h;
            let mut qm = q;
            qm[j] -= h;
            let d = (k.end_effector(&qp) - k.end_effector(&qm)) / (2.0 * h);
            assert_relative_eq!(d, jac.column(j).into_owned(), epsilon = 1e-9);
            let dj = (k.jacobian(&qp) - k.jacobian(&qm)) / (2.0 * h);
            for m in 0..3 {
                assert_relative_eq!(dj[(0, m)], hs[0][(j, m)], epsilon = 1e-8);
                assert_relative_eq!(dj[(1, m)], hs[1][(j, m)], epsilon = 1e-8);
            }
        }
    }
}
