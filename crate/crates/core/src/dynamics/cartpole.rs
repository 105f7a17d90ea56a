use nalgebra::{DMatrix, DVector};

use super::{check_finite, check_len, StepJacobians, SystemModel};
use crate::{Error, Result};

/// Cart on a frictionless track with a point-mass pendulum.
///
/// State `(cart position, pole angle, cart velocity, pole rate)` with the
/// angle measured from hanging straight down, so `θ = π` is upright. The
/// single control is the horizontal force on the cart.
#[derive(Debug, Clone, PartialEq)]
pub struct CartpoleModel {
    pub cart_mass: f64,
    pub pole_mass: f64,
    pub pole_length: f64,
    pub gravity: f64,
    pub dt: f64,
    lower: DVector<f64>,
    upper: DVector<f64>,
}

impl Default for CartpoleModel {
    fn default() -> Self {
        Self::new(1.0, 0.5, 0.5, 9.81, 0.01, 30.0).expect("valid defaults")
    }
}

impl CartpoleModel {
    pub fn new(
        cart_mass: f64,
        pole_mass: f64,
        pole_length: f64,
        gravity: f64,
        dt: f64,
        force_limit: f64,
    ) -> Result<Self> {
        for (name, v) in [
            ("cart_mass", cart_mass),
            ("pole_mass", pole_mass),
            ("pole_length", pole_length),
            ("dt", dt),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidInput(format!("cartpole {name} must be positive, got {v}")));
            }
        }
        if !(force_limit > 0.0) || !gravity.is_finite() {
            return Err(Error::InvalidInput("cartpole force limit must be positive".into()));
        }
        Ok(Self {
            cart_mass,
            pole_mass,
            pole_length,
            gravity,
            dt,
            lower: DVector::from_element(1, -force_limit),
            upper: DVector::from_element(1, force_limit),
        })
    }

    pub fn force_limit(&self) -> f64 {
        self.upper[0]
    }

    /// Cart and pole accelerations.
    pub fn accelerations(&self, theta: f64, theta_dot: f64, force: f64) -> (f64, f64) {
        let (mc, mp, l, g) = (self.cart_mass, self.pole_mass, self.pole_length, self.gravity);
        let (s, c) = theta.sin_cos();
        let d = mc + mp * s * s;
        let xdd = (force + mp * s * (l * theta_dot * theta_dot + g * c)) / d;
        let tdd = (-force * c - mp * l * theta_dot * theta_dot * c * s - (mc + mp) * g * s) / (l * d);
        (xdd, tdd)
    }

    /// Partial derivatives of `(ẍ, θ̈)` with respect to `(θ, θ̇, f)`.
    fn acceleration_partials(&self, theta: f64, theta_dot: f64, force: f64) -> [[f64; 3]; 2] {
        let (mc, mp, l, g) = (self.cart_mass, self.pole_mass, self.pole_length, self.gravity);
        let (s, c) = theta.sin_cos();
        let w2 = theta_dot * theta_dot;
        let d = mc + mp * s * s;
        let dd = 2.0 * mp * s * c;

        let n1 = force + mp * s * (l * w2 + g * c);
        let n1_t = mp * (c * l * w2 + g * (c * c - s * s));
        let n1_w = 2.0 * mp * s * l * theta_dot;

        let n2 = -force * c - mp * l * w2 * c * s - (mc + mp) * g * s;
        let n2_t = force * s - mp * l * w2 * (c * c - s * s) - (mc + mp) * g * c;
        let n2_w = -2.0 * mp * l * theta_dot * c * s;
        let n2_f = -c;

        [
            [(n1_t * d - n1 * dd) / (d * d), n1_w / d, 1.0 / d],
            [
                (n2_t * d - n2 * dd) / (l * d * d),
                n2_w / (l * d),
                n2_f / (l * d),
            ],
        ]
    }

    /// Total mechanical energy with the potential referenced to the pivot.
    pub fn energy(&self, x: &DVector<f64>) -> f64 {
        let (mc, mp, l, g) = (self.cart_mass, self.pole_mass, self.pole_length, self.gravity);
        let (theta, xd, td) = (x[1], x[2], x[3]);
        0.5 * (mc + mp) * xd * xd + mp * l * xd * td * theta.cos() + 0.5 * mp * l * l * td * td
            - mp * g * l * theta.cos()
    }
}

impl SystemModel for CartpoleModel {
    fn name(&self) -> &str {
        "cartpole"
    }

    fn nx(&self) -> usize {
        4
    }

    fn nu(&self) -> usize {
        1
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
        check_len("cartpole state", 4, x.len())?;
        check_len("cartpole control", 1, u.len())?;
        check_finite("cartpole control", u)?;
        let h = self.dt;
        let (xdd, tdd) = self.accelerations(x[1], x[3], u[0]);
        let xd = x[2] + h * xdd;
        let td = x[3] + h * tdd;
        Ok(DVector::from_vec(vec![x[0] + h * xd, x[1] + h * td, xd, td]))
    }

    fn jacobians(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<StepJacobians> {
        check_len("cartpole state", 4, x.len())?;
        check_len("cartpole control", 1, u.len())?;
        let h = self.dt;
        let p = self.acceleration_partials(x[1], x[3], u[0]);

        // velocity rows: v' = v + h a(θ, θ̇, f)
        let mut fx = DMatrix::zeros(4, 4);
        let mut fu = DMatrix::zeros(4, 1);
        for (row, a) in [(2usize, p[0]), (3usize, p[1])] {
            fx[(row, 1)] = h * a[0];
            fx[(row, row)] = 1.0;
            fx[(row, 3)] += h * a[1];
            fu[(row, 0)] = h * a[2];
        }
        // configuration rows: q' = q + h v'
        for (q, v) in [(0usize, 2usize), (1, 3)] {
            for j in 0..4 {
                fx[(q, j)] = h * fx[(v, j)];
            }
            fx[(q, q)] += 1.0;
            fu[(q, 0)] = h * fu[(v, 0)];
        }
        Ok(StepJacobians { fx, fu })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{finite_difference_jacobians, max_scaled_error};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn hanging_rest_is_fixed_point() {
        let m = CartpoleModel::default();
        let x = DVector::zeros(4);
        assert_eq!(m.step(&x, &DVector::zeros(1)).unwrap(), x);
    }

    #[test]
    fn upright_equilibrium() {
        let m = CartpoleModel::default();
        let mut x = v(&[0.0, PI, 0.0, 0.0]);
        for _ in 0..10 {
            x = m.step(&x, &DVector::zeros(1)).unwrap();
        }
        // sin(π) is 1.2e-16 in floating point, not zero
        assert!((x[1] - PI).abs() < 1e-12 && x[0].abs() < 1e-12);
        assert!(x[2].abs() < 1e-12 && x[3].abs() < 1e-12);
    }

    /// Accelerations from the Lagrangian mass-matrix form
    /// `M(q) q̈ = τ + (mp l θ̇² sinθ, −mp g l sinθ)`, solved by Cramer's rule.
    fn lagrangian_accelerations(m: &CartpoleModel, th: f64, thd: f64, f: f64) -> (f64, f64) {
        let (mc, mp, l, g) = (m.cart_mass, m.pole_mass, m.pole_length, m.gravity);
        let (m11, m12, m22) = (mc + mp, mp * l * th.cos(), mp * l * l);
        let r1 = f + mp * l * thd * thd * th.sin();
        let r2 = -mp * g * l * th.sin();
        let det = m11 * m22 - m12 * m12;
        ((r1 * m22 - m12 * r2) / det, (m11 * r2 - m12 * r1) / det)
    }

    #[test]
    fn single_step_matches_lagrangian_oracle() {
        let m = CartpoleModel::default();
        let x = v(&[0.0, 0.1, 0.0, 0.0]);
        let got = m.step(&x, &v(&[5.0])).unwrap();
        let (xdd, tdd) = lagrangian_accelerations(&m, 0.1, 0.0, 5.0);
        let h = 0.01;
        let expected = v(&[h * h * xdd, 0.1 + h * h * tdd, h * xdd, h * tdd]);
        approx::assert_relative_eq!(got, expected, epsilon = 1e-14);
    }

    #[test]
    fn accelerations_match_oracle_on_random_states() {
        let m = CartpoleModel::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let (th, thd, f) = (rng.random_range(-4.0..4.0), rng.random_range(-8.0..8.0), rng.random_range(-30.0..30.0));
            let (a, b) = m.accelerations(th, thd, f);
            let (c, d) = lagrangian_accelerations(&m, th, thd, f);
            assert!((a - c).abs() < 1e-10 && (b - d).abs() < 1e-10);
        }
    }

    #[test]
    fn analytic_jacobians_match_finite_differences() {
        let m = CartpoleModel::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let x = v(&[
                rng.random_range(-1.0..1.0),
                rng.random_range(-PI..PI),
                rng.random_range(-3.0..3.0),
                rng.random_range(-6.0..6.0),
            ]);
            let u = v(&[rng.random_range(-30.0..30.0)]);
            let a = m.jacobians(&x, &u).unwrap();
            let n = finite_difference_jacobians(&m, &x, &u).unwrap();
            assert!(max_scaled_error(&a.fx, &n.fx) < 1e-5);
            assert!(max_scaled_error(&a.fu, &n.fu) < 1e-5);
        }
    }

    #[test]
    fn symplectic_energy_drift() {
        let m = CartpoleModel::default();
        let mut x = v(&[0.0, 0.3, 0.0, 0.0]);
        let e0 = m.energy(&x);
        let mut worst: f64 = 0.0;
        for _ in 0..200 {
            x = m.step(&x, &DVector::zeros(1)).unwrap();
            worst = worst.max((m.energy(&x) - e0).abs());
        }
        assert!(worst < 0.01 * e0.abs(), "drift {worst} vs energy {e0}");

    }

    #[test]
    fn rejects_bad_input() {
        let m = CartpoleModel::default();
        assert!(m.step(&DVector::zeros(3), &DVector::zeros(1)).is_err());
        assert!(m.step(&DVector::zeros(4), &v(&[f64::NAN])).is_err());
        assert!(CartpoleModel::new(0.0, 0.5, 0.5, 9.81, 0.01, 30.0).is_err());
    }
}
