//! Rotation helpers on scalar-first unit quaternions `[w, x, y, z]`.

use nalgebra::{Matrix3, Vector3, Vector4};

pub type Quat = Vector4<f64>;

pub fn identity() -> Quat {
    Vector4::new(1.0, 0.0, 0.0, 0.0)
}

/// Hamilton product `a ⊗ b`.
pub fn mul(a: &Quat, b: &Quat) -> Quat {
    let (aw, ax, ay, az) = (a[0], a[1], a[2], a[3]);
    let (bw, bx, by, bz) = (b[0], b[1], b[2], b[3]);
    Vector4::new(
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    )
}

pub fn conj(q: &Quat) -> Quat {
    Vector4::new(q[0], -q[1], -q[2], -q[3])
}

/// Quaternion of the rotation vector `phi`.
pub fn exp(phi: &Vector3<f64>) -> Quat {
    let theta = phi.norm();
    let half = 0.5 * theta;
    // sin(θ/2)/θ, with its series below machine-visible angles
    let s = if theta < 1e-6 {
        0.5 - theta * theta / 48.0
    } else {
        half.sin() / theta
    };
    Vector4::new(half.cos(), s * phi.x, s * phi.y, s * phi.z)
}

/// Rotation vector of `q`, choosing the representative with angle in `[0, π]`.
pub fn log(q: &Quat) -> Vector3<f64> {
    let q = if q[0] < 0.0 { -q } else { *q };
    let v = Vector3::new(q[1], q[2], q[3]);
    let n = v.norm();
    let w = q[0];
    let scale = if n < 1e-9 {
        // 2 atan(n/w)/n ≈ (2/w)(1 − n²/(3w²))
        2.0 / w * (1.0 - n * n / (3.0 * w * w))
    } else {
        2.0 * n.atan2(w) / n
    };
    v * scale
}

/// Rotation matrix (body to world).
pub fn to_matrix(q: &Quat) -> Matrix3<f64> {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

pub fn hat(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Inverse of the right Jacobian of SO(3).
pub fn right_jacobian_inv(phi: &Vector3<f64>) -> Matrix3<f64> {
    let h = hat(phi);
    Matrix3::identity() + 0.5 * h + inv_jacobian_coeff(phi.norm()) * h * h
}

/// `1/θ² − (1 + cos θ) / (2 θ sin θ)`, which tends to `1/12` at zero.
pub fn inv_jacobian_coeff(theta: f64) -> f64 {
    if theta < 1e-4 {
        1.0 / 12.0 + theta * theta / 720.0
    } else {
        1.0 / (theta * theta) - (1.0 + theta.cos()) / (2.0 * theta * theta.sin())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn exp_log_roundtrip() {
        for phi in [
            Vector3::new(0.1, -0.2, 0.3),
            Vector3::new(0.0, 0.0, 0.2),
            Vector3::new(1e-10, 0.0, 0.0),
            Vector3::new(2.0, 1.0, -0.5),
        ] {
            assert_relative_eq!(log(&exp(&phi)), phi, epsilon = 1e-12);
        }
    }

    #[test]
    fn matrix_matches_product_action() {
        let q = exp(&Vector3::new(0.3, -0.7, 0.2));
        let v = Vector3::new(1.0, 2.0, 3.0);
        let pure = Vector4::new(0.0, v.x, v.y, v.z);
        let rotated = mul(&mul(&q, &pure), &conj(&q));
        assert_relative_eq!(to_matrix(&q) * v, Vector3::new(rotated[1], rotated[2], rotated[3]), epsilon = 1e-12);
    }

    #[test]
    fn z_rotation() {
        let q = exp(&Vector3::new(0.0, 0.0, std::f64::consts::FRAC_PI_2));
        assert_relative_eq!(to_matrix(&q) * Vector3::x(), Vector3::y(), epsilon = 1e-12);
    }
}
