//! Scalar abstraction and angle-axis rotation kernels.
//!
//! The solver is generic over working precision: every linear-algebra
//! routine runs in either `f32` or `f64` through the [`Scalar`] trait,
//! while costs and preprocessing always stay in `f64`.

use nalgebra::{Matrix3, RealField, Vector3};

/// Working precision of a solver instance.
pub trait Scalar: RealField + Copy + Default + Send + Sync + 'static {
    /// Human-readable precision tag used in solver ids and traces.
    const PRECISION_NAME: &'static str;

    fn from_double(value: f64) -> Self;
    fn to_double(self) -> f64;
}

impl Scalar for f64 {
    const PRECISION_NAME: &'static str = "double";

    #[inline]
    fn from_double(value: f64) -> Self {
        value
    }

    #[inline]
    fn to_double(self) -> f64 {
        self
    }
}

impl Scalar for f32 {
    const PRECISION_NAME: &'static str = "single";

    #[inline]
    fn from_double(value: f64) -> Self {
        value as f32
    }

    #[inline]
    fn to_double(self) -> f64 {
        self as f64
    }
}

/// Angle below which the Rodrigues coefficient functions switch to their
/// series expansions to avoid division by a near-zero angle.
const SMALL_ANGLE: f64 = 1e-8;

/// Coefficients of the Rodrigues formula written as
/// `R v = a v + b (theta x v) + c theta (theta . v)`.
///
/// `e = (d b / d alpha) / alpha` and `g = (d c / d alpha) / alpha` are the
/// derivative terms needed for the rotation Jacobian; dividing by alpha here
/// keeps all expressions finite at alpha -> 0.
struct RodriguesCoeffs<T> {
    a: T,
    b: T,
    c: T,
    e: T,
    g: T,
}

fn rodrigues_coeffs<T: Scalar>(angle: T) -> RodriguesCoeffs<T> {
    let one = T::one();
    if angle.to_double() < SMALL_ANGLE {
        let a2 = angle * angle;
        RodriguesCoeffs {
            a: one - a2 * T::from_double(0.5),
            b: one - a2 * T::from_double(1.0 / 6.0),
            c: T::from_double(0.5) - a2 * T::from_double(1.0 / 24.0),
            e: T::from_double(-1.0 / 3.0) + a2 * T::from_double(1.0 / 30.0),
            g: T::from_double(-1.0 / 12.0) + a2 * T::from_double(1.0 / 180.0),
        }
    } else {
        let (sin, cos) = (angle.sin(), angle.cos());
        let a2 = angle * angle;
        let a3 = a2 * angle;
        let a4 = a2 * a2;
        let two = T::from_double(2.0);
        RodriguesCoeffs {
            a: cos,
            b: sin / angle,
            c: (one - cos) / a2,
            e: (angle * cos - sin) / a3,
            g: (angle * sin - two * (one - cos)) / a4,
        }
    }
}

/// Rotates `v` by the angle-axis vector `theta` (Rodrigues' formula).
pub fn rotate<T: Scalar>(theta: &Vector3<T>, v: &Vector3<T>) -> Vector3<T> {
    let angle = theta.norm();
    let k = rodrigues_coeffs(angle);
    v * k.a + theta.cross(v) * k.b + theta * (theta.dot(v) * k.c)
}

/// Rotation matrix for the angle-axis vector `theta`.
pub fn rotation_matrix<T: Scalar>(theta: &Vector3<T>) -> Matrix3<T> {
    let angle = theta.norm();
    let k = rodrigues_coeffs(angle);
    Matrix3::identity() * k.a + skew(theta) * k.b + theta * theta.transpose() * k.c
}

/// Rotates `v` by `theta` and returns the rotated point together with the
/// Jacobians with respect to `theta` (additive perturbation of the
/// angle-axis vector) and with respect to `v`.
pub fn rotate_with_jacobians<T: Scalar>(
    theta: &Vector3<T>,
    v: &Vector3<T>,
) -> (Vector3<T>, Matrix3<T>, Matrix3<T>) {
    let angle = theta.norm();
    let k = rodrigues_coeffs(angle);
    let cross = theta.cross(v);
    let dot = theta.dot(v);
    let rotated = v * k.a + cross * k.b + theta * (dot * k.c);

    // d(Rv)/dv is the rotation matrix itself.
    let d_v = Matrix3::identity() * k.a + skew(theta) * k.b + theta * theta.transpose() * k.c;

    // d(Rv)/dtheta = (-b v + e (theta x v) + g theta (theta . v)) theta^T
    //              - b [v]_x + c (theta v^T + (theta . v) I)
    let col = v * (-k.b) + cross * k.e + theta * (dot * k.g);
    let d_theta = col * theta.transpose() - skew(v) * k.b
        + (theta * v.transpose() + Matrix3::identity() * dot) * k.c;

    (rotated, d_theta, d_v)
}

/// Skew-symmetric cross-product matrix `[v]_x`.
pub fn skew<T: Scalar>(v: &Vector3<T>) -> Matrix3<T> {
    Matrix3::new(
        T::zero(),
        -v.z,
        v.y,
        v.z,
        T::zero(),
        -v.x,
        -v.y,
        v.x,
        T::zero(),
    )
}

/// Extracts an angle-axis vector from a rotation matrix.
///
/// Used by the synthetic problem generator; not on the solver hot path.
pub fn angle_axis_from_matrix(rot: &Matrix3<f64>) -> Vector3<f64> {
    let quat = nalgebra::UnitQuaternion::from_matrix(rot);
    quat.scaled_axis()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn rotate_identity_for_zero_angle() {
        let v = Vector3::new(1.0, -2.0, 3.0);
        let r = rotate(&Vector3::zeros(), &v);
        assert_relative_eq!(r, v, epsilon = 1e-15);
    }

    #[test]
    fn rotate_quarter_turn_about_z() {
        let theta = Vector3::new(0.0, 0.0, std::f64::consts::FRAC_PI_2);
        let r = rotate(&theta, &Vector3::new(1.0, 0.0, 0.0));
        assert_relative_eq!(r, Vector3::new(0.0, 1.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn rotation_matrix_matches_rotate() {
        let theta = Vector3::new(0.3, -0.4, 0.2);
        let v = Vector3::new(0.7, 1.3, -0.5);
        let m = rotation_matrix(&theta);
        assert_relative_eq!(m * v, rotate(&theta, &v), epsilon = 1e-14);
    }

    #[test]
    fn representative_invariance() {
        // theta and (angle + 2 pi) along the same axis rotate identically.
        let axis = Vector3::new(1.0, 2.0, -1.0).normalize();
        let v = Vector3::new(0.2, -0.9, 1.4);
        let a = rotate(&(axis * 0.7), &v);
        let b = rotate(&(axis * (0.7 + 2.0 * std::f64::consts::PI)), &v);
        assert_relative_eq!(a, b, epsilon = 1e-9);
    }

    #[test]
    fn jacobians_match_finite_differences() {
        let configs = [
            (Vector3::new(0.4, -0.2, 0.9), Vector3::new(1.0, 2.0, -0.5)),
            (Vector3::new(1e-9, 0.0, 0.0), Vector3::new(0.3, -0.1, 0.8)),
            (Vector3::new(2.5, 1.1, -0.7), Vector3::new(-2.0, 0.4, 1.6)),
        ];
        let h = 1e-6;
        for (theta, v) in configs {
            let (_, d_theta, d_v) = rotate_with_jacobians(&theta, &v);
            for i in 0..3 {
                let mut dp = Vector3::zeros();
                dp[i] = h;
                let fd_theta = (rotate(&(theta + dp), &v) - rotate(&(theta - dp), &v)) / (2.0 * h);
                let fd_v = (rotate(&theta, &(v + dp)) - rotate(&theta, &(v - dp))) / (2.0 * h);
                assert_relative_eq!(d_theta.column(i).into_owned(), fd_theta, epsilon = 1e-7);
                assert_relative_eq!(d_v.column(i).into_owned(), fd_v, epsilon = 1e-7);
            }
        }
    }

    #[test]
    fn angle_axis_round_trip() {
        let theta = Vector3::new(0.5, -1.2, 0.3);
        let m = rotation_matrix(&theta);
        let back = angle_axis_from_matrix(&m);
        assert_relative_eq!(back, theta, epsilon = 1e-9);
    }
}
