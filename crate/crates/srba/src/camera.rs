//! Snavely camera model: projection, reprojection residuals, robust
//! (Huber/IRLS) weighting, and analytic Jacobians.
//!
//! The model projects a world point `X` through a 9-parameter camera
//! `(angle-axis rotation, translation, focal, k1, k2)`:
//!
//! ```text
//! P = R(rotation) X + translation
//! p = -(P_x / P_z, P_y / P_z)
//! d = 1 + k1 |p|^2 + k2 |p|^4
//! projection = focal * d * p
//! ```
//!
//! The camera looks down the negative z axis, so points in front of the
//! camera have `P_z < 0`; their viewing depth is `-P_z`.

use crate::math::{rotate, rotate_with_jacobians, Scalar};
use nalgebra::{Matrix2, SMatrix, Vector2, Vector3};
use thiserror::Error;

/// Number of parameters per camera.
pub const CAMERA_DIM: usize = 9;
/// Number of parameters per landmark.
pub const LANDMARK_DIM: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProjectionError {
    #[error("point projects onto the camera plane (P_z = 0)")]
    Degenerate,
}

/// 9-parameter Snavely camera: angle-axis rotation, translation, focal
/// length and two radial distortion coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraParams<T: Scalar> {
    pub rotation: Vector3<T>,
    pub translation: Vector3<T>,
    pub focal: T,
    pub k1: T,
    pub k2: T,
}

impl<T: Scalar> CameraParams<T> {
    pub fn new(rotation: Vector3<T>, translation: Vector3<T>, focal: T, k1: T, k2: T) -> Self {
        Self {
            rotation,
            translation,
            focal,
            k1,
            k2,
        }
    }

    /// Parameter layout used throughout the solver: `[r, t, f, k1, k2]`.
    pub fn from_vector(p: &SMatrix<T, CAMERA_DIM, 1>) -> Self {
        Self {
            rotation: Vector3::new(p[0], p[1], p[2]),
            translation: Vector3::new(p[3], p[4], p[5]),
            focal: p[6],
            k1: p[7],
            k2: p[8],
        }
    }

    pub fn to_vector(&self) -> SMatrix<T, CAMERA_DIM, 1> {
        SMatrix::<T, CAMERA_DIM, 1>::from_column_slice(&[
            self.rotation.x,
            self.rotation.y,
            self.rotation.z,
            self.translation.x,
            self.translation.y,
            self.translation.z,
            self.focal,
            self.k1,
            self.k2,
        ])
    }

    /// Additive update of all 9 parameters (including angle-axis).
    pub fn plus(&self, delta: &SMatrix<T, CAMERA_DIM, 1>) -> Self {
        Self::from_vector(&(self.to_vector() + delta))
    }

    pub fn cast<U: Scalar>(&self) -> CameraParams<U> {
        CameraParams {
            rotation: self.rotation.map(|v| U::from_double(v.to_double())),
            translation: self.translation.map(|v| U::from_double(v.to_double())),
            focal: U::from_double(self.focal.to_double()),
            k1: U::from_double(self.k1.to_double()),
            k2: U::from_double(self.k2.to_double()),
        }
    }

    /// Point transformed into the camera frame, `P = R X + t`.
    pub fn point_in_camera(&self, point: &Vector3<T>) -> Vector3<T> {
        rotate(&self.rotation, point) + self.translation
    }

    /// Viewing depth of a world point, positive in front of the camera.
    pub fn depth(&self, point: &Vector3<T>) -> T {
        -self.point_in_camera(point).z
    }
}

/// Residual and Jacobians of one observation, pre-scaled by the square
/// root of its IRLS weight.
#[derive(Debug, Clone)]
pub struct ResidualJacobian<T: Scalar> {
    pub r: Vector2<T>,
    pub j_cam: SMatrix<T, 2, CAMERA_DIM>,
    pub j_lm: SMatrix<T, 2, LANDMARK_DIM>,
    pub weight: T,
}

/// Projects a world point to pixel coordinates.
pub fn project<T: Scalar>(
    cam: &CameraParams<T>,
    point: &Vector3<T>,
) -> Result<Vector2<T>, ProjectionError> {
    let p_cam = cam.point_in_camera(point);
    if p_cam.z == T::zero() {
        return Err(ProjectionError::Degenerate);
    }
    let p = Vector2::new(-p_cam.x / p_cam.z, -p_cam.y / p_cam.z);
    let s = p.norm_squared();
    let d = T::one() + cam.k1 * s + cam.k2 * s * s;
    Ok(p * (cam.focal * d))
}

/// Reprojection residual `project(cam, point) - obs`.
pub fn residual<T: Scalar>(
    cam: &CameraParams<T>,
    point: &Vector3<T>,
    obs: &Vector2<T>,
) -> Result<Vector2<T>, ProjectionError> {
    Ok(project(cam, point)? - obs)
}

/// Unweighted residual and its analytic Jacobians with respect to the
/// camera parameters and the landmark position.
pub fn residual_jacobian_unweighted<T: Scalar>(
    cam: &CameraParams<T>,
    point: &Vector3<T>,
    obs: &Vector2<T>,
) -> Result<(Vector2<T>, SMatrix<T, 2, CAMERA_DIM>, SMatrix<T, 2, LANDMARK_DIM>), ProjectionError> {
    let (rotated, d_rot_theta, d_rot_point) = rotate_with_jacobians(&cam.rotation, point);
    let p_cam = rotated + cam.translation;
    if p_cam.z == T::zero() {
        return Err(ProjectionError::Degenerate);
    }

    let inv_z = T::one() / p_cam.z;
    let p = Vector2::new(-p_cam.x * inv_z, -p_cam.y * inv_z);
    let s = p.norm_squared();
    let d = T::one() + cam.k1 * s + cam.k2 * s * s;
    let proj = p * (cam.focal * d);

    // d p / d P_cam
    let dp_dpc = SMatrix::<T, 2, 3>::new(
        -inv_z,
        T::zero(),
        p_cam.x * inv_z * inv_z,
        T::zero(),
        -inv_z,
        p_cam.y * inv_z * inv_z,
    );

    // d proj / d p = f * (d I + 2 (k1 + 2 k2 s) p p^T)
    let dd_ds = cam.k1 + T::from_double(2.0) * cam.k2 * s;
    let dproj_dp = (Matrix2::identity() * d + p * p.transpose() * (T::from_double(2.0) * dd_ds))
        * cam.focal;

    let dproj_dpc = dproj_dp * dp_dpc;

    let mut j_cam = SMatrix::<T, 2, CAMERA_DIM>::zeros();
    j_cam
        .fixed_view_mut::<2, 3>(0, 0)
        .copy_from(&(dproj_dpc * d_rot_theta));
    j_cam.fixed_view_mut::<2, 3>(0, 3).copy_from(&dproj_dpc);
    j_cam.set_column(6, &(p * d));
    j_cam.set_column(7, &(p * (cam.focal * s)));
    j_cam.set_column(8, &(p * (cam.focal * s * s)));

    let j_lm = dproj_dpc * d_rot_point;

    Ok((proj - obs, j_cam, j_lm))
}

/// IRLS weight of the Huber norm with threshold `delta`, evaluated at
/// residual norm `r_norm`: 1 for inliers, `delta / |r|` beyond.
pub fn huber_weight<T: Scalar>(r_norm: T, delta: T) -> T {
    if r_norm <= delta {
        T::one()
    } else {
        delta / r_norm
    }
}

/// Huber cost of one residual given its squared norm, `rho(|r|^2)`.
pub fn huber_cost(r_norm_squared: f64, delta: f64) -> f64 {
    let r_norm = r_norm_squared.sqrt();
    if r_norm <= delta {
        r_norm_squared
    } else {
        2.0 * delta * r_norm - delta * delta
    }
}

/// Residual and Jacobians pre-scaled by the square root of the IRLS
/// weight for the Huber threshold `huber_delta`.
pub fn residual_jacobian<T: Scalar>(
    cam: &CameraParams<T>,
    point: &Vector3<T>,
    obs: &Vector2<T>,
    huber_delta: T,
) -> Result<ResidualJacobian<T>, ProjectionError> {
    let (r, j_cam, j_lm) = residual_jacobian_unweighted(cam, point, obs)?;
    let weight = huber_weight(r.norm(), huber_delta);
    let sqrt_w = weight.sqrt();
    Ok(ResidualJacobian {
        r: r * sqrt_w,
        j_cam: j_cam * sqrt_w,
        j_lm: j_lm * sqrt_w,
        weight,
    })
}
