//! Coordinate frames, rotations, pinhole projection and cuboid geometry.
//!
//! Frame conventions used throughout the crate:
//!
//! - **camera frame**: X right, Y down, Z forward (optical axis).
//! - **world frame**: X east, Y north, Z up. The ground plane is `z = 0`.
//! - **object frame**: X lateral (right side of the object), Y forward,
//!   Z up. The origin sits at the center of the lower face of the enclosing
//!   cuboid.
//! - **viewing frame** of a pixel ray: Y along the ray, Z the camera's "up"
//!   direction made orthogonal to the ray, X = Y × Z. Orientations that the
//!   codec predicts are expressed in this frame, so an object keeps the same
//!   orientation values wherever it appears on screen as long as it is seen
//!   from the same side.
//!
//! A [`Pose`] maps points from a source frame into a target frame:
//! `p_target = R · p_source + t`.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use nalgebra::{Matrix3, Matrix4, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A 3D point or direction, in meters when it is a point.
pub type Vec3 = Vector3<f64>;

/// A proper rotation (orthonormal, det = +1).
pub type RotationMatrix = Rotation3<f64>;

/// Tolerance used when checking that a matrix is a rotation.
pub const ROTATION_TOLERANCE: f64 = 1e-6;

const GIMBAL_EPS: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("matrix is not a rotation (orthonormality/determinant error {0:e})")]
    NotARotation(f64),
    #[error("point has non-positive depth {0} along the optical axis")]
    BehindCamera(f64),
    #[error("distance must be positive, got {0}")]
    NonPositiveDistance(f64),
    #[error("empty input")]
    EmptyInput,
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("invalid cuboid size: {0}")]
    InvalidCuboid(String),
}

/// Reduce an angle to `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(TAU);
    if w > PI {
        w - TAU
    } else {
        w
    }
}

/// Extrinsic Euler angles, applied about fixed axes in the order
/// X (roll), then Y (pitch), then Z (yaw): `R = Rz(yaw) · Ry(pitch) · Rx(roll)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EulerAngles {
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
}

impl EulerAngles {
    pub const ZERO: EulerAngles = EulerAngles {
        yaw: 0.0,
        pitch: 0.0,
        roll: 0.0,
    };

    pub fn new(yaw: f64, pitch: f64, roll: f64) -> Self {
        Self { yaw, pitch, roll }
    }

    pub fn to_matrix(&self) -> RotationMatrix {
        euler_to_matrix(self)
    }

    /// Canonical form: yaw and roll in `(-π, π]`, pitch in `[-π/2, π/2]`,
    /// roll folded into yaw at gimbal lock.
    pub fn canonical(&self) -> Self {
        rotation_to_euler(&euler_to_matrix(self))
    }

    pub fn is_finite(&self) -> bool {
        self.yaw.is_finite() && self.pitch.is_finite() && self.roll.is_finite()
    }
}

pub fn euler_to_matrix(e: &EulerAngles) -> RotationMatrix {
    let (sy, cy) = e.yaw.sin_cos();
    let (sp, cp) = e.pitch.sin_cos();
    let (sr, cr) = e.roll.sin_cos();
    #[rustfmt::skip]
    let m = Matrix3::new(
        cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr,
        sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr,
        -sp,     cp * sr,                cp * cr,
    );
    Rotation3::from_matrix_unchecked(m)
}

/// How far `m` is from being a proper rotation: max of `‖MᵀM − I‖∞` and `|det M − 1|`.
pub fn rotation_defect(m: &Matrix3<f64>) -> f64 {
    let ortho = (m.transpose() * m - Matrix3::identity()).abs().max();
    ortho.max((m.determinant() - 1.0).abs())
}

/// Validate a raw matrix as a rotation.
pub fn as_rotation(m: &Matrix3<f64>) -> Result<RotationMatrix, GeometryError> {
    let defect = rotation_defect(m);
    if !defect.is_finite() || defect > ROTATION_TOLERANCE {
        return Err(GeometryError::NotARotation(defect));
    }
    Ok(Rotation3::from_matrix_unchecked(*m))
}

pub fn matrix_to_euler(m: &Matrix3<f64>) -> Result<EulerAngles, GeometryError> {
    let r = as_rotation(m)?;
    Ok(rotation_to_euler(&r))
}

/// Euler decomposition of a matrix already known to be a rotation.
pub fn rotation_to_euler(r: &RotationMatrix) -> EulerAngles {
    let m = r.matrix();
    let cos_pitch = m[(0, 0)].hypot(m[(1, 0)]);
    if cos_pitch < GIMBAL_EPS {
        // Gimbal lock: only yaw ∓ roll is observable, so roll is pinned to 0.
        let pitch = if -m[(2, 0)] > 0.0 { FRAC_PI_2 } else { -FRAC_PI_2 };
        let yaw = (-m[(0, 1)]).atan2(m[(1, 1)]);
        return EulerAngles::new(wrap_angle(yaw), pitch, 0.0);
    }
    let pitch = (-m[(2, 0)]).atan2(cos_pitch);
    let yaw = m[(1, 0)].atan2(m[(0, 0)]);
    let roll = m[(2, 1)].atan2(m[(2, 2)]);
    EulerAngles::new(wrap_angle(yaw), pitch, wrap_angle(roll))
}

/// Rigid transform from a source frame into a target frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: EulerAngles,
    pub translation: Vec3,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: EulerAngles::ZERO,
            translation: Vec3::zeros(),
        }
    }

    pub fn new(rotation: EulerAngles, translation: Vec3) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_rotation(rotation: &RotationMatrix, translation: Vec3) -> Self {
        Self {
            rotation: rotation_to_euler(rotation),
            translation,
        }
    }

    pub fn rotation_matrix(&self) -> RotationMatrix {
        euler_to_matrix(&self.rotation)
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation_matrix() * p + self.translation
    }

    pub fn transform_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation_matrix() * v
    }

    /// `self ∘ other`: first apply `other`, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        let ra = self.rotation_matrix();
        let rb = other.rotation_matrix();
        Pose::from_rotation(&(ra * rb), ra * other.translation + self.translation)
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation_matrix().inverse();
        Pose::from_rotation(&rt, -(rt * self.translation))
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut h = Matrix4::identity();
        h.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(self.rotation_matrix().matrix());
        h.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        h
    }

    /// World pose of a camera at `eye` looking at `target`, with no roll
    /// relative to world up. Fails when the view direction is vertical.
    pub fn look_at(eye: &Vec3, target: &Vec3) -> Option<Pose> {
        let forward = (target - eye).try_normalize(1e-12)?;
        let right = forward.cross(&Vec3::z()).try_normalize(1e-9)?;
        let down = forward.cross(&right);
        let m = Matrix3::from_columns(&[right, down, forward]);
        Some(Pose::from_rotation(
            &Rotation3::from_matrix_unchecked(m),
            *eye,
        ))
    }
}

pub fn compose(a: &Pose, b: &Pose) -> Pose {
    a.compose(b)
}

pub fn invert(a: &Pose) -> Pose {
    a.inverse()
}

/// Pinhole camera with square pixels. The vertical field of view follows
/// from the aspect ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    /// Horizontal field of view in radians, in `(0, π)`.
    pub horizontal_fov: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(horizontal_fov: f64, width: u32, height: u32) -> Result<Self, GeometryError> {
        let k = Self {
            horizontal_fov,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.horizontal_fov.is_finite() && self.horizontal_fov > 0.0 && self.horizontal_fov < PI)
        {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "horizontal fov {} outside (0, π)",
                self.horizontal_fov
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "resolution {}x{} must be nonzero",
                self.width, self.height
            )));
        }
        Ok(())
    }

    /// Focal length in pixels.
    pub fn focal_px(&self) -> f64 {
        (self.width as f64 / 2.0) / (self.horizontal_fov / 2.0).tan()
    }

    pub fn principal_point(&self) -> (f64, f64) {
        (self.width as f64 / 2.0, self.height as f64 / 2.0)
    }

    pub fn aspect_ratio(&self) -> f64 {
        self.width as f64 / self.height as f64
    }

    pub fn vertical_fov(&self) -> f64 {
        2.0 * ((self.height as f64 / 2.0) / self.focal_px()).atan()
    }

    pub fn contains(&self, px: [f64; 2]) -> bool {
        px[0] >= 0.0 && px[1] >= 0.0 && px[0] < self.width as f64 && px[1] < self.height as f64
    }
}

pub fn project(k: &CameraIntrinsics, p_cam: &Vec3) -> Result<[f64; 2], GeometryError> {
    if p_cam.z <= 0.0 || !p_cam.z.is_finite() {
        return Err(GeometryError::BehindCamera(p_cam.z));
    }
    let f = k.focal_px();
    let (cx, cy) = k.principal_point();
    Ok([cx + f * p_cam.x / p_cam.z, cy + f * p_cam.y / p_cam.z])
}

/// Unit direction of the ray through `px`.
pub fn pixel_ray(k: &CameraIntrinsics, px: [f64; 2]) -> Vec3 {
    let f = k.focal_px();
    let (cx, cy) = k.principal_point();
    Vec3::new((px[0] - cx) / f, (px[1] - cy) / f, 1.0).normalize()
}

/// The point on the ray through `px` at Euclidean distance `distance` from
/// the focus (a distance, not a depth).
pub fn backproject(
    k: &CameraIntrinsics,
    px: [f64; 2],
    distance: f64,
) -> Result<Vec3, GeometryError> {
    if !(distance > 0.0) || !distance.is_finite() {
        return Err(GeometryError::NonPositiveDistance(distance));
    }
    Ok(pixel_ray(k, px) * distance)
}

/// Viewing frame of a ray, expressed in camera coordinates (columns are the
/// frame's X, Y, Z axes). `direction` must have positive depth.
pub fn viewing_frame(direction: &Vec3) -> RotationMatrix {
    let y = direction.normalize();
    let up = Vec3::new(0.0, -1.0, 0.0);
    let z = (up - y * up.dot(&y)).normalize();
    let x = y.cross(&z);
    Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[x, y, z]))
}

/// Object orientation (in the viewing frame) that places the camera at yaw
/// `theta` and elevation `phi` around the object, with `twist` the remaining
/// rotation about the viewing ray. `theta = 0` means the object faces the camera.
pub fn orientation_from_view(theta: f64, phi: f64, twist: f64) -> RotationMatrix {
    Rotation3::from_axis_angle(&Vector3::y_axis(), twist)
        * Rotation3::from_axis_angle(&Vector3::x_axis(), phi)
        * Rotation3::from_axis_angle(&Vector3::z_axis(), PI - theta)
}

/// Orientation of an object in the viewing frame of the ray through its
/// origin. `object_pose_in_camera.translation` must have positive depth.
pub fn view_orientation(object_pose_in_camera: &Pose) -> RotationMatrix {
    viewing_frame(&object_pose_in_camera.translation).inverse()
        * object_pose_in_camera.rotation_matrix()
}

/// A calibrated camera placed in the world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraRig {
    pub camera_id: String,
    pub intrinsics: CameraIntrinsics,
    /// Camera frame expressed in the world frame.
    pub extrinsic_pose: Pose,
}

impl CameraRig {
    pub fn position(&self) -> Vec3 {
        self.extrinsic_pose.translation
    }

    /// Pose of an object in this camera's frame given its world pose.
    pub fn to_camera(&self, world_pose: &Pose) -> Pose {
        self.extrinsic_pose.inverse().compose(world_pose)
    }
}

/// Object axis/dimension mapping: X ↔ width, Y ↔ length, Z ↔ height.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CuboidSpec {
    pub length: f64,
    pub width: f64,
    pub height: f64,
}

impl CuboidSpec {
    pub fn new(length: f64, width: f64, height: f64) -> Result<Self, GeometryError> {
        let s = Self {
            length,
            width,
            height,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        for (name, v) in [
            ("length", self.length),
            ("width", self.width),
            ("height", self.height),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(GeometryError::InvalidCuboid(format!("{name} = {v}")));
            }
        }
        Ok(())
    }

    /// The 8 corners in the object frame: bottom face first, counter-clockwise
    /// seen from above starting at (-w/2, -l/2).
    pub fn local_corners(&self) -> [Vec3; 8] {
        let (hw, hl, h) = (self.width / 2.0, self.length / 2.0, self.height);
        let mut out = [Vec3::zeros(); 8];
        let base = [(-hw, -hl), (hw, -hl), (hw, hl), (-hw, hl)];
        for (i, &(x, y)) in base.iter().enumerate() {
            out[i] = Vec3::new(x, y, 0.0);
            out[i + 4] = Vec3::new(x, y, h);
        }
        out
    }
}

/// The four identified points of an object's cuboid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CuboidMarkers {
    pub base_center: Vec3,
    pub base_right: Vec3,
    pub base_front: Vec3,
    pub top_center: Vec3,
}

impl CuboidMarkers {
    pub fn transformed(&self, pose: &Pose) -> CuboidMarkers {
        CuboidMarkers {
            base_center: pose.transform_point(&self.base_center),
            base_right: pose.transform_point(&self.base_right),
            base_front: pose.transform_point(&self.base_front),
            top_center: pose.transform_point(&self.top_center),
        }
    }

    /// Recover the pose that produced these markers (object frame → marker frame).
    pub fn pose(&self) -> Result<Pose, GeometryError> {
        let x = (self.base_right - self.base_center).normalize();
        let y = (self.base_front - self.base_center).normalize();
        let z = (self.top_center - self.base_center).normalize();
        let r = as_rotation(&Matrix3::from_columns(&[x, y, z]))?;
        Ok(Pose::from_rotation(&r, self.base_center))
    }
}

pub fn cuboid_markers(spec: &CuboidSpec, pose: &Pose) -> CuboidMarkers {
    let local = CuboidMarkers {
        base_center: Vec3::zeros(),
        base_right: Vec3::new(spec.width / 2.0, 0.0, 0.0),
        base_front: Vec3::new(0.0, spec.length / 2.0, 0.0),
        top_center: Vec3::new(0.0, 0.0, spec.height),
    };
    local.transformed(pose)
}

pub fn cuboid_corners(spec: &CuboidSpec, pose: &Pose) -> [Vec3; 8] {
    let r = pose.rotation_matrix();
    spec.local_corners().map(|c| r * c + pose.translation)
}

/// Position of the camera around an object: distance `r`, yaw `theta` and
/// elevation `phi`, such that in the object's frame the camera sits at
/// `(-r·cosφ·sinθ, r·cosφ·cosθ, r·sinφ)`. Equivalently, with the object's
/// forward axis as the reference x-axis and its left as y,
/// `x = r·cosφ·cosθ, y = r·cosφ·sinθ, z = r·sinφ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SphericalParams {
    pub r: f64,
    pub theta: f64,
    pub phi: f64,
}

impl SphericalParams {
    /// Camera position in the object frame implied by these parameters.
    pub fn camera_in_object(&self) -> Vec3 {
        let (st, ct) = self.theta.sin_cos();
        let (sp, cp) = self.phi.sin_cos();
        Vec3::new(-self.r * cp * st, self.r * cp * ct, self.r * sp)
    }
}

/// Spherical parameters of an object given its pose in the camera frame.
pub fn spherical_params(object_pose_in_camera: &Pose) -> SphericalParams {
    let r = object_pose_in_camera.translation.norm();
    let rot = object_pose_in_camera.rotation_matrix();
    let cam = -(rot.inverse() * object_pose_in_camera.translation);
    let (fwd, left, up) = (cam.y, -cam.x, cam.z);
    if r == 0.0 {
        return SphericalParams {
            r,
            theta: 0.0,
            phi: 0.0,
        };
    }
    SphericalParams {
        r,
        theta: wrap_angle(left.atan2(fwd)),
        phi: up.atan2(fwd.hypot(left)),
    }
}

/// Minimizer of `Σ ‖R − Rᵢ‖²_F` over SO(3): the arithmetic mean of the
/// matrices projected back onto SO(3) with an SVD.
pub fn so3_mean(rotations: &[RotationMatrix]) -> Result<RotationMatrix, GeometryError> {
    if rotations.is_empty() {
        return Err(GeometryError::EmptyInput);
    }
    let sum: Matrix3<f64> = rotations.iter().map(|r| *r.matrix()).sum();
    let mean = sum / rotations.len() as f64;
    let svd = mean.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let d = (u * v_t).determinant().signum();
    let fix = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d));
    let r = u * fix * v_t;
    // Re-orthonormalize through a quaternion to strip SVD round-off.
    let q = UnitQuaternion::from_matrix(&r);
    Ok(q.to_rotation_matrix())
}

/// Sum of squared Frobenius distances from `candidate` to every rotation.
pub fn chordal_cost(candidate: &RotationMatrix, rotations: &[RotationMatrix]) -> f64 {
    rotations
        .iter()
        .map(|r| (candidate.matrix() - r.matrix()).norm_squared())
        .sum()
}

/// Angle of `aᵀb`, in `[0, π]`.
pub fn geodesic_distance(a: &RotationMatrix, b: &RotationMatrix) -> f64 {
    let rel = a.inverse() * b;
    let q = UnitQuaternion::from_rotation_matrix(&rel);
    2.0 * q.imag().norm().atan2(q.w.abs())
}
