//! Scenario builders shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::{FRAC_PI_2, FRAC_PI_8, PI};

use rand::Rng;
use vtrack::codec::{Codec, GroundTruth};
use vtrack::geometry::{orientation_from_view, CameraIntrinsics, CameraRig, CuboidSpec, Pose, Vec3};
use vtrack::priors::Prior;
use vtrack::syngen::{Arena, SequenceConfig};

pub fn car() -> CuboidSpec {
    CuboidSpec::new(4.5, 1.8, 1.4).unwrap()
}

pub fn wide_camera() -> CameraIntrinsics {
    CameraIntrinsics::new(FRAC_PI_2, 1472, 832).unwrap()
}

/// 30 × 30 m arena watched by four cameras, 5 m beyond each corner along
/// both axes and 6 m up, all aimed at the arena center. Every camera sees
/// the whole arena.
pub fn arena_sequence(duration: f64, object_count: u32) -> SequenceConfig {
    let cameras = [(20.0, 20.0), (-20.0, 20.0), (-20.0, -20.0), (20.0, -20.0)]
        .iter()
        .enumerate()
        .map(|(i, &(x, y))| CameraRig {
            camera_id: format!("cam{i}"),
            intrinsics: wide_camera(),
            extrinsic_pose: Pose::look_at(&Vec3::new(x, y, 6.0), &Vec3::zeros()).unwrap(),
        })
        .collect();
    SequenceConfig {
        name: "arena".into(),
        bundle: "car".into(),
        arena: Arena { min_x: -15.0, min_y: -15.0, max_x: 15.0, max_y: 15.0 },
        duration,
        rate: 24.0,
        object_count,
        speed_min: 2.0,
        speed_max: 9.0,
        turn_rate_max: 1.2,
        waypoint_timeout: 15.0,
        cameras,
    }
}

/// A ground truth drawn uniformly over `prior`'s region: distance, yaw band,
/// elevation in `[0, π/8)`, twist in `(-π/8, π/8)` and any image position.
/// Returns `None` when the draw is not encodable by that prior.
pub fn ground_truth_in(codec: &Codec, prior: &Prior, rng: &mut impl Rng) -> Option<GroundTruth> {
    let b = &prior.bounds;
    let r = rng.random_range(b.r_min..b.r_max);
    let theta = b.theta_center + rng.random_range(-b.theta_halfwidth..b.theta_halfwidth);
    let phi = rng.random_range(0.0..FRAC_PI_8);
    let twist = rng.random_range(-FRAC_PI_8..FRAC_PI_8);
    let k = &codec.intrinsics;
    let gt = GroundTruth {
        origin_px: [
            rng.random_range(0.0..k.width as f64),
            rng.random_range(0.0..k.height as f64),
        ],
        distance: r,
        view_orientation: orientation_from_view(theta, phi, twist),
        class_id: 0,
    };
    match codec.encode(&gt) {
        Ok(e) if e.values.prior_id == prior.id => Some(gt),
        _ => None,
    }
}

/// Uniform random rotation as Euler angles via a unit quaternion.
pub fn random_rotation(rng: &mut impl Rng) -> vtrack::geometry::RotationMatrix {
    use nalgebra::{Quaternion, UnitQuaternion};
    loop {
        let q = Quaternion::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let n = q.norm();
        if n > 1e-3 && n <= 1.0 {
            return UnitQuaternion::from_quaternion(q).to_rotation_matrix();
        }
    }
}

/// Rotation by `angle` about a uniformly random axis.
pub fn random_axis_rotation(angle: f64, rng: &mut impl Rng) -> vtrack::geometry::RotationMatrix {
    let z: f64 = rng.random_range(-1.0..1.0);
    let a: f64 = rng.random_range(-PI..PI);
    let s = (1.0 - z * z).sqrt();
    let axis = nalgebra::Unit::new_normalize(Vec3::new(s * a.cos(), s * a.sin(), z));
    nalgebra::Rotation3::from_axis_angle(&axis, angle)
}
