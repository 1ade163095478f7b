//! Rendering-free synthetic ground truth.
//!
//! A profile bundles the five configuration kinds (output, bundles, domes,
//! sequences and general parameters) into one JSON document. Each dome or
//! sequence is simulated independently with its own seeded RNG, so the jobs
//! run in parallel and are merged in configuration order.
//!
//! - **Dome**: a static object and a camera orbiting it, aimed at the
//!   object's origin, one shot per path step.
//! - **Sequence**: objects wandering over a rectangular arena on the ground
//!   plane (random waypoints with bounded speed and turn rate), observed by
//!   fixed cameras at a fixed capture rate.
//!
//! Annotations are written as line-delimited JSON, one [`ObjectAnnotation`]
//! per line; the dataset split goes into a separate manifest.

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::geometry::{
    cuboid_corners, cuboid_markers, project, spherical_params, view_orientation, wrap_angle,
    CameraIntrinsics, CameraRig, CuboidMarkers, CuboidSpec, EulerAngles, Pose, SphericalParams,
    Vec3,
};
use crate::priors::PriorSample;

#[derive(Debug, Error)]
pub enum SyngenError {
    #[error("cannot parse profile: {0}")]
    Parse(String),
    #[error("invalid profile: {0}")]
    Validation(String),
    #[error("need at least 10 records to split, got {0}")]
    TooFewRecords(usize),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed annotation on line {line}: {message}")]
    Annotation { line: usize, message: String },
}

fn invalid(msg: impl Into<String>) -> SyngenError {
    SyngenError::Validation(msg.into())
}

// ---------------------------------------------------------------- configs

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_annotations_file")]
    pub annotations_file: String,
    #[serde(default = "default_manifest_file")]
    pub manifest_file: String,
    /// Image paths are recorded for every annotation but no image is written.
    #[serde(default = "default_image_dir")]
    pub image_dir: String,
}

fn default_annotations_file() -> String {
    "annotations.jsonl".into()
}
fn default_manifest_file() -> String {
    "manifest.json".into()
}
fn default_image_dir() -> String {
    "images".into()
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            annotations_file: default_annotations_file(),
            manifest_file: default_manifest_file(),
            image_dir: default_image_dir(),
        }
    }
}

/// An asset: one object class and its cuboid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bundle {
    pub id: String,
    #[serde(default)]
    pub class_id: u32,
    pub cuboid: CuboidSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomeConfig {
    #[serde(default)]
    pub name: String,
    pub bundle: String,
    /// Object pose in the world. Defaults to the world origin.
    #[serde(default)]
    pub target: Pose,
    pub intrinsics: CameraIntrinsics,
    /// Orbit radius, meters, measured from the object's origin.
    pub radius: f64,
    /// Per-shot uniform jitter on the radius, meters.
    #[serde(default)]
    pub radius_jitter: f64,
    /// Elevation range of the orbit, radians above the ground plane.
    #[serde(default)]
    pub elevation_min: f64,
    #[serde(default)]
    pub elevation_max: f64,
    #[serde(default = "one")]
    pub elevation_steps: u32,
    pub azimuth_steps: u32,
    #[serde(default)]
    pub azimuth_offset: f64,
    /// Per-shot uniform jitter on the horizontal FOV, radians.
    #[serde(default)]
    pub fov_jitter: f64,
}

fn one() -> u32 {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Arena {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl Arena {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.min_x && x <= self.max_x && y >= self.min_y && y <= self.max_y
    }

    fn clamp(&self, x: f64, y: f64) -> (f64, f64) {
        (x.clamp(self.min_x, self.max_x), y.clamp(self.min_y, self.max_y))
    }

    fn sample(&self, rng: &mut impl Rng) -> (f64, f64) {
        (
            rng.random_range(self.min_x..=self.max_x),
            rng.random_range(self.min_y..=self.max_y),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceConfig {
    #[serde(default)]
    pub name: String,
    pub bundle: String,
    pub arena: Arena,
    /// Simulated time, seconds.
    pub duration: f64,
    /// Capture rate, Hz.
    pub rate: f64,
    #[serde(default = "one")]
    pub object_count: u32,
    /// Speed range, m/s.
    pub speed_min: f64,
    pub speed_max: f64,
    /// Maximum heading change, rad/s.
    pub turn_rate_max: f64,
    /// A waypoint not reached within this many seconds is replaced.
    #[serde(default = "default_waypoint_timeout")]
    pub waypoint_timeout: f64,
    pub cameras: Vec<CameraRig>,
}

fn default_waypoint_timeout() -> f64 {
    20.0
}

impl SequenceConfig {
    pub fn frame_count(&self) -> u64 {
        (self.duration * self.rate + 1e-9).floor() as u64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileConfig {
    #[serde(default)]
    pub output: OutputConfig,
    pub bundles: Vec<Bundle>,
    #[serde(default)]
    pub domes: Vec<DomeConfig>,
    #[serde(default)]
    pub sequences: Vec<SequenceConfig>,
    #[serde(default)]
    pub seed: u64,
    /// Write a train/val/test manifest next to the annotations.
    #[serde(default = "yes")]
    pub split: bool,
}

fn yes() -> bool {
    true
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), SyngenError> {
    if cond {
        Ok(())
    } else {
        Err(SyngenError::Validation(msg()))
    }
}

impl DomeConfig {
    pub fn validate(&self, bundle: &Bundle) -> Result<(), SyngenError> {
        self.intrinsics.validate().map_err(|e| invalid(e.to_string()))?;
        let reach = bundle.cuboid.length.hypot(bundle.cuboid.width).hypot(bundle.cuboid.height);
        check(self.radius_jitter >= 0.0, || "radius_jitter must be >= 0".into())?;
        check(self.radius - self.radius_jitter > 2.0 * reach, || {
            format!("orbit radius {} too small for the object", self.radius)
        })?;
        check(self.elevation_min >= 0.0, || "elevation_min must be >= 0 (camera above ground)".into())?;
        check(self.elevation_max >= self.elevation_min, || "elevation_max < elevation_min".into())?;
        check(self.elevation_max < FRAC_PI_2 - 1e-3, || "elevation_max must stay below vertical".into())?;
        check(self.elevation_steps > 0 && self.azimuth_steps > 0, || "step counts must be positive".into())?;
        check(self.fov_jitter >= 0.0, || "fov_jitter must be >= 0".into())?;
        check(
            self.intrinsics.horizontal_fov - self.fov_jitter > 0.0
                && self.intrinsics.horizontal_fov + self.fov_jitter < PI,
            || "fov jitter leaves (0, π)".into(),
        )?;
        Ok(())
    }
}

impl SequenceConfig {
    pub fn validate(&self) -> Result<(), SyngenError> {
        let a = &self.arena;
        check(a.max_x > a.min_x && a.max_y > a.min_y, || "arena bounds are empty".into())?;
        check(self.duration > 0.0, || format!("duration {} must be positive", self.duration))?;
        check(self.rate > 0.0, || format!("rate {} must be positive", self.rate))?;
        check(self.frame_count() >= 1, || "duration * rate must give at least one frame".into())?;
        check(self.object_count > 0, || "object_count must be positive".into())?;
        check(self.speed_min >= 0.0 && self.speed_max >= self.speed_min, || "bad speed range".into())?;
        check(self.turn_rate_max > 0.0, || "turn_rate_max must be positive".into())?;
        check(self.waypoint_timeout > 0.0, || "waypoint_timeout must be positive".into())?;
        check(!self.cameras.is_empty(), || "a sequence needs at least one camera".into())?;
        let mut ids: Vec<&str> = self.cameras.iter().map(|c| c.camera_id.as_str()).collect();
        ids.sort_unstable();
        check(ids.windows(2).all(|w| w[0] != w[1]), || "duplicate camera_id".into())?;
        for c in &self.cameras {
            c.intrinsics.validate().map_err(|e| invalid(format!("{}: {e}", c.camera_id)))?;
        }
        Ok(())
    }
}

impl ProfileConfig {
    pub fn bundle(&self, id: &str) -> Result<&Bundle, SyngenError> {
        self.bundles
            .iter()
            .find(|b| b.id == id)
            .ok_or_else(|| invalid(format!("unknown bundle '{id}'")))
    }

    pub fn validate(&self) -> Result<(), SyngenError> {
        check(
            !self.domes.is_empty() || !self.sequences.is_empty(),
            || "profile needs at least one dome or sequence".into(),
        )?;
        for b in &self.bundles {
            b.cuboid.validate().map_err(|e| invalid(format!("bundle {}: {e}", b.id)))?;
        }
        let shape = self.bundles.first().map(|b| b.cuboid);
        check(
            self.bundles.iter().all(|b| Some(b.cuboid) == shape),
            || "all bundles must share one cuboid size".into(),
        )?;
        for d in &self.domes {
            d.validate(self.bundle(&d.bundle)?)?;
        }
        for s in &self.sequences {
            self.bundle(&s.bundle)?;
            s.validate()?;
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("profile serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

pub fn load_profile(document: &str) -> Result<ProfileConfig, SyngenError> {
    let cfg: ProfileConfig =
        serde_json::from_str(document).map_err(|e| SyngenError::Parse(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

// ------------------------------------------------------------ annotations

/// Projections of the cuboid onto the image, pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScreenPoints {
    pub origin: [f64; 2],
    pub corners: [[f64; 2]; 8],
}

/// Ground truth for one object seen by one camera in one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectAnnotation {
    /// Generator job, e.g. `dome:front-orbit` or `sequence:arena`.
    pub source: String,
    pub frame_id: u64,
    /// Seconds since the start of the job.
    pub timestamp: f64,
    pub camera_id: String,
    pub object_id: u32,
    pub class_id: u32,
    pub cuboid: CuboidSpec,
    pub intrinsics: CameraIntrinsics,
    /// Camera frame in the world frame.
    pub camera_pose: Pose,
    /// Markers with the camera as origin.
    pub cuboid_camera: CuboidMarkers,
    /// Markers with the environment center as origin.
    pub cuboid_world: CuboidMarkers,
    pub screen_points: ScreenPoints,
    pub spherical: SphericalParams,
    pub image: String,
}

impl ObjectAnnotation {
    fn build(
        source: &str,
        frame_id: u64,
        timestamp: f64,
        rig: &CameraRig,
        object_id: u32,
        bundle: &Bundle,
        world_pose: &Pose,
        image: String,
    ) -> Option<ObjectAnnotation> {
        let pose_cam = rig.to_camera(world_pose);
        let k = &rig.intrinsics;
        let corners = cuboid_corners(&bundle.cuboid, &pose_cam);
        if corners.iter().any(|c| c.z <= 1e-6) {
            return None;
        }
        let origin = project(k, &pose_cam.translation).ok()?;
        if !k.contains(origin) {
            return None;
        }
        let mut corner_px = [[0.0; 2]; 8];
        for (dst, c) in corner_px.iter_mut().zip(corners.iter()) {
            *dst = project(k, c).ok()?;
        }
        Some(ObjectAnnotation {
            source: source.to_string(),
            frame_id,
            timestamp,
            camera_id: rig.camera_id.clone(),
            object_id,
            class_id: bundle.class_id,
            cuboid: bundle.cuboid,
            intrinsics: *k,
            camera_pose: rig.extrinsic_pose,
            cuboid_camera: cuboid_markers(&bundle.cuboid, &pose_cam),
            cuboid_world: cuboid_markers(&bundle.cuboid, world_pose),
            screen_points: ScreenPoints {
                origin,
                corners: corner_px,
            },
            spherical: spherical_params(&pose_cam),
            image,
        })
    }

    /// Object pose in the camera frame, recovered from the camera-frame markers.
    pub fn object_pose_camera(&self) -> Pose {
        self.cuboid_camera
            .pose()
            .expect("camera-frame markers form a rigid frame")
    }

    pub fn object_pose_world(&self) -> Pose {
        self.cuboid_world
            .pose()
            .expect("world-frame markers form a rigid frame")
    }

    pub fn prior_sample(&self) -> PriorSample {
        PriorSample {
            spherical: self.spherical,
            orientation: view_orientation(&self.object_pose_camera()),
        }
    }

    /// Largest disagreement between the three cuboid representations:
    /// world markers vs. camera markers moved by the extrinsics (meters),
    /// and stored screen points vs. re-projected camera-frame corners (pixels).
    pub fn consistency_error(&self) -> f64 {
        let moved = self.cuboid_camera.transformed(&self.camera_pose);
        let w = &self.cuboid_world;
        let mut err: f64 = [
            (moved.base_center - w.base_center).norm(),
            (moved.base_right - w.base_right).norm(),
            (moved.base_front - w.base_front).norm(),
            (moved.top_center - w.top_center).norm(),
        ]
        .into_iter()
        .fold(0.0, f64::max);
        let pose_cam = self.object_pose_camera();
        let corners = cuboid_corners(&self.cuboid, &pose_cam);
        let pts = std::iter::once((self.screen_points.origin, pose_cam.translation))
            .chain(self.screen_points.corners.iter().copied().zip(corners));
        for (px, p) in pts {
            match project(&self.intrinsics, &p) {
                Ok(q) => err = err.max((q[0] - px[0]).abs()).max((q[1] - px[1]).abs()),
                Err(_) => return f64::INFINITY,
            }
        }
        err
    }
}

fn image_path(dir: &str, source: &str, frame_id: u64, camera_id: &str) -> String {
    format!("{dir}/{}/{frame_id:06}_{camera_id}.png", source.replace(':', "_"))
}

fn mix_seed(seed: u64, kind: u64, index: u64) -> u64 {
    // splitmix64 over the combined key
    let mut z = seed
        .wrapping_add(kind.wrapping_mul(0xD1B5_4A32_D192_ED03))
        .wrapping_add(index.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn job_name(name: &str, kind: &str, index: usize) -> String {
    if name.is_empty() {
        format!("{kind}:{kind}{index}")
    } else {
        format!("{kind}:{name}")
    }
}

/// One annotation per orbit step. The camera sits on a sphere around the
/// object's origin and looks at it.
pub fn generate_dome(cfg: &DomeConfig, bundle: &Bundle, seed: u64) -> Vec<ObjectAnnotation> {
    generate_dome_named(cfg, bundle, seed, &job_name(&cfg.name, "dome", 0), "images")
}

fn generate_dome_named(
    cfg: &DomeConfig,
    bundle: &Bundle,
    seed: u64,
    source: &str,
    image_dir: &str,
) -> Vec<ObjectAnnotation> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let target = cfg.target.translation;
    let mut out = Vec::with_capacity((cfg.elevation_steps * cfg.azimuth_steps) as usize);
    let mut shot = 0u64;
    for ei in 0..cfg.elevation_steps {
        let elevation = if cfg.elevation_steps == 1 {
            cfg.elevation_min
        } else {
            cfg.elevation_min
                + (cfg.elevation_max - cfg.elevation_min) * ei as f64
                    / (cfg.elevation_steps - 1) as f64
        };
        for ai in 0..cfg.azimuth_steps {
            let azimuth = cfg.azimuth_offset + TAU * ai as f64 / cfg.azimuth_steps as f64;
            let radius = cfg.radius + cfg.radius_jitter * rng.random_range(-1.0..=1.0);
            let fov = cfg.intrinsics.horizontal_fov + cfg.fov_jitter * rng.random_range(-1.0..=1.0);
            let eye = target
                + radius
                    * Vec3::new(
                        elevation.cos() * azimuth.cos(),
                        elevation.cos() * azimuth.sin(),
                        elevation.sin(),
                    );
            let rig = CameraRig {
                camera_id: format!("shot{shot}"),
                intrinsics: CameraIntrinsics {
                    horizontal_fov: fov,
                    ..cfg.intrinsics
                },
                extrinsic_pose: Pose::look_at(&eye, &target).expect("elevation below vertical"),
            };
            let image = image_path(image_dir, source, shot, &rig.camera_id);
            if let Some(a) =
                ObjectAnnotation::build(source, shot, 0.0, &rig, 0, bundle, &cfg.target, image)
            {
                out.push(a);
            }
            shot += 1;
        }
    }
    out
}

struct Walker {
    x: f64,
    y: f64,
    heading: f64,
    speed: f64,
    waypoint: (f64, f64),
    waypoint_age: f64,
}

impl Walker {
    fn spawn(cfg: &SequenceConfig, rng: &mut impl Rng) -> Self {
        let (x, y) = cfg.arena.sample(rng);
        Walker {
            x,
            y,
            heading: rng.random_range(-PI..PI),
            speed: rng.random_range(cfg.speed_min..=cfg.speed_max),
            waypoint: cfg.arena.sample(rng),
            waypoint_age: 0.0,
        }
    }

    fn step(&mut self, cfg: &SequenceConfig, dt: f64, rng: &mut impl Rng) {
        let (wx, wy) = self.waypoint;
        let desired = (wy - self.y).atan2(wx - self.x);
        let max_turn = cfg.turn_rate_max * dt;
        self.heading =
            wrap_angle(self.heading + wrap_angle(desired - self.heading).clamp(-max_turn, max_turn));
        let (nx, ny) = cfg.arena.clamp(
            self.x + self.speed * dt * self.heading.cos(),
            self.y + self.speed * dt * self.heading.sin(),
        );
        self.x = nx;
        self.y = ny;
        self.waypoint_age += dt;
        let reached = (wx - nx).hypot(wy - ny) <= self.speed * dt;
        if reached || self.waypoint_age > cfg.waypoint_timeout {
            self.waypoint = cfg.arena.sample(rng);
            self.speed = rng.random_range(cfg.speed_min..=cfg.speed_max);
            self.waypoint_age = 0.0;
        }
    }

    fn pose(&self) -> Pose {
        // object forward (+Y) along the heading
        Pose::new(
            EulerAngles::new(wrap_angle(self.heading - FRAC_PI_2), 0.0, 0.0),
            Vec3::new(self.x, self.y, 0.0),
        )
    }
}

/// World poses of every object at every frame, `[frame][object]`.
pub fn simulate_sequence(cfg: &SequenceConfig, seed: u64) -> Vec<Vec<Pose>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dt = 1.0 / cfg.rate;
    let mut walkers: Vec<Walker> = (0..cfg.object_count)
        .map(|_| Walker::spawn(cfg, &mut rng))
        .collect();
    let frames = cfg.frame_count();
    let mut out = Vec::with_capacity(frames as usize);
    for _ in 0..frames {
        out.push(walkers.iter().map(Walker::pose).collect());
        for w in &mut walkers {
            w.step(cfg, dt, &mut rng);
        }
    }
    out
}

/// Annotations for every frame, camera (configuration order) and visible
/// object. An object is visible when its origin projects inside the image
/// and all of its corners are in front of the camera.
pub fn generate_sequence(
    cfg: &SequenceConfig,
    bundles: &[Bundle],
    seed: u64,
) -> Result<Vec<ObjectAnnotation>, SyngenError> {
    let source = job_name(&cfg.name, "sequence", 0);
    generate_sequence_named(cfg, bundles, seed, &source, "images")
}

fn generate_sequence_named(
    cfg: &SequenceConfig,
    bundles: &[Bundle],
    seed: u64,
    source: &str,
    image_dir: &str,
) -> Result<Vec<ObjectAnnotation>, SyngenError> {
    let bundle = bundles
        .iter()
        .find(|b| b.id == cfg.bundle)
        .ok_or_else(|| invalid(format!("unknown bundle '{}'", cfg.bundle)))?;
    let mut out = Vec::new();
    for (frame, poses) in simulate_sequence(cfg, seed).iter().enumerate() {
        let t = frame as f64 / cfg.rate;
        for rig in &cfg.cameras {
            for (oid, pose) in poses.iter().enumerate() {
                let image = image_path(image_dir, source, frame as u64, &rig.camera_id);
                if let Some(a) = ObjectAnnotation::build(
                    source, frame as u64, t, rig, oid as u32, bundle, pose, image,
                ) {
                    out.push(a);
                }
            }
        }
    }
    Ok(out)
}

/// Run every dome and sequence of a profile. Jobs run in parallel; the
/// output order is domes then sequences, each in configuration order.
pub fn generate_profile(cfg: &ProfileConfig) -> Result<Vec<ObjectAnnotation>, SyngenError> {
    cfg.validate()?;
    enum Job<'a> {
        Dome(usize, &'a DomeConfig),
        Sequence(usize, &'a SequenceConfig),
    }
    let jobs: Vec<Job> = cfg
        .domes
        .iter()
        .enumerate()
        .map(|(i, d)| Job::Dome(i, d))
        .chain(cfg.sequences.iter().enumerate().map(|(i, s)| Job::Sequence(i, s)))
        .collect();
    let image_dir = cfg.output.image_dir.as_str();
    let parts: Result<Vec<Vec<ObjectAnnotation>>, SyngenError> = jobs
        .par_iter()
        .map(|job| match job {
            Job::Dome(i, d) => Ok(generate_dome_named(
                d,
                cfg.bundle(&d.bundle)?,
                mix_seed(cfg.seed, 0, *i as u64),
                &job_name(&d.name, "dome", *i),
                image_dir,
            )),
            Job::Sequence(i, s) => generate_sequence_named(
                s,
                &cfg.bundles,
                mix_seed(cfg.seed, 1, *i as u64),
                &job_name(&s.name, "sequence", *i),
                image_dir,
            ),
        })
        .collect();
    Ok(parts?.into_iter().flatten().collect())
}

pub fn write_annotations<W: Write>(mut w: W, records: &[ObjectAnnotation]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn read_annotations<R: BufRead>(r: R) -> Result<Vec<ObjectAnnotation>, SyngenError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| SyngenError::Annotation {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

// ------------------------------------------------------------------ split

/// Train/val/test partition of an annotation file. Entries are zero-based
/// record (line) indices into `annotations`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    /// Annotation file, relative to the manifest.
    pub annotations: String,
    pub seed: u64,
    pub config_digest: String,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Seeded shuffle, then 80/10/10 with validation and test sizes rounded down.
pub fn split_indices(n: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>), SyngenError> {
    if n < 10 {
        return Err(SyngenError::TooFewRecords(n));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let holdout = n / 10;
    let train_end = n - 2 * holdout;
    let test = idx.split_off(train_end + holdout);
    let val = idx.split_off(train_end);
    Ok((idx, val, test))
}

pub fn split_dataset(annotations: &[ObjectAnnotation], seed: u64) -> Result<DatasetManifest, SyngenError> {
    let (train, val, test) = split_indices(annotations.len(), seed)?;
    Ok(DatasetManifest {
        annotations: default_annotations_file(),
        seed,
        config_digest: String::new(),
        train,
        val,
        test,
    })
}

/// Summary of a [`run_profile`] call.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub records: usize,
    pub manifest: Option<DatasetManifest>,
}

/// Generate a profile and write its annotation file (and manifest, when
/// splitting is enabled) into `out_dir`.
pub fn run_profile(cfg: &ProfileConfig, out_dir: &Path) -> Result<RunSummary, SyngenError> {
    let records = generate_profile(cfg)?;
    std::fs::create_dir_all(out_dir)?;
    let file = std::fs::File::create(out_dir.join(&cfg.output.annotations_file))?;
    write_annotations(std::io::BufWriter::new(file), &records)?;
    let manifest = if cfg.split {
        let mut m = split_dataset(&records, cfg.seed)?;
        m.annotations = cfg.output.annotations_file.clone();
        m.config_digest = cfg.digest();
        let json = serde_json::to_string_pretty(&m).expect("manifest serializes");
        std::fs::write(out_dir.join(&cfg.output.manifest_file), json)?;
        Some(m)
    } else {
        None
    };
    Ok(RunSummary {
        records: records.len(),
        manifest,
    })
}
