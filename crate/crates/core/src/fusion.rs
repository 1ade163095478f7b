//! Multi-camera aggregation.
//!
//! Per-camera detections are lifted into the world frame, grouped across
//! cameras by a distance gate (connected components), and each group is
//! reduced to the member reported by the camera nearest to it. A
//! [`Tracker`] buffers incoming messages and emits fused positions at a
//! fixed tick rate, keeping track ids stable by nearest-neighbor matching
//! against the previous tick.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, Write};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::DecodedDetection;
use crate::geometry::{backproject, rotation_to_euler, CameraRig, EulerAngles, GeometryError, Vec3};
use crate::syngen::ObjectAnnotation;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FusionError {
    #[error("unknown camera '{0}'")]
    UnknownCamera(String),
    #[error("duplicate camera '{0}' in rig registry")]
    DuplicateCamera(String),
    #[error("detection distance {0} is not positive")]
    NonPositiveDistance(f64),
    #[error("cannot fuse an empty group")]
    EmptyGroup,
    #[error("invalid timestamp {0}")]
    InvalidTimestamp(f64),
    #[error("invalid tracker configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Detections from one camera frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionMessage {
    pub camera_id: String,
    /// Seconds on the source's monotonic clock.
    pub timestamp: f64,
    pub detections: Vec<DecodedDetection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldDetection {
    pub world_position: Vec3,
    pub world_orientation: EulerAngles,
    pub source_camera: String,
    /// Distance from the camera center to `world_position`, meters.
    pub camera_distance: f64,
    pub timestamp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedPosition {
    pub track_id: u64,
    pub world_position: Vec3,
    pub world_orientation: EulerAngles,
    pub chosen_camera: String,
    pub contributing_cameras: BTreeSet<String>,
    pub tick_timestamp: f64,
}

/// Rigs by camera id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RigRegistry {
    rigs: BTreeMap<String, CameraRig>,
}

impl RigRegistry {
    pub fn new(rigs: impl IntoIterator<Item = CameraRig>) -> Result<Self, FusionError> {
        let mut map = BTreeMap::new();
        for r in rigs {
            r.intrinsics.validate()?;
            if map.contains_key(&r.camera_id) {
                return Err(FusionError::DuplicateCamera(r.camera_id));
            }
            map.insert(r.camera_id.clone(), r);
        }
        Ok(RigRegistry { rigs: map })
    }

    /// Parse a JSON list of rigs.
    pub fn from_json(s: &str) -> Result<Self, FusionError> {
        let rigs: Vec<CameraRig> =
            serde_json::from_str(s).map_err(|e| FusionError::InvalidConfig(e.to_string()))?;
        Self::new(rigs)
    }

    pub fn get(&self, camera_id: &str) -> Result<&CameraRig, FusionError> {
        self.rigs
            .get(camera_id)
            .ok_or_else(|| FusionError::UnknownCamera(camera_id.to_string()))
    }

    pub fn len(&self) -> usize {
        self.rigs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rigs.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &CameraRig> {
        self.rigs.values()
    }
}

pub fn to_world(d: &DecodedDetection, rig: &CameraRig, timestamp: f64) -> Result<WorldDetection, FusionError> {
    if !(d.distance > 0.0 && d.distance.is_finite()) {
        return Err(FusionError::NonPositiveDistance(d.distance));
    }
    let p_cam = backproject(&rig.intrinsics, d.origin_px, d.distance)?;
    let world_position = rig.extrinsic_pose.transform_point(&p_cam);
    let r = rig.extrinsic_pose.rotation_matrix() * d.orientation.to_matrix();
    Ok(WorldDetection {
        world_position,
        world_orientation: rotation_to_euler(&r),
        source_camera: rig.camera_id.clone(),
        camera_distance: (world_position - rig.position()).norm(),
        timestamp,
    })
}

/// Connected components of the graph joining detections closer than
/// `gate`. Groups list member indices in ascending order and are ordered by
/// their first member.
pub fn associate(detections: &[WorldDetection], gate: f64) -> Vec<Vec<usize>> {
    let n = detections.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for i in 0..n {
        for j in i + 1..n {
            if (detections[i].world_position - detections[j].world_position).norm() < gate {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..n {
        let root = find(&mut parent, i);
        groups.entry(root).or_default().push(i);
    }
    groups.into_values().collect()
}

/// The member with the smallest camera distance; ties go to the smallest
/// camera id. `track_id` and `tick_timestamp` are left for the caller.
pub fn fuse(group: &[WorldDetection]) -> Result<FusedPosition, FusionError> {
    let best = group
        .iter()
        .min_by(|a, b| {
            a.camera_distance
                .total_cmp(&b.camera_distance)
                .then_with(|| a.source_camera.cmp(&b.source_camera))
        })
        .ok_or(FusionError::EmptyGroup)?;
    Ok(FusedPosition {
        track_id: 0,
        world_position: best.world_position,
        world_orientation: best.world_orientation,
        chosen_camera: best.source_camera.clone(),
        contributing_cameras: group.iter().map(|d| d.source_camera.clone()).collect(),
        tick_timestamp: best.timestamp,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackerConfig {
    /// Ticks per second.
    pub rate: f64,
    /// Association and track-continuity gate, meters.
    pub gate: f64,
    /// Messages older than this many tick periods are stale.
    pub staleness_ticks: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            rate: 24.0,
            gate: 1.0,
            staleness_ticks: 2.0,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<(), FusionError> {
        if !(self.rate > 0.0 && self.rate.is_finite()) {
            return Err(FusionError::InvalidConfig(format!("rate {} must be positive", self.rate)));
        }
        if !(self.gate > 0.0) {
            return Err(FusionError::InvalidConfig(format!("gate {} must be positive", self.gate)));
        }
        if !(self.staleness_ticks > 0.0) {
            return Err(FusionError::InvalidConfig("staleness must be positive".into()));
        }
        Ok(())
    }

    pub fn window(&self) -> f64 {
        self.staleness_ticks / self.rate
    }
}

/// Slack on tick-window boundaries, seconds.
const TIME_EPSILON: f64 = 1e-9;

/// Fused positions emitted at one tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tick {
    pub timestamp: f64,
    pub positions: Vec<FusedPosition>,
}

#[derive(Debug, Clone)]
pub struct Tracker {
    registry: RigRegistry,
    config: TrackerConfig,
    /// Per camera, messages keyed by timestamp bits (order-preserving for
    /// non-negative floats).
    buffers: BTreeMap<String, BTreeMap<u64, DetectionMessage>>,
    previous: Vec<(u64, Vec3)>,
    next_track: u64,
    dropped: u64,
    rejected_detections: u64,
}

impl Tracker {
    pub fn new(registry: RigRegistry, config: TrackerConfig) -> Result<Self, FusionError> {
        config.validate()?;
        Ok(Tracker {
            registry,
            config,
            buffers: BTreeMap::new(),
            previous: Vec::new(),
            next_track: 1,
            dropped: 0,
            rejected_detections: 0,
        })
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.config
    }

    /// Messages dropped for an unknown camera or a bad timestamp.
    pub fn dropped(&self) -> u64 {
        self.dropped
    }

    /// Detections skipped because they could not be lifted to the world.
    pub fn rejected_detections(&self) -> u64 {
        self.rejected_detections
    }

    pub fn ingest(&mut self, msg: DetectionMessage) -> Result<(), FusionError> {
        if self.registry.get(&msg.camera_id).is_err() {
            self.dropped += 1;
            return Err(FusionError::UnknownCamera(msg.camera_id));
        }
        if !(msg.timestamp >= 0.0 && msg.timestamp.is_finite()) {
            self.dropped += 1;
            return Err(FusionError::InvalidTimestamp(msg.timestamp));
        }
        // +0.0 and -0.0 share a key
        let key = (msg.timestamp + 0.0).to_bits();
        let buf = self.buffers.entry(msg.camera_id.clone()).or_default();
        match buf.get(&key) {
            // equal timestamps: keep a deterministic choice regardless of arrival order
            Some(existing) if message_key(existing) <= message_key(&msg) => {}
            _ => {
                buf.insert(key, msg);
            }
        }
        Ok(())
    }

    /// Fuse the freshest message of every camera within the staleness
    /// window ending at `now`.
    pub fn tick(&mut self, now: f64) -> Tick {
        let oldest = now - self.config.window() - TIME_EPSILON;
        let newest = now + TIME_EPSILON;
        let mut world = Vec::new();
        for (camera, buf) in self.buffers.iter_mut() {
            // drop what can never be fresh again
            while let Some((&k, _)) = buf.first_key_value() {
                if f64::from_bits(k) < oldest {
                    buf.remove(&k);
                } else {
                    break;
                }
            }
            let latest = buf
                .range(..)
                .rev()
                .map(|(_, m)| m)
                .find(|m| m.timestamp <= newest);
            let Some(msg) = latest else { continue };
            let rig = self.registry.get(camera).expect("buffered cameras are registered");
            for d in &msg.detections {
                match to_world(d, rig, msg.timestamp) {
                    Ok(w) => world.push(w),
                    Err(_) => self.rejected_detections += 1,
                }
            }
        }
        let mut fused: Vec<FusedPosition> = associate(&world, self.config.gate)
            .into_iter()
            .map(|g| {
                let members: Vec<WorldDetection> = g.into_iter().map(|i| world[i].clone()).collect();
                let mut f = fuse(&members).expect("groups are non-empty");
                f.tick_timestamp = now;
                f
            })
            .collect();
        self.assign_tracks(&mut fused);
        fused.sort_by_key(|f| f.track_id);
        Tick {
            timestamp: now,
            positions: fused,
        }
    }

    fn assign_tracks(&mut self, fused: &mut [FusedPosition]) {
        let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
        for (pi, (_, p)) in self.previous.iter().enumerate() {
            for (fi, f) in fused.iter().enumerate() {
                let d = (f.world_position - p).norm();
                if d < self.config.gate {
                    pairs.push((d, pi, fi));
                }
            }
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut used_prev = vec![false; self.previous.len()];
        let mut assigned = vec![false; fused.len()];
        for (_, pi, fi) in pairs {
            if !used_prev[pi] && !assigned[fi] {
                used_prev[pi] = true;
                assigned[fi] = true;
                fused[fi].track_id = self.previous[pi].0;
            }
        }
        // new tracks in a position-derived order so arrival order cannot matter
        let mut fresh: Vec<usize> = (0..fused.len()).filter(|&i| !assigned[i]).collect();
        fresh.sort_by(|&a, &b| {
            let (pa, pb) = (fused[a].world_position, fused[b].world_position);
            pa.x.total_cmp(&pb.x).then(pa.y.total_cmp(&pb.y)).then(pa.z.total_cmp(&pb.z))
        });
        for i in fresh {
            fused[i].track_id = self.next_track;
            self.next_track += 1;
        }
        self.previous = fused.iter().map(|f| (f.track_id, f.world_position)).collect();
    }
}

fn message_key(m: &DetectionMessage) -> String {
    serde_json::to_string(m).expect("message serializes")
}

/// Number of ticks in a `duration`-second run.
pub fn tick_count(duration: f64, rate: f64) -> usize {
    (duration * rate).round().max(0.0) as usize
}

/// Replay messages in virtual time: tick `k` happens at `k / rate`, and
/// every message stamped at or before a tick is ingested before it.
/// Unknown-camera messages are dropped and counted by the tracker.
pub fn run_virtual(tracker: &mut Tracker, messages: &[DetectionMessage], duration: f64) -> Vec<Tick> {
    let mut order: Vec<&DetectionMessage> = messages.iter().collect();
    order.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
    let rate = tracker.config.rate;
    let mut next = 0;
    let mut ticks = Vec::new();
    for k in 0..tick_count(duration, rate) {
        let now = k as f64 / rate;
        while next < order.len() && order[next].timestamp <= now + TIME_EPSILON {
            let _ = tracker.ingest(order[next].clone());
            next += 1;
        }
        ticks.push(tracker.tick(now));
    }
    ticks
}

/// Live service: readers push messages into the shared tracker while
/// [`tick_loop`] fuses on wall-clock time.
pub type SharedTracker = Arc<Mutex<Tracker>>;

/// Parse line-delimited JSON messages from `reader` into `tracker` until
/// end of input. Returns the number of malformed lines.
pub fn ingest_lines<R: BufRead>(reader: R, tracker: &SharedTracker) -> std::io::Result<u64> {
    let mut malformed = 0;
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<DetectionMessage>(&line) {
            Ok(m) => {
                let _ = tracker.lock().expect("tracker lock").ingest(m);
            }
            Err(_) => malformed += 1,
        }
    }
    Ok(malformed)
}

/// Emit one JSON line per fused position at the tracker's rate until `stop`
/// is set. Tick time is seconds since the loop started plus `clock_offset`.
pub fn tick_loop<W: Write>(
    tracker: &SharedTracker,
    mut out: W,
    stop: &AtomicBool,
    clock_offset: f64,
) -> std::io::Result<u64> {
    let rate = tracker.lock().expect("tracker lock").config.rate;
    let period = Duration::from_secs_f64(1.0 / rate);
    let start = Instant::now();
    let mut k: u64 = 0;
    while !stop.load(Ordering::Relaxed) {
        let due = start + period.mul_f64(k as f64);
        if let Some(wait) = due.checked_duration_since(Instant::now()) {
            std::thread::sleep(wait);
        }
        let now = clock_offset + k as f64 / rate;
        let tick = tracker.lock().expect("tracker lock").tick(now);
        for p in &tick.positions {
            serde_json::to_writer(&mut out, p)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        k += 1;
    }
    Ok(k)
}

/// Zero-mean Gaussian detection noise: on the origin pixel (per axis) and
/// proportional to the distance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseModel {
    #[serde(default = "default_pixel_sigma")]
    pub pixel_sigma: f64,
    #[serde(default = "default_distance_fraction")]
    pub distance_fraction: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_pixel_sigma() -> f64 {
    1.0
}
fn default_distance_fraction() -> f64 {
    0.003
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel {
            pixel_sigma: default_pixel_sigma(),
            distance_fraction: default_distance_fraction(),
            seed: 0,
        }
    }
}

impl NoiseModel {
    pub fn apply<R: Rng + ?Sized>(&self, d: &DecodedDetection, rng: &mut R) -> DecodedDetection {
        let px = Normal::new(0.0, self.pixel_sigma).expect("finite sigma");
        let unit = Normal::new(0.0, 1.0).expect("unit normal");
        let mut out = *d;
        out.origin_px = [d.origin_px[0] + px.sample(rng), d.origin_px[1] + px.sample(rng)];
        out.distance = d.distance * (1.0 + self.distance_fraction * unit.sample(rng));
        out
    }
}

/// Perfect per-camera messages for annotation records, one per
/// `(source, frame, camera)`, in record order.
pub fn messages_from_annotations(annotations: &[ObjectAnnotation]) -> Vec<DetectionMessage> {
    let mut index: HashMap<(&str, u64, &str), usize> = HashMap::new();
    let mut out: Vec<DetectionMessage> = Vec::new();
    for a in annotations {
        let key = (a.source.as_str(), a.frame_id, a.camera_id.as_str());
        let i = *index.entry(key).or_insert_with(|| {
            out.push(DetectionMessage {
                camera_id: a.camera_id.clone(),
                timestamp: a.timestamp,
                detections: Vec::new(),
            });
            out.len() - 1
        });
        let pose = a.object_pose_camera();
        let d = DecodedDetection::from_pose(&a.intrinsics, &pose, a.class_id)
            .expect("annotated objects are in front of the camera");
        out[i].detections.push(d);
    }
    out
}

/// Rigs recorded in annotation records (first occurrence per camera id).
pub fn rigs_from_annotations(annotations: &[ObjectAnnotation]) -> Vec<CameraRig> {
    let mut seen = BTreeMap::new();
    for a in annotations {
        seen.entry(a.camera_id.clone()).or_insert_with(|| CameraRig {
            camera_id: a.camera_id.clone(),
            intrinsics: a.intrinsics,
            extrinsic_pose: a.camera_pose,
        });
    }
    seen.into_values().collect()
}

/// Fused-position errors of a sequence replay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// One entry per fused position: distance to the nearest ground-truth
    /// object of that frame, meters.
    pub errors: Vec<f64>,
    pub ticks: usize,
    /// Fused positions whose chosen camera was the one nearest to the
    /// matched ground-truth object.
    pub nearest_camera_hits: usize,
}

/// Nearest-rank percentile of `values` (`p` in 0..=100).
pub fn percentile(values: &[f64], p: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * v.len() as f64).ceil().max(1.0) as usize;
    Some(v[rank.min(v.len()) - 1])
}

impl EvalReport {
    pub fn to_csv(&self, percentiles: &[f64]) -> String {
        let mut s = String::from("percentile,error_m\n");
        for &p in percentiles {
            if let Some(e) = percentile(&self.errors, p) {
                s.push_str(&format!("{p},{e}\n"));
            }
        }
        s
    }
}

/// Replay one sequence source of an annotation set through a tracker,
/// optionally with detection noise, and measure fused errors against the
/// ground truth of the frame each tick falls on.
pub fn evaluate_sequence(
    annotations: &[ObjectAnnotation],
    rate: f64,
    config: TrackerConfig,
    noise: Option<(&NoiseModel, &mut dyn rand::RngCore)>,
) -> Result<EvalReport, FusionError> {
    let registry = RigRegistry::new(rigs_from_annotations(annotations))?;
    let mut messages = messages_from_annotations(annotations);
    if let Some((model, rng)) = noise {
        for m in &mut messages {
            for d in &mut m.detections {
                *d = model.apply(d, rng);
            }
        }
    }
    // ground truth per frame: object id -> (world position, nearest camera)
    let mut truth: BTreeMap<u64, BTreeMap<u32, Vec3>> = BTreeMap::new();
    for a in annotations {
        truth.entry(a.frame_id).or_default().insert(a.object_id, a.cuboid_world.base_center);
    }
    let duration = annotations
        .iter()
        .map(|a| a.frame_id)
        .max()
        .map_or(0.0, |f| (f + 1) as f64 / rate);
    let mut tracker = Tracker::new(registry.clone(), config)?;
    let ticks = run_virtual(&mut tracker, &messages, duration);
    let mut errors = Vec::new();
    let mut hits = 0;
    for t in &ticks {
        let frame = (t.timestamp * rate + 1e-6).floor() as u64;
        let Some(objects) = truth.get(&frame) else { continue };
        for p in &t.positions {
            let (err, gt) = objects
                .values()
                .map(|g| ((p.world_position - g).norm(), *g))
                .min_by(|a, b| a.0.total_cmp(&b.0))
                .expect("frames with annotations have objects");
            errors.push(err);
            let nearest = registry
                .iter()
                .min_by(|a, b| {
                    (a.position() - gt)
                        .norm()
                        .total_cmp(&(b.position() - gt).norm())
                        .then_with(|| a.camera_id.cmp(&b.camera_id))
                })
                .map(|r| r.camera_id.clone());
            if nearest.as_deref() == Some(p.chosen_camera.as_str()) {
                hits += 1;
            }
        }
    }
    Ok(EvalReport {
        errors,
        ticks: ticks.len(),
        nearest_camera_hits: hits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{CameraIntrinsics, Pose};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    fn k() -> CameraIntrinsics {
        CameraIntrinsics::new(FRAC_PI_2, 1472, 832).unwrap()
    }

    /// Level camera at the origin looking north.
    fn north_rig(id: &str, at: Vec3) -> CameraRig {
        CameraRig {
            camera_id: id.into(),
            intrinsics: k(),
            extrinsic_pose: Pose::look_at(&at, &(at + Vec3::new(0.0, 1.0, 0.0))).unwrap(),
        }
    }

    fn wd(id: &str, p: Vec3, dist: f64) -> WorldDetection {
        WorldDetection {
            world_position: p,
            world_orientation: EulerAngles::ZERO,
            source_camera: id.into(),
            camera_distance: dist,
            timestamp: 0.0,
        }
    }

    fn det(px: [f64; 2], distance: f64) -> DecodedDetection {
        DecodedDetection {
            origin_px: px,
            distance,
            orientation: EulerAngles::ZERO,
            objectness: 1.0,
            class_id: 0,
            confidence: 1.0,
            prior_id: 0,
        }
    }

    #[test]
    fn on_axis_detection_lands_ahead() {
        let rig = north_rig("a", Vec3::zeros());
        let (cx, cy) = k().principal_point();
        let w = to_world(&det([cx, cy], 5.0), &rig, 0.0).unwrap();
        assert!((w.world_position - Vec3::new(0.0, 5.0, 0.0)).norm() < 1e-12);
        assert!((w.camera_distance - 5.0).abs() < 1e-12);
        let identity = CameraRig {
            extrinsic_pose: Pose::identity(),
            ..rig.clone()
        };
        let w = to_world(&det([cx, cy], 5.0), &identity, 0.0).unwrap();
        assert!((w.world_position - Vec3::new(0.0, 0.0, 5.0)).norm() < 1e-12);
        assert!(matches!(to_world(&det([cx, cy], 0.0), &rig, 0.0), Err(FusionError::NonPositiveDistance(_))));
    }

    #[test]
    fn two_cameras_agree_on_exact_detections() {
        let object = Pose::new(EulerAngles::new(0.3, 0.0, 0.0), Vec3::new(2.0, 10.0, 0.0));
        let a = north_rig("a", Vec3::new(0.0, 0.0, 3.0));
        let b = CameraRig {
            camera_id: "b".into(),
            intrinsics: k(),
            extrinsic_pose: Pose::look_at(&Vec3::new(15.0, 20.0, 5.0), &object.translation).unwrap(),
        };
        let lift = |rig: &CameraRig| {
            let p = rig.to_camera(&object);
            let d = DecodedDetection::from_pose(&rig.intrinsics, &p, 0).unwrap();
            to_world(&d, rig, 0.0).unwrap()
        };
        let (wa, wb) = (lift(&a), lift(&b));
        assert!((wa.world_position - wb.world_position).norm() < 1e-6);
        assert!((wa.world_position - object.translation).norm() < 1e-6);
        let ra = wa.world_orientation.to_matrix();
        let rb = wb.world_orientation.to_matrix();
        assert!(crate::geometry::geodesic_distance(&ra, &rb) < 1e-9);
    }

    #[test]
    fn association_examples() {
        let near = [wd("a", Vec3::zeros(), 5.0), wd("b", Vec3::new(0.1, 0.0, 0.0), 6.0)];
        assert_eq!(associate(&near, 1.0), vec![vec![0, 1]]);
        let far = [wd("a", Vec3::zeros(), 5.0), wd("b", Vec3::new(5.0, 0.0, 0.0), 6.0)];
        assert_eq!(associate(&far, 1.0), vec![vec![0], vec![1]]);
        // chained through a middle point
        let chain = [
            wd("a", Vec3::zeros(), 1.0),
            wd("b", Vec3::new(1.6, 0.0, 0.0), 1.0),
            wd("c", Vec3::new(0.8, 0.0, 0.0), 1.0),
        ];
        assert_eq!(associate(&chain, 1.0), vec![vec![0, 1, 2]]);
    }

    #[test]
    fn fuse_picks_nearest_camera() {
        let g = [
            wd("a", Vec3::new(1.0, 0.0, 0.0), 12.0),
            wd("b", Vec3::new(2.0, 0.0, 0.0), 7.5),
            wd("c", Vec3::new(3.0, 0.0, 0.0), 30.1),
        ];
        let f = fuse(&g).unwrap();
        assert_eq!(f.chosen_camera, "b");
        assert_eq!(f.world_position, Vec3::new(2.0, 0.0, 0.0));
        assert_eq!(f.contributing_cameras.len(), 3);
        let tie = [wd("z", Vec3::zeros(), 5.0), wd("m", Vec3::zeros(), 5.0)];
        assert_eq!(fuse(&tie).unwrap().chosen_camera, "m");
        assert_eq!(fuse(&[]), Err(FusionError::EmptyGroup));
        assert_eq!(fuse(&g[..1]).unwrap().chosen_camera, "a");
    }

    #[test]
    fn nearest_camera_beats_farther_ones_under_noise() {
        // the same object seen from 7.5 m, 12.0 m and 30.1 m
        let noise = NoiseModel::default();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let object = Pose::new(EulerAngles::ZERO, Vec3::new(0.0, 0.0, 0.0));
        let rigs = [
            north_rig("near", Vec3::new(0.0, -7.5, 0.0)),
            north_rig("mid", Vec3::new(0.0, -12.0, 0.0)),
            north_rig("far", Vec3::new(0.0, -30.1, 0.0)),
        ];
        let (mut beats_all, mut beats_far) = (0, 0);
        for _ in 0..1000 {
            let e: Vec<f64> = rigs
                .iter()
                .map(|rig| {
                    let d = DecodedDetection::from_pose(&rig.intrinsics, &rig.to_camera(&object), 0).unwrap();
                    let w = to_world(&noise.apply(&d, &mut rng), rig, 0.0).unwrap();
                    (w.world_position - object.translation).norm()
                })
                .collect();
            beats_far += (e[0] <= e[2]) as u32;
            beats_all += (e[0] <= e[1] && e[0] <= e[2]) as u32;
        }
        assert!(beats_far >= 950, "{beats_far}");
        // a 1.6x range ratio is too close for 95 %
        assert!(beats_all >= 600, "{beats_all}");
    }

    #[test]
    fn tracker_basics() {
        let reg = RigRegistry::new([north_rig("a", Vec3::zeros())]).unwrap();
        let mut t = Tracker::new(reg.clone(), TrackerConfig::default()).unwrap();
        assert!(t.tick(0.0).positions.is_empty());
        let msg = |ts: f64, x: f64| DetectionMessage {
            camera_id: "a".into(),
            timestamp: ts,
            detections: vec![det([736.0 + x, 416.0], 10.0)],
        };
        assert!(matches!(
            t.ingest(DetectionMessage { camera_id: "zz".into(), ..msg(0.0, 0.0) }),
            Err(FusionError::UnknownCamera(_))
        ));
        assert_eq!(t.dropped(), 1);
        t.ingest(msg(0.0, 0.0)).unwrap();
        let first = t.tick(0.0);
        assert_eq!(first.positions.len(), 1);
        t.ingest(msg(1.0 / 24.0, 2.0)).unwrap();
        let second = t.tick(1.0 / 24.0);
        assert_eq!(second.positions[0].track_id, first.positions[0].track_id);
        // stale after two ticks
        assert!(t.tick(4.0 / 24.0).positions.is_empty());
        assert!(Tracker::new(reg, TrackerConfig { rate: 0.0, ..TrackerConfig::default() }).is_err());
    }

    #[test]
    fn registry_rejects_duplicates() {
        let a = north_rig("a", Vec3::zeros());
        assert!(matches!(RigRegistry::new([a.clone(), a]), Err(FusionError::DuplicateCamera(_))));
        let json = serde_json::to_string(&vec![north_rig("x", Vec3::zeros())]).unwrap();
        assert_eq!(RigRegistry::from_json(&json).unwrap().len(), 1);
    }

    #[test]
    fn percentile_nearest_rank() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(percentile(&v, 99.0), Some(99.0));
        assert_eq!(percentile(&v, 100.0), Some(100.0));
        assert_eq!(percentile(&v, 0.0), Some(1.0));
        assert_eq!(percentile(&[], 50.0), None);
        assert_eq!(tick_count(10.0, 24.0), 240);
    }
}
