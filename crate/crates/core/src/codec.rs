//! Prediction-tensor codec.
//!
//! Each head owns a grid of cells; every cell carries one slot per anchor
//! (six per head) and every slot holds `7 + num_classes` raw logits:
//!
//! | channel | meaning |
//! |---|---|
//! | 0, 1 | `t_x`, `t_y`: origin offset inside the cell |
//! | 2 | `t_r`: distance inside the prior's radial interval |
//! | 3, 4, 5 | `t_yaw`, `t_pitch`, `t_roll`: orientation offset from the anchor |
//! | 6 | `t_obj`: objectness |
//! | 7.. | class logits |
//!
//! The flat tensor is row-major over `(head, row, col, anchor, channel)`
//! with the heads concatenated in order 1, 2, 3.
//!
//! Orientations are carried relative to the viewing frame of the ray
//! through the object's origin (see [`crate::geometry::viewing_frame`]), so
//! an anchor describes how the object looks, independent of where it
//! appears in the image. [`DecodedDetection::orientation`] is converted back
//! to the camera frame.

use std::f64::consts::FRAC_PI_8;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    backproject, pixel_ray, project, rotation_to_euler, spherical_params, view_orientation,
    viewing_frame, CameraIntrinsics, CuboidSpec, EulerAngles, GeometryError, Pose,
    RotationMatrix, Vec3,
};
use crate::priors::{Prior, PriorError, PriorTable, HEAD_COUNT, PRIORS_PER_HEAD};
use crate::syngen::ObjectAnnotation;

/// Channels before the class logits.
pub const BASE_CHANNELS: usize = 7;
pub const CH_X: usize = 0;
pub const CH_Y: usize = 1;
pub const CH_R: usize = 2;
pub const CH_YAW: usize = 3;
pub const CH_PITCH: usize = 4;
pub const CH_ROLL: usize = 5;
pub const CH_OBJ: usize = 6;

/// Logit used for "certainly yes/no" targets.
pub const SATURATED_LOGIT: f64 = 50.0;

/// Allowed relative difference between the configured and an incoming
/// image aspect ratio.
pub const ASPECT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CodecError {
    #[error("sigmoid range [{lo}, {hi}] is empty or inverted")]
    RangeInverted { lo: f64, hi: f64 },
    #[error("{value} is outside the open interval ({lo}, {hi})")]
    InverseOutOfRange { value: f64, lo: f64, hi: f64 },
    #[error("prior {prior_id} does not belong to head {head}")]
    PriorHeadMismatch { prior_id: u8, head: u8 },
    #[error("origin ({}, {}) is outside the image", .0[0], .0[1])]
    OriginOffScreen([f64; 2]),
    #[error("orientation offset {offset:?} exceeds the range of prior {prior_id}")]
    OrientationOutOfRange { prior_id: u8, offset: EulerAngles },
    #[error("distance {distance} cannot be encoded by prior {prior_id}")]
    DistanceOutOfRange { prior_id: u8, distance: f64 },
    #[error("image aspect ratio {found} differs from the configured {expected}")]
    AspectMismatch { expected: f64, found: f64 },
    #[error("image size {width}x{height} is not a multiple of stride {stride}")]
    InvalidResolution { width: u32, height: u32, stride: u32 },
    #[error("tensor shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("hull point at depth {0} is not in front of the camera")]
    HullBehindCamera(f64),
    #[error("invalid codec configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Prior(#[from] PriorError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Logistic function, stable for large |t|.
pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Sigmoid rescaled to `(lo, hi)`.
pub fn sigma0(t: f64, lo: f64, hi: f64) -> Result<f64, CodecError> {
    if !(lo < hi) {
        return Err(CodecError::RangeInverted { lo, hi });
    }
    Ok(lo + (hi - lo) * sigmoid(t))
}

pub fn sigma0_inv(value: f64, lo: f64, hi: f64) -> Result<f64, CodecError> {
    if !(lo < hi) {
        return Err(CodecError::RangeInverted { lo, hi });
    }
    if !(value > lo && value < hi) {
        return Err(CodecError::InverseOutOfRange { value, lo, hi });
    }
    let t = logit((value - lo) / (hi - lo));
    if t.is_finite() {
        Ok(t)
    } else {
        Err(CodecError::InverseOutOfRange { value, lo, hi })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    pub head: u8,
    pub cols: u32,
    pub rows: u32,
    /// Image pixels per cell side.
    pub stride: u32,
}

impl GridSpec {
    pub fn for_image(head: u8, stride: u32, width: u32, height: u32) -> Result<Self, CodecError> {
        if stride == 0 || !width.is_multiple_of(stride) || !height.is_multiple_of(stride) {
            return Err(CodecError::InvalidResolution { width, height, stride });
        }
        Ok(GridSpec {
            head,
            cols: width / stride,
            rows: height / stride,
            stride,
        })
    }

    pub fn cells(&self) -> usize {
        (self.cols * self.rows) as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodecConfig {
    #[serde(default = "default_strides")]
    pub strides: [u32; 3],
    #[serde(default = "default_classes")]
    pub num_classes: usize,
    /// Width, in cells, of the interval the origin offset can reach. The
    /// interval is centered on the cell.
    #[serde(default = "default_spread")]
    pub spread: f64,
    /// Half-range of the yaw offset. `None` uses each region's yaw half-width.
    #[serde(default)]
    pub yaw_range: Option<f64>,
    #[serde(default = "default_tilt_range")]
    pub pitch_range: f64,
    #[serde(default = "default_tilt_range")]
    pub roll_range: f64,
}

fn default_strides() -> [u32; 3] {
    [32, 16, 8]
}
fn default_classes() -> usize {
    1
}
fn default_spread() -> f64 {
    2.0
}
fn default_tilt_range() -> f64 {
    FRAC_PI_8
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self {
            strides: default_strides(),
            num_classes: default_classes(),
            spread: default_spread(),
            yaw_range: None,
            pitch_range: default_tilt_range(),
            roll_range: default_tilt_range(),
        }
    }
}

/// Position of one slot in the tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Slot {
    pub head: u8,
    pub row: u32,
    pub col: u32,
    /// Anchor index within the head, 0..6.
    pub anchor: usize,
}

impl Slot {
    pub fn prior_id(&self) -> u8 {
        crate::priors::prior_id(self.head, self.anchor)
    }
}

/// Shape of the raw prediction tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorLayout {
    pub grids: [GridSpec; 3],
    pub channels: usize,
}

impl TensorLayout {
    pub fn head_slots(&self, head: u8) -> usize {
        self.grids[head as usize - 1].cells() * PRIORS_PER_HEAD
    }

    pub fn slot_count(&self) -> usize {
        (1..=HEAD_COUNT).map(|h| self.head_slots(h)).sum()
    }

    pub fn len(&self) -> usize {
        self.slot_count() * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat slot number of `slot`; multiply by `channels` for the offset.
    pub fn slot_index(&self, slot: &Slot) -> usize {
        let g = &self.grids[slot.head as usize - 1];
        let base: usize = (1..slot.head).map(|h| self.head_slots(h)).sum();
        base + ((slot.row * g.cols + slot.col) as usize) * PRIORS_PER_HEAD + slot.anchor
    }

    pub fn slot_at(&self, mut index: usize) -> Slot {
        for head in 1..=HEAD_COUNT {
            let n = self.head_slots(head);
            if index < n {
                let g = &self.grids[head as usize - 1];
                let anchor = index % PRIORS_PER_HEAD;
                let cell = (index / PRIORS_PER_HEAD) as u32;
                return Slot {
                    head,
                    row: cell / g.cols,
                    col: cell % g.cols,
                    anchor,
                };
            }
            index -= n;
        }
        panic!("slot index out of range");
    }

    pub fn offset(&self, slot: &Slot, channel: usize) -> usize {
        self.slot_index(slot) * self.channels + channel
    }

    pub fn slots(&self) -> impl Iterator<Item = Slot> + '_ {
        (0..self.slot_count()).map(|i| self.slot_at(i))
    }
}

/// Raw outputs of all heads.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionTensor {
    pub layout: TensorLayout,
    pub data: Vec<f64>,
}

impl PredictionTensor {
    pub fn zeros(layout: TensorLayout) -> Self {
        Self::filled(layout, 0.0)
    }

    pub fn filled(layout: TensorLayout, value: f64) -> Self {
        PredictionTensor {
            layout,
            data: vec![value; layout.len()],
        }
    }

    pub fn from_vec(layout: TensorLayout, data: Vec<f64>) -> Result<Self, CodecError> {
        if data.len() != layout.len() {
            return Err(CodecError::ShapeMismatch(format!(
                "expected {} values, got {}",
                layout.len(),
                data.len()
            )));
        }
        Ok(PredictionTensor { layout, data })
    }

    pub fn slot_values(&self, slot: &Slot) -> &[f64] {
        let o = self.layout.offset(slot, 0);
        &self.data[o..o + self.layout.channels]
    }

    pub fn slot_values_mut(&mut self, slot: &Slot) -> &mut [f64] {
        let o = self.layout.offset(slot, 0);
        let c = self.layout.channels;
        &mut self.data[o..o + c]
    }

    pub fn cell_prediction(&self, slot: &Slot) -> CellPrediction {
        CellPrediction::from_channels(slot, self.slot_values(slot))
    }

    pub fn set_cell_prediction(&mut self, p: &CellPrediction) -> Result<(), CodecError> {
        let slot = p.slot()?;
        let vals = p.to_channels();
        if vals.len() != self.layout.channels {
            return Err(CodecError::ShapeMismatch(format!(
                "prediction has {} channels, tensor {}",
                vals.len(),
                self.layout.channels
            )));
        }
        self.slot_values_mut(&slot).copy_from_slice(&vals);
        Ok(())
    }
}

/// Raw logits of one grid cell and anchor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellPrediction {
    /// `(column, row)` of the cell.
    pub cell: (u32, u32),
    pub prior_id: u8,
    pub t_x: f64,
    pub t_y: f64,
    pub t_r: f64,
    pub t_yaw: f64,
    pub t_pitch: f64,
    pub t_roll: f64,
    pub t_obj: f64,
    pub t_class: Vec<f64>,
}

impl CellPrediction {
    pub fn zeros(cell: (u32, u32), prior_id: u8, num_classes: usize) -> Self {
        CellPrediction {
            cell,
            prior_id,
            t_x: 0.0,
            t_y: 0.0,
            t_r: 0.0,
            t_yaw: 0.0,
            t_pitch: 0.0,
            t_roll: 0.0,
            t_obj: 0.0,
            t_class: vec![0.0; num_classes],
        }
    }

    pub fn slot(&self) -> Result<Slot, CodecError> {
        let head = crate::priors::head_of(self.prior_id)?;
        Ok(Slot {
            head,
            row: self.cell.1,
            col: self.cell.0,
            anchor: (self.prior_id as usize - 1) % PRIORS_PER_HEAD,
        })
    }

    pub fn from_channels(slot: &Slot, v: &[f64]) -> Self {
        CellPrediction {
            cell: (slot.col, slot.row),
            prior_id: slot.prior_id(),
            t_x: v[CH_X],
            t_y: v[CH_Y],
            t_r: v[CH_R],
            t_yaw: v[CH_YAW],
            t_pitch: v[CH_PITCH],
            t_roll: v[CH_ROLL],
            t_obj: v[CH_OBJ],
            t_class: v[BASE_CHANNELS..].to_vec(),
        }
    }

    pub fn to_channels(&self) -> Vec<f64> {
        let mut v = vec![
            self.t_x, self.t_y, self.t_r, self.t_yaw, self.t_pitch, self.t_roll, self.t_obj,
        ];
        v.extend_from_slice(&self.t_class);
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodedDetection {
    /// Image position of the object's origin, pixels.
    pub origin_px: [f64; 2],
    /// Distance from the camera focus to the origin, meters.
    pub distance: f64,
    /// Object orientation in the camera frame.
    pub orientation: EulerAngles,
    pub objectness: f64,
    pub class_id: u32,
    /// `objectness × class probability`.
    pub confidence: f64,
    /// Prior that produced the detection; 0 when not decoded from a tensor.
    #[serde(default)]
    pub prior_id: u8,
}

impl DecodedDetection {
    /// The detection a perfect network would produce for an object at
    /// `pose` (object frame in camera frame).
    pub fn from_pose(k: &CameraIntrinsics, pose: &Pose, class_id: u32) -> Result<Self, GeometryError> {
        Ok(DecodedDetection {
            origin_px: project(k, &pose.translation)?,
            distance: pose.translation.norm(),
            orientation: pose.rotation,
            objectness: 1.0,
            class_id,
            confidence: 1.0,
            prior_id: 0,
        })
    }

    /// Object pose in the camera frame.
    pub fn pose(&self, k: &CameraIntrinsics) -> Result<Pose, GeometryError> {
        Ok(Pose::new(self.orientation, backproject(k, self.origin_px, self.distance)?))
    }
}

/// What the network should see for one object: where its origin lands,
/// how far it is and how it looks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruth {
    pub origin_px: [f64; 2],
    pub distance: f64,
    /// Orientation in the viewing frame of the origin's ray.
    pub view_orientation: RotationMatrix,
    pub class_id: u32,
}

impl GroundTruth {
    pub fn from_pose(k: &CameraIntrinsics, pose: &Pose, class_id: u32) -> Result<Self, CodecError> {
        Ok(GroundTruth {
            origin_px: project(k, &pose.translation)?,
            distance: pose.translation.norm(),
            view_orientation: view_orientation(pose),
            class_id,
        })
    }

    /// Ground truth of an annotation, with its screen origin rescaled to an
    /// image of size `k`. Refuses images of a different aspect ratio.
    pub fn from_annotation(a: &ObjectAnnotation, k: &CameraIntrinsics) -> Result<Self, CodecError> {
        check_aspect(k, &a.intrinsics)?;
        let scale = k.width as f64 / a.intrinsics.width as f64;
        let pose = a.object_pose_camera();
        let o = a.screen_points.origin;
        Ok(GroundTruth {
            origin_px: [o[0] * scale, o[1] * scale],
            distance: pose.translation.norm(),
            view_orientation: view_orientation(&pose),
            class_id: a.class_id,
        })
    }
}

pub fn check_aspect(expected: &CameraIntrinsics, found: &CameraIntrinsics) -> Result<(), CodecError> {
    let (e, f) = (expected.aspect_ratio(), found.aspect_ratio());
    if ((e - f) / e).abs() > ASPECT_TOLERANCE {
        return Err(CodecError::AspectMismatch { expected: e, found: f });
    }
    Ok(())
}

/// Encoded ground truth: its slot and the exact logits that decode to it.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedTarget {
    pub slot: Slot,
    /// Objectness and class logits saturated at ±[`SATURATED_LOGIT`].
    pub values: CellPrediction,
    /// Distance of the ground truth, kept to resolve slot collisions.
    pub distance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bbox2D {
    pub min_u: f64,
    pub min_v: f64,
    pub max_u: f64,
    pub max_v: f64,
}

impl Bbox2D {
    pub fn new(min_u: f64, min_v: f64, max_u: f64, max_v: f64) -> Self {
        Bbox2D { min_u, min_v, max_u, max_v }
    }

    pub fn enclosing(points: impl IntoIterator<Item = [f64; 2]>) -> Option<Self> {
        let mut it = points.into_iter();
        let p = it.next()?;
        let mut b = Bbox2D::new(p[0], p[1], p[0], p[1]);
        for p in it {
            b.min_u = b.min_u.min(p[0]);
            b.min_v = b.min_v.min(p[1]);
            b.max_u = b.max_u.max(p[0]);
            b.max_v = b.max_v.max(p[1]);
        }
        Some(b)
    }

    pub fn width(&self) -> f64 {
        self.max_u - self.min_u
    }

    pub fn height(&self) -> f64 {
        self.max_v - self.min_v
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn contains(&self, p: [f64; 2], tolerance: f64) -> bool {
        p[0] >= self.min_u - tolerance
            && p[0] <= self.max_u + tolerance
            && p[1] >= self.min_v - tolerance
            && p[1] <= self.max_v + tolerance
    }
}

pub fn iou(a: &Bbox2D, b: &Bbox2D) -> f64 {
    let iw = (a.max_u.min(b.max_u) - a.min_u.max(b.min_u)).max(0.0);
    let ih = (a.max_v.min(b.max_v) - a.min_v.max(b.min_v)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// Axis-aligned image box of a hull (points in the object frame) placed by
/// a decoded detection.
pub fn reproject_bbox(
    d: &DecodedDetection,
    hull: &[Vec3],
    k: &CameraIntrinsics,
) -> Result<Bbox2D, CodecError> {
    let pose = d.pose(k)?;
    let r = pose.rotation_matrix();
    let mut pts = Vec::with_capacity(hull.len());
    for p in hull {
        let c = r * p + pose.translation;
        if c.z <= 0.0 {
            return Err(CodecError::HullBehindCamera(c.z));
        }
        pts.push(project(k, &c)?);
    }
    Bbox2D::enclosing(pts).ok_or_else(|| CodecError::InvalidConfig("empty hull".into()))
}

/// Iteration-1 style box size: `b = p · e^t` per axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LegacyBoxParams {
    pub t_w: f64,
    pub t_h: f64,
    pub p_w: f64,
    pub p_h: f64,
}

pub fn decode_legacy_box(l: &LegacyBoxParams) -> (f64, f64) {
    (l.p_w * l.t_w.exp(), l.p_h * l.t_h.exp())
}

/// Logits `(t_w, t_h)` that decode to a `width × height` box.
pub fn encode_legacy_box(width: f64, height: f64, p_w: f64, p_h: f64) -> (f64, f64) {
    ((width / p_w).ln(), (height / p_h).ln())
}

/// Keep the highest-confidence detections, dropping any whose box overlaps
/// an already kept one by more than `iou_threshold`.
pub fn non_max_suppression(
    detections: &[(DecodedDetection, Bbox2D)],
    iou_threshold: f64,
) -> Vec<(DecodedDetection, Bbox2D)> {
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| {
        detections[b]
            .0
            .confidence
            .total_cmp(&detections[a].0.confidence)
            .then(a.cmp(&b))
    });
    let mut kept: Vec<(DecodedDetection, Bbox2D)> = Vec::new();
    for i in order {
        let (d, b) = detections[i];
        if kept.iter().all(|(_, k)| iou(k, &b) <= iou_threshold) {
            kept.push((d, b));
        }
    }
    kept
}

/// Encoder/decoder bound to one camera model, cuboid and prior table.
#[derive(Debug, Clone)]
pub struct Codec {
    pub config: CodecConfig,
    pub intrinsics: CameraIntrinsics,
    pub priors: PriorTable,
    pub cuboid: CuboidSpec,
    layout: TensorLayout,
    hull: Vec<Vec3>,
}

impl Codec {
    pub fn new(
        config: CodecConfig,
        intrinsics: CameraIntrinsics,
        priors: PriorTable,
        cuboid: CuboidSpec,
    ) -> Result<Self, CodecError> {
        intrinsics.validate()?;
        cuboid.validate()?;
        priors.validate()?;
        if !(config.spread >= 1.0 && config.spread.is_finite()) {
            return Err(CodecError::InvalidConfig(format!("spread {} < 1", config.spread)));
        }
        for (name, r) in [
            ("pitch_range", Some(config.pitch_range)),
            ("roll_range", Some(config.roll_range)),
            ("yaw_range", config.yaw_range),
        ] {
            if let Some(r) = r {
                if !(r > 0.0 && r < std::f64::consts::PI) {
                    return Err(CodecError::InvalidConfig(format!("{name} {r} outside (0, π)")));
                }
            }
        }
        let mut grids = [GridSpec { head: 0, cols: 0, rows: 0, stride: 0 }; 3];
        for (i, g) in grids.iter_mut().enumerate() {
            *g = GridSpec::for_image(i as u8 + 1, config.strides[i], intrinsics.width, intrinsics.height)?;
        }
        let layout = TensorLayout {
            grids,
            channels: BASE_CHANNELS + config.num_classes,
        };
        let hull = cuboid.local_corners().to_vec();
        Ok(Codec { config, intrinsics, priors, cuboid, layout, hull })
    }

    /// Codec with the default configuration and prior table.
    pub fn with_defaults(intrinsics: CameraIntrinsics, cuboid: CuboidSpec) -> Result<Self, CodecError> {
        Codec::new(
            CodecConfig::default(),
            intrinsics,
            crate::priors::default_region_table(),
            cuboid,
        )
    }

    pub fn layout(&self) -> TensorLayout {
        self.layout
    }

    pub fn grid(&self, head: u8) -> &GridSpec {
        &self.layout.grids[head as usize - 1]
    }

    /// The cuboid's corners in the object frame.
    pub fn hull(&self) -> &[Vec3] {
        &self.hull
    }

    pub fn zero_tensor(&self) -> PredictionTensor {
        PredictionTensor::zeros(self.layout)
    }

    /// Euler half-ranges of the orientation offset for a prior.
    pub fn offset_ranges(&self, prior: &Prior) -> EulerAngles {
        EulerAngles {
            yaw: self.config.yaw_range.unwrap_or(prior.bounds.theta_halfwidth),
            pitch: self.config.pitch_range,
            roll: self.config.roll_range,
        }
    }

    fn origin_axis(&self, t: f64, index: u32, stride: u32) -> f64 {
        let s = self.config.spread;
        (index as f64 + sigmoid(t) * s - 0.5 * (s - 1.0)) * stride as f64
    }

    /// Viewing-frame orientation decoded from the angle logits of `prior`.
    pub fn decode_view_orientation(&self, prior: &Prior, t: [f64; 3]) -> Result<RotationMatrix, CodecError> {
        let range = self.offset_ranges(prior);
        let offset = EulerAngles {
            yaw: sigma0(t[0], -range.yaw, range.yaw)?,
            pitch: sigma0(t[1], -range.pitch, range.pitch)?,
            roll: sigma0(t[2], -range.roll, range.roll)?,
        };
        Ok(offset.to_matrix() * prior.anchor_matrix())
    }

    pub fn decode_cell(&self, p: &CellPrediction, head: u8) -> Result<DecodedDetection, CodecError> {
        let slot = p.slot()?;
        if slot.head != head {
            return Err(CodecError::PriorHeadMismatch { prior_id: p.prior_id, head });
        }
        let grid = self.grid(head);
        if p.cell.0 >= grid.cols || p.cell.1 >= grid.rows {
            return Err(CodecError::ShapeMismatch(format!(
                "cell {:?} outside the {}x{} grid of head {head}",
                p.cell, grid.cols, grid.rows
            )));
        }
        if p.t_class.len() != self.config.num_classes {
            return Err(CodecError::ShapeMismatch(format!(
                "{} class logits, expected {}",
                p.t_class.len(),
                self.config.num_classes
            )));
        }
        let prior = self.priors.get(p.prior_id)?;
        let origin_px = [
            self.origin_axis(p.t_x, p.cell.0, grid.stride),
            self.origin_axis(p.t_y, p.cell.1, grid.stride),
        ];
        let distance = sigma0(p.t_r, prior.bounds.r_min, prior.bounds.r_max)?;
        let view = self.decode_view_orientation(prior, [p.t_yaw, p.t_pitch, p.t_roll])?;
        let ray = pixel_ray(&self.intrinsics, origin_px);
        let orientation = rotation_to_euler(&(viewing_frame(&ray) * view));
        let objectness = sigmoid(p.t_obj);
        let (class_id, class_p) = p
            .t_class
            .iter()
            .enumerate()
            .map(|(i, &t)| (i as u32, sigmoid(t)))
            .fold((0, f64::NEG_INFINITY), |best, c| if c.1 > best.1 { c } else { best });
        let class_p = if class_p.is_finite() { class_p } else { 1.0 };
        Ok(DecodedDetection {
            origin_px,
            distance,
            orientation,
            objectness,
            class_id,
            confidence: objectness * class_p,
            prior_id: p.prior_id,
        })
    }

    pub fn decode_slot(&self, tensor: &PredictionTensor, slot: &Slot) -> Result<DecodedDetection, CodecError> {
        self.decode_cell(&tensor.cell_prediction(slot), slot.head)
    }

    pub fn encode(&self, gt: &GroundTruth) -> Result<EncodedTarget, CodecError> {
        let [u, v] = gt.origin_px;
        let (w, h) = (self.intrinsics.width as f64, self.intrinsics.height as f64);
        if !(u >= 0.0 && u < w && v >= 0.0 && v < h) {
            return Err(CodecError::OriginOffScreen(gt.origin_px));
        }
        // The view frame is a valid object-to-camera frame with the origin on its Y axis.
        let spherical =
            spherical_params(&Pose::from_rotation(&gt.view_orientation, Vec3::new(0.0, gt.distance, 0.0)));
        let prior_id = self.priors.assign_region(&spherical)?;
        let prior = self.priors.get(prior_id)?;
        let grid = self.grid(prior.head());
        let stride = grid.stride as f64;
        let (col, row) = ((u / stride).floor() as u32, (v / stride).floor() as u32);
        let s = self.config.spread;
        let fx = (u / stride - col as f64 + 0.5 * (s - 1.0)) / s;
        let fy = (v / stride - row as f64 + 0.5 * (s - 1.0)) / s;
        let t_x = sigma0_inv(fx, 0.0, 1.0)?;
        let t_y = sigma0_inv(fy, 0.0, 1.0)?;
        let t_r = sigma0_inv(gt.distance, prior.bounds.r_min, prior.bounds.r_max).map_err(|_| {
            CodecError::DistanceOutOfRange { prior_id, distance: gt.distance }
        })?;
        let offset = rotation_to_euler(&(gt.view_orientation * prior.anchor_matrix().inverse()));
        let range = self.offset_ranges(prior);
        let out_of_range = || CodecError::OrientationOutOfRange { prior_id, offset };
        let t_yaw = sigma0_inv(offset.yaw, -range.yaw, range.yaw).map_err(|_| out_of_range())?;
        let t_pitch = sigma0_inv(offset.pitch, -range.pitch, range.pitch).map_err(|_| out_of_range())?;
        let t_roll = sigma0_inv(offset.roll, -range.roll, range.roll).map_err(|_| out_of_range())?;
        let class = gt.class_id as usize;
        if class >= self.config.num_classes {
            return Err(CodecError::ShapeMismatch(format!(
                "class {class} with {} classes configured",
                self.config.num_classes
            )));
        }
        let t_class = (0..self.config.num_classes)
            .map(|i| if i == class { SATURATED_LOGIT } else { -SATURATED_LOGIT })
            .collect();
        let slot = Slot {
            head: prior.head(),
            row,
            col,
            anchor: prior.anchor_index(),
        };
        Ok(EncodedTarget {
            slot,
            values: CellPrediction {
                cell: (col, row),
                prior_id,
                t_x,
                t_y,
                t_r,
                t_yaw,
                t_pitch,
                t_roll,
                t_obj: SATURATED_LOGIT,
                t_class,
            },
            distance: gt.distance,
        })
    }

    pub fn encode_annotation(&self, a: &ObjectAnnotation) -> Result<EncodedTarget, CodecError> {
        self.encode(&GroundTruth::from_annotation(a, &self.intrinsics)?)
    }

    /// Decode every slot whose objectness exceeds `threshold`, then apply
    /// IoU-based suppression over the reprojected cuboid boxes.
    pub fn detect(
        &self,
        tensor: &PredictionTensor,
        threshold: f64,
        nms_iou: f64,
    ) -> Result<Vec<DecodedDetection>, CodecError> {
        if tensor.layout != self.layout {
            return Err(CodecError::ShapeMismatch("tensor layout differs from codec".into()));
        }
        let mut found = Vec::new();
        for slot in self.layout.slots() {
            if sigmoid(tensor.slot_values(&slot)[CH_OBJ]) <= threshold {
                continue;
            }
            let d = self.decode_slot(tensor, &slot)?;
            if let Ok(b) = reproject_bbox(&d, &self.hull, &self.intrinsics) {
                found.push((d, b));
            }
        }
        Ok(non_max_suppression(&found, nms_iou)
            .into_iter()
            .map(|(d, _)| d)
            .collect())
    }

    pub fn bbox(&self, d: &DecodedDetection) -> Result<Bbox2D, CodecError> {
        reproject_bbox(d, &self.hull, &self.intrinsics)
    }
}
