//! Training loss over the raw prediction tensor.
//!
//! Positive slots are the ground truths' encoded slots. Every other slot is
//! a negative unless its decoded detection, reprojected to a 2D box,
//! overlaps a ground-truth box by more than the ignore threshold; with
//! `require_same_anchor` only ground truths of the slot's own prior count.
//!
//! Per positive slot the loss adds `softplus(-t_obj)`, the squared logit
//! error of the position, distance and orientation channels, and a binary
//! cross-entropy per class. Per counted negative it adds `softplus(t_obj)`.
//! The ignore mask is a constant for differentiation.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{
    iou, sigmoid, Bbox2D, Codec, CodecError, DecodedDetection, EncodedTarget, GroundTruth, PredictionTensor,
    Slot, BASE_CHANNELS, CH_OBJ, CH_PITCH, CH_R, CH_ROLL, CH_X, CH_Y, CH_YAW,
};
use crate::geometry::{pixel_ray, rotation_to_euler, viewing_frame};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error("invalid loss configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub objectness_positive: f64,
    pub objectness_negative: f64,
    pub position: f64,
    pub distance: f64,
    pub orientation: f64,
    pub class: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            objectness_positive: 1.0,
            objectness_negative: 1.0,
            position: 1.0,
            distance: 1.0,
            orientation: 1.0,
            class: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub iou_ignore_threshold: f64,
    pub weights: LossWeights,
    pub require_same_anchor: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            iou_ignore_threshold: 0.5,
            weights: LossWeights::default(),
            require_same_anchor: true,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), LossError> {
        if !(0.0..=1.0).contains(&self.iou_ignore_threshold) {
            return Err(LossError::InvalidConfig(format!(
                "iou_ignore_threshold {} outside [0, 1]",
                self.iou_ignore_threshold
            )));
        }
        let w = &self.weights;
        for v in [w.objectness_positive, w.objectness_negative, w.position, w.distance, w.orientation, w.class] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(LossError::InvalidConfig(format!("weight {v} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub objectness_positive: f64,
    pub objectness_negative: f64,
    pub position: f64,
    pub distance: f64,
    pub orientation: f64,
    pub class: f64,
    /// Weighted sum of the components.
    pub total: f64,
}

impl LossBreakdown {
    pub fn weighted_total(&self, w: &LossWeights) -> f64 {
        w.objectness_positive * self.objectness_positive
            + w.objectness_negative * self.objectness_negative
            + w.position * self.position
            + w.distance * self.distance
            + w.orientation * self.orientation
            + w.class * self.class
    }
}

/// `ln(1 + e^t)` without overflow.
pub fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}


/// Encoded ground truth of one image, with the boxes used for the ignore test.
#[derive(Debug, Clone)]
pub struct Scene {
    /// One target per occupied slot, sorted by slot.
    pub targets: Vec<EncodedTarget>,
    /// `(prior_id, box)` of every ground truth, including ones that lost a
    /// slot collision.
    pub boxes: Vec<(u8, Bbox2D)>,
}

impl Scene {
    /// Encode ground truths. When two fall into one slot the nearer one
    /// keeps it.
    pub fn new(codec: &Codec, gts: &[GroundTruth]) -> Result<Scene, LossError> {
        let mut targets: Vec<EncodedTarget> = Vec::with_capacity(gts.len());
        let mut boxes = Vec::with_capacity(gts.len());
        for gt in gts {
            let e = codec.encode(gt)?;
            boxes.push((e.values.prior_id, codec.bbox(&ground_truth_detection(codec, gt))?));
            targets.push(e);
        }
        targets.sort_by(|a, b| {
            a.slot
                .cmp(&b.slot)
                .then(a.distance.total_cmp(&b.distance))
                .then_with(|| cmp_values(&a.values.to_channels(), &b.values.to_channels()))
        });
        targets.dedup_by(|later, earlier| later.slot == earlier.slot);
        boxes.sort_by(|a, b| a.0.cmp(&b.0).then(cmp_values(&box_key(&a.1), &box_key(&b.1))));
        Ok(Scene { targets, boxes })
    }

    /// The slot-aligned tensor a perfect network would output: encoded
    /// values at the positives, objectness `-SATURATED_LOGIT` elsewhere.
    pub fn perfect_tensor(&self, codec: &Codec) -> PredictionTensor {
        let mut t = codec.zero_tensor();
        let c = t.layout.channels;
        for v in t.data.chunks_mut(c) {
            v[CH_OBJ] = -crate::codec::SATURATED_LOGIT;
        }
        for e in &self.targets {
            t.set_cell_prediction(&e.values).expect("target matches the codec layout");
        }
        t
    }
}

fn box_key(b: &Bbox2D) -> [f64; 4] {
    [b.min_u, b.min_v, b.max_u, b.max_v]
}

fn cmp_values(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(std::cmp::Ordering::Equal)
}

/// Detection a perfect network would report for `gt`.
pub fn ground_truth_detection(codec: &Codec, gt: &GroundTruth) -> DecodedDetection {
    let ray = pixel_ray(&codec.intrinsics, gt.origin_px);
    DecodedDetection {
        origin_px: gt.origin_px,
        distance: gt.distance,
        orientation: rotation_to_euler(&(viewing_frame(&ray) * gt.view_orientation)),
        objectness: 1.0,
        class_id: gt.class_id,
        confidence: 1.0,
        prior_id: 0,
    }
}

/// Per-slot classification used by the loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotRole {
    Positive,
    Negative,
    Ignored,
}

fn check_shape(codec: &Codec, tensor: &PredictionTensor) -> Result<(), LossError> {
    if tensor.layout != codec.layout() || tensor.data.len() != tensor.layout.len() {
        return Err(LossError::Codec(CodecError::ShapeMismatch(
            "tensor layout differs from codec".into(),
        )));
    }
    Ok(())
}

/// Role of every slot, indexed by flat slot number.
pub fn slot_roles(
    codec: &Codec,
    tensor: &PredictionTensor,
    scene: &Scene,
    cfg: &LossConfig,
) -> Result<Vec<SlotRole>, LossError> {
    check_shape(codec, tensor)?;
    let layout = tensor.layout;
    let mut roles = vec![SlotRole::Negative; layout.slot_count()];
    for e in &scene.targets {
        roles[layout.slot_index(&e.slot)] = SlotRole::Positive;
    }
    for (i, role) in roles.iter_mut().enumerate() {
        if *role == SlotRole::Positive {
            continue;
        }
        let slot = layout.slot_at(i);
        if is_ignored(codec, tensor, scene, cfg, &slot)? {
            *role = SlotRole::Ignored;
        }
    }
    Ok(roles)
}

fn is_ignored(
    codec: &Codec,
    tensor: &PredictionTensor,
    scene: &Scene,
    cfg: &LossConfig,
    slot: &Slot,
) -> Result<bool, LossError> {
    let prior = slot.prior_id();
    let mut candidates = scene
        .boxes
        .iter()
        .filter(|(p, _)| !cfg.require_same_anchor || *p == prior)
        .peekable();
    if candidates.peek().is_none() {
        return Ok(false);
    }
    let d = codec.decode_slot(tensor, slot)?;
    let b = match codec.bbox(&d) {
        Ok(b) => b,
        Err(CodecError::HullBehindCamera(_)) => return Ok(false),
        Err(e) => return Err(e.into()),
    };
    Ok(candidates.map(|(_, g)| iou(&b, g)).fold(0.0, f64::max) > cfg.iou_ignore_threshold)
}

/// Loss and, when `with_gradient`, its gradient for a given slot mask.
pub fn evaluate_with_roles(
    tensor: &PredictionTensor,
    scene: &Scene,
    roles: &[SlotRole],
    cfg: &LossConfig,
    with_gradient: bool,
) -> (LossBreakdown, Option<Vec<f64>>) {
    let layout = tensor.layout;
    let ch = layout.channels;
    let w = &cfg.weights;
    let mut b = LossBreakdown::default();
    let mut grad = with_gradient.then(|| vec![0.0; tensor.data.len()]);
    for (i, role) in roles.iter().enumerate() {
        if *role == SlotRole::Negative {
            let t = tensor.data[i * ch + CH_OBJ];
            b.objectness_negative += softplus(t);
            if let Some(g) = grad.as_mut() {
                g[i * ch + CH_OBJ] = w.objectness_negative * sigmoid(t);
            }
        }
    }
    for e in &scene.targets {
        let base = layout.slot_index(&e.slot) * ch;
        let v = &tensor.data[base..base + ch];
        let target = e.values.to_channels();
        b.objectness_positive += softplus(-v[CH_OBJ]);
        let sq = |channels: &[usize], weight: f64, acc: &mut f64, grad: &mut Option<Vec<f64>>| {
            for &c in channels {
                let d = v[c] - target[c];
                *acc += d * d;
                if let Some(g) = grad.as_mut() {
                    g[base + c] = weight * 2.0 * d;
                }
            }
        };
        sq(&[CH_X, CH_Y], w.position, &mut b.position, &mut grad);
        sq(&[CH_R], w.distance, &mut b.distance, &mut grad);
        sq(&[CH_YAW, CH_PITCH, CH_ROLL], w.orientation, &mut b.orientation, &mut grad);
        for c in BASE_CHANNELS..ch {
            let y = if target[c] > 0.0 { 1.0 } else { 0.0 };
            b.class += softplus(v[c]) - y * v[c];
            if let Some(g) = grad.as_mut() {
                g[base + c] = w.class * (sigmoid(v[c]) - y);
            }
        }
        if let Some(g) = grad.as_mut() {
            g[base + CH_OBJ] = -w.objectness_positive * sigmoid(-v[CH_OBJ]);
        }
    }
    b.total = b.weighted_total(w);
    (b, grad)
}

pub fn total_loss(
    codec: &Codec,
    tensor: &PredictionTensor,
    scene: &Scene,
    cfg: &LossConfig,
) -> Result<LossBreakdown, LossError> {
    cfg.validate()?;
    let roles = slot_roles(codec, tensor, scene, cfg)?;
    Ok(evaluate_with_roles(tensor, scene, &roles, cfg, false).0)
}

/// `(positive, negative)` objectness terms, unweighted.
pub fn objectness_loss(
    codec: &Codec,
    tensor: &PredictionTensor,
    scene: &Scene,
    cfg: &LossConfig,
) -> Result<(f64, f64), LossError> {
    let b = total_loss(codec, tensor, scene, cfg)?;
    Ok((b.objectness_positive, b.objectness_negative))
}

/// `(position, distance, orientation)` terms, unweighted. Depends only on
/// the positive slots.
pub fn regression_loss(tensor: &PredictionTensor, scene: &Scene) -> Result<(f64, f64, f64), LossError> {
    let roles = vec![SlotRole::Ignored; tensor.layout.slot_count()];
    if tensor.data.len() != tensor.layout.len() {
        return Err(LossError::Codec(CodecError::ShapeMismatch("tensor length".into())));
    }
    let (b, _) = evaluate_with_roles(tensor, scene, &roles, &LossConfig::default(), false);
    Ok((b.position, b.distance, b.orientation))
}

pub fn loss_gradient(
    codec: &Codec,
    tensor: &PredictionTensor,
    scene: &Scene,
    cfg: &LossConfig,
) -> Result<(LossBreakdown, Vec<f64>), LossError> {
    cfg.validate()?;
    let roles = slot_roles(codec, tensor, scene, cfg)?;
    let (b, g) = evaluate_with_roles(tensor, scene, &roles, cfg, true);
    Ok((b, g.expect("gradient requested")))
}

/// One coordinate of a finite-difference check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientSample {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    /// `|analytic - numeric| / max(|analytic|, |numeric|)`, 0 when both vanish.
    pub relative_error: f64,
}

fn relative_error(a: f64, n: f64) -> f64 {
    let scale = a.abs().max(n.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - n).abs() / scale
    }
}

/// Central differences of the total loss at `index` with step `h`. Returns
/// `None` when the ignore mask differs between `x - h`, `x` and `x + h`,
/// where the loss is not differentiable.
pub fn finite_difference(
    codec: &Codec,
    tensor: &PredictionTensor,
    scene: &Scene,
    cfg: &LossConfig,
    analytic: &[f64],
    index: usize,
    h: f64,
) -> Result<Option<GradientSample>, LossError> {
    let roles = slot_roles(codec, tensor, scene, cfg)?;
    let mut t = tensor.clone();
    let mut eval = |x: f64| -> Result<Option<f64>, LossError> {
        t.data[index] = x;
        if slot_roles(codec, &t, scene, cfg)? != roles {
            return Ok(None);
        }
        Ok(Some(evaluate_with_roles(&t, scene, &roles, cfg, false).0.total))
    };
    let x = tensor.data[index];
    let (Some(plus), Some(minus)) = (eval(x + h)?, eval(x - h)?) else {
        return Ok(None);
    };
    let numeric = (plus - minus) / (2.0 * h);
    Ok(Some(GradientSample {
        index,
        analytic: analytic[index],
        numeric,
        relative_error: relative_error(analytic[index], numeric),
    }))
}

/// `base_rate / (1 + epoch^decay_exponent)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainSchedule {
    pub base_rate: f64,
    pub decay_exponent: f64,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        TrainSchedule {
            base_rate: 1e-3,
            decay_exponent: 1.5,
        }
    }
}

pub fn lr_at(epoch: u32, s: &TrainSchedule) -> f64 {
    s.base_rate / (1.0 + (epoch as f64).powf(s.decay_exponent))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Optimizer {
    /// `x -= lr · g`.
    GradientDescent,
    /// Per-coordinate Newton step scaled by `lr / base_rate`. The loss is
    /// separable over coordinates for a fixed mask, so the diagonal Hessian
    /// is exact.
    DiagonalNewton,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub steps: usize,
    pub steps_per_epoch: usize,
    pub schedule: TrainSchedule,
    pub optimizer: Optimizer,
    pub loss: LossConfig,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            steps: 500,
            steps_per_epoch: 100,
            schedule: TrainSchedule::default(),
            optimizer: Optimizer::DiagonalNewton,
            loss: LossConfig::default(),
        }
    }
}

/// Largest Newton move per step, in logits.
const MAX_NEWTON_STEP: f64 = 8.0;

#[derive(Debug, Clone)]
pub struct FitResult {
    pub tensor: PredictionTensor,
    /// Loss before each step, then after the last: `steps + 1` entries.
    pub trace: Vec<LossBreakdown>,
}

/// Optimize a zero tensor towards the scene.
pub fn fit_tensor(codec: &Codec, scene: &Scene, cfg: &FitConfig) -> Result<FitResult, LossError> {
    cfg.loss.validate()?;
    if cfg.steps_per_epoch == 0 {
        return Err(LossError::InvalidConfig("steps_per_epoch must be positive".into()));
    }
    let mut tensor = codec.zero_tensor();
    let mut trace = Vec::with_capacity(cfg.steps + 1);
    let w = cfg.loss.weights;
    let ch = tensor.layout.channels;
    for step in 0..=cfg.steps {
        let roles = slot_roles(codec, &tensor, scene, &cfg.loss)?;
        let (b, grad) = evaluate_with_roles(&tensor, scene, &roles, &cfg.loss, step < cfg.steps);
        trace.push(b);
        let Some(grad) = grad else { break };
        let lr = lr_at((step / cfg.steps_per_epoch) as u32, &cfg.schedule);
        match cfg.optimizer {
            Optimizer::GradientDescent => {
                for (x, g) in tensor.data.iter_mut().zip(&grad) {
                    *x -= lr * g;
                }
            }
            Optimizer::DiagonalNewton => {
                let scale = lr / cfg.schedule.base_rate;
                for (i, g) in grad.iter().enumerate() {
                    if *g == 0.0 {
                        continue;
                    }
                    let c = i % ch;
                    let x = tensor.data[i];
                    let hess = match c {
                        CH_X | CH_Y => 2.0 * w.position,
                        CH_R => 2.0 * w.distance,
                        CH_YAW | CH_PITCH | CH_ROLL => 2.0 * w.orientation,
                        CH_OBJ => {
                            let wt = if roles[i / ch] == SlotRole::Positive {
                                w.objectness_positive
                            } else {
                                w.objectness_negative
                            };
                            wt * sigmoid(x) * sigmoid(-x)
                        }
                        _ => w.class * sigmoid(x) * sigmoid(-x),
                    };
                    let step = (g / hess).clamp(-MAX_NEWTON_STEP, MAX_NEWTON_STEP);
                    tensor.data[i] = x - scale * step;
                }
            }
        }
    }
    Ok(FitResult { tensor, trace })
}

/// Loss trace as CSV with one row per entry.
pub fn trace_to_csv(trace: &[LossBreakdown]) -> String {
    let mut s = String::from(
        "step,objectness_positive,objectness_negative,position,distance,orientation,class,total\n",
    );
    for (i, b) in trace.iter().enumerate() {
        let _ = writeln!(
            s,
            "{i},{},{},{},{},{},{},{}",
            b.objectness_positive, b.objectness_negative, b.position, b.distance, b.orientation, b.class, b.total
        );
    }
    s
}

/// Highest-objectness decoded detection of a tensor.
pub fn best_detection(codec: &Codec, tensor: &PredictionTensor) -> Result<DecodedDetection, LossError> {
    let layout = tensor.layout;
    let ch = layout.channels;
    let best = (0..layout.slot_count())
        .max_by(|&a, &b| tensor.data[a * ch + CH_OBJ].total_cmp(&tensor.data[b * ch + CH_OBJ]))
        .ok_or_else(|| LossError::InvalidConfig("empty tensor".into()))?;
    Ok(codec.decode_slot(tensor, &layout.slot_at(best))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::SATURATED_LOGIT;
    use crate::geometry::{orientation_from_view, CameraIntrinsics, CuboidSpec};
    use std::f64::consts::FRAC_PI_2;

    fn codec() -> Codec {
        Codec::with_defaults(
            CameraIntrinsics::new(FRAC_PI_2, 256, 128).unwrap(),
            CuboidSpec::new(4.5, 1.8, 1.4).unwrap(),
        )
        .unwrap()
    }

    fn gt(u: f64, v: f64, r: f64, theta: f64) -> GroundTruth {
        GroundTruth {
            origin_px: [u, v],
            distance: r,
            view_orientation: orientation_from_view(theta, 0.1, 0.02),
            class_id: 0,
        }
    }

    fn scene3(c: &Codec) -> Scene {
        Scene::new(c, &[gt(40.0, 60.0, 12.0, 0.1), gt(200.0, 70.0, 40.0, 1.4), gt(120.0, 30.0, 80.0, 3.0)]).unwrap()
    }

    #[test]
    fn perfect_prediction_is_zero() {
        let c = codec();
        let s = scene3(&c);
        let t = s.perfect_tensor(&c);
        let b = total_loss(&c, &t, &s, &LossConfig::default()).unwrap();
        assert!(b.total < 1e-6, "{b:?}");
        assert!(b.objectness_positive < 1e-6 && b.objectness_negative < 1e-6);
        let (_, g) = loss_gradient(&c, &t, &s, &LossConfig::default()).unwrap();
        assert!(g.iter().map(|x| x * x).sum::<f64>().sqrt() < 1e-6);
    }

    #[test]
    fn empty_scene() {
        let c = codec();
        let s = Scene::new(&c, &[]).unwrap();
        let t = PredictionTensor::filled(c.layout(), -SATURATED_LOGIT);
        assert!(total_loss(&c, &t, &s, &LossConfig::default()).unwrap().total < 1e-6);
    }

    #[test]
    fn distance_term_is_squared_logit_error() {
        let c = codec();
        let s = Scene::new(&c, &[gt(40.0, 60.0, 12.0, 0.1)]).unwrap();
        let mut t = s.perfect_tensor(&c);
        let slot = s.targets[0].slot;
        t.slot_values_mut(&slot)[CH_R] += 1.0;
        let (p, d, o) = regression_loss(&t, &s).unwrap();
        assert_eq!((p, o), (0.0, 0.0));
        assert!((d - 1.0).abs() < 1e-12);
    }

    #[test]
    fn negatives_do_not_affect_regression() {
        let c = codec();
        let s = scene3(&c);
        let t = s.perfect_tensor(&c);
        let mut u = t.clone();
        for (i, x) in u.data.iter_mut().enumerate() {
            *x += ((i * 7919) % 13) as f64 * 0.1;
        }
        for e in &s.targets {
            u.slot_values_mut(&e.slot).copy_from_slice(t.slot_values(&e.slot));
        }
        assert_eq!(regression_loss(&t, &s).unwrap(), regression_loss(&u, &s).unwrap());
    }

    #[test]
    fn weights_select_components() {
        let c = codec();
        let s = scene3(&c);
        let t = c.zero_tensor();
        let cfg = LossConfig {
            weights: LossWeights {
                position: 0.0,
                distance: 0.0,
                orientation: 0.0,
                class: 0.0,
                ..LossWeights::default()
            },
            ..LossConfig::default()
        };
        let b = total_loss(&c, &t, &s, &cfg).unwrap();
        assert!((b.total - (b.objectness_positive + b.objectness_negative)).abs() < 1e-9);
    }

    #[test]
    fn lr_schedule() {
        let s = TrainSchedule::default();
        assert_eq!(lr_at(0, &s), 1e-3);
        assert_eq!(lr_at(1, &s), 5e-4);
        assert!((1..=100).all(|e| lr_at(e, &s) < lr_at(e - 1, &s)));
    }

    #[test]
    fn zero_steps_leave_zero_tensor() {
        let c = codec();
        let s = scene3(&c);
        let r = fit_tensor(&c, &s, &FitConfig { steps: 0, ..FitConfig::default() }).unwrap();
        assert!(r.tensor.data.iter().all(|&x| x == 0.0));
        assert_eq!(r.trace.len(), 1);
    }

    #[test]
    fn collision_keeps_nearest() {
        let c = codec();
        let near = gt(40.0, 60.0, 10.0, 0.1);
        let far = gt(41.0, 61.0, 12.0, 0.1);
        let a = Scene::new(&c, &[far, near]).unwrap();
        let b = Scene::new(&c, &[near, far]).unwrap();
        assert_eq!(a.targets.len(), 1);
        assert_eq!(a.targets[0].distance, 10.0);
        assert_eq!(a.targets, b.targets);
    }

    #[test]
    fn csv_has_header_and_rows() {
        let csv = trace_to_csv(&[LossBreakdown::default(); 3]);
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.starts_with("step,"));
    }
}
