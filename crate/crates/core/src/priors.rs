//! Spherical prior regions and their anchors.
//!
//! The space of camera positions around an object is cut into 18 regions:
//! three heads by distance, four yaw bands per head (front, left, back,
//! right of the object), and the front and back bands split once more by
//! distance. Each region carries an anchor orientation and a reference
//! distance that the codec predicts offsets from.
//!
//! | head | front / back radii  | lateral radii |
//! |------|---------------------|---------------|
//! | 1    | 0, 17.5, 32.5       | 0, 25         |
//! | 2    | 32.5, 50, 70        | 25, 60        |
//! | 3    | 70, 90, 110         | 60, 100       |
//!
//! Prior ids run 1..=18; within a head the order is front-near, front-far,
//! left, back-near, back-far, right.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, FRAC_PI_8, PI};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    orientation_from_view, rotation_to_euler, so3_mean, wrap_angle, EulerAngles, RotationMatrix,
    SphericalParams,
};
use crate::syngen::ObjectAnnotation;

pub const PRIOR_COUNT: usize = 18;
pub const PRIORS_PER_HEAD: usize = 6;
pub const HEAD_COUNT: u8 = 3;

/// Radial split points of the front/back bands, per head.
pub const FRONT_BACK_RADII: [[f64; 3]; 3] = [[0.0, 17.5, 32.5], [32.5, 50.0, 70.0], [70.0, 90.0, 110.0]];
/// Radial interval of the lateral bands, per head.
pub const LATERAL_RADII: [[f64; 2]; 3] = [[0.0, 25.0], [25.0, 60.0], [60.0, 100.0]];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PriorError {
    #[error("pitch {0} is negative (camera below the object's base plane)")]
    NegativePitch(f64),
    #[error("distance {r} outside the {band:?} band coverage")]
    DistanceOutOfRange { r: f64, band: YawBand },
    #[error("yaw {0} is not covered by any region")]
    YawOutOfCoverage(f64),
    #[error("non-finite spherical parameters")]
    NonFinite,
    #[error("invalid prior id {0}")]
    InvalidId(u8),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("malformed prior table: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum YawBand {
    Front,
    Left,
    Back,
    Right,
}

impl YawBand {
    pub const ALL: [YawBand; 4] = [YawBand::Front, YawBand::Left, YawBand::Back, YawBand::Right];

    pub fn center(self) -> f64 {
        match self {
            YawBand::Front => 0.0,
            YawBand::Left => FRAC_PI_2,
            YawBand::Back => PI,
            YawBand::Right => -FRAC_PI_2,
        }
    }

    pub fn is_lateral(self) -> bool {
        matches!(self, YawBand::Left | YawBand::Right)
    }

    /// Band containing a yaw angle; bands are the half-open quarter turns
    /// `[c - π/4, c + π/4)` around their centers.
    pub fn of_yaw(theta: f64) -> YawBand {
        let shifted = (wrap_angle(theta) + FRAC_PI_4).rem_euclid(2.0 * PI);
        match ((shifted / FRAC_PI_2).floor() as usize).min(3) {
            0 => YawBand::Front,
            1 => YawBand::Left,
            2 => YawBand::Back,
            _ => YawBand::Right,
        }
    }
}

/// How the yaw circle is cut.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionLayout {
    /// Four quarter-turn bands centered on front/left/back/right. Tiles the circle.
    Partition,
    /// The literal per-row θ intervals: eighth-turn bands centered on
    /// 0, π/4, π/2, 3π/4, covering only `[-π/8, 7π/8)`.
    Strict,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Default,
    ComputedFromDataset,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionBounds {
    pub head: u8,
    pub band: YawBand,
    /// Inclusive lower radius, meters.
    pub r_min: f64,
    /// Exclusive upper radius, meters.
    pub r_max: f64,
    pub theta_center: f64,
    pub theta_halfwidth: f64,
}

impl RegionBounds {
    pub fn contains_radius(&self, r: f64) -> bool {
        r >= self.r_min && r < self.r_max
    }

    pub fn contains_yaw(&self, theta: f64) -> bool {
        let d = wrap_angle(theta - self.theta_center);
        d >= -self.theta_halfwidth && d < self.theta_halfwidth
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.r_min + self.r_max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prior {
    pub id: u8,
    pub bounds: RegionBounds,
    /// Object orientation in the viewing frame.
    pub anchor_orientation: EulerAngles,
    /// Reference distance, meters.
    pub anchor_distance: f64,
    /// Number of dataset samples that fell into the region when the table
    /// was computed; 0 for defaults and for regions without samples.
    #[serde(default)]
    pub sample_count: usize,
}

impl Prior {
    pub fn head(&self) -> u8 {
        self.bounds.head
    }

    /// Index of this prior among its head's anchors (0..6).
    pub fn anchor_index(&self) -> usize {
        (self.id as usize - 1) % PRIORS_PER_HEAD
    }

    pub fn anchor_matrix(&self) -> RotationMatrix {
        self.anchor_orientation.to_matrix()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorTable {
    pub layout: RegionLayout,
    pub provenance: Provenance,
    pub priors: Vec<Prior>,
}

pub fn head_of(prior_id: u8) -> Result<u8, PriorError> {
    if prior_id == 0 || prior_id as usize > PRIOR_COUNT {
        return Err(PriorError::InvalidId(prior_id));
    }
    Ok((prior_id - 1) / PRIORS_PER_HEAD as u8 + 1)
}

/// Prior id of the `anchor`-th prior of `head`.
pub fn prior_id(head: u8, anchor: usize) -> u8 {
    (head - 1) * PRIORS_PER_HEAD as u8 + anchor as u8 + 1
}

fn region_bounds(layout: RegionLayout) -> Vec<RegionBounds> {
    let mut out = Vec::with_capacity(PRIOR_COUNT);
    for h in 0..HEAD_COUNT as usize {
        let fb = FRONT_BACK_RADII[h];
        let lat = LATERAL_RADII[h];
        // (band, r_min, r_max, strict-layout center)
        let rows = [
            (YawBand::Front, fb[0], fb[1], 0.0),
            (YawBand::Front, fb[1], fb[2], 0.0),
            (YawBand::Left, lat[0], lat[1], FRAC_PI_4),
            (YawBand::Back, fb[0], fb[1], FRAC_PI_2),
            (YawBand::Back, fb[1], fb[2], FRAC_PI_2),
            (YawBand::Right, lat[0], lat[1], 3.0 * FRAC_PI_4),
        ];
        for (band, r_min, r_max, strict_center) in rows {
            let (theta_center, theta_halfwidth) = match layout {
                RegionLayout::Partition => (band.center(), FRAC_PI_4),
                RegionLayout::Strict => (strict_center, FRAC_PI_8),
            };
            out.push(RegionBounds {
                head: h as u8 + 1,
                band,
                r_min,
                r_max,
                theta_center,
                theta_halfwidth,
            });
        }
    }
    out
}

fn default_table(layout: RegionLayout) -> PriorTable {
    let priors = region_bounds(layout)
        .into_iter()
        .enumerate()
        .map(|(i, bounds)| Prior {
            id: i as u8 + 1,
            bounds,
            anchor_orientation: rotation_to_euler(&orientation_from_view(
                bounds.theta_center,
                0.0,
                0.0,
            )),
            anchor_distance: bounds.midpoint(),
            sample_count: 0,
        })
        .collect();
    PriorTable {
        layout,
        provenance: Provenance::Default,
        priors,
    }
}

/// The 18-region table with quarter-turn yaw bands and anchors at each
/// region's angular center (elevation 0).
pub fn default_region_table() -> PriorTable {
    default_table(RegionLayout::Partition)
}

/// Same radii with the literal eighth-turn yaw intervals. Kept for
/// comparison; it leaves `[7π/8, 15π/8)` uncovered.
pub fn strict_region_table() -> PriorTable {
    default_table(RegionLayout::Strict)
}

impl PriorTable {
    pub fn get(&self, prior_id: u8) -> Result<&Prior, PriorError> {
        head_of(prior_id)?;
        self.priors
            .get(prior_id as usize - 1)
            .ok_or(PriorError::InvalidId(prior_id))
    }

    pub fn head_priors(&self, head: u8) -> &[Prior] {
        let start = (head as usize - 1) * PRIORS_PER_HEAD;
        &self.priors[start..start + PRIORS_PER_HEAD]
    }

    /// Region of a camera position. Deterministic; every input yields one
    /// prior id or an error.
    pub fn assign_region(&self, s: &SphericalParams) -> Result<u8, PriorError> {
        if !(s.r.is_finite() && s.theta.is_finite() && s.phi.is_finite()) {
            return Err(PriorError::NonFinite);
        }
        if s.phi < 0.0 {
            return Err(PriorError::NegativePitch(s.phi));
        }
        match self.layout {
            RegionLayout::Partition => {
                let band = YawBand::of_yaw(s.theta);
                self.priors
                    .iter()
                    .find(|p| p.bounds.band == band && p.bounds.contains_radius(s.r))
                    .map(|p| p.id)
                    .ok_or(PriorError::DistanceOutOfRange { r: s.r, band })
            }
            RegionLayout::Strict => {
                let in_yaw: Vec<&Prior> = self
                    .priors
                    .iter()
                    .filter(|p| p.bounds.contains_yaw(s.theta))
                    .collect();
                let Some(first) = in_yaw.first() else {
                    return Err(PriorError::YawOutOfCoverage(s.theta));
                };
                in_yaw
                    .iter()
                    .find(|p| p.bounds.contains_radius(s.r))
                    .map(|p| p.id)
                    .ok_or(PriorError::DistanceOutOfRange {
                        r: s.r,
                        band: first.bounds.band,
                    })
            }
        }
    }

    /// Check ids and region bounds against the layout's fixed geometry.
    pub fn validate(&self) -> Result<(), PriorError> {
        if self.priors.len() != PRIOR_COUNT {
            return Err(PriorError::Malformed(format!(
                "expected {PRIOR_COUNT} priors, found {}",
                self.priors.len()
            )));
        }
        let reference = region_bounds(self.layout);
        for (i, (p, b)) in self.priors.iter().zip(reference.iter()).enumerate() {
            if p.id as usize != i + 1 {
                return Err(PriorError::Malformed(format!("prior at index {i} has id {}", p.id)));
            }
            if p.bounds != *b {
                return Err(PriorError::Malformed(format!("prior {} bounds differ from layout", p.id)));
            }
            if !(p.anchor_distance >= b.r_min && p.anchor_distance <= b.r_max) {
                return Err(PriorError::Malformed(format!(
                    "prior {} anchor distance {} outside [{}, {}]",
                    p.id, p.anchor_distance, b.r_min, b.r_max
                )));
            }
            if !p.anchor_orientation.is_finite() {
                return Err(PriorError::Malformed(format!("prior {} orientation", p.id)));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("prior table serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, PriorError> {
        let t: PriorTable =
            serde_json::from_str(s).map_err(|e| PriorError::Malformed(e.to_string()))?;
        t.validate()?;
        Ok(t)
    }
}

/// One training sample as seen by the prior system.
#[derive(Debug, Clone, Copy)]
pub struct PriorSample {
    pub spherical: SphericalParams,
    /// Object orientation in the viewing frame.
    pub orientation: RotationMatrix,
}

/// Anchor orientations as the SO(3) mean of the samples falling in each
/// region. Regions without samples keep their default anchor and report a
/// `sample_count` of 0. Samples outside coverage are skipped.
pub fn compute_priors_from_samples(
    base: &PriorTable,
    samples: &[PriorSample],
) -> Result<PriorTable, PriorError> {
    if samples.is_empty() {
        return Err(PriorError::EmptyDataset);
    }
    let mut buckets: Vec<Vec<RotationMatrix>> = vec![Vec::new(); PRIOR_COUNT];
    for s in samples {
        if let Ok(id) = base.assign_region(&s.spherical) {
            buckets[id as usize - 1].push(s.orientation);
        }
    }
    let mut table = base.clone();
    table.provenance = Provenance::ComputedFromDataset;
    for (prior, bucket) in table.priors.iter_mut().zip(buckets) {
        prior.sample_count = bucket.len();
        if let Ok(mean) = so3_mean(&bucket) {
            prior.anchor_orientation = rotation_to_euler(&mean);
        }
    }
    Ok(table)
}

/// [`compute_priors_from_samples`] over annotation records, starting from
/// the default table.
pub fn compute_priors(dataset: &[ObjectAnnotation]) -> Result<PriorTable, PriorError> {
    let samples: Vec<PriorSample> = dataset.iter().map(|a| a.prior_sample()).collect();
    compute_priors_from_samples(&default_region_table(), &samples)
}
