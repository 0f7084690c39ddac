//! Combination of per-sensor calibrated gaze outputs into one point of regard.

use std::fmt;
use std::str::FromStr;

use nalgebra::Point2;
use serde::{Deserialize, Serialize};

use crate::calibration::WeightMaps;
use crate::scene::{Screen, SensorId};

/// One sensor's calibrated output for one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorOutput {
    pub sensor: SensorId,
    pub por: Point2<f64>,
    pub available: bool,
    /// Head yaw relative to this sensor's camera, degrees.
    pub head_yaw_deg: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusedGaze {
    /// `None` when no sensor produced an output.
    pub por: Option<Point2<f64>>,
    /// One entry per input, in input order; zero for unavailable sensors.
    pub weights: Vec<(SensorId, f64)>,
}

impl FusedGaze {
    pub fn is_available(&self) -> bool {
        self.por.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMethod {
    Simple,
    HeadPose,
    Behavior,
    BestCamera,
}

impl FusionMethod {
    pub const ALL: [FusionMethod; 4] = [
        Self::Simple,
        Self::HeadPose,
        Self::Behavior,
        Self::BestCamera,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Simple => "simple",
            Self::HeadPose => "head_pose",
            Self::Behavior => "behavior",
            Self::BestCamera => "best_camera",
        }
    }
}

impl fmt::Display for FusionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FusionMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown fusion method `{s}`"))
    }
}

/// Weighted mean with weights renormalized over available outputs.
/// `raw[i]` is ignored for unavailable outputs.
fn weighted(outputs: &[SensorOutput], raw: &[f64]) -> Option<FusedGaze> {
    let total: f64 = outputs
        .iter()
        .zip(raw)
        .filter(|(o, _)| o.available)
        .map(|(_, w)| *w)
        .sum();
    if !(total > 0.0) {
        return None;
    }
    let mut por = Point2::origin();
    let weights = outputs
        .iter()
        .zip(raw)
        .map(|(o, w)| {
            let w = if o.available { w / total } else { 0.0 };
            por += o.por.coords * w;
            (o.sensor, w)
        })
        .collect();
    Some(FusedGaze {
        por: Some(por),
        weights,
    })
}

fn unavailable(outputs: &[SensorOutput]) -> FusedGaze {
    FusedGaze {
        por: None,
        weights: outputs.iter().map(|o| (o.sensor, 0.0)).collect(),
    }
}

/// Plain average of the available outputs.
pub fn fuse_simple(outputs: &[SensorOutput]) -> FusedGaze {
    weighted(outputs, &vec![1.0; outputs.len()]).unwrap_or_else(|| unavailable(outputs))
}

/// Head-pose weight of one camera: `(α_max − |α|) / α_max`, clamped to [0, 1].
pub fn head_pose_weight(yaw_deg: f64, alpha_max_deg: f64) -> f64 {
    ((alpha_max_deg - yaw_deg.abs()) / alpha_max_deg).clamp(0.0, 1.0)
}

/// Weights inversely related to the head yaw towards each camera. Falls back
/// to [`fuse_simple`] when every available weight is zero.
pub fn fuse_head_pose(outputs: &[SensorOutput], alpha_max_deg: f64) -> FusedGaze {
    let raw: Vec<f64> = outputs
        .iter()
        .map(|o| head_pose_weight(o.head_yaw_deg, alpha_max_deg))
        .collect();
    weighted(outputs, &raw).unwrap_or_else(|| fuse_simple(outputs))
}

/// Weight-map fusion. The simple average locates where on the screen the
/// user is looking; each sensor's map is read there.
pub fn fuse_behavior(outputs: &[SensorOutput], maps: &WeightMaps, screen: &Screen) -> FusedGaze {
    let anchor = fuse_simple(outputs);
    let Some(p) = anchor.por else { return anchor };
    let (x, y) = screen.clamp(p.x, p.y);
    let raw: Vec<f64> = outputs
        .iter()
        .map(|o| maps.lookup(o.sensor, x, y))
        .collect();
    weighted(outputs, &raw).unwrap_or(anchor)
}

/// Uses only the camera with the largest head-pose weight among cameras that
/// produced output; its available eyes are averaged. Ties go to the lower
/// camera index.
pub fn fuse_best_camera(outputs: &[SensorOutput], alpha_max_deg: f64) -> FusedGaze {
    let best = outputs
        .iter()
        .filter(|o| o.available)
        .map(|o| {
            (
                o.sensor.camera,
                head_pose_weight(o.head_yaw_deg, alpha_max_deg),
            )
        })
        .fold(None, |acc: Option<(usize, f64)>, (c, w)| match acc {
            Some((bc, bw)) if bw > w || (bw == w && bc <= c) => Some((bc, bw)),
            _ => Some((c, w)),
        });
    let Some((camera, _)) = best else {
        return unavailable(outputs);
    };
    let raw: Vec<f64> = outputs
        .iter()
        .map(|o| if o.sensor.camera == camera { 1.0 } else { 0.0 })
        .collect();
    weighted(outputs, &raw).unwrap_or_else(|| unavailable(outputs))
}

/// Dispatches to the fuser for `method`. `maps` is required for
/// [`FusionMethod::Behavior`]; without it the simple average is used.
pub fn fuse(
    method: FusionMethod,
    outputs: &[SensorOutput],
    alpha_max_deg: f64,
    maps: Option<&WeightMaps>,
    screen: &Screen,
) -> FusedGaze {
    match method {
        FusionMethod::Simple => fuse_simple(outputs),
        FusionMethod::HeadPose => fuse_head_pose(outputs, alpha_max_deg),
        FusionMethod::Behavior => match maps {
            Some(m) => fuse_behavior(outputs, m, screen),
            None => fuse_simple(outputs),
        },
        FusionMethod::BestCamera => fuse_best_camera(outputs, alpha_max_deg),
    }
}
