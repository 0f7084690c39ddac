//! Cross-ratio point-of-regard estimation.
//!
//! The glint quadrilateral and the LED rectangle are related by one planar
//! projectivity; transferring the pupil center through it yields the
//! (uncalibrated) point of regard on the screen.

use nalgebra::Point2;
use thiserror::Error;

use crate::geometry::{homography_from_correspondences, GeometryError};
use crate::scene::{FeatureSet, Screen, SensorId};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EstimateError {
    #[error("features unavailable")]
    Unavailable,
    #[error("degenerate glint configuration")]
    DegenerateConfiguration,
    #[error("pupil maps to infinity")]
    PointAtInfinity,
}

/// Uncalibrated point of regard in screen-plane millimeters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawGaze {
    pub por: Point2<f64>,
    pub sensor: SensorId,
}

pub fn estimate_raw_por(
    features: &FeatureSet,
    screen: &Screen,
    sensor: SensorId,
) -> Result<RawGaze, EstimateError> {
    if !features.is_valid() {
        return Err(EstimateError::Unavailable);
    }
    let h = homography_from_correspondences(&features.glints, &screen.led_points()).map_err(
        |e| match e {
            GeometryError::PointAtInfinity => EstimateError::PointAtInfinity,
            _ => EstimateError::DegenerateConfiguration,
        },
    )?;
    let por = h
        .apply(&features.pupil)
        .map_err(|_| EstimateError::PointAtInfinity)?;
    if !(por.x.is_finite() && por.y.is_finite()) {
        return Err(EstimateError::PointAtInfinity);
    }
    Ok(RawGaze { por, sensor })
}
