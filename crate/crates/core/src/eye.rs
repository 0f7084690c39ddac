//! Spherical-cornea eye model with a kappa offset between visual and optical axes.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{angle_between, Vec3};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EyeError {
    #[error("visual axis is parallel to world up; eye frame undefined")]
    GimbalDegenerate,
    #[error("gaze target coincides with the cornea center")]
    DegenerateTarget,
    #[error("invalid eye parameters: {0}")]
    InvalidParams(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EyeSide {
    Left,
    Right,
}

impl EyeSide {
    /// +1 for the right eye, whose temporal side is world +X.
    fn temporal_sign(self) -> f64 {
        match self {
            EyeSide::Right => 1.0,
            EyeSide::Left => -1.0,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            EyeSide::Left => "L",
            EyeSide::Right => "R",
        }
    }
}

/// Physiological parameters of one eye.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EyeParams {
    pub cornea_radius_mm: f64,
    pub cornea_to_pupil_mm: f64,
    /// Horizontal visual/optical offset, degrees (positive = temporal).
    pub alpha_deg: f64,
    /// Vertical visual/optical offset, degrees (positive = up).
    pub beta_deg: f64,
    pub n_cornea: f64,
    pub side: EyeSide,
}

impl EyeParams {
    pub fn typical(side: EyeSide) -> Self {
        Self {
            cornea_radius_mm: 7.8,
            cornea_to_pupil_mm: 4.2,
            alpha_deg: 5.0,
            beta_deg: 1.5,
            n_cornea: 1.3375,
            side,
        }
    }

    pub fn validate(&self) -> Result<(), EyeError> {
        if !(self.cornea_radius_mm > 0.0) {
            return Err(EyeError::InvalidParams("cornea radius must be positive"));
        }
        if !(self.cornea_to_pupil_mm > 0.0 && self.cornea_to_pupil_mm < self.cornea_radius_mm) {
            return Err(EyeError::InvalidParams(
                "cornea-to-pupil distance must be in (0, R)",
            ));
        }
        if !(self.alpha_deg.abs() < 15.0 && self.beta_deg.abs() < 15.0) {
            return Err(EyeError::InvalidParams(
                "kappa angles must be below 15 degrees",
            ));
        }
        if !(self.n_cornea > 1.0) {
            return Err(EyeError::InvalidParams(
                "corneal refractive index must exceed 1",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadMode {
    /// The head turns towards each gaze target.
    FollowTarget,
    /// The head stays facing the screen center; only the eyes rotate.
    FaceScreen,
}

/// Instantaneous geometry of one simulated eye.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EyeState {
    pub cornea_center: Vec3,
    pub optical_axis: Vec3,
    pub visual_axis: Vec3,
    pub pupil_center: Vec3,
    pub head_forward: Vec3,
}

/// Rotates the visual axis by the kappa offset: yaw by `alpha` towards the
/// temporal side, then pitch by `beta` towards up, in the frame whose forward
/// is `visual` and whose up is world +Y made orthogonal to it.
pub fn optical_from_visual(
    visual: &Vec3,
    alpha_deg: f64,
    beta_deg: f64,
    side: EyeSide,
) -> Result<Vec3, EyeError> {
    let f = visual.normalize();
    let up = Vec3::y() - f * f.y;
    if up.norm() < 1e-9 {
        return Err(EyeError::GimbalDegenerate);
    }
    let up = up.normalize();
    let right = f.cross(&up);
    let (a, b) = (
        alpha_deg.to_radians() * side.temporal_sign(),
        beta_deg.to_radians(),
    );
    let yawed = f * a.cos() + right * a.sin();
    Ok((yawed * b.cos() + up * b.sin()).normalize())
}

pub fn build_eye_state(
    params: &EyeParams,
    cornea_center: Vec3,
    target: Vec3,
    head_mode: HeadMode,
    screen_center: Vec3,
) -> Result<EyeState, EyeError> {
    let to_target = target - cornea_center;
    if to_target.norm() < 1e-12 {
        return Err(EyeError::DegenerateTarget);
    }
    let visual_axis = to_target.normalize();
    let optical_axis =
        optical_from_visual(&visual_axis, params.alpha_deg, params.beta_deg, params.side)?;
    let head_forward = match head_mode {
        HeadMode::FollowTarget => visual_axis,
        HeadMode::FaceScreen => {
            let v = screen_center - cornea_center;
            if v.norm() < 1e-12 {
                return Err(EyeError::DegenerateTarget);
            }
            v.normalize()
        }
    };
    Ok(EyeState {
        cornea_center,
        optical_axis,
        visual_axis,
        pupil_center: cornea_center + optical_axis * params.cornea_to_pupil_mm,
        head_forward,
    })
}

/// Angle between the visual and optical axes of a state, radians.
pub fn kappa_angle(state: &EyeState) -> f64 {
    angle_between(&state.visual_axis, &state.optical_axis)
}
