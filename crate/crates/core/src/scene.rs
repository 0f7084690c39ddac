//! World construction and per-frame feature synthesis.
//!
//! The screen lies in the plane z = 0 with its origin at the midpoint of the
//! bottom edge, +Y up, +X to the viewer's right and +Z towards the viewer.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eye::{EyeParams, EyeSide, EyeState};
use crate::geometry::{
    has_collinear_triple, reflect_on_sphere, refract_entry_point, GeometryError, Intrinsics,
    PinholeCamera, Pixel, ProjectionFailure, Vec3,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SceneError {
    #[error("invalid scene: {0}")]
    Invalid(&'static str),
    #[error("head yaw undefined: direction has no horizontal component")]
    YawUndefined,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Display with four corner light sources, ordered TL, TR, BR, BL.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Screen {
    pub width: f64,
    pub height: f64,
    pub leds: [Vec3; 4],
}

impl Screen {
    pub fn new(width: f64, height: f64) -> Result<Self, SceneError> {
        if !(width > 0.0 && height > 0.0) {
            return Err(SceneError::Invalid("screen dimensions must be positive"));
        }
        let hw = width / 2.0;
        Ok(Self {
            width,
            height,
            leds: [
                Vec3::new(-hw, height, 0.0),
                Vec3::new(hw, height, 0.0),
                Vec3::new(hw, 0.0, 0.0),
                Vec3::new(-hw, 0.0, 0.0),
            ],
        })
    }

    /// 24-inch 16:10 monitor.
    pub fn default_24inch() -> Self {
        Self::new(517.0, 323.0).expect("static dimensions")
    }

    pub fn center(&self) -> Vec3 {
        Vec3::new(0.0, self.height / 2.0, 0.0)
    }

    pub fn x_range(&self) -> (f64, f64) {
        (-self.width / 2.0, self.width / 2.0)
    }

    pub fn y_range(&self) -> (f64, f64) {
        (0.0, self.height)
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (x0, x1) = self.x_range();
        x >= x0 && x <= x1 && y >= 0.0 && y <= self.height
    }

    pub fn clamp(&self, x: f64, y: f64) -> (f64, f64) {
        let (x0, x1) = self.x_range();
        (x.clamp(x0, x1), y.clamp(0.0, self.height))
    }

    /// Screen-plane (X, Y) coordinates of the LEDs.
    pub fn led_points(&self) -> [Pixel; 4] {
        self.leds.map(|l| Pixel::new(l.x, l.y))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayoutCase {
    /// Cameras clustered in a row under the screen (single view).
    Case0,
    /// Cameras distributed around the screen border (multi view).
    Case1,
}

impl fmt::Display for LayoutCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LayoutCase::Case0 => "case0",
            LayoutCase::Case1 => "case1",
        })
    }
}

#[derive(Debug, Clone)]
pub struct CameraRig {
    pub layout: LayoutCase,
    pub cameras: Vec<PinholeCamera>,
}

impl CameraRig {
    pub fn count(&self) -> usize {
        self.cameras.len()
    }
}

/// Geometry knobs of [`generate_rig`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigGeometry {
    /// Distance from the screen edge to the camera row / ring, mm.
    pub standoff_mm: f64,
    /// Camera spacing of the case-0 row, mm. Tightened when the row would be
    /// wider than the screen.
    pub row_spacing_mm: f64,
    /// Every camera's optical axis passes through this point.
    pub aim: Vec3,
    pub intrinsics: Intrinsics,
}

impl Default for RigGeometry {
    fn default() -> Self {
        Self {
            standoff_mm: 50.0,
            row_spacing_mm: 50.0,
            aim: Vec3::new(0.0, 200.0, 600.0),
            intrinsics: Intrinsics::default(),
        }
    }
}

/// Camera positions (before aiming) for a layout.
pub fn rig_positions(
    layout: LayoutCase,
    count: usize,
    screen: &Screen,
    geometry: &RigGeometry,
) -> Vec<Vec3> {
    let s = geometry.standoff_mm;
    match layout {
        LayoutCase::Case0 => {
            // The row is kept within the screen width by tightening the spacing.
            let half = (count as f64 - 1.0) / 2.0;
            let spacing = if count > 1 {
                geometry
                    .row_spacing_mm
                    .min(screen.width / (count as f64 - 1.0))
            } else {
                0.0
            };
            (0..count)
                .map(|i| Vec3::new((i as f64 - half) * spacing, -s, 0.0))
                .collect()
        }
        LayoutCase::Case1 if count == 3 => {
            let mid = screen.height / 2.0;
            let side = screen.width / 2.0 + s;
            vec![
                Vec3::new(0.0, -s, 0.0),
                Vec3::new(-side, mid, 0.0),
                Vec3::new(side, mid, 0.0),
            ]
        }
        LayoutCase::Case1 => {
            // Equal arc-length steps along the screen border grown by the
            // standoff, counter-clockwise from the bottom center.
            let hw = screen.width / 2.0 + s;
            let (y0, y1) = (-s, screen.height + s);
            let h = y1 - y0;
            let w = 2.0 * hw;
            let perimeter = 2.0 * (w + h);
            (0..count)
                .map(|i| {
                    let mut d = perimeter * i as f64 / count as f64;
                    if d < hw {
                        return Vec3::new(d, y0, 0.0);
                    }
                    d -= hw;
                    if d < h {
                        return Vec3::new(hw, y0 + d, 0.0);
                    }
                    d -= h;
                    if d < w {
                        return Vec3::new(hw - d, y1, 0.0);
                    }
                    d -= w;
                    if d < h {
                        return Vec3::new(-hw, y1 - d, 0.0);
                    }
                    d -= h;
                    Vec3::new(-hw + d, y0, 0.0)
                })
                .collect()
        }
    }
}

pub fn generate_rig(
    layout: LayoutCase,
    count: usize,
    screen: &Screen,
    geometry: &RigGeometry,
) -> Result<CameraRig, SceneError> {
    if count == 0 {
        return Err(SceneError::Invalid("a rig needs at least one camera"));
    }
    let cameras = rig_positions(layout, count, screen, geometry)
        .into_iter()
        .map(|p| PinholeCamera::look_at(p, geometry.aim, Vec3::y(), geometry.intrinsics))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(CameraRig { layout, cameras })
}

/// One gaze sensor: a (camera, eye) pair. Cameras are numbered from 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SensorId {
    pub camera: usize,
    pub eye: EyeSide,
}

impl SensorId {
    pub fn new(camera: usize, eye: EyeSide) -> Self {
        Self { camera, eye }
    }
}

impl fmt::Display for SensorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "c{}{}", self.camera, self.eye.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InvalidReason {
    OutOfFov,
    BehindCamera,
    NoReflection,
    NoRefraction,
    Degenerate,
}

/// Image features of one eye in one camera, one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureSet {
    /// Glint i is the reflection of LED i.
    pub glints: [Pixel; 4],
    pub pupil: Pixel,
    pub invalid_reason: Option<InvalidReason>,
}

impl FeatureSet {
    fn invalid(reason: InvalidReason) -> Self {
        Self {
            glints: [Pixel::origin(); 4],
            pupil: Pixel::origin(),
            invalid_reason: Some(reason),
        }
    }

    pub fn is_valid(&self) -> bool {
        self.invalid_reason.is_none()
    }
}

fn quad_area(q: &[Pixel; 4]) -> f64 {
    let mut twice = 0.0;
    for i in 0..4 {
        let (a, b) = (q[i], q[(i + 1) % 4]);
        twice += a.x * b.y - b.x * a.y;
    }
    twice.abs() / 2.0
}

fn projection_reason(f: ProjectionFailure) -> InvalidReason {
    match f {
        ProjectionFailure::Behind => InvalidReason::BehindCamera,
        ProjectionFailure::Degenerate => InvalidReason::Degenerate,
    }
}

/// Noise-free features of `eye` as imaged by `camera`.
pub fn synthesize_features(
    screen: &Screen,
    eye: &EyeState,
    params: &EyeParams,
    camera: &PinholeCamera,
) -> FeatureSet {
    let cam_center = camera.center();
    let c = eye.cornea_center;
    let r = params.cornea_radius_mm;
    let image = |p: Vec3| -> Result<Pixel, InvalidReason> {
        let px = camera.project(&p).map_err(projection_reason)?;
        if camera.in_bounds(&px) {
            Ok(px)
        } else {
            Err(InvalidReason::OutOfFov)
        }
    };

    let mut glints = [Pixel::origin(); 4];
    for (g, led) in glints.iter_mut().zip(screen.leds.iter()) {
        let q = match reflect_on_sphere(&c, r, led, &cam_center) {
            Ok(q) => q,
            Err(_) => return FeatureSet::invalid(InvalidReason::NoReflection),
        };
        match image(q) {
            Ok(px) => *g = px,
            Err(reason) => return FeatureSet::invalid(reason),
        }
    }
    let entry =
        match refract_entry_point(&c, r, &cam_center, &eye.pupil_center, 1.0, params.n_cornea) {
            Ok(q) => q,
            Err(_) => return FeatureSet::invalid(InvalidReason::NoRefraction),
        };
    let pupil = match image(entry) {
        Ok(px) => px,
        Err(reason) => return FeatureSet::invalid(reason),
    };
    if has_collinear_triple(&glints) || quad_area(&glints) <= 1.0 {
        return FeatureSet::invalid(InvalidReason::Degenerate);
    }
    FeatureSet {
        glints,
        pupil,
        invalid_reason: None,
    }
}

/// Perturbs every coordinate of the five features by an independent uniform
/// draw in `[-level, level]` pixels. `level == 0` returns the input unchanged
/// and consumes no randomness.
pub fn inject_noise<R: Rng + ?Sized>(features: &FeatureSet, level: f64, rng: &mut R) -> FeatureSet {
    if level <= 0.0 {
        return *features;
    }
    let mut jitter = |p: &Pixel| {
        Pixel::new(
            p.x + rng.gen_range(-level..=level),
            p.y + rng.gen_range(-level..=level),
        )
    };
    let glints = [
        jitter(&features.glints[0]),
        jitter(&features.glints[1]),
        jitter(&features.glints[2]),
        jitter(&features.glints[3]),
    ];
    let pupil = jitter(&features.pupil);
    FeatureSet {
        glints,
        pupil,
        invalid_reason: features.invalid_reason,
    }
}

/// Unsigned horizontal (XZ-plane) angle between the head direction and the
/// direction from the head to the camera, degrees.
pub fn head_yaw_wrt_camera(
    head_forward: &Vec3,
    eye_pos: &Vec3,
    camera: &PinholeCamera,
) -> Result<f64, SceneError> {
    let to_cam = camera.center() - eye_pos;
    let flat = |v: &Vec3| {
        let h = Vec3::new(v.x, 0.0, v.z);
        if h.norm() < 1e-12 {
            Err(SceneError::YawUndefined)
        } else {
            Ok(h.normalize())
        }
    };
    let (a, b) = (flat(head_forward)?, flat(&to_cam)?);
    Ok(crate::geometry::angle_between(&a, &b).to_degrees())
}
