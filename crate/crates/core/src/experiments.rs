//! Simulated calibration/test sessions and their accuracy and availability
//! metrics.
//!
//! A scenario calibrates every sensor at one head position, then tests at
//! that position (stationary head) or at positions displaced along one axis
//! at a time (moving head) without recalibrating.

use std::fmt;

use nalgebra::Point2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibration::{
    build_weight_maps, compute_point_stats, fit_bias_correction, CalibrationBundle,
    CalibrationError, CalibrationGrid, CalibrationModel, CalibrationSample, ModelOrder,
    PointObservations, SensorCalibration,
};
use crate::estimator::estimate_raw_por;
use crate::eye::{build_eye_state, EyeError, EyeParams, EyeSide, HeadMode};
use crate::fusion::{fuse, FusionMethod, SensorOutput};
use crate::geometry::{angle_between, Vec3};
use crate::scene::{
    generate_rig, head_yaw_wrt_camera, inject_noise, synthesize_features, CameraRig, FeatureSet,
    LayoutCase, RigGeometry, SceneError, Screen, SensorId,
};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid scenario: {0}")]
    InvalidSpec(String),
    #[error("calibration produced no usable sensor")]
    Uncalibratable,
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Eye(#[from] EyeError),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
}

/// Angle at `eye_position` between the rays to `true_target` and to the
/// estimate lifted onto the screen plane, degrees.
pub fn angular_error(true_target: &Vec3, estimated_por: &Point2<f64>, eye_position: &Vec3) -> f64 {
    let estimate = Vec3::new(estimated_por.x, estimated_por.y, 0.0);
    angle_between(&(true_target - eye_position), &(estimate - eye_position)).to_degrees()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    /// Stationary head: tested at the calibration position only.
    Sh,
    /// Moving head: tested along displacement grids, calibration not refit.
    Mh,
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScenarioKind::Sh => "sh",
            ScenarioKind::Mh => "mh",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    None,
    X,
    Y,
    Z,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::None => "none",
            Axis::X => "x",
            Axis::Y => "y",
            Axis::Z => "z",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Axis::None, Axis::X, Axis::Y, Axis::Z]
            .into_iter()
            .find(|a| a.name() == s)
    }

    fn unit(self) -> Vec3 {
        match self {
            Axis::None => Vec3::zeros(),
            Axis::X => Vec3::x(),
            Axis::Y => Vec3::y(),
            Axis::Z => Vec3::z(),
        }
    }
}

/// Offsets (mm) from the calibration position, per axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Displacements {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
}

impl Default for Displacements {
    fn default() -> Self {
        let grid: Vec<f64> = (-4..=4).map(|i| i as f64 * 50.0).collect();
        Self {
            x: grid.clone(),
            y: grid.clone(),
            z: grid,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScenarioSpec {
    pub name: String,
    pub kind: ScenarioKind,
    pub layout: LayoutCase,
    pub cameras: usize,
    pub noise_levels: Vec<f64>,
    pub calibration_position: Vec3,
    pub displacements: Displacements,
    pub frames_per_calibration_point: usize,
    pub frames_per_test_point: usize,
    pub test_points_per_cell: usize,
    pub seed: u64,
    pub fusion: Vec<FusionMethod>,
    pub head_mode: HeadMode,
    /// Right-eye parameters; the left eye mirrors them.
    pub eye: EyeParams,
    pub binocular: bool,
    pub ipd_mm: f64,
    /// Multiplier on the noise level per camera (index 0 = camera 1). Empty
    /// means 1 for every camera.
    pub camera_noise_scale: Vec<f64>,
    pub calibration_order: ModelOrder,
    pub ridge_lambda: f64,
    pub calibration_margin: f64,
    pub alpha_max_deg: f64,
    pub weight_map_resolution: (usize, usize),
    pub screen: Screen,
    pub rig: RigGeometry,
}

impl ScenarioSpec {
    pub fn new(name: &str, kind: ScenarioKind, layout: LayoutCase, cameras: usize) -> Self {
        Self {
            name: name.to_string(),
            kind,
            layout,
            cameras,
            noise_levels: vec![0.0, 0.1, 0.2, 0.4],
            calibration_position: Vec3::new(0.0, 200.0, 600.0),
            displacements: Displacements::default(),
            frames_per_calibration_point: 100,
            frames_per_test_point: 100,
            test_points_per_cell: 2,
            seed: 0,
            fusion: vec![FusionMethod::Simple],
            head_mode: HeadMode::FollowTarget,
            eye: EyeParams::typical(EyeSide::Right),
            binocular: true,
            ipd_mm: 62.0,
            camera_noise_scale: Vec::new(),
            calibration_order: ModelOrder::Affine,
            ridge_lambda: 1.0,
            calibration_margin: 0.1,
            alpha_max_deg: 45.0,
            weight_map_resolution: (65, 41),
            screen: Screen::default_24inch(),
            rig: RigGeometry::default(),
        }
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: &str| Err(ExperimentError::InvalidSpec(m.to_string()));
        if self.cameras == 0 {
            return bad("at least one camera is required");
        }
        if self.frames_per_calibration_point == 0
            || self.frames_per_test_point == 0
            || self.test_points_per_cell == 0
        {
            return bad("frame and test point counts must be at least 1");
        }
        if self.noise_levels.is_empty()
            || self
                .noise_levels
                .iter()
                .any(|n| !(*n >= 0.0) || !n.is_finite())
        {
            return bad("noise levels must be a non-empty list of finite values >= 0");
        }
        if self
            .camera_noise_scale
            .iter()
            .any(|s| !(*s >= 0.0) || !s.is_finite())
        {
            return bad("camera noise scales must be finite and >= 0");
        }
        if !self.camera_noise_scale.is_empty() && self.camera_noise_scale.len() != self.cameras {
            return bad("camera_noise_scale must list one value per camera");
        }
        if self.fusion.is_empty() {
            return bad("at least one fusion method is required");
        }
        if !(self.alpha_max_deg > 0.0) {
            return bad("alpha_max must be positive");
        }
        if !(self.calibration_margin >= 0.0 && self.calibration_margin < 0.5) {
            return bad("calibration margin must be in [0, 0.5)");
        }
        if !(self.ridge_lambda >= 0.0) {
            return bad("ridge lambda must be >= 0");
        }
        if !(self.ipd_mm >= 0.0) {
            return bad("inter-pupillary distance must be >= 0");
        }
        if !(self.calibration_position.z > 0.0) {
            return bad("the calibration position must be in front of the screen");
        }
        if self.kind == ScenarioKind::Mh {
            let d = &self.displacements;
            if d.x.is_empty() && d.y.is_empty() && d.z.is_empty() {
                return bad("moving-head scenario needs at least one displacement");
            }
            if d.z.iter().any(|z| self.calibration_position.z + z <= 0.0) {
                return bad("z displacement would put the eye behind the screen plane");
            }
        }
        self.eye.validate()?;
        Ok(())
    }

    /// Tested (axis, displacement) pairs in report order.
    pub fn positions(&self) -> Vec<(Axis, f64)> {
        match self.kind {
            ScenarioKind::Sh => vec![(Axis::None, 0.0)],
            ScenarioKind::Mh => {
                let d = &self.displacements;
                d.x.iter()
                    .map(|v| (Axis::X, *v))
                    .chain(d.y.iter().map(|v| (Axis::Y, *v)))
                    .chain(d.z.iter().map(|v| (Axis::Z, *v)))
                    .collect()
            }
        }
    }

    fn eyes(&self) -> Vec<(EyeParams, Vec3)> {
        let right = EyeParams {
            side: EyeSide::Right,
            ..self.eye
        };
        if self.binocular {
            let left = EyeParams {
                side: EyeSide::Left,
                ..self.eye
            };
            let half = self.ipd_mm / 2.0;
            vec![
                (left, Vec3::new(-half, 0.0, 0.0)),
                (right, Vec3::new(half, 0.0, 0.0)),
            ]
        } else {
            vec![(right, Vec3::zeros())]
        }
    }

    fn noise_scale(&self, camera: usize) -> f64 {
        self.camera_noise_scale
            .get(camera - 1)
            .copied()
            .unwrap_or(1.0)
    }
}

/// Seeded random test targets: `per_cell` uniform draws inside each cell of a
/// 3×3 partition of the screen, cells in row-major order from the bottom left.
pub fn test_points(screen: &Screen, seed: u64, per_cell: usize) -> Vec<Point2<f64>> {
    let mut rng = stream(seed, &[STREAM_TEST_POINTS]);
    let (x0, _) = screen.x_range();
    let (cw, ch) = (screen.width / 3.0, screen.height / 3.0);
    let mut out = Vec::with_capacity(9 * per_cell);
    for row in 0..3 {
        for col in 0..3 {
            for _ in 0..per_cell {
                let x = x0 + cw * (col as f64 + rng.gen::<f64>());
                let y = ch * (row as f64 + rng.gen::<f64>());
                out.push(Point2::new(x, y));
            }
        }
    }
    out
}

const STREAM_TEST_POINTS: u64 = 1;
const STREAM_CALIBRATION: u64 = 2;
const STREAM_TEST: u64 = 3;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent random stream identified by the seed and a path of indices.
pub fn stream(seed: u64, path: &[u64]) -> ChaCha8Rng {
    let key = path
        .iter()
        .fold(splitmix(seed), |acc, &p| splitmix(acc ^ splitmix(p)));
    ChaCha8Rng::seed_from_u64(key)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub scenario: String,
    pub layout: LayoutCase,
    pub cameras: usize,
    pub fusion: FusionMethod,
    pub noise: f64,
    pub axis: Axis,
    pub displacement_mm: f64,
    /// Mean over frames with a fused output; `None` when there were none.
    pub mean_error_deg: Option<f64>,
    pub availability_pct: f64,
    pub n_frames: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorRow {
    pub noise: f64,
    pub axis: Axis,
    pub displacement_mm: f64,
    pub sensor: SensorId,
    pub mean_error_deg: Option<f64>,
    pub availability_pct: f64,
    pub n_frames: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseCalibration {
    pub noise: f64,
    pub bundle: CalibrationBundle,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub scenario: String,
    pub kind: ScenarioKind,
    pub layout: LayoutCase,
    pub cameras: usize,
    pub rows: Vec<MetricsRow>,
    pub sensor_rows: Vec<SensorRow>,
    pub calibrations: Vec<NoiseCalibration>,
}

impl MetricsReport {
    pub fn row(
        &self,
        fusion: FusionMethod,
        noise: f64,
        axis: Axis,
        displacement_mm: f64,
    ) -> Option<&MetricsRow> {
        self.rows.iter().find(|r| {
            r.fusion == fusion
                && r.noise == noise
                && r.axis == axis
                && r.displacement_mm == displacement_mm
        })
    }
}

/// Fixed scene objects shared by every work unit of a run.
struct World<'a> {
    spec: &'a ScenarioSpec,
    rig: CameraRig,
    eyes: Vec<(EyeParams, Vec3)>,
    sensors: Vec<SensorId>,
}

/// Noise-free observations of one fixation.
struct Fixation {
    target: Vec3,
    head: Vec3,
    /// Per sensor, in `World::sensors` order.
    features: Vec<FeatureSet>,
    eye_positions: Vec<Vec3>,
    /// Per camera.
    yaws: Vec<f64>,
}

impl<'a> World<'a> {
    fn new(spec: &'a ScenarioSpec) -> Result<Self, ExperimentError> {
        let rig = generate_rig(spec.layout, spec.cameras, &spec.screen, &spec.rig)?;
        let eyes = spec.eyes();
        let sensors = (1..=spec.cameras)
            .flat_map(|c| eyes.iter().map(move |(p, _)| SensorId::new(c, p.side)))
            .collect();
        Ok(Self {
            spec,
            rig,
            eyes,
            sensors,
        })
    }

    fn fixation(&self, head: Vec3, target: Vec3) -> Result<Fixation, ExperimentError> {
        let screen = &self.spec.screen;
        let states = self
            .eyes
            .iter()
            .map(|(params, offset)| {
                build_eye_state(
                    params,
                    head + offset,
                    target,
                    self.spec.head_mode,
                    screen.center(),
                )
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut features = Vec::with_capacity(self.sensors.len());
        let mut eye_positions = Vec::with_capacity(self.sensors.len());
        for camera in &self.rig.cameras {
            for ((params, _), state) in self.eyes.iter().zip(&states) {
                features.push(synthesize_features(screen, state, params, camera));
                eye_positions.push(state.cornea_center);
            }
        }
        let head_forward = match self.spec.head_mode {
            HeadMode::FollowTarget => (target - head).normalize(),
            HeadMode::FaceScreen => (screen.center() - head).normalize(),
        };
        let yaws = self
            .rig
            .cameras
            .iter()
            .map(|c| head_yaw_wrt_camera(&head_forward, &head, c))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Fixation {
            target,
            head,
            features,
            eye_positions,
            yaws,
        })
    }

    /// Noisy raw estimates of every sensor for one frame.
    fn raw_frame(
        &self,
        fixation: &Fixation,
        level: f64,
        rng: &mut ChaCha8Rng,
    ) -> Vec<Option<Point2<f64>>> {
        self.sensors
            .iter()
            .zip(&fixation.features)
            .map(|(sensor, f)| {
                let noisy = inject_noise(f, level * self.spec.noise_scale(sensor.camera), rng);
                estimate_raw_por(&noisy, &self.spec.screen, *sensor)
                    .ok()
                    .map(|g| g.por)
            })
            .collect()
    }
}

struct Calibrated {
    models: Vec<Option<CalibrationModel>>,
    bundle: CalibrationBundle,
}

fn calibrate(world: &World, noise_index: usize, level: f64) -> Result<Calibrated, ExperimentError> {
    let spec = world.spec;
    let grid = CalibrationGrid::nine_point(&spec.screen, spec.calibration_margin);
    let n_sensors = world.sensors.len();
    let mut raw: Vec<Vec<Vec<Option<Point2<f64>>>>> =
        vec![Vec::with_capacity(grid.len()); n_sensors];
    let mut fixations = Vec::with_capacity(grid.len());
    for (k, target) in grid.points().iter().enumerate() {
        let fixation = world.fixation(
            spec.calibration_position,
            Vec3::new(target.x, target.y, 0.0),
        )?;
        let mut per_sensor = vec![Vec::with_capacity(spec.frames_per_calibration_point); n_sensors];
        for j in 0..spec.frames_per_calibration_point {
            let mut rng = stream(
                spec.seed,
                &[STREAM_CALIBRATION, noise_index as u64, k as u64, j as u64],
            );
            for (s, est) in world
                .raw_frame(&fixation, level, &mut rng)
                .into_iter()
                .enumerate()
            {
                per_sensor[s].push(est);
            }
        }
        for (s, frames) in per_sensor.into_iter().enumerate() {
            raw[s].push(frames);
        }
        fixations.push(fixation);
    }

    let mut models = Vec::with_capacity(n_sensors);
    for (s, sensor) in world.sensors.iter().enumerate() {
        let samples: Vec<CalibrationSample> = raw[s]
            .iter()
            .enumerate()
            .flat_map(|(k, frames)| {
                let target = grid.point(k);
                frames.iter().enumerate().filter_map(move |(j, est)| {
                    est.map(|por| CalibrationSample {
                        raw: crate::estimator::RawGaze {
                            por,
                            sensor: *sensor,
                        },
                        target,
                        point_index: k,
                        frame_index: j,
                    })
                })
            })
            .collect();
        models.push(fit_bias_correction(&samples, spec.ridge_lambda, spec.calibration_order).ok());
    }
    if models.iter().all(Option::is_none) {
        return Err(ExperimentError::Uncalibratable);
    }

    let weight_maps = if spec.fusion.contains(&FusionMethod::Behavior) {
        let mut groups = Vec::with_capacity(n_sensors * grid.len());
        for (s, sensor) in world.sensors.iter().enumerate() {
            for (k, fixation) in fixations.iter().enumerate() {
                let samples = raw[s][k]
                    .iter()
                    .map(|est| match (est, &models[s]) {
                        (Some(p), Some(m)) => Some(m.apply(p)),
                        _ => None,
                    })
                    .collect();
                groups.push(PointObservations {
                    sensor: *sensor,
                    point_index: k,
                    target: fixation.target,
                    eye_position: fixation.eye_positions[s],
                    samples,
                });
            }
        }
        let stats = compute_point_stats(&groups);
        Some(build_weight_maps(
            &stats,
            &world.sensors,
            &grid,
            &spec.screen,
            spec.weight_map_resolution,
        )?)
    } else {
        None
    };

    let bundle = CalibrationBundle::new(
        world
            .sensors
            .iter()
            .zip(&models)
            .filter_map(|(sensor, m)| {
                m.clone().map(|model| SensorCalibration {
                    sensor: *sensor,
                    model,
                })
            })
            .collect(),
        weight_maps,
    );
    Ok(Calibrated { models, bundle })
}

#[derive(Default, Clone)]
struct Accumulator {
    error_sum: f64,
    available: usize,
    frames: usize,
}

impl Accumulator {
    fn add(&mut self, error: Option<f64>) {
        self.frames += 1;
        if let Some(e) = error {
            self.error_sum += e;
            self.available += 1;
        }
    }

    fn mean(&self) -> Option<f64> {
        (self.available > 0).then(|| self.error_sum / self.available as f64)
    }

    fn availability_pct(&self) -> f64 {
        if self.frames == 0 {
            0.0
        } else {
            100.0 * self.available as f64 / self.frames as f64
        }
    }
}

struct UnitResult {
    fused: Vec<Accumulator>,
    sensors: Vec<Accumulator>,
}

fn test_unit(
    world: &World,
    calibrated: &Calibrated,
    targets: &[Point2<f64>],
    noise_index: usize,
    level: f64,
    position_index: usize,
    head: Vec3,
) -> Result<UnitResult, ExperimentError> {
    let spec = world.spec;
    let mut fused = vec![Accumulator::default(); spec.fusion.len()];
    let mut sensors = vec![Accumulator::default(); world.sensors.len()];
    let maps = calibrated.bundle.weight_maps.as_ref();
    let eyes_per_camera = world.eyes.len();
    for (t, target) in targets.iter().enumerate() {
        let fixation = world.fixation(head, Vec3::new(target.x, target.y, 0.0))?;
        for f in 0..spec.frames_per_test_point {
            let mut rng = stream(
                spec.seed,
                &[
                    STREAM_TEST,
                    noise_index as u64,
                    position_index as u64,
                    t as u64,
                    f as u64,
                ],
            );
            let raw = world.raw_frame(&fixation, level, &mut rng);
            let outputs: Vec<SensorOutput> = world
                .sensors
                .iter()
                .enumerate()
                .map(|(s, sensor)| {
                    let corrected = match (&raw[s], &calibrated.models[s]) {
                        (Some(p), Some(m)) => Some(m.apply(p)),
                        _ => None,
                    };
                    SensorOutput {
                        sensor: *sensor,
                        por: corrected.unwrap_or_else(Point2::origin),
                        available: corrected.is_some(),
                        head_yaw_deg: fixation.yaws[s / eyes_per_camera],
                    }
                })
                .collect();
            for (s, o) in outputs.iter().enumerate() {
                sensors[s].add(
                    o.available.then(|| {
                        angular_error(&fixation.target, &o.por, &fixation.eye_positions[s])
                    }),
                );
            }
            for (m, method) in spec.fusion.iter().enumerate() {
                let g = fuse(*method, &outputs, spec.alpha_max_deg, maps, &spec.screen);
                fused[m].add(
                    g.por
                        .map(|p| angular_error(&fixation.target, &p, &fixation.head)),
                );
            }
        }
    }
    Ok(UnitResult { fused, sensors })
}

/// Runs calibration and test phases for every noise level and tested
/// position. Work units run in parallel on the current rayon pool; results
/// are assembled in (position, noise) order, so the report does not depend on
/// scheduling.
pub fn run_scenario(spec: &ScenarioSpec) -> Result<MetricsReport, ExperimentError> {
    spec.validate()?;
    let world = World::new(spec)?;
    let targets = test_points(&spec.screen, spec.seed, spec.test_points_per_cell);
    let positions = spec.positions();

    let calibrations = spec
        .noise_levels
        .par_iter()
        .enumerate()
        .map(|(ni, &level)| calibrate(&world, ni, level))
        .collect::<Result<Vec<_>, _>>()?;

    let units: Vec<(usize, usize)> = (0..positions.len())
        .flat_map(|pi| (0..spec.noise_levels.len()).map(move |ni| (pi, ni)))
        .collect();
    let results = units
        .par_iter()
        .map(|&(pi, ni)| {
            let (axis, d) = positions[pi];
            let head = spec.calibration_position + axis.unit() * d;
            test_unit(
                &world,
                &calibrations[ni],
                &targets,
                ni,
                spec.noise_levels[ni],
                pi,
                head,
            )
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut rows = Vec::new();
    let mut sensor_rows = Vec::new();
    for (&(pi, ni), result) in units.iter().zip(&results) {
        let (axis, displacement_mm) = positions[pi];
        let noise = spec.noise_levels[ni];
        for (method, acc) in spec.fusion.iter().zip(&result.fused) {
            rows.push(MetricsRow {
                scenario: spec.name.clone(),
                layout: spec.layout,
                cameras: spec.cameras,
                fusion: *method,
                noise,
                axis,
                displacement_mm,
                mean_error_deg: acc.mean(),
                availability_pct: acc.availability_pct(),
                n_frames: acc.frames,
            });
        }
        for (sensor, acc) in world.sensors.iter().zip(&result.sensors) {
            sensor_rows.push(SensorRow {
                noise,
                axis,
                displacement_mm,
                sensor: *sensor,
                mean_error_deg: acc.mean(),
                availability_pct: acc.availability_pct(),
                n_frames: acc.frames,
            });
        }
    }

    Ok(MetricsReport {
        scenario: spec.name.clone(),
        kind: spec.kind,
        layout: spec.layout,
        cameras: spec.cameras,
        rows,
        sensor_rows,
        calibrations: spec
            .noise_levels
            .iter()
            .zip(calibrations)
            .map(|(&noise, c)| NoiseCalibration {
                noise,
                bundle: c.bundle,
            })
            .collect(),
    })
}
