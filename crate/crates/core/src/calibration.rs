//! Person-specific bias correction and calibration-derived fusion weights.
//!
//! Each sensor gets its own ridge-regularized polynomial map from raw to
//! corrected screen coordinates. The same calibration data, once corrected,
//! yields per-point reliability statistics that are turned into per-sensor
//! weight maps over the screen.

use nalgebra::{DMatrix, Point2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimator::RawGaze;
use crate::experiments::angular_error;
use crate::geometry::Vec3;
use crate::scene::{Screen, SensorId};

/// Floor added to the per-point error before taking its reciprocal, degrees.
pub const SCORE_EPSILON_DEG: f64 = 0.05;
pub const BUNDLE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CalibrationError {
    #[error("insufficient calibration data: {0}")]
    InsufficientData(String),
    #[error("ill-conditioned calibration design")]
    IllConditioned,
    #[error("no sensor is available at calibration point {0}")]
    UncalibratablePoint(usize),
    #[error("invalid calibration input: {0}")]
    Invalid(&'static str),
    #[error("unsupported calibration bundle version {0}")]
    UnsupportedVersion(u32),
    #[error("calibration bundle: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationSample {
    pub raw: RawGaze,
    pub target: Point2<f64>,
    pub point_index: usize,
    pub frame_index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelOrder {
    /// `[1, x, y]`
    Affine,
    /// `[1, x, y, x², xy, y²]`
    Quadratic,
}

impl ModelOrder {
    pub fn terms(self) -> usize {
        match self {
            ModelOrder::Affine => 3,
            ModelOrder::Quadratic => 6,
        }
    }

    fn min_samples(self) -> usize {
        2 * self.terms()
    }

    fn min_targets(self) -> usize {
        match self {
            ModelOrder::Affine => 3,
            ModelOrder::Quadratic => 5,
        }
    }
}

/// Correction map `F`. Inputs are standardized with `input_offset` and
/// `input_scale` before the polynomial terms are formed; the ridge penalty
/// acts on the standardized non-intercept coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationModel {
    pub order: ModelOrder,
    pub lambda: f64,
    pub input_offset: [f64; 2],
    pub input_scale: f64,
    /// Row 0 predicts x, row 1 predicts y; columns follow `order`'s terms.
    pub coefficients: [Vec<f64>; 2],
    /// Root-mean-square training residual, mm.
    pub residual_rms_mm: f64,
}

impl CalibrationModel {
    pub fn identity() -> Self {
        Self {
            order: ModelOrder::Affine,
            lambda: 0.0,
            input_offset: [0.0, 0.0],
            input_scale: 1.0,
            coefficients: [vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]],
            residual_rms_mm: 0.0,
        }
    }

    fn terms(&self, p: &Point2<f64>) -> Vec<f64> {
        polynomial_terms(
            self.order,
            (p.x - self.input_offset[0]) / self.input_scale,
            (p.y - self.input_offset[1]) / self.input_scale,
        )
    }

    pub fn apply(&self, p: &Point2<f64>) -> Point2<f64> {
        let t = self.terms(p);
        let dot = |c: &Vec<f64>| c.iter().zip(&t).map(|(a, b)| a * b).sum::<f64>();
        Point2::new(dot(&self.coefficients[0]), dot(&self.coefficients[1]))
    }
}

fn polynomial_terms(order: ModelOrder, u: f64, v: f64) -> Vec<f64> {
    match order {
        ModelOrder::Affine => vec![1.0, u, v],
        ModelOrder::Quadratic => vec![1.0, u, v, u * u, u * v, v * v],
    }
}

fn distinct_targets(samples: &[CalibrationSample]) -> Vec<Point2<f64>> {
    let mut out: Vec<Point2<f64>> = Vec::new();
    for s in samples {
        if !out.iter().any(|t| (t - s.target).norm() < 1e-9) {
            out.push(s.target);
        }
    }
    out
}

fn spans_plane(targets: &[Point2<f64>]) -> bool {
    let Some(a) = targets.first() else {
        return false;
    };
    let Some(b) = targets
        .iter()
        .max_by(|p, q| (*p - a).norm().total_cmp(&(*q - a).norm()))
    else {
        return false;
    };
    let d = b - a;
    let len = d.norm();
    len > 0.0
        && targets.iter().any(|c| {
            let e = c - a;
            (d.x * e.y - d.y * e.x).abs() > 1e-9 * len * len
        })
}

/// Minimizes `Σ‖P − F(Z)‖² + λ‖β_{non-intercept}‖²` in closed form.
pub fn fit_bias_correction(
    samples: &[CalibrationSample],
    lambda: f64,
    order: ModelOrder,
) -> Result<CalibrationModel, CalibrationError> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(CalibrationError::Invalid(
            "lambda must be a finite non-negative number",
        ));
    }
    let targets = distinct_targets(samples);
    if samples.len() < order.min_samples()
        || targets.len() < order.min_targets()
        || !spans_plane(&targets)
    {
        return Err(CalibrationError::InsufficientData(format!(
            "{order:?} model needs >= {} samples over >= {} non-collinear targets, got {} samples over {} targets",
            order.min_samples(),
            order.min_targets(),
            samples.len(),
            targets.len()
        )));
    }
    let n = samples.len() as f64;
    let ox = samples.iter().map(|s| s.raw.por.x).sum::<f64>() / n;
    let oy = samples.iter().map(|s| s.raw.por.y).sum::<f64>() / n;
    let var = samples
        .iter()
        .map(|s| (s.raw.por.x - ox).powi(2) + (s.raw.por.y - oy).powi(2))
        .sum::<f64>()
        / n;
    let scale = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };

    let p = order.terms();
    let x = DMatrix::from_fn(samples.len(), p, |i, j| {
        let z = samples[i].raw.por;
        polynomial_terms(order, (z.x - ox) / scale, (z.y - oy) / scale)[j]
    });
    let y = DMatrix::from_fn(samples.len(), 2, |i, j| samples[i].target[j]);

    let mut normal = x.transpose() * &x;
    for j in 1..p {
        normal[(j, j)] += lambda;
    }
    let eig = normal.clone().symmetric_eigenvalues();
    let (min, max) = eig.iter().fold((f64::INFINITY, 0.0_f64), |(lo, hi), &v| {
        (lo.min(v), hi.max(v.abs()))
    });
    if !(min > 1e-12 * max) {
        return Err(CalibrationError::IllConditioned);
    }
    let chol = normal.cholesky().ok_or(CalibrationError::IllConditioned)?;
    let beta = chol.solve(&(x.transpose() * &y));

    let fitted = &x * &beta;
    let sq: f64 = (fitted - &y).iter().map(|r| r * r).sum();
    Ok(CalibrationModel {
        order,
        lambda,
        input_offset: [ox, oy],
        input_scale: scale,
        coefficients: [
            beta.column(0).iter().copied().collect(),
            beta.column(1).iter().copied().collect(),
        ],
        residual_rms_mm: (sq / n).sqrt(),
    })
}

/// `F(raw.por)`. Results outside the screen are returned as is.
pub fn apply_bias_correction(model: &CalibrationModel, raw: &RawGaze) -> Point2<f64> {
    model.apply(&raw.por)
}

/// Calibrated outputs of one sensor while the user fixated one calibration
/// point; `None` marks frames without an output.
#[derive(Debug, Clone, PartialEq)]
pub struct PointObservations {
    pub sensor: SensorId,
    pub point_index: usize,
    pub target: Vec3,
    pub eye_position: Vec3,
    pub samples: Vec<Option<Point2<f64>>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorPointStats {
    pub sensor: SensorId,
    pub point_index: usize,
    /// Mean angular error of the available samples, degrees; `None` when no
    /// sample was available.
    pub mean_error_deg: Option<f64>,
    pub availability: f64,
    pub samples: usize,
}

pub fn compute_point_stats(groups: &[PointObservations]) -> Vec<SensorPointStats> {
    groups
        .iter()
        .map(|g| {
            let errors: Vec<f64> = g
                .samples
                .iter()
                .flatten()
                .map(|p| angular_error(&g.target, p, &g.eye_position))
                .collect();
            let total = g.samples.len();
            SensorPointStats {
                sensor: g.sensor,
                point_index: g.point_index,
                mean_error_deg: (!errors.is_empty())
                    .then(|| errors.iter().sum::<f64>() / errors.len() as f64),
                availability: if total == 0 {
                    0.0
                } else {
                    errors.len() as f64 / total as f64
                },
                samples: total,
            }
        })
        .collect()
}

/// Rectilinear grid of calibration points. Point `k` sits at
/// `(xs[k % xs.len()], ys[k / xs.len()])`; both axes are ascending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationGrid {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
}

impl CalibrationGrid {
    /// 3×3 grid inset from the screen border by `margin` of each dimension.
    pub fn nine_point(screen: &Screen, margin: f64) -> Self {
        let (x0, x1) = screen.x_range();
        let (y0, y1) = screen.y_range();
        let mx = margin * screen.width;
        let my = margin * screen.height;
        Self {
            xs: vec![x0 + mx, (x0 + x1) / 2.0, x1 - mx],
            ys: vec![y0 + my, (y0 + y1) / 2.0, y1 - my],
        }
    }

    pub fn len(&self) -> usize {
        self.xs.len() * self.ys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn point(&self, k: usize) -> Point2<f64> {
        Point2::new(self.xs[k % self.xs.len()], self.ys[k / self.xs.len()])
    }

    pub fn points(&self) -> Vec<Point2<f64>> {
        (0..self.len()).map(|k| self.point(k)).collect()
    }
}

/// Per-point reliability: availability over (error + ε).
pub fn reliability_score(stats: &SensorPointStats) -> f64 {
    match stats.mean_error_deg {
        Some(err) if stats.availability > 0.0 => stats.availability / (err + SCORE_EPSILON_DEG),
        _ => 0.0,
    }
}

/// Bilinear interpolation of knot values with clamped extrapolation.
fn bilinear(xs: &[f64], ys: &[f64], value: impl Fn(usize, usize) -> f64, x: f64, y: f64) -> f64 {
    fn locate(knots: &[f64], t: f64) -> (usize, usize, f64) {
        if knots.len() == 1 || t <= knots[0] {
            return (0, 0, 0.0);
        }
        let last = knots.len() - 1;
        if t >= knots[last] {
            return (last, last, 0.0);
        }
        let i = knots
            .iter()
            .rposition(|&k| k <= t)
            .unwrap_or(0)
            .min(last - 1);
        let f = (t - knots[i]) / (knots[i + 1] - knots[i]);
        (i, i + 1, f)
    }
    let (i0, i1, fx) = locate(xs, x);
    let (j0, j1, fy) = locate(ys, y);
    let bottom = value(i0, j0) * (1.0 - fx) + value(i1, j0) * fx;
    let top = value(i0, j1) * (1.0 - fx) + value(i1, j1) * fx;
    bottom * (1.0 - fy) + top * fy
}

/// Per-sensor fusion weight fields sampled on a regular grid covering the
/// screen. At every node the weights of all sensors sum to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightMaps {
    pub sensors: Vec<SensorId>,
    pub nx: usize,
    pub ny: usize,
    pub x_range: [f64; 2],
    pub y_range: [f64; 2],
    /// `values[s][j * nx + i]` is sensor `s` at node `(i, j)`.
    pub values: Vec<Vec<f64>>,
}

impl WeightMaps {
    pub fn node_xs(&self) -> Vec<f64> {
        linspace(self.x_range, self.nx)
    }

    pub fn node_ys(&self) -> Vec<f64> {
        linspace(self.y_range, self.ny)
    }

    pub fn sensor_index(&self, sensor: SensorId) -> Option<usize> {
        self.sensors.iter().position(|s| *s == sensor)
    }

    /// Bilinear lookup, clamped to the mapped rectangle. Unknown sensors get 0.
    pub fn lookup(&self, sensor: SensorId, x: f64, y: f64) -> f64 {
        let Some(s) = self.sensor_index(sensor) else {
            return 0.0;
        };
        let values = &self.values[s];
        bilinear(
            &self.node_xs(),
            &self.node_ys(),
            |i, j| values[j * self.nx + i],
            x,
            y,
        )
    }
}

fn linspace(range: [f64; 2], n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![(range[0] + range[1]) / 2.0];
    }
    (0..n)
        .map(|i| range[0] + (range[1] - range[0]) * i as f64 / (n - 1) as f64)
        .collect()
}

/// Builds the maps from per-point statistics. `sensors` fixes the map order;
/// sensors without statistics get zero weight everywhere.
pub fn build_weight_maps(
    stats: &[SensorPointStats],
    sensors: &[SensorId],
    grid: &CalibrationGrid,
    screen: &Screen,
    resolution: (usize, usize),
) -> Result<WeightMaps, CalibrationError> {
    let (nx, ny) = resolution;
    if nx == 0 || ny == 0 {
        return Err(CalibrationError::Invalid(
            "weight map resolution must be positive",
        ));
    }
    if grid.is_empty() {
        return Err(CalibrationError::Invalid("empty calibration grid"));
    }
    // point_weights[s][k]
    let mut point_weights = vec![vec![0.0; grid.len()]; sensors.len()];
    for k in 0..grid.len() {
        let mut total = 0.0;
        for (s, sensor) in sensors.iter().enumerate() {
            let score: f64 = stats
                .iter()
                .filter(|st| st.sensor == *sensor && st.point_index == k)
                .map(reliability_score)
                .sum();
            point_weights[s][k] = score;
            total += score;
        }
        if !(total > 0.0) {
            return Err(CalibrationError::UncalibratablePoint(k));
        }
        for w in point_weights.iter_mut() {
            w[k] /= total;
        }
    }

    let (x0, x1) = screen.x_range();
    let (y0, y1) = screen.y_range();
    let x_range = [x0, x1];
    let y_range = [y0, y1];
    let node_xs = linspace(x_range, nx);
    let node_ys = linspace(y_range, ny);
    let gx = grid.xs.len();
    let mut values: Vec<Vec<f64>> = point_weights
        .iter()
        .map(|pw| {
            let mut v = Vec::with_capacity(nx * ny);
            for &y in &node_ys {
                for &x in &node_xs {
                    v.push(bilinear(&grid.xs, &grid.ys, |i, j| pw[j * gx + i], x, y).max(0.0));
                }
            }
            v
        })
        .collect();
    for node in 0..nx * ny {
        let total: f64 = values.iter().map(|v| v[node]).sum();
        for v in values.iter_mut() {
            v[node] /= total;
        }
    }
    Ok(WeightMaps {
        sensors: sensors.to_vec(),
        nx,
        ny,
        x_range,
        y_range,
        values,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorCalibration {
    pub sensor: SensorId,
    pub model: CalibrationModel,
}

/// Everything learned in a calibration session, in a form that can be saved
/// and reloaded by a later test run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationBundle {
    pub version: u32,
    pub models: Vec<SensorCalibration>,
    pub weight_maps: Option<WeightMaps>,
}

impl CalibrationBundle {
    pub fn new(models: Vec<SensorCalibration>, weight_maps: Option<WeightMaps>) -> Self {
        Self {
            version: BUNDLE_VERSION,
            models,
            weight_maps,
        }
    }

    pub fn model_for(&self, sensor: SensorId) -> Option<&CalibrationModel> {
        self.models
            .iter()
            .find(|m| m.sensor == sensor)
            .map(|m| &m.model)
    }

    pub fn to_toml(&self) -> Result<String, CalibrationError> {
        toml::to_string(self).map_err(|e| CalibrationError::Format(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self, CalibrationError> {
        let bundle: Self =
            toml::from_str(text).map_err(|e| CalibrationError::Format(e.to_string()))?;
        if bundle.version != BUNDLE_VERSION {
            return Err(CalibrationError::UnsupportedVersion(bundle.version));
        }
        Ok(bundle)
    }
}
