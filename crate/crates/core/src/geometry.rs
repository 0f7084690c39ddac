//! Elementary 3D/2D geometry for the simulator and the estimator.
//!
//! World units are millimeters. Image units are pixels with the origin at the
//! top-left corner, +x to the right and +y downwards.

use nalgebra::{Matrix3, Point2, Rotation3, SMatrix, SVector, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;
pub type Pixel = Point2<f64>;

/// Bisection stops once the bracket is narrower than this (radians).
const ANGLE_TOL: f64 = 1e-13;
const MAX_BISECTIONS: usize = 200;
/// Number of coarse samples used to bracket the refraction root.
const REFRACTION_SCAN_STEPS: usize = 512;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("invalid input: {0}")]
    InvalidInput(&'static str),
    #[error("no reflection point exists for this configuration")]
    NoReflection,
    #[error("no refraction path exists for this configuration")]
    NoRefraction,
    #[error("degenerate configuration: three or more points are collinear")]
    DegenerateConfiguration,
    #[error("point maps to infinity")]
    PointAtInfinity,
}

/// Why a world point has no image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionFailure {
    Behind,
    Degenerate,
}

/// Lens and sensor parameters shared by every camera of a rig.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Intrinsics {
    pub focal_length_mm: f64,
    pub pixel_pitch_um: f64,
    pub width: u32,
    pub height: u32,
    pub principal_point: [f64; 2],
}

impl Intrinsics {
    /// Sensor whose pixel pitch is chosen so that the image diagonal spans
    /// `diagonal_fov_deg` with the given focal length.
    pub fn from_diagonal_fov(
        focal_length_mm: f64,
        diagonal_fov_deg: f64,
        width: u32,
        height: u32,
    ) -> Self {
        let diag_px = ((width as f64).powi(2) + (height as f64).powi(2)).sqrt();
        let pitch_mm =
            2.0 * focal_length_mm * (diagonal_fov_deg.to_radians() / 2.0).tan() / diag_px;
        Self {
            focal_length_mm,
            pixel_pitch_um: pitch_mm * 1000.0,
            width,
            height,
            principal_point: [width as f64 / 2.0, height as f64 / 2.0],
        }
    }

    fn validate(&self) -> Result<(), GeometryError> {
        if !(self.focal_length_mm > 0.0) {
            return Err(GeometryError::InvalidInput("focal length must be positive"));
        }
        if !(self.pixel_pitch_um > 0.0) {
            return Err(GeometryError::InvalidInput("pixel pitch must be positive"));
        }
        let [cx, cy] = self.principal_point;
        if !(cx >= 0.0 && cx <= self.width as f64 && cy >= 0.0 && cy <= self.height as f64) {
            return Err(GeometryError::InvalidInput(
                "principal point outside the sensor",
            ));
        }
        Ok(())
    }
}

impl Default for Intrinsics {
    /// 8 mm lens, 58° diagonal field of view, 1280×1024 sensor.
    fn default() -> Self {
        Self::from_diagonal_fov(8.0, 58.0, 1280, 1024)
    }
}

/// Pinhole camera. `rotation` and `translation` map world to camera
/// coordinates: `x_cam = R·x_world + t`, camera +z is the viewing direction.
#[derive(Debug, Clone, PartialEq)]
pub struct PinholeCamera {
    rotation: Rotation3<f64>,
    translation: Vec3,
    intrinsics: Intrinsics,
}

impl PinholeCamera {
    pub fn new(
        rotation: Rotation3<f64>,
        translation: Vec3,
        intrinsics: Intrinsics,
    ) -> Result<Self, GeometryError> {
        intrinsics.validate()?;
        let m = rotation.matrix();
        if (m * m.transpose() - Matrix3::identity()).amax() > 1e-9 {
            return Err(GeometryError::InvalidInput("rotation is not orthonormal"));
        }
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::InvalidInput("non-finite translation"));
        }
        Ok(Self {
            rotation,
            translation,
            intrinsics,
        })
    }

    /// Camera at `position` whose optical axis passes through `target`; the
    /// image "up" direction is as close to world `up` as possible.
    pub fn look_at(
        position: Vec3,
        target: Vec3,
        up: Vec3,
        intrinsics: Intrinsics,
    ) -> Result<Self, GeometryError> {
        let forward = target - position;
        if forward.norm() < 1e-12 {
            return Err(GeometryError::InvalidInput(
                "camera target coincides with camera position",
            ));
        }
        let forward = forward.normalize();
        let right = forward.cross(&up);
        if right.norm() < 1e-12 {
            return Err(GeometryError::InvalidInput(
                "up vector parallel to the viewing direction",
            ));
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        let m = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let rotation = Rotation3::from_matrix_unchecked(m);
        let translation = -(rotation * position);
        Self::new(rotation, translation, intrinsics)
    }

    pub fn rotation(&self) -> &Rotation3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    pub fn intrinsics(&self) -> &Intrinsics {
        &self.intrinsics
    }

    /// Optical center in world coordinates.
    pub fn center(&self) -> Vec3 {
        -(self.rotation.inverse() * self.translation)
    }

    /// Unit viewing direction in world coordinates.
    pub fn forward(&self) -> Vec3 {
        self.rotation.inverse() * Vec3::z()
    }

    pub fn to_camera(&self, point: &Vec3) -> Vec3 {
        self.rotation * point + self.translation
    }

    /// Perspective projection. The returned pixel may lie outside the sensor.
    pub fn project(&self, point: &Vec3) -> Result<Pixel, ProjectionFailure> {
        let pc = self.to_camera(point);
        if pc.norm() < 1e-12 {
            return Err(ProjectionFailure::Degenerate);
        }
        if pc.z <= 1e-12 {
            return Err(ProjectionFailure::Behind);
        }
        let pitch_mm = self.intrinsics.pixel_pitch_um * 1e-3;
        let scale = self.intrinsics.focal_length_mm / pitch_mm;
        let [cx, cy] = self.intrinsics.principal_point;
        Ok(Pixel::new(
            cx + scale * pc.x / pc.z,
            cy + scale * pc.y / pc.z,
        ))
    }

    pub fn in_bounds(&self, px: &Pixel) -> bool {
        px.x >= 0.0
            && px.y >= 0.0
            && px.x <= self.intrinsics.width as f64
            && px.y <= self.intrinsics.height as f64
    }
}

/// Free-function form of [`PinholeCamera::project`].
pub fn project(camera: &PinholeCamera, point: &Vec3) -> Result<Pixel, ProjectionFailure> {
    camera.project(point)
}

/// Unsigned angle between two vectors, accurate near 0 and π.
pub fn angle_between(a: &Vec3, b: &Vec3) -> f64 {
    a.cross(b).norm().atan2(a.dot(b))
}

/// Glint position: the point on the sphere where light from `light` is
/// specularly reflected towards `observer`.
///
/// The reflection point lies on the great-circle arc between the directions
/// of the light and the observer as seen from the center, so the search is a
/// 1D bisection over the arc angle.
pub fn reflect_on_sphere(
    center: &Vec3,
    radius: f64,
    light: &Vec3,
    observer: &Vec3,
) -> Result<Vec3, GeometryError> {
    if !(radius > 0.0) {
        return Err(GeometryError::InvalidInput("radius must be positive"));
    }
    let to_light = light - center;
    let to_observer = observer - center;
    if to_light.norm() <= radius || to_observer.norm() <= radius {
        return Err(GeometryError::InvalidInput(
            "light and observer must lie outside the sphere",
        ));
    }
    let a = to_light.normalize();
    let b = to_observer.normalize();
    let arc = angle_between(&a, &b);
    if arc < 1e-15 {
        return Ok(center + a * radius);
    }
    if std::f64::consts::PI - arc < 1e-12 {
        return Err(GeometryError::NoReflection);
    }
    let e = (b - a * a.dot(&b)).normalize();
    let surface = |phi: f64| {
        let n = a * phi.cos() + e * phi.sin();
        (n, center + n * radius)
    };
    let mismatch = |phi: f64| {
        let (n, q) = surface(phi);
        angle_between(&n, &(light - q)) - angle_between(&n, &(observer - q))
    };

    let (mut lo, mut hi) = (0.0, arc);
    for _ in 0..MAX_BISECTIONS {
        if hi - lo < ANGLE_TOL {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if mismatch(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (n, q) = surface(0.5 * (lo + hi));
    let incidence = angle_between(&n, &(light - q));
    if incidence >= std::f64::consts::FRAC_PI_2 {
        return Err(GeometryError::NoReflection);
    }
    Ok(q)
}

/// Point on the sphere where a ray from `observer` enters and, after
/// refraction, passes through `interior`. This is where an observer sees an
/// interior point (e.g. the pupil center behind the cornea).
pub fn refract_entry_point(
    center: &Vec3,
    radius: f64,
    observer: &Vec3,
    interior: &Vec3,
    n_outside: f64,
    n_inside: f64,
) -> Result<Vec3, GeometryError> {
    if !(radius > 0.0 && n_outside > 0.0 && n_inside > 0.0) {
        return Err(GeometryError::InvalidInput(
            "radius and refractive indices must be positive",
        ));
    }
    let to_observer = observer - center;
    let dist = to_observer.norm();
    if dist <= radius {
        return Err(GeometryError::InvalidInput(
            "observer must lie outside the sphere",
        ));
    }
    let p = interior - center;
    if p.norm() >= radius {
        return Err(GeometryError::InvalidInput(
            "interior point must lie strictly inside the sphere",
        ));
    }
    let a = to_observer / dist;
    let along = p.dot(&a);
    let perp = p - a * along;
    if perp.norm() < 1e-12 * radius {
        return Ok(center + a * radius);
    }
    let e = perp.normalize();
    let (p_a, p_e) = (along, perp.norm());
    let eta = n_outside / n_inside;

    // Signed in-plane offset of the interior point from the refracted ray;
    // `None` when the ray cannot be formed or points away from the target.
    let miss = |phi: f64| -> Option<f64> {
        let n = a * phi.cos() + e * phi.sin();
        let q = center + n * radius;
        let d = (q - observer).normalize();
        let t = refract(&d, &n, eta)?;
        let (q_a, q_e) = (radius * phi.cos(), radius * phi.sin());
        let (t_a, t_e) = (t.dot(&a), t.dot(&e));
        let (r_a, r_e) = (p_a - q_a, p_e - q_e);
        if t_a * r_a + t_e * r_e <= 0.0 {
            return None;
        }
        Some(t_a * r_e - t_e * r_a)
    };

    let phi_max = (radius / dist).acos();
    let mut prev: Option<(f64, f64)> = None;
    let mut bracket = None;
    for i in 0..=REFRACTION_SCAN_STEPS {
        let phi = phi_max * (i as f64 / REFRACTION_SCAN_STEPS as f64) * (1.0 - 1e-9);
        let value = miss(phi);
        if let (Some((phi0, v0)), Some(v1)) = (prev, value) {
            if v0 == 0.0 {
                bracket = Some((phi0, phi0));
                break;
            }
            if v0.signum() != v1.signum() {
                bracket = Some((phi0, phi));
                break;
            }
        }
        prev = value.map(|v| (phi, v));
    }
    let (mut lo, mut hi) = bracket.ok_or(GeometryError::NoRefraction)?;
    let lo_sign = miss(lo).ok_or(GeometryError::NoRefraction)?.signum();
    for _ in 0..MAX_BISECTIONS {
        if hi - lo < ANGLE_TOL {
            break;
        }
        let mid = 0.5 * (lo + hi);
        match miss(mid) {
            Some(0.0) => {
                lo = mid;
                hi = mid;
            }
            Some(v) if v.signum() == lo_sign => lo = mid,
            Some(_) => hi = mid,
            None => return Err(GeometryError::NoRefraction),
        }
    }
    let phi = 0.5 * (lo + hi);
    Ok(center + (a * phi.cos() + e * phi.sin()) * radius)
}

/// Vector form of Snell's law. `d` is the unit incident direction, `n` the
/// unit surface normal facing the incident side, `eta = n1 / n2`.
fn refract(d: &Vec3, n: &Vec3, eta: f64) -> Option<Vec3> {
    let cos_i = -d.dot(n);
    if cos_i <= 0.0 {
        return None;
    }
    let k = 1.0 - eta * eta * (1.0 - cos_i * cos_i);
    if k < 0.0 {
        return None;
    }
    Some((d * eta + n * (eta * cos_i - k.sqrt())).normalize())
}

/// Planar projective transformation, stored with `h[(2,2)] == 1` whenever
/// that entry is nonzero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography(Matrix3<f64>);

impl Homography {
    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self, GeometryError> {
        let m = if m[(2, 2)].abs() > 1e-300 {
            m / m[(2, 2)]
        } else {
            m
        };
        if !(m.determinant().abs() > 1e-12) {
            return Err(GeometryError::DegenerateConfiguration);
        }
        Ok(Self(m))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn inverse(&self) -> Result<Self, GeometryError> {
        let inv = self
            .0
            .try_inverse()
            .ok_or(GeometryError::DegenerateConfiguration)?;
        Self::from_matrix(inv)
    }

    pub fn compose(&self, other: &Homography) -> Result<Self, GeometryError> {
        Self::from_matrix(self.0 * other.0)
    }

    pub fn apply(&self, p: &Point2<f64>) -> Result<Point2<f64>, GeometryError> {
        let v = self.0 * Vector3::new(p.x, p.y, 1.0);
        if v.z.abs() < 1e-12 {
            return Err(GeometryError::PointAtInfinity);
        }
        Ok(Point2::new(v.x / v.z, v.y / v.z))
    }
}

/// Free-function form of [`Homography::apply`].
pub fn homography_apply(h: &Homography, p: &Point2<f64>) -> Result<Point2<f64>, GeometryError> {
    h.apply(p)
}

/// True when some three of the points are (numerically) collinear.
pub fn has_collinear_triple(points: &[Point2<f64>; 4]) -> bool {
    let scale = points
        .iter()
        .flat_map(|p| points.iter().map(move |q| (p - q).norm()))
        .fold(0.0_f64, f64::max);
    if scale == 0.0 {
        return true;
    }
    let tol = 1e-9 * scale * scale;
    for i in 0..4 {
        for j in (i + 1)..4 {
            for k in (j + 1)..4 {
                let (u, v) = (points[j] - points[i], points[k] - points[i]);
                if (u.x * v.y - u.y * v.x).abs() <= tol {
                    return true;
                }
            }
        }
    }
    false
}

/// Similarity transform moving the centroid to the origin and scaling the
/// mean distance to √2. Used only to condition the linear solve.
fn conditioning(points: &[Point2<f64>; 4]) -> Matrix3<f64> {
    let cx = points.iter().map(|p| p.x).sum::<f64>() / 4.0;
    let cy = points.iter().map(|p| p.y).sum::<f64>() / 4.0;
    let mean = points
        .iter()
        .map(|p| ((p.x - cx).powi(2) + (p.y - cy).powi(2)).sqrt())
        .sum::<f64>()
        / 4.0;
    let s = std::f64::consts::SQRT_2 / mean;
    Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0)
}

fn transform(m: &Matrix3<f64>, p: &Point2<f64>) -> Point2<f64> {
    let v = m * Vector3::new(p.x, p.y, 1.0);
    Point2::new(v.x / v.z, v.y / v.z)
}

/// Exact homography taking `src[i]` to `dst[i]` from four correspondences,
/// via the 8×8 linear system with `h33 = 1`.
pub fn homography_from_correspondences(
    src: &[Point2<f64>; 4],
    dst: &[Point2<f64>; 4],
) -> Result<Homography, GeometryError> {
    if src
        .iter()
        .chain(dst.iter())
        .any(|p| !p.x.is_finite() || !p.y.is_finite())
    {
        return Err(GeometryError::InvalidInput("non-finite correspondence"));
    }
    if has_collinear_triple(src) || has_collinear_triple(dst) {
        return Err(GeometryError::DegenerateConfiguration);
    }
    let ts = conditioning(src);
    let td = conditioning(dst);
    let mut a = SMatrix::<f64, 8, 8>::zeros();
    let mut b = SVector::<f64, 8>::zeros();
    for i in 0..4 {
        let s = transform(&ts, &src[i]);
        let d = transform(&td, &dst[i]);
        let (x, y, u, v) = (s.x, s.y, d.x, d.y);
        let r = 2 * i;
        a.row_mut(r)
            .copy_from_slice(&[x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y]);
        a.row_mut(r + 1)
            .copy_from_slice(&[0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y]);
        b[r] = u;
        b[r + 1] = v;
    }
    let h = a
        .lu()
        .solve(&b)
        .ok_or(GeometryError::DegenerateConfiguration)?;
    let normalized = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], 1.0);
    let td_inv = td
        .try_inverse()
        .ok_or(GeometryError::DegenerateConfiguration)?;
    Homography::from_matrix(td_inv * normalized * ts)
}
