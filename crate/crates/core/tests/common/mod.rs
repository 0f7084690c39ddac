//! Brute-force reference solvers and random scene generators shared by the
//! integration tests. None of them reuse the library's algorithms.
#![allow(dead_code)]

use mvgaze::geometry::Vec3;
use nalgebra::{DMatrix, DVector, Matrix3, Point2};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn any_perpendicular(a: &Vec3) -> Vec3 {
    let helper = if a.x.abs() < 0.9 {
        Vec3::x()
    } else {
        Vec3::y()
    };
    a.cross(&helper).normalize()
}

/// Specular point found by a dense grid over the sphere cap facing the
/// bisector of the light and observer directions, refined by compass search on
/// the squared mismatch between the surface normal and the half vector.
pub fn reflect_oracle(c: &Vec3, r: f64, light: &Vec3, observer: &Vec3) -> Vec3 {
    let a = ((light - c).normalize() + (observer - c).normalize()).normalize();
    let u = any_perpendicular(&a);
    let v = a.cross(&u);
    let point = |s: f64, t: f64| c + (a + u * s + v * t).normalize() * r;
    let cost = |s: f64, t: f64| {
        let p = point(s, t);
        let n = (p - c) / r;
        let h = ((light - p).normalize() + (observer - p).normalize()).normalize();
        (n - h).norm_squared()
    };
    let (mut bs, mut bt, mut best) = (0.0, 0.0, f64::INFINITY);
    for i in -100..=100 {
        for j in -100..=100 {
            let (s, t) = (i as f64 * 0.01, j as f64 * 0.01);
            let f = cost(s, t);
            if f < best {
                (bs, bt, best) = (s, t, f);
            }
        }
    }
    let mut h = 0.01;
    while h > 1e-15 {
        let mut moved = false;
        for (ds, dt) in [
            (1.0, 0.0),
            (-1.0, 0.0),
            (0.0, 1.0),
            (0.0, -1.0),
            (1.0, 1.0),
            (1.0, -1.0),
            (-1.0, 1.0),
            (-1.0, -1.0),
        ] {
            let (s, t) = (bs + ds * h, bt + dt * h);
            let f = cost(s, t);
            if f < best {
                (bs, bt, best) = (s, t, f);
                moved = true;
            }
        }
        if !moved {
            h *= 0.5;
        }
    }
    point(bs, bt)
}

/// Entry points of refracted rays from `observer` to `interior`: a scan of
/// the visible great-circle arc at 1e-5 rad for sign changes of the signed
/// Snell residual, each bracket closed by bisection.
pub fn refract_oracle(
    c: &Vec3,
    r: f64,
    observer: &Vec3,
    interior: &Vec3,
    n_out: f64,
    n_in: f64,
) -> Vec<Vec3> {
    let e1 = (observer - c).normalize();
    let off = (interior - c) - e1 * e1.dot(&(interior - c));
    let e2 = if off.norm() > 1e-12 {
        off.normalize()
    } else {
        any_perpendicular(&e1)
    };
    let to2 = |w: &Vec3| (w.dot(&e1), w.dot(&e2));
    let cross2 =
        |a: (f64, f64), b: (f64, f64)| (a.0 * b.1 - a.1 * b.0) / (a.0.hypot(a.1) * b.0.hypot(b.1));
    let point = |psi: f64| c + (e1 * psi.cos() + e2 * psi.sin()) * r;
    let residual = |psi: f64| {
        let p = point(psi);
        let inward = to2(&(c - p));
        let sin_i = cross2(inward, to2(&(p - observer)));
        let sin_t = cross2(inward, to2(&(interior - p)));
        n_out * sin_i - n_in * sin_t
    };
    let limit = (r / (observer - c).norm()).acos();
    let step = 1e-5;
    let n = (2.0 * limit / step) as usize;
    let mut roots = Vec::new();
    let mut prev_psi = -limit;
    let mut prev = residual(prev_psi);
    for k in 1..=n {
        let psi = -limit + k as f64 * step;
        let f = residual(psi);
        if prev == 0.0 || prev.signum() != f.signum() {
            let (mut lo, mut hi, mut flo) = (prev_psi, psi, prev);
            for _ in 0..80 {
                let mid = 0.5 * (lo + hi);
                let fm = residual(mid);
                if fm.signum() == flo.signum() {
                    (lo, flo) = (mid, fm);
                } else {
                    hi = mid;
                }
            }
            roots.push(point(0.5 * (lo + hi)));
        }
        prev_psi = psi;
        prev = f;
    }
    roots
}

/// Direct linear transform with h33 = 1 solved by Gauss-Jordan elimination
/// with partial pivoting, on raw coordinates.
#[allow(clippy::needless_range_loop)]
pub fn homography_oracle(src: &[Point2<f64>; 4], dst: &[Point2<f64>; 4]) -> Option<Matrix3<f64>> {
    let mut m = [[0.0f64; 9]; 8];
    for k in 0..4 {
        let (x, y, u, v) = (src[k].x, src[k].y, dst[k].x, dst[k].y);
        m[2 * k] = [x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y, u];
        m[2 * k + 1] = [0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y, v];
    }
    for col in 0..8 {
        let pivot = (col..8).max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))?;
        if m[pivot][col].abs() < 1e-300 {
            return None;
        }
        m.swap(col, pivot);
        let p = m[col][col];
        for j in 0..9 {
            m[col][j] /= p;
        }
        for row in 0..8 {
            if row != col {
                let f = m[row][col];
                for j in 0..9 {
                    m[row][j] -= f * m[col][j];
                }
            }
        }
    }
    let h: Vec<f64> = (0..8).map(|i| m[i][8]).collect();
    Some(Matrix3::new(
        h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], 1.0,
    ))
}

pub fn apply_h(h: &Matrix3<f64>, p: &Point2<f64>) -> Point2<f64> {
    let w = h * nalgebra::Vector3::new(p.x, p.y, 1.0);
    Point2::new(w.x / w.z, w.y / w.z)
}

/// Ordinary least squares through an SVD of the design matrix.
pub fn lstsq_oracle(design: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    design
        .clone()
        .svd(true, true)
        .solve(y, 1e-14)
        .expect("svd solve")
}

/// Monomials used by the least-squares oracle, in kilo-millimeters.
pub fn oracle_terms(p: &Point2<f64>, quadratic: bool) -> Vec<f64> {
    let (x, y) = (p.x / 1000.0, p.y / 1000.0);
    if quadratic {
        vec![1.0, x, y, x * y, x * x, y * y]
    } else {
        vec![1.0, x, y]
    }
}

/// A cornea-like sphere in front of the screen with a screen-plane light and
/// a camera-like observer below or beside the screen.
pub fn random_reflection_case(rng: &mut impl Rng) -> (Vec3, f64, Vec3, Vec3) {
    let c = Vec3::new(
        rng.gen_range(-250.0..250.0),
        rng.gen_range(0.0..400.0),
        rng.gen_range(400.0..800.0),
    );
    let r = rng.gen_range(7.0..8.5);
    let light = Vec3::new(rng.gen_range(-260.0..260.0), rng.gen_range(0.0..325.0), 0.0);
    let observer = Vec3::new(
        rng.gen_range(-320.0..320.0),
        rng.gen_range(-60.0..330.0),
        rng.gen_range(0.0..20.0),
    );
    (c, r, light, observer)
}

/// A pupil-like interior point behind the cornea surface, roughly facing the
/// observer, and a cornea-like index.
pub fn random_refraction_case(rng: &mut impl Rng) -> (Vec3, f64, Vec3, Vec3, f64) {
    let c = Vec3::new(
        rng.gen_range(-250.0..250.0),
        rng.gen_range(0.0..400.0),
        rng.gen_range(400.0..800.0),
    );
    let r = rng.gen_range(7.0..8.5);
    let observer = Vec3::new(
        rng.gen_range(-320.0..320.0),
        rng.gen_range(-60.0..330.0),
        0.0,
    );
    let towards = (observer - c).normalize();
    let tilt = any_perpendicular(&towards);
    let tilt = nalgebra::Rotation3::from_axis_angle(
        &nalgebra::Unit::new_normalize(towards),
        rng.gen_range(0.0..std::f64::consts::TAU),
    ) * tilt;
    let angle = rng.gen_range(0.0f64..0.6);
    let dir = towards * angle.cos() + tilt * angle.sin();
    let interior = c + dir * rng.gen_range(3.0..4.8);
    (c, r, observer, interior, rng.gen_range(1.3..1.4))
}
