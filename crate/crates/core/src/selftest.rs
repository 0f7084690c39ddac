//! Quick randomized self-checks of the numerical core against the defining
//! physical and algebraic properties of each result.

use nalgebra::Point2;
use rand::Rng;

use crate::calibration::{
    build_weight_maps, fit_bias_correction, CalibrationGrid, CalibrationSample, ModelOrder,
    SensorPointStats,
};
use crate::estimator::RawGaze;
use crate::experiments::{run_scenario, stream, ScenarioKind, ScenarioSpec};
use crate::eye::EyeSide;
use crate::fusion::{fuse_head_pose, fuse_simple, head_pose_weight, SensorOutput};
use crate::geometry::{
    homography_from_correspondences, reflect_on_sphere, refract_entry_point, Vec3,
};
use crate::scene::{LayoutCase, Screen, SensorId};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, worst: f64, tol: f64, cases: usize) -> Check {
    Check {
        name,
        passed: worst <= tol,
        detail: format!("{cases} cases, worst residual {worst:.3e} (tolerance {tol:.0e})"),
    }
}

fn random_unit(rng: &mut impl Rng) -> Vec3 {
    loop {
        let v = Vec3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}

/// Glints obey the mirror law: the surface normal bisects the directions to
/// the light and to the observer, and all three are coplanar.
fn reflection(cases: usize, seed: u64) -> Check {
    let mut rng = stream(seed, &[11]);
    let mut worst = 0.0f64;
    let mut solved = 0;
    for _ in 0..cases {
        let center = Vec3::new(
            rng.gen_range(-50.0..50.0),
            rng.gen_range(100.0..300.0),
            rng.gen_range(400.0..800.0),
        );
        let r = rng.gen_range(6.0..9.0);
        let light = Vec3::new(rng.gen_range(-300.0..300.0), rng.gen_range(0.0..350.0), 0.0);
        let observer = Vec3::new(
            rng.gen_range(-400.0..400.0),
            rng.gen_range(-60.0..400.0),
            0.0,
        );
        let Ok(g) = reflect_on_sphere(&center, r, &light, &observer) else {
            continue;
        };
        solved += 1;
        let n = (g - center) / r;
        let (l, o) = ((light - g).normalize(), (observer - g).normalize());
        let bisector = (l + o).normalize();
        worst = worst
            .max((g - center).norm() - r)
            .max(n.cross(&bisector).norm() * r);
    }
    check("reflection law", worst, 1e-6, solved)
}

/// Entry points obey Snell's law with coplanar rays.
fn refraction(cases: usize, seed: u64) -> Check {
    let mut rng = stream(seed, &[12]);
    let mut worst = 0.0f64;
    let mut solved = 0;
    for _ in 0..cases {
        let center = Vec3::zeros();
        let r = 7.8;
        let observer = random_unit(&mut rng) * rng.gen_range(300.0..800.0);
        let towards = observer.normalize();
        let interior =
            towards * (-rng.gen_range(2.0..5.0)) + random_unit(&mut rng) * rng.gen_range(0.0..2.0);
        let (n1, n2) = (1.0, rng.gen_range(1.2..1.5));
        let Ok(p) = refract_entry_point(&center, r, &observer, &interior, n1, n2) else {
            continue;
        };
        solved += 1;
        let n = (p - center) / r;
        let incoming = (p - observer).normalize();
        let inside = (interior - p).normalize();
        let sin_i = n.cross(&incoming).norm();
        let sin_t = n.cross(&inside).norm();
        let coplanar = n.dot(&incoming.cross(&inside)).abs();
        worst = worst
            .max((n1 * sin_i - n2 * sin_t).abs())
            .max(coplanar)
            .max(((p - center).norm() - r).abs());
    }
    check("refraction law", worst, 1e-6, solved)
}

/// A four-point homography reproduces its own correspondences.
fn homography(cases: usize, seed: u64) -> Check {
    let mut rng = stream(seed, &[13]);
    let screen = Screen::default_24inch();
    let dst = screen.led_points();
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let src = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)].map(|(sx, sy)| {
            Point2::new(
                600.0 + sx * rng.gen_range(4.0..9.0),
                500.0 + sy * rng.gen_range(3.0..7.0),
            )
        });
        let Ok(h) = homography_from_correspondences(&src, &dst) else {
            worst = f64::INFINITY;
            continue;
        };
        for (s, d) in src.iter().zip(&dst) {
            let m = h
                .apply(s)
                .map_or(f64::INFINITY, |p| (p - d).norm() / d.coords.norm().max(1.0));
            worst = worst.max(m);
        }
    }
    check("homography exactness", worst, 1e-9, cases)
}

/// Unregularized fits leave residuals orthogonal to every affine regressor.
fn least_squares(seed: u64) -> Check {
    let mut rng = stream(seed, &[14]);
    let screen = Screen::default_24inch();
    let sensor = SensorId::new(1, EyeSide::Right);
    let samples: Vec<CalibrationSample> = CalibrationGrid::nine_point(&screen, 0.1)
        .points()
        .into_iter()
        .enumerate()
        .flat_map(|(k, t)| {
            (0..20)
                .map(|j| {
                    let raw = Point2::new(
                        0.9 * t.x + 0.05 * t.y + 12.0 + rng.gen_range(-5.0..5.0),
                        1.1 * t.y - 0.02 * t.x - 7.0 + rng.gen_range(-5.0..5.0),
                    );
                    CalibrationSample {
                        raw: RawGaze { por: raw, sensor },
                        target: t,
                        point_index: k,
                        frame_index: j,
                    }
                })
                .collect::<Vec<_>>()
        })
        .collect();
    let worst = match fit_bias_correction(&samples, 0.0, ModelOrder::Affine) {
        Ok(m) => {
            // Cosine between each residual component and each regressor.
            let mut dot = [[0.0f64; 3]; 2];
            let mut rr = [0.0f64; 2];
            let mut xx = [0.0f64; 3];
            for s in &samples {
                let r = s.target - m.apply(&s.raw.por);
                let x = [1.0, s.raw.por.x, s.raw.por.y];
                for (a, ra) in [r.x, r.y].into_iter().enumerate() {
                    rr[a] += ra * ra;
                    for (b, xb) in x.iter().enumerate() {
                        dot[a][b] += ra * xb;
                    }
                }
                for (b, xb) in x.iter().enumerate() {
                    xx[b] += xb * xb;
                }
            }
            let g: Vec<f64> = (0..2)
                .flat_map(|a| (0..3).map(move |b| (a, b)))
                .map(|(a, b)| dot[a][b] / (rr[a] * xx[b]).sqrt())
                .collect();
            g.iter().fold(0.0f64, |w, v| w.max(v.abs()))
        }
        Err(_) => f64::INFINITY,
    };
    check("least-squares orthogonality", worst, 1e-10, samples.len())
}

/// Weight maps are non-negative and sum to one across sensors at every node.
fn weight_maps(seed: u64) -> Check {
    let mut rng = stream(seed, &[15]);
    let screen = Screen::default_24inch();
    let grid = CalibrationGrid::nine_point(&screen, 0.1);
    let sensors: Vec<SensorId> = (1..=3)
        .flat_map(|c| {
            [
                SensorId::new(c, EyeSide::Left),
                SensorId::new(c, EyeSide::Right),
            ]
        })
        .collect();
    let stats: Vec<SensorPointStats> = sensors
        .iter()
        .flat_map(|&sensor| {
            (0..9)
                .map(|k| SensorPointStats {
                    sensor,
                    point_index: k,
                    mean_error_deg: Some(rng.gen_range(0.1..2.0)),
                    availability: rng.gen_range(0.2..1.0),
                    samples: 100,
                })
                .collect::<Vec<_>>()
        })
        .collect();
    let worst = match build_weight_maps(&stats, &sensors, &grid, &screen, (65, 41)) {
        Ok(maps) => {
            let mut worst = 0.0f64;
            for j in 0..41 {
                for i in 0..65 {
                    let x = screen.x_range().0 + screen.width * i as f64 / 64.0;
                    let y = screen.height * j as f64 / 40.0;
                    let w: Vec<f64> = sensors.iter().map(|s| maps.lookup(*s, x, y)).collect();
                    let negative = w.iter().fold(0.0f64, |m, v| m.max(-v));
                    worst = worst.max((w.iter().sum::<f64>() - 1.0).abs()).max(negative);
                }
            }
            worst
        }
        Err(_) => f64::INFINITY,
    };
    check("weight map normalization", worst, 1e-9, 65 * 41)
}

/// Head-pose weights at their defining endpoints and simple fusion identity.
fn fusion() -> Check {
    let a = SensorId::new(1, EyeSide::Right);
    let b = SensorId::new(2, EyeSide::Right);
    let out = |sensor, x: f64, yaw| SensorOutput {
        sensor,
        por: Point2::new(x, 10.0),
        available: true,
        head_yaw_deg: yaw,
    };
    let pair = fuse_head_pose(&[out(a, 0.0, 15.0), out(b, 3.0, 30.0)], 45.0);
    let single = fuse_simple(&[out(a, 4.0, 0.0)]);
    let worst = [
        (head_pose_weight(0.0, 45.0) - 1.0).abs(),
        head_pose_weight(45.0, 45.0).abs(),
        (pair.weights[0].1 - 2.0 / 3.0).abs(),
        (pair.weights[1].1 - 1.0 / 3.0).abs(),
        single
            .por
            .map_or(f64::INFINITY, |p| (p - Point2::new(4.0, 10.0)).norm()),
    ]
    .into_iter()
    .fold(0.0f64, f64::max);
    check("fusion weights", worst, 1e-12, 5)
}

/// Two runs of the same small scenario agree exactly.
fn determinism(seed: u64) -> Check {
    let mut spec = ScenarioSpec::new("selftest", ScenarioKind::Sh, LayoutCase::Case1, 3);
    spec.seed = seed;
    spec.noise_levels = vec![0.2];
    spec.frames_per_calibration_point = 10;
    spec.frames_per_test_point = 10;
    let (a, b) = (run_scenario(&spec), run_scenario(&spec));
    let passed = matches!((&a, &b), (Ok(a), Ok(b)) if a == b);
    Check {
        name: "determinism",
        passed,
        detail: match a {
            Ok(r) => format!("{} rows compared", r.rows.len()),
            Err(e) => e.to_string(),
        },
    }
}

/// Runs every check with `cases` random configurations per geometric check.
pub fn run(cases: usize, seed: u64) -> Vec<Check> {
    vec![
        reflection(cases, seed),
        refraction(cases, seed),
        homography(cases, seed),
        least_squares(seed),
        weight_maps(seed),
        fusion(),
        determinism(seed),
    ]
}
