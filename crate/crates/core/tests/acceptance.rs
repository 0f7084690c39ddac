//! Acceptance gate: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails.

mod common;

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use common::*;
use mvgaze::calibration::{
    build_weight_maps, fit_bias_correction, CalibrationGrid, CalibrationSample, ModelOrder,
    SensorPointStats,
};
use mvgaze::config::{parse_config, RunConfig};
use mvgaze::estimator::RawGaze;
use mvgaze::experiments::{
    run_scenario, Axis, Displacements, MetricsReport, ScenarioKind, ScenarioSpec,
};
use mvgaze::eye::{EyeSide, HeadMode};
use mvgaze::fusion::{fuse, head_pose_weight, FusionMethod, SensorOutput};
use mvgaze::geometry::{homography_from_correspondences, reflect_on_sphere, refract_entry_point};
use mvgaze::report::write_report;
use mvgaze::scene::{generate_rig, head_yaw_wrt_camera, LayoutCase, Screen, SensorId};
use nalgebra::{DMatrix, DVector, Point2, Vector2};
use rand::Rng;

const SEED: u64 = 42;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn sh(layout: LayoutCase, cameras: usize, noise: &[f64]) -> ScenarioSpec {
    let mut s = ScenarioSpec::new("acceptance", ScenarioKind::Sh, layout, cameras);
    s.seed = SEED;
    s.noise_levels = noise.to_vec();
    s
}

fn error(report: &MetricsReport, fusion: FusionMethod, noise: f64, axis: Axis, d: f64) -> f64 {
    report
        .row(fusion, noise, axis, d)
        .and_then(|r| r.mean_error_deg)
        .unwrap_or(f64::INFINITY)
}

fn sh_error(layout: LayoutCase, cameras: usize, noise: f64) -> f64 {
    let r = run_scenario(&sh(layout, cameras, &[noise])).expect("scenario runs");
    error(&r, FusionMethod::Simple, noise, Axis::None, 0.0)
}

const COUNTS: [usize; 6] = [1, 3, 5, 9, 16, 25];

fn criterion_1() -> Outcome {
    let (e1, e25) = (
        sh_error(LayoutCase::Case0, 1, 0.0),
        sh_error(LayoutCase::Case0, 25, 0.0),
    );
    let gap = (e25 - e1).abs();
    outcome(
        gap < 0.05,
        format!("case0 noise 0: C=1 {e1:.4}°, C=25 {e25:.4}°, |Δ| = {gap:.4}° (< 0.05°)"),
    )
}

fn criterion_2() -> Outcome {
    let errors: Vec<f64> = COUNTS
        .iter()
        .map(|&c| sh_error(LayoutCase::Case0, c, 0.4))
        .collect();
    let rises: Vec<f64> = errors
        .windows(2)
        .map(|w| w[1] - w[0])
        .filter(|d| *d >= 0.0)
        .collect();
    let passed = rises.is_empty() || (rises.len() == 1 && rises[0] <= 0.03);
    let list: Vec<String> = COUNTS
        .iter()
        .zip(&errors)
        .map(|(c, e)| format!("C={c} {e:.4}°"))
        .collect();
    outcome(
        passed,
        format!(
            "case0 noise 0.4: {}; {} inversion(s)",
            list.join(", "),
            rises.len()
        ),
    )
}

fn criterion_3() -> Outcome {
    let mut passed = true;
    let mut parts = Vec::new();
    for c in [3, 5, 9] {
        let (e0, e1) = (
            sh_error(LayoutCase::Case0, c, 0.2),
            sh_error(LayoutCase::Case1, c, 0.2),
        );
        passed &= e1 < e0;
        parts.push(format!("C={c} case1 {e1:.4}° vs case0 {e0:.4}°"));
    }
    outcome(passed, format!("noise 0.2: {}", parts.join(", ")))
}

fn criterion_4() -> Outcome {
    // Camera 2 (left side) is three times noisier; the head faces the screen.
    let mut spec = sh(LayoutCase::Case1, 3, &[0.2]);
    spec.head_mode = HeadMode::FaceScreen;
    spec.camera_noise_scale = vec![1.0, 3.0, 1.0];
    spec.fusion = vec![
        FusionMethod::Simple,
        FusionMethod::HeadPose,
        FusionMethod::Behavior,
    ];
    let rig = generate_rig(spec.layout, spec.cameras, &spec.screen, &spec.rig).unwrap();
    let head = spec.calibration_position;
    let forward = (spec.screen.center() - head).normalize();
    let yaws: Vec<f64> = rig
        .cameras
        .iter()
        .map(|c| head_yaw_wrt_camera(&forward, &head, c).unwrap())
        .collect();
    let asymmetry = yaws.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - yaws.iter().cloned().fold(f64::INFINITY, f64::min);

    let r = run_scenario(&spec).unwrap();
    let e = |m| error(&r, m, 0.2, Axis::None, 0.0);
    let (simple, pose, behavior) = (
        e(FusionMethod::Simple),
        e(FusionMethod::HeadPose),
        e(FusionMethod::Behavior),
    );
    let passed = behavior <= simple && asymmetry >= 20.0 && pose <= simple;
    outcome(
        passed,
        format!(
            "yaw asymmetry {asymmetry:.1}° (>= 20°); simple {simple:.4}°, head_pose {pose:.4}°, behavior {behavior:.4}°"
        ),
    )
}

fn mh(layout: LayoutCase, cameras: usize, displacements: Displacements) -> MetricsReport {
    let mut s = ScenarioSpec::new("acceptance", ScenarioKind::Mh, layout, cameras);
    s.seed = SEED;
    s.noise_levels = vec![0.2];
    s.displacements = displacements;
    run_scenario(&s).expect("scenario runs")
}

fn criterion_5() -> Outcome {
    let z = Displacements {
        x: Vec::new(),
        y: Vec::new(),
        z: vec![-200.0, 200.0],
    };
    let mean = |r: &MetricsReport| {
        (error(r, FusionMethod::Simple, 0.2, Axis::Z, -200.0)
            + error(r, FusionMethod::Simple, 0.2, Axis::Z, 200.0))
            / 2.0
    };
    let one = mean(&mh(LayoutCase::Case1, 1, z.clone()));
    let three = mean(&mh(LayoutCase::Case1, 3, z));
    let gain = 1.0 - three / one;
    outcome(
        gain >= 0.20,
        format!("Z ±200 mm, noise 0.2: 1 camera {one:.4}°, 3-camera case1 {three:.4}°, {:.1}% lower (>= 20%)", gain * 100.0),
    )
}

/// Contiguous displacement interval around 0 with 100% fused availability.
fn full_range(r: &MetricsReport, axis: Axis, grid: &[f64]) -> (f64, f64) {
    let ok = |d: f64| {
        r.row(FusionMethod::Simple, 0.2, axis, d)
            .is_some_and(|row| row.availability_pct == 100.0)
    };
    let zero = grid.iter().position(|d| *d == 0.0).unwrap();
    let mut lo = zero;
    while lo > 0 && ok(grid[lo - 1]) {
        lo -= 1;
    }
    let mut hi = zero;
    while hi + 1 < grid.len() && ok(grid[hi + 1]) {
        hi += 1;
    }
    if !ok(0.0) {
        return (0.0, 0.0);
    }
    (grid[lo], grid[hi])
}

fn criterion_6() -> Outcome {
    let xs: Vec<f64> = (-60..=60).map(|i| i as f64 * 10.0).collect();
    let ys: Vec<f64> = (-40..=40).map(|i| i as f64 * 10.0).collect();
    let grid = Displacements {
        x: xs.clone(),
        y: ys.clone(),
        z: Vec::new(),
    };
    let one = mh(LayoutCase::Case1, 1, grid.clone());
    let three = mh(LayoutCase::Case1, 3, grid);
    let (x1, x3) = (
        full_range(&one, Axis::X, &xs),
        full_range(&three, Axis::X, &xs),
    );
    let (y1, y3) = (
        full_range(&one, Axis::Y, &ys),
        full_range(&three, Axis::Y, &ys),
    );
    let gain = |a: (f64, f64), b: (f64, f64)| (a.0 - b.0, b.1 - a.1);
    let (gx, gy) = (gain(x1, x3), gain(y1, y3));
    let passed = gx.0 >= 100.0 && gx.1 >= 100.0 && gy.0 >= 50.0 && gy.1 >= 50.0;
    outcome(
        passed,
        format!(
            "X: 1 cam [{:.0}, {:.0}], 3 cams [{:.0}, {:.0}], gain -{:.0}/+{:.0} mm (>= 100); \
             Y: 1 cam [{:.0}, {:.0}], 3 cams [{:.0}, {:.0}], gain -{:.0}/+{:.0} mm (>= 50)",
            x1.0, x1.1, x3.0, x3.1, gx.0, gx.1, y1.0, y1.1, y3.0, y3.1, gy.0, gy.1
        ),
    )
}

fn criterion_7() -> Outcome {
    let mut rng = rng(SEED);
    let mut worst_reflect = 0.0f64;
    let mut worst_refract = 0.0f64;
    let mut failures = 0;
    for _ in 0..1000 {
        let (c, r, light, observer) = random_reflection_case(&mut rng);
        match reflect_on_sphere(&c, r, &light, &observer) {
            Ok(p) => {
                worst_reflect =
                    worst_reflect.max((p - reflect_oracle(&c, r, &light, &observer)).norm())
            }
            Err(_) => failures += 1,
        }
        let (c, r, observer, interior, n) = random_refraction_case(&mut rng);
        let roots = refract_oracle(&c, r, &observer, &interior, 1.0, n);
        match refract_entry_point(&c, r, &observer, &interior, 1.0, n) {
            Ok(p) if roots.len() == 1 => worst_refract = worst_refract.max((p - roots[0]).norm()),
            _ => failures += 1,
        }
    }
    let dst = Screen::default_24inch().led_points();
    let mut worst_h = 0.0f64;
    for _ in 0..1000 {
        let src = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)].map(|(sx, sy)| {
            Point2::new(
                rng.gen_range(100.0..1100.0) + sx * rng.gen_range(3.0..12.0),
                rng.gen_range(200.0..800.0) + sy * rng.gen_range(2.0..9.0),
            )
        });
        match homography_from_correspondences(&src, &dst) {
            Ok(h) => {
                for (s, d) in src.iter().zip(&dst) {
                    let m = h
                        .apply(s)
                        .map_or(f64::INFINITY, |p| (p - d).norm() / d.coords.norm().max(1.0));
                    worst_h = worst_h.max(m);
                }
            }
            Err(_) => failures += 1,
        }
    }
    let passed = failures == 0 && worst_reflect <= 1e-4 && worst_refract <= 1e-4 && worst_h <= 1e-9;
    outcome(
        passed,
        format!(
            "1000 reflections max {worst_reflect:.2e} mm, 1000 refractions max {worst_refract:.2e} mm (<= 1e-4); \
             1000 homographies max rel {worst_h:.2e} (<= 1e-9); {failures} solver failures"
        ),
    )
}

fn criterion_8() -> Outcome {
    let mut rng = rng(SEED + 1);
    let sensor = SensorId::new(1, EyeSide::Left);
    let mut worst_fit = 0.0f64;
    for order in [ModelOrder::Affine, ModelOrder::Quadratic] {
        let quadratic = order == ModelOrder::Quadratic;
        for _ in 0..20 {
            let samples: Vec<CalibrationSample> = (0..16)
                .flat_map(|k| (0..10).map(move |j| (k, j)))
                .map(|(k, j)| {
                    let t = Point2::new(
                        -220.0 + 146.0 * (k % 4) as f64,
                        30.0 + 88.0 * (k / 4) as f64,
                    );
                    let raw = Point2::new(
                        0.93 * t.x + 0.04 * t.y + 2e-4 * t.x * t.y + 9.0 + rng.gen_range(-6.0..6.0),
                        1.05 * t.y - 0.03 * t.x + 1e-4 * t.x * t.x - 12.0
                            + rng.gen_range(-6.0..6.0),
                    );
                    CalibrationSample {
                        raw: RawGaze { por: raw, sensor },
                        target: t,
                        point_index: k,
                        frame_index: j,
                    }
                })
                .collect();
            let model = fit_bias_correction(&samples, 0.0, order).unwrap();
            let rows: Vec<Vec<f64>> = samples
                .iter()
                .map(|c| oracle_terms(&c.raw.por, quadratic))
                .collect();
            let design = DMatrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j]);
            let bx = lstsq_oracle(
                &design,
                &DVector::from_iterator(samples.len(), samples.iter().map(|c| c.target.x)),
            );
            let by = lstsq_oracle(
                &design,
                &DVector::from_iterator(samples.len(), samples.iter().map(|c| c.target.y)),
            );
            for c in &samples {
                let t = DVector::from_vec(oracle_terms(&c.raw.por, quadratic));
                let want = Point2::new(t.dot(&bx), t.dot(&by));
                worst_fit = worst_fit
                    .max((model.apply(&c.raw.por) - want).norm() / want.coords.norm().max(1.0));
            }
        }
    }

    // Maps from random statistics and from a simulated calibration session.
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
    let mut maps = Vec::new();
    for _ in 0..20 {
        let stats: Vec<SensorPointStats> = sensors
            .iter()
            .flat_map(|&sensor| (0..9).map(move |k| (sensor, k)))
            .map(|(sensor, k)| SensorPointStats {
                sensor,
                point_index: k,
                mean_error_deg: Some(rng.gen_range(0.05..3.0)),
                availability: rng.gen_range(0.1..1.0),
                samples: 100,
            })
            .collect();
        maps.push(build_weight_maps(&stats, &sensors, &grid, &screen, (65, 41)).unwrap());
    }
    let mut spec = sh(LayoutCase::Case1, 3, &[0.2]);
    spec.fusion = vec![FusionMethod::Behavior];
    let report = run_scenario(&spec).unwrap();
    maps.extend(
        report
            .calibrations
            .iter()
            .filter_map(|c| c.bundle.weight_maps.clone()),
    );
    let mut worst_sum = 0.0f64;
    let mut min_weight = f64::INFINITY;
    for m in &maps {
        for node in 0..m.nx * m.ny {
            let sum: f64 = m.values.iter().map(|v| v[node]).sum();
            worst_sum = worst_sum.max((sum - 1.0).abs());
            min_weight = m.values.iter().map(|v| v[node]).fold(min_weight, f64::min);
        }
    }
    let passed = worst_fit <= 1e-9 && worst_sum <= 1e-9 && min_weight >= 0.0;
    outcome(
        passed,
        format!(
            "λ=0 fit vs least squares max rel {worst_fit:.2e} (<= 1e-9); {} maps: min weight {min_weight:.3}, max |Σw - 1| {worst_sum:.2e} (<= 1e-9)",
            maps.len()
        ),
    )
}

fn criterion_9() -> Outcome {
    let mut rng = rng(SEED + 2);
    let screen = Screen::default_24inch();
    let mut worst_norm = 0.0f64;
    let mut hull_violations = 0;
    let mut identity_violations = 0;
    for _ in 0..2000 {
        let n = rng.gen_range(1..8);
        let outs: Vec<SensorOutput> = (0..n)
            .map(|i| SensorOutput {
                sensor: SensorId::new(
                    i / 2 + 1,
                    if i % 2 == 0 {
                        EyeSide::Left
                    } else {
                        EyeSide::Right
                    },
                ),
                por: Point2::new(rng.gen_range(-300.0..300.0), rng.gen_range(-50.0..400.0)),
                available: rng.gen_bool(0.8),
                head_yaw_deg: rng.gen_range(-80.0..80.0),
            })
            .collect();
        for m in [
            FusionMethod::Simple,
            FusionMethod::HeadPose,
            FusionMethod::BestCamera,
        ] {
            let f = fuse(m, &outs, 45.0, None, &screen);
            let Some(p) = f.por else { continue };
            let sum: f64 = f.weights.iter().map(|(_, w)| w).sum();
            worst_norm = worst_norm.max((sum - 1.0).abs());
            let mix: Vector2<f64> = outs
                .iter()
                .zip(&f.weights)
                .map(|(o, (_, w))| o.por.coords * *w)
                .sum();
            let negative = f.weights.iter().any(|(_, w)| *w < 0.0);
            let off = outs
                .iter()
                .zip(&f.weights)
                .any(|(o, (_, w))| !o.available && *w != 0.0);
            if negative || off || (mix - p.coords).norm() > 1e-9 {
                hull_violations += 1;
            }
        }
        let single = [SensorOutput {
            available: true,
            ..outs[0]
        }];
        for m in [
            FusionMethod::Simple,
            FusionMethod::HeadPose,
            FusionMethod::BestCamera,
        ] {
            if fuse(m, &single, 45.0, None, &screen).por != Some(single[0].por) {
                identity_violations += 1;
            }
        }
    }
    let a = SensorId::new(1, EyeSide::Right);
    let b = SensorId::new(2, EyeSide::Right);
    let out = |sensor, x: f64, yaw| SensorOutput {
        sensor,
        por: Point2::new(x, 0.0),
        available: true,
        head_yaw_deg: yaw,
    };
    let pair = fuse(
        FusionMethod::HeadPose,
        &[out(a, 0.0, 15.0), out(b, 3.0, 30.0)],
        45.0,
        None,
        &screen,
    );
    let endpoint = [
        (head_pose_weight(0.0, 45.0) - 1.0).abs(),
        head_pose_weight(45.0, 45.0).abs(),
        (pair.weights[0].1 - 2.0 / 3.0).abs(),
        (pair.weights[1].1 - 1.0 / 3.0).abs(),
    ]
    .into_iter()
    .fold(0.0f64, f64::max);
    let passed = worst_norm <= 1e-12
        && hull_violations == 0
        && identity_violations == 0
        && endpoint <= 1e-12;
    outcome(
        passed,
        format!(
            "max |Σw - 1| {worst_norm:.1e}, {hull_violations} hull and {identity_violations} identity violations, \
             endpoint/midpoint error {endpoint:.1e} (<= 1e-12)"
        ),
    )
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run_sweep(configs: &[RunConfig], dir: &Path) -> Vec<PathBuf> {
    let mut files = Vec::new();
    for config in configs {
        for plan in config.plans() {
            let reports: Vec<MetricsReport> = plan
                .specs
                .iter()
                .map(|s| run_scenario(s).unwrap())
                .collect();
            let written = write_report(&plan.name, &reports, dir).unwrap();
            files.push(written.metrics);
            files.push(written.sensors);
        }
    }
    files
}

fn criterion_10() -> Outcome {
    let configs: Vec<RunConfig> = ["sh.toml", "mh.toml"]
        .iter()
        .map(|f| parse_config(&configs_dir().join(f)).unwrap())
        .collect();
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let first = run_sweep(&configs, &a);
    // The second run uses a single worker to rule out scheduling effects.
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    let second = pool.install(|| run_sweep(&configs, &b));
    let mut bytes = 0;
    let mut differing = Vec::new();
    for (x, y) in first.iter().zip(&second) {
        let (bx, by) = (std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
        bytes += bx.len();
        if bx != by {
            differing.push(x.file_name().unwrap().to_string_lossy().into_owned());
        }
    }
    outcome(
        differing.is_empty() && first.len() == second.len(),
        format!(
            "{} CSVs ({bytes} bytes) compared; differing: {:?}",
            first.len(),
            differing
        ),
    )
}

type Criterion = (u32, &'static str, fn() -> Outcome, Option<Duration>);

fn main() {
    let criteria: [Criterion; 10] = [
        (
            1,
            "single-view cameras add no noise-free accuracy",
            criterion_1,
            Some(Duration::from_secs(120)),
        ),
        (
            2,
            "single-view error falls with camera count under noise",
            criterion_2,
            None,
        ),
        (
            3,
            "multi-view beats single-view at equal camera count",
            criterion_3,
            None,
        ),
        (
            4,
            "adaptive fusion on heterogeneous sensors",
            criterion_4,
            None,
        ),
        (
            5,
            "multi-view depth robustness",
            criterion_5,
            Some(Duration::from_secs(300)),
        ),
        (6, "multi-view availability range", criterion_6, None),
        (
            7,
            "geometry oracles",
            criterion_7,
            Some(Duration::from_secs(60)),
        ),
        (8, "calibration oracle and weight maps", criterion_8, None),
        (9, "fusion invariants", criterion_9, None),
        (10, "byte-identical reruns", criterion_10, None),
    ];
    let mut failed = 0;
    for (id, name, run, budget) in criteria {
        let start = Instant::now();
        let mut o = run();
        let elapsed = start.elapsed();
        if let Some(limit) = budget {
            if elapsed > limit {
                o.passed = false;
                o.detail
                    .push_str(&format!("; runtime over {}s", limit.as_secs()));
            }
        }
        if !o.passed {
            failed += 1;
        }
        println!(
            "{} criterion {id:>2} ({name}): {} [{:.1}s]",
            if o.passed { "PASS" } else { "FAIL" },
            o.detail,
            elapsed.as_secs_f64()
        );
    }
    println!("{} of 10 criteria passed", 10 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
