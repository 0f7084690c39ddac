//! Versioned run configuration (TOML).
//!
//! ```toml
//! version = 1
//! output_dir = "results"
//! seed = 42
//!
//! [[scenario]]
//! name = "sh_case0"
//! kind = "sh"
//! layouts = ["case0"]
//! camera_counts = [1, 3, 5]
//! noise_levels = [0.0, 0.2]
//! fusion = ["simple", "behavior"]
//! ```
//!
//! Every key has a default except `version` and the scenario `name`.
//! Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibration::ModelOrder;
use crate::experiments::{Displacements, ScenarioKind, ScenarioSpec};
use crate::eye::{EyeParams, EyeSide, HeadMode};
use crate::fusion::FusionMethod;
use crate::geometry::{Intrinsics, Vec3};
use crate::scene::{LayoutCase, RigGeometry, Screen};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("unsupported config version {0} (expected {CONFIG_VERSION})")]
    UnsupportedVersion(u32),
    #[error("invalid value at `{key}`: {message}")]
    Invalid { key: String, message: String },
}

fn invalid(key: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub screen: ScreenConfig,
    #[serde(default)]
    pub rig: RigConfig,
    #[serde(default, skip_serializing_if = "EyeOverrides::is_empty")]
    pub eye: EyeOverrides,
    #[serde(rename = "scenario")]
    pub scenarios: Vec<ScenarioConfig>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScreenConfig {
    pub width_mm: f64,
    pub height_mm: f64,
}

impl Default for ScreenConfig {
    fn default() -> Self {
        let s = Screen::default_24inch();
        Self {
            width_mm: s.width,
            height_mm: s.height,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RigConfig {
    pub standoff_mm: f64,
    pub row_spacing_mm: f64,
    /// Omitted: each scenario's calibration position.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aim: Option<[f64; 3]>,
    pub focal_length_mm: f64,
    pub diagonal_fov_deg: f64,
    pub resolution: [u32; 2],
}

impl Default for RigConfig {
    fn default() -> Self {
        Self {
            standoff_mm: 50.0,
            row_spacing_mm: 50.0,
            aim: None,
            focal_length_mm: 8.0,
            diagonal_fov_deg: 58.0,
            resolution: [1280, 1024],
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EyeOverrides {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cornea_radius_mm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cornea_to_pupil_mm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha_deg: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta_deg: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_cornea: Option<f64>,
}

impl EyeOverrides {
    pub fn is_empty(&self) -> bool {
        *self == Self::default()
    }

    fn apply(&self, mut p: EyeParams) -> EyeParams {
        if let Some(v) = self.cornea_radius_mm {
            p.cornea_radius_mm = v;
        }
        if let Some(v) = self.cornea_to_pupil_mm {
            p.cornea_to_pupil_mm = v;
        }
        if let Some(v) = self.alpha_deg {
            p.alpha_deg = v;
        }
        if let Some(v) = self.beta_deg {
            p.beta_deg = v;
        }
        if let Some(v) = self.n_cornea {
            p.n_cornea = v;
        }
        p
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub name: String,
    pub kind: ScenarioKind,
    pub layouts: Vec<LayoutCase>,
    pub camera_counts: Vec<usize>,
    pub noise_levels: Vec<f64>,
    pub fusion: Vec<FusionMethod>,
    pub frames_per_calibration_point: usize,
    pub frames_per_test_point: usize,
    pub test_points_per_cell: usize,
    pub calibration_position: [f64; 3],
    pub head_mode: HeadMode,
    pub binocular: bool,
    pub ipd_mm: f64,
    /// Noise multiplier for cameras 1, 2, ...; cameras beyond the list use 1.
    pub camera_noise_scale: Vec<f64>,
    pub calibration_order: ModelOrder,
    pub ridge_lambda: f64,
    pub calibration_margin: f64,
    pub alpha_max_deg: f64,
    pub weight_map_resolution: [usize; 2],
    pub displacements: Displacements,
    #[serde(skip_serializing_if = "EyeOverrides::is_empty")]
    pub eye: EyeOverrides,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        let d = ScenarioSpec::new("", ScenarioKind::Sh, LayoutCase::Case1, 1);
        Self {
            name: String::new(),
            kind: ScenarioKind::Sh,
            layouts: vec![LayoutCase::Case0, LayoutCase::Case1],
            camera_counts: vec![1, 3],
            noise_levels: d.noise_levels,
            fusion: vec![FusionMethod::Simple],
            frames_per_calibration_point: d.frames_per_calibration_point,
            frames_per_test_point: d.frames_per_test_point,
            test_points_per_cell: d.test_points_per_cell,
            calibration_position: [
                d.calibration_position.x,
                d.calibration_position.y,
                d.calibration_position.z,
            ],
            head_mode: d.head_mode,
            binocular: d.binocular,
            ipd_mm: d.ipd_mm,
            camera_noise_scale: Vec::new(),
            calibration_order: d.calibration_order,
            ridge_lambda: d.ridge_lambda,
            calibration_margin: d.calibration_margin,
            alpha_max_deg: d.alpha_max_deg,
            weight_map_resolution: [d.weight_map_resolution.0, d.weight_map_resolution.1],
            displacements: d.displacements,
            eye: EyeOverrides::default(),
        }
    }
}

/// One scenario block expanded over its rig sweep.
#[derive(Debug, Clone)]
pub struct ScenarioPlan {
    pub name: String,
    pub specs: Vec<ScenarioSpec>,
}

impl RunConfig {
    pub fn from_toml(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let config: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: origin.to_string(),
            message: e.to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run configs always serialize")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.version != CONFIG_VERSION {
            return Err(ConfigError::UnsupportedVersion(self.version));
        }
        if self.scenarios.is_empty() {
            return Err(invalid(
                "scenario",
                "at least one [[scenario]] block is required",
            ));
        }
        if !(self.screen.width_mm > 0.0 && self.screen.height_mm > 0.0) {
            return Err(invalid("screen", "dimensions must be positive"));
        }
        let r = &self.rig;
        if !(r.focal_length_mm > 0.0 && r.diagonal_fov_deg > 0.0 && r.diagonal_fov_deg < 180.0) {
            return Err(invalid(
                "rig",
                "focal length and field of view must be positive (fov < 180)",
            ));
        }
        if r.resolution[0] == 0 || r.resolution[1] == 0 {
            return Err(invalid("rig.resolution", "must be positive"));
        }
        if !(r.row_spacing_mm > 0.0 && r.standoff_mm >= 0.0) {
            return Err(invalid(
                "rig",
                "row spacing must be positive and standoff non-negative",
            ));
        }
        let mut names = Vec::new();
        for (i, s) in self.scenarios.iter().enumerate() {
            let key = |field: &str| format!("scenario[{i}].{field}");
            if s.name.is_empty()
                || !s
                    .name
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
            {
                return Err(invalid(
                    key("name"),
                    "must be a non-empty identifier of [A-Za-z0-9_-]",
                ));
            }
            if names.contains(&s.name) {
                return Err(invalid(
                    key("name"),
                    format!("duplicate scenario name `{}`", s.name),
                ));
            }
            names.push(s.name.clone());
            if s.layouts.is_empty() {
                return Err(invalid(key("layouts"), "sweep must not be empty"));
            }
            if s.camera_counts.is_empty() || s.camera_counts.contains(&0) {
                return Err(invalid(
                    key("camera_counts"),
                    "sweep must be non-empty with counts >= 1",
                ));
            }
            if s.weight_map_resolution.contains(&0) {
                return Err(invalid(key("weight_map_resolution"), "must be positive"));
            }
            for spec in self.expand_one(s) {
                spec.validate()
                    .map_err(|e| invalid(key("*"), e.to_string()))?;
            }
        }
        Ok(())
    }

    fn expand_one(&self, s: &ScenarioConfig) -> Vec<ScenarioSpec> {
        let screen = Screen::new(self.screen.width_mm, self.screen.height_mm)
            .unwrap_or_else(|_| Screen::default_24inch());
        let eye = s
            .eye
            .apply(self.eye.apply(EyeParams::typical(EyeSide::Right)));
        let [cx, cy, cz] = s.calibration_position;
        let calibration_position = Vec3::new(cx, cy, cz);
        let aim = self
            .rig
            .aim
            .map(|[x, y, z]| Vec3::new(x, y, z))
            .unwrap_or(calibration_position);
        let rig = RigGeometry {
            standoff_mm: self.rig.standoff_mm,
            row_spacing_mm: self.rig.row_spacing_mm,
            aim,
            intrinsics: Intrinsics::from_diagonal_fov(
                self.rig.focal_length_mm,
                self.rig.diagonal_fov_deg,
                self.rig.resolution[0],
                self.rig.resolution[1],
            ),
        };
        let mut out = Vec::new();
        for &layout in &s.layouts {
            for &cameras in &s.camera_counts {
                let mut spec = ScenarioSpec::new(&s.name, s.kind, layout, cameras);
                spec.noise_levels = s.noise_levels.clone();
                spec.calibration_position = calibration_position;
                spec.displacements = s.displacements.clone();
                spec.frames_per_calibration_point = s.frames_per_calibration_point;
                spec.frames_per_test_point = s.frames_per_test_point;
                spec.test_points_per_cell = s.test_points_per_cell;
                spec.seed = self.seed;
                spec.fusion = s.fusion.clone();
                spec.head_mode = s.head_mode;
                spec.eye = eye;
                spec.binocular = s.binocular;
                spec.ipd_mm = s.ipd_mm;
                spec.camera_noise_scale = if s.camera_noise_scale.is_empty() {
                    Vec::new()
                } else {
                    (0..cameras)
                        .map(|c| s.camera_noise_scale.get(c).copied().unwrap_or(1.0))
                        .collect()
                };
                spec.calibration_order = s.calibration_order;
                spec.ridge_lambda = s.ridge_lambda;
                spec.calibration_margin = s.calibration_margin;
                spec.alpha_max_deg = s.alpha_max_deg;
                spec.weight_map_resolution =
                    (s.weight_map_resolution[0], s.weight_map_resolution[1]);
                spec.screen = screen;
                spec.rig = rig;
                out.push(spec);
            }
        }
        out
    }

    /// Scenario blocks in file order, each expanded over layouts × camera counts.
    pub fn plans(&self) -> Vec<ScenarioPlan> {
        self.scenarios
            .iter()
            .map(|s| ScenarioPlan {
                name: s.name.clone(),
                specs: self.expand_one(s),
            })
            .collect()
    }
}

pub fn parse_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    RunConfig::from_toml(&text, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "version = 1\n[[scenario]]\nname = \"sh\"\n";

    #[test]
    fn minimal_defaults() {
        let c = RunConfig::from_toml(MINIMAL, "mem").unwrap();
        assert_eq!(c.output_dir, PathBuf::from("results"));
        assert_eq!(c.seed, 0);
        let s = &c.scenarios[0];
        assert_eq!(s.kind, ScenarioKind::Sh);
        assert_eq!(s.noise_levels, vec![0.0, 0.1, 0.2, 0.4]);
        assert_eq!(s.calibration_position, [0.0, 200.0, 600.0]);
        assert_eq!(s.frames_per_test_point, 100);
        let plans = c.plans();
        assert_eq!(plans[0].specs.len(), 4);
        assert_eq!(plans[0].specs[0].eye, EyeParams::typical(EyeSide::Right));
    }

    #[test]
    fn unknown_key_is_named() {
        let text = "version = 1\n[[scenario]]\nname = \"sh\"\nnoise_lvl = [0.1]\n";
        let err = RunConfig::from_toml(text, "cfg.toml")
            .unwrap_err()
            .to_string();
        assert!(err.contains("noise_lvl"), "{err}");
        assert!(err.contains("line 4"), "{err}");
    }

    #[test]
    fn bad_version_and_values() {
        assert!(matches!(
            RunConfig::from_toml("version = 2\n[[scenario]]\nname = \"a\"\n", "m"),
            Err(ConfigError::UnsupportedVersion(2))
        ));
        let err = RunConfig::from_toml(
            "version = 1\n[[scenario]]\nname = \"a\"\ncamera_counts = []\n",
            "m",
        )
        .unwrap_err();
        assert!(
            err.to_string().contains("scenario[0].camera_counts"),
            "{err}"
        );
        let err = RunConfig::from_toml(
            "version = 1\n[[scenario]]\nname = \"a\"\nnoise_levels = [-1.0]\n",
            "m",
        )
        .unwrap_err();
        assert!(matches!(err, ConfigError::Invalid { .. }));
        let err = RunConfig::from_toml(
            "version = 1\n[[scenario]]\nname = \"a\"\nfusion = [\"avg\"]\n",
            "m",
        )
        .unwrap_err();
        assert!(matches!(err, ConfigError::Parse { .. }));
    }

    #[test]
    fn round_trip() {
        let text = r#"
version = 1
seed = 42
output_dir = "out"
[eye]
alpha_deg = 4.0
[[scenario]]
name = "mh"
kind = "mh"
layouts = ["case1"]
camera_counts = [1, 3]
noise_levels = [0.2]
fusion = ["simple", "behavior"]
camera_noise_scale = [3.0]
[scenario.displacements]
x = [-50.0, 0.0, 50.0]
y = []
z = [100.0]
[scenario.eye]
beta_deg = 1.0
"#;
        let c = RunConfig::from_toml(text, "m").unwrap();
        let again = RunConfig::from_toml(&c.to_toml(), "m").unwrap();
        assert_eq!(c, again);
        let spec = &c.plans()[0].specs[1];
        assert_eq!(spec.eye.alpha_deg, 4.0);
        assert_eq!(spec.eye.beta_deg, 1.0);
        assert_eq!(spec.camera_noise_scale, vec![3.0, 1.0, 1.0]);
        assert_eq!(spec.seed, 42);
    }

    #[test]
    fn missing_file() {
        assert!(matches!(
            parse_config(Path::new("/nonexistent/x.toml")),
            Err(ConfigError::Io { .. })
        ));
    }
}
