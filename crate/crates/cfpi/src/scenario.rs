//! JSON scenario description for Monte-Carlo comparisons.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::estimator::EstimatorConfig;
use crate::preintegration::PreintModel;
use crate::simulator::{CameraConfig, ImuConfig, TrajectoryConfig};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("invalid scenario: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

/// One benchmark scenario. Unknown keys are rejected at every level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub trajectory: TrajectoryConfig,
    pub imu: ImuConfig,
    pub camera: CameraConfig,
    pub estimator: EstimatorConfig,
    pub models: Vec<PreintModel>,
    pub runs: usize,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            trajectory: TrajectoryConfig::default(),
            imu: ImuConfig::default(),
            camera: CameraConfig::default(),
            estimator: EstimatorConfig::default(),
            models: PreintModel::ALL.to_vec(),
            runs: 50,
            seed: 0,
        }
    }
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<(), ConfigError> {
    if ok {
        Ok(())
    } else {
        Err(ConfigError::Invalid(msg()))
    }
}

impl ScenarioConfig {
    pub fn from_json(s: &str) -> Result<Self, ConfigError> {
        let cfg: ScenarioConfig = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let s = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::from_json(&s)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let t = &self.trajectory;
        check(t.duration > 0.0 && t.duration.is_finite(), || format!("trajectory.duration must be positive, got {}", t.duration))?;
        check(t.radius >= 0.0, || "trajectory.radius must be non-negative".into())?;
        check(t.vertical_frequency >= 0.0 && t.attitude_frequency >= 0.0, || {
            "trajectory frequencies must be non-negative".into()
        })?;
        let imu = &self.imu;
        check(imu.rate > 0.0 && imu.rate.is_finite(), || format!("imu.rate must be positive, got {}", imu.rate))?;
        let n = &imu.noise;
        check([n.sigma_g, n.sigma_a, n.sigma_wg, n.sigma_wa].iter().all(|s| *s >= 0.0 && s.is_finite()), || {
            "imu.noise densities must be non-negative".into()
        })?;
        let c = &self.camera;
        check(c.rate > 0.0 && c.rate <= imu.rate, || format!("camera.rate must be in (0, imu.rate], got {}", c.rate))?;
        let ratio = imu.rate / c.rate;
        check((ratio - ratio.round()).abs() < 1e-9, || {
            format!("imu.rate {} must be a multiple of camera.rate {}", imu.rate, c.rate)
        })?;
        check(c.focal_length > 0.0 && c.baseline > 0.0, || "camera focal_length and baseline must be positive".into())?;
        check(c.pixel_sigma >= 0.0, || "camera.pixel_sigma must be non-negative".into())?;
        check(c.relpose_sigma_rotation >= 0.0 && c.relpose_sigma_position >= 0.0, || {
            "camera relative-pose sigmas must be non-negative".into()
        })?;
        check(c.min_depth > 0.0 && c.max_depth > c.min_depth, || "camera depth range is empty".into())?;
        let e = &self.estimator;
        check(e.window.inertial >= 1, || "estimator.window.inertial must be at least 1".into())?;
        check(e.divergence_threshold > 0.0, || "estimator.divergence_threshold must be positive".into())?;
        e.solver.validate().map_err(|err| ConfigError::Invalid(format!("estimator.solver: {err}")))?;
        check(!self.models.is_empty(), || "models must not be empty".into())?;
        for (i, m) in self.models.iter().enumerate() {
            check(!self.models[..i].contains(m), || format!("model {} listed twice", m.name()))?;
        }
        check(self.runs >= 1, || "runs must be at least 1".into())?;
        Ok(())
    }
}
