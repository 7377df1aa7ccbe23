//! IMU measurement synthesis.

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::trajectory::{TrajectoryConfig, TruthMode};
use crate::manifold::ImuState;
use crate::preintegration::{preintegrate_interval, BiasLinearization, ImuNoise, ImuSample, PreintModel};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImuConfig {
    /// Sample rate, Hz.
    pub rate: f64,
    pub noise: ImuNoise,
    /// Gyroscope bias at `t = 0`, rad/s.
    pub initial_bg: Vector3<f64>,
    /// Accelerometer bias at `t = 0`, m/s².
    pub initial_ba: Vector3<f64>,
}

impl Default for ImuConfig {
    fn default() -> Self {
        Self {
            rate: 100.0,
            noise: ImuNoise::default(),
            initial_bg: Vector3::new(0.002, -0.001, 0.0015),
            initial_ba: Vector3::new(0.02, -0.015, 0.03),
        }
    }
}

/// Noisy samples and the true state at every sample time.
#[derive(Clone, Debug)]
pub struct ImuStream {
    pub samples: Vec<ImuSample>,
    pub truth: Vec<ImuState>,
}

impl ImuStream {
    pub fn rate(&self) -> f64 {
        if self.samples.len() < 2 {
            return 0.0;
        }
        1.0 / (self.samples[1].t - self.samples[0].t)
    }
}

fn gaussian3(rng: &mut impl Rng) -> Vector3<f64> {
    Vector3::from_fn(|_, _| rng.sample(StandardNormal))
}

/// Samples the trajectory at `cfg.rate`, adding white noise of density `σ`
/// as `σ/√Δt` per sample and integrating the bias random walks.
pub fn synthesize_imu(traj: &TrajectoryConfig, cfg: &ImuConfig, rng: &mut impl Rng) -> ImuStream {
    let dt = 1.0 / cfg.rate;
    let n = (traj.duration * cfg.rate).round() as usize;
    let nz = &cfg.noise;
    let (mut bg, mut ba) = (cfg.initial_bg, cfg.initial_ba);
    let mut samples = Vec::with_capacity(n + 1);
    let mut truth = Vec::with_capacity(n + 1);
    let mut consistent: Option<ImuState> = None;
    for k in 0..=n {
        let t = k as f64 * dt;
        let x = traj.eval_unchecked(t);
        let state = match (traj.truth, consistent) {
            (TruthMode::SampleConsistent, Some(s)) => ImuState { bg, ba, ..s },
            _ => x.state(bg, ba),
        };
        truth.push(state);
        if traj.truth == TruthMode::SampleConsistent {
            let lin = BiasLinearization::new(Vector3::zeros(), Vector3::zeros(), state.q);
            let held = [ImuSample { t, omega: x.omega, accel: x.specific_force }];
            let step = preintegrate_interval(PreintModel::Model1, lin, ImuNoise::zero(), &held, t, t + dt);
            consistent = Some(step.predict(&state));
        }
        let scale = 1.0 / dt.sqrt();
        samples.push(ImuSample {
            t,
            omega: x.omega + bg + gaussian3(rng) * (nz.sigma_g * scale),
            accel: x.specific_force + ba + gaussian3(rng) * (nz.sigma_a * scale),
        });
        bg += gaussian3(rng) * (nz.sigma_wg * dt.sqrt());
        ba += gaussian3(rng) * (nz.sigma_wa * dt.sqrt());
    }
    ImuStream { samples, truth }
}
