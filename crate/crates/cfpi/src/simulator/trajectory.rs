//! Closed-form circle-sinusoid trajectory.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::manifold::{ImuState, Quat};
use crate::preintegration::gravity_vector;

/// How the ground-truth states between IMU samples are defined.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TruthMode {
    /// States follow the analytic curve exactly.
    #[default]
    Analytic,
    /// States are the exact integral of the sampled body rate and specific
    /// force held constant between samples. Noiseless measurements are then
    /// exactly consistent with the piecewise-constant-measurement model.
    SampleConsistent,
}

/// Horizontal circle with a vertical sinusoid, heading along the velocity and
/// sinusoidal roll and pitch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrajectoryConfig {
    /// Circle radius, m.
    pub radius: f64,
    /// Rate around the circle, rad/s.
    pub angular_rate: f64,
    /// Vertical amplitude, m.
    pub vertical_amplitude: f64,
    /// Vertical frequency, Hz.
    pub vertical_frequency: f64,
    /// Roll amplitude, rad.
    pub roll_amplitude: f64,
    /// Pitch amplitude, rad.
    pub pitch_amplitude: f64,
    /// Roll and pitch frequency, Hz.
    pub attitude_frequency: f64,
    /// Length of the run, s.
    pub duration: f64,
    pub truth: TruthMode,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        Self {
            radius: 5.0,
            angular_rate: 0.8,
            vertical_amplitude: 1.0,
            vertical_frequency: 1.0,
            roll_amplitude: 0.15,
            pitch_amplitude: 0.1,
            attitude_frequency: 0.5,
            duration: 60.0,
            truth: TruthMode::Analytic,
        }
    }
}

/// Kinematics at one instant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajectoryPoint {
    /// `ᴳ_I R`, body to global.
    pub r_gi: Matrix3<f64>,
    pub p: Vector3<f64>,
    pub v: Vector3<f64>,
    /// Global acceleration.
    pub a: Vector3<f64>,
    /// Body angular velocity.
    pub omega: Vector3<f64>,
    /// Specific force in the body frame, `ᴵ_G R (ᴳa + ᴳg)`.
    pub specific_force: Vector3<f64>,
}

impl TrajectoryPoint {
    /// Navigation state with the given biases.
    pub fn state(&self, bg: Vector3<f64>, ba: Vector3<f64>) -> ImuState {
        ImuState { q: Quat::from_rotation(&self.r_gi.transpose()), bg, v: self.v, ba, p: self.p }
    }
}

#[derive(Clone, Copy, Debug, thiserror::Error, PartialEq)]
#[error("time {t} s is outside [0, {duration}] s")]
pub struct OutOfRange {
    pub t: f64,
    pub duration: f64,
}

fn rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

fn rot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

fn rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

impl TrajectoryConfig {
    /// Evaluates the trajectory; `t` must lie in `[0, duration]`.
    pub fn eval(&self, t: f64) -> Result<TrajectoryPoint, OutOfRange> {
        if !(0.0..=self.duration + 1e-9).contains(&t) {
            return Err(OutOfRange { t, duration: self.duration });
        }
        Ok(self.eval_unchecked(t))
    }

    /// Evaluates the trajectory at any time.
    pub fn eval_unchecked(&self, t: f64) -> TrajectoryPoint {
        let (r, w) = (self.radius, self.angular_rate);
        let wz = 2.0 * PI * self.vertical_frequency;
        let (s, c) = (w * t).sin_cos();
        let (sz, cz) = (wz * t).sin_cos();
        let h = self.vertical_amplitude;
        let p = Vector3::new(r * c, r * s, h * sz);
        let v = Vector3::new(-r * w * s, r * w * c, h * wz * cz);
        let a = Vector3::new(-r * w * w * c, -r * w * w * s, -h * wz * wz * sz);

        // Z-Y-X Euler angles and their rates.
        let wa = 2.0 * PI * self.attitude_frequency;
        let yaw = w * t + FRAC_PI_2;
        let pitch = self.pitch_amplitude * (wa * t).cos();
        let roll = self.roll_amplitude * (wa * t).sin();
        let dyaw = w;
        let dpitch = -self.pitch_amplitude * wa * (wa * t).sin();
        let droll = self.roll_amplitude * wa * (wa * t).cos();
        let r_gi = rot_z(yaw) * rot_y(pitch) * rot_x(roll);
        let (sr, cr) = roll.sin_cos();
        let (sp, cp) = pitch.sin_cos();
        let omega = Vector3::new(
            droll - dyaw * sp,
            dpitch * cr + dyaw * sr * cp,
            -dpitch * sr + dyaw * cr * cp,
        );
        let specific_force = r_gi.transpose() * (a + gravity_vector());
        TrajectoryPoint { r_gi, p, v, a, omega, specific_force }
    }

    /// Total path length over `[0, duration]`, by the trapezoid rule.
    pub fn path_length(&self, step: f64) -> f64 {
        let n = (self.duration / step).ceil() as usize;
        (0..n)
            .map(|i| {
                let t0 = i as f64 * step;
                let t1 = ((i + 1) as f64 * step).min(self.duration);
                0.5 * (self.eval_unchecked(t0).v.norm() + self.eval_unchecked(t1).v.norm()) * (t1 - t0)
            })
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::exp_so3;

    #[test]
    fn derivatives_match_finite_differences() {
        let traj = TrajectoryConfig::default();
        let h = 1e-6;
        for i in 0..50 {
            let t = 0.1 + i as f64 * 1.17;
            let x = traj.eval(t).unwrap();
            let (xp, xm) = (traj.eval(t + h).unwrap(), traj.eval(t - h).unwrap());
            assert!(((xp.p - xm.p) / (2.0 * h) - x.v).amax() < 1e-5);
            assert!(((xp.v - xm.v) / (2.0 * h) - x.a).amax() < 1e-5);
            // R(t + h) = R(t) exp(⌊ω h⌋) for a body-frame rate.
            let step = x.r_gi * exp_so3(&(x.omega * h));
            assert!((step - xp.r_gi).amax() < 1e-10);
        }
    }

    #[test]
    fn stationary_specific_force_is_gravity() {
        let traj = TrajectoryConfig {
            radius: 0.0,
            angular_rate: 0.0,
            vertical_amplitude: 0.0,
            roll_amplitude: 0.0,
            pitch_amplitude: 0.0,
            ..Default::default()
        };
        let x = traj.eval(3.0).unwrap();
        assert!(x.omega.norm() < 1e-15);
        let expected = x.r_gi.transpose() * Vector3::new(0.0, 0.0, 9.81);
        assert!((x.specific_force - expected).norm() < 1e-14);
    }

    #[test]
    fn level_circle_has_centripetal_acceleration() {
        let traj = TrajectoryConfig { vertical_amplitude: 0.0, ..Default::default() };
        let x = traj.eval(2.5).unwrap();
        assert!((x.a.norm() - 5.0 * 0.8 * 0.8).abs() < 1e-12);
    }

    #[test]
    fn heading_follows_velocity() {
        let traj = TrajectoryConfig { roll_amplitude: 0.0, pitch_amplitude: 0.0, ..Default::default() };
        let x = traj.eval(4.2).unwrap();
        let forward = x.r_gi.column(0);
        let vh = Vector3::new(x.v.x, x.v.y, 0.0).normalize();
        assert!((forward - vh).norm() < 1e-12);
    }

    #[test]
    fn out_of_range_time_is_rejected() {
        let traj = TrajectoryConfig::default();
        assert!(traj.eval(-0.1).is_err());
        assert!(traj.eval(60.5).is_err());
    }
}
