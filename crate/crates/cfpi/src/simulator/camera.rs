//! Stereo rig and feature-track synthesis.

use nalgebra::{Matrix3, Matrix6, Vector2, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::manifold::{ExtrinsicCalib, ImuState, Pose, Quat, Vector6};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CameraConfig {
    /// Frame rate, Hz.
    pub rate: f64,
    /// Focal length, px.
    pub focal_length: f64,
    pub width: u32,
    pub height: u32,
    /// Stereo baseline, m.
    pub baseline: f64,
    /// Image noise per axis, px.
    pub pixel_sigma: f64,
    /// Number of simultaneously tracked world points.
    pub features: usize,
    /// Depth range for newly spawned points, m.
    pub min_depth: f64,
    pub max_depth: f64,
    /// Points closer than this are not observed, m.
    pub near_clip: f64,
    /// Rotation noise of synthetic relative-pose measurements, rad.
    pub relpose_sigma_rotation: f64,
    /// Translation noise of synthetic relative-pose measurements, m.
    pub relpose_sigma_position: f64,
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self {
            rate: 10.0,
            focal_length: 450.0,
            width: 752,
            height: 480,
            baseline: 0.11,
            pixel_sigma: 1.0,
            features: 80,
            min_depth: 2.0,
            max_depth: 15.0,
            near_clip: 0.3,
            relpose_sigma_rotation: 0.002,
            relpose_sigma_position: 0.01,
        }
    }
}

impl CameraConfig {
    /// Left and right camera extrinsics. Both cameras look along the body
    /// x axis, with image x to the body's right and image y down.
    pub fn rig(&self) -> Vec<ExtrinsicCalib> {
        let r = Matrix3::new(0.0, -1.0, 0.0, 0.0, 0.0, -1.0, 1.0, 0.0, 0.0);
        let q_ci = Quat::from_rotation(&r);
        let half = 0.5 * self.baseline;
        vec![
            ExtrinsicCalib { q_ci, p_ic: Vector3::new(0.05, half, 0.0) },
            ExtrinsicCalib { q_ci, p_ic: Vector3::new(0.05, -half, 0.0) },
        ]
    }

    /// Standard deviation of normalized image coordinates.
    pub fn normalized_sigma(&self) -> f64 {
        self.pixel_sigma / self.focal_length
    }

    /// Covariance of a relative-pose measurement over `[θ, p]`.
    pub fn relpose_covariance(&self) -> Matrix6<f64> {
        let (r, p) = (self.relpose_sigma_rotation.powi(2), self.relpose_sigma_position.powi(2));
        Matrix6::from_diagonal(&Vector6::new(r, r, r, p, p, p))
    }

    /// Normalized coordinates of a camera-frame point if it is in view.
    pub fn project(&self, pc: &Vector3<f64>) -> Option<Vector2<f64>> {
        if pc.z <= self.near_clip {
            return None;
        }
        let z = Vector2::new(pc.x / pc.z, pc.y / pc.z);
        let (hw, hh) = (0.5 * self.width as f64, 0.5 * self.height as f64);
        let (u, v) = (self.focal_length * z.x, self.focal_length * z.y);
        (u.abs() < hw && v.abs() < hh).then_some(z)
    }
}

/// Point in the frame of `cam` mounted on an IMU at `pose`.
pub fn camera_point(cam: &ExtrinsicCalib, pose: &Pose, p: &Vector3<f64>) -> Vector3<f64> {
    let (r_cg, p_c) = cam.camera_pose(pose);
    r_cg * (p - p_c)
}

/// Measurement of one world point in one stereo frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StereoObs {
    /// Persistent id of the world point.
    pub id: u64,
    pub left: Option<Vector2<f64>>,
    pub right: Option<Vector2<f64>>,
}

/// All measurements at one camera time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub t: f64,
    /// Index of the IMU sample at this time.
    pub imu_index: usize,
    pub truth: ImuState,
    pub observations: Vec<StereoObs>,
}

/// World points currently tracked.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureWorld {
    pub points: Vec<(u64, Vector3<f64>)>,
    next_id: u64,
}

impl FeatureWorld {
    pub fn new() -> Self {
        Self { points: Vec::new(), next_id: 0 }
    }

    /// Draws a point inside the left camera's field of view at a depth in
    /// `[min_depth, max_depth]`.
    fn spawn(&mut self, cfg: &CameraConfig, cam: &ExtrinsicCalib, pose: &Pose, rng: &mut impl Rng) -> (u64, Vector3<f64>) {
        let (r_cg, p_c) = cam.camera_pose(pose);
        let (hw, hh) = (0.5 * cfg.width as f64, 0.5 * cfg.height as f64);
        let u = rng.random_range(-0.95 * hw..0.95 * hw) / cfg.focal_length;
        let v = rng.random_range(-0.95 * hh..0.95 * hh) / cfg.focal_length;
        let d = rng.random_range(cfg.min_depth..cfg.max_depth);
        let pw = r_cg.transpose() * (Vector3::new(u, v, 1.0) * d) + p_c;
        let id = self.next_id;
        self.next_id += 1;
        (id, pw)
    }
}

impl Default for FeatureWorld {
    fn default() -> Self {
        Self::new()
    }
}

fn noisy(z: Vector2<f64>, sigma: f64, rng: &mut impl Rng) -> Vector2<f64> {
    z + Vector2::new(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal)) * sigma
}

/// Stereo observations of `cfg.features` points at every camera time.
///
/// A point that leaves both fields of view is replaced by a new one, with a
/// new id, spawned in the left camera's view. `world_rng` drives the point
/// positions and `pixel_rng` the image noise.
pub fn synthesize_features(
    cfg: &CameraConfig,
    truth: &[(f64, usize, ImuState)],
    world_rng: &mut impl Rng,
    pixel_rng: &mut impl Rng,
) -> Vec<Frame> {
    let rig = cfg.rig();
    let sigma = cfg.normalized_sigma();
    let mut world = FeatureWorld::new();
    let mut frames = Vec::with_capacity(truth.len());
    for &(t, imu_index, state) in truth {
        let pose = state.pose();
        let mut observations = Vec::with_capacity(cfg.features);
        for slot in 0..cfg.features {
            loop {
                if slot >= world.points.len() {
                    let p = world.spawn(cfg, &rig[0], &pose, world_rng);
                    world.points.push(p);
                }
                let (id, pw) = world.points[slot];
                let left = cfg.project(&camera_point(&rig[0], &pose, &pw));
                let right = cfg.project(&camera_point(&rig[1], &pose, &pw));
                if left.is_none() && right.is_none() {
                    world.points[slot] = world.spawn(cfg, &rig[0], &pose, world_rng);
                    continue;
                }
                observations.push(StereoObs {
                    id,
                    left: left.map(|z| noisy(z, sigma, pixel_rng)),
                    right: right.map(|z| noisy(z, sigma, pixel_rng)),
                });
                break;
            }
        }
        frames.push(Frame { t, imu_index, truth: state, observations });
    }
    frames
}

/// Depth along the left optical axis from a stereo pair of normalized
/// observations, by linear least squares.
pub fn stereo_depth(rig: &[ExtrinsicCalib], left: &Vector2<f64>, right: &Vector2<f64>) -> Option<f64> {
    // Right-camera point: R m d + p, with m the left bearing.
    let (r_l, p_l) = rig[0].camera_pose(&Pose::identity());
    let (r_r, p_r) = rig[1].camera_pose(&Pose::identity());
    let r = r_r * r_l.transpose();
    let p = r_r * (p_l - p_r);
    let m = Vector3::new(left.x, left.y, 1.0);
    let rm = r * m;
    let a = Vector2::new(rm.x - right.x * rm.z, rm.y - right.y * rm.z);
    let b = -Vector2::new(p.x - right.x * p.z, p.y - right.y * p.z);
    let d = a.dot(&b) / a.norm_squared();
    d.is_finite().then_some(d)
}
