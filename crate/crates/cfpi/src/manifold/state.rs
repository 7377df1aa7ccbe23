//! State types living on the estimation manifold.

use nalgebra::{SVector, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::quat::Quat;

/// Offsets of each block inside the 15-dimensional IMU error state
/// `[θ, b_ω, v, b_a, p]`.
pub mod idx {
    pub const THETA: usize = 0;
    pub const BG: usize = 3;
    pub const V: usize = 6;
    pub const BA: usize = 9;
    pub const P: usize = 12;
}

pub type Vector15 = SVector<f64, 15>;
pub type Vector6 = SVector<f64, 6>;

/// Full IMU navigation state at one time instant.
///
/// `q` is `ᴵ_G q` (global to IMU), velocity and position are expressed in the
/// global frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImuState {
    pub q: Quat,
    pub bg: Vector3<f64>,
    pub v: Vector3<f64>,
    pub ba: Vector3<f64>,
    pub p: Vector3<f64>,
}

impl Default for ImuState {
    fn default() -> Self {
        Self {
            q: Quat::identity(),
            bg: Vector3::zeros(),
            v: Vector3::zeros(),
            ba: Vector3::zeros(),
            p: Vector3::zeros(),
        }
    }
}

impl ImuState {
    pub const DOF: usize = 15;

    pub fn boxplus(&self, dx: &Vector15) -> ImuState {
        ImuState {
            q: self.q.boxplus(&dx.fixed_rows::<3>(idx::THETA).into_owned()),
            bg: self.bg + dx.fixed_rows::<3>(idx::BG),
            v: self.v + dx.fixed_rows::<3>(idx::V),
            ba: self.ba + dx.fixed_rows::<3>(idx::BA),
            p: self.p + dx.fixed_rows::<3>(idx::P),
        }
    }

    /// `self ⊟ other`, the exact inverse of [`ImuState::boxplus`].
    pub fn boxminus(&self, other: &ImuState) -> Vector15 {
        let mut d = Vector15::zeros();
        d.fixed_rows_mut::<3>(idx::THETA).copy_from(&self.q.boxminus(&other.q));
        d.fixed_rows_mut::<3>(idx::BG).copy_from(&(self.bg - other.bg));
        d.fixed_rows_mut::<3>(idx::V).copy_from(&(self.v - other.v));
        d.fixed_rows_mut::<3>(idx::BA).copy_from(&(self.ba - other.ba));
        d.fixed_rows_mut::<3>(idx::P).copy_from(&(self.p - other.p));
        d
    }

    pub fn pose(&self) -> Pose {
        Pose { q: self.q, p: self.p }
    }
}

/// Orientation and position only, with error state `[θ, p]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
pub struct Pose {
    pub q: Quat,
    pub p: Vector3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Self { q: Quat::identity(), p: Vector3::zeros() }
    }

    pub const DOF: usize = 6;

    pub fn boxplus(&self, dx: &Vector6) -> Pose {
        Pose {
            q: self.q.boxplus(&dx.fixed_rows::<3>(0).into_owned()),
            p: self.p + dx.fixed_rows::<3>(3),
        }
    }

    pub fn boxminus(&self, other: &Pose) -> Vector6 {
        let mut d = Vector6::zeros();
        d.fixed_rows_mut::<3>(0).copy_from(&self.q.boxminus(&other.q));
        d.fixed_rows_mut::<3>(3).copy_from(&(self.p - other.p));
        d
    }
}

/// Reference to the camera observation that anchors an inverse-depth feature.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Anchor {
    /// Graph node of the anchoring pose.
    pub node: usize,
    /// Index of the anchoring camera.
    pub camera: usize,
}

/// Point feature in anchored inverse-depth form.
///
/// In the anchor camera frame the point is `(1/ρ) [α, β, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvDepthFeature {
    pub alpha: f64,
    pub beta: f64,
    pub rho: f64,
    pub anchor: Anchor,
}

impl InvDepthFeature {
    pub const DOF: usize = 3;

    pub fn params(&self) -> Vector3<f64> {
        Vector3::new(self.alpha, self.beta, self.rho)
    }

    pub fn with_params(&self, x: &Vector3<f64>) -> InvDepthFeature {
        InvDepthFeature { alpha: x.x, beta: x.y, rho: x.z, anchor: self.anchor }
    }

    pub fn boxplus(&self, dx: &Vector3<f64>) -> InvDepthFeature {
        self.with_params(&(self.params() + dx))
    }

    /// Bearing `[α, β]` in the anchor camera.
    pub fn bearing(&self) -> Vector2<f64> {
        Vector2::new(self.alpha, self.beta)
    }
}

/// IMU-to-camera extrinsics: `ᶜ_I q` and `ᴵp_C`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtrinsicCalib {
    pub q_ci: Quat,
    pub p_ic: Vector3<f64>,
}

impl ExtrinsicCalib {
    /// Pose of the camera in the global frame given the IMU pose.
    ///
    /// Returns `(ᶜ_G R, ᴳp_C)`.
    pub fn camera_pose(&self, imu: &Pose) -> (nalgebra::Matrix3<f64>, Vector3<f64>) {
        let r_ig = imu.q.to_rotation();
        let r_cg = self.q_ci.to_rotation() * r_ig;
        let p_c = imu.p + r_ig.transpose() * self.p_ic;
        (r_cg, p_c)
    }
}
