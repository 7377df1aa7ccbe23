//! Residuals and analytic Jacobians for every measurement type.
//!
//! All Jacobians are taken with respect to the error state of the retraction
//! in [`crate::manifold`], i.e. `δθ` enters as `quat(δθ) ⊗ q̂`. To first order
//! this is the `[δθ/2; 1] ⊗ q̂` perturbation the closed forms are derived for.

pub mod imu;
pub mod prior;
pub mod relpose;
pub mod robust;
pub mod visual;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use imu::{imu_factor, imu_factor_model1, imu_factor_model2, ImuResidual};
pub use prior::{marginal_prior_factor, sqrt_information, BlockValue, MarginalPrior};
pub use relpose::{relative_pose_factor, RelPoseResidual, RelativePoseMeas};
pub use robust::{robust_weight, RobustKind};
pub use visual::{inverse_depth_factor, VisualCase, VisualResidual};

use crate::manifold::skew;
#[cfg(doc)]
use crate::manifold::Quat;

/// Identifier of a node in a factor graph.
pub type NodeId = usize;

/// Part of a node's error state that forms one optimization block.
///
/// IMU states are split so that the velocity and biases can be marginalized
/// while the pose stays in the window.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Part {
    /// `[θ, p]`, 6 DOF.
    Pose,
    /// `[b_ω, v, b_a]`, 9 DOF.
    SpeedBias,
    /// The whole node (features and vector nodes).
    Whole,
}

impl Part {
    /// Columns of a 15-DOF IMU Jacobian belonging to this part, in block order.
    pub fn imu_columns(self) -> &'static [usize] {
        const POSE: [usize; 6] = [0, 1, 2, 12, 13, 14];
        const SB: [usize; 9] = [3, 4, 5, 6, 7, 8, 9, 10, 11];
        match self {
            Part::Pose => &POSE,
            Part::SpeedBias => &SB,
            Part::Whole => &[],
        }
    }
}

/// One optimization block: a node and the part of its error state.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct BlockKey {
    pub node: NodeId,
    pub part: Part,
}

impl BlockKey {
    pub fn new(node: NodeId, part: Part) -> Self {
        Self { node, part }
    }
}

/// Linearized factor in generic form.
#[derive(Clone, Debug)]
pub struct ResidualBlock {
    pub e: DVector<f64>,
    pub jacobians: Vec<(BlockKey, DMatrix<f64>)>,
    pub info: DMatrix<f64>,
    pub robust: RobustKind,
}

impl ResidualBlock {
    /// Squared normalized residual `eᵀ Λ e`.
    pub fn squared_norm(&self) -> f64 {
        self.e.dot(&(&self.info * &self.e))
    }

    /// Robust cost `ρ(eᵀ Λ e)`.
    pub fn cost(&self) -> f64 {
        self.robust.eval(self.squared_norm()).0
    }

    pub fn jacobian(&self, key: BlockKey) -> Option<&DMatrix<f64>> {
        self.jacobians.iter().find(|(k, _)| *k == key).map(|(_, j)| j)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FactorError {
    #[error("factor expects a {expected} preintegration, got {got}")]
    ModelMismatch { expected: &'static str, got: &'static str },
    #[error("covariance is not positive definite")]
    NotPositiveDefinite,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("block {index} has type {got}, prior expects {expected}")]
    BlockTypeMismatch { index: usize, expected: &'static str, got: &'static str },
    #[error("negative squared residual {0}")]
    NegativeSquaredResidual(f64),
    #[error("robust parameter must be positive, got {0}")]
    InvalidRobustParameter(f64),
}

#[inline]
fn sign_of(w: f64) -> f64 {
    if w < 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// `2 vec(q)` with the sign convention of [`Quat::small_angle_diff`].
#[inline]
pub(crate) fn two_vec(q: &Vector4<f64>) -> Vector3<f64> {
    q.xyz() * (2.0 * sign_of(q.w))
}

/// Jacobian of [`two_vec`] under a left perturbation `q ← quat(δ) ⊗ q`,
/// i.e. `±(q₄ I + ⌊q⌋)`.
#[inline]
pub(crate) fn left_diff_jacobian(q: &Vector4<f64>) -> Matrix3<f64> {
    (Matrix3::identity() * q.w + skew(&q.xyz())) * sign_of(q.w)
}

#[cfg(test)]
pub(crate) use crate::oracle::configs as testutil;
