//! Relative-pose factor between two IMU poses.

use nalgebra::{Matrix6, Vector3};
use serde::{Deserialize, Serialize};

use super::{left_diff_jacobian, sign_of, two_vec, FactorError};
use crate::manifold::{skew, Pose, Quat, Vector6};

/// Measured pose of `j` relative to `k` with its covariance over `[θ, p]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelativePoseMeas {
    /// `ʲ_k q̆`
    pub q_jk: Quat,
    /// `ᵏp̆_j`
    pub p_kj: Vector3<f64>,
    pub cov: Matrix6<f64>,
}

impl RelativePoseMeas {
    /// Noise-free measurement between two poses.
    pub fn between(x_k: &Pose, x_j: &Pose, cov: Matrix6<f64>) -> Self {
        Self {
            q_jk: x_j.q.mul(&x_k.q.inverse()),
            p_kj: x_k.q.to_rotation() * (x_j.p - x_k.p),
            cov,
        }
    }

    /// Information matrix, failing if the covariance is not positive definite.
    pub fn information(&self) -> Result<Matrix6<f64>, FactorError> {
        let sym = (self.cov + self.cov.transpose()) * 0.5;
        let inv = sym.cholesky().ok_or(FactorError::NotPositiveDefinite)?.inverse();
        Ok((inv + inv.transpose()) * 0.5)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct RelPoseResidual {
    /// `[e_θ, e_p]`
    pub e: Vector6,
    /// `∂e/∂[δθ_k, δp_k]`
    pub jk: Matrix6<f64>,
    /// `∂e/∂[δθ_j, δp_j]`
    pub jj: Matrix6<f64>,
}

/// Residual `[2 vec(ʲq ⊗ ᵏq⁻¹ ⊗ ʲ_k q̆⁻¹); ᵏ_G R (p_j − p_k) − ᵏp̆_j]`.
pub fn relative_pose_factor(x_k: &Pose, x_j: &Pose, m: &RelativePoseMeas) -> RelPoseResidual {
    let q_n = x_j.q.mul(&x_k.q.inverse());
    let q_r = q_n.mul_raw(&m.q_jk.inverse());
    let rk = x_k.q.to_rotation();
    let dp = rk * (x_j.p - x_k.p);

    let mut e = Vector6::zeros();
    e.fixed_rows_mut::<3>(0).copy_from(&two_vec(&q_r));
    e.fixed_rows_mut::<3>(3).copy_from(&(dp - m.p_kj));

    let mut jk = Matrix6::zeros();
    let mut jj = Matrix6::zeros();
    jj.fixed_view_mut::<3, 3>(0, 0).copy_from(&left_diff_jacobian(&q_r));
    jk.fixed_view_mut::<3, 3>(0, 0)
        .copy_from(&(-Quat::sandwich_jacobian(&q_n, &m.q_jk.inverse()) * sign_of(q_r.w)));
    jk.fixed_view_mut::<3, 3>(3, 0).copy_from(&skew(&dp));
    jk.fixed_view_mut::<3, 3>(3, 3).copy_from(&-rk);
    jj.fixed_view_mut::<3, 3>(3, 3).copy_from(&rk);
    RelPoseResidual { e, jk, jj }
}
