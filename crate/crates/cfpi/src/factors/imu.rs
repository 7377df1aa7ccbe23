//! Preintegrated IMU factors for both closed-form models and the discrete
//! baseline.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix3x4, Vector3, Vector4};

use super::{left_diff_jacobian, sign_of, two_vec, BlockKey, FactorError, NodeId, Part, ResidualBlock, RobustKind};
use crate::manifold::so3::coeff;
use crate::manifold::{idx, skew, ImuState, Quat, Vector15};
use crate::preintegration::{gravity_vector, Matrix15, PreintModel, PreintegratedFactor};

/// IMU residual with its Jacobians w.r.t. both 15-DOF states.
#[derive(Clone, Debug)]
pub struct ImuResidual {
    /// `[e_θ, e_bω, e_v, e_ba, e_p]`
    pub e: Vector15,
    /// `∂e/∂δx_k`
    pub jk: Matrix15,
    /// `∂e/∂δx_{k+1}`
    pub jk1: Matrix15,
}

impl ImuResidual {
    /// Generic form with the Jacobians split into pose and speed/bias blocks.
    pub fn into_block(self, from: NodeId, to: NodeId, info: &Matrix15) -> ResidualBlock {
        let mut jacobians = Vec::with_capacity(4);
        for (node, j) in [(from, &self.jk), (to, &self.jk1)] {
            for part in [Part::Pose, Part::SpeedBias] {
                let cols = part.imu_columns();
                jacobians.push((
                    BlockKey::new(node, part),
                    DMatrix::from_fn(15, cols.len(), |r, c| j[(r, cols[c])]),
                ));
            }
        }
        ResidualBlock {
            e: DVector::from_column_slice(self.e.as_slice()),
            jacobians,
            info: DMatrix::from_column_slice(15, 15, info.as_slice()),
            robust: RobustKind::None,
        }
    }
}

/// `quat(θ)` and its 4×3 derivative w.r.t. `θ`.
fn quat_with_derivative(theta: &Vector3<f64>) -> (Quat, nalgebra::Matrix4x3<f64>) {
    let n = theta.norm();
    let s = coeff::half_sin(n);
    let sdt = coeff::half_sin_dt(n);
    let q = Quat::from_coords_unchecked(Vector4::new(theta.x * s, theta.y * s, theta.z * s, (0.5 * n).cos()));
    let mut d = nalgebra::Matrix4x3::zeros();
    d.fixed_view_mut::<3, 3>(0, 0)
        .copy_from(&(Matrix3::identity() * s + theta * theta.transpose() * sdt));
    d.fixed_view_mut::<1, 3>(3, 0).copy_from(&(theta.transpose() * (-0.5 * s)));
    (q, d)
}

/// Evaluates the IMU residual for any model.
///
/// Model 1 and the discrete baseline share the residual with explicit gravity
/// terms; Model 2 carries gravity inside `Δv̆`, `Δp̆` and corrects for the
/// start orientation through `O_α`, `O_β`.
pub fn imu_factor(xk: &ImuState, xk1: &ImuState, f: &PreintegratedFactor) -> ImuResidual {
    let rk = xk.q.to_rotation();
    let dt = f.dt;
    let dbg = xk.bg - f.lin.bg;
    let dba = xk.ba - f.lin.ba;

    let mut e = Vector15::zeros();
    let mut jk = Matrix15::zeros();
    let mut jk1 = Matrix15::zeros();

    // Orientation: 2 vec(ᵏ⁺¹q ⊗ ᵏq⁻¹ ⊗ q̆⁻¹ ⊗ q_b).
    let (qb, dqb) = quat_with_derivative(&(f.jq * dbg));
    let q_n = xk1.q.mul(&xk.q.inverse());
    let q_r = q_n.mul(&f.q.inverse());
    let q_rb = q_r.mul_raw(&qb);
    let sign = sign_of(q_rb.w);
    e.fixed_rows_mut::<3>(idx::THETA).copy_from(&two_vec(&q_rb));
    jk1.fixed_view_mut::<3, 3>(idx::THETA, idx::THETA).copy_from(&left_diff_jacobian(&q_rb));
    let q_mb = f.q.inverse().mul(&qb);
    jk.fixed_view_mut::<3, 3>(idx::THETA, idx::THETA)
        .copy_from(&(-Quat::sandwich_jacobian(&q_n, &q_mb) * sign));
    let l_top: Matrix3x4<f64> = q_r.left_matrix().fixed_view::<3, 4>(0, 0).into_owned();
    jk.fixed_view_mut::<3, 3>(idx::THETA, idx::BG)
        .copy_from(&(l_top * dqb * f.jq * (2.0 * sign)));

    // Bias random walks.
    e.fixed_rows_mut::<3>(idx::BG).copy_from(&(xk1.bg - xk.bg));
    e.fixed_rows_mut::<3>(idx::BA).copy_from(&(xk1.ba - xk.ba));
    for off in [idx::BG, idx::BA] {
        jk.fixed_view_mut::<3, 3>(off, off).copy_from(&-Matrix3::identity());
        jk1.fixed_view_mut::<3, 3>(off, off).copy_from(&Matrix3::identity());
    }

    // Velocity and position.
    let (dv, dp) = match f.model {
        PreintModel::Model2 => (xk1.v - xk.v, xk1.p - xk.p - xk.v * dt),
        PreintModel::Model1 | PreintModel::Discrete => {
            let g = gravity_vector();
            (xk1.v - xk.v + g * dt, xk1.p - xk.p - xk.v * dt + g * (0.5 * dt * dt))
        }
    };
    let rdv = rk * dv;
    let rdp = rk * dp;
    let mut ev = rdv - f.jb * dbg - f.hb * dba - f.beta;
    let mut ep = rdp - f.ja * dbg - f.ha * dba - f.alpha;
    let mut jv_theta = skew(&rdv);
    let mut jp_theta = skew(&rdp);
    if f.model == PreintModel::Model2 {
        let q_t = xk.q.mul_raw(&f.lin.q_kg.inverse());
        let ot = two_vec(&q_t);
        let dot = left_diff_jacobian(&q_t);
        ev -= f.ob * ot;
        ep -= f.oa * ot;
        jv_theta -= f.ob * dot;
        jp_theta -= f.oa * dot;
    }
    e.fixed_rows_mut::<3>(idx::V).copy_from(&ev);
    e.fixed_rows_mut::<3>(idx::P).copy_from(&ep);

    jk.fixed_view_mut::<3, 3>(idx::V, idx::THETA).copy_from(&jv_theta);
    jk.fixed_view_mut::<3, 3>(idx::V, idx::BG).copy_from(&-f.jb);
    jk.fixed_view_mut::<3, 3>(idx::V, idx::V).copy_from(&-rk);
    jk.fixed_view_mut::<3, 3>(idx::V, idx::BA).copy_from(&-f.hb);
    jk1.fixed_view_mut::<3, 3>(idx::V, idx::V).copy_from(&rk);

    jk.fixed_view_mut::<3, 3>(idx::P, idx::THETA).copy_from(&jp_theta);
    jk.fixed_view_mut::<3, 3>(idx::P, idx::BG).copy_from(&-f.ja);
    jk.fixed_view_mut::<3, 3>(idx::P, idx::V).copy_from(&(-rk * dt));
    jk.fixed_view_mut::<3, 3>(idx::P, idx::BA).copy_from(&-f.ha);
    jk.fixed_view_mut::<3, 3>(idx::P, idx::P).copy_from(&-rk);
    jk1.fixed_view_mut::<3, 3>(idx::P, idx::P).copy_from(&rk);

    ImuResidual { e, jk, jk1 }
}

/// Model 1 (and discrete baseline) IMU factor.
pub fn imu_factor_model1(xk: &ImuState, xk1: &ImuState, f: &PreintegratedFactor) -> Result<ImuResidual, FactorError> {
    if f.model == PreintModel::Model2 {
        return Err(FactorError::ModelMismatch { expected: "m1 or discrete", got: f.model.name() });
    }
    Ok(imu_factor(xk, xk1, f))
}

/// Model 2 IMU factor.
pub fn imu_factor_model2(xk: &ImuState, xk1: &ImuState, f: &PreintegratedFactor) -> Result<ImuResidual, FactorError> {
    if f.model != PreintModel::Model2 {
        return Err(FactorError::ModelMismatch { expected: "m2", got: f.model.name() });
    }
    Ok(imu_factor(xk, xk1, f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factors::testutil::*;
    use crate::oracle::{central_difference, worst_jacobian_error};
    use crate::preintegration::{preintegrate_interval, BiasLinearization, ImuNoise};
    use rand::Rng;

    fn fd_check(xk: &ImuState, xk1: &ImuState, f: &PreintegratedFactor) -> f64 {
        let r = imu_factor(xk, xk1, f);
        let eval0 = |x: &ImuState| DVector::from_column_slice(imu_factor(x, xk1, f).e.as_slice());
        let eval1 = |x: &ImuState| DVector::from_column_slice(imu_factor(xk, x, f).e.as_slice());
        let fd0 = central_difference(xk, 15, 1e-6, eval0, perturb_imu);
        let fd1 = central_difference(xk1, 15, 1e-6, eval1, perturb_imu);
        let a0 = DMatrix::from_column_slice(15, 15, r.jk.as_slice());
        let a1 = DMatrix::from_column_slice(15, 15, r.jk1.as_slice());
        worst_jacobian_error(&a0, &fd0, 1e-5, 1e-8).max(worst_jacobian_error(&a1, &fd1, 1e-5, 1e-8))
    }

    #[test]
    fn jacobians_match_finite_differences() {
        let mut rng = seeded(11);
        for model in PreintModel::ALL {
            for _ in 0..100 {
                let (xk, xk1, f) = random_imu_config(&mut rng, model);
                let w = fd_check(&xk, &xk1, &f);
                assert!(w <= 1.0, "{model:?}: worst {w}");
            }
        }
    }

    #[test]
    fn residual_vanishes_at_truth() {
        let mut rng = seeded(12);
        for model in PreintModel::ALL {
            for _ in 0..20 {
                let (xk, xk1, f) = truth_imu_config(&mut rng, model, Vector3::zeros());
                let e = imu_factor(&xk, &xk1, &f).e;
                assert!(e.amax() < 1e-9, "{model:?}: {e}");
            }
        }
    }

    #[test]
    fn first_order_bias_shift_is_absorbed() {
        let mut rng = seeded(13);
        for model in PreintModel::ALL {
            let d: Vector3<f64> = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0)).normalize() * 1e-4;
            let (xk, xk1, f) = truth_imu_config(&mut rng, model, d);
            let e = imu_factor(&xk, &xk1, &f).e;
            assert!(e.norm() <= 1e-6, "{model:?}: {}", e.norm());
        }
    }

    #[test]
    fn model_mismatch_is_rejected() {
        let mut rng = seeded(14);
        let (xk, xk1, f1) = random_imu_config(&mut rng, PreintModel::Model1);
        let (_, _, f2) = random_imu_config(&mut rng, PreintModel::Model2);
        assert!(imu_factor_model2(&xk, &xk1, &f1).is_err());
        assert!(imu_factor_model1(&xk, &xk1, &f2).is_err());
        assert!(imu_factor_model1(&xk, &xk1, &f1).is_ok());
    }

    #[test]
    fn model2_orientation_correction_vanishes_along_gravity() {
        let mut rng = seeded(15);
        let (xk, _, f) = truth_imu_config(&mut rng, PreintModel::Model2, Vector3::zeros());
        let g_k = xk.q.to_rotation() * gravity_vector();
        let d = g_k.normalize() * 1e-3;
        let pert = ImuState { q: xk.q.boxplus(&d), ..xk };
        // Only the ⌊R_k(·)⌋ state terms change; the O-correction stays zero.
        let q_t = pert.q.mul_raw(&f.lin.q_kg.inverse());
        let o = f.ob * two_vec(&q_t);
        assert!(o.amax() < 1e-12, "{o}");
        let o = f.oa * two_vec(&q_t);
        assert!(o.amax() < 1e-12, "{o}");
    }

    #[test]
    fn stationary_models_agree() {
        let q = Quat::exp(&Vector3::new(0.0, 0.0, 0.4));
        let a_m = q.to_rotation() * gravity_vector();
        let samples: Vec<_> = (0..=20)
            .map(|i| crate::preintegration::ImuSample { t: i as f64 * 0.01, omega: Vector3::zeros(), accel: a_m })
            .collect();
        let x = ImuState { q, ..Default::default() };
        for model in PreintModel::ALL {
            let lin = BiasLinearization::new(Vector3::zeros(), Vector3::zeros(), q);
            let f = preintegrate_interval(model, lin, ImuNoise::default(), &samples, 0.0, 0.2);
            let e = imu_factor(&x, &x, &f).e;
            assert!(e.amax() < 1e-12, "{model:?}: {e}");
        }
    }
}
