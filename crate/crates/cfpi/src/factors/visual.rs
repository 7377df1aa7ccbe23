//! Inverse-depth reprojection factor.
//!
//! A feature anchored in camera `i` at time `a` is observed by camera `j` at
//! time `k` through the scaled point
//!
//! ```text
//! h = ᶜʲ_I R ᵏ_G R ᵃ_G Rᵀ ᶜⁱ_I Rᵀ ([α, β, 1]ᵀ − ρ ᶜⁱp_I)
//!     + ρ ᶜʲ_I R ᵏ_G R (ᴳp_a − ᴳp_k) + ρ ᶜʲp_I
//! ```
//!
//! which is the camera-frame point multiplied by `ρ`. The projection
//! `[h₁/h₃, h₂/h₃]` is invariant to that scale, so `ρ = 0` (a point at
//! infinity) stays well defined.

use nalgebra::{Matrix2x3, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::manifold::{skew, ExtrinsicCalib, InvDepthFeature, Pose};

/// Depth below which the projection is treated as invalid.
pub const MIN_DEPTH: f64 = 1e-8;

/// Relation between the anchoring and the observing camera.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum VisualCase {
    /// Same time, same camera: the anchor observation itself.
    SameCamera,
    /// Same time, other camera of the stereo rig.
    Stereo,
    /// Different times.
    Temporal,
}

impl VisualCase {
    pub fn classify(anchor_node: usize, anchor_cam: usize, node: usize, cam: usize) -> Self {
        match (anchor_node == node, anchor_cam == cam) {
            (true, true) => VisualCase::SameCamera,
            (true, false) => VisualCase::Stereo,
            (false, _) => VisualCase::Temporal,
        }
    }
}

/// Reprojection residual and its Jacobians.
///
/// Pose Jacobians are over `[δθ, δp]` and are zero unless the case is
/// [`VisualCase::Temporal`].
#[derive(Clone, Copy, Debug)]
pub struct VisualResidual {
    pub e: Vector2<f64>,
    pub h: Vector3<f64>,
    pub j_feature: Matrix2x3<f64>,
    pub j_anchor: nalgebra::Matrix2x6<f64>,
    pub j_observer: nalgebra::Matrix2x6<f64>,
}

/// `∂Π/∂h` of the perspective projection.
#[inline]
pub fn projection_jacobian(h: &Vector3<f64>) -> Matrix2x3<f64> {
    let iz = 1.0 / h.z;
    Matrix2x3::new(iz, 0.0, -h.x * iz * iz, 0.0, iz, -h.y * iz * iz)
}

#[inline]
pub fn project(h: &Vector3<f64>) -> Vector2<f64> {
    Vector2::new(h.x / h.z, h.y / h.z)
}

/// `(ᶜ_I R, ᶜp_I)` of a camera.
#[inline]
fn camera_from_imu(c: &ExtrinsicCalib) -> (Matrix3<f64>, Vector3<f64>) {
    let r = c.q_ci.to_rotation();
    let p = -(r * c.p_ic);
    (r, p)
}

/// Scaled camera-frame point `h` for the given case.
pub fn scaled_point(
    case: VisualCase,
    x_a: &Pose,
    x_k: &Pose,
    feat: &InvDepthFeature,
    cam_i: &ExtrinsicCalib,
    cam_j: &ExtrinsicCalib,
) -> Vector3<f64> {
    let m = Vector3::new(feat.alpha, feat.beta, 1.0);
    match case {
        VisualCase::SameCamera => m,
        VisualCase::Stereo => {
            let (ri, _) = camera_from_imu(cam_i);
            let (rj, _) = camera_from_imu(cam_j);
            rj * ri.transpose() * m + rj * (cam_i.p_ic - cam_j.p_ic) * feat.rho
        }
        VisualCase::Temporal => {
            let (ri, pi) = camera_from_imu(cam_i);
            let (rj, pj) = camera_from_imu(cam_j);
            let rk = x_k.q.to_rotation();
            let ra = x_a.q.to_rotation();
            let x = ri.transpose() * (m - pi * feat.rho);
            rj * (rk * (ra.transpose() * x + (x_a.p - x_k.p) * feat.rho)) + pj * feat.rho
        }
    }
}

/// Evaluates the reprojection residual `Π(h) − z`.
///
/// Returns `None` when the point is at or behind the observing camera plane.
pub fn inverse_depth_factor(
    case: VisualCase,
    x_a: &Pose,
    x_k: &Pose,
    feat: &InvDepthFeature,
    cam_i: &ExtrinsicCalib,
    cam_j: &ExtrinsicCalib,
    z: &Vector2<f64>,
) -> Option<VisualResidual> {
    let m = Vector3::new(feat.alpha, feat.beta, 1.0);
    let rho = feat.rho;
    let mut j_anchor = nalgebra::Matrix2x6::zeros();
    let mut j_observer = nalgebra::Matrix2x6::zeros();
    // Columns of ∂h/∂[α, β, ρ].
    let (h, dh_dm, dh_drho) = match case {
        VisualCase::SameCamera => (m, Matrix3::identity(), Vector3::zeros()),
        VisualCase::Stereo => {
            let (ri, _) = camera_from_imu(cam_i);
            let (rj, _) = camera_from_imu(cam_j);
            let r_ji = rj * ri.transpose();
            let p_ji = rj * (cam_i.p_ic - cam_j.p_ic);
            (r_ji * m + p_ji * rho, r_ji, p_ji)
        }
        VisualCase::Temporal => {
            let (ri, pi) = camera_from_imu(cam_i);
            let (rj, pj) = camera_from_imu(cam_j);
            let rk = x_k.q.to_rotation();
            let ra = x_a.q.to_rotation();
            let x = ri.transpose() * (m - pi * rho);
            let rk_rat = rk * ra.transpose();
            let y = rk_rat * x + rk * (x_a.p - x_k.p) * rho;
            let h = rj * y + pj * rho;
            if h.z <= MIN_DEPTH {
                return None;
            }
            let hp = projection_jacobian(&h);
            let rjk = rj * rk;
            j_anchor.fixed_view_mut::<2, 3>(0, 0).copy_from(&(-hp * rj * rk_rat * skew(&x)));
            j_anchor.fixed_view_mut::<2, 3>(0, 3).copy_from(&(hp * rjk * rho));
            j_observer.fixed_view_mut::<2, 3>(0, 0).copy_from(&(hp * rj * skew(&y)));
            j_observer.fixed_view_mut::<2, 3>(0, 3).copy_from(&(-hp * rjk * rho));
            let mm = rj * rk_rat * ri.transpose();
            let d_rho = -(mm * pi) + rjk * (x_a.p - x_k.p) + pj;
            (h, mm, d_rho)
        }
    };
    if h.z <= MIN_DEPTH {
        return None;
    }
    let hp = projection_jacobian(&h);
    let mut j_feature = Matrix2x3::zeros();
    j_feature.fixed_view_mut::<2, 2>(0, 0).copy_from(&(hp * dh_dm.fixed_view::<3, 2>(0, 0)));
    j_feature.set_column(2, &(hp * dh_drho));
    Some(VisualResidual { e: project(&h) - z, h, j_feature, j_anchor, j_observer })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factors::testutil::*;
    use crate::manifold::{Anchor, Quat};
    use crate::oracle::{central_difference, worst_jacobian_error};
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;
    use rand::Rng;

    fn stereo_rig() -> [ExtrinsicCalib; 2] {
        let r = nalgebra::Matrix3::new(0.0, -1.0, 0.0, 0.0, 0.0, -1.0, 1.0, 0.0, 0.0);
        let q = Quat::from_rotation(&r);
        [
            ExtrinsicCalib { q_ci: q, p_ic: Vector3::new(0.05, 0.055, 0.0) },
            ExtrinsicCalib { q_ci: q, p_ic: Vector3::new(0.05, -0.055, 0.0) },
        ]
    }

    fn feature(alpha: f64, beta: f64, rho: f64) -> InvDepthFeature {
        InvDepthFeature { alpha, beta, rho, anchor: Anchor { node: 0, camera: 0 } }
    }

    /// Random temporal geometry with the point in front of the observer.
    fn random_geometry(rng: &mut impl Rng) -> (Pose, Pose, InvDepthFeature, usize, usize) {
        let cams = stereo_rig();
        loop {
            let xa = rand_pose(rng);
            let xk = Pose { q: xa.q.boxplus(&rand_vec(rng, 0.3)), p: xa.p + rand_vec(rng, 0.5) };
            let f = feature(rng.random_range(-0.6..0.6), rng.random_range(-0.4..0.4), rng.random_range(0.05..0.5));
            let (ci, cj) = (rng.random_range(0..2), rng.random_range(0..2));
            let h = scaled_point(VisualCase::Temporal, &xa, &xk, &f, &cams[ci], &cams[cj]);
            if h.z > 0.2 * f.rho.max(0.05) {
                return (xa, xk, f, ci, cj);
            }
        }
    }

    #[test]
    fn anchor_view_is_depth_invariant() {
        let cams = stereo_rig();
        let f = feature(0.1, -0.2, 0.5);
        let x = Pose::default();
        let r = inverse_depth_factor(
            VisualCase::SameCamera,
            &x,
            &x,
            &f,
            &cams[0],
            &cams[0],
            &Vector2::new(0.1, -0.2),
        )
        .unwrap();
        assert_eq!(r.e, Vector2::zeros());
        assert_eq!(r.j_feature.column(2).into_owned(), Vector2::zeros());
    }

    #[test]
    fn point_at_infinity_is_finite() {
        let mut rng = seeded(21);
        let cams = stereo_rig();
        let (xa, xk, mut f, ci, cj) = random_geometry(&mut rng);
        f.rho = 0.0;
        let r = inverse_depth_factor(VisualCase::Temporal, &xa, &xk, &f, &cams[ci], &cams[cj], &Vector2::zeros());
        let Some(r) = r else { return };
        assert!(r.e.iter().all(|v| v.is_finite()));
        assert!(r.j_feature.iter().all(|v| v.is_finite()));
        assert_eq!(r.j_anchor.fixed_view::<2, 3>(0, 3).amax(), 0.0);
        assert_eq!(r.j_observer.fixed_view::<2, 3>(0, 3).amax(), 0.0);
    }

    #[test]
    fn behind_camera_is_invalid() {
        let cams = stereo_rig();
        let xa = Pose::default();
        // Observer turned around by 180° about the camera's vertical axis.
        let xk = Pose { q: Quat::exp(&Vector3::new(0.0, 0.0, std::f64::consts::PI)), p: Vector3::zeros() };
        let f = feature(0.0, 0.0, 0.5);
        assert!(inverse_depth_factor(VisualCase::Temporal, &xa, &xk, &f, &cams[0], &cams[0], &Vector2::zeros()).is_none());
    }

    #[test]
    fn temporal_jacobians_match_finite_differences() {
        let mut rng = seeded(22);
        let cams = stereo_rig();
        for _ in 0..100 {
            let (xa, xk, f, ci, cj) = random_geometry(&mut rng);
            let (c_i, c_j) = (&cams[ci], &cams[cj]);
            let z = Vector2::new(0.01, -0.02);
            let r = inverse_depth_factor(VisualCase::Temporal, &xa, &xk, &f, c_i, c_j, &z).unwrap();
            let e_of = |a: &Pose, k: &Pose, f: &InvDepthFeature| {
                let r = inverse_depth_factor(VisualCase::Temporal, a, k, f, c_i, c_j, &z).unwrap();
                DVector::from_column_slice(r.e.as_slice())
            };
            let fd_a = central_difference(&xa, 6, 1e-6, |a| e_of(a, &xk, &f), perturb_pose);
            let fd_k = central_difference(&xk, 6, 1e-6, |k| e_of(&xa, k, &f), perturb_pose);
            let fd_f = central_difference(
                &f,
                3,
                1e-6,
                |g| e_of(&xa, &xk, g),
                |g, i, h| {
                    let mut d = Vector3::zeros();
                    d[i] = h;
                    g.boxplus(&d)
                },
            );
            for (a, fd) in [
                (DMatrix::from_column_slice(2, 6, r.j_anchor.as_slice()), fd_a),
                (DMatrix::from_column_slice(2, 6, r.j_observer.as_slice()), fd_k),
                (DMatrix::from_column_slice(2, 3, r.j_feature.as_slice()), fd_f),
            ] {
                let w = worst_jacobian_error(&a, &fd, 1e-5, 1e-8);
                assert!(w <= 1.0, "worst {w}\n{a}\n{fd}");
            }
        }
    }

    #[test]
    fn stereo_feature_jacobian_matches_finite_differences() {
        let cams = stereo_rig();
        let f = feature(0.2, -0.1, 0.3);
        let x = Pose::default();
        let z = Vector2::zeros();
        let r = inverse_depth_factor(VisualCase::Stereo, &x, &x, &f, &cams[0], &cams[1], &z).unwrap();
        let fd = central_difference(
            &f,
            3,
            1e-6,
            |g| {
                let r = inverse_depth_factor(VisualCase::Stereo, &x, &x, g, &cams[0], &cams[1], &z).unwrap();
                DVector::from_column_slice(r.e.as_slice())
            },
            |g, i, h| {
                let mut d = Vector3::zeros();
                d[i] = h;
                g.boxplus(&d)
            },
        );
        let a = DMatrix::from_column_slice(2, 3, r.j_feature.as_slice());
        assert!(worst_jacobian_error(&a, &fd, 1e-5, 1e-8) <= 1.0);
        assert!(r.j_feature[(0, 2)].abs() > 0.0);
    }

    #[test]
    fn residual_vanishes_for_true_projection() {
        let mut rng = seeded(23);
        let cams = stereo_rig();
        for _ in 0..50 {
            let (xa, xk, f, ci, cj) = random_geometry(&mut rng);
            // World point from the anchor camera, projected into the observer.
            let (r_ca, p_ca) = cams[ci].camera_pose(&xa);
            let pw = p_ca + r_ca.transpose() * (Vector3::new(f.alpha, f.beta, 1.0) / f.rho);
            let (r_co, p_co) = cams[cj].camera_pose(&xk);
            let z = project(&(r_co * (pw - p_co)));
            let r = inverse_depth_factor(VisualCase::Temporal, &xa, &xk, &f, &cams[ci], &cams[cj], &z).unwrap();
            assert!(r.e.amax() < 1e-9, "{}", r.e);
        }
    }

    proptest! {
        #[test]
        fn projection_is_scale_invariant(x in -5.0f64..5.0, y in -5.0f64..5.0, z in 0.1f64..20.0, s in 1e-3f64..1e3) {
            let h = Vector3::new(x, y, z);
            let d = project(&(h * s)) - project(&h);
            prop_assert!(d.amax() <= 1e-12 * (1.0 + project(&h).amax()));
        }
    }
}
