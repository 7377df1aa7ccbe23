//! JPL unit quaternions.
//!
//! Components are stored as `[qx, qy, qz, qw]`. The product is defined by
//! `q ⊗ p = L(q) p = R(p) q`, and the rotation matrix of `q` is
//! `C(q) = (2 q4² - 1) I - 2 q4 ⌊q⌋ + 2 q qᵀ`, so that `C(q ⊗ p) = C(q) C(p)`.
//! A quaternion `ᴬ_B q` maps vectors expressed in frame B into frame A.

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use super::so3::{coeff, skew};

/// Unit quaternion in JPL convention, canonicalized so that `qw >= 0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quat {
    coords: Vector4<f64>,
}

impl Default for Quat {
    fn default() -> Self {
        Self::identity()
    }
}

impl Quat {
    pub fn identity() -> Self {
        Self { coords: Vector4::new(0.0, 0.0, 0.0, 1.0) }
    }

    /// Builds a quaternion from raw components, normalizing and canonicalizing.
    pub fn from_xyzw(x: f64, y: f64, z: f64, w: f64) -> Self {
        Self::from_coords(Vector4::new(x, y, z, w))
    }

    pub fn from_coords(c: Vector4<f64>) -> Self {
        let n = c.norm();
        let mut c = c / n;
        if c.w < 0.0 {
            c = -c;
        }
        Self { coords: c }
    }

    /// Raw components without renormalization. Used by tests that need an
    /// exact, non-canonical sign.
    pub fn from_coords_unchecked(c: Vector4<f64>) -> Self {
        Self { coords: c }
    }

    #[inline]
    pub fn coords(&self) -> &Vector4<f64> {
        &self.coords
    }

    #[inline]
    pub fn vec(&self) -> Vector3<f64> {
        self.coords.xyz()
    }

    #[inline]
    pub fn w(&self) -> f64 {
        self.coords.w
    }

    /// Left-multiplication matrix, `q ⊗ p = L(q) p`.
    pub fn left_matrix(&self) -> Matrix4<f64> {
        let v = self.vec();
        let w = self.w();
        let top = Matrix3::identity() * w - skew(&v);
        let mut m = Matrix4::zeros();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&top);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&v);
        m.fixed_view_mut::<1, 3>(3, 0).copy_from(&(-v.transpose()));
        m[(3, 3)] = w;
        m
    }

    /// Right-multiplication matrix, `q ⊗ p = R(p) q`.
    pub fn right_matrix(&self) -> Matrix4<f64> {
        let v = self.vec();
        let w = self.w();
        let top = Matrix3::identity() * w + skew(&v);
        let mut m = Matrix4::zeros();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&top);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&v);
        m.fixed_view_mut::<1, 3>(3, 0).copy_from(&(-v.transpose()));
        m[(3, 3)] = w;
        m
    }

    /// Raw product `self ⊗ p` without renormalization.
    pub fn mul_raw(&self, p: &Quat) -> Vector4<f64> {
        let (q, qw) = (self.vec(), self.w());
        let (r, rw) = (p.vec(), p.w());
        let v = qw * r + rw * q - q.cross(&r);
        Vector4::new(v.x, v.y, v.z, qw * rw - q.dot(&r))
    }

    /// `self ⊗ p`, renormalized and canonicalized.
    pub fn mul(&self, p: &Quat) -> Quat {
        Quat::from_coords(self.mul_raw(p))
    }

    pub fn inverse(&self) -> Quat {
        Quat { coords: Vector4::new(-self.coords.x, -self.coords.y, -self.coords.z, self.coords.w) }
    }

    /// Rotation matrix `C(q)`.
    pub fn to_rotation(&self) -> Matrix3<f64> {
        let v = self.vec();
        let w = self.w();
        Matrix3::identity() * (2.0 * w * w - 1.0) - skew(&v) * (2.0 * w) + v * v.transpose() * 2.0
    }

    /// Quaternion whose rotation matrix is `c`.
    pub fn from_rotation(c: &Matrix3<f64>) -> Quat {
        // The JPL matrix of (v, w) is the Hamilton matrix of (-v, w).
        let h = nalgebra::UnitQuaternion::from_rotation_matrix(
            &nalgebra::Rotation3::from_matrix_unchecked(*c),
        );
        Quat::from_xyzw(-h.i, -h.j, -h.k, h.w)
    }

    /// Quaternion of a rotation vector, `[sin(|φ|/2) φ/|φ|, cos(|φ|/2)]`.
    ///
    /// Its rotation matrix is `exp(-⌊φ⌋)`.
    pub fn exp(phi: &Vector3<f64>) -> Quat {
        let t = phi.norm();
        let v = phi * coeff::half_sin(t);
        Quat::from_coords(Vector4::new(v.x, v.y, v.z, (0.5 * t).cos()))
    }

    /// Rotation vector of the quaternion, inverse of [`Quat::exp`].
    pub fn log(&self) -> Vector3<f64> {
        let q = if self.w() < 0.0 { -self.coords } else { self.coords };
        let v = q.xyz();
        let n = v.norm();
        if n < 1e-12 {
            return v * 2.0 / q.w;
        }
        v * (2.0 * n.atan2(q.w) / n)
    }

    /// Retraction `quat(δθ) ⊗ q`.
    pub fn boxplus(&self, dtheta: &Vector3<f64>) -> Quat {
        Quat::exp(dtheta).mul(self)
    }

    /// Local difference `log(self ⊗ other⁻¹)`, the exact inverse of [`Quat::boxplus`].
    pub fn boxminus(&self, other: &Quat) -> Vector3<f64> {
        self.mul(&other.inverse()).log()
    }

    /// Small-angle difference `2 vec(self ⊗ other⁻¹)` used by the residuals.
    pub fn small_angle_diff(&self, other: &Quat) -> Vector3<f64> {
        let d = self.mul_raw(&other.inverse());
        let s = if d.w < 0.0 { -2.0 } else { 2.0 };
        d.xyz() * s
    }

    /// Jacobian of `2 vec(a ⊗ [δ/2; 1] ⊗ b)` with respect to `δ` at `δ = 0`.
    ///
    /// This is the top-left block of `L(a) R(b)` and covers every
    /// `small_angle_diff` residual whose error quaternion sits between two
    /// fixed factors.
    pub fn sandwich_jacobian(a: &Quat, b: &Quat) -> Matrix3<f64> {
        let m = a.left_matrix() * b.right_matrix();
        m.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn is_unit(&self, tol: f64) -> bool {
        (self.coords.norm() - 1.0).abs() <= tol
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::so3::exp_so3;

    #[test]
    fn product_matches_matrix_forms() {
        let q = Quat::from_xyzw(0.1, -0.3, 0.2, 0.9);
        let p = Quat::from_xyzw(-0.5, 0.2, 0.4, 0.7);
        let raw = q.mul_raw(&p);
        assert!((raw - q.left_matrix() * p.coords()).norm() < 1e-15);
        assert!((raw - p.right_matrix() * q.coords()).norm() < 1e-15);
        let c = q.mul(&p).to_rotation();
        assert!((c - q.to_rotation() * p.to_rotation()).norm() < 1e-14);
    }

    #[test]
    fn exp_rotation_is_transpose_of_so3_exp() {
        let phi = Vector3::new(0.7, -0.1, 0.4);
        let c = Quat::exp(&phi).to_rotation();
        assert!((c - exp_so3(&(-phi))).norm() < 1e-14);
        assert!((Quat::exp(&phi).log() - phi).norm() < 1e-14);
    }

    #[test]
    fn from_rotation_round_trip() {
        let q = Quat::from_xyzw(0.3, 0.5, -0.2, 0.4);
        let back = Quat::from_rotation(&q.to_rotation());
        assert!((back.coords() - q.coords()).norm() < 1e-13);
    }

    #[test]
    fn sandwich_jacobian_matches_finite_difference() {
        let a = Quat::from_xyzw(0.2, 0.1, -0.4, 0.8);
        let b = Quat::from_xyzw(-0.3, 0.6, 0.1, 0.5);
        let f = |d: &Vector3<f64>| {
            let mid = Quat::from_coords_unchecked(Vector4::new(d.x / 2.0, d.y / 2.0, d.z / 2.0, 1.0));
            let raw = Quat::from_coords_unchecked(a.mul_raw(&mid)).mul_raw(&b);
            raw.xyz() * 2.0
        };
        let j = Quat::sandwich_jacobian(&a, &b);
        for k in 0..3 {
            let mut d = Vector3::zeros();
            d[k] = 1e-6;
            let fd = (f(&d) - f(&-d)) / 2e-6;
            assert!((fd - j.column(k)).norm() < 1e-9);
        }
    }
}
