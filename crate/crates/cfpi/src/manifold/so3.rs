//! SO(3) helpers: skew matrices, the exponential map, the right Jacobian and
//! the scalar coefficient functions shared by the closed-form integrators.
//!
//! Every coefficient with a removable singularity at zero switches to its
//! Taylor series below [`SERIES_THRESHOLD`]. The series are carried far enough
//! (through the 16th power) that both branches agree to machine precision at
//! the switch point.

use nalgebra::{Matrix3, Vector3};

/// Angle below which the series branch of each coefficient is used.
pub const SERIES_THRESHOLD: f64 = 1.0;

/// Skew-symmetric cross-product matrix, `skew(a) * b == a.cross(&b)`.
#[inline]
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Inverse of [`skew`] for a (numerically) skew-symmetric matrix.
#[inline]
pub fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(
        0.5 * (m[(2, 1)] - m[(1, 2)]),
        0.5 * (m[(0, 2)] - m[(2, 0)]),
        0.5 * (m[(1, 0)] - m[(0, 1)]),
    )
}

fn horner(coeffs: &[f64], t2: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * t2 + c)
}

macro_rules! coeff_fn {
    ($(#[$doc:meta])* $name:ident, $series:expr, |$t:ident| $closed:expr) => {
        $(#[$doc])*
        #[inline]
        pub fn $name($t: f64) -> f64 {
            if $t.abs() < SERIES_THRESHOLD {
                const C: &[f64] = &$series;
                horner(C, $t * $t)
            } else {
                $closed
            }
        }
    };
}

/// Closed-form scalar coefficients and their scaled derivatives.
///
/// For each coefficient `c(θ)` the companion `*_dt` function returns
/// `c'(θ) / θ`, which is what the chain rule through `θ = |ω| Δt` needs.
pub mod coeff {
    use super::horner;
    use super::SERIES_THRESHOLD;

    coeff_fn!(
        /// `sin θ / θ`.
        sinc,
        [1.0, -1.0 / 6.0, 1.0 / 120.0, -1.0 / 5040.0, 1.0 / 362880.0, -1.0 / 39916800.0,
         1.0 / 6227020800.0, -1.0 / 1307674368000.0, 1.0 / 355687428096000.0],
        |t| t.sin() / t
    );

    coeff_fn!(
        /// `(1 - cos θ) / θ²`.
        one_minus_cos,
        [0.5, -1.0 / 24.0, 1.0 / 720.0, -1.0 / 40320.0, 1.0 / 3628800.0, -1.0 / 479001600.0,
         1.0 / 87178291200.0, -1.0 / 20922789888000.0, 1.0 / 6402373705728000.0],
        |t| (1.0 - t.cos()) / (t * t)
    );

    coeff_fn!(
        /// Derivative of [`one_minus_cos`] divided by θ.
        one_minus_cos_dt,
        [-1.0 / 12.0, 1.0 / 180.0, -1.0 / 6720.0, 1.0 / 453600.0, -1.0 / 47900160.0,
         1.0 / 7264857600.0, -1.0 / 1494484992000.0, 1.0 / 400148356608000.0,
         -1.0 / 135161222676480000.0],
        |t| (t * t.sin() + 2.0 * t.cos() - 2.0) / t.powi(4)
    );

    coeff_fn!(
        /// `(θ - sin θ) / θ³`.
        t_minus_sin,
        [1.0 / 6.0, -1.0 / 120.0, 1.0 / 5040.0, -1.0 / 362880.0, 1.0 / 39916800.0,
         -1.0 / 6227020800.0, 1.0 / 1307674368000.0, -1.0 / 355687428096000.0,
         1.0 / 121645100408832000.0],
        |t| (t - t.sin()) / (t * t * t)
    );

    coeff_fn!(
        /// Derivative of [`t_minus_sin`] divided by θ.
        t_minus_sin_dt,
        [-1.0 / 60.0, 1.0 / 1260.0, -1.0 / 60480.0, 1.0 / 4989600.0, -1.0 / 622702080.0,
         1.0 / 108972864000.0, -1.0 / 25406244864000.0, 1.0 / 7602818775552000.0,
         -1.0 / 2838385676206080000.0],
        |t| (3.0 * t.sin() - t * t.cos() - 2.0 * t) / t.powi(5)
    );

    coeff_fn!(
        /// `(θ cos θ - sin θ) / θ³`.
        t_cos_minus_sin,
        [-1.0 / 3.0, 1.0 / 30.0, -1.0 / 840.0, 1.0 / 45360.0, -1.0 / 3991680.0,
         1.0 / 518918400.0, -1.0 / 93405312000.0, 1.0 / 22230464256000.0,
         -1.0 / 6758061133824000.0],
        |t| (t * t.cos() - t.sin()) / (t * t * t)
    );

    coeff_fn!(
        /// Derivative of [`t_cos_minus_sin`] divided by θ.
        t_cos_minus_sin_dt,
        [1.0 / 15.0, -1.0 / 210.0, 1.0 / 7560.0, -1.0 / 498960.0, 1.0 / 51891840.0,
         -1.0 / 7783776000.0, 1.0 / 1587890304000.0, -1.0 / 422378820864000.0,
         1.0 / 141919283810304000.0],
        |t| (3.0 * t.sin() - 3.0 * t * t.cos() - t * t * t.sin()) / t.powi(5)
    );

    coeff_fn!(
        /// `(θ² - 2 cos θ - 2 θ sin θ + 2) / (2 θ⁴)`.
        accel_quad,
        [1.0 / 8.0, -1.0 / 144.0, 1.0 / 5760.0, -1.0 / 403200.0, 1.0 / 43545600.0,
         -1.0 / 6706022400.0, 1.0 / 1394852659200.0, -1.0 / 376610217984000.0,
         1.0 / 128047474114560000.0],
        |t| (t * t - 2.0 * t.cos() - 2.0 * t * t.sin() + 2.0) / (2.0 * t.powi(4))
    );

    coeff_fn!(
        /// Derivative of [`accel_quad`] divided by θ.
        accel_quad_dt,
        [-1.0 / 72.0, 1.0 / 1440.0, -1.0 / 67200.0, 1.0 / 5443200.0, -1.0 / 670602240.0,
         1.0 / 116237721600.0, -1.0 / 26900729856000.0, 1.0 / 8002967132160000.0,
         -1.0 / 2973546898882560000.0],
        |t| (4.0 * t * t.sin() + 4.0 * t.cos() - 4.0 - t * t * t.cos() - t * t) / t.powi(6)
    );

    coeff_fn!(
        /// `sin(θ/2) / θ`.
        half_sin,
        [0.5, -1.0 / 48.0, 1.0 / 3840.0, -1.0 / 645120.0, 1.0 / 185794560.0,
         -1.0 / 81749606400.0, 1.0 / 51011754393600.0, -1.0 / 42849873690624000.0,
         1.0 / 46620662575398912000.0],
        |t| (0.5 * t).sin() / t
    );

    coeff_fn!(
        /// Derivative of [`half_sin`] divided by θ.
        half_sin_dt,
        [-1.0 / 24.0, 1.0 / 960.0, -1.0 / 107520.0, 1.0 / 23224320.0, -1.0 / 8174960640.0,
         1.0 / 4250979532800.0, -1.0 / 3060705263616000.0, 1.0 / 2913791410962432000.0,
         -1.0 / 3543170355730317312000.0],
        |t| (0.5 * t * (0.5 * t).cos() - (0.5 * t).sin()) / (t * t * t)
    );
}

/// Matrix exponential of `skew(phi)` (Rodrigues).
pub fn exp_so3(phi: &Vector3<f64>) -> Matrix3<f64> {
    let t = phi.norm();
    let k = skew(phi);
    Matrix3::identity() + coeff::sinc(t) * k + coeff::one_minus_cos(t) * k * k
}

/// Rotation vector of a rotation matrix, inverse of [`exp_so3`] for angles below π.
pub fn log_so3(r: &Matrix3<f64>) -> Vector3<f64> {
    -super::Quat::from_rotation(r).log()
}

/// Right Jacobian `J_r(φ) = ∫₀¹ exp(-s ⌊φ⌋) ds`.
///
/// Satisfies `exp_so3(φ + δ) ≈ exp_so3(φ) · exp_so3(J_r(φ) δ)`.
pub fn right_jacobian(phi: &Vector3<f64>) -> Matrix3<f64> {
    let t = phi.norm();
    let k = skew(phi);
    Matrix3::identity() - coeff::one_minus_cos(t) * k + coeff::t_minus_sin(t) * k * k
}

/// Inverse of [`right_jacobian`].
pub fn right_jacobian_inv(phi: &Vector3<f64>) -> Matrix3<f64> {
    right_jacobian(phi)
        .try_inverse()
        .unwrap_or_else(Matrix3::identity)
}
