//! Closed-form single-interval integrals under a zeroth-order hold.
//!
//! Over one sample interval of length `Δt` with constant body rate `ω` the
//! rotation from the end of the interval back to time `t_τ + Δt - s` is
//! `exp(-s ⌊ω⌋)`. The two integrals used by the models are
//!
//! ```text
//! B̃ = ∫₀^Δt exp(-s ⌊ω⌋) ds         = Δt I + b1 ⌊ω⌋ + b2 ⌊ω⌋²
//! Ã = ∫₀^Δt s exp(-s ⌊ω⌋) ds       = Δt²/2 I + a1 ⌊ω⌋ + a2 ⌊ω⌋²
//! ```
//!
//! Pre-multiplying by the rotation at the end of the interval gives the
//! velocity and position increments of a constant body-frame acceleration.

use nalgebra::{Matrix3, Vector3};

use crate::manifold::so3::{coeff, skew};

/// Scalar weights of one interval integral, with their gradients w.r.t. `ω`.
#[derive(Clone, Copy, Debug)]
pub struct Weights {
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
    /// `∂c1/∂ω = dc1 · ωᵀ`
    pub dc1: f64,
    /// `∂c2/∂ω = dc2 · ωᵀ`
    pub dc2: f64,
}

impl Weights {
    pub fn matrix(&self, w: &Vector3<f64>) -> Matrix3<f64> {
        let k = skew(w);
        Matrix3::identity() * self.c0 + k * self.c1 + k * k * self.c2
    }

    /// Jacobian of `M(ω) a` with respect to `ω` for a fixed vector `a`.
    pub fn apply_jacobian(&self, w: &Vector3<f64>, a: &Vector3<f64>) -> Matrix3<f64> {
        let wxa = w.cross(a);
        let wwa = w.cross(&wxa);
        let dbl = Matrix3::identity() * w.dot(a) + w * a.transpose() - a * w.transpose() * 2.0;
        -skew(a) * self.c1
            + wxa * w.transpose() * self.dc1
            + dbl * self.c2
            + wwa * w.transpose() * self.dc2
    }
}

/// Weights of `B̃`, the integral of the rotation over the interval.
pub fn velocity_weights(w: &Vector3<f64>, dt: f64) -> Weights {
    let t = w.norm() * dt;
    let dt2 = dt * dt;
    let dt3 = dt2 * dt;
    Weights {
        c0: dt,
        c1: -dt2 * coeff::one_minus_cos(t),
        c2: dt3 * coeff::t_minus_sin(t),
        dc1: -dt2 * dt2 * coeff::one_minus_cos_dt(t),
        dc2: dt3 * dt2 * coeff::t_minus_sin_dt(t),
    }
}

/// Weights of `Ã`, the doubly integrated rotation over the interval.
pub fn position_weights(w: &Vector3<f64>, dt: f64) -> Weights {
    let t = w.norm() * dt;
    let dt2 = dt * dt;
    let dt3 = dt2 * dt;
    let dt4 = dt2 * dt2;
    Weights {
        c0: 0.5 * dt2,
        c1: dt3 * coeff::t_cos_minus_sin(t),
        c2: dt4 * coeff::accel_quad(t),
        dc1: dt3 * dt2 * coeff::t_cos_minus_sin_dt(t),
        dc2: dt4 * dt2 * coeff::accel_quad_dt(t),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::so3::exp_so3;

    fn quad(w: &Vector3<f64>, dt: f64, weight: impl Fn(f64) -> f64) -> Matrix3<f64> {
        // Composite Simpson rule on a fine grid.
        let n = 2000;
        let h = dt / n as f64;
        let mut acc = Matrix3::zeros();
        for i in 0..=n {
            let s = i as f64 * h;
            let c = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += exp_so3(&(-w * s)) * (weight(s) * c);
        }
        acc * (h / 3.0)
    }

    #[test]
    fn weights_match_quadrature() {
        for (w, dt) in [
            (Vector3::new(0.3, -2.0, 1.1), 0.05),
            (Vector3::new(1e-9, 0.0, 2e-9), 0.01),
            (Vector3::new(20.0, 10.0, -5.0), 0.1),
        ] {
            let b = velocity_weights(&w, dt).matrix(&w);
            let a = position_weights(&w, dt).matrix(&w);
            assert!((b - quad(&w, dt, |_| 1.0)).norm() < 1e-12);
            assert!((a - quad(&w, dt, |s| s)).norm() < 1e-12);
        }
    }

    #[test]
    fn apply_jacobian_matches_finite_difference() {
        let w = Vector3::new(0.8, -1.5, 0.4);
        let a = Vector3::new(3.0, -9.0, 1.0);
        for (dt, wf) in [(0.05, velocity_weights as fn(&Vector3<f64>, f64) -> Weights), (0.3, position_weights)] {
            let j = wf(&w, dt).apply_jacobian(&w, &a);
            for k in 0..3 {
                let mut d = Vector3::zeros();
                d[k] = 1e-6;
                let fp = wf(&(w + d), dt).matrix(&(w + d)) * a;
                let fm = wf(&(w - d), dt).matrix(&(w - d)) * a;
                let fd = (fp - fm) / 2e-6;
                assert!((fd - j.column(k)).norm() < 1e-8 * (1.0 + fd.norm()));
            }
        }
    }
}
