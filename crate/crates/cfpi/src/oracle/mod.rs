//! Independent reference computations used to validate the closed forms.
//!
//! Nothing in here calls the code paths it is used to check: means come from
//! brute-force RK4 of the kinematic ODEs, transition matrices from RK4 of
//! `Φ̇ = F Φ` or a Taylor matrix exponential, and Jacobians from central
//! differences. The `bench oracle` command and the acceptance tests both run
//! the [`suite`].

pub mod configs;
pub mod suite;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use crate::manifold::skew;

/// Mean of a preintegration interval integrated by RK4.
#[derive(Clone, Copy, Debug)]
pub struct KinematicState {
    /// `ᵏ_u R`
    pub r: Matrix3<f64>,
    pub alpha: Vector3<f64>,
    pub beta: Vector3<f64>,
}

/// Integrates `Ṙ = R ⌊ω⌋`, `β̇ = R a`, `α̇ = β` with constant `ω`, `a` using
/// `substeps` classical RK4 steps.
pub fn rk4_kinematics(
    x0: KinematicState,
    w: &Vector3<f64>,
    a: &Vector3<f64>,
    dt: f64,
    substeps: usize,
) -> KinematicState {
    rk4_kinematics_tv(x0, |_| (*w, *a), dt, substeps)
}

/// Same as [`rk4_kinematics`] with time-varying `(ω(s), a(s))`, `s ∈ [0, dt]`.
pub fn rk4_kinematics_tv(
    x0: KinematicState,
    input: impl Fn(f64) -> (Vector3<f64>, Vector3<f64>),
    dt: f64,
    substeps: usize,
) -> KinematicState {
    let h = dt / substeps as f64;
    let deriv = |x: &KinematicState, s: f64| {
        let (w, a) = input(s);
        (x.r * skew(&w), x.r * a, x.beta)
    };
    let add = |x: &KinematicState, d: &(Matrix3<f64>, Vector3<f64>, Vector3<f64>), k: f64| KinematicState {
        r: x.r + d.0 * k,
        beta: x.beta + d.1 * k,
        alpha: x.alpha + d.2 * k,
    };
    let mut x = x0;
    for i in 0..substeps {
        let s = i as f64 * h;
        let k1 = deriv(&x, s);
        let k2 = deriv(&add(&x, &k1, h / 2.0), s + h / 2.0);
        let k3 = deriv(&add(&x, &k2, h / 2.0), s + h / 2.0);
        let k4 = deriv(&add(&x, &k3, h), s + h);
        x = KinematicState {
            r: x.r + (k1.0 + k2.0 * 2.0 + k3.0 * 2.0 + k4.0) * (h / 6.0),
            beta: x.beta + (k1.1 + k2.1 * 2.0 + k3.1 * 2.0 + k4.1) * (h / 6.0),
            alpha: x.alpha + (k1.2 + k2.2 * 2.0 + k3.2 * 2.0 + k4.2) * (h / 6.0),
        };
    }
    x
}

/// State transition matrix of `ẋ = F(t) x` over `[0, dt]` by RK4 on `Φ̇ = F Φ`.
pub fn state_transition(f: impl Fn(f64) -> DMatrix<f64>, n: usize, dt: f64, substeps: usize) -> DMatrix<f64> {
    let h = dt / substeps as f64;
    let mut phi = DMatrix::<f64>::identity(n, n);
    for i in 0..substeps {
        let t = i as f64 * h;
        let f0 = f(t);
        let fm = f(t + h / 2.0);
        let f1 = f(t + h);
        let k1 = &f0 * &phi;
        let k2 = &fm * (&phi + &k1 * (h / 2.0));
        let k3 = &fm * (&phi + &k2 * (h / 2.0));
        let k4 = &f1 * (&phi + &k3 * h);
        phi += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    }
    phi
}

/// Matrix exponential by scaling and squaring of a truncated Taylor series.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let norm = a.abs().row_sum().max();
    let mut squarings = 0;
    let mut scale = 1.0;
    while norm * scale > 0.05 {
        scale *= 0.5;
        squarings += 1;
    }
    let a = a * scale;
    let mut term = DMatrix::<f64>::identity(n, n);
    let mut sum = term.clone();
    for k in 1..=20 {
        term = &term * &a / k as f64;
        sum += &term;
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    sum
}

/// Central finite-difference Jacobian of `f` at `x`.
///
/// `perturb(x, i, h)` returns the input with coordinate `i` displaced by `h`
/// along the retraction of the underlying manifold.
pub fn central_difference<X, F, P>(x: &X, dim: usize, h: f64, f: F, perturb: P) -> DMatrix<f64>
where
    F: Fn(&X) -> DVector<f64>,
    P: Fn(&X, usize, f64) -> X,
{
    let f0 = f(x);
    let mut j = DMatrix::zeros(f0.len(), dim);
    for i in 0..dim {
        let fp = f(&perturb(x, i, h));
        let fm = f(&perturb(x, i, -h));
        j.set_column(i, &((fp - fm) / (2.0 * h)));
    }
    j
}

/// Mixed relative/absolute comparison used by the Jacobian checks.
///
/// Each entry passes if it is within `abs` absolutely or within `rel` of the
/// largest magnitude in its row of the reference.
pub fn jacobian_matches(analytic: &DMatrix<f64>, reference: &DMatrix<f64>, rel: f64, abs: f64) -> bool {
    worst_jacobian_error(analytic, reference, rel, abs) <= 1.0
}

/// Largest error relative to the per-entry allowance (pass when `<= 1`).
pub fn worst_jacobian_error(analytic: &DMatrix<f64>, reference: &DMatrix<f64>, rel: f64, abs: f64) -> f64 {
    assert_eq!(analytic.shape(), reference.shape());
    let mut worst: f64 = 0.0;
    for r in 0..reference.nrows() {
        let scale = reference.row(r).amax().max(analytic.row(r).amax());
        for c in 0..reference.ncols() {
            let err = (analytic[(r, c)] - reference[(r, c)]).abs();
            let allow = abs.max(rel * scale);
            worst = worst.max(err / allow);
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transition_of_zero_dynamics_is_identity() {
        let phi = state_transition(|_| DMatrix::zeros(4, 4), 4, 0.7, 10);
        assert_eq!(phi, DMatrix::identity(4, 4));
    }

    #[test]
    fn transition_of_nilpotent_dynamics() {
        // F = [[0, 1], [0, 0]] gives Φ = [[1, Δt], [0, 1]].
        let f = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let phi = state_transition(|_| f.clone(), 2, 0.3, 5);
        let expect = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.0, 1.0]);
        assert!((phi - expect).norm() < 1e-15);
    }

    #[test]
    fn transition_matches_expm_for_constant_dynamics() {
        let f = DMatrix::from_fn(6, 6, |i, j| ((i * 7 + j * 3) % 5) as f64 * 0.1 - 0.2);
        let phi = state_transition(|_| f.clone(), 6, 0.5, 200);
        let e = expm(&(&f * 0.5));
        assert!((phi - e).norm() < 1e-12);
    }

    #[test]
    fn expm_of_rotation_generator() {
        let w = Vector3::new(0.3, -0.4, 1.2);
        let k = skew(&w);
        let e = expm(&DMatrix::from_column_slice(3, 3, k.as_slice()));
        let r = crate::manifold::exp_so3(&w);
        assert!((e - DMatrix::from_column_slice(3, 3, r.as_slice())).norm() < 1e-14);
    }
}
