//! IMU preintegration between two keyframes.
//!
//! Three models are available:
//!
//! * [`PreintModel::Model1`]: piecewise-constant measured body rate and
//!   specific force, integrated in closed form.
//! * [`PreintModel::Model2`]: piecewise-constant body rate and true local
//!   acceleration. Gravity is removed inside the integral using the
//!   linearization of the starting orientation, which adds the `O` Jacobians
//!   and a cloned orientation error to the covariance.
//! * [`PreintModel::Discrete`]: the usual Euler-style accumulation that holds
//!   the acceleration constant in the keyframe frame over each sample.
//!
//! All three produce a [`PreintegratedFactor`] with mean, covariance and
//! first-order bias Jacobians. Error states are ordered `[θ, b_ω, β, b_a, α]`
//! (velocity-like block before position-like block), matching the
//! `[θ, b_ω, v, b_a, p]` layout of [`crate::manifold::ImuState`].

pub mod kernels;

use nalgebra::{Matrix3, SMatrix, Vector3};
use serde::{Deserialize, Serialize};

use crate::manifold::{right_jacobian, skew, Quat};
use kernels::{position_weights, velocity_weights};

pub type Matrix15 = SMatrix<f64, 15, 15>;
pub type Matrix18 = SMatrix<f64, 18, 18>;

/// Standard gravity magnitude in m/s².
pub const GRAVITY: f64 = 9.81;

/// Gravity vector in the global frame, `ᴳg = [0, 0, 9.81]`.
pub fn gravity_vector() -> Vector3<f64> {
    Vector3::new(0.0, 0.0, GRAVITY)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
pub enum PreintModel {
    #[serde(rename = "m1")]
    Model1,
    #[serde(rename = "m2")]
    Model2,
    #[serde(rename = "discrete")]
    Discrete,
}

impl PreintModel {
    pub const ALL: [PreintModel; 3] = [PreintModel::Model1, PreintModel::Model2, PreintModel::Discrete];

    pub fn name(&self) -> &'static str {
        match self {
            PreintModel::Model1 => "m1",
            PreintModel::Model2 => "m2",
            PreintModel::Discrete => "discrete",
        }
    }

    pub fn parse(s: &str) -> Option<PreintModel> {
        match s.trim().to_ascii_lowercase().as_str() {
            "m1" | "model1" => Some(PreintModel::Model1),
            "m2" | "model2" => Some(PreintModel::Model2),
            "discrete" => Some(PreintModel::Discrete),
            _ => None,
        }
    }
}

/// Continuous-time IMU noise densities.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImuNoise {
    /// Gyroscope white noise, rad/(s·√Hz).
    pub sigma_g: f64,
    /// Accelerometer white noise, m/(s²·√Hz).
    pub sigma_a: f64,
    /// Gyroscope bias random walk, rad/(s²·√Hz).
    pub sigma_wg: f64,
    /// Accelerometer bias random walk, m/(s³·√Hz).
    pub sigma_wa: f64,
}

impl Default for ImuNoise {
    /// Noise figures of a VI-Sensor class MEMS IMU.
    fn default() -> Self {
        Self { sigma_g: 1.6968e-4, sigma_a: 2.0e-3, sigma_wg: 1.9393e-5, sigma_wa: 3.0e-3 }
    }
}

impl ImuNoise {
    pub fn zero() -> Self {
        Self { sigma_g: 0.0, sigma_a: 0.0, sigma_wg: 0.0, sigma_wa: 0.0 }
    }

    fn diag(&self) -> [f64; 4] {
        [self.sigma_g.powi(2), self.sigma_wg.powi(2), self.sigma_a.powi(2), self.sigma_wa.powi(2)]
    }
}

/// Linearization point of the preintegration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasLinearization {
    pub bg: Vector3<f64>,
    pub ba: Vector3<f64>,
    /// `ᵏ_G q*`, the start orientation estimate. Only used by Model 2.
    pub q_kg: Quat,
}

impl BiasLinearization {
    pub fn new(bg: Vector3<f64>, ba: Vector3<f64>, q_kg: Quat) -> Self {
        Self { bg, ba, q_kg }
    }
}

#[derive(Clone, Debug)]
enum Covariance {
    Fifteen(Box<Matrix15>),
    Eighteen(Box<Matrix18>),
}

/// Running preintegration over one keyframe interval.
#[derive(Clone, Debug)]
pub struct PreintState {
    pub model: PreintModel,
    pub lin: BiasLinearization,
    pub noise: ImuNoise,
    /// Integrated time.
    pub dt: f64,
    /// `τ_k q̆`, orientation of the current sample frame w.r.t. the keyframe.
    pub q: Quat,
    /// `ᵏ_τ R̆`, cached transpose of `C(q)`.
    pub r_kt: Matrix3<f64>,
    /// Position-like increment `ᾰ` (Model 2: `Δp̆`).
    pub alpha: Vector3<f64>,
    /// Velocity-like increment `β̆` (Model 2: `Δv̆`).
    pub beta: Vector3<f64>,
    pub jq: Matrix3<f64>,
    pub ja: Matrix3<f64>,
    pub jb: Matrix3<f64>,
    pub ha: Matrix3<f64>,
    pub hb: Matrix3<f64>,
    pub oa: Matrix3<f64>,
    pub ob: Matrix3<f64>,
    /// Gravity in the keyframe frame at the linearization point, `ᵏg*`.
    g_k: Vector3<f64>,
    cov: Covariance,
    /// Flips the sign of the `H_β` recursion. Only the oracle suite's
    /// mutation check sets this.
    pub(crate) flip_hb_sign: bool,
}

/// Finalized preintegrated measurement between keyframes `k` and `k+1`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PreintegratedFactor {
    pub model: PreintModel,
    pub lin: BiasLinearization,
    pub dt: f64,
    /// `ᵏ⁺¹_k q̆`.
    pub q: Quat,
    pub alpha: Vector3<f64>,
    pub beta: Vector3<f64>,
    /// Covariance in `[θ, b_ω, β, b_a, α]` order.
    pub cov: Matrix15,
    /// Inverse of `cov`.
    pub info: Matrix15,
    pub jq: Matrix3<f64>,
    pub ja: Matrix3<f64>,
    pub jb: Matrix3<f64>,
    pub ha: Matrix3<f64>,
    pub hb: Matrix3<f64>,
    pub oa: Matrix3<f64>,
    pub ob: Matrix3<f64>,
    /// True if the covariance was ill-conditioned and regularized.
    pub regularized: bool,
}

impl PreintegratedFactor {
    /// End state implied by the measurement mean, taking the biases of `xk`
    /// as the linearization point.
    pub fn predict(&self, xk: &crate::manifold::ImuState) -> crate::manifold::ImuState {
        let rkt = xk.q.to_rotation().transpose();
        let dt = self.dt;
        let (v, p) = match self.model {
            PreintModel::Model2 => (xk.v + rkt * self.beta, xk.p + xk.v * dt + rkt * self.alpha),
            _ => {
                let g = gravity_vector();
                (xk.v - g * dt + rkt * self.beta, xk.p + xk.v * dt - g * (0.5 * dt * dt) + rkt * self.alpha)
            }
        };
        crate::manifold::ImuState { q: self.q.mul(&xk.q), bg: xk.bg, v, ba: xk.ba, p }
    }
}

/// One IMU sample, held constant until the next sample.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImuSample {
    pub t: f64,
    pub omega: Vector3<f64>,
    pub accel: Vector3<f64>,
}

/// Starts a new preintegration at the given linearization point.
pub fn preint_init(model: PreintModel, lin: BiasLinearization, noise: ImuNoise) -> PreintState {
    let cov = match model {
        PreintModel::Model2 => Covariance::Eighteen(Box::new(Matrix18::zeros())),
        _ => Covariance::Fifteen(Box::new(Matrix15::zeros())),
    };
    PreintState {
        model,
        lin,
        noise,
        dt: 0.0,
        q: Quat::identity(),
        r_kt: Matrix3::identity(),
        alpha: Vector3::zeros(),
        beta: Vector3::zeros(),
        jq: Matrix3::zeros(),
        ja: Matrix3::zeros(),
        jb: Matrix3::zeros(),
        ha: Matrix3::zeros(),
        hb: Matrix3::zeros(),
        oa: Matrix3::zeros(),
        ob: Matrix3::zeros(),
        g_k: lin.q_kg.to_rotation() * gravity_vector(),
        cov,
        flip_hb_sign: false,
    }
}

/// Quantities of one closed-form step that the mean, the Jacobians and the
/// transition matrix share.
struct ClosedStep {
    a_mat: Matrix3<f64>,
    b_mat: Matrix3<f64>,
    /// `∂(A â)/∂b_ω` holding the start rotation fixed.
    da_dbg: Matrix3<f64>,
    /// `∂(B â)/∂b_ω` holding the start rotation fixed.
    db_dbg: Matrix3<f64>,
    /// `J_r(ω Δt) Δt`
    jr_dt: Matrix3<f64>,
    /// `ᵗ⁺¹_τ R`
    r_step: Matrix3<f64>,
}

fn closed_step(r_start: &Matrix3<f64>, w: &Vector3<f64>, a: &Vector3<f64>, dt: f64) -> ClosedStep {
    let q_step = Quat::exp(&(w * dt));
    let r_step = q_step.to_rotation();
    let r_next = r_start * r_step.transpose();
    let vw = velocity_weights(w, dt);
    let pw = position_weights(w, dt);
    let bt = vw.matrix(w);
    let at = pw.matrix(w);
    let bta = bt * a;
    let ata = at * a;
    let jr_dt = right_jacobian(&(w * dt)) * dt;
    // Rotation at the end of the step depends on the bias through J_r Δt.
    let db_dbg = r_next * (skew(&bta) * jr_dt - vw.apply_jacobian(w, a));
    let da_dbg = r_next * (skew(&ata) * jr_dt - pw.apply_jacobian(w, a));
    ClosedStep { a_mat: r_next * at, b_mat: r_next * bt, da_dbg, db_dbg, jr_dt, r_step }
}

/// Closed-form transition over one step, error order `[θ, b_ω, β, b_a, α]`.
fn closed_transition(cs: &ClosedStep, r_start: &Matrix3<f64>, a: &Vector3<f64>, dt: f64) -> Matrix15 {
    let mut phi = Matrix15::identity();
    phi.fixed_view_mut::<3, 3>(0, 0).copy_from(&cs.r_step);
    phi.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-cs.jr_dt));
    phi.fixed_view_mut::<3, 3>(6, 0).copy_from(&(-skew(&(cs.b_mat * a)) * r_start));
    phi.fixed_view_mut::<3, 3>(6, 3).copy_from(&cs.db_dbg);
    phi.fixed_view_mut::<3, 3>(6, 9).copy_from(&(-cs.b_mat));
    phi.fixed_view_mut::<3, 3>(12, 0).copy_from(&(-skew(&(cs.a_mat * a)) * r_start));
    phi.fixed_view_mut::<3, 3>(12, 3).copy_from(&cs.da_dbg);
    phi.fixed_view_mut::<3, 3>(12, 6).copy_from(&(Matrix3::identity() * dt));
    phi.fixed_view_mut::<3, 3>(12, 9).copy_from(&(-cs.a_mat));
    phi
}

/// Extends a 15-state transition with the cloned start orientation error of
/// Model 2, through which the gravity term enters velocity and position.
fn clone_transition(phi: &Matrix15, cs: &ClosedStep, g_tau: &Vector3<f64>) -> Matrix18 {
    let mut phi18 = Matrix18::identity();
    phi18.fixed_view_mut::<15, 15>(0, 0).copy_from(phi);
    let gs = skew(g_tau);
    phi18.fixed_view_mut::<3, 3>(6, 15).copy_from(&(-cs.b_mat * gs));
    phi18.fixed_view_mut::<3, 3>(12, 15).copy_from(&(-cs.a_mat * gs));
    phi18
}

/// Continuous-time error dynamics `F(t)` at a point with rotation `ᵏ_u R`,
/// used by the Euler covariance of the discrete model and by the tests.
pub fn error_dynamics(r_ku: &Matrix3<f64>, w: &Vector3<f64>, a: &Vector3<f64>) -> Matrix15 {
    let mut f = Matrix15::zeros();
    f.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-skew(w)));
    f.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-Matrix3::identity()));
    f.fixed_view_mut::<3, 3>(6, 0).copy_from(&(-r_ku * skew(a)));
    f.fixed_view_mut::<3, 3>(6, 9).copy_from(&(-r_ku));
    f.fixed_view_mut::<3, 3>(12, 6).copy_from(&Matrix3::identity());
    f
}

fn noise_diag15(noise: &ImuNoise) -> Matrix15 {
    let d = noise.diag();
    let mut q = Matrix15::zeros();
    for blk in 0..4 {
        for i in 0..3 {
            q[(3 * blk + i, 3 * blk + i)] = d[blk];
        }
    }
    q
}

/// Advances the preintegration by one sample held for `dt` seconds.
pub fn preint_step(s: &mut PreintState, omega_m: &Vector3<f64>, accel_m: &Vector3<f64>, dt: f64) {
    assert!(dt > 0.0, "preintegration step needs a positive dt");
    let w = omega_m - s.lin.bg;
    let r_start = s.r_kt;
    let g_tau = r_start.transpose() * s.g_k;
    let a = match s.model {
        PreintModel::Model2 => accel_m - s.lin.ba - g_tau,
        _ => accel_m - s.lin.ba,
    };
    let jq_start = s.jq;

    match s.model {
        PreintModel::Model1 | PreintModel::Model2 => {
            let cs = closed_step(&r_start, &w, &a, dt);
            let mut db = cs.db_dbg;
            let mut da = cs.da_dbg;
            // Rotation at the start of the step carries the accumulated bias sensitivity.
            db += skew(&(cs.b_mat * a)) * r_start * jq_start;
            da += skew(&(cs.a_mat * a)) * r_start * jq_start;
            if s.model == PreintModel::Model2 {
                let g_skew = skew(&g_tau);
                db += cs.b_mat * g_skew * jq_start;
                da += cs.a_mat * g_skew * jq_start;
                let og = r_start.transpose() * skew(&s.g_k);
                s.oa += s.ob * dt - cs.a_mat * og;
                s.ob -= cs.b_mat * og;
            }
            s.alpha += s.beta * dt + cs.a_mat * a;
            s.beta += cs.b_mat * a;
            s.ja += s.jb * dt + da;
            s.jb += db;
            s.ha += s.hb * dt - cs.a_mat;
            if s.flip_hb_sign {
                s.hb += cs.b_mat;
            } else {
                s.hb -= cs.b_mat;
            }
            s.jq = cs.r_step * jq_start + cs.jr_dt;

            let phi = closed_transition(&cs, &r_start, &a, dt);
            // Midpoint rule: noise injected at the middle of the step.
            let h = 0.5 * dt;
            let q_half = Quat::exp(&(w * h)).to_rotation();
            let r_mid = r_start * q_half.transpose();
            let cs_half = closed_step(&r_mid, &w, &a, h);
            let phi_half = closed_transition(&cs_half, &r_mid, &a, h);
            let qd = phi_half * noise_diag15(&s.noise) * phi_half.transpose() * dt;

            match &mut s.cov {
                Covariance::Fifteen(p) => {
                    let next = phi * **p * phi.transpose() + qd;
                    **p = (next + next.transpose()) * 0.5;
                }
                Covariance::Eighteen(p) => {
                    let phi18 = clone_transition(&phi, &cs, &g_tau);
                    let mut q18 = Matrix18::zeros();
                    q18.fixed_view_mut::<15, 15>(0, 0).copy_from(&qd);
                    let next = phi18 * **p * phi18.transpose() + q18;
                    // Re-clone: the clone block tracks the orientation error at the start of the next step.
                    let mut out = next;
                    let th_col = next.fixed_view::<18, 3>(0, 0).into_owned();
                    out.fixed_view_mut::<18, 3>(0, 15).copy_from(&th_col);
                    let th_row = out.fixed_view::<3, 18>(0, 0).into_owned();
                    out.fixed_view_mut::<3, 18>(15, 0).copy_from(&th_row);
                    **p = (out + out.transpose()) * 0.5;
                }
            }
            s.q = Quat::exp(&(w * dt)).mul(&s.q);
        }
        PreintModel::Discrete => {
            let ra = r_start * a;
            let rax = r_start * skew(&a) * jq_start;
            s.alpha += s.beta * dt + ra * (0.5 * dt * dt);
            s.beta += ra * dt;
            s.ja += s.jb * dt + rax * (0.5 * dt * dt);
            s.jb += rax * dt;
            s.ha += s.hb * dt - r_start * (0.5 * dt * dt);
            s.hb -= r_start * dt;
            let q_step = Quat::exp(&(w * dt));
            let r_step = q_step.to_rotation();
            s.jq = r_step * jq_start + right_jacobian(&(w * dt)) * dt;

            let phi = Matrix15::identity() + error_dynamics(&r_start, &w, &a) * dt;
            let qd = noise_diag15(&s.noise) * dt;
            if let Covariance::Fifteen(p) = &mut s.cov {
                let next = phi * **p * phi.transpose() + qd;
                **p = (next + next.transpose()) * 0.5;
            }
            s.q = q_step.mul(&s.q);
        }
    }
    s.r_kt = s.q.to_rotation().transpose();
    s.dt += dt;
}

impl PreintState {
    /// Current covariance restricted to the 15 retained error states.
    pub fn covariance15(&self) -> Matrix15 {
        match &self.cov {
            Covariance::Fifteen(p) => **p,
            Covariance::Eighteen(p) => p.fixed_view::<15, 15>(0, 0).into_owned(),
        }
    }

    /// Full covariance including the Model 2 clone block, if any.
    pub fn covariance_full(&self) -> nalgebra::DMatrix<f64> {
        match &self.cov {
            Covariance::Fifteen(p) => nalgebra::DMatrix::from_column_slice(15, 15, p.as_slice()),
            Covariance::Eighteen(p) => nalgebra::DMatrix::from_column_slice(18, 18, p.as_slice()),
        }
    }

    /// Gravity in the sample frame at the linearization point.
    pub fn gravity_in_sample_frame(&self) -> Vector3<f64> {
        self.r_kt.transpose() * self.g_k
    }
}

/// Condition number above which the finalized covariance is regularized.
pub const MAX_CONDITION: f64 = 1e14;
/// Diagonal loading applied to an ill-conditioned covariance.
pub const REGULARIZATION: f64 = 1e-12;

/// Freezes the running state into a factor measurement.
pub fn preint_finalize(s: &PreintState) -> PreintegratedFactor {
    let mut cov = s.covariance15();
    let eig = cov.symmetric_eigenvalues();
    let max = eig.max();
    let min = eig.min();
    let regularized = !(min > 0.0 && max / min <= MAX_CONDITION);
    if regularized {
        cov += Matrix15::identity() * REGULARIZATION;
    }
    let info = cov
        .cholesky()
        .map(|c| c.inverse())
        .unwrap_or_else(|| cov.pseudo_inverse(1e-18).unwrap_or_else(|_| Matrix15::zeros()));
    PreintegratedFactor {
        model: s.model,
        lin: s.lin,
        dt: s.dt,
        q: s.q,
        alpha: s.alpha,
        beta: s.beta,
        cov,
        info: (info + info.transpose()) * 0.5,
        jq: s.jq,
        ja: s.ja,
        jb: s.jb,
        ha: s.ha,
        hb: s.hb,
        oa: s.oa,
        ob: s.ob,
        regularized,
    }
}

/// Preintegrates all samples covering `[t0, t1]`.
///
/// Each sample is held until the next one; the first and last pieces are
/// clipped to the interval. Samples must be sorted by time.
pub fn preintegrate_interval(
    model: PreintModel,
    lin: BiasLinearization,
    noise: ImuNoise,
    samples: &[ImuSample],
    t0: f64,
    t1: f64,
) -> PreintegratedFactor {
    let mut s = preint_init(model, lin, noise);
    integrate_into(&mut s, samples, t0, t1);
    preint_finalize(&s)
}

/// Feeds the samples covering `[t0, t1]` into an existing state.
pub fn integrate_into(s: &mut PreintState, samples: &[ImuSample], t0: f64, t1: f64) {
    const EPS: f64 = 1e-12;
    let start = samples.partition_point(|x| x.t <= t0 + EPS).saturating_sub(1);
    for (i, smp) in samples.iter().enumerate().skip(start) {
        let a = smp.t.max(t0);
        let b = samples.get(i + 1).map_or(t1, |n| n.t.min(t1));
        if a >= t1 - EPS {
            break;
        }
        if b - a > EPS {
            preint_step(s, &smp.omega, &smp.accel, b - a);
        }
    }
}
