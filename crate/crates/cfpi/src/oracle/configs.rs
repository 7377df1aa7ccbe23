//! Seeded random configurations for the oracle checks and factor tests.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::factors::{BlockKey, BlockValue, MarginalPrior, Part, VisualCase};
use crate::manifold::{Anchor, ExtrinsicCalib, ImuState, InvDepthFeature, Pose, Quat, Vector15, Vector6};
use crate::preintegration::{
    gravity_vector, preintegrate_interval, BiasLinearization, ImuNoise, ImuSample, PreintModel, PreintegratedFactor,
};

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_vec(rng: &mut impl Rng, scale: f64) -> Vector3<f64> {
    Vector3::from_fn(|_, _| rng.random_range(-scale..scale))
}

pub fn rand_quat(rng: &mut impl Rng) -> Quat {
    Quat::exp(&rand_vec(rng, std::f64::consts::PI / 1.8))
}

pub fn rand_pose(rng: &mut impl Rng) -> Pose {
    Pose { q: rand_quat(rng), p: rand_vec(rng, 5.0) }
}

pub fn rand_imu_state(rng: &mut impl Rng) -> ImuState {
    ImuState {
        q: rand_quat(rng),
        bg: rand_vec(rng, 0.05),
        v: rand_vec(rng, 3.0),
        ba: rand_vec(rng, 0.2),
        p: rand_vec(rng, 5.0),
    }
}

pub fn perturb_imu(x: &ImuState, i: usize, h: f64) -> ImuState {
    let mut d = Vector15::zeros();
    d[i] = h;
    x.boxplus(&d)
}

pub fn perturb_pose(x: &Pose, i: usize, h: f64) -> Pose {
    let mut d = Vector6::zeros();
    d[i] = h;
    x.boxplus(&d)
}

/// Random IMU samples at 100 Hz over `[0, 0.1]`.
pub fn rand_samples(rng: &mut impl Rng) -> Vec<ImuSample> {
    let w0 = rand_vec(rng, 2.0);
    let a0 = rand_vec(rng, 4.0) + gravity_vector();
    (0..=10)
        .map(|i| ImuSample {
            t: i as f64 * 0.01,
            omega: w0 + rand_vec(rng, 0.5),
            accel: a0 + rand_vec(rng, 1.0),
        })
        .collect()
}

/// Preintegrated factor and two states with residuals of moderate size.
pub fn random_imu_config(rng: &mut impl Rng, model: PreintModel) -> (ImuState, ImuState, PreintegratedFactor) {
    let samples = rand_samples(rng);
    let xk = rand_imu_state(rng);
    let lin = BiasLinearization::new(
        xk.bg + rand_vec(rng, 0.02),
        xk.ba + rand_vec(rng, 0.1),
        xk.q.boxplus(&rand_vec(rng, 0.1)),
    );
    let f = preintegrate_interval(model, lin, ImuNoise::default(), &samples, 0.0, 0.1);
    let dx = Vector15::from_fn(|_, _| rng.random_range(-0.5..0.5));
    let xk1 = reconstruct(&xk, &f).boxplus(&dx);
    (xk, xk1, f)
}

/// States consistent with a noiseless reintegration at gyro bias
/// `b* + dbg`, together with the factor linearized at `b*`.
pub fn truth_imu_config(
    rng: &mut impl Rng,
    model: PreintModel,
    dbg: Vector3<f64>,
) -> (ImuState, ImuState, PreintegratedFactor) {
    let samples = rand_samples(rng);
    let mut xk = rand_imu_state(rng);
    let lin = BiasLinearization::new(xk.bg, xk.ba, xk.q);
    let f = preintegrate_interval(model, lin, ImuNoise::default(), &samples, 0.0, 0.1);
    xk.bg += dbg;
    let lin_true = BiasLinearization::new(xk.bg, xk.ba, xk.q);
    let t = preintegrate_interval(model, lin_true, ImuNoise::default(), &samples, 0.0, 0.1);
    (xk, reconstruct(&xk, &t), f)
}

/// End state implied by a preintegrated measurement.
pub fn reconstruct(xk: &ImuState, f: &PreintegratedFactor) -> ImuState {
    f.predict(xk)
}

/// Stereo rig with a forward-looking camera pair and a 0.11 m baseline.
pub fn stereo_rig() -> [ExtrinsicCalib; 2] {
    let r = Matrix3::new(0.0, -1.0, 0.0, 0.0, 0.0, -1.0, 1.0, 0.0, 0.0);
    let q = Quat::from_rotation(&r);
    [
        ExtrinsicCalib { q_ci: q, p_ic: Vector3::new(0.05, 0.055, 0.0) },
        ExtrinsicCalib { q_ci: q, p_ic: Vector3::new(0.05, -0.055, 0.0) },
    ]
}

pub fn perturb_feature(f: &InvDepthFeature, i: usize, h: f64) -> InvDepthFeature {
    let mut d = Vector3::zeros();
    d[i] = h;
    f.boxplus(&d)
}

/// Anchor pose, observer pose, feature and camera indices with the point
/// well in front of the observing camera.
pub fn random_visual_geometry(rng: &mut impl Rng, case: VisualCase) -> (Pose, Pose, InvDepthFeature, usize, usize) {
    let cams = stereo_rig();
    loop {
        let xa = rand_pose(rng);
        let xk = match case {
            VisualCase::Temporal => Pose { q: xa.q.boxplus(&rand_vec(rng, 0.3)), p: xa.p + rand_vec(rng, 0.5) },
            _ => xa,
        };
        let f = InvDepthFeature {
            alpha: rng.random_range(-0.6..0.6),
            beta: rng.random_range(-0.4..0.4),
            rho: rng.random_range(0.05..0.5),
            anchor: Anchor { node: 0, camera: 0 },
        };
        let ci = rng.random_range(0..2);
        let cj = match case {
            VisualCase::SameCamera => ci,
            VisualCase::Stereo => 1 - ci,
            VisualCase::Temporal => rng.random_range(0..2),
        };
        let h = crate::factors::visual::scaled_point(case, &xa, &xk, &f, &cams[ci], &cams[cj]);
        if h.z > 0.2 * f.rho.max(0.05) {
            return (xa, xk, f, ci, cj);
        }
    }
}

/// Prior with a random square-root factor on blocks `0..lin.len()`.
pub fn random_prior(lin: Vec<BlockValue>, rng: &mut impl Rng) -> MarginalPrior {
    let n: usize = lin.iter().map(|b| b.dof()).sum();
    let a_m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let b_m = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    MarginalPrior {
        keys: (0..lin.len()).map(|i| BlockKey::new(i, Part::Whole)).collect(),
        lambda: a_m.transpose() * &a_m,
        gradient: a_m.transpose() * &b_m,
        a_m,
        b_m,
        lin,
        regularized: false,
    }
}
