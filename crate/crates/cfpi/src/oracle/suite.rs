//! Oracle suite shared by the CLI and the acceptance tests.
//!
//! Each check reports its worst error as a multiple of its tolerance, so a
//! value at or below 1 passes. `tolerance_scale` multiplies every tolerance,
//! which makes the margins visible: a scale far below 1 must fail.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector, Matrix3, Vector2, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::configs::*;
use super::{central_difference, rk4_kinematics, worst_jacobian_error, KinematicState};
use crate::factors::{imu_factor, inverse_depth_factor, marginal_prior_factor, relative_pose_factor, BlockValue};
use crate::factors::{RelativePoseMeas, VisualCase};
use crate::manifold::{exp_so3, log_so3, ImuState, InvDepthFeature, Pose};
use crate::optimizer::{
    schur_complement, solve, Factor, FactorGraph, LinearFactor, MarginalizationRequest, Node, SolverConfig,
};
use crate::preintegration::{preint_init, preint_step, BiasLinearization, ImuNoise, ImuSample, PreintModel, PreintState};

/// Relative tolerance of the closed-form means against RK4.
pub const MEAN_TOLERANCE: f64 = 1e-10;
/// Relative and absolute tolerances of the Jacobian checks.
pub const JACOBIAN_REL: f64 = 1e-5;
pub const JACOBIAN_ABS: f64 = 1e-8;
/// Finite-difference step on the error state.
pub const FD_STEP: f64 = 1e-6;
/// Bias perturbation and tolerance of the first-order correction check.
pub const BIAS_STEP: f64 = 1e-3;
pub const BIAS_TOLERANCE: f64 = 1e-5;
/// Tolerance of the marginalization equivalence check.
pub const MARGINAL_TOLERANCE: f64 = 1e-10;

/// Deliberate defect injected to confirm that the suite detects it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mutation {
    /// Sign flip in the `H_β` bias-Jacobian recursion.
    FlipHbSign,
}

#[derive(Clone, Debug)]
pub struct SuiteConfig {
    pub seed: u64,
    /// Random draws for the closed-form mean check.
    pub mean_draws: usize,
    pub rk4_substeps: usize,
    /// Random configurations per Jacobian block.
    pub jacobian_draws: usize,
    pub bias_draws: usize,
    pub tolerance_scale: f64,
    pub mutation: Option<Mutation>,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            seed: 2024,
            mean_draws: 1000,
            rk4_substeps: 10_000,
            jacobian_draws: 100,
            bias_draws: 100,
            tolerance_scale: 1.0,
            mutation: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CheckResult {
    pub name: String,
    /// Worst error divided by the (scaled) tolerance.
    pub worst: f64,
    pub passed: bool,
    pub elapsed: Duration,
}

#[derive(Clone, Debug, Default)]
pub struct SuiteReport {
    pub checks: Vec<CheckResult>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }
}

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = seeded(seed);
    r.set_stream(stream);
    r
}

fn rel_err(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-3)
}

/// Worst relative error of one closed-form step against RK4 of the
/// continuous kinematics, over `draws` random `(ω̂, â, Δt)`.
///
/// Each draw starts from a random warm-up step so that the start rotation
/// of the tested step is not the identity.
pub fn closed_form_mean_error(model: PreintModel, draws: usize, substeps: usize, seed: u64) -> f64 {
    let mut rng = rng(seed, model as u64);
    let mut worst: f64 = 0.0;
    for _ in 0..draws {
        let lin = BiasLinearization::new(rand_vec(&mut rng, 0.02), rand_vec(&mut rng, 0.2), rand_quat(&mut rng));
        let mut s = preint_init(model, lin, ImuNoise::default());
        let dt0 = rng.random_range(1e-3..0.05);
        preint_step(&mut s, &rand_vec(&mut rng, 2.0), &rand_vec(&mut rng, 15.0), dt0);
        let start = KinematicState { r: s.r_kt, alpha: s.alpha, beta: s.beta };
        let g_tau = s.gravity_in_sample_frame();

        let dt = rng.random_range(1e-3..0.05);
        let om = rand_vec(&mut rng, 2.0);
        let am = rand_vec(&mut rng, 15.0);
        preint_step(&mut s, &om, &am, dt);

        let w = om - lin.bg;
        let a = match model {
            PreintModel::Model2 => am - lin.ba - g_tau,
            _ => am - lin.ba,
        };
        let truth = rk4_kinematics(start, &w, &a, dt, substeps);
        let r_err = (s.r_kt - truth.r).norm() / 3f64.sqrt();
        worst = worst.max(r_err).max(rel_err(&s.alpha, &truth.alpha)).max(rel_err(&s.beta, &truth.beta));
    }
    worst
}

fn integrate(model: PreintModel, lin: BiasLinearization, samples: &[ImuSample], mutation: Option<Mutation>) -> PreintState {
    let mut s = preint_init(model, lin, ImuNoise::default());
    s.flip_hb_sign = mutation == Some(Mutation::FlipHbSign);
    for w in samples.windows(2) {
        preint_step(&mut s, &w[0].omega, &w[0].accel, w[1].t - w[0].t);
    }
    s
}

fn random_lin(rng: &mut ChaCha8Rng) -> BiasLinearization {
    BiasLinearization::new(rand_vec(rng, 0.02), rand_vec(rng, 0.2), rand_quat(rng))
}

fn dm3(m: &Matrix3<f64>) -> DMatrix<f64> {
    DMatrix::from_column_slice(3, 3, m.as_slice())
}

/// Bias Jacobians `J_q, J_α, J_β, H_α, H_β` against central differences of
/// the reintegrated increments.
fn bias_jacobian_error(model: PreintModel, draws: usize, seed: u64, mutation: Option<Mutation>) -> f64 {
    let mut rng = rng(seed, 10 + model as u64);
    let mut worst: f64 = 0.0;
    for _ in 0..draws {
        let lin = random_lin(&mut rng);
        let samples = rand_samples(&mut rng);
        let base = integrate(model, lin, &samples, mutation);
        let mut fd: [DMatrix<f64>; 5] = std::array::from_fn(|_| DMatrix::zeros(3, 3));
        for i in 0..6 {
            let run = |sgn: f64| {
                let mut l = lin;
                if i < 3 {
                    l.bg[i] += sgn * FD_STEP;
                } else {
                    l.ba[i - 3] += sgn * FD_STEP;
                }
                integrate(model, l, &samples, None)
            };
            let (p, m) = (run(1.0), run(-1.0));
            let h2 = 2.0 * FD_STEP;
            let rot = |x: &PreintState| log_so3(&(x.r_kt.transpose() * base.r_kt));
            let (dq, da, db) = ((rot(&p) - rot(&m)) / h2, (p.alpha - m.alpha) / h2, (p.beta - m.beta) / h2);
            if i < 3 {
                fd[0].set_column(i, &dq);
                fd[1].set_column(i, &da);
                fd[2].set_column(i, &db);
            } else {
                fd[3].set_column(i - 3, &da);
                fd[4].set_column(i - 3, &db);
            }
        }
        let an = [dm3(&base.jq), dm3(&base.ja), dm3(&base.jb), dm3(&base.ha), dm3(&base.hb)];
        for (a, f) in an.iter().zip(&fd) {
            worst = worst.max(worst_jacobian_error(a, f, JACOBIAN_REL, JACOBIAN_ABS));
        }
    }
    worst
}

/// Model 2 orientation Jacobians `O_α, O_β` against central differences.
fn gravity_jacobian_error(draws: usize, seed: u64) -> f64 {
    let mut rng = rng(seed, 20);
    let mut worst: f64 = 0.0;
    for _ in 0..draws {
        let lin = random_lin(&mut rng);
        let samples = rand_samples(&mut rng);
        let s = integrate(PreintModel::Model2, lin, &samples, None);
        let mut fa = DMatrix::zeros(3, 3);
        let mut fb = DMatrix::zeros(3, 3);
        for i in 0..3 {
            let run = |sgn: f64| {
                let mut d = Vector3::zeros();
                d[i] = sgn * FD_STEP;
                let mut l = lin;
                l.q_kg = lin.q_kg.boxplus(&d);
                integrate(PreintModel::Model2, l, &samples, None)
            };
            let (p, m) = (run(1.0), run(-1.0));
            fa.set_column(i, &((p.alpha - m.alpha) / (2.0 * FD_STEP)));
            fb.set_column(i, &((p.beta - m.beta) / (2.0 * FD_STEP)));
        }
        worst = worst
            .max(worst_jacobian_error(&dm3(&s.oa), &fa, JACOBIAN_REL, JACOBIAN_ABS))
            .max(worst_jacobian_error(&dm3(&s.ob), &fb, JACOBIAN_REL, JACOBIAN_ABS));
    }
    worst
}

/// IMU factor Jacobians with respect to both states.
fn imu_factor_jacobian_error(model: PreintModel, draws: usize, seed: u64) -> f64 {
    let mut rng = rng(seed, 30 + model as u64);
    let mut worst: f64 = 0.0;
    for _ in 0..draws {
        let (xk, xk1, f) = random_imu_config(&mut rng, model);
        let r = imu_factor(&xk, &xk1, &f);
        let e0 = |x: &ImuState| DVector::from_column_slice(imu_factor(x, &xk1, &f).e.as_slice());
        let e1 = |x: &ImuState| DVector::from_column_slice(imu_factor(&xk, x, &f).e.as_slice());
        let fd0 = central_difference(&xk, 15, FD_STEP, e0, perturb_imu);
        let fd1 = central_difference(&xk1, 15, FD_STEP, e1, perturb_imu);
        let a0 = DMatrix::from_column_slice(15, 15, r.jk.as_slice());
        let a1 = DMatrix::from_column_slice(15, 15, r.jk1.as_slice());
        worst = worst
            .max(worst_jacobian_error(&a0, &fd0, JACOBIAN_REL, JACOBIAN_ABS))
            .max(worst_jacobian_error(&a1, &fd1, JACOBIAN_REL, JACOBIAN_ABS));
    }
    worst
}

/// Inverse-depth reprojection Jacobians for one observation case.
fn visual_jacobian_error(case: VisualCase, draws: usize, seed: u64) -> f64 {
    let mut rng = rng(seed, 40 + case as u64);
    let cams = stereo_rig();
    let mut worst: f64 = 0.0;
    for _ in 0..draws {
        let (xa, xk, f, ci, cj) = random_visual_geometry(&mut rng, case);
        let z = Vector2::new(rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05));
        let (c_i, c_j) = (&cams[ci], &cams[cj]);
        let eval = |a: &Pose, k: &Pose, g: &InvDepthFeature| {
            let r = inverse_depth_factor(case, a, k, g, c_i, c_j, &z).expect("point in front of the camera");
            DVector::from_column_slice(r.e.as_slice())
        };
        let r = inverse_depth_factor(case, &xa, &xk, &f, c_i, c_j, &z).expect("point in front of the camera");
        let fd_f = central_difference(&f, 3, FD_STEP, |g| eval(&xa, &xk, g), perturb_feature);
        let jf = DMatrix::from_column_slice(2, 3, r.j_feature.as_slice());
        worst = worst.max(worst_jacobian_error(&jf, &fd_f, JACOBIAN_REL, JACOBIAN_ABS));
        if case == VisualCase::Temporal {
            let fd_a = central_difference(&xa, 6, FD_STEP, |a| eval(a, &xk, &f), perturb_pose);
            let fd_k = central_difference(&xk, 6, FD_STEP, |k| eval(&xa, k, &f), perturb_pose);
            let ja = DMatrix::from_column_slice(2, 6, r.j_anchor.as_slice());
            let jk = DMatrix::from_column_slice(2, 6, r.j_observer.as_slice());
            worst = worst
                .max(worst_jacobian_error(&ja, &fd_a, JACOBIAN_REL, JACOBIAN_ABS))
                .max(worst_jacobian_error(&jk, &fd_k, JACOBIAN_REL, JACOBIAN_ABS));
        }
    }
    worst
}

fn relative_pose_jacobian_error(draws: usize, seed: u64) -> f64 {
    let mut rng = rng(seed, 50);
    let mut worst: f64 = 0.0;
    for _ in 0..draws {
        let (a, b, c) = (rand_pose(&mut rng), rand_pose(&mut rng), rand_pose(&mut rng));
        let m = RelativePoseMeas::between(&a, &c, nalgebra::Matrix6::identity());
        let r = relative_pose_factor(&a, &b, &m);
        let fk = central_difference(
            &a,
            6,
            FD_STEP,
            |x| DVector::from_column_slice(relative_pose_factor(x, &b, &m).e.as_slice()),
            perturb_pose,
        );
        let fj = central_difference(
            &b,
            6,
            FD_STEP,
            |x| DVector::from_column_slice(relative_pose_factor(&a, x, &m).e.as_slice()),
            perturb_pose,
        );
        worst = worst
            .max(worst_jacobian_error(&DMatrix::from_column_slice(6, 6, r.jk.as_slice()), &fk, JACOBIAN_REL, JACOBIAN_ABS))
            .max(worst_jacobian_error(&DMatrix::from_column_slice(6, 6, r.jj.as_slice()), &fj, JACOBIAN_REL, JACOBIAN_ABS));
    }
    worst
}

/// Marginal-prior Jacobian over a pose, a speed/bias and a vector block.
fn prior_jacobian_error(draws: usize, seed: u64) -> f64 {
    let mut rng = rng(seed, 60);
    let mut worst: f64 = 0.0;
    for _ in 0..draws {
        let x0 = rand_imu_state(&mut rng);
        let sb = |x: &ImuState| BlockValue::SpeedBias(nalgebra::SVector::<f64, 9>::from_iterator(x.bg.iter().chain(x.v.iter()).chain(x.ba.iter()).copied()));
        let lin = vec![BlockValue::Pose(x0.pose()), sb(&x0), BlockValue::Vector(DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0)))];
        let prior = random_prior(lin.clone(), &mut rng);
        let dx = crate::manifold::Vector15::from_fn(|_, _| rng.random_range(-0.3..0.3));
        let x = x0.boxplus(&dx);
        let v = DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
        let values = |x: &ImuState, v: &DVector<f64>| vec![BlockValue::Pose(x.pose()), sb(x), BlockValue::Vector(v.clone())];
        let r = marginal_prior_factor(&values(&x, &v), &prior).expect("matching blocks");
        let e = |x: &ImuState| marginal_prior_factor(&values(x, &v), &prior).expect("matching blocks").e;
        // Pose block: perturb θ and p of the state.
        let fd_pose = central_difference(&x, 6, FD_STEP, e, |x, i, h| perturb_imu(x, if i < 3 { i } else { i + 9 }, h));
        let fd_sb = central_difference(&x, 9, FD_STEP, e, |x, i, h| perturb_imu(x, i + 3, h));
        let fd_v = central_difference(
            &v,
            2,
            FD_STEP,
            |w| marginal_prior_factor(&values(&x, w), &prior).expect("matching blocks").e,
            |w, i, h| {
                let mut w = w.clone();
                w[i] += h;
                w
            },
        );
        for (j, fd) in r.jacobians.iter().map(|(_, j)| j).zip([fd_pose, fd_sb, fd_v]) {
            worst = worst.max(worst_jacobian_error(j, &fd, JACOBIAN_REL, JACOBIAN_ABS));
        }
    }
    worst
}

/// Worst error of the first-order bias correction of `(q̆, ᾰ, β̆)` against
/// reintegration at `b* + δb` with `‖δb_ω‖ = ‖δb_a‖ = 10⁻³`.
pub fn bias_correction_error(model: PreintModel, draws: usize, seed: u64) -> f64 {
    let mut rng = rng(seed, 70 + model as u64);
    let mut worst: f64 = 0.0;
    for _ in 0..draws {
        let lin = random_lin(&mut rng);
        let samples = rand_samples(&mut rng);
        let base = integrate(model, lin, &samples, None);
        let dbg = rand_vec(&mut rng, 1.0).normalize() * BIAS_STEP;
        let dba = rand_vec(&mut rng, 1.0).normalize() * BIAS_STEP;
        let mut l = lin;
        l.bg += dbg;
        l.ba += dba;
        let re = integrate(model, l, &samples, None);
        let ca = base.alpha + base.ja * dbg + base.ha * dba;
        let cb = base.beta + base.jb * dbg + base.hb * dba;
        let corrected = exp_so3(&(base.jq * dbg)) * base.r_kt.transpose();
        let r_err = log_so3(&(re.r_kt.transpose() * corrected.transpose())).norm();
        worst = worst.max((re.alpha - ca).norm()).max((re.beta - cb).norm()).max(r_err);
    }
    worst
}

fn linear(nodes: Vec<usize>, a: Vec<DMatrix<f64>>, b: DVector<f64>, sigma: f64) -> Factor {
    let n = b.len();
    Factor::Linear(LinearFactor { nodes, a, b, info: DMatrix::identity(n, n) / (sigma * sigma) })
}

fn vector_of(g: &FactorGraph, id: usize) -> DVector<f64> {
    match g.node(id) {
        Some(Node::Vector(v)) => v.clone(),
        _ => DVector::zeros(0),
    }
}

/// Largest difference between the full solution of a random 10-node
/// linear-Gaussian chain and the solution after marginalizing the first four
/// nodes in two steps, linearized away from the optimum.
pub fn chain_marginalization_error(seed: u64) -> f64 {
    let mut rng = rng(seed, 80);
    let (n, d) = (10, 2);
    let mut full = FactorGraph::new(Vec::new());
    let ids: Vec<usize> = (0..n).map(|_| full.add_node(Node::Vector(DVector::zeros(d)))).collect();
    let eye = DMatrix::<f64>::identity(d, d);
    for i in 0..n {
        let a = DMatrix::from_fn(d, d, |r, c| if r == c { 1.0 } else { rng.random_range(-0.3..0.3) });
        let b = DVector::from_fn(d, |_, _| rng.random_range(-2.0..2.0));
        full.add_factor(linear(vec![ids[i]], vec![a], b, 1.0 + i as f64 * 0.1)).expect("valid factor");
        if i + 1 < n {
            let b = DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
            full.add_factor(linear(vec![ids[i], ids[i + 1]], vec![-&eye, eye.clone()], b, 0.5)).expect("valid factor");
        }
    }
    let mut marg = full.clone();
    let gn = SolverConfig { initial_lambda: 0.0, max_iterations: 5, ..Default::default() };
    if solve(&mut full, &gn).is_err() {
        return f64::INFINITY;
    }
    for id in &ids {
        if let Some(Node::Vector(v)) = marg.nodes.get_mut(id) {
            *v = DVector::from_fn(d, |_, _| rng.random_range(-3.0..3.0));
        }
    }
    let steps = [ids[..3].to_vec(), vec![ids[3]]];
    for remove in steps {
        if marg.marginalize(&MarginalizationRequest { remove, demote: vec![] }).is_err() {
            return f64::INFINITY;
        }
    }
    if solve(&mut marg, &gn).is_err() {
        return f64::INFINITY;
    }
    ids[4..].iter().map(|id| (vector_of(&full, *id) - vector_of(&marg, *id)).amax()).fold(0.0, f64::max)
}

/// Schur complement of `Λ = [[4, 1], [1, 2]]`, `g = [1, 1]` onto the first
/// coordinate.
pub fn hand_schur() -> (f64, f64) {
    let h = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 2.0]);
    let g = DVector::from_vec(vec![1.0, 1.0]);
    let (lam, gm, _) = schur_complement(&h, &g, 1);
    (lam[(0, 0)], gm[0])
}

/// Runs every check.
pub fn run_oracle_suite(cfg: &SuiteConfig) -> SuiteReport {
    let mut report = SuiteReport::default();
    let s = cfg.tolerance_scale;
    let mut add = |name: String, tol: f64, f: &mut dyn FnMut() -> f64| {
        let t = Instant::now();
        let err = f();
        let worst = err / (tol * s);
        report.checks.push(CheckResult { name, worst, passed: worst <= 1.0, elapsed: t.elapsed() });
    };
    let (seed, nj) = (cfg.seed, cfg.jacobian_draws);
    for m in [PreintModel::Model1, PreintModel::Model2] {
        add(format!("mean/{}", m.name()), MEAN_TOLERANCE, &mut || {
            closed_form_mean_error(m, cfg.mean_draws, cfg.rk4_substeps, seed)
        });
    }
    // Jacobian checks report ratios against their own mixed tolerance.
    for m in PreintModel::ALL {
        add(format!("jacobian/bias/{}", m.name()), 1.0, &mut || bias_jacobian_error(m, nj, seed, cfg.mutation));
    }
    add("jacobian/gravity/m2".into(), 1.0, &mut || gravity_jacobian_error(nj, seed));
    for m in PreintModel::ALL {
        add(format!("jacobian/imu-factor/{}", m.name()), 1.0, &mut || imu_factor_jacobian_error(m, nj, seed));
    }
    for (case, name) in
        [(VisualCase::SameCamera, "same-camera"), (VisualCase::Stereo, "stereo"), (VisualCase::Temporal, "temporal")]
    {
        add(format!("jacobian/visual/{name}"), 1.0, &mut || visual_jacobian_error(case, nj, seed));
    }
    add("jacobian/relative-pose".into(), 1.0, &mut || relative_pose_jacobian_error(nj, seed));
    add("jacobian/marginal-prior".into(), 1.0, &mut || prior_jacobian_error(nj, seed));
    for m in [PreintModel::Model1, PreintModel::Model2] {
        add(format!("bias-correction/{}", m.name()), BIAS_TOLERANCE, &mut || {
            bias_correction_error(m, cfg.bias_draws, seed)
        });
    }
    add("marginalization/chain".into(), MARGINAL_TOLERANCE, &mut || chain_marginalization_error(seed));
    add("marginalization/hand-schur".into(), f64::EPSILON, &mut || {
        let (l, g) = hand_schur();
        (l - 3.5).abs().max((g - 0.5).abs())
    });
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick() -> SuiteConfig {
        SuiteConfig { mean_draws: 50, rk4_substeps: 2000, jacobian_draws: 10, bias_draws: 10, ..Default::default() }
    }

    #[test]
    fn quick_suite_passes() {
        let r = run_oracle_suite(&quick());
        for c in &r.checks {
            assert!(c.passed, "{}: {}", c.name, c.worst);
        }
    }

    #[test]
    fn flipped_hb_sign_fails_the_suite() {
        let r = run_oracle_suite(&SuiteConfig { mutation: Some(Mutation::FlipHbSign), ..quick() });
        assert!(!r.passed());
        assert!(!r.check("jacobian/bias/m1").unwrap().passed);
        assert!(r.check("mean/m1").unwrap().passed);
    }

    #[test]
    fn tightened_tolerances_fail() {
        let r = run_oracle_suite(&SuiteConfig { tolerance_scale: 1e-4, ..quick() });
        assert!(!r.passed());
    }

    #[test]
    fn hand_schur_is_exact() {
        assert_eq!(hand_schur(), (3.5, 0.5));
    }
}
