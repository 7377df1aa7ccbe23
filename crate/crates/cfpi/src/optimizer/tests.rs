use nalgebra::{DMatrix, DVector, Matrix2, Matrix3, Vector2, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::system::{linearize, reduce, Layout};
use super::*;
use crate::factors::{BlockKey, BlockValue, MarginalPrior, Part, RobustKind};
use crate::manifold::{Anchor, ExtrinsicCalib, ImuState, InvDepthFeature, Pose, Quat, Vector15};
use crate::preintegration::{
    gravity_vector, preintegrate_interval, BiasLinearization, ImuNoise, ImuSample, PreintModel,
};

fn vector_graph(dims: &[usize]) -> (FactorGraph, Vec<usize>) {
    let mut g = FactorGraph::new(Vec::new());
    let ids = dims.iter().map(|d| g.add_node(Node::Vector(DVector::zeros(*d)))).collect();
    (g, ids)
}

fn linear(nodes: Vec<usize>, a: Vec<DMatrix<f64>>, b: DVector<f64>, sigma: f64) -> Factor {
    let n = b.len();
    Factor::Linear(LinearFactor { nodes, a, b, info: DMatrix::identity(n, n) / (sigma * sigma) })
}

fn vector_of(g: &FactorGraph, id: usize) -> DVector<f64> {
    match g.node(id) {
        Some(Node::Vector(v)) => v.clone(),
        n => panic!("not a vector node: {n:?}"),
    }
}

fn gauss_newton() -> SolverConfig {
    SolverConfig { initial_lambda: 0.0, max_iterations: 5, ..Default::default() }
}

/// Random linear-Gaussian chain: a unary factor on every node and a
/// difference factor between neighbours.
fn chain(rng: &mut ChaCha8Rng, n: usize, d: usize) -> (FactorGraph, Vec<usize>) {
    let (mut g, ids) = vector_graph(&vec![d; n]);
    let eye = DMatrix::<f64>::identity(d, d);
    for i in 0..n {
        let a = DMatrix::from_fn(d, d, |r, c| if r == c { 1.0 } else { rng.random_range(-0.3..0.3) });
        let b = DVector::from_fn(d, |_, _| rng.random_range(-2.0..2.0));
        g.add_factor(linear(vec![ids[i]], vec![a], b, 1.0 + i as f64 * 0.1)).unwrap();
        if i + 1 < n {
            let b = DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
            g.add_factor(linear(vec![ids[i], ids[i + 1]], vec![-&eye, eye.clone()], b, 0.5)).unwrap();
        }
    }
    (g, ids)
}

#[test]
fn linear_problem_solved_in_one_gauss_newton_step() {
    let (mut g, ids) = vector_graph(&[2, 2]);
    let eye = DMatrix::<f64>::identity(2, 2);
    g.add_factor(linear(vec![ids[0]], vec![eye.clone()], DVector::from_vec(vec![1.0, 2.0]), 1.0)).unwrap();
    g.add_factor(linear(vec![ids[0], ids[1]], vec![-&eye, eye.clone()], DVector::from_vec(vec![0.5, -1.0]), 1.0))
        .unwrap();
    let cfg = SolverConfig { max_iterations: 1, ..gauss_newton() };
    let rep = solve(&mut g, &cfg).unwrap();
    assert_eq!(rep.iterations, 1);
    assert!((vector_of(&g, ids[0]) - DVector::from_vec(vec![1.0, 2.0])).norm() < 1e-12);
    assert!((vector_of(&g, ids[1]) - DVector::from_vec(vec![1.5, 1.0])).norm() < 1e-12);
    assert!(rep.final_cost < 1e-20);
}

#[test]
fn prior_only_graph_stays_at_its_linearization_point() {
    let (mut g, ids) = vector_graph(&[3]);
    let x0 = DVector::from_vec(vec![0.3, -0.2, 1.0]);
    if let Some(Node::Vector(v)) = g.nodes.get_mut(&ids[0]) {
        *v = x0.clone();
    }
    let lambda = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.5, 2.0]);
    let prior = MarginalPrior::new(
        vec![BlockKey::new(ids[0], Part::Whole)],
        vec![BlockValue::Vector(x0.clone())],
        &lambda,
        &DVector::zeros(3),
    )
    .unwrap();
    g.add_factor(Factor::Prior(Box::new(prior))).unwrap();
    let rep = solve(&mut g, &SolverConfig::default()).unwrap();
    assert_eq!(rep.termination, Termination::GradientConverged);
    assert!((vector_of(&g, ids[0]) - x0).norm() < 1e-14);
}

#[test]
fn prior_gradient_moves_the_minimum() {
    let (mut g, ids) = vector_graph(&[2]);
    let lambda = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
    let grad = DVector::from_vec(vec![1.0, -1.0]);
    let prior = MarginalPrior::new(
        vec![BlockKey::new(ids[0], Part::Whole)],
        vec![BlockValue::Vector(DVector::zeros(2))],
        &lambda,
        &grad,
    )
    .unwrap();
    g.add_factor(Factor::Prior(Box::new(prior))).unwrap();
    solve(&mut g, &gauss_newton()).unwrap();
    let expected = -lambda.clone().lu().solve(&grad).unwrap();
    assert!((vector_of(&g, ids[0]) - expected).norm() < 1e-12);
}

#[test]
fn hand_schur_complement() {
    let h = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 2.0]);
    let g = DVector::from_vec(vec![1.0, 1.0]);
    let (lam, gm, reg) = schur_complement(&h, &g, 1);
    assert_eq!(lam[(0, 0)], 3.5);
    assert_eq!(gm[0], 0.5);
    assert!(!reg);
}

#[test]
fn hand_schur_through_the_graph() {
    // Λ = [[4,1],[1,2]], g = [1,1] at x = 0 from a single linear factor
    // with e = L x − b, where LᵀL = Λ and −Lᵀb = g.
    let (mut g, ids) = vector_graph(&[1, 1]);
    let h = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 2.0]);
    let l = h.clone().cholesky().unwrap().l().transpose();
    let b = -l.transpose().lu().solve(&DVector::from_vec(vec![1.0, 1.0])).unwrap();
    let a = vec![l.columns(0, 1).into_owned(), l.columns(1, 1).into_owned()];
    g.add_factor(Factor::Linear(LinearFactor { nodes: ids.clone(), a, b, info: DMatrix::identity(2, 2) })).unwrap();
    let prior = g.marginalize(&MarginalizationRequest { remove: vec![ids[1]], demote: vec![] }).unwrap().unwrap();
    assert!((prior.lambda[(0, 0)] - 3.5).abs() < 1e-12);
    assert!((prior.gradient[0] - 0.5).abs() < 1e-12);
    assert_eq!(g.factors.len(), 1);
    assert!(g.node(ids[1]).is_none());
}

#[test]
fn isolated_node_marginalizes_to_its_own_information() {
    let (mut g, ids) = vector_graph(&[2, 2]);
    let eye = DMatrix::<f64>::identity(2, 2);
    g.add_factor(linear(vec![ids[0]], vec![eye.clone() * 2.0], DVector::from_vec(vec![1.0, 0.0]), 1.0)).unwrap();
    g.add_factor(linear(vec![ids[1]], vec![eye.clone()], DVector::from_vec(vec![0.0, 1.0]), 1.0)).unwrap();
    let prior = g.marginalize(&MarginalizationRequest { remove: vec![ids[1]], demote: vec![] }).unwrap();
    // Nothing links the removed node to the rest, so no prior is produced.
    assert!(prior.unwrap().keys.is_empty());
    assert_eq!(g.factors.len(), 1);
}

#[test]
fn chain_marginalization_matches_full_solution() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut full, ids) = chain(&mut rng, 10, 2);
    let mut marg = full.clone();
    solve(&mut full, &gauss_newton()).unwrap();

    // Linearize away from the optimum.
    for id in &ids {
        if let Some(Node::Vector(v)) = marg.nodes.get_mut(id) {
            *v = DVector::from_fn(2, |_, _| rng.random_range(-3.0..3.0));
        }
    }
    marg.marginalize(&MarginalizationRequest { remove: ids[..3].to_vec(), demote: vec![] }).unwrap();
    marg.marginalize(&MarginalizationRequest { remove: vec![ids[3]], demote: vec![] }).unwrap();
    solve(&mut marg, &gauss_newton()).unwrap();
    for id in &ids[4..] {
        let d = (vector_of(&full, *id) - vector_of(&marg, *id)).amax();
        assert!(d <= 1e-10, "node {id}: {d:e}");
    }
}

#[test]
fn rank_deficient_graph_is_reported() {
    let (mut g, ids) = vector_graph(&[2, 2, 1]);
    let eye = DMatrix::<f64>::identity(2, 2);
    g.add_factor(linear(vec![ids[0]], vec![eye.clone()], DVector::zeros(2), 1.0)).unwrap();
    g.add_factor(linear(vec![ids[0], ids[1]], vec![-&eye, eye.clone()], DVector::zeros(2), 1.0)).unwrap();
    match solve(&mut g, &SolverConfig::default()) {
        Err(OptError::RankDeficient { nodes }) => assert_eq!(nodes, vec![ids[2]]),
        r => panic!("expected rank deficiency, got {r:?}"),
    }
}

#[test]
fn factor_validation() {
    let (mut g, ids) = vector_graph(&[2]);
    let bad = linear(vec![ids[0]], vec![DMatrix::identity(3, 3)], DVector::zeros(3), 1.0);
    assert!(matches!(g.add_factor(bad), Err(OptError::Factor(_))));
    let unknown = linear(vec![99], vec![DMatrix::identity(2, 2)], DVector::zeros(2), 1.0);
    assert!(matches!(g.add_factor(unknown), Err(OptError::UnknownNode(99))));
    let imu = g.add_node(Node::Imu(ImuState::default()));
    let wrong = Factor::Linear(LinearFactor {
        nodes: vec![imu],
        a: vec![DMatrix::identity(15, 15)],
        b: DVector::zeros(15),
        info: DMatrix::identity(15, 15),
    });
    assert!(matches!(g.add_factor(wrong), Err(OptError::WrongNodeType { .. })));
    assert!(matches!(
        solve(&mut g, &SolverConfig { lambda_up: 0.5, ..Default::default() }),
        Err(OptError::InvalidConfig)
    ));
}

// Visual-inertial window built from exactly consistent measurements.

fn stereo_rig() -> Vec<ExtrinsicCalib> {
    let r = Matrix3::new(0.0, -1.0, 0.0, 0.0, 0.0, -1.0, 1.0, 0.0, 0.0);
    let q_ci = Quat::from_rotation(&r);
    vec![
        ExtrinsicCalib { q_ci, p_ic: Vector3::new(0.05, 0.055, 0.0) },
        ExtrinsicCalib { q_ci, p_ic: Vector3::new(0.05, -0.055, 0.0) },
    ]
}

fn camera_point(cam: &ExtrinsicCalib, pose: &Pose, p: &Vector3<f64>) -> Vector3<f64> {
    let (r_cg, p_c) = cam.camera_pose(pose);
    r_cg * (p - p_c)
}

struct VioWindow {
    graph: FactorGraph,
    states: Vec<usize>,
    features: Vec<usize>,
    truth: Vec<ImuState>,
    truth_features: Vec<InvDepthFeature>,
}

fn smooth_samples(rng: &mut ChaCha8Rng, t0: f64) -> Vec<ImuSample> {
    let w0 = Vector3::from_fn(|_, _| rng.random_range(-0.3..0.3));
    let a0 = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0)) + gravity_vector();
    (0..=10)
        .map(|i| {
            let t = i as f64 * 0.01;
            ImuSample {
                t: t0 + t,
                omega: w0 + Vector3::new(0.2 * t, -0.1 * t, 0.05),
                accel: a0 + Vector3::new(0.5 * t, 0.0, -0.3 * t),
            }
        })
        .collect()
}

fn vio_window(seed: u64, model: PreintModel, n_states: usize, n_features: usize) -> VioWindow {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cams = stereo_rig();
    let mut graph = FactorGraph::new(cams.clone());
    let x0 = ImuState {
        q: Quat::exp(&Vector3::new(0.02, -0.03, 0.1)),
        bg: Vector3::new(0.01, -0.02, 0.005),
        v: Vector3::new(1.0, 0.2, 0.0),
        ba: Vector3::new(0.05, 0.02, -0.03),
        p: Vector3::zeros(),
    };
    let mut truth = vec![x0];
    let mut states = vec![graph.add_node(Node::Imu(x0))];
    let mut imu_factors = Vec::new();
    for k in 1..n_states {
        let xk = truth[k - 1];
        let samples = smooth_samples(&mut rng, 0.1 * (k - 1) as f64);
        let lin = BiasLinearization::new(xk.bg, xk.ba, xk.q);
        let f = preintegrate_interval(model, lin, ImuNoise::default(), &samples, samples[0].t, samples[0].t + 0.1);
        let xk1 = f.predict(&xk);
        truth.push(xk1);
        states.push(graph.add_node(Node::Imu(xk1)));
        imu_factors.push(f);
    }
    for (k, f) in imu_factors.into_iter().enumerate() {
        graph.add_factor(Factor::Imu { from: states[k], to: states[k + 1], meas: Box::new(f) }).unwrap();
    }

    // Features in front of the first camera, visible from every state.
    let mut features = Vec::new();
    let mut truth_features = Vec::new();
    let info = Matrix2::identity() * 450.0f64.powi(2);
    while features.len() < n_features {
        let anchor_pose = truth[0].pose();
        let depth = rng.random_range(3.0..12.0);
        let bearing = Vector2::new(rng.random_range(-0.6..0.6), rng.random_range(-0.4..0.4));
        let pc = Vector3::new(bearing.x, bearing.y, 1.0) * depth;
        let (r_cg, p_c) = cams[0].camera_pose(&anchor_pose);
        let pw = r_cg.transpose() * pc + p_c;
        let visible = truth.iter().all(|x| cams.iter().all(|c| camera_point(c, &x.pose(), &pw).z > 1.0));
        if !visible {
            continue;
        }
        let feat = InvDepthFeature {
            alpha: bearing.x,
            beta: bearing.y,
            rho: 1.0 / depth,
            anchor: Anchor { node: states[0], camera: 0 },
        };
        let id = graph.add_node(Node::Feature(feat));
        for (k, x) in truth.iter().enumerate() {
            for (c, cam) in cams.iter().enumerate() {
                if k == 0 && c == 0 {
                    continue;
                }
                let pc = camera_point(cam, &x.pose(), &pw);
                let z = Vector2::new(pc.x / pc.z, pc.y / pc.z);
                let obs = VisualObs { feature: id, observer: states[k], camera: c, z, info, robust: RobustKind::None };
                graph.add_factor(Factor::Visual(obs)).unwrap();
            }
        }
        let z0 = feat.bearing();
        let obs = VisualObs { feature: id, observer: states[0], camera: 0, z: z0, info, robust: RobustKind::None };
        graph.add_factor(Factor::Visual(obs)).unwrap();
        features.push(id);
        truth_features.push(feat);
    }

    // Gauge prior on the first state.
    let lambda = DMatrix::from_diagonal(&DVector::from_fn(15, |i, _| if i < 6 { 1e8 } else { 1e2 }));
    let keys = vec![BlockKey::new(states[0], Part::Pose), BlockKey::new(states[0], Part::SpeedBias)];
    let lin = keys.iter().map(|k| graph.node(k.node).unwrap().block_value(k.part)).collect();
    let prior = MarginalPrior::new(keys, lin, &lambda, &DVector::zeros(15)).unwrap();
    graph.add_factor(Factor::Prior(Box::new(prior))).unwrap();
    VioWindow { graph, states, features, truth, truth_features }
}

/// Perturbs every state and feature by a random increment of norm `size`.
fn perturb(w: &mut VioWindow, rng: &mut ChaCha8Rng, size: f64) {
    let dim = w.states.len() * 15 + w.features.len() * 3;
    let mut d = DVector::from_fn(dim, |_, _| rng.random_range(-1.0..1.0));
    d *= size / d.norm();
    for (i, id) in w.states.iter().enumerate() {
        if let Some(Node::Imu(x)) = w.graph.nodes.get_mut(id) {
            *x = x.boxplus(&Vector15::from_column_slice(&d.as_slice()[15 * i..15 * i + 15]));
        }
    }
    let base = w.states.len() * 15;
    for (i, id) in w.features.iter().enumerate() {
        if let Some(Node::Feature(f)) = w.graph.nodes.get_mut(id) {
            *f = f.boxplus(&Vector3::from_column_slice(&d.as_slice()[base + 3 * i..base + 3 * i + 3]));
        }
    }
}

fn window_error(w: &VioWindow) -> f64 {
    let mut worst: f64 = 0.0;
    for (id, t) in w.states.iter().zip(&w.truth) {
        let x = w.graph.imu_state(*id).unwrap();
        worst = worst.max(x.boxminus(t).amax());
    }
    for (id, t) in w.features.iter().zip(&w.truth_features) {
        worst = worst.max((w.graph.feature(*id).unwrap().params() - t.params()).amax());
    }
    worst
}

#[test]
fn noiseless_vio_window_converges_to_truth() {
    for model in [PreintModel::Model1, PreintModel::Model2, PreintModel::Discrete] {
        let mut w = vio_window(11, model, 6, 20);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        assert!(window_error(&w) < 1e-12);
        perturb(&mut w, &mut rng, 0.05);
        let cfg = SolverConfig { max_iterations: 10, ..Default::default() };
        let rep = solve(&mut w.graph, &cfg).unwrap();
        let err = window_error(&w);
        assert!(rep.iterations <= 10);
        assert!(err <= 1e-7, "{model:?}: error {err:e} after {} iterations", rep.iterations);
        assert_eq!(rep.invalid_factors, 0);
    }
}

#[test]
fn lm_cost_never_increases() {
    let mut w = vio_window(21, PreintModel::Model1, 4, 10);
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    perturb(&mut w, &mut rng, 0.2);
    let mut last = f64::INFINITY;
    for _ in 0..6 {
        let rep = solve(&mut w.graph, &SolverConfig { max_iterations: 1, ..Default::default() }).unwrap();
        assert!(rep.final_cost <= rep.initial_cost);
        assert!(rep.initial_cost <= last * (1.0 + 1e-12));
        last = rep.final_cost;
    }
}

#[test]
fn feature_schur_matches_dense_solve() {
    let mut w = vio_window(31, PreintModel::Model2, 4, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    perturb(&mut w, &mut rng, 0.05);
    let g = &w.graph;
    let view = g.view();
    let schur = Layout::for_solve(&g.nodes, &g.factors, view);
    let dense = Layout::new(
        g.nodes.iter().flat_map(|(id, n)| n.parts().iter().map(move |p| (BlockKey::new(*id, *p), n.part_dof(*p)))),
        Vec::new(),
    );
    let ss = linearize(&g.factors, view, &schur).unwrap();
    let sd = linearize(&g.factors, view, &dense).unwrap();
    assert!((ss.cost - sd.cost).abs() <= 1e-9 * sd.cost);

    let red = reduce(&ss, 0.0, 1e-9);
    let dx = -red.h.clone().cholesky().unwrap().solve(&red.g);
    let df = super::system::back_substitute(&ss, &red, &dx);
    let full = -sd.h.clone().cholesky().unwrap().solve(&sd.g);
    for (k, off, dim) in &schur.blocks {
        let (_, o2, _) = dense.blocks.iter().find(|(b, _, _)| b == k).unwrap();
        let d = (dx.rows(*off, *dim) - full.rows(*o2, *dim)).amax();
        assert!(d <= 1e-9 * (1.0 + full.amax()), "{k:?}: {d:e}");
    }
    for (id, d) in schur.features.iter().zip(&df) {
        let (_, o2, _) = dense.blocks.iter().find(|(b, _, _)| b.node == *id).unwrap();
        assert!((d - full.fixed_rows::<3>(*o2)).amax() <= 1e-9 * (1.0 + full.amax()));
    }
}

#[test]
fn marginal_prior_is_symmetric_and_psd() {
    let mut w = vio_window(41, PreintModel::Model1, 6, 20);
    let oldest = w.states[0];
    let anchored = w.features.clone();
    let mut req = MarginalizationRequest { remove: vec![oldest], demote: vec![w.states[1]] };
    req.remove.extend(anchored);
    let prior = w.graph.marginalize(&req).unwrap().unwrap();
    let l = &prior.lambda;
    assert!((l - l.transpose()).amax() <= 1e-9 * l.amax());
    assert!(l.clone().symmetric_eigenvalues().min() >= -1e-9 * l.amax());
    assert!(matches!(w.graph.node(w.states[1]), Some(Node::Pose(_))));
    assert!(w.graph.node(oldest).is_none());
    assert!(w.graph.factors.iter().all(|f| !matches!(f, Factor::Visual(_))));
}

#[test]
fn marginalizing_at_the_optimum_keeps_the_estimate() {
    let mut w = vio_window(51, PreintModel::Model1, 6, 20);
    let mut rng = ChaCha8Rng::seed_from_u64(52);
    perturb(&mut w, &mut rng, 0.01);
    let cfg = SolverConfig { max_iterations: 20, ..Default::default() };
    solve(&mut w.graph, &cfg).unwrap();
    let before: Vec<_> = w.states[2..].iter().map(|id| *w.graph.imu_state(*id).unwrap()).collect();
    w.graph.marginalize(&MarginalizationRequest { remove: vec![], demote: vec![w.states[0], w.states[1]] }).unwrap();
    let rep = solve(&mut w.graph, &cfg).unwrap();
    assert!(rep.iterations <= 1);
    for (id, b) in w.states[2..].iter().zip(&before) {
        assert!(w.graph.imu_state(*id).unwrap().boxminus(b).amax() < 1e-8);
    }
}

#[test]
fn window_below_capacity_only_appends() {
    let g = FactorGraph::new(Vec::new());
    let mut w = SlidingWindow::new(WindowConfig::default());
    for id in 0..6 {
        assert!(w.advance(&g, id).is_empty());
    }
    assert_eq!(w.len(), 6);
    assert_eq!(w.latest(), Some(5));
}

#[test]
fn seventh_inertial_state_demotes_the_oldest() {
    let g = FactorGraph::new(Vec::new());
    let mut w = SlidingWindow::new(WindowConfig::default());
    for id in 0..6 {
        w.advance(&g, id);
    }
    let req = w.advance(&g, 6);
    assert_eq!(req, MarginalizationRequest { remove: vec![], demote: vec![0] });
    assert_eq!(w.inertial().collect::<Vec<_>>(), (1..7).collect::<Vec<_>>());
    assert_eq!(w.poses().collect::<Vec<_>>(), vec![0]);
}

#[test]
fn full_pose_window_removes_oldest_pose_and_its_features() {
    let cams = stereo_rig();
    let mut g = FactorGraph::new(cams);
    let mut w = SlidingWindow::new(WindowConfig { inertial: 1, poses: 8 });
    let mut ids = Vec::new();
    for _ in 0..10 {
        ids.push(g.add_node(Node::Imu(ImuState::default())));
    }
    let mut only_oldest = Vec::new();
    for k in 0..4 {
        let anchor = if k < 3 { ids[0] } else { ids[1] };
        let f = g.add_node(Node::Feature(InvDepthFeature {
            alpha: 0.0,
            beta: 0.0,
            rho: 0.2,
            anchor: Anchor { node: anchor, camera: 0 },
        }));
        let obs = VisualObs {
            feature: f,
            observer: anchor,
            camera: 1,
            z: Vector2::zeros(),
            info: Matrix2::identity(),
            robust: RobustKind::None,
        };
        g.add_factor(Factor::Visual(obs)).unwrap();
        if k < 3 {
            only_oldest.push(f);
        }
    }
    for id in &ids {
        let req = w.advance(&g, *id);
        if *id != ids[9] {
            assert!(req.remove.is_empty());
        } else {
            let mut expected = vec![ids[0]];
            expected.extend(&only_oldest);
            assert_eq!(req.remove, expected);
            assert_eq!(req.demote, vec![ids[8]]);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn random_chain_marginalization_equivalence(seed in 0u64..10_000, cut in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut full, ids) = chain(&mut rng, 10, 1);
        let mut marg = full.clone();
        solve(&mut full, &gauss_newton()).unwrap();
        marg.marginalize(&MarginalizationRequest { remove: ids[..cut].to_vec(), demote: vec![] }).unwrap();
        solve(&mut marg, &gauss_newton()).unwrap();
        for id in &ids[cut..] {
            prop_assert!((vector_of(&full, *id) - vector_of(&marg, *id)).amax() <= 1e-10);
        }
    }
}
