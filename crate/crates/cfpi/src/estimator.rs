//! Sliding-window visual-inertial estimator driven by simulated data.
//!
//! Each camera frame adds an IMU state linked to the previous one by a
//! preintegrated factor, plus either stereo inverse-depth observations
//! (tightly coupled) or a relative-pose measurement (loosely coupled). The
//! window is optimized after every frame and then marginalized back to its
//! configured size.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector, Matrix2, SMatrix};
use serde::{Deserialize, Serialize};

use crate::factors::{BlockKey, MarginalPrior, NodeId, Part, RobustKind};
use crate::manifold::{Anchor, ImuState, InvDepthFeature};
use crate::optimizer::{solve, Factor, FactorGraph, Node, OptError, SlidingWindow, SolverConfig, VisualObs, WindowConfig};
use crate::preintegration::{preintegrate_interval, BiasLinearization, ImuNoise, PreintModel};
use crate::simulator::{stereo_depth, CameraConfig, Simulation};

pub type Matrix15 = SMatrix<f64, 15, 15>;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Inverse-depth feature observations.
    #[default]
    TightlyCoupled,
    /// Relative-pose measurements between consecutive frames.
    LooselyCoupled,
}

impl Mode {
    pub fn parse(s: &str) -> Option<Mode> {
        match s {
            "tightly-coupled" => Some(Mode::TightlyCoupled),
            "loosely-coupled" => Some(Mode::LooselyCoupled),
            _ => None,
        }
    }
}

/// Standard deviations of the prior on the first state.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitialPrior {
    pub rotation: f64,
    pub position: f64,
    pub velocity: f64,
    pub gyro_bias: f64,
    pub accel_bias: f64,
}

impl Default for InitialPrior {
    fn default() -> Self {
        Self { rotation: 1e-3, position: 1e-3, velocity: 0.05, gyro_bias: 0.005, accel_bias: 0.05 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorConfig {
    pub mode: Mode,
    pub window: WindowConfig,
    pub solver: SolverConfig,
    pub robust: RobustKind,
    pub initial_prior: InitialPrior,
    /// Start from the true biases instead of zero.
    pub known_initial_bias: bool,
    /// A run stops as diverged once the position error exceeds this, m.
    pub divergence_threshold: f64,
    /// Closest accepted stereo depth for a new landmark, m.
    pub min_init_depth: f64,
    /// Farthest accepted stereo depth for a new landmark, m.
    pub max_init_depth: f64,
    /// Return the covariance of the newest state at every frame.
    pub covariance: bool,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            mode: Mode::TightlyCoupled,
            window: WindowConfig::default(),
            solver: SolverConfig { max_iterations: 5, ..Default::default() },
            robust: RobustKind::None,
            initial_prior: InitialPrior::default(),
            known_initial_bias: false,
            divergence_threshold: 20.0,
            min_init_depth: 0.5,
            max_init_depth: 200.0,
            covariance: true,
        }
    }
}

/// Estimate of the newest state after the solve at one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct StepEstimate {
    pub t: f64,
    pub frame: usize,
    pub state: ImuState,
    /// Over `[θ, b_ω, v, b_a, p]`.
    pub covariance: Option<Matrix15>,
    pub iterations: usize,
}

#[derive(Clone, Debug, Default)]
pub struct RunOutcome {
    pub steps: Vec<StepEstimate>,
    /// Set when the run stopped early, with the reason.
    pub diverged: Option<String>,
}

/// Noise densities used to weight the IMU factors. Zero densities fall
/// back to the defaults so that noiseless data still gives finite weights.
fn weighting_noise(n: &ImuNoise) -> ImuNoise {
    if n.sigma_g > 0.0 && n.sigma_a > 0.0 && n.sigma_wg > 0.0 && n.sigma_wa > 0.0 {
        *n
    } else {
        ImuNoise::default()
    }
}

fn initial_prior(graph: &FactorGraph, id: NodeId, p: &InitialPrior) -> MarginalPrior {
    // Pose block is [θ, p], speed/bias block is [b_ω, v, b_a].
    let sig = [
        p.rotation,
        p.rotation,
        p.rotation,
        p.position,
        p.position,
        p.position,
        p.gyro_bias,
        p.gyro_bias,
        p.gyro_bias,
        p.velocity,
        p.velocity,
        p.velocity,
        p.accel_bias,
        p.accel_bias,
        p.accel_bias,
    ];
    let lambda = DMatrix::from_diagonal(&DVector::from_iterator(15, sig.iter().map(|s| 1.0 / (s * s))));
    let keys = vec![BlockKey::new(id, Part::Pose), BlockKey::new(id, Part::SpeedBias)];
    let lin = keys.iter().map(|k| graph.nodes[&k.node].block_value(k.part)).collect();
    MarginalPrior::new(keys, lin, &lambda, &DVector::zeros(15)).expect("dimensions match")
}

/// Covariance of the `[Pose, SpeedBias]` blocks reordered to `[θ, b_ω, v, b_a, p]`.
fn state_covariance(c: &DMatrix<f64>) -> Matrix15 {
    // Position in `c` of each entry of the state ordering.
    const MAP: [usize; 15] = [0, 1, 2, 6, 7, 8, 9, 10, 11, 12, 13, 14, 3, 4, 5];
    Matrix15::from_fn(|r, k| c[(MAP[r], MAP[k])])
}

struct Tracker<'a> {
    cfg: &'a EstimatorConfig,
    camera: &'a CameraConfig,
    graph: FactorGraph,
    window: SlidingWindow,
    tracks: HashMap<u64, NodeId>,
    info: Matrix2<f64>,
}

impl Tracker<'_> {
    fn observe(&mut self, feature: NodeId, observer: NodeId, camera: usize, z: nalgebra::Vector2<f64>) -> Result<(), OptError> {
        let obs = VisualObs { feature, observer, camera, z, info: self.info, robust: self.cfg.robust };
        self.graph.add_factor(Factor::Visual(obs))?;
        Ok(())
    }

    fn add_observations(&mut self, sim: &Simulation, frame: usize, state: NodeId) -> Result<(), OptError> {
        let rig = self.graph.cameras.clone();
        for o in &sim.frames[frame].observations {
            if let Some(&f) = self.tracks.get(&o.id) {
                if self.graph.node(f).is_some() {
                    if let Some(z) = o.left {
                        self.observe(f, state, 0, z)?;
                    }
                    if let Some(z) = o.right {
                        self.observe(f, state, 1, z)?;
                    }
                    continue;
                }
                self.tracks.remove(&o.id);
            }
            let (Some(l), Some(r)) = (o.left, o.right) else { continue };
            let Some(d) = stereo_depth(&rig, &l, &r) else { continue };
            if !(self.cfg.min_init_depth..=self.cfg.max_init_depth).contains(&d) {
                continue;
            }
            let feat = InvDepthFeature { alpha: l.x, beta: l.y, rho: 1.0 / d, anchor: Anchor { node: state, camera: 0 } };
            let f = self.graph.add_node(Node::Feature(feat));
            self.tracks.insert(o.id, f);
            self.observe(f, state, 0, l)?;
            self.observe(f, state, 1, r)?;
        }
        Ok(())
    }

    /// Drops landmarks that ended up behind their anchor.
    fn prune(&mut self) {
        let bad: Vec<NodeId> = self
            .graph
            .nodes
            .iter()
            .filter_map(|(id, n)| matches!(n, Node::Feature(f) if f.rho <= 0.0).then_some(*id))
            .collect();
        for id in bad {
            self.graph.drop_feature(id);
        }
    }
}

/// Runs the estimator over a simulated sequence with one preintegration model.
pub fn run_estimator(
    sim: &Simulation,
    model: PreintModel,
    imu_noise: &ImuNoise,
    camera: &CameraConfig,
    cfg: &EstimatorConfig,
) -> RunOutcome {
    let mut out = RunOutcome::default();
    if let Err(e) = run_inner(sim, model, imu_noise, camera, cfg, &mut out) {
        out.diverged = Some(e.to_string());
    }
    out
}

fn run_inner(
    sim: &Simulation,
    model: PreintModel,
    imu_noise: &ImuNoise,
    camera: &CameraConfig,
    cfg: &EstimatorConfig,
    out: &mut RunOutcome,
) -> Result<(), OptError> {
    let Some(first) = sim.frames.first() else { return Ok(()) };
    let noise = weighting_noise(imu_noise);
    let sigma = if camera.pixel_sigma > 0.0 { camera.normalized_sigma() } else { 1.0 / camera.focal_length };
    let mut tr = Tracker {
        cfg,
        camera,
        graph: FactorGraph::new(camera.rig()),
        window: SlidingWindow::new(cfg.window),
        tracks: HashMap::new(),
        info: Matrix2::identity() / (sigma * sigma),
    };
    let relpose_info = {
        let cov = camera.relpose_covariance();
        let floor = CameraConfig::default().relpose_covariance();
        let cov = if cov.cholesky().is_some() { cov } else { floor };
        cov.cholesky().map(|c| c.inverse()).ok_or(crate::factors::FactorError::NotPositiveDefinite)?
    };
    let _ = tr.camera;

    let mut x0 = first.truth;
    if !cfg.known_initial_bias {
        x0.bg = nalgebra::Vector3::zeros();
        x0.ba = nalgebra::Vector3::zeros();
    }
    let mut prev = tr.graph.add_node(Node::Imu(x0));
    let prior = initial_prior(&tr.graph, prev, &cfg.initial_prior);
    tr.graph.add_factor(Factor::Prior(Box::new(prior)))?;
    if cfg.mode == Mode::TightlyCoupled {
        tr.add_observations(sim, 0, prev)?;
    }
    let req = tr.window.advance(&tr.graph, prev);
    debug_assert!(req.is_empty());
    let solver = SolverConfig { compute_information: cfg.covariance, ..cfg.solver.clone() };
    step(&mut tr, sim, 0, prev, &solver, out)?;

    for k in 1..sim.frames.len() {
        let xp = *tr.graph.imu_state(prev).expect("latest state is inertial");
        let lin = BiasLinearization::new(xp.bg, xp.ba, xp.q);
        let (t0, t1) = (sim.frames[k - 1].t, sim.frames[k].t);
        let f = preintegrate_interval(model, lin, noise, sim.samples(), t0, t1);
        let id = tr.graph.add_node(Node::Imu(f.predict(&xp)));
        tr.graph.add_factor(Factor::Imu { from: prev, to: id, meas: Box::new(f) })?;
        match cfg.mode {
            Mode::TightlyCoupled => tr.add_observations(sim, k, id)?,
            Mode::LooselyCoupled => {
                let meas = Box::new(sim.relative_poses[k - 1].clone());
                tr.graph.add_factor(Factor::RelativePose { from: prev, to: id, meas, info: relpose_info, robust: cfg.robust })?;
            }
        }
        let req = tr.window.advance(&tr.graph, id);
        step(&mut tr, sim, k, id, &solver, out)?;
        if out.diverged.is_some() {
            return Ok(());
        }
        tr.graph.marginalize(&req)?;
        prev = id;
    }
    Ok(())
}

/// Optimizes the window and records the newest state.
fn step(
    tr: &mut Tracker<'_>,
    sim: &Simulation,
    frame: usize,
    id: NodeId,
    solver: &SolverConfig,
    out: &mut RunOutcome,
) -> Result<(), OptError> {
    let rep = solve(&mut tr.graph, solver)?;
    tr.prune();
    let state = *tr.graph.imu_state(id).expect("newest state is inertial");
    let covariance = rep
        .covariance(&[BlockKey::new(id, Part::Pose), BlockKey::new(id, Part::SpeedBias)])
        .map(|c| state_covariance(&c));
    let truth = &sim.frames[frame].truth;
    let err = (state.p - truth.p).norm();
    out.steps.push(StepEstimate { t: sim.frames[frame].t, frame, state, covariance, iterations: rep.iterations });
    if !err.is_finite() || err > tr.cfg.divergence_threshold {
        out.diverged = Some(format!("position error {err:.3} m at t = {:.2} s", sim.frames[frame].t));
    }
    Ok(())
}

/// Normalized estimation error squared of a 15-DOF state.
pub fn nees(est: &ImuState, truth: &ImuState, cov: &Matrix15) -> Option<f64> {
    let d = truth.boxminus(est);
    let chol = cov.cholesky()?;
    Some(d.dot(&chol.solve(&d)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::{simulate, ImuConfig, TrajectoryConfig, TruthMode};

    fn noiseless_scenario(duration: f64) -> (TrajectoryConfig, ImuConfig, CameraConfig) {
        let traj = TrajectoryConfig { duration, truth: TruthMode::SampleConsistent, ..Default::default() };
        let imu = ImuConfig {
            noise: ImuNoise::zero(),
            initial_bg: nalgebra::Vector3::zeros(),
            initial_ba: nalgebra::Vector3::zeros(),
            ..Default::default()
        };
        let cam = CameraConfig { pixel_sigma: 0.0, relpose_sigma_position: 0.0, relpose_sigma_rotation: 0.0, ..Default::default() };
        (traj, imu, cam)
    }

    #[test]
    fn noiseless_tightly_coupled_run_tracks_truth() {
        let (traj, imu, cam) = noiseless_scenario(3.0);
        let sim = simulate(&traj, &imu, &cam, 1, 0);
        let cfg = EstimatorConfig { solver: SolverConfig { max_iterations: 10, ..Default::default() }, ..Default::default() };
        let out = run_estimator(&sim, PreintModel::Model1, &imu.noise, &cam, &cfg);
        assert!(out.diverged.is_none(), "{:?}", out.diverged);
        assert_eq!(out.steps.len(), sim.frames.len());
        for s in &out.steps {
            let e = (s.state.p - sim.frames[s.frame].truth.p).norm();
            assert!(e <= 1e-6, "t = {}: {e:e}", s.t);
        }
    }

    #[test]
    fn noiseless_loosely_coupled_run_tracks_truth() {
        let (traj, imu, cam) = noiseless_scenario(3.0);
        let sim = simulate(&traj, &imu, &cam, 1, 0);
        let cfg = EstimatorConfig { mode: Mode::LooselyCoupled, ..Default::default() };
        let out = run_estimator(&sim, PreintModel::Model1, &imu.noise, &cam, &cfg);
        assert!(out.diverged.is_none(), "{:?}", out.diverged);
        for s in &out.steps {
            assert!((s.state.p - sim.frames[s.frame].truth.p).norm() <= 1e-6);
        }
    }

    #[test]
    fn noisy_run_stays_bounded() {
        let traj = TrajectoryConfig { duration: 5.0, ..Default::default() };
        let imu = ImuConfig::default();
        let cam = CameraConfig::default();
        let sim = simulate(&traj, &imu, &cam, 2, 0);
        for model in PreintModel::ALL {
            let out = run_estimator(&sim, model, &imu.noise, &cam, &EstimatorConfig::default());
            assert!(out.diverged.is_none(), "{model:?}: {:?}", out.diverged);
            let last = out.steps.last().unwrap();
            assert!((last.state.p - sim.frames[last.frame].truth.p).norm() < 0.5);
            assert!(last.covariance.is_some());
        }
    }

    #[test]
    fn covariance_reordering() {
        let c = DMatrix::from_fn(15, 15, |r, k| (r * 100 + k) as f64);
        let s = state_covariance(&c);
        // θ stays first, position moves to the end.
        assert_eq!(s[(0, 0)], 0.0);
        assert_eq!(s[(12, 12)], 303.0);
        assert_eq!(s[(3, 3)], 606.0);
        assert_eq!(s[(6, 12)], 903.0);
    }
}
