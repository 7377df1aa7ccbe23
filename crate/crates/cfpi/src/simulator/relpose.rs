//! Synthetic relative-pose measurements between consecutive keyframes.

use nalgebra::{Matrix6, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::factors::RelativePoseMeas;
use crate::manifold::{Pose, Vector6};

/// Draws `δ ~ N(0, cov)` over `[θ, p]`.
pub fn gaussian6(cov: &Matrix6<f64>, rng: &mut impl Rng) -> Vector6 {
    let n = Vector6::from_fn(|_, _| rng.sample(StandardNormal));
    match cov.cholesky() {
        Some(c) => c.l() * n,
        None => Vector6::zeros(),
    }
}

/// One measurement per consecutive pair of poses, each perturbed by a draw
/// from `cov`. A singular covariance gives exact measurements.
pub fn synthesize_relative_poses(poses: &[Pose], cov: &Matrix6<f64>, rng: &mut impl Rng) -> Vec<RelativePoseMeas> {
    poses
        .windows(2)
        .map(|w| {
            let mut m = RelativePoseMeas::between(&w[0], &w[1], *cov);
            let d = gaussian6(cov, rng);
            m.q_jk = m.q_jk.boxplus(&Vector3::new(d[0], d[1], d[2]));
            m.p_kj += Vector3::new(d[3], d[4], d[5]);
            m
        })
        .collect()
}
