//! Trajectory error metrics.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::manifold::Pose;

/// Default odometric segment lengths, m.
pub const SEGMENT_LENGTHS: [f64; 5] = [7.0, 14.0, 21.0, 28.0, 35.0];

/// Per-step errors and their aggregates for one run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub pos_err_m: Vec<f64>,
    pub ori_err_deg: Vec<f64>,
    pub pos_rmse_m: f64,
    pub ori_rmse_deg: f64,
    /// `(segment length, mean end-point error)`; `None` when the run is
    /// shorter than the segment.
    pub odo_err_m: Vec<(f64, Option<f64>)>,
    /// NEES of the current state at each step where a covariance exists.
    pub nees: Vec<Option<f64>>,
}

#[derive(Clone, Copy, Debug, thiserror::Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("estimate and truth have no overlapping steps")]
    EmptyOverlap,
    #[error("estimate has {estimate} steps but truth has {truth}")]
    LengthMismatch { estimate: usize, truth: usize },
}

pub fn rmse(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt()
}

/// Orientation error angle in degrees.
pub fn orientation_error_deg(est: &Pose, truth: &Pose) -> f64 {
    est.q.boxminus(&truth.q).norm().to_degrees()
}

/// Mean end-point error over all segments of path length `length`, with
/// each segment's start aligned to the truth.
pub fn odometric_error(est: &[Pose], truth: &[Pose], length: f64) -> Option<f64> {
    let mut dist = vec![0.0; truth.len()];
    for k in 1..truth.len() {
        dist[k] = dist[k - 1] + (truth[k].p - truth[k - 1].p).norm();
    }
    let mut total = 0.0;
    let mut count = 0usize;
    let mut j = 0;
    for i in 0..truth.len() {
        j = j.max(i);
        while j < truth.len() && dist[j] - dist[i] < length {
            j += 1;
        }
        if j == truth.len() {
            break;
        }
        // Body-to-global rotations.
        let r_true = truth[i].q.to_rotation().transpose();
        let r_est = est[i].q.to_rotation().transpose();
        let d: Vector3<f64> = r_true * r_est.transpose() * (est[j].p - est[i].p);
        total += (truth[i].p + d - truth[j].p).norm();
        count += 1;
    }
    (count > 0).then(|| total / count as f64)
}

/// Errors of an estimated trajectory against the truth at the same steps.
pub fn compute_metrics(
    est: &[Pose],
    truth: &[Pose],
    nees: Vec<Option<f64>>,
    segments: &[f64],
) -> Result<RunMetrics, MetricsError> {
    if est.len() != truth.len() {
        return Err(MetricsError::LengthMismatch { estimate: est.len(), truth: truth.len() });
    }
    if est.is_empty() {
        return Err(MetricsError::EmptyOverlap);
    }
    let pos_err_m: Vec<f64> = est.iter().zip(truth).map(|(e, t)| (e.p - t.p).norm()).collect();
    let ori_err_deg: Vec<f64> = est.iter().zip(truth).map(|(e, t)| orientation_error_deg(e, t)).collect();
    Ok(RunMetrics {
        pos_rmse_m: rmse(&pos_err_m),
        ori_rmse_deg: rmse(&ori_err_deg),
        pos_err_m,
        ori_err_deg,
        odo_err_m: segments.iter().map(|l| (*l, odometric_error(est, truth, *l))).collect(),
        nees,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::Quat;

    fn line(n: usize) -> Vec<Pose> {
        (0..n)
            .map(|k| Pose { q: Quat::exp(&Vector3::new(0.0, 0.0, 0.01 * k as f64)), p: Vector3::new(k as f64, 0.0, 0.0) })
            .collect()
    }

    #[test]
    fn perfect_estimate_has_zero_error() {
        let t = line(50);
        let m = compute_metrics(&t, &t, vec![], &SEGMENT_LENGTHS).unwrap();
        assert_eq!(m.pos_rmse_m, 0.0);
        assert_eq!(m.ori_rmse_deg, 0.0);
        for (_, e) in &m.odo_err_m {
            assert!(e.unwrap() < 1e-12);
        }
    }

    #[test]
    fn constant_offset() {
        let t = line(20);
        let e: Vec<Pose> = t.iter().map(|p| Pose { q: p.q, p: p.p + Vector3::new(1.0, 0.0, 0.0) }).collect();
        let m = compute_metrics(&e, &t, vec![], &SEGMENT_LENGTHS).unwrap();
        assert!((m.pos_rmse_m - 1.0).abs() < 1e-15);
        assert_eq!(m.ori_rmse_deg, 0.0);
    }

    #[test]
    fn heading_bias_error_grows_with_segment_length() {
        let t = line(100);
        // Estimated path rotated by 2° about z.
        let r = Quat::exp(&Vector3::new(0.0, 0.0, 2f64.to_radians())).to_rotation();
        let e: Vec<Pose> = t.iter().map(|p| Pose { q: p.q, p: r * p.p }).collect();
        let errs: Vec<f64> = SEGMENT_LENGTHS.iter().map(|l| odometric_error(&e, &t, *l).unwrap()).collect();
        assert!(errs.windows(2).all(|w| w[1] > w[0]), "{errs:?}");
    }

    #[test]
    fn short_run_has_no_long_segments() {
        let t = line(10);
        assert!(odometric_error(&t, &t, 35.0).is_none());
        assert!(matches!(compute_metrics(&[], &[], vec![], &SEGMENT_LENGTHS), Err(MetricsError::EmptyOverlap)));
    }
}
