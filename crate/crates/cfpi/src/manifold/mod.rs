//! Rotation and state manifolds: JPL quaternions, SO(3) maps and the
//! retractions used throughout the estimator.

pub mod quat;
pub mod so3;
pub mod state;

pub use quat::Quat;
pub use so3::{exp_so3, log_so3, right_jacobian, right_jacobian_inv, skew, vee};
pub use state::{idx, Anchor, ExtrinsicCalib, ImuState, InvDepthFeature, Pose, Vector15, Vector6};
