//! Closed-form IMU preintegration for visual-inertial navigation.
//!
//! The crate provides three interchangeable preintegration models, the
//! factors that consume them, a Levenberg-Marquardt sliding-window solver with
//! Schur-complement marginalization, a synthetic stereo/IMU simulator and the
//! Monte-Carlo harness that compares the models.

pub mod estimator;
pub mod factors;
pub mod manifold;
pub mod montecarlo;
pub mod optimizer;
pub mod oracle;
pub mod preintegration;
pub mod scenario;
pub mod simulator;
