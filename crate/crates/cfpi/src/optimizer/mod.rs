//! Sliding-window nonlinear least squares on the state manifold.
//!
//! A [`FactorGraph`] holds IMU states, pose clones, inverse-depth features and
//! plain vector nodes together with the factors that connect them. [`solve`]
//! runs Levenberg-Marquardt with the features eliminated through per-feature
//! Schur complements, and [`FactorGraph::marginalize`] folds removed blocks
//! into a [`MarginalPrior`](crate::factors::MarginalPrior).

pub mod graph;
pub mod marginalize;
pub mod solve;
pub(crate) mod system;
pub mod window;

#[cfg(test)]
mod tests;

pub use graph::{Factor, FactorGraph, LinearFactor, Node, VisualObs};
pub use marginalize::{schur_complement, MarginalizationRequest};
pub use solve::{solve, SolveReport, SolverConfig, Termination};
pub use window::{SlidingWindow, WindowConfig};

use crate::factors::{FactorError, NodeId};

#[derive(Debug, thiserror::Error)]
pub enum OptError {
    #[error("node {0} is not in the graph")]
    UnknownNode(NodeId),
    #[error("node {node} is a {got} node, expected {expected}")]
    WrongNodeType { node: NodeId, expected: &'static str, got: &'static str },
    #[error("camera {0} is not in the rig")]
    UnknownCamera(usize),
    #[error(transparent)]
    Factor(#[from] FactorError),
    #[error("unconstrained directions touch nodes {nodes:?}")]
    RankDeficient { nodes: Vec<NodeId> },
    #[error("cost is not finite at the initial estimate")]
    NotFinite,
    #[error("invalid solver configuration")]
    InvalidConfig,
    #[error("feature {feature} is anchored at node {anchor}, which is being removed")]
    AnchorRemoved { feature: NodeId, anchor: NodeId },
}
