//! Inertial and pose sub-windows.

use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use super::graph::{Factor, FactorGraph, Node};
use super::marginalize::MarginalizationRequest;
use crate::factors::NodeId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WindowConfig {
    /// Full 15-DOF states kept.
    pub inertial: usize,
    /// Pose-only clones kept behind the inertial window.
    pub poses: usize,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self { inertial: 6, poses: 8 }
    }
}

/// Bookkeeping of which graph nodes form the two sub-windows.
#[derive(Clone, Debug, Default)]
pub struct SlidingWindow {
    pub config: WindowConfig,
    inertial: VecDeque<NodeId>,
    poses: VecDeque<NodeId>,
}

impl SlidingWindow {
    pub fn new(config: WindowConfig) -> Self {
        Self { config, ..Default::default() }
    }

    /// Full states, oldest first.
    pub fn inertial(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.inertial.iter().copied()
    }

    /// Pose clones, oldest first.
    pub fn poses(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.poses.iter().copied()
    }

    /// All states, oldest first.
    pub fn states(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.poses.iter().chain(self.inertial.iter()).copied()
    }

    pub fn latest(&self) -> Option<NodeId> {
        self.inertial.back().copied()
    }

    pub fn len(&self) -> usize {
        self.inertial.len() + self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records a new IMU state and returns the blocks to marginalize so that
    /// both sub-windows stay within capacity. The request has not been
    /// applied to `graph` yet.
    pub fn advance(&mut self, graph: &FactorGraph, state: NodeId) -> MarginalizationRequest {
        self.inertial.push_back(state);
        let mut req = MarginalizationRequest::default();
        while self.inertial.len() > self.config.inertial {
            let old = self.inertial.pop_front().expect("non-empty");
            req.demote.push(old);
            self.poses.push_back(old);
        }
        while self.poses.len() > self.config.poses {
            let old = self.poses.pop_front().expect("non-empty");
            req.demote.retain(|d| *d != old);
            req.remove.push(old);
        }
        let removed: BTreeSet<NodeId> = req.remove.iter().copied().collect();
        if !removed.is_empty() {
            req.remove.extend(doomed_features(graph, &removed));
        }
        req
    }
}

/// Features anchored at a removed pose or observed by removed poses only.
fn doomed_features(graph: &FactorGraph, removed: &BTreeSet<NodeId>) -> Vec<NodeId> {
    let mut observers: std::collections::BTreeMap<NodeId, bool> = std::collections::BTreeMap::new();
    for f in &graph.factors {
        if let Factor::Visual(o) = f {
            let survives = observers.entry(o.feature).or_insert(false);
            *survives |= !removed.contains(&o.observer);
        }
    }
    graph
        .nodes
        .iter()
        .filter_map(|(id, n)| match n {
            Node::Feature(f) if removed.contains(&f.anchor.node) => Some(*id),
            Node::Feature(_) if observers.get(id) == Some(&false) => Some(*id),
            _ => None,
        })
        .collect()
}
