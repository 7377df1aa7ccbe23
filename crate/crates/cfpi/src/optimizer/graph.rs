//! Factor graph storage.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, Matrix2, Matrix6, Vector2};
use serde::{Deserialize, Serialize};

use super::system::{keys_of, View};
use super::OptError;
use crate::factors::prior::Vector9;
use crate::factors::{BlockKey, BlockValue, MarginalPrior, NodeId, Part, RelativePoseMeas, RobustKind};
use crate::manifold::{ExtrinsicCalib, ImuState, InvDepthFeature, Pose, Vector15, Vector6};
use crate::preintegration::PreintegratedFactor;

/// Variable stored in the graph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Imu(ImuState),
    Pose(Pose),
    Feature(InvDepthFeature),
    Vector(DVector<f64>),
}

impl Node {
    pub fn dof(&self) -> usize {
        match self {
            Node::Imu(_) => 15,
            Node::Pose(_) => 6,
            Node::Feature(_) => 3,
            Node::Vector(v) => v.len(),
        }
    }

    pub fn parts(&self) -> &'static [Part] {
        match self {
            Node::Imu(_) => &[Part::Pose, Part::SpeedBias],
            Node::Pose(_) => &[Part::Pose],
            Node::Feature(_) | Node::Vector(_) => &[Part::Whole],
        }
    }

    pub fn part_dof(&self, part: Part) -> usize {
        match part {
            Part::Pose => 6,
            Part::SpeedBias => 9,
            Part::Whole => self.dof(),
        }
    }

    /// Pose of an IMU or pose node.
    pub fn pose(&self) -> Option<Pose> {
        match self {
            Node::Imu(x) => Some(x.pose()),
            Node::Pose(p) => Some(*p),
            _ => None,
        }
    }

    pub fn block_value(&self, part: Part) -> BlockValue {
        match (self, part) {
            (Node::Imu(x), Part::Pose) => BlockValue::Pose(x.pose()),
            (Node::Pose(p), Part::Pose) => BlockValue::Pose(*p),
            (Node::Imu(x), Part::SpeedBias) => {
                let mut v = Vector9::zeros();
                v.fixed_rows_mut::<3>(0).copy_from(&x.bg);
                v.fixed_rows_mut::<3>(3).copy_from(&x.v);
                v.fixed_rows_mut::<3>(6).copy_from(&x.ba);
                BlockValue::SpeedBias(v)
            }
            (Node::Feature(f), _) => BlockValue::Feature(f.params()),
            (Node::Vector(v), _) => BlockValue::Vector(v.clone()),
            (n, p) => panic!("node {n:?} has no part {p:?}"),
        }
    }

    /// Applies the retraction to one part.
    pub fn retract(&mut self, part: Part, d: &[f64]) {
        match (self, part) {
            (Node::Imu(x), Part::Pose) => {
                let mut dx = Vector15::zeros();
                dx.fixed_rows_mut::<3>(0).copy_from_slice(&d[0..3]);
                dx.fixed_rows_mut::<3>(12).copy_from_slice(&d[3..6]);
                *x = x.boxplus(&dx);
            }
            (Node::Imu(x), Part::SpeedBias) => {
                let mut dx = Vector15::zeros();
                dx.fixed_rows_mut::<9>(3).copy_from_slice(d);
                *x = x.boxplus(&dx);
            }
            (Node::Pose(p), Part::Pose) => *p = p.boxplus(&Vector6::from_column_slice(d)),
            (Node::Feature(f), _) => *f = f.boxplus(&nalgebra::Vector3::from_column_slice(d)),
            (Node::Vector(v), _) => *v += DVector::from_column_slice(d),
            (n, p) => panic!("node {n:?} has no part {p:?}"),
        }
    }

    pub(crate) fn kind(&self) -> &'static str {
        match self {
            Node::Imu(_) => "imu",
            Node::Pose(_) => "pose",
            Node::Feature(_) => "feature",
            Node::Vector(_) => "vector",
        }
    }
}

/// Reprojection of a feature into one camera of an observing pose.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VisualObs {
    pub feature: NodeId,
    pub observer: NodeId,
    pub camera: usize,
    /// Normalized image coordinates.
    pub z: Vector2<f64>,
    pub info: Matrix2<f64>,
    pub robust: RobustKind,
}

/// `e = Σ A_i x_i − b` over vector nodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearFactor {
    pub nodes: Vec<NodeId>,
    pub a: Vec<DMatrix<f64>>,
    pub b: DVector<f64>,
    pub info: DMatrix<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum Factor {
    Imu { from: NodeId, to: NodeId, meas: Box<PreintegratedFactor> },
    Visual(VisualObs),
    RelativePose { from: NodeId, to: NodeId, meas: Box<RelativePoseMeas>, info: Matrix6<f64>, robust: RobustKind },
    Prior(Box<MarginalPrior>),
    Linear(LinearFactor),
}

impl Factor {
    /// Blocks the factor depends on, given the feature anchors in `graph`.
    pub fn keys(&self, graph: &FactorGraph) -> Vec<BlockKey> {
        keys_of(self, graph.view())
    }

    /// Nodes referenced by the factor (including feature anchors).
    pub fn nodes(&self, graph: &FactorGraph) -> Vec<NodeId> {
        let mut n: Vec<NodeId> = self.keys(graph).iter().map(|k| k.node).collect();
        if let Factor::Visual(o) = self {
            n.push(o.observer);
        }
        n.sort_unstable();
        n.dedup();
        n
    }
}

/// Nodes, factors and the camera rig they refer to.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct FactorGraph {
    pub nodes: BTreeMap<NodeId, Node>,
    pub factors: Vec<Factor>,
    pub cameras: Vec<ExtrinsicCalib>,
    next_id: NodeId,
}

impl FactorGraph {
    pub fn new(cameras: Vec<ExtrinsicCalib>) -> Self {
        Self { cameras, ..Default::default() }
    }

    pub fn add_node(&mut self, node: Node) -> NodeId {
        let id = self.next_id;
        self.next_id += 1;
        self.nodes.insert(id, node);
        id
    }

    /// Adds a factor after checking that every referenced node exists and has
    /// the right type.
    pub fn add_factor(&mut self, factor: Factor) -> Result<usize, OptError> {
        self.check_factor(&factor)?;
        self.factors.push(factor);
        Ok(self.factors.len() - 1)
    }

    fn expect(&self, id: NodeId, ok: impl Fn(&Node) -> bool, what: &'static str) -> Result<&Node, OptError> {
        let n = self.nodes.get(&id).ok_or(OptError::UnknownNode(id))?;
        if ok(n) {
            Ok(n)
        } else {
            Err(OptError::WrongNodeType { node: id, expected: what, got: n.kind() })
        }
    }

    fn check_factor(&self, factor: &Factor) -> Result<(), OptError> {
        let is_imu = |n: &Node| matches!(n, Node::Imu(_));
        let has_pose = |n: &Node| n.pose().is_some();
        match factor {
            Factor::Imu { from, to, .. } => {
                self.expect(*from, is_imu, "imu")?;
                self.expect(*to, is_imu, "imu")?;
            }
            Factor::Visual(o) => {
                let f = self.expect(o.feature, |n| matches!(n, Node::Feature(_)), "feature")?;
                self.expect(o.observer, has_pose, "pose")?;
                if let Node::Feature(f) = f {
                    self.expect(f.anchor.node, has_pose, "pose")?;
                    if f.anchor.camera >= self.cameras.len() {
                        return Err(OptError::UnknownCamera(f.anchor.camera));
                    }
                }
                if o.camera >= self.cameras.len() {
                    return Err(OptError::UnknownCamera(o.camera));
                }
            }
            Factor::RelativePose { from, to, .. } => {
                self.expect(*from, has_pose, "pose")?;
                self.expect(*to, has_pose, "pose")?;
            }
            Factor::Prior(p) => {
                if p.keys.len() != p.lin.len() {
                    return Err(OptError::Factor(crate::factors::FactorError::DimensionMismatch {
                        expected: p.keys.len(),
                        got: p.lin.len(),
                    }));
                }
                for k in &p.keys {
                    let n = self.nodes.get(&k.node).ok_or(OptError::UnknownNode(k.node))?;
                    if !n.parts().contains(&k.part) {
                        return Err(OptError::WrongNodeType { node: k.node, expected: "matching part", got: n.kind() });
                    }
                }
            }
            Factor::Linear(l) => {
                if l.nodes.len() != l.a.len() {
                    return Err(OptError::Factor(crate::factors::FactorError::DimensionMismatch {
                        expected: l.nodes.len(),
                        got: l.a.len(),
                    }));
                }
                for (n, a) in l.nodes.iter().zip(&l.a) {
                    let node = self.expect(*n, |n| matches!(n, Node::Vector(_)), "vector")?;
                    if a.ncols() != node.dof() || a.nrows() != l.b.len() {
                        return Err(OptError::Factor(crate::factors::FactorError::DimensionMismatch {
                            expected: node.dof(),
                            got: a.ncols(),
                        }));
                    }
                }
            }
        }
        Ok(())
    }

    pub(crate) fn view(&self) -> View<'_> {
        View { nodes: &self.nodes, cameras: &self.cameras }
    }

    pub fn node(&self, id: NodeId) -> Option<&Node> {
        self.nodes.get(&id)
    }

    pub fn imu_state(&self, id: NodeId) -> Option<&ImuState> {
        match self.nodes.get(&id) {
            Some(Node::Imu(x)) => Some(x),
            _ => None,
        }
    }

    pub fn feature(&self, id: NodeId) -> Option<&InvDepthFeature> {
        match self.nodes.get(&id) {
            Some(Node::Feature(f)) => Some(f),
            _ => None,
        }
    }

    /// Removes a feature and its visual factors. Features that a prior or
    /// another non-visual factor depends on are kept; returns whether the
    /// feature was removed.
    pub fn drop_feature(&mut self, id: NodeId) -> bool {
        if !matches!(self.nodes.get(&id), Some(Node::Feature(_))) {
            return false;
        }
        let view = self.view();
        let pinned = self
            .factors
            .iter()
            .any(|f| !matches!(f, Factor::Visual(_)) && keys_of(f, view).iter().any(|k| k.node == id));
        if pinned {
            return false;
        }
        self.factors.retain(|f| !matches!(f, Factor::Visual(o) if o.feature == id));
        self.nodes.remove(&id);
        true
    }

    /// Total error-state dimension.
    pub fn dof(&self) -> usize {
        self.nodes.values().map(Node::dof).sum()
    }
}
