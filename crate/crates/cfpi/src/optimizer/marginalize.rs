//! Schur-complement marginalization into a linear prior.

use std::collections::{BTreeSet, HashSet};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::graph::{Factor, FactorGraph, Node};
use super::system::{keys_of, linearize, reduce, Layout};
use super::OptError;
use crate::factors::{BlockKey, MarginalPrior, NodeId, Part};

/// Diagonal loading applied to a singular `Λ_mm`.
pub const MARGINAL_REGULARIZATION: f64 = 1e-9;

/// Blocks to remove from the graph.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarginalizationRequest {
    /// Nodes removed entirely.
    pub remove: Vec<NodeId>,
    /// IMU nodes whose velocity and biases are removed; the pose stays.
    pub demote: Vec<NodeId>,
}

impl MarginalizationRequest {
    pub fn is_empty(&self) -> bool {
        self.remove.is_empty() && self.demote.is_empty()
    }
}

/// Schur complement `(Λ_rr − Λ_rm Λ_mm⁻¹ Λ_mr, g_r − Λ_rm Λ_mm⁻¹ g_m)` of the
/// trailing `m` rows and columns. Returns whether `Λ_mm` was regularized.
pub fn schur_complement(h: &DMatrix<f64>, g: &DVector<f64>, r: usize) -> (DMatrix<f64>, DVector<f64>, bool) {
    let n = h.nrows();
    let m = n - r;
    let h_rr = h.view((0, 0), (r, r));
    let h_rm = h.view((0, r), (r, m));
    let mut h_mm = h.view((r, r), (m, m)).into_owned();
    h_mm = (&h_mm + h_mm.transpose()) * 0.5;
    let (chol, regularized) = match h_mm.clone().cholesky() {
        Some(c) => (c, false),
        None => {
            let loaded = &h_mm + DMatrix::identity(m, m) * MARGINAL_REGULARIZATION;
            match loaded.clone().cholesky() {
                Some(c) => (c, true),
                None => {
                    // Indefinite beyond the loading: shift by the most negative eigenvalue.
                    let min = loaded.symmetric_eigenvalues().min();
                    let shift = MARGINAL_REGULARIZATION - min.min(0.0);
                    let c = (&h_mm + DMatrix::identity(m, m) * shift)
                        .cholesky()
                        .expect("shifted matrix is positive definite");
                    (c, true)
                }
            }
        }
    };
    let x = chol.solve(&h_rm.transpose());
    let y = chol.solve(&g.rows(r, m).into_owned());
    let lam = h_rr - h_rm * &x;
    let gm = g.rows(0, r) - h_rm * y;
    ((&lam + lam.transpose()) * 0.5, gm, regularized)
}

impl FactorGraph {
    /// Replaces the requested blocks and every factor touching them by a
    /// linear prior on the blocks those factors also touch.
    pub fn marginalize(&mut self, req: &MarginalizationRequest) -> Result<Option<MarginalPrior>, OptError> {
        if req.is_empty() {
            return Ok(None);
        }
        let mut marg: BTreeSet<BlockKey> = BTreeSet::new();
        for id in &req.remove {
            let n = self.nodes.get(id).ok_or(OptError::UnknownNode(*id))?;
            marg.extend(n.parts().iter().map(|p| BlockKey::new(*id, *p)));
        }
        for id in &req.demote {
            match self.nodes.get(id) {
                Some(Node::Imu(_)) => {
                    marg.insert(BlockKey::new(*id, Part::SpeedBias));
                }
                Some(n) => return Err(OptError::WrongNodeType { node: *id, expected: "imu", got: n.kind() }),
                None => return Err(OptError::UnknownNode(*id)),
            }
        }
        let removed: HashSet<NodeId> = req.remove.iter().copied().collect();
        for (id, n) in &self.nodes {
            if let Node::Feature(f) = n {
                if removed.contains(&f.anchor.node) && !removed.contains(id) {
                    return Err(OptError::AnchorRemoved { feature: *id, anchor: f.anchor.node });
                }
            }
        }

        let view = self.view();
        let mut incident = Vec::new();
        let mut retained: BTreeSet<BlockKey> = BTreeSet::new();
        let mut pinned: HashSet<NodeId> = HashSet::new();
        for (i, f) in self.factors.iter().enumerate() {
            let keys = keys_of(f, view);
            let observer_removed = matches!(f, Factor::Visual(o) if removed.contains(&o.observer));
            if observer_removed || keys.iter().any(|k| marg.contains(k)) {
                incident.push(i);
                if !matches!(f, Factor::Visual(_)) {
                    pinned.extend(keys.iter().map(|k| k.node));
                }
                retained.extend(keys.into_iter().filter(|k| !marg.contains(k)));
            }
        }
        let dof = |k: &BlockKey| self.nodes[&k.node].part_dof(k.part);
        let is_feature = |k: &BlockKey| matches!(self.nodes[&k.node], Node::Feature(_)) && !pinned.contains(&k.node);
        // Retained keys first, then dense marginalized blocks; marginalized
        // features go through the block Schur complement.
        let dense_marg: Vec<BlockKey> = marg.iter().filter(|k| !is_feature(k)).copied().collect();
        let elim: Vec<NodeId> = marg.iter().filter(|k| is_feature(k)).map(|k| k.node).collect();
        let r: usize = retained.iter().map(dof).sum();
        let layout = Layout::new(
            retained.iter().chain(dense_marg.iter()).map(|k| (*k, dof(k))),
            elim,
        );
        let sys = linearize(incident.iter().map(|&i| &self.factors[i]), view, &layout)?;
        let red = reduce(&sys, 0.0, MARGINAL_REGULARIZATION);
        let (lam, g, mut regularized) = schur_complement(&red.h, &red.g, r);
        regularized |= !red.singular.is_empty();

        let lin = retained.iter().map(|k| self.nodes[&k.node].block_value(k.part)).collect();
        let mut prior = MarginalPrior::new(retained.iter().copied().collect(), lin, &lam, &g)?;
        prior.regularized = regularized;

        let incident: HashSet<usize> = incident.into_iter().collect();
        let mut i = 0;
        self.factors.retain(|_| {
            i += 1;
            !incident.contains(&(i - 1))
        });
        for id in &req.remove {
            self.nodes.remove(id);
        }
        for id in &req.demote {
            if let Some(Node::Imu(x)) = self.nodes.get(id) {
                let p = x.pose();
                self.nodes.insert(*id, Node::Pose(p));
            }
        }
        if !prior.keys.is_empty() && prior.a_m.nrows() > 0 {
            self.factors.push(Factor::Prior(Box::new(prior.clone())));
        }
        Ok(Some(prior))
    }
}
