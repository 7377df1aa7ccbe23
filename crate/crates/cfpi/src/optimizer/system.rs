//! Normal-equation assembly and Schur elimination of inverse-depth features.

use std::collections::{BTreeMap, HashMap};

use nalgebra::{DMatrix, DVector, Matrix3, SMatrix, SVector, Vector3};

use super::graph::{Factor, LinearFactor, Node, VisualObs};
use super::OptError;
use crate::factors::{
    imu_factor, inverse_depth_factor, relative_pose_factor, BlockKey, BlockValue, MarginalPrior, NodeId, Part,
    VisualCase, VisualResidual,
};
use crate::manifold::{ExtrinsicCalib, Pose};

type Matrix6x3 = SMatrix<f64, 6, 3>;

/// Read-only view of node values used during evaluation.
#[derive(Clone, Copy)]
pub(crate) struct View<'a> {
    pub nodes: &'a BTreeMap<NodeId, Node>,
    pub cameras: &'a [ExtrinsicCalib],
}

impl<'a> View<'a> {
    fn node(&self, id: NodeId) -> Result<&'a Node, OptError> {
        self.nodes.get(&id).ok_or(OptError::UnknownNode(id))
    }

    fn pose(&self, id: NodeId) -> Result<Pose, OptError> {
        self.node(id)?.pose().ok_or(OptError::WrongNodeType { node: id, expected: "pose", got: "other" })
    }
}

/// Column layout of the dense part of the system.
#[derive(Clone, Debug, Default)]
pub(crate) struct Layout {
    pub blocks: Vec<(BlockKey, usize, usize)>,
    pub index: HashMap<BlockKey, usize>,
    /// Features eliminated by the block Schur complement, with their slot.
    pub eliminated: HashMap<NodeId, usize>,
    pub features: Vec<NodeId>,
    pub dim: usize,
}

impl Layout {
    pub fn new(dense: impl IntoIterator<Item = (BlockKey, usize)>, eliminated: impl IntoIterator<Item = NodeId>) -> Self {
        let mut l = Layout::default();
        for (k, d) in dense {
            l.index.insert(k, l.dim);
            l.blocks.push((k, l.dim, d));
            l.dim += d;
        }
        for f in eliminated {
            l.eliminated.insert(f, l.features.len());
            l.features.push(f);
        }
        l
    }

    /// Dense blocks for all non-feature parts plus the features that some
    /// non-visual factor touches; every other feature is eliminated.
    pub fn for_solve(nodes: &BTreeMap<NodeId, Node>, factors: &[Factor], view: View<'_>) -> Self {
        let mut pinned = std::collections::HashSet::new();
        for f in factors {
            if !matches!(f, Factor::Visual(_)) {
                for k in keys_of(f, view) {
                    if matches!(nodes.get(&k.node), Some(Node::Feature(_))) {
                        pinned.insert(k.node);
                    }
                }
            }
        }
        let mut dense = Vec::new();
        let mut elim = Vec::new();
        for (id, n) in nodes {
            if matches!(n, Node::Feature(_)) && !pinned.contains(id) {
                elim.push(*id);
                continue;
            }
            for p in n.parts() {
                dense.push((BlockKey::new(*id, *p), n.part_dof(*p)));
            }
        }
        Layout::new(dense, elim)
    }

    fn offset(&self, key: BlockKey) -> Result<usize, OptError> {
        self.index.get(&key).copied().ok_or(OptError::UnknownNode(key.node))
    }
}

pub(crate) fn keys_of(f: &Factor, view: View<'_>) -> Vec<BlockKey> {
    match f {
        Factor::Visual(o) => {
            let mut k = vec![BlockKey::new(o.feature, Part::Whole)];
            if let Some(Node::Feature(feat)) = view.nodes.get(&o.feature) {
                if feat.anchor.node != o.observer {
                    k.push(BlockKey::new(feat.anchor.node, Part::Pose));
                    k.push(BlockKey::new(o.observer, Part::Pose));
                }
            }
            k
        }
        Factor::Imu { from, to, .. } => vec![
            BlockKey::new(*from, Part::Pose),
            BlockKey::new(*from, Part::SpeedBias),
            BlockKey::new(*to, Part::Pose),
            BlockKey::new(*to, Part::SpeedBias),
        ],
        Factor::RelativePose { from, to, .. } => {
            vec![BlockKey::new(*from, Part::Pose), BlockKey::new(*to, Part::Pose)]
        }
        Factor::Prior(p) => p.keys.clone(),
        Factor::Linear(l) => l.nodes.iter().map(|n| BlockKey::new(*n, Part::Whole)).collect(),
    }
}

/// Information and gradient of one eliminated feature.
#[derive(Clone, Debug)]
pub(crate) struct FeatureBlock {
    pub hff: Matrix3<f64>,
    pub gf: Vector3<f64>,
    /// `(pose offset, H_pf)` coupling blocks.
    pub w: Vec<(usize, Matrix6x3)>,
}

impl FeatureBlock {
    fn new() -> Self {
        Self { hff: Matrix3::zeros(), gf: Vector3::zeros(), w: Vec::new() }
    }

    fn add_w(&mut self, off: usize, m: Matrix6x3) {
        match self.w.iter_mut().find(|(o, _)| *o == off) {
            Some((_, w)) => *w += m,
            None => self.w.push((off, m)),
        }
    }
}

/// `H δ = −g` before feature elimination, with the total cost
/// `½ Σ ρ(eᵀΛe)`.
#[derive(Clone, Debug)]
pub(crate) struct System {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub feats: Vec<FeatureBlock>,
    pub cost: f64,
    pub invalid: usize,
}

pub(crate) fn evaluate_visual(o: &VisualObs, view: View<'_>) -> Result<Option<VisualResidual>, OptError> {
    let feat = match view.node(o.feature)? {
        Node::Feature(f) => f,
        _ => return Err(OptError::WrongNodeType { node: o.feature, expected: "feature", got: "other" }),
    };
    let case = VisualCase::classify(feat.anchor.node, feat.anchor.camera, o.observer, o.camera);
    let xa = view.pose(feat.anchor.node)?;
    let xk = if feat.anchor.node == o.observer { xa } else { view.pose(o.observer)? };
    let ci = view.cameras.get(feat.anchor.camera).ok_or(OptError::UnknownCamera(feat.anchor.camera))?;
    let cj = view.cameras.get(o.camera).ok_or(OptError::UnknownCamera(o.camera))?;
    Ok(inverse_depth_factor(case, &xa, &xk, feat, ci, cj, &o.z).filter(|_| feat.rho >= 0.0))
}

fn imu_pair<'a>(view: View<'a>, from: NodeId, to: NodeId) -> Result<(&'a crate::manifold::ImuState, &'a crate::manifold::ImuState), OptError> {
    match (view.node(from)?, view.node(to)?) {
        (Node::Imu(a), Node::Imu(b)) => Ok((a, b)),
        _ => Err(OptError::WrongNodeType { node: from, expected: "imu", got: "other" }),
    }
}

pub(crate) fn prior_values(p: &MarginalPrior, view: View<'_>) -> Result<Vec<BlockValue>, OptError> {
    p.keys.iter().map(|k| Ok(view.node(k.node)?.block_value(k.part))).collect()
}

fn linear_residual(l: &LinearFactor, view: View<'_>) -> Result<DVector<f64>, OptError> {
    let mut e = -l.b.clone();
    for (n, a) in l.nodes.iter().zip(&l.a) {
        match view.node(*n)? {
            Node::Vector(x) => e += a * x,
            _ => return Err(OptError::WrongNodeType { node: *n, expected: "vector", got: "other" }),
        }
    }
    Ok(e)
}

/// `½ ρ(eᵀΛe)` of one factor; invalid projections contribute nothing.
pub(crate) fn factor_cost(f: &Factor, view: View<'_>) -> Result<f64, OptError> {
    Ok(0.5
        * match f {
            Factor::Imu { from, to, meas } => {
                let (a, b) = imu_pair(view, *from, *to)?;
                let e = imu_factor(a, b, meas).e;
                e.dot(&(meas.info * e))
            }
            Factor::Visual(o) => match evaluate_visual(o, view)? {
                Some(r) => o.robust.eval(r.e.dot(&(o.info * r.e))).0,
                None => 0.0,
            },
            Factor::RelativePose { from, to, meas, info, robust } => {
                let e = relative_pose_factor(&view.pose(*from)?, &view.pose(*to)?, meas).e;
                robust.eval(e.dot(&(info * e))).0
            }
            Factor::Prior(p) => {
                let d = p.delta(&prior_values(p, view)?)?.delta;
                d.dot(&(&p.lambda * &d)) + 2.0 * p.gradient.dot(&d) + p.b_m.norm_squared()
            }
            Factor::Linear(l) => {
                let e = linear_residual(l, view)?;
                e.dot(&(&l.info * &e))
            }
        })
}

pub(crate) fn total_cost<'f>(factors: impl IntoIterator<Item = &'f Factor>, view: View<'_>) -> Result<f64, OptError> {
    let mut c = 0.0;
    for f in factors {
        c += factor_cost(f, view)?;
    }
    Ok(c)
}

/// Adds `w JᵢᵀΛJⱼ` and `w JᵢᵀΛe` for a factor with dense Jacobian columns
/// mapped to global indices.
fn scatter(sys: &mut System, cols: &[usize], jt_info: &DMatrix<f64>, j: &DMatrix<f64>, e: &DVector<f64>) {
    let hl = jt_info * j;
    let gl = jt_info * e;
    for (a, &ca) in cols.iter().enumerate() {
        sys.g[ca] += gl[a];
        for (b, &cb) in cols.iter().enumerate() {
            sys.h[(ca, cb)] += hl[(a, b)];
        }
    }
}

fn scatter_fixed<const R: usize, const C: usize>(
    sys: &mut System,
    cols: &[usize; C],
    j: &SMatrix<f64, R, C>,
    info: &SMatrix<f64, R, R>,
    e: &SVector<f64, R>,
    w: f64,
) {
    let jt_info = j.transpose() * info * w;
    let hl = jt_info * j;
    let gl = jt_info * e;
    for a in 0..C {
        sys.g[cols[a]] += gl[a];
        for b in 0..C {
            sys.h[(cols[a], cols[b])] += hl[(a, b)];
        }
    }
}

/// Global column of each of the 15 IMU error-state coordinates of a node.
fn imu_columns(layout: &Layout, node: NodeId) -> Result<[usize; 15], OptError> {
    let p = layout.offset(BlockKey::new(node, Part::Pose))?;
    let s = layout.offset(BlockKey::new(node, Part::SpeedBias))?;
    let mut c = [0; 15];
    for (i, ci) in c.iter_mut().enumerate() {
        *ci = match i {
            0..=2 => p + i,
            3..=11 => s + i - 3,
            _ => p + i - 9,
        };
    }
    Ok(c)
}

fn visual_into(
    sys: &mut System,
    layout: &Layout,
    o: &VisualObs,
    r: &VisualResidual,
    anchor: NodeId,
) -> Result<(), OptError> {
    let v = r.e.dot(&(o.info * r.e));
    let (cost, w) = o.robust.eval(v);
    sys.cost += 0.5 * cost;
    let li = o.info * w;
    let temporal = anchor != o.observer;
    let pose_cols = |node| -> Result<usize, OptError> { layout.offset(BlockKey::new(node, Part::Pose)) };
    match layout.eliminated.get(&o.feature) {
        Some(&slot) => {
            let jf_t = r.j_feature.transpose() * li;
            let fb = &mut sys.feats[slot];
            fb.hff += jf_t * r.j_feature;
            fb.gf += jf_t * r.e;
            if temporal {
                let (oa, ok) = (pose_cols(anchor)?, pose_cols(o.observer)?);
                let mut j12 = SMatrix::<f64, 2, 12>::zeros();
                j12.fixed_view_mut::<2, 6>(0, 0).copy_from(&r.j_anchor);
                j12.fixed_view_mut::<2, 6>(0, 6).copy_from(&r.j_observer);
                let cols: [usize; 12] = std::array::from_fn(|i| if i < 6 { oa + i } else { ok + i - 6 });
                scatter_fixed(sys, &cols, &j12, &o.info, &r.e, w);
                let fb = &mut sys.feats[slot];
                fb.add_w(oa, r.j_anchor.transpose() * li * r.j_feature);
                fb.add_w(ok, r.j_observer.transpose() * li * r.j_feature);
            }
        }
        None => {
            let of = layout.offset(BlockKey::new(o.feature, Part::Whole))?;
            if temporal {
                let (oa, ok) = (pose_cols(anchor)?, pose_cols(o.observer)?);
                let mut j15 = SMatrix::<f64, 2, 15>::zeros();
                j15.fixed_view_mut::<2, 3>(0, 0).copy_from(&r.j_feature);
                j15.fixed_view_mut::<2, 6>(0, 3).copy_from(&r.j_anchor);
                j15.fixed_view_mut::<2, 6>(0, 9).copy_from(&r.j_observer);
                let cols: [usize; 15] =
                    std::array::from_fn(|i| if i < 3 { of + i } else if i < 9 { oa + i - 3 } else { ok + i - 9 });
                scatter_fixed(sys, &cols, &j15, &o.info, &r.e, w);
            } else {
                let cols: [usize; 3] = std::array::from_fn(|i| of + i);
                scatter_fixed(sys, &cols, &r.j_feature, &o.info, &r.e, w);
            }
        }
    }
    Ok(())
}

/// Linearizes the given factors at the values in `view`.
pub(crate) fn linearize<'f>(
    factors: impl IntoIterator<Item = &'f Factor>,
    view: View<'_>,
    layout: &Layout,
) -> Result<System, OptError> {
    let n = layout.dim;
    let mut sys = System {
        h: DMatrix::zeros(n, n),
        g: DVector::zeros(n),
        feats: vec![FeatureBlock::new(); layout.features.len()],
        cost: 0.0,
        invalid: 0,
    };
    for f in factors {
        match f {
            Factor::Imu { from, to, meas } => {
                let (a, b) = imu_pair(view, *from, *to)?;
                let r = imu_factor(a, b, meas);
                sys.cost += 0.5 * r.e.dot(&(meas.info * r.e));
                let ca = imu_columns(layout, *from)?;
                let cb = imu_columns(layout, *to)?;
                let mut j = SMatrix::<f64, 15, 30>::zeros();
                j.fixed_view_mut::<15, 15>(0, 0).copy_from(&r.jk);
                j.fixed_view_mut::<15, 15>(0, 15).copy_from(&r.jk1);
                let cols: [usize; 30] = std::array::from_fn(|i| if i < 15 { ca[i] } else { cb[i - 15] });
                scatter_fixed(&mut sys, &cols, &j, &meas.info, &r.e, 1.0);
            }
            Factor::Visual(o) => {
                let Some(r) = evaluate_visual(o, view)? else {
                    sys.invalid += 1;
                    continue;
                };
                let anchor = match view.node(o.feature)? {
                    Node::Feature(f) => f.anchor.node,
                    _ => unreachable!(),
                };
                visual_into(&mut sys, layout, o, &r, anchor)?;
            }
            Factor::RelativePose { from, to, meas, info, robust } => {
                let r = relative_pose_factor(&view.pose(*from)?, &view.pose(*to)?, meas);
                let (cost, w) = robust.eval(r.e.dot(&(info * r.e)));
                sys.cost += 0.5 * cost;
                let (ca, cb) = (
                    layout.offset(BlockKey::new(*from, Part::Pose))?,
                    layout.offset(BlockKey::new(*to, Part::Pose))?,
                );
                let mut j = SMatrix::<f64, 6, 12>::zeros();
                j.fixed_view_mut::<6, 6>(0, 0).copy_from(&r.jk);
                j.fixed_view_mut::<6, 6>(0, 6).copy_from(&r.jj);
                let cols: [usize; 12] = std::array::from_fn(|i| if i < 6 { ca + i } else { cb + i - 6 });
                scatter_fixed(&mut sys, &cols, &j, info, &r.e, w);
            }
            Factor::Prior(p) => prior_into(&mut sys, layout, p, view)?,
            Factor::Linear(l) => {
                let e = linear_residual(l, view)?;
                sys.cost += 0.5 * e.dot(&(&l.info * &e));
                let mut cols = Vec::new();
                let dims: usize = l.a.iter().map(|a| a.ncols()).sum();
                let mut j = DMatrix::zeros(e.len(), dims);
                let mut c = 0;
                for (node, a) in l.nodes.iter().zip(&l.a) {
                    let off = layout.offset(BlockKey::new(*node, Part::Whole))?;
                    cols.extend(off..off + a.ncols());
                    j.columns_mut(c, a.ncols()).copy_from(a);
                    c += a.ncols();
                }
                let jt_info = j.transpose() * &l.info;
                scatter(&mut sys, &cols, &jt_info, &j, &e);
            }
        }
    }
    Ok(sys)
}

/// Adds `DᵀΛ_marg D` and `Dᵀ(Λ_marg d + g_marg)` where `D` is the
/// block-diagonal Jacobian of `x ⊟ x̆`.
fn prior_into(sys: &mut System, layout: &Layout, p: &MarginalPrior, view: View<'_>) -> Result<(), OptError> {
    let d = p.delta(&prior_values(p, view)?)?;
    sys.cost += 0.5 * (d.delta.dot(&(&p.lambda * &d.delta)) + 2.0 * p.gradient.dot(&d.delta) + p.b_m.norm_squared());
    let mut m = p.lambda.clone();
    let mut gl = &p.lambda * &d.delta + &p.gradient;
    for (off, r) in &d.rotations {
        let c = m.columns(*off, 3) * r;
        m.columns_mut(*off, 3).copy_from(&c);
    }
    for (off, r) in &d.rotations {
        let rt = r.transpose();
        let rows = rt * m.rows(*off, 3);
        m.rows_mut(*off, 3).copy_from(&rows);
        let gr = rt * gl.rows(*off, 3);
        gl.rows_mut(*off, 3).copy_from(&gr);
    }
    let mut cols = Vec::with_capacity(p.dim());
    for (k, l) in p.keys.iter().zip(&p.lin) {
        let off = layout.offset(*k)?;
        cols.extend(off..off + l.dof());
    }
    for (a, &ca) in cols.iter().enumerate() {
        sys.g[ca] += gl[a];
        for (b, &cb) in cols.iter().enumerate() {
            sys.h[(ca, cb)] += m[(a, b)];
        }
    }
    Ok(())
}

/// Result of eliminating the features from a (possibly damped) system.
pub(crate) struct Reduced {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    /// Inverse of each (damped) feature block.
    pub s: Vec<Matrix3<f64>>,
    /// Features whose block was singular and had to be loaded.
    pub singular: Vec<usize>,
}

/// Schur complement of the feature blocks with LM damping `λ diag(H)`.
pub(crate) fn reduce(sys: &System, lambda: f64, load: f64) -> Reduced {
    let mut h = sys.h.clone();
    let mut g = sys.g.clone();
    if lambda > 0.0 {
        for i in 0..h.nrows() {
            h[(i, i)] += lambda * sys.h[(i, i)].max(DAMPING_FLOOR);
        }
    }
    let mut s = Vec::with_capacity(sys.feats.len());
    let mut singular = Vec::new();
    for (slot, fb) in sys.feats.iter().enumerate() {
        let mut hff = fb.hff;
        if lambda > 0.0 {
            for i in 0..3 {
                hff[(i, i)] += lambda * fb.hff[(i, i)].max(DAMPING_FLOOR);
            }
        }
        let inv = match hff.cholesky() {
            Some(c) => c.inverse(),
            None => {
                singular.push(slot);
                let l = load * (1.0 + hff.trace().abs());
                (hff + Matrix3::identity() * l).try_inverse().unwrap_or_else(Matrix3::zeros)
            }
        };
        s.push(inv);
        let ws: Vec<(usize, Matrix6x3)> = fb.w.iter().map(|(o, w)| (*o, w * inv)).collect();
        for (oa, wsa) in &ws {
            let gs = wsa * fb.gf;
            for r in 0..6 {
                g[oa + r] -= gs[r];
            }
            for (ob, wb) in &fb.w {
                let blk = wsa * wb.transpose();
                let mut view = h.fixed_view_mut::<6, 6>(*oa, *ob);
                view -= blk;
            }
        }
    }
    Reduced { h, g, s, singular }
}

/// Smallest diagonal entry used when scaling the LM damping.
pub(crate) const DAMPING_FLOOR: f64 = 1e-9;

/// Feature increments from the reduced solution.
pub(crate) fn back_substitute(sys: &System, red: &Reduced, dx: &DVector<f64>) -> Vec<Vector3<f64>> {
    sys.feats
        .iter()
        .zip(&red.s)
        .map(|(fb, s)| {
            let mut r = -fb.gf;
            for (o, w) in &fb.w {
                r -= w.transpose() * dx.fixed_rows::<6>(*o);
            }
            s * r
        })
        .collect()
}
