//! Linear prior left behind by marginalization.

use nalgebra::{DMatrix, DVector, Matrix3, SVector, Vector3};
use serde::{Deserialize, Serialize};

use super::{left_diff_jacobian, BlockKey, FactorError, ResidualBlock, RobustKind};
use crate::manifold::Pose;

pub type Vector9 = SVector<f64, 9>;

/// Value of one optimization block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum BlockValue {
    Pose(Pose),
    /// `[b_ω, v, b_a]`
    SpeedBias(Vector9),
    Feature(Vector3<f64>),
    Vector(DVector<f64>),
}

impl BlockValue {
    pub fn dof(&self) -> usize {
        match self {
            BlockValue::Pose(_) => 6,
            BlockValue::SpeedBias(_) => 9,
            BlockValue::Feature(_) => 3,
            BlockValue::Vector(v) => v.len(),
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            BlockValue::Pose(_) => "pose",
            BlockValue::SpeedBias(_) => "speed-bias",
            BlockValue::Feature(_) => "feature",
            BlockValue::Vector(_) => "vector",
        }
    }
}

/// Prior `½‖A_m (x_r ⊟ x̆_r) + b_m‖²` on the retained blocks.
///
/// The orientation difference uses `2 vec(q̂ ⊗ q̆⁻¹)`. `lambda` and `gradient`
/// hold `Λ_marg = A_mᵀA_m` and `g_marg = A_mᵀb_m` so that the solver can
/// assemble the prior without forming `A_m`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MarginalPrior {
    pub keys: Vec<BlockKey>,
    pub lin: Vec<BlockValue>,
    pub a_m: DMatrix<f64>,
    pub b_m: DVector<f64>,
    pub lambda: DMatrix<f64>,
    pub gradient: DVector<f64>,
    /// Set when `Λ_mm` had to be regularized.
    pub regularized: bool,
}

/// Difference `x ⊟ x̆` of the retained blocks and the 3×3 orientation blocks
/// of its Jacobian (all other blocks are identities).
#[derive(Clone, Debug)]
pub struct PriorDelta {
    pub delta: DVector<f64>,
    /// `(offset, ∂(2 vec)/∂δθ)` for each pose block.
    pub rotations: Vec<(usize, Matrix3<f64>)>,
}

/// Eigenvalues below this fraction of the largest are dropped from `A_m`.
pub const EIGEN_TRUNCATION: f64 = 1e-10;

/// Square-root factor `A_m = diag(√λ) Vᵀ` of `Λ` with small eigenvalues
/// truncated, and `b_m` solving `A_mᵀ b_m = g` in the retained subspace.
pub fn sqrt_information(lambda: &DMatrix<f64>, g: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let n = lambda.nrows();
    if n == 0 {
        return (DMatrix::zeros(0, 0), DVector::zeros(0));
    }
    let eig = lambda.clone().symmetric_eigen();
    let max = eig.eigenvalues.amax();
    let keep: Vec<usize> = (0..n).filter(|&i| eig.eigenvalues[i] > EIGEN_TRUNCATION * max).collect();
    let mut a = DMatrix::zeros(keep.len(), n);
    let mut b = DVector::zeros(keep.len());
    for (row, &i) in keep.iter().enumerate() {
        let s = eig.eigenvalues[i].sqrt();
        let v = eig.eigenvectors.column(i);
        a.row_mut(row).copy_from(&(v.transpose() * s));
        b[row] = v.dot(g) / s;
    }
    (a, b)
}

impl MarginalPrior {
    /// Prior with information `Λ` and gradient `g` at `lin`. The stored
    /// `lambda` and `gradient` are recomputed from the truncated factor.
    pub fn new(
        keys: Vec<BlockKey>,
        lin: Vec<BlockValue>,
        lambda: &DMatrix<f64>,
        gradient: &DVector<f64>,
    ) -> Result<Self, FactorError> {
        let dim: usize = lin.iter().map(BlockValue::dof).sum();
        if keys.len() != lin.len() {
            return Err(FactorError::DimensionMismatch { expected: keys.len(), got: lin.len() });
        }
        if lambda.nrows() != dim || lambda.ncols() != dim || gradient.len() != dim {
            return Err(FactorError::DimensionMismatch { expected: dim, got: lambda.nrows() });
        }
        let (a_m, b_m) = sqrt_information(lambda, gradient);
        Ok(Self {
            keys,
            lin,
            lambda: a_m.transpose() * &a_m,
            gradient: a_m.transpose() * &b_m,
            a_m,
            b_m,
            regularized: false,
        })
    }

    pub fn dim(&self) -> usize {
        self.a_m.ncols()
    }

    pub fn delta(&self, values: &[BlockValue]) -> Result<PriorDelta, FactorError> {
        if values.len() != self.lin.len() {
            return Err(FactorError::DimensionMismatch { expected: self.lin.len(), got: values.len() });
        }
        let mut delta = DVector::zeros(self.dim());
        let mut rotations = Vec::new();
        let mut off = 0;
        for (index, (x, l)) in values.iter().zip(&self.lin).enumerate() {
            match (x, l) {
                (BlockValue::Pose(x), BlockValue::Pose(l)) => {
                    let q = x.q.mul_raw(&l.q.inverse());
                    delta.fixed_rows_mut::<3>(off).copy_from(&super::two_vec(&q));
                    delta.fixed_rows_mut::<3>(off + 3).copy_from(&(x.p - l.p));
                    rotations.push((off, left_diff_jacobian(&q)));
                }
                (BlockValue::SpeedBias(x), BlockValue::SpeedBias(l)) => {
                    delta.fixed_rows_mut::<9>(off).copy_from(&(x - l));
                }
                (BlockValue::Feature(x), BlockValue::Feature(l)) => {
                    delta.fixed_rows_mut::<3>(off).copy_from(&(x - l));
                }
                (BlockValue::Vector(x), BlockValue::Vector(l)) => {
                    if x.len() != l.len() {
                        return Err(FactorError::DimensionMismatch { expected: l.len(), got: x.len() });
                    }
                    delta.rows_mut(off, l.len()).copy_from(&(x - l));
                }
                _ => {
                    return Err(FactorError::BlockTypeMismatch { index, expected: l.kind(), got: x.kind() });
                }
            }
            off += l.dof();
        }
        Ok(PriorDelta { delta, rotations })
    }
}

/// Residual `A_m (x ⊟ x̆) + b_m` with Jacobian `A_m ∂(x ⊟ x̆)/∂δx` and `Λ = I`.
pub fn marginal_prior_factor(values: &[BlockValue], prior: &MarginalPrior) -> Result<ResidualBlock, FactorError> {
    let d = prior.delta(values)?;
    let e = &prior.a_m * &d.delta + &prior.b_m;
    let mut j = prior.a_m.clone();
    for (off, r) in &d.rotations {
        let cols = j.columns(*off, 3) * r;
        j.columns_mut(*off, 3).copy_from(&cols);
    }
    let mut jacobians = Vec::with_capacity(prior.keys.len());
    let mut off = 0;
    for (k, l) in prior.keys.iter().zip(&prior.lin) {
        jacobians.push((*k, j.columns(off, l.dof()).into_owned()));
        off += l.dof();
    }
    let r = e.len();
    Ok(ResidualBlock { e, jacobians, info: DMatrix::identity(r, r), robust: RobustKind::None })
}
