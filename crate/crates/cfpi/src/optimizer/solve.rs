//! Levenberg-Marquardt on the factor graph.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::graph::{FactorGraph, Node};
use super::system::{back_substitute, linearize, reduce, total_cost, Layout, Reduced, System};
use super::OptError;
use crate::factors::BlockKey;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub max_iterations: usize,
    /// Stop when the relative cost decrease falls below this.
    pub cost_tolerance: f64,
    /// Stop when `‖δx‖` falls below this.
    pub step_tolerance: f64,
    /// Stop when the gradient norm falls below this.
    pub gradient_tolerance: f64,
    /// Initial damping; zero starts with plain Gauss-Newton steps.
    pub initial_lambda: f64,
    pub lambda_up: f64,
    pub lambda_down: f64,
    pub max_lambda: f64,
    /// Also return the information matrix at the final estimate.
    pub compute_information: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iterations: 10,
            cost_tolerance: 1e-10,
            step_tolerance: 1e-10,
            gradient_tolerance: 1e-9,
            initial_lambda: 1e-4,
            lambda_up: 10.0,
            lambda_down: 0.1,
            max_lambda: 1e12,
            compute_information: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), OptError> {
        let ok = self.cost_tolerance > 0.0
            && self.step_tolerance > 0.0
            && self.gradient_tolerance > 0.0
            && self.initial_lambda >= 0.0
            && self.lambda_up > 1.0
            && self.lambda_down > 0.0
            && self.lambda_down < 1.0
            && self.max_lambda > self.initial_lambda;
        if ok {
            Ok(())
        } else {
            Err(OptError::InvalidConfig)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    CostConverged,
    StepConverged,
    GradientConverged,
    MaxIterations,
    /// Damping reached its limit without a cost decrease.
    NoDecrease,
}

/// Outcome of a solve.
#[derive(Clone, Debug)]
pub struct SolveReport {
    pub iterations: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub termination: Termination,
    /// Norm of `Σ JᵀΛe` at the final estimate.
    pub gradient_norm: f64,
    /// Visual factors dropped at the final estimate.
    pub invalid_factors: usize,
    /// Information of the dense blocks with the features eliminated.
    pub information: Option<DMatrix<f64>>,
    /// `(key, offset, dim)` of each block of `information`.
    pub ordering: Vec<(BlockKey, usize, usize)>,
}

impl SolveReport {
    pub fn converged(&self) -> bool {
        !matches!(self.termination, Termination::MaxIterations | Termination::NoDecrease)
    }

    /// Marginal covariance of the listed blocks, in the order given.
    pub fn covariance(&self, keys: &[BlockKey]) -> Option<DMatrix<f64>> {
        let info = self.information.as_ref()?;
        let chol = info.clone().cholesky()?;
        let mut idx = Vec::new();
        for k in keys {
            let (_, off, dim) = self.ordering.iter().find(|(b, _, _)| b == k)?;
            idx.extend(*off..off + dim);
        }
        let mut rhs = DMatrix::zeros(info.nrows(), idx.len());
        for (c, &i) in idx.iter().enumerate() {
            rhs[(i, c)] = 1.0;
        }
        let x = chol.solve(&rhs);
        Some(DMatrix::from_fn(idx.len(), idx.len(), |r, c| x[(idx[r], c)]))
    }
}

fn gradient_norm(sys: &System) -> f64 {
    (sys.g.norm_squared() + sys.feats.iter().map(|f| f.gf.norm_squared()).sum::<f64>()).sqrt()
}

/// Nodes touching the null space of the undamped reduced system.
fn unconstrained_nodes(graph: &FactorGraph, layout: &Layout, red: &Reduced) -> Vec<usize> {
    let mut nodes: Vec<usize> = red.singular.iter().map(|s| layout.features[*s]).collect();
    if red.h.nrows() > 0 && red.h.clone().cholesky().is_none() {
        let eig = red.h.clone().symmetric_eigen();
        let max = eig.eigenvalues.amax().max(f64::MIN_POSITIVE);
        for (i, l) in eig.eigenvalues.iter().enumerate() {
            if *l > 1e-10 * max {
                continue;
            }
            let v = eig.eigenvectors.column(i);
            for (k, off, dim) in &layout.blocks {
                if v.rows(*off, *dim).norm() > 1e-3 {
                    nodes.push(k.node);
                }
            }
        }
    }
    nodes.sort_unstable();
    nodes.dedup();
    nodes.retain(|n| graph.nodes.contains_key(n));
    nodes
}

/// Solves the damped reduced system; `None` if it is not positive definite.
fn step(sys: &System, lambda: f64) -> Option<(DVector<f64>, Vec<nalgebra::Vector3<f64>>)> {
    let red = reduce(sys, lambda, 1e-9);
    let chol = red.h.clone().cholesky()?;
    let dx = -chol.solve(&red.g);
    if !dx.iter().all(|v| v.is_finite()) {
        return None;
    }
    let df = back_substitute(sys, &red, &dx);
    Some((dx, df))
}

fn apply(nodes: &mut std::collections::BTreeMap<usize, Node>, layout: &Layout, dx: &DVector<f64>, df: &[nalgebra::Vector3<f64>]) {
    for (k, off, dim) in &layout.blocks {
        if let Some(n) = nodes.get_mut(&k.node) {
            n.retract(k.part, &dx.as_slice()[*off..off + dim]);
        }
    }
    for (id, d) in layout.features.iter().zip(df) {
        if let Some(n) = nodes.get_mut(id) {
            n.retract(crate::factors::Part::Whole, d.as_slice());
        }
    }
}

/// Minimizes the graph cost in place.
pub fn solve(graph: &mut FactorGraph, cfg: &SolverConfig) -> Result<SolveReport, OptError> {
    cfg.validate()?;
    let layout = Layout::for_solve(&graph.nodes, &graph.factors, graph.view());
    let mut sys = linearize(&graph.factors, graph.view(), &layout)?;
    if !sys.cost.is_finite() {
        return Err(OptError::NotFinite);
    }
    let undamped = reduce(&sys, 0.0, 1e-9);
    let bad = unconstrained_nodes(graph, &layout, &undamped);
    if !bad.is_empty() {
        return Err(OptError::RankDeficient { nodes: bad });
    }
    let initial_cost = sys.cost;
    let mut lambda = cfg.initial_lambda;
    let mut iterations = 0;
    let mut termination = Termination::MaxIterations;

    while iterations < cfg.max_iterations {
        if gradient_norm(&sys) <= cfg.gradient_tolerance {
            termination = Termination::GradientConverged;
            break;
        }
        iterations += 1;
        let mut accepted = None;
        loop {
            if let Some((dx, df)) = step(&sys, lambda) {
                let mut trial = graph.nodes.clone();
                apply(&mut trial, &layout, &dx, &df);
                let view = super::system::View { nodes: &trial, cameras: &graph.cameras };
                let cost = total_cost(&graph.factors, view)?;
                if cost.is_finite() && cost <= sys.cost {
                    let norm = (dx.norm_squared() + df.iter().map(|d| d.norm_squared()).sum::<f64>()).sqrt();
                    accepted = Some((trial, cost, norm));
                    break;
                }
            }
            lambda = if lambda == 0.0 { cfg.initial_lambda.max(1e-4) } else { lambda * cfg.lambda_up };
            if lambda > cfg.max_lambda {
                break;
            }
        }
        let Some((nodes, cost, norm)) = accepted else {
            termination = Termination::NoDecrease;
            break;
        };
        let old = sys.cost;
        graph.nodes = nodes;
        lambda *= cfg.lambda_down;
        sys = linearize(&graph.factors, graph.view(), &layout)?;
        if norm <= cfg.step_tolerance {
            termination = Termination::StepConverged;
            break;
        }
        if old - cost <= cfg.cost_tolerance * old {
            termination = Termination::CostConverged;
            break;
        }
    }
    let information = cfg.compute_information.then(|| {
        let h = reduce(&sys, 0.0, 1e-9).h;
        (&h + h.transpose()) * 0.5
    });
    Ok(SolveReport {
        iterations,
        initial_cost,
        final_cost: sys.cost,
        termination,
        gradient_norm: gradient_norm(&sys),
        invalid_factors: sys.invalid,
        information,
        ordering: layout.blocks.clone(),
    })
}
