//! Minimization of `J(x0, z)`.
//!
//! The main iteration is `z_{i+1} = z_i − g_i(z_i)` where
//!
//! ```text
//! g_0 = (R + ∇²J)⁻¹ ∇J
//! g_j = (R + ∇²J)⁻¹ (∇J + R g_{j−1}),   j = 1..=i
//! ```
//!
//! The inner recursion converges geometrically to the Newton direction, so
//! its depth is capped. A single Cholesky factorization of `R + ∇²J` serves
//! every inner step of one outer iteration.

use std::time::Duration;

use log::debug;
use nalgebra::Cholesky;
use serde::{Deserialize, Serialize};

use crate::adjoint;
use crate::curvature::hessian_from;
use crate::clock::Stopwatch;
use crate::error::{OcpError, Result};
use crate::problem::{eval_total_cost, DecisionVector, Matrix, Problem, Vector};

/// Regularization matrix `R` of the inner recursion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "RegularizerRepr", into = "RegularizerRepr")]
pub enum Regularizer {
    /// `r · I`
    Scalar(f64),
    /// A full symmetric positive-definite matrix.
    Matrix(Matrix),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum RegularizerRepr {
    Scalar(f64),
    Matrix(Vec<Vec<f64>>),
}

impl From<RegularizerRepr> for Regularizer {
    fn from(r: RegularizerRepr) -> Self {
        match r {
            RegularizerRepr::Scalar(v) => Regularizer::Scalar(v),
            RegularizerRepr::Matrix(rows) => {
                let n = rows.len();
                let ncols = rows.first().map_or(0, Vec::len);
                if rows.iter().any(|r| r.len() != ncols) {
                    // ragged input; caught by validate()
                    return Regularizer::Matrix(Matrix::zeros(n, 0));
                }
                Regularizer::Matrix(Matrix::from_fn(n, ncols, |i, j| rows[i][j]))
            }
        }
    }
}

impl From<Regularizer> for RegularizerRepr {
    fn from(r: Regularizer) -> Self {
        match r {
            Regularizer::Scalar(v) => RegularizerRepr::Scalar(v),
            Regularizer::Matrix(m) => RegularizerRepr::Matrix(
                m.row_iter().map(|row| row.iter().copied().collect()).collect(),
            ),
        }
    }
}

impl Regularizer {
    pub fn scaled(&self, factor: f64) -> Self {
        match self {
            Regularizer::Scalar(v) => Regularizer::Scalar(v * factor),
            Regularizer::Matrix(m) => Regularizer::Matrix(m * factor),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Regularizer::Scalar(v) if *v > 0.0 && v.is_finite() => Ok(()),
            Regularizer::Scalar(_) => Err(OcpError::param("r_reg", "must be > 0")),
            Regularizer::Matrix(m) => {
                if !m.is_square() || m.is_empty() {
                    return Err(OcpError::param("r_reg", "matrix must be square"));
                }
                if (m - m.transpose()).amax() > 1e-12 * m.amax().max(1.0) {
                    return Err(OcpError::param("r_reg", "matrix must be symmetric"));
                }
                if m.clone().cholesky().is_none() {
                    return Err(OcpError::param("r_reg", "matrix must be positive definite"));
                }
                Ok(())
            }
        }
    }

    fn add_to(&self, h: &Matrix) -> Result<Matrix> {
        match self {
            Regularizer::Scalar(v) => {
                let mut out = h.clone();
                for i in 0..out.nrows() {
                    out[(i, i)] += v;
                }
                Ok(out)
            }
            Regularizer::Matrix(m) if m.shape() == h.shape() => Ok(m + h),
            Regularizer::Matrix(m) => Err(OcpError::DimensionMismatch {
                what: "regularizer",
                stage: None,
                expected: h.nrows(),
                got: m.nrows(),
            }),
        }
    }

    fn apply(&self, v: &Vector) -> Vector {
        match self {
            Regularizer::Scalar(r) => v * *r,
            Regularizer::Matrix(m) => m * v,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub r_reg: Regularizer,
    /// Stop once `‖∇J‖_∞ < grad_tol`.
    pub grad_tol: f64,
    pub max_outer: usize,
    /// `None` lets the inner depth grow with the outer index.
    pub inner_depth_cap: Option<usize>,
    pub fallback_scale: f64,
    /// Regularizer escalations allowed per outer iteration.
    pub max_escalations: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            r_reg: Regularizer::Scalar(0.1),
            grad_tol: 1e-6,
            max_outer: 50,
            inner_depth_cap: Some(20),
            fallback_scale: 10.0,
            max_escalations: 3,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        self.r_reg.validate()?;
        if !(self.grad_tol > 0.0 && self.grad_tol.is_finite()) {
            return Err(OcpError::param("grad_tol", "must be > 0"));
        }
        if self.max_outer == 0 {
            return Err(OcpError::param("max_outer", "must be >= 1"));
        }
        if self.inner_depth_cap == Some(0) {
            return Err(OcpError::param("inner_depth_cap", "must be >= 1 or null"));
        }
        if !(self.fallback_scale > 1.0 && self.fallback_scale.is_finite()) {
            return Err(OcpError::param("fallback_scale", "must be > 1"));
        }
        Ok(())
    }

    fn depth(&self, outer: usize) -> usize {
        self.inner_depth_cap.map_or(outer, |cap| outer.min(cap))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    MaxIters,
    LinearSolveFailure,
    Diverged,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub z_final: DecisionVector,
    /// Updates applied to `z`.
    pub outer_iters: usize,
    pub inner_iters_total: usize,
    /// `‖∇J‖_∞` at every evaluated iterate, including the last.
    pub grad_norm_history: Vec<f64>,
    pub cost_history: Vec<f64>,
    pub escalations: usize,
    pub termination: Termination,
    pub wall_time: Duration,
}

impl SolveReport {
    pub fn converged(&self) -> bool {
        self.termination == Termination::Converged
    }

    pub fn final_grad_norm(&self) -> f64 {
        self.grad_norm_history.last().copied().unwrap_or(f64::NAN)
    }

    pub fn final_cost(&self) -> f64 {
        self.cost_history.last().copied().unwrap_or(f64::NAN)
    }

    fn started(z: &DecisionVector) -> Self {
        SolveReport {
            z_final: z.clone(),
            outer_iters: 0,
            inner_iters_total: 0,
            grad_norm_history: Vec::new(),
            cost_history: Vec::new(),
            escalations: 0,
            termination: Termination::MaxIters,
            wall_time: Duration::ZERO,
        }
    }
}

/// `g_depth` from one factorization of `R + H`.
pub fn step_direction(h: &Matrix, g: &Vector, reg: &Regularizer, depth: usize) -> Result<Vector> {
    if h.nrows() != g.len() || !h.is_square() {
        return Err(OcpError::DimensionMismatch {
            what: "Hessian",
            stage: None,
            expected: g.len(),
            got: h.nrows(),
        });
    }
    let chol = Cholesky::new(reg.add_to(h)?).ok_or(OcpError::LinearSolveFailure)?;
    let mut d = chol.solve(g);
    for _ in 0..depth {
        d = chol.solve(&(g + reg.apply(&d)));
    }
    if d.iter().any(|v| !v.is_finite()) {
        return Err(OcpError::LinearSolveFailure);
    }
    Ok(d)
}

/// Slack for the cost-decrease test, in units of `1 + |J|`.
const COST_SLACK: f64 = 1e-12;

/// Run the regularized iteration from `z0` until `‖∇J‖_∞ < grad_tol`.
///
/// When `R + ∇²J` cannot be factorized, or the step increases the cost,
/// `R` is multiplied by `fallback_scale` and the step recomputed, at most
/// `max_escalations` times per outer iteration. A step that still raises
/// the cost after the last escalation is taken anyway; a factorization that
/// still fails ends the solve with [`Termination::LinearSolveFailure`].
pub fn minimize<P: Problem + ?Sized>(
    p: &P,
    x0: &Vector,
    z0: &DecisionVector,
    cfg: &SolverConfig,
) -> Result<SolveReport> {
    cfg.validate()?;
    let start = Stopwatch::start();
    let mut report = SolveReport::started(z0);
    let mut z = z0.clone();

    for outer in 0.. {
        let (roll, adj) = adjoint::gradient(p, x0, &z)?;
        let grad_norm = adj.gradient.amax();
        report.cost_history.push(roll.total_cost);
        report.grad_norm_history.push(grad_norm);
        if grad_norm < cfg.grad_tol {
            report.termination = Termination::Converged;
            break;
        }
        if outer >= cfg.max_outer {
            report.termination = Termination::MaxIters;
            break;
        }

        let hess = hessian_from(p, &roll, &adj, &z)?;
        let depth = cfg.depth(outer);
        let mut reg = cfg.r_reg.clone();
        let mut next = None;
        for attempt in 0..=cfg.max_escalations {
            match step_direction(hess.as_matrix(), &adj.gradient, &reg, depth) {
                Ok(d) => {
                    let candidate = z.with_data(z.as_vector() - d);
                    let limit = roll.total_cost + COST_SLACK * (1.0 + roll.total_cost.abs());
                    let last = attempt == cfg.max_escalations;
                    match eval_total_cost(p, x0, &candidate) {
                        Ok(c) if c <= limit || last => {
                            next = Some(candidate);
                            break;
                        }
                        Err(e) if last => return Err(e),
                        _ => debug!("outer {outer}: cost did not decrease, escalating regularizer"),
                    }
                }
                Err(OcpError::LinearSolveFailure) => {
                    debug!("outer {outer}: R + H not positive definite, escalating regularizer");
                }
                Err(e) => return Err(e),
            }
            if attempt < cfg.max_escalations {
                reg = reg.scaled(cfg.fallback_scale);
                report.escalations += 1;
            }
        }

        match next {
            Some(candidate) => {
                z = candidate;
                report.outer_iters += 1;
                report.inner_iters_total += depth;
            }
            None => {
                report.termination = Termination::LinearSolveFailure;
                break;
            }
        }
    }

    report.z_final = z;
    report.wall_time = start.elapsed();
    Ok(report)
}

/// Plain gradient descent `z ← z − lr ∇J` with the same instrumentation.
///
/// The run is reported as diverged when the rollout blows up or the cost
/// grows by more than ten times the initial cost magnitude.
pub fn minimize_gd<P: Problem + ?Sized>(
    p: &P,
    x0: &Vector,
    z0: &DecisionVector,
    lr: f64,
    grad_tol: f64,
    max_iters: usize,
) -> Result<SolveReport> {
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(OcpError::param("lr", "must be > 0"));
    }
    if !(grad_tol > 0.0 && grad_tol.is_finite()) {
        return Err(OcpError::param("grad_tol", "must be > 0"));
    }
    let start = Stopwatch::start();
    let mut report = SolveReport::started(z0);
    let mut z = z0.clone();
    let mut initial_cost = None;

    loop {
        let (roll, adj) = match adjoint::gradient(p, x0, &z) {
            Ok(v) => v,
            Err(OcpError::NonFinite { .. }) => {
                report.termination = Termination::Diverged;
                break;
            }
            Err(e) => return Err(e),
        };
        let j0: f64 = *initial_cost.get_or_insert(roll.total_cost);
        let grad_norm = adj.gradient.amax();
        report.cost_history.push(roll.total_cost);
        report.grad_norm_history.push(grad_norm);
        if roll.total_cost > j0 + 9.0 * j0.abs().max(1e-12) || !grad_norm.is_finite() {
            report.termination = Termination::Diverged;
            break;
        }
        if grad_norm < grad_tol {
            report.termination = Termination::Converged;
            break;
        }
        if report.outer_iters >= max_iters {
            report.termination = Termination::MaxIters;
            break;
        }
        z = z.with_data(z.as_vector() - adj.gradient * lr);
        report.outer_iters += 1;
    }

    report.z_final = z;
    report.wall_time = start.elapsed();
    Ok(report)
}
