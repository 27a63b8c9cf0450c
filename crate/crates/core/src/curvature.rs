//! Exact Hessian of the rollout cost, assembled row by row.
//!
//! Row `(i, p)` is the directional derivative of the adjoint gradient along
//! the unit control `e_(i,p)`. It needs two more difference equations on top
//! of the rollout and the costates:
//!
//! * forward:  `β_{k+1} = F_x β_k + [k = i] F_u e_p`, `β_0 = 0`
//!   (`β_k` is the sensitivity `∂x_k / ∂u_i^(p)`);
//! * backward: `α_k = F_xᵀ α_{k+1} + S_xx β_k + [k = i] S_xu e_p`,
//!   `α_{N+1} = 0`,
//!
//! where `S = ∇²Φ + λ_{k+1} · ∇²F` is the Hessian of the stage Hamiltonian.
//! The row entry for `u_k` is then
//! `[k = i] S_uu e_p + F_uᵀ α_{k+1} + S_xuᵀ β_k`.

use crate::adjoint::AdjointSolution;
use crate::error::{OcpError, Result};
use crate::problem::{
    eval_cost_hessian, eval_dynamics_curvature, eval_jacobians, finite_or, DecisionVector,
    Jacobians, Matrix, Problem, Rollout, SecondOrder, Vector,
};

/// Row of the Hessian identified by control stage and component.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RowIndex {
    pub stage: usize,
    pub component: usize,
}

impl RowIndex {
    pub fn new(stage: usize, component: usize) -> Self {
        RowIndex { stage, component }
    }

    pub fn from_flat(flat: usize, m: usize) -> Self {
        RowIndex {
            stage: flat / m,
            component: flat % m,
        }
    }

    pub fn flat(&self, m: usize) -> usize {
        self.stage * m + self.component
    }
}

/// Result of one row computation.
#[derive(Debug, Clone, PartialEq)]
pub struct SecondOrderPass {
    /// `β_0, …, β_N`.
    pub betas: Vec<Vector>,
    /// `alphas[j]` holds `α_{j+1}`, so the last entry is `α_{N+1} = 0`.
    pub alphas: Vec<Vector>,
    pub row: Vector,
}

/// Per-stage derivatives shared by every row.
struct StageTerms {
    /// `None` at the last stage, where the dynamics are never differentiated.
    jac: Option<Jacobians>,
    /// Hamiltonian second derivatives `∇²Φ + λ_{k+1} · ∇²F`.
    hess: SecondOrder,
}

/// Derivative snapshot of one `(rollout, costates)` pair; rows computed
/// from it are independent of each other.
pub struct CurvatureContext {
    n: usize,
    m: usize,
    horizon: usize,
    stages: Vec<StageTerms>,
}

impl CurvatureContext {
    pub fn new<P: Problem + ?Sized>(
        p: &P,
        roll: &Rollout,
        adj: &AdjointSolution,
        z: &DecisionVector,
    ) -> Result<Self> {
        let dims = p.dims();
        let mut stages = Vec::with_capacity(dims.stages());
        for k in 0..dims.stages() {
            let x = &roll.states[k];
            let u = z.control(k);
            let mut hess = eval_cost_hessian(p, x, &u, k)?;
            let jac = if k < dims.horizon {
                let lambda = &adj.costates[k];
                hess.add_assign(&eval_dynamics_curvature(p, lambda, x, &u, k)?);
                Some(eval_jacobians(p, x, &u, k)?)
            } else {
                None
            };
            stages.push(StageTerms { jac, hess });
        }
        Ok(CurvatureContext {
            n: dims.n,
            m: dims.m,
            horizon: dims.horizon,
            stages,
        })
    }

    pub fn row(&self, row: RowIndex) -> Result<SecondOrderPass> {
        let (n, m, horizon) = (self.n, self.m, self.horizon);
        if row.stage > horizon || row.component >= m {
            return Err(OcpError::DimensionMismatch {
                what: "Hessian row index",
                stage: Some(row.stage),
                expected: m * (horizon + 1),
                got: row.flat(m),
            });
        }
        let (i, p) = (row.stage, row.component);

        let mut betas = Vec::with_capacity(horizon + 1);
        betas.push(Vector::zeros(n));
        for k in 0..horizon {
            let jac = self.stages[k].jac.as_ref().expect("jacobian below horizon");
            let mut next = &jac.fx * &betas[k];
            if k == i {
                next += jac.fu.column(p);
            }
            finite_or(k, "β recursion", next.iter().all(|v| v.is_finite()))?;
            betas.push(next);
        }

        let mut alphas = vec![Vector::zeros(n); horizon + 1];
        for k in (1..=horizon).rev() {
            let st = &self.stages[k];
            let mut alpha = &st.hess.xx * &betas[k];
            if k == i {
                alpha += st.hess.xu.column(p);
            }
            if let Some(jac) = &st.jac {
                alpha += jac.fx.tr_mul(&alphas[k]);
            }
            finite_or(k, "α recursion", alpha.iter().all(|v| v.is_finite()))?;
            alphas[k - 1] = alpha;
        }

        let mut out = Vector::zeros(m * (horizon + 1));
        for k in 0..=horizon {
            let st = &self.stages[k];
            let mut entry = st.hess.xu.tr_mul(&betas[k]);
            if k == i {
                entry += st.hess.uu.column(p);
            }
            if let Some(jac) = &st.jac {
                entry += jac.fu.tr_mul(&alphas[k]);
            }
            out.rows_mut(k * m, m).copy_from(&entry);
        }
        finite_or(i, "Hessian row", out.iter().all(|v| v.is_finite()))?;

        Ok(SecondOrderPass {
            betas,
            alphas,
            row: out,
        })
    }

    pub fn hessian(&self) -> Result<HessianMatrix> {
        let dim = self.m * (self.horizon + 1);
        let mut data = Matrix::zeros(dim, dim);
        for flat in 0..dim {
            let pass = self.row(RowIndex::from_flat(flat, self.m))?;
            data.set_row(flat, &pass.row.transpose());
        }
        HessianMatrix::checked(data)
    }
}

/// One Hessian row from a rollout and its costates.
pub fn hessian_row<P: Problem + ?Sized>(
    p: &P,
    roll: &Rollout,
    adj: &AdjointSolution,
    z: &DecisionVector,
    row: RowIndex,
) -> Result<SecondOrderPass> {
    CurvatureContext::new(p, roll, adj, z)?.row(row)
}

/// Full Hessian from a shared rollout and costate pass.
pub fn hessian_from<P: Problem + ?Sized>(
    p: &P,
    roll: &Rollout,
    adj: &AdjointSolution,
    z: &DecisionVector,
) -> Result<HessianMatrix> {
    CurvatureContext::new(p, roll, adj, z)?.hessian()
}

/// `∇²J(x0, z)`.
pub fn hessian<P: Problem + ?Sized>(
    p: &P,
    x0: &Vector,
    z: &DecisionVector,
) -> Result<HessianMatrix> {
    let (roll, adj) = crate::adjoint::gradient(p, x0, z)?;
    hessian_from(p, &roll, &adj, z)
}

/// Relative tolerance on `‖H − Hᵀ‖_max`, scaled by `1 + ‖H‖_max`.
pub const SYMMETRY_TOL: f64 = 1e-8;

/// Symmetric Hessian. Construction checks the asymmetry of the raw rows
/// and then stores `(H + Hᵀ) / 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct HessianMatrix {
    data: Matrix,
    raw_asymmetry: f64,
}

impl HessianMatrix {
    pub fn checked(raw: Matrix) -> Result<Self> {
        let (defect, row, col) = max_asymmetry(&raw);
        let tolerance = SYMMETRY_TOL * (1.0 + raw.amax());
        if defect > tolerance {
            return Err(OcpError::Asymmetric {
                row,
                col,
                defect,
                tolerance,
            });
        }
        let data = (&raw + raw.transpose()) * 0.5;
        Ok(HessianMatrix {
            data,
            raw_asymmetry: defect,
        })
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.data
    }

    pub fn into_matrix(self) -> Matrix {
        self.data
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    /// `‖H − Hᵀ‖_max` of the rows as computed, before symmetrization.
    pub fn raw_asymmetry(&self) -> f64 {
        self.raw_asymmetry
    }
}

/// Largest `|H_ij − H_ji|` and where it occurs.
pub fn max_asymmetry(h: &Matrix) -> (f64, usize, usize) {
    let mut worst = (0.0, 0, 0);
    for i in 0..h.nrows() {
        for j in (i + 1)..h.ncols() {
            let d = (h[(i, j)] - h[(j, i)]).abs();
            if d > worst.0 {
                worst = (d, i, j);
            }
        }
    }
    worst
}
