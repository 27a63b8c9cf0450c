//! Exact gradient of the rollout cost from one forward pass and one
//! backward costate pass.
//!
//! With `H(x, u, λ) = Φ(x, u) + λᵀ F(x, u)` the costates run backwards as
//! `λ_k = ∂H/∂x_k` from `λ_{N+1} = 0`, and the gradient entry for `u_k` is
//! `∂H/∂u_k` evaluated along the rollout.

use crate::error::Result;
use crate::problem::{
    check_decision, check_state, eval_cost, eval_cost_gradient, eval_dynamics, eval_jacobians,
    roll_forward, DecisionVector, Problem, Rollout, Vector,
};

/// Costates `λ_1, …, λ_{N+1}` and the gradient `∇J`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointSolution {
    /// `costates[j]` holds `λ_{j+1}`; the last entry is `λ_{N+1} = 0`.
    pub costates: Vec<Vector>,
    /// Empty when only the costate pass was run.
    pub gradient: Vector,
}

impl AdjointSolution {
    /// `λ_k` for `k = 1..=N+1`.
    pub fn costate(&self, k: usize) -> &Vector {
        &self.costates[k - 1]
    }
}

/// `Φ(x, u, k) + λ_nextᵀ F(x, u, k)`.
pub fn hamiltonian<P: Problem + ?Sized>(
    p: &P,
    x: &Vector,
    u: &Vector,
    lambda_next: &Vector,
    k: usize,
) -> Result<f64> {
    let dims = p.dims();
    check_state(dims, x)?;
    check_state(dims, lambda_next)?;
    if u.len() != dims.m {
        return Err(crate::error::OcpError::DimensionMismatch {
            what: "control",
            stage: Some(k),
            expected: dims.m,
            got: u.len(),
        });
    }
    let cost = eval_cost(p, x, u, k)?;
    let next = eval_dynamics(p, x, u, k)?;
    Ok(cost + lambda_next.dot(&next))
}

/// Backward recursion `λ_k = Φ_x + F_xᵀ λ_{k+1}` for `k = N..1`.
///
/// The returned solution carries costates only.
pub fn backward_costates<P: Problem + ?Sized>(
    p: &P,
    roll: &Rollout,
    z: &DecisionVector,
) -> Result<AdjointSolution> {
    let dims = p.dims();
    check_decision(dims, z)?;
    let horizon = dims.horizon;
    let mut costates = vec![Vector::zeros(dims.n); horizon + 1];
    for k in (1..=horizon).rev() {
        let x = &roll.states[k];
        let u = z.control(k);
        let mut lambda = eval_cost_gradient(p, x, &u, k)?.x;
        // λ_{N+1} = 0, so stage N never needs the dynamics Jacobian.
        if k < horizon {
            let jac = eval_jacobians(p, x, &u, k)?;
            lambda += jac.fx.tr_mul(&costates[k]);
        }
        costates[k - 1] = lambda;
    }
    Ok(AdjointSolution {
        costates,
        gradient: Vector::zeros(0),
    })
}

/// Gradient entries `Φ_u + F_uᵀ λ_{k+1}` given a rollout and its costates.
pub fn gradient_from<P: Problem + ?Sized>(
    p: &P,
    roll: &Rollout,
    z: &DecisionVector,
    mut adj: AdjointSolution,
) -> Result<AdjointSolution> {
    let dims = p.dims();
    let mut grad = Vector::zeros(dims.decision_len());
    for k in 0..dims.stages() {
        let x = &roll.states[k];
        let u = z.control(k);
        let mut gk = eval_cost_gradient(p, x, &u, k)?.u;
        if k < dims.horizon {
            let jac = eval_jacobians(p, x, &u, k)?;
            gk += jac.fu.tr_mul(&adj.costates[k]);
        }
        grad.rows_mut(k * dims.m, dims.m).copy_from(&gk);
    }
    adj.gradient = grad;
    Ok(adj)
}

/// Forward rollout, backward costates, Hamiltonian control partials.
pub fn gradient<P: Problem + ?Sized>(
    p: &P,
    x0: &Vector,
    z: &DecisionVector,
) -> Result<(Rollout, AdjointSolution)> {
    let roll = roll_forward(p, x0, z)?;
    let adj = backward_costates(p, &roll, z)?;
    let adj = gradient_from(p, &roll, z, adj)?;
    Ok((roll, adj))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenarios::{build_lqr, LqrSpec};
    use approx::assert_abs_diff_eq;

    fn lqr(n: usize) -> crate::scenarios::Lqr {
        build_lqr(&LqrSpec {
            horizon: n,
            ..LqrSpec::default()
        })
        .unwrap()
    }

    #[test]
    fn hamiltonian_values() {
        let p = lqr(1);
        let one = Vector::from_element(1, 1.0);
        let zero = Vector::zeros(1);
        // λ_next = 0 leaves the stage cost.
        assert_abs_diff_eq!(hamiltonian(&p, &one, &zero, &zero, 0).unwrap(), 1.0);
        // 1 + 10.8 * 1.8
        let lam = Vector::from_element(1, 10.8);
        assert_abs_diff_eq!(hamiltonian(&p, &one, &zero, &lam, 0).unwrap(), 20.44, epsilon = 1e-12);
    }

    #[test]
    fn one_step_lqr_costates_and_gradient() {
        let p = lqr(1);
        let z = DecisionVector::zeros(p.dims());
        let (_, adj) = gradient(&p, &Vector::from_element(1, 1.0), &z).unwrap();
        assert_eq!(adj.costate(2)[0], 0.0);
        assert_abs_diff_eq!(adj.costate(1)[0], 10.8, epsilon = 1e-12);
        assert_abs_diff_eq!(adj.gradient[0], 9.72, epsilon = 1e-12);
        assert_eq!(adj.gradient[1], 0.0);
    }

    #[test]
    fn zero_horizon_has_only_terminal_costate() {
        let p = lqr(0);
        let z = DecisionVector::zeros(p.dims());
        let (_, adj) = gradient(&p, &Vector::from_element(1, 4.0), &z).unwrap();
        assert_eq!(adj.costates, vec![Vector::zeros(1)]);
        assert_eq!(adj.gradient.len(), 1);
    }

    #[test]
    fn origin_is_stationary_for_pure_quadratics() {
        let p = lqr(6);
        let z = DecisionVector::zeros(p.dims());
        let (_, adj) = gradient(&p, &Vector::zeros(1), &z).unwrap();
        assert!(adj.gradient.iter().all(|g| *g == 0.0));
    }
}
