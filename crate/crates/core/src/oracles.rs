//! Independent reference computations used to validate the adjoint and
//! curvature passes: finite differences of the rollout cost, a dense LU
//! solve, and the scalar discrete Riccati recursion.
//!
//! Nothing here calls into `curvature`; `fd_hessian` differentiates the
//! adjoint gradient, and `fd_gradient` only replays the rollout.

use crate::adjoint;
use crate::error::Result;
use crate::problem::{
    eval_total_cost, fd_twin, roll_forward, DecisionVector, Matrix, Problem, SecondOrder, Vector,
};

/// `‖a − b‖_∞ / max(1, ‖b‖_∞)`.
pub fn rel_err(a: &Vector, b: &Vector) -> f64 {
    assert_eq!(a.len(), b.len());
    if a.is_empty() {
        return 0.0;
    }
    (a - b).amax() / b.amax().max(1.0)
}

/// Matrix version of [`rel_err`] using the max-abs entry norm.
pub fn rel_err_mat(a: &Matrix, b: &Matrix) -> f64 {
    assert_eq!(a.shape(), b.shape());
    if a.is_empty() {
        return 0.0;
    }
    (a - b).amax() / b.amax().max(1.0)
}

fn perturbed(z: &DecisionVector, i: usize, h: f64) -> DecisionVector {
    let mut v = z.as_vector().clone();
    v[i] += h;
    z.with_data(v)
}

/// Central differences of `J(x0, ·)`: `(J(z + h e_i) − J(z − h e_i)) / 2h`.
pub fn fd_gradient<P: Problem + ?Sized>(
    p: &P,
    x0: &Vector,
    z: &DecisionVector,
    h: f64,
) -> Result<Vector> {
    let mut g = Vector::zeros(z.len());
    for i in 0..z.len() {
        let plus = eval_total_cost(p, x0, &perturbed(z, i, h))?;
        let minus = eval_total_cost(p, x0, &perturbed(z, i, -h))?;
        g[i] = (plus - minus) / (2.0 * h);
    }
    Ok(g)
}

/// Central differences of the adjoint gradient, symmetrized.
pub fn fd_hessian<P: Problem + ?Sized>(
    p: &P,
    x0: &Vector,
    z: &DecisionVector,
    h: f64,
) -> Result<Matrix> {
    let dim = z.len();
    let mut hess = Matrix::zeros(dim, dim);
    for i in 0..dim {
        let (_, plus) = adjoint::gradient(p, x0, &perturbed(z, i, h))?;
        let (_, minus) = adjoint::gradient(p, x0, &perturbed(z, i, -h))?;
        let col = (plus.gradient - minus.gradient) / (2.0 * h);
        hess.set_column(i, &col);
    }
    Ok((&hess + hess.transpose()) * 0.5)
}

/// Central-difference sensitivities `∂x_k / ∂z_i` for `k = 0..=N`.
pub fn fd_state_sensitivity<P: Problem + ?Sized>(
    p: &P,
    x0: &Vector,
    z: &DecisionVector,
    flat: usize,
    h: f64,
) -> Result<Vec<Vector>> {
    let plus = roll_forward(p, x0, &perturbed(z, flat, h))?;
    let minus = roll_forward(p, x0, &perturbed(z, flat, -h))?;
    Ok(plus
        .states
        .iter()
        .zip(&minus.states)
        .map(|(a, b)| (a - b) / (2.0 * h))
        .collect())
}

/// Solve `a x = b` by LU with partial pivoting.
pub fn dense_solve(a: &Matrix, b: &Vector) -> Option<Vector> {
    a.clone().lu().solve(b)
}

/// Scalar LQR optimum from the backward Riccati recursion.
#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiSolution {
    /// `K_0, …, K_{N−1}` with `u_k = −K_k x_k`.
    pub gains: Vec<f64>,
    /// `P_0, …, P_N`.
    pub cost_to_go: Vec<f64>,
    /// `x_0, …, x_N`.
    pub states: Vec<f64>,
    /// `u_0, …, u_{N−1}`.
    pub controls: Vec<f64>,
    pub cost: f64,
}

pub fn riccati_lqr(a: f64, b: f64, q: f64, r: f64, p_term: f64, horizon: usize, x0: f64) -> RiccatiSolution {
    let mut cost_to_go = vec![0.0; horizon + 1];
    let mut gains = vec![0.0; horizon];
    cost_to_go[horizon] = p_term;
    for k in (0..horizon).rev() {
        let next = cost_to_go[k + 1];
        let denom = r + b * b * next;
        gains[k] = a * b * next / denom;
        cost_to_go[k] = q + a * a * next - (a * b * next).powi(2) / denom;
    }
    let mut states = Vec::with_capacity(horizon + 1);
    let mut controls = Vec::with_capacity(horizon);
    let mut x = x0;
    for &gain in &gains {
        states.push(x);
        let u = -gain * x;
        controls.push(u);
        x = a * x + b * u;
    }
    states.push(x);
    RiccatiSolution {
        gains,
        cost: x0 * x0 * cost_to_go[0],
        cost_to_go,
        states,
        controls,
    }
}

/// Worst relative disagreement between analytic derivative oracles and
/// their finite-difference twins over a set of evaluation points.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct OracleAgreement {
    pub first_order: f64,
    pub second_order: f64,
    pub asymmetry: f64,
}

/// Blocks assembled into the full Hessian over `w = [x; u]`.
fn assembled(s: &SecondOrder) -> Matrix {
    let (n, m) = (s.xx.nrows(), s.uu.nrows());
    let mut full = Matrix::zeros(n + m, n + m);
    full.view_mut((0, 0), (n, n)).copy_from(&s.xx);
    full.view_mut((0, n), (n, m)).copy_from(&s.xu);
    full.view_mut((n, 0), (m, n)).copy_from(&s.xu.transpose());
    full.view_mut((n, n), (m, m)).copy_from(&s.uu);
    full
}

fn second_order_err(a: &SecondOrder, b: &SecondOrder) -> f64 {
    rel_err_mat(&assembled(a), &assembled(b))
}

fn symmetry_defect(s: &SecondOrder) -> f64 {
    let d = |m: &Matrix| (m - m.transpose()).amax() / m.amax().max(1.0);
    d(&s.xx).max(d(&s.uu))
}

/// Compare every derivative oracle of `p` with central differences of its
/// own dynamics and stage cost. Second-order blocks are compared as one
/// assembled Hessian over `[x; u]`, and only when `p` provides them.
pub fn oracle_agreement<P: Problem + ?Sized>(
    p: &P,
    points: impl IntoIterator<Item = (Vector, Vector, usize)>,
) -> OracleAgreement {
    let fd = fd_twin(p);
    let mut out = OracleAgreement::default();
    for (x, u, k) in points {
        let ja = p.d_dynamics(&x, &u, k);
        let jf = fd.d_dynamics(&x, &u, k);
        let ga = p.d_stage_cost(&x, &u, k);
        let gf = fd.d_stage_cost(&x, &u, k);
        let first = rel_err_mat(&ja.fx, &jf.fx)
            .max(rel_err_mat(&ja.fu, &jf.fu))
            .max(rel_err(&ga.x, &gf.x))
            .max(rel_err(&ga.u, &gf.u));
        out.first_order = out.first_order.max(first);

        if let Some(ha) = p.dd_stage_cost(&x, &u, k) {
            let hf = fd.dd_stage_cost(&x, &u, k).expect("fd second order");
            out.second_order = out.second_order.max(second_order_err(&ha, &hf));
            out.asymmetry = out.asymmetry.max(symmetry_defect(&ha));
        }
        let v = Vector::from_fn(x.len(), |i, _| 0.5 + 0.25 * i as f64);
        if let Some(ca) = p.dd_dynamics_contracted(&v, &x, &u, k) {
            let cf = fd.dd_dynamics_contracted(&v, &x, &u, k).expect("fd second order");
            out.second_order = out.second_order.max(second_order_err(&ca, &cf));
            out.asymmetry = out.asymmetry.max(symmetry_defect(&ca));
        }
    }
    out
}
