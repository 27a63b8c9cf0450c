//! Drive a cart with quadratic drag to rest at x = 1 using finite-difference
//! derivatives, then print the plan.

use ocp_fbde::problem::{make_fd_problem, Dims, FD_STEP};
use ocp_fbde::solver::{minimize, SolverConfig};
use ocp_fbde::{DecisionVector, Vector};

fn main() -> ocp_fbde::Result<()> {
    let dt = 0.1;
    let horizon = 30;
    let dims = Dims::new(2, 1, horizon)?;
    let dynamics = move |x: &Vector, u: &Vector, _k: usize| {
        let drag = 0.3 * x[1] * x[1].abs();
        Vector::from_column_slice(&[x[0] + dt * x[1], x[1] + dt * (u[0] - drag)])
    };
    let cost = move |x: &Vector, u: &Vector, k: usize| {
        let miss = (x[0] - 1.0).powi(2) + x[1].powi(2);
        if k == horizon {
            100.0 * miss
        } else {
            dt * (miss + 0.1 * u[0] * u[0])
        }
    };
    let p = make_fd_problem(dims, dynamics, cost, FD_STEP)?;

    let x0 = Vector::zeros(2);
    let report = minimize(&p, &x0, &DecisionVector::zeros(dims), &SolverConfig::default())?;
    println!(
        "{:?} after {} iterations, J = {:.6}, |grad| = {:.2e}",
        report.termination,
        report.outer_iters,
        report.final_cost(),
        report.final_grad_norm()
    );
    for (k, u) in report.z_final.controls().iter().enumerate().take(horizon) {
        println!("u[{k:2}] = {:+.4}", u[0]);
    }
    Ok(())
}
