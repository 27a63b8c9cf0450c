//! Reference computations written independently of the library's own
//! oracle module.

#![allow(dead_code)]

use ocp_fbde::adjoint;
use ocp_fbde::problem::{eval_total_cost, roll_forward};
use ocp_fbde::{DecisionVector, Matrix, Problem, Vector};

pub fn rel(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let scale = b.iter().map(|v| v.abs()).fold(1.0, f64::max);
    diff / scale
}

fn nudged(z: &DecisionVector, i: usize, h: f64) -> DecisionVector {
    let mut v = z.as_vector().clone();
    v[i] += h;
    z.with_data(v)
}

/// Central differences of the total cost.
pub fn cost_gradient(p: &dyn Problem, x0: &Vector, z: &DecisionVector, h: f64) -> Vec<f64> {
    (0..z.len())
        .map(|i| {
            let f = |s: f64| eval_total_cost(p, x0, &nudged(z, i, s)).unwrap();
            (f(h) - f(-h)) / (2.0 * h)
        })
        .collect()
}

/// Column `i` is the central difference of the adjoint gradient along `e_i`.
pub fn gradient_jacobian(p: &dyn Problem, x0: &Vector, z: &DecisionVector, h: f64) -> Matrix {
    let n = z.len();
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        let g = |s: f64| adjoint::gradient(p, x0, &nudged(z, i, s)).unwrap().1.gradient;
        out.set_column(i, &((g(h) - g(-h)) / (2.0 * h)));
    }
    out
}

/// `∂x_k / ∂z_i` for every stage, stacked.
pub fn state_sensitivity(p: &dyn Problem, x0: &Vector, z: &DecisionVector, i: usize, h: f64) -> Vec<f64> {
    let plus = roll_forward(p, x0, &nudged(z, i, h)).unwrap();
    let minus = roll_forward(p, x0, &nudged(z, i, -h)).unwrap();
    plus.states
        .iter()
        .zip(&minus.states)
        .flat_map(|(a, b)| ((a - b) / (2.0 * h)).iter().copied().collect::<Vec<_>>())
        .collect()
}

/// Scalar LQR by dynamic programming: returns `(u_0..u_{N-1}, x_0..x_N)`.
pub fn scalar_lqr(a: f64, b: f64, q: f64, r: f64, p: f64, n: usize, x0: f64) -> (Vec<f64>, Vec<f64>) {
    let mut s = p;
    let mut gains = Vec::with_capacity(n);
    for _ in 0..n {
        let k = a * b * s / (r + b * b * s);
        s = q + a * s * (a - b * k);
        gains.push(k);
    }
    gains.reverse();
    let mut xs = vec![x0];
    let mut us = Vec::with_capacity(n);
    for k in gains {
        let x = *xs.last().unwrap();
        let u = -k * x;
        us.push(u);
        xs.push(a * x + b * u);
    }
    (us, xs)
}
