//! WebAssembly bindings for the browser demo. Every export takes plain
//! numbers and returns a JSON string; failures come back as
//! `{"error": "..."}`.

use ocp_fbde::mpc::{run_mpc, MpcConfig, WarmStart};
use ocp_fbde::oracles::riccati_lqr;
use ocp_fbde::problem::roll_forward;
use ocp_fbde::scenarios::{
    build_lqr, build_unicycle_tracking, tracking_error, unicycle_plant, Circle, LqrSpec, Reference,
    UnicycleSpec,
};
use ocp_fbde::solver::{minimize, minimize_gd, Regularizer, SolverConfig, Termination};
use ocp_fbde::{DecisionVector, Problem};
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Largest closed-loop run the demo accepts.
pub const MAX_STEPS: usize = 2000;

#[derive(Debug, Serialize)]
pub struct LqrDemo {
    pub k: Vec<usize>,
    pub x_solver: Vec<f64>,
    pub u_solver: Vec<f64>,
    pub x_riccati: Vec<f64>,
    pub u_riccati: Vec<f64>,
    pub grad_norms: Vec<f64>,
    pub iterations: usize,
    pub max_control_deviation: f64,
}

#[derive(Debug, Serialize)]
pub struct AgvDemo {
    pub t: Vec<f64>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub x_ref: Vec<f64>,
    pub y_ref: Vec<f64>,
    pub position_error: Vec<f64>,
    pub heading_error: Vec<f64>,
    pub iterations: Vec<usize>,
    pub steady_state_max_position_error: f64,
    pub failure: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct ConvergenceDemo {
    pub solver_grad_norms: Vec<f64>,
    pub gd_grad_norms: Vec<f64>,
    pub solver_iterations: usize,
    pub gd_iterations: usize,
    pub gd_termination: Termination,
}

fn to_json<T: Serialize>(result: Result<T, String>) -> String {
    match result {
        Ok(v) => serde_json::to_string(&v).unwrap_or_else(|e| error_json(&e.to_string())),
        Err(e) => error_json(&e),
    }
}

fn error_json(message: &str) -> String {
    serde_json::json!({ "error": message }).to_string()
}

fn solver_with(r_reg: f64) -> SolverConfig {
    SolverConfig {
        r_reg: Regularizer::Scalar(r_reg),
        ..SolverConfig::default()
    }
}

/// Default scalar LQR from `x0`, solved with regularizer `r_reg` and
/// compared with the Riccati optimum.
pub fn lqr(x0: f64, r_reg: f64) -> Result<LqrDemo, String> {
    let spec = LqrSpec {
        x0,
        ..LqrSpec::default()
    };
    let p = build_lqr(&spec).map_err(|e| e.to_string())?;
    let cfg = solver_with(r_reg);
    cfg.validate().map_err(|e| e.to_string())?;
    let init = p.initial_state();
    let report = minimize(&p, &init, &DecisionVector::zeros(p.dims()), &cfg).map_err(|e| e.to_string())?;
    let roll = roll_forward(&p, &init, &report.z_final).map_err(|e| e.to_string())?;
    let exact = riccati_lqr(spec.a, spec.b, spec.q, spec.r, spec.p_term, spec.horizon, spec.x0);
    let u_solver = report.z_final.as_slice()[..spec.horizon].to_vec();
    let max_control_deviation = u_solver
        .iter()
        .zip(&exact.controls)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Ok(LqrDemo {
        k: (0..=spec.horizon).collect(),
        x_solver: roll.states.iter().map(|x| x[0]).collect(),
        u_solver,
        x_riccati: exact.states,
        u_riccati: exact.controls,
        grad_norms: report.grad_norm_history,
        iterations: report.outer_iters,
        max_control_deviation,
    })
}

/// Closed-loop tracking of a circle centred at the origin.
pub fn agv(radius: f64, angular_rate: f64, steps: usize, shift: bool) -> Result<AgvDemo, String> {
    if steps > MAX_STEPS {
        return Err(format!("steps must be <= {MAX_STEPS}"));
    }
    let spec = UnicycleSpec {
        total_steps: steps,
        reference: Reference::Circle(Circle {
            radius,
            angular_rate,
            ..Circle::default()
        }),
        ..UnicycleSpec::default()
    };
    spec.validate().map_err(|e| e.to_string())?;
    let plant = unicycle_plant(&spec).map_err(|e| e.to_string())?;
    let cfg = MpcConfig {
        horizon: spec.horizon,
        total_steps: steps,
        warm_start: if shift { WarmStart::Shift } else { WarmStart::Zero },
        solver: solver_with(spec.r_reg),
    };
    let trace = run_mpc(&plant, |_, k| build_unicycle_tracking(&spec, k), &spec.initial_state(), &cfg)
        .map_err(|e| e.to_string())?;

    let mut out = AgvDemo {
        t: Vec::new(),
        x: Vec::new(),
        y: Vec::new(),
        x_ref: Vec::new(),
        y_ref: Vec::new(),
        position_error: Vec::new(),
        heading_error: Vec::new(),
        iterations: trace.per_step_reports.iter().map(|r| r.outer_iters).collect(),
        steady_state_max_position_error: 0.0,
        failure: trace.failure.as_ref().map(|f| format!("step {}: {}", f.step, f.reason)),
    };
    for (k, state) in trace.applied_states.iter().enumerate() {
        let t = k as f64 * spec.delta;
        let r = spec.reference.at(spec.delta, k);
        let e = tracking_error(&spec, state, k);
        if t > 3.0 {
            out.steady_state_max_position_error = out.steady_state_max_position_error.max(e.position);
        }
        out.t.push(t);
        out.x.push(state[0]);
        out.y.push(state[1]);
        out.x_ref.push(r.state[0]);
        out.y_ref.push(r.state[1]);
        out.position_error.push(e.position);
        out.heading_error.push(e.heading);
    }
    Ok(out)
}

/// Gradient-norm histories of the main solver and gradient descent on the
/// default tracking window anchored at `anchor`, from the default start.
pub fn convergence(anchor: usize, gd_lr: f64) -> Result<ConvergenceDemo, String> {
    let spec = UnicycleSpec::default();
    let p = build_unicycle_tracking(&spec, anchor).map_err(|e| e.to_string())?;
    let x0 = spec.initial_state();
    let z0 = DecisionVector::zeros(p.dims());
    let ours = minimize(&p, &x0, &z0, &solver_with(spec.r_reg)).map_err(|e| e.to_string())?;
    let gd = minimize_gd(&p, &x0, &z0, gd_lr, 1e-6, 5000).map_err(|e| e.to_string())?;
    Ok(ConvergenceDemo {
        solver_iterations: ours.outer_iters,
        solver_grad_norms: ours.grad_norm_history,
        gd_iterations: gd.outer_iters,
        gd_grad_norms: gd.grad_norm_history,
        gd_termination: gd.termination,
    })
}

#[wasm_bindgen]
pub fn lqr_demo(x0: f64, r_reg: f64) -> String {
    to_json(lqr(x0, r_reg))
}

#[wasm_bindgen]
pub fn agv_demo(radius: f64, angular_rate: f64, steps: usize, shift: bool) -> String {
    to_json(agv(radius, angular_rate, steps, shift))
}

#[wasm_bindgen]
pub fn convergence_demo(anchor: usize, gd_lr: f64) -> String {
    to_json(convergence(anchor, gd_lr))
}
