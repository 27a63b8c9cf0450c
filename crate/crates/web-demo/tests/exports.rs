use ocp_fbde_web::{agv_demo, convergence_demo, lqr_demo};
use serde_json::Value;

fn parse(s: String) -> Value {
    serde_json::from_str(&s).unwrap()
}

#[test]
fn lqr_export_matches_riccati() {
    let v = parse(lqr_demo(2.0, 0.1));
    assert!(v["max_control_deviation"].as_f64().unwrap() < 1e-8);
    assert_eq!(v["x_solver"].as_array().unwrap().len(), 16);
    assert_eq!(v["u_solver"].as_array().unwrap().len(), 15);
    assert!(v["grad_norms"].as_array().unwrap().last().unwrap().as_f64().unwrap() < 1e-6);
}

#[test]
fn lqr_export_reports_bad_regularizer() {
    let v = parse(lqr_demo(1.0, -1.0));
    assert!(v["error"].as_str().unwrap().contains("r_reg"));
}

#[test]
fn agv_export_tracks_the_circle() {
    let v = parse(agv_demo(1.0, 0.3, 200, false));
    assert!(v["failure"].is_null());
    assert_eq!(v["x"].as_array().unwrap().len(), 201);
    assert!(v["steady_state_max_position_error"].as_f64().unwrap() <= 0.02);
}

#[test]
fn agv_export_rejects_bad_input() {
    assert!(parse(agv_demo(-1.0, 0.3, 100, false))["error"].is_string());
    assert!(parse(agv_demo(1.0, 0.3, 5, false))["error"].is_string());
    assert!(parse(agv_demo(1.0, 0.3, 100_000, true))["error"].is_string());
}

#[test]
fn convergence_export_compares_both_methods() {
    let v = parse(convergence_demo(0, 0.05));
    let ours = v["solver_iterations"].as_u64().unwrap();
    let gd = v["gd_iterations"].as_u64().unwrap();
    assert_eq!(v["gd_termination"], "converged");
    assert!(10 * ours <= gd, "{ours} vs {gd}");
    assert_eq!(v["gd_grad_norms"].as_array().unwrap().len() as u64, gd + 1);
}
