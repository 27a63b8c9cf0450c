use ocp_fbde::mpc::{run_mpc, MpcConfig, MpcTrace, WarmStart};
use ocp_fbde::scenarios::{build_unicycle_tracking, tracking_error, unicycle_plant, UnicycleSpec};
use ocp_fbde::solver::{minimize, Regularizer, SolverConfig};
use ocp_fbde::{DecisionVector, Problem};

fn agv(total_steps: usize, warm_start: WarmStart) -> (UnicycleSpec, MpcConfig, MpcTrace) {
    let spec = UnicycleSpec {
        total_steps,
        ..UnicycleSpec::default()
    };
    let cfg = MpcConfig {
        horizon: spec.horizon,
        total_steps,
        warm_start,
        solver: SolverConfig {
            r_reg: Regularizer::Scalar(spec.r_reg),
            ..SolverConfig::default()
        },
    };
    let plant = unicycle_plant(&spec).unwrap();
    let trace = run_mpc(&plant, |_, k| build_unicycle_tracking(&spec, k), &spec.initial_state(), &cfg).unwrap();
    (spec, cfg, trace)
}

#[test]
fn applied_states_replay_through_the_plant() {
    let (spec, _, trace) = agv(120, WarmStart::Zero);
    assert!(trace.completed());
    let plant = unicycle_plant(&spec).unwrap();
    for (k, u) in trace.applied_controls.iter().enumerate() {
        assert_eq!(plant.dynamics(&trace.applied_states[k], u, k), trace.applied_states[k + 1]);
    }
}

#[test]
fn every_step_converges() {
    let (_, _, trace) = agv(120, WarmStart::Zero);
    for r in &trace.per_step_reports {
        assert!(r.converged());
        assert!(r.final_grad_norm() < 1e-6);
    }
}

#[test]
fn re_solving_a_step_reproduces_its_control() {
    let (spec, cfg, trace) = agv(60, WarmStart::Zero);
    for k in [0, 17, 59] {
        let p = build_unicycle_tracking(&spec, k).unwrap();
        let r = minimize(&p, &trace.applied_states[k], &DecisionVector::zeros(p.dims()), &cfg.solver).unwrap();
        assert_eq!(r.z_final.control(0), trace.applied_controls[k]);
    }
}

#[test]
fn shifted_warm_start_tracks_the_circle() {
    let (spec, _, trace) = agv(410, WarmStart::Shift);
    assert!(trace.completed());
    for (k, x) in trace.applied_states.iter().enumerate() {
        if k as f64 * spec.delta > 3.0 {
            let e = tracking_error(&spec, x, k);
            assert!(e.position <= 0.02 && e.heading.abs() <= 0.05, "step {k}: {e:?}");
        }
    }
    let zero = agv(410, WarmStart::Zero).2;
    let total = |t: &MpcTrace| t.per_step_reports.iter().map(|r| r.outer_iters).sum::<usize>();
    assert!(total(&trace) <= total(&zero));
}

#[test]
fn last_window_reaches_the_end_of_the_run() {
    // windows near the end extend past the run; the reference keeps going
    let (spec, _, trace) = agv(410, WarmStart::Zero);
    assert_eq!(trace.applied_controls.len(), spec.total_steps);
    let p = build_unicycle_tracking(&spec, spec.total_steps - 1).unwrap();
    assert_eq!(p.dims().horizon, spec.horizon);
}
