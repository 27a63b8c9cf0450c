//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use clap::Parser;
use ocp_fbde::adjoint;
use ocp_fbde::check::{random_cases, scenario_cases, CheckCase};
use ocp_fbde::cli::{execute, Cli, Config, MpcSection, ScenarioKind};
use ocp_fbde::curvature::{hessian, hessian_row, max_asymmetry, RowIndex};
use ocp_fbde::mpc::{run_mpc, MpcConfig, MpcTrace, WarmStart};
use ocp_fbde::scenarios::{
    build_lqr, build_unicycle_tracking, tracking_error, unicycle_plant, LqrSpec, UnicycleSpec,
};
use ocp_fbde::solver::{minimize, minimize_gd, Regularizer, SolverConfig};
use ocp_fbde::{DecisionVector, Matrix, Problem, Vector};

use common::{cost_gradient, gradient_jacobian, rel, scalar_lqr, state_sensitivity};

const SEED: u64 = 1;

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: String) -> Verdict {
    Verdict { passed, detail }
}

fn problem_set() -> Vec<CheckCase> {
    let mut cases = scenario_cases(SEED, 0);
    cases.extend(random_cases(SEED, &[], 50, 0));
    cases
}

fn gradient_exactness() -> Verdict {
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for case in problem_set() {
        let p = case.problem.as_ref();
        for (x0, z) in &case.points {
            let (_, adj) = adjoint::gradient(p, x0, z).unwrap();
            worst = worst.max(rel(adj.gradient.as_slice(), &cost_gradient(p, x0, z, 1e-6)));
            count += 1;
        }
    }
    verdict(worst <= 1e-5, format!("{count} points, max rel err {worst:.2e} (tol 1e-5)"))
}

fn raw_hessian(p: &dyn Problem, x0: &Vector, z: &DecisionVector) -> Matrix {
    let m = p.dims().m;
    let (roll, adj) = adjoint::gradient(p, x0, z).unwrap();
    let mut raw = Matrix::zeros(z.len(), z.len());
    for flat in 0..z.len() {
        let pass = hessian_row(p, &roll, &adj, z, RowIndex::from_flat(flat, m)).unwrap();
        raw.set_row(flat, &pass.row.transpose());
    }
    raw
}

fn hessian_exactness() -> Verdict {
    let mut worst: f64 = 0.0;
    let mut worst_sym: f64 = 0.0;
    for case in problem_set() {
        let p = case.problem.as_ref();
        for (x0, z) in &case.points {
            let h = hessian(p, x0, z).unwrap();
            let fd = gradient_jacobian(p, x0, z, 1e-5);
            let fd_sym = (&fd + fd.transpose()) * 0.5;
            worst = worst.max(rel(h.as_matrix().as_slice(), fd_sym.as_slice()));
            let raw = raw_hessian(p, x0, z);
            let (defect, _, _) = max_asymmetry(&raw);
            worst_sym = worst_sym.max(defect / (1.0 + raw.amax()));
        }
    }
    verdict(
        worst <= 1e-4 && worst_sym <= 1e-8,
        format!("max rel err {worst:.2e} (tol 1e-4), symmetry defect {worst_sym:.2e} (tol 1e-8)"),
    )
}

fn beta_sensitivity() -> Verdict {
    let mut worst: f64 = 0.0;
    for case in problem_set() {
        let p = case.problem.as_ref();
        let m = p.dims().m;
        for (x0, z) in &case.points {
            let (roll, adj) = adjoint::gradient(p, x0, z).unwrap();
            for flat in 0..z.len() {
                let pass = hessian_row(p, &roll, &adj, z, RowIndex::from_flat(flat, m)).unwrap();
                let betas: Vec<f64> = pass.betas.iter().flat_map(|b| b.iter().copied()).collect();
                worst = worst.max(rel(&betas, &state_sensitivity(p, x0, z, flat, 1e-6)));
            }
        }
    }
    verdict(worst <= 1e-5, format!("max rel err {worst:.2e} (tol 1e-5)"))
}

fn lqr_reproduction() -> Verdict {
    let mut worst: f64 = 0.0;
    let mut all_converged = true;
    let started = Instant::now();
    for x0 in [1.0, 2.0, 3.0] {
        let spec = LqrSpec { x0, ..LqrSpec::default() };
        let p = build_lqr(&spec).unwrap();
        let init = p.initial_state();
        let report = minimize(&p, &init, &DecisionVector::zeros(p.dims()), &SolverConfig::default()).unwrap();
        all_converged &= report.converged() && report.final_grad_norm() < 1e-6;
        let roll = ocp_fbde::problem::roll_forward(&p, &init, &report.z_final).unwrap();
        let (us, xs) = scalar_lqr(1.8, 0.9, 1.0, 3.0, 3.0, 15, x0);
        for (k, u) in us.iter().enumerate() {
            worst = worst.max((report.z_final.as_slice()[k] - u).abs());
        }
        for (k, x) in xs.iter().enumerate() {
            worst = worst.max((roll.states[k][0] - x).abs());
        }
    }
    let elapsed = started.elapsed();
    verdict(
        all_converged && worst <= 1e-4 && elapsed < Duration::from_secs(1),
        format!("x0 in {{1,2,3}}: max abs deviation {worst:.2e} (tol 1e-4), converged {all_converged}, {:.1} ms", elapsed.as_secs_f64() * 1e3),
    )
}

struct AgvRun {
    spec: UnicycleSpec,
    trace: MpcTrace,
    elapsed: Duration,
}

fn agv_run() -> AgvRun {
    let spec = UnicycleSpec::default();
    let plant = unicycle_plant(&spec).unwrap();
    let cfg = MpcConfig {
        horizon: spec.horizon,
        total_steps: spec.total_steps,
        warm_start: WarmStart::Zero,
        solver: SolverConfig {
            r_reg: Regularizer::Scalar(spec.r_reg),
            ..SolverConfig::default()
        },
    };
    let started = Instant::now();
    let trace = run_mpc(&plant, |_, k| build_unicycle_tracking(&spec, k), &spec.initial_state(), &cfg).unwrap();
    AgvRun { spec, trace, elapsed: started.elapsed() }
}

fn median(v: &[usize]) -> f64 {
    let mut s = v.to_vec();
    s.sort_unstable();
    let mid = s.len() / 2;
    if s.len() % 2 == 1 {
        s[mid] as f64
    } else {
        (s[mid - 1] + s[mid]) as f64 / 2.0
    }
}

fn solver_vs_gradient_descent(run: &AgvRun) -> Verdict {
    let defaults = MpcSection::default();
    let ours: Vec<usize> = run.trace.per_step_reports.iter().map(|r| r.outer_iters).collect();
    let mut gd = Vec::with_capacity(ours.len());
    let mut gd_converged = 0;
    for k in 0..ours.len() {
        let p = build_unicycle_tracking(&run.spec, k).unwrap();
        let r = minimize_gd(
            &p,
            &run.trace.applied_states[k],
            &DecisionVector::zeros(p.dims()),
            defaults.gd_lr,
            1e-6,
            defaults.gd_max_iters,
        )
        .unwrap();
        gd_converged += r.converged() as usize;
        gd.push(r.outer_iters);
    }
    let (m_ours, m_gd) = (median(&ours), median(&gd));
    let max_ours = ours.iter().copied().max().unwrap_or(usize::MAX);
    let all_converged = run.trace.completed()
        && run.trace.per_step_reports.iter().all(|r| r.converged());
    verdict(
        all_converged && max_ours <= 30 && 10.0 * m_ours <= m_gd,
        format!(
            "median iterations {m_ours} vs gradient descent {m_gd} (lr {}, {gd_converged}/{} converged), ratio {:.1}, max {max_ours} (bound 30)",
            defaults.gd_lr,
            gd.len(),
            m_gd / m_ours
        ),
    )
}

fn tracking_quality(run: &AgvRun) -> Verdict {
    let mut max_pos: f64 = 0.0;
    let mut max_head: f64 = 0.0;
    for (k, x) in run.trace.applied_states.iter().enumerate() {
        if k as f64 * run.spec.delta > 3.0 {
            let e = tracking_error(&run.spec, x, k);
            max_pos = max_pos.max(e.position);
            max_head = max_head.max(e.heading.abs());
        }
    }
    let steps = run.trace.applied_controls.len();
    let logged = run.trace.per_step_wall_time.len() == steps;
    verdict(
        run.trace.completed()
            && steps == 410
            && max_pos <= 0.02
            && max_head <= 0.05
            && logged
            && run.elapsed < Duration::from_secs(10),
        format!(
            "{steps} steps in {:.2} s, steady-state position error {max_pos:.2e} m (tol 0.02), heading error {max_head:.2e} rad (tol 0.05)",
            run.elapsed.as_secs_f64()
        ),
    )
}

fn stationarity_fixed_point() -> Verdict {
    let cfg = SolverConfig::default();
    let mut cases: Vec<(String, Box<dyn Problem>, Vector, DecisionVector)> = Vec::new();

    let spec = LqrSpec::default();
    let (mut us, _) = scalar_lqr(spec.a, spec.b, spec.q, spec.r, spec.p_term, spec.horizon, spec.x0);
    us.push(0.0);
    let p = build_lqr(&spec).unwrap();
    let z = DecisionVector::from_slice(p.dims(), &us).unwrap();
    cases.push(("riccati optimum".into(), Box::new(p.clone()), p.initial_state(), z));
    cases.push((
        "x0 = 0".into(),
        Box::new(p.clone()),
        Vector::zeros(1),
        DecisionVector::zeros(p.dims()),
    ));
    for case in random_cases(SEED, &[], 5, 0) {
        let (x0, z) = case.points[0].clone();
        let solved = minimize(case.problem.as_ref(), &x0, &z, &cfg).unwrap();
        if solved.converged() {
            cases.push((case.name.clone(), case.problem, x0, solved.z_final));
        }
    }

    let mut bad = Vec::new();
    let total = cases.len();
    for (name, p, x0, z) in cases {
        let (_, adj) = adjoint::gradient(p.as_ref(), &x0, &z).unwrap();
        assert!(adj.gradient.amax() < 1e-6, "{name} is not stationary");
        let r = minimize(p.as_ref(), &x0, &z, &cfg).unwrap();
        if r.outer_iters != 0 || r.z_final != z || !r.converged() {
            bad.push(name);
        }
    }
    verdict(bad.is_empty() && total >= 5, format!("{total} stationary starts, moved: {bad:?}"))
}

fn regularizer_invariance() -> Verdict {
    let p = build_lqr(&LqrSpec::default()).unwrap();
    let x0 = p.initial_state();
    let sols: Vec<Vector> = [0.01, 0.1, 1.0]
        .into_iter()
        .map(|r| {
            let cfg = SolverConfig { r_reg: Regularizer::Scalar(r), ..SolverConfig::default() };
            let rep = minimize(&p, &x0, &DecisionVector::zeros(p.dims()), &cfg).unwrap();
            assert!(rep.converged());
            rep.z_final.into_vector()
        })
        .collect();
    let mut worst: f64 = 0.0;
    for i in 0..sols.len() {
        for j in i + 1..sols.len() {
            worst = worst.max((&sols[i] - &sols[j]).amax());
        }
    }
    verdict(worst <= 1e-6, format!("R = 0.01, 0.1, 1: max pairwise control difference {worst:.2e} (tol 1e-6)"))
}

fn run_cli(args: &[&str]) -> (i32, String) {
    let outcome = execute(Cli::try_parse_from(args).unwrap());
    (outcome.code, outcome.message)
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

fn determinism() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let lqr_cfg = tmp.path().join("lqr.json");
    let agv_cfg = tmp.path().join("agv.json");
    fs::write(&lqr_cfg, serde_json::to_string(&Config::default_for(ScenarioKind::Lqr)).unwrap()).unwrap();
    fs::write(&agv_cfg, serde_json::to_string(&Config::default_for(ScenarioKind::Unicycle)).unwrap()).unwrap();

    let mut identical = Vec::new();
    for (name, args) in [
        ("run-lqr", vec!["ocp-fbde", "run-lqr", "--config", lqr_cfg.to_str().unwrap()]),
        ("run-mpc", vec!["ocp-fbde", "run-mpc", "--config", agv_cfg.to_str().unwrap(), "--baseline", "gd"]),
        ("check", vec!["ocp-fbde", "check", "--seed", "1"]),
    ] {
        let mut outputs = Vec::new();
        for rerun in 0..2 {
            let out = tmp.path().join(format!("{name}-{rerun}"));
            let mut full = args.clone();
            full.extend(["--out", out.to_str().unwrap()]);
            let (code, message) = run_cli(&full);
            assert_eq!(code, 0, "{name}: {message}");
            outputs.push((dir_bytes(&out), message));
        }
        let files = outputs[0].0.len();
        let same = outputs[0].0 == outputs[1].0 && files > 0 && (name != "check" || outputs[0].1 == outputs[1].1);
        identical.push(format!("{name} {} ({files} files)", if same { "identical" } else { "DIFFERS" }));
    }
    verdict(identical.iter().all(|s| s.contains("identical")), identical.join(", "))
}

fn main() {
    let mut results: Vec<(&str, Verdict)> = Vec::new();
    let mut run = |name: &'static str, f: &dyn Fn() -> Verdict| {
        let v = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            verdict(false, format!("panicked: {msg}"))
        });
        println!("[{}] {name}: {}", if v.passed { "PASS" } else { "FAIL" }, v.detail);
        results.push((name, v));
    };

    run("gradient exactness", &gradient_exactness);
    run("hessian exactness", &hessian_exactness);
    run("beta sensitivity", &beta_sensitivity);
    run("lqr reproduction", &lqr_reproduction);
    let agv = agv_run();
    run("solver vs gradient descent", &|| solver_vs_gradient_descent(&agv));
    run("agv tracking quality", &|| tracking_quality(&agv));
    run("stationarity fixed point", &stationarity_fixed_point);
    run("regularizer invariance", &regularizer_invariance);
    run("determinism", &determinism);

    let failed: Vec<&str> = results.iter().filter(|(_, v)| !v.passed).map(|(n, _)| *n).collect();
    println!("acceptance: {}/{} criteria passed", results.len() - failed.len(), results.len());
    if !failed.is_empty() {
        eprintln!("failed: {}", failed.join(", "));
        std::process::exit(1);
    }
}
