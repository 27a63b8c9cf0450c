//! Command-line front end: config loading, the `run-lqr`, `run-mpc` and
//! `check` commands, and their CSV/JSON outputs.
//!
//! Exit codes: 0 pass, 1 quantitative failure, 2 usage or config error.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::check::{default_check, parse_sizes, CheckTable};
use crate::error::OcpError;
use crate::mpc::{run_mpc, MpcConfig, MpcTrace, WarmStart};
use crate::oracles::riccati_lqr;
use crate::problem::{roll_forward, DecisionVector, Problem};
use crate::scenarios::{
    build_lqr, build_unicycle_tracking, tracking_error, unicycle_plant, LqrSpec, UnicycleSpec,
};
use crate::solver::{minimize, minimize_gd, Regularizer, SolveReport, SolverConfig, Termination};

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_SEED: u64 = 1;

pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "ocp-fbde", version, about = "Adjoint-based optimal control solver and experiment runner")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the scalar LQR scenario and compare with the Riccati optimum.
    RunLqr {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Run closed-loop unicycle tracking.
    RunMpc {
        #[arg(long)]
        config: PathBuf,
        /// Also solve every horizon problem with a baseline method.
        #[arg(long, value_enum)]
        baseline: Option<Baseline>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Run the derivative and solver validation suites.
    Check {
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        /// Comma-separated problem sizes `n x m x N`, e.g. `1x1x0,3x2x8`.
        #[arg(long)]
        sizes: Option<String>,
        /// Write `check_report.json` here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print a config file with every default filled in.
    DefaultConfig {
        #[arg(value_enum)]
        scenario: ScenarioKind,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Baseline {
    Gd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScenarioKind {
    Lqr,
    Unicycle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ScenarioConfig {
    Lqr(LqrSpec),
    Unicycle(UnicycleSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MpcSection {
    pub warm_start: WarmStart,
    /// Samples with `t <= transient_s` are excluded from steady-state statistics.
    pub transient_s: f64,
    pub max_position_error: f64,
    pub max_heading_error: f64,
    /// Step size of the gradient-descent baseline.
    pub gd_lr: f64,
    pub gd_max_iters: usize,
}

impl Default for MpcSection {
    fn default() -> Self {
        MpcSection {
            warm_start: WarmStart::Zero,
            transient_s: 3.0,
            max_position_error: 0.02,
            max_heading_error: 0.05,
            gd_lr: 0.05,
            gd_max_iters: 5000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    /// Max abs deviation from the Riccati optimum accepted by `run-lqr`.
    pub tolerance: f64,
    /// Record wall-clock times in CSV/JSON. Off keeps outputs bit-identical
    /// across reruns.
    pub timing: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            tolerance: 1e-4,
            timing: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub scenario: ScenarioConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub mpc: MpcSection,
    #[serde(default)]
    pub output: OutputSection,
}

impl Config {
    pub fn default_for(kind: ScenarioKind) -> Self {
        Config {
            scenario: match kind {
                ScenarioKind::Lqr => ScenarioConfig::Lqr(LqrSpec::default()),
                ScenarioKind::Unicycle => ScenarioConfig::Unicycle(UnicycleSpec::default()),
            },
            solver: SolverConfig::default(),
            mpc: MpcSection::default(),
            output: OutputSection::default(),
        }
    }

    pub fn validate(&self) -> crate::Result<()> {
        match &self.scenario {
            ScenarioConfig::Lqr(s) => s.validate()?,
            ScenarioConfig::Unicycle(s) => s.validate()?,
        }
        self.solver.validate()?;
        let m = &self.mpc;
        if !(m.transient_s >= 0.0 && m.transient_s.is_finite()) {
            return Err(OcpError::param("mpc.transient_s", "must be >= 0"));
        }
        if !(m.max_position_error > 0.0 && m.max_position_error.is_finite()) {
            return Err(OcpError::param("mpc.max_position_error", "must be > 0"));
        }
        if !(m.max_heading_error > 0.0 && m.max_heading_error.is_finite()) {
            return Err(OcpError::param("mpc.max_heading_error", "must be > 0"));
        }
        if !(m.gd_lr > 0.0 && m.gd_lr.is_finite()) {
            return Err(OcpError::param("mpc.gd_lr", "must be > 0"));
        }
        if !(self.output.tolerance > 0.0 && self.output.tolerance.is_finite()) {
            return Err(OcpError::param("output.tolerance", "must be > 0"));
        }
        Ok(())
    }
}

/// A command's exit code together with the message shown to the user.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outcome {
    pub code: i32,
    pub message: String,
}

impl Outcome {
    fn pass(message: impl Into<String>) -> Self {
        Outcome {
            code: EXIT_PASS,
            message: message.into(),
        }
    }

    fn fail(message: impl Into<String>) -> Self {
        Outcome {
            code: EXIT_FAIL,
            message: message.into(),
        }
    }

    fn usage(message: impl Into<String>) -> Self {
        Outcome {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }
}

/// Parse and validate a config document. Errors carry the field path and
/// the line/column of the offending token.
pub fn parse_config(text: &str) -> Result<Config, String> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: Config = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        if path.is_empty() || path == "." {
            format!("config parse error: {inner}")
        } else {
            format!("config parse error at field `{path}`: {inner}")
        }
    })?;
    cfg.validate()
        .map_err(|e| format!("config validation error: {e}"))?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<Config, String> {
    let text = fs::read_to_string(path)
        .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
    parse_config(&text).map_err(|e| format!("{}: {e}", path.display()))
}

/// Dispatch a parsed command line.
pub fn execute(cli: Cli) -> Outcome {
    match cli.command {
        Command::RunLqr { config, out } => match load_config(&config) {
            Ok(cfg) => cmd_run_lqr(&cfg, &out),
            Err(e) => Outcome::usage(e),
        },
        Command::RunMpc {
            config,
            baseline,
            out,
        } => match load_config(&config) {
            Ok(cfg) => cmd_run_mpc(&cfg, baseline, &out),
            Err(e) => Outcome::usage(e),
        },
        Command::Check { seed, sizes, out } => {
            let sizes = match sizes.as_deref().map(parse_sizes).transpose() {
                Ok(s) => s.unwrap_or_default(),
                Err(e) => return Outcome::usage(e.to_string()),
            };
            let table = default_check(seed, &sizes);
            cmd_check_output(&table, seed, out.as_deref())
        }
        Command::DefaultConfig { scenario } => {
            let cfg = Config::default_for(scenario);
            Outcome::pass(serde_json::to_string_pretty(&cfg).expect("config serializes"))
        }
    }
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

fn write_json(path: &Path, value: &Value) -> Result<(), String> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| e.to_string())?;
    text.push('\n');
    fs::write(path, text).map_err(|e| format!("cannot write {}: {e}", path.display()))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>, String> {
    csv::Writer::from_path(path).map_err(|e| format!("cannot write {}: {e}", path.display()))
}

fn ensure_dir(dir: &Path) -> Result<(), String> {
    fs::create_dir_all(dir).map_err(|e| format!("cannot create {}: {e}", dir.display()))
}

fn termination_name(t: Termination) -> Value {
    serde_json::to_value(t).expect("termination serializes")
}

pub fn cmd_run_lqr(cfg: &Config, out: &Path) -> Outcome {
    let spec = match &cfg.scenario {
        ScenarioConfig::Lqr(s) => s,
        ScenarioConfig::Unicycle(_) => {
            return Outcome::usage("run-lqr requires scenario.type = \"lqr\"")
        }
    };
    match run_lqr_inner(cfg, spec, out) {
        Ok(o) => o,
        Err(e) => Outcome::usage(e),
    }
}

fn run_lqr_inner(cfg: &Config, spec: &LqrSpec, out: &Path) -> Result<Outcome, String> {
    ensure_dir(out)?;
    let p = build_lqr(spec).map_err(|e| e.to_string())?;
    let x0 = p.initial_state();
    let report = match minimize(&p, &x0, &DecisionVector::zeros(p.dims()), &cfg.solver) {
        Ok(r) => r,
        Err(e) => return Ok(Outcome::fail(format!("solver failed: {e}"))),
    };
    let roll = match roll_forward(&p, &x0, &report.z_final) {
        Ok(r) => r,
        Err(e) => return Ok(Outcome::fail(format!("solver failed: {e}"))),
    };
    let exact = riccati_lqr(spec.a, spec.b, spec.q, spec.r, spec.p_term, spec.horizon, spec.x0);
    let u = report.z_final.as_slice();

    let mut wtr = csv_writer(&out.join("lqr_trace.csv"))?;
    let to_err = |e: csv::Error| e.to_string();
    wtr.write_record(["k", "x_solver", "u_solver", "x_riccati", "u_riccati"])
        .map_err(to_err)?;
    let mut max_u_dev: f64 = 0.0;
    let mut max_x_dev: f64 = 0.0;
    for k in 0..=spec.horizon {
        let xs = roll.states[k][0];
        let xr = exact.states[k];
        max_x_dev = max_x_dev.max((xs - xr).abs());
        let ur = exact.controls.get(k).copied();
        if let Some(ur) = ur {
            max_u_dev = max_u_dev.max((u[k] - ur).abs());
        }
        wtr.write_record([
            k.to_string(),
            xs.to_string(),
            u[k].to_string(),
            xr.to_string(),
            ur.map(|v| v.to_string()).unwrap_or_default(),
        ])
        .map_err(to_err)?;
    }
    wtr.flush().map_err(|e| e.to_string())?;

    let converged = report.converged();
    let passed = converged && max_u_dev <= cfg.output.tolerance && max_x_dev <= cfg.output.tolerance;
    let doc = json!({
        "schema_version": SCHEMA_VERSION,
        "command": "run-lqr",
        "scenario": spec,
        "solver": cfg.solver,
        "termination": termination_name(report.termination),
        "outer_iterations": report.outer_iters,
        "inner_iterations": report.inner_iters_total,
        "escalations": report.escalations,
        "grad_norms": report.grad_norm_history,
        "costs": report.cost_history,
        "final_cost": report.final_cost(),
        "riccati_cost": exact.cost,
        "max_control_deviation": max_u_dev,
        "max_state_deviation": max_x_dev,
        "tolerance": cfg.output.tolerance,
        "passed": passed,
        "wall_time_ms": cfg.output.timing.then(|| ms(report.wall_time)),
    });
    write_json(&out.join("report.json"), &doc)?;

    let summary = format!(
        "run-lqr: {:?} after {} iterations, max |u - u*| = {:.3e}, max |x - x*| = {:.3e} (tolerance {:.1e})",
        report.termination, report.outer_iters, max_u_dev, max_x_dev, cfg.output.tolerance
    );
    Ok(if passed {
        Outcome::pass(summary)
    } else {
        Outcome::fail(summary)
    })
}

/// Median; the two middle values are averaged for even lengths.
pub fn median(values: &[usize]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_unstable();
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid] as f64
    } else {
        (v[mid - 1] + v[mid]) as f64 / 2.0
    }
}

fn histogram(values: &[usize]) -> BTreeMap<String, usize> {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for v in values {
        *counts.entry(*v).or_default() += 1;
    }
    counts.into_iter().map(|(k, c)| (k.to_string(), c)).collect()
}

/// Gradient-descent baseline results aligned with the closed-loop steps.
#[derive(Debug, Clone)]
pub struct BaselineRun {
    pub reports: Vec<SolveReport>,
}

/// Re-solve every closed-loop horizon problem with gradient descent from
/// the initial guess the main solver used.
fn baseline_gd(spec: &UnicycleSpec, cfg: &Config, trace: &MpcTrace) -> crate::Result<BaselineRun> {
    let mut reports = Vec::with_capacity(trace.per_step_reports.len());
    for (step, _) in trace.per_step_reports.iter().enumerate() {
        let p = build_unicycle_tracking(spec, step)?;
        let z0 = match (cfg.mpc.warm_start, step) {
            (WarmStart::Shift, s) if s > 0 => trace.per_step_reports[s - 1].z_final.shifted(),
            _ => DecisionVector::zeros(p.dims()),
        };
        let x = &trace.applied_states[step];
        reports.push(minimize_gd(
            &p,
            x,
            &z0,
            cfg.mpc.gd_lr,
            cfg.solver.grad_tol,
            cfg.mpc.gd_max_iters,
        )?);
    }
    Ok(BaselineRun { reports })
}

pub fn cmd_run_mpc(cfg: &Config, baseline: Option<Baseline>, out: &Path) -> Outcome {
    let spec = match &cfg.scenario {
        ScenarioConfig::Unicycle(s) => s,
        ScenarioConfig::Lqr(_) => {
            return Outcome::usage("run-mpc requires scenario.type = \"unicycle\"")
        }
    };
    match run_mpc_inner(cfg, spec, baseline, out) {
        Ok(o) => o,
        Err(e) => Outcome::usage(e),
    }
}

fn run_mpc_inner(
    cfg: &Config,
    spec: &UnicycleSpec,
    baseline: Option<Baseline>,
    out: &Path,
) -> Result<Outcome, String> {
    ensure_dir(out)?;
    let plant = unicycle_plant(spec).map_err(|e| e.to_string())?;
    let solver = SolverConfig {
        r_reg: Regularizer::Scalar(spec.r_reg),
        ..cfg.solver.clone()
    };
    let mpc_cfg = MpcConfig {
        horizon: spec.horizon,
        total_steps: spec.total_steps,
        warm_start: cfg.mpc.warm_start,
        solver,
    };
    let started = Instant::now();
    let trace = run_mpc(
        &plant,
        |_, step| build_unicycle_tracking(spec, step),
        &spec.initial_state(),
        &mpc_cfg,
    )
    .map_err(|e| e.to_string())?;
    let total_wall = started.elapsed();
    for (k, t) in trace.per_step_wall_time.iter().enumerate() {
        log::debug!("step {k}: solve {:.3} ms", ms(*t));
    }

    let gd = match baseline {
        Some(Baseline::Gd) => Some(baseline_gd(spec, cfg, &trace).map_err(|e| e.to_string())?),
        None => None,
    };

    let timing = cfg.output.timing;
    let steps = trace.applied_controls.len();
    let mut wtr = csv_writer(&out.join("mpc_trace.csv"))?;
    let to_err = |e: csv::Error| e.to_string();
    let mut header = vec![
        "k", "t", "x", "y", "θ", "v", "ω", "x_r", "y_r", "θ_r", "pos_error", "iters", "solve_ms",
        "heading_error", "escalations",
    ];
    if gd.is_some() {
        header.extend(["gd_iters", "gd_termination", "gd_solve_ms"]);
    }
    wtr.write_record(&header).map_err(to_err)?;

    let mut steady_pos = Vec::new();
    let mut steady_head = Vec::new();
    for k in 0..=steps {
        let x = &trace.applied_states[k];
        let t = k as f64 * spec.delta;
        let r = spec.reference.at(spec.delta, k);
        let err = tracking_error(spec, x, k);
        if t > cfg.mpc.transient_s {
            steady_pos.push(err.position);
            steady_head.push(err.heading.abs());
        }
        let mut row = vec![
            k.to_string(),
            t.to_string(),
            x[0].to_string(),
            x[1].to_string(),
            x[2].to_string(),
        ];
        if k < steps {
            let u = &trace.applied_controls[k];
            let rep = &trace.per_step_reports[k];
            row.extend([u[0].to_string(), u[1].to_string()]);
            row.extend(r.state.iter().map(|v| v.to_string()));
            row.extend([
                err.position.to_string(),
                rep.outer_iters.to_string(),
                if timing { ms(trace.per_step_wall_time[k]).to_string() } else { String::new() },
                err.heading.to_string(),
                rep.escalations.to_string(),
            ]);
            if let Some(gd) = &gd {
                let g = &gd.reports[k];
                row.extend([
                    g.outer_iters.to_string(),
                    termination_name(g.termination).as_str().unwrap_or_default().to_string(),
                    if timing { ms(g.wall_time).to_string() } else { String::new() },
                ]);
            }
        } else {
            // final state: no control is applied
            row.extend([String::new(), String::new()]);
            row.extend(r.state.iter().map(|v| v.to_string()));
            row.extend([err.position.to_string(), String::new(), String::new(), err.heading.to_string(), String::new()]);
            if gd.is_some() {
                row.extend([String::new(), String::new(), String::new()]);
            }
        }
        wtr.write_record(&row).map_err(to_err)?;
    }
    wtr.flush().map_err(|e| e.to_string())?;

    let iters: Vec<usize> = trace.per_step_reports.iter().map(|r| r.outer_iters).collect();
    let max_of = |v: &[f64]| v.iter().copied().fold(0.0_f64, f64::max);
    let mean_of = |v: &[f64]| if v.is_empty() { f64::NAN } else { v.iter().sum::<f64>() / v.len() as f64 };
    let max_pos = max_of(&steady_pos);
    let max_head = max_of(&steady_head);
    let tracking_ok = !steady_pos.is_empty()
        && max_pos <= cfg.mpc.max_position_error
        && max_head <= cfg.mpc.max_heading_error;
    let max_iters = iters.iter().copied().max().unwrap_or(0);
    let alg_median = median(&iters);

    let baseline_doc = gd.as_ref().map(|gd| {
        let gd_iters: Vec<usize> = gd.reports.iter().map(|r| r.outer_iters).collect();
        let gd_median = median(&gd_iters);
        let count = |t: Termination| gd.reports.iter().filter(|r| r.termination == t).count();
        json!({
            "method": "gd",
            "lr": cfg.mpc.gd_lr,
            "max_iters": cfg.mpc.gd_max_iters,
            "per_step_iterations": gd_iters,
            "median_iterations": gd_median,
            "max_iterations": gd_iters.iter().copied().max().unwrap_or(0),
            "histogram": histogram(&gd_iters),
            "converged_steps": count(Termination::Converged),
            "diverged_steps": count(Termination::Diverged),
            "max_iter_steps": count(Termination::MaxIters),
            "median_ratio": gd_median / alg_median,
            "median_strictly_lower": alg_median < gd_median,
            "tenfold": alg_median * 10.0 <= gd_median,
        })
    });

    let failure = trace.failure.as_ref().map(|f| json!({ "step": f.step, "reason": f.reason }));
    let doc = json!({
        "schema_version": SCHEMA_VERSION,
        "command": "run-mpc",
        "scenario": spec,
        "solver": mpc_cfg.solver,
        "warm_start": cfg.mpc.warm_start,
        "total_steps": spec.total_steps,
        "steps_completed": steps,
        "failure": failure,
        "steady_state": {
            "transient_s": cfg.mpc.transient_s,
            "samples": steady_pos.len(),
            "max_position_error": max_pos,
            "mean_position_error": mean_of(&steady_pos),
            "max_heading_error": max_head,
            "mean_heading_error": mean_of(&steady_head),
            "position_threshold": cfg.mpc.max_position_error,
            "heading_threshold": cfg.mpc.max_heading_error,
            "passed": tracking_ok,
        },
        "iterations": {
            "per_step": iters,
            "median": alg_median,
            "max": max_iters,
            "histogram": histogram(&iters),
            "escalations": trace.per_step_reports.iter().map(|r| r.escalations).sum::<usize>(),
            "all_converged": trace.per_step_reports.iter().all(SolveReport::converged),
        },
        "baseline": baseline_doc,
        "timing": timing.then(|| json!({
            "total_wall_ms": ms(total_wall),
            "max_step_ms": trace.per_step_wall_time.iter().map(|d| ms(*d)).fold(0.0, f64::max),
            "mean_step_ms": trace.per_step_wall_time.iter().map(|d| ms(*d)).sum::<f64>() / steps.max(1) as f64,
        })),
    });
    write_json(&out.join("report.json"), &doc)?;

    let mut summary = format!(
        "run-mpc: {steps}/{} steps, steady-state max position error {max_pos:.4e} m, max heading error {max_head:.4e} rad, median iterations {alg_median}, wall time {:.1} ms",
        spec.total_steps,
        ms(total_wall)
    );
    if let Some(b) = &baseline_doc {
        summary.push_str(&format!(
            ", baseline median {} (ratio {:.1})",
            b["median_iterations"], b["median_ratio"].as_f64().unwrap_or(f64::NAN)
        ));
    }
    if let Some(f) = &trace.failure {
        return Ok(Outcome::fail(format!(
            "{summary}\nsolver failure at step {}: {}",
            f.step, f.reason
        )));
    }
    Ok(if tracking_ok {
        Outcome::pass(summary)
    } else {
        Outcome::fail(format!("{summary}\ntracking error exceeds thresholds"))
    })
}

/// Render a check table and decide the exit code.
pub fn cmd_check_output(table: &CheckTable, seed: u64, out: Option<&Path>) -> Outcome {
    if let Some(dir) = out {
        let doc = json!({
            "schema_version": SCHEMA_VERSION,
            "command": "check",
            "seed": seed,
            "passed": table.passed(),
            "suites": table.suites.iter().map(|s| json!({
                "property": s.property,
                "cases": s.cases,
                "max_error": s.max_error,
                "tolerance": s.tolerance,
                "worst_case": s.worst_case,
                "failure": s.failure,
                "passed": s.passed(),
            })).collect::<Vec<_>>(),
        });
        if let Err(e) = ensure_dir(dir).and_then(|_| write_json(&dir.join("check_report.json"), &doc)) {
            return Outcome::usage(e);
        }
    }
    let mut message = format!("seed {seed}\n{table}");
    if table.passed() {
        message.push_str("all suites passed");
        Outcome::pass(message)
    } else {
        for s in table.failures() {
            message.push_str(&format!(
                "FAILED {} (seed {seed}): max error {:.3e} > {:.1e}{}\n",
                s.property,
                s.max_error,
                s.tolerance,
                s.failure.as_ref().map(|f| format!(" [{f}]")).unwrap_or_default()
            ));
        }
        Outcome::fail(message.trim_end().to_string())
    }
}
