//! Receding-horizon driver: at every sampling step solve the horizon
//! problem from the current plant state, apply the first control, advance.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::clock::Stopwatch;
use crate::error::{OcpError, Result};
use crate::problem::{eval_dynamics, DecisionVector, Problem, Vector};
use crate::solver::{minimize, SolveReport, SolverConfig, Termination};

/// Initial guess for each horizon solve.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WarmStart {
    /// Start every solve from `z = 0`.
    #[default]
    Zero,
    /// Previous solution shifted one stage, last control repeated.
    Shift,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcConfig {
    /// Prediction horizon `N_p`.
    pub horizon: usize,
    /// Number of applied controls `N`.
    pub total_steps: usize,
    pub warm_start: WarmStart,
    pub solver: SolverConfig,
}

impl MpcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(OcpError::param("N_p", "must be >= 1"));
        }
        if self.total_steps == 0 {
            return Err(OcpError::param("N", "must be >= 1"));
        }
        self.solver.validate()
    }
}

/// Why a run stopped before `total_steps`.
#[derive(Debug, Clone, PartialEq)]
pub struct MpcFailure {
    pub step: usize,
    pub reason: String,
    /// Present when the solver returned a report.
    pub report: Option<SolveReport>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcTrace {
    /// Plant states `x_0, …`, one more than the applied controls.
    pub applied_states: Vec<Vector>,
    pub applied_controls: Vec<Vector>,
    pub per_step_reports: Vec<SolveReport>,
    pub per_step_wall_time: Vec<Duration>,
    pub failure: Option<MpcFailure>,
}

impl MpcTrace {
    pub fn completed(&self) -> bool {
        self.failure.is_none()
    }
}

/// Closed-loop run. `build(state, step)` returns the horizon problem
/// anchored at absolute sampling step `step`; the plant is advanced with
/// its own dynamics at that absolute step.
pub fn run_mpc<Pl, Q, B>(plant: &Pl, mut build: B, x0: &Vector, cfg: &MpcConfig) -> Result<MpcTrace>
where
    Pl: Problem + ?Sized,
    Q: Problem,
    B: FnMut(&Vector, usize) -> Result<Q>,
{
    cfg.validate()?;
    let mut trace = MpcTrace {
        applied_states: vec![x0.clone()],
        applied_controls: Vec::with_capacity(cfg.total_steps),
        per_step_reports: Vec::with_capacity(cfg.total_steps),
        per_step_wall_time: Vec::with_capacity(cfg.total_steps),
        failure: None,
    };
    let mut previous: Option<DecisionVector> = None;
    let mut x = x0.clone();

    for step in 0..cfg.total_steps {
        let ocp = build(&x, step)?;
        let dims = ocp.dims();
        if dims.horizon != cfg.horizon || dims.n != x.len() {
            return Err(OcpError::DimensionMismatch {
                what: "horizon problem",
                stage: Some(step),
                expected: cfg.horizon,
                got: dims.horizon,
            });
        }
        let z0 = match (cfg.warm_start, &previous) {
            (WarmStart::Shift, Some(z)) => z.shifted(),
            _ => DecisionVector::zeros(dims),
        };

        let started = Stopwatch::start();
        let report = match minimize(&ocp, &x, &z0, &cfg.solver) {
            Ok(r) => r,
            Err(e) => {
                trace.failure = Some(MpcFailure {
                    step,
                    reason: e.to_string(),
                    report: None,
                });
                break;
            }
        };
        let elapsed = started.elapsed();

        if matches!(
            report.termination,
            Termination::LinearSolveFailure | Termination::Diverged
        ) {
            trace.failure = Some(MpcFailure {
                step,
                reason: format!("solver terminated with {:?}", report.termination),
                report: Some(report),
            });
            break;
        }

        let u = report.z_final.control(0);
        let next = match eval_dynamics(plant, &x, &u, step) {
            Ok(v) => v,
            Err(e) => {
                trace.failure = Some(MpcFailure {
                    step,
                    reason: e.to_string(),
                    report: Some(report),
                });
                break;
            }
        };
        previous = Some(report.z_final.clone());
        trace.applied_controls.push(u);
        trace.per_step_reports.push(report);
        trace.per_step_wall_time.push(elapsed);
        trace.applied_states.push(next.clone());
        x = next;
    }
    Ok(trace)
}
