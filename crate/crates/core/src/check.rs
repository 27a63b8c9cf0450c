//! Validation suites run by `ocp-fbde check`.
//!
//! Each suite compares one analytic quantity against an independent
//! oracle on a set of cases and reports the worst error seen.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::adjoint;
use crate::curvature::{CurvatureContext, RowIndex, SYMMETRY_TOL};
use crate::curvature::max_asymmetry;
use crate::error::{OcpError, Result};
use crate::oracles::{
    fd_gradient, fd_hessian, fd_state_sensitivity, oracle_agreement, rel_err, rel_err_mat,
    riccati_lqr,
};
use crate::problem::{DecisionVector, Dims, Problem, Vector};
use crate::scenarios::{
    build_lqr, build_unicycle_tracking, circle_reference, Circle, LqrSpec, RandomSmooth,
    Reference, UnicycleSpec,
};
use crate::solver::{minimize, SolverConfig};

pub const GRADIENT_TOL: f64 = 1e-5;
pub const HESSIAN_TOL: f64 = 1e-4;
pub const SENSITIVITY_TOL: f64 = 1e-5;
pub const ORACLE_TOL: f64 = 1e-5;
pub const RICCATI_TOL: f64 = 1e-4;

pub const FD_GRADIENT_STEP: f64 = 1e-6;
pub const FD_HESSIAN_STEP: f64 = 1e-5;
pub const FD_SENSITIVITY_STEP: f64 = 1e-6;

/// A problem with the points at which the suites evaluate it.
pub struct CheckCase {
    pub name: String,
    pub problem: Box<dyn Problem>,
    /// `(x0, z)` pairs for the gradient, Hessian and sensitivity suites.
    pub points: Vec<(Vector, DecisionVector)>,
    /// `(x, u, k)` samples for derivative-oracle agreement.
    pub oracle_points: Vec<(Vector, Vector, usize)>,
}

/// LQR instance checked against the Riccati optimum.
#[derive(Debug, Clone)]
pub struct RiccatiCase {
    pub name: String,
    pub spec: LqrSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteResult {
    pub property: &'static str,
    pub cases: usize,
    pub max_error: f64,
    pub tolerance: f64,
    /// Case with the largest error, or the case that raised an error.
    pub worst_case: String,
    pub failure: Option<String>,
}

impl SuiteResult {
    fn new(property: &'static str, tolerance: f64) -> Self {
        SuiteResult {
            property,
            cases: 0,
            max_error: 0.0,
            tolerance,
            worst_case: String::new(),
            failure: None,
        }
    }

    pub fn passed(&self) -> bool {
        self.failure.is_none() && self.max_error <= self.tolerance
    }

    fn record(&mut self, case: &str, outcome: Result<f64>) {
        self.cases += 1;
        match outcome {
            Ok(err) if err.is_nan() => {
                self.failure.get_or_insert_with(|| format!("{case}: NaN error"));
            }
            Ok(err) => {
                if err > self.max_error || self.worst_case.is_empty() {
                    self.max_error = self.max_error.max(err);
                    self.worst_case = case.to_string();
                }
            }
            Err(e) => {
                self.failure.get_or_insert_with(|| format!("{case}: {e}"));
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckTable {
    pub suites: Vec<SuiteResult>,
}

impl CheckTable {
    pub fn passed(&self) -> bool {
        self.suites.iter().all(SuiteResult::passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &SuiteResult> {
        self.suites.iter().filter(|s| !s.passed())
    }

    pub fn suite(&self, property: &str) -> Option<&SuiteResult> {
        self.suites.iter().find(|s| s.property == property)
    }
}

impl fmt::Display for CheckTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<22} {:>6} {:>12} {:>10}  {:<6} worst case",
            "property", "cases", "max error", "tolerance", "result"
        )?;
        for s in &self.suites {
            writeln!(
                f,
                "{:<22} {:>6} {:>12.3e} {:>10.1e}  {:<6} {}",
                s.property,
                s.cases,
                s.max_error,
                s.tolerance,
                if s.passed() { "PASS" } else { "FAIL" },
                s.failure.as_deref().unwrap_or(&s.worst_case),
            )?;
        }
        Ok(())
    }
}

fn gradient_error(p: &dyn Problem, x0: &Vector, z: &DecisionVector) -> Result<f64> {
    let (_, adj) = adjoint::gradient(p, x0, z)?;
    let fd = fd_gradient(p, x0, z, FD_GRADIENT_STEP)?;
    Ok(rel_err(&adj.gradient, &fd))
}

/// Returns (FD error, relative symmetry defect, β-sensitivity error).
fn curvature_errors(p: &dyn Problem, x0: &Vector, z: &DecisionVector) -> Result<(f64, f64, f64)> {
    let (roll, adj) = adjoint::gradient(p, x0, z)?;
    let ctx = CurvatureContext::new(p, &roll, &adj, z)?;
    let dim = z.len();
    let m = p.dims().m;
    let mut raw = crate::problem::Matrix::zeros(dim, dim);
    let mut beta_err: f64 = 0.0;
    for flat in 0..dim {
        let pass = ctx.row(RowIndex::from_flat(flat, m))?;
        raw.set_row(flat, &pass.row.transpose());
        let fd = fd_state_sensitivity(p, x0, z, flat, FD_SENSITIVITY_STEP)?;
        let stack = |v: &[Vector]| Vector::from_iterator(v.len() * v[0].len(), v.iter().flat_map(|s| s.iter().copied()));
        beta_err = beta_err.max(rel_err(&stack(&pass.betas), &stack(&fd)));
    }
    let (defect, _, _) = max_asymmetry(&raw);
    let symmetry = defect / (1.0 + raw.amax());
    let fd = fd_hessian(p, x0, z, FD_HESSIAN_STEP)?;
    let sym = (&raw + raw.transpose()) * 0.5;
    Ok((rel_err_mat(&sym, &fd), symmetry, beta_err))
}

fn riccati_error(spec: &LqrSpec, solver: &SolverConfig) -> Result<f64> {
    let p = build_lqr(spec)?;
    let x0 = p.initial_state();
    let report = minimize(&p, &x0, &DecisionVector::zeros(p.dims()), solver)?;
    if !report.converged() {
        return Err(OcpError::param(
            "solver",
            format!("did not converge ({:?})", report.termination),
        ));
    }
    let exact = riccati_lqr(spec.a, spec.b, spec.q, spec.r, spec.p_term, spec.horizon, spec.x0);
    let roll = crate::problem::roll_forward(&p, &x0, &report.z_final)?;
    let mut err: f64 = 0.0;
    for (k, u) in exact.controls.iter().enumerate() {
        err = err.max((report.z_final.as_slice()[k] - u).abs());
    }
    for (k, x) in exact.states.iter().enumerate() {
        err = err.max((roll.states[k][0] - x).abs());
    }
    Ok(err)
}

/// Run every suite over the given cases.
pub fn run_suites(cases: &[CheckCase], riccati: &[RiccatiCase], solver: &SolverConfig) -> CheckTable {
    let mut oracle = SuiteResult::new("FD-consistency", ORACLE_TOL);
    let mut grad = SuiteResult::new("FD-vs-adjoint", GRADIENT_TOL);
    let mut hess = SuiteResult::new("FD-vs-curvature", HESSIAN_TOL);
    let mut sym = SuiteResult::new("symmetry", SYMMETRY_TOL);
    let mut beta = SuiteResult::new("beta-sensitivity", SENSITIVITY_TOL);
    let mut ric = SuiteResult::new("Riccati-equivalence", RICCATI_TOL);

    for case in cases {
        let p = case.problem.as_ref();
        if !case.oracle_points.is_empty() {
            let agreement = oracle_agreement(p, case.oracle_points.iter().cloned());
            oracle.record(
                &case.name,
                Ok(agreement
                    .first_order
                    .max(agreement.second_order)
                    .max(agreement.asymmetry)),
            );
        }
        for (j, (x0, z)) in case.points.iter().enumerate() {
            let label = format!("{}#{}", case.name, j);
            grad.record(&label, gradient_error(p, x0, z));
            match curvature_errors(p, x0, z) {
                Ok((h, s, b)) => {
                    hess.record(&label, Ok(h));
                    sym.record(&label, Ok(s));
                    beta.record(&label, Ok(b));
                }
                Err(e) => {
                    hess.record(&label, Err(e.clone()));
                    sym.record(&label, Err(e.clone()));
                    beta.record(&label, Err(e));
                }
            }
        }
    }
    for case in riccati {
        ric.record(&case.name, riccati_error(&case.spec, solver));
    }

    CheckTable {
        suites: vec![oracle, grad, hess, sym, beta, ric],
    }
}

fn uniform(rng: &mut ChaCha8Rng, len: usize, half_width: f64) -> Vector {
    Vector::from_fn(len, |_, _| rng.random_range(-half_width..half_width))
}

fn random_case(problem: RandomSmooth, points: usize, oracle_points: usize) -> CheckCase {
    let dims = problem.dims();
    let seed = problem.seed();
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0xacce55));
    let pts = (0..points as u64).map(|s| problem.random_point(s)).collect();
    let opts = (0..oracle_points)
        .map(|_| {
            (
                uniform(&mut rng, dims.n, 1.0),
                uniform(&mut rng, dims.m, 1.0),
                rng.random_range(0..=dims.horizon),
            )
        })
        .collect();
    CheckCase {
        name: format!("random n={} m={} N={} seed={}", dims.n, dims.m, dims.horizon, seed),
        problem: Box::new(problem),
        points: pts,
        oracle_points: opts,
    }
}

/// Bundled scenarios: the default LQR and two unicycle tracking windows.
pub fn scenario_cases(seed: u64, oracle_points: usize) -> Vec<CheckCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5ce7a10);
    let mut cases = Vec::new();

    let lqr = build_lqr(&LqrSpec::default()).expect("default LQR");
    let dims = lqr.dims();
    let lqr_points = (0..3)
        .map(|_| {
            let z = DecisionVector::from_vector(dims, uniform(&mut rng, dims.decision_len(), 1.0)).unwrap();
            (uniform(&mut rng, 1, 3.0), z)
        })
        .collect();
    let lqr_oracle = (0..oracle_points)
        .map(|_| (uniform(&mut rng, 1, 3.0), uniform(&mut rng, 1, 3.0), rng.random_range(0..=dims.horizon)))
        .collect();
    cases.push(CheckCase {
        name: "lqr".into(),
        problem: Box::new(lqr),
        points: lqr_points,
        oracle_points: lqr_oracle,
    });

    let spec = UnicycleSpec::default();
    let circle = match &spec.reference {
        Reference::Circle(c) => c.clone(),
        Reference::Waypoints { .. } => Circle::default(),
    };
    for anchor in [0usize, 137] {
        let p = build_unicycle_tracking(&spec, anchor).expect("default unicycle");
        let dims = p.dims();
        let points = (0..3)
            .map(|_| {
                let mut z = uniform(&mut rng, dims.decision_len(), 1.0);
                for k in 0..dims.stages() {
                    z[k * 2] += 0.5;
                }
                let z = DecisionVector::from_vector(dims, z).unwrap();
                (spec.initial_state() + uniform(&mut rng, 3, 0.5), z)
            })
            .collect();
        let oracle = (0..oracle_points)
            .map(|_| {
                let k = rng.random_range(0..=dims.horizon);
                let r = circle_reference(&circle, spec.delta, anchor + k);
                let mut x = uniform(&mut rng, 3, 2.0);
                // keep the heading residual away from the ±π seam
                x[2] = r.state[2] + rng.random_range(-2.5..2.5);
                (x, uniform(&mut rng, 2, 2.0), k)
            })
            .collect();
        cases.push(CheckCase {
            name: format!("unicycle anchor={anchor}"),
            problem: Box::new(p),
            points,
            oracle_points: oracle,
        });
    }
    cases
}

/// Random cases: either `count` problems with sampled dimensions, or
/// `per_size` problems for each listed size.
pub fn random_cases(seed: u64, sizes: &[Dims], count: usize, per_size: usize) -> Vec<CheckCase> {
    if sizes.is_empty() {
        (0..count as u64)
            .map(|i| random_case(RandomSmooth::sample(seed.wrapping_mul(1000).wrapping_add(i)), 2, 10))
            .collect()
    } else {
        sizes
            .iter()
            .enumerate()
            .flat_map(|(si, dims)| {
                (0..per_size as u64).map(move |i| {
                    let s = seed.wrapping_mul(1000).wrapping_add(100 * si as u64 + i);
                    random_case(RandomSmooth::new(*dims, s), 2, 10)
                })
            })
            .collect()
    }
}

/// Paper-parameter LQR at `x0 ∈ {1, 2, 3}` plus seeded random LQR instances.
pub fn riccati_cases(seed: u64, random: usize) -> Vec<RiccatiCase> {
    let mut cases: Vec<RiccatiCase> = [1.0, 2.0, 3.0]
        .into_iter()
        .map(|x0| RiccatiCase {
            name: format!("lqr x0={x0}"),
            spec: LqrSpec {
                x0,
                ..LqrSpec::default()
            },
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x41cca7);
    for i in 0..random {
        let spec = LqrSpec {
            a: rng.random_range(0.5..2.0),
            b: rng.random_range(0.2..1.5),
            q: rng.random_range(0.0..2.0),
            r: rng.random_range(0.5..4.0),
            p_term: rng.random_range(0.0..4.0),
            horizon: rng.random_range(1..=15),
            x0: rng.random_range(-3.0..3.0),
        };
        cases.push(RiccatiCase {
            name: format!("random lqr #{i} seed={seed}"),
            spec,
        });
    }
    cases
}

/// Parse `"n x m x N"` triples separated by commas, e.g. `"1x1x0,3x2x8"`.
pub fn parse_sizes(list: &str) -> Result<Vec<Dims>> {
    list.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|item| {
            let parts: Vec<&str> = item.trim().split('x').collect();
            let parsed: Option<Vec<usize>> = parts.iter().map(|p| p.trim().parse().ok()).collect();
            match parsed.as_deref() {
                Some([n, m, horizon]) => Dims::new(*n, *m, *horizon),
                _ => Err(OcpError::param("sizes", format!("`{item}` is not of the form n x m x N"))),
            }
        })
        .collect()
}

/// Default suite: bundled scenarios, random problems, and Riccati cases.
pub fn default_check(seed: u64, sizes: &[Dims]) -> CheckTable {
    let mut cases = scenario_cases(seed, 100);
    cases.extend(random_cases(seed, sizes, 50, 5));
    run_suites(&cases, &riccati_cases(seed, 5), &SolverConfig::default())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes_parse() {
        let s = parse_sizes("1x1x0, 3x2x8").unwrap();
        assert_eq!(s, vec![Dims::new(1, 1, 0).unwrap(), Dims::new(3, 2, 8).unwrap()]);
        assert!(parse_sizes("3x2").is_err());
        assert!(parse_sizes("0x1x2").is_err());
    }

    #[test]
    fn degenerate_horizon_passes() {
        let cases = random_cases(3, &[Dims::new(1, 1, 0).unwrap()], 0, 3);
        let table = run_suites(&cases, &[], &SolverConfig::default());
        assert!(table.passed(), "{table}");
    }
}
