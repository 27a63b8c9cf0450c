//! Problem definition, decision-vector layout and forward rollout.
//!
//! A problem is a discrete-time system `x_{k+1} = F(x_k, u_k, k)` together
//! with a stage cost `Φ(x_k, u_k, k)` summed over stages `k = 0..=N`. The
//! decision vector stacks every control `u_0, …, u_N` into one flat vector.

use nalgebra::{DMatrix, DVector};

use crate::error::{OcpError, Result};

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

/// State dimension `n`, control dimension `m`, and last stage index `N`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub n: usize,
    pub m: usize,
    pub horizon: usize,
}

impl Dims {
    pub fn new(n: usize, m: usize, horizon: usize) -> Result<Self> {
        if n == 0 || m == 0 {
            return Err(OcpError::InvalidDims(format!(
                "state and control dimensions must be positive (n = {n}, m = {m})"
            )));
        }
        Ok(Dims { n, m, horizon })
    }

    /// Number of stages, `N + 1`.
    pub fn stages(&self) -> usize {
        self.horizon + 1
    }

    /// Length of the stacked control vector, `m (N + 1)`.
    pub fn decision_len(&self) -> usize {
        self.m * self.stages()
    }
}

/// Jacobians of the dynamics at one stage.
#[derive(Debug, Clone, PartialEq)]
pub struct Jacobians {
    /// `∂F/∂x`, n × n.
    pub fx: Matrix,
    /// `∂F/∂u`, n × m.
    pub fu: Matrix,
}

/// Gradient of the stage cost.
#[derive(Debug, Clone, PartialEq)]
pub struct CostGradient {
    pub x: Vector,
    pub u: Vector,
}

/// Second-derivative blocks of a scalar function of `(x, u)`.
///
/// Used both for the stage-cost Hessian and for the dynamics second
/// derivatives contracted against a costate-like vector `v`.
#[derive(Debug, Clone, PartialEq)]
pub struct SecondOrder {
    pub xx: Matrix,
    pub xu: Matrix,
    pub uu: Matrix,
}

impl SecondOrder {
    pub fn zeros(n: usize, m: usize) -> Self {
        SecondOrder {
            xx: Matrix::zeros(n, n),
            xu: Matrix::zeros(n, m),
            uu: Matrix::zeros(m, m),
        }
    }

    pub(crate) fn add_assign(&mut self, other: &SecondOrder) {
        self.xx += &other.xx;
        self.xu += &other.xu;
        self.uu += &other.uu;
    }
}

/// A discrete-time optimal control problem.
///
/// Implementations must be pure: the same arguments always give the same
/// result. The second-order oracles are optional; the Hessian computation
/// reports [`OcpError::MissingSecondOrder`] when they are absent.
pub trait Problem {
    fn dims(&self) -> Dims;

    /// Next state `F(x, u, k)`.
    fn dynamics(&self, x: &Vector, u: &Vector, k: usize) -> Vector;

    /// Stage cost `Φ(x, u, k)`.
    fn stage_cost(&self, x: &Vector, u: &Vector, k: usize) -> f64;

    fn d_dynamics(&self, x: &Vector, u: &Vector, k: usize) -> Jacobians;

    fn d_stage_cost(&self, x: &Vector, u: &Vector, k: usize) -> CostGradient;

    fn dd_stage_cost(&self, _x: &Vector, _u: &Vector, _k: usize) -> Option<SecondOrder> {
        None
    }

    /// Second derivatives of `v · F(x, u, k)`.
    fn dd_dynamics_contracted(
        &self,
        _v: &Vector,
        _x: &Vector,
        _u: &Vector,
        _k: usize,
    ) -> Option<SecondOrder> {
        None
    }
}

impl<P: Problem + ?Sized> Problem for &P {
    fn dims(&self) -> Dims {
        (**self).dims()
    }
    fn dynamics(&self, x: &Vector, u: &Vector, k: usize) -> Vector {
        (**self).dynamics(x, u, k)
    }
    fn stage_cost(&self, x: &Vector, u: &Vector, k: usize) -> f64 {
        (**self).stage_cost(x, u, k)
    }
    fn d_dynamics(&self, x: &Vector, u: &Vector, k: usize) -> Jacobians {
        (**self).d_dynamics(x, u, k)
    }
    fn d_stage_cost(&self, x: &Vector, u: &Vector, k: usize) -> CostGradient {
        (**self).d_stage_cost(x, u, k)
    }
    fn dd_stage_cost(&self, x: &Vector, u: &Vector, k: usize) -> Option<SecondOrder> {
        (**self).dd_stage_cost(x, u, k)
    }
    fn dd_dynamics_contracted(
        &self,
        v: &Vector,
        x: &Vector,
        u: &Vector,
        k: usize,
    ) -> Option<SecondOrder> {
        (**self).dd_dynamics_contracted(v, x, u, k)
    }
}

impl<P: Problem + ?Sized> Problem for Box<P> {
    fn dims(&self) -> Dims {
        (**self).dims()
    }
    fn dynamics(&self, x: &Vector, u: &Vector, k: usize) -> Vector {
        (**self).dynamics(x, u, k)
    }
    fn stage_cost(&self, x: &Vector, u: &Vector, k: usize) -> f64 {
        (**self).stage_cost(x, u, k)
    }
    fn d_dynamics(&self, x: &Vector, u: &Vector, k: usize) -> Jacobians {
        (**self).d_dynamics(x, u, k)
    }
    fn d_stage_cost(&self, x: &Vector, u: &Vector, k: usize) -> CostGradient {
        (**self).d_stage_cost(x, u, k)
    }
    fn dd_stage_cost(&self, x: &Vector, u: &Vector, k: usize) -> Option<SecondOrder> {
        (**self).dd_stage_cost(x, u, k)
    }
    fn dd_dynamics_contracted(
        &self,
        v: &Vector,
        x: &Vector,
        u: &Vector,
        k: usize,
    ) -> Option<SecondOrder> {
        (**self).dd_dynamics_contracted(v, x, u, k)
    }
}

/// Stacked controls `z = [u_0; u_1; …; u_N]`.
///
/// Component `p` of `u_k` lives at flat index `k·m + p`.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionVector {
    data: Vector,
    m: usize,
}

impl DecisionVector {
    pub fn zeros(dims: Dims) -> Self {
        DecisionVector {
            data: Vector::zeros(dims.decision_len()),
            m: dims.m,
        }
    }

    pub fn from_vector(dims: Dims, data: Vector) -> Result<Self> {
        if data.len() != dims.decision_len() {
            return Err(OcpError::DimensionMismatch {
                what: "decision vector",
                stage: None,
                expected: dims.decision_len(),
                got: data.len(),
            });
        }
        Ok(DecisionVector { data, m: dims.m })
    }

    pub fn from_slice(dims: Dims, data: &[f64]) -> Result<Self> {
        Self::from_vector(dims, Vector::from_column_slice(data))
    }

    pub fn control_dim(&self) -> usize {
        self.m
    }

    pub fn stages(&self) -> usize {
        self.data.len() / self.m
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn flat_index(&self, stage: usize, component: usize) -> usize {
        stage * self.m + component
    }

    /// Copy of `u_k`.
    pub fn control(&self, stage: usize) -> Vector {
        self.data.rows(stage * self.m, self.m).into_owned()
    }

    pub fn set_control(&mut self, stage: usize, u: &Vector) {
        self.data.rows_mut(stage * self.m, self.m).copy_from(u);
    }

    pub fn controls(&self) -> Vec<Vector> {
        (0..self.stages()).map(|k| self.control(k)).collect()
    }

    pub fn as_vector(&self) -> &Vector {
        &self.data
    }

    pub fn as_slice(&self) -> &[f64] {
        self.data.as_slice()
    }

    pub fn into_vector(self) -> Vector {
        self.data
    }

    /// Same layout, new data. Panics if the length differs.
    pub fn with_data(&self, data: Vector) -> Self {
        assert_eq!(data.len(), self.data.len(), "decision vector length");
        DecisionVector { data, m: self.m }
    }

    /// Shift by one stage and repeat the last control.
    pub fn shifted(&self) -> Self {
        let stages = self.stages();
        let mut out = self.clone();
        for k in 0..stages.saturating_sub(1) {
            out.set_control(k, &self.control(k + 1));
        }
        out
    }
}

/// States and stage costs produced by simulating a decision vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    /// `x_0, …, x_N`.
    pub states: Vec<Vector>,
    /// `Φ(x_k, u_k, k)` for `k = 0..=N`.
    pub stage_costs: Vec<f64>,
    pub total_cost: f64,
}

pub(crate) fn check_state(dims: Dims, x0: &Vector) -> Result<()> {
    if x0.len() != dims.n {
        return Err(OcpError::DimensionMismatch {
            what: "initial state",
            stage: None,
            expected: dims.n,
            got: x0.len(),
        });
    }
    Ok(())
}

pub(crate) fn check_decision(dims: Dims, z: &DecisionVector) -> Result<()> {
    if z.len() != dims.decision_len() || z.control_dim() != dims.m {
        return Err(OcpError::DimensionMismatch {
            what: "decision vector",
            stage: None,
            expected: dims.decision_len(),
            got: z.len(),
        });
    }
    Ok(())
}

pub(crate) fn all_finite<'a>(it: impl IntoIterator<Item = &'a f64>) -> bool {
    it.into_iter().all(|v| v.is_finite())
}

pub(crate) fn finite_or(stage: usize, origin: &'static str, ok: bool) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(OcpError::NonFinite { stage, origin })
    }
}

pub(crate) fn eval_dynamics<P: Problem + ?Sized>(
    p: &P,
    x: &Vector,
    u: &Vector,
    k: usize,
) -> Result<Vector> {
    let n = p.dims().n;
    let next = p.dynamics(x, u, k);
    if next.len() != n {
        return Err(OcpError::DimensionMismatch {
            what: "dynamics output",
            stage: Some(k),
            expected: n,
            got: next.len(),
        });
    }
    finite_or(k, "dynamics", all_finite(next.iter()))?;
    Ok(next)
}

pub(crate) fn eval_cost<P: Problem + ?Sized>(
    p: &P,
    x: &Vector,
    u: &Vector,
    k: usize,
) -> Result<f64> {
    let c = p.stage_cost(x, u, k);
    finite_or(k, "stage cost", c.is_finite())?;
    Ok(c)
}

pub(crate) fn eval_jacobians<P: Problem + ?Sized>(
    p: &P,
    x: &Vector,
    u: &Vector,
    k: usize,
) -> Result<Jacobians> {
    let d = p.dims();
    let j = p.d_dynamics(x, u, k);
    if j.fx.shape() != (d.n, d.n) || j.fu.shape() != (d.n, d.m) {
        return Err(OcpError::DimensionMismatch {
            what: "dynamics Jacobian",
            stage: Some(k),
            expected: d.n * (d.n + d.m),
            got: j.fx.len() + j.fu.len(),
        });
    }
    finite_or(
        k,
        "dynamics Jacobian",
        all_finite(j.fx.iter().chain(j.fu.iter())),
    )?;
    Ok(j)
}

pub(crate) fn eval_cost_gradient<P: Problem + ?Sized>(
    p: &P,
    x: &Vector,
    u: &Vector,
    k: usize,
) -> Result<CostGradient> {
    let d = p.dims();
    let g = p.d_stage_cost(x, u, k);
    if g.x.len() != d.n || g.u.len() != d.m {
        return Err(OcpError::DimensionMismatch {
            what: "stage cost gradient",
            stage: Some(k),
            expected: d.n + d.m,
            got: g.x.len() + g.u.len(),
        });
    }
    finite_or(
        k,
        "stage cost gradient",
        all_finite(g.x.iter().chain(g.u.iter())),
    )?;
    Ok(g)
}

fn check_second_order(
    d: Dims,
    s: &SecondOrder,
    k: usize,
    origin: &'static str,
) -> Result<()> {
    if s.xx.shape() != (d.n, d.n) || s.xu.shape() != (d.n, d.m) || s.uu.shape() != (d.m, d.m) {
        return Err(OcpError::DimensionMismatch {
            what: origin,
            stage: Some(k),
            expected: (d.n + d.m) * (d.n + d.m),
            got: s.xx.len() + 2 * s.xu.len() + s.uu.len(),
        });
    }
    finite_or(
        k,
        origin,
        all_finite(s.xx.iter().chain(s.xu.iter()).chain(s.uu.iter())),
    )
}

pub(crate) fn eval_cost_hessian<P: Problem + ?Sized>(
    p: &P,
    x: &Vector,
    u: &Vector,
    k: usize,
) -> Result<SecondOrder> {
    let s = p
        .dd_stage_cost(x, u, k)
        .ok_or(OcpError::MissingSecondOrder)?;
    check_second_order(p.dims(), &s, k, "stage cost Hessian")?;
    Ok(s)
}

pub(crate) fn eval_dynamics_curvature<P: Problem + ?Sized>(
    p: &P,
    v: &Vector,
    x: &Vector,
    u: &Vector,
    k: usize,
) -> Result<SecondOrder> {
    let s = p
        .dd_dynamics_contracted(v, x, u, k)
        .ok_or(OcpError::MissingSecondOrder)?;
    check_second_order(p.dims(), &s, k, "contracted dynamics curvature")?;
    Ok(s)
}

/// Simulate `z` from `x0` and accumulate the stage costs.
pub fn roll_forward<P: Problem + ?Sized>(
    p: &P,
    x0: &Vector,
    z: &DecisionVector,
) -> Result<Rollout> {
    let dims = p.dims();
    check_state(dims, x0)?;
    check_decision(dims, z)?;

    let mut states = Vec::with_capacity(dims.stages());
    let mut stage_costs = Vec::with_capacity(dims.stages());
    let mut x = x0.clone();
    for k in 0..dims.stages() {
        let u = z.control(k);
        stage_costs.push(eval_cost(p, &x, &u, k)?);
        if k < dims.horizon {
            let next = eval_dynamics(p, &x, &u, k)?;
            states.push(std::mem::replace(&mut x, next));
        } else {
            states.push(x.clone());
        }
    }
    let total_cost = stage_costs.iter().sum();
    Ok(Rollout {
        states,
        stage_costs,
        total_cost,
    })
}

/// `J(x0, z)`.
pub fn eval_total_cost<P: Problem + ?Sized>(p: &P, x0: &Vector, z: &DecisionVector) -> Result<f64> {
    roll_forward(p, x0, z).map(|r| r.total_cost)
}

/// Default relative step for first derivatives in [`FdProblem`].
pub const FD_STEP: f64 = 1e-6;
/// Default relative step for the nested second-derivative differences.
pub const FD_SECOND_STEP: f64 = 1e-4;

/// A problem whose derivative oracles are central finite differences of
/// its dynamics and stage cost.
pub struct FdProblem<F, C> {
    dims: Dims,
    dynamics: F,
    cost: C,
    step: f64,
    second_step: f64,
}

/// Build a derivative-free problem. `step` is the relative step for first
/// derivatives; second derivatives use [`FD_SECOND_STEP`].
pub fn make_fd_problem<F, C>(dims: Dims, dynamics: F, cost: C, step: f64) -> Result<FdProblem<F, C>>
where
    F: Fn(&Vector, &Vector, usize) -> Vector,
    C: Fn(&Vector, &Vector, usize) -> f64,
{
    if !(step > 0.0 && step.is_finite()) {
        return Err(OcpError::param("step", "must be positive"));
    }
    Ok(FdProblem {
        dims,
        dynamics,
        cost,
        step,
        second_step: FD_SECOND_STEP,
    })
}

impl<F, C> FdProblem<F, C> {
    pub fn with_second_step(mut self, step: f64) -> Self {
        self.second_step = step;
        self
    }
}

fn scaled_step(rel: f64, value: f64) -> f64 {
    rel * value.abs().max(1.0)
}

/// Central-difference Jacobian of `f` at `at`, one column per coordinate.
fn fd_jacobian(f: impl Fn(&Vector) -> Vector, at: &Vector, rows: usize, rel: f64) -> Matrix {
    let mut jac = Matrix::zeros(rows, at.len());
    for j in 0..at.len() {
        let h = scaled_step(rel, at[j]);
        let mut plus = at.clone();
        plus[j] += h;
        let mut minus = at.clone();
        minus[j] -= h;
        let col = (f(&plus) - f(&minus)) / (2.0 * h);
        jac.set_column(j, &col);
    }
    jac
}

fn fd_gradient_of(f: impl Fn(&Vector) -> f64, at: &Vector, rel: f64) -> Vector {
    Vector::from_fn(at.len(), |j, _| {
        let h = scaled_step(rel, at[j]);
        let mut plus = at.clone();
        plus[j] += h;
        let mut minus = at.clone();
        minus[j] -= h;
        (f(&plus) - f(&minus)) / (2.0 * h)
    })
}

/// Nested central differences of a scalar function of `w = [x; u]`.
fn fd_hessian_blocks(g: impl Fn(&Vector, &Vector) -> f64, x: &Vector, u: &Vector, rel: f64) -> SecondOrder {
    let n = x.len();
    let m = u.len();
    let w = Vector::from_iterator(n + m, x.iter().chain(u.iter()).copied());
    let eval = |w: &Vector| g(&w.rows(0, n).into_owned(), &w.rows(n, m).into_owned());
    let steps: Vec<f64> = w.iter().map(|v| scaled_step(rel, *v)).collect();

    let mut full = Matrix::zeros(n + m, n + m);
    for i in 0..n + m {
        for j in i..n + m {
            let at = |si: f64, sj: f64| {
                let mut p = w.clone();
                p[i] += si * steps[i];
                p[j] += sj * steps[j];
                eval(&p)
            };
            let v = (at(1.0, 1.0) - at(1.0, -1.0) - at(-1.0, 1.0) + at(-1.0, -1.0))
                / (4.0 * steps[i] * steps[j]);
            full[(i, j)] = v;
            full[(j, i)] = v;
        }
    }
    SecondOrder {
        xx: full.view((0, 0), (n, n)).into_owned(),
        xu: full.view((0, n), (n, m)).into_owned(),
        uu: full.view((n, n), (m, m)).into_owned(),
    }
}

impl<F, C> Problem for FdProblem<F, C>
where
    F: Fn(&Vector, &Vector, usize) -> Vector,
    C: Fn(&Vector, &Vector, usize) -> f64,
{
    fn dims(&self) -> Dims {
        self.dims
    }

    fn dynamics(&self, x: &Vector, u: &Vector, k: usize) -> Vector {
        (self.dynamics)(x, u, k)
    }

    fn stage_cost(&self, x: &Vector, u: &Vector, k: usize) -> f64 {
        (self.cost)(x, u, k)
    }

    fn d_dynamics(&self, x: &Vector, u: &Vector, k: usize) -> Jacobians {
        let n = self.dims.n;
        Jacobians {
            fx: fd_jacobian(|xp| (self.dynamics)(xp, u, k), x, n, self.step),
            fu: fd_jacobian(|up| (self.dynamics)(x, up, k), u, n, self.step),
        }
    }

    fn d_stage_cost(&self, x: &Vector, u: &Vector, k: usize) -> CostGradient {
        CostGradient {
            x: fd_gradient_of(|xp| (self.cost)(xp, u, k), x, self.step),
            u: fd_gradient_of(|up| (self.cost)(x, up, k), u, self.step),
        }
    }

    fn dd_stage_cost(&self, x: &Vector, u: &Vector, k: usize) -> Option<SecondOrder> {
        Some(fd_hessian_blocks(
            |xp, up| (self.cost)(xp, up, k),
            x,
            u,
            self.second_step,
        ))
    }

    fn dd_dynamics_contracted(
        &self,
        v: &Vector,
        x: &Vector,
        u: &Vector,
        k: usize,
    ) -> Option<SecondOrder> {
        Some(fd_hessian_blocks(
            |xp, up| v.dot(&(self.dynamics)(xp, up, k)),
            x,
            u,
            self.second_step,
        ))
    }
}

/// Finite-difference twin of an existing problem: same dynamics and cost,
/// derivative oracles replaced by central differences.
pub fn fd_twin<P: Problem + ?Sized>(
    p: &P,
) -> FdProblem<impl Fn(&Vector, &Vector, usize) -> Vector + '_, impl Fn(&Vector, &Vector, usize) -> f64 + '_>
{
    FdProblem {
        dims: p.dims(),
        dynamics: move |x: &Vector, u: &Vector, k: usize| p.dynamics(x, u, k),
        cost: move |x: &Vector, u: &Vector, k: usize| p.stage_cost(x, u, k),
        step: FD_STEP,
        second_step: FD_SECOND_STEP,
    }
}
