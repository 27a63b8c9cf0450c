//! Bundled problems: scalar LQR, unicycle trajectory tracking, and a seeded
//! family of random smooth problems used by the validation suites.

use std::f64::consts::PI;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{OcpError, Result};
use crate::problem::{CostGradient, Dims, Jacobians, Matrix, Problem, SecondOrder, Vector};

/// Scalar system `x' = a x + b u` with cost `Σ_{k<N} (q x² + r u²) + p x_N²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LqrSpec {
    pub a: f64,
    pub b: f64,
    pub q: f64,
    pub r: f64,
    #[serde(rename = "p")]
    pub p_term: f64,
    #[serde(rename = "N")]
    pub horizon: usize,
    pub x0: f64,
}

impl Default for LqrSpec {
    fn default() -> Self {
        LqrSpec {
            a: 1.8,
            b: 0.9,
            q: 1.0,
            r: 3.0,
            p_term: 3.0,
            horizon: 15,
            x0: 1.0,
        }
    }
}

impl LqrSpec {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [("a", self.a), ("b", self.b), ("x0", self.x0)] {
            if !v.is_finite() {
                return Err(OcpError::param(field, "must be finite"));
            }
        }
        if !(self.r > 0.0 && self.r.is_finite()) {
            return Err(OcpError::param("r", "must be > 0"));
        }
        if !(self.q >= 0.0 && self.q.is_finite()) {
            return Err(OcpError::param("q", "must be >= 0"));
        }
        if !(self.p_term >= 0.0 && self.p_term.is_finite()) {
            return Err(OcpError::param("p", "must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Lqr {
    spec: LqrSpec,
    dims: Dims,
}

impl Lqr {
    pub fn spec(&self) -> &LqrSpec {
        &self.spec
    }

    pub fn initial_state(&self) -> Vector {
        Vector::from_element(1, self.spec.x0)
    }
}

pub fn build_lqr(spec: &LqrSpec) -> Result<Lqr> {
    spec.validate()?;
    Ok(Lqr {
        spec: spec.clone(),
        dims: Dims::new(1, 1, spec.horizon)?,
    })
}

fn scalar(v: f64) -> Vector {
    Vector::from_element(1, v)
}

fn mat1(v: f64) -> Matrix {
    Matrix::from_element(1, 1, v)
}

impl Problem for Lqr {
    fn dims(&self) -> Dims {
        self.dims
    }

    fn dynamics(&self, x: &Vector, u: &Vector, _k: usize) -> Vector {
        scalar(self.spec.a * x[0] + self.spec.b * u[0])
    }

    fn stage_cost(&self, x: &Vector, u: &Vector, k: usize) -> f64 {
        let s = &self.spec;
        if k < s.horizon {
            s.q * x[0] * x[0] + s.r * u[0] * u[0]
        } else {
            s.p_term * x[0] * x[0]
        }
    }

    fn d_dynamics(&self, _x: &Vector, _u: &Vector, _k: usize) -> Jacobians {
        Jacobians {
            fx: mat1(self.spec.a),
            fu: mat1(self.spec.b),
        }
    }

    fn d_stage_cost(&self, x: &Vector, u: &Vector, k: usize) -> CostGradient {
        let s = &self.spec;
        if k < s.horizon {
            CostGradient {
                x: scalar(2.0 * s.q * x[0]),
                u: scalar(2.0 * s.r * u[0]),
            }
        } else {
            CostGradient {
                x: scalar(2.0 * s.p_term * x[0]),
                u: scalar(0.0),
            }
        }
    }

    fn dd_stage_cost(&self, _x: &Vector, _u: &Vector, k: usize) -> Option<SecondOrder> {
        let s = &self.spec;
        let (xx, uu) = if k < s.horizon {
            (2.0 * s.q, 2.0 * s.r)
        } else {
            (2.0 * s.p_term, 0.0)
        };
        Some(SecondOrder {
            xx: mat1(xx),
            xu: mat1(0.0),
            uu: mat1(uu),
        })
    }

    fn dd_dynamics_contracted(
        &self,
        _v: &Vector,
        _x: &Vector,
        _u: &Vector,
        _k: usize,
    ) -> Option<SecondOrder> {
        Some(SecondOrder::zeros(1, 1))
    }
}

/// Wrap an angle to `(−π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let r = (a + PI).rem_euclid(2.0 * PI) - PI;
    if r <= -PI {
        r + 2.0 * PI
    } else {
        r
    }
}

/// Circular reference traversed counter-clockwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Circle {
    pub center: [f64; 2],
    pub radius: f64,
    pub angular_rate: f64,
}

impl Default for Circle {
    fn default() -> Self {
        Circle {
            center: [0.0, 0.0],
            radius: 1.0,
            angular_rate: 0.3,
        }
    }
}

/// Reference pose `[x_r, y_r, θ_r]` and controls `[v_r, ω_r]` at a step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferencePoint {
    pub state: [f64; 3],
    pub control: [f64; 2],
}

pub fn circle_reference(circle: &Circle, delta: f64, step: usize) -> ReferencePoint {
    let t = step as f64 * delta;
    let phase = circle.angular_rate * t;
    ReferencePoint {
        state: [
            circle.center[0] + circle.radius * phase.cos(),
            circle.center[1] + circle.radius * phase.sin(),
            wrap_angle(phase + PI / 2.0),
        ],
        control: [circle.radius * circle.angular_rate, circle.angular_rate],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Reference {
    Circle(Circle),
    /// One row per step; the last row is held past the end of the table.
    Waypoints { points: Vec<ReferencePoint> },
}

impl Default for Reference {
    fn default() -> Self {
        Reference::Circle(Circle::default())
    }
}

impl Reference {
    pub fn at(&self, delta: f64, step: usize) -> ReferencePoint {
        match self {
            Reference::Circle(c) => circle_reference(c, delta, step),
            Reference::Waypoints { points } => points[step.min(points.len() - 1)],
        }
    }
}

/// Unicycle tracking problem parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UnicycleSpec {
    pub delta: f64,
    #[serde(rename = "N")]
    pub total_steps: usize,
    #[serde(rename = "N_p")]
    pub horizon: usize,
    #[serde(rename = "X0")]
    pub x0: [f64; 3],
    #[serde(rename = "Q")]
    pub q_weights: [f64; 3],
    #[serde(rename = "R")]
    pub r_weights: [f64; 2],
    pub r_reg: f64,
    pub reference: Reference,
}

impl Default for UnicycleSpec {
    fn default() -> Self {
        UnicycleSpec {
            delta: 0.05,
            total_steps: 410,
            horizon: 10,
            x0: [1.0, 0.5, 1.0],
            q_weights: [150.0, 150.0, 3.0],
            r_weights: [0.5, 0.5],
            r_reg: 0.1,
            reference: Reference::default(),
        }
    }
}

impl UnicycleSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(OcpError::param("delta", "must be > 0"));
        }
        if self.horizon == 0 {
            return Err(OcpError::param("N_p", "must be >= 1"));
        }
        if self.total_steps == 0 {
            return Err(OcpError::param("N", "must be >= 1"));
        }
        if self.horizon > self.total_steps {
            return Err(OcpError::param("N_p", "prediction horizon exceeds N"));
        }
        if self.x0.iter().any(|v| !v.is_finite()) {
            return Err(OcpError::param("X0", "must be finite"));
        }
        if self.q_weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(OcpError::param("Q", "weights must be >= 0"));
        }
        if self.r_weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(OcpError::param("R", "weights must be > 0"));
        }
        if !(self.r_reg > 0.0 && self.r_reg.is_finite()) {
            return Err(OcpError::param("r_reg", "must be > 0"));
        }
        match &self.reference {
            Reference::Circle(c) => {
                if !(c.radius > 0.0 && c.radius.is_finite()) {
                    return Err(OcpError::param("reference.radius", "must be > 0"));
                }
                if !c.angular_rate.is_finite() || c.center.iter().any(|v| !v.is_finite()) {
                    return Err(OcpError::param("reference", "must be finite"));
                }
            }
            Reference::Waypoints { points } => {
                if points.is_empty() {
                    return Err(OcpError::param("reference.points", "must not be empty"));
                }
            }
        }
        Ok(())
    }

    pub fn initial_state(&self) -> Vector {
        Vector::from_column_slice(&self.x0)
    }
}

/// Forward-Euler unicycle with a quadratic tracking cost over one
/// prediction window. Stage `k` of the window tracks the reference at
/// absolute step `anchor + k`; the last stage carries state error only.
#[derive(Debug, Clone)]
pub struct UnicycleTracking {
    dims: Dims,
    delta: f64,
    q: [f64; 3],
    r: [f64; 2],
    refs: Vec<ReferencePoint>,
}

pub fn build_unicycle_tracking(spec: &UnicycleSpec, anchor_step: usize) -> Result<UnicycleTracking> {
    spec.validate()?;
    if anchor_step >= spec.total_steps {
        return Err(OcpError::param(
            "anchor_step",
            format!("{anchor_step} is past the last sampling step {}", spec.total_steps - 1),
        ));
    }
    let refs = (0..=spec.horizon)
        .map(|k| spec.reference.at(spec.delta, anchor_step + k))
        .collect();
    Ok(UnicycleTracking {
        dims: Dims::new(3, 2, spec.horizon)?,
        delta: spec.delta,
        q: spec.q_weights,
        r: spec.r_weights,
        refs,
    })
}

/// Plant model over the whole run; only the dynamics are meaningful.
pub fn unicycle_plant(spec: &UnicycleSpec) -> Result<UnicycleTracking> {
    spec.validate()?;
    Ok(UnicycleTracking {
        dims: Dims::new(3, 2, spec.total_steps)?,
        delta: spec.delta,
        q: [0.0; 3],
        r: [0.0; 2],
        refs: vec![spec.reference.at(spec.delta, 0)],
    })
}

impl UnicycleTracking {
    pub fn reference(&self, k: usize) -> &ReferencePoint {
        &self.refs[k.min(self.refs.len() - 1)]
    }

    fn state_error(&self, x: &Vector, k: usize) -> [f64; 3] {
        let r = self.reference(k).state;
        [x[0] - r[0], x[1] - r[1], wrap_angle(x[2] - r[2])]
    }

    fn control_error(&self, u: &Vector, k: usize) -> [f64; 2] {
        let r = self.reference(k).control;
        [u[0] - r[0], u[1] - r[1]]
    }

    fn penalizes_control(&self, k: usize) -> bool {
        k < self.dims.horizon
    }
}

impl Problem for UnicycleTracking {
    fn dims(&self) -> Dims {
        self.dims
    }

    fn dynamics(&self, x: &Vector, u: &Vector, _k: usize) -> Vector {
        let (s, c) = x[2].sin_cos();
        Vector::from_column_slice(&[
            x[0] + self.delta * u[0] * c,
            x[1] + self.delta * u[0] * s,
            x[2] + self.delta * u[1],
        ])
    }

    fn stage_cost(&self, x: &Vector, u: &Vector, k: usize) -> f64 {
        let e = self.state_error(x, k);
        let mut cost: f64 = (0..3).map(|i| self.q[i] * e[i] * e[i]).sum();
        if self.penalizes_control(k) {
            let w = self.control_error(u, k);
            cost += (0..2).map(|i| self.r[i] * w[i] * w[i]).sum::<f64>();
        }
        cost
    }

    fn d_dynamics(&self, x: &Vector, u: &Vector, _k: usize) -> Jacobians {
        let d = self.delta;
        let (s, c) = x[2].sin_cos();
        #[rustfmt::skip]
        let fx = Matrix::from_row_slice(3, 3, &[
            1.0, 0.0, -d * u[0] * s,
            0.0, 1.0,  d * u[0] * c,
            0.0, 0.0,  1.0,
        ]);
        #[rustfmt::skip]
        let fu = Matrix::from_row_slice(3, 2, &[
            d * c, 0.0,
            d * s, 0.0,
            0.0,   d,
        ]);
        Jacobians { fx, fu }
    }

    fn d_stage_cost(&self, x: &Vector, u: &Vector, k: usize) -> CostGradient {
        let e = self.state_error(x, k);
        let gx = Vector::from_fn(3, |i, _| 2.0 * self.q[i] * e[i]);
        let gu = if self.penalizes_control(k) {
            let w = self.control_error(u, k);
            Vector::from_fn(2, |i, _| 2.0 * self.r[i] * w[i])
        } else {
            Vector::zeros(2)
        };
        CostGradient { x: gx, u: gu }
    }

    fn dd_stage_cost(&self, _x: &Vector, _u: &Vector, k: usize) -> Option<SecondOrder> {
        let xx = Matrix::from_diagonal(&Vector::from_fn(3, |i, _| 2.0 * self.q[i]));
        let uu = if self.penalizes_control(k) {
            Matrix::from_diagonal(&Vector::from_fn(2, |i, _| 2.0 * self.r[i]))
        } else {
            Matrix::zeros(2, 2)
        };
        Some(SecondOrder {
            xx,
            xu: Matrix::zeros(3, 2),
            uu,
        })
    }

    fn dd_dynamics_contracted(
        &self,
        v: &Vector,
        x: &Vector,
        u: &Vector,
        _k: usize,
    ) -> Option<SecondOrder> {
        let d = self.delta;
        let (s, c) = x[2].sin_cos();
        let mut out = SecondOrder::zeros(3, 2);
        // ∂²x'/∂θ² = −Δ v cosθ, ∂²y'/∂θ² = −Δ v sinθ
        out.xx[(2, 2)] = -d * u[0] * (v[0] * c + v[1] * s);
        // ∂²x'/∂θ∂v = −Δ sinθ, ∂²y'/∂θ∂v = Δ cosθ
        out.xu[(2, 0)] = d * (-v[0] * s + v[1] * c);
        Some(out)
    }
}

/// Distance to the reference position and wrapped heading residual.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackingError {
    pub position: f64,
    pub heading: f64,
}

pub fn tracking_error(spec: &UnicycleSpec, state: &Vector, step: usize) -> TrackingError {
    let r = spec.reference.at(spec.delta, step);
    TrackingError {
        position: (state[0] - r.state[0]).hypot(state[1] - r.state[1]),
        heading: wrap_angle(state[2] - r.state[2]),
    }
}

/// Random smooth problem with trigonometric nonlinearities in both the
/// dynamics and the cost, time-varying through `k`.
///
/// `F_j(x, u, k) = (A x + B u)_j + s_j sin(a_jᵀ x + b_jᵀ u) + d_j sin(k)`
/// `Φ(x, u, k) = w_k (xᵀ Q x + uᵀ R u + cₓᵀ x + c_uᵀ u + γ (1 − cos(wₓᵀ x + w_uᵀ u)))`
#[derive(Debug, Clone)]
pub struct RandomSmooth {
    dims: Dims,
    a: Matrix,
    b: Matrix,
    amp: Vector,
    phase_x: Matrix,
    phase_u: Matrix,
    drift: Vector,
    q: Matrix,
    r: Matrix,
    lin_x: Vector,
    lin_u: Vector,
    gamma: f64,
    wave_x: Vector,
    wave_u: Vector,
    seed: u64,
}

fn uniform_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(lo..hi))
}

fn uniform_vector(rng: &mut ChaCha8Rng, len: usize, lo: f64, hi: f64) -> Vector {
    DVector::from_fn(len, |_, _| rng.random_range(lo..hi))
}

fn spd(rng: &mut ChaCha8Rng, dim: usize, floor: f64) -> Matrix {
    let l = uniform_matrix(rng, dim, dim, -0.5, 0.5);
    &l * l.transpose() + Matrix::identity(dim, dim) * floor
}

impl RandomSmooth {
    pub fn new(dims: Dims, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, m) = (dims.n, dims.m);
        let a = uniform_matrix(&mut rng, n, n, -0.4, 0.4) + Matrix::identity(n, n) * 0.6;
        let b = uniform_matrix(&mut rng, n, m, -1.0, 1.0);
        let amp = uniform_vector(&mut rng, n, 0.2, 0.6);
        let phase_x = uniform_matrix(&mut rng, n, n, -1.0, 1.0);
        let phase_u = uniform_matrix(&mut rng, n, m, -1.0, 1.0);
        let drift = uniform_vector(&mut rng, n, -0.1, 0.1);
        let q = spd(&mut rng, n, 0.2);
        let r = spd(&mut rng, m, 0.5);
        let lin_x = uniform_vector(&mut rng, n, -1.0, 1.0);
        let lin_u = uniform_vector(&mut rng, m, -1.0, 1.0);
        let gamma = rng.random_range(0.1..0.5);
        let wave_x = uniform_vector(&mut rng, n, -1.0, 1.0);
        let wave_u = uniform_vector(&mut rng, m, -1.0, 1.0);
        RandomSmooth {
            dims,
            a,
            b,
            amp,
            phase_x,
            phase_u,
            drift,
            q,
            r,
            lin_x,
            lin_u,
            gamma,
            wave_x,
            wave_u,
            seed,
        }
    }

    /// Dimensions drawn from `n ≤ 4`, `m ≤ 3`, `N ≤ 12`.
    pub fn sample(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0dd5);
        let dims = Dims::new(
            rng.random_range(1..=4),
            rng.random_range(1..=3),
            rng.random_range(0..=12),
        )
        .expect("positive dimensions");
        Self::new(dims, seed)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// A random initial state and decision vector for this problem.
    pub fn random_point(&self, salt: u64) -> (Vector, crate::problem::DecisionVector) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed.wrapping_mul(31).wrapping_add(salt));
        let x0 = uniform_vector(&mut rng, self.dims.n, -1.0, 1.0);
        let z = uniform_vector(&mut rng, self.dims.decision_len(), -1.0, 1.0);
        let z = crate::problem::DecisionVector::from_vector(self.dims, z).expect("matching length");
        (x0, z)
    }

    fn weight(&self, k: usize) -> f64 {
        1.0 + 0.1 * k as f64
    }

    fn phases(&self, x: &Vector, u: &Vector) -> Vector {
        &self.phase_x * x + &self.phase_u * u
    }

    fn wave(&self, x: &Vector, u: &Vector) -> f64 {
        self.wave_x.dot(x) + self.wave_u.dot(u)
    }
}

impl Problem for RandomSmooth {
    fn dims(&self) -> Dims {
        self.dims
    }

    fn dynamics(&self, x: &Vector, u: &Vector, k: usize) -> Vector {
        let phi = self.phases(x, u);
        &self.a * x + &self.b * u + self.amp.component_mul(&phi.map(f64::sin)) + &self.drift * (k as f64).sin()
    }

    fn stage_cost(&self, x: &Vector, u: &Vector, k: usize) -> f64 {
        let quad = x.dot(&(&self.q * x)) + u.dot(&(&self.r * u));
        let lin = self.lin_x.dot(x) + self.lin_u.dot(u);
        self.weight(k) * (quad + lin + self.gamma * (1.0 - self.wave(x, u).cos()))
    }

    fn d_dynamics(&self, x: &Vector, u: &Vector, _k: usize) -> Jacobians {
        let scale = self.amp.component_mul(&self.phases(x, u).map(f64::cos));
        let diag = Matrix::from_diagonal(&scale);
        Jacobians {
            fx: &self.a + &diag * &self.phase_x,
            fu: &self.b + &diag * &self.phase_u,
        }
    }

    fn d_stage_cost(&self, x: &Vector, u: &Vector, k: usize) -> CostGradient {
        let w = self.weight(k);
        let s = self.gamma * self.wave(x, u).sin();
        CostGradient {
            x: (&self.q * x * 2.0 + &self.lin_x + &self.wave_x * s) * w,
            u: (&self.r * u * 2.0 + &self.lin_u + &self.wave_u * s) * w,
        }
    }

    fn dd_stage_cost(&self, x: &Vector, u: &Vector, k: usize) -> Option<SecondOrder> {
        let w = self.weight(k);
        let c = self.gamma * self.wave(x, u).cos();
        Some(SecondOrder {
            xx: (&self.q * 2.0 + &self.wave_x * self.wave_x.transpose() * c) * w,
            xu: (&self.wave_x * self.wave_u.transpose() * c) * w,
            uu: (&self.r * 2.0 + &self.wave_u * self.wave_u.transpose() * c) * w,
        })
    }

    fn dd_dynamics_contracted(
        &self,
        v: &Vector,
        x: &Vector,
        u: &Vector,
        _k: usize,
    ) -> Option<SecondOrder> {
        // Σ_j v_j s_j (−sin φ_j) [a_j; b_j][a_j; b_j]ᵀ
        let weights = -v.component_mul(&self.amp).component_mul(&self.phases(x, u).map(f64::sin));
        let wd = Matrix::from_diagonal(&weights);
        Some(SecondOrder {
            xx: self.phase_x.transpose() * &wd * &self.phase_x,
            xu: self.phase_x.transpose() * &wd * &self.phase_u,
            uu: self.phase_u.transpose() * &wd * &self.phase_u,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{roll_forward, DecisionVector};
    use approx::assert_abs_diff_eq;

    #[test]
    fn lqr_spec_validation_names_fields() {
        let bad = LqrSpec {
            r: -1.0,
            ..LqrSpec::default()
        };
        match build_lqr(&bad).unwrap_err() {
            OcpError::InvalidParameter { field, .. } => assert_eq!(field, "r"),
            e => panic!("{e:?}"),
        }
        assert!(build_lqr(&LqrSpec {
            q: -0.1,
            ..LqrSpec::default()
        })
        .is_err());
    }

    #[test]
    fn wrap_angle_range() {
        assert_abs_diff_eq!(wrap_angle(PI), PI);
        assert_abs_diff_eq!(wrap_angle(-PI), PI);
        assert_abs_diff_eq!(wrap_angle(3.0 * PI / 2.0), -PI / 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(wrap_angle(0.25), 0.25);
        for i in -100..100 {
            let w = wrap_angle(i as f64 * 0.37);
            assert!(w > -PI && w <= PI);
        }
    }

    #[test]
    fn circle_reference_at_start() {
        let r = circle_reference(&Circle::default(), 0.05, 0);
        assert_abs_diff_eq!(r.state[0], 1.0);
        assert_abs_diff_eq!(r.state[1], 0.0);
        assert_abs_diff_eq!(r.state[2], PI / 2.0);
        assert_abs_diff_eq!(r.control[0], 0.3);
        assert_abs_diff_eq!(r.control[1], 0.3);

        let still = Circle {
            angular_rate: 0.0,
            ..Circle::default()
        };
        let a = circle_reference(&still, 0.05, 0);
        let b = circle_reference(&still, 0.05, 77);
        assert_eq!(a, b);
        assert_eq!(a.control[0], 0.0);
    }

    #[test]
    fn circle_reference_follows_euler_to_second_order() {
        for circle in [
            Circle::default(),
            Circle {
                center: [0.5, -2.0],
                radius: 2.5,
                angular_rate: 0.8,
            },
        ] {
            let delta = 0.05;
            let spec = UnicycleSpec {
                reference: Reference::Circle(circle.clone()),
                ..UnicycleSpec::default()
            };
            let model = build_unicycle_tracking(&spec, 0).unwrap();
            let bound = 2.0 * circle.radius * circle.angular_rate.powi(2) * delta * delta;
            for step in 0..500 {
                let now = circle_reference(&circle, delta, step);
                let next = circle_reference(&circle, delta, step + 1);
                let x = Vector::from_column_slice(&now.state);
                let u = Vector::from_column_slice(&now.control);
                let pred = model.dynamics(&x, &u, 0);
                let dx = pred[0] - next.state[0];
                let dy = pred[1] - next.state[1];
                let dth = wrap_angle(pred[2] - next.state[2]);
                let err = (dx * dx + dy * dy + dth * dth).sqrt();
                assert!(err <= bound, "step {step}: {err} > {bound}");
            }
        }
    }

    #[test]
    fn unicycle_straight_line() {
        let spec = UnicycleSpec {
            horizon: 2,
            ..UnicycleSpec::default()
        };
        let p = build_unicycle_tracking(&spec, 0).unwrap();
        let z = DecisionVector::from_slice(p.dims(), &[1.0, 0.0, 1.0, 0.0, 1.0, 0.0]).unwrap();
        let roll = roll_forward(&p, &Vector::zeros(3), &z).unwrap();
        let expected = [[0.0, 0.0, 0.0], [0.05, 0.0, 0.0], [0.1, 0.0, 0.0]];
        for (s, e) in roll.states.iter().zip(expected) {
            for i in 0..3 {
                assert_abs_diff_eq!(s[i], e[i], epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn unicycle_zero_speed_freezes_position() {
        let spec = UnicycleSpec::default();
        let p = build_unicycle_tracking(&spec, 5).unwrap();
        let mut z = DecisionVector::zeros(p.dims());
        for k in 0..=spec.horizon {
            z.set_control(k, &Vector::from_column_slice(&[0.0, 0.4]));
        }
        let x0 = spec.initial_state();
        let roll = roll_forward(&p, &x0, &z).unwrap();
        for (k, s) in roll.states.iter().enumerate() {
            assert_eq!(s[0], x0[0]);
            assert_eq!(s[1], x0[1]);
            assert_abs_diff_eq!(s[2], x0[2] + 0.4 * 0.05 * k as f64, epsilon = 1e-14);
        }
    }

    #[test]
    fn on_reference_plant_stays_close() {
        let spec = UnicycleSpec::default();
        let circle = Circle::default();
        let p = build_unicycle_tracking(&spec, 0).unwrap();
        let mut z = DecisionVector::zeros(p.dims());
        for k in 0..=spec.horizon {
            let r = circle_reference(&circle, spec.delta, k);
            z.set_control(k, &Vector::from_column_slice(&r.control));
        }
        let start = circle_reference(&circle, spec.delta, 0);
        let roll = roll_forward(&p, &Vector::from_column_slice(&start.state), &z).unwrap();
        let step_bound = 2.0 * circle.radius * circle.angular_rate.powi(2) * spec.delta.powi(2);
        for (k, s) in roll.states.iter().enumerate() {
            let r = circle_reference(&circle, spec.delta, k);
            let eth = wrap_angle(s[2] - r.state[2]);
            // heading integrates exactly: angle-consistent part of the cost vanishes
            assert!(spec.q_weights[2] * eth * eth <= 1e-9);
            let pos = ((s[0] - r.state[0]).powi(2) + (s[1] - r.state[1]).powi(2)).sqrt();
            assert!(pos <= k as f64 * step_bound + 1e-15);
        }
    }

    #[test]
    fn heading_seam_does_not_spike_cost() {
        // Reference heading just below π; the state just past −π is close in angle.
        let spec = UnicycleSpec {
            reference: Reference::Waypoints {
                points: vec![ReferencePoint {
                    state: [0.0, 0.0, PI - 0.01],
                    control: [0.0, 0.0],
                }],
            },
            horizon: 1,
            ..UnicycleSpec::default()
        };
        let p = build_unicycle_tracking(&spec, 0).unwrap();
        let u = Vector::zeros(2);
        let across = p.stage_cost(&Vector::from_column_slice(&[0.0, 0.0, -PI + 0.01]), &u, 0);
        let same_side = p.stage_cost(&Vector::from_column_slice(&[0.0, 0.0, PI - 0.03]), &u, 0);
        assert_abs_diff_eq!(across, same_side, epsilon = 1e-12);
        assert!(across < 3.0 * 0.03 * 0.03);
    }

    #[test]
    fn unicycle_spec_rejects_bad_values() {
        let cases = [
            UnicycleSpec { delta: 0.0, ..UnicycleSpec::default() },
            UnicycleSpec { horizon: 500, ..UnicycleSpec::default() },
            UnicycleSpec { r_weights: [0.5, 0.0], ..UnicycleSpec::default() },
            UnicycleSpec {
                reference: Reference::Circle(Circle { radius: 0.0, ..Circle::default() }),
                ..UnicycleSpec::default()
            },
        ];
        for spec in cases {
            assert!(spec.validate().is_err());
        }
        assert!(build_unicycle_tracking(&UnicycleSpec::default(), 410).is_err());
        assert!(build_unicycle_tracking(&UnicycleSpec::default(), 409).is_ok());
    }

    #[test]
    fn random_problems_are_reproducible() {
        let a = RandomSmooth::sample(11);
        let b = RandomSmooth::sample(11);
        assert_eq!(a.dims(), b.dims());
        let (x0, z) = a.random_point(3);
        assert_eq!(
            roll_forward(&a, &x0, &z).unwrap(),
            roll_forward(&b, &x0, &z).unwrap()
        );
        let d = a.dims();
        assert!(d.n <= 4 && d.m <= 3 && d.horizon <= 12);
    }
}
