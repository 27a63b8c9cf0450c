//! Discrete-time nonlinear optimal control through forward-backward
//! difference equations.
//!
//! * [`adjoint`] computes `∇J` with one forward rollout and one backward
//!   costate pass.
//! * [`curvature`] computes the exact `∇²J` row by row with a second pair
//!   of forward/backward recursions.
//! * [`solver`] minimizes `J` with a regularized Newton-type recursion of
//!   growing depth, plus a plain gradient-descent baseline.
//! * [`mpc`] wraps the solver in a receding-horizon loop.

pub mod adjoint;
pub mod check;
#[cfg(feature = "cli")]
pub mod cli;
mod clock;
pub mod curvature;
pub mod error;
pub mod mpc;
pub mod oracles;
pub mod problem;
pub mod scenarios;
pub mod solver;

pub use error::{OcpError, Result};
pub use problem::{DecisionVector, Dims, Matrix, Problem, Rollout, Vector};
