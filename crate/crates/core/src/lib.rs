//! # bridgelab-core
//!
//! Numerical laboratory for entropic interpolations ("F-interpolations") of a
//! convex potential `F` on `R^d`.
//!
//! An F-interpolation between `x` and `y` over a horizon `T` minimizes the
//! action
//!
//! ```text
//!   C_T(x, y) = inf ∫_0^T |ω'(s)|² + |F'(ω(s))|² ds,   ω(0) = x, ω(T) = y,
//! ```
//!
//! and solves the two-point Newton problem `X'' = F''(X) F'(X)`. Along it the
//! energy `E_T = |X'|² − |F'(X)|²` is constant and `dC_T/dT = −E_T`. For long
//! horizons the interpolation shadows the gradient flow `S' = −F'(S)`.
//!
//! | Module | Contents |
//! |--------|----------|
//! | [`potential`] | potentials, derivatives, `(ρ, n)`-convexity certificates |
//! | [`flow`] | trajectories, RK4 gradient flows, closed-form flows |
//! | [`bridge`] | shooting and action-minimization solvers, closed-form bridges |
//! | [`functionals`] | cost, energy, defect field, envelope identity, concavity profiles |
//! | [`gaussian`] | exact Gaussian bridge of the Euclidean heat semigroup on `R` |
//! | [`bounds`] | the long-time inequality catalogue (B1..B12) and rate fits |
//!
//! ```
//! use bridgelab_core::{bridge, Potential, SolverOptions};
//!
//! let p = Potential::neg_log(1);
//! let sol = bridge::solve_bridge_shooting(&p, &[1.0], &[1.0], 2.0, &SolverOptions::default()).unwrap();
//! // E_2(1, 1) = (1 − √5) / 2
//! assert!((sol.energy_mean - (1.0 - 5f64.sqrt()) / 2.0).abs() < 1e-6);
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod bounds;
pub mod bridge;
mod error;
pub mod flow;
pub mod functionals;
pub mod gaussian;
mod linalg;
mod ode;
pub mod potential;

pub use bounds::{fit_rate, verify_bounds, BoundCase, BoundId, BoundReport, RateFit, RateModel};
pub use bridge::{BridgeSolution, SolverKind, SolverMethod, SolverOptions};
pub use error::{Error, Result};
pub use flow::Trajectory;
pub use functionals::{ConcavityProfile, EnergyStats};
pub use gaussian::{Gaussian1D, GaussianBridge};
pub use potential::{Domain, Potential, PotentialDescriptor, PotentialKind};
