//! Feedback control synthesis for a controlled Heston model.
//!
//! The state is a price-like process `X1` driven by a CIR variance `X2`,
//! with the control `u in [a, b]` scaling the variance seen by `X1`:
//!
//! ```text
//! dX1 = mu X1 dt + X1 sqrt(u X2) dW1
//! dX2 = k (theta - X2) dt + sigma sqrt(X2) dW2
//! ```
//!
//! The crate solves the backward equation for `p = phi_x` (the `x`-derivative
//! of the value function), turns `p_x` into a feedback law through the
//! Hamiltonian minimiser, and evaluates policies by Monte Carlo simulation of
//! the regularised closed-loop system.
//!
//! | module | contents |
//! |---|---|
//! | [`model`] | parameters, control set, costs, hypothesis checks |
//! | [`hamiltonian`] | `G(x, y, z)` and its minimiser |
//! | [`hjb`] | grid, operator, implicit solver, diagnostics |
//! | [`policy`] | constant, piecewise-constant and feedback controllers |
//! | [`sde`] | Euler–Maruyama paths and positivity diagnostics |
//! | [`evaluator`] | cost estimates, policy comparison, value oracle |
//!
//! ```
//! use std::sync::Arc;
//! use heston_hjb::hjb::{solve_backward, Grid2D, GridConfig, SchemeConfig};
//! use heston_hjb::model::*;
//! use heston_hjb::policy::Policy;
//! use heston_hjb::evaluator::compare_policies;
//! use heston_hjb::sde::SimConfig;
//!
//! let model = ModelParams::new(0.05, 2.0, 0.09, 0.3, 1.0);
//! let bounds = ControlBounds::new(0.1, 0.5)?;
//! let cost = CostSpec::new(
//!     RunningCost::QuadraticTracking { c: 0.3 },
//!     TerminalCost::SquareCall { strike: 1.0 },
//! );
//! validate(&model, &bounds, &cost).ensure_ok()?;
//!
//! let grid = Grid2D::new(&GridConfig { x_max: 4.0, rho: 0.01, y_max: 0.6, nx: 40, ny: 12 })?;
//! let scheme = SchemeConfig { n_time_steps: 20, ..Default::default() };
//! let field = Arc::new(solve_backward(&model, &cost, &bounds, &grid, &scheme)?);
//!
//! let policies = [
//!     Policy::constant(0.3),
//!     Policy::feedback(field, cost, bounds, scheme.tie_rule),
//! ];
//! let init = InitialState::new(1.0, 0.09)?;
//! let table = compare_policies(&model, &cost, &bounds, &init, &policies, &SimConfig::new(500, 50, 1))?;
//! assert_eq!(table.rows.len(), 2);
//! # Ok::<(), Box<dyn std::error::Error>>(())
//! ```

// `!(x > 0.0)` is used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod evaluator;
pub mod hamiltonian;
pub mod hjb;
pub mod model;
pub mod policy;
pub mod sde;

pub use evaluator::{compare_policies, estimate_cost, mc_value_oracle, ComparisonTable, CostEstimate};
pub use hamiltonian::{hamiltonian, HamiltonianResult, TieRule};
pub use hjb::{solve_backward, Grid2D, GridConfig, SchemeConfig, SolutionField};
pub use model::{validate, ControlBounds, CostSpec, InitialState, ModelParams, RunningCost, TerminalCost};
pub use policy::{Policy, PolicySpec};
pub use sde::{simulate, PathBatch, SimConfig};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/hamiltonian.md")]
    mod hamiltonian {}
    #[doc = include_str!("../../../book/src/solver.md")]
    mod solver {}
    #[doc = include_str!("../../../book/src/policies.md")]
    mod policies {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/diagnostics.md")]
    mod diagnostics {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
    #[doc = include_str!("../../../README.md")]
    mod readme {}
}
