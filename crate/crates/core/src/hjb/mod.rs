//! Solver for the reduced backward parabolic equation satisfied by
//! `p = phi_x`, the `x`-derivative of the value function:
//!
//! ```text
//! p_t + mu (x p)_x + k (theta - y) p_y + (sigma^2 / 2) y p_yy + (x^2 G(x, y, p_x))_x = 0
//! p(T, x, y) = g_x(x)
//! ```
//!
//! on `[0, x_max] x [rho, y_max]`. With `q(t) = p(T - t)` the problem becomes
//! `dq/dt + A q = 0`, `q(0) = g_x`, which is marched by implicit Euler steps
//! `q_{i+1} + h A q_{i+1} = q_i`. Each step is a nonlinear system solved by
//! lagged-coefficient Picard iteration: the flux `x^2 G(x, y, D+ q)` is frozen
//! as `x^2 s D+ q` with the secant slope `s` taken from the previous iterate,
//! and the resulting banded linear system is solved directly.

mod banded;
mod grid;
mod operator;
mod solver;
mod study;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hamiltonian::TieRule;

pub use grid::{
    discrete_norms, gradient_x, gradient_y, inner, l2_norm, DiscreteNorms, Field, Grid2D, GridConfig, MIN_CELLS,
};
pub use operator::HjbProblem;
pub use solver::{
    gradient_field, implicit_step, march, reconstruct_value, solve_backward, terminal_field, ImplicitStepper,
    SolutionField, StepDiagnostics,
};
pub use study::{
    coercivity_constants, quasi_contraction_rate, random_field_pairs, refinement_study, CoercivityFit, RefinementLevel,
    Window,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HjbError {
    #[error("degenerate grid: {0}")]
    DegenerateGrid(String),
    #[error("field is inconsistent with the boundary mode: {0}")]
    BoundaryModeMismatch(String),
    #[error("Picard iteration failed to reduce the residual after {iterations} iterations (residual {residual:e})")]
    PicardDivergence { iterations: usize, residual: f64 },
    #[error("singular linear system: {0}")]
    SingularLinearSystem(String),
    #[error("invalid scheme configuration: {0}")]
    InvalidScheme(String),
    #[error("malformed field file: {0}")]
    FieldFormat(String),
}

/// Treatment of the `y = rho` and `y = y_max` edges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum YBoundary {
    /// `p = 0` on both edges.
    #[default]
    DirichletZero,
    /// `p_y = 0`; diagnostic mode for oracles whose solution is nonzero there.
    NeumannZero,
}

/// Discretisation of `k (theta - y) p_y + (sigma^2 / 2) y p_yy`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum YStencil {
    /// Exponentially fitted two-point stencil: rates
    /// `d B(+Pe) / dy^2` downwards and `d B(-Pe) / dy^2` upwards with
    /// `d = sigma^2 y / 2`, `Pe = k (theta - y) dy / d`, `B(x) = x / (e^x - 1)`.
    /// Reduces to upwinding as `d -> 0` and to central differences as `Pe -> 0`.
    /// Near `y = rho` it keeps the discrete chain from leaking into the
    /// Dirichlet row far faster than the continuous process reaches it.
    #[default]
    Fitted,
    /// First-order upwind advection plus centred diffusion.
    Upwind,
}

fn default_tol() -> f64 {
    1e-8
}

fn default_max_iter() -> usize {
    50
}

fn default_steps() -> usize {
    200
}

/// Time discretisation and inner-iteration controls. The `x_max` edge always
/// carries a homogeneous Neumann condition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeConfig {
    #[serde(default = "default_steps")]
    pub n_time_steps: usize,
    /// Picard stopping tolerance, relative to `1 + |q_prev|` in discrete `L^2`.
    #[serde(default = "default_tol")]
    pub picard_tol: f64,
    #[serde(default = "default_max_iter")]
    pub picard_max_iter: usize,
    #[serde(default)]
    pub y_boundary: YBoundary,
    #[serde(default)]
    pub y_stencil: YStencil,
    #[serde(default)]
    pub tie_rule: TieRule,
}

impl Default for SchemeConfig {
    fn default() -> Self {
        Self {
            n_time_steps: default_steps(),
            picard_tol: default_tol(),
            picard_max_iter: default_max_iter(),
            y_boundary: YBoundary::default(),
            y_stencil: YStencil::default(),
            tie_rule: TieRule::default(),
        }
    }
}

impl SchemeConfig {
    pub fn check(&self) -> Result<(), HjbError> {
        if self.n_time_steps == 0 {
            return Err(HjbError::InvalidScheme("n_time_steps must be at least 1".into()));
        }
        if !(self.picard_tol > 0.0) {
            return Err(HjbError::InvalidScheme(format!(
                "picard_tol must be positive (got {})",
                self.picard_tol
            )));
        }
        if self.picard_max_iter == 0 {
            return Err(HjbError::InvalidScheme("picard_max_iter must be at least 1".into()));
        }
        Ok(())
    }
}
