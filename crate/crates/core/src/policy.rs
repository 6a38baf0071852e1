//! Admissible controllers: constants, piecewise-constant schedules and
//! feedback laws synthesised from a solved gradient field.
//!
//! A feedback policy looks up `p_x` at the first stored time level at or
//! after `t`, clamps `(x1, x2)` into the grid rectangle, interpolates
//! bilinearly and returns the minimiser of `u x2 p_x / 2 + f(x1, u)`.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hamiltonian::{closed_form, TieRule};
use crate::hjb::SolutionField;
use crate::model::{ControlBounds, CostSpec};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PolicyError {
    #[error("time {t} is outside the horizon [0, {horizon}]")]
    OutOfHorizon { t: f64, horizon: f64 },
    #[error("feedback policy has no solved field: {0}")]
    MissingSolution(String),
    #[error("invalid piecewise-constant schedule: {0}")]
    InvalidSchedule(String),
    #[error("control {u} lies outside [{a}, {b}]")]
    ControlOutOfBounds { u: f64, a: f64, b: f64 },
}

/// Right-continuous step function on `[t_0, t_N] = [0, T]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Schedule {
    breakpoints: Vec<f64>,
    values: Vec<f64>,
}

impl Schedule {
    pub fn new(breakpoints: Vec<f64>, values: Vec<f64>) -> Result<Self, PolicyError> {
        if breakpoints.len() < 2 || values.len() + 1 != breakpoints.len() {
            return Err(PolicyError::InvalidSchedule(format!(
                "{} breakpoints need {} values (got {})",
                breakpoints.len(),
                breakpoints.len().saturating_sub(1),
                values.len()
            )));
        }
        if breakpoints[0] != 0.0 {
            return Err(PolicyError::InvalidSchedule(format!(
                "first breakpoint must be 0 (got {})",
                breakpoints[0]
            )));
        }
        if breakpoints.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(PolicyError::InvalidSchedule(
                "breakpoints must be strictly increasing".into(),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(PolicyError::InvalidSchedule("values must be finite".into()));
        }
        Ok(Self { breakpoints, values })
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn horizon(&self) -> f64 {
        *self.breakpoints.last().expect("validated non-empty")
    }

    /// `v_i` for `t in [t_i, t_{i+1})`; the last value also covers `t = T`.
    pub fn value_at(&self, t: f64) -> f64 {
        let i = self.breakpoints.partition_point(|&b| b <= t);
        self.values[i.saturating_sub(1).min(self.values.len() - 1)]
    }
}

/// Feedback law backed by a solved field.
#[derive(Debug, Clone)]
pub struct Feedback {
    solution: Arc<SolutionField>,
    cost: CostSpec,
    bounds: ControlBounds,
    tie: TieRule,
}

impl Feedback {
    pub fn new(solution: Arc<SolutionField>, cost: CostSpec, bounds: ControlBounds, tie: TieRule) -> Self {
        Self {
            solution,
            cost,
            bounds,
            tie,
        }
    }

    pub fn solution(&self) -> &SolutionField {
        &self.solution
    }

    pub fn bounds(&self) -> &ControlBounds {
        &self.bounds
    }
}

#[derive(Debug, Clone)]
pub enum Policy {
    Constant(f64),
    PiecewiseConstant(Schedule),
    Feedback(Feedback),
}

/// Control value plus whether the state had to be clamped into the grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub u: f64,
    pub clamped: bool,
}

impl Policy {
    pub fn constant(u: f64) -> Self {
        Policy::Constant(u)
    }

    pub fn piecewise(breakpoints: Vec<f64>, values: Vec<f64>) -> Result<Self, PolicyError> {
        Schedule::new(breakpoints, values).map(Policy::PiecewiseConstant)
    }

    pub fn feedback(solution: Arc<SolutionField>, cost: CostSpec, bounds: ControlBounds, tie: TieRule) -> Self {
        Policy::Feedback(Feedback::new(solution, cost, bounds, tie))
    }

    /// Horizon implied by the policy itself, if any.
    pub fn horizon(&self) -> Option<f64> {
        match self {
            Policy::Constant(_) => None,
            Policy::PiecewiseConstant(s) => Some(s.horizon()),
            Policy::Feedback(f) => Some(f.solution.horizon()),
        }
    }

    /// Checks that the policy's values lie in `bounds` and that its horizon
    /// matches `horizon`.
    pub fn check(&self, bounds: &ControlBounds, horizon: f64) -> Result<(), PolicyError> {
        let in_bounds = |u: f64| {
            if bounds.contains(u) {
                Ok(())
            } else {
                Err(PolicyError::ControlOutOfBounds {
                    u,
                    a: bounds.a(),
                    b: bounds.b(),
                })
            }
        };
        match self {
            Policy::Constant(u) => in_bounds(*u)?,
            Policy::PiecewiseConstant(s) => {
                for &v in s.values() {
                    in_bounds(v)?;
                }
            }
            Policy::Feedback(f) => {
                in_bounds(f.bounds.a())?;
                in_bounds(f.bounds.b())?;
            }
        }
        if let Some(t) = self.horizon() {
            if (t - horizon).abs() > 1e-12 * horizon.max(1.0) {
                return Err(PolicyError::OutOfHorizon { t, horizon });
            }
        }
        Ok(())
    }

    pub fn evaluate(&self, t: f64, x1: f64, x2: f64) -> Result<f64, PolicyError> {
        self.evaluate_detailed(t, x1, x2).map(|e| e.u)
    }

    pub fn evaluate_detailed(&self, t: f64, x1: f64, x2: f64) -> Result<Evaluation, PolicyError> {
        if let Some(horizon) = self.horizon() {
            if t < 0.0 || t > horizon * (1.0 + 1e-12) {
                return Err(PolicyError::OutOfHorizon { t, horizon });
            }
        } else if t < 0.0 {
            return Err(PolicyError::OutOfHorizon {
                t,
                horizon: f64::INFINITY,
            });
        }
        Ok(match self {
            Policy::Constant(u) => Evaluation { u: *u, clamped: false },
            Policy::PiecewiseConstant(s) => Evaluation {
                u: s.value_at(t),
                clamped: false,
            },
            Policy::Feedback(f) => {
                let level = f.solution.level_at_or_after(t);
                let (px, clamped) = f.solution.interpolate_px(level, x1, x2);
                let r = closed_form(x1, x2.max(0.0), px, &f.cost, &f.bounds, f.tie);
                Evaluation {
                    u: f.bounds.clamp(r.minimizer),
                    clamped,
                }
            }
        })
    }

    /// Short label used in tables and file names.
    pub fn label(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Policy::Constant(u) => write!(f, "constant({u})"),
            Policy::PiecewiseConstant(s) => {
                write!(f, "piecewise(")?;
                for (i, v) in s.values().iter().enumerate() {
                    if i > 0 {
                        write!(f, ";")?;
                    }
                    write!(f, "{v}@{}", s.breakpoints()[i])?;
                }
                write!(f, ")")
            }
            Policy::Feedback(_) => write!(f, "feedback"),
        }
    }
}

/// Serializable policy descriptor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicySpec {
    Constant {
        u: f64,
    },
    PiecewiseConstant {
        breakpoints: Vec<f64>,
        values: Vec<f64>,
    },
    /// `field` names a dump written by the `solve` command; without it the
    /// caller is expected to solve in-process.
    Feedback {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        field: Option<String>,
    },
}

impl PolicySpec {
    /// Builds the policy. Feedback descriptors need `solution`.
    pub fn resolve(
        &self,
        solution: Option<Arc<SolutionField>>,
        cost: &CostSpec,
        bounds: &ControlBounds,
        tie: TieRule,
    ) -> Result<Policy, PolicyError> {
        match self {
            PolicySpec::Constant { u } => Ok(Policy::Constant(*u)),
            PolicySpec::PiecewiseConstant { breakpoints, values } => {
                Policy::piecewise(breakpoints.clone(), values.clone())
            }
            PolicySpec::Feedback { field } => {
                let solution = solution.ok_or_else(|| {
                    PolicyError::MissingSolution(match field {
                        Some(path) => format!("field `{path}` was not loaded"),
                        None => "no field supplied and no solve performed".into(),
                    })
                })?;
                Ok(Policy::feedback(solution, *cost, *bounds, tie))
            }
        }
    }

    pub fn is_feedback(&self) -> bool {
        matches!(self, PolicySpec::Feedback { .. })
    }
}
