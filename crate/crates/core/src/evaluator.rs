//! Monte Carlo estimates of the performance functional
//!
//! ```text
//! J = E int_0^T X1^2 f(X1, u) dt + E g(X1(T))
//! ```
//!
//! with a left-point rectangle rule for the running part, policy comparison
//! under common random numbers, and a finite-difference gradient oracle for
//! the uncontrolled problem.

use std::fmt;
use std::io::{self, Write};

use serde::Serialize;
use thiserror::Error;

use crate::model::{ControlBounds, CostSpec, InitialState, ModelParams};
use crate::policy::Policy;
use crate::sde::{simulate_each, MeanEstimate, Path, PathBatch, SdeError, SimConfig};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("time {t} lies outside [0, {horizon}]")]
    HorizonMismatch { t: f64, horizon: f64 },
    #[error("the value oracle needs a pinned control interval (got [{a}, {b}])")]
    NotPinned { a: f64, b: f64 },
    #[error("at least two policies are needed for a comparison")]
    TooFewPolicies,
    #[error("finite-difference step must be positive (got {0})")]
    InvalidStep(f64),
    #[error(transparent)]
    Simulation(#[from] SdeError),
}

/// Running and terminal cost of one path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathCost {
    pub running: f64,
    pub terminal: f64,
}

impl PathCost {
    pub fn total(&self) -> f64 {
        self.running + self.terminal
    }
}

pub fn path_cost(path: &Path, cost: &CostSpec, dt: f64) -> PathCost {
    let running = path
        .u
        .iter()
        .zip(&path.x1)
        .map(|(&u, &x)| x * x * cost.running(x, u) * dt)
        .sum();
    PathCost {
        running,
        terminal: cost.terminal(*path.x1.last().expect("paths are non-empty")),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CostEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n_paths: usize,
    pub running_part: f64,
    pub terminal_part: f64,
}

impl CostEstimate {
    pub fn from_path_costs(costs: &[PathCost]) -> Self {
        let n = costs.len() as f64;
        let total = MeanEstimate::of(costs.iter().map(PathCost::total));
        let running_part = costs.iter().map(|c| c.running).sum::<f64>() / n;
        let terminal_part = costs.iter().map(|c| c.terminal).sum::<f64>() / n;
        Self {
            mean: running_part + terminal_part,
            std_error: total.std_error,
            n_paths: costs.len(),
            running_part,
            terminal_part,
        }
    }

    /// `sqrt(se_1^2 + se_2^2)`.
    pub fn combined_std_error(&self, other: &CostEstimate) -> f64 {
        self.std_error.hypot(other.std_error)
    }
}

pub fn estimate_cost(batch: &PathBatch, cost: &CostSpec) -> CostEstimate {
    let dt = batch.dt();
    let costs: Vec<PathCost> = batch.paths.iter().map(|p| path_cost(p, cost, dt)).collect();
    CostEstimate::from_path_costs(&costs)
}

/// Per-path costs without storing the paths.
pub fn path_costs(
    model: &ModelParams,
    cost: &CostSpec,
    bounds: &ControlBounds,
    init: &InitialState,
    policy: &Policy,
    sim: &SimConfig,
) -> Result<Vec<PathCost>, EvalError> {
    let dt = sim.dt(model.horizon);
    let (costs, _) = simulate_each(model, bounds, policy, init, sim, |p| path_cost(p, cost, dt))?;
    Ok(costs)
}

/// Streaming counterpart of [`estimate_cost`].
pub fn estimate_policy_cost(
    model: &ModelParams,
    cost: &CostSpec,
    bounds: &ControlBounds,
    init: &InitialState,
    policy: &Policy,
    sim: &SimConfig,
) -> Result<CostEstimate, EvalError> {
    Ok(CostEstimate::from_path_costs(&path_costs(
        model, cost, bounds, init, policy, sim,
    )?))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub policy: String,
    pub estimate: CostEstimate,
    pub is_best: bool,
    /// Position in the input list.
    pub input_index: usize,
    #[serde(skip)]
    totals: Vec<f64>,
}

/// Policies ranked by estimated cost (ascending, stable).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
    pub seed: u64,
    pub n_paths: usize,
    pub n_steps: usize,
}

impl ComparisonTable {
    pub fn best(&self) -> &ComparisonRow {
        self.rows.iter().find(|r| r.is_best).expect("tables have rows")
    }

    /// Row for the policy at `input_index` of the original list.
    pub fn by_input(&self, input_index: usize) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.input_index == input_index)
    }

    /// Mean and standard error of the per-path difference `J_i - J_j` (input
    /// indices), which common random numbers make much tighter than the
    /// combined standard error.
    pub fn paired_difference(&self, i: usize, j: usize) -> Option<MeanEstimate> {
        let (a, b) = (self.by_input(i)?, self.by_input(j)?);
        Some(MeanEstimate::of(a.totals.iter().zip(&b.totals).map(|(x, y)| x - y)))
    }

    /// CSV with header `policy,mean,std_error,running_part,terminal_part`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "policy,mean,std_error,running_part,terminal_part")?;
        for r in &self.rows {
            let e = &r.estimate;
            writeln!(
                w,
                "{},{:.16e},{:.16e},{:.16e},{:.16e}",
                csv_field(&r.policy),
                e.mean,
                e.std_error,
                e.running_part,
                e.terminal_part
            )?;
        }
        Ok(())
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

impl fmt::Display for ComparisonTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self.rows.iter().map(|r| r.policy.len()).max().unwrap_or(6).max(6);
        writeln!(
            f,
            "  {:<width$}  {:>14}  {:>12}  {:>14}  {:>14}",
            "policy", "mean", "std_error", "running", "terminal"
        )?;
        for r in &self.rows {
            let e = &r.estimate;
            writeln!(
                f,
                "{} {:<width$}  {:>14.6e}  {:>12.4e}  {:>14.6e}  {:>14.6e}",
                if r.is_best { '*' } else { ' ' },
                r.policy,
                e.mean,
                e.std_error,
                e.running_part,
                e.terminal_part
            )?;
        }
        write!(
            f,
            "  ({} paths, {} steps, seed {})",
            self.n_paths, self.n_steps, self.seed
        )
    }
}

/// Estimates every policy on the same Brownian increments and ranks them.
pub fn compare_policies(
    model: &ModelParams,
    cost: &CostSpec,
    bounds: &ControlBounds,
    init: &InitialState,
    policies: &[Policy],
    sim: &SimConfig,
) -> Result<ComparisonTable, EvalError> {
    if policies.len() < 2 {
        return Err(EvalError::TooFewPolicies);
    }
    let mut rows = Vec::with_capacity(policies.len());
    for (i, policy) in policies.iter().enumerate() {
        let costs = path_costs(model, cost, bounds, init, policy, sim)?;
        rows.push(ComparisonRow {
            policy: policy.label(),
            estimate: CostEstimate::from_path_costs(&costs),
            is_best: false,
            input_index: i,
            totals: costs.iter().map(PathCost::total).collect(),
        });
    }
    rows.sort_by(|a, b| a.estimate.mean.total_cmp(&b.estimate.mean));
    rows[0].is_best = true;
    Ok(ComparisonTable {
        rows,
        seed: sim.seed,
        n_paths: sim.n_paths,
        n_steps: sim.n_steps,
    })
}

/// Value and gradient estimates of the uncontrolled problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ValueOracle {
    pub value: MeanEstimate,
    pub gradient: MeanEstimate,
    /// Finite-difference step actually used on each side.
    pub delta_plus: f64,
    pub delta_minus: f64,
}

/// Monte Carlo value `V(t, x, y)` and gradient `p = V_x` for the pinned
/// control `u = a = b`.
///
/// The gradient is the paired central difference
/// `(V(x + delta) - V(x - delta)) / (2 delta)` computed path by path on
/// common increments; near `x = 0` the lower point is clamped to `0` and the
/// denominator adjusted. `delta` defaults to `0.01 x_max` at the call site.
#[allow(clippy::too_many_arguments)]
pub fn mc_value_oracle(
    model: &ModelParams,
    cost: &CostSpec,
    bounds: &ControlBounds,
    t: f64,
    x: f64,
    y: f64,
    delta: f64,
    sim: &SimConfig,
) -> Result<ValueOracle, EvalError> {
    if !bounds.is_pinned() {
        return Err(EvalError::NotPinned {
            a: bounds.a(),
            b: bounds.b(),
        });
    }
    if !(0.0..model.horizon).contains(&t) {
        return Err(EvalError::HorizonMismatch {
            t,
            horizon: model.horizon,
        });
    }
    if !(delta > 0.0) {
        return Err(EvalError::InvalidStep(delta));
    }
    let remaining = ModelParams {
        horizon: model.horizon - t,
        ..*model
    };
    let policy = Policy::constant(bounds.a());
    let run = |x0: f64| -> Result<Vec<PathCost>, EvalError> {
        let init = InitialState::new(x0, y).map_err(SdeError::from)?;
        path_costs(&remaining, cost, bounds, &init, &policy, sim)
    };
    let lo = (x - delta).max(0.0);
    let hi = x + delta;
    let centre = run(x)?;
    let up = run(hi)?;
    let down = run(lo)?;
    let value = MeanEstimate::of(centre.iter().map(PathCost::total));
    let gradient = MeanEstimate::of(up.iter().zip(&down).map(|(a, b)| (a.total() - b.total()) / (hi - lo)));
    Ok(ValueOracle {
        value,
        gradient,
        delta_plus: hi - x,
        delta_minus: x - lo,
    })
}
