//! Model parameters, the control set, cost specifications and hypothesis checks.
//!
//! The controlled system is
//!
//! ```text
//! dX1 = mu X1 dt + X1 sqrt(u X2) dW1
//! dX2 = k (theta - X2) dt + sigma sqrt(X2) dW2
//! ```
//!
//! with independent Brownian motions `W1`, `W2` and a control `u` taking
//! values in `[a, b]`. The performance functional is
//! `J(u) = E int_0^T X1^2 f(X1, u) dt + E g(X1(T))`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("parameter `{name}` must be positive (got {value})")]
    NonPositiveParameter { name: &'static str, value: f64 },
    #[error("empty control interval: a = {a} must be strictly below b = {b}")]
    EmptyControlInterval { a: f64, b: f64 },
    #[error("running cost violates hypothesis (i): {0}")]
    CostConvexityViolation(String),
    #[error("terminal gradient does not match the terminal cost: {0}")]
    TerminalGradientMismatch(String),
    #[error("initial state must be nonnegative (x1 = {x1}, x2 = {x2})")]
    NegativeInitialState { x1: f64, x2: f64 },
}

/// Heston dynamics constants and the terminal time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    /// Drift rate of `X1`.
    pub mu: f64,
    /// Mean-reversion speed of the variance.
    pub k: f64,
    /// Long-run variance level.
    pub theta: f64,
    /// Volatility of variance.
    pub sigma: f64,
    /// Terminal time `T`.
    pub horizon: f64,
}

impl ModelParams {
    pub fn new(mu: f64, k: f64, theta: f64, sigma: f64, horizon: f64) -> Self {
        Self {
            mu,
            k,
            theta,
            sigma,
            horizon,
        }
    }

    /// Feller condition `k theta >= sigma^2 / 2`.
    pub fn feller_ok(&self) -> bool {
        self.k * self.theta >= 0.5 * self.sigma * self.sigma
    }

    /// Checks that every field is finite and that the degenerate limits
    /// (`mu = 0`, `sigma = 0`) are the only non-positive values.
    pub(crate) fn check_finite(&self) -> Result<(), ModelError> {
        let fields = [
            ("mu", self.mu, false),
            ("k", self.k, true),
            ("theta", self.theta, true),
            ("sigma", self.sigma, false),
            ("horizon", self.horizon, true),
        ];
        for (name, value, strict) in fields {
            let bad = !value.is_finite() || value < 0.0 || (strict && value == 0.0);
            if bad {
                return Err(ModelError::NonPositiveParameter { name, value });
            }
        }
        Ok(())
    }
}

/// Control interval `[a, b]`.
///
/// Ordinary bounds satisfy `0 < a < b`. A *pinned* interval (`a == b`) is the
/// uncontrolled case used by the linear oracles; it can only be built through
/// [`ControlBounds::pinned`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BoundsRepr", into = "BoundsRepr")]
pub struct ControlBounds {
    a: f64,
    b: f64,
}

impl ControlBounds {
    pub fn new(a: f64, b: f64) -> Result<Self, ModelError> {
        if !(a.is_finite() && a > 0.0) {
            return Err(ModelError::NonPositiveParameter { name: "a", value: a });
        }
        if !(b.is_finite() && a < b) {
            return Err(ModelError::EmptyControlInterval { a, b });
        }
        Ok(Self { a, b })
    }

    /// Degenerate interval `{u}`.
    pub fn pinned(u: f64) -> Result<Self, ModelError> {
        if !(u.is_finite() && u > 0.0) {
            return Err(ModelError::NonPositiveParameter { name: "u", value: u });
        }
        Ok(Self { a: u, b: u })
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn is_pinned(&self) -> bool {
        self.a == self.b
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.a + self.b)
    }

    pub fn contains(&self, u: f64) -> bool {
        u >= self.a && u <= self.b
    }

    pub fn clamp(&self, u: f64) -> f64 {
        u.clamp(self.a, self.b)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
enum BoundsRepr {
    Interval { a: f64, b: f64 },
    Pinned { pinned: f64 },
}

impl TryFrom<BoundsRepr> for ControlBounds {
    type Error = ModelError;

    fn try_from(repr: BoundsRepr) -> Result<Self, Self::Error> {
        match repr {
            BoundsRepr::Interval { a, b } => ControlBounds::new(a, b),
            BoundsRepr::Pinned { pinned } => ControlBounds::pinned(pinned),
        }
    }
}

impl From<ControlBounds> for BoundsRepr {
    fn from(bounds: ControlBounds) -> Self {
        if bounds.is_pinned() {
            BoundsRepr::Pinned { pinned: bounds.a }
        } else {
            BoundsRepr::Interval {
                a: bounds.a,
                b: bounds.b,
            }
        }
    }
}

/// Running cost `f(x, u)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum RunningCost {
    /// `f = 0`; the Hamiltonian minimiser is bang-bang.
    Zero,
    /// `f(x, u) = (u - c)^2`.
    QuadraticTracking { c: f64 },
}

/// Terminal cost `g(x)` together with its exact derivative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum TerminalCost {
    /// `g = 0`.
    Zero,
    /// `g(x) = x`.
    Linear,
    /// `g(x) = (x - strike)^2`.
    SquareCall { strike: f64 },
    /// `g_x(x) = exp(-(x - x0)^2 / (2 s^2))`, normalised so that `g(-inf) = 0`.
    GaussianRamp { x0: f64, s: f64 },
}

fn default_scale() -> f64 {
    1.0
}

/// Running and terminal costs, both multiplied by `scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSpec {
    pub running: RunningCost,
    pub terminal: TerminalCost,
    #[serde(default = "default_scale")]
    pub scale: f64,
}

impl CostSpec {
    pub fn new(running: RunningCost, terminal: TerminalCost) -> Self {
        Self {
            running,
            terminal,
            scale: 1.0,
        }
    }

    pub fn scaled(self, alpha: f64) -> Self {
        Self {
            scale: self.scale * alpha,
            ..self
        }
    }

    /// `f(x, u)`.
    pub fn running(&self, _x: f64, u: f64) -> f64 {
        match self.running {
            RunningCost::Zero => 0.0,
            RunningCost::QuadraticTracking { c } => self.scale * (u - c) * (u - c),
        }
    }

    /// Subdifferential of `u -> f(x, u)` as a closed interval `(lo, hi)`.
    pub fn running_subgradient(&self, _x: f64, u: f64) -> (f64, f64) {
        match self.running {
            RunningCost::Zero => (0.0, 0.0),
            RunningCost::QuadraticTracking { c } => {
                let d = 2.0 * self.scale * (u - c);
                (d, d)
            }
        }
    }

    /// `g(x)`.
    pub fn terminal(&self, x: f64) -> f64 {
        let g = match self.terminal {
            TerminalCost::Zero => 0.0,
            TerminalCost::Linear => x,
            TerminalCost::SquareCall { strike } => (x - strike) * (x - strike),
            TerminalCost::GaussianRamp { x0, s } => {
                let z = (x - x0) / (s * std::f64::consts::SQRT_2);
                s * (std::f64::consts::PI / 2.0).sqrt() * (1.0 + libm::erf(z))
            }
        };
        self.scale * g
    }

    /// `g_x(x)`.
    pub fn terminal_gradient(&self, x: f64) -> f64 {
        let gx = match self.terminal {
            TerminalCost::Zero => 0.0,
            TerminalCost::Linear => 1.0,
            TerminalCost::SquareCall { strike } => 2.0 * (x - strike),
            TerminalCost::GaussianRamp { x0, s } => (-(x - x0) * (x - x0) / (2.0 * s * s)).exp(),
        };
        self.scale * gx
    }

    pub fn has_zero_running_cost(&self) -> bool {
        matches!(self.running, RunningCost::Zero) || self.scale == 0.0
    }
}

/// Initial state `(X1(0), X2(0))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialState {
    pub x1: f64,
    pub x2: f64,
}

impl InitialState {
    pub fn new(x1: f64, x2: f64) -> Result<Self, ModelError> {
        let state = Self { x1, x2 };
        state.check()?;
        Ok(state)
    }

    pub fn check(&self) -> Result<(), ModelError> {
        if self.x1 >= 0.0 && self.x2 >= 0.0 && self.x1.is_finite() && self.x2.is_finite() {
            Ok(())
        } else {
            Err(ModelError::NegativeInitialState {
                x1: self.x1,
                x2: self.x2,
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Warn,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub status: CheckStatus,
    pub detail: String,
}

/// Outcome of [`validate`]: one entry per hypothesis.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub feller_ok: bool,
    pub checks: Vec<Check>,
    #[serde(skip)]
    errors: Vec<ModelError>,
}

impl ValidationReport {
    pub fn errors(&self) -> &[ModelError] {
        &self.errors
    }

    pub fn is_ok(&self) -> bool {
        self.errors.is_empty()
    }

    pub fn warnings(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| c.status == CheckStatus::Warn)
    }

    /// First error, if any.
    pub fn ensure_ok(&self) -> Result<(), ModelError> {
        match self.errors.first() {
            Some(e) => Err(e.clone()),
            None => Ok(()),
        }
    }

    fn push(&mut self, name: &'static str, status: CheckStatus, detail: String) {
        self.checks.push(Check { name, status, detail });
    }

    fn fail(&mut self, name: &'static str, error: ModelError) {
        self.push(name, CheckStatus::Fail, error.to_string());
        self.errors.push(error);
    }
}

const CONVEXITY_U_POINTS: usize = 101;
const CONVEXITY_X_PROBES: usize = 32;
const PROBE_X_MAX: f64 = 10.0;
const INF_ZERO_TOL: f64 = 1e-9;

/// Checks the standing hypotheses on the model, the control set and the cost.
///
/// Feller violations and the degenerate limits `mu = 0`, `sigma = 0` are
/// reported as warnings; sign and ordering violations and failures of
/// hypothesis (i) are errors.
pub fn validate(params: &ModelParams, bounds: &ControlBounds, cost: &CostSpec) -> ValidationReport {
    let mut report = ValidationReport {
        feller_ok: params.feller_ok(),
        checks: Vec::new(),
        errors: Vec::new(),
    };

    match params.check_finite() {
        Ok(()) => {
            let mut degenerate = Vec::new();
            if params.mu == 0.0 {
                degenerate.push("mu = 0");
            }
            if params.sigma == 0.0 {
                degenerate.push("sigma = 0");
            }
            if degenerate.is_empty() {
                report.push("positive_parameters", CheckStatus::Pass, String::new());
            } else {
                report.push(
                    "positive_parameters",
                    CheckStatus::Warn,
                    format!("degenerate limit: {}", degenerate.join(", ")),
                );
            }
        }
        Err(e) => report.fail("positive_parameters", e),
    }

    let lhs = params.k * params.theta;
    let rhs = 0.5 * params.sigma * params.sigma;
    report.push(
        "feller",
        if report.feller_ok {
            CheckStatus::Pass
        } else {
            CheckStatus::Warn
        },
        format!("k*theta = {lhs}, sigma^2/2 = {rhs}"),
    );

    let (a, b) = (bounds.a(), bounds.b());
    if !(a > 0.0 && a.is_finite()) {
        report.fail(
            "control_interval",
            ModelError::NonPositiveParameter { name: "a", value: a },
        );
    } else if a > b || !b.is_finite() {
        report.fail("control_interval", ModelError::EmptyControlInterval { a, b });
    } else if bounds.is_pinned() {
        report.push("control_interval", CheckStatus::Warn, format!("pinned control u = {a}"));
    } else {
        report.push("control_interval", CheckStatus::Pass, format!("[{a}, {b}]"));
    }

    if !(cost.scale.is_finite() && cost.scale > 0.0) {
        report.fail(
            "cost_scale",
            ModelError::NonPositiveParameter {
                name: "scale",
                value: cost.scale,
            },
        );
    }

    check_running_cost(&mut report, bounds, cost);
    check_terminal_gradient(&mut report, cost);
    report
}

fn check_running_cost(report: &mut ValidationReport, bounds: &ControlBounds, cost: &CostSpec) {
    let (a, b) = (bounds.a(), bounds.b());
    let us: Vec<f64> = (0..CONVEXITY_U_POINTS)
        .map(|i| a + (b - a) * i as f64 / (CONVEXITY_U_POINTS - 1) as f64)
        .collect();
    let du = (b - a) / (CONVEXITY_U_POINTS - 1) as f64;

    let mut convex = true;
    let mut worst_inf: f64 = 0.0;
    let mut strictly_monotone = !bounds.is_pinned();
    for p in 0..CONVEXITY_X_PROBES {
        let x = PROBE_X_MAX * p as f64 / (CONVEXITY_X_PROBES - 1) as f64;
        let fs: Vec<f64> = us.iter().map(|&u| cost.running(x, u)).collect();
        let scale = fs.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
        for w in fs.windows(3) {
            if w[0] - 2.0 * w[1] + w[2] < -1e-12 * scale {
                convex = false;
            }
        }
        let inf = fs.iter().copied().fold(f64::INFINITY, f64::min);
        worst_inf = worst_inf.max(inf.abs());
        // Strict monotonicity of the subgradient: it must increase between grid points.
        for pair in us.windows(2) {
            let (_, hi) = cost.running_subgradient(x, pair[0]);
            let (lo, _) = cost.running_subgradient(x, pair[1]);
            if lo <= hi {
                strictly_monotone = false;
            }
        }
    }
    if !convex {
        report.fail(
            "running_cost_convex",
            ModelError::CostConvexityViolation("negative second difference in u".into()),
        );
    } else {
        report.push("running_cost_convex", CheckStatus::Pass, format!("du = {du}"));
    }
    if worst_inf > INF_ZERO_TOL {
        report.fail(
            "running_cost_inf_zero",
            ModelError::CostConvexityViolation(format!("min_u f(x, u) = {worst_inf} on [a, b]")),
        );
    } else {
        report.push("running_cost_inf_zero", CheckStatus::Pass, String::new());
    }
    report.push(
        "running_subgradient_strictly_monotone",
        if strictly_monotone {
            CheckStatus::Pass
        } else {
            CheckStatus::Warn
        },
        if strictly_monotone {
            String::new()
        } else {
            "feedback existence argument does not apply; solver still runs".into()
        },
    );
}

fn check_terminal_gradient(report: &mut ValidationReport, cost: &CostSpec) {
    let delta = 1e-4;
    let mut worst: f64 = 0.0;
    for p in 0..CONVEXITY_X_PROBES {
        let x = PROBE_X_MAX * p as f64 / (CONVEXITY_X_PROBES - 1) as f64;
        let fd = (cost.terminal(x + delta) - cost.terminal(x - delta)) / (2.0 * delta);
        let exact = cost.terminal_gradient(x);
        worst = worst.max((fd - exact).abs() / (1.0 + exact.abs()));
    }
    // Central differences are O(delta^2); allow a generous constant.
    if worst > 1e-6 {
        report.fail(
            "terminal_gradient",
            ModelError::TerminalGradientMismatch(format!("max relative gap {worst}")),
        );
    } else {
        report.push(
            "terminal_gradient",
            CheckStatus::Pass,
            format!("max relative gap {worst:.3e}"),
        );
    }
}
