//! The Hamiltonian `G(x, y, z) = min_{u in [a, b]} { u y z / 2 + f(x, u) }`
//! and its minimising control.
//!
//! Builtin running costs have closed forms:
//!
//! * `f = 0`: the minimiser is bang-bang, `a` when `z > 0` and `b` when
//!   `z < 0`; at `z = 0` every control is optimal and a [`TieRule`] decides.
//! * `f = w (u - c)^2`: the minimiser is `clamp(c - y z / (4 w), a, b)`.
//!
//! Arbitrary convex costs go through [`hamiltonian_convex`], a golden-section
//! search that relies on unimodality of `u -> u y z / 2 + f(x, u)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ControlBounds, CostSpec, RunningCost};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HamiltonianError {
    #[error("variance argument must be nonnegative (got {0})")]
    NegativeVariance(f64),
}

/// Selection inside `[a, b]` when the minimiser set is not a singleton.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieRule {
    #[default]
    Lower,
    Upper,
    Midpoint,
}

impl TieRule {
    pub fn select(&self, bounds: &ControlBounds) -> f64 {
        match self {
            TieRule::Lower => bounds.a(),
            TieRule::Upper => bounds.b(),
            TieRule::Midpoint => bounds.midpoint(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HamiltonianResult {
    /// `G(x, y, z)`.
    pub value: f64,
    /// A control attaining the minimum.
    pub minimizer: f64,
    /// Set when the minimiser set has more than one point.
    pub at_tie: bool,
}

/// Bang-bang selection: `a` for `z > 0`, `b` for `z < 0`, the tie rule at zero.
pub fn bang_bang_select(z: f64, bounds: &ControlBounds, tie: TieRule) -> f64 {
    if z > 0.0 {
        bounds.a()
    } else if z < 0.0 {
        bounds.b()
    } else {
        tie.select(bounds)
    }
}

/// `G(x, y, z)` with the default tie rule.
pub fn hamiltonian(
    x: f64,
    y: f64,
    z: f64,
    cost: &CostSpec,
    bounds: &ControlBounds,
) -> Result<HamiltonianResult, HamiltonianError> {
    hamiltonian_with_tie(x, y, z, cost, bounds, TieRule::default())
}

pub fn hamiltonian_with_tie(
    x: f64,
    y: f64,
    z: f64,
    cost: &CostSpec,
    bounds: &ControlBounds,
    tie: TieRule,
) -> Result<HamiltonianResult, HamiltonianError> {
    if y < 0.0 || y.is_nan() {
        return Err(HamiltonianError::NegativeVariance(y));
    }
    Ok(closed_form(x, y, z, cost, bounds, tie))
}

/// Closed-form minimisation for the builtin costs. Assumes `y >= 0`.
#[inline]
pub(crate) fn closed_form(
    x: f64,
    y: f64,
    z: f64,
    cost: &CostSpec,
    bounds: &ControlBounds,
    tie: TieRule,
) -> HamiltonianResult {
    let weight = cost.scale;
    match cost.running {
        RunningCost::QuadraticTracking { c } if weight > 0.0 => {
            let u = bounds.clamp(c - y * z / (4.0 * weight));
            HamiltonianResult {
                value: 0.5 * u * y * z + cost.running(x, u),
                minimizer: u,
                at_tie: bounds.is_pinned(),
            }
        }
        _ => {
            let u = bang_bang_select(z, bounds, tie);
            HamiltonianResult {
                value: 0.5 * u * y * z,
                minimizer: u,
                at_tie: z == 0.0 || y == 0.0 || bounds.is_pinned(),
            }
        }
    }
}

/// Secant slope `G(x, y, z) / z`, extended by `y u*(0) / 2` at `z = 0`.
///
/// Because `G(x, y, 0) = 0` for every admissible cost, `G(z) = slope(z) z`
/// and the slope lies in `[a y / 2, b y / 2]`.
#[inline]
pub(crate) fn secant_slope(x: f64, y: f64, z: f64, cost: &CostSpec, bounds: &ControlBounds, tie: TieRule) -> f64 {
    let r = closed_form(x, y, z, cost, bounds, tie);
    // G = u* y z / 2 + f(x, u*); dividing only the cost part keeps the slope
    // exact whenever f(x, u*) = 0.
    let running = cost.running(x, r.minimizer);
    if z == 0.0 || running == 0.0 {
        0.5 * y * r.minimizer
    } else {
        0.5 * y * r.minimizer + running / z
    }
}

/// Minimum of `u y z / 2 + f(x, u)` over an `n_grid`-point uniform grid on `[a, b]`.
///
/// Test oracle for [`hamiltonian`]; the error is `O(1/n_grid)` for Lipschitz
/// integrands.
pub fn brute_force_hamiltonian(x: f64, y: f64, z: f64, cost: &CostSpec, bounds: &ControlBounds, n_grid: usize) -> f64 {
    assert!(n_grid >= 2, "brute force grid needs at least two points");
    let (a, b) = (bounds.a(), bounds.b());
    let step = (b - a) / (n_grid - 1) as f64;
    (0..n_grid)
        .map(|i| {
            let u = if i == n_grid - 1 { b } else { a + step * i as f64 };
            0.5 * u * y * z + cost.running(x, u)
        })
        .fold(f64::INFINITY, f64::min)
}

const GOLDEN_TOL: f64 = 1e-10;

/// Golden-section minimisation of `u y z / 2 + f(u)` for a convex `f` on `[a, b]`.
pub fn hamiltonian_convex<F>(y: f64, z: f64, f: F, bounds: &ControlBounds) -> HamiltonianResult
where
    F: Fn(f64) -> f64,
{
    let objective = |u: f64| 0.5 * u * y * z + f(u);
    let (u, value) = golden_section(objective, bounds.a(), bounds.b(), GOLDEN_TOL);
    // Endpoints are not visited by the bracket; compare explicitly.
    let (mut best_u, mut best) = (u, value);
    for end in [bounds.a(), bounds.b()] {
        let v = objective(end);
        if v < best {
            best = v;
            best_u = end;
        }
    }
    HamiltonianResult {
        value: best,
        minimizer: best_u,
        at_tie: false,
    }
}

/// Golden-section search for the minimum of a unimodal function on `[lo, hi]`.
pub fn golden_section<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, tol: f64) -> (f64, f64) {
    let inv_phi = (5.0_f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - inv_phi * (hi - lo);
    let mut d = lo + inv_phi * (hi - lo);
    let mut fc = f(c);
    let mut fd = f(d);
    while hi - lo > tol {
        if fc <= fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - inv_phi * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + inv_phi * (hi - lo);
            fd = f(d);
        }
    }
    let u = 0.5 * (lo + hi);
    (u, f(u))
}
