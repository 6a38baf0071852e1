//! Numerical diagnostics: grid refinement, fitted coercivity constants and
//! the empirical quasi-contraction rate of the discrete semigroup.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::model::{ControlBounds, CostSpec, ModelParams};

use super::grid::{discrete_norms, inner, l2_norm, Field, Grid2D};
use super::operator::HjbProblem;
use super::solver::{march, solve_backward};
use super::{HjbError, SchemeConfig};

/// One row of a refinement study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RefinementLevel {
    pub nx: usize,
    pub ny: usize,
    pub n_time_steps: usize,
    pub dx: f64,
    pub dy: f64,
    pub h: f64,
    /// Interior discrete `L^2` distance between `p(0)` on this grid and on
    /// the next finer one, measured on this grid's nodes.
    pub diff_to_next: Option<f64>,
    /// `log2` of the ratio of successive differences.
    pub order: Option<f64>,
}

/// Closed rectangle restricting where refinement differences are measured.
///
/// With the Dirichlet `y` condition the solution develops layers at
/// `y = rho` and `y = y_max` thinner than any practical `dy` (the diffusion
/// coefficient vanishes there while the drift points into the domain). A
/// window excluding those strips measures convergence of the bulk solution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Window {
    pub x_lo: f64,
    pub x_hi: f64,
    pub y_lo: f64,
    pub y_hi: f64,
}

impl Window {
    /// Every interior node.
    pub fn whole() -> Self {
        Self {
            x_lo: f64::NEG_INFINITY,
            x_hi: f64::INFINITY,
            y_lo: f64::NEG_INFINITY,
            y_hi: f64::INFINITY,
        }
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        (self.x_lo..=self.x_hi).contains(&x) && (self.y_lo..=self.y_hi).contains(&y)
    }
}

impl Default for Window {
    fn default() -> Self {
        Self::whole()
    }
}

/// Solves on `levels` nested grids (each step halves `dx`, `dy` and `h`) and
/// compares `p(0)` between successive solutions at the coarse interior nodes
/// lying in `window`.
pub fn refinement_study(
    model: &ModelParams,
    cost: &CostSpec,
    bounds: &ControlBounds,
    base: &Grid2D,
    scheme: &SchemeConfig,
    levels: usize,
    window: &Window,
) -> Result<Vec<RefinementLevel>, HjbError> {
    if levels < 2 {
        return Err(HjbError::InvalidScheme(
            "a refinement study needs at least two levels".into(),
        ));
    }
    let mut grids = vec![*base];
    for _ in 1..levels {
        let next = grids.last().unwrap().refined();
        grids.push(next);
    }
    let mut initial = Vec::with_capacity(levels);
    for (l, g) in grids.iter().enumerate() {
        let sch = SchemeConfig {
            n_time_steps: scheme.n_time_steps << l,
            ..*scheme
        };
        let sol = solve_backward(model, cost, bounds, g, &sch)?;
        initial.push(sol.p(0).clone());
    }
    let mut rows: Vec<RefinementLevel> = grids
        .iter()
        .enumerate()
        .map(|(l, g)| {
            let n = scheme.n_time_steps << l;
            RefinementLevel {
                nx: g.nx,
                ny: g.ny,
                n_time_steps: n,
                dx: g.dx,
                dy: g.dy,
                h: model.horizon / n as f64,
                diff_to_next: None,
                order: None,
            }
        })
        .collect();
    for l in 0..levels - 1 {
        rows[l].diff_to_next = Some(interior_difference(&grids[l], window, &initial[l], &initial[l + 1]));
    }
    for l in 1..levels - 1 {
        if let (Some(a), Some(b)) = (rows[l - 1].diff_to_next, rows[l].diff_to_next) {
            rows[l].order = Some((a / b).log2());
        }
    }
    Ok(rows)
}

/// Discrete `L^2` norm over interior nodes of `coarse` inside `window` of
/// `a - restrict(b)`, where `b` lives on the once-refined grid.
fn interior_difference(coarse: &Grid2D, window: &Window, a: &Field, b: &Field) -> f64 {
    let mut acc = 0.0;
    for i in 1..=coarse.nx {
        for j in 1..=coarse.ny {
            if !window.contains(coarse.x(i), coarse.y(j)) {
                continue;
            }
            let d = a.get(i, j) - b.get(2 * i, 2 * j);
            acc += d * d * coarse.dx * coarse.dy;
        }
    }
    acc.sqrt()
}

/// Fitted constants of `(A z, z) >= alpha3 |z|_V^2 - alpha4 |z|^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CoercivityFit {
    pub alpha3: f64,
    pub alpha4: f64,
    pub samples: usize,
}

/// Probes the coercivity inequality on random boundary-consistent fields.
///
/// `alpha4` is the smallest shift making every pairing nonnegative, plus one;
/// `alpha3` is then the largest constant compatible with all samples.
pub fn coercivity_constants(problem: &HjbProblem, samples: usize, seed: u64) -> Result<CoercivityFit, HjbError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = &problem.grid;
    let mut stats = Vec::with_capacity(samples);
    for _ in 0..samples {
        let z = random_smooth_field(g, &mut rng, 4);
        let mut z = z;
        problem.impose_boundary(&mut z);
        let pairing = inner(g, &problem.apply(&z)?, &z);
        let norms = discrete_norms(g, &z);
        if norms.l2 > 0.0 {
            stats.push((pairing, norms.v * norms.v, norms.l2 * norms.l2));
        }
    }
    let alpha4 = stats.iter().map(|&(p, _, l2)| (-p / l2).max(0.0)).fold(0.0, f64::max) + 1.0;
    let alpha3 = stats
        .iter()
        .map(|&(p, v2, l2)| (p + alpha4 * l2) / v2)
        .fold(f64::INFINITY, f64::min);
    Ok(CoercivityFit {
        alpha3,
        alpha4,
        samples: stats.len(),
    })
}

/// Random field made of a few low sine modes in each direction with
/// standard normal-ish amplitudes decaying like `1 / (m n)`.
pub(crate) fn random_smooth_field(grid: &Grid2D, rng: &mut ChaCha8Rng, modes: usize) -> Field {
    let mut coef = vec![0.0; modes * modes];
    let mut phase = vec![0.0; modes];
    for c in coef.iter_mut() {
        *c = rng.random_range(-1.0..1.0);
    }
    for p in phase.iter_mut() {
        *p = rng.random_range(0.0..std::f64::consts::PI);
    }
    let (lx, ly) = (grid.x_max, grid.y_max - grid.rho);
    Field::from_fn(grid, |x, y| {
        let mut v = 0.0;
        for m in 0..modes {
            let cx = ((m as f64 + 0.5) * std::f64::consts::PI * x / lx + phase[m]).cos();
            for n in 0..modes {
                let sy = ((n + 1) as f64 * std::f64::consts::PI * (y - grid.rho) / ly).sin();
                v += coef[m * modes + n] * cx * sy / ((m + 1) * (n + 1)) as f64;
            }
        }
        v
    })
}

/// Largest observed `ln(|q(T) - qbar(T)| / |q0 - qbar0|) / T` over the given
/// pairs of initial fields, marching `n_steps` implicit steps of size `h`.
pub fn quasi_contraction_rate(
    problem: &HjbProblem,
    pairs: &[(Field, Field)],
    h: f64,
    n_steps: usize,
    scheme: &SchemeConfig,
) -> Result<f64, HjbError> {
    let horizon = h * n_steps as f64;
    let g = &problem.grid;
    let mut eta = f64::NEG_INFINITY;
    for (q0, qb0) in pairs {
        let d0 = l2_norm(g, &q0.sub(qb0));
        if d0 == 0.0 {
            continue;
        }
        let (q, _) = march(problem, q0.clone(), h, n_steps, scheme, |_, _| {})?;
        let (qb, _) = march(problem, qb0.clone(), h, n_steps, scheme, |_, _| {})?;
        let d = l2_norm(g, &q.sub(&qb));
        eta = eta.max((d / d0).ln() / horizon);
    }
    Ok(eta)
}

/// Pairs of random smooth boundary-consistent fields for
/// [`quasi_contraction_rate`].
pub fn random_field_pairs(problem: &HjbProblem, count: usize, seed: u64) -> Vec<(Field, Field)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let mut a = random_smooth_field(&problem.grid, &mut rng, 3);
            let mut b = random_smooth_field(&problem.grid, &mut rng, 3);
            problem.impose_boundary(&mut a);
            problem.impose_boundary(&mut b);
            (a, b)
        })
        .collect()
}
