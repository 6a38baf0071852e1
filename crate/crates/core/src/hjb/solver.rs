use std::io::{self, BufRead, Write};

use serde::Serialize;

use crate::model::{ControlBounds, CostSpec, ModelParams};

use super::banded::{BandLu, BandMatrix};
use super::grid::{gradient_x, l2_norm, Field, Grid2D};
use super::operator::HjbProblem;
use super::{HjbError, SchemeConfig, YBoundary};

const LINEAR_RTOL: f64 = 1e-12;
const MAX_REFINEMENTS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepDiagnostics {
    pub picard_iterations: usize,
    /// Final residual `|q + h A q - q_prev|` in discrete `L^2`.
    pub residual: f64,
    pub converged: bool,
}

/// `p(T, ., .) = g_x`, constant in `y`, with Dirichlet rows zeroed.
pub fn terminal_field(problem: &HjbProblem) -> Field {
    let cost = problem.cost;
    let mut f = Field::from_fn(&problem.grid, |x, _| cost.terminal_gradient(x));
    problem.impose_boundary(&mut f);
    f
}

struct LinearCache {
    slopes: Vec<f64>,
    h: f64,
    matrix: BandMatrix,
    lu: BandLu,
}

/// Implicit Euler stepper that reuses the factorisation while the frozen
/// coefficients do not change (always the case for a pinned control).
pub struct ImplicitStepper<'a> {
    problem: &'a HjbProblem,
    scheme: SchemeConfig,
    cache: Option<LinearCache>,
    factorizations: usize,
}

impl<'a> ImplicitStepper<'a> {
    pub fn new(problem: &'a HjbProblem, scheme: &SchemeConfig) -> Result<Self, HjbError> {
        scheme.check()?;
        Ok(Self {
            problem,
            scheme: *scheme,
            cache: None,
            factorizations: 0,
        })
    }

    pub fn factorizations(&self) -> usize {
        self.factorizations
    }

    fn linear_solve(&mut self, slopes: Vec<f64>, h: f64, rhs: &[f64]) -> Result<Vec<f64>, HjbError> {
        let reuse = matches!(&self.cache, Some(c) if c.h == h && c.slopes == slopes);
        if !reuse {
            let matrix = self.problem.assemble(&slopes, h);
            let lu = matrix.clone().factor()?;
            self.factorizations += 1;
            self.cache = Some(LinearCache { slopes, h, matrix, lu });
        }
        let cache = self.cache.as_ref().expect("cache populated above");
        let norm_rhs = rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut x = rhs.to_vec();
        cache.lu.solve_in_place(&mut x);
        let mut r = vec![0.0; rhs.len()];
        for _ in 0..=MAX_REFINEMENTS {
            cache.matrix.matvec(&x, &mut r);
            for (ri, bi) in r.iter_mut().zip(rhs) {
                *ri = bi - *ri;
            }
            let norm_r = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm_r <= LINEAR_RTOL * norm_rhs {
                return Ok(x);
            }
            if !norm_r.is_finite() {
                break;
            }
            cache.lu.solve_in_place(&mut r);
            for (xi, di) in x.iter_mut().zip(&r) {
                *xi += di;
            }
        }
        Err(HjbError::SingularLinearSystem(
            "linear solve did not reach the relative residual target".into(),
        ))
    }

    fn residual(&self, q: &Field, h: f64, q_prev: &Field) -> Result<f64, HjbError> {
        let aq = self.problem.apply(q)?;
        Ok(l2_norm(&self.problem.grid, &q.axpy(h, &aq).sub(q_prev)))
    }

    /// Solves `q + h A q = q_prev`.
    pub fn step(&mut self, q_prev: &Field, h: f64) -> Result<(Field, StepDiagnostics), HjbError> {
        if !(h > 0.0) {
            return Err(HjbError::InvalidScheme(format!("time step must be positive (got {h})")));
        }
        self.problem.check_boundary(q_prev)?;
        let grid = self.problem.grid;
        let target = self.scheme.picard_tol * (1.0 + l2_norm(&grid, q_prev));
        let initial = self.residual(q_prev, h, q_prev)?;
        let mut q = q_prev.clone();
        let mut best: Option<(f64, Field, usize)> = None;
        for it in 1..=self.scheme.picard_max_iter {
            let slopes = self.problem.face_slopes(&q);
            let next = self.linear_solve(slopes, h, q_prev.as_slice())?;
            q = Field::from_vec(&grid, next);
            let r = self.residual(&q, h, q_prev)?;
            if !r.is_finite() {
                return Err(HjbError::PicardDivergence {
                    iterations: it,
                    residual: r,
                });
            }
            if r <= target {
                return Ok((
                    q,
                    StepDiagnostics {
                        picard_iterations: it,
                        residual: r,
                        converged: true,
                    },
                ));
            }
            if best.as_ref().is_none_or(|(b, _, _)| r < *b) {
                best = Some((r, q.clone(), it));
            }
        }
        match best {
            Some((r, q, _)) if r < initial => Ok((
                q,
                StepDiagnostics {
                    picard_iterations: self.scheme.picard_max_iter,
                    residual: r,
                    converged: false,
                },
            )),
            Some((r, _, _)) => Err(HjbError::PicardDivergence {
                iterations: self.scheme.picard_max_iter,
                residual: r,
            }),
            None => unreachable!("picard_max_iter >= 1"),
        }
    }
}

/// One implicit Euler step `q_next + h A q_next = q_prev`.
pub fn implicit_step(
    problem: &HjbProblem,
    q_prev: &Field,
    h: f64,
    scheme: &SchemeConfig,
) -> Result<(Field, StepDiagnostics), HjbError> {
    ImplicitStepper::new(problem, scheme)?.step(q_prev, h)
}

/// Marches `q` from `q0` through `n_steps` implicit steps of size `h`,
/// calling `on_level` with every new level (index starting at 1).
pub fn march(
    problem: &HjbProblem,
    q0: Field,
    h: f64,
    n_steps: usize,
    scheme: &SchemeConfig,
    mut on_level: impl FnMut(usize, &Field),
) -> Result<(Field, Vec<StepDiagnostics>), HjbError> {
    let mut stepper = ImplicitStepper::new(problem, scheme)?;
    let mut q = q0;
    let mut diagnostics = Vec::with_capacity(n_steps);
    for n in 1..=n_steps {
        let (next, diag) = stepper.step(&q, h)?;
        q = next;
        on_level(n, &q);
        diagnostics.push(diag);
    }
    Ok((q, diagnostics))
}

/// Solution `p(t_i, ., .)` and `p_x(t_i, ., .)` at `t_i = i T / N`, `i = 0..=N`.
#[derive(Debug, Clone)]
pub struct SolutionField {
    pub grid: Grid2D,
    /// Problem data when the field was produced in-process; `None` when read
    /// back from a file.
    pub problem: Option<HjbProblem>,
    times: Vec<f64>,
    p: Vec<Field>,
    px: Vec<Field>,
    /// Per-step diagnostics in marching order (`t = T` towards `t = 0`).
    pub diagnostics: Vec<StepDiagnostics>,
}

/// Marches the time-reversed problem from `q(0) = g_x` to `t = T` and stores
/// every level.
pub fn solve_backward(
    model: &ModelParams,
    cost: &CostSpec,
    bounds: &ControlBounds,
    grid: &Grid2D,
    scheme: &SchemeConfig,
) -> Result<SolutionField, HjbError> {
    scheme.check()?;
    let mut problem = HjbProblem::new(*grid, *model, *cost, *bounds, scheme.y_boundary);
    problem.tie = scheme.tie_rule;
    problem.y_stencil = scheme.y_stencil;
    let n = scheme.n_time_steps;
    let h = model.horizon / n as f64;
    let q0 = terminal_field(&problem);
    let mut qs = Vec::with_capacity(n + 1);
    qs.push(q0.clone());
    let (_, diagnostics) = march(&problem, q0, h, n, scheme, |_, q| qs.push(q.clone()))?;
    qs.reverse();
    let times = (0..=n)
        .map(|i| if i == n { model.horizon } else { i as f64 * h })
        .collect();
    let px = qs.iter().map(|p| gradient_x(grid, p)).collect();
    Ok(SolutionField {
        grid: *grid,
        problem: Some(problem),
        times,
        p: qs,
        px,
        diagnostics,
    })
}

/// Central-difference `p_x` of a stored level.
pub fn gradient_field(solution: &SolutionField, level: usize) -> Field {
    gradient_x(&solution.grid, solution.p(level))
}

/// `phi(t, x, y) = -int_x^{x_max} p(t, xi, y) d xi` by the trapezoid rule.
///
/// The value function is only determined up to an additive function of
/// `(t, y)`; this representative vanishes at `x = x_max`.
pub fn reconstruct_value(solution: &SolutionField, level: usize) -> Field {
    let g = &solution.grid;
    let p = solution.p(level);
    let mut phi = Field::zeros(g);
    let last = g.nodes_x() - 1;
    for j in 0..g.nodes_y() {
        let mut acc = 0.0;
        phi.set(last, j, 0.0);
        for i in (0..last).rev() {
            acc += 0.5 * (g.x(i + 1) - g.x(i)) * (p.get(i, j) + p.get(i + 1, j));
            phi.set(i, j, -acc);
        }
    }
    phi
}

impl SolutionField {
    pub fn n_levels(&self) -> usize {
        self.times.len()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().expect("at least two levels")
    }

    pub fn p(&self, level: usize) -> &Field {
        &self.p[level]
    }

    pub fn px(&self, level: usize) -> &Field {
        &self.px[level]
    }

    /// First stored level with `t_level >= t` (up to rounding), clamped to the last.
    pub fn level_at_or_after(&self, t: f64) -> usize {
        let slack = 1e-12 * self.horizon().max(1.0);
        self.times
            .iter()
            .position(|&tl| tl >= t - slack)
            .unwrap_or(self.times.len() - 1)
    }

    pub fn interpolate_p(&self, level: usize, x: f64, y: f64) -> f64 {
        self.p[level].interpolate(&self.grid, x, y).0
    }

    pub fn interpolate_px(&self, level: usize, x: f64, y: f64) -> (f64, bool) {
        self.px[level].interpolate(&self.grid, x, y)
    }

    pub fn is_finite(&self) -> bool {
        self.p.iter().chain(&self.px).all(Field::is_finite)
    }

    pub fn y_boundary(&self) -> Option<YBoundary> {
        self.problem.as_ref().map(|p| p.y_boundary)
    }

    /// CSV dump with header `t,x,y,p,p_x`, rows ordered by `(t, y, x)`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "t,x,y,p,p_x")?;
        let g = &self.grid;
        for (level, &t) in self.times.iter().enumerate() {
            for j in 0..g.nodes_y() {
                for i in 0..g.nodes_x() {
                    writeln!(
                        w,
                        "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                        t,
                        g.x(i),
                        g.y(j),
                        self.p[level].get(i, j),
                        self.px[level].get(i, j)
                    )?;
                }
            }
        }
        Ok(())
    }

    /// Reads a dump produced by [`SolutionField::write_csv`].
    pub fn read_csv<R: BufRead>(r: R) -> Result<Self, HjbError> {
        let bad = |msg: String| HjbError::FieldFormat(msg);
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| bad("empty file".into()))?
            .map_err(|e| bad(e.to_string()))?;
        if header.trim() != "t,x,y,p,p_x" {
            return Err(bad(format!("unexpected header `{header}`")));
        }
        let mut rows: Vec<[f64; 5]> = Vec::new();
        for (n, line) in lines.enumerate() {
            let line = line.map_err(|e| bad(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let mut row = [0.0; 5];
            let mut parts = line.split(',');
            for slot in row.iter_mut() {
                let s = parts
                    .next()
                    .ok_or_else(|| bad(format!("line {}: too few columns", n + 2)))?;
                *slot = s.trim().parse().map_err(|e| bad(format!("line {}: {e}", n + 2)))?;
            }
            rows.push(row);
        }
        if rows.is_empty() {
            return Err(bad("no data rows".into()));
        }
        let t0 = rows[0][0];
        let level_len = rows.iter().take_while(|r| r[0] == t0).count();
        let y0 = rows[0][2];
        let nxn = rows.iter().take_while(|r| r[2] == y0).count();
        if nxn < 3 || level_len % nxn != 0 || !rows.len().is_multiple_of(level_len) {
            return Err(bad("rows do not form a tensor grid".into()));
        }
        let nyn = level_len / nxn;
        let x_max = rows[nxn - 1][1];
        let rho = y0;
        let y_max = rows[level_len - 1][2];
        let grid = Grid2D::new(&super::GridConfig {
            x_max,
            rho,
            y_max,
            nx: nxn - 2,
            ny: nyn - 2,
        })?;
        let n_levels = rows.len() / level_len;
        let mut times = Vec::with_capacity(n_levels);
        let mut p = Vec::with_capacity(n_levels);
        let mut px = Vec::with_capacity(n_levels);
        for chunk in rows.chunks(level_len) {
            let t = chunk[0][0];
            let mut pf = Field::zeros(&grid);
            let mut pxf = Field::zeros(&grid);
            for (k, row) in chunk.iter().enumerate() {
                let (j, i) = (k / nxn, k % nxn);
                let tol = 1e-9 * (1.0 + grid.x_max.max(grid.y_max));
                if row[0] != t || (row[1] - grid.x(i)).abs() > tol || (row[2] - grid.y(j)).abs() > tol {
                    return Err(bad(format!("row {k} of level t = {t} is out of order")));
                }
                pf.set(i, j, row[3]);
                pxf.set(i, j, row[4]);
            }
            times.push(t);
            p.push(pf);
            px.push(pxf);
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(bad("time levels must be strictly increasing".into()));
        }
        Ok(Self {
            grid,
            problem: None,
            times,
            p,
            px,
            diagnostics: Vec::new(),
        })
    }
}
