//! Discrete operator `A` of the time-reversed problem `dq/dt + A q = 0`:
//!
//! ```text
//! A z = -mu (x z)_x - k (theta - y) z_y - (sigma^2 / 2) y z_yy - (x^2 G(x, y, z_x))_x
//! ```
//!
//! * `-mu (x z)_x`: forward difference of the flux `x z` (upwind for the
//!   wind `mu x`); zero-gradient ghost at `x_max`.
//! * `-k (theta - y) z_y - (sigma^2 / 2) y z_yy`: either first-order upwind
//!   advection plus centred diffusion, or the exponentially fitted
//!   (Il'in–Allen–Southwell) two-point stencil; see [`YStencil`].
//! * `-(x^2 G)_x`: conservative `D-[x^2_{i+1/2} G(x_{i+1/2}, y_j, D+ z)]`; the
//!   flux vanishes at `x = 0` and is reflected at `x_max` (homogeneous Neumann).
//!
//! In Dirichlet mode the rows `y = rho` and `y = y_max` are pinned to zero.
//! In Neumann mode they are unknowns with reflected ghost values.

use crate::hamiltonian::{closed_form, secant_slope, TieRule};
use crate::model::{ControlBounds, CostSpec, ModelParams};

use super::banded::BandMatrix;
use super::grid::{Field, Grid2D};
use super::{HjbError, YBoundary, YStencil};

/// Everything needed to evaluate the discrete HJB operator.
#[derive(Debug, Clone, PartialEq)]
pub struct HjbProblem {
    pub grid: Grid2D,
    pub model: ModelParams,
    pub cost: CostSpec,
    pub bounds: ControlBounds,
    pub y_boundary: YBoundary,
    pub y_stencil: YStencil,
    pub tie: TieRule,
}

/// `x / (e^x - 1)`, the Bernoulli function of exponential fitting.
#[inline]
fn bernoulli(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0 - 0.5 * x
    } else {
        x / x.exp_m1()
    }
}

impl HjbProblem {
    pub fn new(grid: Grid2D, model: ModelParams, cost: CostSpec, bounds: ControlBounds, y_boundary: YBoundary) -> Self {
        Self {
            grid,
            model,
            cost,
            bounds,
            y_boundary,
            y_stencil: YStencil::default(),
            tie: TieRule::default(),
        }
    }

    /// Rates `(down, up)` of the discrete generator
    /// `k (theta - y) z_y + (sigma^2 / 2) y z_yy ~ down (z_{j-1} - z_j) + up (z_{j+1} - z_j)`
    /// on row `j`. Both are nonnegative and `up - down = k (theta - y) / dy`.
    #[inline]
    pub(crate) fn y_rates(&self, j: usize) -> (f64, f64) {
        let ModelParams { k, theta, sigma, .. } = self.model;
        let dy = self.grid.dy;
        let y = self.grid.y(j);
        let wind = k * (theta - y);
        let diff = 0.5 * sigma * sigma * y;
        match self.y_stencil {
            YStencil::Fitted if diff > 0.0 => {
                let peclet = wind * dy / diff;
                let scale = diff / (dy * dy);
                (scale * bernoulli(peclet), scale * bernoulli(-peclet))
            }
            _ => {
                let d = diff / (dy * dy);
                (d + (-wind).max(0.0) / dy, d + wind.max(0.0) / dy)
            }
        }
    }

    pub fn with_grid(&self, grid: Grid2D) -> Self {
        Self { grid, ..self.clone() }
    }

    #[inline]
    pub(crate) fn is_pinned_row(&self, j: usize) -> bool {
        self.y_boundary == YBoundary::DirichletZero && (j == 0 || j == self.grid.ny + 1)
    }

    /// Zero the Dirichlet rows (no-op in Neumann mode).
    pub fn impose_boundary(&self, z: &mut Field) {
        if self.y_boundary == YBoundary::DirichletZero {
            for i in 0..self.grid.nodes_x() {
                z.set(i, 0, 0.0);
                z.set(i, self.grid.ny + 1, 0.0);
            }
        }
    }

    pub fn check_boundary(&self, z: &Field) -> Result<(), HjbError> {
        if z.shape() != (self.grid.nodes_x(), self.grid.nodes_y()) {
            return Err(HjbError::BoundaryModeMismatch(format!(
                "field shape {:?} does not match grid",
                z.shape()
            )));
        }
        if self.y_boundary == YBoundary::DirichletZero {
            for i in 0..self.grid.nodes_x() {
                for j in [0, self.grid.ny + 1] {
                    if z.get(i, j) != 0.0 {
                        return Err(HjbError::BoundaryModeMismatch(format!(
                            "nonzero value {} on Dirichlet row j = {j}",
                            z.get(i, j)
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    #[inline]
    fn face_x(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.grid.dx
    }

    /// Nonlinear flux `x^2 G(x, y, z_x)` at face `(i + 1/2, j)`.
    #[inline]
    fn flux(&self, i: usize, j: usize, dz: f64) -> f64 {
        let xf = self.face_x(i);
        let y = self.grid.y(j);
        xf * xf * closed_form(xf, y, dz, &self.cost, &self.bounds, self.tie).value
    }

    /// `A z`.
    pub fn apply(&self, z: &Field) -> Result<Field, HjbError> {
        self.check_boundary(z)?;
        Ok(self.apply_with(z, |i, j, dz| self.flux(i, j, dz)))
    }

    /// `A` with the nonlinear flux frozen at the given face slopes.
    pub fn apply_frozen(&self, slopes: &[f64], z: &Field) -> Field {
        let dx = self.grid.dx;
        let ny = self.grid.nodes_y();
        self.apply_with(z, |i, j, dz| {
            let xf = (i as f64 + 0.5) * dx;
            xf * xf * slopes[i * ny + j] * dz
        })
    }

    fn apply_with(&self, z: &Field, flux: impl Fn(usize, usize, f64) -> f64) -> Field {
        let g = &self.grid;
        let mu = self.model.mu;
        let (nxn, nyn) = (g.nodes_x(), g.nodes_y());
        let dx = g.dx;
        let mut out = Field::zeros(g);
        let mut faces = vec![0.0; nxn - 1];
        for j in 0..nyn {
            if self.is_pinned_row(j) {
                continue;
            }
            for (i, f) in faces.iter_mut().enumerate() {
                *f = flux(i, j, (z.get(i + 1, j) - z.get(i, j)) / dx);
            }
            let (down, up) = self.y_rates(j);
            let below = if j == 0 { 1 } else { j - 1 };
            let above = if j + 1 == nyn { j - 1 } else { j + 1 };
            for i in 0..nxn {
                let zc = z.get(i, j);
                let adv_x = if i + 1 < nxn {
                    -mu * (g.x(i + 1) * z.get(i + 1, j) - g.x(i) * zc) / dx
                } else {
                    -mu * zc
                };
                let y_part = -(down * (z.get(i, below) - zc) + up * (z.get(i, above) - zc));
                let nonlinear = if i == 0 {
                    -faces[0] / dx
                } else if i + 1 == nxn {
                    2.0 * faces[i - 1] / dx
                } else {
                    -(faces[i] - faces[i - 1]) / dx
                };
                out.set(i, j, adv_x + y_part + nonlinear);
            }
        }
        out
    }

    /// Secant slopes `G(D+ z) / D+ z` at every x-face, laid out like a field
    /// without its last x-column.
    pub fn face_slopes(&self, z: &Field) -> Vec<f64> {
        let g = &self.grid;
        let nyn = g.nodes_y();
        let mut s = vec![0.0; (g.nodes_x() - 1) * nyn];
        for i in 0..g.nodes_x() - 1 {
            let xf = self.face_x(i);
            for j in 0..nyn {
                let dz = (z.get(i + 1, j) - z.get(i, j)) / g.dx;
                s[i * nyn + j] = secant_slope(xf, g.y(j), dz, &self.cost, &self.bounds, self.tie);
            }
        }
        s
    }

    /// Band matrix of `I + h A_s` with the flux frozen at `slopes`.
    pub(crate) fn assemble(&self, slopes: &[f64], h: f64) -> BandMatrix {
        let g = &self.grid;
        let mu = self.model.mu;
        let (nxn, nyn) = (g.nodes_x(), g.nodes_y());
        let dx = g.dx;
        let mut m = BandMatrix::zeros(g.len(), nyn, nyn);
        for i in 0..nxn {
            for j in 0..nyn {
                let r = g.index(i, j);
                m.add(r, r, 1.0);
                if self.is_pinned_row(j) {
                    continue;
                }
                // x advection
                if i + 1 < nxn {
                    m.add(r, r, h * mu * g.x(i) / dx);
                    m.add(r, g.index(i + 1, j), -h * mu * g.x(i + 1) / dx);
                } else {
                    m.add(r, r, -h * mu);
                }
                // y advection and diffusion
                let (down, up) = self.y_rates(j);
                let below = if j == 0 { 1 } else { j - 1 };
                let above = if j + 1 == nyn { j - 1 } else { j + 1 };
                m.add(r, r, h * (down + up));
                m.add(r, g.index(i, below), -h * down);
                m.add(r, g.index(i, above), -h * up);
                // frozen nonlinear flux, kappa = x_f^2 s / dx
                let kappa = |face: usize| {
                    let xf = self.face_x(face);
                    xf * xf * slopes[face * nyn + j] / dx
                };
                if i == 0 {
                    let kp = h * kappa(0) / dx;
                    m.add(r, r, kp);
                    m.add(r, g.index(1, j), -kp);
                } else if i + 1 == nxn {
                    let km = 2.0 * h * kappa(i - 1) / dx;
                    m.add(r, r, km);
                    m.add(r, g.index(i - 1, j), -km);
                } else {
                    let kp = h * kappa(i) / dx;
                    let km = h * kappa(i - 1) / dx;
                    m.add(r, r, kp + km);
                    m.add(r, g.index(i + 1, j), -kp);
                    m.add(r, g.index(i - 1, j), -km);
                }
            }
        }
        m
    }
}
