//! Tensor grid on the truncated domain `[0, x_max] x [rho, y_max]` and nodal fields.

use serde::{Deserialize, Serialize};

use super::HjbError;

/// Minimum number of interior cells per direction.
pub const MIN_CELLS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub x_max: f64,
    pub rho: f64,
    pub y_max: f64,
    pub nx: usize,
    pub ny: usize,
}

impl GridConfig {
    /// Three-standard-deviation log-normal envelope for `X1` over the horizon:
    /// `x1_0 exp(mu T) exp(3 sqrt(b M T))`, floored at 1.
    pub fn default_x_max(x1_0: f64, mu: f64, horizon: f64, b: f64, y_max: f64) -> f64 {
        let envelope = x1_0 * (mu * horizon).exp() * (3.0 * (b * y_max * horizon).sqrt()).exp();
        envelope.max(1.0)
    }
}

/// Uniform grid with `nx + 2` nodes in `x` (from `0` to `x_max`) and `ny + 2`
/// nodes in `y` (from `rho` to `y_max`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Grid2D {
    pub x_max: f64,
    pub rho: f64,
    pub y_max: f64,
    pub nx: usize,
    pub ny: usize,
    pub dx: f64,
    pub dy: f64,
}

impl Grid2D {
    pub fn new(config: &GridConfig) -> Result<Self, HjbError> {
        let GridConfig {
            x_max,
            rho,
            y_max,
            nx,
            ny,
        } = *config;
        if nx < MIN_CELLS || ny < MIN_CELLS {
            return Err(HjbError::DegenerateGrid(format!(
                "need at least {MIN_CELLS} interior cells per direction (nx = {nx}, ny = {ny})"
            )));
        }
        if !(x_max > 0.0 && x_max.is_finite()) {
            return Err(HjbError::DegenerateGrid(format!("x_max = {x_max} must be positive")));
        }
        if !(rho > 0.0 && rho < y_max && y_max.is_finite()) {
            return Err(HjbError::DegenerateGrid(format!(
                "need 0 < rho < y_max (rho = {rho}, y_max = {y_max})"
            )));
        }
        Ok(Self {
            x_max,
            rho,
            y_max,
            nx,
            ny,
            dx: x_max / (nx + 1) as f64,
            dy: (y_max - rho) / (ny + 1) as f64,
        })
    }

    pub fn config(&self) -> GridConfig {
        GridConfig {
            x_max: self.x_max,
            rho: self.rho,
            y_max: self.y_max,
            nx: self.nx,
            ny: self.ny,
        }
    }

    /// Same domain with every cell split in two.
    pub fn refined(&self) -> Self {
        let mut cfg = self.config();
        cfg.nx = 2 * (self.nx + 1) - 1;
        cfg.ny = 2 * (self.ny + 1) - 1;
        Self::new(&cfg).expect("refining a valid grid stays valid")
    }

    pub fn nodes_x(&self) -> usize {
        self.nx + 2
    }

    pub fn nodes_y(&self) -> usize {
        self.ny + 2
    }

    pub fn len(&self) -> usize {
        self.nodes_x() * self.nodes_y()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn x(&self, i: usize) -> f64 {
        if i == self.nx + 1 {
            self.x_max
        } else {
            i as f64 * self.dx
        }
    }

    #[inline]
    pub fn y(&self, j: usize) -> f64 {
        if j == self.ny + 1 {
            self.y_max
        } else {
            self.rho + j as f64 * self.dy
        }
    }

    /// Storage index; `y` varies fastest.
    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.nodes_y() + j
    }

    /// Trapezoid quadrature weight of node `(i, j)`.
    #[inline]
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        let wx = if i == 0 || i == self.nx + 1 { 0.5 } else { 1.0 };
        let wy = if j == 0 || j == self.ny + 1 { 0.5 } else { 1.0 };
        wx * wy * self.dx * self.dy
    }

    /// Cell index and fractional offset of `x` after clamping into `[0, x_max]`.
    pub(crate) fn locate_x(&self, x: f64) -> (usize, f64, bool) {
        locate(x, 0.0, self.x_max, self.dx, self.nx + 1)
    }

    pub(crate) fn locate_y(&self, y: f64) -> (usize, f64, bool) {
        locate(y, self.rho, self.y_max, self.dy, self.ny + 1)
    }
}

fn locate(v: f64, lo: f64, hi: f64, step: f64, cells: usize) -> (usize, f64, bool) {
    let clamped = !(v >= lo && v <= hi);
    let v = v.clamp(lo, hi);
    let s = (v - lo) / step;
    let cell = (s.floor() as usize).min(cells - 1);
    let frac = (s - cell as f64).clamp(0.0, 1.0);
    (cell, frac, clamped)
}

/// Nodal values on a [`Grid2D`].
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    nodes_x: usize,
    nodes_y: usize,
    data: Vec<f64>,
}

impl Field {
    pub fn zeros(grid: &Grid2D) -> Self {
        Self {
            nodes_x: grid.nodes_x(),
            nodes_y: grid.nodes_y(),
            data: vec![0.0; grid.len()],
        }
    }

    pub fn from_fn(grid: &Grid2D, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut field = Self::zeros(grid);
        for i in 0..grid.nodes_x() {
            for j in 0..grid.nodes_y() {
                field.data[grid.index(i, j)] = f(grid.x(i), grid.y(j));
            }
        }
        field
    }

    pub fn from_vec(grid: &Grid2D, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), grid.len(), "field length does not match grid");
        Self {
            nodes_x: grid.nodes_x(),
            nodes_y: grid.nodes_y(),
            data,
        }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.nodes_y + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.nodes_y + j] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.nodes_x, self.nodes_y)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// `self - other`.
    pub fn sub(&self, other: &Field) -> Field {
        assert_eq!(self.shape(), other.shape());
        Field {
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
            ..*self
        }
    }

    /// `self + alpha * other`.
    pub fn axpy(&self, alpha: f64, other: &Field) -> Field {
        assert_eq!(self.shape(), other.shape());
        Field {
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + alpha * b).collect(),
            ..*self
        }
    }

    /// Bilinear interpolation at `(x, y)` after clamping into the grid
    /// rectangle. The flag reports whether clamping happened.
    pub fn interpolate(&self, grid: &Grid2D, x: f64, y: f64) -> (f64, bool) {
        let (i, fx, cx) = grid.locate_x(x);
        let (j, fy, cy) = grid.locate_y(y);
        let v00 = self.get(i, j);
        let v10 = self.get(i + 1, j);
        let v01 = self.get(i, j + 1);
        let v11 = self.get(i + 1, j + 1);
        let v = (1.0 - fx) * ((1.0 - fy) * v00 + fy * v01) + fx * ((1.0 - fy) * v10 + fy * v11);
        (v, cx || cy)
    }
}

/// Trapezoid-weighted inner product on `Q`.
pub fn inner(grid: &Grid2D, a: &Field, b: &Field) -> f64 {
    let mut acc = 0.0;
    for i in 0..grid.nodes_x() {
        for j in 0..grid.nodes_y() {
            acc += grid.weight(i, j) * a.get(i, j) * b.get(i, j);
        }
    }
    acc
}

/// Discrete `L^2(Q)` norm.
pub fn l2_norm(grid: &Grid2D, z: &Field) -> f64 {
    inner(grid, z, z).sqrt()
}

/// Central differences in `x` at interior nodes, second-order one-sided at
/// `x = 0` and `x = x_max`.
pub fn gradient_x(grid: &Grid2D, z: &Field) -> Field {
    let mut out = Field::zeros(grid);
    let n = grid.nodes_x();
    let inv = 1.0 / (2.0 * grid.dx);
    for j in 0..grid.nodes_y() {
        out.set(0, j, (-3.0 * z.get(0, j) + 4.0 * z.get(1, j) - z.get(2, j)) * inv);
        for i in 1..n - 1 {
            out.set(i, j, (z.get(i + 1, j) - z.get(i - 1, j)) * inv);
        }
        out.set(
            n - 1,
            j,
            (3.0 * z.get(n - 1, j) - 4.0 * z.get(n - 2, j) + z.get(n - 3, j)) * inv,
        );
    }
    out
}

/// Same stencils as [`gradient_x`] in the `y` direction.
pub fn gradient_y(grid: &Grid2D, z: &Field) -> Field {
    let mut out = Field::zeros(grid);
    let m = grid.nodes_y();
    let inv = 1.0 / (2.0 * grid.dy);
    for i in 0..grid.nodes_x() {
        out.set(i, 0, (-3.0 * z.get(i, 0) + 4.0 * z.get(i, 1) - z.get(i, 2)) * inv);
        for j in 1..m - 1 {
            out.set(i, j, (z.get(i, j + 1) - z.get(i, j - 1)) * inv);
        }
        out.set(
            i,
            m - 1,
            (3.0 * z.get(i, m - 1) - 4.0 * z.get(i, m - 2) + z.get(i, m - 3)) * inv,
        );
    }
    out
}

/// Discrete `L^2(Q)` and `V` norms, the latter `(int z^2 + x^2 z_x^2 + z_y^2)^(1/2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DiscreteNorms {
    pub l2: f64,
    pub v: f64,
}

pub fn discrete_norms(grid: &Grid2D, z: &Field) -> DiscreteNorms {
    let zx = gradient_x(grid, z);
    let zy = gradient_y(grid, z);
    let mut l2 = 0.0;
    let mut v = 0.0;
    for i in 0..grid.nodes_x() {
        let x = grid.x(i);
        for j in 0..grid.nodes_y() {
            let w = grid.weight(i, j);
            let zz = z.get(i, j);
            let gx = zx.get(i, j);
            let gy = zy.get(i, j);
            l2 += w * zz * zz;
            v += w * (zz * zz + x * x * gx * gx + gy * gy);
        }
    }
    DiscreteNorms {
        l2: l2.sqrt(),
        v: v.sqrt(),
    }
}
