//! Uniform cell-centered grids on boxes and the Neumann-consistent operators
//! built on them.
//!
//! Cells are stored axis-major: axis 0 varies slowest, the last axis fastest.
//! Boundary closure is by mirror ghost cells, so every boundary face carries
//! zero flux and the discrete divergence theorem holds exactly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform tensor grid over `(0, L_0) x ... x (0, L_{N-1})`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    dim: usize,
    cells: [usize; 3],
    extents: [f64; 3],
}

impl Grid {
    pub fn new(dim: usize, extents: &[f64], resolutions: &[usize]) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::InvalidGrid(format!("dimension must be 1, 2 or 3, got {dim}")));
        }
        if extents.len() != dim || resolutions.len() != dim {
            return Err(Error::InvalidGrid(format!(
                "expected {dim} extents and {dim} resolutions, got {} and {}",
                extents.len(),
                resolutions.len()
            )));
        }
        let mut cells = [1usize; 3];
        let mut lengths = [1.0f64; 3];
        for axis in 0..dim {
            let (l, n) = (extents[axis], resolutions[axis]);
            if !(l.is_finite() && l > 0.0) {
                return Err(Error::InvalidGrid(format!("extent on axis {axis} must be positive, got {l}")));
            }
            if n == 0 {
                return Err(Error::InvalidGrid(format!("resolution on axis {axis} must be positive")));
            }
            cells[axis] = n;
            lengths[axis] = l;
        }
        Ok(Self { dim, cells, extents: lengths })
    }

    /// Same cell count `n` and extent `l` on every axis.
    pub fn cube(dim: usize, l: f64, n: usize) -> Result<Self> {
        Self::new(dim, &vec![l; dim], &vec![n; dim])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cells(&self) -> &[usize] {
        &self.cells[..self.dim]
    }

    pub fn extents(&self) -> &[f64] {
        &self.extents[..self.dim]
    }

    pub fn len(&self) -> usize {
        self.cells().iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.extents[axis] / self.cells[axis] as f64
    }

    pub fn cell_volume(&self) -> f64 {
        (0..self.dim).map(|a| self.spacing(a)).product()
    }

    /// Discrete measure of the domain, the sum of all cell volumes.
    pub fn volume(&self) -> f64 {
        self.len() as f64 * self.cell_volume()
    }

    /// Smallest spacing over all axes.
    pub fn min_spacing(&self) -> f64 {
        (0..self.dim).map(|a| self.spacing(a)).fold(f64::INFINITY, f64::min)
    }

    /// Index increment for a unit step along `axis`.
    pub fn stride(&self, axis: usize) -> usize {
        self.cells[axis + 1..self.dim].iter().product()
    }

    pub fn coord_index(&self, cell: usize, axis: usize) -> usize {
        (cell / self.stride(axis)) % self.cells[axis]
    }

    pub fn center(&self, cell: usize) -> [f64; 3] {
        let mut x = [0.0; 3];
        for (axis, xa) in x.iter_mut().enumerate().take(self.dim) {
            *xa = (self.coord_index(cell, axis) as f64 + 0.5) * self.spacing(axis);
        }
        x
    }

    /// Visits every interior face as `(axis, left cell, right cell)` in a fixed order.
    pub fn for_each_face(&self, mut visit: impl FnMut(usize, usize, usize)) {
        for axis in 0..self.dim {
            let stride = self.stride(axis);
            let n = self.cells[axis];
            for cell in 0..self.len() {
                if (cell / stride) % n + 1 < n {
                    visit(axis, cell, cell + stride);
                }
            }
        }
    }
}

/// Shorthand for [`Grid::new`].
pub fn make_grid(dim: usize, extents: &[f64], resolutions: &[usize]) -> Result<Grid> {
    Grid::new(dim, extents, resolutions)
}

/// Cell-centered scalar values bound to a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: Grid,
    values: Vec<f64>,
}

impl Field {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidGrid(format!(
                "field has {} values but grid has {} cells",
                values.len(),
                grid.len()
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: Grid, value: f64) -> Self {
        Self { grid, values: vec![value; grid.len()] }
    }

    pub fn zeros(grid: Grid) -> Self {
        Self::constant(grid, 0.0)
    }

    /// Samples `f` at the cell centers.
    pub fn from_fn(grid: Grid, f: impl Fn(&[f64]) -> f64) -> Self {
        let values = (0..grid.len())
            .map(|cell| {
                let x = grid.center(cell);
                f(&x[..grid.dim()])
            })
            .collect();
        Self { grid, values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { grid: self.grid, values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &Field, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.ensure_same_grid(other)?;
        let values = self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect();
        Ok(Self { grid: self.grid, values })
    }

    pub fn sub(&self, other: &Field) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn add(&self, other: &Field) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn scale(&self, alpha: f64) -> Self {
        self.map(|v| alpha * v)
    }

    pub fn shift(&self, c: f64) -> Self {
        self.map(|v| v + c)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Fails on the first cell that is not strictly positive (NaN included).
    pub fn check_positive(&self) -> Result<()> {
        match self.values.iter().position(|v| !(*v > 0.0)) {
            Some(cell) => Err(Error::NonPositive { cell, value: self.values[cell] }),
            None => Ok(()),
        }
    }

    pub fn ensure_same_grid(&self, other: &Field) -> Result<()> {
        if self.grid == other.grid {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }
}

/// Midpoint quadrature: sum of value times cell volume.
pub fn integrate(field: &Field) -> f64 {
    field.grid.cell_volume() * field.values.iter().sum::<f64>()
}

/// Discrete `L^2` norm under midpoint quadrature.
pub fn l2_norm(field: &Field) -> f64 {
    (field.grid.cell_volume() * field.values.iter().map(|v| v * v).sum::<f64>()).sqrt()
}

/// Standard 3/5/7-point Laplacian with mirror ghost cells.
pub fn laplacian(field: &Field) -> Field {
    let grid = field.grid;
    let v = &field.values;
    let mut out = vec![0.0; v.len()];
    grid.for_each_face(|axis, left, right| {
        let h = grid.spacing(axis);
        let flux = (v[right] - v[left]) / (h * h);
        out[left] += flux;
        out[right] -= flux;
    });
    Field { grid, values: out }
}

/// Face inner product `sum_faces (da/h)(db/h) h^N`, the polarization of
/// [`grad_sq_integral`]. Boundary faces contribute nothing.
pub fn grad_inner(a: &Field, b: &Field) -> Result<f64> {
    a.ensure_same_grid(b)?;
    let grid = a.grid;
    let mut sum = 0.0;
    grid.for_each_face(|axis, left, right| {
        let h = grid.spacing(axis);
        sum += (a.values[right] - a.values[left]) * (b.values[right] - b.values[left]) / (h * h);
    });
    Ok(sum * grid.cell_volume())
}

/// Discrete `||grad v||_2^2` on interior faces.
pub fn grad_sq_integral(field: &Field) -> f64 {
    let grid = field.grid;
    let v = &field.values;
    let mut sum = 0.0;
    grid.for_each_face(|axis, left, right| {
        let d = (v[right] - v[left]) / grid.spacing(axis);
        sum += d * d;
    });
    sum * grid.cell_volume()
}

/// `sqrt(||a - b||_2^2 + ||grad(a - b)||_2^2)`.
pub fn h1_distance(a: &Field, b: &Field) -> Result<f64> {
    let w = a.sub(b)?;
    let l2 = integrate(&w.map(|x| x * x));
    Ok((l2 + grad_sq_integral(&w)).sqrt())
}
