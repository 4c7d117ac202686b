//! Symmetric solves for operators of the form `D - div(a grad)` on a [`Grid`].

use crate::error::{Error, Result};
use crate::grid::{Field, Grid};

/// `A x = d * x - div_h(a_face * grad_h x)` with mirror-ghost (zero-flux) boundaries.
///
/// With `d >= 0` and `a_face > 0` this is symmetric positive semidefinite; it is
/// definite as soon as one `d_i > 0`, and has exactly the constants as kernel
/// when `d = 0`.
#[derive(Debug, Clone)]
pub struct DiffusionOperator {
    grid: Grid,
    diag: Vec<f64>,
    /// `(left, right, a_face / h^2)` in [`Grid::for_each_face`] order.
    faces: Vec<(usize, usize, f64)>,
}

impl DiffusionOperator {
    pub fn new(grid: Grid, diag: Vec<f64>, mut face_coef: impl FnMut(usize, usize, usize) -> f64) -> Self {
        assert_eq!(diag.len(), grid.len());
        let mut faces = Vec::with_capacity(grid.dim() * grid.len());
        grid.for_each_face(|axis, left, right| {
            let h = grid.spacing(axis);
            faces.push((left, right, face_coef(axis, left, right) / (h * h)));
        });
        Self { grid, diag, faces }
    }

    /// `-Delta_h`, singular on constants.
    pub fn neg_laplacian(grid: Grid) -> Self {
        Self::new(grid, vec![0.0; grid.len()], |_, _, _| 1.0)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        for ((yi, di), xi) in y.iter_mut().zip(&self.diag).zip(x) {
            *yi = di * xi;
        }
        for &(l, r, w) in &self.faces {
            let flux = w * (x[l] - x[r]);
            y[l] += flux;
            y[r] -= flux;
        }
    }

    fn jacobi_diagonal(&self) -> Vec<f64> {
        let mut d = self.diag.clone();
        for &(l, r, w) in &self.faces {
            d[l] += w;
            d[r] += w;
        }
        d
    }

    fn is_singular(&self) -> bool {
        self.diag.iter().all(|&d| d == 0.0)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    pub rel_tol: f64,
    pub max_iter: usize,
}

impl SolverOptions {
    pub fn new(rel_tol: f64, max_iter: usize) -> Self {
        Self { rel_tol, max_iter }
    }
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// `||b - A x||_2 / ||b||_2` recomputed from scratch.
    pub rel_residual: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn project_mean_zero(v: &mut [f64]) {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= mean);
}

fn true_residual(op: &DiffusionOperator, b: &[f64], x: &[f64], project: bool) -> Vec<f64> {
    let mut ax = vec![0.0; x.len()];
    op.apply(x, &mut ax);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    if project {
        project_mean_zero(&mut r);
    }
    r
}

/// Jacobi-preconditioned conjugate gradients.
///
/// Singular operators (zero diagonal) are solved on the mean-zero subspace:
/// the right-hand side, every residual and every search direction are
/// projected, and the returned iterate has zero mean.
pub fn conjugate_gradient(op: &DiffusionOperator, b: &[f64], x0: Option<&[f64]>, opts: SolverOptions) -> Result<Solution> {
    let n = op.grid.len();
    let project = op.is_singular();
    let mut rhs = b.to_vec();
    if project {
        project_mean_zero(&mut rhs);
    }
    let b_norm = dot(&rhs, &rhs).sqrt();
    let mut x = x0.map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; n]);
    if project {
        project_mean_zero(&mut x);
    }
    if b_norm == 0.0 {
        return Ok(Solution { x: vec![0.0; n], iterations: 0, rel_residual: 0.0 });
    }
    let inv_diag: Vec<f64> = op.jacobi_diagonal().iter().map(|d| 1.0 / d).collect();
    let precondition = |r: &[f64]| {
        let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(ri, di)| ri * di).collect();
        if project {
            project_mean_zero(&mut z);
        }
        z
    };

    let mut iterations = 0;
    let mut ap = vec![0.0; n];
    loop {
        // (Re)start from the true residual.
        let mut r = true_residual(op, &rhs, &x, project);
        let mut rel = dot(&r, &r).sqrt() / b_norm;
        if rel <= opts.rel_tol {
            return Ok(Solution { x, iterations, rel_residual: rel });
        }
        if iterations >= opts.max_iter {
            return Err(Error::NotConverged { iterations, residual: rel });
        }
        let mut z = precondition(&r);
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        while iterations < opts.max_iter {
            op.apply(&p, &mut ap);
            let pap = dot(&p, &ap);
            if !(pap > 0.0) {
                break;
            }
            let alpha = rz / pap;
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            iterations += 1;
            rel = dot(&r, &r).sqrt() / b_norm;
            if rel <= opts.rel_tol {
                break;
            }
            z = precondition(&r);
            let rz_next = dot(&r, &z);
            let beta = rz_next / rz;
            rz = rz_next;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
        if project {
            project_mean_zero(&mut x);
        }
        let r_true = true_residual(op, &rhs, &x, project);
        let rel_true = dot(&r_true, &r_true).sqrt() / b_norm;
        if rel_true <= opts.rel_tol {
            return Ok(Solution { x, iterations, rel_residual: rel_true });
        }
        if iterations >= opts.max_iter {
            return Err(Error::NotConverged { iterations, residual: rel_true });
        }
    }
}

/// Direct solve of a 1D nonsingular operator (Thomas algorithm).
pub fn tridiagonal_solve(op: &DiffusionOperator, b: &[f64]) -> Result<Solution> {
    let n = op.grid.len();
    if op.grid.dim() != 1 || op.is_singular() {
        return Err(Error::InvalidParameter("tridiagonal solve needs a nonsingular 1D operator".into()));
    }
    let mut diag = op.jacobi_diagonal();
    // Face i couples cells i and i + 1.
    let off: Vec<f64> = op.faces.iter().map(|&(_, _, w)| -w).collect();
    let mut rhs = b.to_vec();
    for i in 1..n {
        let factor = off[i - 1] / diag[i - 1];
        diag[i] -= factor * off[i - 1];
        rhs[i] -= factor * rhs[i - 1];
    }
    let mut x = vec![0.0; n];
    x[n - 1] = rhs[n - 1] / diag[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = (rhs[i] - off[i] * x[i + 1]) / diag[i];
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NotConverged { iterations: 0, residual: f64::INFINITY });
    }
    let r = true_residual(op, b, &x, false);
    let b_norm = dot(b, b).sqrt();
    let rel = if b_norm > 0.0 { dot(&r, &r).sqrt() / b_norm } else { dot(&r, &r).sqrt() };
    Ok(Solution { x, iterations: 1, rel_residual: rel })
}

/// Direct solve in 1D, conjugate gradients otherwise. Fails if the final
/// relative residual exceeds `opts.rel_tol`.
pub fn solve_spd(op: &DiffusionOperator, b: &[f64], x0: Option<&[f64]>, opts: SolverOptions) -> Result<Solution> {
    if op.grid.dim() == 1 && !op.is_singular() {
        let sol = tridiagonal_solve(op, b)?;
        if sol.rel_residual > opts.rel_tol {
            return Err(Error::NotConverged { iterations: 1, residual: sol.rel_residual });
        }
        return Ok(sol);
    }
    let mut sol = conjugate_gradient(op, b, x0, opts)?;
    if !op.is_singular() {
        restore_balance(op, b, &mut sol.x);
    }
    Ok(sol)
}

/// Face fluxes cancel in the sum, so `sum(A x) = sum(d x)`. Shifting `x` by a
/// constant makes this equal `sum(b)` exactly, which keeps discrete
/// conservation laws from inheriting the iterative residual.
fn restore_balance(op: &DiffusionOperator, b: &[f64], x: &mut [f64]) {
    let d_sum: f64 = op.diag.iter().sum();
    let defect = b.iter().sum::<f64>() - op.diag.iter().zip(x.iter()).map(|(d, v)| d * v).sum::<f64>();
    let c = defect / d_sum;
    for v in x.iter_mut() {
        *v += c;
    }
}

/// Convenience wrapper returning a [`Field`].
pub fn solve_field(op: &DiffusionOperator, b: &Field, x0: Option<&Field>, opts: SolverOptions) -> Result<(Field, Solution)> {
    let sol = solve_spd(op, b.values(), x0.map(Field::values), opts)?;
    let field = Field::new(*op.grid(), sol.x.clone())?;
    Ok((field, sol))
}
