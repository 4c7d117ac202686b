//! Positive steady states: `Delta v = f_inf` with zero-flux boundaries, the
//! additive constant fixed by `int v^(1-k) = M`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::{integrate, l2_norm, laplacian, Field, Grid};
use crate::solver::{conjugate_gradient, DiffusionOperator, SolverOptions};
use crate::sources::{project_zero_mean, SourceProfile};

pub const POISSON_TOL: f64 = 1e-10;
pub const CALIBRATION_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct SteadyState {
    pub v_infinity: Field,
    pub calibration_constant: f64,
    /// `||Delta_h v_inf - f_inf||_2`
    pub poisson_residual: f64,
    /// `|int v_inf^(1-k) - M| / M`
    pub mass_error: f64,
}

impl SteadyState {
    pub fn summary(&self) -> SteadySummary {
        SteadySummary {
            c: self.calibration_constant,
            poisson_residual: self.poisson_residual,
            mass_error: self.mass_error,
            min_v: self.v_infinity.min(),
        }
    }
}

/// JSON-facing digest of a [`SteadyState`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteadySummary {
    pub c: f64,
    pub poisson_residual: f64,
    pub mass_error: f64,
    pub min_v: f64,
}

fn iteration_cap(grid: &Grid) -> usize {
    (50.0 * (grid.len() as f64).sqrt()).ceil() as usize
}

/// Mean-zero solution of `Delta_h phi = f_inf`.
pub fn solve_neumann_poisson(f_inf: &Field) -> Result<Field> {
    let grid = *f_inf.grid();
    let integral = integrate(f_inf);
    let tolerance = 1e-12 * f_inf.sup_norm() * grid.volume();
    if integral.abs() > tolerance {
        return Err(Error::Incompatible { integral, tolerance });
    }
    let rhs = project_zero_mean(f_inf).scale(-1.0);
    let op = DiffusionOperator::neg_laplacian(grid);
    let sol = conjugate_gradient(&op, rhs.values(), None, SolverOptions::new(POISSON_TOL, iteration_cap(&grid)))?;
    Field::new(grid, sol.x)
}

/// Unique `c > -min(phi)` with `int (phi + c)^(1-k) = M`.
pub fn calibrate_mass(phi: &Field, k: f64, mass: f64) -> Result<f64> {
    if !(k > 1.0) || !k.is_finite() {
        return Err(invalid(format!("k must exceed 1, got {k}")));
    }
    if !(mass > 0.0) || !mass.is_finite() {
        return Err(invalid(format!("mass M must be positive, got {mass}")));
    }
    let g = |c: f64| integrate(&phi.map(|p| (p + c).powf(1.0 - k)));
    let dg = |c: f64| (1.0 - k) * integrate(&phi.map(|p| (p + c).powf(-k)));

    let floor = -phi.min();
    let mut offset = 1e-12 * (1.0 + phi.sup_norm());
    // G blows up at the floor; move closer until the bracket closes from above.
    while g(floor + offset) < mass {
        offset *= 0.5;
        if floor + offset <= floor {
            return Err(invalid(format!(
                "mass {mass:e} is not attainable at this resolution (G saturates near c = {floor:e})"
            )));
        }
    }
    let mut lo = floor + offset;
    let mut hi = lo + 1.0;
    while g(hi) >= mass {
        hi = lo + 2.0 * (hi - lo);
        if !hi.is_finite() {
            return Err(invalid("could not bracket the calibration constant"));
        }
    }
    // Bisection to a tight relative bracket, then Newton polish.
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid) > mass {
            lo = mid;
        } else {
            hi = mid;
        }
        if (hi - lo) <= 1e-13 * hi.abs().max(lo.abs()).max(1e-300) {
            break;
        }
    }
    let mut c = 0.5 * (lo + hi);
    for _ in 0..4 {
        let step = (g(c) - mass) / dg(c);
        let next = c - step;
        if next > floor && next.is_finite() {
            c = next;
        }
        if step.abs() <= f64::EPSILON * c.abs() {
            break;
        }
    }
    let rel = (g(c) - mass).abs() / mass;
    if rel > CALIBRATION_TOL {
        return Err(invalid(format!("calibration stalled at relative mass error {rel:e}")));
    }
    Ok(c)
}

pub fn build_steady_state(f_inf: &Field, k: f64, mass: f64) -> Result<SteadyState> {
    let phi = solve_neumann_poisson(f_inf)?;
    let c = calibrate_mass(&phi, k, mass)?;
    let v_infinity = phi.shift(c);
    v_infinity.check_positive()?;
    let residual = laplacian(&v_infinity).sub(&project_zero_mean(f_inf))?;
    let mass_now = integrate(&v_infinity.map(|v| v.powf(1.0 - k)));
    Ok(SteadyState {
        calibration_constant: c,
        poisson_residual: l2_norm(&residual),
        mass_error: (mass_now - mass).abs() / mass,
        v_infinity,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefinementVerdict {
    Stable,
    Degenerating,
    Inconclusive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefinementRow {
    pub h: f64,
    pub min_v: f64,
    pub c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementReport {
    pub rows: Vec<RefinementRow>,
    pub verdict: RefinementVerdict,
}

/// Relative change of `min v_inf` over the last refinement below which the
/// ladder counts as converged.
pub const STABLE_CHANGE: f64 = 0.05;

/// Builds the steady state on a ladder of uniform grids (`n` cells per axis)
/// and watches whether `min v_inf` settles or collapses toward zero.
pub fn positivity_refinement_check(
    profile: &SourceProfile,
    dim: usize,
    extents: &[f64],
    resolutions: &[usize],
    k: f64,
    mass: f64,
) -> Result<RefinementReport> {
    if resolutions.len() < 2 || resolutions.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("refinement check needs at least two increasing resolutions"));
    }
    let mut rows = Vec::with_capacity(resolutions.len());
    for &n in resolutions {
        let grid = Grid::new(dim, extents, &vec![n; dim])?;
        let f = profile.sample(&grid)?;
        let ss = build_steady_state(&f, k, mass)?;
        rows.push(RefinementRow { h: grid.min_spacing(), min_v: ss.v_infinity.min(), c: ss.calibration_constant });
    }
    let last = rows[rows.len() - 1].min_v;
    let prev = rows[rows.len() - 2].min_v;
    let verdict = if (last - prev).abs() / prev < STABLE_CHANGE {
        RefinementVerdict::Stable
    } else if rows.windows(2).all(|w| w[1].min_v < w[0].min_v) {
        RefinementVerdict::Degenerating
    } else {
        RefinementVerdict::Inconclusive
    };
    Ok(RefinementReport { rows, verdict })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn unit(n: usize) -> Grid {
        Grid::cube(1, 1.0, n).unwrap()
    }

    /// Independent root-find for the calibration oracle: plain secant on the
    /// same-grid quadrature.
    fn secant_oracle(phi: &[f64], h: f64, k: f64, mass: f64, mut c0: f64, mut c1: f64) -> f64 {
        let g = |c: f64| phi.iter().map(|p| (p + c).powf(1.0 - k) * h).sum::<f64>() - mass;
        for _ in 0..100 {
            let (g0, g1) = (g(c0), g(c1));
            if g1 == g0 {
                break;
            }
            let c2 = c1 - g1 * (c1 - c0) / (g1 - g0);
            c0 = c1;
            c1 = c2;
        }
        c1
    }

    #[test]
    fn poisson_examples() {
        let g = unit(64);
        let zero = solve_neumann_poisson(&Field::zeros(g)).unwrap();
        assert!(zero.values().iter().all(|&v| v == 0.0));

        let mode = Field::from_fn(g, |x| (PI * x[0]).cos());
        let phi = solve_neumann_poisson(&laplacian(&mode)).unwrap();
        for (a, b) in phi.values().iter().zip(mode.values()) {
            assert!((a - b).abs() < 1e-9);
        }

        let err = solve_neumann_poisson(&Field::constant(g, 1.0)).unwrap_err();
        assert!(matches!(err, Error::Incompatible { .. }));
        assert!(err.to_string().contains("compatibility"));
    }

    #[test]
    fn poisson_2d_forward_problem() {
        let g = Grid::new(2, &[1.0, 2.0], &[24, 40]).unwrap();
        let target = Field::from_fn(g, |x| (PI * x[0]).cos() + 0.3 * (PI * x[1]).cos() * (2.0 * PI * x[0]).cos());
        let target = project_zero_mean(&target);
        let phi = solve_neumann_poisson(&laplacian(&target)).unwrap();
        for (a, b) in phi.values().iter().zip(target.values()) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn calibration_examples() {
        let g = unit(10);
        let zero = Field::zeros(g);
        assert!((calibrate_mass(&zero, 3.0, 4.0).unwrap() - 0.5).abs() < 1e-12);
        assert!((calibrate_mass(&zero, 2.0, 2.0).unwrap() - 0.5).abs() < 1e-12);
        assert!(calibrate_mass(&zero, 1.0, 2.0).is_err());
        assert!(calibrate_mass(&zero, 2.0, 0.0).is_err());
    }

    #[test]
    fn calibration_closed_form_case() {
        let n = 256;
        let g = unit(n);
        let a = 1.0 / (PI * PI);
        let phi = Field::from_fn(g, |x| -a * (PI * x[0]).cos());
        let mass = 1.0051732;
        // continuum check of the quoted mass
        assert!((1.0 / (1.0f64 - a * a).sqrt() - mass).abs() < 5e-7);
        let c = calibrate_mass(&phi, 2.0, mass).unwrap();
        let oracle = secant_oracle(phi.values(), 1.0 / n as f64, 2.0, mass, 0.9, 1.1);
        assert!((c - oracle).abs() < 1e-6);
        assert!((c - 1.0).abs() < 1e-6);
    }

    #[test]
    fn calibration_is_decreasing_in_mass() {
        let g = unit(32);
        let phi = Field::from_fn(g, |x| (3.0 * x[0]).sin());
        let cs: Vec<f64> = [0.5, 1.0, 2.0].iter().map(|&m| calibrate_mass(&phi, 2.5, m).unwrap()).collect();
        assert!(cs[0] > cs[1] && cs[1] > cs[2]);
    }

    #[test]
    fn build_examples() {
        let g = unit(16);
        let ss = build_steady_state(&Field::zeros(g), 3.0, 4.0).unwrap();
        assert!(ss.v_infinity.values().iter().all(|&v| (v - 0.5).abs() < 1e-12));
        assert_eq!(ss.poisson_residual, 0.0);
        assert!(ss.mass_error < 1e-12);

        let ss = build_steady_state(&Field::zeros(g), 2.0, 10.0).unwrap();
        assert!(ss.v_infinity.values().iter().all(|&v| (v - 0.1).abs() < 1e-12));

        let n = 128;
        let g = unit(n);
        let exact = Field::from_fn(g, |x| 1.0 - (PI * x[0]).cos() / (PI * PI));
        let mass = integrate(&exact.map(|v| 1.0 / v));
        let ss = build_steady_state(&laplacian(&exact), 2.0, mass).unwrap();
        for (a, b) in ss.v_infinity.values().iter().zip(exact.values()) {
            assert!((a - b).abs() < 1e-8);
        }
        let f = laplacian(&exact);
        assert!(ss.poisson_residual <= 1e-10 * l2_norm(&f) + 1e-14);
        assert!(ss.mass_error <= 1e-10);
    }

    #[test]
    fn calibration_absorbs_shifts() {
        let g = unit(40);
        let phi = Field::from_fn(g, |x| (2.0 * x[0]).cos());
        let c0 = calibrate_mass(&phi, 2.0, 1.5).unwrap();
        let c1 = calibrate_mass(&phi.shift(0.7), 2.0, 1.5).unwrap();
        assert!((c0 - (c1 + 0.7)).abs() < 1e-10);
    }

    #[test]
    fn refinement_flat_source_is_stable() {
        let rep = positivity_refinement_check(&SourceProfile::Zero, 1, &[1.0], &[8, 16, 32], 3.0, 4.0).unwrap();
        assert_eq!(rep.verdict, RefinementVerdict::Stable);
        for row in &rep.rows {
            assert!((row.min_v - 0.5).abs() < 1e-12);
        }
        assert!(positivity_refinement_check(&SourceProfile::Zero, 1, &[1.0], &[8], 3.0, 4.0).is_err());
    }
}
