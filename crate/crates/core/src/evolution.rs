//! Time integration of `v_t = v^k (Delta v - f)` and of its mass-conservative
//! porous-medium form `u_t = div(u^-m grad u) + f / (m - 1)`, `u = v^(1-k)`.
//!
//! Both schemes are linearly implicit Euler: coefficients are frozen at the
//! old state, diffusion and source are taken at the new time, and each step is
//! one SPD solve.

use serde::{Deserialize, Serialize};

use crate::diagnostics::{DiagnosticsRecord, RecordSpec};
use crate::error::{invalid, Error, Result};
use crate::grid::{integrate, Field, Grid};
use crate::solver::{solve_field, DiffusionOperator, SolverOptions};
use crate::sources::SourceTerm;

/// Relative residual every implicit step is solved to.
pub const STEP_TOL: f64 = 1e-10;
/// Largest accepted `||log v_{n+1} - log v_n||_inf`.
pub const MAX_LOG_CHANGE: f64 = 0.5;
/// Accepted steps at a reduced size before trying to double it.
pub const GROWTH_STREAK: usize = 5;

fn step_options(grid: &Grid) -> SolverOptions {
    SolverOptions::new(STEP_TOL, 20 * grid.len() + 1000)
}

/// `m = k / (k - 1)`; see [`crate::criticality::pme_exponent`] for the checked version.
pub fn pme_m(k: f64) -> f64 {
    k / (k - 1.0)
}

/// `u = v^(1-k)`.
pub fn to_u(v: &Field, k: f64) -> Result<Field> {
    v.check_positive()?;
    Ok(v.map(|x| x.powf(1.0 - k)))
}

/// `v = u^(1/(1-k))`.
pub fn to_v(u: &Field, k: f64) -> Result<Field> {
    u.check_positive()?;
    Ok(u.map(|x| x.powf(1.0 / (1.0 - k))))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    VForm,
    UForm,
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Scheme::VForm => "v_form",
            Scheme::UForm => "u_form",
        })
    }
}

/// One step of `D^-1 (v_{n+1} - v_n) / dt = Delta_h v_{n+1} - f(t_{n+1})`,
/// `D = diag(v_n^k)`.
///
/// A nonpositive result comes back as [`Error::NonPositive`], which callers
/// treat as a request to shrink the step.
pub fn step_v_form(v_n: &Field, dt: f64, k: f64, source: &SourceTerm, t_next: f64) -> Result<Field> {
    v_n.check_positive()?;
    if !(dt > 0.0) {
        return Err(invalid(format!("time step must be positive, got {dt}")));
    }
    let grid = *v_n.grid();
    let f = source.eval(t_next);
    f.ensure_same_grid(v_n)?;
    let diag: Vec<f64> = v_n.values().iter().map(|v| 1.0 / (dt * v.powf(k))).collect();
    let op = DiffusionOperator::new(grid, diag, |_, _, _| 1.0);
    let rhs = v_n.zip_map(&f, |v, fi| v.powf(1.0 - k) / dt - fi)?;
    let (next, _) = solve_field(&op, &rhs, Some(v_n), step_options(&grid))?;
    next.check_positive()?;
    Ok(next)
}

/// One conservative finite-volume step of the porous-medium form with face
/// mobility `(mean of adjacent u_n)^-m`.
pub fn step_u_form(u_n: &Field, dt: f64, m: f64, source: &SourceTerm, t_next: f64) -> Result<Field> {
    u_n.check_positive()?;
    if !(dt > 0.0) {
        return Err(invalid(format!("time step must be positive, got {dt}")));
    }
    let grid = *u_n.grid();
    let f = source.eval(t_next);
    f.ensure_same_grid(u_n)?;
    let u = u_n.values();
    let op = DiffusionOperator::new(grid, vec![1.0 / dt; grid.len()], |_, l, r| (0.5 * (u[l] + u[r])).powf(-m));
    let rhs = u_n.zip_map(&f, |ui, fi| ui / dt + fi / (m - 1.0))?;
    let (next, _) = solve_field(&op, &rhs, Some(u_n), step_options(&grid))?;
    next.check_positive()?;
    Ok(next)
}

/// Initial-boundary value problem data.
#[derive(Debug, Clone)]
pub struct Problem {
    pub k: f64,
    pub source: SourceTerm,
    pub v0: Field,
    /// `int v0^(1-k)`
    pub mass: f64,
    /// `k / (k - 1)`
    pub m: f64,
}

impl Problem {
    pub fn new(k: f64, source: SourceTerm, v0: Field) -> Result<Self> {
        if !(k > 1.0) || !k.is_finite() {
            return Err(invalid(format!("k must exceed 1, got {k}")));
        }
        v0.check_positive()?;
        v0.ensure_same_grid(&source.eval(0.0))?;
        let mass = integrate(&v0.map(|v| v.powf(1.0 - k)));
        Ok(Self { k, source, v0, mass, m: pme_m(k) })
    }

    pub fn grid(&self) -> &Grid {
        self.v0.grid()
    }
}

#[derive(Debug, Clone)]
pub struct EvolveOptions {
    pub scheme: Scheme,
    pub t_end: f64,
    pub dt0: f64,
    pub record_every: f64,
    pub record: RecordSpec,
}

impl EvolveOptions {
    pub fn new(scheme: Scheme, t_end: f64, dt0: f64, record_every: f64) -> Self {
        Self { scheme, t_end, dt0, record_every, record: RecordSpec::default() }
    }

    pub fn with_reference(mut self, v_inf: Field) -> Self {
        self.record.reference = Some(v_inf);
        self
    }

    pub fn with_entropy(mut self, p: Vec<f64>) -> Self {
        self.record.entropy_p = p;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    ReachedEnd,
    StepUnderflow,
    PositivityFailure,
}

impl std::fmt::Display for Termination {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Termination::ReachedEnd => "reached T",
            Termination::StepUnderflow => "step underflow",
            Termination::PositivityFailure => "positivity failure",
        })
    }
}

/// Cheap per-step bookkeeping for every accepted step (index 0 is the initial state).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub t: f64,
    pub dt: f64,
    /// `E(v)` with `f` at the same time.
    pub energy: f64,
    /// `int u`, computed from the evolved variable.
    pub mass: f64,
    pub v_min: f64,
    pub v_max: f64,
}

#[derive(Debug, Clone)]
pub struct Snapshot {
    pub t: f64,
    pub v: Field,
    pub diagnostics: DiagnosticsRecord,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub scheme: Scheme,
    pub k: f64,
    /// Conserved `int v0^(1-k)` of the problem.
    pub mass: f64,
    pub snapshots: Vec<Snapshot>,
    pub steps: Vec<StepInfo>,
    pub termination: Termination,
}

impl Trajectory {
    pub fn times(&self) -> Vec<f64> {
        self.snapshots.iter().map(|s| s.t).collect()
    }

    pub fn final_snapshot(&self) -> &Snapshot {
        self.snapshots.last().expect("trajectory always holds the initial snapshot")
    }

    /// `max_t |mass(t) - M| / M` over accepted steps.
    pub fn max_mass_drift(&self) -> f64 {
        self.steps.iter().map(|s| (s.mass - self.mass).abs() / self.mass).fold(0.0, f64::max)
    }
}

fn max_log_change(a: &Field, b: &Field) -> f64 {
    a.values().iter().zip(b.values()).map(|(x, y)| (y.ln() - x.ln()).abs()).fold(0.0, f64::max)
}

struct State {
    scheme: Scheme,
    /// `v` or `u` depending on the scheme.
    native: Field,
    v: Field,
}

impl State {
    fn mass(&self, k: f64) -> f64 {
        match self.scheme {
            Scheme::VForm => integrate(&self.v.map(|x| x.powf(1.0 - k))),
            Scheme::UForm => integrate(&self.native),
        }
    }
}

/// Adaptive driver: a step is retried at half size if it loses positivity,
/// fails to solve, or moves `log v` by more than [`MAX_LOG_CHANGE`]; after
/// [`GROWTH_STREAK`] accepted steps at a reduced size the step doubles again
/// (never above `dt0`). Snapshots land exactly on multiples of `record_every`
/// and on `t_end`.
pub fn evolve(problem: &Problem, opts: &EvolveOptions) -> Result<Trajectory> {
    let t_end = opts.t_end;
    if !(t_end > 0.0) || !t_end.is_finite() {
        return Err(invalid(format!("T must be positive, got {t_end}")));
    }
    if !(opts.dt0 > 0.0) {
        return Err(invalid(format!("dt0 must be positive, got {}", opts.dt0)));
    }
    if !(opts.record_every > 0.0) {
        return Err(invalid(format!("record interval must be positive, got {}", opts.record_every)));
    }
    let k = problem.k;
    let m = problem.m;
    let source = &problem.source;
    let native = match opts.scheme {
        Scheme::VForm => problem.v0.clone(),
        Scheme::UForm => to_u(&problem.v0, k)?,
    };
    let mut state = State { scheme: opts.scheme, native, v: problem.v0.clone() };

    let record = |t: f64, state: &State| -> Result<Snapshot> {
        let diagnostics =
            DiagnosticsRecord::compute(t, &state.v, &source.eval(t), state.mass(k), problem.mass, &opts.record)?;
        Ok(Snapshot { t, v: state.v.clone(), diagnostics })
    };
    let step_info = |t: f64, dt: f64, state: &State| StepInfo {
        t,
        dt,
        energy: crate::diagnostics::energy(&state.v, &source.eval(t)).unwrap_or(f64::NAN),
        mass: state.mass(k),
        v_min: state.v.min(),
        v_max: state.v.max(),
    };

    let mut snapshots = vec![record(0.0, &state)?];
    let mut steps = vec![step_info(0.0, 0.0, &state)];
    let mut t = 0.0;
    let mut dt = opts.dt0;
    let mut streak = 0usize;
    let mut record_index = 1u64;
    let slack = 1e-12 * t_end;
    let dt_floor = 1e-14 * t_end;
    let mut termination = Termination::ReachedEnd;

    while t < t_end - slack {
        let next_record = record_index as f64 * opts.record_every;
        let target = next_record.min(t_end);
        let (h, lands) = if t + dt >= target - slack { (target - t, true) } else { (dt, false) };
        let t_next = if lands { target } else { t + h };

        let attempt = match opts.scheme {
            Scheme::VForm => step_v_form(&state.v, h, k, source, t_next).map(|v| (v.clone(), v)),
            Scheme::UForm => {
                step_u_form(&state.native, h, m, source, t_next).and_then(|u| Ok((to_v(&u, k)?, u)))
            }
        };
        let rejection = match attempt {
            Ok((v, native)) if max_log_change(&state.v, &v) <= MAX_LOG_CHANGE => {
                state = State { scheme: opts.scheme, native, v };
                t = t_next;
                steps.push(step_info(t, h, &state));
                if dt < opts.dt0 {
                    streak += 1;
                    if streak >= GROWTH_STREAK {
                        dt = (2.0 * dt).min(opts.dt0);
                        streak = 0;
                    }
                }
                if lands {
                    if target == next_record {
                        record_index += 1;
                    }
                    if target == next_record || target == t_end {
                        snapshots.push(record(t, &state)?);
                    }
                }
                continue;
            }
            Ok(_) => Termination::StepUnderflow,
            Err(Error::NonPositive { .. }) => Termination::PositivityFailure,
            Err(Error::NotConverged { .. }) => Termination::StepUnderflow,
            Err(e) => return Err(e),
        };
        dt = 0.5 * h;
        streak = 0;
        if dt < dt_floor {
            termination = rejection;
            if snapshots.last().map(|s| s.t) != Some(t) {
                snapshots.push(record(t, &state)?);
            }
            break;
        }
    }
    if termination == Termination::ReachedEnd && snapshots.last().map(|s| s.t) != Some(t) {
        snapshots.push(record(t, &state)?);
    }
    Ok(Trajectory { scheme: opts.scheme, k, mass: problem.mass, snapshots, steps, termination })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{grad_sq_integral, laplacian};
    use crate::steady::build_steady_state;
    use std::f64::consts::PI;

    fn unit(n: usize) -> Grid {
        Grid::cube(1, 1.0, n).unwrap()
    }

    fn cos_mode(g: Grid) -> Field {
        Field::from_fn(g, |x| (PI * x[0]).cos())
    }

    #[test]
    fn power_maps() {
        let g = unit(8);
        let u = to_u(&Field::constant(g, 4.0), 3.0).unwrap();
        assert!(u.values().iter().all(|&x| (x - 1.0 / 16.0).abs() < 1e-16));

        let v = Field::from_fn(g, |x| 0.3 + x[0] * x[0] * 5.0);
        let back = to_v(&to_u(&v, 2.7).unwrap(), 2.7).unwrap();
        for (a, b) in back.values().iter().zip(v.values()) {
            assert!((a - b).abs() <= 1e-14 * b);
        }
        assert_eq!(pme_m(2.0), 2.0);

        let mut bad = v.clone();
        bad.values_mut()[5] = -1.0;
        assert!(matches!(to_u(&bad, 2.0), Err(Error::NonPositive { cell: 5, .. })));
    }

    #[test]
    fn constant_state_is_stationary() {
        let g = Grid::cube(2, 1.0, 6).unwrap();
        let src = SourceTerm::zero(g);
        let v = Field::constant(g, 0.7);
        let next = step_v_form(&v, 0.1, 2.0, &src, 0.1).unwrap();
        for x in next.values() {
            assert!((x - 0.7).abs() < 1e-14);
        }
        let u = Field::constant(g, 1.3);
        let next = step_u_form(&u, 0.1, 2.0, &src, 0.1).unwrap();
        for x in next.values() {
            assert!((x - 1.3).abs() < 1e-14);
        }
    }

    #[test]
    fn steady_state_is_discretely_stationary() {
        let g = unit(64);
        let f = Field::from_fn(g, |x| 0.5 * (PI * x[0]).cos());
        let ss = build_steady_state(&f, 2.0, 1.0).unwrap();
        let src = SourceTerm::time_homogeneous(&f);
        let dt = 1e-2;
        let next = step_v_form(&ss.v_infinity, dt, 2.0, &src, dt).unwrap();
        let change = next.sub(&ss.v_infinity).unwrap().sup_norm();
        assert!(change <= 1e-9 * dt, "change {change}");
    }

    #[test]
    fn linearized_mode_decays_like_implicit_euler() {
        let n = 128;
        let g = unit(n);
        let h = 1.0 / n as f64;
        let eps = 0.01;
        let v = Field::from_fn(g, |x| 1.0 + eps * (PI * x[0]).cos());
        let dt = 1e-3;
        let next = step_v_form(&v, dt, 2.0, &SourceTerm::zero(g), dt).unwrap();
        let mode = cos_mode(g);
        let amp = |f: &Field| {
            let mean = integrate(f);
            let w = f.shift(-mean);
            integrate(&w.zip_map(&mode, |a, b| a * b).unwrap()) / integrate(&mode.map(|b| b * b))
        };
        let lambda_h = (2.0 - 2.0 * (PI * h).cos()) / (h * h);
        let ratio = amp(&next) / amp(&v);
        let expected = 1.0 / (1.0 + dt * lambda_h);
        assert!((ratio - expected).abs() < 5e-4, "{ratio} vs {expected}");
        assert!((expected - 1.0 / (1.0 + dt * PI * PI)).abs() < 1e-5);
    }

    #[test]
    fn u_form_conserves_mass_in_one_step() {
        let g = Grid::cube(2, 1.0, 16).unwrap();
        let u = Field::from_fn(g, |x| 1.0 + 0.4 * (3.0 * x[0]).sin() * (2.0 * x[1]).cos());
        let f = Field::from_fn(g, |x| (PI * x[0]).cos() + (PI * x[1]).cos());
        let src = SourceTerm::time_homogeneous(&f);
        let next = step_u_form(&u, 1e-2, 1.5, &src, 1e-2).unwrap();
        let before = integrate(&u);
        assert!((integrate(&next) - before).abs() <= 1e-12 * before);
    }

    #[test]
    fn v_form_one_step_conservation_identity() {
        let g = unit(64);
        let v = Field::from_fn(g, |x| 1.0 + 0.3 * (PI * x[0]).cos());
        let src = SourceTerm::time_homogeneous(&cos_mode(g));
        let k = 2.5;
        let next = step_v_form(&v, 1e-2, k, &src, 1e-2).unwrap();
        let weighted = next.zip_map(&v, |a, b| (a - b) / b.powf(k)).unwrap();
        assert!(integrate(&weighted).abs() < 1e-12);
    }

    #[test]
    fn schemes_agree_to_second_order_per_step() {
        let g = unit(512);
        let k = 2.0;
        let v = Field::from_fn(g, |x| 1.0 + 0.3 * (PI * x[0]).cos());
        let src = SourceTerm::time_homogeneous(&cos_mode(g).scale(0.5));
        let gap = |dt: f64| {
            let a = step_v_form(&v, dt, k, &src, dt).unwrap();
            let u = step_u_form(&to_u(&v, k).unwrap(), dt, pme_m(k), &src, dt).unwrap();
            to_v(&u, k).unwrap().sub(&a).unwrap().sup_norm()
        };
        let (g1, g2) = (gap(2e-3), gap(1e-3));
        let ratio = g1 / g2;
        assert!((3.0..=5.0).contains(&ratio), "ratio {ratio} ({g1:e} / {g2:e})");
    }

    #[test]
    fn constant_trajectory() {
        let g = unit(16);
        let v0 = Field::constant(g, 0.5);
        let p = Problem::new(3.0, SourceTerm::zero(g), v0.clone()).unwrap();
        let tr = evolve(&p, &EvolveOptions::new(Scheme::VForm, 0.1, 0.01, 0.05).with_reference(v0)).unwrap();
        assert_eq!(tr.termination, Termination::ReachedEnd);
        assert_eq!(tr.times(), vec![0.0, 0.05, 0.1]);
        for s in &tr.snapshots {
            assert!(s.diagnostics.h1_dist.unwrap() < 1e-13);
            assert!((s.diagnostics.mass - 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn oversized_first_step_is_halved() {
        let g = unit(32);
        let v0 = Field::from_fn(g, |x| 1.0 + 0.9 * (PI * x[0]).cos());
        let p = Problem::new(2.0, SourceTerm::time_homogeneous(&cos_mode(g).scale(5.0)), v0).unwrap();
        let tr = evolve(&p, &EvolveOptions::new(Scheme::VForm, 0.2, 1e6, 0.2)).unwrap();
        assert_eq!(tr.termination, Termination::ReachedEnd);
        assert!(tr.steps.len() > 2);
        for w in tr.steps.windows(2) {
            assert!(w[1].t > w[0].t);
        }
        assert!((tr.final_snapshot().t - 0.2).abs() < 1e-15);
    }

    #[test]
    fn max_principle_without_source() {
        let g = unit(64);
        let v0 = Field::from_fn(g, |x| 1.0 + 0.5 * (2.0 * PI * x[0]).cos() + 0.2 * x[0]);
        let p = Problem::new(2.0, SourceTerm::zero(g), v0).unwrap();
        let tr = evolve(&p, &EvolveOptions::new(Scheme::VForm, 0.1, 1e-3, 0.05)).unwrap();
        for w in tr.steps.windows(2) {
            assert!(w[1].v_min >= w[0].v_min - 1e-12);
            assert!(w[1].v_max <= w[0].v_max + 1e-12);
        }
        // gradient only decays without a source
        let g0 = grad_sq_integral(&tr.snapshots[0].v);
        let g1 = grad_sq_integral(&tr.final_snapshot().v);
        assert!(g1 < g0);
        let _ = laplacian(&tr.final_snapshot().v);
    }

    #[test]
    fn problem_rejects_bad_data() {
        let g = unit(4);
        assert!(Problem::new(1.0, SourceTerm::zero(g), Field::constant(g, 1.0)).is_err());
        assert!(Problem::new(2.0, SourceTerm::zero(g), Field::constant(g, 0.0)).is_err());
        assert!(Problem::new(2.0, SourceTerm::zero(unit(5)), Field::constant(g, 1.0)).is_err());
    }
}
