//! Functionals along trajectories, identity residuals, bound checks and the
//! log-linear decay-rate fit.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::evolution::Trajectory;
use crate::grid::{grad_sq_integral, h1_distance, integrate, laplacian, Field};
use crate::sources::SourceTerm;

/// `int v^(1-k)`
pub fn mass(v: &Field, k: f64) -> Result<f64> {
    v.check_positive()?;
    Ok(integrate(&v.map(|x| x.powf(1.0 - k))))
}

/// `int (|grad v|^2 / 2 + f v)`
pub fn energy(v: &Field, f: &Field) -> Result<f64> {
    let fv = integrate(&v.zip_map(f, |a, b| a * b)?);
    Ok(0.5 * grad_sq_integral(v) + fv)
}

/// `int v^(-p)`
pub fn entropy(v: &Field, p: f64) -> Result<f64> {
    if !(p > 0.0) {
        return Err(invalid(format!("entropy exponent must be positive, got {p}")));
    }
    v.check_positive()?;
    Ok(integrate(&v.map(|x| x.powf(-p))))
}

/// `int v^k (Delta_h v - f)^2`, the dissipation in the energy identity.
pub fn dissipation(v: &Field, f: &Field, k: f64) -> Result<f64> {
    let lap = laplacian(v);
    let r = lap.zip_map(f, |l, fi| l - fi)?;
    Ok(integrate(&v.zip_map(&r, |vi, ri| vi.powf(k) * ri * ri)?))
}

/// What to compute at each recorded snapshot beyond the fixed columns.
#[derive(Debug, Clone, Default)]
pub struct RecordSpec {
    pub entropy_p: Vec<f64>,
    /// Steady state to measure `w = v - v_inf` against.
    pub reference: Option<Field>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropyValue {
    pub p: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRecord {
    pub t: f64,
    pub mass: f64,
    pub mass_drift_rel: f64,
    pub energy: f64,
    pub entropy: Vec<EntropyValue>,
    /// `||grad(v - v_inf)||_2^2`, absent without a reference state.
    pub grad_w_sq: Option<f64>,
    pub h1_dist: Option<f64>,
    pub v_min: f64,
    pub v_max: f64,
    pub grad_v_sq: f64,
}

impl DiagnosticsRecord {
    /// `mass` is passed in so the u-form can report `int u` directly.
    pub fn compute(t: f64, v: &Field, f: &Field, mass: f64, mass_ref: f64, spec: &RecordSpec) -> Result<Self> {
        v.check_positive()?;
        let entropy = spec
            .entropy_p
            .iter()
            .map(|&p| Ok(EntropyValue { p, value: self::entropy(v, p)? }))
            .collect::<Result<Vec<_>>>()?;
        let (grad_w_sq, h1_dist) = match &spec.reference {
            Some(v_inf) => {
                let w = v.sub(v_inf)?;
                (Some(grad_sq_integral(&w)), Some(h1_distance(v, v_inf)?))
            }
            None => (None, None),
        };
        Ok(Self {
            t,
            mass,
            mass_drift_rel: (mass - mass_ref).abs() / mass_ref,
            energy: energy(v, f)?,
            entropy,
            grad_w_sq,
            h1_dist,
            v_min: v.min(),
            v_max: v.max(),
            grad_v_sq: grad_sq_integral(v),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualPoint {
    pub t: f64,
    pub residual: f64,
}

/// Interior snapshot indices whose neighbours sit exactly one recording
/// interval away.
fn centered_triples(traj: &Trajectory) -> Result<(f64, Vec<usize>)> {
    let s = &traj.snapshots;
    if s.len() < 3 {
        return Err(Error::InsufficientData(format!("need at least 3 snapshots, have {}", s.len())));
    }
    let delta = s[1].t - s[0].t;
    let uniform = |a: f64, b: f64| ((b - a) - delta).abs() <= 1e-9 * delta;
    let idx: Vec<usize> =
        (1..s.len() - 1).filter(|&i| uniform(s[i - 1].t, s[i].t) && uniform(s[i].t, s[i + 1].t)).collect();
    if idx.is_empty() {
        return Err(Error::InsufficientData("no uniformly spaced snapshot triples".into()));
    }
    Ok((delta, idx))
}

/// Residual of `dE/dt + int v^k (Delta v - f)^2 - int v f_t` at each interior
/// snapshot, time derivatives by centered differences over the recording
/// interval.
pub fn energy_identity_residual(traj: &Trajectory, source: &SourceTerm) -> Result<Vec<ResidualPoint>> {
    let (delta, idx) = centered_triples(traj)?;
    let s = &traj.snapshots;
    let k = traj.k;
    idx.into_iter()
        .map(|i| {
            let (fm, f0, fp) = (source.eval(s[i - 1].t), source.eval(s[i].t), source.eval(s[i + 1].t));
            let de = (energy(&s[i + 1].v, &fp)? - energy(&s[i - 1].v, &fm)?) / (2.0 * delta);
            let ft = fp.zip_map(&fm, |a, b| (a - b) / (2.0 * delta))?;
            let forcing = integrate(&s[i].v.zip_map(&ft, |v, f| v * f)?);
            Ok(ResidualPoint { t: s[i].t, residual: de + dissipation(&s[i].v, &f0, k)? - forcing })
        })
        .collect()
}

/// Residual of
/// `d/dt int v^-p + 4(p+1-k)p/(p-k)^2 int |grad v^(-(p-k)/2)|^2 - p int f v^(k-1-p)`.
pub fn entropy_identity_residual(traj: &Trajectory, source: &SourceTerm, p: f64) -> Result<Vec<ResidualPoint>> {
    let k = traj.k;
    if !(p > k - 1.0) || p == k {
        return Err(invalid(format!("entropy identity needs p > k - 1 and p != k (p = {p}, k = {k})")));
    }
    let (delta, idx) = centered_triples(traj)?;
    let s = &traj.snapshots;
    let coef = 4.0 * (p + 1.0 - k) * p / ((p - k) * (p - k));
    idx.into_iter()
        .map(|i| {
            let v = &s[i].v;
            let ds = (entropy(&s[i + 1].v, p)? - entropy(&s[i - 1].v, p)?) / (2.0 * delta);
            let g = grad_sq_integral(&v.map(|x| x.powf(-(p - k) / 2.0)));
            let f = source.eval(s[i].t);
            let rhs = p * integrate(&v.zip_map(&f, |x, fi| fi * x.powf(k - 1.0 - p))?);
            Ok(ResidualPoint { t: s[i].t, residual: ds + coef * g - rhs })
        })
        .collect()
}

/// Lower bound on `min v(t)` for a bounded time-homogeneous source:
/// `(min v0^-(k-1) + (k-1) ||f||_inf t)^(-1/(k-1))`.
pub fn positivity_lower_bound(v_min0: f64, f_sup: f64, k: f64, t: f64) -> f64 {
    (v_min0.powf(1.0 - k) + (k - 1.0) * f_sup * t).powf(-1.0 / (k - 1.0))
}

pub const POSITIVITY_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositivityRow {
    pub t: f64,
    pub v_min: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositivityReport {
    pub rows: Vec<PositivityRow>,
    /// `min_t (v_min(t) - bound(t))`; the check passes when this is `>= -slack`.
    pub worst_margin: f64,
    pub holds: bool,
}

pub fn positivity_bound_check(traj: &Trajectory, f_sup: f64, k: f64) -> PositivityReport {
    let v_min0 = traj.snapshots[0].diagnostics.v_min;
    let rows: Vec<PositivityRow> = traj
        .snapshots
        .iter()
        .map(|s| PositivityRow { t: s.t, v_min: s.diagnostics.v_min, bound: positivity_lower_bound(v_min0, f_sup, k, s.t) })
        .collect();
    let worst_margin = rows.iter().map(|r| r.v_min - r.bound).fold(f64::INFINITY, f64::min);
    PositivityReport { holds: worst_margin >= -POSITIVITY_SLACK, worst_margin, rows }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradientReport {
    /// `sup_t ||grad v||_2`
    pub sup: f64,
    pub t_sup: f64,
    pub initial: f64,
    pub last: f64,
    pub all_finite: bool,
    /// Last value above ten times the initial one (plus `1e-10` so rounding
    /// noise on a flat start does not count).
    pub unbounded_growth: bool,
}

pub fn gradient_bound_check(traj: &Trajectory) -> GradientReport {
    let norms: Vec<(f64, f64)> = traj.snapshots.iter().map(|s| (s.t, s.diagnostics.grad_v_sq.sqrt())).collect();
    let (t_sup, sup) = norms.iter().copied().fold((0.0, 0.0), |acc, (t, g)| if g > acc.1 { (t, g) } else { acc });
    let initial = norms[0].1;
    let last = norms[norms.len() - 1].1;
    GradientReport {
        sup,
        t_sup,
        initial,
        last,
        all_finite: norms.iter().all(|(_, g)| g.is_finite()),
        unbounded_growth: last > 10.0 * initial + 1e-10,
    }
}

/// Below this fraction of the series maximum, samples are treated as noise.
pub const DEFAULT_FLOOR_REL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub lambda: f64,
    pub amplitude: f64,
    pub r_squared: f64,
    pub t_a: f64,
    pub t_b: f64,
    #[serde(skip)]
    pub floor: f64,
}

impl RateFit {
    pub fn predict(&self, t: f64) -> f64 {
        self.amplitude * (-self.lambda * t).exp()
    }
}

/// Least-squares line through `(t, ln d)` on the trailing run of samples above
/// `floor_rel * max(d)`. `lambda` is minus the slope. A series with zero
/// variance in `ln d` reports `r_squared = 1`.
pub fn fit_decay_rate(series: &[(f64, f64)], floor_rel: f64) -> Result<RateFit> {
    let d_max = series.iter().map(|p| p.1).fold(0.0, f64::max);
    let floor = floor_rel * d_max;
    let above = |d: f64| d > floor && d.is_finite();
    let end = series.iter().rposition(|p| above(p.1));
    let Some(end) = end else {
        return Err(Error::InsufficientData("no samples above the floor".into()));
    };
    let start = series[..=end].iter().rposition(|p| !above(p.1)).map_or(0, |i| i + 1);
    let window = &series[start..=end];
    if window.len() < 5 {
        return Err(Error::InsufficientData(format!("{} samples above the floor, need 5", window.len())));
    }
    let n = window.len() as f64;
    let mt = window.iter().map(|p| p.0).sum::<f64>() / n;
    let my = window.iter().map(|p| p.1.ln()).sum::<f64>() / n;
    let (mut stt, mut sty, mut syy) = (0.0, 0.0, 0.0);
    for &(t, d) in window {
        let (dt, dy) = (t - mt, d.ln() - my);
        stt += dt * dt;
        sty += dt * dy;
        syy += dy * dy;
    }
    if stt == 0.0 {
        return Err(Error::InsufficientData("samples share a single time".into()));
    }
    // A flat series has zero rate exactly; the sums above only see rounding.
    let flat = window.iter().all(|p| p.1 == window[0].1);
    let (sty, syy) = if flat { (0.0, 0.0) } else { (sty, syy) };
    let slope = sty / stt;
    let intercept = my - slope * mt;
    let ss_res: f64 = window.iter().map(|&(t, d)| (d.ln() - intercept - slope * t).powi(2)).sum();
    let r_squared = if syy == 0.0 { 1.0 } else { (1.0 - ss_res / syy).clamp(0.0, 1.0) };
    Ok(RateFit {
        lambda: -slope,
        amplitude: intercept.exp(),
        r_squared,
        t_a: window[0].0,
        t_b: window[window.len() - 1].0,
        floor,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evolution::{evolve, EvolveOptions, Problem, Scheme};
    use crate::grid::Grid;
    use std::f64::consts::PI;

    fn unit(n: usize) -> Grid {
        Grid::cube(1, 1.0, n).unwrap()
    }

    #[test]
    fn mass_examples() {
        let g = unit(10);
        assert!((mass(&Field::constant(g, 2.0), 3.0).unwrap() - 0.25).abs() < 1e-15);
        let g2 = Grid::new(2, &[2.0, 3.0], &[4, 5]).unwrap();
        assert!((mass(&Field::constant(g2, 1.5), 2.5).unwrap() - 6.0 * 1.5f64.powf(-1.5)).abs() < 1e-13);
        let v = Field::from_fn(unit(1024), |x| 1.0 + x[0]);
        assert!((mass(&v, 2.0).unwrap() - 2f64.ln()).abs() < 1e-6);
    }

    #[test]
    fn energy_examples() {
        let g = unit(1024);
        let h = 1.0 / 1024.0;
        let cosf = Field::from_fn(g, |x| (PI * x[0]).cos());
        assert!(energy(&Field::constant(g, 3.0), &cosf).unwrap().abs() < 1e-13);

        let x = Field::from_fn(g, |x| x[0]);
        assert!((energy(&x, &Field::zeros(g)).unwrap() - 0.5 * (1.0 - h)).abs() < 1e-12);
        let expected = 0.5 * (1.0 - h) - 2.0 / (PI * PI);
        assert!((energy(&x, &cosf).unwrap() - expected).abs() < 1e-3);
        assert!((expected - 0.29657).abs() < 1e-3);
    }

    #[test]
    fn entropy_examples() {
        let g = unit(1024);
        assert!((entropy(&Field::constant(unit(5), 2.0), 2.0).unwrap() - 0.25).abs() < 1e-15);
        let v = Field::from_fn(g, |x| 1.0 + x[0]);
        assert!((entropy(&v, 2.0).unwrap() - 0.5).abs() < 1e-6);
        assert_eq!(entropy(&v, 1.7).unwrap(), mass(&v, 2.7).unwrap());
        assert!(entropy(&v, 0.0).is_err());
    }

    #[test]
    fn energy_shift_identity() {
        let g = unit(64);
        let v = Field::from_fn(g, |x| 1.0 + x[0] * x[0]);
        let f = Field::from_fn(g, |x| (3.0 * x[0]).sin() + 0.4);
        let mean = integrate(&f) / g.volume();
        let lhs = energy(&v, &f).unwrap() - energy(&v, &crate::sources::project_zero_mean(&f)).unwrap();
        assert!((lhs - mean * integrate(&v)).abs() < 1e-12);
    }

    #[test]
    fn rate_fit_examples() {
        let exact: Vec<(f64, f64)> = (0..20).map(|i| (i as f64 * 0.1, 3.0 * (-2.0 * i as f64 * 0.1).exp())).collect();
        let fit = fit_decay_rate(&exact, DEFAULT_FLOOR_REL).unwrap();
        assert!((fit.lambda - 2.0).abs() < 1e-12);
        assert!((fit.amplitude - 3.0).abs() < 1e-12);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);

        let flat: Vec<(f64, f64)> = (0..10).map(|i| (i as f64, 5.0)).collect();
        let fit = fit_decay_rate(&flat, DEFAULT_FLOOR_REL).unwrap();
        assert_eq!(fit.lambda, 0.0);
        assert_eq!(fit.r_squared, 1.0);

        let noisy: Vec<(f64, f64)> =
            (0..200).map(|i| i as f64 * 0.05).map(|t| (t, (-t).exp() * (1.0 + 0.001 * t.sin()))).collect();
        let fit = fit_decay_rate(&noisy, DEFAULT_FLOOR_REL).unwrap();
        assert!((fit.lambda - 1.0).abs() < 1e-2);

        let zeros: Vec<(f64, f64)> = (0..10).map(|i| (i as f64, 0.0)).collect();
        assert!(fit_decay_rate(&zeros, DEFAULT_FLOOR_REL).is_err());
        assert!(fit_decay_rate(&exact[..4], DEFAULT_FLOOR_REL).is_err());
    }

    #[test]
    fn rate_fit_uses_trailing_window() {
        let mut s: Vec<(f64, f64)> = (0..30).map(|i| (i as f64, (-(i as f64)).exp())).collect();
        s[3].1 = 0.0;
        let fit = fit_decay_rate(&s, 1e-20).unwrap();
        assert_eq!(fit.t_a, 4.0);
        assert_eq!(fit.t_b, 29.0);
    }

    fn constant_run() -> (Trajectory, SourceTerm) {
        let g = unit(16);
        let src = SourceTerm::zero(g);
        let v0 = Field::constant(g, 0.5);
        let p = Problem::new(3.0, src.clone(), v0).unwrap();
        (evolve(&p, &EvolveOptions::new(Scheme::VForm, 0.5, 0.01, 0.1)).unwrap(), src)
    }

    #[test]
    fn constant_trajectory_residuals_vanish() {
        let (tr, src) = constant_run();
        for r in energy_identity_residual(&tr, &src).unwrap() {
            assert!(r.residual.abs() < 1e-12);
        }
        for r in entropy_identity_residual(&tr, &src, 6.0).unwrap() {
            assert!(r.residual.abs() < 1e-12);
        }
        assert!(entropy_identity_residual(&tr, &src, 3.0).is_err());
        assert!(entropy_identity_residual(&tr, &src, 1.5).is_err());
        let grad = gradient_bound_check(&tr);
        assert!(grad.sup < 1e-13);
        assert!(!grad.unbounded_growth);
        let pos = positivity_bound_check(&tr, 0.0, 3.0);
        assert!(pos.holds);
    }

    #[test]
    fn too_few_snapshots() {
        let g = unit(8);
        let src = SourceTerm::zero(g);
        let p = Problem::new(2.0, src.clone(), Field::constant(g, 1.0)).unwrap();
        let tr = evolve(&p, &EvolveOptions::new(Scheme::VForm, 0.1, 0.01, 1.0)).unwrap();
        assert_eq!(tr.snapshots.len(), 2);
        assert!(matches!(energy_identity_residual(&tr, &src), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn sign_structure_without_forcing_time_dependence() {
        let g = unit(64);
        let f = Field::from_fn(g, |x| (PI * x[0]).cos());
        let src = SourceTerm::time_homogeneous(&f);
        let v0 = Field::from_fn(g, |x| 1.0 + 0.3 * (2.0 * PI * x[0]).cos());
        let p = Problem::new(2.0, src.clone(), v0).unwrap();
        let tr = evolve(&p, &EvolveOptions::new(Scheme::VForm, 0.3, 1e-3, 0.01)).unwrap();
        for s in &tr.snapshots {
            assert!(dissipation(&s.v, &f, 2.0).unwrap() >= 0.0);
        }
        for w in tr.snapshots.windows(2) {
            assert!(w[1].diagnostics.energy <= w[0].diagnostics.energy + 1e-12);
        }
    }

    #[test]
    fn entropy_decreases_without_source() {
        let g = unit(64);
        let v0 = Field::from_fn(g, |x| 1.0 + 0.5 * (PI * x[0]).cos());
        let p = Problem::new(2.0, SourceTerm::zero(g), v0).unwrap();
        let tr = evolve(&p, &EvolveOptions::new(Scheme::VForm, 0.2, 1e-3, 0.01).with_entropy(vec![4.0])).unwrap();
        for w in tr.snapshots.windows(2) {
            assert!(w[1].diagnostics.entropy[0].value <= w[0].diagnostics.entropy[0].value);
        }
    }

    #[test]
    fn decaying_run_has_gradient_sup_at_start() {
        let g = unit(64);
        let v0 = Field::from_fn(g, |x| 1.0 + 0.1 * (PI * x[0]).cos());
        let p = Problem::new(2.0, SourceTerm::zero(g), v0).unwrap();
        let tr = evolve(&p, &EvolveOptions::new(Scheme::VForm, 0.3, 1e-3, 0.01)).unwrap();
        let rep = gradient_bound_check(&tr);
        assert_eq!(rep.t_sup, 0.0);
        assert!(rep.all_finite);
        assert!(!rep.unbounded_growth);
    }
}
