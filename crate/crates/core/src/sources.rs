//! Zero-mean source terms `f(x, t)` and their mixed space-time norms.

use std::f64::consts::PI;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::{integrate, Field, Grid};

/// Subtracts the discrete mean so the result integrates to zero.
pub fn project_zero_mean(field: &Field) -> Field {
    let mean = integrate(field) / field.grid().volume();
    field.shift(-mean)
}

/// Scalar time modulation `g(t)` of a separable source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TimeProfile {
    Constant,
    /// `exp(-rate t)`
    ExpDecay { rate: f64 },
    /// Piecewise linear through the samples, clamped outside them.
    Samples { times: Vec<f64>, values: Vec<f64> },
}

impl TimeProfile {
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            TimeProfile::Constant => 1.0,
            TimeProfile::ExpDecay { rate } => (-rate * t).exp(),
            TimeProfile::Samples { times, values } => {
                let (i, theta) = locate(times, t);
                if theta == 0.0 {
                    values[i]
                } else {
                    (1.0 - theta) * values[i] + theta * values[i + 1]
                }
            }
        }
    }

    /// Value as `t -> infinity`.
    pub fn limit(&self) -> f64 {
        match self {
            TimeProfile::Constant => 1.0,
            TimeProfile::ExpDecay { rate } if *rate > 0.0 => 0.0,
            TimeProfile::ExpDecay { .. } => 1.0,
            TimeProfile::Samples { values, .. } => *values.last().unwrap_or(&0.0),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            TimeProfile::Constant => Ok(()),
            TimeProfile::ExpDecay { rate } if rate.is_finite() => Ok(()),
            TimeProfile::ExpDecay { rate } => Err(invalid(format!("decay rate must be finite, got {rate}"))),
            TimeProfile::Samples { times, values } => {
                if times.is_empty() || times.len() != values.len() {
                    return Err(invalid("time profile needs matching, nonempty sample lists"));
                }
                check_increasing(times)
            }
        }
    }
}

/// Segment index and interpolation weight for `t`, clamped to the sample range.
fn locate(times: &[f64], t: f64) -> (usize, f64) {
    let last = times.len() - 1;
    if last == 0 || t <= times[0] {
        return (0, 0.0);
    }
    if t >= times[last] {
        return (last, 0.0);
    }
    let i = times.partition_point(|&s| s <= t) - 1;
    let theta = (t - times[i]) / (times[i + 1] - times[i]);
    (i, theta)
}

fn check_increasing(times: &[f64]) -> Result<()> {
    if times.windows(2).all(|w| w[1] > w[0]) && times.iter().all(|t| t.is_finite()) {
        Ok(())
    } else {
        Err(invalid("sample times must be finite and strictly increasing"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SourceKind {
    TimeHomogeneous(Field),
    Separable { profile: TimeProfile, shape: Field },
    Tabulated { times: Vec<f64>, fields: Vec<Field> },
}

/// A zero-mean source. Every stored field is projected at construction and
/// every evaluation is projected again.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceTerm {
    kind: SourceKind,
    zero_mean_enforced: bool,
}

impl SourceTerm {
    pub fn time_homogeneous(phi: &Field) -> Self {
        Self { kind: SourceKind::TimeHomogeneous(project_zero_mean(phi)), zero_mean_enforced: true }
    }

    pub fn zero(grid: Grid) -> Self {
        Self::time_homogeneous(&Field::zeros(grid))
    }

    pub fn separable(profile: TimeProfile, shape: &Field) -> Result<Self> {
        profile.validate()?;
        Ok(Self {
            kind: SourceKind::Separable { profile, shape: project_zero_mean(shape) },
            zero_mean_enforced: true,
        })
    }

    pub fn tabulated(times: Vec<f64>, fields: Vec<Field>) -> Result<Self> {
        if times.is_empty() || times.len() != fields.len() {
            return Err(invalid("tabulated source needs one field per sample time"));
        }
        check_increasing(&times)?;
        for f in &fields[1..] {
            f.ensure_same_grid(&fields[0])?;
        }
        let fields = fields.iter().map(project_zero_mean).collect();
        Ok(Self { kind: SourceKind::Tabulated { times, fields }, zero_mean_enforced: true })
    }

    /// Reads `t,cell_0,...,cell_{M-1}` rows (axis-major cell order).
    pub fn from_csv_reader(reader: impl Read, grid: Grid) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.len() != grid.len() + 1 || &headers[0] != "t" {
            return Err(Error::Parse(format!(
                "expected header t,cell_0..cell_{} ({} columns), got {} columns",
                grid.len() - 1,
                grid.len() + 1,
                headers.len()
            )));
        }
        let mut times = Vec::new();
        let mut fields = Vec::new();
        for (row, record) in rdr.records().enumerate() {
            let record = record?;
            let mut vals = record.iter().map(|s| {
                s.parse::<f64>().map_err(|e| Error::Parse(format!("row {}: {e}: {s:?}", row + 1)))
            });
            times.push(vals.next().ok_or_else(|| Error::Parse("empty row".into()))??);
            let values = vals.collect::<Result<Vec<f64>>>()?;
            fields.push(Field::new(grid, values)?);
        }
        Self::tabulated(times, fields)
    }

    pub fn from_csv_path(path: impl AsRef<Path>, grid: Grid) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        Self::from_csv_reader(file, grid)
    }

    pub fn kind(&self) -> &SourceKind {
        &self.kind
    }

    pub fn zero_mean_enforced(&self) -> bool {
        self.zero_mean_enforced
    }

    pub fn grid(&self) -> &Grid {
        match &self.kind {
            SourceKind::TimeHomogeneous(phi) => phi.grid(),
            SourceKind::Separable { shape, .. } => shape.grid(),
            SourceKind::Tabulated { fields, .. } => fields[0].grid(),
        }
    }

    pub fn is_time_homogeneous(&self) -> bool {
        match &self.kind {
            SourceKind::TimeHomogeneous(_) => true,
            SourceKind::Separable { profile, .. } => matches!(profile, TimeProfile::Constant),
            SourceKind::Tabulated { fields, .. } => fields.len() == 1,
        }
    }

    /// `f(., t)`, clamped outside a tabulated range.
    pub fn eval(&self, t: f64) -> Field {
        match &self.kind {
            SourceKind::TimeHomogeneous(phi) => phi.clone(),
            SourceKind::Separable { profile, shape } => project_zero_mean(&shape.scale(profile.eval(t))),
            SourceKind::Tabulated { times, fields } => {
                let (i, theta) = locate(times, t);
                if theta == 0.0 {
                    return fields[i].clone();
                }
                let mixed = fields[i]
                    .zip_map(&fields[i + 1], |a, b| (1.0 - theta) * a + theta * b)
                    .expect("tabulated fields share one grid");
                project_zero_mean(&mixed)
            }
        }
    }

    /// The limiting field `f_inf` as `t -> infinity`.
    pub fn limit(&self) -> Field {
        match &self.kind {
            SourceKind::TimeHomogeneous(phi) => phi.clone(),
            SourceKind::Separable { profile, shape } => project_zero_mean(&shape.scale(profile.limit())),
            SourceKind::Tabulated { fields, .. } => fields[fields.len() - 1].clone(),
        }
    }

    /// Largest `||f(., t)||_inf` over the given times.
    pub fn sup_norm_over(&self, t_grid: &[f64]) -> f64 {
        t_grid.iter().map(|&t| self.eval(t).sup_norm()).fold(0.0, f64::max)
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        let kind = match &self.kind {
            SourceKind::TimeHomogeneous(phi) => SourceKind::TimeHomogeneous(phi.scale(alpha)),
            SourceKind::Separable { profile, shape } => {
                SourceKind::Separable { profile: profile.clone(), shape: shape.scale(alpha) }
            }
            SourceKind::Tabulated { times, fields } => SourceKind::Tabulated {
                times: times.clone(),
                fields: fields.iter().map(|f| f.scale(alpha)).collect(),
            },
        };
        Self { kind, zero_mean_enforced: self.zero_mean_enforced }
    }
}

/// Shorthand for [`SourceTerm::eval`].
pub fn eval_source(source: &SourceTerm, t: f64) -> Field {
    source.eval(t)
}

/// Discrete `L^r(Omega)` norm; `r = inf` takes the max over cells.
pub fn lr_norm(field: &Field, r: f64) -> f64 {
    if r.is_infinite() {
        field.sup_norm()
    } else {
        integrate(&field.map(|v| v.abs().powf(r))).powf(1.0 / r)
    }
}

/// Discrete `L^s(0, T; L^r(Omega))` norm sampled on `t_grid`: trapezoid rule
/// in time for finite `s`, max over samples for `s = inf`.
pub fn ls_lr_norm(source: &SourceTerm, s: f64, r: f64, t_grid: &[f64]) -> Result<f64> {
    if !(s >= 1.0) {
        return Err(invalid(format!("time exponent s must lie in [1, inf], got {s}")));
    }
    if !(r > 1.0) {
        return Err(invalid(format!("space exponent r must lie in (1, inf], got {r}")));
    }
    if t_grid.is_empty() {
        return Err(invalid("time grid must be nonempty"));
    }
    check_increasing(t_grid)?;
    let inner: Vec<f64> = t_grid.iter().map(|&t| lr_norm(&source.eval(t), r)).collect();
    if s.is_infinite() {
        return Ok(inner.iter().copied().fold(0.0, f64::max));
    }
    let integral: f64 = t_grid
        .windows(2)
        .zip(inner.windows(2))
        .map(|(t, g)| 0.5 * (t[1] - t[0]) * (g[0].powf(s) + g[1].powf(s)))
        .sum();
    Ok(integral.powf(1.0 / s))
}

/// Difference-quotient proxy for `int_0^T ||f_t||_2 dt`:
/// `sum_i ||f(t_{i+1}) - f(t_i)||_2`.
pub fn time_variation_proxy(source: &SourceTerm, t_grid: &[f64]) -> f64 {
    t_grid
        .windows(2)
        .map(|w| {
            let d = source.eval(w[1]).sub(&source.eval(w[0])).expect("one grid");
            lr_norm(&d, 2.0)
        })
        .sum()
}

/// Closed-form source shapes, sampled at cell centers and projected to zero mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SourceProfile {
    Zero,
    /// `amplitude * prod_a cos(mode_a pi x_a / L_a)`
    Cosine { modes: Vec<u32>, amplitude: f64 },
    /// `amplitude * exp(-|x - center|^2 / width^2)`
    Gaussian { center: Vec<f64>, width: f64, amplitude: f64 },
}

impl SourceProfile {
    pub fn sample(&self, grid: &Grid) -> Result<Field> {
        let dim = grid.dim();
        let raw = match self {
            SourceProfile::Zero => Field::zeros(*grid),
            SourceProfile::Cosine { modes, amplitude } => {
                if modes.len() != dim {
                    return Err(invalid(format!("cosine profile needs {dim} mode indices")));
                }
                let ext = grid.extents().to_vec();
                let modes = modes.clone();
                let a = *amplitude;
                Field::from_fn(*grid, move |x| {
                    a * x.iter().enumerate().map(|(i, xi)| (modes[i] as f64 * PI * xi / ext[i]).cos()).product::<f64>()
                })
            }
            SourceProfile::Gaussian { center, width, amplitude } => {
                if center.len() != dim {
                    return Err(invalid(format!("gaussian profile needs a {dim}-dimensional center")));
                }
                if !(*width > 0.0) {
                    return Err(invalid("gaussian width must be positive"));
                }
                let (c, w, a) = (center.clone(), *width, *amplitude);
                Field::from_fn(*grid, move |x| {
                    let r2: f64 = x.iter().zip(&c).map(|(xi, ci)| (xi - ci).powi(2)).sum();
                    a * (-r2 / (w * w)).exp()
                })
            }
        };
        Ok(project_zero_mean(&raw))
    }
}
