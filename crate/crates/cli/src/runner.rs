//! Turns a validated [`ExperimentConfig`] into runs and artifacts.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use fastdiff::criticality::{classify_regime, extended_float, RegimeQuery, RegimeReport};
use fastdiff::diagnostics::{fit_decay_rate, DiagnosticsRecord, RateFit};
use fastdiff::evolution::{evolve, EvolveOptions, Problem, Termination};
use fastdiff::grid::{Field, Grid};
use fastdiff::io::{fmt17, read_field_path, save_field, save_json, save_trajectory};
use fastdiff::sources::{time_variation_proxy, SourceProfile, SourceTerm};
use fastdiff::steady::{build_steady_state, SteadyState, SteadySummary};
use fastdiff::{Error, Result};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ExperimentConfig, InitialSpec, SourceSpec};

/// Outcome of one experiment. Present for failed runs too, with `failure` set.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub config: ExperimentConfig,
    pub k: f64,
    #[serde(with = "extended_float")]
    pub r: f64,
    #[serde(with = "extended_float")]
    pub s: f64,
    pub failure: Option<String>,
    pub regime: Option<RegimeReport>,
    pub steady: Option<SteadySummary>,
    pub final_diagnostics: Option<DiagnosticsRecord>,
    pub rate_fit: Option<RateFit>,
    /// Why the decay fit was rejected, if it was.
    pub rate_fit_rejected: Option<String>,
    pub termination: Option<Termination>,
    pub max_mass_drift: Option<f64>,
    pub steps: usize,
    /// Kept out of the JSON so artifacts stay byte-identical across reruns.
    #[serde(skip)]
    pub wall_time: Duration,
}

impl RunSummary {
    fn new(config: &ExperimentConfig) -> Self {
        RunSummary {
            config: config.clone(),
            k: config.model.k[0],
            r: config.model.r[0],
            s: config.model.s[0],
            failure: None,
            regime: None,
            steady: None,
            final_diagnostics: None,
            rate_fit: None,
            rate_fit_rejected: None,
            termination: None,
            max_mass_drift: None,
            steps: 0,
            wall_time: Duration::ZERO,
        }
    }

    /// Completed and reached `T`.
    pub fn succeeded(&self) -> bool {
        self.failure.is_none() && self.termination == Some(Termination::ReachedEnd)
    }
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    config: &'a ExperimentConfig,
    artifacts: Vec<String>,
    failure: Option<&'a str>,
}

pub fn make_grid(config: &ExperimentConfig) -> Result<Grid> {
    Grid::new(config.grid.dimension, &config.grid.extents, &config.grid.resolutions)
}

pub fn make_source(config: &ExperimentConfig, grid: Grid) -> Result<SourceTerm> {
    match &config.source {
        SourceSpec::Profile { profile: SourceProfile::Zero, .. } => Ok(SourceTerm::zero(grid)),
        SourceSpec::Profile { profile, time_profile } => {
            let shape = profile.sample(&grid)?;
            SourceTerm::separable(time_profile.clone(), &shape)
        }
        SourceSpec::File { path } => SourceTerm::from_csv_path(path, grid),
    }
}

/// `amplitude * prod_a cos(mode_a pi x_a / L_a)`
fn cosine_field(grid: Grid, modes: &[u32], amplitude: f64) -> Field {
    let ext = grid.extents().to_vec();
    let modes = modes.to_vec();
    Field::from_fn(grid, move |x| {
        amplitude
            * x.iter().enumerate().map(|(i, xi)| (modes[i] as f64 * std::f64::consts::PI * xi / ext[i]).cos()).product::<f64>()
    })
}

pub fn make_initial(config: &ExperimentConfig, grid: Grid, k: f64, source: &SourceTerm) -> Result<Field> {
    let v0 = match &config.initial {
        InitialSpec::Constant { value } => Field::constant(grid, *value),
        InitialSpec::SteadyPlusPerturbation { modes, amplitude, base_mass } => {
            let base = build_steady_state(&source.limit(), k, *base_mass)?.v_infinity;
            base.add(&cosine_field(grid, modes, *amplitude))?
        }
        InitialSpec::File { path } => read_field_path(path, grid)?,
    };
    v0.check_positive()?;
    Ok(v0)
}

pub fn classify(config: &ExperimentConfig, v0: Option<&Field>, f0: Option<&Field>, time_homogeneous: bool) -> RegimeReport {
    let q = RegimeQuery {
        n: config.grid.dimension,
        k: config.model.k[0],
        r: config.model.r[0],
        s: config.model.s[0],
        time_homogeneous,
    };
    classify_regime(&q, v0, f0)
}

/// Steady state for the configured `k`, with the mass of the configured `v0`.
pub fn compute_steady(config: &ExperimentConfig) -> Result<(SteadyState, f64)> {
    let grid = make_grid(config)?;
    let k = config.model.k[0];
    let source = make_source(config, grid)?;
    let v0 = make_initial(config, grid, k, &source)?;
    let mass = fastdiff::diagnostics::mass(&v0, k)?;
    Ok((build_steady_state(&source.limit(), k, mass)?, mass))
}

/// Writes `steady.csv` and `steady.json` into `dir`.
pub fn write_steady(dir: &Path, ss: &SteadyState) -> Result<()> {
    save_field(dir.join("steady.csv"), &ss.v_infinity, "v_inf")?;
    save_json(dir.join("steady.json"), &ss.summary())
}

/// The decay fit on `h1_dist`, or the reason it is rejected.
fn decay_fit(records: &[DiagnosticsRecord], floor: f64) -> std::result::Result<RateFit, String> {
    let series: Vec<(f64, f64)> = records.iter().filter_map(|r| r.h1_dist.map(|d| (r.t, d))).collect();
    let fit = fit_decay_rate(&series, floor).map_err(|e| format!("insufficient decay: {e}"))?;
    if !(fit.lambda > 0.0) || fit.lambda * (fit.t_b - fit.t_a) < 1.0 {
        return Err(format!("insufficient decay: lambda = {:e} over [{}, {}]", fit.lambda, fit.t_a, fit.t_b));
    }
    Ok(fit)
}

/// Runs one experiment (the first point of any sweep lists) into
/// `config.run.output`. Errors are captured in the summary; whatever was
/// written before the failure stays on disk.
pub fn run_experiment(config: &ExperimentConfig) -> RunSummary {
    let start = Instant::now();
    let mut summary = RunSummary::new(config);
    let out = config.run.output.clone();
    let mut artifacts = Vec::new();
    if let Err(e) = run_into(config, &out, &mut summary, &mut artifacts) {
        summary.failure = Some(e.to_string());
    }
    summary.wall_time = start.elapsed();
    let mut finish = || -> Result<()> {
        fs::create_dir_all(&out)?;
        save_json(out.join("summary.json"), &summary)?;
        artifacts.push("summary.json".into());
        let manifest = Manifest {
            tool: "fastdiff",
            version: env!("CARGO_PKG_VERSION"),
            config,
            artifacts: artifacts.clone(),
            failure: summary.failure.as_deref(),
        };
        save_json(out.join("manifest.json"), &manifest)
    };
    if let Err(e) = finish() {
        let msg = format!("writing artifacts: {e}");
        summary.failure = Some(match summary.failure.take() {
            Some(prev) => format!("{prev}; {msg}"),
            None => msg,
        });
    }
    summary
}

fn run_into(config: &ExperimentConfig, out: &Path, summary: &mut RunSummary, artifacts: &mut Vec<String>) -> Result<()> {
    fs::create_dir_all(out)?;
    let grid = make_grid(config)?;
    let k = summary.k;
    let source = make_source(config, grid)?;
    let v0 = make_initial(config, grid, k, &source)?;
    let f0 = source.eval(0.0);
    let mut regime = classify(config, Some(&v0), Some(&f0), source.is_time_homogeneous());
    if !source.is_time_homogeneous() {
        // Only a difference-quotient proxy of int ||f_t||_2 is checkable; reported, not enforced.
        let n = 1000;
        let times: Vec<f64> = (0..=n).map(|i| config.run.t_end * i as f64 / n as f64).collect();
        regime.notes.push(format!(
            "sum ||f(t_i+1) - f(t_i)||_2 over [0, {}] = {:.6e} (proxy for int ||f_t||_2 dt, not enforced)",
            config.run.t_end,
            time_variation_proxy(&source, &times)
        ));
    }
    summary.regime = Some(regime);

    let problem = Problem::new(k, source, v0)?;
    let ss = build_steady_state(&problem.source.limit(), k, problem.mass)?;
    write_steady(out, &ss)?;
    artifacts.extend(["steady.csv".to_string(), "steady.json".to_string()]);
    summary.steady = Some(ss.summary());

    let run = &config.run;
    let opts = EvolveOptions::new(run.scheme, run.t_end, run.dt0, run.record_every)
        .with_entropy(run.entropy_p.clone())
        .with_reference(ss.v_infinity);
    let traj = evolve(&problem, &opts)?;
    artifacts.extend(save_trajectory(out, &traj, &run.entropy_p)?);
    summary.termination = Some(traj.termination);
    summary.max_mass_drift = Some(traj.max_mass_drift());
    summary.steps = traj.steps.len() - 1;
    summary.final_diagnostics = Some(traj.final_snapshot().diagnostics.clone());
    let records: Vec<DiagnosticsRecord> = traj.snapshots.iter().map(|s| s.diagnostics.clone()).collect();
    match decay_fit(&records, run.fit_floor) {
        Ok(fit) => summary.rate_fit = Some(fit),
        Err(reason) => summary.rate_fit_rejected = Some(reason),
    }
    Ok(())
}

pub const AGGREGATE_HEADER: &str = "k,r,s,verdict,lambda,r_squared,final_h1_dist,mass_drift";

pub fn aggregate_row(s: &RunSummary) -> String {
    let verdict = s.regime.as_ref().map_or("invalid", |r| r.verdict.as_str());
    let fit = s.rate_fit.as_ref();
    [
        fmt17(s.k),
        fmt17(s.r),
        fmt17(s.s),
        verdict.to_string(),
        fmt17(fit.map_or(f64::NAN, |f| f.lambda)),
        fmt17(fit.map_or(f64::NAN, |f| f.r_squared)),
        fmt17(s.final_diagnostics.as_ref().and_then(|d| d.h1_dist).unwrap_or(f64::NAN)),
        fmt17(s.max_mass_drift.unwrap_or(f64::NAN)),
    ]
    .join(",")
}

/// Runs every `(k, r, s)` point into `out/point_NNN`, `jobs` at a time, and
/// writes `aggregate.csv`. Results are in point order regardless of `jobs`.
pub fn run_sweep(config: &ExperimentConfig, jobs: usize) -> Result<Vec<RunSummary>> {
    let out = config.run.output.clone();
    let points = config.points();
    if points.is_empty() {
        return Err(Error::InvalidParameter("sweep list is empty".into()));
    }
    fs::create_dir_all(&out)?;
    let configs: Vec<ExperimentConfig> =
        points.iter().enumerate().map(|(i, &p)| config.at_point(p, out.join(format!("point_{i:03}")))).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    let summaries: Vec<RunSummary> = pool.install(|| configs.par_iter().map(run_experiment).collect());
    write_aggregate(&out.join("aggregate.csv"), &summaries)?;
    Ok(summaries)
}

pub fn write_aggregate(path: &PathBuf, summaries: &[RunSummary]) -> Result<()> {
    let mut w = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(w, "{AGGREGATE_HEADER}")?;
    for s in summaries {
        writeln!(w, "{}", aggregate_row(s))?;
    }
    w.flush()?;
    Ok(())
}
