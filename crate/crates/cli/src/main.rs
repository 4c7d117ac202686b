use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fastdiff::criticality::{classify_regime, RegimeQuery};
use fastdiff::diagnostics::{fit_decay_rate, DEFAULT_FLOOR_REL};
use fastdiff::io::save_json;
use fastdiff::verification;
use fastdiff_cli::config::{parse_config, ExperimentConfig};
use fastdiff_cli::exit;
use fastdiff_cli::runner::{self, run_experiment, run_sweep};

#[derive(Parser)]
#[command(name = "fastdiff", version, about = "Simulate and verify singular diffusion v_t = v^k (Laplace v - f)")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the mass-calibrated steady state for a config.
    Steady {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides `run.output`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one experiment: steady state, regime, time integration, decay fit.
    Evolve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every (k, r, s) point of a config and write an aggregate table.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Points run concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Report which convergence regime covers (N, k, r, s).
    Classify {
        /// Take N, k, r, s, v0 and f0 from a config instead of flags.
        #[arg(long, conflicts_with_all = ["dim", "k"])]
        config: Option<PathBuf>,
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long)]
        k: Option<f64>,
        /// Source integrability exponent in space; `inf` allowed.
        #[arg(long, default_value = "inf")]
        r: f64,
        /// Source integrability exponent in time; `inf` allowed.
        #[arg(long, default_value = "inf")]
        s: f64,
        /// The source depends on time.
        #[arg(long)]
        time_dependent: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit d(t) ~ A exp(-lambda t) to a column of a diagnostics CSV.
    FitRate {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "h1_dist")]
        column: String,
        #[arg(long, default_value_t = DEFAULT_FLOOR_REL)]
        floor: f64,
    },
    /// Run a named acceptance suite.
    Verify {
        #[arg(long)]
        suite: String,
        /// Also write the report as JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load(config: &PathBuf, out: Option<PathBuf>) -> Result<ExperimentConfig, i32> {
    let mut c = parse_config(config).map_err(|e| {
        eprintln!("{e}");
        exit::VALIDATION
    })?;
    if let Some(out) = out {
        c.run.output = out;
    }
    Ok(c)
}

fn single_point(c: &ExperimentConfig, command: &str) -> Result<(), i32> {
    if c.is_sweep() {
        eprintln!("`{command}` takes a single (k, r, s); this config has {} points, use `sweep`", c.point_count());
        return Err(exit::VALIDATION);
    }
    Ok(())
}

fn print_json<T: serde::Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

fn run(cli: Cli) -> Result<(), i32> {
    match cli.command {
        Command::Steady { config, out } => {
            let c = load(&config, out)?;
            single_point(&c, "steady")?;
            let (ss, _) = runner::compute_steady(&c).map_err(|e| {
                eprintln!("steady state failed: {e}");
                exit::RUN_FAILURE
            })?;
            std::fs::create_dir_all(&c.run.output)
                .map_err(fastdiff::Error::from)
                .and_then(|_| runner::write_steady(&c.run.output, &ss))
                .map_err(|e| {
                    eprintln!("writing steady state: {e}");
                    exit::RUN_FAILURE
                })?;
            print_json(&ss.summary());
        }
        Command::Evolve { config, out } => {
            let c = load(&config, out)?;
            single_point(&c, "evolve")?;
            let summary = run_experiment(&c);
            print_json(&summary);
            eprintln!("wall time {:.3?}, artifacts in {}", summary.wall_time, c.run.output.display());
            if !summary.succeeded() {
                return Err(exit::RUN_FAILURE);
            }
        }
        Command::Sweep { config, out, jobs } => {
            let c = load(&config, out)?;
            let summaries = run_sweep(&c, jobs).map_err(|e| {
                eprintln!("sweep failed: {e}");
                exit::RUN_FAILURE
            })?;
            println!("{}", runner::AGGREGATE_HEADER);
            for s in &summaries {
                println!("{}", runner::aggregate_row(s));
            }
            let failed = summaries.iter().filter(|s| !s.succeeded()).count();
            if failed > 0 {
                eprintln!("{failed} of {} points did not complete", summaries.len());
                return Err(exit::RUN_FAILURE);
            }
        }
        Command::Classify { config, dim, k, r, s, time_dependent, out } => {
            let report = match config {
                Some(path) => {
                    let c = load(&path, None)?;
                    single_point(&c, "classify")?;
                    let prepared = runner::make_grid(&c).and_then(|g| {
                        let src = runner::make_source(&c, g)?;
                        let v0 = runner::make_initial(&c, g, c.model.k[0], &src)?;
                        Ok((src, v0))
                    });
                    match prepared {
                        Ok((src, v0)) => runner::classify(&c, Some(&v0), Some(&src.eval(0.0)), src.is_time_homogeneous()),
                        Err(e) => {
                            eprintln!("could not build v0/f0 ({e}); classifying without them");
                            runner::classify(&c, None, None, true)
                        }
                    }
                }
                None => {
                    let (Some(n), Some(k)) = (dim, k) else {
                        eprintln!("classify needs --config or both --dim and --k");
                        return Err(exit::VALIDATION);
                    };
                    classify_regime(&RegimeQuery { n, k, r, s, time_homogeneous: !time_dependent }, None, None)
                }
            };
            print_json(&report);
            if let Some(dir) = out {
                save_json(dir.join("regime.json"), &report).map_err(|e| {
                    eprintln!("writing regime report: {e}");
                    exit::RUN_FAILURE
                })?;
            }
        }
        Command::FitRate { input, column, floor } => {
            let series = read_column(&input, &column).map_err(|e| {
                eprintln!("{e}");
                exit::VALIDATION
            })?;
            let fit = fit_decay_rate(&series, floor).map_err(|e| {
                eprintln!("fit failed: {e}");
                exit::RUN_FAILURE
            })?;
            print_json(&fit);
        }
        Command::Verify { suite, out } => {
            if let Err(e) = verification::suite_members(&suite) {
                eprintln!("{e}");
                return Err(exit::VALIDATION);
            }
            let outcomes = verification::run_suite(&suite).map_err(|e| {
                eprintln!("verification run failed: {e}");
                exit::VERIFY_FAILURE
            })?;
            for o in &outcomes {
                println!("{o}");
            }
            if let Some(dir) = out {
                save_json(dir.join(format!("verify_{suite}.json")), &outcomes).map_err(|e| {
                    eprintln!("writing report: {e}");
                    exit::RUN_FAILURE
                })?;
            }
            if outcomes.iter().any(|o| !o.passed) {
                return Err(exit::VERIFY_FAILURE);
            }
        }
    }
    Ok(())
}

/// `(t, column)` pairs from a CSV with a `t` column; `NaN` cells are skipped.
fn read_column(path: &PathBuf, column: &str) -> Result<Vec<(f64, f64)>, String> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let headers = reader.headers().map_err(|e| e.to_string())?.clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let ti = find("t").ok_or("input has no `t` column")?;
    let ci = find(column).ok_or_else(|| format!("input has no `{column}` column; columns: {}", headers.iter().collect::<Vec<_>>().join(", ")))?;
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| e.to_string())?;
        let parse = |j: usize| {
            rec.get(j).unwrap_or("").trim().parse::<f64>().map_err(|_| format!("row {}: bad number in column {j}", i + 1))
        };
        let (t, d) = (parse(ti)?, parse(ci)?);
        if !d.is_nan() {
            out.push((t, d));
        }
    }
    Ok(out)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { exit::VALIDATION } else { exit::OK };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(code) => ExitCode::from(code as u8),
    }
}
