use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use fastdiff_cli::config::parse_config_str;
use fastdiff_cli::{exit, run_experiment, run_sweep};
use serde_json::Value;

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fastdiff")).args(args).output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stdout)))
}

const CONSTANT_STEADY: &str = "
[grid]
resolutions = 32
[model]
k = 3
[source]
profile = \"zero\"
[initial]
constant = 0.5
[run]
t_end = 0.5
dt0 = 0.01
record_every = 0.05
";

const DECAY_2D: &str = "
[grid]
dimension = 2
resolutions = [24, 24]
[model]
k = 3
[source]
modes = [1, 1]
amplitude = 0.1
[initial]
perturbation_modes = [1, 1]
perturbation_amplitude = 0.01
[run]
t_end = 0.4
dt0 = 1e-3
record_every = 0.01
entropy_p = [4.0]
";

#[test]
fn constant_steady_run_rejects_the_fit() {
    let dir = tempfile::tempdir().unwrap();
    let c = parse_config_str(CONSTANT_STEADY, dir.path()).unwrap();
    let mut c = c.clone();
    c.run.output = dir.path().join("run");
    let s = run_experiment(&c);
    assert!(s.succeeded(), "{:?}", s.failure);
    assert!(s.rate_fit.is_none());
    assert!(s.rate_fit_rejected.as_deref().unwrap().contains("insufficient decay"));
    assert!(s.max_mass_drift.unwrap() <= 1e-12);
    for f in ["summary.json", "manifest.json", "diagnostics.csv", "steady.csv", "steady.json", "snapshots/snapshot_0000.csv"] {
        assert!(dir.path().join("run").join(f).exists(), "{f}");
    }
}

#[test]
fn decay_run_reports_positive_rate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", DECAY_2D);
    let out = dir.path().join("run");
    let o = bin(&["evolve", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(exit::OK), "{}", String::from_utf8_lossy(&o.stderr));
    let v = json(&o);
    assert_eq!(v["regime"]["verdict"], "thm11_exponential");
    assert!(v["rate_fit"]["lambda"].as_f64().unwrap() > 0.0);
    assert!(v["rate_fit"]["r_squared"].as_f64().unwrap() >= 0.99);
    let header = fs::read_to_string(out.join("diagnostics.csv")).unwrap();
    assert!(header.starts_with(
        "t,mass,mass_drift_rel,energy,entropy_p4,grad_w_sq,h1_dist,v_min,v_max,grad_v_sq\n"
    ));
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", DECAY_2D);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for d in [&a, &b] {
        let o = bin(&["evolve", "--config", &cfg, "--out", d.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0));
    }
    let mut files = vec!["summary.json", "manifest.json", "diagnostics.csv", "steady.csv", "steady.json"]
        .into_iter()
        .map(String::from)
        .collect::<Vec<_>>();
    for e in fs::read_dir(a.join("snapshots")).unwrap() {
        files.push(format!("snapshots/{}", e.unwrap().file_name().to_str().unwrap()));
    }
    assert!(files.len() > 10);
    for f in files {
        assert_eq!(fs::read(a.join(&f)).unwrap(), fs::read(b.join(&f)).unwrap(), "{f}");
    }
}

#[test]
fn enormous_first_step_never_crashes() {
    let dir = tempfile::tempdir().unwrap();
    let text = DECAY_2D.replace("dt0 = 1e-3", "dt0 = 1e12").replace("amplitude = 0.1", "amplitude = 5.0");
    let mut c = parse_config_str(&text, dir.path()).unwrap();
    c.run.output = dir.path().join("run");
    let s = run_experiment(&c);
    assert!(s.failure.is_none(), "{:?}", s.failure);
    assert!(s.termination.is_some());
    assert!(dir.path().join("run/summary.json").exists());
}

#[test]
fn failures_still_write_a_summary() {
    let dir = tempfile::tempdir().unwrap();
    let text = CONSTANT_STEADY.replace("constant = 0.5", "file = \"missing.csv\"");
    let mut c = parse_config_str(&text, dir.path()).unwrap();
    c.run.output = dir.path().join("run");
    let s = run_experiment(&c);
    assert!(s.failure.is_some());
    let written: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("run/summary.json")).unwrap()).unwrap();
    assert!(written["failure"].as_str().unwrap().contains("missing.csv"));
}

#[test]
fn sweep_verdicts_and_independence() {
    let dir = tempfile::tempdir().unwrap();
    let text = DECAY_2D
        .replace("k = 3", "k = [1.5, 2, 3, 4]")
        .replace("resolutions = [24, 24]", "resolutions = [12, 12]")
        .replace("t_end = 0.4", "t_end = 0.1");
    let mut c = parse_config_str(&text, dir.path()).unwrap();
    c.run.output = dir.path().join("serial");
    let serial = run_sweep(&c, 1).unwrap();
    let verdicts: Vec<&str> = serial.iter().map(|s| s.regime.as_ref().unwrap().verdict.as_str()).collect();
    assert_eq!(verdicts, ["open_region", "thm11_exponential", "thm11_exponential", "thm11_exponential"]);
    c.run.output = dir.path().join("parallel");
    run_sweep(&c, 4).unwrap();
    let a = fs::read(dir.path().join("serial/aggregate.csv")).unwrap();
    let b = fs::read(dir.path().join("parallel/aggregate.csv")).unwrap();
    assert_eq!(a, b);
    let text = String::from_utf8(a).unwrap();
    assert!(text.starts_with("k,r,s,verdict,lambda,r_squared,final_h1_dist,mass_drift\n"));
    assert_eq!(text.lines().count(), 5);
    assert!(dir.path().join("parallel/point_003/summary.json").exists());
}

#[test]
fn empty_sweep_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", "[model]\nk = []\n");
    let o = bin(&["sweep", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(exit::VALIDATION));
    assert!(String::from_utf8_lossy(&o.stderr).contains("empty"));
}

#[test]
fn invalid_config_lists_every_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", "[model]\nk = 0.5\ncolour = 1\n[run]\nt_end = 0\n");
    let o = bin(&["evolve", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(exit::VALIDATION));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("k must exceed 1"));
    assert!(err.contains("unknown key `model.colour`"));
    assert!(err.contains("T must be positive"));
}

#[test]
fn steady_command_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", CONSTANT_STEADY);
    let out = dir.path().join("ss");
    let o = bin(&["steady", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v = json(&o);
    assert!((v["c"].as_f64().unwrap() - 0.5).abs() < 1e-12);
    let csv = fs::read_to_string(out.join("steady.csv")).unwrap();
    assert!(csv.starts_with("cell_index,x,v_inf\n"));
    assert_eq!(csv.lines().count(), 33);
}

#[test]
fn classify_from_flags() {
    let o = bin(&["classify", "--dim", "3", "--k", "2", "--r", "3", "--s", "2", "--time-dependent"]);
    assert_eq!(o.status.code(), Some(0));
    let v = json(&o);
    assert_eq!(v["verdict"], "thm12_convergent");
    assert_eq!(v["s_cr"].as_f64(), Some(2.0));
    let o = bin(&["classify", "--dim", "2", "--k", "2"]);
    assert_eq!(json(&o)["verdict"], "thm11_exponential");
    assert_eq!(json(&o)["r"], "inf");
}

#[test]
fn classify_from_config_reports_energy() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", DECAY_2D);
    let o = bin(&["classify", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(0));
    let v = json(&o);
    assert!(v["initial_energy"].as_f64().is_some());
    assert!(v["notes"].as_array().unwrap().iter().any(|n| n.as_str().unwrap().contains("E(v0)")));
}

#[test]
fn fit_rate_reads_a_column() {
    let dir = tempfile::tempdir().unwrap();
    let mut text = String::from("t,h1_dist,other\n");
    for i in 0..20 {
        let t = i as f64 * 0.1;
        text.push_str(&format!("{t},{},NaN\n", 2.0 * (-3.0 * t).exp()));
    }
    let input = write(dir.path(), "d.csv", &text);
    let o = bin(&["fit-rate", "--input", &input]);
    assert_eq!(o.status.code(), Some(0));
    assert!((json(&o)["lambda"].as_f64().unwrap() - 3.0).abs() < 1e-10);
    let o = bin(&["fit-rate", "--input", &input, "--column", "missing"]);
    assert_eq!(o.status.code(), Some(exit::VALIDATION));
    let o = bin(&["fit-rate", "--input", &input, "--column", "other"]);
    assert_eq!(o.status.code(), Some(exit::RUN_FAILURE));
}

#[test]
fn verify_suites() {
    let o = bin(&["verify", "--suite", "criticality"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("[PASS]"));
    let o = bin(&["verify", "--suite", "conservation"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let o = bin(&["verify", "--suite", "nonexistent"]);
    assert_eq!(o.status.code(), Some(exit::VALIDATION));
    let err = String::from_utf8_lossy(&o.stderr);
    for s in ["conservation", "dissipation", "identities", "decay", "bounds", "criticality"] {
        assert!(err.contains(s), "{err}");
    }
}

#[test]
fn usage_errors_exit_with_validation_code() {
    assert_eq!(bin(&["evolve"]).status.code(), Some(exit::VALIDATION));
    assert_eq!(bin(&["bogus"]).status.code(), Some(exit::VALIDATION));
    assert_eq!(bin(&["--help"]).status.code(), Some(0));
}

#[test]
fn shipped_configs_parse() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for e in fs::read_dir(root).unwrap() {
        let p = e.unwrap().path();
        fastdiff_cli::parse_config(&p).unwrap_or_else(|err| panic!("{}: {err}", p.display()));
    }
}

#[test]
fn time_dependent_source_reports_variation_proxy() {
    let dir = tempfile::tempdir().unwrap();
    let text = "
[grid]
resolutions = 16
[model]
k = 2
s = 2
[source]
amplitude = 0.5
time_profile = \"exp_decay\"
decay_rate = 2.0
[run]
t_end = 0.2
dt0 = 1e-2
record_every = 0.1
";
    let c = parse_config_str(text, dir.path()).unwrap().at_point((2.0, f64::INFINITY, 2.0), dir.path().join("o"));
    let s = run_experiment(&c);
    assert!(s.succeeded(), "{:?}", s.failure);
    let notes = &s.regime.unwrap().notes;
    assert!(notes.iter().any(|n| n.contains("proxy for int ||f_t||_2")), "{notes:?}");
    let homog = parse_config_str(CONSTANT_STEADY, dir.path()).unwrap().at_point((3.0, f64::INFINITY, f64::INFINITY), dir.path().join("h"));
    assert!(!run_experiment(&homog).regime.unwrap().notes.iter().any(|n| n.contains("proxy")));
}
