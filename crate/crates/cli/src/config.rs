//! Experiment configuration: a TOML file with `[grid]`, `[model]`, `[source]`,
//! `[initial]` and `[run]` sections. Parsing collects every problem it finds
//! instead of stopping at the first.

use std::fmt;
use std::path::{Path, PathBuf};

use fastdiff::criticality::extended_float;
use fastdiff::evolution::Scheme;
use fastdiff::sources::{SourceProfile, TimeProfile};
use serde::Serialize;
use toml::{Table, Value};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridSpec {
    pub dimension: usize,
    pub extents: Vec<f64>,
    pub resolutions: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelSpec {
    pub k: Vec<f64>,
    #[serde(serialize_with = "ser_ext_list")]
    pub r: Vec<f64>,
    #[serde(serialize_with = "ser_ext_list")]
    pub s: Vec<f64>,
}

fn ser_ext_list<S: serde::Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
    #[derive(Serialize)]
    struct Ext(#[serde(with = "extended_float")] f64);
    s.collect_seq(v.iter().map(|&x| Ext(x)))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SourceSpec {
    Profile { profile: SourceProfile, time_profile: TimeProfile },
    /// Tabulated samples `t,cell_0,...`.
    File { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialSpec {
    Constant { value: f64 },
    /// Steady state of mass `base_mass` plus `amplitude * prod cos(mode pi x / L)`.
    SteadyPlusPerturbation { modes: Vec<u32>, amplitude: f64, base_mass: f64 },
    File { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSpec {
    pub scheme: Scheme,
    pub t_end: f64,
    pub dt0: f64,
    pub record_every: f64,
    pub entropy_p: Vec<f64>,
    pub fit_floor: f64,
    /// Not echoed into artifacts, so reruns elsewhere stay byte-identical.
    #[serde(skip)]
    pub output: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub grid: GridSpec,
    pub model: ModelSpec,
    pub source: SourceSpec,
    pub initial: InitialSpec,
    pub run: RunSpec,
}

impl ExperimentConfig {
    /// Number of sweep points (`|k| * |r| * |s|`).
    pub fn point_count(&self) -> usize {
        self.model.k.len() * self.model.r.len() * self.model.s.len()
    }

    pub fn is_sweep(&self) -> bool {
        self.point_count() > 1
    }

    /// Sweep points in `k`, `r`, `s` order (s fastest).
    pub fn points(&self) -> Vec<(f64, f64, f64)> {
        let mut out = Vec::new();
        for &k in &self.model.k {
            for &r in &self.model.r {
                for &s in &self.model.s {
                    out.push((k, r, s));
                }
            }
        }
        out
    }

    /// A single-point copy writing to `output`.
    pub fn at_point(&self, (k, r, s): (f64, f64, f64), output: PathBuf) -> Self {
        let mut c = self.clone();
        c.model = ModelSpec { k: vec![k], r: vec![r], s: vec![s] };
        c.run.output = output;
        c
    }
}

/// All validation errors found in a config file.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigErrors(pub Vec<String>);

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid configuration:")?;
        for e in &self.0 {
            write!(f, "\n  - {e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigErrors {}

pub fn parse_config(path: impl AsRef<Path>) -> Result<ExperimentConfig, ConfigErrors> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| ConfigErrors(vec![format!("{}: {e}", path.display())]))?;
    parse_config_str(&text, path.parent().unwrap_or(Path::new(".")))
}

/// Parses config text; relative file paths resolve against `base_dir`.
pub fn parse_config_str(text: &str, base_dir: &Path) -> Result<ExperimentConfig, ConfigErrors> {
    let table: Table = toml::from_str(text).map_err(|e| ConfigErrors(vec![format!("not valid TOML: {e}")]))?;
    let mut p = Parser { errors: Vec::new(), base_dir: base_dir.to_path_buf() };
    let config = p.config(&table);
    if p.errors.is_empty() {
        Ok(config)
    } else {
        Err(ConfigErrors(p.errors))
    }
}

const SECTIONS: [&str; 5] = ["grid", "model", "source", "initial", "run"];

struct Parser {
    errors: Vec<String>,
    base_dir: PathBuf,
}

/// One config section; absent sections read as empty.
struct Section<'a> {
    name: &'static str,
    table: Option<&'a Table>,
}

impl<'a> Section<'a> {
    fn get(&self, key: &str) -> Option<&'a Value> {
        self.table.and_then(|t| t.get(key))
    }

    fn has(&self, key: &str) -> bool {
        self.get(key).is_some()
    }
}

fn as_f64(v: &Value) -> Option<f64> {
    match v {
        Value::Float(x) => Some(*x),
        Value::Integer(i) => Some(*i as f64),
        Value::String(s) if matches!(s.as_str(), "inf" | "infinity" | "+inf") => Some(f64::INFINITY),
        _ => None,
    }
}

impl Parser {
    fn err(&mut self, msg: impl Into<String>) {
        self.errors.push(msg.into());
    }

    fn section<'a>(&mut self, root: &'a Table, name: &'static str, keys: &[&str]) -> Section<'a> {
        let table = match root.get(name) {
            None => None,
            Some(Value::Table(t)) => Some(t),
            Some(_) => {
                self.err(format!("`{name}` must be a table"));
                None
            }
        };
        if let Some(t) = table {
            for key in t.keys() {
                if !keys.contains(&key.as_str()) {
                    self.err(format!("unknown key `{name}.{key}`"));
                }
            }
        }
        Section { name, table }
    }

    fn f64_or(&mut self, s: &Section, key: &str, default: f64) -> f64 {
        match s.get(key) {
            None => default,
            Some(v) => as_f64(v).unwrap_or_else(|| {
                self.err(format!("`{}.{key}` must be a number", s.name));
                default
            }),
        }
    }

    fn usize_or(&mut self, s: &Section, key: &str, default: usize) -> usize {
        match s.get(key) {
            None => default,
            Some(Value::Integer(i)) if *i >= 0 => *i as usize,
            Some(_) => {
                self.err(format!("`{}.{key}` must be a nonnegative integer", s.name));
                default
            }
        }
    }

    fn str_or(&mut self, s: &Section, key: &str, default: &str) -> String {
        match s.get(key) {
            None => default.to_string(),
            Some(Value::String(v)) => v.clone(),
            Some(_) => {
                self.err(format!("`{}.{key}` must be a string", s.name));
                default.to_string()
            }
        }
    }

    /// A number or a list of numbers.
    fn f64_list(&mut self, s: &Section, key: &str, default: Vec<f64>) -> Vec<f64> {
        match s.get(key) {
            None => default,
            Some(Value::Array(items)) => {
                let vals: Vec<Option<f64>> = items.iter().map(as_f64).collect();
                if vals.iter().any(Option::is_none) {
                    self.err(format!("`{}.{key}` must contain only numbers", s.name));
                    return default;
                }
                vals.into_iter().flatten().collect()
            }
            Some(v) => match as_f64(v) {
                Some(x) => vec![x],
                None => {
                    self.err(format!("`{}.{key}` must be a number or a list of numbers", s.name));
                    default
                }
            },
        }
    }

    fn u32_list(&mut self, s: &Section, key: &str, default: Vec<u32>) -> Vec<u32> {
        match s.get(key) {
            None => default,
            Some(Value::Array(items)) => {
                let vals: Vec<Option<u32>> =
                    items.iter().map(|v| v.as_integer().and_then(|i| u32::try_from(i).ok())).collect();
                if vals.iter().any(Option::is_none) {
                    self.err(format!("`{}.{key}` must be a list of nonnegative integers", s.name));
                    return default;
                }
                vals.into_iter().flatten().collect()
            }
            Some(_) => {
                self.err(format!("`{}.{key}` must be a list of nonnegative integers", s.name));
                default
            }
        }
    }

    fn path(&self, raw: &str) -> PathBuf {
        let p = PathBuf::from(raw);
        if p.is_absolute() {
            p
        } else {
            self.base_dir.join(p)
        }
    }

    fn config(&mut self, root: &Table) -> ExperimentConfig {
        for key in root.keys() {
            if !SECTIONS.contains(&key.as_str()) {
                self.err(format!("unknown key `{key}`"));
            }
        }
        let grid = self.grid(root);
        let dim = grid.dimension;
        let model = self.model(root);
        let source = self.source(root, dim);
        let initial = self.initial(root, dim);
        let run = self.run(root);
        ExperimentConfig { grid, model, source, initial, run }
    }

    fn grid(&mut self, root: &Table) -> GridSpec {
        let s = self.section(root, "grid", &["dimension", "extents", "resolutions"]);
        let dimension = self.usize_or(&s, "dimension", 1);
        if !(1..=3).contains(&dimension) {
            self.err(format!("`grid.dimension` must be 1, 2 or 3, got {dimension}"));
        }
        let d = dimension.clamp(1, 3);
        let extents = self.f64_list(&s, "extents", vec![1.0; d]);
        let resolutions: Vec<usize> = match s.get("resolutions") {
            None => vec![64; d],
            Some(Value::Integer(i)) if *i > 0 => vec![*i as usize; d],
            Some(Value::Array(items)) if items.iter().all(|v| v.as_integer().is_some_and(|i| i > 0)) => {
                items.iter().map(|v| v.as_integer().unwrap() as usize).collect()
            }
            Some(_) => {
                self.err("`grid.resolutions` must be a positive integer or a list of them");
                vec![64; d]
            }
        };
        if extents.len() != d {
            self.err(format!("`grid.extents` needs {d} entries, got {}", extents.len()));
        }
        if resolutions.len() != d {
            self.err(format!("`grid.resolutions` needs {d} entries, got {}", resolutions.len()));
        }
        if extents.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
            self.err("`grid.extents` must be positive and finite");
        }
        GridSpec { dimension, extents, resolutions }
    }

    fn model(&mut self, root: &Table) -> ModelSpec {
        let s = self.section(root, "model", &["k", "r", "s"]);
        if !s.has("k") {
            self.err("`model.k` is required");
        }
        let k = self.f64_list(&s, "k", vec![2.0]);
        let r = self.f64_list(&s, "r", vec![f64::INFINITY]);
        let sv = self.f64_list(&s, "s", vec![f64::INFINITY]);
        for (name, list) in [("k", &k), ("r", &r), ("s", &sv)] {
            if list.is_empty() {
                self.err(format!("`model.{name}` sweep list is empty"));
            }
        }
        for &x in &k {
            if !(x > 1.0) || !x.is_finite() {
                self.err(format!("k must exceed 1 (got {x})"));
            }
        }
        for &x in &r {
            if !(x > 0.0) {
                self.err(format!("r must be positive (got {x})"));
            }
        }
        for &x in &sv {
            if !(x >= 1.0) {
                self.err(format!("s must be at least 1 (got {x})"));
            }
        }
        ModelSpec { k, r, s: sv }
    }

    fn source(&mut self, root: &Table, dim: usize) -> SourceSpec {
        let s = self.section(
            root,
            "source",
            &["profile", "amplitude", "modes", "center", "width", "time_profile", "decay_rate", "file"],
        );
        let default_profile = if s.has("file") { "file" } else { "cosine" };
        let profile = self.str_or(&s, "profile", default_profile);
        let amplitude = self.f64_or(&s, "amplitude", 1.0);
        let time = self.str_or(&s, "time_profile", "constant");
        let time_profile = match time.as_str() {
            "constant" => TimeProfile::Constant,
            "exp_decay" => {
                let rate = self.f64_or(&s, "decay_rate", 1.0);
                if !(rate >= 0.0 && rate.is_finite()) {
                    self.err(format!("`source.decay_rate` must be nonnegative and finite, got {rate}"));
                }
                TimeProfile::ExpDecay { rate }
            }
            other => {
                self.err(format!("`source.time_profile` must be \"constant\" or \"exp_decay\", got {other:?}"));
                TimeProfile::Constant
            }
        };
        if s.has("decay_rate") && time != "exp_decay" {
            self.err("`source.decay_rate` only applies with time_profile = \"exp_decay\"");
        }
        let mut default_modes = vec![0; dim];
        default_modes[0] = 1;
        let profile = match profile.as_str() {
            "zero" => SourceProfile::Zero,
            "cosine" => {
                let modes = self.u32_list(&s, "modes", default_modes);
                if modes.len() != dim {
                    self.err(format!("`source.modes` needs {dim} entries, got {}", modes.len()));
                }
                SourceProfile::Cosine { modes, amplitude }
            }
            "gaussian" => {
                let center = self.f64_list(&s, "center", vec![0.5; dim]);
                if center.len() != dim {
                    self.err(format!("`source.center` needs {dim} entries, got {}", center.len()));
                }
                let width = self.f64_or(&s, "width", 0.1);
                if !(width > 0.0) {
                    self.err(format!("`source.width` must be positive, got {width}"));
                }
                SourceProfile::Gaussian { center, width, amplitude }
            }
            "file" => {
                let Some(Value::String(raw)) = s.get("file") else {
                    self.err("`source.file` (a path) is required with profile = \"file\"");
                    return SourceSpec::File { path: PathBuf::new() };
                };
                if time != "constant" {
                    self.err("tabulated sources carry their own time dependence; drop `source.time_profile`");
                }
                return SourceSpec::File { path: self.path(raw) };
            }
            other => {
                self.err(format!("`source.profile` must be zero, cosine, gaussian or file, got {other:?}"));
                SourceProfile::Zero
            }
        };
        if s.has("file") {
            self.err("`source.file` requires profile = \"file\"");
        }
        SourceSpec::Profile { profile, time_profile }
    }

    fn initial(&mut self, root: &Table, dim: usize) -> InitialSpec {
        let s = self.section(
            root,
            "initial",
            &["constant", "perturbation_modes", "perturbation_amplitude", "base_mass", "file"],
        );
        let perturbed = s.has("perturbation_modes") || s.has("perturbation_amplitude") || s.has("base_mass");
        let count = [s.has("constant"), perturbed, s.has("file")].iter().filter(|&&b| b).count();
        if count > 1 {
            self.err("exactly one v0 spec is allowed: `constant`, perturbation keys, or `file`");
        }
        if s.has("file") {
            return match s.get("file") {
                Some(Value::String(raw)) => InitialSpec::File { path: self.path(raw) },
                _ => {
                    self.err("`initial.file` must be a path string");
                    InitialSpec::Constant { value: 1.0 }
                }
            };
        }
        if perturbed {
            let mut default_modes = vec![0; dim];
            default_modes[0] = 1;
            let modes = self.u32_list(&s, "perturbation_modes", default_modes);
            if modes.len() != dim {
                self.err(format!("`initial.perturbation_modes` needs {dim} entries, got {}", modes.len()));
            }
            let amplitude = self.f64_or(&s, "perturbation_amplitude", 0.01);
            let base_mass = self.f64_or(&s, "base_mass", 1.0);
            if !(base_mass > 0.0 && base_mass.is_finite()) {
                self.err(format!("`initial.base_mass` must be positive, got {base_mass}"));
            }
            return InitialSpec::SteadyPlusPerturbation { modes, amplitude, base_mass };
        }
        let value = self.f64_or(&s, "constant", 1.0);
        if !(value > 0.0 && value.is_finite()) {
            self.err(format!("`initial.constant` must be positive, got {value}"));
        }
        InitialSpec::Constant { value }
    }

    fn run(&mut self, root: &Table) -> RunSpec {
        let s = self.section(
            root,
            "run",
            &["scheme", "t_end", "dt0", "record_every", "entropy_p", "fit_floor", "output"],
        );
        let scheme = match self.str_or(&s, "scheme", "v_form").as_str() {
            "v_form" => Scheme::VForm,
            "u_form" => Scheme::UForm,
            other => {
                self.err(format!("`run.scheme` must be \"v_form\" or \"u_form\", got {other:?}"));
                Scheme::VForm
            }
        };
        let t_end = self.f64_or(&s, "t_end", 1.0);
        if !(t_end > 0.0 && t_end.is_finite()) {
            self.err(format!("T must be positive (run.t_end = {t_end})"));
        }
        let dt0 = self.f64_or(&s, "dt0", 1e-3);
        if !(dt0 > 0.0) {
            self.err(format!("`run.dt0` must be positive, got {dt0}"));
        }
        let record_every = self.f64_or(&s, "record_every", if t_end > 0.0 { t_end / 100.0 } else { 0.01 });
        if !(record_every > 0.0) {
            self.err(format!("`run.record_every` must be positive, got {record_every}"));
        }
        let entropy_p = self.f64_list(&s, "entropy_p", Vec::new());
        for &p in &entropy_p {
            if !(p > 0.0 && p.is_finite()) {
                self.err(format!("entropy exponents must be positive, got {p}"));
            }
        }
        let fit_floor = self.f64_or(&s, "fit_floor", fastdiff::diagnostics::DEFAULT_FLOOR_REL);
        if !(fit_floor > 0.0 && fit_floor < 1.0) {
            self.err(format!("`run.fit_floor` must lie in (0, 1), got {fit_floor}"));
        }
        let output = PathBuf::from(self.str_or(&s, "output", "fastdiff-out"));
        RunSpec { scheme, t_end, dt0, record_every, entropy_p, fit_floor, output }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ExperimentConfig, ConfigErrors> {
        parse_config_str(text, Path::new("/base"))
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let c = parse("[model]\nk = 2\n").unwrap();
        assert_eq!(c.grid, GridSpec { dimension: 1, extents: vec![1.0], resolutions: vec![64] });
        assert_eq!(c.model.k, vec![2.0]);
        assert_eq!(c.model.r, vec![f64::INFINITY]);
        assert_eq!(
            c.source,
            SourceSpec::Profile {
                profile: SourceProfile::Cosine { modes: vec![1], amplitude: 1.0 },
                time_profile: TimeProfile::Constant
            }
        );
        assert_eq!(c.initial, InitialSpec::Constant { value: 1.0 });
        assert_eq!(c.run.scheme, Scheme::VForm);
        assert_eq!(c.run.t_end, 1.0);
        assert_eq!(c.run.record_every, 0.01);
        assert!(!c.is_sweep());
    }

    #[test]
    fn small_k_is_rejected() {
        let e = parse("[model]\nk = 0.5\n").unwrap_err();
        assert!(e.0.iter().any(|m| m.contains("k must exceed 1")), "{e}");
    }

    #[test]
    fn two_initial_specs_are_rejected() {
        let e = parse("[model]\nk = 2\n[initial]\nconstant = 1.0\nfile = \"v0.csv\"\n").unwrap_err();
        assert!(e.0.iter().any(|m| m.contains("exactly one v0 spec")), "{e}");
    }

    #[test]
    fn all_errors_are_collected() {
        let e = parse("[model]\nk = 0.5\nbogus = 1\n[run]\nt_end = -1\n[extra]\n").unwrap_err();
        assert!(e.0.iter().any(|m| m.contains("k must exceed 1")));
        assert!(e.0.iter().any(|m| m.contains("unknown key `model.bogus`")));
        assert!(e.0.iter().any(|m| m.contains("T must be positive")));
        assert!(e.0.iter().any(|m| m.contains("unknown key `extra`")));
        assert_eq!(e.0.len(), 4, "{e}");
    }

    #[test]
    fn sweep_lists_and_inf() {
        let c = parse("[grid]\ndimension = 2\nresolutions = 16\n[model]\nk = [1.5, 2, 3, 4]\nr = \"inf\"\ns = [\"inf\", 2.0]\n")
            .unwrap();
        assert_eq!(c.point_count(), 8);
        assert_eq!(c.points()[1], (1.5, f64::INFINITY, 2.0));
        assert_eq!(c.grid.resolutions, vec![16, 16]);
        let json = serde_json::to_string(&c.model).unwrap();
        assert!(json.contains("\"r\":[\"inf\"]"));
        assert!(parse("[model]\nk = []\n").unwrap_err().0.iter().any(|m| m.contains("empty")));
    }

    #[test]
    fn relative_paths_resolve_against_config_dir() {
        let c = parse("[model]\nk = 2\n[initial]\nfile = \"data/v0.csv\"\n[source]\nfile = \"f.csv\"\n").unwrap();
        assert_eq!(c.initial, InitialSpec::File { path: PathBuf::from("/base/data/v0.csv") });
        assert_eq!(c.source, SourceSpec::File { path: PathBuf::from("/base/f.csv") });
    }

    #[test]
    fn dimension_mismatches_are_reported() {
        let e = parse("[grid]\ndimension = 2\nextents = [1.0]\n[model]\nk = 3\n[source]\nmodes = [1]\n").unwrap_err();
        assert!(e.0.iter().any(|m| m.contains("grid.extents")));
        assert!(e.0.iter().any(|m| m.contains("source.modes")));
    }
}
