//! Numerical laboratory for the singular diffusion equation
//! `v_t = v^k (Δv - f)` with homogeneous Neumann data on boxes in 1 to 3
//! dimensions.
//!
//! The crate covers grids and discrete operators, zero-mean sources, the
//! mass-calibrated steady state, time integration in both the `v` and the
//! porous-medium `u = v^{1-k}` form, diagnostics, and closed-form critical
//! exponents.

pub mod criticality;
pub mod diagnostics;
pub mod error;
pub mod evolution;
pub mod grid;
pub mod io;
pub mod solver;
pub mod sources;
pub mod steady;
pub mod verification;

pub use criticality::{classify_regime, k_critical, s_critical, RegimeQuery, RegimeReport, Verdict};
pub use diagnostics::{fit_decay_rate, DiagnosticsRecord, RateFit, RecordSpec};
pub use error::{Error, Result};
pub use evolution::{evolve, EvolveOptions, Problem, Scheme, Termination, Trajectory};
pub use grid::{Field, Grid};
pub use sources::{SourceProfile, SourceTerm, TimeProfile};
pub use steady::{build_steady_state, SteadyState, SteadySummary};
pub use verification::{run_suite, CheckOutcome, SUITES};
