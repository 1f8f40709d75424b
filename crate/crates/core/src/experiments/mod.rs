//! End-to-end studies: configuration, `c1` estimation, epsilon sweeps,
//! rate fits and the analytic validation suite.

pub mod config;
pub mod fit;
pub mod study;
pub mod validate;

pub use config::{ExperimentConfig, Scenario};
pub use fit::{fit_rate, RateFit};
pub use study::{
    obtain_c1, report, run_c1_study, run_corrector_profile, run_reference, run_sample, run_sweep, with_threads,
    C1StudyReport, ProfileReport, SweepReport, SweepRow,
};
pub use validate::{run_validate, Check, ValidationReport};
