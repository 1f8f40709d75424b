//! Effective boundary conditions for waves over randomly rough layers.
//!
//! A thin layer of randomly placed hard particles sits on a Robin boundary.
//! The crate samples the particle process, solves the near-field corrector
//! problems that yield the effective coefficient `c1`, solves the full
//! scattering problem on a truncated period, and compares reflection
//! coefficients against the first and second order effective models.

pub mod corrector;
pub mod discretization;
pub mod error;
pub mod experiments;
pub mod geometry;
pub mod rng;
pub mod scattering;
pub mod solver;

pub use corrector::{estimate_c1, solve_w1, solve_w2, C1Estimate, CorrectorConfig, CorrectorSolution};
pub use error::{Error, Result};
pub use experiments::{fit_rate, ExperimentConfig, RateFit, Scenario, SweepReport};
pub use geometry::{sample_realization, LayerSpec, ParticleConfiguration, Point, PointProcessParams, ProcessKind};
pub use scattering::{effective_reflection, reference_solve, PlaneWave, ReflectionCoefficient, ScatteringScene};
pub use solver::{solve, SolveOptions, SolveReport};
