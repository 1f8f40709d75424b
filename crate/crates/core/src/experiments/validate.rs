use std::f64::consts::{FRAC_PI_4, PI};

use num_complex::Complex64;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::fit::fit_rate;
use crate::corrector::{solve_w1, CorrectorConfig};
use crate::discretization::{build_grid, DtnBlock, DtnSpec};
use crate::error::{Error, Result};
use crate::geometry::{sample_realization, LayerSpec, ParticleConfiguration};
use crate::scattering::{effective_reflection, farfield_reflection, reference_solve, PlaneWave, ReferenceOptions, ScatteringScene};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

fn check(name: &str, outcome: Result<(bool, String)>) -> Check {
    match outcome {
        Ok((passed, detail)) => Check {
            name: name.into(),
            passed,
            detail,
        },
        Err(e) => Check {
            name: name.into(),
            passed: false,
            detail: format!("error: {e}"),
        },
    }
}

/// Reflection error of the empty Robin half-space at `dx = 2 pi / (n k)`.
pub fn robin_error(n: f64) -> Result<f64> {
    let wave = PlaneWave::new(1.0, FRAC_PI_4)?;
    let gamma = Complex64::new(1.0, 1.0);
    let dx = 2.0 * PI / n;
    // Half a wavelength in each direction at k = 1.
    let (period, top) = (PI, PI);
    let epsilon = 0.01;
    let layer = LayerSpec {
        width: period / epsilon,
        ..LayerSpec::default()
    };
    let scene = ScatteringScene {
        epsilon,
        h_interface: 7.0,
        layer,
        gamma,
        period,
        top,
        config: ParticleConfiguration::from_centers(vec![], layer)?,
    };
    let r = reference_solve(&scene, &wave, &ReferenceOptions::new(dx))?.reflection.value;
    let exact = (wave.k2() - wave.k * gamma) / (wave.k2() + wave.k * gamma);
    Ok((r - exact).norm())
}

/// `trace_mean(H + 2) - trace_mean(H) - 2` on one realization.
pub fn shift_defect(cfg: &CorrectorConfig, config: &ParticleConfiguration) -> Result<f64> {
    let a = solve_w1(cfg, config)?.trace_mean.re;
    let shifted = CorrectorConfig {
        h_interface: cfg.h_interface + 2.0,
        ..*cfg
    };
    let b = solve_w1(&shifted, config)?.trace_mean.re;
    Ok(b - a - 2.0)
}

/// Slope of `|r_farfield - r2|` over `epsilon in {0.1, 0.05, 0.025, 0.0125}`.
pub fn farfield_slope(wave: &PlaneWave, h: f64, c1: f64) -> Result<f64> {
    let pairs = [0.1, 0.05, 0.025, 0.0125]
        .iter()
        .map(|&e| {
            let r2 = effective_reflection(2, wave, e, h, c1)?.value;
            Ok((e, (farfield_reflection(wave, e, h, c1).value - r2).norm()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(fit_rate(&pairs)?.slope)
}

/// Runs the analytic oracle suite. Never fails as a whole: every problem is
/// reported as a failed check.
pub fn run_validate(cfg: &ExperimentConfig) -> ValidationReport {
    let mut checks = Vec::new();

    checks.push(check("robin_half_space", (|| {
        let (e64, e128) = (robin_error(64.0)?, robin_error(128.0)?);
        Ok((e64 <= 5e-3 && e64 / e128 >= 3.0, format!("error {e64:.3e} at 2pi/64, {e128:.3e} at 2pi/128")))
    })()));

    checks.push(check("shift_identity", (|| {
        let corrector = cfg.corrector(20.0);
        let mut worst: f64 = 0.0;
        for s in 0..10 {
            let config = sample_realization(&corrector.process, &corrector.layer, cfg.master_seed, s)?;
            worst = worst.max(shift_defect(&corrector, &config)?.abs());
        }
        Ok((worst <= 1e-8, format!("max |defect| {worst:.3e} over 10 realizations")))
    })()));

    checks.push(check("unimodularity", (|| {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.master_seed);
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let wave = PlaneWave::from_k2(0.01 + rng.random::<f64>(), 0.3)?;
            let r = effective_reflection(2, &wave, rng.random::<f64>(), 5.0 + 5.0 * rng.random::<f64>(), 10.0 * rng.random::<f64>())?;
            worst = worst.max((r.value.norm() - 1.0).abs());
        }
        Ok((worst <= 1e-12, format!("max ||r2| - 1| {worst:.3e}")))
    })()));

    checks.push(check("dtn_spectral_action", (|| {
        let (grid, _) = build_grid(10.0, 2.0, 0.1, &[])?;
        let mut worst: f64 = 0.0;
        for (spec, alpha) in [(DtnSpec::laplace(5, 1e-6), 0.0), (DtnSpec::helmholtz(5, 1.0, 0.5, 1e-6), 0.5)] {
            let block = DtnBlock::new(&spec, &grid, alpha, 1.0)?;
            for m in 0..3i64 {
                let xi = spec.wavenumber(m, grid.width);
                let mode: Vec<Complex64> = (0..grid.nx).map(|i| Complex64::from_polar(1.0, xi * grid.x(i))).collect();
                let out = block.apply(&mode);
                let lam = spec.symbol(m, grid.width);
                for (o, v) in out.iter().zip(&mode) {
                    worst = worst.max((o - lam * v).norm());
                }
            }
        }
        Ok((worst <= 1e-10, format!("max deviation {worst:.3e}")))
    })()));

    checks.push(check("empty_layer_singularity", (|| {
        let corrector = cfg.corrector(20.0);
        let empty = ParticleConfiguration::from_centers(vec![], corrector.layer)?;
        Ok(match solve_w1(&corrector, &empty) {
            Err(Error::SingularSystem(msg)) => (true, msg),
            Err(e) => (false, format!("unexpected error {e}")),
            Ok(_) => (false, "returned a field".into()),
        })
    })()));

    checks.push(check("farfield_order", (|| {
        let wave = cfg.wave()?;
        let h = cfg.corrector(cfg.geometry.width).h_interface;
        let a = farfield_slope(&wave, h, 2.0)?;
        let b = farfield_slope(&wave, h, 2.1)?;
        Ok(((a - 2.0).abs() <= 0.1 && (b - 2.0).abs() <= 0.1, format!("slopes {a:.4} (c1 = 2), {b:.4} (c1 = 2.1)")))
    })()));

    ValidationReport { checks }
}
