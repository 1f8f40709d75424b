//! Plane-wave scattering by the scaled particle layer and reflection coefficients.
//!
//! The total field `u` solves `-Lap u - k^2 u = 0` above the bottom line,
//! with `-du/dy + i k gamma u = 0` at `y = 0`, `u = 0` on the particles,
//! `k1`-quasi-periodicity over the period `T`, and an outgoing closure for
//! `u - u_inc` at `y = L`. The incident wave is `exp(i (k1 x + k2 y))`; the
//! reflected mode is `r exp(i (k1 x - k2 y))`.

use std::fmt::Write as _;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::discretization::{
    assemble, build_grid, choose_n_modes, classify_nodes, BottomCondition, DiscreteSystem, DtnKind,
    DtnSpec, Grid, ProblemKind, Sources,
};
use crate::error::{Error, Result};
use crate::geometry::{LayerSpec, ParticleConfiguration};
use crate::solver::{solve, SolveOptions, SolveReport};

/// Smallest number of grid nodes across a scaled particle diameter.
pub const MIN_NODES_PER_DIAMETER: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlaneWave {
    pub k: f64,
    /// Incidence angle from the normal, in `(-pi/2, pi/2)`.
    pub theta: f64,
}

impl PlaneWave {
    pub fn new(k: f64, theta: f64) -> Result<Self> {
        let w = Self { k, theta };
        w.validate()?;
        Ok(w)
    }

    /// Wave with normal wavenumber `k2` at angle `theta`.
    pub fn from_k2(k2: f64, theta: f64) -> Result<Self> {
        Self::new(k2 / theta.cos(), theta)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.k.is_finite() && self.k > 0.0) {
            return Err(Error::InvalidArgument(format!("k = {} must be positive", self.k)));
        }
        if !(self.theta.abs() < std::f64::consts::FRAC_PI_2) {
            return Err(Error::InvalidArgument(format!("theta = {} outside (-pi/2, pi/2)", self.theta)));
        }
        Ok(())
    }

    pub fn k1(&self) -> f64 {
        self.k * self.theta.sin()
    }

    pub fn k2(&self) -> f64 {
        self.k * self.theta.cos()
    }

    pub fn incident(&self, x: f64, y: f64) -> Complex64 {
        Complex64::from_polar(1.0, self.k1() * x + self.k2() * y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatteringScene {
    pub epsilon: f64,
    /// Normalized impedance-plane height: the effective models live on `y = epsilon H`.
    pub h_interface: f64,
    /// Normalized layer; its width times `epsilon` is the period.
    pub layer: LayerSpec,
    pub gamma: Complex64,
    pub period: f64,
    /// Height of the closure line.
    pub top: f64,
    /// Normalized particles, scaled by `epsilon` at solve time.
    pub config: ParticleConfiguration,
}

impl ScatteringScene {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::InvalidArgument(format!("epsilon = {} must be positive", self.epsilon)));
        }
        if !(self.gamma.re > 0.0) {
            return Err(Error::InvalidArgument(format!("Re gamma = {} must be positive", self.gamma.re)));
        }
        if (self.layer.width * self.epsilon - self.period).abs() > 1e-9 * self.period {
            return Err(Error::InvalidExtent(format!(
                "epsilon * layer width = {} differs from period {}",
                self.layer.width * self.epsilon,
                self.period
            )));
        }
        let (eh, e_h) = (self.epsilon * self.layer.h, self.epsilon * self.h_interface);
        if !(eh < e_h && e_h < self.top) {
            return Err(Error::InvalidExtent(format!(
                "need epsilon h < epsilon H < L, got {eh} < {e_h} < {}",
                self.top
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReflectionKind {
    Reference,
    Order1,
    Order2,
    FarfieldSum,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReflectionCoefficient {
    pub value: Complex64,
    pub kind: ReflectionKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceOptions {
    pub target_dx: f64,
    pub dtn_eta: f64,
    pub solver: SolveOptions,
}

impl ReferenceOptions {
    pub fn new(target_dx: f64) -> Self {
        Self {
            target_dx,
            dtn_eta: 1e-6,
            solver: SolveOptions::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ReferenceSolution {
    pub grid: Grid,
    pub field: Vec<Complex64>,
    pub reflection: ReflectionCoefficient,
    pub report: SolveReport,
}

/// Assembles the reference problem without solving it.
pub fn assemble_reference(scene: &ScatteringScene, wave: &PlaneWave, opts: &ReferenceOptions) -> Result<DiscreteSystem> {
    scene.validate()?;
    wave.validate()?;
    if !scene.config.is_empty() {
        let per_diameter = 2.0 * scene.epsilon / opts.target_dx;
        if per_diameter < MIN_NODES_PER_DIAMETER {
            return Err(Error::ResolutionTooCoarse(format!(
                "{per_diameter:.2} nodes per particle diameter, need {MIN_NODES_PER_DIAMETER}"
            )));
        }
    }
    let (grid, _) = build_grid(scene.period, scene.top, opts.target_dx, &[])?;
    let tags = classify_nodes(&grid, &scene.config, scene.epsilon)?;
    let (k, k1, k2) = (wave.k, wave.k1(), wave.k2());
    let gap = scene.top - scene.epsilon * scene.layer.h;
    let n_modes = choose_n_modes(DtnKind::HelmholtzQuasiperiodic, k, k1, scene.period, gap, opts.dtn_eta)?;
    let forcing = (0..grid.nx)
        .map(|i| Complex64::new(0.0, 2.0 * k2) * wave.incident(grid.x(i), scene.top))
        .collect();
    assemble(
        &grid,
        &tags,
        ProblemKind::Helmholtz { k },
        BottomCondition::Robin { k, gamma: scene.gamma },
        &DtnSpec::helmholtz(n_modes, k, k1, opts.dtn_eta),
        k1,
        &Sources {
            top_forcing: Some(forcing),
            ..Sources::default()
        },
    )
}

/// Solves an assembled reference system and extracts its reflection coefficient.
pub fn solve_reference_system(sys: &DiscreteSystem, wave: &PlaneWave, solver: &SolveOptions) -> Result<ReferenceSolution> {
    let (field, report) = solve(sys, solver)?;
    let g = sys.grid;
    let start = g.index(0, g.ny - 1);
    let reflection = extract_reflection(&field[start..start + g.nx], wave, g.top, g.width)?;
    Ok(ReferenceSolution {
        grid: g,
        field,
        reflection,
        report,
    })
}

pub fn reference_solve(scene: &ScatteringScene, wave: &PlaneWave, opts: &ReferenceOptions) -> Result<ReferenceSolution> {
    let sys = assemble_reference(scene, wave, opts)?;
    solve_reference_system(&sys, wave, &opts.solver)
}

/// Specular mode of `trace - u_inc` on the line `y = top`, nodes at
/// `-period/2 + i period / n`:
/// `r = exp(i k2 top) / period * sum (u - u_inc)(x_i) exp(-i k1 x_i) dx`.
pub fn extract_reflection(trace: &[Complex64], wave: &PlaneWave, top: f64, period: f64) -> Result<ReflectionCoefficient> {
    if trace.is_empty() {
        return Err(Error::ShapeMismatch { expected: 1, got: 0 });
    }
    let n = trace.len();
    let dx = period / n as f64;
    let k1 = wave.k1();
    let sum: Complex64 = trace
        .iter()
        .enumerate()
        .map(|(i, u)| {
            let x = -0.5 * period + i as f64 * dx;
            (u - wave.incident(x, top)) * Complex64::from_polar(1.0, -k1 * x)
        })
        .sum();
    Ok(ReflectionCoefficient {
        value: Complex64::from_polar(1.0, wave.k2() * top) * sum * dx / period,
        kind: ReflectionKind::Reference,
    })
}

/// Effective-model reflection coefficients.
///
/// Order 1 puts a Dirichlet plane at `epsilon H`; order 2 imposes
/// `-epsilon c1 du/dy + u = 0` there.
pub fn effective_reflection(order: u8, wave: &PlaneWave, epsilon: f64, h: f64, c1: f64) -> Result<ReflectionCoefficient> {
    let k2 = wave.k2();
    let phase = Complex64::from_polar(1.0, 2.0 * k2 * epsilon * h);
    match order {
        1 => Ok(ReflectionCoefficient {
            value: -phase,
            kind: ReflectionKind::Order1,
        }),
        2 => {
            let z = Complex64::new(0.0, k2 * epsilon * c1);
            Ok(ReflectionCoefficient {
                value: (z - 1.0) / (z + 1.0) * phase,
                kind: ReflectionKind::Order2,
            })
        }
        _ => Err(Error::InvalidArgument(format!("order {order} is not 1 or 2"))),
    }
}

/// Reflection of the first two far-field terms `u0 + epsilon u1`.
pub fn farfield_reflection(wave: &PlaneWave, epsilon: f64, h: f64, c1: f64) -> ReflectionCoefficient {
    let k2 = wave.k2();
    let phase = Complex64::from_polar(1.0, 2.0 * k2 * epsilon * h);
    ReflectionCoefficient {
        value: -phase + Complex64::new(0.0, 2.0 * k2 * epsilon * c1) * phase,
        kind: ReflectionKind::FarfieldSum,
    }
}

/// `x,y,re,im` rows, one per node.
pub fn field_csv(grid: &Grid, field: &[Complex64]) -> String {
    let mut out = String::from("x,y,re,im\n");
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let v = field[grid.index(i, j)];
            let _ = writeln!(out, "{},{},{},{}", grid.x(i), grid.y(j), v.re, v.im);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{sample_matern, PointProcessParams};
    use std::f64::consts::{FRAC_PI_4, PI};

    fn empty_scene(gamma: Complex64, period: f64, top: f64) -> ScatteringScene {
        let layer = LayerSpec {
            width: period / 0.01,
            ..LayerSpec::default()
        };
        ScatteringScene {
            epsilon: 0.01,
            h_interface: 7.0,
            layer,
            gamma,
            period,
            top,
            config: ParticleConfiguration::from_centers(vec![], layer).unwrap(),
        }
    }

    fn robin(wave: &PlaneWave, gamma: Complex64) -> Complex64 {
        (wave.k2() - wave.k * gamma) / (wave.k2() + wave.k * gamma)
    }

    #[test]
    fn extraction_identities() {
        let wave = PlaneWave::new(1.0, FRAC_PI_4).unwrap();
        let (period, top, n) = (7.3, 2.0, 50);
        let xs: Vec<f64> = (0..n).map(|i| -0.5 * period + i as f64 * period / n as f64).collect();
        let inc: Vec<_> = xs.iter().map(|&x| wave.incident(x, top)).collect();
        assert!(extract_reflection(&inc, &wave, top, period).unwrap().value.norm() < 1e-14);

        let r0 = Complex64::new(0.3, 0.4);
        let total: Vec<_> = xs
            .iter()
            .map(|&x| wave.incident(x, top) + r0 * Complex64::from_polar(1.0, wave.k1() * x - wave.k2() * top))
            .collect();
        let r = extract_reflection(&total, &wave, top, period).unwrap().value;
        assert!((r - r0).norm() < 1e-12);

        let extra: Vec<_> = xs
            .iter()
            .zip(&total)
            .map(|(&x, u)| u + Complex64::from_polar(0.7, (wave.k1() + 2.0 * PI / period) * x))
            .collect();
        let r = extract_reflection(&extra, &wave, top, period).unwrap().value;
        assert!((r - r0).norm() < 1e-12);
        assert!(extract_reflection(&[], &wave, top, period).is_err());
    }

    #[test]
    fn robin_half_space_converges_at_second_order() {
        let wave = PlaneWave::new(1.0, FRAC_PI_4).unwrap();
        let gamma = Complex64::new(1.0, 1.0);
        let exact = robin(&wave, gamma);
        let errs: Vec<f64> = [64.0, 128.0]
            .iter()
            .map(|n| {
                let scene = empty_scene(gamma, PI, PI);
                let sol = reference_solve(&scene, &wave, &ReferenceOptions::new(2.0 * PI / n)).unwrap();
                (sol.reflection.value - exact).norm()
            })
            .collect();
        assert!(errs[0] < 5e-3, "{errs:?}");
        assert!(errs[0] / errs[1] >= 3.0, "{errs:?}");
    }

    #[test]
    fn large_impedance_approaches_dirichlet() {
        let wave = PlaneWave::new(1.0, FRAC_PI_4).unwrap();
        let dx = 2.0 * PI / 256.0;
        let scene = empty_scene(Complex64::new(1e6, 0.0), 64.0 * dx, 8.0 * dx);
        let r = reference_solve(&scene, &wave, &ReferenceOptions::new(dx)).unwrap().reflection.value;
        assert!((r + 1.0).norm() < 1e-4, "{r}");
    }

    fn particle_scene(epsilon: f64, seed: u64) -> ScatteringScene {
        let period = 20.0;
        let layer = LayerSpec {
            width: period / epsilon,
            ..LayerSpec::default()
        };
        let config = sample_matern(&PointProcessParams::matern(0.4), &layer, seed).unwrap();
        ScatteringScene {
            epsilon,
            h_interface: 7.0,
            layer,
            gamma: Complex64::new(1.0, 1.0),
            period,
            top: epsilon * 10.0,
            config,
        }
    }

    #[test]
    fn particles_keep_the_reflection_passive_and_translation_invariant() {
        let wave = PlaneWave::from_k2(0.5, FRAC_PI_4).unwrap();
        let scene = particle_scene(0.5, 1);
        let opts = ReferenceOptions::new(0.2 * scene.epsilon);
        let base = reference_solve(&scene, &wave, &opts).unwrap();
        assert!(base.reflection.value.norm() <= 1.0 + 1e-6);

        let cell = base.grid.dx / scene.epsilon;
        for shift in [scene.layer.width, 3.0 * cell] {
            let moved = ScatteringScene {
                config: scene.config.translated(shift),
                ..scene.clone()
            };
            let r = reference_solve(&moved, &wave, &opts).unwrap().reflection.value;
            assert!((r - base.reflection.value).norm() < 1e-9, "{shift}: {r} vs {}", base.reflection.value);
        }
    }

    #[test]
    fn flipped_closure_sign_breaks_passivity() {
        let wave = PlaneWave::new(1.0, FRAC_PI_4).unwrap();
        let scene = empty_scene(Complex64::new(1.0, 1.0), PI, PI);
        let opts = ReferenceOptions::new(2.0 * PI / 64.0);
        let mut sys = assemble_reference(&scene, &wave, &opts).unwrap();
        let good = solve_reference_system(&sys, &wave, &opts.solver).unwrap();
        assert!(good.reflection.value.norm() <= 1.0 + 1e-6);
        sys.dtn_block = sys.dtn_block.negated();
        let bad = solve_reference_system(&sys, &wave, &opts.solver).unwrap();
        assert!(bad.reflection.value.norm() > 1.0 + 1e-6, "{}", bad.reflection.value);
    }

    #[test]
    fn coarse_grids_are_rejected() {
        let wave = PlaneWave::from_k2(0.5, FRAC_PI_4).unwrap();
        let scene = particle_scene(0.5, 1);
        let err = reference_solve(&scene, &wave, &ReferenceOptions::new(0.2));
        assert!(matches!(err, Err(Error::ResolutionTooCoarse(_))));
    }

    #[test]
    fn effective_formula_identities() {
        let wave = PlaneWave::new(1.3, 0.4).unwrap();
        let r1 = effective_reflection(1, &wave, 0.1, 7.0, 2.0).unwrap().value;
        let r2_zero = effective_reflection(2, &wave, 0.1, 7.0, 0.0).unwrap().value;
        assert!((r1 - r2_zero).norm() < 1e-15);
        let r2_eps0 = effective_reflection(2, &wave, 0.0, 7.0, 2.0).unwrap().value;
        assert!((r2_eps0 + 1.0).norm() < 1e-15);
        assert!((effective_reflection(2, &wave, 0.07, 7.0, 3.3).unwrap().value.norm() - 1.0).abs() < 1e-12);
        assert!((farfield_reflection(&wave, 0.0, 7.0, 2.0).value + 1.0).norm() < 1e-15);
        assert!((farfield_reflection(&wave, 0.1, 7.0, 0.0).value - r1).norm() < 1e-15);
        assert!(effective_reflection(3, &wave, 0.1, 7.0, 2.0).is_err());
    }

    #[test]
    fn scene_rejects_active_impedance_and_bad_heights() {
        let mut scene = empty_scene(Complex64::new(-1.0, 0.0), PI, PI);
        assert!(scene.validate().is_err());
        scene.gamma = Complex64::new(1.0, 0.0);
        scene.top = 0.01;
        assert!(scene.validate().is_err());
    }

    #[test]
    fn field_csv_has_one_row_per_node() {
        let wave = PlaneWave::new(1.0, FRAC_PI_4).unwrap();
        let scene = empty_scene(Complex64::new(1.0, 1.0), PI, PI);
        let sol = reference_solve(&scene, &wave, &ReferenceOptions::new(2.0 * PI / 32.0)).unwrap();
        let csv = field_csv(&sol.grid, &sol.field);
        assert!(csv.starts_with("x,y,re,im\n"));
        assert_eq!(csv.lines().count(), 1 + sol.grid.n_nodes());
    }
}
