//! Near-field corrector cell problems.
//!
//! `W1` is harmonic around the particles, vanishes on them, has homogeneous
//! Neumann data at the bottom and a unit flux jump across the line `y = H`.
//! Its far-field constant `c1` is estimated from the lateral average of its
//! trace on the closure line. `W2` carries the bottom data `-i k gamma V1`.

use std::fmt::Write as _;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::discretization::{
    assemble, build_grid, choose_n_modes, classify_nodes, BottomCondition, DtnKind, DtnSpec, Grid,
    NodeClass, ProblemKind, Sources,
};
use crate::error::{Error, Result};
use crate::geometry::{sample_realization, LayerSpec, ParticleConfiguration, PointProcessParams};
use crate::solver::{solve, SolveOptions, SolveReport};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrectorConfig {
    pub layer: LayerSpec,
    /// Height of the jump line `H`.
    pub h_interface: f64,
    /// Top of the computational cell, where the closure sits.
    pub l_cell: f64,
    pub process: PointProcessParams,
    pub target_dx: f64,
    pub dtn_eta: f64,
    /// Only used by `W2`.
    pub gamma: Complex64,
    /// Only used by `W2`.
    pub k: f64,
    pub solver: SolveOptions,
}

fn snap_to(v: f64, step: f64) -> f64 {
    (v / step).round() * step
}

impl CorrectorConfig {
    /// Defaults: `H = h + 2`, `L_cell = H + width / 4`, both rounded to
    /// multiples of `target_dx = 0.2` so they fall on grid lines.
    pub fn new(layer: LayerSpec, process: PointProcessParams) -> Self {
        let target_dx = 0.2;
        let h_interface = snap_to(layer.h + 2.0, target_dx);
        Self {
            layer,
            h_interface,
            l_cell: snap_to(h_interface + layer.width / 4.0, target_dx),
            process,
            target_dx,
            dtn_eta: 1e-8,
            gamma: Complex64::new(1.0, 1.0),
            k: 1.0,
            solver: SolveOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.layer.validate()?;
        self.process.validate()?;
        if !(self.layer.h < self.h_interface && self.h_interface < self.l_cell) {
            return Err(Error::InvalidArgument(format!(
                "need h < H < L_cell, got {} < {} < {}",
                self.layer.h, self.h_interface, self.l_cell
            )));
        }
        if !(self.target_dx > 0.0 && self.target_dx <= 0.2 + 1e-12) {
            return Err(Error::InvalidArgument(format!(
                "target_dx = {} must lie in (0, 0.2]",
                self.target_dx
            )));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<(Grid, f64)> {
        let (grid, snaps) = build_grid(self.layer.width, self.l_cell, self.target_dx, &[self.h_interface])?;
        Ok((grid, snaps[0].snapped))
    }

    fn dtn(&self) -> Result<DtnSpec> {
        let n = choose_n_modes(
            DtnKind::LaplacePeriodic,
            0.0,
            0.0,
            self.layer.width,
            self.l_cell - self.layer.h,
            self.dtn_eta,
        )?;
        Ok(DtnSpec::laplace(n, self.dtn_eta))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CorrectorKind {
    W1,
    W2,
}

/// Discrete flux bookkeeping: `injected + bottom_inflow = absorbed + top_outflow`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FluxReport {
    /// Through the jump line.
    pub injected: Complex64,
    pub bottom_inflow: Complex64,
    /// Into the particles.
    pub absorbed: Complex64,
    /// Through the closure line.
    pub top_outflow: Complex64,
    pub relative_imbalance: f64,
}

#[derive(Debug, Clone)]
pub struct CorrectorSolution {
    pub kind: CorrectorKind,
    pub grid: Grid,
    pub tags: Vec<NodeClass>,
    /// Snapped jump height.
    pub h_interface: f64,
    pub field: Vec<Complex64>,
    pub trace_l: Vec<Complex64>,
    pub trace_mean: Complex64,
    pub flux: FluxReport,
    pub report: SolveReport,
}

impl CorrectorSolution {
    /// Values on grid line `j`.
    pub fn line(&self, j: usize) -> &[Complex64] {
        let start = self.grid.index(0, j);
        &self.field[start..start + self.grid.nx]
    }
}

fn solve_cell(
    cfg: &CorrectorConfig,
    config: &ParticleConfiguration,
    kind: CorrectorKind,
    bottom_flux: Option<Vec<Complex64>>,
) -> Result<CorrectorSolution> {
    cfg.validate()?;
    if (config.layer.width - cfg.layer.width).abs() > 1e-9 * cfg.layer.width {
        return Err(Error::InvalidExtent(format!(
            "configuration width {} differs from cell width {}",
            config.layer.width, cfg.layer.width
        )));
    }
    let (grid, h_snapped) = cfg.grid()?;
    let tags = classify_nodes(&grid, config, 1.0)?;
    if let Some(b) = &bottom_flux {
        if b.len() != grid.nx {
            return Err(Error::ShapeMismatch {
                expected: grid.nx,
                got: b.len(),
            });
        }
    }
    let jump = match kind {
        CorrectorKind::W1 => Some((h_snapped, 1.0)),
        CorrectorKind::W2 => None,
    };
    let has_sink = tags.contains(&NodeClass::ParticleDirichlet);
    if !has_sink && (jump.is_some() || bottom_flux.as_ref().is_some_and(|b| b.iter().any(|v| v.norm() > 0.0))) {
        return Err(Error::SingularSystem(
            "no particle nodes: constants are in the kernel and the injected flux has no sink".into(),
        ));
    }
    let sources = Sources {
        interface_jump: jump,
        bottom_flux,
        ..Sources::default()
    };
    let sys = assemble(
        &grid,
        &tags,
        ProblemKind::Laplace,
        BottomCondition::Neumann,
        &cfg.dtn()?,
        0.0,
        &sources,
    )?;
    let (field, report) = solve(&sys, &cfg.solver)?;

    let top = grid.ny - 1;
    let trace_l = field[grid.index(0, top)..grid.index(0, top) + grid.nx].to_vec();
    let trace_mean = trace_l.iter().sum::<Complex64>() / grid.nx as f64;

    // Flux balance from the discrete operator.
    let cell = grid.dx * grid.dy;
    let cx = 1.0 / (grid.dx * grid.dx);
    let cy = 1.0 / (grid.dy * grid.dy);
    let mut absorbed = Complex64::new(0.0, 0.0);
    for j in 0..grid.ny {
        let s = if j == 0 || j == top { 0.5 } else { 1.0 };
        for i in 0..grid.nx {
            let node = grid.index(i, j);
            if tags[node] == NodeClass::ParticleDirichlet {
                continue;
            }
            let mut coupling = 0.0;
            for di in [grid.nx - 1, 1] {
                if tags[grid.index((i + di) % grid.nx, j)] == NodeClass::ParticleDirichlet {
                    coupling += s * cx;
                }
            }
            if j > 0 && tags[grid.index(i, j - 1)] == NodeClass::ParticleDirichlet {
                coupling += cy;
            }
            if j < top && tags[grid.index(i, j + 1)] == NodeClass::ParticleDirichlet {
                coupling += cy;
            }
            absorbed += coupling * field[node] * cell;
        }
    }
    let top_outflow = sys.dtn_block.apply(&trace_l).iter().sum::<Complex64>() * cell;
    let injected = Complex64::new(jump.map_or(0.0, |(_, v)| v * grid.width), 0.0);
    let bottom_inflow = sources
        .bottom_flux
        .as_ref()
        .map_or(Complex64::new(0.0, 0.0), |b| b.iter().sum::<Complex64>() * grid.dx);
    let scale = injected.norm().max(bottom_inflow.norm()).max(absorbed.norm()).max(f64::MIN_POSITIVE);
    let flux = FluxReport {
        injected,
        bottom_inflow,
        absorbed,
        top_outflow,
        relative_imbalance: (injected + bottom_inflow - absorbed - top_outflow).norm() / scale,
    };

    Ok(CorrectorSolution {
        kind,
        grid,
        tags,
        h_interface: h_snapped,
        field,
        trace_l,
        trace_mean,
        flux,
        report,
    })
}

/// Solves the real corrector `W1` on one realization.
pub fn solve_w1(cfg: &CorrectorConfig, config: &ParticleConfiguration) -> Result<CorrectorSolution> {
    solve_cell(cfg, config, CorrectorKind::W1, None)
}

/// Solves `W2` given the bottom trace of `V1` on the same realization and grid.
pub fn solve_w2(
    cfg: &CorrectorConfig,
    config: &ParticleConfiguration,
    v1_bottom: &[Complex64],
) -> Result<CorrectorSolution> {
    let data: Vec<Complex64> = v1_bottom
        .iter()
        .map(|v| -Complex64::i() * cfg.k * cfg.gamma * v)
        .collect();
    solve_cell(cfg, config, CorrectorKind::W2, Some(data))
}

/// `V1 = W1 - c1` strictly above the jump line, `W1` elsewhere.
pub fn v1_field(w1: &CorrectorSolution, c1: f64) -> Vec<Complex64> {
    let tol = 1e-9 * w1.grid.dy;
    w1.field
        .iter()
        .enumerate()
        .map(|(n, v)| {
            if w1.grid.y(n / w1.grid.nx) > w1.h_interface + tol {
                v - c1
            } else {
                *v
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct C1Estimate {
    pub mean: f64,
    pub std_err: f64,
    /// Realizations that entered the mean.
    pub n_samples: usize,
    pub n_failed: usize,
    pub cell_width: f64,
    pub ci95: (f64, f64),
    /// Jump height the estimate refers to (raised if the raw mean was not positive).
    pub h_interface: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct C1HistoryRow {
    pub sample_index: u64,
    pub value: f64,
    pub running_mean: f64,
    /// Undefined for the first sample.
    pub running_stderr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct C1Study {
    pub estimate: C1Estimate,
    pub history: Vec<C1HistoryRow>,
}

/// Per-realization `c1` samples for indices `0..n_samples`, in index order.
/// Failed realizations come back as errors in their slot.
pub fn c1_samples(cfg: &CorrectorConfig, n_samples: usize, master_seed: u64) -> Vec<Result<f64>> {
    (0..n_samples as u64)
        .into_par_iter()
        .map(|index| {
            let config = sample_realization(&cfg.process, &cfg.layer, master_seed, index)?;
            Ok(solve_w1(cfg, &config)?.trace_mean.re)
        })
        .collect()
}

/// Monte-Carlo estimate of `c1` over `n_samples` independent realizations.
///
/// Samples run in parallel but are reduced in index order, so the result
/// depends only on `(cfg, n_samples, master_seed)`.
pub fn estimate_c1(cfg: &CorrectorConfig, n_samples: usize, master_seed: u64) -> Result<C1Study> {
    if n_samples < 2 {
        return Err(Error::InvalidArgument("estimate_c1 needs at least 2 samples".into()));
    }
    cfg.validate()?;
    let results = c1_samples(cfg, n_samples, master_seed);
    let mut ok: Vec<(u64, f64)> = Vec::with_capacity(n_samples);
    let mut failed = 0;
    for (index, r) in results.into_iter().enumerate() {
        match r {
            Ok(v) => ok.push((index as u64, v)),
            Err(Error::SingularSystem(_)) | Err(Error::NoConvergence { .. }) => failed += 1,
            Err(e) => return Err(e),
        }
    }
    if failed * 10 > n_samples || ok.len() < 2 {
        return Err(Error::TooManyFailures {
            failed,
            total: n_samples,
        });
    }
    let (grid, mut h_interface) = cfg.grid()?;
    let mean = ok.iter().map(|p| p.1).sum::<f64>() / ok.len() as f64;
    // c1(H') = c1(H) + (H' - H): raise H on grid lines until c1 > 0.
    let mut shift = 0.0;
    if mean <= 0.0 {
        let lines = ((1.0 - mean) / grid.dy).ceil();
        shift = lines * grid.dy;
        if h_interface + shift >= cfg.l_cell {
            return Err(Error::InvalidArgument(format!(
                "c1 = {mean} would need H beyond the cell top {}",
                cfg.l_cell
            )));
        }
        h_interface += shift;
    }
    let values: Vec<(u64, f64)> = ok.iter().map(|&(i, v)| (i, v + shift)).collect();
    let history = running_history(&values);
    let last = history.last().copied().expect("at least two samples");
    let std_err = last.running_stderr.unwrap_or(0.0);
    Ok(C1Study {
        estimate: C1Estimate {
            mean: last.running_mean,
            std_err,
            n_samples: values.len(),
            n_failed: failed,
            cell_width: cfg.layer.width,
            ci95: (last.running_mean - 1.96 * std_err, last.running_mean + 1.96 * std_err),
            h_interface,
        },
        history,
    })
}

fn running_history(values: &[(u64, f64)]) -> Vec<C1HistoryRow> {
    let mut out = Vec::with_capacity(values.len());
    let (mut mean, mut m2) = (0.0, 0.0);
    for (n, &(sample_index, value)) in values.iter().enumerate() {
        let count = (n + 1) as f64;
        let delta = value - mean;
        mean += delta / count;
        m2 += delta * (value - mean);
        let running_stderr = (n > 0).then(|| (m2 / (count - 1.0) / count).sqrt());
        out.push(C1HistoryRow {
            sample_index,
            value,
            running_mean: mean,
            running_stderr,
        });
    }
    out
}

pub fn c1_history_csv(rows: &[C1HistoryRow]) -> String {
    let mut out = String::from("sample_index,value,running_mean,running_stderr\n");
    for r in rows {
        let stderr = r.running_stderr.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(out, "{},{},{},{stderr}", r.sample_index, r.value, r.running_mean);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayRow {
    pub y: f64,
    /// Lateral mean of `W1 - c1`.
    pub mean_offset: f64,
    pub variance: f64,
    pub mean_grad_sq: f64,
}

/// Per-line statistics of `W1` strictly above the jump line.
pub fn decay_profile(w1: &CorrectorSolution, c1: f64) -> Vec<DecayRow> {
    let g = &w1.grid;
    let top = g.ny - 1;
    let value = |i: usize, j: usize| w1.field[g.index(i, j)].re;
    (0..g.ny)
        .filter(|&j| g.y(j) > w1.h_interface + 1e-9 * g.dy)
        .map(|j| {
            let line: Vec<f64> = (0..g.nx).map(|i| value(i, j)).collect();
            let mean = line.iter().sum::<f64>() / g.nx as f64;
            let variance = line.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / g.nx as f64;
            let grad_sq = (0..g.nx)
                .map(|i| {
                    let gx = (value((i + 1) % g.nx, j) - value((i + g.nx - 1) % g.nx, j)) / (2.0 * g.dx);
                    let gy = if j == top {
                        (value(i, j) - value(i, j - 1)) / g.dy
                    } else {
                        (value(i, j + 1) - value(i, j - 1)) / (2.0 * g.dy)
                    };
                    gx * gx + gy * gy
                })
                .sum::<f64>()
                / g.nx as f64;
            DecayRow {
                y: g.y(j),
                mean_offset: mean - c1,
                variance,
                mean_grad_sq: grad_sq,
            }
        })
        .collect()
}

pub fn decay_profile_csv(rows: &[DecayRow]) -> String {
    let mut out = String::from("y,mean_offset,variance,mean_grad_sq\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{}", r.y, r.mean_offset, r.variance, r.mean_grad_sq);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{sample_matern, Point};

    fn small_cfg(width: f64) -> CorrectorConfig {
        let layer = LayerSpec {
            width,
            ..LayerSpec::default()
        };
        CorrectorConfig::new(layer, PointProcessParams::matern(0.4))
    }

    #[test]
    fn defaults_sit_on_grid_lines() {
        let cfg = small_cfg(20.0);
        assert!((cfg.h_interface - 7.0).abs() < 1e-12);
        assert!((cfg.l_cell - 12.0).abs() < 1e-12);
        let (g, h) = cfg.grid().unwrap();
        assert_eq!(g.line_of(h), Some(35));
        assert!((g.dx - 0.2).abs() < 1e-12 && (g.dy - 0.2).abs() < 1e-12);
    }

    #[test]
    fn shift_identity_holds_per_realization() {
        let cfg = small_cfg(20.0);
        let config = sample_matern(&cfg.process, &cfg.layer, 11).unwrap();
        let a = solve_w1(&cfg, &config).unwrap();
        let b = solve_w1(&CorrectorConfig { h_interface: 9.0, ..cfg }, &config).unwrap();
        let d = (b.trace_mean - a.trace_mean).re;
        assert!((d - 2.0).abs() < 1e-8, "{d}");
    }

    #[test]
    fn w1_is_real_zero_on_particles_and_balanced() {
        let cfg = small_cfg(20.0);
        let config = sample_matern(&cfg.process, &cfg.layer, 5).unwrap();
        let w = solve_w1(&cfg, &config).unwrap();
        assert!(w.field.iter().all(|v| v.im.abs() < 1e-10));
        for (t, v) in w.tags.iter().zip(&w.field) {
            if *t == NodeClass::ParticleDirichlet {
                assert_eq!(*v, Complex64::new(0.0, 0.0));
            }
        }
        assert!(w.flux.relative_imbalance < 1e-6, "{:?}", w.flux);
        assert!((w.flux.injected.re - 20.0).abs() < 1e-12);
        // The mean mode carries no flux through the closure.
        assert!(w.flux.top_outflow.norm() < 1e-8 * w.flux.injected.norm());
    }

    #[test]
    fn empty_layer_is_singular() {
        let cfg = small_cfg(20.0);
        let empty = ParticleConfiguration::from_centers(vec![], cfg.layer).unwrap();
        assert!(matches!(solve_w1(&cfg, &empty), Err(Error::SingularSystem(_))));
    }

    #[test]
    fn dense_wall_gives_distance_to_jump_line() {
        let n = 10;
        let width = n as f64 * 2.06;
        let cfg = small_cfg(width);
        let centers = (0..n)
            .map(|i| Point::new(-0.5 * width + 1.03 + 2.06 * i as f64, 2.0))
            .collect();
        let config = ParticleConfiguration::from_centers(centers, cfg.layer).unwrap();
        let w = solve_w1(&cfg, &config).unwrap();
        let tm = w.trace_mean.re;
        // Two-zone reading: W1 ~ 0 up to the wall top, slope 1 up to H, flat above.
        let wall_top = 3.0;
        assert!(tm > cfg.h_interface - wall_top && tm < cfg.h_interface - wall_top + 0.5, "{tm}");
    }

    #[test]
    fn refinement_moves_trace_mean_little() {
        let cfg = small_cfg(20.0);
        let config = sample_matern(&cfg.process, &cfg.layer, 3).unwrap();
        let at = |dx: f64| solve_w1(&CorrectorConfig { target_dx: dx, ..cfg }, &config).unwrap().trace_mean.re;
        let (c0, c1, c2) = (at(0.2), at(0.1), at(0.05));
        // Staircase boundaries converge at first order.
        assert!(((c0 - c1) / c1).abs() < 0.03, "{c0} {c1}");
        assert!(((c1 - c2) / c2).abs() < 0.02, "{c1} {c2}");
    }

    #[test]
    fn w2_is_linear_in_its_data() {
        let cfg = small_cfg(20.0);
        let config = sample_matern(&cfg.process, &cfg.layer, 8).unwrap();
        let w1 = solve_w1(&cfg, &config).unwrap();
        let v1 = v1_field(&w1, w1.trace_mean.re);
        let bottom = w1.line(0).to_vec();
        assert_eq!(&v1[..w1.grid.nx], &bottom[..]);

        let zero = solve_w2(&CorrectorConfig { gamma: Complex64::new(0.0, 0.0), ..cfg }, &config, &bottom).unwrap();
        assert!(zero.field.iter().all(|v| v.norm() == 0.0));

        let base = solve_w2(&cfg, &config, &bottom).unwrap();
        let doubled: Vec<_> = bottom.iter().map(|v| v * 2.0).collect();
        let twice = solve_w2(&cfg, &config, &doubled).unwrap();
        for (a, b) in base.field.iter().zip(&twice.field) {
            assert!((b - 2.0 * a).norm() < 1e-10 * (1.0 + a.norm()));
        }
        let rotated = solve_w2(&CorrectorConfig { gamma: cfg.gamma * Complex64::i(), ..cfg }, &config, &bottom).unwrap();
        assert!((rotated.trace_mean - base.trace_mean * Complex64::i()).norm() < 1e-10 * base.trace_mean.norm());
        assert!(base.flux.relative_imbalance < 1e-6, "{:?}", base.flux);

        let short = solve_w2(&cfg, &config, &bottom[1..]);
        assert!(matches!(short, Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn v1_average_on_top_vanishes_with_its_own_constant() {
        let cfg = small_cfg(20.0);
        let config = sample_matern(&cfg.process, &cfg.layer, 2).unwrap();
        let w1 = solve_w1(&cfg, &config).unwrap();
        let v1 = v1_field(&w1, w1.trace_mean.re);
        let top = w1.grid.index(0, w1.grid.ny - 1);
        let mean: Complex64 = v1[top..].iter().sum::<Complex64>() / w1.grid.nx as f64;
        assert!(mean.norm() < 1e-12);
    }

    #[test]
    fn decay_profile_shrinks_with_height() {
        let cfg = small_cfg(20.0);
        let config = sample_matern(&cfg.process, &cfg.layer, 4).unwrap();
        let w1 = solve_w1(&cfg, &config).unwrap();
        let rows = decay_profile(&w1, w1.trace_mean.re);
        assert!(rows.iter().all(|r| r.y > w1.h_interface));
        let near = rows.iter().find(|r| (r.y - (w1.h_interface + 1.0)).abs() < 1e-9).unwrap();
        assert!(rows.last().unwrap().variance < near.variance);
        assert!(rows.last().unwrap().mean_offset.abs() < 1e-12);

        let mut flat = w1.clone();
        flat.field.iter_mut().for_each(|v| *v = Complex64::new(3.0, 0.0));
        assert!(decay_profile(&flat, 3.0).iter().all(|r| r.variance == 0.0 && r.mean_grad_sq == 0.0));
    }

    #[test]
    fn estimate_is_deterministic_and_consistent() {
        let cfg = small_cfg(20.0);
        let a = estimate_c1(&cfg, 6, 42).unwrap();
        let b = estimate_c1(&cfg, 6, 42).unwrap();
        assert_eq!(a, b);
        let e = a.estimate;
        assert!(e.std_err >= 0.0 && e.ci95.0 <= e.mean && e.mean <= e.ci95.1);
        assert!(e.mean > 0.0);
        assert_eq!(a.history.len(), 6);
        assert!(c1_history_csv(&a.history).starts_with("sample_index,value,running_mean,running_stderr\n"));
        assert!(matches!(estimate_c1(&cfg, 1, 42), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn invalid_heights_are_rejected() {
        let cfg = small_cfg(20.0);
        let bad = CorrectorConfig { h_interface: 4.0, ..cfg };
        assert!(bad.validate().is_err());
        let coarse = CorrectorConfig { target_dx: 0.5, ..cfg };
        assert!(coarse.validate().is_err());
    }
}
