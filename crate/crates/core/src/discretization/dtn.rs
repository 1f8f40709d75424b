//! Modal Dirichlet-to-Neumann closures on the top line of the cell.
//!
//! Above the closure line the field is a sum of (quasi-)periodic modes
//! `phi_m(x) = exp(i xi_m x) / sqrt(width)` with `xi_m = 2 m pi / width + k1`.
//! The closure maps a trace to `-d/dy` of the radiating/decaying extension,
//! which acts on `phi_m` by multiplication with `symbol(m)`:
//!
//! * Laplace: `2 |m| pi / width`.
//! * Helmholtz: `i beta_m`, where `beta_m = sqrt(k^2 - xi_m^2)` for propagating
//!   modes and `-i sqrt(xi_m^2 - k^2)` for evanescent ones, so that scattered
//!   modes `exp(i xi_m x - i beta_m y)` leave the layer or decay.
//!
//! Both reduce to the same formula at `k = k1 = 0`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::grid::Grid;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DtnKind {
    LaplacePeriodic,
    HelmholtzQuasiperiodic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DtnSpec {
    pub kind: DtnKind,
    /// Modes `-n_modes..=n_modes` are kept.
    pub n_modes: usize,
    pub k: f64,
    pub k1: f64,
    pub eta: f64,
}

impl DtnSpec {
    pub fn laplace(n_modes: usize, eta: f64) -> Self {
        Self {
            kind: DtnKind::LaplacePeriodic,
            n_modes,
            k: 0.0,
            k1: 0.0,
            eta,
        }
    }

    pub fn helmholtz(n_modes: usize, k: f64, k1: f64, eta: f64) -> Self {
        Self {
            kind: DtnKind::HelmholtzQuasiperiodic,
            n_modes,
            k,
            k1,
            eta,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(Error::InvalidDtnSpec(format!("eta = {} outside (0, 1]", self.eta)));
        }
        if self.kind == DtnKind::HelmholtzQuasiperiodic {
            if !(self.k.is_finite() && self.k > 0.0) {
                return Err(Error::InvalidDtnSpec(format!("k = {} must be positive", self.k)));
            }
            if !self.k1.is_finite() || self.k1.abs() >= self.k {
                return Err(Error::InvalidDtnSpec(format!("|k1| = {} must be below k", self.k1)));
            }
        }
        Ok(())
    }

    /// Lateral wavenumber of mode `m`.
    pub fn wavenumber(&self, m: i64, width: f64) -> f64 {
        let shift = match self.kind {
            DtnKind::LaplacePeriodic => 0.0,
            DtnKind::HelmholtzQuasiperiodic => self.k1,
        };
        2.0 * PI * m as f64 / width + shift
    }

    /// Vertical wavenumber `beta_m`, with `Im beta_m <= 0`.
    pub fn beta(&self, m: i64, width: f64) -> Complex64 {
        let xi = self.wavenumber(m, width);
        let k = match self.kind {
            DtnKind::LaplacePeriodic => 0.0,
            DtnKind::HelmholtzQuasiperiodic => self.k,
        };
        let radicand = k * k - xi * xi;
        if radicand >= 0.0 {
            Complex64::new(radicand.sqrt(), 0.0)
        } else {
            Complex64::new(0.0, -(-radicand).sqrt())
        }
    }

    /// Eigenvalue of the closure on mode `m`.
    pub fn symbol(&self, m: i64, width: f64) -> Complex64 {
        match self.kind {
            DtnKind::LaplacePeriodic => Complex64::new(2.0 * PI * m.unsigned_abs() as f64 / width, 0.0),
            DtnKind::HelmholtzQuasiperiodic => Complex64::i() * self.beta(m, width),
        }
    }
}

/// Smallest mode count whose first discarded mode has decayed below `eta`
/// across `gap`.
pub fn choose_n_modes(kind: DtnKind, k: f64, k1: f64, width: f64, gap: f64, eta: f64) -> Result<usize> {
    if !(gap > 0.0 && width > 0.0 && eta > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "need gap > 0, width > 0, eta > 0 (gap = {gap}, width = {width}, eta = {eta})"
        )));
    }
    if eta >= 1.0 {
        return Ok(0);
    }
    let decay = |n: usize| -> f64 {
        let xi = 2.0 * PI * n as f64 / width;
        match kind {
            DtnKind::LaplacePeriodic => (-xi * gap).exp(),
            DtnKind::HelmholtzQuasiperiodic => {
                let z = (xi + k1).powi(2) - k * k;
                if z <= 0.0 {
                    1.0
                } else {
                    (-z.sqrt() * gap).exp()
                }
            }
        }
    };
    (0..usize::MAX)
        .find(|&n| decay(n) < eta)
        .ok_or_else(|| Error::InvalidArgument("mode count overflow".into()))
}

/// Truncated closure discretized on the top line of a grid, scaled by `weight`.
///
/// Traces are paired with modes through the periodic trapezoidal rule, so the
/// block is a twisted circulant applied with FFTs.
#[derive(Debug, Clone, PartialEq)]
pub struct DtnBlock {
    pub nx: usize,
    pub dx: f64,
    /// Lateral phase: the field is `alpha`-quasi-periodic.
    pub alpha: f64,
    pub weight: f64,
    /// Modes kept after capping at what the grid resolves.
    pub n_modes: usize,
    /// `symbol(m)` stored at FFT bin `m mod nx`, zero for dropped modes.
    bins: Vec<Complex64>,
}

impl DtnBlock {
    pub fn new(spec: &DtnSpec, grid: &Grid, alpha: f64, weight: f64) -> Result<Self> {
        spec.validate()?;
        let nx = grid.nx;
        let n_modes = spec.n_modes.min((nx - 1) / 2);
        let mut bins = vec![Complex64::new(0.0, 0.0); nx];
        for m in -(n_modes as i64)..=(n_modes as i64) {
            bins[m.rem_euclid(nx as i64) as usize] = spec.symbol(m, grid.width);
        }
        Ok(Self {
            nx,
            dx: grid.dx,
            alpha,
            weight,
            n_modes,
            bins,
        })
    }

    /// `weight * Lambda * trace`.
    pub fn apply(&self, trace: &[Complex64]) -> Vec<Complex64> {
        let n = self.nx;
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(n);
        let inv = planner.plan_fft_inverse(n);
        let mut buf: Vec<Complex64> = trace
            .iter()
            .enumerate()
            .map(|(i, v)| v * Complex64::from_polar(1.0, -self.alpha * self.dx * i as f64))
            .collect();
        fwd.process(&mut buf);
        let scale = self.weight / n as f64;
        for (b, s) in buf.iter_mut().zip(&self.bins) {
            *b *= s * scale;
        }
        inv.process(&mut buf);
        for (i, b) in buf.iter_mut().enumerate() {
            *b *= Complex64::from_polar(1.0, self.alpha * self.dx * i as f64);
        }
        buf
    }

    /// Same block with every symbol negated, i.e. `beta_m -> -beta_m` for the
    /// Helmholtz closure. Only useful to check that a sign error is caught.
    pub fn negated(&self) -> Self {
        Self {
            bins: self.bins.iter().map(|b| -b).collect(),
            ..self.clone()
        }
    }

    /// Row-major dense `nx x nx` matrix of `weight * Lambda`.
    pub fn dense(&self) -> Vec<Complex64> {
        let n = self.nx;
        let mut kernel = self.bins.clone();
        FftPlanner::new().plan_fft_inverse(n).process(&mut kernel);
        let scale = self.weight / n as f64;
        let mut out = vec![Complex64::new(0.0, 0.0); n * n];
        for i in 0..n {
            for k in 0..n {
                let d = i as i64 - k as i64;
                let phase = Complex64::from_polar(1.0, self.alpha * self.dx * d as f64);
                out[i * n + k] = kernel[d.rem_euclid(n as i64) as usize] * phase * scale;
            }
        }
        out
    }
}
