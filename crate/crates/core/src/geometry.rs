//! Random hard-core particle layers.
//!
//! Particles are disks of radius 1 whose centers live in a slab
//! `[-width/2, width/2) x (0, h)`. Sampling follows Matérn type-II thinning:
//! a Poisson number of uniformly placed candidates, each with a uniform score,
//! and every candidate that conflicts with a lower-scored one is removed.

use std::fmt::Write as _;
use std::io::Write;

use rand::RngExt;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::sample_stream;

/// A point `(x_par, x_d)` of the two-dimensional half-space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

/// Normalized particle layer: radius-1 disks inside `(0, h)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    /// Layer height.
    pub h: f64,
    /// Minimal gap between particles, and between particles and the slab faces.
    pub delta: f64,
    /// Lateral cell width.
    pub width: f64,
    /// Lateral distances are taken modulo `width` when set.
    pub periodic: bool,
}

impl Default for LayerSpec {
    fn default() -> Self {
        Self {
            h: 5.0,
            delta: 0.05,
            width: 50.0,
            periodic: true,
        }
    }
}

impl LayerSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.h.is_finite() && self.h > 2.0) {
            return Err(Error::InvalidLayer(format!("h = {} must exceed 2", self.h)));
        }
        if !(self.delta.is_finite() && self.delta >= 0.0) {
            return Err(Error::InvalidLayer(format!("delta = {} must be >= 0", self.delta)));
        }
        if self.h - 2.0 * (1.0 + self.delta) < 0.0 {
            return Err(Error::InvalidLayer(format!(
                "h = {} leaves no room for centers with delta = {}",
                self.h, self.delta
            )));
        }
        if !(self.width.is_finite() && self.width > 2.0 * (1.0 + self.delta)) {
            return Err(Error::InvalidLayer(format!(
                "width = {} must exceed 2(1 + delta)",
                self.width
            )));
        }
        Ok(())
    }

    /// Admissible range of center heights, `[1 + delta, h - 1 - delta]`.
    pub fn center_band(&self) -> (f64, f64) {
        (1.0 + self.delta, self.h - 1.0 - self.delta)
    }

    /// Minimal admissible center-to-center distance.
    pub fn hard_core(&self) -> f64 {
        2.0 + self.delta
    }

    /// Lateral offset `a - b`, wrapped into `[-width/2, width/2]` when periodic.
    pub fn lateral_offset(&self, a: f64, b: f64) -> f64 {
        let d = a - b;
        if self.periodic {
            d - self.width * (d / self.width).round()
        } else {
            d
        }
    }

    pub fn distance(&self, a: Point, b: Point) -> f64 {
        self.lateral_offset(a.x, b.x).hypot(a.y - b.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProcessKind {
    /// Matérn type-II thinning by random scores.
    Matern2,
    /// Sequential inhibition: candidates are kept in draw order when they
    /// do not conflict with an already kept center.
    HardcorePoisson,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointProcessParams {
    pub kind: ProcessKind,
    /// Target area density of the candidate process.
    pub rho: f64,
}

impl PointProcessParams {
    pub fn matern(rho: f64) -> Self {
        Self {
            kind: ProcessKind::Matern2,
            rho,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho.is_finite() && (0.0..1.0).contains(&self.rho)) {
            return Err(Error::InvalidProcess(format!("rho = {} must lie in [0, 1)", self.rho)));
        }
        Ok(())
    }

    /// Expected candidate count `rho * width * h / pi` for unit disks.
    pub fn intensity(&self, layer: &LayerSpec) -> f64 {
        self.rho * layer.width * layer.h / std::f64::consts::PI
    }
}

/// Where a configuration's random draws came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleSeed {
    pub master: u64,
    pub index: u64,
}

/// An immutable set of unit-disk centers in a layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleConfiguration {
    pub centers: Vec<Point>,
    pub layer: LayerSpec,
    pub seed: SampleSeed,
}

impl ParticleConfiguration {
    /// Builds a configuration from explicit centers, checking the hard-core
    /// and containment invariants.
    pub fn from_centers(centers: Vec<Point>, layer: LayerSpec) -> Result<Self> {
        layer.validate()?;
        let config = Self {
            centers,
            layer,
            seed: SampleSeed { master: 0, index: 0 },
        };
        if let Some(msg) = config.violation() {
            return Err(Error::InvalidLayer(msg));
        }
        Ok(config)
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    /// Smallest pairwise center distance, `None` for fewer than two particles.
    pub fn min_pair_distance(&self) -> Option<f64> {
        let mut best: Option<f64> = None;
        for (i, a) in self.centers.iter().enumerate() {
            for b in &self.centers[i + 1..] {
                let d = self.layer.distance(*a, *b);
                best = Some(best.map_or(d, |v: f64| v.min(d)));
            }
        }
        best
    }

    /// Describes the first hard-core or containment violation, if any.
    pub fn violation(&self) -> Option<String> {
        let (lo, hi) = self.layer.center_band();
        let half = 0.5 * self.layer.width;
        for (i, c) in self.centers.iter().enumerate() {
            if c.y < lo || c.y > hi {
                return Some(format!("center {i} at height {} outside [{lo}, {hi}]", c.y));
            }
            if c.x < -half || c.x >= half {
                return Some(format!("center {i} at x = {} outside the cell", c.x));
            }
        }
        let core = self.layer.hard_core();
        for (i, a) in self.centers.iter().enumerate() {
            for (j, b) in self.centers.iter().enumerate().skip(i + 1) {
                if self.layer.distance(*a, *b) < core {
                    return Some(format!("centers {i} and {j} closer than {core}"));
                }
            }
        }
        None
    }

    /// Area fraction of the slab `(0, h)` covered by particles.
    pub fn area_fraction(&self) -> f64 {
        self.len() as f64 * std::f64::consts::PI / (self.layer.width * self.layer.h)
    }

    /// Same centers shifted laterally by `shift`, wrapped back into the cell.
    pub fn translated(&self, shift: f64) -> Self {
        let w = self.layer.width;
        let centers = self
            .centers
            .iter()
            .map(|c| {
                let mut x = c.x + shift;
                x -= w * ((x + 0.5 * w) / w).floor();
                if x >= 0.5 * w {
                    x -= w;
                }
                Point::new(x, c.y)
            })
            .collect();
        Self {
            centers,
            layer: self.layer,
            seed: self.seed,
        }
    }

    /// CSV with header `x_par,x_d`, one center per row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x_par,x_d\n");
        for c in &self.centers {
            let _ = writeln!(out, "{},{}", c.x, c.y);
        }
        out
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(self.to_csv().as_bytes())?;
        Ok(())
    }
}

/// Samples a configuration from the stream `(seed, 0)`.
pub fn sample_matern(
    params: &PointProcessParams,
    layer: &LayerSpec,
    seed: u64,
) -> Result<ParticleConfiguration> {
    sample_realization(params, layer, seed, 0)
}

/// Samples realization `index` of the process under `master_seed`.
pub fn sample_realization(
    params: &PointProcessParams,
    layer: &LayerSpec,
    master_seed: u64,
    index: u64,
) -> Result<ParticleConfiguration> {
    layer.validate()?;
    params.validate()?;
    let mut rng = sample_stream(master_seed, index);
    let candidates = draw_candidates(params.intensity(layer), layer, &mut rng);
    let centers = match params.kind {
        ProcessKind::Matern2 => {
            let scores: Vec<f64> = candidates.iter().map(|_| rng.random::<f64>()).collect();
            matern_thin(&candidates, &scores, layer)
        }
        ProcessKind::HardcorePoisson => sequential_thin(&candidates, layer),
    };
    Ok(ParticleConfiguration {
        centers,
        layer: *layer,
        seed: SampleSeed {
            master: master_seed,
            index,
        },
    })
}

/// Poisson count of candidates, uniformly placed in the admissible sub-slab.
fn draw_candidates(nu: f64, layer: &LayerSpec, rng: &mut ChaCha8Rng) -> Vec<Point> {
    if nu <= 0.0 {
        return Vec::new();
    }
    let count = Poisson::new(nu).map(|p| p.sample(rng)).unwrap_or(0.0) as usize;
    let (lo, hi) = layer.center_band();
    let half = 0.5 * layer.width;
    (0..count)
        .map(|_| {
            let x = -half + layer.width * rng.random::<f64>();
            let y = lo + (hi - lo) * rng.random::<f64>();
            Point::new(x, y)
        })
        .collect()
}

/// Keeps candidate `i` unless some `j` within the hard-core distance has a
/// strictly lower score, or an equal score and a lower index.
pub(crate) fn matern_thin(candidates: &[Point], scores: &[f64], layer: &LayerSpec) -> Vec<Point> {
    let core = layer.hard_core();
    let grid = CellIndex::new(candidates, layer, core);
    candidates
        .iter()
        .enumerate()
        .filter(|&(i, p)| {
            !grid.neighbors(*p).any(|j| {
                j != i
                    && layer.distance(*p, candidates[j]) < core
                    && (scores[j] < scores[i] || (scores[j] == scores[i] && j < i))
            })
        })
        .map(|(_, p)| *p)
        .collect()
}

fn sequential_thin(candidates: &[Point], layer: &LayerSpec) -> Vec<Point> {
    let core = layer.hard_core();
    let mut kept: Vec<Point> = Vec::new();
    for p in candidates {
        if kept.iter().all(|q| layer.distance(*p, *q) >= core) {
            kept.push(*p);
        }
    }
    kept
}

/// Lateral bucket index used to find candidates within the hard-core radius.
struct CellIndex {
    buckets: Vec<Vec<usize>>,
    bucket_width: f64,
    x0: f64,
    periodic: bool,
}

impl CellIndex {
    fn new(points: &[Point], layer: &LayerSpec, reach: f64) -> Self {
        let n = ((layer.width / reach).floor() as usize).max(1);
        let bucket_width = layer.width / n as f64;
        let x0 = -0.5 * layer.width;
        let mut buckets = vec![Vec::new(); n];
        for (i, p) in points.iter().enumerate() {
            let b = (((p.x - x0) / bucket_width).floor() as isize).clamp(0, n as isize - 1);
            buckets[b as usize].push(i);
        }
        Self {
            buckets,
            bucket_width,
            x0,
            periodic: layer.periodic,
        }
    }

    fn neighbors(&self, p: Point) -> impl Iterator<Item = usize> + '_ {
        let n = self.buckets.len() as isize;
        let b = (((p.x - self.x0) / self.bucket_width).floor() as isize).clamp(0, n - 1);
        let mut ids: Vec<isize> = (b - 1..=b + 1)
            .filter_map(|k| {
                if self.periodic {
                    Some(k.rem_euclid(n))
                } else if (0..n).contains(&k) {
                    Some(k)
                } else {
                    None
                }
            })
            .collect();
        ids.sort_unstable();
        ids.dedup();
        ids.into_iter()
            .flat_map(move |k| self.buckets[k as usize].iter().copied())
    }
}

/// Distance from `y` to the nearest particle center.
pub fn distance_field(config: &ParticleConfiguration, y: Point) -> Result<f64> {
    config
        .centers
        .iter()
        .map(|c| config.layer.distance(y, *c))
        .fold(None, |acc: Option<f64>, d| Some(acc.map_or(d, |a| a.min(d))))
        .ok_or(Error::EmptyConfiguration)
}

/// Weight `R(y)^-m` inside the layer and `(y_d^2 + R(y_par, h)^(2m))^-1` above it.
pub fn weight_mu(config: &ParticleConfiguration, y: Point, m: f64) -> Result<f64> {
    if !(m > 4.0) {
        return Err(Error::InvalidArgument(format!("exponent m = {m} must exceed 2d = 4")));
    }
    let h = config.layer.h;
    if y.y <= h {
        let r = distance_field(config, y)?;
        Ok(r.powf(-m))
    } else {
        let r = distance_field(config, Point::new(y.x, h))?;
        Ok(1.0 / (y.y * y.y + r.powf(2.0 * m)))
    }
}

/// Monte-Carlo statistics of the distance field over a probe grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisReport {
    pub m: f64,
    pub n_samples: usize,
    /// Probe heights in `[0, h]`.
    pub heights: Vec<f64>,
    /// Empirical `E[R(., y_d)^m]` per height (infinite if any sample is empty).
    pub mean_r_pow_m: Vec<f64>,
    /// Largest `R` seen per height.
    pub max_r: Vec<f64>,
    /// Largest `R` over every probe: proxy for the uniform bound on `R`.
    pub overall_max_r: f64,
    pub empty_samples: usize,
    /// Set when some statistic is non-finite, i.e. `R` is not bounded.
    pub unbounded: bool,
}

/// Samples `n_samples` realizations and tabulates moments of the distance field.
pub fn check_hypotheses(
    params: &PointProcessParams,
    layer: &LayerSpec,
    n_samples: usize,
    m: f64,
    master_seed: u64,
) -> Result<HypothesisReport> {
    if n_samples == 0 {
        return Err(Error::InvalidArgument("n_samples must be >= 1".into()));
    }
    const N_HEIGHTS: usize = 11;
    let n_lateral = (layer.width.ceil() as usize * 2).max(16);
    let heights: Vec<f64> = (0..N_HEIGHTS)
        .map(|i| layer.h * i as f64 / (N_HEIGHTS - 1) as f64)
        .collect();
    let mut sum_pow = vec![0.0; N_HEIGHTS];
    let mut max_r = vec![0.0f64; N_HEIGHTS];
    let mut empty_samples = 0;
    for s in 0..n_samples {
        let config = sample_realization(params, layer, master_seed, s as u64)?;
        if config.is_empty() {
            empty_samples += 1;
            sum_pow.iter_mut().for_each(|v| *v = f64::INFINITY);
            max_r.iter_mut().for_each(|v| *v = f64::INFINITY);
            continue;
        }
        for (k, &yd) in heights.iter().enumerate() {
            for l in 0..n_lateral {
                let x = -0.5 * layer.width + layer.width * (l as f64 + 0.5) / n_lateral as f64;
                let r = distance_field(&config, Point::new(x, yd))?;
                sum_pow[k] += r.powf(m) / n_lateral as f64;
                max_r[k] = max_r[k].max(r);
            }
        }
    }
    let mean_r_pow_m: Vec<f64> = sum_pow.iter().map(|v| v / n_samples as f64).collect();
    let overall_max_r = max_r.iter().copied().fold(0.0, f64::max);
    let unbounded = !overall_max_r.is_finite() || mean_r_pow_m.iter().any(|v| !v.is_finite());
    Ok(HypothesisReport {
        m,
        n_samples,
        heights,
        mean_r_pow_m,
        max_r,
        overall_max_r,
        empty_samples,
        unbounded,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BirkhoffRow {
    pub window_width: f64,
    pub spatial_average: f64,
    pub discrepancy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BirkhoffTable {
    pub ensemble_average: f64,
    pub rows: Vec<BirkhoffRow>,
}

/// Compares spatial window averages of `observable` on the first
/// configuration of `configs` against the ensemble average over all of them.
///
/// Windows are `[-w/2, w/2] x [0, h]`, sampled on a midpoint grid with
/// spacing at most `probe_spacing`.
pub fn birkhoff_average<F>(
    configs: &[ParticleConfiguration],
    observable: F,
    window_widths: &[f64],
    probe_spacing: f64,
) -> Result<BirkhoffTable>
where
    F: Fn(&ParticleConfiguration, Point) -> f64,
{
    let first = configs
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty configuration stream".into()))?;
    let window_mean = |config: &ParticleConfiguration, w: f64| {
        let h = config.layer.h;
        let nx = ((w / probe_spacing).ceil() as usize).max(1);
        let ny = ((h / probe_spacing).ceil() as usize).max(1);
        let mut acc = 0.0;
        for i in 0..nx {
            let x = -0.5 * w + w * (i as f64 + 0.5) / nx as f64;
            for j in 0..ny {
                let y = h * (j as f64 + 0.5) / ny as f64;
                acc += observable(config, Point::new(x, y));
            }
        }
        acc / (nx * ny) as f64
    };
    let ensemble_average =
        configs.iter().map(|c| window_mean(c, c.layer.width)).sum::<f64>() / configs.len() as f64;
    let rows = window_widths
        .iter()
        .map(|&w| {
            let w = w.min(first.layer.width);
            let spatial_average = window_mean(first, w);
            BirkhoffRow {
                window_width: w,
                spatial_average,
                discrepancy: (spatial_average - ensemble_average).abs(),
            }
        })
        .collect();
    Ok(BirkhoffTable {
        ensemble_average,
        rows,
    })
}

/// Indicator of `y` lying inside some particle.
pub fn coverage_indicator(config: &ParticleConfiguration, y: Point) -> f64 {
    match distance_field(config, y) {
        Ok(r) if r < 1.0 => 1.0,
        _ => 0.0,
    }
}
