use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, GeometryParams, GridParams, ProcessParams};
use super::fit::{fit_rate, ols, RateFit};
use crate::corrector::{c1_history_csv, decay_profile, decay_profile_csv, estimate_c1, solve_w1, C1Estimate, C1Study, DecayRow};
use crate::error::{Error, Result};
use crate::geometry::{check_hypotheses, sample_realization, HypothesisReport, ParticleConfiguration};
use crate::rng::derive_seed;
use crate::scattering::{effective_reflection, field_csv, reference_solve, ReferenceOptions, ScatteringScene};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

const C1_CACHE: &str = "c1_cache.json";

/// Runs `f` on a dedicated pool of `threads` workers (the global pool if `None`).
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(name), contents)?;
    Ok(())
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

#[derive(Debug, Clone, Serialize)]
struct Provenance<'a, T: Serialize> {
    tool: &'static str,
    version: &'static str,
    master_seed: u64,
    config: &'a ExperimentConfig,
    details: T,
}

fn write_provenance<T: Serialize>(cfg: &ExperimentConfig, details: T) -> Result<()> {
    let p = Provenance {
        tool: "surfhom",
        version: TOOL_VERSION,
        master_seed: cfg.master_seed,
        config: cfg,
        details,
    };
    write(&cfg.output_dir, "provenance.json", &to_json(&p))
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

// ---------------------------------------------------------------- c1

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct C1CacheKey {
    pub geometry: GeometryParams,
    pub process: ProcessParams,
    pub grid: GridParams,
    pub n_samples: usize,
    pub master_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct C1Cache {
    pub key: C1CacheKey,
    pub version: String,
    pub estimate: C1Estimate,
}

fn cache_key(cfg: &ExperimentConfig, n_samples: usize) -> C1CacheKey {
    C1CacheKey {
        geometry: cfg.geometry,
        process: cfg.process,
        grid: cfg.grid,
        n_samples,
        master_seed: cfg.master_seed,
    }
}

fn store_c1(cfg: &ExperimentConfig, n_samples: usize, estimate: C1Estimate) -> Result<()> {
    let cache = C1Cache {
        key: cache_key(cfg, n_samples),
        version: TOOL_VERSION.to_string(),
        estimate,
    };
    write(&cfg.output_dir, C1_CACHE, &to_json(&cache))
}

/// Reads `c1` from the output directory if it was computed for this
/// geometry, process, grid and seed; computes and stores it otherwise.
/// Returns the estimate and whether it came from the cache.
pub fn obtain_c1(cfg: &ExperimentConfig, recompute: bool) -> Result<(C1Estimate, bool)> {
    let key = cache_key(cfg, cfg.c1_samples);
    if !recompute {
        if let Ok(text) = fs::read_to_string(cfg.output_dir.join(C1_CACHE)) {
            if let Ok(cache) = serde_json::from_str::<C1Cache>(&text) {
                if cache.key == key {
                    return Ok((cache.estimate, true));
                }
            }
        }
    }
    let study = estimate_c1(&cfg.corrector(cfg.geometry.width), cfg.c1_samples, cfg.master_seed)?;
    store_c1(cfg, cfg.c1_samples, study.estimate)?;
    Ok((study.estimate, false))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct C1WidthRow {
    pub cell_width: f64,
    pub mean: f64,
    pub std_err: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    /// `c1` from one realization of this width (spatial average only).
    pub single_realization: f64,
    /// Whether the single realization agrees with the ensemble within the combined 95% band.
    pub consistent: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct C1StudyReport {
    pub study: C1Study,
    pub widths: Vec<C1WidthRow>,
}

/// Estimates `c1` with `n_samples` realizations, then repeats at each extra
/// cell width. Writes `c1_history.csv`, `c1_widths.csv`, the cache and provenance.
pub fn run_c1_study(cfg: &ExperimentConfig) -> Result<C1StudyReport> {
    if cfg.n_samples < 2 {
        return Err(Error::Config("c1 study needs n_samples >= 2".into()));
    }
    let study = estimate_c1(&cfg.corrector(cfg.geometry.width), cfg.n_samples, cfg.master_seed)?;
    let mut widths = Vec::with_capacity(cfg.cell_widths.len());
    for (i, &w) in cfg.cell_widths.iter().enumerate() {
        let corrector = cfg.corrector(w);
        let est = estimate_c1(&corrector, cfg.n_samples, derive_seed(cfg.master_seed, 100 + i as u64))?.estimate;
        let single_config = sample_realization(&corrector.process, &corrector.layer, derive_seed(cfg.master_seed, 200 + i as u64), 0)?;
        let single = solve_w1(&corrector, &single_config)?.trace_mean.re + (est.h_interface - corrector.h_interface);
        let spread = est.std_err * (est.n_samples as f64).sqrt();
        let band = 1.96 * (est.std_err.powi(2) + spread.powi(2)).sqrt();
        widths.push(C1WidthRow {
            cell_width: w,
            mean: est.mean,
            std_err: est.std_err,
            ci_lo: est.ci95.0,
            ci_hi: est.ci95.1,
            single_realization: single,
            consistent: (single - est.mean).abs() <= band,
        });
    }

    write(&cfg.output_dir, "c1_history.csv", &c1_history_csv(&study.history))?;
    if !widths.is_empty() {
        let mut csv = String::from("cell_width,mean,std_err,ci_lo,ci_hi,single_realization\n");
        for r in &widths {
            let _ = writeln!(csv, "{},{},{},{},{},{}", r.cell_width, r.mean, r.std_err, r.ci_lo, r.ci_hi, r.single_realization);
        }
        write(&cfg.output_dir, "c1_widths.csv", &csv)?;
    }
    store_c1(cfg, cfg.n_samples, study.estimate)?;
    write_provenance(cfg, &study.estimate)?;
    Ok(C1StudyReport { study, widths })
}

// ---------------------------------------------------------------- sweep

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub epsilon: f64,
    pub err1_mean: f64,
    /// Empirical standard deviation over realizations.
    pub err1_std: f64,
    pub err2_mean: f64,
    pub err2_std: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepSample {
    pub epsilon: f64,
    pub sample_index: u64,
    pub r_re: f64,
    pub r_im: f64,
    pub err1: f64,
    pub err2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub fitted_rate_order1: Option<RateFit>,
    pub fitted_rate_order2: Option<RateFit>,
    pub c1_used: C1Estimate,
    pub c1_from_cache: bool,
    pub samples: Vec<SweepSample>,
    pub failures: Vec<String>,
    pub dropped_epsilons: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct Rates {
    order1: Option<RateFit>,
    order2: Option<RateFit>,
}

/// Builds the reference scene for realization `sample` at scale `epsilon`.
pub fn sweep_scene(cfg: &ExperimentConfig, epsilon_index: usize, sample: u64, h_interface: f64) -> Result<ScatteringScene> {
    let epsilon = cfg.epsilon_list[epsilon_index];
    let layer = cfg.layer_with_width(cfg.period / epsilon);
    let config = sample_realization(
        &cfg.process(),
        &layer,
        derive_seed(cfg.master_seed, 1000 + epsilon_index as u64),
        sample,
    )?;
    Ok(ScatteringScene {
        epsilon,
        h_interface,
        layer,
        gamma: cfg.gamma(),
        period: cfg.period,
        top: epsilon * (h_interface + cfg.top_margin),
        config,
    })
}

/// For every `epsilon` and realization: reference solve, then errors against
/// both effective models. Writes `sweep.csv`, `sweep_samples.csv`,
/// `rates.json` and provenance.
pub fn run_sweep(cfg: &ExperimentConfig, recompute_c1: bool) -> Result<SweepReport> {
    cfg.validate()?;
    let wave = cfg.wave()?;
    let (c1, c1_from_cache) = obtain_c1(cfg, recompute_c1)?;
    let h = c1.h_interface;
    let tasks: Vec<(usize, u64)> = (0..cfg.epsilon_list.len())
        .flat_map(|e| (0..cfg.n_samples as u64).map(move |s| (e, s)))
        .collect();
    let results: Vec<Result<SweepSample>> = tasks
        .par_iter()
        .map(|&(e, s)| {
            let scene = sweep_scene(cfg, e, s, h)?;
            let eps = scene.epsilon;
            let opts = ReferenceOptions {
                dtn_eta: cfg.grid.dtn_eta,
                ..ReferenceOptions::new(cfg.grid.target_dx * eps)
            };
            let r = reference_solve(&scene, &wave, &opts)?.reflection.value;
            let r1 = effective_reflection(1, &wave, eps, h, c1.mean)?.value;
            let r2 = effective_reflection(2, &wave, eps, h, c1.mean)?.value;
            Ok(SweepSample {
                epsilon: eps,
                sample_index: s,
                r_re: r.re,
                r_im: r.im,
                err1: (r - r1).norm(),
                err2: (r - r2).norm(),
            })
        })
        .collect();

    let mut rows = Vec::new();
    let mut samples = Vec::new();
    let mut failures = Vec::new();
    let mut dropped = Vec::new();
    for (e, &eps) in cfg.epsilon_list.iter().enumerate() {
        let mut ok = Vec::new();
        for (&(te, s), res) in tasks.iter().zip(&results) {
            if te != e {
                continue;
            }
            match res {
                Ok(v) => ok.push(*v),
                Err(err) => failures.push(format!("epsilon {eps} sample {s}: {err}")),
            }
        }
        let failed = cfg.n_samples - ok.len();
        if ok.is_empty() || failed * 10 > cfg.n_samples {
            dropped.push(eps);
            continue;
        }
        let (err1_mean, err1_std) = mean_std(&ok.iter().map(|v| v.err1).collect::<Vec<_>>());
        let (err2_mean, err2_std) = mean_std(&ok.iter().map(|v| v.err2).collect::<Vec<_>>());
        rows.push(SweepRow {
            epsilon: eps,
            err1_mean,
            err1_std,
            err2_mean,
            err2_std,
            n: ok.len(),
        });
        samples.extend(ok);
    }
    let fit = |f: fn(&SweepRow) -> f64| {
        if rows.len() < 3 {
            return None;
        }
        fit_rate(&rows.iter().map(|r| (r.epsilon, f(r))).collect::<Vec<_>>()).ok()
    };
    let report = SweepReport {
        fitted_rate_order1: fit(|r| r.err1_mean),
        fitted_rate_order2: fit(|r| r.err2_mean),
        rows,
        c1_used: c1,
        c1_from_cache,
        samples,
        failures,
        dropped_epsilons: dropped,
    };

    let mut csv = String::from("epsilon,err1_mean,err1_std,err2_mean,err2_std,n\n");
    for r in &report.rows {
        let _ = writeln!(csv, "{},{},{},{},{},{}", r.epsilon, r.err1_mean, r.err1_std, r.err2_mean, r.err2_std, r.n);
    }
    write(&cfg.output_dir, "sweep.csv", &csv)?;
    let mut csv = String::from("epsilon,sample_index,r_re,r_im,err1,err2\n");
    for s in &report.samples {
        let _ = writeln!(csv, "{},{},{},{},{},{}", s.epsilon, s.sample_index, s.r_re, s.r_im, s.err1, s.err2);
    }
    write(&cfg.output_dir, "sweep_samples.csv", &csv)?;
    let rates = Rates {
        order1: report.fitted_rate_order1,
        order2: report.fitted_rate_order2,
    };
    write(&cfg.output_dir, "rates.json", &to_json(&rates))?;
    write_provenance(cfg, &report.c1_used)?;
    Ok(report)
}

// ---------------------------------------------------------------- corrector profile

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleDecayRow {
    pub y: f64,
    /// Mean over realizations of `|lateral mean of W1 - c1|`.
    pub mean_abs_offset: f64,
    /// Mean over realizations of the lateral variance.
    pub mean_variance: f64,
    pub mean_grad_sq: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileReport {
    pub h_interface: f64,
    pub l_cell: f64,
    pub first: Vec<DecayRow>,
    pub ensemble: Vec<EnsembleDecayRow>,
    /// Slope of `ln(mean variance)` against `ln(y - h)`.
    pub variance_slope: f64,
}

/// Decay of `W1` above the jump line over `n_samples` realizations, each
/// offset by its own trace mean. Writes `decay_profile.csv` (first
/// realization) and `decay_ensemble.csv`.
pub fn run_corrector_profile(cfg: &ExperimentConfig) -> Result<ProfileReport> {
    let corrector = cfg.corrector(cfg.geometry.width);
    let profiles: Vec<Result<Vec<DecayRow>>> = (0..cfg.n_samples as u64)
        .into_par_iter()
        .map(|s| {
            let config = sample_realization(&corrector.process, &corrector.layer, cfg.master_seed, s)?;
            let w1 = solve_w1(&corrector, &config)?;
            Ok(decay_profile(&w1, w1.trace_mean.re))
        })
        .collect();
    let profiles: Vec<Vec<DecayRow>> = profiles.into_iter().collect::<Result<_>>()?;
    let n = profiles.len() as f64;
    let ensemble: Vec<EnsembleDecayRow> = (0..profiles[0].len())
        .map(|j| EnsembleDecayRow {
            y: profiles[0][j].y,
            mean_abs_offset: profiles.iter().map(|p| p[j].mean_offset.abs()).sum::<f64>() / n,
            mean_variance: profiles.iter().map(|p| p[j].variance).sum::<f64>() / n,
            mean_grad_sq: profiles.iter().map(|p| p[j].mean_grad_sq).sum::<f64>() / n,
        })
        .collect();
    let h = cfg.geometry.h;
    let (xs, ys): (Vec<f64>, Vec<f64>) = ensemble
        .iter()
        .filter(|r| r.mean_variance > 0.0)
        .map(|r| ((r.y - h).ln(), r.mean_variance.ln()))
        .unzip();
    let variance_slope = ols(&xs, &ys).slope;

    write(&cfg.output_dir, "decay_profile.csv", &decay_profile_csv(&profiles[0]))?;
    let mut csv = String::from("y,mean_abs_offset,mean_variance,mean_grad_sq\n");
    for r in &ensemble {
        let _ = writeln!(csv, "{},{},{},{}", r.y, r.mean_abs_offset, r.mean_variance, r.mean_grad_sq);
    }
    write(&cfg.output_dir, "decay_ensemble.csv", &csv)?;
    write_provenance(cfg, ())?;
    Ok(ProfileReport {
        h_interface: corrector.h_interface,
        l_cell: corrector.l_cell,
        first: profiles.into_iter().next().unwrap_or_default(),
        ensemble,
        variance_slope,
    })
}

// ---------------------------------------------------------------- samples

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleReport {
    pub counts: Vec<usize>,
    pub violations: usize,
    pub hypotheses: HypothesisReport,
}

/// Draws `n_samples` configurations of the corrector cell. Writes
/// `sample_<index>.csv`, `samples.csv` and `hypotheses.json`.
pub fn run_sample(cfg: &ExperimentConfig) -> Result<SampleReport> {
    let layer = cfg.layer();
    let configs: Vec<ParticleConfiguration> = (0..cfg.n_samples as u64)
        .into_par_iter()
        .map(|s| sample_realization(&cfg.process(), &layer, cfg.master_seed, s))
        .collect::<Result<_>>()?;
    let mut summary = String::from("sample_index,count,area_fraction,min_pair_distance\n");
    let mut violations = 0;
    for (s, c) in configs.iter().enumerate() {
        write(&cfg.output_dir, &format!("sample_{s}.csv"), &c.to_csv())?;
        violations += c.violation().is_some() as usize;
        let min = c.min_pair_distance().map(|d| d.to_string()).unwrap_or_default();
        let _ = writeln!(summary, "{s},{},{},{min}", c.len(), c.area_fraction());
    }
    write(&cfg.output_dir, "samples.csv", &summary)?;
    let hypotheses = check_hypotheses(&cfg.process(), &layer, cfg.n_samples, 6.0, cfg.master_seed)?;
    write(&cfg.output_dir, "hypotheses.json", &to_json(&hypotheses))?;
    write_provenance(cfg, ())?;
    Ok(SampleReport {
        counts: configs.iter().map(ParticleConfiguration::len).collect(),
        violations,
        hypotheses,
    })
}

// ---------------------------------------------------------------- single reference solve

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceReport {
    pub epsilon: f64,
    pub r_re: f64,
    pub r_im: f64,
    pub residual: f64,
}

/// One reference solve at the first `epsilon` (realization 0); writes
/// `field_<tag>.csv`.
pub fn run_reference(cfg: &ExperimentConfig) -> Result<ReferenceReport> {
    if cfg.epsilon_list.is_empty() {
        return Err(Error::Config("reference needs a non-empty epsilon_list".into()));
    }
    let wave = cfg.wave()?;
    let h = cfg.corrector(cfg.geometry.width).h_interface;
    let scene = sweep_scene(cfg, 0, 0, h)?;
    let opts = ReferenceOptions {
        dtn_eta: cfg.grid.dtn_eta,
        ..ReferenceOptions::new(cfg.grid.target_dx * scene.epsilon)
    };
    let sol = reference_solve(&scene, &wave, &opts)?;
    let tag = format!("eps{}_s0", scene.epsilon);
    write(&cfg.output_dir, &format!("field_{tag}.csv"), &field_csv(&sol.grid, &sol.field))?;
    let report = ReferenceReport {
        epsilon: scene.epsilon,
        r_re: sol.reflection.value.re,
        r_im: sol.reflection.value.im,
        residual: sol.report.residual,
    };
    write_provenance(cfg, &report)?;
    Ok(report)
}

/// Human-readable summary of whatever results sit in `dir`.
pub fn report(dir: &Path) -> Result<String> {
    let mut out = String::new();
    let mut found = false;
    if let Ok(text) = fs::read_to_string(dir.join(C1_CACHE)) {
        let cache: C1Cache = serde_json::from_str(&text)?;
        let e = cache.estimate;
        let _ = writeln!(
            out,
            "c1 = {:.6} +/- {:.6} (95% CI [{:.6}, {:.6}], {} samples, width {}, H = {})",
            e.mean, e.std_err, e.ci95.0, e.ci95.1, e.n_samples, e.cell_width, e.h_interface
        );
        found = true;
    }
    if let Ok(text) = fs::read_to_string(dir.join("sweep.csv")) {
        let _ = writeln!(out, "sweep:");
        for line in text.lines() {
            let _ = writeln!(out, "  {line}");
        }
        found = true;
    }
    if let Ok(text) = fs::read_to_string(dir.join("rates.json")) {
        let rates: Rates = serde_json::from_str(&text)?;
        for (name, r) in [("order 1", rates.order1), ("order 2", rates.order2)] {
            match r {
                Some(r) => {
                    let _ = writeln!(out, "{name} rate {:.3} (r^2 = {:.4})", r.slope, r.r_squared);
                }
                None => {
                    let _ = writeln!(out, "{name} rate unavailable");
                }
            }
        }
    }
    if !found {
        return Err(Error::Io(format!("no results found in {}", dir.display())));
    }
    Ok(out)
}
