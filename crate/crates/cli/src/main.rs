use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use surfhom_core::experiments::{
    report, run_c1_study, run_corrector_profile, run_reference, run_sample, run_sweep, run_validate, with_threads,
    ExperimentConfig, Scenario,
};
use surfhom_core::Error;

const EXIT_VALIDATION: u8 = 2;
const EXIT_CONFIG: u8 = 3;
const EXIT_NUMERICAL: u8 = 4;

/// Rough-surface homogenization experiments.
#[derive(Debug, Parser)]
#[command(name = "surfhom", version)]
struct Cli {
    /// JSON experiment config. The built-in desk-scale study is used if omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override `master_seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override `output_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Ignore any cached `c1` in the output directory.
    #[arg(long, global = true)]
    recompute_c1: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw particle configurations and check the process hypotheses.
    Sample,
    /// Monte-Carlo estimate of `c1`, with history and width tables.
    C1,
    /// Lateral variance and offset of `W1` above the jump line.
    CorrectorProfile,
    /// One reference solve at the first epsilon.
    Reference,
    /// Reference against effective reflection over the epsilon list.
    Sweep,
    /// Analytic oracle suite.
    Validate,
    /// Summarize the results in the output directory.
    Report,
}

impl Command {
    fn scenario(&self) -> Scenario {
        match self {
            Command::Sample => Scenario::SampleOnly,
            Command::C1 => Scenario::C1Study,
            Command::CorrectorProfile => Scenario::CorrectorProfile,
            Command::Validate => Scenario::Validate,
            Command::Reference | Command::Sweep | Command::Report => Scenario::Sweep,
        }
    }
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::InvalidArgument(_) | Error::Io(_) => EXIT_CONFIG,
        Error::InvalidLayer(_) | Error::InvalidProcess(_) | Error::InvalidDtnSpec(_) | Error::InvalidExtent(_) => {
            EXIT_CONFIG
        }
        _ => EXIT_NUMERICAL,
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::desk_default(cli.command.scenario()),
    };
    if let Some(seed) = cli.seed {
        cfg.master_seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    if cli.threads == Some(0) {
        return Err(Error::Config("--threads must be at least 1".into()));
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<u8, Error> {
    let cfg = load_config(cli)?;
    let out = cfg.output_dir.display().to_string();
    with_threads(cli.threads, || -> Result<u8, Error> {
        match cli.command {
            Command::Sample => {
                let r = run_sample(&cfg)?;
                let mean = r.counts.iter().sum::<usize>() as f64 / r.counts.len() as f64;
                println!("{} samples, mean count {mean:.2}, {} violations", r.counts.len(), r.violations);
                if r.hypotheses.unbounded {
                    println!("distance field unbounded: {} empty samples", r.hypotheses.empty_samples);
                } else {
                    println!("max distance to a particle {:.3}", r.hypotheses.overall_max_r);
                }
            }
            Command::C1 => {
                let r = run_c1_study(&cfg)?;
                let e = r.study.estimate;
                println!(
                    "c1 = {:.6} +/- {:.6}, ci95 [{:.6}, {:.6}] ({} samples, {} failed)",
                    e.mean, e.std_err, e.ci95.0, e.ci95.1, e.n_samples, e.n_failed
                );
                for w in &r.widths {
                    println!(
                        "width {:>7}: mean {:.6} ci95 [{:.6}, {:.6}], single realization {:.6}",
                        w.cell_width, w.mean, w.ci_lo, w.ci_hi, w.single_realization
                    );
                }
            }
            Command::CorrectorProfile => {
                let r = run_corrector_profile(&cfg)?;
                println!(
                    "H = {}, L_cell = {}, variance slope {:.3} over {} realizations",
                    r.h_interface, r.l_cell, r.variance_slope, cfg.n_samples
                );
            }
            Command::Reference => {
                let r = run_reference(&cfg)?;
                println!("epsilon {}: r = {:.8} {:+.8}i (residual {:.2e})", r.epsilon, r.r_re, r.r_im, r.residual);
            }
            Command::Sweep => {
                let r = run_sweep(&cfg, cli.recompute_c1)?;
                let cached = if r.c1_from_cache { " (cached)" } else { "" };
                println!("c1 = {:.6} +/- {:.6}{cached}", r.c1_used.mean, r.c1_used.std_err);
                for row in &r.rows {
                    println!(
                        "epsilon {:<8} err1 {:.4e} +/- {:.1e}   err2 {:.4e} +/- {:.1e}   n {}",
                        row.epsilon, row.err1_mean, row.err1_std, row.err2_mean, row.err2_std, row.n
                    );
                }
                for f in &r.failures {
                    eprintln!("failed: {f}");
                }
                for (name, fit) in [("order 1", r.fitted_rate_order1), ("order 2", r.fitted_rate_order2)] {
                    match fit {
                        Some(f) => println!("{name} rate {:.3} (r^2 {:.4})", f.slope, f.r_squared),
                        None => println!("{name} rate unavailable"),
                    }
                }
            }
            Command::Validate => {
                let r = run_validate(&cfg);
                for c in &r.checks {
                    println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
                }
                if !r.all_passed() {
                    return Ok(EXIT_VALIDATION);
                }
            }
            Command::Report => print!("{}", report(&cfg.output_dir)?),
        }
        if !matches!(cli.command, Command::Validate | Command::Report) {
            println!("results in {out}");
        }
        Ok(0)
    })?
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG } else { 0 });
        }
    };
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
