use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{error, info, warn};

use vortex_core::harness::{
    convergence_study, initial_data, noise_path, particle_dynamics, reference_solution, sample_seed, validate_config,
    write_snapshots, write_study, ExperimentConfig, ValidatedConfig, Verdict,
};
use vortex_core::oracles::run_oracle;
use vortex_core::particles::{write_positions_csv, ParticleEnsemble};
use vortex_core::spde::write_diagnostics_csv;
use vortex_core::Error;

const EXIT_PASS: u8 = 0;
const EXIT_USAGE: u8 = 1;
const EXIT_FAIL: u8 = 2;

/// Stochastic point-vortex particles versus the vorticity SPDE on the torus.
#[derive(Parser, Debug)]
#[command(name = "vortex", version)]
struct Cli {
    /// Only print errors.
    #[arg(long, global = true, conflicts_with = "verbose")]
    quiet: bool,
    /// Print debug output.
    #[arg(long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Overrides {
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of Monte Carlo paths.
    #[arg(long)]
    paths: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check a config and print the β bound.
    Validate { config: PathBuf },
    /// Run the particle system and write deposited fields.
    SimulateParticles {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
        /// Particle count; defaults to the largest ladder entry.
        #[arg(long)]
        n: Option<usize>,
        /// Also write particle positions at every observation time.
        #[arg(long)]
        positions: bool,
    },
    /// Solve the SPDE and write snapshots and diagnostics.
    SolveSpde {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run the convergence study over the particle ladder.
    Converge {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run a named analytic-oracle suite (or `all`).
    Oracle { name: String },
}

fn load(config: &Path, overrides: Option<&Overrides>) -> Result<ValidatedConfig, Error> {
    let mut cfg = ExperimentConfig::load(config)?;
    if let Some(o) = overrides {
        if let Some(s) = o.seed {
            cfg.master_seed = s;
        }
        if let Some(p) = o.paths {
            cfg.paths = p;
        }
        if let Some(out) = &o.out {
            cfg.output_dir = out.clone();
        }
    }
    let v = validate_config(&cfg).map_err(|errs| Error::Config(errs.join("; ")))?;
    for w in &v.warnings {
        warn!("{w}");
    }
    Ok(v)
}

fn simulate_particles(v: &ValidatedConfig, n: Option<usize>, positions: bool) -> Result<u8, Error> {
    let c = &v.config;
    let n = n.unwrap_or(*c.n_ladder.last().expect("validated ladder"));
    let data = initial_data(v)?;
    let dynamics = particle_dynamics(v, n)?;
    fs::create_dir_all(&c.output_dir)?;
    let mut worst: f64 = 0.0;
    for path_index in 0..c.paths as u64 {
        let path = noise_path(v, n, path_index)?;
        let ens = ParticleEnsemble::sample(&data, n, sample_seed(c.master_seed, n, path_index))?;
        let run = dynamics.run(&ens, &path, &v.observation_steps)?;
        let frames: Vec<(f64, Vec<_>)> = run
            .observations
            .iter()
            .map(|o| (o.t, vec![&o.g_plus, &o.g_minus]))
            .collect();
        let file = c.output_dir.join(format!("particles_N{n}_path{path_index}.vxf"));
        write_snapshots(&file, &frames)?;
        if positions {
            let mut buf = Vec::new();
            for (i, o) in run.observations.iter().enumerate() {
                write_positions_csv(&mut buf, o.t, &o.ensemble, i == 0)?;
            }
            fs::write(c.output_dir.join(format!("positions_N{n}_path{path_index}.csv")), buf)?;
        }
        for o in &run.observations {
            let rel = |m: f64, g: f64| if g > 0.0 { (m / g - 1.0).abs() } else { m.abs() };
            worst = worst
                .max(rel(o.g_plus.integral(), ens.gamma_plus))
                .max(rel(o.g_minus.integral(), ens.gamma_minus));
        }
        info!("path {path_index}: wrote {}", file.display());
    }
    println!("N = {n}, paths = {}, max relative deposit mass error = {worst:.3e}", c.paths);
    Ok(if worst <= 1e-6 { EXIT_PASS } else { EXIT_FAIL })
}

fn solve_spde(v: &ValidatedConfig) -> Result<u8, Error> {
    let c = &v.config;
    fs::create_dir_all(&c.output_dir)?;
    let data = initial_data(v)?;
    let bound = data.omega0.max_abs();
    let mut worst_ratio: f64 = 0.0;
    for path_index in 0..c.paths as u64 {
        let reference = reference_solution(v, path_index)?;
        let traj = &reference.trajectory;
        let omegas: Vec<_> = traj.states.iter().map(|s| s.omega()).collect();
        let frames: Vec<(f64, Vec<_>)> = traj.times.iter().zip(&omegas).map(|(&t, w)| (t, vec![w])).collect();
        write_snapshots(&c.output_dir.join(format!("spde_path{path_index}.vxf")), &frames)?;
        let mut buf = Vec::new();
        write_diagnostics_csv(&mut buf, &traj.diagnostics)?;
        fs::write(c.output_dir.join(format!("spde_diagnostics_path{path_index}.csv")), buf)?;
        for w in &omegas {
            if bound > 0.0 {
                worst_ratio = worst_ratio.max(w.max_abs() / bound);
            }
        }
    }
    println!("paths = {}, max ‖ω(t)‖_∞ / ‖ω₀‖_∞ = {worst_ratio:.6}", c.paths);
    Ok(if worst_ratio <= 1.05 { EXIT_PASS } else { EXIT_FAIL })
}

fn converge(v: &ValidatedConfig) -> Result<u8, Error> {
    let report = convergence_study(v)?;
    let (csv, json) = write_study(&report, &v.config.output_dir)?;
    let s = &report.summary;
    println!("config {}  β bound {:.6}  M {:.4}", s.config_hash, s.beta_bound, s.truncation);
    println!("{:>8} {:>6} {:>14} {:>14} {:>14}", "N", "paths", "median sup", "median Hη_p", "median H-neg");
    for l in &s.ladder {
        println!(
            "{:>8} {:>6} {:>14.6e} {:>14.6e} {:>14.6e}",
            l.n, l.paths_ok, l.median_sup, l.median_hetap, l.median_hneg
        );
    }
    println!("slopes: sup {:.3}  Hη_p {:.3}  H-neg {:.3}", s.slopes.sup, s.slopes.hetap, s.slopes.hneg);
    for f in &s.failures {
        println!("failed: N = {} path {}: {}", f.n, f.path, f.error);
    }
    println!("verdict: {:?}  ({}, {})", s.verdict, csv.display(), json.display());
    Ok(match s.verdict {
        Verdict::Pass => EXIT_PASS,
        Verdict::Fail => EXIT_FAIL,
    })
}

fn oracle(name: &str) -> Result<u8, Error> {
    let outcomes = run_oracle(name)?;
    let mut ok = true;
    for o in &outcomes {
        println!(
            "{} {:<16} {:.3e} (tolerance {:.1e})  {}",
            if o.passed { "PASS" } else { "FAIL" },
            o.name,
            o.measured,
            o.tolerance,
            o.detail
        );
        ok &= o.passed;
    }
    Ok(if ok { EXIT_PASS } else { EXIT_FAIL })
}

fn exit_for(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) | Error::InvalidGrid(_) | Error::Io(_) => EXIT_USAGE,
        _ => EXIT_FAIL,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { EXIT_PASS });
        }
    };
    let level = if cli.quiet {
        log::LevelFilter::Error
    } else if cli.verbose {
        log::LevelFilter::Debug
    } else {
        log::LevelFilter::Info
    };
    env_logger::Builder::new().filter_level(level).init();
    let result = match &cli.command {
        Command::Validate { config } => load(config, None).map(|v| {
            println!("valid: β bound 1/(4 + 2α − 4/p) = {:.6}, β = {}", v.beta_bound, v.config.beta);
            println!("truncation M = {:.6}, {} steps, config hash {}", v.truncation.m, v.n_steps, v.hash);
            EXIT_PASS
        }),
        Command::SimulateParticles {
            config,
            overrides,
            n,
            positions,
        } => load(config, Some(overrides)).and_then(|v| simulate_particles(&v, *n, *positions)),
        Command::SolveSpde { config, overrides } => load(config, Some(overrides)).and_then(|v| solve_spde(&v)),
        Command::Converge { config, overrides } => load(config, Some(overrides)).and_then(|v| converge(&v)),
        Command::Oracle { name } => oracle(name),
    };
    let code = result.unwrap_or_else(|e| {
        error!("{e}");
        let _ = std::io::stderr().flush();
        exit_for(&e)
    });
    ExitCode::from(code)
}
