use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sdeweak::{ModelRegistry, SchemeRegistry};
use sdeweak_cli::config::{EXPLOSION_PRESET_NAMES, PRESET_NAMES};
use sdeweak_cli::runner::{plan, PHI_NOTE};
use sdeweak_cli::{run_experiment, run_explosion_probe, with_threads, ExperimentConfig, ExplosionConfig, RunError};

#[derive(Parser)]
#[command(
    name = "sdeweak",
    version,
    about = "Weak-convergence experiments for tamed and implicit Euler schemes"
)]
struct Cli {
    /// Master seed (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u32>,
    /// Worker threads (default: hardware parallelism).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory (overrides the config).
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// Validate and print the plan without simulating.
    #[arg(long, global = true)]
    dry_run: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a weak-convergence experiment from a TOML file or preset name.
    Run { config: String },
    /// Count exploding trajectories for one scheme and step size.
    Explode { config: String },
    /// List the built-in models.
    ListModels,
    /// List the built-in schemes and presets.
    ListSchemes,
}

fn run(cli: Cli) -> Result<ExitCode, RunError> {
    match cli.command {
        Command::ListModels => {
            for entry in ModelRegistry::builtin().entries() {
                println!("{:<8} {}", entry.id, entry.description);
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::ListSchemes => {
            for entry in SchemeRegistry::builtin().entries() {
                println!("{:<5} {}", entry.kind.id(), entry.description);
            }
            println!("experiment presets: {}", PRESET_NAMES.join(", "));
            println!("explosion presets: {}", EXPLOSION_PRESET_NAMES.join(", "));
            Ok(ExitCode::SUCCESS)
        }
        Command::Run { config } => {
            let mut config = ExperimentConfig::load(&config)?;
            if let Some(seed) = cli.seed {
                config.seed = seed;
            }
            if let Some(dir) = cli.output_dir {
                config.output_dir = dir;
            }
            let exp = config.validate()?;
            if cli.dry_run {
                print!("{}", plan(&config, &exp));
                return Ok(ExitCode::SUCCESS);
            }
            let outcome = with_threads(cli.threads, || run_experiment(&config))??;
            println!("# {PHI_NOTE}");
            println!(
                "{:<5} {:<10} {:>8} {:>6} {:>7} {:>6}",
                "scheme", "phi", "order", "theory", "points", "pass"
            );
            for r in &outcome.reports {
                let theory = r.theoretical_order.map_or("-".to_string(), |t| t.to_string());
                let pass = match r.passed {
                    Some(true) => "yes",
                    Some(false) => "NO",
                    None => "-",
                };
                println!(
                    "{:<5} {:<10} {:>8.3} {:>6} {:>7} {:>6}",
                    r.scheme_id,
                    r.phi_label,
                    r.fitted_order,
                    theory,
                    r.n_points_used(),
                    pass
                );
            }
            println!("artifacts written to {}", config.output_dir.display());
            let failures = outcome.failures();
            if failures.is_empty() {
                Ok(ExitCode::SUCCESS)
            } else {
                eprintln!("{} fit(s) outside tolerance:", failures.len());
                for f in failures {
                    eprintln!("  {f}");
                }
                Ok(ExitCode::FAILURE)
            }
        }
        Command::Explode { config } => {
            let mut config = ExplosionConfig::load(&config)?;
            if let Some(seed) = cli.seed {
                config.seed = seed;
            }
            if let Some(dir) = cli.output_dir {
                config.output_dir = dir;
            }
            let (problem, spec, n_steps) = config.validate()?;
            if cli.dry_run {
                println!(
                    "model {} x0={:?}, scheme {}, h={} ({n_steps} steps), M={}, seed {}",
                    problem.name,
                    problem.initial_state,
                    spec.id(),
                    config.h,
                    config.n_trajectories,
                    config.seed
                );
                return Ok(ExitCode::SUCCESS);
            }
            let report = with_threads(cli.threads, || run_explosion_probe(&config))??;
            println!(
                "{} on {}: {} of {} trajectories exploded (fraction {}), max Newton iterations {}, Newton failures {}",
                report.scheme,
                report.model,
                report.n_exploded,
                report.n_trajectories,
                report.explosion_fraction,
                report.max_newton_iterations,
                report.newton_failures
            );
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
