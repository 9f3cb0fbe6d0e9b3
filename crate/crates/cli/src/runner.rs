//! Runs experiments and writes their artifacts.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use sdeweak::montecarlo::compute_references;
use sdeweak::schemes::EXPLOSION_THRESHOLD;
use sdeweak::{
    theoretical_order, ConvergenceReport, MonteCarloError, MonteCarloRun, ReferenceValue, WeakErrorEstimate,
};
use serde::Serialize;
use thiserror::Error;

use crate::config::{ConfigError, ExperimentConfig, ExplosionConfig, ValidatedExperiment};

pub const WEAK_ERRORS_FILE: &str = "weak_errors.csv";
pub const CONVERGENCE_FILE: &str = "convergence.json";
pub const PLOTDATA_DIR: &str = "plotdata";
pub const EXPLOSION_FILE: &str = "explosion.json";

/// Stated in every report: the test functions only look at `x[0]`.
pub const PHI_NOTE: &str = "test functions are applied to the first state coordinate";

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    MonteCarlo(#[from] MonteCarloError),
    #[error("cannot write `{path}`: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot build worker pool: {0}")]
    ThreadPool(#[from] rayon::ThreadPoolBuildError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Runs `f` on a dedicated pool of `threads` workers, or on the global
/// pool when `threads` is `None`.
pub fn with_threads<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> Result<R, RunError> {
    match threads {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(n).build()?;
            Ok(pool.install(f))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutcome {
    pub references: Vec<ReferenceValue>,
    /// Scheme-major, then step size in ladder order, then test function.
    pub estimates: Vec<WeakErrorEstimate>,
    pub reports: Vec<ConvergenceReport>,
}

impl ExperimentOutcome {
    /// `scheme/phi` pairs whose fitted order misses the theory.
    pub fn failures(&self) -> Vec<String> {
        self.reports
            .iter()
            .filter(|r| r.passed == Some(false))
            .map(|r| {
                format!(
                    "{}/{}: fitted order {:.3} vs theoretical {} (tolerance {}, {} points used)",
                    r.scheme_id,
                    r.phi_label,
                    r.fitted_order,
                    r.theoretical_order.unwrap_or(f64::NAN),
                    r.tolerance.unwrap_or(f64::NAN),
                    r.n_points_used()
                )
            })
            .collect()
    }

    pub fn exit_code(&self) -> i32 {
        if self.failures().is_empty() {
            0
        } else {
            1
        }
    }

    pub fn report(&self, scheme_id: &str, phi_label: &str) -> Option<&ConvergenceReport> {
        self.reports
            .iter()
            .find(|r| r.scheme_id == scheme_id && r.phi_label == phi_label)
    }
}

/// Human-readable execution plan, printed by `--dry-run`.
pub fn plan(config: &ExperimentConfig, exp: &ValidatedExperiment) -> String {
    let mut s = String::new();
    let p = &exp.problem;
    let _ = writeln!(s, "model {} x0={:?} T={}", p.name, p.initial_state, p.horizon);
    let _ = writeln!(s, "seed {}", config.seed);
    let _ = writeln!(
        s,
        "reference: backward Euler, h_ref={} ({} steps), M_ref={}",
        config.h_ref, exp.reference_steps, config.n_reference
    );
    let phis: Vec<&str> = exp.phis.iter().map(|f| f.label.as_str()).collect();
    let _ = writeln!(s, "test functions: {} ({PHI_NOTE})", phis.join(", "));
    for (spec, tol) in &exp.schemes {
        let theory = theoretical_order(spec).map_or("none".to_string(), |t| t.to_string());
        let tol = tol.map_or("default".to_string(), |t| t.to_string());
        let _ = writeln!(
            s,
            "scheme {} {:?} theoretical order {theory}, tolerance {tol}",
            spec.id(),
            spec.parameters()
        );
    }
    for (h, n) in &exp.ladder {
        let _ = writeln!(s, "  h={h} ({n} steps) x M={}", config.n_trajectories);
    }
    let _ = writeln!(s, "output directory {}", config.output_dir.display());
    s
}

/// Simulates the reference and the whole ladder without touching disk.
pub fn execute(config: &ExperimentConfig) -> Result<ExperimentOutcome, RunError> {
    let exp = config.validate()?;
    let problem = &exp.problem;
    info!(
        "reference: {} trajectories at h_ref={} on {}",
        config.n_reference, config.h_ref, problem.name
    );
    let references = compute_references(problem, &exp.phis, config.h_ref, config.n_reference, config.seed)?;

    let mut estimates = Vec::new();
    let mut reports = Vec::new();
    for (spec, tolerance) in &exp.schemes {
        let scheme = spec.build().map_err(MonteCarloError::from)?;
        let mut per_phi: Vec<Vec<WeakErrorEstimate>> = vec![Vec::new(); exp.phis.len()];
        for &(h, n_steps) in &exp.ladder {
            info!("{} at h={h}: {} trajectories", spec.id(), config.n_trajectories);
            let run = MonteCarloRun {
                n_steps,
                n_trajectories: config.n_trajectories,
                master_seed: config.seed,
                index_offset: 0,
            };
            let sample = run.simulate(problem, scheme.as_ref());
            for (i, (phi, reference)) in exp.phis.iter().zip(&references).enumerate() {
                let e = WeakErrorEstimate::from_sample(spec.id(), &sample, phi, reference);
                per_phi[i].push(e.clone());
                estimates.push(e);
            }
        }
        for (phi, ests) in exp.phis.iter().zip(&per_phi) {
            reports.push(ConvergenceReport::from_estimates(spec, &phi.label, ests, *tolerance));
        }
    }
    Ok(ExperimentOutcome {
        references,
        estimates,
        reports,
    })
}

fn fmt_f64(v: f64) -> String {
    format!("{v:e}")
}

pub fn weak_errors_csv(estimates: &[WeakErrorEstimate]) -> Result<String, RunError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "scheme",
        "phi",
        "h",
        "M",
        "mean_phi",
        "std_error",
        "ci95",
        "weak_error",
        "n_exploded",
    ])?;
    for e in estimates {
        let weak_error = if e.is_reliable() {
            fmt_f64(e.weak_error)
        } else {
            "unreliable".to_string()
        };
        w.write_record([
            e.scheme_id.clone(),
            e.phi_label.clone(),
            fmt_f64(e.step_size),
            e.n_trajectories.to_string(),
            fmt_f64(e.mean_phi),
            fmt_f64(e.std_error),
            fmt_f64(e.ci95_halfwidth),
            weak_error,
            e.n_exploded.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is ASCII"))
}

#[derive(Serialize)]
struct ConvergenceDocument<'a> {
    model: &'a str,
    initial_state: &'a [f64],
    horizon: f64,
    note: &'static str,
    config: &'a ExperimentConfig,
    references: &'a [ReferenceValue],
    reports: &'a [ConvergenceReport],
}

pub fn convergence_json(
    config: &ExperimentConfig,
    exp: &ValidatedExperiment,
    outcome: &ExperimentOutcome,
) -> Result<String, RunError> {
    let doc = ConvergenceDocument {
        model: &exp.problem.name,
        initial_state: &exp.problem.initial_state,
        horizon: exp.problem.horizon,
        note: PHI_NOTE,
        config,
        references: &outcome.references,
        reports: &outcome.reports,
    };
    let mut s = serde_json::to_string_pretty(&doc)?;
    s.push('\n');
    Ok(s)
}

/// Two columns, `log2(h) log2(weak_error)`, for the points with a positive
/// reliable error.
pub fn plot_data(report: &ConvergenceReport) -> String {
    let mut s = format!(
        "# {} {}: log2(h) log2(weak_error); fitted order {}\n",
        report.scheme_id, report.phi_label, report.fitted_order
    );
    for p in &report.points {
        if p.weak_error > 0.0 && p.weak_error.is_finite() {
            let _ = writeln!(s, "{} {}", p.h.log2(), p.weak_error.log2());
        }
    }
    s
}

fn write_file(path: &Path, contents: &str) -> Result<(), RunError> {
    fs::write(path, contents).map_err(io_error(path))
}

/// Writes `weak_errors.csv`, `convergence.json` and `plotdata/*.dat`
/// into `dir`.
pub fn write_artifacts(
    config: &ExperimentConfig,
    exp: &ValidatedExperiment,
    outcome: &ExperimentOutcome,
    dir: &Path,
) -> Result<(), RunError> {
    let plot_dir = dir.join(PLOTDATA_DIR);
    fs::create_dir_all(&plot_dir).map_err(io_error(&plot_dir))?;
    write_file(&dir.join(WEAK_ERRORS_FILE), &weak_errors_csv(&outcome.estimates)?)?;
    write_file(&dir.join(CONVERGENCE_FILE), &convergence_json(config, exp, outcome)?)?;
    for r in &outcome.reports {
        let path = plot_dir.join(format!("{}_{}.dat", r.scheme_id, r.phi_label));
        write_file(&path, &plot_data(r))?;
    }
    Ok(())
}

/// Validates, simulates and writes the artifacts into `config.output_dir`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome, RunError> {
    let exp = config.validate()?;
    let outcome = execute(config)?;
    write_artifacts(config, &exp, &outcome, &config.output_dir)?;
    Ok(outcome)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExplosionReport {
    pub model: String,
    pub scheme: String,
    pub initial_state: Vec<f64>,
    pub h: f64,
    pub n_steps: usize,
    pub n_trajectories: usize,
    pub n_exploded: usize,
    pub explosion_fraction: f64,
    /// Largest Newton iteration count over all steps (implicit schemes).
    pub max_newton_iterations: u32,
    pub newton_failures: usize,
    pub explosion_threshold: f64,
}

/// Simulates without touching disk.
pub fn execute_explosion_probe(config: &ExplosionConfig) -> Result<ExplosionReport, RunError> {
    let (problem, spec, n_steps) = config.validate()?;
    let scheme = spec.build().map_err(MonteCarloError::from)?;
    let run = MonteCarloRun {
        n_steps,
        n_trajectories: config.n_trajectories,
        master_seed: config.seed,
        index_offset: 0,
    };
    let sample = run.simulate(&problem, scheme.as_ref());
    Ok(ExplosionReport {
        model: problem.name.clone(),
        scheme: spec.id().to_string(),
        initial_state: problem.initial_state.clone(),
        h: config.h,
        n_steps,
        n_trajectories: config.n_trajectories,
        n_exploded: sample.n_exploded(),
        explosion_fraction: sample.explosion_fraction(),
        max_newton_iterations: sample.max_newton_iterations,
        newton_failures: sample.newton_failures,
        explosion_threshold: EXPLOSION_THRESHOLD,
    })
}

/// Runs the probe and writes `explosion.json` into `config.output_dir`.
pub fn run_explosion_probe(config: &ExplosionConfig) -> Result<ExplosionReport, RunError> {
    let report = execute_explosion_probe(config)?;
    let dir = &config.output_dir;
    fs::create_dir_all(dir).map_err(io_error(dir))?;
    let mut json = serde_json::to_string_pretty(&report)?;
    json.push('\n');
    write_file(&dir.join(EXPLOSION_FILE), &json)?;
    Ok(report)
}
