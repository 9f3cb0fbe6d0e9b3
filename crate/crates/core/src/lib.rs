//! Explicit tamed/balanced Euler schemes and drift-implicit Euler for SDEs
//! with superlinearly growing coefficients, plus a reproducible Monte Carlo
//! harness that measures empirical weak convergence orders.

pub mod convergence;
pub mod diagnostics;
pub mod error;
pub mod model;
pub mod montecarlo;
pub mod rng;
pub mod schemes;

pub use convergence::{fit_order, theoretical_order, ConvergenceReport, LinearFit, ReportPoint};
pub use error::{FitError, ModelError, MonteCarloError, SchemeError, StepError};
pub use model::{
    make_fhn_model, make_ou_model, make_quintic_model, ModelParams, ModelRegistry, SdeProblem, TestFunction,
};
pub use montecarlo::{
    compute_reference, estimate_weak_error, MonteCarloRun, ReferenceValue, TerminalSample, WeakErrorEstimate,
};
pub use rng::{brownian_path, derive_stream, BrownianIncrements, RngStream};
pub use schemes::{simulate_trajectory, PathState, Scheme, SchemeKind, SchemeRegistry, SchemeSpec};
