use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("state and noise dimensions must be positive (got d={dim_state}, m={dim_noise})")]
    Dimension { dim_state: usize, dim_noise: usize },
    #[error("invalid model parameter: {0}")]
    Parameter(String),
    #[error("unknown model id `{0}`")]
    UnknownModel(String),
    #[error("model `{model}` has no parameter `{key}`")]
    UnknownParameter { model: String, key: String },
    #[error("unknown test function `{0}`")]
    UnknownTestFunction(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SchemeError {
    #[error("unknown scheme id `{0}`")]
    UnknownScheme(String),
    #[error("scheme `{scheme}` has no parameter `{key}`")]
    UnknownParameter { scheme: String, key: String },
    #[error("invalid parameter for scheme `{scheme}`: {message}")]
    InvalidParameter { scheme: String, message: String },
}

/// Failure of a single time step. Trajectories record these as explosions.
#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum StepError {
    #[error("Newton iteration did not converge after {iterations} iterations")]
    NewtonDivergence { iterations: u32 },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MonteCarloError {
    #[error("step size {h} does not divide the horizon {horizon}")]
    StepDoesNotDivide { h: f64, horizon: f64 },
    #[error("step size {h} must be at least 4x the reference step {h_ref}")]
    StepTooFine { h: f64, h_ref: f64 },
    #[error("at least one trajectory is required")]
    NoTrajectories,
    #[error("reference run is unreliable: {n_exploded} of {n_trajectories} trajectories exploded")]
    ReferenceUnreliable { n_exploded: usize, n_trajectories: usize },
    #[error(transparent)]
    Scheme(#[from] SchemeError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitError {
    #[error("degenerate fit: {0}")]
    DegenerateFit(String),
}
