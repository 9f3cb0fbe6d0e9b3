//! Configuration, presets and orchestration for weak-convergence
//! experiments built on `sdeweak`.

pub mod config;
pub mod runner;

pub use config::{
    explosion_preset, preset, ConfigError, ExperimentConfig, ExplosionConfig, ModelConfig, SchemeConfig,
    ValidatedExperiment, EXPLOSION_PRESET_NAMES, PRESET_NAMES,
};
pub use runner::{
    execute, execute_explosion_probe, run_experiment, run_explosion_probe, with_threads, ExperimentOutcome,
    ExplosionReport, RunError,
};
