//! Experiment configuration: TOML schema, validation and built-in presets.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use sdeweak::montecarlo::steps_for;
use sdeweak::{ModelError, ModelParams, ModelRegistry, SchemeError, SchemeSpec, SdeProblem, TestFunction};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_SEED: u32 = 100;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config `{path}`: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("`{0}` is neither a config file nor a preset name")]
    UnknownPreset(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Scheme(#[from] SchemeError),
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_state: Option<Vec<f64>>,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

impl ModelConfig {
    pub fn new(id: &str, initial_state: Option<Vec<f64>>) -> Self {
        ModelConfig {
            id: id.to_string(),
            initial_state,
            params: BTreeMap::new(),
        }
    }

    pub fn build(&self) -> Result<SdeProblem, ModelError> {
        let params = ModelParams {
            initial_state: self.initial_state.clone(),
            values: self.params.clone(),
        };
        ModelRegistry::builtin().build(&self.id, &params)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeConfig {
    pub id: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    /// Overrides the default order tolerance for this scheme.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
}

impl SchemeConfig {
    pub fn new(id: &str) -> Self {
        SchemeConfig {
            id: id.to_string(),
            params: BTreeMap::new(),
            tolerance: None,
        }
    }

    pub fn with_param(mut self, key: &str, value: f64) -> Self {
        self.params.insert(key.to_string(), value);
        self
    }

    pub fn spec(&self) -> Result<SchemeSpec, SchemeError> {
        SchemeSpec::from_params(&self.id, &self.params)
    }
}

fn default_seed() -> u32 {
    DEFAULT_SEED
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}

/// A weak-convergence experiment: one model, several schemes and test
/// functions, one step-size ladder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_seed")]
    pub seed: u32,
    /// Trajectories per ladder step.
    #[serde(rename = "M")]
    pub n_trajectories: usize,
    pub h_ladder: Vec<f64>,
    pub h_ref: f64,
    /// Trajectories in the reference run.
    #[serde(rename = "M_ref")]
    pub n_reference: usize,
    pub phis: Vec<String>,
    /// Global override of the default order tolerance.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    #[serde(default = "default_output_dir", skip_serializing)]
    pub output_dir: PathBuf,
    pub model: ModelConfig,
    pub schemes: Vec<SchemeConfig>,
}

/// A configuration resolved against the model and scheme registries.
#[derive(Debug, Clone)]
pub struct ValidatedExperiment {
    pub problem: SdeProblem,
    /// Scheme with its order tolerance override, if any.
    pub schemes: Vec<(SchemeSpec, Option<f64>)>,
    pub phis: Vec<TestFunction>,
    /// `(h, n_steps)` in the configured order.
    pub ladder: Vec<(f64, usize)>,
    pub reference_steps: usize,
}

fn check_tolerance(t: Option<f64>) -> Result<(), ConfigError> {
    match t {
        Some(t) if !(t > 0.0 && t.is_finite()) => Err(invalid(format!("tolerance must be positive, got {t}"))),
        _ => Ok(()),
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    /// Loads `arg` as a config file if it exists, else as a preset name.
    pub fn load(arg: &str) -> Result<Self, ConfigError> {
        let path = Path::new(arg);
        if path.is_file() {
            return Self::from_file(path);
        }
        preset(arg).ok_or_else(|| ConfigError::UnknownPreset(arg.to_string()))
    }

    /// Checks every invariant before any simulation happens.
    pub fn validate(&self) -> Result<ValidatedExperiment, ConfigError> {
        if self.schemes.is_empty() {
            return Err(invalid("no schemes configured"));
        }
        if self.phis.is_empty() {
            return Err(invalid("no test functions configured"));
        }
        if self.n_trajectories == 0 {
            return Err(invalid("M must be positive"));
        }
        if self.n_reference == 0 {
            return Err(invalid("M_ref must be positive"));
        }
        if !(self.h_ref > 0.0 && self.h_ref.is_finite()) {
            return Err(invalid(format!("h_ref must be positive, got {}", self.h_ref)));
        }
        if self.h_ladder.is_empty() {
            return Err(invalid("h_ladder is empty"));
        }
        check_tolerance(self.tolerance)?;

        let problem = self.model.build()?;
        let reference_steps = steps_for(problem.horizon, self.h_ref).map_err(|_| {
            invalid(format!(
                "h_ref {} does not divide the horizon {}",
                self.h_ref, problem.horizon
            ))
        })?;

        let mut ladder = Vec::with_capacity(self.h_ladder.len());
        for &h in &self.h_ladder {
            if !(h > 0.0 && h.is_finite()) {
                return Err(invalid(format!("ladder step {h} is not positive")));
            }
            let n = steps_for(problem.horizon, h).map_err(|_| {
                invalid(format!(
                    "ladder step {h} does not divide the horizon {}",
                    problem.horizon
                ))
            })?;
            if h < 4.0 * self.h_ref * (1.0 - 1e-12) {
                return Err(invalid(format!(
                    "ladder step {h} is finer than 4 * h_ref = {}",
                    4.0 * self.h_ref
                )));
            }
            if ladder.iter().any(|&(other, _)| other == h) {
                return Err(invalid(format!("ladder step {h} appears twice")));
            }
            ladder.push((h, n));
        }

        let mut seen = BTreeSet::new();
        let mut schemes = Vec::with_capacity(self.schemes.len());
        for s in &self.schemes {
            if !seen.insert(s.id.as_str()) {
                return Err(invalid(format!("scheme `{}` appears twice", s.id)));
            }
            check_tolerance(s.tolerance)?;
            schemes.push((s.spec()?, s.tolerance.or(self.tolerance)));
        }

        let mut seen = BTreeSet::new();
        let mut phis = Vec::with_capacity(self.phis.len());
        for id in &self.phis {
            if !seen.insert(id.as_str()) {
                return Err(invalid(format!("test function `{id}` appears twice")));
            }
            phis.push(TestFunction::builtin(id)?);
        }

        Ok(ValidatedExperiment {
            problem,
            schemes,
            phis,
            ladder,
            reference_steps,
        })
    }
}

fn default_explosion_model() -> ModelConfig {
    ModelConfig::new("quintic", Some(vec![8.0]))
}

fn default_explosion_scheme() -> SchemeConfig {
    SchemeConfig::new("em")
}

fn default_explosion_h() -> f64 {
    2f64.powi(-10)
}

fn default_explosion_m() -> usize {
    10_000
}

fn default_explosion_output_dir() -> PathBuf {
    PathBuf::from("explosion")
}

/// Counts exploding trajectories of one scheme at one step size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplosionConfig {
    #[serde(default = "default_seed")]
    pub seed: u32,
    #[serde(rename = "M", default = "default_explosion_m")]
    pub n_trajectories: usize,
    #[serde(default = "default_explosion_h")]
    pub h: f64,
    #[serde(default = "default_explosion_output_dir", skip_serializing)]
    pub output_dir: PathBuf,
    #[serde(default = "default_explosion_model")]
    pub model: ModelConfig,
    #[serde(default = "default_explosion_scheme")]
    pub scheme: SchemeConfig,
}

impl Default for ExplosionConfig {
    fn default() -> Self {
        ExplosionConfig {
            seed: DEFAULT_SEED,
            n_trajectories: default_explosion_m(),
            h: default_explosion_h(),
            output_dir: default_explosion_output_dir(),
            model: default_explosion_model(),
            scheme: default_explosion_scheme(),
        }
    }
}

impl ExplosionConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(arg: &str) -> Result<Self, ConfigError> {
        let path = Path::new(arg);
        if path.is_file() {
            let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
                path: path.to_path_buf(),
                source,
            })?;
            return Self::from_toml_str(&text);
        }
        explosion_preset(arg).ok_or_else(|| ConfigError::UnknownPreset(arg.to_string()))
    }

    /// Returns the model, the scheme and the number of steps.
    pub fn validate(&self) -> Result<(SdeProblem, SchemeSpec, usize), ConfigError> {
        if self.n_trajectories == 0 {
            return Err(invalid("M must be positive"));
        }
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(invalid(format!("step {} is not positive", self.h)));
        }
        let problem = self.model.build()?;
        let spec = self.scheme.spec()?;
        let n = steps_for(problem.horizon, self.h).map_err(|_| {
            invalid(format!(
                "step {} does not divide the horizon {}",
                self.h, problem.horizon
            ))
        })?;
        Ok((problem, spec, n))
    }
}

pub const PRESET_NAMES: [&str; 8] = [
    "paper-fig1",
    "paper-fig2",
    "paper-fig3",
    "paper-fig4",
    "desk-fig1",
    "desk-fig2",
    "desk-fig3",
    "desk-fig4",
];

pub const EXPLOSION_PRESET_NAMES: [&str; 2] = ["explode-em", "explode-bem"];

fn ladder(k: std::ops::RangeInclusive<i32>) -> Vec<f64> {
    k.map(|k| 2f64.powi(-k)).collect()
}

fn quintic_schemes() -> Vec<SchemeConfig> {
    vec![
        SchemeConfig::new("bem"),
        SchemeConfig::new("fte1")
            .with_param("alpha1", 0.5)
            .with_param("alpha2", 0.5),
        SchemeConfig::new("fte2").with_param("vartheta", 0.5),
        SchemeConfig::new("mes"),
        SchemeConfig::new("bs"),
        SchemeConfig::new("bts"),
    ]
}

fn fhn_schemes() -> Vec<SchemeConfig> {
    vec![
        SchemeConfig::new("bem"),
        SchemeConfig::new("fte1")
            .with_param("alpha1", 0.5)
            .with_param("alpha2", 0.5),
        SchemeConfig::new("fte2").with_param("vartheta", 0.5),
        SchemeConfig::new("mes"),
        SchemeConfig::new("dte"),
        SchemeConfig::new("bs"),
    ]
}

/// Built-in experiments. `paper-*` use the full-scale sample sizes, `desk-*`
/// reduced ones: fig1/fig3 test `x, x^2`, fig2/fig4 test `cos x, exp(-x^2)`;
/// fig1/fig2 run the quintic model, fig3/fig4 FitzHugh-Nagumo.
pub fn preset(name: &str) -> Option<ExperimentConfig> {
    let (scale, fig) = name.split_once("-fig")?;
    let fig: u32 = fig.parse().ok()?;
    let quintic = match fig {
        1 | 2 => true,
        3 | 4 => false,
        _ => return None,
    };
    let phis: Vec<String> = if fig % 2 == 1 {
        vec!["identity".into(), "square".into()]
    } else {
        vec!["cos".into(), "exp_neg_sq".into()]
    };
    let (h_ladder, n_trajectories, h_ref, n_reference) = match (scale, quintic) {
        ("paper", true) => (ladder(6..=10), 3_000_000, 2f64.powi(-14), 3_000_000),
        ("paper", false) => (ladder(7..=11), 1_000_000, 2f64.powi(-14), 1_000_000),
        ("desk", true) => (ladder(4..=8), 100_000, 2f64.powi(-12), 100_000),
        ("desk", false) => (ladder(5..=9), 100_000, 2f64.powi(-12), 100_000),
        _ => return None,
    };
    let (model, schemes) = if quintic {
        (ModelConfig::new("quintic", Some(vec![2.0])), quintic_schemes())
    } else {
        (ModelConfig::new("fhn", Some(vec![0.0, 0.0])), fhn_schemes())
    };
    Some(ExperimentConfig {
        seed: DEFAULT_SEED,
        n_trajectories,
        h_ladder,
        h_ref,
        n_reference,
        phis,
        tolerance: None,
        output_dir: PathBuf::from(name),
        model,
        schemes,
    })
}

/// Quintic model started at `x0 = 8` with `h = 2^-10` and `M = 10^4`,
/// integrated with Euler-Maruyama or backward Euler.
pub fn explosion_preset(name: &str) -> Option<ExplosionConfig> {
    let scheme = match name {
        "explode-em" => "em",
        "explode-bem" => "bem",
        _ => return None,
    };
    Some(ExplosionConfig {
        scheme: SchemeConfig::new(scheme),
        output_dir: PathBuf::from(name),
        ..ExplosionConfig::default()
    })
}
