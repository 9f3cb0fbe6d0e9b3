//! One-step integrators behind a common [`Scheme`] trait, selected by
//! string id through a [`SchemeRegistry`].

mod explicit;
mod implicit;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{SchemeError, StepError};
use crate::model::{euclidean_norm, SdeProblem};
use crate::rng::RngStream;

pub use explicit::{
    step_euler_maruyama, Balanced, BalancedType, DriftTamed, EulerMaruyama, FullyTamed1, FullyTamed2,
    ModifiedCoefficients, ModifiedEuler, Modifier, SquaredDriftTamed,
};
pub use implicit::{lu_solve, step_backward_euler, BackwardEuler, DEFAULT_NEWTON_MAX_ITER, DEFAULT_NEWTON_TOL};

/// Trajectories whose state norm exceeds this are treated as exploded.
pub const EXPLOSION_THRESHOLD: f64 = 1e10;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StepStats {
    pub newton_iterations: u32,
}

/// Scratch buffers sized for one problem, reused across steps.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub(crate) f: Vec<f64>,
    pub(crate) g: Vec<f64>,
    pub(crate) gdw: Vec<f64>,
    pub(crate) rhs: Vec<f64>,
    pub(crate) delta: Vec<f64>,
    pub(crate) jac: Vec<f64>,
}

impl Workspace {
    pub fn new(problem: &SdeProblem) -> Self {
        let d = problem.dim_state;
        Workspace {
            f: vec![0.0; d],
            g: vec![0.0; d * problem.dim_noise],
            gdw: vec![0.0; d],
            rhs: vec![0.0; d],
            delta: vec![0.0; d],
            jac: vec![0.0; d * d],
        }
    }
}

/// A one-step map `Y_n -> Y_{n+1}` given the step `h` and increment `dW`.
pub trait Scheme: Send + Sync {
    fn id(&self) -> &str;

    fn step(
        &self,
        problem: &SdeProblem,
        x: &[f64],
        h: f64,
        dw: &[f64],
        ws: &mut Workspace,
        out: &mut [f64],
    ) -> Result<StepStats, StepError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemeKind {
    Em,
    Fte1,
    Fte2,
    Mes,
    Dte,
    Bs,
    Bts,
    Bem,
}

impl SchemeKind {
    pub const ALL: [SchemeKind; 8] = [
        SchemeKind::Em,
        SchemeKind::Fte1,
        SchemeKind::Fte2,
        SchemeKind::Mes,
        SchemeKind::Dte,
        SchemeKind::Bs,
        SchemeKind::Bts,
        SchemeKind::Bem,
    ];

    pub fn id(self) -> &'static str {
        match self {
            SchemeKind::Em => "em",
            SchemeKind::Fte1 => "fte1",
            SchemeKind::Fte2 => "fte2",
            SchemeKind::Mes => "mes",
            SchemeKind::Dte => "dte",
            SchemeKind::Bs => "bs",
            SchemeKind::Bts => "bts",
            SchemeKind::Bem => "bem",
        }
    }

    pub fn from_id(id: &str) -> Result<Self, SchemeError> {
        Self::ALL
            .into_iter()
            .find(|k| k.id() == id)
            .ok_or_else(|| SchemeError::UnknownScheme(id.to_string()))
    }

    fn parameter_keys(self) -> &'static [&'static str] {
        match self {
            SchemeKind::Fte1 => &["alpha1", "alpha2"],
            SchemeKind::Fte2 => &["vartheta"],
            SchemeKind::Bem => &["newton_tol", "newton_max_iter"],
            _ => &[],
        }
    }
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

/// Which integrator to run and its parameters. Parameters that do not
/// apply to `kind` are carried at their defaults and ignored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchemeSpec {
    pub kind: SchemeKind,
    pub alpha1: f64,
    pub alpha2: f64,
    pub vartheta: f64,
    pub newton_tol: f64,
    pub newton_max_iter: u32,
}

fn check_taming_exponent(kind: SchemeKind, name: &str, value: f64) -> Result<(), SchemeError> {
    if value > 0.0 && value <= 0.5 {
        Ok(())
    } else {
        Err(SchemeError::InvalidParameter {
            scheme: kind.id().to_string(),
            message: format!("{name} must lie in (0, 1/2], got {value}"),
        })
    }
}

impl SchemeSpec {
    pub fn new(kind: SchemeKind) -> Self {
        SchemeSpec {
            kind,
            alpha1: 0.5,
            alpha2: 0.5,
            vartheta: 0.5,
            newton_tol: DEFAULT_NEWTON_TOL,
            newton_max_iter: DEFAULT_NEWTON_MAX_ITER,
        }
    }

    pub fn fte1(alpha1: f64, alpha2: f64) -> Result<Self, SchemeError> {
        let spec = SchemeSpec {
            alpha1,
            alpha2,
            ..Self::new(SchemeKind::Fte1)
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn fte2(vartheta: f64) -> Result<Self, SchemeError> {
        let spec = SchemeSpec {
            vartheta,
            ..Self::new(SchemeKind::Fte2)
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn bem(newton_tol: f64, newton_max_iter: u32) -> Result<Self, SchemeError> {
        let spec = SchemeSpec {
            newton_tol,
            newton_max_iter,
            ..Self::new(SchemeKind::Bem)
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Builds a spec from a scheme id and keyed parameter values.
    pub fn from_params(id: &str, params: &BTreeMap<String, f64>) -> Result<Self, SchemeError> {
        let kind = SchemeKind::from_id(id)?;
        let mut spec = Self::new(kind);
        for (key, &value) in params {
            if !kind.parameter_keys().contains(&key.as_str()) {
                return Err(SchemeError::UnknownParameter {
                    scheme: id.to_string(),
                    key: key.clone(),
                });
            }
            match key.as_str() {
                "alpha1" => spec.alpha1 = value,
                "alpha2" => spec.alpha2 = value,
                "vartheta" => spec.vartheta = value,
                "newton_tol" => spec.newton_tol = value,
                "newton_max_iter" => {
                    if value.fract() != 0.0 || !(1.0..=u32::MAX as f64).contains(&value) {
                        return Err(SchemeError::InvalidParameter {
                            scheme: id.to_string(),
                            message: format!("newton_max_iter must be a positive integer, got {value}"),
                        });
                    }
                    spec.newton_max_iter = value as u32;
                }
                _ => unreachable!("keys are filtered above"),
            }
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), SchemeError> {
        match self.kind {
            SchemeKind::Fte1 => {
                check_taming_exponent(self.kind, "alpha1", self.alpha1)?;
                check_taming_exponent(self.kind, "alpha2", self.alpha2)
            }
            SchemeKind::Fte2 => check_taming_exponent(self.kind, "vartheta", self.vartheta),
            SchemeKind::Bem => {
                if !(self.newton_tol > 0.0 && self.newton_tol.is_finite()) {
                    return Err(SchemeError::InvalidParameter {
                        scheme: "bem".into(),
                        message: format!("newton_tol must be positive, got {}", self.newton_tol),
                    });
                }
                if self.newton_max_iter == 0 {
                    return Err(SchemeError::InvalidParameter {
                        scheme: "bem".into(),
                        message: "newton_max_iter must be positive".into(),
                    });
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn id(&self) -> &'static str {
        self.kind.id()
    }

    /// The parameters that apply to this kind, for reports.
    pub fn parameters(&self) -> BTreeMap<String, f64> {
        let mut out = BTreeMap::new();
        for key in self.kind.parameter_keys() {
            let v = match *key {
                "alpha1" => self.alpha1,
                "alpha2" => self.alpha2,
                "vartheta" => self.vartheta,
                "newton_tol" => self.newton_tol,
                _ => f64::from(self.newton_max_iter),
            };
            out.insert(key.to_string(), v);
        }
        out
    }

    /// Instantiates the scheme through the built-in registry.
    pub fn build(&self) -> Result<Box<dyn Scheme>, SchemeError> {
        SchemeRegistry::builtin().build(self)
    }
}

type SchemeFactory = fn(&SchemeSpec) -> Box<dyn Scheme>;

pub struct SchemeEntry {
    pub kind: SchemeKind,
    pub description: &'static str,
    factory: SchemeFactory,
}

/// Schemes addressable by id.
pub struct SchemeRegistry {
    entries: Vec<SchemeEntry>,
}

impl Default for SchemeRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

impl SchemeRegistry {
    pub fn empty() -> Self {
        SchemeRegistry { entries: Vec::new() }
    }

    pub fn builtin() -> Self {
        let mut reg = Self::empty();
        reg.register(SchemeKind::Em, "explicit Euler-Maruyama", |_| Box::new(EulerMaruyama));
        reg.register(
            SchemeKind::Fte1,
            "fully tamed Euler, f,g / (1 + h^alpha1 |f| + h^alpha2 ||g||^2)",
            |s| {
                Box::new(ModifiedEuler::new(FullyTamed1 {
                    alpha1: s.alpha1,
                    alpha2: s.alpha2,
                }))
            },
        );
        reg.register(
            SchemeKind::Fte2,
            "fully tamed Euler, f,g / (1 + h^vartheta |x|^(2r))",
            |s| Box::new(ModifiedEuler::new(FullyTamed2 { vartheta: s.vartheta })),
        );
        reg.register(SchemeKind::Mes, "modified Euler, f,g / (1 + h |f|^2)", |_| {
            Box::new(ModifiedEuler::new(SquaredDriftTamed))
        });
        reg.register(SchemeKind::Dte, "drift-tamed Euler, f / (1 + h |f|)", |_| {
            Box::new(ModifiedEuler::new(DriftTamed))
        });
        reg.register(
            SchemeKind::Bs,
            "balanced scheme, tanh(h f)/h, tanh(sqrt(h) g)/sqrt(h)",
            |_| Box::new(ModifiedEuler::new(Balanced)),
        );
        reg.register(
            SchemeKind::Bts,
            "balanced-type scheme, f,g / (1 + h |f| + |g dW|)",
            |_| Box::new(ModifiedEuler::new(BalancedType)),
        );
        reg.register(
            SchemeKind::Bem,
            "drift-implicit backward Euler with Newton solves",
            |s| {
                Box::new(BackwardEuler {
                    newton_tol: s.newton_tol,
                    newton_max_iter: s.newton_max_iter,
                })
            },
        );
        reg
    }

    pub fn register(&mut self, kind: SchemeKind, description: &'static str, factory: SchemeFactory) {
        self.entries.retain(|e| e.kind != kind);
        self.entries.push(SchemeEntry {
            kind,
            description,
            factory,
        });
    }

    pub fn entries(&self) -> impl Iterator<Item = &SchemeEntry> {
        self.entries.iter()
    }

    pub fn build(&self, spec: &SchemeSpec) -> Result<Box<dyn Scheme>, SchemeError> {
        spec.validate()?;
        let entry = self
            .entries
            .iter()
            .find(|e| e.kind == spec.kind)
            .ok_or_else(|| SchemeError::UnknownScheme(spec.id().to_string()))?;
        Ok((entry.factory)(spec))
    }
}

/// Terminal (or last finite) state of one simulated trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct PathState {
    pub state: Vec<f64>,
    pub exploded: bool,
    pub steps_completed: usize,
    /// Largest Newton iteration count over all steps (0 for explicit schemes).
    pub max_newton_iterations: u32,
    pub newton_failed: bool,
}

fn is_exploded(y: &[f64]) -> bool {
    y.iter().any(|v| !v.is_finite()) || euclidean_norm(y) > EXPLOSION_THRESHOLD
}

/// Runs `n_steps` steps of size `horizon / n_steps` from the initial state,
/// drawing increments step by step from `stream`. Stops at the first
/// explosion or Newton failure.
pub fn simulate_trajectory(
    problem: &SdeProblem,
    scheme: &dyn Scheme,
    n_steps: usize,
    stream: &mut RngStream,
) -> PathState {
    assert!(n_steps >= 1, "at least one step is required");
    let h = problem.horizon / n_steps as f64;
    let mut ws = Workspace::new(problem);
    let mut y = problem.initial_state.clone();
    let mut next = vec![0.0; problem.dim_state];
    let mut dw = vec![0.0; problem.dim_noise];
    let mut path = PathState {
        state: Vec::new(),
        exploded: false,
        steps_completed: 0,
        max_newton_iterations: 0,
        newton_failed: false,
    };
    for _ in 0..n_steps {
        stream.fill_increment(h, &mut dw);
        match scheme.step(problem, &y, h, &dw, &mut ws, &mut next) {
            Ok(stats) => {
                path.max_newton_iterations = path.max_newton_iterations.max(stats.newton_iterations);
            }
            Err(StepError::NewtonDivergence { iterations }) => {
                path.max_newton_iterations = path.max_newton_iterations.max(iterations);
                path.newton_failed = true;
                path.exploded = true;
                break;
            }
        }
        std::mem::swap(&mut y, &mut next);
        path.steps_completed += 1;
        if is_exploded(&y) {
            path.exploded = true;
            break;
        }
    }
    path.state = y;
    path
}
