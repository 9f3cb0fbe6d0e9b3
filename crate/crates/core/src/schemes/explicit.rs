//! Explicit one-step maps: Euler-Maruyama and the modified-Euler family
//! `Y' = Y + fbar_h(Y) h + gbar_h(Y) dW`.

use crate::error::StepError;
use crate::model::{euclidean_norm, frobenius_norm, mat_vec, SdeProblem};

use super::{Scheme, StepStats, Workspace};

/// `x + f(x) h + g(x) dW`, written into `out`.
pub fn step_euler_maruyama(problem: &SdeProblem, x: &[f64], h: f64, dw: &[f64], out: &mut [f64]) {
    let mut ws = Workspace::new(problem);
    EulerMaruyama.advance(problem, x, h, dw, &mut ws, out);
}

pub struct EulerMaruyama;

impl EulerMaruyama {
    fn advance(&self, problem: &SdeProblem, x: &[f64], h: f64, dw: &[f64], ws: &mut Workspace, out: &mut [f64]) {
        problem.drift(x, &mut ws.f);
        problem.diffusion(x, &mut ws.g);
        mat_vec(&ws.g, problem.dim_noise, dw, &mut ws.gdw);
        for i in 0..problem.dim_state {
            out[i] = x[i] + ws.f[i] * h + ws.gdw[i];
        }
    }
}

impl Scheme for EulerMaruyama {
    fn id(&self) -> &str {
        "em"
    }

    fn step(
        &self,
        problem: &SdeProblem,
        x: &[f64],
        h: f64,
        dw: &[f64],
        ws: &mut Workspace,
        out: &mut [f64],
    ) -> Result<StepStats, StepError> {
        self.advance(problem, x, h, dw, ws, out);
        Ok(StepStats::default())
    }
}

/// Modified drift and diffusion `(fbar_h(x), gbar_h(x))`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModifiedCoefficients {
    pub f_bar: Vec<f64>,
    /// Row-major `d x m`.
    pub g_bar: Vec<f64>,
}

/// Turns `f(x)`, `g(x)` into `fbar_h(x)`, `gbar_h(x)` in place.
///
/// `dw` is the increment of the step being taken. Only the balanced-type
/// modifier reads it; every other modifier is deterministic.
pub trait Modifier: Send + Sync {
    fn id(&self) -> &'static str;

    fn modify(&self, problem: &SdeProblem, x: &[f64], h: f64, dw: &[f64], f: &mut [f64], g: &mut [f64]);

    fn coefficients(&self, problem: &SdeProblem, x: &[f64], h: f64, dw: &[f64]) -> ModifiedCoefficients {
        let mut f_bar = problem.drift_at(x);
        let mut g_bar = problem.diffusion_at(x);
        self.modify(problem, x, h, dw, &mut f_bar, &mut g_bar);
        ModifiedCoefficients { f_bar, g_bar }
    }
}

fn scale(v: &mut [f64], factor: f64) {
    v.iter_mut().for_each(|a| *a *= factor);
}

/// Fully tamed Euler, model 1: both coefficients divided by
/// `1 + h^alpha1 |f| + h^alpha2 ||g||^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FullyTamed1 {
    pub alpha1: f64,
    pub alpha2: f64,
}

impl Modifier for FullyTamed1 {
    fn id(&self) -> &'static str {
        "fte1"
    }

    fn modify(&self, _problem: &SdeProblem, _x: &[f64], h: f64, _dw: &[f64], f: &mut [f64], g: &mut [f64]) {
        let g_norm = frobenius_norm(g);
        let denom = 1.0 + h.powf(self.alpha1) * euclidean_norm(f) + h.powf(self.alpha2) * g_norm * g_norm;
        scale(f, 1.0 / denom);
        scale(g, 1.0 / denom);
    }
}

/// Fully tamed Euler, model 2: both coefficients divided by
/// `1 + h^vartheta |x|^(2r)` with `r` the drift growth exponent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FullyTamed2 {
    pub vartheta: f64,
}

impl Modifier for FullyTamed2 {
    fn id(&self) -> &'static str {
        "fte2"
    }

    fn modify(&self, problem: &SdeProblem, x: &[f64], h: f64, _dw: &[f64], f: &mut [f64], g: &mut [f64]) {
        let denom = 1.0 + h.powf(self.vartheta) * euclidean_norm(x).powf(2.0 * problem.growth_r);
        scale(f, 1.0 / denom);
        scale(g, 1.0 / denom);
    }
}

/// Both coefficients divided by `1 + h |f|^2`; first-order weak scheme.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SquaredDriftTamed;

impl Modifier for SquaredDriftTamed {
    fn id(&self) -> &'static str {
        "mes"
    }

    fn modify(&self, _problem: &SdeProblem, _x: &[f64], h: f64, _dw: &[f64], f: &mut [f64], g: &mut [f64]) {
        let f_norm = euclidean_norm(f);
        let denom = 1.0 + h * f_norm * f_norm;
        scale(f, 1.0 / denom);
        scale(g, 1.0 / denom);
    }
}

/// Drift divided by `1 + h |f|`; diffusion left untouched.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DriftTamed;

impl Modifier for DriftTamed {
    fn id(&self) -> &'static str {
        "dte"
    }

    fn modify(&self, _problem: &SdeProblem, _x: &[f64], h: f64, _dw: &[f64], f: &mut [f64], _g: &mut [f64]) {
        let denom = 1.0 + h * euclidean_norm(f);
        scale(f, 1.0 / denom);
    }
}

/// Balanced scheme: `tanh(h f)/h` componentwise and
/// `tanh(sqrt(h) g)/sqrt(h)` entrywise.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Balanced;

impl Modifier for Balanced {
    fn id(&self) -> &'static str {
        "bs"
    }

    fn modify(&self, _problem: &SdeProblem, _x: &[f64], h: f64, _dw: &[f64], f: &mut [f64], g: &mut [f64]) {
        let sqrt_h = h.sqrt();
        f.iter_mut().for_each(|a| *a = (h * *a).tanh() / h);
        g.iter_mut().for_each(|a| *a = (sqrt_h * *a).tanh() / sqrt_h);
    }
}

/// Balanced-type scheme: both coefficients divided by
/// `1 + h |f| + |g dW|`, using the increment of the current step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BalancedType;

impl Modifier for BalancedType {
    fn id(&self) -> &'static str {
        "bts"
    }

    fn modify(&self, problem: &SdeProblem, _x: &[f64], h: f64, dw: &[f64], f: &mut [f64], g: &mut [f64]) {
        let noise: f64 = g
            .chunks_exact(problem.dim_noise)
            .map(|row| {
                let v: f64 = row.iter().zip(dw).map(|(a, w)| a * w).sum();
                v * v
            })
            .sum::<f64>()
            .sqrt();
        let denom = 1.0 + h * euclidean_norm(f) + noise;
        scale(f, 1.0 / denom);
        scale(g, 1.0 / denom);
    }
}

/// The modified-Euler template around one [`Modifier`].
pub struct ModifiedEuler<M> {
    pub modifier: M,
}

impl<M: Modifier> ModifiedEuler<M> {
    pub fn new(modifier: M) -> Self {
        ModifiedEuler { modifier }
    }
}

impl<M: Modifier> Scheme for ModifiedEuler<M> {
    fn id(&self) -> &str {
        self.modifier.id()
    }

    fn step(
        &self,
        problem: &SdeProblem,
        x: &[f64],
        h: f64,
        dw: &[f64],
        ws: &mut Workspace,
        out: &mut [f64],
    ) -> Result<StepStats, StepError> {
        problem.drift(x, &mut ws.f);
        problem.diffusion(x, &mut ws.g);
        self.modifier.modify(problem, x, h, dw, &mut ws.f, &mut ws.g);
        mat_vec(&ws.g, problem.dim_noise, dw, &mut ws.gdw);
        for i in 0..problem.dim_state {
            out[i] = x[i] + ws.f[i] * h + ws.gdw[i];
        }
        Ok(StepStats::default())
    }
}
