//! SDE problem definitions and the built-in model catalog.
//!
//! Problems are autonomous Itô SDEs `dX = f(X) dt + g(X) dW` on `R^d`
//! driven by an `m`-dimensional Brownian motion. Matrices (the diffusion
//! `g` and the drift Jacobian) are dense and row-major.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use crate::error::ModelError;

/// `x -> out`, written into a caller-provided buffer.
pub type VectorField = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// Closed-form first and second moments of the first coordinate at the horizon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalyticMoments {
    pub mean: f64,
    pub variance: f64,
}

impl AnalyticMoments {
    pub fn second_moment(&self) -> f64 {
        self.variance + self.mean * self.mean
    }
}

#[derive(Clone)]
pub struct SdeProblem {
    pub name: String,
    pub dim_state: usize,
    pub dim_noise: usize,
    drift: VectorField,
    diffusion: VectorField,
    drift_jacobian: Option<VectorField>,
    pub growth_r: f64,
    pub growth_rho: f64,
    pub initial_state: Vec<f64>,
    pub horizon: f64,
    pub moments: Option<AnalyticMoments>,
}

impl fmt::Debug for SdeProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SdeProblem")
            .field("name", &self.name)
            .field("dim_state", &self.dim_state)
            .field("dim_noise", &self.dim_noise)
            .field("has_jacobian", &self.drift_jacobian.is_some())
            .field("growth_r", &self.growth_r)
            .field("growth_rho", &self.growth_rho)
            .field("initial_state", &self.initial_state)
            .field("horizon", &self.horizon)
            .finish()
    }
}

impl SdeProblem {
    /// A problem with zero initial state, unit horizon and zero growth exponents.
    pub fn new(
        name: impl Into<String>,
        dim_state: usize,
        dim_noise: usize,
        drift: VectorField,
        diffusion: VectorField,
    ) -> Result<Self, ModelError> {
        if dim_state == 0 || dim_noise == 0 {
            return Err(ModelError::Dimension { dim_state, dim_noise });
        }
        Ok(SdeProblem {
            name: name.into(),
            dim_state,
            dim_noise,
            drift,
            diffusion,
            drift_jacobian: None,
            growth_r: 0.0,
            growth_rho: 0.0,
            initial_state: vec![0.0; dim_state],
            horizon: 1.0,
            moments: None,
        })
    }

    pub fn with_jacobian(mut self, jacobian: VectorField) -> Self {
        self.drift_jacobian = Some(jacobian);
        self
    }

    pub fn with_growth(mut self, r: f64, rho: f64) -> Result<Self, ModelError> {
        if !(r >= 0.0 && rho >= 0.0) {
            return Err(ModelError::Parameter(format!(
                "growth exponents must be nonnegative, got r={r}, rho={rho}"
            )));
        }
        self.growth_r = r;
        self.growth_rho = rho;
        Ok(self)
    }

    pub fn with_initial_state(mut self, x0: Vec<f64>) -> Result<Self, ModelError> {
        if x0.len() != self.dim_state {
            return Err(ModelError::Parameter(format!(
                "initial state has length {}, expected {}",
                x0.len(),
                self.dim_state
            )));
        }
        if x0.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::Parameter("initial state must be finite".into()));
        }
        self.initial_state = x0;
        Ok(self)
    }

    pub fn with_horizon(mut self, horizon: f64) -> Result<Self, ModelError> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(ModelError::Parameter(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        self.horizon = horizon;
        Ok(self)
    }

    pub fn drift(&self, x: &[f64], out: &mut [f64]) {
        (self.drift)(x, out)
    }

    /// Writes the `dim_state x dim_noise` diffusion matrix, row-major.
    pub fn diffusion(&self, x: &[f64], out: &mut [f64]) {
        (self.diffusion)(x, out)
    }

    pub fn has_jacobian(&self) -> bool {
        self.drift_jacobian.is_some()
    }

    /// Drift Jacobian `Df(x)` (row-major `d x d`). Falls back to forward
    /// differences when no analytic Jacobian was supplied.
    pub fn drift_jacobian(&self, x: &[f64], out: &mut [f64]) {
        match &self.drift_jacobian {
            Some(jac) => jac(x, out),
            None => forward_difference_jacobian(self, x, out),
        }
    }

    pub fn drift_at(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim_state];
        self.drift(x, &mut out);
        out
    }

    pub fn diffusion_at(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim_state * self.dim_noise];
        self.diffusion(x, &mut out);
        out
    }

    pub fn jacobian_at(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim_state * self.dim_state];
        self.drift_jacobian(x, &mut out);
        out
    }
}

/// Forward-difference drift Jacobian with step `1e-7 * max(1, |x_j|)`.
pub fn forward_difference_jacobian(problem: &SdeProblem, x: &[f64], out: &mut [f64]) {
    let d = problem.dim_state;
    let mut base = vec![0.0; d];
    let mut bumped = vec![0.0; d];
    let mut xp = x.to_vec();
    problem.drift(x, &mut base);
    for j in 0..d {
        let step = 1e-7 * x[j].abs().max(1.0);
        xp[j] = x[j] + step;
        problem.drift(&xp, &mut bumped);
        for i in 0..d {
            out[i * d + j] = (bumped[i] - base[i]) / step;
        }
        xp[j] = x[j];
    }
}

pub fn euclidean_norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Trace (Frobenius) norm `sqrt(trace(A^T A))`.
pub fn frobenius_norm(a: &[f64]) -> f64 {
    euclidean_norm(a)
}

/// `out = a * v` for a row-major `rows x cols` matrix.
pub fn mat_vec(a: &[f64], cols: usize, v: &[f64], out: &mut [f64]) {
    for (row, o) in a.chunks_exact(cols).zip(out.iter_mut()) {
        *o = row.iter().zip(v).map(|(x, y)| x * y).sum();
    }
}

/// `dX = (1 - X^5 + X^3) dt + (X^2/10 + 2) dW` on `[0, 1]`.
pub fn make_quintic_model(x0: f64) -> SdeProblem {
    let drift: VectorField = Arc::new(|x: &[f64], out: &mut [f64]| {
        let v = x[0];
        let v3 = v * v * v;
        out[0] = 1.0 - v3 * v * v + v3;
    });
    let diffusion: VectorField = Arc::new(|x: &[f64], out: &mut [f64]| {
        out[0] = 0.1 * x[0] * x[0] + 2.0;
    });
    let jacobian: VectorField = Arc::new(|x: &[f64], out: &mut [f64]| {
        let v2 = x[0] * x[0];
        out[0] = -5.0 * v2 * v2 + 3.0 * v2;
    });
    SdeProblem::new("quintic", 1, 1, drift, diffusion)
        .and_then(|p| p.with_growth(2.0, 2.0))
        .and_then(|p| p.with_initial_state(vec![x0]))
        .map(|p| p.with_jacobian(jacobian))
        .expect("quintic model parameters are valid")
}

/// Stochastic FitzHugh-Nagumo model with multiplicative diagonal noise,
/// started at the origin on `[0, 1]`.
pub fn make_fhn_model() -> SdeProblem {
    let drift: VectorField = Arc::new(|x: &[f64], out: &mut [f64]| {
        let (v, w) = (x[0], x[1]);
        out[0] = v - v * v * v - w;
        out[1] = v - w + 1.0;
    });
    let diffusion: VectorField = Arc::new(|x: &[f64], out: &mut [f64]| {
        out[0] = x[0] + 1.0;
        out[1] = 0.0;
        out[2] = 0.0;
        out[3] = x[1] + 1.0;
    });
    let jacobian: VectorField = Arc::new(|x: &[f64], out: &mut [f64]| {
        out[0] = 1.0 - 3.0 * x[0] * x[0];
        out[1] = -1.0;
        out[2] = 1.0;
        out[3] = -1.0;
    });
    SdeProblem::new("fhn", 2, 2, drift, diffusion)
        .and_then(|p| p.with_growth(1.0, 1.0))
        .map(|p| p.with_jacobian(jacobian))
        .expect("FHN model parameters are valid")
}

/// Scalar Ornstein-Uhlenbeck process `dX = -rate X dt + vol dW`, with its
/// exact terminal moments attached.
pub fn make_ou_model(rate: f64, vol: f64, x0: f64, horizon: f64) -> Result<SdeProblem, ModelError> {
    if !(rate > 0.0 && rate.is_finite()) {
        return Err(ModelError::Parameter(format!("OU rate must be positive, got {rate}")));
    }
    if !(vol >= 0.0 && vol.is_finite()) {
        return Err(ModelError::Parameter(format!("OU vol must be nonnegative, got {vol}")));
    }
    let drift: VectorField = Arc::new(move |x: &[f64], out: &mut [f64]| out[0] = -rate * x[0]);
    let diffusion: VectorField = Arc::new(move |_x: &[f64], out: &mut [f64]| out[0] = vol);
    let jacobian: VectorField = Arc::new(move |_x: &[f64], out: &mut [f64]| out[0] = -rate);
    let mut problem = SdeProblem::new("ou", 1, 1, drift, diffusion)?
        .with_growth(0.0, 0.0)?
        .with_initial_state(vec![x0])?
        .with_horizon(horizon)?
        .with_jacobian(jacobian);
    problem.moments = Some(AnalyticMoments {
        mean: x0 * (-rate * horizon).exp(),
        variance: vol * vol * (1.0 - (-2.0 * rate * horizon).exp()) / (2.0 * rate),
    });
    Ok(problem)
}

/// `f = 0`, `g = 0` in the given dimensions.
pub fn make_zero_model(dim_state: usize, dim_noise: usize, x0: Vec<f64>) -> Result<SdeProblem, ModelError> {
    let zero: VectorField = Arc::new(|_x: &[f64], out: &mut [f64]| out.fill(0.0));
    SdeProblem::new("zero", dim_state, dim_noise, zero.clone(), zero.clone())?
        .with_initial_state(x0)
        .map(|p| p.with_jacobian(zero))
}

/// Model parameters as given in a config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ModelParams {
    pub initial_state: Option<Vec<f64>>,
    pub values: BTreeMap<String, f64>,
}

impl ModelParams {
    fn get(&self, key: &str, default: f64) -> f64 {
        self.values.get(key).copied().unwrap_or(default)
    }

    fn reject_unknown(&self, model: &str, allowed: &[&str]) -> Result<(), ModelError> {
        match self.values.keys().find(|k| !allowed.contains(&k.as_str())) {
            Some(k) => Err(ModelError::UnknownParameter {
                model: model.to_string(),
                key: k.clone(),
            }),
            None => Ok(()),
        }
    }
}

type ModelFactory = fn(&ModelParams) -> Result<SdeProblem, ModelError>;

pub struct ModelEntry {
    pub id: &'static str,
    pub description: &'static str,
    factory: ModelFactory,
}

/// Code-registered models addressable by string id.
pub struct ModelRegistry {
    entries: Vec<ModelEntry>,
}

impl Default for ModelRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

impl ModelRegistry {
    pub fn empty() -> Self {
        ModelRegistry { entries: Vec::new() }
    }

    pub fn builtin() -> Self {
        let mut reg = Self::empty();
        reg.register(
            "quintic",
            "dX = (1 - X^5 + X^3) dt + (X^2/10 + 2) dW, T = 1, x0 = 2 (r = rho = 2)",
            build_quintic,
        );
        reg.register(
            "fhn",
            "stochastic FitzHugh-Nagumo, 2-d state, diagonal noise, x0 = (0, 0) (r = rho = 1)",
            build_fhn,
        );
        reg.register(
            "ou",
            "Ornstein-Uhlenbeck dX = -rate X dt + vol dW with closed-form moments",
            build_ou,
        );
        reg
    }

    pub fn register(&mut self, id: &'static str, description: &'static str, factory: ModelFactory) {
        self.entries.retain(|e| e.id != id);
        self.entries.push(ModelEntry {
            id,
            description,
            factory,
        });
    }

    pub fn entries(&self) -> impl Iterator<Item = &ModelEntry> {
        self.entries.iter()
    }

    pub fn build(&self, id: &str, params: &ModelParams) -> Result<SdeProblem, ModelError> {
        let entry = self
            .entries
            .iter()
            .find(|e| e.id == id)
            .ok_or_else(|| ModelError::UnknownModel(id.to_string()))?;
        (entry.factory)(params)
    }
}

fn scalar_x0(params: &ModelParams, default: f64) -> Result<f64, ModelError> {
    match params.initial_state.as_deref() {
        None => Ok(default),
        Some([v]) => Ok(*v),
        Some(other) => Err(ModelError::Parameter(format!(
            "scalar model expects a 1-element initial state, got {}",
            other.len()
        ))),
    }
}

fn build_quintic(params: &ModelParams) -> Result<SdeProblem, ModelError> {
    params.reject_unknown("quintic", &["horizon"])?;
    make_quintic_model(scalar_x0(params, 2.0)?).with_horizon(params.get("horizon", 1.0))
}

fn build_fhn(params: &ModelParams) -> Result<SdeProblem, ModelError> {
    params.reject_unknown("fhn", &["horizon"])?;
    let mut p = make_fhn_model().with_horizon(params.get("horizon", 1.0))?;
    if let Some(x0) = &params.initial_state {
        p = p.with_initial_state(x0.clone())?;
    }
    Ok(p)
}

fn build_ou(params: &ModelParams) -> Result<SdeProblem, ModelError> {
    params.reject_unknown("ou", &["rate", "vol", "horizon"])?;
    make_ou_model(
        params.get("rate", 2.0),
        params.get("vol", 1.0),
        scalar_x0(params, 1.0)?,
        params.get("horizon", 1.0),
    )
}

type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// A scalar functional `phi` of the terminal state.
#[derive(Clone)]
pub struct TestFunction {
    pub label: String,
    eval: ScalarFn,
}

impl fmt::Debug for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TestFunction").field("label", &self.label).finish()
    }
}

/// Ids of the built-in test functions, all applied to the first coordinate.
pub const BUILTIN_TEST_FUNCTIONS: [&str; 4] = ["identity", "square", "cos", "exp_neg_sq"];

impl TestFunction {
    pub fn new(label: impl Into<String>, eval: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        TestFunction {
            label: label.into(),
            eval: Arc::new(eval),
        }
    }

    pub fn builtin(id: &str) -> Result<Self, ModelError> {
        let phi = match id {
            "identity" => TestFunction::new(id, |x| x[0]),
            "square" => TestFunction::new(id, |x| x[0] * x[0]),
            "cos" => TestFunction::new(id, |x| x[0].cos()),
            "exp_neg_sq" => TestFunction::new(id, |x| (-x[0] * x[0]).exp()),
            other => return Err(ModelError::UnknownTestFunction(other.to_string())),
        };
        Ok(phi)
    }

    pub fn constant(c: f64) -> Self {
        TestFunction::new(format!("const({c})"), move |_| c)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.eval)(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn quintic_values() {
        let p = make_quintic_model(2.0);
        assert_eq!(p.drift_at(&[0.0]), vec![1.0]);
        assert_eq!(p.diffusion_at(&[0.0]), vec![2.0]);
        assert_eq!(p.drift_at(&[1.0]), vec![1.0]);
        assert_eq!((p.growth_r, p.growth_rho), (2.0, 2.0));
        assert_eq!(p.initial_state, vec![2.0]);
        assert_eq!(p.horizon, 1.0);
    }

    #[test]
    fn fhn_values() {
        let p = make_fhn_model();
        assert_eq!(p.drift_at(&[0.0, 0.0]), vec![0.0, 1.0]);
        assert_eq!(p.diffusion_at(&[0.0, 0.0]), vec![1.0, 0.0, 0.0, 1.0]);
        assert_eq!((p.growth_r, p.growth_rho), (1.0, 1.0));
        assert_eq!(p.initial_state, vec![0.0, 0.0]);
    }

    #[test]
    fn ou_moments() {
        let p = make_ou_model(2.0, 1.0, 1.0, 1.0).unwrap();
        let m = p.moments.unwrap();
        assert_relative_eq!(m.mean, 0.135_335_283_236_612_7, epsilon = 1e-15);
        assert_relative_eq!(m.variance, (1.0 - (-4.0f64).exp()) / 4.0, epsilon = 1e-15);

        let det = make_ou_model(2.0, 0.0, 3.0, 1.0).unwrap().moments.unwrap();
        assert_eq!(det.variance, 0.0);
        assert_relative_eq!(det.mean, 3.0 * (-2.0f64).exp());

        let centred = make_ou_model(1.5, 0.7, 0.0, 2.0).unwrap().moments.unwrap();
        assert_eq!(centred.mean, 0.0);
    }

    #[test]
    fn ou_rejects_bad_parameters() {
        assert!(make_ou_model(0.0, 1.0, 1.0, 1.0).is_err());
        assert!(make_ou_model(1.0, -1.0, 1.0, 1.0).is_err());
        assert!(make_ou_model(1.0, 1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn forward_difference_matches_analytic() {
        let p = make_fhn_model();
        let x = [0.7, -1.3];
        let mut fd = vec![0.0; 4];
        forward_difference_jacobian(&p, &x, &mut fd);
        for (a, b) in fd.iter().zip(p.jacobian_at(&x)) {
            assert!((a - b).abs() < 1e-5 * b.abs().max(1.0));
        }
    }

    #[test]
    fn registry_lookup() {
        let reg = ModelRegistry::builtin();
        let ids: Vec<_> = reg.entries().map(|e| e.id).collect();
        assert_eq!(ids, vec!["quintic", "fhn", "ou"]);
        let params = ModelParams {
            initial_state: Some(vec![8.0]),
            ..Default::default()
        };
        assert_eq!(reg.build("quintic", &params).unwrap().initial_state, vec![8.0]);
        assert!(matches!(reg.build("lorenz", &params), Err(ModelError::UnknownModel(_))));
        let mut bad = ModelParams::default();
        bad.values.insert("sigma".into(), 1.0);
        assert!(matches!(
            reg.build("ou", &bad),
            Err(ModelError::UnknownParameter { .. })
        ));
        let two = ModelParams {
            initial_state: Some(vec![1.0, 2.0]),
            ..Default::default()
        };
        assert!(reg.build("quintic", &two).is_err());
    }

    #[test]
    fn builtin_test_functions() {
        let x = [0.5, 9.0];
        assert_eq!(TestFunction::builtin("identity").unwrap().eval(&x), 0.5);
        assert_eq!(TestFunction::builtin("square").unwrap().eval(&x), 0.25);
        assert_eq!(TestFunction::builtin("cos").unwrap().eval(&x), 0.5f64.cos());
        assert_eq!(TestFunction::builtin("exp_neg_sq").unwrap().eval(&x), (-0.25f64).exp());
        assert!(TestFunction::builtin("sin").is_err());
    }
}
