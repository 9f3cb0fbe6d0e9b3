//! Drift-implicit (backward) Euler: `Y' = Y + f(Y') h + g(Y) dW`, solved
//! per step by undamped Newton iteration with a dense LU solve.

use crate::error::StepError;
use crate::model::{euclidean_norm, mat_vec, SdeProblem};

use super::{Scheme, StepStats, Workspace};

pub const DEFAULT_NEWTON_TOL: f64 = 1e-6;
pub const DEFAULT_NEWTON_MAX_ITER: u32 = 50;

/// Residual level at which an iterate is taken as an exact root.
const EXACT_RESIDUAL: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackwardEuler {
    pub newton_tol: f64,
    pub newton_max_iter: u32,
}

impl Default for BackwardEuler {
    fn default() -> Self {
        BackwardEuler {
            newton_tol: DEFAULT_NEWTON_TOL,
            newton_max_iter: DEFAULT_NEWTON_MAX_ITER,
        }
    }
}

/// Solves `a z = b` in place (`b` becomes `z`) by LU with partial pivoting.
/// Returns `false` for a numerically singular matrix.
pub fn lu_solve(a: &mut [f64], b: &mut [f64], n: usize) -> bool {
    if n == 1 {
        if a[0] == 0.0 || !a[0].is_finite() {
            return false;
        }
        b[0] /= a[0];
        return true;
    }
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))
            .unwrap_or(col);
        let p = a[pivot * n + col];
        if p == 0.0 || !p.is_finite() {
            return false;
        }
        if pivot != col {
            for k in 0..n {
                a.swap(col * n + k, pivot * n + k);
            }
            b.swap(col, pivot);
        }
        for row in col + 1..n {
            let factor = a[row * n + col] / p;
            if factor != 0.0 {
                for k in col..n {
                    a[row * n + k] -= factor * a[col * n + k];
                }
                b[row] -= factor * b[col];
            }
        }
    }
    for row in (0..n).rev() {
        let mut acc = b[row];
        for k in row + 1..n {
            acc -= a[row * n + k] * b[k];
        }
        b[row] = acc / a[row * n + row];
    }
    true
}

impl BackwardEuler {
    /// `out <- y - h f(y) - rhs`.
    fn residual(problem: &SdeProblem, y: &[f64], h: f64, rhs: &[f64], scratch: &mut [f64], out: &mut [f64]) {
        problem.drift(y, scratch);
        for i in 0..problem.dim_state {
            out[i] = y[i] - h * scratch[i] - rhs[i];
        }
    }

    fn solve(
        &self,
        problem: &SdeProblem,
        x: &[f64],
        h: f64,
        dw: &[f64],
        ws: &mut Workspace,
        out: &mut [f64],
    ) -> Result<StepStats, StepError> {
        let d = problem.dim_state;
        problem.diffusion(x, &mut ws.g);
        mat_vec(&ws.g, problem.dim_noise, dw, &mut ws.gdw);
        // rhs = x + g(x) dW
        for ((r, xi), gi) in ws.rhs.iter_mut().zip(x).zip(&ws.gdw) {
            *r = xi + gi;
        }

        // Start from the explicit Euler predictor with its drift tamed by
        // `1 + h |f(x)|`: equal to the plain predictor up to O(h^2) when
        // `h |f|` is small, and it cannot overshoot past the root when the
        // drift is stiff.
        problem.drift(x, &mut ws.f);
        let taming = 1.0 + h * euclidean_norm(&ws.f);
        for ((o, r), fi) in out.iter_mut().zip(&ws.rhs).zip(&ws.f) {
            *o = r + h * fi / taming;
        }
        Self::residual(problem, out, h, &ws.rhs, &mut ws.f, &mut ws.delta);

        let mut iterations = 0u32;
        loop {
            // ws.delta holds F(out) here.
            if iterations > 0 && euclidean_norm(&ws.delta) <= EXACT_RESIDUAL * euclidean_norm(out).max(1.0) {
                break;
            }
            if iterations == self.newton_max_iter {
                return Err(StepError::NewtonDivergence { iterations });
            }
            iterations += 1;

            problem.drift_jacobian(out, &mut ws.jac);
            for i in 0..d {
                for j in 0..d {
                    let identity = if i == j { 1.0 } else { 0.0 };
                    ws.jac[i * d + j] = identity - h * ws.jac[i * d + j];
                }
                ws.delta[i] = -ws.delta[i];
            }
            if !lu_solve(&mut ws.jac, &mut ws.delta, d) {
                return Err(StepError::NewtonDivergence { iterations });
            }
            for (o, di) in out.iter_mut().zip(&ws.delta) {
                *o += di;
            }
            let step_norm = euclidean_norm(&ws.delta);
            if !step_norm.is_finite() || out.iter().any(|v| !v.is_finite()) {
                return Err(StepError::NewtonDivergence { iterations });
            }
            if step_norm < self.newton_tol {
                break;
            }
            Self::residual(problem, out, h, &ws.rhs, &mut ws.f, &mut ws.delta);
        }
        Ok(StepStats {
            newton_iterations: iterations,
        })
    }
}

impl Scheme for BackwardEuler {
    fn id(&self) -> &str {
        "bem"
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
        self.solve(problem, x, h, dw, ws, out)
    }
}

/// One backward Euler step with default Newton settings.
pub fn step_backward_euler(
    problem: &SdeProblem,
    x: &[f64],
    h: f64,
    dw: &[f64],
    scheme: &BackwardEuler,
) -> Result<(Vec<f64>, StepStats), StepError> {
    let mut ws = Workspace::new(problem);
    let mut out = vec![0.0; problem.dim_state];
    let stats = scheme.step(problem, x, h, dw, &mut ws, &mut out)?;
    Ok((out, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{make_fhn_model, make_ou_model, make_quintic_model, SdeProblem, VectorField};
    use approx::assert_relative_eq;
    use std::sync::Arc;

    fn pure_noise_model() -> SdeProblem {
        let zero: VectorField = Arc::new(|_x: &[f64], out: &mut [f64]| out.fill(0.0));
        let vol: VectorField = Arc::new(|x: &[f64], out: &mut [f64]| out[0] = 1.0 + 0.5 * x[0]);
        SdeProblem::new("noise", 1, 1, zero.clone(), vol)
            .unwrap()
            .with_jacobian(zero)
    }

    #[test]
    fn zero_drift_is_solved_by_the_predictor() {
        let p = pure_noise_model();
        let (y, stats) = step_backward_euler(&p, &[2.0], 0.1, &[0.3], &BackwardEuler::default()).unwrap();
        assert_eq!(y, vec![2.0 + 2.0 * 0.3]);
        assert_eq!(stats.newton_iterations, 1);
    }

    #[test]
    fn linear_drift_needs_one_newton_iteration() {
        let p = make_ou_model(2.0, 1.0, 1.0, 1.0).unwrap();
        let (y, stats) = step_backward_euler(&p, &[1.0], 0.5, &[0.0], &BackwardEuler::default()).unwrap();
        assert_relative_eq!(y[0], 0.5, epsilon = 1e-15);
        assert_eq!(stats.newton_iterations, 1);
    }

    #[test]
    fn quintic_step_solves_the_implicit_equation() {
        let p = make_quintic_model(2.0);
        let (x, h, dw) = (2.0, 1.0 / 64.0, 0.05);
        let (y, _) = step_backward_euler(&p, &[x], h, &[dw], &BackwardEuler::default()).unwrap();
        let residual = y[0] - h * p.drift_at(&y)[0] - x - p.diffusion_at(&[x])[0] * dw;
        assert!(residual.abs() < 1e-9, "{residual}");
    }

    #[test]
    fn fhn_step_with_and_without_jacobian_agree() {
        let p = make_fhn_model();
        let d: VectorField = {
            let p = p.clone();
            Arc::new(move |x: &[f64], out: &mut [f64]| p.drift(x, out))
        };
        let g: VectorField = {
            let p = p.clone();
            Arc::new(move |x: &[f64], out: &mut [f64]| p.diffusion(x, out))
        };
        let no_jac = SdeProblem::new("fhn-fd", 2, 2, d, g).unwrap();
        let x = [0.8, -0.4];
        let dw = [0.1, -0.05];
        let scheme = BackwardEuler::default();
        let (a, _) = step_backward_euler(&p, &x, 0.1, &dw, &scheme).unwrap();
        let (b, _) = step_backward_euler(&no_jac, &x, 0.1, &dw, &scheme).unwrap();
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-6);
        }
    }

    #[test]
    fn divergence_is_reported() {
        // Y = x + h * (Y^2 + 1) has no real root for h = 1, x = 1.
        let drift: VectorField = Arc::new(|x: &[f64], out: &mut [f64]| out[0] = x[0] * x[0] + 1.0);
        let jac: VectorField = Arc::new(|x: &[f64], out: &mut [f64]| out[0] = 2.0 * x[0]);
        let zero: VectorField = Arc::new(|_x: &[f64], out: &mut [f64]| out.fill(0.0));
        let p = SdeProblem::new("noroot", 1, 1, drift, zero).unwrap().with_jacobian(jac);
        let scheme = BackwardEuler {
            newton_tol: 1e-6,
            newton_max_iter: 20,
        };
        let err = step_backward_euler(&p, &[1.0], 1.0, &[0.0], &scheme).unwrap_err();
        assert!(matches!(err, StepError::NewtonDivergence { .. }));
    }

    #[test]
    fn lu_solve_with_pivoting() {
        let mut a = vec![0.0, 2.0, 1.0, 0.0, 3.0, 1.0, 1.0, 1.0, 4.0];
        let mut a_copy = a.clone();
        let mut b = vec![5.0, 7.0, 12.0];
        assert!(lu_solve(&mut a, &mut b, 3));
        let mut check = vec![0.0; 3];
        a_copy.truncate(9);
        mat_vec(&a_copy, 3, &b, &mut check);
        for (c, e) in check.iter().zip([5.0, 7.0, 12.0]) {
            assert_relative_eq!(*c, e, epsilon = 1e-12);
        }
        let mut singular = vec![1.0, 2.0, 2.0, 4.0];
        assert!(!lu_solve(&mut singular, &mut [1.0, 1.0], 2));
    }
}
