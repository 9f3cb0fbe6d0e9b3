//! Checks on the modified coefficients of the explicit schemes: taming
//! never enlarges a coefficient, and `fbar_h -> f`, `gbar_h -> g` at a
//! measurable power of `h`.

use crate::convergence::fit_order;
use crate::model::{euclidean_norm, frobenius_norm, SdeProblem};
use crate::schemes::{
    Balanced, DriftTamed, FullyTamed1, FullyTamed2, Modifier, SchemeKind, SchemeSpec, SquaredDriftTamed,
};

/// Discrepancies below this are treated as exact (no taming at all).
const EXACT: f64 = 1e-300;

/// The deterministic modifier behind `spec`, if it has one. The
/// balanced-type modifier depends on the increment and is excluded.
pub fn deterministic_modifier(spec: &SchemeSpec) -> Option<Box<dyn Modifier>> {
    let m: Box<dyn Modifier> = match spec.kind {
        SchemeKind::Fte1 => Box::new(FullyTamed1 {
            alpha1: spec.alpha1,
            alpha2: spec.alpha2,
        }),
        SchemeKind::Fte2 => Box::new(FullyTamed2 {
            vartheta: spec.vartheta,
        }),
        SchemeKind::Mes => Box::new(SquaredDriftTamed),
        SchemeKind::Dte => Box::new(DriftTamed),
        SchemeKind::Bs => Box::new(Balanced),
        _ => return None,
    };
    Some(m)
}

/// `(|fbar_h(x) - f(x)|, ||gbar_h(x) - g(x)||_F)` for increment `dw`.
pub fn coefficient_discrepancy(
    modifier: &dyn Modifier,
    problem: &SdeProblem,
    x: &[f64],
    h: f64,
    dw: &[f64],
) -> (f64, f64) {
    let f = problem.drift_at(x);
    let g = problem.diffusion_at(x);
    let c = modifier.coefficients(problem, x, h, dw);
    let df: Vec<f64> = c.f_bar.iter().zip(&f).map(|(a, b)| a - b).collect();
    let dg: Vec<f64> = c.g_bar.iter().zip(&g).map(|(a, b)| a - b).collect();
    (euclidean_norm(&df), frobenius_norm(&dg))
}

/// Fitted exponents of the coefficient discrepancies at one state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConsistencySlope {
    /// `None` when the drift is left untouched.
    pub drift: Option<f64>,
    /// `None` when the diffusion is left untouched.
    pub diffusion: Option<f64>,
}

impl ConsistencySlope {
    /// The exponent that limits the weak order: the smaller of the two.
    pub fn effective(&self) -> Option<f64> {
        match (self.drift, self.diffusion) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        }
    }
}

fn slope_of(points: &[(f64, f64)]) -> Option<f64> {
    if points.iter().all(|p| p.1 <= EXACT) {
        return None;
    }
    fit_order(points).ok().map(|f| f.slope)
}

/// Log-log slope of the deterministic discrepancies (`dW = 0`) over `hs`.
pub fn consistency_slope(modifier: &dyn Modifier, problem: &SdeProblem, x: &[f64], hs: &[f64]) -> ConsistencySlope {
    let dw = vec![0.0; problem.dim_noise];
    let (mut drift, mut diffusion) = (Vec::new(), Vec::new());
    for &h in hs {
        let (df, dg) = coefficient_discrepancy(modifier, problem, x, h, &dw);
        drift.push((h, df));
        diffusion.push((h, dg));
    }
    ConsistencySlope {
        drift: slope_of(&drift),
        diffusion: slope_of(&diffusion),
    }
}

/// Whether `|fbar| <= |f|` and `||gbar|| <= ||g||` at `(x, h, dw)`, up to
/// a relative rounding allowance.
pub fn is_dominated(modifier: &dyn Modifier, problem: &SdeProblem, x: &[f64], h: f64, dw: &[f64]) -> bool {
    let f = euclidean_norm(&problem.drift_at(x));
    let g = frobenius_norm(&problem.diffusion_at(x));
    let c = modifier.coefficients(problem, x, h, dw);
    let slack = 1.0 + 1e-12;
    euclidean_norm(&c.f_bar) <= f * slack && frobenius_norm(&c.g_bar) <= g * slack
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{make_fhn_model, make_quintic_model};

    fn ladder() -> Vec<f64> {
        (4..=12).map(|k| 2f64.powi(-k)).collect()
    }

    #[test]
    fn effective_slope_takes_the_smaller_exponent() {
        let s = ConsistencySlope {
            drift: Some(2.0),
            diffusion: Some(1.0),
        };
        assert_eq!(s.effective(), Some(1.0));
        let s = ConsistencySlope {
            drift: Some(1.0),
            diffusion: None,
        };
        assert_eq!(s.effective(), Some(1.0));
    }

    #[test]
    fn drift_tamed_leaves_diffusion_alone() {
        let p = make_quintic_model(2.0);
        let s = consistency_slope(&DriftTamed, &p, &[0.5], &ladder());
        assert_eq!(s.diffusion, None);
        assert!((s.drift.unwrap() - 1.0).abs() < 0.05);
    }

    #[test]
    fn balanced_drift_is_second_order() {
        let p = make_quintic_model(2.0);
        let s = consistency_slope(&Balanced, &p, &[0.5], &ladder());
        assert!((s.drift.unwrap() - 2.0).abs() < 0.05, "{s:?}");
        assert!((s.diffusion.unwrap() - 1.0).abs() < 0.05, "{s:?}");
    }

    #[test]
    fn taming_never_enlarges_on_fhn() {
        let p = make_fhn_model();
        let spec = SchemeSpec::new(SchemeKind::Mes);
        let m = deterministic_modifier(&spec).unwrap();
        for x in [[0.0, 0.0], [3.0, -2.0], [-5.0, 4.0]] {
            assert!(is_dominated(m.as_ref(), &p, &x, 0.5, &[0.0, 0.0]));
        }
        assert!(deterministic_modifier(&SchemeSpec::new(SchemeKind::Bts)).is_none());
    }
}
