//! Empirical weak order from `(h, weak_error)` series.

use serde::Serialize;

use crate::error::FitError;
use crate::montecarlo::WeakErrorEstimate;
use crate::schemes::{SchemeKind, SchemeSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Ordinary least squares of `log2(error)` against `log2(h)`.
pub fn fit_order(points: &[(f64, f64)]) -> Result<LinearFit, FitError> {
    if points.len() < 3 {
        return Err(FitError::DegenerateFit(format!(
            "need at least 3 points, got {}",
            points.len()
        )));
    }
    for &(h, e) in points {
        if !(h > 0.0 && h.is_finite()) {
            return Err(FitError::DegenerateFit(format!("step size {h} is not positive")));
        }
        if !(e > 0.0 && e.is_finite()) {
            return Err(FitError::DegenerateFit(format!("error {e} is not positive")));
        }
    }
    let mut hs: Vec<f64> = points.iter().map(|p| p.0).collect();
    hs.sort_by(f64::total_cmp);
    if hs.windows(2).any(|w| w[0] == w[1]) {
        return Err(FitError::DegenerateFit("step sizes must be distinct".into()));
    }

    // Sort so the sums are accumulated in the same order for any input order.
    let mut xy: Vec<(f64, f64)> = points.iter().map(|&(h, e)| (h.log2(), e.log2())).collect();
    xy.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = xy.len() as f64;
    let mean_x = xy.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = xy.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = xy.iter().map(|p| (p.0 - mean_x).powi(2)).sum();
    let sxy: f64 = xy.iter().map(|p| (p.0 - mean_x) * (p.1 - mean_y)).sum();
    let syy: f64 = xy.iter().map(|p| (p.1 - mean_y).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let r_squared = if syy == 0.0 {
        1.0
    } else {
        (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0)
    };
    Ok(LinearFit {
        slope,
        intercept,
        r_squared,
    })
}

/// Predicted weak order, `None` for Euler-Maruyama (no guarantee under
/// superlinear growth).
pub fn theoretical_order(spec: &SchemeSpec) -> Option<f64> {
    match spec.kind {
        SchemeKind::Em => None,
        SchemeKind::Fte1 => Some(spec.alpha1.min(spec.alpha2)),
        SchemeKind::Fte2 => Some(spec.vartheta),
        SchemeKind::Mes | SchemeKind::Dte | SchemeKind::Bs | SchemeKind::Bem => Some(1.0),
        SchemeKind::Bts => Some(0.5),
    }
}

/// Allowed `|fitted - theoretical|`: 0.25 for first-order schemes, 0.2 below.
pub fn default_tolerance(theoretical: f64) -> f64 {
    if theoretical >= 0.75 {
        0.25
    } else {
        0.2
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportPoint {
    pub h: f64,
    pub weak_error: f64,
    pub ci95_halfwidth: f64,
    pub n_exploded: usize,
    pub used_in_fit: bool,
    /// CI half-width within a tenth of the weak error.
    pub statistically_resolved: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub scheme_id: String,
    pub phi_label: String,
    /// Points sorted by decreasing `h`.
    pub points: Vec<ReportPoint>,
    /// NaN when fewer than three points survive the noise filter.
    pub fitted_order: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub theoretical_order: Option<f64>,
    pub tolerance: Option<f64>,
    /// `None` when there is no theoretical order to compare against.
    pub passed: Option<bool>,
}

impl ConvergenceReport {
    /// Fits the order over the reliable points whose CI half-width is at
    /// most half the weak error, and compares it with the theory.
    pub fn from_estimates(
        spec: &SchemeSpec,
        phi_label: &str,
        estimates: &[WeakErrorEstimate],
        tolerance: Option<f64>,
    ) -> Self {
        let mut points: Vec<ReportPoint> = estimates
            .iter()
            .map(|e| ReportPoint {
                h: e.step_size,
                weak_error: e.weak_error,
                ci95_halfwidth: e.ci95_halfwidth,
                n_exploded: e.n_exploded,
                used_in_fit: e.is_reliable() && e.weak_error > 0.0 && e.ci95_halfwidth <= e.weak_error / 2.0,
                statistically_resolved: e.statistically_resolved(),
            })
            .collect();
        points.sort_by(|a, b| b.h.total_cmp(&a.h));

        let fit_points: Vec<(f64, f64)> = points
            .iter()
            .filter(|p| p.used_in_fit)
            .map(|p| (p.h, p.weak_error))
            .collect();
        let fit = fit_order(&fit_points).ok();
        let theory = theoretical_order(spec);
        let tolerance = theory.map(|t| tolerance.unwrap_or_else(|| default_tolerance(t)));
        let passed = match (theory, tolerance) {
            (Some(t), Some(tol)) => Some(fit.is_some_and(|f| (f.slope - t).abs() <= tol)),
            _ => None,
        };
        ConvergenceReport {
            scheme_id: spec.id().to_string(),
            phi_label: phi_label.to_string(),
            points,
            fitted_order: fit.map_or(f64::NAN, |f| f.slope),
            intercept: fit.map_or(f64::NAN, |f| f.intercept),
            r_squared: fit.map_or(f64::NAN, |f| f.r_squared),
            theoretical_order: theory,
            tolerance,
            passed,
        }
    }

    pub fn n_points_used(&self) -> usize {
        self.points.iter().filter(|p| p.used_in_fit).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn ladder(p: f64, c: f64) -> Vec<(f64, f64)> {
        (4..=8)
            .map(|k| {
                let h = 2f64.powi(-k);
                (h, c * h.powf(p))
            })
            .collect()
    }

    #[test]
    fn exact_power_laws() {
        let fit = fit_order(&ladder(1.0, 0.3)).unwrap();
        assert_relative_eq!(fit.slope, 1.0, epsilon = 1e-12);
        assert_relative_eq!(fit.r_squared, 1.0, epsilon = 1e-12);
        assert_relative_eq!(fit.intercept, 0.3f64.log2(), epsilon = 1e-12);
        let fit = fit_order(&ladder(0.5, 2.0)).unwrap();
        assert_relative_eq!(fit.slope, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn perturbed_power_laws() {
        // Worst case of a +-5% multiplicative perturbation: alternate signs
        // over every sign pattern on the 5-point ladder.
        for p in [0.5, 1.0] {
            for mask in 0u32..32 {
                let pts: Vec<(f64, f64)> = ladder(p, 0.3)
                    .into_iter()
                    .enumerate()
                    .map(|(i, (h, e))| (h, e * if mask >> i & 1 == 1 { 1.05 } else { 0.95 }))
                    .collect();
                let fit = fit_order(&pts).unwrap();
                assert!((fit.slope - p).abs() < 0.15, "p={p} mask={mask} slope={}", fit.slope);
            }
        }
    }

    #[test]
    fn degenerate_inputs() {
        assert!(fit_order(&[(0.5, 1.0), (0.25, 0.5)]).is_err());
        assert!(fit_order(&[(0.5, 1.0), (0.25, 0.0), (0.125, 0.1)]).is_err());
        assert!(fit_order(&[(0.5, 1.0), (0.5, 0.5), (0.125, 0.1)]).is_err());
        assert!(fit_order(&[(0.5, 1.0), (-0.25, 0.5), (0.125, 0.1)]).is_err());
    }

    #[test]
    fn theoretical_orders() {
        assert_eq!(theoretical_order(&SchemeSpec::fte1(0.5, 0.5).unwrap()), Some(0.5));
        assert_eq!(theoretical_order(&SchemeSpec::fte1(0.25, 0.5).unwrap()), Some(0.25));
        assert_eq!(theoretical_order(&SchemeSpec::fte2(0.3).unwrap()), Some(0.3));
        assert_eq!(theoretical_order(&SchemeSpec::new(SchemeKind::Mes)), Some(1.0));
        assert_eq!(theoretical_order(&SchemeSpec::new(SchemeKind::Dte)), Some(1.0));
        assert_eq!(theoretical_order(&SchemeSpec::new(SchemeKind::Bs)), Some(1.0));
        assert_eq!(theoretical_order(&SchemeSpec::new(SchemeKind::Bem)), Some(1.0));
        assert_eq!(theoretical_order(&SchemeSpec::new(SchemeKind::Bts)), Some(0.5));
        assert_eq!(theoretical_order(&SchemeSpec::new(SchemeKind::Em)), None);
    }

    fn estimate(h: f64, err: f64, ci: f64) -> WeakErrorEstimate {
        WeakErrorEstimate {
            scheme_id: "mes".into(),
            phi_label: "identity".into(),
            step_size: h,
            n_trajectories: 100,
            mean_phi: 0.0,
            std_error: ci / 1.96,
            ci95_halfwidth: ci,
            weak_error: err,
            n_exploded: 0,
        }
    }

    #[test]
    fn report_filters_noisy_points() {
        let spec = SchemeSpec::new(SchemeKind::Mes);
        let ests = vec![
            estimate(1.0 / 64.0, 1.0 / 64.0, 1e-4),
            estimate(1.0 / 16.0, 1.0 / 16.0, 1e-4),
            estimate(1.0 / 32.0, 1.0 / 32.0, 5e-3),
            estimate(1.0 / 128.0, 0.001, 0.01),
        ];
        let report = ConvergenceReport::from_estimates(&spec, "identity", &ests, None);
        let hs: Vec<f64> = report.points.iter().map(|p| p.h).collect();
        assert_eq!(hs, vec![1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0, 1.0 / 128.0]);
        assert_eq!(report.n_points_used(), 3);
        assert!(!report.points[3].used_in_fit);
        assert!(report.points[0].statistically_resolved);
        assert!(!report.points[1].statistically_resolved);
        assert_relative_eq!(report.fitted_order, 1.0, epsilon = 1e-12);
        assert_eq!(report.tolerance, Some(0.25));
        assert_eq!(report.passed, Some(true));

        let sparse = ConvergenceReport::from_estimates(&spec, "identity", &ests[..2], None);
        assert!(sparse.fitted_order.is_nan());
        assert_eq!(sparse.passed, Some(false));
    }

    proptest! {
        #[test]
        fn slope_ignores_error_scale_and_order(
            errs in proptest::collection::vec(1e-6f64..1.0, 5),
            scale in 1e-3f64..1e3,
            rotate in 0usize..5,
        ) {
            let pts: Vec<(f64, f64)> = errs.iter().enumerate()
                .map(|(i, &e)| (2f64.powi(-(i as i32) - 3), e))
                .collect();
            let base = fit_order(&pts).unwrap();
            let scaled: Vec<(f64, f64)> = pts.iter().map(|&(h, e)| (h, e * scale)).collect();
            let s = fit_order(&scaled).unwrap();
            prop_assert!((s.slope - base.slope).abs() < 1e-9);
            prop_assert!((s.intercept - base.intercept - scale.log2()).abs() < 1e-9);
            let mut shuffled = pts.clone();
            shuffled.rotate_left(rotate);
            shuffled.reverse();
            let r = fit_order(&shuffled).unwrap();
            prop_assert_eq!(r.slope.to_bits(), base.slope.to_bits());
        }
    }
}
