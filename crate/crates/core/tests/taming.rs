use sdeweak::diagnostics::{coefficient_discrepancy, consistency_slope, deterministic_modifier, is_dominated};
use sdeweak::model::{make_fhn_model, make_quintic_model};
use sdeweak::schemes::{BalancedType, Modifier};
use sdeweak::{derive_stream, SchemeKind, SchemeSpec};

fn fixed_points() -> Vec<f64> {
    (0..10).map(|i| -0.9 + 1.8 * i as f64 / 9.0).collect()
}

/// Step sizes small enough that every taming denominator is close to 1.
fn fine_ladder() -> Vec<f64> {
    (8..=20).map(|k| 2f64.powi(-k)).collect()
}

#[test]
fn tamed_coefficients_never_exceed_the_originals() {
    let p = make_quintic_model(2.0);
    let mut s = derive_stream(3, 0);
    for kind in [SchemeKind::Fte1, SchemeKind::Fte2, SchemeKind::Mes] {
        let m = deterministic_modifier(&SchemeSpec::new(kind)).unwrap();
        for _ in 0..10_000 {
            let x = -10.0 + 20.0 * s.next_uniform();
            let h = 2f64.powf(-12.0 + 11.0 * s.next_uniform());
            assert!(is_dominated(m.as_ref(), &p, &[x], h, &[0.0]), "{kind} x={x} h={h}");
        }
    }
}

#[test]
fn balanced_type_dominates_for_any_increment() {
    let p = make_fhn_model();
    let mut s = derive_stream(4, 0);
    for _ in 0..10_000 {
        let x = [-10.0 + 20.0 * s.next_uniform(), -10.0 + 20.0 * s.next_uniform()];
        let h = 2f64.powf(-12.0 + 11.0 * s.next_uniform());
        let dw = [h.sqrt() * s.next_standard_normal(), h.sqrt() * s.next_standard_normal()];
        assert!(is_dominated(&BalancedType, &p, &x, h, &dw));
    }
}

#[test]
fn consistency_exponents_match_the_weak_orders() {
    let p = make_quintic_model(2.0);
    let expected = [
        (SchemeKind::Fte1, 0.5),
        (SchemeKind::Fte2, 0.5),
        (SchemeKind::Mes, 1.0),
        (SchemeKind::Dte, 1.0),
        (SchemeKind::Bs, 1.0),
    ];
    for (kind, a) in expected {
        let m = deterministic_modifier(&SchemeSpec::new(kind)).unwrap();
        for x in fixed_points() {
            let slope = consistency_slope(m.as_ref(), &p, &[x], &fine_ladder())
                .effective()
                .unwrap();
            assert!((slope - a).abs() <= 0.1, "{kind} x={x} slope={slope}");
        }
    }
}

#[test]
fn squared_drift_taming_error_is_linear_in_h() {
    let p = make_quintic_model(2.0);
    let m = deterministic_modifier(&SchemeSpec::new(SchemeKind::Mes)).unwrap();
    for x in fixed_points() {
        let f = p.drift_at(&[x])[0];
        for k in 8..=16 {
            let h = 2f64.powi(-k);
            let (df, _) = coefficient_discrepancy(m.as_ref(), &p, &[x], h, &[0.0]);
            // f - f/(1 + h f^2) = h f^3 / (1 + h f^2)
            let exact = h * f.abs().powi(3) / (1.0 + h * f * f);
            assert!((df - exact).abs() <= 1e-12 * (1.0 + exact), "x={x} h={h}");
        }
    }
}

#[test]
fn balanced_drift_error_is_second_order() {
    let p = make_quintic_model(2.0);
    let m = deterministic_modifier(&SchemeSpec::new(SchemeKind::Bs)).unwrap();
    for x in fixed_points() {
        let f = p.drift_at(&[x])[0];
        for k in 6..=12 {
            let h = 2f64.powi(-k);
            let (df, _) = coefficient_discrepancy(m.as_ref(), &p, &[x], h, &[0.0]);
            // tanh(hf)/h - f = -h^2 f^3 / 3 + O(h^4)
            assert!(df <= h * h * f.abs().powi(3) / 3.0 * (1.0 + 1e-9), "x={x} h={h}");
        }
    }
}

#[test]
fn balanced_type_error_is_half_order_in_expectation() {
    let p = make_quintic_model(2.0);
    let mut s = derive_stream(5, 0);
    let draws = 10_000;
    let mut points = Vec::new();
    for k in 6..=14 {
        let h = 2f64.powi(-k);
        let mut total = 0.0;
        for _ in 0..draws {
            let dw = h.sqrt() * s.next_standard_normal();
            total += coefficient_discrepancy(&BalancedType, &p, &[0.5], h, &[dw]).1;
        }
        points.push((h, total / draws as f64));
    }
    let slope = sdeweak::fit_order(&points).unwrap().slope;
    assert!((slope - 0.5).abs() <= 0.1, "slope {slope}");
    // The modifier is named consistently with its scheme.
    assert_eq!(BalancedType.id(), "bts");
}
