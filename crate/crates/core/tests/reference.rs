use sdeweak::model::{make_ou_model, make_quintic_model};
use sdeweak::montecarlo::compute_references;
use sdeweak::{compute_reference, estimate_weak_error, SchemeKind, SchemeSpec, TestFunction};

#[test]
fn ou_reference_matches_the_closed_form_mean() {
    let p = make_ou_model(2.0, 1.0, 1.0, 1.0).unwrap();
    let phi = TestFunction::builtin("identity").unwrap();
    let r = compute_reference(&p, &phi, 2f64.powi(-10), 100_000, 100).unwrap();
    let exact = (-2.0f64).exp();
    // Backward Euler bias at h = 2^-10 is about 2 h e^-2 ~ 2.6e-4.
    assert!(
        (r.value - exact).abs() <= 4.0 * r.std_error + 3e-4,
        "{} vs {exact}",
        r.value
    );
}

#[test]
fn quintic_reference_is_stable_across_seeds() {
    let p = make_quintic_model(2.0);
    let phis = [
        TestFunction::builtin("identity").unwrap(),
        TestFunction::builtin("square").unwrap(),
    ];
    let a = compute_references(&p, &phis, 2f64.powi(-10), 20_000, 100).unwrap();
    let b = compute_references(&p, &phis, 2f64.powi(-10), 20_000, 101).unwrap();
    for (x, y) in a.iter().zip(&b) {
        let se = x.std_error.hypot(y.std_error);
        assert!((x.value - y.value).abs() <= 5.0 * se, "{x:?} {y:?}");
    }
}

#[test]
fn ou_estimates_stay_near_the_analytic_moments() {
    let p = make_ou_model(2.0, 1.0, 1.0, 1.0).unwrap();
    let moments = p.moments.unwrap();
    for (label, exact) in [("identity", moments.mean), ("square", moments.second_moment())] {
        let phi = TestFunction::builtin(label).unwrap();
        let r = compute_reference(&p, &phi, 2f64.powi(-10), 20_000, 100).unwrap();
        for kind in [SchemeKind::Em, SchemeKind::Mes, SchemeKind::Bem] {
            let e = estimate_weak_error(&p, &SchemeSpec::new(kind), &phi, 2f64.powi(-6), 20_000, 100, &r).unwrap();
            assert!(
                (e.mean_phi - exact).abs() <= 0.02 + 5.0 * e.std_error,
                "{kind} {label} {}",
                e.mean_phi
            );
        }
    }
}
