use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use pp_reparam::covariate::CovariateDensity;
use pp_reparam::evd::{gp_quantile, NsParamVec, ParamVec, PriorSpec};
use pp_reparam::fisher::RateSource;
use pp_reparam::model::ExceedanceData;
use pp_reparam::quad::QuadSettings;
use pp_reparam::select::{
    choose_m, halley_m1, halley_m1_uncorrected, halley_m2, m1_exact, numeric_m_ns_at, numeric_roots_at, numeric_roots_iid,
    MPolicy, ModeStrategy, SelectOptions,
};

#[test]
fn upper_formula_example() {
    let m = halley_m2(0.05, 300.0).unwrap();
    assert!((m - 300.0 * 8.655 / 8.455).abs() < 1e-9);
    assert!((m - 307.1).abs() < 0.05);
}

#[test]
fn lower_approximation_near_exact_root() {
    let mut rng = ChaCha20Rng::seed_from_u64(11);
    for _ in 0..500 {
        let xi = rng.gen_range(-0.1..0.1);
        let r = rng.gen_range(20.0..1000.0);
        let gap = (halley_m1(xi, r).unwrap() - m1_exact(xi, r).unwrap()).abs();
        assert!(gap < 0.1, "xi {xi}, r {r}: gap {gap}");
    }
    let h = halley_m1(0.087, 880.0).unwrap();
    assert!((h - 351.0).abs() < 1.0, "{h}");
}

#[test]
fn uncorrected_lower_formula_exceeds_r() {
    assert!(halley_m1_uncorrected(0.087, 880.0) > 880.0);
}

#[test]
fn lower_root_is_closed_form_root() {
    for &(xi, r) in &[(-0.2, 50.0), (0.0, 300.0), (0.087, 880.0), (0.3, 120.0)] {
        let reference = ParamVec { mu: 5.0, sigma: 2.0, xi, m: r };
        let (m1, m2) = numeric_roots_at(&reference, 5.0, RateSource::Expected, &SelectOptions::default()).unwrap();
        let exact = m1_exact(xi, r).unwrap();
        assert!((m1 - exact).abs() <= 1e-6 * exact);
        assert!(m1 < m2);
    }
}

#[test]
fn roots_do_not_depend_on_bracket() {
    let reference = ParamVec { mu: 10.0, sigma: 3.0, xi: 0.12, m: 400.0 };
    let narrow = SelectOptions { bracket_factor: 5.0, scan_points: 41, ..SelectOptions::default() };
    let wide = SelectOptions { bracket_factor: 60.0, scan_points: 161, ..SelectOptions::default() };
    let a = numeric_roots_at(&reference, 10.0, RateSource::Expected, &narrow).unwrap();
    let b = numeric_roots_at(&reference, 10.0, RateSource::Expected, &wide).unwrap();
    assert!((a.0 - b.0).abs() <= 1e-6 * a.0);
    assert!((a.1 - b.1).abs() <= 1e-6 * a.1);
}

#[test]
fn upper_root_tends_to_r_as_shape_vanishes() {
    let r = 500.0;
    let mut prev = f64::INFINITY;
    for &xi in &[0.1, 0.01, 0.001, 0.0] {
        let reference = ParamVec { mu: 0.0, sigma: 1.0, xi, m: r };
        let (_, m2) = numeric_roots_at(&reference, 0.0, RateSource::Expected, &SelectOptions::default()).unwrap();
        let gap = (m2 - r).abs();
        assert!(gap <= prev + 1e-9);
        prev = gap;
    }
    assert!(prev < 1e-6 * r);
}

fn quantile_data(u: f64, psi: f64, xi: f64, r: usize) -> ExceedanceData {
    let xs = (0..r).map(|i| u + gp_quantile((i as f64 + 0.5) / r as f64, psi, xi)).collect();
    ExceedanceData::new(u, xs, 20.0).unwrap()
}

#[test]
fn negative_shape_rejects_r() {
    let data = quantile_data(10.0, 5.0, -0.2, 300);
    let sel = numeric_roots_iid(&data, &PriorSpec::flat(20.0), &SelectOptions::default()).unwrap();
    assert!(sel.xi_hat < -0.1);
    let (m1, m2) = (sel.m1.unwrap(), sel.m2.unwrap());
    assert!(!(m1 < sel.r && sel.r < m2), "r inside ({m1}, {m2})");
    assert!((sel.m_chosen - (m1 * m2).sqrt()).abs() < 1e-9 * sel.m_chosen);
}

#[test]
fn positive_shape_keeps_r_and_strategies_agree() {
    let data = quantile_data(10.0, 5.0, 0.1, 300);
    let per_m = numeric_roots_iid(&data, &PriorSpec::flat(20.0), &SelectOptions::default()).unwrap();
    assert_eq!(per_m.m_chosen, 300.0);
    assert_eq!(choose_m(&per_m, MPolicy::Upper).unwrap(), per_m.m2.unwrap());
    let moved = SelectOptions { strategy: ModeStrategy::Transported, ..SelectOptions::default() };
    let tr = numeric_roots_iid(&data, &PriorSpec::flat(20.0), &moved).unwrap();
    // The root sits at the closed form evaluated with the count implied by the mode.
    let implied = ParamVec::from_slice(&tr.reference, 300.0).expected_exceedances(10.0);
    let exact = m1_exact(tr.xi_hat, implied).unwrap();
    assert!((tr.m1.unwrap() - exact).abs() < 1e-6 * exact);
    // Re-optimising at each m moves the roots only slightly.
    assert!((tr.m1.unwrap() - per_m.m1.unwrap()).abs() < 0.01 * exact);
    assert!((tr.m2.unwrap() - per_m.m2.unwrap()).abs() < 0.01 * tr.m2.unwrap());
}

#[test]
fn zero_slope_covariate_root_matches_upper_root() {
    let u = 10.0;
    let reference = NsParamVec { mu0: u, mu1: 0.0, sigma: 4.0, xi: 0.1, m: 200.0 };
    let g = CovariateDensity::exponential(2.0).unwrap().centred();
    let m_star = numeric_m_ns_at(&reference, u, &g, &QuadSettings::default(), &SelectOptions::default()).unwrap();
    let (_, m2) = numeric_roots_at(&reference.at(0.0), u, RateSource::Expected, &SelectOptions::default()).unwrap();
    assert!((m_star - m2).abs() < 1.0, "{m_star} vs {m2}");
}

#[test]
fn selection_reports_missing_sign_change() {
    let reference = ParamVec { mu: 0.0, sigma: 1.0, xi: 0.1, m: 100.0 };
    let tight = SelectOptions { bracket_factor: 1.01, scan_points: 5, ..SelectOptions::default() };
    let err = numeric_roots_at(&reference, 0.0, RateSource::Expected, &tight).unwrap_err();
    assert!(matches!(err, pp_reparam::Error::Selection(_)), "{err}");
}
