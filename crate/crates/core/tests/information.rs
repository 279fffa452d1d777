//! Expected information against independently computed expected log-likelihoods.

use pp_reparam::covariate::CovariateDensity;
use pp_reparam::evd::{NsParamVec, ParamVec};
use pp_reparam::fisher::{closed_form, correlation_summaries, fisher_matrix, fisher_matrix_ns};
use pp_reparam::quad::QuadSettings;

/// log λ(x) of the stationary intensity, written out independently.
fn log_intensity(x: f64, mu: f64, sigma: f64, xi: f64, m: f64) -> f64 {
    let w = 1.0 + xi * (x - mu) / sigma;
    if w <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let lw = if xi.abs() < 1e-12 { (x - mu) / sigma } else { w.ln() / xi };
    m.ln() - sigma.ln() - (1.0 + xi) * lw
}

fn rate_above(u: f64, mu: f64, sigma: f64, xi: f64, m: f64) -> f64 {
    let w = 1.0 + xi * (u - mu) / sigma;
    if xi.abs() < 1e-12 {
        m * (-(u - mu) / sigma).exp()
    } else {
        m * w.powf(-1.0 / xi)
    }
}

/// Composite Simpson rule on [a, b] with n (even) panels.
fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

/// E over the exceedance distribution at `truth` of `f(x)`, with x = u + GP quantile at 1 − e^{−s}.
fn exceedance_mean<F: Fn(f64) -> f64>(truth: (f64, f64, f64), u: f64, f: F) -> f64 {
    let (mu, sigma, xi) = truth;
    let psi = sigma + xi * (u - mu);
    // With ξ < 0 stop short of the upper endpoint so that nearby parameters keep
    // every evaluated point inside their support; the mass left out is below 1e-13.
    let upper = if xi < 0.0 { 60.0f64.min((-xi * 0.12 / psi).ln() / xi) } else { 60.0 };
    simpson(
        |s| {
            let x = if xi.abs() < 1e-12 { u + psi * s } else { u + psi * (xi * s).exp_m1() / xi };
            f(x) * (-s).exp()
        },
        0.0,
        upper,
        40_000,
    )
}

/// E_truth[log L(θ)] for the stationary model.
fn expected_loglik(truth: &ParamVec, u: f64, theta: [f64; 3]) -> f64 {
    let lam = rate_above(u, truth.mu, truth.sigma, truth.xi, truth.m);
    let [mu, sigma, xi] = theta;
    -rate_above(u, mu, sigma, xi, truth.m)
        + lam * exceedance_mean((truth.mu, truth.sigma, truth.xi), u, |x| log_intensity(x, mu, sigma, xi, truth.m))
}

fn fd_hessian<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], h: &[f64]) -> Vec<Vec<f64>> {
    let n = x.len();
    let mut out = vec![vec![0.0; n]; n];
    let at = |di: usize, si: f64, dj: usize, sj: f64| {
        let mut y = x.to_vec();
        y[di] += si * h[di];
        y[dj] += sj * h[dj];
        f(&y)
    };
    for i in 0..n {
        for j in 0..n {
            out[i][j] = if i == j {
                let mut yp = x.to_vec();
                let mut ym = x.to_vec();
                yp[i] += h[i];
                ym[i] -= h[i];
                (f(&yp) - 2.0 * f(x) + f(&ym)) / (h[i] * h[i])
            } else {
                (at(i, 1.0, j, 1.0) - at(i, 1.0, j, -1.0) - at(i, -1.0, j, 1.0) + at(i, -1.0, j, -1.0)) / (4.0 * h[i] * h[j])
            };
        }
    }
    out
}

/// Richardson-extrapolated central-difference Hessian.
fn richardson<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], h: &[f64]) -> Vec<Vec<f64>> {
    let coarse = fd_hessian(&f, x, h);
    let half: Vec<f64> = h.iter().map(|v| 0.5 * v).collect();
    let fine = fd_hessian(&f, x, &half);
    coarse.iter().zip(&fine).map(|(c, f)| c.iter().zip(f).map(|(a, b)| (4.0 * b - a) / 3.0).collect()).collect()
}

#[test]
fn stationary_information_is_curvature_of_expected_loglik() {
    let u = 30.0;
    for p in [
        ParamVec { mu: 80.0, sigma: 15.0, xi: 0.1, m: 1.0 },
        ParamVec { mu: 35.0, sigma: 12.0, xi: 0.01, m: 300.0 },
        ParamVec { mu: 40.0, sigma: 10.0, xi: -0.2, m: 50.0 },
        ParamVec { mu: 32.0, sigma: 8.0, xi: 0.0, m: 100.0 },
    ] {
        let info = fisher_matrix(&p, u).unwrap();
        let f = if p.xi < 0.0 { 2e-4 } else { 2e-3 };
        let h = [f * p.sigma, f * p.sigma, f];
        let hess = richardson(|x| expected_loglik(&p, u, [x[0], x[1], x[2]]), &p.to_vec(), &h);
        for i in 0..3 {
            for j in 0..3 {
                let e = info.values[(i, j)];
                let scale = (info.values[(i, i)] * info.values[(j, j)]).sqrt();
                let rel = (-hess[i][j] - e).abs() / e.abs().max(1e-3 * scale);
                assert!(rel < 1e-5, "xi {} entry ({i},{j}): {} vs {}, rel {rel:e}", p.xi, -hess[i][j], e);
            }
        }
    }
}

#[test]
fn information_is_symmetric() {
    let p = ParamVec { mu: 80.0, sigma: 15.0, xi: 0.1, m: 1.0 };
    let i = fisher_matrix(&p, 30.0).unwrap();
    assert_eq!(i.values, i.values.transpose());
}

#[test]
fn closed_form_covariances_match_inversion() {
    let u = 30.0;
    for &xi in &[-0.3, -0.1, 0.08, 0.2, 0.5] {
        for &m in &[1.0, 40.0, 300.0] {
            let p = ParamVec { mu: 40.0, sigma: 12.0, xi, m };
            let r = p.expected_exceedances(u);
            let sigma_m = p.sigma;
            let cov = fisher_matrix(&p, u).unwrap().inverse().unwrap();
            let sx = closed_form::acov_sigma_xi(m, r, sigma_m, xi);
            let ms = closed_form::acov_mu_sigma(m, r, sigma_m, xi);
            let mx = closed_form::acov_mu_xi(m, r, sigma_m, xi);
            let scale = |a: &str, b: &str| (cov.get(a, a) * cov.get(b, b)).sqrt();
            assert!((cov.get("sigma", "xi") - sx).abs() <= 1e-8 * scale("sigma", "xi"), "sigma-xi at xi {xi}, m {m}");
            assert!((cov.get("mu", "sigma") - ms).abs() <= 1e-8 * scale("mu", "sigma"), "mu-sigma at xi {xi}, m {m}");
            assert!((cov.get("mu", "xi") - mx).abs() <= 1e-8 * scale("mu", "xi"), "mu-xi at xi {xi}, m {m}");
        }
    }
}

#[test]
fn zero_location_shape_covariance_when_m_is_r() {
    let u = 30.0;
    for &xi in &[-0.2, 0.0, 0.03, 0.2] {
        // μ = u makes the expected count equal to m.
        let p = ParamVec { mu: u, sigma: 9.0, xi, m: 250.0 };
        let cov = fisher_matrix(&p, u).unwrap().inverse().unwrap();
        let c = cov.correlation().unwrap();
        assert!(c.get("mu", "xi").abs() < 1e-10, "xi {xi}: {}", c.get("mu", "xi"));
        let s = correlation_summaries(&cov).unwrap();
        let expected = c.get("mu", "sigma").abs() + c.get("sigma", "xi").abs();
        assert!((s.total - expected).abs() < 1e-10);
    }
}

/// E_truth[log L(θ)] for the covariate model, by nested Simpson rules over z ~ Exp(2) centred at 0.5.
fn expected_loglik_ns(truth: &NsParamVec, u: f64, theta: [f64; 4]) -> f64 {
    let [mu0, mu1, sigma, xi] = theta;
    let density = |z: f64| 2.0 * (-2.0 * (z + 0.5)).exp();
    simpson(
        |z| {
            let mt = truth.mu0 + truth.mu1 * z;
            let lam = rate_above(u, mt, truth.sigma, truth.xi, truth.m);
            let m = mu0 + mu1 * z;
            let inner = exceedance_mean_coarse((mt, truth.sigma, truth.xi), u, |x| log_intensity(x, m, sigma, xi, truth.m));
            density(z) * (-rate_above(u, m, sigma, xi, truth.m) + lam * inner)
        },
        -0.5,
        15.0,
        2_000,
    )
}

fn exceedance_mean_coarse<F: Fn(f64) -> f64>(truth: (f64, f64, f64), u: f64, f: F) -> f64 {
    let (mu, sigma, xi) = truth;
    let psi = sigma + xi * (u - mu);
    simpson(|s| f(u + psi * (xi * s).exp_m1() / xi) * (-s).exp(), 0.0, 45.0, 2_000)
}

#[test]
fn covariate_information_is_curvature_of_expected_loglik() {
    let u = 15.0;
    let truth = NsParamVec { mu0: 90.0, mu1: 30.0, sigma: 15.0, xi: -0.05, m: 1.0 };
    let g = CovariateDensity::exponential(2.0).unwrap().centred();
    let info = fisher_matrix_ns(&truth, u, &g, &QuadSettings::default()).unwrap();
    let h = [0.02, 0.02, 0.02, 1e-3];
    let hess = fd_hessian(|x| expected_loglik_ns(&truth, u, [x[0], x[1], x[2], x[3]]), &truth.to_vec(), &h);
    for i in 0..4 {
        for j in 0..4 {
            let e = info.values[(i, j)];
            let scale = (info.values[(i, i)] * info.values[(j, j)]).sqrt();
            let rel = (-hess[i][j] - e).abs() / e.abs().max(1e-2 * scale);
            assert!(rel < 0.03, "entry ({i},{j}): {} vs {e}, rel {rel:e}", -hess[i][j]);
        }
    }
}

#[test]
fn zero_slope_reduces_to_stationary_block() {
    let u = 15.0;
    let p = NsParamVec { mu0: 40.0, mu1: 0.0, sigma: 10.0, xi: 0.1, m: 5.0 };
    let iid = fisher_matrix(&p.at(0.0), u).unwrap();
    for g in [CovariateDensity::exponential(2.0).unwrap().centred(), CovariateDensity::kde(&[0.1, 0.5, 0.9, 1.7, 2.2]).unwrap().centred()] {
        let ns = fisher_matrix_ns(&p, u, &g, &QuadSettings::default()).unwrap();
        for (a, b) in [("mu", "mu0"), ("sigma", "sigma"), ("xi", "xi")] {
            for (c, d) in [("mu", "mu0"), ("sigma", "sigma"), ("xi", "xi")] {
                let x = iid.get(a, c);
                let y = ns.get(b, d);
                assert!((x - y).abs() <= 1e-6 * x.abs().max(1e-12), "{a},{c}: {x} vs {y}");
            }
        }
        // Centred covariate: the intercept and slope are uncorrelated at zero slope.
        let cross = ns.get("mu0", "mu1") / (ns.get("mu0", "mu0") * ns.get("mu1", "mu1")).sqrt();
        assert!(cross.abs() < 1e-8, "{cross}");
    }
}
