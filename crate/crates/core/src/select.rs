//! Choice of the block count `m` that brings the posterior close to orthogonality.

use serde::{Deserialize, Serialize};

use crate::covariate::CovariateDensity;
use crate::error::{domain, Error, Result};
use crate::evd::{transform_ns_params, transform_params, NsParamVec, ParamVec, PriorSpec};
use crate::fisher::{asymptotic_cov_with, fisher_matrix_ns_with, RateSource};
use crate::model::{posterior_mode_iid, posterior_mode_ns, refine_mode_iid, ExceedanceData, IidPosterior, NsPosterior};
use crate::optim::bracketed_root;
use crate::quad::QuadSettings;

/// Approximation of the upper root, `r (2ξ² + 13ξ + 8)/(2ξ² + 9ξ + 8)`.
pub fn halley_m2(xi: f64, r: f64) -> Result<f64> {
    check_inputs(xi, r)?;
    let den = 2.0 * xi * xi + 9.0 * xi + 8.0;
    if den.abs() < 1e-12 {
        return domain("denominator vanishes");
    }
    Ok(r * (2.0 * xi * xi + 13.0 * xi + 8.0) / den)
}

/// One Newton step from `m = r` for the upper root, `r (3ξ + 2)/(2ξ + 2)`.
pub fn newton_m2(xi: f64, r: f64) -> Result<f64> {
    check_inputs(xi, r)?;
    Ok(r * (3.0 * xi + 2.0) / (2.0 * xi + 2.0))
}

/// Exact lower root of the closed-form covariance of (σ_m, ξ): `r e^{−1/(1+ξ)}`.
pub fn m1_exact(xi: f64, r: f64) -> Result<f64> {
    check_inputs(xi, r)?;
    Ok(r * (-1.0 / (1.0 + xi)).exp())
}

fn check_inputs(xi: f64, r: f64) -> Result<()> {
    if !(xi.is_finite() && r.is_finite() && r > 0.0) {
        return domain(format!("need finite shape and positive count, got xi={xi}, r={r}"));
    }
    if xi <= -0.5 {
        return domain(format!("shape {xi} <= -0.5 is outside the regular region"));
    }
    Ok(())
}

/// Two Halley steps from `m = r` on `(m/r)^{−ξ} [(ξ+1) log(r/m) − 1]`, which is
/// proportional to the asymptotic covariance of (σ_m, ξ).
pub fn halley_m1(xi: f64, r: f64) -> Result<f64> {
    check_inputs(xi, r)?;
    let mut m = r;
    for _ in 0..2 {
        let s = (m / r).powf(-xi);
        let g = (xi + 1.0) * (r / m).ln() - 1.0;
        let f = s * g;
        let f1 = -s * (xi * g + 1.0 + xi) / m;
        let f2 = s * (xi * (xi + 1.0) * g + (1.0 + xi) * (2.0 * xi + 1.0)) / (m * m);
        let den = f1 - f * f2 / (2.0 * f1);
        m -= f / den;
        if !(m.is_finite() && m > 0.0) {
            return Err(Error::Numerical(format!("Halley iteration left the positive axis for xi={xi}, r={r}")));
        }
    }
    Ok(m)
}

/// Two-step closed form for the lower root with an uncancelled (2ξ+1) factor.
/// It exceeds `r` for positive ξ and is kept only for comparison.
pub fn halley_m1_uncorrected(xi: f64, r: f64) -> f64 {
    let l = ((2.0 * xi + 3.0) / (2.0 * xi + 1.0)).ln();
    r * (2.0 * xi + 1.0) * (1.0 + 2.0 * xi + (xi + 1.0) * l) / ((2.0 * xi + 1.0) * (3.0 + 2.0 * xi - (xi + 1.0) * l))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMethod {
    Analytic,
    NumericIid,
    NumericNs,
}

/// Outcome of block-count selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MSelection {
    pub method: SelectionMethod,
    /// Observed exceedance count.
    pub r: f64,
    /// Shape estimate from the mode at m = r.
    pub xi_hat: f64,
    /// Posterior mode at m = r, in parameter order.
    pub reference: Vec<f64>,
    pub m1: Option<f64>,
    pub m2: Option<f64>,
    pub m_hat1: Option<f64>,
    pub m_hat2: Option<f64>,
    /// Root of the (μ⁽⁰⁾, σ) correlation in the covariate model.
    pub m_star: Option<f64>,
    pub m_chosen: f64,
}

/// How modes at each trial `m` are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ModeStrategy {
    /// Re-optimise the posterior at every trial `m`, warm-started from the mode at m = r.
    #[default]
    PerM,
    /// Fit once at m = r and carry the mode to each `m` with the parameter transform.
    Transported,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectOptions {
    pub strategy: ModeStrategy,
    /// Bracket is `[r / factor, r · factor]`.
    pub bracket_factor: f64,
    /// Log-spaced scan points used to locate sign changes.
    pub scan_points: usize,
    /// Relative tolerance of the root in `m`.
    pub tol: f64,
}

impl Default for SelectOptions {
    fn default() -> Self {
        SelectOptions { strategy: ModeStrategy::PerM, bracket_factor: 20.0, scan_points: 81, tol: 1e-12 }
    }
}

/// Block-count policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MPolicy {
    /// `r` when it lies between the roots, otherwise their geometric mean;
    /// `m*` in the covariate model.
    #[default]
    Auto,
    Fixed(f64),
    Lower,
    Upper,
    GeometricMean,
}

/// Closed-form selection from a shape estimate and count alone.
pub fn analytic_selection(xi: f64, r: f64) -> Result<MSelection> {
    let h1 = halley_m1(xi, r)?;
    let h2 = halley_m2(xi, r)?;
    let mut sel = MSelection {
        method: SelectionMethod::Analytic,
        r,
        xi_hat: xi,
        reference: vec![],
        m1: Some(h1),
        m2: Some(h2),
        m_hat1: Some(h1),
        m_hat2: Some(h2),
        m_star: None,
        m_chosen: r,
    };
    sel.m_chosen = choose_m(&sel, MPolicy::Auto)?;
    Ok(sel)
}

/// Locate the sign change of `f` on a log grid closest to `target` and refine it.
fn scan_root<F: Fn(f64) -> Result<f64>>(f: F, lo: f64, hi: f64, n: usize, target: f64, tol: f64, what: &str) -> Result<f64> {
    let n = n.max(3);
    let grid: Vec<f64> = (0..n).map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64)).collect();
    let vals: Vec<f64> = grid.iter().map(|&m| f(m)).collect::<Result<_>>()?;
    let mut best: Option<(f64, f64, f64)> = None;
    for i in 0..n - 1 {
        if vals[i] == 0.0 {
            return Ok(grid[i]);
        }
        if vals[i].signum() != vals[i + 1].signum() {
            let mid = (grid[i] * grid[i + 1]).sqrt();
            let d = (mid / target).ln().abs();
            if best.map_or(true, |b| d < b.2) {
                best = Some((grid[i], grid[i + 1], d));
            }
        }
    }
    let (a, b, _) = best.ok_or_else(|| {
        Error::Selection(format!("no sign change of {what} for m in [{lo:.4}, {hi:.4}]; choose m manually"))
    })?;
    bracketed_root(f, a, b, tol)
}

/// Roots of the two covariance equations with the mode carried from `reference`
/// by the parameter transform.
pub fn numeric_roots_at(reference: &ParamVec, u: f64, rate: RateSource, opts: &SelectOptions) -> Result<(f64, f64)> {
    let r = match rate {
        RateSource::Observed(r) => r,
        RateSource::Expected => reference.expected_exceedances(u),
    };
    let cov = |m: f64| -> Result<_> { asymptotic_cov_with(&transform_params(reference, m)?, u, rate) };
    roots_from(cov, reference.xi, r, opts)
}

fn roots_from<C>(cov: C, xi: f64, r: f64, opts: &SelectOptions) -> Result<(f64, f64)>
where
    C: Fn(f64) -> Result<crate::fisher::InfoMatrix>,
{
    let lo = r / opts.bracket_factor;
    let hi = r * opts.bracket_factor;
    let t1 = halley_m1(xi, r).unwrap_or(r * (-1.0f64).exp());
    let t2 = halley_m2(xi, r).unwrap_or(r);
    let m1 = scan_root(|m| Ok(cov(m)?.get("sigma", "xi")), lo, hi, opts.scan_points, t1, opts.tol, "ACov(sigma, xi)")?;
    let m2 = scan_root(|m| Ok(cov(m)?.get("mu", "sigma")), lo, hi, opts.scan_points, t2, opts.tol, "ACov(mu, sigma)")?;
    Ok((m1, m2))
}

/// Numerical orthogonality roots for stationary data.
pub fn numeric_roots_iid(data: &ExceedanceData, prior: &PriorSpec, opts: &SelectOptions) -> Result<MSelection> {
    if let Some(w) = data.propriety_warning() {
        log::warn!("{w}");
    }
    let r = data.r() as f64;
    let post_r = IidPosterior::new(data, r, *prior)?;
    let mode_r = posterior_mode_iid(&post_r, &[])?;
    let rate = RateSource::Observed(r);
    let (m1, m2) = match opts.strategy {
        ModeStrategy::Transported => numeric_roots_at(&mode_r, data.u, rate, opts)?,
        ModeStrategy::PerM => {
            let cov = |m: f64| -> Result<_> {
                let post = IidPosterior::new(data, m, *prior)?;
                let mode = refine_mode_iid(&post, &mode_r)?;
                asymptotic_cov_with(&mode, data.u, rate)
            };
            roots_from(cov, mode_r.xi, r, opts)?
        }
    };
    let mut sel = MSelection {
        method: SelectionMethod::NumericIid,
        r,
        xi_hat: mode_r.xi,
        reference: mode_r.to_vec().to_vec(),
        m1: Some(m1),
        m2: Some(m2),
        m_hat1: halley_m1(mode_r.xi, r).ok(),
        m_hat2: halley_m2(mode_r.xi, r).ok(),
        m_star: None,
        m_chosen: r,
    };
    sel.m_chosen = choose_m(&sel, MPolicy::Auto)?;
    Ok(sel)
}

/// Correlation of (μ⁽⁰⁾, σ) at block count `m`, mode carried from `reference`.
pub fn ns_location_scale_correlation(reference: &NsParamVec, m: f64, u: f64, g: &CovariateDensity, quad: &QuadSettings) -> Result<f64> {
    let p = transform_ns_params(reference, m)?;
    let cov = fisher_matrix_ns_with(&p, u, g, quad, RateSource::Expected)?.inverse()?;
    Ok(cov.correlation()?.get("mu0", "sigma"))
}

/// Root in `m` of the (μ⁽⁰⁾, σ) correlation at a fixed reference mode.
/// The search is centred on the expected exceedance count at `reference`.
pub fn numeric_m_ns_at(reference: &NsParamVec, u: f64, g: &CovariateDensity, quad: &QuadSettings, opts: &SelectOptions) -> Result<f64> {
    let r = crate::model::integrated_intensity_ns(reference, u, g, quad)?;
    if !(r > 0.0 && r.is_finite()) {
        return domain(format!("expected exceedance count {r} at the reference parameters is not positive and finite"));
    }
    let lo = r / opts.bracket_factor;
    let hi = r * opts.bracket_factor;
    let target = halley_m2(reference.xi, r).unwrap_or(r);
    scan_root(
        |m| ns_location_scale_correlation(reference, m, u, g, quad),
        lo,
        hi,
        opts.scan_points,
        target,
        opts.tol.max(1e-10),
        "corr(mu0, sigma)",
    )
}

/// Block count for the covariate model: fit at m = r, carry the mode across `m`
/// and solve for zero (μ⁽⁰⁾, σ) correlation.
pub fn numeric_m_ns(data: &ExceedanceData, g: &CovariateDensity, prior: &PriorSpec, quad: &QuadSettings, opts: &SelectOptions) -> Result<MSelection> {
    if let Some(w) = data.propriety_warning() {
        log::warn!("{w}");
    }
    let r = data.r() as f64;
    let post = NsPosterior::new(data, g, r, *prior, *quad)?;
    let mode = posterior_mode_ns(&post)?;
    let m_star = numeric_m_ns_at(&mode, data.u, g, quad, opts)?;
    let mut sel = MSelection {
        method: SelectionMethod::NumericNs,
        r,
        xi_hat: mode.xi,
        reference: mode.to_vec().to_vec(),
        m1: None,
        m2: None,
        m_hat1: None,
        m_hat2: None,
        m_star: Some(m_star),
        m_chosen: m_star,
    };
    sel.m_chosen = choose_m(&sel, MPolicy::Auto)?;
    Ok(sel)
}

/// Apply a policy to a selection.
pub fn choose_m(sel: &MSelection, policy: MPolicy) -> Result<f64> {
    let need = |v: Option<f64>, what: &str| v.ok_or_else(|| Error::Selection(format!("selection has no {what}")));
    let m = match policy {
        MPolicy::Fixed(m) => m,
        MPolicy::Auto => {
            if let Some(ms) = sel.m_star {
                ms
            } else {
                let (a, b) = (need(sel.m1, "m1")?, need(sel.m2, "m2")?);
                let (lo, hi) = if a < b { (a, b) } else { (b, a) };
                if sel.r > lo && sel.r < hi {
                    sel.r
                } else {
                    (lo * hi).sqrt()
                }
            }
        }
        MPolicy::Lower => need(sel.m1, "m1")?,
        MPolicy::Upper => need(sel.m2, "m2")?,
        MPolicy::GeometricMean => (need(sel.m1, "m1")? * need(sel.m2, "m2")?).sqrt(),
    };
    if !(m > 0.0 && m.is_finite()) {
        return domain(format!("chosen block count {m} is not positive"));
    }
    Ok(m)
}
