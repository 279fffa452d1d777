//! Poisson process likelihoods and posteriors for the stationary and
//! covariate-in-location models.

use serde::{Deserialize, Serialize};

use crate::covariate::CovariateDensity;
use crate::error::{domain, Error, Result};
use crate::evd::{tail_intensity, NsParamVec, ParamVec, PriorSpec, MIN_EXCESSES_FOR_PROPER_POSTERIOR, XI_EPS};
use crate::optim::{nelder_mead_max, newton_polish, NelderMeadSettings};
use crate::quad::QuadSettings;

/// Threshold exceedances with their observation span and optional covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExceedanceData {
    pub u: f64,
    /// Exceedance values `x_j > u` (not `x_j − u`).
    pub excesses: Vec<f64>,
    pub n_years: f64,
    /// Centred covariate value for each exceedance.
    pub covariates: Option<Vec<f64>>,
    /// Constant subtracted from the raw covariate.
    pub covariate_centre: f64,
}

impl ExceedanceData {
    pub fn new(u: f64, excesses: Vec<f64>, n_years: f64) -> Result<Self> {
        let d = ExceedanceData { u, excesses, n_years, covariates: None, covariate_centre: 0.0 };
        d.validate()?;
        Ok(d)
    }

    /// `covariates` are already centred by `centre`.
    pub fn with_covariates(u: f64, excesses: Vec<f64>, n_years: f64, covariates: Vec<f64>, centre: f64) -> Result<Self> {
        let d = ExceedanceData { u, excesses, n_years, covariates: Some(covariates), covariate_centre: centre };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.u.is_finite() {
            return Err(Error::Data("threshold must be finite".into()));
        }
        if !(self.n_years > 0.0 && self.n_years.is_finite()) {
            return Err(Error::Data(format!("observation span must be positive, got {}", self.n_years)));
        }
        if let Some(j) = self.excesses.iter().position(|&x| !(x > self.u) || !x.is_finite()) {
            return Err(Error::Data(format!("exceedance {j} ({}) is not above the threshold {}", self.excesses[j], self.u)));
        }
        if let Some(z) = &self.covariates {
            if z.len() != self.excesses.len() {
                return Err(Error::Data(format!("{} covariate values for {} exceedances", z.len(), self.excesses.len())));
            }
            if z.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data("non-finite covariate value".into()));
            }
        }
        Ok(())
    }

    pub fn r(&self) -> usize {
        self.excesses.len()
    }

    /// Warning text when the flat prior may not give a proper posterior.
    pub fn propriety_warning(&self) -> Option<String> {
        (self.r() < MIN_EXCESSES_FOR_PROPER_POSTERIOR).then(|| {
            format!("only {} exceedances; the flat prior needs at least {MIN_EXCESSES_FOR_PROPER_POSTERIOR} for a proper posterior", self.r())
        })
    }

    fn require_points(&self) -> Result<()> {
        if self.excesses.is_empty() {
            return domain("likelihood needs at least one exceedance");
        }
        Ok(())
    }
}

/// `(L − 1 + e^{−L})/L²`.
fn psi(l: f64) -> f64 {
    if l.abs() < 0.1 {
        let c = [1.0 / 2.0, -1.0 / 6.0, 1.0 / 24.0, -1.0 / 120.0, 1.0 / 720.0, -1.0 / 5040.0, 1.0 / 40320.0, -1.0 / 362880.0, 1.0 / 3628800.0];
        c.iter().rev().fold(0.0, |acc, &ci| acc * l + ci)
    } else {
        (l - 1.0 + (-l).exp()) / (l * l)
    }
}

/// `(1 − e^{−L})/L`.
fn chi(l: f64) -> f64 {
    if l == 0.0 {
        1.0
    } else {
        -(-l).exp_m1() / l
    }
}

/// `log(1 + ξ v)/ξ`, or `None` outside the support.
pub(crate) fn kappa(v: f64, xi: f64) -> Option<f64> {
    let t = xi * v;
    if t <= -1.0 {
        return None;
    }
    Some(if xi == 0.0 { v } else { t.ln_1p() / xi })
}

/// Log intensity of a point at standardised distance `v = (x − μ)/σ`, minus `−log σ`.
fn point_term(v: f64, xi: f64) -> f64 {
    if xi.abs() < XI_EPS {
        return -v;
    }
    let t = xi * v;
    if t <= -1.0 {
        return f64::NEG_INFINITY;
    }
    -(1.0 / xi + 1.0) * t.ln_1p()
}

/// Score of `log λ(x)` with respect to (μ, σ, ξ), at `v = (x − μ)/σ`.
pub(crate) fn point_score(v: f64, sigma: f64, xi: f64) -> Option<[f64; 3]> {
    Some(score_at_kappa(kappa(v, xi)?, sigma, xi))
}

/// Point score in terms of `κ = log(1 + ξ v)/ξ`.
pub(crate) fn score_at_kappa(k: f64, sigma: f64, xi: f64) -> [f64; 3] {
    let l = xi * k;
    let el = (-l).exp();
    let ch = chi(l);
    [(1.0 + xi) * el / sigma, (k * ch - el) / sigma, k * k * psi(l) - k * ch]
}

/// Gradient of `log Λ_u` with respect to (μ, σ, ξ), at `v = (u − μ)/σ`.
fn tail_score(v: f64, sigma: f64, xi: f64) -> Option<[f64; 3]> {
    let k = kappa(v, xi)?;
    let l = xi * k;
    Some([(-l).exp() / sigma, k * chi(l) / sigma, k * k * psi(l)])
}

/// Poisson process log-likelihood of stationary data,
/// `−Λ_u + Σ log λ(x_j)` with intensity `λ(x) = (m/σ) [1 + ξ(x − μ)/σ]^{−1/ξ−1}`.
/// The `r log m` term makes the value invariant under a change of block count.
pub fn log_likelihood(p: &ParamVec, data: &ExceedanceData) -> Result<f64> {
    data.require_points()?;
    if !(p.sigma > 0.0) || !p.mu.is_finite() || !p.xi.is_finite() {
        return Ok(f64::NEG_INFINITY);
    }
    if p.bracket(data.u) <= 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    let lam = p.expected_exceedances(data.u);
    let mut s = -lam + data.r() as f64 * (p.m.ln() - p.sigma.ln());
    for &x in &data.excesses {
        s += point_term((x - p.mu) / p.sigma, p.xi);
    }
    Ok(if s.is_nan() { f64::NEG_INFINITY } else { s })
}

/// Gradient of [`log_likelihood`] with respect to (μ, σ, ξ).
pub fn log_likelihood_gradient(p: &ParamVec, data: &ExceedanceData) -> Result<[f64; 3]> {
    data.require_points()?;
    let vu = (data.u - p.mu) / p.sigma;
    let ts = tail_score(vu, p.sigma, p.xi).ok_or_else(|| Error::Domain("threshold outside support".into()))?;
    let lam = p.expected_exceedances(data.u);
    let mut g = [-lam * ts[0], -lam * ts[1], -lam * ts[2]];
    for &x in &data.excesses {
        let s = point_score((x - p.mu) / p.sigma, p.sigma, p.xi).ok_or_else(|| Error::Domain("exceedance outside support".into()))?;
        for i in 0..3 {
            g[i] += s[i];
        }
    }
    Ok(g)
}

/// Smallest value of `1 + ξ(u − μ(z))/σ` over the covariate support.
pub(crate) fn min_bracket(p: &NsParamVec, u: f64, g: &CovariateDensity) -> f64 {
    let (a, b) = g.support();
    let at = |z: f64| 1.0 + p.xi * (u - p.mu0 - p.mu1 * z) / p.sigma;
    let slope = -p.xi * p.mu1 / p.sigma;
    if slope == 0.0 {
        return at(0.0);
    }
    let end = if slope > 0.0 { a } else { b };
    if end.is_finite() {
        at(end)
    } else {
        f64::NEG_INFINITY
    }
}

/// Integrated intensity `m ∫ [1 + ξ(u − μ(z))/σ]_+^{−1/ξ} g(z) dz`.
/// Infinite when ξ > 0 and the bracket is non-positive somewhere on the support.
pub fn integrated_intensity_ns(p: &NsParamVec, u: f64, g: &CovariateDensity, quad: &QuadSettings) -> Result<f64> {
    if p.xi > 0.0 && min_bracket(p, u, g) <= 0.0 {
        return Ok(f64::INFINITY);
    }
    let s = QuadSettings { abs_tol: quad.abs_tol / p.m, ..*quad };
    let v = g.expect(|z| tail_intensity((u - p.mu0 - p.mu1 * z) / p.sigma, p.xi), &s)?;
    Ok(p.m * v)
}

/// Poisson process log-likelihood of the covariate-in-location model.
pub fn log_likelihood_ns(p: &NsParamVec, data: &ExceedanceData, g: &CovariateDensity, quad: &QuadSettings) -> Result<f64> {
    data.require_points()?;
    let z = data.covariates.as_ref().ok_or_else(|| Error::Data("covariate model needs covariate values".into()))?;
    if !(p.sigma > 0.0) || !p.mu0.is_finite() || !p.mu1.is_finite() || !p.xi.is_finite() {
        return Ok(f64::NEG_INFINITY);
    }
    let mut s = data.r() as f64 * (p.m.ln() - p.sigma.ln());
    for (&x, &zj) in data.excesses.iter().zip(z) {
        s += point_term((x - p.mu0 - p.mu1 * zj) / p.sigma, p.xi);
        if s == f64::NEG_INFINITY {
            return Ok(s);
        }
    }
    let lam = integrated_intensity_ns(p, data.u, g, quad)?;
    Ok(s - lam)
}

/// A log density over an unconstrained parameter vector.
pub trait LogDensity {
    fn dim(&self) -> usize;
    /// `Ok(−∞)` outside the support; errors are hard failures.
    fn log_density(&self, x: &[f64]) -> Result<f64>;
}

/// Closure adaptor for [`LogDensity`].
pub struct FnDensity<F: Fn(&[f64]) -> f64> {
    pub dim: usize,
    pub f: F,
}

impl<F: Fn(&[f64]) -> f64> LogDensity for FnDensity<F> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn log_density(&self, x: &[f64]) -> Result<f64> {
        Ok((self.f)(x))
    }
}

/// Posterior of θ_m = (μ, σ, ξ) for stationary data at block count `m`.
#[derive(Debug, Clone)]
pub struct IidPosterior<'a> {
    pub data: &'a ExceedanceData,
    pub m: f64,
    pub prior: PriorSpec,
}

impl<'a> IidPosterior<'a> {
    pub fn new(data: &'a ExceedanceData, m: f64, prior: PriorSpec) -> Result<Self> {
        data.require_points()?;
        if data.covariates.is_some() {
            log::debug!("covariates ignored by the stationary posterior");
        }
        if !(m > 0.0 && m.is_finite()) {
            return domain(format!("block count must be positive, got {m}"));
        }
        Ok(IidPosterior { data, m, prior })
    }

    pub fn params(&self, x: &[f64]) -> ParamVec {
        ParamVec::from_slice(x, self.m)
    }

    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        let p = self.params(x);
        let mut g = log_likelihood_gradient(&p, self.data)?.to_vec();
        let f = |y: &[f64]| self.prior.log_density(&self.params(y));
        for j in 0..3 {
            let h = 1e-6 * x[j].abs().max(1e-3);
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[j] += h;
            xm[j] -= h;
            g[j] += (f(&xp) - f(&xm)) / (2.0 * h);
        }
        Ok(g)
    }
}

impl LogDensity for IidPosterior<'_> {
    fn dim(&self) -> usize {
        3
    }
    fn log_density(&self, x: &[f64]) -> Result<f64> {
        log_posterior(&self.params(x), self.data, &self.prior)
    }
}

/// Unnormalised log posterior for stationary data.
pub fn log_posterior(p: &ParamVec, data: &ExceedanceData, prior: &PriorSpec) -> Result<f64> {
    let lp = prior.log_density(p);
    if lp == f64::NEG_INFINITY {
        return Ok(lp);
    }
    Ok(lp + log_likelihood(p, data)?)
}

/// Posterior of (μ⁽⁰⁾, μ⁽¹⁾, σ, ξ) at block count `m` for the covariate model.
#[derive(Debug, Clone)]
pub struct NsPosterior<'a> {
    pub data: &'a ExceedanceData,
    pub g: &'a CovariateDensity,
    pub m: f64,
    pub prior: PriorSpec,
    pub quad: QuadSettings,
}

impl<'a> NsPosterior<'a> {
    pub fn new(data: &'a ExceedanceData, g: &'a CovariateDensity, m: f64, prior: PriorSpec, quad: QuadSettings) -> Result<Self> {
        data.require_points()?;
        if data.covariates.is_none() {
            return Err(Error::Data("covariate model needs covariate values".into()));
        }
        if !(m > 0.0 && m.is_finite()) {
            return domain(format!("block count must be positive, got {m}"));
        }
        Ok(NsPosterior { data, g, m, prior, quad })
    }

    pub fn params(&self, x: &[f64]) -> NsParamVec {
        NsParamVec::from_slice(x, self.m)
    }
}

impl LogDensity for NsPosterior<'_> {
    fn dim(&self) -> usize {
        4
    }
    fn log_density(&self, x: &[f64]) -> Result<f64> {
        log_posterior_ns(&self.params(x), self.data, self.g, &self.prior, &self.quad)
    }
}

/// Unnormalised log posterior for the covariate model.
pub fn log_posterior_ns(p: &NsParamVec, data: &ExceedanceData, g: &CovariateDensity, prior: &PriorSpec, quad: &QuadSettings) -> Result<f64> {
    let lp = prior.log_density_ns(p);
    if lp == f64::NEG_INFINITY {
        return Ok(lp);
    }
    Ok(lp + log_likelihood_ns(p, data, g, quad)?)
}

/// Generalised Pareto log-likelihood of the excesses `x_j − u`.
pub fn gp_log_likelihood(psi: f64, xi: f64, data: &ExceedanceData) -> f64 {
    if !(psi > 0.0) {
        return f64::NEG_INFINITY;
    }
    let r = data.r() as f64;
    let s: f64 = data.excesses.iter().map(|&x| point_term((x - data.u) / psi, xi)).sum();
    -r * psi.ln() + s
}

/// Method-of-moments generalised Pareto estimate (scale, shape).
pub fn gp_moments(data: &ExceedanceData) -> (f64, f64) {
    let y: Vec<f64> = data.excesses.iter().map(|x| x - data.u).collect();
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let var = if y.len() > 1 { y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { mean * mean };
    let ratio = if var > 0.0 { mean * mean / var } else { 1.0 };
    let xi = (0.5 * (1.0 - ratio)).clamp(-0.4, 0.8);
    let psi = (mean * (1.0 - xi)).max(1e-6 * mean.abs().max(1e-12));
    (psi, xi)
}

/// Maximum-likelihood generalised Pareto fit (scale, shape).
pub fn fit_gp(data: &ExceedanceData) -> Result<(f64, f64)> {
    data.require_points()?;
    let (psi0, xi0) = gp_moments(data);
    let f = |x: &[f64]| gp_log_likelihood(x[0].exp(), x[1], data);
    let starts = [[psi0.ln(), xi0], [psi0.ln(), 0.0], [(psi0 * 1.5).ln(), 0.2]];
    let mut best: Option<(Vec<f64>, f64)> = None;
    for s in &starts {
        if let Ok(o) = nelder_mead_max(f, s, &[0.2, 0.1], &NelderMeadSettings::default()) {
            if best.as_ref().map_or(true, |b| o.value > b.1) {
                best = Some((o.x, o.value));
            }
        }
    }
    let (x, _) = best.ok_or_else(|| Error::Numerical("generalised Pareto fit failed".into()))?;
    let grad = |x: &[f64]| {
        let psi = x[0].exp();
        let mut g = [0.0, 0.0];
        for &v in &data.excesses {
            // log λ(x) with μ = u, σ = ψ has the same form as the point score
            if let Some(s) = point_score((v - data.u) / psi, psi, x[1]) {
                g[0] += s[1] * psi;
                g[1] += s[2];
            } else {
                return vec![f64::NAN; 2];
            }
        }
        g.to_vec()
    };
    let x = newton_polish(&f, &grad, &x, &[1.0, 0.1], 50);
    Ok((x[0].exp(), x[1]))
}

/// Starting points for the stationary posterior mode at block count `m`:
/// moment-matched, generalised-Pareto-fit mapped, and a perturbed copy.
pub fn iid_starts(data: &ExceedanceData, m: f64) -> Vec<ParamVec> {
    let r = data.r() as f64;
    let mut out = Vec::new();
    let (psi_m, xi_m) = gp_moments(data);
    let moment = ParamVec { mu: data.u, sigma: psi_m, xi: xi_m, m: r };
    out.push(moment);
    if let Ok((psi, xi)) = fit_gp(data) {
        out.push(ParamVec { mu: data.u, sigma: psi, xi, m: r });
    }
    out.push(ParamVec { mu: data.u, sigma: psi_m * 1.3, xi: xi_m * 0.5 + 0.05, m: r });
    out.into_iter()
        .filter_map(|p| crate::evd::transform_params(&p, m).ok())
        .collect()
}

/// Posterior mode of the stationary model at block count `post.m`.
pub fn posterior_mode_iid(post: &IidPosterior<'_>, extra_starts: &[ParamVec]) -> Result<ParamVec> {
    let mut starts = iid_starts(post.data, post.m);
    starts.extend(extra_starts.iter().filter_map(|p| crate::evd::transform_params(p, post.m).ok()));
    let f = |x: &[f64]| post.log_density(x).unwrap_or(f64::NEG_INFINITY);
    let mut best: Option<(Vec<f64>, f64)> = None;
    for s in &starts {
        let x0 = s.to_vec();
        let steps = [0.1 * s.sigma, 0.1 * s.sigma, 0.05];
        if let Ok(o) = nelder_mead_max(f, &x0, &steps, &NelderMeadSettings::default()) {
            if best.as_ref().map_or(true, |b| o.value > b.1) {
                best = Some((o.x, o.value));
            }
        }
    }
    let (x, _) = best.ok_or_else(|| Error::Numerical("posterior mode search failed from every start".into()))?;
    let grad = |y: &[f64]| post.gradient(y).unwrap_or_else(|_| vec![f64::NAN; 3]);
    let scale = [x[1], x[1], 0.05];
    let x = newton_polish(&f, &grad, &x, &scale, 50);
    Ok(post.params(&x))
}

/// Newton refinement of a stationary mode from a nearby starting point.
pub fn refine_mode_iid(post: &IidPosterior<'_>, start: &ParamVec) -> Result<ParamVec> {
    let f = |x: &[f64]| post.log_density(x).unwrap_or(f64::NEG_INFINITY);
    let grad = |y: &[f64]| post.gradient(y).unwrap_or_else(|_| vec![f64::NAN; 3]);
    let x0 = crate::evd::transform_params(start, post.m)?.to_vec();
    if !f(&x0).is_finite() {
        return posterior_mode_iid(post, &[*start]);
    }
    let x = newton_polish(&f, &grad, &x0, &[x0[1], x0[1], 0.05], 60);
    let g = post.gradient(&x)?;
    let tol = 1e-4 * (1.0 + post.data.r() as f64);
    if g.iter().any(|v| !v.is_finite() || v.abs() > tol) {
        return posterior_mode_iid(post, &[*start]);
    }
    Ok(post.params(&x))
}

/// Posterior mode of the covariate model at block count `post.m`.
pub fn posterior_mode_ns(post: &NsPosterior<'_>) -> Result<NsParamVec> {
    let data = post.data;
    let z = data.covariates.as_ref().unwrap();
    let stationary = ExceedanceData { covariates: None, ..data.clone() };
    let iid = IidPosterior::new(&stationary, post.m, post.prior)?;
    let base = posterior_mode_iid(&iid, &[])?;
    // least-squares slope of exceedance values on the covariate
    let zm = z.iter().sum::<f64>() / z.len() as f64;
    let xm = data.excesses.iter().sum::<f64>() / z.len() as f64;
    let sxz: f64 = z.iter().zip(&data.excesses).map(|(a, b)| (a - zm) * (b - xm)).sum();
    let szz: f64 = z.iter().map(|a| (a - zm).powi(2)).sum();
    let slope = if szz > 0.0 { sxz / szz } else { 0.0 };
    let starts = [base.with_slope(0.0), base.with_slope(slope), NsParamVec { sigma: base.sigma * 1.2, ..base.with_slope(0.5 * slope) }];
    let f = |x: &[f64]| post.log_density(x).unwrap_or(f64::NEG_INFINITY);
    let mut best: Option<(Vec<f64>, f64)> = None;
    for s in &starts {
        let x0 = s.to_vec();
        let zs = if szz > 0.0 { (szz / z.len() as f64).sqrt() } else { 1.0 };
        let steps = [0.1 * s.sigma, 0.1 * s.sigma / zs, 0.1 * s.sigma, 0.05];
        if let Ok(o) = nelder_mead_max(f, &x0, &steps, &NelderMeadSettings::default()) {
            if best.as_ref().map_or(true, |b| o.value > b.1) {
                best = Some((o.x, o.value));
            }
        }
    }
    let (x, _) = best.ok_or_else(|| Error::Numerical("covariate posterior mode search failed".into()))?;
    Ok(post.params(&x))
}

/// Discrepancies between the Poisson process fit at m = r and a generalised Pareto fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpEquivalenceReport {
    pub pp_fit: ParamVec,
    pub gp_scale: f64,
    pub gp_shape: f64,
    /// μ̂_r − u
    pub location_gap: f64,
    /// σ̂_r − ψ̂_u
    pub scale_gap: f64,
    /// ξ̂ (Poisson process) − ξ̂ (generalised Pareto)
    pub shape_gap: f64,
}

/// Fit the Poisson process by maximum likelihood at m = r and a generalised Pareto
/// distribution to the excesses, and report the differences.
pub fn gp_equivalence_check(data: &ExceedanceData) -> Result<GpEquivalenceReport> {
    data.require_points()?;
    let r = data.r() as f64;
    let f = |x: &[f64]| log_likelihood(&ParamVec::from_slice(x, r), data).unwrap_or(f64::NEG_INFINITY);
    let grad = |x: &[f64]| {
        log_likelihood_gradient(&ParamVec::from_slice(x, r), data).map(|g| g.to_vec()).unwrap_or_else(|_| vec![f64::NAN; 3])
    };
    let starts = iid_starts(data, r);
    let mut best: Option<(Vec<f64>, f64)> = None;
    for s in &starts {
        let steps = [0.1 * s.sigma, 0.1 * s.sigma, 0.05];
        if let Ok(o) = nelder_mead_max(f, &s.to_vec(), &steps, &NelderMeadSettings::default()) {
            if best.as_ref().map_or(true, |b| o.value > b.1) {
                best = Some((o.x, o.value));
            }
        }
    }
    let (x, _) = best.ok_or_else(|| Error::Numerical("Poisson process fit failed".into()))?;
    let x = newton_polish(&f, &grad, &x, &[x[1], x[1], 0.05], 60);
    let g = grad(&x);
    if g.iter().any(|v| !v.is_finite() || v.abs() > 1e-3 * r.max(1.0)) {
        return Err(Error::Numerical(format!("Poisson process fit did not converge, gradient {g:?}")));
    }
    let pp = ParamVec::from_slice(&x, r);
    let (psi, xi) = fit_gp(data)?;
    Ok(GpEquivalenceReport {
        pp_fit: pp,
        gp_scale: psi,
        gp_shape: xi,
        location_gap: pp.mu - data.u,
        scale_gap: pp.sigma - psi,
        shape_gap: pp.xi - xi,
    })
}
