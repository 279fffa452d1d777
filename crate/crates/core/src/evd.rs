//! Extreme value distribution functions, block-count transforms and the
//! prior density under a change of block count.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

/// Below this |ξ| the Gumbel / exponential limit formulas are used.
pub const XI_EPS: f64 = 1e-8;

/// Fewer excesses than this and the flat prior may give an improper posterior.
pub const MIN_EXCESSES_FOR_PROPER_POSTERIOR: usize = 4;

/// Poisson process parameters at block count `m`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamVec {
    pub mu: f64,
    pub sigma: f64,
    pub xi: f64,
    pub m: f64,
}

/// Covariate-in-location parameters at block count `m`.
/// Location is `mu0 + mu1 * z` with `z` centred.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NsParamVec {
    pub mu0: f64,
    pub mu1: f64,
    pub sigma: f64,
    pub xi: f64,
    pub m: f64,
}

impl ParamVec {
    pub fn new(mu: f64, sigma: f64, xi: f64, m: f64) -> Result<Self> {
        let p = ParamVec { mu, sigma, xi, m };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu.is_finite() && self.sigma.is_finite() && self.xi.is_finite() && self.m.is_finite()) {
            return domain(format!("non-finite parameter in {self:?}"));
        }
        if self.sigma <= 0.0 {
            return domain(format!("sigma must be positive, got {}", self.sigma));
        }
        if self.m <= 0.0 {
            return domain(format!("block count must be positive, got {}", self.m));
        }
        Ok(())
    }

    pub fn to_vec(&self) -> [f64; 3] {
        [self.mu, self.sigma, self.xi]
    }

    pub fn from_slice(x: &[f64], m: f64) -> Self {
        ParamVec { mu: x[0], sigma: x[1], xi: x[2], m }
    }

    /// Same parameters viewed as a covariate model with zero slope.
    pub fn with_slope(&self, mu1: f64) -> NsParamVec {
        NsParamVec { mu0: self.mu, mu1, sigma: self.sigma, xi: self.xi, m: self.m }
    }

    /// `1 + ξ(u − μ)/σ`.
    pub fn bracket(&self, u: f64) -> f64 {
        1.0 + self.xi * (u - self.mu) / self.sigma
    }

    /// Expected number of points above `u`, `m [1 + ξ(u − μ)/σ]^{−1/ξ}`.
    /// Zero above a finite upper endpoint, infinite below a finite lower endpoint.
    pub fn expected_exceedances(&self, u: f64) -> f64 {
        self.m * tail_intensity((u - self.mu) / self.sigma, self.xi)
    }

    pub fn cdf(&self, x: f64) -> Result<f64> {
        gev_cdf(x, self.mu, self.sigma, self.xi)
    }
}

impl NsParamVec {
    pub fn validate(&self) -> Result<()> {
        self.at(0.0).validate()?;
        if !self.mu1.is_finite() {
            return domain("non-finite slope");
        }
        Ok(())
    }

    pub fn to_vec(&self) -> [f64; 4] {
        [self.mu0, self.mu1, self.sigma, self.xi]
    }

    pub fn from_slice(x: &[f64], m: f64) -> Self {
        NsParamVec { mu0: x[0], mu1: x[1], sigma: x[2], xi: x[3], m }
    }

    /// Stationary parameters at centred covariate value `z`.
    pub fn at(&self, z: f64) -> ParamVec {
        ParamVec { mu: self.mu0 + self.mu1 * z, sigma: self.sigma, xi: self.xi, m: self.m }
    }
}

/// `[1 + ξ v]_+^{−1/ξ}` with the exponential limit near ξ = 0.
pub fn tail_intensity(v: f64, xi: f64) -> f64 {
    if xi.abs() < XI_EPS {
        return (-v).exp();
    }
    let t = xi * v;
    if t <= -1.0 {
        return if xi > 0.0 { f64::INFINITY } else { 0.0 };
    }
    (-t.ln_1p() / xi).exp()
}

/// GEV distribution function.
pub fn gev_cdf(x: f64, mu: f64, sigma: f64, xi: f64) -> Result<f64> {
    if !(x.is_finite() && mu.is_finite() && sigma.is_finite() && xi.is_finite()) {
        return domain("gev_cdf: non-finite input");
    }
    if sigma <= 0.0 {
        return domain(format!("gev_cdf: sigma must be positive, got {sigma}"));
    }
    Ok((-tail_intensity((x - mu) / sigma, xi)).exp())
}

/// Quantile of the generalised Pareto excess distribution with scale `psi`.
pub fn gp_quantile(prob: f64, psi: f64, xi: f64) -> f64 {
    let lsurv = (-prob).ln_1p();
    if xi.abs() < XI_EPS {
        -psi * lsurv
    } else {
        psi * (-xi * lsurv).exp_m1() / xi
    }
}

/// Generalised Pareto distribution function of an excess `y ≥ 0`.
pub fn gp_cdf(y: f64, psi: f64, xi: f64) -> f64 {
    if y <= 0.0 {
        return 0.0;
    }
    1.0 - tail_intensity(y / psi, xi)
}

fn check_k(k: f64) -> Result<()> {
    if !(k.is_finite() && k > 0.0) {
        return domain(format!("target block count must be positive and finite, got {k}"));
    }
    Ok(())
}

/// Location and scale at block count `k` from those at block count `m`.
fn rescale(mu: f64, sigma: f64, xi: f64, m: f64, k: f64) -> (f64, f64) {
    let lr = (k / m).ln();
    if xi.abs() < XI_EPS {
        (mu - sigma * lr, sigma)
    } else {
        (mu + sigma * (-xi * lr).exp_m1() / xi, sigma * (-xi * lr).exp())
    }
}

/// Move parameters from block count `p.m` to block count `k`.
pub fn transform_params(p: &ParamVec, k: f64) -> Result<ParamVec> {
    check_k(k)?;
    let (mu, sigma) = rescale(p.mu, p.sigma, p.xi, p.m, k);
    Ok(ParamVec { mu, sigma, xi: p.xi, m: k })
}

/// Covariate-model version of [`transform_params`]; the slope is unchanged.
pub fn transform_ns_params(p: &NsParamVec, k: f64) -> Result<NsParamVec> {
    check_k(k)?;
    let (mu0, sigma) = rescale(p.mu0, p.sigma, p.xi, p.m, k);
    Ok(NsParamVec { mu0, mu1: p.mu1, sigma, xi: p.xi, m: k })
}

/// Independent normal prior component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gaussian {
    pub mean: f64,
    pub sd: f64,
}

impl Gaussian {
    fn log_pdf(&self, x: f64) -> f64 {
        let z = (x - self.mean) / self.sd;
        -0.5 * z * z - self.sd.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
    }
}

/// Prior on the reference parameterisation θ_k.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BasePrior {
    /// π(μ, σ, ξ) ∝ 1/σ (flat on μ, log σ, ξ); the slope, if any, is flat too.
    #[default]
    FlatLogScale,
    /// Independent normals on μ, log σ and ξ, and optionally on the slope.
    Normal {
        mu: Gaussian,
        log_sigma: Gaussian,
        xi: Gaussian,
        #[serde(default)]
        slope: Option<Gaussian>,
    },
}

impl BasePrior {
    /// Log density at θ_k (location, optional slope, scale, shape).
    pub fn log_density(&self, mu: f64, slope: Option<f64>, sigma: f64, xi: f64) -> f64 {
        if !(sigma > 0.0) {
            return f64::NEG_INFINITY;
        }
        match self {
            BasePrior::FlatLogScale => -sigma.ln(),
            BasePrior::Normal { mu: gm, log_sigma, xi: gx, slope: gs } => {
                let mut lp = gm.log_pdf(mu) + log_sigma.log_pdf(sigma.ln()) - sigma.ln() + gx.log_pdf(xi);
                if let (Some(g), Some(b)) = (gs, slope) {
                    lp += g.log_pdf(b);
                }
                lp
            }
        }
    }
}

/// How the density is carried from θ_k to θ_m.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum JacobianConvention {
    /// π_m(θ_m) = π_k(θ_k(θ_m)) |∂θ_k/∂θ_m| = π_k(θ_k(θ_m)) (m/k)^{ξ}.
    #[default]
    ChangeOfVariables,
    /// π_m(θ_m) = π_k(θ_k(θ_m)) (m/k)^{−ξ}, the reciprocal factor; kept for comparison.
    ReciprocalJacobian,
}

/// Full prior specification: base density on θ_k, reference k, Jacobian convention.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    #[serde(default)]
    pub base: BasePrior,
    pub k: f64,
    #[serde(default)]
    pub jacobian: JacobianConvention,
}

impl PriorSpec {
    pub fn flat(k: f64) -> Self {
        PriorSpec { base: BasePrior::FlatLogScale, k, jacobian: JacobianConvention::ChangeOfVariables }
    }

    fn log_jacobian(&self, xi: f64, m: f64) -> f64 {
        let l = xi * (m / self.k).ln();
        match self.jacobian {
            JacobianConvention::ChangeOfVariables => l,
            JacobianConvention::ReciprocalJacobian => -l,
        }
    }

    pub fn log_density(&self, p: &ParamVec) -> f64 {
        if !(p.sigma > 0.0) || !p.mu.is_finite() || !p.xi.is_finite() {
            return f64::NEG_INFINITY;
        }
        let (mu, sigma) = rescale(p.mu, p.sigma, p.xi, p.m, self.k);
        self.base.log_density(mu, None, sigma, p.xi) + self.log_jacobian(p.xi, p.m)
    }

    pub fn log_density_ns(&self, p: &NsParamVec) -> f64 {
        if !(p.sigma > 0.0) || !p.mu0.is_finite() || !p.mu1.is_finite() || !p.xi.is_finite() {
            return f64::NEG_INFINITY;
        }
        let (mu0, sigma) = rescale(p.mu0, p.sigma, p.xi, p.m, self.k);
        self.base.log_density(mu0, Some(p.mu1), sigma, p.xi) + self.log_jacobian(p.xi, p.m)
    }
}

/// Log prior density of θ_m given a base prior on θ_k, using the change-of-variables Jacobian.
pub fn prior_log_density(p: &ParamVec, k: f64, base: &BasePrior) -> f64 {
    PriorSpec { base: *base, k, jacobian: JacobianConvention::ChangeOfVariables }.log_density(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cdf_at_location_is_exp_minus_one() {
        for xi in [-0.3, 0.0, 1e-9, 0.2] {
            let f = gev_cdf(5.0, 5.0, 2.0, xi).unwrap();
            assert!((f - (-1.0f64).exp()).abs() < 1e-15);
        }
    }

    #[test]
    fn cdf_outside_support() {
        assert_eq!(gev_cdf(-100.0, 0.0, 1.0, 0.5).unwrap(), 0.0);
        assert_eq!(gev_cdf(100.0, 0.0, 1.0, -0.5).unwrap(), 1.0);
        assert!(gev_cdf(f64::NAN, 0.0, 1.0, 0.1).is_err());
        assert!(gev_cdf(0.0, 0.0, 0.0, 0.1).is_err());
    }

    #[test]
    fn gumbel_quantile() {
        // Oracle: the 0.99 Gumbel quantile solved by bisection on the closed-form cdf.
        let (mut lo, mut hi) = (0.0f64, 10.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if (-(-mid).exp()).exp() < 0.99 { lo = mid } else { hi = mid }
        }
        assert!((lo - 4.6001).abs() < 1e-4);
        let f = gev_cdf(lo, 0.0, 1.0, 0.0).unwrap();
        assert!((f - 0.99).abs() < 1e-12);
    }

    #[test]
    fn transform_identity_and_value() {
        let p = ParamVec::new(80.0, 15.0, 0.05, 300.0).unwrap();
        assert_eq!(transform_params(&p, 300.0).unwrap(), p);
        let q = transform_params(&p, 1.0).unwrap();
        assert!((q.sigma - 15.0 * 300f64.powf(0.05)).abs() < 1e-12);
        for i in 0..50 {
            let x = 40.0 + 4.0 * i as f64;
            let lhs = q.cdf(x).unwrap();
            // M_1 is the maximum over 300 blocks of the m = 300 parameterisation
            let rhs = p.cdf(x).unwrap().powf(300.0);
            assert!((lhs - rhs).abs() < 1e-12, "{x}: {lhs} vs {rhs}");
        }
        assert!(transform_params(&p, 0.0).is_err());
        assert!(transform_params(&p, -1.0).is_err());
    }

    #[test]
    fn transform_small_xi_continuity() {
        let p = ParamVec::new(10.0, 3.0, 1e-12, 50.0).unwrap();
        let q = transform_params(&p, 2.0).unwrap();
        let mu_lim = 10.0 - 3.0 * (2.0f64 / 50.0).ln();
        assert!((q.mu - mu_lim).abs() < 1e-6);
        assert!((q.sigma - 3.0).abs() < 1e-6);
        // just above the switch
        let p2 = ParamVec { xi: 2e-8, ..p };
        let q2 = transform_params(&p2, 2.0).unwrap();
        assert!((q2.mu - mu_lim).abs() < 1e-6);
    }

    #[test]
    fn ns_transform_matches_stationary() {
        let p = NsParamVec { mu0: 75.0, mu1: 30.0, sigma: 15.0, xi: -0.05, m: 85.0 };
        let q = transform_ns_params(&p, 1.0).unwrap();
        let s = transform_params(&ParamVec::new(75.0, 15.0, -0.05, 85.0).unwrap(), 1.0).unwrap();
        assert_eq!(q.mu1, 30.0);
        assert!((q.mu0 - s.mu).abs() < 1e-12);
        assert!((q.sigma - s.sigma).abs() < 1e-12);
    }

    #[test]
    fn prior_trivial_cases() {
        let base = BasePrior::FlatLogScale;
        let p = ParamVec::new(3.0, 2.0, 0.2, 7.0).unwrap();
        assert!((prior_log_density(&p, 7.0, &base) + 2f64.ln()).abs() < 1e-15);
        let p0 = ParamVec { xi: 0.0, ..p };
        let q0 = transform_params(&p0, 1.0).unwrap();
        assert!((prior_log_density(&p0, 1.0, &base) + q0.sigma.ln()).abs() < 1e-15);
        let bad = ParamVec { sigma: -1.0, ..p };
        assert_eq!(prior_log_density(&bad, 1.0, &base), f64::NEG_INFINITY);
    }

    #[test]
    fn flat_prior_is_invariant_under_change_of_variables() {
        // With the correct Jacobian the 1/σ prior keeps its form in every parameterisation.
        let p = ParamVec::new(30.0, 12.0, 0.15, 400.0).unwrap();
        let lp = prior_log_density(&p, 55.0, &BasePrior::FlatLogScale);
        assert!((lp + 12f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn jacobian_matches_finite_difference_determinant() {
        // θ_m ↦ θ_k; the density on θ_m picks up |det ∂θ_k/∂θ_m|.
        let p = ParamVec::new(30.0, 12.0, 0.15, 400.0).unwrap();
        let k = 55.0;
        let f = |x: [f64; 3]| {
            let q = transform_params(&ParamVec::from_slice(&x, p.m), k).unwrap();
            q.to_vec()
        };
        let x0 = p.to_vec();
        let mut jac = nalgebra::Matrix3::<f64>::zeros();
        for j in 0..3 {
            let h = 1e-5 * x0[j].abs().max(1.0);
            let mut xp = x0;
            let mut xm = x0;
            xp[j] += h;
            xm[j] -= h;
            let (fp, fm) = (f(xp), f(xm));
            for i in 0..3 {
                jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
            }
        }
        let det = jac.determinant().abs();
        let pk = transform_params(&p, k).unwrap();
        let base = BasePrior::FlatLogScale;
        let factor = (prior_log_density(&p, k, &base) - base.log_density(pk.mu, None, pk.sigma, pk.xi)).exp();
        assert!(((factor - det) / det).abs() < 1e-6, "{factor} vs {det}");
    }
}
