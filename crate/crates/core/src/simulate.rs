//! Synthetic exceedance data from the stationary and covariate-in-location
//! Poisson process models.

use rand::distributions::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::covariate::{CovariateDensity, CovariateSpec};
use crate::error::{domain, Error, Result};
use crate::evd::{gp_quantile, tail_intensity, NsParamVec, ParamVec};
use crate::model::{integrated_intensity_ns, ExceedanceData};
use crate::quad::QuadSettings;

/// How many exceedances to generate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CountMode {
    /// Exactly `r` exceedances.
    Fixed { r: usize },
    /// Poisson with mean equal to the integrated intensity above `u`.
    Poisson,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub mu: f64,
    /// Location slope on the centred covariate; requires `covariate`.
    #[serde(default)]
    pub mu1: Option<f64>,
    pub sigma: f64,
    pub xi: f64,
    /// Block count of the generating parameters.
    pub m: f64,
    pub u: f64,
    pub count: CountMode,
    /// Observation span recorded in the output.
    #[serde(default = "one")]
    pub n_years: f64,
    /// Covariate density; the covariate is centred at its mean.
    #[serde(default)]
    pub covariate: Option<CovariateSpec>,
    pub seed: u64,
}

fn one() -> f64 {
    1.0
}

impl SimConfig {
    pub fn iid(theta: ParamVec, u: f64, count: CountMode, seed: u64) -> Self {
        SimConfig { mu: theta.mu, mu1: None, sigma: theta.sigma, xi: theta.xi, m: theta.m, u, count, n_years: 1.0, covariate: None, seed }
    }

    pub fn covariate(theta: NsParamVec, covariate: CovariateSpec, u: f64, count: CountMode, seed: u64) -> Self {
        SimConfig {
            mu: theta.mu0,
            mu1: Some(theta.mu1),
            sigma: theta.sigma,
            xi: theta.xi,
            m: theta.m,
            u,
            count,
            n_years: 1.0,
            covariate: Some(covariate),
            seed,
        }
    }

    pub fn theta(&self) -> Result<ParamVec> {
        ParamVec::new(self.mu, self.sigma, self.xi, self.m)
    }

    pub fn theta_ns(&self) -> Result<NsParamVec> {
        let p = NsParamVec { mu0: self.mu, mu1: self.mu1.unwrap_or(0.0), sigma: self.sigma, xi: self.xi, m: self.m };
        p.validate()?;
        Ok(p)
    }

    fn check(&self) -> Result<()> {
        if let CountMode::Fixed { r: 0 } = self.count {
            return domain("fixed-count simulation needs at least one exceedance");
        }
        if !(self.n_years > 0.0) {
            return domain("observation span must be positive");
        }
        if self.mu1.is_some() && self.covariate.is_none() {
            return domain("a location slope needs a covariate density");
        }
        Ok(())
    }
}

fn draw_count<R: Rng>(mode: CountMode, mean: f64, rng: &mut R) -> Result<usize> {
    Ok(match mode {
        CountMode::Fixed { r } => r,
        CountMode::Poisson => {
            if !mean.is_finite() {
                return domain("integrated intensity above the threshold is infinite");
            }
            if mean == 0.0 {
                0
            } else {
                Poisson::new(mean).map_err(|e| Error::Domain(e.to_string()))?.sample(rng) as usize
            }
        }
    })
}

/// Draw a stationary data set.
pub fn simulate_iid(cfg: &SimConfig) -> Result<ExceedanceData> {
    cfg.check()?;
    if cfg.covariate.is_some() {
        return domain("use simulate_ns for a covariate model");
    }
    let p = cfg.theta()?;
    let b = p.bracket(cfg.u);
    if !(b > 0.0) {
        return domain(format!("threshold {} is outside the model support", cfg.u));
    }
    let psi = p.sigma * b;
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let r = draw_count(cfg.count, p.expected_exceedances(cfg.u), &mut rng)?;
    let excesses = (0..r).map(|_| cfg.u + gp_quantile(rng.gen::<f64>(), psi, p.xi)).collect();
    ExceedanceData::new(cfg.u, excesses, cfg.n_years)
}

const ENVELOPE_BINS: usize = 2048;

/// Sampler for the covariate of an exceedance, density ∝ g(z) Λ_u(z).
struct TiltedCovariate {
    lo: f64,
    width: f64,
    env: Vec<f64>,
    pick: WeightedIndex<f64>,
}

impl TiltedCovariate {
    fn new(h: &dyn Fn(f64) -> f64, g: &CovariateDensity) -> Result<Self> {
        let (a, b) = g.support();
        let anchor = if a.is_finite() { a } else if b.is_finite() { b } else { 0.0 };
        let reach = |dir: f64| {
            let mut step = 1e-3 * (1.0 + anchor.abs());
            let mut peak = h(anchor);
            for _ in 0..80 {
                let z = anchor + dir * step;
                let v = h(z);
                peak = peak.max(v);
                if v < 1e-16 * peak && g.pdf(z) < 1e-16 * g.pdf(anchor).max(1e-300) {
                    return z;
                }
                step *= 2.0;
            }
            anchor + dir * step
        };
        let lo = if a.is_finite() { a } else { reach(-1.0) };
        let hi = if b.is_finite() { b } else { reach(1.0) };
        let width = (hi - lo) / ENVELOPE_BINS as f64;
        let env: Vec<f64> = (0..ENVELOPE_BINS)
            .map(|i| {
                let l = lo + i as f64 * width;
                1.05 * h(l).max(h(l + 0.5 * width)).max(h(l + width))
            })
            .collect();
        if env.iter().any(|v| !v.is_finite()) {
            return domain("exceedance intensity is unbounded over the covariate support");
        }
        let pick = WeightedIndex::new(&env).map_err(|_| Error::Domain("no exceedances are possible above the threshold".into()))?;
        Ok(TiltedCovariate { lo, width, env, pick })
    }

    fn sample<R: Rng>(&self, h: &dyn Fn(f64) -> f64, rng: &mut R) -> f64 {
        loop {
            let i = self.pick.sample(rng);
            let z = self.lo + (i as f64 + rng.gen::<f64>()) * self.width;
            if rng.gen::<f64>() * self.env[i] < h(z) {
                return z;
            }
        }
    }
}

/// Draw a data set from the covariate-in-location model. Covariates of the
/// exceedances are drawn from g tilted by the exceedance rate, then each
/// exceedance from its conditional excess distribution.
pub fn simulate_ns(cfg: &SimConfig) -> Result<ExceedanceData> {
    cfg.check()?;
    let spec = cfg.covariate.as_ref().ok_or_else(|| Error::Domain("covariate simulation needs a covariate density".into()))?;
    let p = cfg.theta_ns()?;
    let g = CovariateDensity::from_spec(spec, None)?.centred();
    let u = cfg.u;
    let rate = |z: f64| tail_intensity((u - p.mu0 - p.mu1 * z) / p.sigma, p.xi);
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let total = match cfg.count {
        CountMode::Poisson => integrated_intensity_ns(&p, u, &g, &QuadSettings::default())?,
        CountMode::Fixed { .. } => f64::NAN,
    };
    let r = draw_count(cfg.count, total, &mut rng)?;
    let mut zs = Vec::with_capacity(r);
    if g.is_point_mass() {
        let z = g.support().0;
        if !(rate(z) > 0.0) || !rate(z).is_finite() {
            return domain(format!("threshold {u} is outside the model support"));
        }
        zs.resize(r, z);
    } else {
        let h = |z: f64| {
            let d = g.pdf(z);
            if d == 0.0 {
                0.0
            } else {
                d * rate(z)
            }
        };
        let tilt = TiltedCovariate::new(&h, &g)?;
        for _ in 0..r {
            zs.push(tilt.sample(&h, &mut rng));
        }
    }
    let excesses = zs
        .iter()
        .map(|&z| {
            let psi = p.sigma + p.xi * (u - p.mu0 - p.mu1 * z);
            u + gp_quantile(rng.gen::<f64>(), psi, p.xi)
        })
        .collect();
    ExceedanceData::with_covariates(u, excesses, cfg.n_years, zs, g.shift())
}

/// Dispatch on whether the config has a covariate.
pub fn simulate(cfg: &SimConfig) -> Result<ExceedanceData> {
    if cfg.covariate.is_some() {
        simulate_ns(cfg)
    } else {
        simulate_iid(cfg)
    }
}
