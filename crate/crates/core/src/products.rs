//! Return levels and predictive probabilities from posterior samples at the
//! annual parameterisation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariate::{quantile_sorted, CovariateDensity};
use crate::error::{domain, Error, Result};
use crate::evd::{tail_intensity, NsParamVec, ParamVec, XI_EPS};
use crate::mcmc::{Chain, ParamLayout};
use crate::model::integrated_intensity_ns;
use crate::quad::QuadSettings;

/// Neumaier-compensated sum.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0;
    let mut c = 0.0;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            c += (sum - t) + v;
        } else {
            c += (v - t) + sum;
        }
        sum = t;
    }
    sum + c
}

fn mean(values: &[f64]) -> f64 {
    compensated_sum(values.iter().copied()) / values.len() as f64
}

/// Level exceeded by the annual maximum once every `n` years on average.
pub fn return_level(p: &ParamVec, n: f64) -> Result<f64> {
    if !(n > 1.0) {
        return domain(format!("return period must exceed 1 year, got {n}"));
    }
    p.validate()?;
    let yp = -(-1.0 / n).ln_1p();
    let ly = yp.ln();
    Ok(if p.xi.abs() < XI_EPS {
        p.mu - p.sigma * ly
    } else {
        p.mu + p.sigma * (-p.xi * ly).exp_m1() / p.xi
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnLevelCurve {
    pub periods: Vec<f64>,
    pub mean: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub credible: f64,
}

/// Stationary parameters of chain row `i`; covariate chains are sliced at centred `z`.
pub fn row_params(chain: &Chain, i: usize, z: f64) -> Result<ParamVec> {
    let m = chain.m.ok_or_else(|| Error::Domain("chain carries no block count".into()))?;
    let row = chain.row(i);
    Ok(match chain.layout {
        ParamLayout::Iid => ParamVec::from_slice(row, m),
        ParamLayout::Covariate => NsParamVec::from_slice(row, m).at(z),
        ParamLayout::Generic => return domain("generic chain has no model parameters"),
    })
}

fn check_credible(level: f64) -> Result<()> {
    if !(level > 0.0 && level < 1.0) {
        return domain(format!("credible level must lie in (0, 1), got {level}"));
    }
    Ok(())
}

/// Posterior mean and equal-tailed bounds of return levels over `periods`.
/// Covariate chains are evaluated at centred covariate value 0.
pub fn return_level_posterior(chain: &Chain, periods: &[f64], credible: f64) -> Result<ReturnLevelCurve> {
    return_level_posterior_at(chain, periods, credible, 0.0)
}

/// As [`return_level_posterior`], slicing a covariate chain at centred `z`.
pub fn return_level_posterior_at(chain: &Chain, periods: &[f64], credible: f64, z: f64) -> Result<ReturnLevelCurve> {
    check_credible(credible)?;
    if chain.rows() == 0 {
        return domain("empty chain");
    }
    let params: Vec<ParamVec> = (0..chain.rows()).map(|i| row_params(chain, i, z)).collect::<Result<_>>()?;
    let tail = 0.5 * (1.0 - credible);
    let mut curve = ReturnLevelCurve { periods: periods.to_vec(), mean: vec![], lower: vec![], upper: vec![], credible };
    for &n in periods {
        let mut levels: Vec<f64> = params.par_iter().map(|p| return_level(p, n)).collect::<Result<_>>()?;
        curve.mean.push(mean(&levels));
        levels.sort_by(|a, b| a.total_cmp(b));
        curve.lower.push(quantile_sorted(&levels, tail));
        curve.upper.push(quantile_sorted(&levels, 1.0 - tail));
    }
    Ok(curve)
}

/// How the covariate enters a predictive probability.
#[derive(Debug, Clone)]
pub enum CovariateScenario {
    /// Stationary chain.
    None,
    /// Known centred covariate value.
    Known(f64),
    /// Unknown covariate with this density, in centred coordinates.
    Unknown(CovariateDensity),
}

fn check_fraction(block_fraction: f64) -> Result<()> {
    if !(block_fraction > 0.0 && block_fraction.is_finite()) {
        return domain(format!("block fraction must be positive, got {block_fraction}"));
    }
    Ok(())
}

/// `Pr{M ≤ y | θ}` for each chain row.
pub fn predictive_probabilities(
    chain: &Chain,
    y: f64,
    block_fraction: f64,
    scenario: &CovariateScenario,
    quad: &QuadSettings,
) -> Result<Vec<f64>> {
    check_fraction(block_fraction)?;
    if chain.rows() == 0 {
        return domain("empty chain");
    }
    let m = chain.m.ok_or_else(|| Error::Domain("chain carries no block count".into()))?;
    match (chain.layout, scenario) {
        (ParamLayout::Iid, CovariateScenario::None) | (ParamLayout::Covariate, CovariateScenario::Known(_) | CovariateScenario::Unknown(_)) => {}
        _ => return domain(format!("covariate scenario does not match a {:?} chain", chain.layout)),
    }
    (0..chain.rows())
        .into_par_iter()
        .map(|i| {
            let row = chain.row(i);
            let intensity = match scenario {
                CovariateScenario::None => {
                    let p = ParamVec::from_slice(row, m);
                    tail_intensity((y - p.mu) / p.sigma, p.xi)
                }
                CovariateScenario::Known(z) => {
                    let p = NsParamVec::from_slice(row, m).at(*z);
                    tail_intensity((y - p.mu) / p.sigma, p.xi)
                }
                CovariateScenario::Unknown(g) => {
                    let p = NsParamVec { m: 1.0, ..NsParamVec::from_slice(row, m) };
                    integrated_intensity_ns(&p, y, g, quad)?
                }
            };
            Ok((-block_fraction * intensity).exp())
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictiveSummary {
    pub level: f64,
    /// Posterior predictive `Pr{M ≤ level}`.
    pub probability: f64,
    /// `1 − probability` and equal-tailed credible bounds of the per-sample exceedance probability.
    pub exceedance: f64,
    pub exceedance_lower: f64,
    pub exceedance_upper: f64,
    /// `1/(1 − probability)` in blocks.
    pub return_period: f64,
}

/// Posterior predictive distribution of a future block maximum at `y`.
pub fn predictive_cdf(chain: &Chain, y: f64, block_fraction: f64, scenario: &CovariateScenario, quad: &QuadSettings) -> Result<f64> {
    Ok(mean(&predictive_probabilities(chain, y, block_fraction, scenario, quad)?))
}

pub fn predictive_summary(
    chain: &Chain,
    y: f64,
    block_fraction: f64,
    scenario: &CovariateScenario,
    quad: &QuadSettings,
    credible: f64,
) -> Result<PredictiveSummary> {
    check_credible(credible)?;
    let probs = predictive_probabilities(chain, y, block_fraction, scenario, quad)?;
    let mut exc: Vec<f64> = probs.iter().map(|p| 1.0 - p).collect();
    let probability = mean(&probs);
    exc.sort_by(|a, b| a.total_cmp(b));
    let tail = 0.5 * (1.0 - credible);
    Ok(PredictiveSummary {
        level: y,
        probability,
        exceedance: 1.0 - probability,
        exceedance_lower: quantile_sorted(&exc, tail),
        exceedance_upper: quantile_sorted(&exc, 1.0 - tail),
        return_period: return_period(probability),
    })
}

/// Mean recurrence interval of an event with non-exceedance probability `p`.
pub fn return_period(p: f64) -> f64 {
    1.0 / (1.0 - p)
}
