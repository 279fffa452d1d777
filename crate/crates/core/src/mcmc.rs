//! Component-wise random-walk Metropolis with burn-in step tuning, effective
//! sample size, and back-transformation of chains between block counts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::covariate::quantile_sorted;
use crate::error::{Error, Result};
use crate::evd::{transform_ns_params, transform_params, NsParamVec, ParamVec};
use crate::fisher::{IID_NAMES, NS_NAMES};
use crate::model::LogDensity;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tuning {
    /// Initial proposal standard deviations; defaults to 10% of |init| (or 0.1).
    #[serde(default)]
    pub initial_steps: Option<Vec<f64>>,
    /// Iterations between step-size updates.
    pub window: usize,
    /// Multiplicative step change.
    pub factor: f64,
    pub target_low: f64,
    pub target_high: f64,
    /// Tune during burn-in.
    pub adapt: bool,
}

impl Default for Tuning {
    fn default() -> Self {
        Tuning { initial_steps: None, window: 100, factor: 1.1, target_low: 0.20, target_high: 0.25, adapt: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McmcConfig {
    /// Total iterations including burn-in.
    pub n_iter: usize,
    pub burn_in: usize,
    pub seed: u64,
    #[serde(default)]
    pub tuning: Tuning,
}

impl McmcConfig {
    /// Burn-in defaults to 10% of the run.
    pub fn new(n_iter: usize, seed: u64) -> Self {
        McmcConfig { n_iter, burn_in: n_iter / 10, seed, tuning: Tuning::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_iter <= self.burn_in {
            return Err(Error::Config(format!("iterations ({}) must exceed burn-in ({})", self.n_iter, self.burn_in)));
        }
        let t = &self.tuning;
        if t.window == 0 || !(t.factor > 1.0) || !(t.target_low < t.target_high) {
            return Err(Error::Config("invalid tuning settings".into()));
        }
        Ok(())
    }
}

/// What the columns of a chain mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamLayout {
    /// (μ, σ, ξ)
    Iid,
    /// (μ⁽⁰⁾, μ⁽¹⁾, σ, ξ)
    Covariate,
    Generic,
}

/// Post-burn-in samples with sampler metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chain {
    /// Row-major, `rows() × dim` values.
    pub samples: Vec<f64>,
    pub dim: usize,
    pub names: Vec<String>,
    /// Accepted proposals per component after burn-in.
    pub accept_counts: Vec<u64>,
    /// Proposal standard deviations used after burn-in.
    pub step_sizes: Vec<f64>,
    pub burn_in: usize,
    pub n_iter: usize,
    pub seed: u64,
    pub layout: ParamLayout,
    /// Block count of the parameterisation, when the chain is of a model.
    pub m: Option<f64>,
}

impl Chain {
    pub fn rows(&self) -> usize {
        self.samples.len() / self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.samples[i * self.dim..(i + 1) * self.dim]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.samples.iter().skip(j).step_by(self.dim).copied().collect()
    }

    pub fn column_by_name(&self, name: &str) -> Option<Vec<f64>> {
        self.names.iter().position(|n| n == name).map(|j| self.column(j))
    }

    pub fn acceptance_rates(&self) -> Vec<f64> {
        let n = (self.n_iter - self.burn_in) as f64;
        self.accept_counts.iter().map(|&a| a as f64 / n).collect()
    }

    /// Attach model meaning to a generic chain.
    pub fn tagged(mut self, layout: ParamLayout, m: f64) -> Self {
        self.names = match layout {
            ParamLayout::Iid => IID_NAMES.iter().map(|s| s.to_string()).collect(),
            ParamLayout::Covariate => NS_NAMES.iter().map(|s| s.to_string()).collect(),
            ParamLayout::Generic => self.names,
        };
        self.layout = layout;
        self.m = Some(m);
        self
    }

    /// Build a chain from explicit rows (e.g. a loaded sample file).
    pub fn from_rows(rows: &[Vec<f64>], names: Vec<String>, layout: ParamLayout, m: Option<f64>) -> Result<Self> {
        let dim = names.len();
        if rows.is_empty() || rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Data("chain rows must be non-empty and match the column count".into()));
        }
        Ok(Chain {
            samples: rows.iter().flatten().copied().collect(),
            dim,
            names,
            accept_counts: vec![0; dim],
            step_sizes: vec![f64::NAN; dim],
            burn_in: 0,
            n_iter: rows.len(),
            seed: 0,
            layout,
            m,
        })
    }
}

fn checked(v: Result<f64>, iter: usize) -> Result<f64> {
    let v = v?;
    if v.is_nan() {
        return Err(Error::Numerical(format!("target returned NaN at iteration {iter}")));
    }
    Ok(v)
}

/// Run one component-wise random-walk Metropolis chain.
pub fn run_chain<T: LogDensity + ?Sized>(target: &T, init: &[f64], cfg: &McmcConfig) -> Result<Chain> {
    cfg.validate()?;
    let d = target.dim();
    if init.len() != d {
        return Err(Error::Domain(format!("initial value has length {}, target dimension is {d}", init.len())));
    }
    let mut steps = match &cfg.tuning.initial_steps {
        Some(s) if s.len() == d && s.iter().all(|v| *v > 0.0 && v.is_finite()) => s.clone(),
        Some(_) => return Err(Error::Config("initial step sizes must be positive, one per parameter".into())),
        None => init.iter().map(|v| if *v != 0.0 { 0.1 * v.abs() } else { 0.1 }).collect(),
    };
    let mut x = init.to_vec();
    let mut cur = checked(target.log_density(&x), 0)?;
    if !cur.is_finite() {
        return Err(Error::Domain(format!("target is not finite at the initial value {init:?}")));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let keep = cfg.n_iter - cfg.burn_in;
    let mut samples = Vec::with_capacity(keep * d);
    let mut accepted = vec![0u64; d];
    let mut window_acc = vec![0usize; d];
    let t = &cfg.tuning;
    for it in 0..cfg.n_iter {
        for j in 0..d {
            let z: f64 = rng.sample(StandardNormal);
            let old = x[j];
            x[j] = old + steps[j] * z;
            let prop = checked(target.log_density(&x), it)?;
            let u: f64 = rng.gen();
            if prop > f64::NEG_INFINITY && u.ln() < prop - cur {
                cur = prop;
                if it >= cfg.burn_in {
                    accepted[j] += 1;
                } else {
                    window_acc[j] += 1;
                }
            } else {
                x[j] = old;
            }
        }
        if it < cfg.burn_in && (it + 1) % t.window == 0 {
            if t.adapt {
                for j in 0..d {
                    let rate = window_acc[j] as f64 / t.window as f64;
                    if rate < t.target_low {
                        steps[j] /= t.factor;
                    } else if rate > t.target_high {
                        steps[j] *= t.factor;
                    }
                }
            }
            window_acc.iter_mut().for_each(|a| *a = 0);
        }
        if it >= cfg.burn_in {
            samples.extend_from_slice(&x);
        }
    }
    Ok(Chain {
        samples,
        dim: d,
        names: (0..d).map(|j| format!("x{j}")).collect(),
        accept_counts: accepted,
        step_sizes: steps,
        burn_in: cfg.burn_in,
        n_iter: cfg.n_iter,
        seed: cfg.seed,
        layout: ParamLayout::Generic,
        m: None,
    })
}

/// Seed for chain `i` derived from a master seed (SplitMix64 mixing).
pub fn derive_seed(master: u64, i: u64) -> u64 {
    let mut z = master.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(i + 1));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent chains run concurrently, seeds derived from `cfg.seed`.
pub fn run_chains<T: LogDensity + Sync + ?Sized>(target: &T, inits: &[Vec<f64>], cfg: &McmcConfig) -> Result<Vec<Chain>> {
    std::thread::scope(|s| {
        let handles: Vec<_> = inits
            .iter()
            .enumerate()
            .map(|(i, init)| {
                let c = McmcConfig { seed: derive_seed(cfg.seed, i as u64), ..cfg.clone() };
                s.spawn(move || run_chain(target, init, &c))
            })
            .collect();
        handles.into_iter().map(|h| h.join().map_err(|_| Error::Numerical("chain thread panicked".into()))?).collect()
    })
}

/// Effective sample size of one series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EssReport {
    pub ess: f64,
    /// Last lag included in the autocorrelation sum.
    pub lag: usize,
    pub n: usize,
    /// The raw estimate exceeded `n` and was clipped.
    pub clipped: bool,
}

pub const DEFAULT_ESS_TRUNCATION: f64 = 0.05;

/// `n / (1 + 2 Σ ν_i)`, summing sample autocorrelations from lag 1 until the
/// first lag whose autocorrelation falls below `truncation`.
pub fn ess(series: &[f64], truncation: f64) -> Result<EssReport> {
    let n = series.len();
    if n < 10 {
        return Err(Error::Diagnostic(format!("series of length {n} is too short for an effective sample size")));
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let dev: Vec<f64> = series.iter().map(|x| x - mean).collect();
    let c0: f64 = dev.iter().map(|v| v * v).sum();
    if !(c0 > 0.0) || !c0.is_finite() {
        return Err(Error::Diagnostic("effective sample size is undefined for a constant series".into()));
    }
    let mut sum = 0.0;
    let mut lag = 0;
    for k in 1..n {
        let ck: f64 = dev[..n - k].iter().zip(&dev[k..]).map(|(a, b)| a * b).sum();
        let rho = ck / c0;
        if rho < truncation {
            break;
        }
        sum += rho;
        lag = k;
    }
    let raw = n as f64 / (1.0 + 2.0 * sum);
    let clipped = raw > n as f64;
    if clipped {
        log::warn!("effective sample size {raw:.1} exceeds chain length {n}; clipped");
    }
    Ok(EssReport { ess: raw.min(n as f64), lag, n, clipped })
}

/// Effective sample size of every column.
pub fn chain_ess(chain: &Chain) -> Result<Vec<EssReport>> {
    (0..chain.dim).map(|j| ess(&chain.column(j), DEFAULT_ESS_TRUNCATION)).collect()
}

/// Apply the block-count transform row by row.
pub fn back_transform_chain(chain: &Chain, k: f64) -> Result<Chain> {
    let m = chain.m.ok_or_else(|| Error::Domain("chain carries no block count".into()))?;
    let mut out = chain.clone();
    for i in 0..chain.rows() {
        let row = chain.row(i);
        let new: Vec<f64> = match chain.layout {
            ParamLayout::Iid => transform_params(&ParamVec::from_slice(row, m), k)?.to_vec().to_vec(),
            ParamLayout::Covariate => transform_ns_params(&NsParamVec::from_slice(row, m), k)?.to_vec().to_vec(),
            ParamLayout::Generic => return Err(Error::Domain("generic chain cannot be transformed".into())),
        };
        out.samples[i * chain.dim..(i + 1) * chain.dim].copy_from_slice(&new);
    }
    out.m = Some(k);
    Ok(out)
}

/// Marginal posterior summary of one column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q500: f64,
    pub q975: f64,
}

pub fn summarize(chain: &Chain) -> Vec<ParamSummary> {
    (0..chain.dim)
        .map(|j| {
            let mut c = chain.column(j);
            let n = c.len() as f64;
            let mean = crate::products::compensated_sum(c.iter().copied()) / n;
            let var = crate::products::compensated_sum(c.iter().map(|v| (v - mean).powi(2))) / (n - 1.0).max(1.0);
            c.sort_by(|a, b| a.partial_cmp(b).unwrap());
            ParamSummary {
                name: chain.names[j].clone(),
                mean,
                sd: var.sqrt(),
                q025: quantile_sorted(&c, 0.025),
                q500: quantile_sorted(&c, 0.5),
                q975: quantile_sorted(&c, 0.975),
            }
        })
        .collect()
}
