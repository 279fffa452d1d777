//! Covariate densities `g` used in the integrated intensity of the covariate model.

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad::{integrate_vec, Domain, QuadSettings};

/// User-facing description of a covariate density on the raw covariate scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovariateSpec {
    /// Exponential with the given rate (mean `1/rate`).
    Exponential { rate: f64 },
    Normal { mean: f64, sd: f64 },
    Uniform { lo: f64, hi: f64 },
    PointMass { at: f64 },
    /// Gaussian kernel estimate of the covariate column.
    Kde,
}

/// Gaussian kernel density estimate, cached on a regular grid.
#[derive(Debug, Clone)]
pub struct Kde {
    data: Arc<Vec<f64>>,
    bandwidth: f64,
    lo: f64,
    step: f64,
    values: Vec<f64>,
}

/// Grid size used for covariate kernel estimates.
pub const KDE_GRID: usize = 1024;

/// Grid half-width in bandwidths; the kernel is below 1e-12 of its peak beyond it.
const KDE_PAD: f64 = 7.5;

impl Kde {
    pub fn new(data: &[f64], grid_points: usize) -> Result<Self> {
        let bw = silverman_bandwidth(data)?;
        Self::with_bandwidth(data, bw, grid_points)
    }

    pub fn with_bandwidth(data: &[f64], bandwidth: f64, grid_points: usize) -> Result<Self> {
        if data.is_empty() || data.iter().any(|x| !x.is_finite()) {
            return Err(Error::Data("kernel density needs finite data".into()));
        }
        if !(bandwidth > 0.0) || grid_points < 16 {
            return Err(Error::Domain("kernel density needs positive bandwidth and at least 16 grid points".into()));
        }
        let mut sorted = data.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let lo = sorted[0] - KDE_PAD * bandwidth;
        let hi = sorted[sorted.len() - 1] + KDE_PAD * bandwidth;
        let step = (hi - lo) / (grid_points - 1) as f64;
        let norm = 1.0 / (sorted.len() as f64 * bandwidth * (2.0 * std::f64::consts::PI).sqrt());
        let mut values: Vec<f64> = (0..grid_points)
            .map(|i| {
                let z = lo + step * i as f64;
                let a = sorted.partition_point(|&x| x < z - KDE_PAD * bandwidth);
                let b = sorted.partition_point(|&x| x <= z + KDE_PAD * bandwidth);
                sorted[a..b].iter().map(|&x| (-0.5 * ((z - x) / bandwidth).powi(2)).exp()).sum::<f64>() * norm
            })
            .collect();
        // normalise so the interpolant integrates to one exactly
        let trap: f64 = values.windows(2).map(|w| 0.5 * (w[0] + w[1]) * step).sum();
        values.iter_mut().for_each(|v| *v /= trap);
        Ok(Kde { data: Arc::new(sorted), bandwidth, lo, step, values })
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn support(&self) -> (f64, f64) {
        (self.lo, self.lo + self.step * (self.values.len() - 1) as f64)
    }

    /// Grid abscissae and density values.
    pub fn grid(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.values.iter().enumerate().map(|(i, &v)| (self.lo + self.step * i as f64, v))
    }

    pub fn pdf(&self, z: f64) -> f64 {
        let t = (z - self.lo) / self.step;
        if !(t >= 0.0) || t > (self.values.len() - 1) as f64 {
            return 0.0;
        }
        let i = (t.floor() as usize).min(self.values.len() - 2);
        let f = t - i as f64;
        self.values[i] * (1.0 - f) + self.values[i + 1] * f
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// `∫ f(z) k(z) dz` over the grid with three-point Gauss–Legendre in every
    /// cell, exact for the piecewise-linear density.
    fn integrate_vec<const N: usize, F: Fn(f64) -> [f64; N]>(&self, f: F) -> [f64; N] {
        let x = (0.6f64).sqrt();
        let nodes = [-x, 0.0, x];
        let weights = [5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0];
        let h = 0.5 * self.step;
        let mut acc = [0.0; N];
        for i in 0..self.values.len() - 1 {
            let (g0, g1) = (self.values[i], self.values[i + 1]);
            if g0 == 0.0 && g1 == 0.0 {
                continue;
            }
            let c = self.lo + self.step * (i as f64 + 0.5);
            for (t, w) in nodes.iter().zip(&weights) {
                let g = g0 + (g1 - g0) * 0.5 * (1.0 + t);
                let v = f(c + h * t);
                for j in 0..N {
                    acc[j] += w * h * g * v[j];
                }
            }
        }
        acc
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let i = rng.gen_range(0..self.data.len());
        let e: f64 = StandardNormal.sample(rng);
        self.data[i] + self.bandwidth * e
    }
}

/// Silverman's rule of thumb, `0.9 min(sd, IQR/1.34) n^{−1/5}`.
pub fn silverman_bandwidth(data: &[f64]) -> Result<f64> {
    let n = data.len();
    if n < 2 {
        return Err(Error::Data("bandwidth needs at least two values".into()));
    }
    let mean = data.iter().sum::<f64>() / n as f64;
    let sd = (data.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    let mut s = data.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let iqr = quantile_sorted(&s, 0.75) - quantile_sorted(&s, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    if !(spread > 0.0) {
        return Err(Error::Data("bandwidth undefined for a constant series".into()));
    }
    Ok(0.9 * spread * (n as f64).powf(-0.2))
}

/// Linear-interpolation sample quantile of sorted data.
pub fn quantile_sorted(s: &[f64], p: f64) -> f64 {
    let h = (s.len() - 1) as f64 * p;
    let i = h.floor() as usize;
    if i + 1 >= s.len() {
        return s[s.len() - 1];
    }
    s[i] + (h - i as f64) * (s[i + 1] - s[i])
}

#[derive(Debug, Clone)]
enum Kind {
    Exponential { rate: f64 },
    Normal { mean: f64, sd: f64 },
    Uniform { lo: f64, hi: f64 },
    PointMass { at: f64 },
    Kde(Arc<Kde>),
}

/// Density of the centred covariate `z = z_raw − shift`.
#[derive(Debug, Clone)]
pub struct CovariateDensity {
    kind: Kind,
    shift: f64,
}

impl CovariateDensity {
    /// Build from a spec. `column` supplies data for the kernel estimate.
    pub fn from_spec(spec: &CovariateSpec, column: Option<&[f64]>) -> Result<Self> {
        let kind = match *spec {
            CovariateSpec::Exponential { rate } if rate > 0.0 && rate.is_finite() => Kind::Exponential { rate },
            CovariateSpec::Normal { mean, sd } if sd > 0.0 && mean.is_finite() => Kind::Normal { mean, sd },
            CovariateSpec::Uniform { lo, hi } if hi > lo => Kind::Uniform { lo, hi },
            CovariateSpec::PointMass { at } if at.is_finite() => Kind::PointMass { at },
            CovariateSpec::Kde => {
                let col = column.ok_or_else(|| Error::Config("kernel density needs covariate data".into()))?;
                Kind::Kde(Arc::new(Kde::new(col, KDE_GRID)?))
            }
            _ => return Err(Error::Config(format!("invalid covariate density {spec:?}"))),
        };
        Ok(CovariateDensity { kind, shift: 0.0 })
    }

    pub fn exponential(rate: f64) -> Result<Self> {
        Self::from_spec(&CovariateSpec::Exponential { rate }, None)
    }

    pub fn point_mass(at: f64) -> Result<Self> {
        Self::from_spec(&CovariateSpec::PointMass { at }, None)
    }

    pub fn kde(data: &[f64]) -> Result<Self> {
        Self::from_spec(&CovariateSpec::Kde, Some(data))
    }

    /// Mean of the raw covariate.
    pub fn raw_mean(&self) -> f64 {
        match &self.kind {
            Kind::Exponential { rate } => 1.0 / rate,
            Kind::Normal { mean, .. } => *mean,
            Kind::Uniform { lo, hi } => 0.5 * (lo + hi),
            Kind::PointMass { at } => *at,
            Kind::Kde(k) => k.mean(),
        }
    }

    pub fn shift(&self) -> f64 {
        self.shift
    }

    /// Same density expressed in `z_raw − c`.
    pub fn shifted(&self, c: f64) -> Self {
        CovariateDensity { kind: self.kind.clone(), shift: c }
    }

    /// Same density centred at its own mean.
    pub fn centred(&self) -> Self {
        self.shifted(self.raw_mean())
    }

    fn raw_pdf(&self, x: f64) -> f64 {
        match &self.kind {
            Kind::Exponential { rate } => {
                if x < 0.0 {
                    0.0
                } else {
                    rate * (-rate * x).exp()
                }
            }
            Kind::Normal { mean, sd } => {
                let t = (x - mean) / sd;
                (-0.5 * t * t).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
            }
            Kind::Uniform { lo, hi } => {
                if x >= *lo && x <= *hi {
                    1.0 / (hi - lo)
                } else {
                    0.0
                }
            }
            Kind::PointMass { .. } => 0.0,
            Kind::Kde(k) => k.pdf(x),
        }
    }

    /// Density at centred value `z`. A point mass has no density and returns 0.
    pub fn pdf(&self, z: f64) -> f64 {
        self.raw_pdf(z + self.shift)
    }

    pub fn is_point_mass(&self) -> bool {
        matches!(self.kind, Kind::PointMass { .. })
    }

    /// Support in centred coordinates (possibly infinite).
    pub fn support(&self) -> (f64, f64) {
        let (a, b) = match &self.kind {
            Kind::Exponential { .. } => (0.0, f64::INFINITY),
            Kind::Normal { .. } => (f64::NEG_INFINITY, f64::INFINITY),
            Kind::Uniform { lo, hi } => (*lo, *hi),
            Kind::PointMass { at } => (*at, *at),
            Kind::Kde(k) => k.support(),
        };
        (a - self.shift, b - self.shift)
    }

    /// `∫ f(z) g(z) dz` for a vector-valued `f` of the centred covariate.
    pub fn expect_vec<const N: usize, F: Fn(f64) -> [f64; N]>(&self, f: F, s: &QuadSettings) -> Result<[f64; N]> {
        match &self.kind {
            Kind::PointMass { at } => return Ok(f(at - self.shift)),
            Kind::Kde(k) => {
                let out = k.integrate_vec(|x| f(x - self.shift));
                if out.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Numerical("non-finite integrand over the kernel density grid".into()));
                }
                return Ok(out);
            }
            _ => {}
        }
        let (a, b) = self.support();
        let dom = match (a.is_finite(), b.is_finite()) {
            (true, true) => Domain::Finite(a, b),
            (true, false) => Domain::Above(a),
            (false, true) => Domain::Below(b),
            (false, false) => Domain::Whole,
        };
        let mut points = Vec::new();
        if let Kind::Normal { mean, .. } = self.kind {
            points.push(mean - self.shift);
        }
        let out = integrate_vec(
            |z| {
                let g = self.pdf(z);
                if g == 0.0 {
                    return [0.0; N];
                }
                let v = f(z);
                std::array::from_fn(|i| if v[i] == 0.0 { 0.0 } else { v[i] * g })
            },
            dom,
            &points,
            s,
        )?;
        Ok(out.value)
    }

    pub fn expect<F: Fn(f64) -> f64>(&self, f: F, s: &QuadSettings) -> Result<f64> {
        Ok(self.expect_vec(|z| [f(z)], s)?[0])
    }

    /// Draw a centred covariate value.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let raw = match &self.kind {
            Kind::Exponential { rate } => Exp::new(*rate).unwrap().sample(rng),
            Kind::Normal { mean, sd } => {
                let e: f64 = StandardNormal.sample(rng);
                mean + sd * e
            }
            Kind::Uniform { lo, hi } => rng.gen_range(*lo..*hi),
            Kind::PointMass { at } => *at,
            Kind::Kde(k) => k.sample(rng),
        };
        raw - self.shift
    }
}
