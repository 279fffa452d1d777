//! Expected information of the Poisson process model, asymptotic covariances
//! and correlation summaries.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::covariate::CovariateDensity;
use crate::error::{domain, Error, Result};
use crate::evd::{NsParamVec, ParamVec};
use crate::model::{integrated_intensity_ns, kappa, min_bracket, score_at_kappa};
use crate::quad::{LaguerreRule, QuadSettings};

/// Below this |ξ| the information is computed by Gauss–Laguerre quadrature
/// over the exceedance distribution instead of the closed form.
pub const SERIES_XI: f64 = 0.05;

/// Largest acceptable condition number of the unit-diagonal scaled matrix.
pub const MAX_CONDITION: f64 = 1e12;

pub const IID_NAMES: [&str; 3] = ["mu", "sigma", "xi"];
pub const NS_NAMES: [&str; 4] = ["mu0", "mu1", "sigma", "xi"];

/// Symmetric information, covariance or correlation matrix with labelled axes.
#[derive(Debug, Clone, PartialEq)]
pub struct InfoMatrix {
    pub names: Vec<&'static str>,
    pub values: DMatrix<f64>,
}

/// How the exceedance rate entering the information is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub enum RateSource {
    /// Expected count implied by the parameters.
    #[default]
    Expected,
    /// Observed exceedance count.
    Observed(f64),
}

impl InfoMatrix {
    pub fn dim(&self) -> usize {
        self.values.nrows()
    }

    pub fn get(&self, a: &str, b: &str) -> f64 {
        let i = self.index(a);
        let j = self.index(b);
        self.values[(i, j)]
    }

    pub fn index(&self, a: &str) -> usize {
        self.names.iter().position(|n| *n == a).unwrap_or_else(|| panic!("no parameter named {a}"))
    }

    fn from_upper(names: &[&'static str], upper: &[f64]) -> Self {
        let d = names.len();
        let mut m = DMatrix::zeros(d, d);
        let mut k = 0;
        for i in 0..d {
            for j in i..d {
                m[(i, j)] = upper[k];
                m[(j, i)] = upper[k];
                k += 1;
            }
        }
        InfoMatrix { names: names.to_vec(), values: m }
    }

    fn scaled(&self) -> Result<(DMatrix<f64>, Vec<f64>)> {
        let d = self.dim();
        let mut s = Vec::with_capacity(d);
        for i in 0..d {
            let v = self.values[(i, i)];
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Numerical(format!("non-positive diagonal entry {v} for {}", self.names[i])));
            }
            s.push(1.0 / v.sqrt());
        }
        let mut c = self.values.clone();
        for i in 0..d {
            for j in 0..d {
                c[(i, j)] *= s[i] * s[j];
            }
        }
        Ok((c, s))
    }

    /// Condition number after scaling to unit diagonal.
    pub fn condition_number(&self) -> Result<f64> {
        let (c, _) = self.scaled()?;
        let e = c.symmetric_eigen().eigenvalues;
        let max = e.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = e.iter().copied().fold(f64::INFINITY, f64::min);
        Ok(if min <= 0.0 { f64::INFINITY } else { max / min })
    }

    /// Inverse through the unit-diagonal scaled Cholesky factor.
    pub fn inverse(&self) -> Result<InfoMatrix> {
        let cond = self.condition_number()?;
        if !(cond <= MAX_CONDITION) {
            return Err(Error::Numerical(format!("information matrix is ill-conditioned (condition number {cond:e})")));
        }
        let (c, s) = self.scaled()?;
        let ch = c.cholesky().ok_or_else(|| Error::Numerical("information matrix is not positive definite".into()))?;
        let mut inv = ch.inverse();
        let d = self.dim();
        for i in 0..d {
            for j in 0..d {
                inv[(i, j)] *= s[i] * s[j];
            }
        }
        let inv = 0.5 * (&inv + inv.transpose());
        Ok(InfoMatrix { names: self.names.clone(), values: inv })
    }

    /// Rescale a covariance to unit diagonal.
    pub fn correlation(&self) -> Result<InfoMatrix> {
        let (c, _) = self.scaled()?;
        Ok(InfoMatrix { names: self.names.clone(), values: c })
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim()).map(|i| self.values.row(i).iter().copied().collect()).collect()
    }
}

/// Expected information of one point above `u` (per unit rate), stationary model,
/// in (μ, σ, ξ) order as an upper triangle.
fn unit_info(v: f64, sigma: f64, xi: f64) -> Result<[f64; 6]> {
    if xi <= -0.5 {
        return domain(format!("expected information is infinite for shape {xi} <= -0.5"));
    }
    let w = 1.0 + xi * v;
    if !(w > 0.0) {
        return domain("threshold outside the support of the intensity");
    }
    if xi.abs() < SERIES_XI {
        return Ok(unit_info_laguerre(v, sigma, xi));
    }
    let a = xi;
    let c = 1.0 + a;
    let lw = (a * v).ln_1p();
    let eq1 = 1.0 / (w * c);
    let eq2 = 1.0 / (w * w * (1.0 + 2.0 * a));
    let el = lw + a;
    let el2 = lw * lw + 2.0 * a * lw + 2.0 * a * a;
    let elq = lw / (w * c) + a / (w * c * c);
    let s2 = sigma * sigma;
    let imm = c * c * eq2 / s2;
    let ims = (v - a / (1.0 + 2.0 * a)) / (s2 * w * w);
    let iss = (v * v + 1.0 / (1.0 + 2.0 * a)) / (s2 * w * w);
    let eqgx = elq - c * eq1 + c * eq2;
    let imx = c * eqgx / (sigma * a * a);
    let isx = ((el - c + c * eq1) - c * eqgx) / (sigma * a * a * a);
    let ixx = (el2 + c * c + c * c * eq2 - 2.0 * c * el + 2.0 * c * elq - 2.0 * c * c * eq1) / (a * a * a * a);
    Ok([imm, ims, imx, iss, isx, ixx])
}

/// Gauss–Laguerre version of [`unit_info`]: above `u`, `κ = κ_u + ℓ` with ℓ ~ Exp(1).
fn unit_info_laguerre(v: f64, sigma: f64, xi: f64) -> [f64; 6] {
    let ku = kappa(v, xi).expect("support checked by caller");
    let rule = LaguerreRule::get(64);
    let mut acc = [0.0; 6];
    for (&l, &wt) in rule.nodes.iter().zip(&rule.weights) {
        let g = score_at_kappa(ku + l, sigma, xi);
        acc[0] += wt * g[0] * g[0];
        acc[1] += wt * g[0] * g[1];
        acc[2] += wt * g[0] * g[2];
        acc[3] += wt * g[1] * g[1];
        acc[4] += wt * g[1] * g[2];
        acc[5] += wt * g[2] * g[2];
    }
    acc
}

/// Expected information of the stationary model, rate implied by the parameters.
pub fn fisher_matrix(p: &ParamVec, u: f64) -> Result<InfoMatrix> {
    fisher_matrix_with(p, u, RateSource::Expected)
}

/// Expected information of the stationary model with a chosen rate source.
pub fn fisher_matrix_with(p: &ParamVec, u: f64, rate: RateSource) -> Result<InfoMatrix> {
    p.validate()?;
    let v = (u - p.mu) / p.sigma;
    let unit = unit_info(v, p.sigma, p.xi)?;
    let n = match rate {
        RateSource::Expected => p.expected_exceedances(u),
        RateSource::Observed(r) => r,
    };
    if !(n > 0.0 && n.is_finite()) {
        return domain(format!("exceedance rate must be positive and finite, got {n}"));
    }
    Ok(InfoMatrix::from_upper(&IID_NAMES, &unit.map(|x| x * n)))
}

/// Asymptotic covariance (inverse expected information).
pub fn asymptotic_cov(p: &ParamVec, u: f64) -> Result<InfoMatrix> {
    fisher_matrix(p, u)?.inverse()
}

pub fn asymptotic_cov_with(p: &ParamVec, u: f64, rate: RateSource) -> Result<InfoMatrix> {
    fisher_matrix_with(p, u, rate)?.inverse()
}

/// (row, column) of each upper-triangle entry in parameter order.
const NS_UPPER: [(usize, usize); 10] = [(0, 0), (0, 1), (0, 2), (0, 3), (1, 1), (1, 2), (1, 3), (2, 2), (2, 3), (3, 3)];

/// Expected information of the covariate model in (μ⁽⁰⁾, μ⁽¹⁾, σ, ξ) order.
pub fn fisher_matrix_ns(p: &NsParamVec, u: f64, g: &CovariateDensity, quad: &QuadSettings) -> Result<InfoMatrix> {
    fisher_matrix_ns_with(p, u, g, quad, RateSource::Expected)
}

pub fn fisher_matrix_ns_with(p: &NsParamVec, u: f64, g: &CovariateDensity, quad: &QuadSettings, rate: RateSource) -> Result<InfoMatrix> {
    p.validate()?;
    if p.xi <= -0.5 {
        return domain(format!("expected information is infinite for shape {} <= -0.5", p.xi));
    }
    if p.xi > 0.0 && min_bracket(p, u, g) <= 0.0 {
        return domain("threshold below the lower endpoint for part of the covariate support");
    }
    let rel = quad.rel_tol.max(1e-10);
    let mut failure: Option<Error> = None;
    let cell = std::cell::RefCell::new(&mut failure);
    let integrand = |z: f64| -> [f64; 10] {
        let q = p.at(z);
        let v = (u - q.mu) / q.sigma;
        if 1.0 + q.xi * v <= 0.0 {
            return [0.0; 10];
        }
        let re = q.expected_exceedances(u);
        match unit_info(v, q.sigma, q.xi) {
            Ok(f) => {
                let [mm, ms, mx, ss, sx, xx] = f.map(|e| e * re);
                [mm, z * mm, ms, mx, z * z * mm, z * ms, z * mx, ss, sx, xx]
            }
            Err(e) => {
                cell.borrow_mut().get_or_insert(e);
                [f64::NAN; 10]
            }
        }
    };
    // Off-diagonal entries can cancel to zero, so tolerances are set relative to
    // sqrt(I_ii I_jj) using a coarse pass for the diagonal.
    let coarse = g.expect_vec(
        |z| -> [f64; 4] {
            let v = integrand(z);
            [v[0], v[4], v[7], v[9]]
        },
        &QuadSettings { abs_tol: 0.0, rel_tol: 1e-6, ..*quad },
    );
    if let Some(e) = cell.borrow_mut().take() {
        return Err(e);
    }
    let diag = coarse?;
    let scale: [f64; 10] = std::array::from_fn(|k| {
        let (i, j) = NS_UPPER[k];
        let d = (diag[i] * diag[j]).sqrt();
        if d > 0.0 && d.is_finite() {
            d
        } else {
            1.0
        }
    });
    let fine = g.expect_vec(
        |z| -> [f64; 10] {
            let v = integrand(z);
            std::array::from_fn(|k| v[k] / scale[k])
        },
        &QuadSettings { abs_tol: rel, rel_tol: rel, ..*quad },
    );
    if let Some(e) = failure {
        return Err(e);
    }
    let fine = fine?;
    let mut vals: [f64; 10] = std::array::from_fn(|k| fine[k] * scale[k]);
    if let RateSource::Observed(r) = rate {
        let lam = integrated_intensity_ns(p, u, g, quad)?;
        vals.iter_mut().for_each(|x| *x *= r / lam);
    }
    Ok(InfoMatrix::from_upper(&NS_NAMES, &vals))
}

/// Sums of absolute pairwise correlations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationSummary {
    pub total: f64,
    pub per_parameter: Vec<(String, f64)>,
}

impl CorrelationSummary {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.per_parameter.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }
}

pub fn correlation_summaries(cov: &InfoMatrix) -> Result<CorrelationSummary> {
    let c = cov.correlation()?;
    let d = c.dim();
    let mut total = 0.0;
    let mut per = vec![0.0; d];
    for i in 0..d {
        for j in (i + 1)..d {
            let a = c.values[(i, j)].abs();
            total += a;
            per[i] += a;
            per[j] += a;
        }
    }
    Ok(CorrelationSummary {
        total,
        per_parameter: c.names.iter().zip(per).map(|(n, v)| (n.to_string(), v)).collect(),
    })
}

/// Closed-form asymptotic covariances of the stationary model in terms of the
/// block count `m`, expected exceedance count `r`, scale at `m` and shape.
/// These lose precision as ξ → 0; the matrix inverse is the reference.
pub mod closed_form {
    pub fn acov_sigma_xi(m: f64, r: f64, sigma: f64, xi: f64) -> f64 {
        (xi + 1.0) * sigma * ((xi + 1.0) * (r / m).ln() - 1.0) / r
    }

    pub fn acov_mu_xi(m: f64, r: f64, sigma: f64, xi: f64) -> f64 {
        let l = (r / m).ln();
        let rx = (xi * l).exp();
        (xi + 1.0) * sigma / (xi * xi * r * rx) * (xi * (xi + 1.0) * rx * l - (2.0 * xi + 1.0) * (rx - 1.0))
    }

    pub fn acov_mu_sigma(m: f64, r: f64, sigma: f64, xi: f64) -> f64 {
        let l = (r / m).ln();
        let rx = (xi * l).exp();
        let inner = (xi + 1.0) * l * ((xi + 1.0) * xi * l - 3.0 * xi - 1.0) + xi * (xi * (xi + 2.0) + 3.0) + 1.0;
        sigma * sigma / (xi * xi * r * rx) * (rx * inner + (xi + 1.0) * (2.0 * xi + 1.0) * (l - 1.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evd::transform_params;

    #[test]
    fn closed_form_matches_laguerre_branch() {
        for &xi in &[-0.3, -0.1, 0.06, 0.2, 0.45] {
            for &v in &[-2.0, -0.5, 0.0, 0.7] {
                if 1.0 + xi * v <= 0.0 {
                    continue;
                }
                let a = unit_info(v, 3.0, xi).unwrap();
                let b = unit_info_laguerre(v, 3.0, xi);
                for i in 0..6 {
                    assert!(((a[i] - b[i]) / b[i].abs().max(1e-3)).abs() < 1e-7, "xi={xi} v={v} i={i}: {} vs {}", a[i], b[i]);
                }
            }
        }
    }

    #[test]
    fn simplified_entries_match_moment_forms() {
        let (a, v, s) = (0.2f64, -1.3f64, 2.5f64);
        let w = 1.0 + a * v;
        let c = 1.0 + a;
        let eq1 = 1.0 / (w * c);
        let eq2 = 1.0 / (w * w * (1.0 + 2.0 * a));
        let ims = c * (eq1 - c * eq2) / (a * s * s);
        let iss = (1.0 - 2.0 * c * eq1 + c * c * eq2) / (a * s).powi(2);
        let f = unit_info(v, s, a).unwrap();
        assert!((f[1] - ims).abs() < 1e-12 * ims.abs());
        assert!((f[3] - iss).abs() < 1e-12 * iss.abs());
    }

    #[test]
    fn branches_agree_at_switch() {
        let lo = unit_info(0.4, 1.0, SERIES_XI - 1e-12).unwrap();
        let hi = unit_info(0.4, 1.0, SERIES_XI + 1e-12).unwrap();
        for i in 0..6 {
            assert!(((lo[i] - hi[i]) / hi[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_shape_covariance_at_m_equals_r() {
        let p = ParamVec::new(30.0, 10.0, 0.0, 500.0).unwrap();
        let u = 30.0;
        let cov = asymptotic_cov(&p, u).unwrap();
        let scale = cov.values.abs().max();
        assert!(cov.get("mu", "xi").abs() < 1e-10 * scale);
    }

    #[test]
    fn inverse_is_inverse() {
        let p = ParamVec::new(80.0, 15.0, 0.05, 1.0).unwrap();
        let i = fisher_matrix(&p, 30.0).unwrap();
        let c = i.inverse().unwrap();
        let prod = &i.values * &c.values;
        let id = DMatrix::<f64>::identity(3, 3);
        assert!((prod - id).abs().max() < 1e-10);
    }

    #[test]
    fn rejects_bad_input() {
        let p = ParamVec::new(80.0, 15.0, -0.6, 1.0).unwrap();
        assert!(fisher_matrix(&p, 30.0).is_err());
        let p = ParamVec::new(80.0, 15.0, 0.5, 1.0).unwrap();
        assert!(fisher_matrix(&p, 40.0).is_err());
        let sing = InfoMatrix::from_upper(&IID_NAMES, &[1.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        assert!(sing.inverse().is_err());
    }

    #[test]
    fn summaries() {
        let diag = InfoMatrix::from_upper(&IID_NAMES, &[2.0, 0.0, 0.0, 3.0, 0.0, 4.0]);
        assert_eq!(correlation_summaries(&diag).unwrap().total, 0.0);
        let p = ParamVec::new(30.0, 10.0, 0.1, 200.0).unwrap();
        let cov = asymptotic_cov(&p, 30.0).unwrap();
        let s = correlation_summaries(&cov).unwrap();
        let max = s.per_parameter.iter().map(|x| x.1).fold(0.0, f64::max);
        assert!(s.total >= max);
        let c = cov.correlation().unwrap();
        let expect = c.get("mu", "sigma").abs() + c.get("sigma", "xi").abs();
        assert!((s.total - expect).abs() < 1e-9);
    }

    #[test]
    fn correlations_invariant_to_units() {
        let p = ParamVec::new(80.0, 15.0, 0.05, 3.0).unwrap();
        let q = ParamVec { mu: 80.0 * 7.0, sigma: 15.0 * 7.0, ..p };
        let a = asymptotic_cov(&p, 30.0).unwrap().correlation().unwrap();
        let b = asymptotic_cov(&q, 210.0).unwrap().correlation().unwrap();
        assert!((a.values - b.values).abs().max() < 1e-12);
    }

    #[test]
    fn change_of_variables_identity() {
        // I(θ_k) = Jᵀ I(θ_m) J with J = ∂θ_m/∂θ_k.
        let p = ParamVec::new(40.0, 8.0, 0.15, 50.0).unwrap();
        let k = 3.0;
        let pk = transform_params(&p, k).unwrap();
        let im = fisher_matrix(&p, 30.0).unwrap().values;
        let ik = fisher_matrix(&pk, 30.0).unwrap().values;
        let x0 = pk.to_vec();
        let mut jac = DMatrix::<f64>::zeros(3, 3);
        for j in 0..3 {
            let h = 1e-6 * x0[j].abs().max(1.0);
            let mut xp = x0;
            let mut xm = x0;
            xp[j] += h;
            xm[j] -= h;
            let fp = transform_params(&ParamVec::from_slice(&xp, k), p.m).unwrap().to_vec();
            let fm = transform_params(&ParamVec::from_slice(&xm, k), p.m).unwrap().to_vec();
            for i in 0..3 {
                jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
            }
        }
        let pulled = jac.transpose() * im * &jac;
        for i in 0..3 {
            for j in 0..3 {
                assert!(((pulled[(i, j)] - ik[(i, j)]) / ik[(i, j)].abs().max(1e-6)).abs() < 1e-6, "{i}{j}");
            }
        }
    }

    #[test]
    fn observed_rate_scales_matrix() {
        let p = ParamVec::new(80.0, 15.0, 0.05, 1.0).unwrap();
        let a = fisher_matrix(&p, 30.0).unwrap();
        let re = p.expected_exceedances(30.0);
        let b = fisher_matrix_with(&p, 30.0, RateSource::Observed(2.0 * re)).unwrap();
        assert!((b.values - 2.0 * a.values).abs().max() < 1e-9);
    }
}
