//! C interface to `pp-reparam`.
//!
//! Every function returns a [`PprStatus`]; results are written through out
//! pointers. On failure the message is available from [`ppr_last_error`]
//! until the next failing call on the same thread. Handles are opaque and
//! must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use pp_reparam::cli::config::{McmcSettings, SelectionConfig};
use pp_reparam::cli::pipeline::{mode_at, sample_at, select_block_count, ModelContext};
use pp_reparam::covariate::{CovariateDensity, CovariateSpec};
use pp_reparam::evd::{transform_ns_params, transform_params, NsParamVec, ParamVec, PriorSpec};
use pp_reparam::fisher::{fisher_matrix_ns_with, fisher_matrix_with, RateSource};
use pp_reparam::mcmc::{back_transform_chain, chain_ess, Chain};
use pp_reparam::model::{log_likelihood, log_likelihood_ns};
use pp_reparam::products::return_level;
use pp_reparam::quad::QuadSettings;
use pp_reparam::select::{halley_m1, halley_m2};
use pp_reparam::{Error, ExceedanceData};

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PprStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Domain = 3,
    Numerical = 4,
    Quadrature = 5,
    Selection = 6,
    Diagnostic = 7,
    Data = 8,
    Config = 9,
    Io = 10,
    Panic = 11,
}

/// Covariate density families.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PprDensityKind {
    /// Exponential with rate `a`.
    Exponential = 0,
    /// Normal with mean `a` and standard deviation `b`.
    Normal = 1,
    /// Uniform on `[a, b]`.
    Uniform = 2,
    /// Kernel estimate of the supplied covariate values.
    Kde = 3,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct PprDensitySpec {
    pub kind: PprDensityKind,
    pub a: f64,
    pub b: f64,
}

/// Exceedance data with its covariate density, if any.
pub struct PprData {
    data: ExceedanceData,
    density: Option<CovariateDensity>,
}

/// Posterior samples.
pub struct PprChain {
    chain: Chain,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> PprStatus {
    match e {
        Error::Domain(_) => PprStatus::Domain,
        Error::Numerical(_) => PprStatus::Numerical,
        Error::Quadrature { .. } => PprStatus::Quadrature,
        Error::Selection(_) => PprStatus::Selection,
        Error::Diagnostic(_) => PprStatus::Diagnostic,
        Error::Data(_) => PprStatus::Data,
        Error::Config(_) => PprStatus::Config,
        Error::Io(_) => PprStatus::Io,
    }
}

enum Fail {
    Null(&'static str),
    Arg(String),
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

fn guard<F: FnOnce() -> Result<(), Fail>>(f: F) -> PprStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PprStatus::Ok,
        Ok(Err(Fail::Null(what))) => {
            set_error(&format!("null pointer: {what}"));
            PprStatus::NullPointer
        }
        Ok(Err(Fail::Arg(msg))) => {
            set_error(&msg);
            PprStatus::InvalidArgument
        }
        Ok(Err(Fail::Lib(e))) => {
            set_error(&e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic");
            PprStatus::Panic
        }
    }
}

unsafe fn slice<'a>(p: *const f64, n: usize, what: &'static str) -> Result<&'a [f64], Fail> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn out<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or(Fail::Null(what))
}

unsafe fn data_ref<'a>(d: *const PprData) -> Result<&'a PprData, Fail> {
    d.as_ref().ok_or(Fail::Null("data"))
}

unsafe fn chain_ref<'a>(c: *const PprChain) -> Result<&'a PprChain, Fail> {
    c.as_ref().ok_or(Fail::Null("chain"))
}

impl PprData {
    fn dim(&self) -> usize {
        if self.density.is_some() {
            4
        } else {
            3
        }
    }

    fn ctx(&self) -> ModelContext<'_> {
        ModelContext::new(&self.data, self.density.as_ref(), PriorSpec::flat(self.data.n_years))
    }

    fn check_dim(&self, dim: usize) -> Result<(), Fail> {
        if dim != self.dim() {
            return Err(Fail::Arg(format!("parameter length {dim} does not match the model dimension {}", self.dim())));
        }
        Ok(())
    }
}

/// Message of the last failure on this thread; empty if none. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ppr_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Stationary data: `n` exceedance values above `u` over `n_years` years.
///
/// # Safety
/// `values` must point to `n` doubles and `out` to writable storage.
#[no_mangle]
pub unsafe extern "C" fn ppr_data_new(u: f64, values: *const f64, n: usize, n_years: f64, out_data: *mut *mut PprData) -> PprStatus {
    guard(|| {
        let o = out(out_data, "out_data")?;
        *o = ptr::null_mut();
        let v = slice(values, n, "values")?.to_vec();
        let data = ExceedanceData::new(u, v, n_years)?;
        *o = Box::into_raw(Box::new(PprData { data, density: None }));
        Ok(())
    })
}

/// Covariate-in-location data. `covariates` are raw values for each exceedance;
/// they are centred at the mean of the covariate density.
///
/// # Safety
/// `values` and `covariates` must point to `n` doubles; `density` and `out_data` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ppr_data_new_covariate(
    u: f64,
    values: *const f64,
    covariates: *const f64,
    n: usize,
    n_years: f64,
    density: *const PprDensitySpec,
    out_data: *mut *mut PprData,
) -> PprStatus {
    guard(|| {
        let o = out(out_data, "out_data")?;
        *o = ptr::null_mut();
        let v = slice(values, n, "values")?.to_vec();
        let z = slice(covariates, n, "covariates")?;
        let d = density.as_ref().ok_or(Fail::Null("density"))?;
        let spec = match d.kind {
            PprDensityKind::Exponential => CovariateSpec::Exponential { rate: d.a },
            PprDensityKind::Normal => CovariateSpec::Normal { mean: d.a, sd: d.b },
            PprDensityKind::Uniform => CovariateSpec::Uniform { lo: d.a, hi: d.b },
            PprDensityKind::Kde => CovariateSpec::Kde,
        };
        let g = CovariateDensity::from_spec(&spec, Some(z))?;
        let centre = g.raw_mean();
        let data = ExceedanceData::with_covariates(u, v, n_years, z.iter().map(|x| x - centre).collect(), centre)?;
        *o = Box::into_raw(Box::new(PprData { data, density: Some(g.centred()) }));
        Ok(())
    })
}

/// # Safety
/// `data` must come from a `ppr_data_new*` call and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ppr_data_free(data: *mut PprData) {
    if !data.is_null() {
        drop(Box::from_raw(data));
    }
}

/// Number of exceedances.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn ppr_data_len(data: *const PprData, out_len: *mut usize) -> PprStatus {
    guard(|| {
        *out(out_len, "out_len")? = data_ref(data)?.data.r();
        Ok(())
    })
}

/// Two-step Halley approximation of the lower orthogonality root.
///
/// # Safety
/// `out_m` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ppr_halley_m1(xi: f64, r: f64, out_m: *mut f64) -> PprStatus {
    guard(|| {
        *out(out_m, "out_m")? = halley_m1(xi, r)?;
        Ok(())
    })
}

/// Halley approximation of the upper orthogonality root.
///
/// # Safety
/// `out_m` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ppr_halley_m2(xi: f64, r: f64, out_m: *mut f64) -> PprStatus {
    guard(|| {
        *out(out_m, "out_m")? = halley_m2(xi, r)?;
        Ok(())
    })
}

/// Numerical block-count selection with the automatic policy. For covariate
/// data `m1` and `m2` are NaN and `chosen` is the zero-correlation root.
///
/// # Safety
/// Pointers must be valid; `out_m1` and `out_m2` may be null.
#[no_mangle]
pub unsafe extern "C" fn ppr_select_m(data: *const PprData, out_m1: *mut f64, out_m2: *mut f64, out_chosen: *mut f64) -> PprStatus {
    guard(|| {
        let d = data_ref(data)?;
        let chosen = out(out_chosen, "out_chosen")?;
        let (sel, m) = select_block_count(&d.ctx(), &SelectionConfig::default())?;
        let sel = sel.expect("automatic policy always selects");
        if let Some(p) = out_m1.as_mut() {
            *p = sel.m1.unwrap_or(f64::NAN);
        }
        if let Some(p) = out_m2.as_mut() {
            *p = sel.m2.unwrap_or(f64::NAN);
        }
        *chosen = m;
        Ok(())
    })
}

/// Poisson process log-likelihood at `params` (μ, σ, ξ) or (μ⁽⁰⁾, μ⁽¹⁾, σ, ξ), block count `m`.
///
/// # Safety
/// `params` must point to `dim` doubles; other pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn ppr_log_likelihood(data: *const PprData, params: *const f64, dim: usize, m: f64, out_value: *mut f64) -> PprStatus {
    guard(|| {
        let d = data_ref(data)?;
        d.check_dim(dim)?;
        let x = slice(params, dim, "params")?;
        let o = out(out_value, "out_value")?;
        *o = match &d.density {
            Some(g) => log_likelihood_ns(&NsParamVec::from_slice(x, m), &d.data, g, &QuadSettings::default())?,
            None => log_likelihood(&ParamVec::from_slice(x, m), &d.data)?,
        };
        Ok(())
    })
}

/// Move parameters of length 3 or 4 from block count `m` to `k`.
///
/// # Safety
/// `params` and `out_params` must point to `dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn ppr_transform(params: *const f64, dim: usize, m: f64, k: f64, out_params: *mut f64) -> PprStatus {
    guard(|| {
        let x = slice(params, dim, "params")?;
        if out_params.is_null() {
            return Err(Fail::Null("out_params"));
        }
        let y: Vec<f64> = match dim {
            3 => transform_params(&ParamVec::from_slice(x, m), k)?.to_vec().to_vec(),
            4 => transform_ns_params(&NsParamVec::from_slice(x, m), k)?.to_vec().to_vec(),
            _ => return Err(Fail::Arg(format!("parameter length must be 3 or 4, got {dim}"))),
        };
        std::slice::from_raw_parts_mut(out_params, dim).copy_from_slice(&y);
        Ok(())
    })
}

/// Expected information at `params`, row-major `dim × dim`, with the
/// observed exceedance count as rate.
///
/// # Safety
/// `params` must point to `dim` doubles and `out_matrix` to `dim * dim`.
#[no_mangle]
pub unsafe extern "C" fn ppr_fisher_matrix(data: *const PprData, params: *const f64, dim: usize, m: f64, out_matrix: *mut f64) -> PprStatus {
    guard(|| {
        let d = data_ref(data)?;
        d.check_dim(dim)?;
        let x = slice(params, dim, "params")?;
        if out_matrix.is_null() {
            return Err(Fail::Null("out_matrix"));
        }
        let rate = RateSource::Observed(d.data.r() as f64);
        let info = match &d.density {
            Some(g) => fisher_matrix_ns_with(&NsParamVec::from_slice(x, m), d.data.u, g, &QuadSettings::default(), rate)?,
            None => fisher_matrix_with(&ParamVec::from_slice(x, m), d.data.u, rate)?,
        };
        let o = std::slice::from_raw_parts_mut(out_matrix, dim * dim);
        for i in 0..dim {
            for j in 0..dim {
                o[i * dim + j] = info.values[(i, j)];
            }
        }
        Ok(())
    })
}

/// Run one random-walk Metropolis chain at block count `m` under the flat
/// prior on the `n_years` parameterisation. `init` may be null to start at
/// the posterior mode. Proposal scales come from the information at the start.
///
/// # Safety
/// `init` must be null or point to the model dimension; `out_chain` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ppr_chain_run(
    data: *const PprData,
    m: f64,
    init: *const f64,
    n_iter: usize,
    burn_in: usize,
    seed: u64,
    out_chain: *mut *mut PprChain,
) -> PprStatus {
    guard(|| {
        let o = out(out_chain, "out_chain")?;
        *o = ptr::null_mut();
        let d = data_ref(data)?;
        let ctx = d.ctx();
        let start = if init.is_null() { mode_at(&ctx, m, None)? } else { slice(init, d.dim(), "init")?.to_vec() };
        let settings = McmcSettings { iterations: n_iter, burn_in: Some(burn_in), seed, ..McmcSettings::default() };
        let chain = sample_at(&ctx, m, &start, &settings)?.remove(0);
        *o = Box::into_raw(Box::new(PprChain { chain }));
        Ok(())
    })
}

/// # Safety
/// `chain` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ppr_chain_free(chain: *mut PprChain) {
    if !chain.is_null() {
        drop(Box::from_raw(chain));
    }
}

/// Number of stored (post-burn-in) samples.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn ppr_chain_rows(chain: *const PprChain, out_rows: *mut usize) -> PprStatus {
    guard(|| {
        *out(out_rows, "out_rows")? = chain_ref(chain)?.chain.rows();
        Ok(())
    })
}

/// Number of parameters per sample.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn ppr_chain_dim(chain: *const PprChain, out_dim: *mut usize) -> PprStatus {
    guard(|| {
        *out(out_dim, "out_dim")? = chain_ref(chain)?.chain.dim;
        Ok(())
    })
}

/// Copy samples row-major into `buffer` of length `len` (rows × dim).
///
/// # Safety
/// `buffer` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn ppr_chain_copy_samples(chain: *const PprChain, buffer: *mut f64, len: usize) -> PprStatus {
    guard(|| {
        let c = &chain_ref(chain)?.chain;
        if len != c.samples.len() {
            return Err(Fail::Arg(format!("buffer length {len} does not match {} samples", c.samples.len())));
        }
        if buffer.is_null() {
            return Err(Fail::Null("buffer"));
        }
        std::slice::from_raw_parts_mut(buffer, len).copy_from_slice(&c.samples);
        Ok(())
    })
}

/// Per-parameter acceptance rates into `buffer` of length dim.
///
/// # Safety
/// `buffer` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn ppr_chain_acceptance(chain: *const PprChain, buffer: *mut f64, len: usize) -> PprStatus {
    guard(|| {
        let c = &chain_ref(chain)?.chain;
        if len != c.dim {
            return Err(Fail::Arg(format!("buffer length {len} does not match dimension {}", c.dim)));
        }
        let rates = c.acceptance_rates();
        std::slice::from_raw_parts_mut(buffer, len).copy_from_slice(&rates);
        Ok(())
    })
}

/// New chain with every sample moved to block count `k`.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn ppr_chain_back_transform(chain: *const PprChain, k: f64, out_chain: *mut *mut PprChain) -> PprStatus {
    guard(|| {
        let o = out(out_chain, "out_chain")?;
        *o = ptr::null_mut();
        let c = back_transform_chain(&chain_ref(chain)?.chain, k)?;
        *o = Box::into_raw(Box::new(PprChain { chain: c }));
        Ok(())
    })
}

/// Per-parameter effective sample size into `buffer` of length dim.
///
/// # Safety
/// `buffer` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn ppr_chain_ess(chain: *const PprChain, buffer: *mut f64, len: usize) -> PprStatus {
    guard(|| {
        let c = &chain_ref(chain)?.chain;
        if len != c.dim {
            return Err(Fail::Arg(format!("buffer length {len} does not match dimension {}", c.dim)));
        }
        if buffer.is_null() {
            return Err(Fail::Null("buffer"));
        }
        let e = chain_ess(c)?;
        let o = std::slice::from_raw_parts_mut(buffer, len);
        for (dst, r) in o.iter_mut().zip(e) {
            *dst = r.ess;
        }
        Ok(())
    })
}

/// `n`-year return level of annual-scale parameters (μ, σ, ξ).
///
/// # Safety
/// `out_level` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ppr_return_level(mu: f64, sigma: f64, xi: f64, n: f64, out_level: *mut f64) -> PprStatus {
    guard(|| {
        let p = ParamVec::new(mu, sigma, xi, 1.0)?;
        *out(out_level, "out_level")? = return_level(&p, n)?;
        Ok(())
    })
}
