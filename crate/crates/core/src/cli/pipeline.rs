//! End-to-end fitting: select the block count, sample, transform to the
//! annual parameterisation and compute products.

use std::fmt;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariate::{CovariateDensity, Kde};
use crate::error::{Error, Result};
use crate::evd::{transform_ns_params, transform_params, NsParamVec, ParamVec, PriorSpec};
use crate::fisher::{asymptotic_cov_with, fisher_matrix_ns_with, fisher_matrix_with, InfoMatrix, RateSource};
use crate::mcmc::{back_transform_chain, chain_ess, derive_seed, run_chain, run_chains, summarize, Chain, McmcConfig, ParamLayout, ParamSummary};
use crate::model::{posterior_mode_iid, posterior_mode_ns, refine_mode_iid, ExceedanceData, IidPosterior, NsPosterior};
use crate::products::{predictive_summary, return_level_posterior, CovariateScenario, PredictiveSummary, ReturnLevelCurve};
use crate::quad::QuadSettings;
use crate::select::{choose_m, numeric_m_ns, numeric_roots_iid, MPolicy, MSelection};

use super::config::{McmcSettings, RunConfig, ScenarioConfig, SelectionConfig};
use super::ingest::{ingest, Ingested};
use super::output::{fmt, ArtifactWriter};

/// An error tagged with the pipeline stage that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct StageError {
    pub stage: &'static str,
    pub error: Error,
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "stage '{}': {}", self.stage, self.error)
    }
}

impl std::error::Error for StageError {}

trait Tag<T> {
    fn at(self, stage: &'static str) -> std::result::Result<T, StageError>;
}

impl<T> Tag<T> for Result<T> {
    fn at(self, stage: &'static str) -> std::result::Result<T, StageError> {
        self.map_err(|error| StageError { stage, error })
    }
}

/// Data and model pieces shared by the pipeline stages.
#[derive(Debug, Clone, Copy)]
pub struct ModelContext<'a> {
    pub data: &'a ExceedanceData,
    pub density: Option<&'a CovariateDensity>,
    pub prior: PriorSpec,
    pub quad: QuadSettings,
}

impl<'a> ModelContext<'a> {
    pub fn new(data: &'a ExceedanceData, density: Option<&'a CovariateDensity>, prior: PriorSpec) -> Self {
        ModelContext { data, density, prior, quad: QuadSettings::default() }
    }

    pub fn layout(&self) -> ParamLayout {
        if self.density.is_some() {
            ParamLayout::Covariate
        } else {
            ParamLayout::Iid
        }
    }

    fn g(&self) -> Result<&'a CovariateDensity> {
        self.density.ok_or_else(|| Error::Config("covariate model needs a covariate density".into()))
    }
}

/// Selection summary (absent for a fixed policy) and the chosen block count.
pub fn select_block_count(ctx: &ModelContext<'_>, sel: &SelectionConfig) -> Result<(Option<MSelection>, f64)> {
    if let MPolicy::Fixed(m) = sel.policy {
        return Ok((None, m));
    }
    let opts = sel.options();
    let s = match ctx.layout() {
        ParamLayout::Covariate => {
            if sel.policy != MPolicy::Auto {
                return Err(Error::Config("the covariate model supports only the auto or fixed block-count policy".into()));
            }
            numeric_m_ns(ctx.data, ctx.g()?, &ctx.prior, &ctx.quad, &opts)?
        }
        _ => numeric_roots_iid(ctx.data, &ctx.prior, &opts)?,
    };
    let m = choose_m(&s, sel.policy)?;
    Ok((Some(MSelection { m_chosen: m, ..s }), m))
}

/// Posterior mode at block count `m`, warm-started from a selection's reference mode.
pub fn mode_at(ctx: &ModelContext<'_>, m: f64, reference: Option<&MSelection>) -> Result<Vec<f64>> {
    match ctx.layout() {
        ParamLayout::Covariate => {
            let post = NsPosterior::new(ctx.data, ctx.g()?, m, ctx.prior, ctx.quad)?;
            Ok(posterior_mode_ns(&post)?.to_vec().to_vec())
        }
        _ => {
            let post = IidPosterior::new(ctx.data, m, ctx.prior)?;
            let mode = match reference {
                Some(s) => refine_mode_iid(&post, &ParamVec::from_slice(&s.reference, s.r))?,
                None => posterior_mode_iid(&post, &[])?,
            };
            Ok(mode.to_vec().to_vec())
        }
    }
}

/// Information at `mode` with the observed exceedance count as the rate.
pub fn information_at(ctx: &ModelContext<'_>, m: f64, mode: &[f64]) -> Result<InfoMatrix> {
    let rate = RateSource::Observed(ctx.data.r() as f64);
    match ctx.layout() {
        ParamLayout::Covariate => fisher_matrix_ns_with(&NsParamVec::from_slice(mode, m), ctx.data.u, ctx.g()?, &ctx.quad, rate),
        _ => fisher_matrix_with(&ParamVec::from_slice(mode, m), ctx.data.u, rate),
    }
}

/// Proposal scales `2.4/√I_ii` from the information diagonal, or 10% of
/// each coordinate when the information is unavailable.
pub fn proposal_steps(ctx: &ModelContext<'_>, m: f64, mode: &[f64]) -> Vec<f64> {
    let fallback = || mode.iter().map(|v| if *v != 0.0 { 0.1 * v.abs() } else { 0.1 }).collect();
    match information_at(ctx, m, mode) {
        Ok(info) => {
            let s: Vec<f64> = (0..info.dim()).map(|i| 2.4 / info.values[(i, i)].sqrt()).collect();
            if s.iter().all(|v| v.is_finite() && *v > 0.0) {
                s
            } else {
                fallback()
            }
        }
        Err(e) => {
            log::warn!("information unavailable at the mode ({e}); using default proposal scales");
            fallback()
        }
    }
}

/// Sample the posterior at block count `m`, one chain per configured chain.
/// A single chain uses the configured seed; several chains use derived seeds.
pub fn sample_at(ctx: &ModelContext<'_>, m: f64, mode: &[f64], settings: &McmcSettings) -> Result<Vec<Chain>> {
    let mut cfg: McmcConfig = settings.config();
    if cfg.tuning.initial_steps.is_none() {
        cfg.tuning.initial_steps = Some(proposal_steps(ctx, m, mode));
    }
    let layout = ctx.layout();
    let inits = vec![mode.to_vec(); settings.chains];
    let chains = match layout {
        ParamLayout::Covariate => {
            let post = NsPosterior::new(ctx.data, ctx.g()?, m, ctx.prior, ctx.quad)?;
            if settings.chains == 1 { vec![run_chain(&post, mode, &cfg)?] } else { run_chains(&post, &inits, &cfg)? }
        }
        _ => {
            let post = IidPosterior::new(ctx.data, m, ctx.prior)?;
            if settings.chains == 1 { vec![run_chain(&post, mode, &cfg)?] } else { run_chains(&post, &inits, &cfg)? }
        }
    };
    Ok(chains.into_iter().map(|c| c.tagged(layout, m)).collect())
}

/// Concatenate chains with identical layout.
pub fn merge_chains(chains: &[Chain]) -> Result<Chain> {
    let first = chains.first().ok_or_else(|| Error::Domain("no chains to merge".into()))?;
    let mut out = first.clone();
    for c in &chains[1..] {
        if c.dim != first.dim || c.layout != first.layout || c.m != first.m {
            return Err(Error::Domain("chains differ in layout".into()));
        }
        out.samples.extend_from_slice(&c.samples);
        out.n_iter += c.n_iter - c.burn_in;
        for (a, b) in out.accept_counts.iter_mut().zip(&c.accept_counts) {
            *a += b;
        }
    }
    Ok(out)
}

/// Per-parameter ESS summed over chains; `None` when undefined.
pub fn pooled_ess(chains: &[Chain]) -> Vec<Option<f64>> {
    let dim = chains[0].dim;
    let per: Vec<Vec<Option<f64>>> = chains
        .iter()
        .map(|c| match chain_ess(c) {
            Ok(r) => r.into_iter().map(|e| Some(e.ess)).collect(),
            Err(_) => (0..c.dim).map(|j| crate::mcmc::ess(&c.column(j), crate::mcmc::DEFAULT_ESS_TRUNCATION).ok().map(|e| e.ess)).collect(),
        })
        .collect();
    (0..dim).map(|j| per.iter().map(|p| p[j]).sum::<Option<f64>>()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictiveRow {
    pub scenario: String,
    #[serde(flatten)]
    pub summary: PredictiveSummary,
}

/// Machine-readable result of a fit, written as `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub status: String,
    pub model: ParamLayout,
    pub parameters: Vec<String>,
    pub rows: usize,
    pub r: usize,
    pub u: f64,
    pub n_years: f64,
    /// Block count of the reported parameterisation.
    pub k: f64,
    pub covariate_centre: Option<f64>,
    pub selection: Option<MSelection>,
    pub m_chosen: f64,
    pub mode_m: Vec<f64>,
    pub mode_k: Vec<f64>,
    pub chains: usize,
    pub iterations: usize,
    pub burn_in: usize,
    pub seed: u64,
    /// Per chain, per parameter.
    pub acceptance: Vec<Vec<f64>>,
    pub step_sizes: Vec<Vec<f64>>,
    pub ess_m: Vec<Option<f64>>,
    pub ess_k: Vec<Option<f64>>,
    pub posterior_m: Vec<ParamSummary>,
    pub posterior_k: Vec<ParamSummary>,
    pub return_levels: ReturnLevelCurve,
    pub predictive: Vec<PredictiveRow>,
    pub warnings: Vec<String>,
}

/// Everything a fit produces.
#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub effective: RunConfig,
    pub summary: FitSummary,
    pub chains_m: Vec<Chain>,
    pub chains_k: Vec<Chain>,
}

/// Config with defaults and data-derived settings filled in.
pub fn effective_config(cfg: &RunConfig, ing: &Ingested) -> RunConfig {
    let mut e = cfg.clone();
    e.data.threshold = Some(ing.u);
    e.data.threshold_quantile = None;
    e.data.n_years = Some(ing.n_years);
    if let Ok(p) = std::fs::canonicalize(&e.data.path) {
        e.data.path = p;
    }
    e.mcmc.burn_in = Some(cfg.mcmc.config().burn_in);
    if e.data.covariate.is_some() && e.model.covariate_density.is_none() {
        e.model.covariate_density = Some(crate::covariate::CovariateSpec::Kde);
    }
    e
}

fn scenarios(cfg: &RunConfig, ing: &Ingested) -> Result<Vec<(String, CovariateScenario)>> {
    let Some(g) = &ing.density else {
        return Ok(vec![("stationary".into(), CovariateScenario::None)]);
    };
    let list = if cfg.products.scenarios.is_empty() { vec![ScenarioConfig::Unknown] } else { cfg.products.scenarios.clone() };
    Ok(list
        .iter()
        .map(|s| {
            let sc = match s {
                ScenarioConfig::Unknown => CovariateScenario::Unknown(g.clone()),
                ScenarioConfig::Known { value } => CovariateScenario::Known(value - ing.data.covariate_centre),
            };
            (s.label(), sc)
        })
        .collect())
}

/// Return levels and predictive probabilities from a chain at the annual scale.
pub fn compute_products(cfg: &RunConfig, ing: &Ingested, chain_k: &Chain) -> Result<(ReturnLevelCurve, Vec<PredictiveRow>)> {
    let p = &cfg.products;
    let curve = return_level_posterior(chain_k, &p.return_periods, p.credible)?;
    let quad = QuadSettings::default();
    let mut rows = vec![];
    for (label, sc) in scenarios(cfg, ing)? {
        for &y in &p.predictive_levels {
            let summary = predictive_summary(chain_k, y, p.block_fraction, &sc, &quad, p.credible)?;
            rows.push(PredictiveRow { scenario: label.clone(), summary });
        }
    }
    Ok((curve, rows))
}

/// Run the whole fit without writing anything.
pub fn run_fit(cfg: &RunConfig) -> std::result::Result<FitOutcome, StageError> {
    let ing = ingest(&cfg.data, cfg.model.covariate_density.as_ref()).at("ingest")?;
    run_fit_on(cfg, &ing)
}

pub fn run_fit_on(cfg: &RunConfig, ing: &Ingested) -> std::result::Result<FitOutcome, StageError> {
    let effective = effective_config(cfg, ing);
    let k = ing.n_years;
    let ctx = ModelContext::new(&ing.data, ing.density.as_ref(), cfg.model.prior(k));
    let mut warnings: Vec<String> = ing.data.propriety_warning().into_iter().collect();
    let (selection, m) = select_block_count(&ctx, &cfg.selection).at("select")?;
    let mode_m = mode_at(&ctx, m, selection.as_ref()).at("mode")?;
    let chains_m = sample_at(&ctx, m, &mode_m, &cfg.mcmc).at("sample")?;
    let chains_k: Vec<Chain> = chains_m.iter().map(|c| back_transform_chain(c, k)).collect::<Result<_>>().at("transform")?;
    let mode_k = match ctx.layout() {
        ParamLayout::Covariate => transform_ns_params(&NsParamVec::from_slice(&mode_m, m), k).map(|p| p.to_vec().to_vec()),
        _ => transform_params(&ParamVec::from_slice(&mode_m, m), k).map(|p| p.to_vec().to_vec()),
    }
    .at("transform")?;
    let merged_m = merge_chains(&chains_m).at("sample")?;
    let merged_k = merge_chains(&chains_k).at("transform")?;
    let (curve, predictive) = compute_products(cfg, ing, &merged_k).at("products")?;
    let ess_m = pooled_ess(&chains_m);
    if ess_m.iter().any(|e| e.is_none()) {
        warnings.push("effective sample size undefined for a constant parameter trace".into());
    }
    let mc = cfg.mcmc.config();
    let summary = FitSummary {
        status: "complete".into(),
        model: ctx.layout(),
        parameters: merged_m.names.clone(),
        rows: ing.rows,
        r: ing.data.r(),
        u: ing.u,
        n_years: ing.n_years,
        k,
        covariate_centre: ing.density.as_ref().map(|_| ing.data.covariate_centre),
        selection,
        m_chosen: m,
        mode_m,
        mode_k,
        chains: chains_m.len(),
        iterations: mc.n_iter,
        burn_in: mc.burn_in,
        seed: mc.seed,
        acceptance: chains_m.iter().map(|c| c.acceptance_rates()).collect(),
        step_sizes: chains_m.iter().map(|c| c.step_sizes.clone()).collect(),
        ess_m,
        ess_k: pooled_ess(&chains_k),
        posterior_m: summarize(&merged_m),
        posterior_k: summarize(&merged_k),
        return_levels: curve,
        predictive,
        warnings,
    };
    Ok(FitOutcome { effective, summary, chains_m, chains_k })
}

fn trace_rows(chains: &[Chain]) -> Vec<Vec<String>> {
    let mut rows = vec![];
    for (ci, c) in chains.iter().enumerate() {
        for i in 0..c.rows() {
            let mut r = vec![ci.to_string(), (c.burn_in + i).to_string()];
            r.extend(c.row(i).iter().map(|v| fmt(*v)));
            rows.push(r);
        }
    }
    rows
}

fn trace_header(names: &[String]) -> Vec<String> {
    let mut h = vec!["chain".to_string(), "iteration".to_string()];
    h.extend(names.iter().cloned());
    h
}

pub fn write_return_levels(w: &mut ArtifactWriter, curve: &ReturnLevelCurve) -> Result<()> {
    let header = ["N", "mean", "lo", "hi"].map(String::from);
    let rows = (0..curve.periods.len()).map(|i| vec![fmt(curve.periods[i]), fmt(curve.mean[i]), fmt(curve.lower[i]), fmt(curve.upper[i])]);
    w.csv("return_levels.csv", &header, rows)
}

pub fn write_predictive(w: &mut ArtifactWriter, rows: &[PredictiveRow]) -> Result<()> {
    let header = ["scenario", "level", "probability", "exceedance", "exceedance_lo", "exceedance_hi", "return_period"].map(String::from);
    let rows = rows.iter().map(|r| {
        let s = &r.summary;
        vec![
            r.scenario.clone(),
            fmt(s.level),
            fmt(s.probability),
            fmt(s.exceedance),
            fmt(s.exceedance_lower),
            fmt(s.exceedance_upper),
            fmt(s.return_period),
        ]
    });
    w.csv("predictive.csv", &header, rows)
}

/// Write all fit artifacts (the manifest is written by the caller).
pub fn write_fit(w: &mut ArtifactWriter, out: &FitOutcome) -> Result<()> {
    let s = &out.summary;
    w.write("effective_config.toml", out.effective.to_toml()?.as_bytes())?;
    w.csv("trace_m.csv", &trace_header(&s.parameters), trace_rows(&out.chains_m))?;
    w.csv("trace_k.csv", &trace_header(&s.parameters), trace_rows(&out.chains_k))?;
    let merged_k = merge_chains(&out.chains_k)?;
    for (j, name) in s.parameters.iter().enumerate() {
        let col = merged_k.column(j);
        match Kde::new(&col, out.effective.products.density_points) {
            Ok(kde) => {
                let rows = kde.grid().map(|(x, d)| vec![fmt(x), fmt(d)]);
                w.csv(&format!("density_{name}.csv"), &["value".into(), "density".into()], rows)?;
            }
            Err(e) => log::warn!("no density for {name}: {e}"),
        }
    }
    write_return_levels(w, &s.return_levels)?;
    write_predictive(w, &s.predictive)?;
    let json = serde_json::to_string_pretty(s).map_err(|e| Error::Io(e.to_string()))?;
    w.write("summary.json", format!("{json}\n").as_bytes())
}

/// Record a failure in the manifest of a partially written directory.
pub fn finish_failed(w: &mut ArtifactWriter, e: &StageError) {
    if let Err(err) = w.finish(&format!("incomplete (stage {}): {}", e.stage, e.error)) {
        log::error!("could not write manifest: {err}");
    }
}

/// Fit and write every artifact under the configured output directory.
pub fn fit(cfg: &RunConfig) -> std::result::Result<FitSummary, StageError> {
    let mut w = ArtifactWriter::create(&cfg.output.dir).at("output")?;
    match run_fit(cfg) {
        Ok(out) => {
            if let Err(e) = write_fit(&mut w, &out) {
                let e = StageError { stage: "output", error: e };
                finish_failed(&mut w, &e);
                return Err(e);
            }
            w.finish("complete").at("output")?;
            Ok(out.summary)
        }
        Err(e) => {
            if let Ok(t) = cfg.to_toml() {
                let _ = w.write("effective_config.toml", t.as_bytes());
            }
            finish_failed(&mut w, &e);
            Err(e)
        }
    }
}

/// One row of an `m` sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub m: f64,
    pub mode: Vec<f64>,
    /// Pairwise asymptotic correlations in upper-triangle order.
    pub correlations: Vec<f64>,
    pub total_correlation: f64,
    pub ess: Vec<Option<f64>>,
    pub acceptance: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOutcome {
    pub parameters: Vec<String>,
    pub pairs: Vec<String>,
    pub rows: Vec<SweepRow>,
}

/// Asymptotic correlations and sampler efficiency over a grid of block counts,
/// one chain per grid value with seeds derived from the master seed.
pub fn run_sweep_on(cfg: &RunConfig, ing: &Ingested) -> std::result::Result<SweepOutcome, StageError> {
    let ctx = ModelContext::new(&ing.data, ing.density.as_ref(), cfg.model.prior(ing.n_years));
    let r = ing.data.r() as f64;
    let grid = cfg.sweep.grid(r);
    let reference = mode_at(&ctx, r, None).at("mode")?;
    let names: Vec<String> = match ctx.layout() {
        ParamLayout::Covariate => crate::fisher::NS_NAMES.iter().map(|s| s.to_string()).collect(),
        _ => crate::fisher::IID_NAMES.iter().map(|s| s.to_string()).collect(),
    };
    let d = names.len();
    let pairs: Vec<String> = (0..d).flat_map(|i| ((i + 1)..d).map(move |j| (i, j))).map(|(i, j)| format!("{}_{}", names[i], names[j])).collect();
    let rows = grid
        .par_iter()
        .enumerate()
        .map(|(i, &m)| -> Result<SweepRow> {
            let mode = match ctx.layout() {
                ParamLayout::Covariate => transform_ns_params(&NsParamVec::from_slice(&reference, r), m)?.to_vec().to_vec(),
                _ => {
                    let post = IidPosterior::new(ctx.data, m, ctx.prior)?;
                    refine_mode_iid(&post, &ParamVec::from_slice(&reference, r))?.to_vec().to_vec()
                }
            };
            let cov = match ctx.layout() {
                ParamLayout::Covariate => information_at(&ctx, m, &mode)?.inverse()?,
                _ => asymptotic_cov_with(&ParamVec::from_slice(&mode, m), ctx.data.u, RateSource::Observed(r))?,
            };
            let corr = cov.correlation()?;
            let correlations: Vec<f64> = (0..d).flat_map(|a| ((a + 1)..d).map(move |b| (a, b))).map(|(a, b)| corr.values[(a, b)]).collect();
            let settings = McmcSettings { seed: derive_seed(cfg.mcmc.seed, i as u64), chains: 1, ..cfg.mcmc.clone() };
            let chains = sample_at(&ctx, m, &mode, &settings)?;
            Ok(SweepRow {
                m,
                total_correlation: correlations.iter().map(|c| c.abs()).sum(),
                correlations,
                ess: pooled_ess(&chains),
                acceptance: chains[0].acceptance_rates(),
                mode,
            })
        })
        .collect::<Result<Vec<_>>>()
        .at("sweep")?;
    Ok(SweepOutcome { parameters: names, pairs, rows })
}

pub fn write_sweep(w: &mut ArtifactWriter, s: &SweepOutcome) -> Result<()> {
    let mut header = vec!["m".to_string()];
    header.extend(s.parameters.iter().map(|n| format!("mode_{n}")));
    header.extend(s.pairs.iter().map(|p| format!("corr_{p}")));
    header.push("total_correlation".into());
    header.extend(s.parameters.iter().map(|n| format!("ess_{n}")));
    header.extend(s.parameters.iter().map(|n| format!("acceptance_{n}")));
    let rows = s.rows.iter().map(|r| {
        let mut v = vec![fmt(r.m)];
        v.extend(r.mode.iter().map(|x| fmt(*x)));
        v.extend(r.correlations.iter().map(|x| fmt(*x)));
        v.push(fmt(r.total_correlation));
        v.extend(r.ess.iter().map(|x| x.map(fmt).unwrap_or_else(|| "NA".into())));
        v.extend(r.acceptance.iter().map(|x| fmt(*x)));
        v
    });
    w.csv("sweep.csv", &header, rows)
}

pub fn sweep(cfg: &RunConfig) -> std::result::Result<SweepOutcome, StageError> {
    let mut w = ArtifactWriter::create(&cfg.output.dir).at("output")?;
    let result = (|| {
        let ing = ingest(&cfg.data, cfg.model.covariate_density.as_ref()).at("ingest")?;
        let eff = effective_config(cfg, &ing);
        w.write("effective_config.toml", eff.to_toml().at("output")?.as_bytes()).at("output")?;
        let s = run_sweep_on(cfg, &ing)?;
        write_sweep(&mut w, &s).at("output")?;
        Ok(s)
    })();
    match result {
        Ok(s) => {
            w.finish("complete").at("output")?;
            Ok(s)
        }
        Err(e) => {
            finish_failed(&mut w, &e);
            Err(e)
        }
    }
}

/// Load the annual-scale chain and summary of a finished fit.
pub fn load_fit(dir: &Path) -> Result<(FitSummary, Chain)> {
    let text = std::fs::read_to_string(dir.join("summary.json")).map_err(|e| Error::Data(format!("cannot read summary.json: {e}")))?;
    let summary: FitSummary = serde_json::from_str(&text).map_err(|e| Error::Data(format!("invalid summary.json: {e}")))?;
    let mut rdr = csv::Reader::from_path(dir.join("trace_k.csv")).map_err(|e| Error::Data(format!("cannot read trace_k.csv: {e}")))?;
    let d = summary.parameters.len();
    let mut rows = vec![];
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Data(e.to_string()))?;
        if rec.len() != d + 2 {
            return Err(Error::Data(format!("trace_k.csv line {} has {} fields, expected {}", i + 2, rec.len(), d + 2)));
        }
        let row: Vec<f64> = rec
            .iter()
            .skip(2)
            .map(|c| c.parse::<f64>().map_err(|_| Error::Data(format!("trace_k.csv line {}: bad number '{c}'", i + 2))))
            .collect::<Result<_>>()?;
        rows.push(row);
    }
    let chain = Chain::from_rows(&rows, summary.parameters.clone(), summary.model, Some(summary.k))?;
    Ok((summary, chain))
}

/// Products from a saved fit. The data are re-read only to rebuild the covariate density.
pub fn predict(run_dir: &Path, cfg: &RunConfig, out_dir: &Path) -> std::result::Result<(ReturnLevelCurve, Vec<PredictiveRow>), StageError> {
    let mut w = ArtifactWriter::create(out_dir).at("output")?;
    let result = (|| {
        let (summary, chain) = load_fit(run_dir).at("load")?;
        let ing = ingest(&cfg.data, cfg.model.covariate_density.as_ref()).at("ingest")?;
        if summary.model != ParamLayout::Covariate && ing.density.is_some() || summary.model == ParamLayout::Covariate && ing.density.is_none() {
            return Err(StageError { stage: "load", error: Error::Config("config and saved fit disagree about the covariate".into()) });
        }
        let (curve, rows) = compute_products(cfg, &ing, &chain).at("products")?;
        write_return_levels(&mut w, &curve).at("output")?;
        write_predictive(&mut w, &rows).at("output")?;
        Ok((curve, rows))
    })();
    match result {
        Ok(v) => {
            w.finish("complete").at("output")?;
            Ok(v)
        }
        Err(e) => {
            finish_failed(&mut w, &e);
            Err(e)
        }
    }
}
