//! Run configuration, loaded from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::covariate::CovariateSpec;
use crate::error::{Error, Result};
use crate::evd::{BasePrior, JacobianConvention, PriorSpec};
use crate::mcmc::{McmcConfig, Tuning};
use crate::select::{MPolicy, ModeStrategy, SelectOptions};

/// Environment variable that overrides the output directory.
pub const OUTPUT_DIR_ENV: &str = "PPR_OUTPUT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub selection: SelectionConfig,
    #[serde(default)]
    pub mcmc: McmcSettings,
    #[serde(default)]
    pub products: ProductConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Delimited text file with a header row. Relative paths are resolved
    /// against the directory of the config file.
    pub path: PathBuf,
    #[serde(default = "default_value_column")]
    pub value: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariate: Option<String>,
    /// Column holding a date (`YYYY-...`) or a year; used for the observation span.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<String>,
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    /// Threshold as an empirical quantile of the value column.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold_quantile: Option<f64>,
    /// Observation span in years; also the target block count of the outputs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_years: Option<f64>,
}

fn default_value_column() -> String {
    "value".into()
}

fn default_delimiter() -> char {
    ','
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default)]
    pub prior: BasePrior,
    #[serde(default)]
    pub jacobian: JacobianConvention,
    /// Density of the covariate over the observation period; a kernel
    /// estimate of the covariate column when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariate_density: Option<CovariateSpec>,
}

impl ModelConfig {
    pub fn prior(&self, k: f64) -> PriorSpec {
        PriorSpec { base: self.prior, k, jacobian: self.jacobian }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionConfig {
    #[serde(default)]
    pub policy: MPolicy,
    #[serde(default)]
    pub strategy: ModeStrategy,
    #[serde(default = "default_bracket")]
    pub bracket_factor: f64,
    #[serde(default = "default_scan")]
    pub scan_points: usize,
}

fn default_bracket() -> f64 {
    SelectOptions::default().bracket_factor
}

fn default_scan() -> usize {
    SelectOptions::default().scan_points
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig { policy: MPolicy::Auto, strategy: ModeStrategy::default(), bracket_factor: default_bracket(), scan_points: default_scan() }
    }
}

impl SelectionConfig {
    pub fn options(&self) -> SelectOptions {
        SelectOptions { strategy: self.strategy, bracket_factor: self.bracket_factor, scan_points: self.scan_points, ..SelectOptions::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McmcSettings {
    /// Total iterations per chain, burn-in included.
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    /// Defaults to 10% of `iterations`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<usize>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_chains")]
    pub chains: usize,
    #[serde(default)]
    pub tuning: Tuning,
}

fn default_iterations() -> usize {
    50_000
}

fn default_seed() -> u64 {
    1
}

fn default_chains() -> usize {
    1
}

impl Default for McmcSettings {
    fn default() -> Self {
        McmcSettings { iterations: default_iterations(), burn_in: None, seed: default_seed(), chains: default_chains(), tuning: Tuning::default() }
    }
}

impl McmcSettings {
    pub fn config(&self) -> McmcConfig {
        let mut c = McmcConfig::new(self.iterations, self.seed);
        if let Some(b) = self.burn_in {
            c.burn_in = b;
        }
        c.tuning = self.tuning.clone();
        c
    }
}

/// Covariate value used for a predictive probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScenarioConfig {
    /// Integrate over the covariate density.
    Unknown,
    /// Raw (uncentred) covariate value.
    Known { value: f64 },
}

impl ScenarioConfig {
    pub fn label(&self) -> String {
        match self {
            ScenarioConfig::Unknown => "unknown".into(),
            ScenarioConfig::Known { value } => format!("z={value}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProductConfig {
    #[serde(default = "default_periods")]
    pub return_periods: Vec<f64>,
    #[serde(default = "default_credible")]
    pub credible: f64,
    #[serde(default)]
    pub predictive_levels: Vec<f64>,
    /// Fraction of a year covered by the predicted block (1/12 for a month).
    #[serde(default = "default_fraction")]
    pub block_fraction: f64,
    /// Covariate scenarios for the covariate model; `unknown` when empty.
    #[serde(default)]
    pub scenarios: Vec<ScenarioConfig>,
    /// Grid size of the marginal posterior density files.
    #[serde(default = "default_density_points")]
    pub density_points: usize,
}

fn default_periods() -> Vec<f64> {
    vec![2.0, 5.0, 10.0, 20.0, 50.0, 100.0, 200.0, 500.0, 1000.0]
}

fn default_credible() -> f64 {
    0.95
}

fn default_fraction() -> f64 {
    1.0
}

fn default_density_points() -> usize {
    512
}

impl Default for ProductConfig {
    fn default() -> Self {
        ProductConfig {
            return_periods: default_periods(),
            credible: default_credible(),
            predictive_levels: vec![],
            block_fraction: default_fraction(),
            scenarios: vec![],
            density_points: default_density_points(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// Explicit grid; otherwise `points` log-spaced values over `[min_factor·r, max_factor·r]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m_values: Option<Vec<f64>>,
    #[serde(default = "default_sweep_min")]
    pub min_factor: f64,
    #[serde(default = "default_sweep_max")]
    pub max_factor: f64,
    #[serde(default = "default_sweep_points")]
    pub points: usize,
}

fn default_sweep_min() -> f64 {
    0.01
}

fn default_sweep_max() -> f64 {
    5.0
}

fn default_sweep_points() -> usize {
    15
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig { m_values: None, min_factor: default_sweep_min(), max_factor: default_sweep_max(), points: default_sweep_points() }
    }
}

impl SweepConfig {
    pub fn grid(&self, r: f64) -> Vec<f64> {
        if let Some(v) = &self.m_values {
            return v.clone();
        }
        let n = self.points.max(2);
        let (a, b) = ((self.min_factor * r).ln(), (self.max_factor * r).ln());
        (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_out")]
    pub dir: PathBuf,
}

fn default_out() -> PathBuf {
    PathBuf::from("ppr_out")
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: default_out() }
    }
}

fn bad<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Load, resolve relative paths against the file's directory, apply the
    /// output-directory override and validate.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if cfg.data.path.is_relative() {
            cfg.data.path = base.join(&cfg.data.path);
        }
        if cfg.output.dir.is_relative() {
            cfg.output.dir = base.join(&cfg.output.dir);
        }
        if let Ok(dir) = std::env::var(OUTPUT_DIR_ENV) {
            if !dir.is_empty() {
                cfg.output.dir = PathBuf::from(dir);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        match (d.threshold, d.threshold_quantile) {
            (Some(_), Some(_)) => return bad("give either threshold or threshold_quantile, not both"),
            (None, None) => return bad("a threshold or threshold_quantile is required"),
            (Some(u), None) if !u.is_finite() => return bad("threshold must be finite"),
            (None, Some(q)) if !(q > 0.0 && q < 1.0) => return bad("threshold_quantile must lie in (0, 1)"),
            _ => {}
        }
        if let Some(n) = d.n_years {
            if !(n > 0.0 && n.is_finite()) {
                return bad("n_years must be positive");
            }
        }
        if d.value.is_empty() {
            return bad("value column name is empty");
        }
        let m = &self.mcmc;
        if m.chains == 0 {
            return bad("at least one chain is required");
        }
        m.config().validate()?;
        if let MPolicy::Fixed(v) = self.selection.policy {
            if !(v > 0.0 && v.is_finite()) {
                return bad("fixed block count must be positive");
            }
        }
        if !(self.selection.bracket_factor > 1.0) || self.selection.scan_points < 3 {
            return bad("selection bracket_factor must exceed 1 and scan_points be at least 3");
        }
        let p = &self.products;
        if p.return_periods.iter().any(|n| !(*n > 1.0)) {
            return bad("return periods must exceed 1 year");
        }
        if !(p.credible > 0.0 && p.credible < 1.0) {
            return bad("credible level must lie in (0, 1)");
        }
        if !(p.block_fraction > 0.0 && p.block_fraction.is_finite()) {
            return bad("block_fraction must be positive");
        }
        if p.predictive_levels.iter().any(|y| !y.is_finite()) {
            return bad("predictive levels must be finite");
        }
        if p.density_points < 16 {
            return bad("density_points must be at least 16");
        }
        if self.data.covariate.is_none() && (!p.scenarios.is_empty() || self.model.covariate_density.is_some()) {
            return bad("covariate scenarios and densities need a covariate column");
        }
        let s = &self.sweep;
        if let Some(v) = &s.m_values {
            if v.is_empty() || v.iter().any(|m| !(*m > 0.0 && m.is_finite())) {
                return bad("sweep m_values must be positive");
            }
        } else if !(s.min_factor > 0.0 && s.max_factor > s.min_factor) {
            return bad("sweep factors must satisfy 0 < min_factor < max_factor");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[data]\npath = \"x.csv\"\nthreshold = 30.0\nn_years = 10\n";

    #[test]
    fn defaults_and_round_trip() {
        let c = RunConfig::parse(MINIMAL).unwrap();
        c.validate().unwrap();
        assert_eq!(c.mcmc.iterations, 50_000);
        assert_eq!(c.selection.policy, MPolicy::Auto);
        let back = RunConfig::parse(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn policies_and_scenarios_parse() {
        let text = format!(
            "{MINIMAL}covariate = \"z\"\n[selection]\npolicy = {{ fixed = 310.0 }}\n[products]\nscenarios = [{{ kind = \"unknown\" }}, {{ kind = \"known\", value = 3.04 }}]\n[model]\ncovariate_density = {{ kind = \"exponential\", rate = 2.0 }}\n"
        );
        let c = RunConfig::parse(&text).unwrap();
        c.validate().unwrap();
        assert_eq!(c.selection.policy, MPolicy::Fixed(310.0));
        assert_eq!(c.products.scenarios[1], ScenarioConfig::Known { value: 3.04 });
        let back = RunConfig::parse(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn invalid_configs() {
        assert!(RunConfig::parse("[data]\npath = \"x\"\nbogus = 1\n").is_err());
        let mut c = RunConfig::parse(MINIMAL).unwrap();
        c.data.threshold_quantile = Some(0.9);
        assert!(c.validate().is_err());
        let mut c = RunConfig::parse(MINIMAL).unwrap();
        c.mcmc.burn_in = Some(c.mcmc.iterations);
        assert!(c.validate().is_err());
        let mut c = RunConfig::parse(MINIMAL).unwrap();
        c.products.return_periods = vec![1.0];
        assert!(c.validate().is_err());
    }
}
