//! Reading delimited observation files into exceedance data.

use std::path::Path;

use crate::covariate::{quantile_sorted, CovariateDensity, CovariateSpec};
use crate::error::{Error, Result};
use crate::model::ExceedanceData;

use super::config::DataConfig;

/// Parsed observations before thresholding.
#[derive(Debug, Clone, PartialEq)]
pub struct Observations {
    pub values: Vec<f64>,
    /// Covariate per row; `None` for an empty cell.
    pub covariates: Option<Vec<Option<f64>>>,
    pub years: Option<Vec<i64>>,
    /// File line number of each row (header is line 1).
    pub lines: Vec<usize>,
}

/// Ingested data with everything the pipeline needs.
#[derive(Debug, Clone)]
pub struct Ingested {
    pub data: ExceedanceData,
    /// Covariate density in centred coordinates.
    pub density: Option<CovariateDensity>,
    pub rows: usize,
    pub u: f64,
    pub n_years: f64,
}

fn parse_number(cell: &str, column: &str, line: usize) -> Result<f64> {
    let t = cell.trim();
    t.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::Data(format!("line {line}: column '{column}' has non-numeric value '{t}'")))
}

/// Leading year of a date such as `2009-11-19`, or an integer/decimal year.
fn parse_year(cell: &str, column: &str, line: usize) -> Result<i64> {
    let t = cell.trim();
    let digits: String = t.chars().take_while(|c| c.is_ascii_digit()).collect();
    if digits.is_empty() {
        return Err(Error::Data(format!("line {line}: column '{column}' has no leading year in '{t}'")));
    }
    digits.parse().map_err(|_| Error::Data(format!("line {line}: year out of range in '{t}'")))
}

pub fn read_observations(path: &Path, cfg: &DataConfig) -> Result<Observations> {
    if !cfg.delimiter.is_ascii() {
        return Err(Error::Config("delimiter must be a single ASCII character".into()));
    }
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(cfg.delimiter as u8)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
    let headers = rdr.headers().map_err(|e| Error::Data(format!("cannot read header: {e}")))?.clone();
    let find = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| {
            Error::Data(format!("column '{name}' not found; available: {}", headers.iter().collect::<Vec<_>>().join(", ")))
        })
    };
    let vi = find(&cfg.value)?;
    let ci = cfg.covariate.as_deref().map(find).transpose()?;
    let ti = cfg.timestamp.as_deref().map(find).transpose()?;
    let mut obs = Observations { values: vec![], covariates: ci.map(|_| vec![]), years: ti.map(|_| vec![]), lines: vec![] };
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::Data(format!("line {line}: {e}")))?;
        let cell = |j: usize| rec.get(j).unwrap_or("");
        obs.values.push(parse_number(cell(vi), &cfg.value, line)?);
        if let (Some(j), Some(cs)) = (ci, obs.covariates.as_mut()) {
            let c = cell(j);
            cs.push(if c.is_empty() { None } else { Some(parse_number(c, cfg.covariate.as_deref().unwrap(), line)?) });
        }
        if let (Some(j), Some(ys)) = (ti, obs.years.as_mut()) {
            ys.push(parse_year(cell(j), cfg.timestamp.as_deref().unwrap(), line)?);
        }
        obs.lines.push(line);
    }
    if obs.values.is_empty() {
        return Err(Error::Data(format!("{} has no data rows", path.display())));
    }
    Ok(obs)
}

/// Threshold, observation span and covariate density from observations.
pub fn build(obs: &Observations, cfg: &DataConfig, density: Option<&CovariateSpec>) -> Result<Ingested> {
    let u = match (cfg.threshold, cfg.threshold_quantile) {
        (Some(u), _) => u,
        (None, Some(q)) => {
            let mut s = obs.values.clone();
            s.sort_by(|a, b| a.total_cmp(b));
            quantile_sorted(&s, q)
        }
        (None, None) => return Err(Error::Config("no threshold given".into())),
    };
    let max = obs.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let idx: Vec<usize> = (0..obs.values.len()).filter(|&i| obs.values[i] > u).collect();
    if idx.is_empty() {
        return Err(Error::Data(format!("no values exceed the threshold u = {u} (data maximum {max})")));
    }
    let n_years = match (cfg.n_years, &obs.years) {
        (Some(n), _) => n,
        (None, Some(ys)) => {
            let lo = ys.iter().min().unwrap();
            let hi = ys.iter().max().unwrap();
            (hi - lo + 1) as f64
        }
        (None, None) => return Err(Error::Config("n_years is required when no timestamp column is given".into())),
    };
    let excesses: Vec<f64> = idx.iter().map(|&i| obs.values[i]).collect();
    let (data, g) = match &obs.covariates {
        None => (ExceedanceData::new(u, excesses, n_years)?, None),
        Some(cs) => {
            let missing: Vec<String> = idx.iter().filter(|&&i| cs[i].is_none()).map(|&i| obs.lines[i].to_string()).collect();
            if !missing.is_empty() {
                return Err(Error::Data(format!("covariate missing on exceedance rows at lines {}", missing.join(", "))));
            }
            let all: Vec<f64> = cs.iter().flatten().copied().collect();
            let spec = density.cloned().unwrap_or(CovariateSpec::Kde);
            let g = CovariateDensity::from_spec(&spec, Some(&all))?;
            let centre = g.raw_mean();
            let z = idx.iter().map(|&i| cs[i].unwrap() - centre).collect();
            (ExceedanceData::with_covariates(u, excesses, n_years, z, centre)?, Some(g.centred()))
        }
    };
    if let Some(w) = data.propriety_warning() {
        log::warn!("{w}");
    }
    Ok(Ingested { data, density: g, rows: obs.values.len(), u, n_years })
}

pub fn ingest(cfg: &DataConfig, density: Option<&CovariateSpec>) -> Result<Ingested> {
    let obs = read_observations(&cfg.path, cfg)?;
    build(&obs, cfg, density)
}
