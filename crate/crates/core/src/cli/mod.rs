//! Command-line front end: `fit`, `sweep`, `simulate` and `predict`.

pub mod config;
pub mod ingest;
pub mod output;
pub mod pipeline;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::error::{Error, Result};
use crate::select::MPolicy;
use crate::simulate::{simulate, SimConfig};

use config::{DataConfig, ModelConfig, RunConfig};
use output::{fmt, ArtifactWriter};
use pipeline::StageError;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

/// Exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_CONFIG,
        Error::Data(_) | Error::Io(_) => EXIT_DATA,
        Error::Domain(_) | Error::Numerical(_) | Error::Quadrature { .. } | Error::Selection(_) | Error::Diagnostic(_) => EXIT_NUMERICAL,
    }
}

#[derive(Debug, Parser)]
#[command(name = "ppr", version, about = "Bayesian Poisson process extremes with block-count reparameterisation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, clap::Args)]
pub struct RunFlags {
    /// TOML run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory (overrides the config and the environment).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub burn_in: Option<usize>,
    #[arg(long)]
    pub chains: Option<usize>,
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Block count: auto, lower, upper, geometric-mean or a number.
    #[arg(long)]
    pub m: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Select m, sample, transform to the annual scale and compute products.
    Fit(RunFlags),
    /// Correlation and effective sample size over a grid of m.
    Sweep {
        #[command(flatten)]
        flags: RunFlags,
        /// Comma-separated block counts.
        #[arg(long, value_delimiter = ',')]
        m_values: Option<Vec<f64>>,
    },
    /// Simulate a data set and a matching fit config.
    Simulate {
        /// TOML simulation settings.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Return levels and predictive probabilities from a saved fit.
    Predict {
        /// Directory written by `fit`.
        #[arg(long)]
        run: PathBuf,
        /// Config for the products; defaults to the fit's effective config.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Defaults to `<run>/predict`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

pub fn parse_policy(s: &str) -> Result<MPolicy> {
    Ok(match s {
        "auto" => MPolicy::Auto,
        "lower" => MPolicy::Lower,
        "upper" => MPolicy::Upper,
        "geometric-mean" | "geometric_mean" => MPolicy::GeometricMean,
        v => MPolicy::Fixed(v.parse().map_err(|_| Error::Config(format!("invalid block count '{v}'")))?),
    })
}

fn load_with_flags(f: &RunFlags) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&f.config)?;
    if let Some(o) = &f.out {
        cfg.output.dir = o.clone();
    }
    if let Some(s) = f.seed {
        cfg.mcmc.seed = s;
    }
    if let Some(n) = f.iterations {
        cfg.mcmc.iterations = n;
        if f.burn_in.is_none() {
            cfg.mcmc.burn_in = None;
        }
    }
    if let Some(b) = f.burn_in {
        cfg.mcmc.burn_in = Some(b);
    }
    if let Some(c) = f.chains {
        cfg.mcmc.chains = c;
    }
    if let Some(u) = f.threshold {
        cfg.data.threshold = Some(u);
        cfg.data.threshold_quantile = None;
    }
    if let Some(m) = &f.m {
        cfg.selection.policy = parse_policy(m)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Write a simulated data set and a config that fits it.
pub fn simulate_to(sim: &SimConfig, out: &Path) -> Result<()> {
    let data = simulate(sim)?;
    let mut w = ArtifactWriter::create(out)?;
    let covariate = data.covariates.is_some();
    let mut header = vec!["value".to_string()];
    if covariate {
        header.push("covariate".into());
    }
    let rows = (0..data.r()).map(|i| {
        let mut r = vec![fmt(data.excesses[i])];
        if let Some(z) = &data.covariates {
            r.push(fmt(z[i] + data.covariate_centre));
        }
        r
    });
    w.csv("data.csv", &header, rows)?;
    let fit = RunConfig {
        data: DataConfig {
            path: PathBuf::from("data.csv"),
            value: "value".into(),
            covariate: covariate.then(|| "covariate".into()),
            timestamp: None,
            delimiter: ',',
            threshold: Some(sim.u),
            threshold_quantile: None,
            n_years: Some(sim.n_years),
        },
        model: ModelConfig { covariate_density: sim.covariate.clone(), ..ModelConfig::default() },
        selection: Default::default(),
        mcmc: Default::default(),
        products: Default::default(),
        sweep: Default::default(),
        output: config::OutputConfig { dir: PathBuf::from("fit") },
    };
    w.write("fit.toml", fit.to_toml()?.as_bytes())?;
    w.write("simulation.toml", toml::to_string(sim).map_err(|e| Error::Config(e.to_string()))?.as_bytes())?;
    w.finish("complete")
}

fn report(e: &StageError) -> i32 {
    eprintln!("error: {e}");
    exit_code(&e.error)
}

fn report_plain(e: &Error) -> i32 {
    eprintln!("error: {e}");
    exit_code(e)
}

/// Run the command line and return the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match cli.command {
        Command::Fit(flags) => {
            let cfg = match load_with_flags(&flags) {
                Ok(c) => c,
                Err(e) => return report_plain(&e),
            };
            match pipeline::fit(&cfg) {
                Ok(s) => {
                    println!("m_chosen = {}; output in {}", s.m_chosen, cfg.output.dir.display());
                    EXIT_OK
                }
                Err(e) => report(&e),
            }
        }
        Command::Sweep { flags, m_values } => {
            let mut cfg = match load_with_flags(&flags) {
                Ok(c) => c,
                Err(e) => return report_plain(&e),
            };
            if m_values.is_some() {
                cfg.sweep.m_values = m_values;
                if let Err(e) = cfg.validate() {
                    return report_plain(&e);
                }
            }
            match pipeline::sweep(&cfg) {
                Ok(s) => {
                    println!("{} block counts swept; output in {}", s.rows.len(), cfg.output.dir.display());
                    EXIT_OK
                }
                Err(e) => report(&e),
            }
        }
        Command::Simulate { config, out, seed } => {
            let text = match std::fs::read_to_string(&config) {
                Ok(t) => t,
                Err(e) => return report_plain(&Error::Config(format!("cannot read {}: {e}", config.display()))),
            };
            let mut sim: SimConfig = match toml::from_str(&text) {
                Ok(s) => s,
                Err(e) => return report_plain(&Error::Config(e.to_string())),
            };
            if let Some(s) = seed {
                sim.seed = s;
            }
            match simulate_to(&sim, &out) {
                Ok(()) => {
                    println!("simulated data in {}", out.display());
                    EXIT_OK
                }
                Err(e @ Error::Domain(_)) => report_plain(&Error::Config(e.to_string())),
                Err(e) => report_plain(&e),
            }
        }
        Command::Predict { run, config, out } => {
            let path = config.unwrap_or_else(|| run.join("effective_config.toml"));
            let cfg = match RunConfig::load(&path) {
                Ok(c) => c,
                Err(e) => return report_plain(&e),
            };
            let out = out.unwrap_or_else(|| run.join("predict"));
            match pipeline::predict(&run, &cfg, &out) {
                Ok(_) => {
                    println!("predictions in {}", out.display());
                    EXIT_OK
                }
                Err(e) => report(&e),
            }
        }
    }
}
