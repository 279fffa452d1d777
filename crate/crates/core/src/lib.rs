//! Bayesian inference for threshold exceedances with the Poisson process model,
//! reparameterised by a block count `m` chosen to reduce posterior dependence.

pub mod cli;
pub mod covariate;
pub mod error;
pub mod evd;
pub mod fisher;
pub mod mcmc;
pub mod model;
pub mod optim;
pub mod products;
pub mod quad;
pub mod select;
pub mod simulate;

pub use error::{Error, Result};
pub use evd::{NsParamVec, ParamVec};
pub use model::ExceedanceData;
