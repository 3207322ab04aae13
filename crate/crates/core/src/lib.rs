//! Bayesian nonparametric clustering of replicated functional data with
//! generalized Dirichlet process (GDP) and nested GDP mixtures.

pub mod analysis;
pub mod archive;
pub mod atoms;
pub mod basis;
pub mod dist;
pub mod error;
pub mod gdp;
pub mod linalg;
pub mod mcmc;
pub mod model;
pub mod sampler_mean;
pub mod sampler_nested;
pub mod simulate;

pub use error::{Error, Result};
