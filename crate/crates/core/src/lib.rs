//! Estimation of continuous exponential-family graphical models by
//! interaction screening with a multiplicative regularizing distribution,
//! with a pseudo-likelihood baseline, exact samplers and an experiment harness.

pub mod error;
pub mod experiments;
pub mod fixtures;
pub mod model;
pub mod mrd;
pub mod objectives;
pub mod quadrature;
pub mod recovery;
pub mod sampling;
pub mod solver;
pub mod special;

pub use error::{Error, Result};
