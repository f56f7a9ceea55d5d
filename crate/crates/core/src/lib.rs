//! Bayesian calibration and combination of predictive distributions with
//! beta mixtures.

pub mod dp;
pub mod error;
pub mod experiment;
pub mod finite;
pub mod io;
pub mod model;
pub mod pool;
pub mod predict;
pub mod sampling;
pub mod sim;
pub mod special;

pub use error::{Error, Result};
