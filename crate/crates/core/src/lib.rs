//! Optimal transport maps between 2D measures via W2GAN training, with exact
//! discrete and closed-form Gaussian oracles.

pub mod autodiff;
pub mod datasets;
pub mod discrete_ot;
pub mod eval;
pub mod error;
pub mod geodesic;
pub mod w2gan;

pub use error::{Error, Result};
