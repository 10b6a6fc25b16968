//! Symbolic quantile regression: pinball-loss genetic programming that
//! returns a Pareto front of closed-form expressions, plus linear and tree
//! quantile baselines and a cross-validated benchmark harness.

pub mod baselines;
pub mod bench;
pub mod constopt;
pub mod data;
pub mod error;
pub mod expr;
pub mod loss;
pub mod matrix;
pub mod model;
pub mod pareto;
pub mod search;

pub use error::{Error, Result};
pub use loss::QuantileLevel;
pub use matrix::Matrix;
