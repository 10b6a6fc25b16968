//! Baseline quantile models used for comparison.

pub mod linear;
pub mod tree;
