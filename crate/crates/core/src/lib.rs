//! Feynman-Kac representations for degenerate diffusions on the half-space
//! `{x_d >= 0}`: boundary classification of the degenerate coordinate, Monte
//! Carlo estimators of boundary-value and obstacle problems, and a monotone
//! finite-difference oracle to check them against.

pub mod boundary;
pub mod domain;
pub mod error;
pub mod expr;
pub mod fk_estimate;
pub mod model;
pub mod pde_oracle;
pub mod problem;
pub mod quad;
pub mod rng;
pub mod simulate;
pub mod stopping;
pub mod stats;

pub use error::{Error, Result};
