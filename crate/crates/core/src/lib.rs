//! Splitting trees with neutral mutations: scale functions, allelic frequency spectra, mutation
//! moments and their limits, with an exact simulator and Monte Carlo checks.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod lifespan;
pub mod montecarlo;
pub mod mutation;
pub mod quadrature;
pub mod scale;
pub mod simulator;
pub mod spectrum;

pub use error::{Error, Result};
