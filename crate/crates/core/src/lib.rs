//! Quantile vector-autoregression connectedness toolkit.

pub mod breaks;
pub mod cli;
pub mod config;
pub mod connectedness;
pub mod error;
pub mod export;
pub mod frequency;
pub mod linalg;
pub mod panel;
pub mod portfolio;
pub mod quantreg;
pub mod qvar;
pub mod rolling;
pub mod simulate;
pub mod stats;

pub use error::{Error, Result};
