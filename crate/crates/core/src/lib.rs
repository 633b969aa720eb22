//! Simulation engine for two-stage adaptive enrichment trials whose interim
//! decision uses a conditional power modified by a surrogate endpoint.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod decision;
pub mod error;
pub mod experiments;
pub mod inference;
pub mod power;
pub mod sim;
pub mod stats;

pub use error::{Error, Result};
