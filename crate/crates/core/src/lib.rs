//! Hybrid physics + machine-learning prediction of critical heat flux (CHF)
//! in uniformly heated vertical tubes.
//!
//! A base correlation ([`correlations`]) supplies a physical estimate and one
//! of three uncertainty-aware regressors ([`ensemble`], [`bnn`], [`dgp`])
//! learns the residual. [`hybrid`] wires the pieces together and
//! [`evalsuite`] scores the results.

// `!(x > 0.0)` is used on purpose so NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bnn;
pub mod cli;
pub mod correlations;
pub mod dataset;
pub mod dgp;
pub mod ensemble;
pub mod error;
pub mod evalsuite;
pub mod hybrid;
pub mod nn;
pub mod prediction;
pub mod properties;
pub mod seeds;
pub mod stats;

pub use correlations::{hbm_solve, BaseModelKind, ChfRecord};
pub use error::{Error, Result};
pub use prediction::PredictionSet;
