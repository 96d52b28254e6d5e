//! Command-line runner for the operational latent space experiments.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod output;
pub mod runner;

pub use cli::run;
