//! Operational latent spaces: learned projections whose latent space
//! supports a chosen algebraic operation.
//!
//! Two toy problems are covered. [`mixing`] trains a projector under which
//! the sum of encoded stems matches the encoded mix. [`stargate`] trains a
//! projector and a FiLMR transform that steps every latent point to its
//! successor around a ring.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod array;
pub mod autodiff;
pub mod checks;
pub mod error;
pub mod fsutil;
pub mod losses;
pub mod mixing;
pub mod nn;
pub mod rng;
pub mod rotation;
pub mod stargate;
pub mod trace;
pub mod viz;

pub use array::Array;
pub use error::{Error, Result};
