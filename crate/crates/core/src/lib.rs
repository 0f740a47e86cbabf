//! Nonescape probability and long-time decay of s-wave wave packets in
//! finite-range radial potentials.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod decay;
pub mod error;
pub mod evolve;
pub mod model;
pub mod numerics;
pub mod scattering;

pub use error::{Error, Result};
