//! Core algorithms for DC state estimation, stealthy false-data-injection
//! attack synthesis and autoencoder-based anomaly detection.
//!
//! The crate is `no_std` and needs only `alloc`. File formats, the CLI and
//! anything touching the clock live in the companion `fdia` crate.

#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

extern crate alloc;
#[cfg(any(test, feature = "std"))]
extern crate std;

pub mod attack;
pub mod autoencoder;
pub mod chi2;
pub mod data;
pub mod detection;
pub mod error;
pub mod estimation;
pub mod grid_model;
pub mod linalg;
pub mod simplex;

pub use error::{Error, Result};
