//! Two-stage weighted projection localization for TDOA and cooperative
//! positioning, with Cramér-Rao bounds, baseline solvers and a Monte Carlo
//! harness.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod channel;
pub mod crlb;
pub mod error;
pub mod geometry;
pub mod measurements;
pub mod sim;
pub mod solvers;
pub mod units;

pub use error::{Error, Result};
pub use geometry::{AnchorSet, Position};
