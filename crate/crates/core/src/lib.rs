//! Lottery-ticket pruning with calibration-aware training objectives.
//!
//! [`nn`] holds the dense networks and their hand-written gradients,
//! [`pruning`] the masks, [`calib`] the training objectives, [`metrics`]
//! the reliability measures, [`data`] the loaders, and [`harness`] the
//! experiment driver behind the `lth` binary.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calib;
pub mod data;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod nn;
pub mod pruning;
pub mod rng;

pub use error::{Error, Result};
