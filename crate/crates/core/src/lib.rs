//! Maps of human-motion dynamics on a grid (CLiFF-maps), updated online.
//!
//! Every observed location holds a semi-wrapped Gaussian mixture over
//! `(direction, speed)`. Locations are built from scratch with mean shift
//! and EM the first time motion is seen there, and afterwards folded forward
//! with stochastic EM on each new batch of observations.

// Parameter checks are written as `!(x > 0.0)` on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod batch;
pub mod error;
pub mod eval;
pub mod ingest;
pub mod map;
pub mod online;
pub mod persist;
pub mod planner;
pub mod swgmm;
pub mod synthetic;

pub use error::{Error, Result};
