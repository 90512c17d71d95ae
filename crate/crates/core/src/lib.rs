//! Raking calibration weights and sensitivity analysis for weighted
//! population-mean estimates under omitted confounding.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod benchmark;
pub mod bias;
pub mod bootstrap;
pub mod calibration;
pub mod data;
pub mod detection;
pub mod error;
pub mod features;
pub mod linalg;
pub mod partial;
pub mod simulation;
pub mod stats;
pub mod summary;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
