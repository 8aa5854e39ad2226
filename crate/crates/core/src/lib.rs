//! Simulation and analysis of chaos in a driven optomechanical cavity.
// `!(x > 0.0)` is used on purpose so NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod embedding;
pub mod error;
pub mod io;
pub mod lyapunov;
pub mod model;
pub mod regime;
pub mod report;
pub mod segmentation;
pub mod sensing;
pub mod series;
pub mod spectral;
pub mod sweep;
pub mod synthesis;

pub use error::{Error, Result};
pub use series::TimeSeries;
