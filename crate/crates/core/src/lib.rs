//! Spatial regression of a scalar quality field from imbalanced point
//! measurements: fixed and self-tuning bandwidth kernel regression, a
//! Gaussian-process baseline, and the surrounding data pipeline.

pub mod data;
pub mod error;
pub mod gp;
pub mod index;
pub mod kernel;
pub mod metrics;
pub mod optim;
mod par;
pub mod pipeline;
pub mod preprocess;
pub mod quadkey;
pub mod raster;
pub mod synth;

pub use error::{Error, ErrorKind, Result};
