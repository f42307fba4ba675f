//! Dual-branch hyperspectral network: an autoencoder that unmixes each patch
//! into simplex-constrained abundances and a patch CNN classifier, joined by
//! a subpixel fusion head and trained on a blended spectral-angle /
//! cross-entropy objective.

pub mod cli;
pub mod data;
pub mod error;
pub mod experiment;
pub mod losses;
pub mod model;
pub mod metrics;
pub mod tensor;
pub mod train;

pub use error::{Error, ErrorKind, Result};
