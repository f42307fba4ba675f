//! Dense tensors with tape-based reverse-mode differentiation, restricted to
//! the layer vocabulary the network needs.

pub mod checkpoint;
mod dense;
pub mod ops;
mod params;
mod scalar;
mod tape;

pub use dense::Tensor;
pub(crate) use dense::{dims2, dims4};
pub use params::{ParamStore, Session};
pub use scalar::Scalar;
pub use tape::{Tape, Var};
