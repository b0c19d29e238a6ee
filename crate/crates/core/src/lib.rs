//! Numerical core of the `ringd` virtual light source.
//!
//! Everything in this crate is pure computation over owned buffers: the
//! storage-ring physics model, the four lifetime estimators, the optics
//! parameterization, and the SVD orbit correction. It builds without `std`
//! (only `alloc` is required) so the same code can run on an embedded
//! feedback processor. IO, the channel bus and the command line tools live
//! in the `ringd` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod channel;
pub mod error;
pub mod feedback;
pub mod lattice;
pub mod lifetime;
pub mod linalg;
pub mod optics;
pub mod ring;
pub mod svd;

pub use channel::{ChannelName, Status, TimedValue, Value, ValueKind};
pub use error::{Error, Result};
pub use linalg::Matrix;
pub use svd::Svd;
