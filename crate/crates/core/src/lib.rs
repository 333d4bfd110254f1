//! Time-optimal selective control of two uncoupled spin-1/2 particles with
//! opposite offsets.

// Domain checks are written `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytic;
pub mod error;
pub mod extremal;
pub mod grape;
pub mod landscape;
mod par;
pub mod quadrature;
pub mod singular;
pub mod special;
pub mod spin;
pub mod verify;

pub use error::{Error, Result};
