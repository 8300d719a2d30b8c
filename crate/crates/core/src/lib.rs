//! Polar codes and DeepPolar neural codes built from larger `ell x ell`
//! kernels.
//!
//! The crate covers the classical reference ([`polar`]), a small dense
//! network engine ([`nn`]), the neural codec ([`codec`]), channel models
//! ([`channel`]), training procedures ([`train`]) and Monte-Carlo
//! evaluation ([`eval`]).

// `!(x > 0.0)` style guards are meant to reject NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bits;
pub mod channel;
pub mod codec;
pub mod error;
pub mod eval;
pub mod nn;
pub mod polar;
pub mod rng;
pub mod train;

pub use bits::Bits;
pub use error::{Error, Result};
