//! Strand-based hair geometry toolkit.

// Range checks are written as `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod codec;
pub mod config;
pub mod error;
pub mod gabor;
pub mod hairmap;
pub mod io;
pub mod losses;
pub mod model;
pub mod optim;
pub mod render;
pub mod scalp;
pub mod synth;

pub use error::{Error, Result};
