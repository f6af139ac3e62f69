//! Scene-text recognition with one transformer decoder shared by both
//! reading directions.
//!
//! The decoder is conditioned on the reading direction by a learned vector
//! added to every decoder input, so a single set of weights emits
//! left-to-right or right-to-left transcripts.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod infer;
pub mod model;
pub mod nn;
pub mod train;

pub use autodiff::Tensor;
pub use error::{Error, Result};
