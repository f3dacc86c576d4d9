//! Neural characteristic trajectory fields.
//!
//! A trajectory field is a pair of sine networks: an encoder that maps a
//! space-time point to a feature identifying the particle passing through it,
//! and a decoder that maps the feature and a time back to a position. Flow
//! maps between arbitrary times are a single forward pass, and velocity and
//! material acceleration are time derivatives of the decoder.

pub mod analytic;
pub mod error;
pub mod field;
pub mod io;
pub mod losses;
pub mod nn;
pub mod radiance;
pub mod render;
pub mod train;

pub use error::{Error, Result};
