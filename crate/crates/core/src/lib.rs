//! Dyadic-grid tools for visible parts, projections and slices of fractal sets.

pub mod cli;
pub mod dyadic;
pub mod error;
pub mod fractals;
pub mod measures;
pub mod rng;
pub mod slicing;
pub mod spectral;
pub mod visibility;

pub use error::{Error, Result};
