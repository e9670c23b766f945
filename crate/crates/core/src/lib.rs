#![no_std]
//! Conditional variational autoencoder for point and contextual anomalies in
//! object-detector output grids, with a synthetic monitoring-point world.

extern crate alloc;

pub mod error;
pub mod numerics;

pub use error::{Error, Result};
pub mod grid;
pub mod world;
pub mod model;
pub mod scoring;
pub mod train;
