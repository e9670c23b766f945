//! Dataset and checkpoint files, scenario loading and the experiment harness around
//! [`cadnet_core`].

pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod harness;
pub mod scenario;

pub use cadnet_core as core;
pub use error::{IoError, IoResult};
