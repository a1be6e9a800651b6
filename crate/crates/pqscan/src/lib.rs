//! Dataset formats, persistence, ground truth and benchmarks on top of
//! [`pqscan_core`].

pub mod bench;
pub mod error;
pub mod format;
pub mod synth;
pub mod truth;
pub mod vecs;

pub use error::{Error, Result};
pub use pqscan_core;
