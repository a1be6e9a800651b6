//! Product quantization for approximate nearest neighbor search.
//!
//! The crate covers the whole encoding pipeline (k-means, product and
//! optimized product quantizers), the baseline asymmetric distance scan and
//! three accelerated scan procedures built on small register-resident lookup
//! tables:
//!
//! * [`fastscan`]: grouped 8×8 codes, minimum tables and 8-bit lower bounds
//!   used to prune exact distance computations,
//! * [`quickadc`]: 16-entry quantized tables over transposed blocks of 4-bit
//!   codes,
//! * [`derived`]: 8-bit derived quantizers that share codes with 16-bit
//!   sub-quantizers, searched in two passes.
//!
//! An IVFADC inverted index ([`ivf`]) and brute-force evaluation helpers
//! ([`eval`]) complete the toolkit.
//!
//! The crate is `no_std` (it needs `alloc`). The default `std` feature only
//! enables runtime CPU feature detection for the SIMD kernels.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod adc;
pub mod codes;
pub mod derived;
pub mod distance;
pub mod error;
pub mod eval;
pub mod fastscan;
pub mod heap;
pub mod ivf;
pub mod kmeans;
pub mod linalg;
pub mod matrix;
pub mod pq;
pub mod quantize;
pub mod quickadc;

mod simd;

pub use adc::{adc_distance, compute_tables, scan, LookupTables};
pub use codes::{CodeList, CodeWidth, TransposedCodeList};
pub use error::{Error, Result};
pub use heap::{Neighbor, NeighborSet};
pub use matrix::{DenseMatrix, IntMatrix};
pub use pq::{Code, Codebook, ProductQuantizer, TrainConfig};
