//! Sparse ternary quantization with hardware-aligned 1.25-bit packing.
//!
//! The crate covers the full pipeline:
//!
//! - [`quantize`]: dense ternary schemes (absmean, twn) and the 3:4
//!   sparse-absmean scheme, plus an exhaustive optimality oracle
//! - [`pack`]: bit-exact sign/index packing (1.25 bit), dense 2-bit and a
//!   3-in-5 reference format, with density accounting
//! - [`engine`]: multiplication-free LUT matvec/matmul and a dense
//!   reference path sharing the same accumulation order
//! - [`schedule`] / [`layer`] / [`train`]: annealed-residual QAT for toy
//!   MLPs with straight-through gradients
//! - [`diagnostics`]: effective rank, weight histograms, trap scores
//! - [`container`] / [`trace`]: binary model containers and JSON-lines
//!   training traces
//! - [`bench`]: matvec throughput microbenchmarks

pub mod bench;
pub mod container;
pub mod diagnostics;
pub mod engine;
pub mod error;
pub mod layer;
pub mod matrix;
pub mod pack;
pub mod quantize;
pub mod schedule;
pub mod trace;
pub mod train;

pub use error::{Error, ErrorCategory, Result};
pub use matrix::{DenseMatrix, Granularity, Precision};
pub use pack::{PackScheme, PackedTensor};
pub use quantize::{QuantScheme, TernaryTensor};
