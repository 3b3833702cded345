//! Nonnegative matrix factorization kernels.
//!
//! Approximates a nonnegative `M x N` matrix `X` by `B * C` with `B` (`M x K`)
//! and `C` (`K x N`) entrywise nonnegative, minimizing `1/2 ||X - BC||_F^2`.
//!
//! The crate is `no_std` (it needs `alloc`) and holds only arithmetic:
//!
//! * [`matrix`]: column-major dense matrices, column partitioning, products.
//! * [`nnls`]: nonnegative least squares in Gram form (block principal pivoting).
//! * [`kernels`]: sequential HALS, BCD, ANLS and ADMM iterates.
//! * [`distributed`]: per-rank DBCD, DID and DADMM workers written against
//!   the [`distributed::Allreduce`] collective. Transports live elsewhere.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod distributed;
mod error;
pub mod kernels;
pub mod matrix;
pub mod nnls;

pub use error::{Error, Result};
pub use matrix::{ColumnBlock, DenseMatrix};

/// Squared norms below this are treated as zero; the affected coordinate
/// update is skipped instead of dividing by it.
pub const DEGENERATE_NORM_SQ: f64 = 1e-12;
